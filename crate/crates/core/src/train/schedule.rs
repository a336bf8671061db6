//! Learning-rate reduction on validation-loss plateaus, and early stopping.

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// epochs without a new best validation loss. The counter restarts on
/// every improvement and every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> PlateauScheduler {
        assert!(patience >= 1, "plateau patience must be >= 1");
        PlateauScheduler { patience, factor, lr, best: f64::INFINITY, wait: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss and returns the learning rate
    /// for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr *= self.factor;
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying a whole validation-loss history.
pub fn plateau_scheduler(history: &[f64], patience: usize, factor: f64, lr: f64) -> f64 {
    let mut s = PlateauScheduler::new(lr, patience, factor);
    for &v in history {
        s.step(v);
    }
    s.lr()
}

/// Signals a stop after `patience` epochs without a new best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { patience, best: f64::INFINITY, since_best: 0 }
    }

    /// Returns true when training should stop.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_flat_epochs_reduce_once() {
        let mut h = vec![1.0];
        h.extend([1.0; 10]);
        assert_eq!(plateau_scheduler(&h, 10, 0.75, 1e-4), 0.75 * 1e-4);
        assert_eq!(plateau_scheduler(&h[..10], 10, 0.75, 1e-4), 1e-4);
    }

    #[test]
    fn improvement_resets_counter() {
        let mut h = vec![1.0];
        h.extend([1.0; 8]);
        h.push(0.9);
        h.extend([0.95; 9]);
        assert_eq!(plateau_scheduler(&h, 10, 0.75, 1e-4), 1e-4);
    }

    #[test]
    fn two_plateaus_compose() {
        let mut h = vec![1.0];
        h.extend([2.0; 20]);
        assert_eq!(plateau_scheduler(&h, 10, 0.75, 1e-4), 1e-4 * 0.75 * 0.75);
    }

    #[test]
    fn lr_never_increases() {
        let mut s = PlateauScheduler::new(1e-3, 3, 0.5);
        let mut prev = s.lr();
        for i in 0..100 {
            let lr = s.step(((i * 37) % 11) as f64);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn early_stop_after_patience() {
        let mut e = EarlyStopping::new(3);
        assert!(!e.step(1.0));
        assert!(!e.step(1.0));
        assert!(!e.step(1.1));
        assert!(e.step(1.0));
    }
}
