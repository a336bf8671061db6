//! Run configuration shared by every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::eval::BootstrapOptions;
use crate::nn::ModelSpec;
use crate::split::SplitRatios;
use crate::synth::SynthConfig;
use crate::task::Modality;
use crate::train::TrainConfig;
use crate::vf::{load_retest_table, load_sector_map, ReliabilityLimits, RetestCiTable, SectorMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub bootstrap: BootstrapOptions,
    /// Retest CI table; the bundled illustrative table when absent.
    pub retest_ci: Option<PathBuf>,
    /// Sector map; the bundled map when absent.
    pub sector_map: Option<PathBuf>,
    pub bin_step_db: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bootstrap: BootstrapOptions::default(), retest_ci: None, sector_map: None, bin_step_db: 2.0 }
    }
}

impl EvalOptions {
    pub fn retest_table(&self) -> Result<RetestCiTable, String> {
        match &self.retest_ci {
            None => Ok(RetestCiTable::bundled()),
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
                load_retest_table(f).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }

    pub fn sectors(&self) -> Result<SectorMap, String> {
        match &self.sector_map {
            None => Ok(SectorMap::bundled()),
            Some(p) => {
                let f = std::fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
                load_sector_map(f).map_err(|e| format!("{}: {e}", p.display()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub container: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: SplitRatios,
    pub split_seed: u64,
    pub reliability: ReliabilityLimits,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Explicit network; when absent the desk-scale network is sized from
    /// `ring_input` / `slo_input` and the target arity.
    pub model: Option<ModelSpec>,
    pub ring_input: [usize; 2],
    pub slo_input: [usize; 2],
    pub eval: EvalOptions,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            container: None,
            out_dir: None,
            split: SplitRatios::default(),
            split_seed: 0,
            reliability: ReliabilityLimits::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            model: None,
            ring_input: [96, 64],
            slo_input: [64, 64],
            eval: EvalOptions::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn check_file(v: &mut Vec<String>, what: &str, p: &Option<PathBuf>) {
    if let Some(p) = p {
        if !p.is_file() {
            v.push(format!("{what}: file {} does not exist", p.display()));
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        RunConfig::from_json(&text)
    }

    /// The network trained for the configured modality and target.
    pub fn model_spec(&self) -> ModelSpec {
        match &self.model {
            Some(m) => m.clone(),
            None => {
                let [w, h] = if self.train.modality == Modality::Slo { self.slo_input } else { self.ring_input };
                ModelSpec::desk(self.train.target.arity(), w, h)
            }
        }
    }

    /// Every violated constraint across all sections.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        check_file(&mut v, "container", &self.container);
        check_file(&mut v, "eval.retest_ci", &self.eval.retest_ci);
        check_file(&mut v, "eval.sector_map", &self.eval.sector_map);
        if let Err(e) = self.split.validate() {
            v.push(format!("split: {e}"));
        }
        let r = &self.reliability;
        for (name, x) in [("fp_max", r.fp_max), ("fn_max", r.fn_max), ("fl_max", r.fl_max)] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("reliability.{name} {x} not in [0, 1]"));
            }
        }
        v.extend(self.train.violations());
        v.extend(self.augment.violations());
        let spec = self.model_spec();
        v.extend(spec.violations());
        if spec.out_channels != self.train.target.arity() {
            v.push(format!(
                "model.out_channels {} does not match target {} ({} outputs)",
                spec.out_channels,
                self.train.target,
                self.train.target.arity()
            ));
        }
        let b = &self.eval.bootstrap;
        if b.iterations == 0 {
            v.push("eval.bootstrap.iterations must be >= 1".into());
        }
        if !(b.level > 0.0 && b.level < 1.0) {
            v.push(format!("eval.bootstrap.level {} not in (0, 1)", b.level));
        }
        if !(self.eval.bin_step_db > 0.0) {
            v.push(format!("eval.bin_step_db {} must be > 0", self.eval.bin_step_db));
        }
        v.extend(self.synth.violations());
        v
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let v = self.violations();
        if v.is_empty() { Ok(()) } else { Err(v) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Target;

    #[test]
    fn default_valid_and_roundtrips() {
        let c = RunConfig::default();
        assert_eq!(c.validate(), Ok(()));
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c = RunConfig::from_json(r#"{"train": {"max_epochs": 3, "target": "md"}, "split_seed": 7}"#).unwrap();
        assert_eq!(c.train.max_epochs, 3);
        assert_eq!(c.train.lr0, 1e-4);
        assert_eq!(c.split_seed, 7);
        assert_eq!(c.model_spec().out_channels, 1);
    }

    #[test]
    fn lists_every_violation() {
        let mut c = RunConfig::default();
        c.container = Some(PathBuf::from("/nonexistent/exams.octvf"));
        c.train.batch_size = 0;
        c.augment.hflip_prob = 2.0;
        c.eval.bin_step_db = 0.0;
        c.model = Some(ModelSpec::desk(52, 32, 32));
        c.train.target = Target::Md;
        let v = c.validate().unwrap_err();
        assert_eq!(v.len(), 5, "{v:#?}");
        assert!(v[0].contains("/nonexistent/exams.octvf"));
    }

    #[test]
    fn slo_uses_square_input() {
        let mut c = RunConfig::default();
        c.train.modality = Modality::Slo;
        let s = c.model_spec();
        assert_eq!((s.input_width, s.input_height), (64, 64));
    }

    #[test]
    fn unknown_fields_rejected_with_message() {
        assert!(RunConfig::from_json(r#"{"train": {"lr0": "fast"}}"#).unwrap_err().starts_with("config:"));
    }
}
