//! Synthetic data through split, training, prediction and evaluation.

use octvf_core::augment::AugmentConfig;
use octvf_core::eval::metrics::flatten;
use octvf_core::eval::{evaluate, pearson_r, BootstrapOptions};
use octvf_core::nn::{Checkpoint, ModelSpec};
use octvf_core::split::{apply_reliability_policy, split_exams, SplitRatios};
use octvf_core::synth::{generate_dataset, oracle_predictor, SynthConfig};
use octvf_core::train::{ensemble_average, fit, predict_batch, TrainConfig};
use octvf_core::{grid_24_2, ExamPair, Modality, ReliabilityLimits, Target};

struct Setup {
    config: SynthConfig,
    train: Vec<ExamPair>,
    val: Vec<ExamPair>,
    test: Vec<ExamPair>,
}

fn setup() -> Setup {
    let config = SynthConfig { n_patients: 60, ring_width: 64, ring_height: 48, slo_size: 32, seed: 11, ..Default::default() };
    let ds = generate_dataset(&config).unwrap();
    let split = split_exams(&ds.exams, &SplitRatios::default(), 3).unwrap();
    let split = apply_reliability_policy(&split, &ds.exams, &ReliabilityLimits::default());
    let pick = |r: &[usize]| r.iter().map(|&i| ds.exams[i].clone()).collect::<Vec<_>>();
    Setup { train: pick(&split.train.exam_refs), val: pick(&split.val.exam_refs), test: pick(&split.test.exam_refs), config }
}

fn truth(exams: &[ExamPair], target: Target) -> Vec<Vec<f64>> {
    let g = grid_24_2();
    exams.iter().map(|e| target.values(&e.to_right_eye(&g).unwrap().vf)).collect()
}

fn train(s: &Setup, target: Target, modality: Modality, epochs: usize) -> (Checkpoint, f64, f64) {
    let spec = ModelSpec::desk(target.arity(), 48, 32);
    let cfg = TrainConfig { max_epochs: epochs, steps_per_epoch: 40, lr0: 1e-3, target, modality, seed: 4, ..Default::default() };
    let out = fit(&s.train, &s.val, &spec, &cfg, &AugmentConfig::default()).unwrap();
    let first = out.log.epochs.first().unwrap().val_loss;
    let last = out.log.epochs.last().unwrap().val_loss;
    (out.best, first, last)
}

#[test]
fn learns_and_respects_oracle_ceiling() {
    let s = setup();
    let (ck, first, last) = train(&s, Target::Thresholds, Modality::Ring3_5, 4);
    assert!(last < first, "validation loss did not drop: {first} -> {last}");
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);

    let pred = predict_batch(&ck, &s.test, Modality::Ring3_5).unwrap();
    assert_eq!((pred.len(), pred[0].len()), (s.test.len(), 52));
    let m = truth(&s.test, Target::Thresholds);
    let model_r = pearson_r(&flatten(&m), &flatten(&pred)).unwrap();

    let g = grid_24_2();
    let oracle: Vec<Vec<f64>> =
        s.test.iter().map(|e| oracle_predictor(&s.config, &e.to_right_eye(&g).unwrap())).collect();
    let oracle_r = pearson_r(&flatten(&m), &flatten(&oracle)).unwrap();
    assert!(model_r <= oracle_r + 0.02, "model r {model_r} above oracle r {oracle_r}");
    assert!(model_r > 0.3, "model r {model_r}");
}

#[test]
fn md_model_and_ensemble() {
    let s = setup();
    let (a, ..) = train(&s, Target::Md, Modality::Ring4_7, 3);
    let (b, ..) = train(&s, Target::Md, Modality::Slo, 3);
    let pa = predict_batch(&a, &s.test, Modality::Ring4_7).unwrap();
    let pb = predict_batch(&b, &s.test, Modality::Slo).unwrap();
    assert!(pa.iter().all(|r| r.len() == 1));
    let ens = ensemble_average(&[pa.clone(), pb.clone()]).unwrap();
    let m = truth(&s.test, Target::Md);
    let mse = |p: &[Vec<f64>]| flatten(p).iter().zip(flatten(&m)).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / m.len() as f64;
    assert!(mse(&ens) <= (mse(&pa) + mse(&pb)) / 2.0 + 1e-9);
    let opts = BootstrapOptions { iterations: 300, ..Default::default() };
    let rep = evaluate("ens", Target::Md, &m, &ens, &opts).unwrap();
    assert_eq!(rep.n_samples, s.test.len());
    assert!(rep.r2.low <= rep.r2.value && rep.r2.value <= rep.r2.high);
}
