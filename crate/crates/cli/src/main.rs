//! `octvf`: the OCT to visual-field pipeline as subcommands.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use octvf_core::eval::analysis::{bin_by_measured, pointwise_r_map, retest_coverage, sector_metrics};
use octvf_core::eval::metrics::flatten;
use octvf_core::eval::{evaluate, metrics_csv, render_report, EvalBundle};
use octvf_core::ingest::ingest;
use octvf_core::nn::gradcheck::run_default_check;
use octvf_core::nn::Checkpoint;
use octvf_core::split::{apply_reliability_policy, read_manifest, split_exams, write_manifest, PartitionName};
use octvf_core::synth::generate_dataset;
use octvf_core::train::{
    ensemble_average, fit, predict_batch, read_predictions_csv, write_predictions_csv, PredictionRow, Predictions,
};
use octvf_core::{grid_24_2, parse_container, write_container, ExamPair, Modality, RunConfig, Target};

const CONTAINER_FILE: &str = "exams.octvf";
const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Parser, Debug)]
#[command(name = "octvf", version, about = "Visual-field estimation from OCT ring scans and SLO images")]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; every file a subcommand writes goes here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    modality: Option<Modality>,
    #[arg(long, global = true)]
    target: Option<Target>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (exams.octvf + truth.csv).
    SynthGen {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        exams_per_patient: Option<usize>,
    },
    /// Pack a VF CSV and its image folders into exams.octvf.
    Ingest {
        #[arg(long)]
        vf_csv: PathBuf,
        #[arg(long)]
        images: PathBuf,
    },
    /// Patient-exclusive train/val/test manifests.
    Split {
        #[arg(long)]
        container: Option<PathBuf>,
    },
    /// Train one model; writes model.ckpt and train_log.csv.
    Train {
        #[arg(long)]
        container: Option<PathBuf>,
        /// Directory holding train.ids and val.ids.
        #[arg(long)]
        splits: PathBuf,
    },
    /// Predict one partition with a checkpoint; writes predictions.csv.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        container: Option<PathBuf>,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "test")]
        partition: String,
    },
    /// Average several predictions.csv files.
    Ensemble {
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Metrics with bootstrap intervals; writes metrics.csv and eval.json.
    Eval {
        #[arg(long)]
        container: Option<PathBuf>,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long, default_value = "test")]
        partition: String,
        /// `tag=path` or `path` (tag defaults to the file stem).
        #[arg(long, num_args = 1.., required = true)]
        predictions: Vec<String>,
    },
    /// Render CSV/SVG/JSON report files from eval.json.
    Report {
        #[arg(long)]
        eval: PathBuf,
    },
    /// Finite-difference gradient check of the tiny reference network.
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCTVF_LOG", "warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| anyhow!(e))?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.modality {
        cfg.train.modality = m;
    }
    if let Some(t) = cli.target {
        cfg.train.target = t;
        if cfg.model.as_ref().is_some_and(|m| m.out_channels != t.arity()) {
            bail!("--target {t} conflicts with the configured model ({} outputs)", cfg.model.as_ref().unwrap().out_channels);
        }
    }
    if let Err(v) = cfg.validate() {
        bail!("invalid configuration ({} problems):\n  - {}", v.len(), v.join("\n  - "));
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cli.out.clone().or_else(|| cfg.out_dir.clone()).ok_or_else(|| anyhow!("no output directory: pass --out"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn container_path(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.clone().or_else(|| cfg.container.clone()).ok_or_else(|| anyhow!("no container: pass --container"))
}

fn load_exams(path: &Path) -> Result<Vec<ExamPair>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_container(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn partition_name(s: &str) -> Result<PartitionName> {
    PartitionName::ALL
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| anyhow!("unknown partition {s:?} (expected train, val or test)"))
}

fn manifest(splits: &Path, name: PartitionName, n_exams: usize) -> Result<Vec<usize>> {
    let refs = read_manifest(&splits.join(name.manifest_name()))?;
    if let Some(&bad) = refs.iter().find(|&&r| r >= n_exams) {
        bail!("{} references exam {bad} but the container holds {n_exams} exams", name.manifest_name());
    }
    Ok(refs)
}

fn pick(exams: &[ExamPair], refs: &[usize]) -> Vec<ExamPair> {
    refs.iter().map(|&i| exams[i].clone()).collect()
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build_global()
        .context("starting worker pool")?;
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::SynthGen { patients, exams_per_patient } => {
            if let Some(s) = cli.seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = patients {
                cfg.synth.n_patients = *n;
            }
            if let Some(n) = exams_per_patient {
                cfg.synth.exams_per_patient = *n;
            }
            let out = out_dir(&cli, &cfg)?;
            let ds = generate_dataset(&cfg.synth).map_err(|e| anyhow!(e))?;
            write_file(&out.join(CONTAINER_FILE), ds.container_bytes()?)?;
            write_file(&out.join("truth.csv"), ds.truth_csv())?;
            println!("wrote {} exams to {}", ds.exams.len(), out.join(CONTAINER_FILE).display());
        }
        Command::Ingest { vf_csv, images } => {
            let out = out_dir(&cli, &cfg)?;
            let exams = ingest(vf_csv, images)?;
            write_file(&out.join(CONTAINER_FILE), write_container(&exams)?)?;
            println!("wrote {} exams to {}", exams.len(), out.join(CONTAINER_FILE).display());
        }
        Command::Split { container } => {
            let seed = cli.seed.unwrap_or(cfg.split_seed);
            let exams = load_exams(&container_path(container, &cfg)?)?;
            let out = out_dir(&cli, &cfg)?;
            let split = split_exams(&exams, &cfg.split, seed)?;
            let split = apply_reliability_policy(&split, &exams, &cfg.reliability);
            for p in split.partitions() {
                write_manifest(&out.join(p.name.manifest_name()), &p.exam_refs)?;
                println!("{}: {} exams", p.name, p.exam_refs.len());
            }
        }
        Command::Train { container, splits } => {
            if let Some(s) = cli.seed {
                cfg.train.seed = s;
            }
            let exams = load_exams(&container_path(container, &cfg)?)?;
            let train = pick(&exams, &manifest(splits, PartitionName::Train, exams.len())?);
            let val = pick(&exams, &manifest(splits, PartitionName::Val, exams.len())?);
            let out = out_dir(&cli, &cfg)?;
            let spec = cfg.model_spec();
            let result = fit(&train, &val, &spec, &cfg.train, &cfg.augment)?;
            write_file(&out.join(CHECKPOINT_FILE), result.best.to_bytes()?)?;
            write_file(&out.join("train_log.csv"), result.log.to_csv())?;
            let mut resolved = serde_json::to_string_pretty(&cfg)?;
            resolved.push('\n');
            write_file(&out.join("run_config.json"), resolved)?;
            let h = &result.best.header;
            println!(
                "best epoch {} of {} (val R2 {})",
                h.epoch,
                result.log.epochs.len(),
                h.val_r2.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
        }
        Command::Predict { checkpoint, container, splits, partition } => {
            let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
            let ck = Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", checkpoint.display()))?;
            if let Some(t) = cli.target {
                if t != ck.header.target {
                    bail!("--target {t} but the checkpoint predicts {}", ck.header.target);
                }
            }
            let modality = cli.modality.unwrap_or(ck.header.modality);
            let exams = load_exams(&container_path(container, &cfg)?)?;
            let refs = manifest(splits, partition_name(partition)?, exams.len())?;
            let out = out_dir(&cli, &cfg)?;
            let rows = predict_batch(&ck, &pick(&exams, &refs), modality)?;
            let preds = Predictions {
                target: ck.header.target,
                rows: refs.iter().zip(rows).map(|(r, values)| PredictionRow { exam_id: r.to_string(), values }).collect(),
            };
            write_file(&out.join("predictions.csv"), write_predictions_csv(&preds))?;
            println!("predicted {} exams", preds.rows.len());
        }
        Command::Ensemble { predictions } => {
            let members = predictions.iter().map(|p| read_preds(p)).collect::<Result<Vec<_>>>()?;
            let first = &members[0];
            for (p, m) in predictions.iter().zip(&members) {
                if m.target != first.target {
                    bail!("{} predicts {} but {} predicts {}", p.display(), m.target, predictions[0].display(), first.target);
                }
                let ids: Vec<&str> = m.rows.iter().map(|r| r.exam_id.as_str()).collect();
                let first_ids: Vec<&str> = first.rows.iter().map(|r| r.exam_id.as_str()).collect();
                if ids != first_ids {
                    bail!("{} covers different exams than {}", p.display(), predictions[0].display());
                }
            }
            let out = out_dir(&cli, &cfg)?;
            let avg = ensemble_average(&members.iter().map(Predictions::matrix).collect::<Vec<_>>())?;
            let preds = Predictions {
                target: first.target,
                rows: first
                    .rows
                    .iter()
                    .zip(avg)
                    .map(|(r, values)| PredictionRow { exam_id: r.exam_id.clone(), values })
                    .collect(),
            };
            write_file(&out.join("predictions.csv"), write_predictions_csv(&preds))?;
            println!("averaged {} members over {} exams", members.len(), preds.rows.len());
        }
        Command::Eval { container, splits, partition, predictions } => {
            if let Some(s) = cli.seed {
                cfg.eval.bootstrap.seed = s;
            }
            let exams = load_exams(&container_path(container, &cfg)?)?;
            let refs = manifest(splits, partition_name(partition)?, exams.len())?;
            let out = out_dir(&cli, &cfg)?;
            let bundle = eval_stage(&cfg, &exams, &refs, predictions)?;
            write_file(&out.join("metrics.csv"), metrics_csv(&bundle.reports))?;
            let mut json = serde_json::to_string_pretty(&bundle)?;
            json.push('\n');
            write_file(&out.join("eval.json"), json)?;
            for r in &bundle.reports {
                println!(
                    "{} ({}): n={} R2={:.4} r={:.4} MAE={:.3} dB (baseline {:.3} dB)",
                    r.tag, r.target, r.n_samples, r.r2.value, r.pearson_r.value, r.mae_db.value, r.baseline_mae_db
                );
            }
        }
        Command::Report { eval } => {
            let text = fs::read_to_string(eval).with_context(|| format!("reading {}", eval.display()))?;
            let bundle: EvalBundle = serde_json::from_str(&text).with_context(|| format!("parsing {}", eval.display()))?;
            let retest = cfg.eval.retest_table().map_err(|e| anyhow!(e))?;
            let out = out_dir(&cli, &cfg)?;
            render_report(&bundle.inputs(Some(&retest)), &out)?;
            println!("report written to {}", out.display());
        }
        Command::Gradcheck => {
            let report = run_default_check(cli.seed.unwrap_or(0))?;
            let mut text = report.to_string();
            if !text.ends_with('\n') {
                text.push('\n');
            }
            print!("{text}");
            if let Some(dir) = &cli.out {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                write_file(&dir.join("gradcheck.txt"), &text)?;
            }
            if !report.passed() {
                bail!("gradient check failed: max relative error {:e}", report.max_rel_err());
            }
        }
    }
    Ok(())
}

fn read_preds(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_predictions_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn eval_stage(cfg: &RunConfig, exams: &[ExamPair], refs: &[usize], predictions: &[String]) -> Result<EvalBundle> {
    let grid = grid_24_2();
    let in_partition: HashSet<usize> = refs.iter().copied().collect();
    let mut bundle = EvalBundle::default();
    let mut analysed = false;
    for spec in predictions {
        let (tag, path) = match spec.split_once('=') {
            Some((t, p)) => (t.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                (p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()), p)
            }
        };
        let preds = read_preds(&path)?;
        if preds.rows.len() != refs.len() {
            bail!(
                "{} has {} prediction rows but the partition has {} exams",
                path.display(),
                preds.rows.len(),
                refs.len()
            );
        }
        let mut measured = Vec::with_capacity(refs.len());
        for row in &preds.rows {
            let id: usize = row.exam_id.parse().with_context(|| format!("{}: bad exam_id {:?}", path.display(), row.exam_id))?;
            if !in_partition.contains(&id) {
                bail!("{}: exam {id} is not in the evaluated partition", path.display());
            }
            let vf = &exams[id].to_right_eye(&grid)?.vf;
            measured.push(preds.target.values(vf));
        }
        let predicted = preds.matrix();
        bundle.reports.push(evaluate(&tag, preds.target, &measured, &predicted, &cfg.eval.bootstrap)?);
        if preds.target == Target::Thresholds && !analysed {
            analysed = true;
            let sectors = cfg.eval.sectors().map_err(|e| anyhow!(e))?;
            bundle.sectors = sector_metrics(&measured, &predicted, &sectors)?;
            bundle.pointwise = Some(pointwise_r_map(&measured, &predicted, &grid)?);
            let binned = bin_by_measured(&flatten(&measured), &flatten(&predicted), cfg.eval.bin_step_db)?;
            let table = cfg.eval.retest_table().map_err(|e| anyhow!(e))?;
            bundle.coverage = match retest_coverage(&binned, &table) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::warn!("retest coverage skipped: {e}");
                    None
                }
            };
            bundle.binned = Some(binned);
        }
    }
    Ok(bundle)
}
