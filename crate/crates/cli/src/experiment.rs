//! Repeated training runs with CSV reporting.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspda_core::data::{generate_synthetic, load_directory, load_manifest, Domain, Sample, CHANNELS};
use sspda_core::network::build_model;
use sspda_core::train::{train, EpochMetrics, TrainConfig};

use crate::config::{DatasetSource, ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::eval::evaluate;

pub const METRICS_HEADER: [&str; 10] = [
    "epoch",
    "loss_total",
    "loss_cls",
    "loss_jigsaw_t",
    "loss_entropy",
    "loss_domain",
    "lambda",
    "val_acc",
    "smoothed_val_acc",
    "target_acc_oracle",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "method",
    "seed",
    "best_epoch",
    "best_smoothed_val_acc",
    "val_acc_at_best",
    "eval_crops",
    "target_acc",
];

pub const AGGREGATE_HEADER: [&str; 5] = [
    "method",
    "runs",
    "target_acc_mean",
    "target_acc_std",
    "target_acc_values",
];

/// Outcome of one repetition.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_smoothed_val_acc: f64,
    /// Accuracy of the selected checkpoint on the target set; `None` when the
    /// target set carries no labels.
    pub target_acc: Option<f64>,
    pub history: Vec<EpochMetrics>,
    pub gamma_history: Vec<Vec<f64>>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub method: Method,
    pub runs: Vec<RunReport>,
    pub target_acc_mean: Option<f64>,
    pub target_acc_std: Option<f64>,
    pub summary_path: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Source and target samples as described by the dataset settings.
pub fn load_dataset(config: &ExperimentConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let side = config.image_side;
    Ok(match &config.dataset {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec)?,
        DatasetSource::Manifest { path, .. } => load_manifest(path, side)?,
        DatasetSource::Directories {
            source_dir,
            target_dir,
            classes,
        } => (
            load_directory(source_dir, classes, side, Domain::Source)?,
            load_directory(target_dir, classes, side, Domain::Target)?,
        ),
    })
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(file))
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.loss_total.to_string(),
                m.loss_cls.to_string(),
                m.loss_jigsaw_t.to_string(),
                m.loss_entropy.to_string(),
                m.loss_domain.to_string(),
                m.lambda.to_string(),
                m.val_acc.to_string(),
                m.smoothed_val_acc.to_string(),
                opt(m.target_acc_oracle),
            ]
        })
        .collect();
    write_rows(path, &METRICS_HEADER, &rows)
}

/// One row per estimate: epoch 0 is the estimate before training.
pub fn write_gamma(path: &Path, gamma_history: &[Vec<f64>]) -> Result<()> {
    let classes = gamma_history.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("epoch".to_string())
        .chain((0..classes).map(|c| format!("gamma_{c}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = gamma_history
        .iter()
        .enumerate()
        .map(|(e, g)| {
            std::iter::once(e.to_string())
                .chain(g.iter().map(f64::to_string))
                .collect()
        })
        .collect();
    write_rows(path, &header, &rows)
}

fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    // creating a directory can succeed on an existing read-only one
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

/// Runs `repetitions` seeds (`seed`, `seed + 1`, ...) on one dataset and
/// writes per run `metrics_seed<S>.csv`, `gamma_seed<S>.csv` (with class
/// weights only) and `best_seed<S>.ckpt`, plus `summary.csv`,
/// `aggregate.csv` and the resolved `config.txt`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let out = &config.output_dir;
    prepare_output(out)?;
    let cfg_path = out.join("config.txt");
    fs::write(&cfg_path, config.to_text()).map_err(|e| CliError::io(&cfg_path, e))?;

    let (source, target) = load_dataset(config)?;
    let labeled_target = !target.is_empty() && target.iter().all(|s| s.oracle_label().is_some());
    log::info!(
        "{}: {} source / {} target samples, {} repetition(s)",
        config.method,
        source.len(),
        target.len(),
        config.repetitions
    );

    let mut runs = Vec::with_capacity(config.repetitions);
    for r in 0..config.repetitions {
        let seed = config.train.seed.wrapping_add(r as u64);
        let tc = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let spec = tc.model_spec(CHANNELS, config.image_side, config.num_classes());
        let model = build_model(&spec, seed)?;
        let outcome = train(model, &source, &target, &tc, &mut ())?;

        let metrics_path = out.join(format!("metrics_seed{seed}.csv"));
        write_metrics(&metrics_path, &outcome.history)?;
        if !outcome.gamma_history.is_empty() {
            write_gamma(&out.join(format!("gamma_seed{seed}.csv")), &outcome.gamma_history)?;
        }
        let checkpoint_path = out.join(format!("best_seed{seed}.ckpt"));
        outcome.best_model.save(&checkpoint_path)?;

        let target_acc = if labeled_target {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(16);
            Some(evaluate(&outcome.best_model, &target, config.eval_crops, &mut rng)?)
        } else {
            log::warn!("target samples carry no labels; skipping target evaluation");
            None
        };
        log::info!(
            "{} seed {seed}: best epoch {}, target accuracy {}",
            config.method,
            outcome.selection.best_epoch,
            opt(target_acc)
        );
        runs.push(RunReport {
            seed,
            best_epoch: outcome.selection.best_epoch,
            best_smoothed_val_acc: outcome.selection.best_smoothed,
            target_acc,
            history: outcome.history,
            gamma_history: outcome.gamma_history,
            metrics_path,
            checkpoint_path,
        });
    }

    let summary_path = out.join("summary.csv");
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let val_at_best = r.history.get(r.best_epoch.wrapping_sub(1)).map(|m| m.val_acc);
            vec![
                config.method.to_string(),
                r.seed.to_string(),
                r.best_epoch.to_string(),
                r.best_smoothed_val_acc.to_string(),
                opt(val_at_best),
                config.eval_crops.to_string(),
                opt(r.target_acc),
            ]
        })
        .collect();
    write_rows(&summary_path, &SUMMARY_HEADER, &rows)?;

    let accs: Vec<f64> = runs.iter().filter_map(|r| r.target_acc).collect();
    let (mean, std) = mean_std(&accs);
    let aggregate_path = out.join("aggregate.csv");
    let values: Vec<String> = accs.iter().map(f64::to_string).collect();
    write_rows(
        &aggregate_path,
        &AGGREGATE_HEADER,
        &[vec![
            config.method.to_string(),
            runs.len().to_string(),
            opt(mean),
            opt(std),
            values.join(";"),
        ]],
    )?;

    Ok(ExperimentReport {
        method: config.method,
        runs,
        target_acc_mean: mean,
        target_acc_std: std,
        summary_path,
        aggregate_path,
    })
}
