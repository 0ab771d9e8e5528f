use std::path::Path;
use std::process::Command;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sspda_cli::config::{parse_config_str, Overrides};
use sspda_cli::{evaluate, run_experiment};
use sspda_core::data::{generate_synthetic, Sample, SyntheticSpec};
use sspda_core::network::build_model;
use sspda_core::train::{train, StepRecord, TrainCallbacks, TrainConfig};
use sspda_core::Error;

const TINY: &str = "\
epochs = 1
repetitions = 1
num_classes = 2
target_classes = 2
samples_per_class = 5
num_perms = 4
batch_source = 4
batch_target = 4
";

fn config(method: &str, extra: &str, out: &Path) -> sspda_cli::ExperimentConfig {
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let base: String = TINY
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    let text = format!("method = {method}\n{base}{extra}\noutput_dir = {}\n", out.display());
    parse_config_str(&text, &Overrides::default()).unwrap()
}

fn strict_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::ReaderBuilder::new().flexible(false).from_path(path).unwrap();
    let width = r.headers().unwrap().len();
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert!(rows.iter().all(|x| x.len() == width));
    rows
}

#[test]
fn smoke_run_writes_metrics_summary_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sspda_gamma", "", dir.path());
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.runs.len(), 1);
    let run = &report.runs[0];
    assert_eq!(strict_rows(&run.metrics_path).len(), 1);
    assert_eq!(strict_rows(&report.summary_path).len(), 1);
    assert_eq!(strict_rows(&report.aggregate_path).len(), 1);
    assert_eq!(strict_rows(&dir.path().join("gamma_seed0.csv")).len(), 2);
    assert!(run.checkpoint_path.exists());
    let acc = run.target_acc.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    // one run: mean only
    assert_eq!(report.target_acc_mean, Some(acc));
    assert_eq!(report.target_acc_std, None);
    // the resolved config parses back to the same settings
    let text = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(parse_config_str(&text, &Overrides::default()).unwrap(), cfg);
}

#[test]
fn repetitions_use_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("source_only", "repetitions = 2\nseed = 5", dir.path());
    let report = run_experiment(&cfg).unwrap();
    let seeds: Vec<u64> = report.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![5, 6]);
    let accs: Vec<f64> = report.runs.iter().map(|r| r.target_acc.unwrap()).collect();
    let mean = (accs[0] + accs[1]) / 2.0;
    let std = ((accs[0] - mean).powi(2) + (accs[1] - mean).powi(2)).sqrt();
    assert!((report.target_acc_mean.unwrap() - mean).abs() < 1e-15);
    assert!((report.target_acc_std.unwrap() - std).abs() < 1e-15);
}

#[test]
fn same_config_gives_byte_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&config("sspda_pada", "epochs = 2", a.path())).unwrap();
    let rb = run_experiment(&config("sspda_pada", "epochs = 2", b.path())).unwrap();
    for name in ["metrics_seed0.csv", "gamma_seed0.csv", "summary.csv", "aggregate.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    assert_eq!(ra.runs[0].history, rb.runs[0].history);
}

#[derive(Default)]
struct FirstStep(Option<StepRecord>);

impl TrainCallbacks for FirstStep {
    fn on_step(&mut self, r: &StepRecord) {
        self.0.get_or_insert(*r);
    }
}

#[test]
fn source_only_and_sspda_see_the_same_first_source_batch() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        target_classes: 2,
        samples_per_class: 10,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let first = |method: &str| {
        let cfg = config(method, "", dir.path());
        let tc = TrainConfig { seed: 7, ..cfg.train };
        let model = build_model(&tc.model_spec(3, 48, 3), 7).unwrap();
        let mut rec = FirstStep::default();
        train(model, &s, &t, &tc, &mut rec).unwrap();
        rec.0.unwrap().losses
    };
    let (a, b) = (first("source_only"), first("sspda"));
    assert_eq!(a.cls.to_bits(), b.cls.to_bits());
    assert_eq!(a.entropy, 0.0);
    assert!(b.entropy > 0.0 && b.jigsaw_t > 0.0);
}

/// Sets every class score to the bias alone, favouring class 0.
fn constant_model(classes: usize) -> sspda_core::network::SspdaModel {
    let cfg = TrainConfig::default();
    let mut m = build_model(&cfg.model_spec(3, 48, classes), 0).unwrap();
    let names = m.names().to_vec();
    for (n, p) in names.iter().zip(m.params_mut()) {
        if n == "object_head.weight" {
            p.data_mut().fill(0.0);
        }
        if n == "object_head.bias" {
            p.data_mut().fill(0.0);
            p.data_mut()[0] = 2.0;
        }
    }
    m
}

fn class_zero_target() -> Vec<Sample> {
    let (_, t) = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        target_classes: 1,
        samples_per_class: 6,
        ..SyntheticSpec::default()
    })
    .unwrap();
    t
}

#[test]
fn evaluation_examples() {
    let model = constant_model(3);
    let target = class_zero_target();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(evaluate(&model, &target, 1, &mut rng).unwrap(), 1.0);
    assert_eq!(evaluate(&model, &target, 10, &mut rng).unwrap(), 1.0);

    // a trained-from-random model, same seed twice
    let (s, t) = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        target_classes: 3,
        samples_per_class: 8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.01,
        num_perms: 4,
        ..TrainConfig::default()
    };
    let trained = train(
        build_model(&cfg.model_spec(3, 48, 3), 1).unwrap(),
        &s,
        &t,
        &cfg,
        &mut (),
    )
    .unwrap()
    .final_model;
    let run = || evaluate(&trained, &t, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn evaluation_needs_labels() {
    let model = constant_model(3);
    let hidden: Vec<Sample> = class_zero_target()
        .iter()
        .map(|x| Sample::new(x.image().clone(), None, x.domain()).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        evaluate(&model, &hidden, 1, &mut rng),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        evaluate(&model, &class_zero_target(), 0, &mut rng),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn unwritable_output_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    // epochs would take long if training started
    let cfg = config("sspda", "epochs = 500", &file.join("out"));
    let t0 = std::time::Instant::now();
    assert!(matches!(run_experiment(&cfg), Err(sspda_cli::CliError::Io { .. })));
    assert!(t0.elapsed().as_secs() < 5);
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sspda"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");

    std::fs::write(&cfg, "").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("method missing"));

    std::fs::write(&cfg, "method = sspda\nbeta = 1.5\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // runtime failure: manifest that does not exist
    std::fs::write(
        &cfg,
        "method = sspda\ndataset = manifest\nmanifest = /nonexistent/m.txt\nepochs = 1\n",
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn binary_generate_train_eval_and_perms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, format!("method = sspda\n{TINY}")).unwrap();

    let data = dir.path().join("data");
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.txt").exists());

    // train on the files just written
    let disk = dir.path().join("disk.conf");
    std::fs::write(
        &disk,
        format!(
            "method = sspda\n{TINY}dataset = manifest\nmanifest = {}\n",
            data.join("manifest.txt").display()
        ),
    )
    .unwrap();
    let runs = dir.path().join("runs");
    let out = bin()
        .args(["train", "--config"])
        .arg(&disk)
        .args(["--seed", "3", "--method", "jigen", "--out"])
        .arg(&runs)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(runs.join("metrics_seed3.csv").exists());
    let resolved = std::fs::read_to_string(runs.join("config.txt")).unwrap();
    assert!(resolved.contains("method = jigen"));

    let out = bin()
        .args(["eval", "--config"])
        .arg(&disk)
        .arg("--checkpoint")
        .arg(runs.join("best_seed3.ckpt"))
        .args(["--crops", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let acc: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let perms = dir.path().join("perms.txt");
    let out = bin()
        .args(["perms", "--grid-side", "2", "--count", "5", "--out"])
        .arg(&perms)
        .output()
        .unwrap();
    assert!(out.status.success());
    let set = sspda_core::jigsaw::PermutationSet::load(&perms).unwrap();
    assert_eq!(set.len(), 5);
}
