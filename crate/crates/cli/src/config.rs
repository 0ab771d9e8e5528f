//! `key = value` experiment configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sspda_core::data::SyntheticSpec;
use sspda_core::train::{GammaTargetMode, LambdaCadence, TrainConfig};

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    SourceOnly,
    Jigen,
    Sspda,
    SspdaGamma,
    SspdaPada,
}

pub const METHODS: [Method; 5] = [
    Method::SourceOnly,
    Method::Jigen,
    Method::Sspda,
    Method::SspdaGamma,
    Method::SspdaPada,
];

/// The loss weights a method pins down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodWeights {
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub use_gamma: bool,
    pub lambda_max: f64,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::Jigen => "jigen",
            Method::Sspda => "sspda",
            Method::SspdaGamma => "sspda_gamma",
            Method::SspdaPada => "sspda_pada",
        }
    }

    pub fn defaults(self) -> MethodWeights {
        let (alpha_s, alpha_t, use_gamma, lambda_max) = match self {
            Method::SourceOnly => (0.0, 0.0, false, 0.0),
            Method::Jigen => (1.0, 1.0, false, 0.0),
            Method::Sspda => (0.0, 1.0, false, 0.0),
            Method::SspdaGamma => (0.0, 1.0, true, 0.0),
            Method::SspdaPada => (0.0, 1.0, true, 0.1),
        };
        MethodWeights {
            alpha_s,
            alpha_t,
            use_gamma,
            lambda_max,
        }
    }

    /// Checks that explicit weights keep the method's identity.
    fn admits(self, key: &str, w: &MethodWeights, eta: f64) -> Result<(), String> {
        let ok = match (self, key) {
            (Method::SourceOnly, "alpha_s" | "alpha_t" | "lambda_max") => {
                w.alpha_s == 0.0 && w.alpha_t == 0.0 && w.lambda_max == 0.0
            }
            (Method::SourceOnly, "eta") => eta == 0.0,
            (Method::SourceOnly | Method::Jigen | Method::Sspda, "use_gamma") => !w.use_gamma,
            (Method::SspdaGamma | Method::SspdaPada, "use_gamma") => w.use_gamma,
            (Method::Jigen, "alpha_s") => w.alpha_s > 0.0,
            (Method::Jigen | Method::Sspda | Method::SspdaGamma | Method::SspdaPada, "alpha_t") => w.alpha_t > 0.0,
            (Method::Sspda | Method::SspdaGamma | Method::SspdaPada, "alpha_s") => w.alpha_s == 0.0,
            (Method::Jigen | Method::Sspda | Method::SspdaGamma, "lambda_max") => w.lambda_max == 0.0,
            (Method::SspdaPada, "lambda_max") => w.lambda_max > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("value contradicts method {}", self.name()))
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        METHODS.iter().copied().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = METHODS.iter().map(|m| m.name()).collect();
            format!("unknown method `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// A `relative_path class_id domain` manifest.
    Manifest {
        path: PathBuf,
        num_classes: usize,
    },
    /// One sub-directory per class under each root.
    Directories {
        source_dir: PathBuf,
        target_dir: PathBuf,
        classes: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub train: TrainConfig,
    pub dataset: DatasetSource,
    /// Side length images are resized to when loaded from disk.
    pub image_side: usize,
    pub output_dir: PathBuf,
    pub eval_crops: usize,
    pub repetitions: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, None, "expected `key = value`"))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::at(line, None, "empty key"));
        }
        if let Some(prev) = map.get(&key) {
            let prev: &Entry = prev;
            return Err(ConfigError::at(
                line,
                Some(&key),
                format!("duplicate key (first set on line {})", prev.line),
            ));
        }
        map.insert(
            key,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }
    Ok(map)
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T, ConfigError> {
    e.value
        .parse()
        .map_err(|_| ConfigError::at(e.line, Some(key), format!("cannot parse `{}`", e.value)))
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool, ConfigError> {
    match e.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        v => Err(ConfigError::at(
            e.line,
            Some(key),
            format!("expected true or false, got `{v}`"),
        )),
    }
}

fn range(key: &str, e: &Entry, v: f64, lo: f64, hi: f64) -> Result<f64, ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(ConfigError::at(
            e.line,
            Some(key),
            format!("{v} is outside [{lo}, {hi}]"),
        ))
    }
}

fn nonneg(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = parse_value(key, e)?;
    range(key, e, v, 0.0, f64::MAX)
}

fn unit(key: &str, e: &Entry) -> Result<f64, ConfigError> {
    let v: f64 = parse_value(key, e)?;
    range(key, e, v, 0.0, 1.0)
}

fn positive(key: &str, e: &Entry) -> Result<usize, ConfigError> {
    let v: usize = parse_value(key, e)?;
    if v == 0 {
        return Err(ConfigError::at(e.line, Some(key), "must be positive"));
    }
    Ok(v)
}

/// Every accepted key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "method",
    "seed",
    "epochs",
    "repetitions",
    "eval_crops",
    "output_dir",
    "alpha_s",
    "alpha_t",
    "eta",
    "beta",
    "lambda_max",
    "lambda_cadence",
    "use_gamma",
    "gamma_target",
    "gamma_warmup_epochs",
    "num_perms",
    "grid_side",
    "batch_source",
    "batch_target",
    "learning_rate",
    "momentum",
    "weight_decay",
    "selection_w",
    "val_fraction",
    "hflip",
    "conv1_channels",
    "conv1_kernel",
    "conv1_stride",
    "pool1",
    "conv2_kernel",
    "conv2_stride",
    "pool2",
    "feature_dim",
    "domain_hidden",
    "dataset",
    "num_classes",
    "target_classes",
    "image_side",
    "samples_per_class",
    "color_shift",
    "texture",
    "noise",
    "data_seed",
    "manifest",
    "source_dir",
    "target_dir",
    "classes",
];

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::file(path, format!("cannot read: {e}")))?;
    parse_config_str(&text, overrides).map_err(|e| e.in_file(path))
}

/// Parses configuration text; the method must come from the text or the
/// overrides.
pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    build(text, overrides, true)
}

/// Like [`parse_config_str`] but tolerates a missing method (defaulting to
/// `source_only`), for commands that only need the dataset settings.
pub fn parse_dataset_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    build(text, overrides, false)
}

fn build(text: &str, overrides: &Overrides, require_method: bool) -> Result<ExperimentConfig, ConfigError> {
    let map = parse_lines(text)?;
    if let Some((key, e)) = map.iter().find(|(k, _)| !KEYS.contains(&k.as_str())) {
        return Err(ConfigError::at(e.line, Some(key), "unknown key"));
    }
    let get = |k: &str| map.get(k);

    let method = match (overrides.method, get("method")) {
        (Some(m), _) => m,
        (None, Some(e)) => e
            .value
            .parse()
            .map_err(|msg: String| ConfigError::at(e.line, Some("method"), msg))?,
        (None, None) if require_method => return Err(ConfigError::at_none("method missing")),
        (None, None) => Method::SourceOnly,
    };

    let mut t = TrainConfig::default();
    let mw = method.defaults();
    t.alpha_s = mw.alpha_s;
    t.alpha_t = mw.alpha_t;
    t.use_gamma = mw.use_gamma;
    t.lambda_max = mw.lambda_max;
    if method == Method::SourceOnly {
        t.eta = 0.0;
    }
    let mut synth = SyntheticSpec::default();
    let mut repetitions = 3;
    let mut eval_crops = 1;
    let mut output_dir = PathBuf::from("runs");
    let mut image_side = synth.image_side;
    let mut data_seed = None;

    for (key, e) in &map {
        let k = key.as_str();
        match k {
            "method" => {}
            "seed" => t.seed = parse_value(k, e)?,
            "epochs" => t.epochs = positive(k, e)?,
            "repetitions" => repetitions = positive(k, e)?,
            "eval_crops" => eval_crops = positive(k, e)?,
            "output_dir" => output_dir = PathBuf::from(&e.value),
            "alpha_s" => t.alpha_s = nonneg(k, e)?,
            "alpha_t" => t.alpha_t = nonneg(k, e)?,
            "eta" => t.eta = unit(k, e)?,
            "beta" => t.beta = unit(k, e)?,
            "lambda_max" => t.lambda_max = nonneg(k, e)?,
            "lambda_cadence" => {
                t.lambda_cadence = match e.value.as_str() {
                    "step" => LambdaCadence::Step,
                    "epoch" => LambdaCadence::Epoch,
                    v => {
                        return Err(ConfigError::at(
                            e.line,
                            Some(k),
                            format!("expected step or epoch, got `{v}`"),
                        ))
                    }
                }
            }
            "use_gamma" => t.use_gamma = parse_bool(k, e)?,
            "gamma_target" => {
                t.gamma_target = match e.value.as_str() {
                    "argmax" => GammaTargetMode::Argmax,
                    "expected" => GammaTargetMode::Expected,
                    v => {
                        return Err(ConfigError::at(
                            e.line,
                            Some(k),
                            format!("expected argmax or expected, got `{v}`"),
                        ))
                    }
                }
            }
            "gamma_warmup_epochs" => t.gamma_warmup_epochs = parse_value(k, e)?,
            "num_perms" => t.num_perms = positive(k, e)?,
            "grid_side" => t.grid_side = positive(k, e)?,
            "batch_source" => t.batch_source = positive(k, e)?,
            "batch_target" => t.batch_target = positive(k, e)?,
            "learning_rate" => t.learning_rate = nonneg(k, e)?,
            "momentum" => {
                let v: f64 = parse_value(k, e)?;
                t.momentum = range(k, e, v, 0.0, 1.0 - f64::EPSILON)?;
            }
            "weight_decay" => t.weight_decay = nonneg(k, e)?,
            "selection_w" => t.selection_w = unit(k, e)?,
            "val_fraction" => {
                let v: f64 = parse_value(k, e)?;
                t.val_fraction = range(k, e, v, 0.0, 1.0 - f64::EPSILON)?;
            }
            "hflip" => t.hflip = parse_bool(k, e)?,
            "conv1_channels" => t.backbone.conv1_channels = positive(k, e)?,
            "conv1_kernel" => t.backbone.conv1_kernel = positive(k, e)?,
            "conv1_stride" => t.backbone.conv1_stride = positive(k, e)?,
            "pool1" => t.backbone.pool1 = positive(k, e)?,
            "conv2_kernel" => t.backbone.conv2_kernel = positive(k, e)?,
            "conv2_stride" => t.backbone.conv2_stride = positive(k, e)?,
            "pool2" => t.backbone.pool2 = positive(k, e)?,
            "feature_dim" => t.backbone.feature_dim = positive(k, e)?,
            "domain_hidden" => t.backbone.domain_hidden = Some(positive(k, e)?),
            "dataset" | "manifest" | "source_dir" | "target_dir" | "classes" => {}
            "num_classes" => synth.num_classes = positive(k, e)?,
            "target_classes" => synth.target_classes = positive(k, e)?,
            "image_side" => {
                image_side = positive(k, e)?;
                synth.image_side = image_side;
            }
            "samples_per_class" => synth.samples_per_class = positive(k, e)?,
            "color_shift" => synth.color_shift = unit(k, e)?,
            "texture" => synth.texture = nonneg(k, e)?,
            "noise" => synth.noise = nonneg(k, e)?,
            "data_seed" => data_seed = Some(parse_value(k, e)?),
            _ => unreachable!("keys are checked against KEYS"),
        }
    }
    if let Some(seed) = overrides.seed {
        t.seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        output_dir = dir.clone();
    }
    // the dataset stays fixed across repetitions unless pinned explicitly
    synth.seed = data_seed.unwrap_or(t.seed);
    synth.grid_side = t.grid_side;

    let weights = MethodWeights {
        alpha_s: t.alpha_s,
        alpha_t: t.alpha_t,
        use_gamma: t.use_gamma,
        lambda_max: t.lambda_max,
    };
    for key in ["alpha_s", "alpha_t", "use_gamma", "lambda_max", "eta"] {
        if let Some(e) = get(key) {
            method
                .admits(key, &weights, t.eta)
                .map_err(|msg| ConfigError::at(e.line, Some(key), msg))?;
        }
    }

    let dataset = match get("dataset").map(|e| (e, e.value.as_str())) {
        None | Some((_, "synthetic")) => DatasetSource::Synthetic(synth.clone()),
        Some((_, "manifest")) => {
            let e = get("manifest").ok_or_else(|| ConfigError::at_none("dataset = manifest needs `manifest`"))?;
            DatasetSource::Manifest {
                path: PathBuf::from(&e.value),
                num_classes: synth.num_classes,
            }
        }
        Some((_, "directories")) => {
            let need =
                |k: &str| get(k).ok_or_else(|| ConfigError::at_none(format!("dataset = directories needs `{k}`")));
            let classes: Vec<String> = need("classes")?
                .value
                .split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect();
            if classes.is_empty() {
                let e = need("classes")?;
                return Err(ConfigError::at(e.line, Some("classes"), "empty class list"));
            }
            DatasetSource::Directories {
                source_dir: PathBuf::from(&need("source_dir")?.value),
                target_dir: PathBuf::from(&need("target_dir")?.value),
                classes,
            }
        }
        Some((e, v)) => {
            return Err(ConfigError::at(
                e.line,
                Some("dataset"),
                format!("expected synthetic, manifest or directories, got `{v}`"),
            ))
        }
    };

    // cross-field invariants, reported against the most specific key
    let blame = |keys: &[&str], msg: String| {
        let hit = keys.iter().find_map(|k| get(k).map(|e| (*k, e.line)));
        match hit {
            Some((k, line)) => ConfigError::at(line, Some(k), msg),
            None => ConfigError::at_none(msg),
        }
    };
    if let DatasetSource::Synthetic(s) = &dataset {
        s.validate()
            .map_err(|e| blame(&["target_classes", "image_side", "grid_side"], e.to_string()))?;
    }
    if image_side % t.grid_side != 0 {
        return Err(blame(
            &["image_side", "grid_side"],
            format!("image side {image_side} is not divisible by grid side {}", t.grid_side),
        ));
    }
    t.validate()
        .map_err(|e| blame(&["num_perms", "grid_side", "momentum"], e.to_string()))?;
    let num_classes = match &dataset {
        DatasetSource::Synthetic(s) => s.num_classes,
        DatasetSource::Manifest { num_classes, .. } => *num_classes,
        DatasetSource::Directories { classes, .. } => classes.len(),
    };
    t.model_spec(3, image_side, num_classes)
        .validate()
        .map_err(|e| blame(&["image_side", "conv1_kernel", "pool1", "pool2"], e.to_string()))?;

    Ok(ExperimentConfig {
        method,
        train: t,
        dataset,
        image_side,
        output_dir,
        eval_crops,
        repetitions,
    })
}

impl ExperimentConfig {
    pub fn num_classes(&self) -> usize {
        match &self.dataset {
            DatasetSource::Synthetic(s) => s.num_classes,
            DatasetSource::Manifest { num_classes, .. } => *num_classes,
            DatasetSource::Directories { classes, .. } => classes.len(),
        }
    }

    /// The fully resolved configuration in the same `key = value` format;
    /// parsing it back yields an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let b = &t.backbone;
        let mut out = Vec::new();
        let mut put = |k: &str, v: String| out.push(format!("{k} = {v}"));
        put("method", self.method.to_string());
        put("seed", t.seed.to_string());
        put("epochs", t.epochs.to_string());
        put("repetitions", self.repetitions.to_string());
        put("eval_crops", self.eval_crops.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("alpha_s", t.alpha_s.to_string());
        put("alpha_t", t.alpha_t.to_string());
        put("eta", t.eta.to_string());
        put("beta", t.beta.to_string());
        put("lambda_max", t.lambda_max.to_string());
        put(
            "lambda_cadence",
            match t.lambda_cadence {
                LambdaCadence::Step => "step",
                LambdaCadence::Epoch => "epoch",
            }
            .into(),
        );
        put("use_gamma", t.use_gamma.to_string());
        put(
            "gamma_target",
            match t.gamma_target {
                GammaTargetMode::Argmax => "argmax",
                GammaTargetMode::Expected => "expected",
            }
            .into(),
        );
        put("gamma_warmup_epochs", t.gamma_warmup_epochs.to_string());
        put("num_perms", t.num_perms.to_string());
        put("grid_side", t.grid_side.to_string());
        put("batch_source", t.batch_source.to_string());
        put("batch_target", t.batch_target.to_string());
        put("learning_rate", t.learning_rate.to_string());
        put("momentum", t.momentum.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("selection_w", t.selection_w.to_string());
        put("val_fraction", t.val_fraction.to_string());
        put("hflip", t.hflip.to_string());
        put("conv1_channels", b.conv1_channels.to_string());
        put("conv1_kernel", b.conv1_kernel.to_string());
        put("conv1_stride", b.conv1_stride.to_string());
        put("pool1", b.pool1.to_string());
        put("conv2_kernel", b.conv2_kernel.to_string());
        put("conv2_stride", b.conv2_stride.to_string());
        put("pool2", b.pool2.to_string());
        put("feature_dim", b.feature_dim.to_string());
        if let Some(h) = b.domain_hidden {
            put("domain_hidden", h.to_string());
        }
        put("image_side", self.image_side.to_string());
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                put("dataset", "synthetic".into());
                put("num_classes", s.num_classes.to_string());
                put("target_classes", s.target_classes.to_string());
                put("samples_per_class", s.samples_per_class.to_string());
                put("color_shift", s.color_shift.to_string());
                put("texture", s.texture.to_string());
                put("noise", s.noise.to_string());
                put("data_seed", s.seed.to_string());
            }
            DatasetSource::Manifest { path, num_classes } => {
                put("dataset", "manifest".into());
                put("manifest", path.display().to_string());
                put("num_classes", num_classes.to_string());
            }
            DatasetSource::Directories {
                source_dir,
                target_dir,
                classes,
            } => {
                put("dataset", "directories".into());
                put("source_dir", source_dir.display().to_string());
                put("target_dir", target_dir.display().to_string());
                put("classes", classes.join(","));
            }
        }
        out.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config_str(text, &Overrides::default())
    }

    #[test]
    fn empty_file_needs_a_method() {
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("method missing"), "{err}");
        let err = parse("# only a comment\n\n").unwrap_err();
        assert!(err.to_string().contains("method missing"));
    }

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = parse("method = sspda").unwrap();
        let t = &c.train;
        assert_eq!((t.eta, t.alpha_t, t.beta, t.selection_w), (0.2, 1.0, 0.7, 0.6));
        assert_eq!((t.learning_rate, t.momentum, t.weight_decay), (0.0005, 0.9, 0.0005));
        assert_eq!((t.batch_source, t.batch_target), (32, 32));
        assert_eq!((t.num_perms, t.grid_side, t.epochs), (30, 3, 30));
        assert_eq!((c.eval_crops, c.repetitions), (1, 3));
    }

    #[test]
    fn eta_is_read() {
        let c = parse("method = sspda\neta = 0.2\n").unwrap();
        assert_eq!(c.train.eta, 0.2);
    }

    #[test]
    fn out_of_range_beta_names_key_and_line() {
        let err = parse("method = sspda\n\nbeta = 1.5\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert_eq!(err.key.as_deref(), Some("beta"));
    }

    #[test]
    fn unknown_and_malformed_lines_are_rejected() {
        let err = parse("method = sspda\nlamda = 0.1\n").unwrap_err();
        assert_eq!((err.line, err.key.as_deref()), (Some(2), Some("lamda")));
        let err = parse("method = sspda\nepochs = ten\n").unwrap_err();
        assert_eq!((err.line, err.key.as_deref()), (Some(2), Some("epochs")));
        assert!(parse("method sspda").is_err());
        assert!(parse("method = sspda\nmethod = jigen").is_err());
        assert!(parse("method = pada").is_err());
    }

    #[test]
    fn method_mapping_is_total_and_injective() {
        let mut seen = Vec::new();
        for m in METHODS {
            let c = parse(&format!("method = {m}")).unwrap();
            let key = (
                c.train.alpha_s.to_bits(),
                c.train.alpha_t.to_bits(),
                c.train.use_gamma,
                c.train.lambda_max.to_bits(),
            );
            assert!(!seen.contains(&key), "{m} collides");
            seen.push(key);
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let pada = parse("method = sspda_pada").unwrap();
        assert_eq!(pada.train.lambda_max, 0.1);
        assert!(pada.train.use_gamma);
        let jigen = parse("method = jigen").unwrap();
        assert!(jigen.train.alpha_s > 0.0 && jigen.train.alpha_t > 0.0);
    }

    #[test]
    fn contradicting_weights_are_rejected() {
        let err = parse("method = sspda\nalpha_s = 0.5").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("alpha_s"));
        assert!(parse("method = sspda_pada\nlambda_max = 0").is_err());
        assert!(parse("method = source_only\neta = 0.2").is_err());
        assert!(parse("method = jigen\nuse_gamma = true").is_err());
        // tuning within a method is fine
        let c = parse("method = sspda_pada\nlambda_max = 0.05\nalpha_t = 0.5").unwrap();
        assert_eq!((c.train.lambda_max, c.train.alpha_t), (0.05, 0.5));
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            method: Some(Method::Jigen),
            seed: Some(17),
            output_dir: Some("elsewhere".into()),
        };
        let c = parse_config_str("method = sspda\nseed = 3", &o).unwrap();
        assert_eq!(c.method, Method::Jigen);
        assert_eq!(c.train.seed, 17);
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn resolved_text_round_trips() {
        let c = parse("method = sspda_gamma\nsamples_per_class = 7\nlearning_rate = 0.01\n# note\nseed = 4").unwrap();
        let again = parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        // every written key is a known key
        for line in c.to_text().lines() {
            let k = line.split('=').next().unwrap().trim();
            assert!(KEYS.contains(&k), "{k}");
        }
    }

    #[test]
    fn dataset_kinds() {
        let c = parse("method = sspda\ndataset = manifest\nmanifest = data/m.txt\nnum_classes = 4").unwrap();
        assert!(matches!(c.dataset, DatasetSource::Manifest { num_classes: 4, .. }));
        let c =
            parse("method = sspda\ndataset = directories\nsource_dir = a\ntarget_dir = b\nclasses = x, y ,z").unwrap();
        match c.dataset {
            DatasetSource::Directories { classes, .. } => assert_eq!(classes, vec!["x", "y", "z"]),
            other => panic!("{other:?}"),
        }
        assert!(parse("method = sspda\ndataset = manifest").is_err());
        let err = parse("method = sspda\ntarget_classes = 9").unwrap_err();
        assert_eq!(err.key.as_deref(), Some("target_classes"));
    }
}
