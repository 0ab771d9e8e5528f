//! The desk-scale SSPDA network: a two-block convolutional feature extractor
//! with an object head, a puzzle head and a gradient-reversed domain
//! discriminator, plus the adversarial weight schedule and checkpoint I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &str = "sspda-checkpoint 1";

/// Layer sizes of the feature extractor. Each block is
/// conv → relu → non-overlapping max-pool; global average pooling follows.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv1_stride: usize,
    pub pool1: usize,
    pub conv2_kernel: usize,
    pub conv2_stride: usize,
    pub pool2: usize,
    /// Output channels of the second block, i.e. the feature dimension F.
    pub feature_dim: usize,
    /// Width of both hidden layers of the domain head; `None` means F/2.
    pub domain_hidden: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        // 48 → conv 6/2 → 22 → pool 2 → 11 → conv 3/1 → 9 → pool 3 → 3 → GAP
        BackboneConfig {
            conv1_channels: 8,
            conv1_kernel: 6,
            conv1_stride: 2,
            pool1: 2,
            conv2_kernel: 3,
            conv2_stride: 1,
            pool2: 3,
            feature_dim: 64,
            domain_hidden: None,
        }
    }
}

/// Everything needed to lay out the parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub channels: usize,
    pub image_side: usize,
    pub grid_side: usize,
    pub num_classes: usize,
    pub num_perms: usize,
    pub backbone: BackboneConfig,
}

impl ModelSpec {
    pub fn domain_hidden(&self) -> usize {
        self.backbone
            .domain_hidden
            .unwrap_or((self.backbone.feature_dim / 2).max(1))
    }

    /// Spatial side after each stage, validating that every stage fits.
    fn stage_sides(&self) -> Result<[usize; 4]> {
        let b = &self.backbone;
        let conv = |side: usize, k: usize, s: usize, name: &str| -> Result<usize> {
            if k == 0 || s == 0 || k > side {
                return Err(Error::Parameter(format!(
                    "{name}: kernel {k} / stride {s} does not fit side {side}"
                )));
            }
            Ok((side - k) / s + 1)
        };
        let pool = |side: usize, w: usize, name: &str| -> Result<usize> {
            if w == 0 || !side.is_multiple_of(w) {
                return Err(Error::Parameter(format!(
                    "{name}: window {w} does not tile side {side}"
                )));
            }
            Ok(side / w)
        };
        let c1 = conv(self.image_side, b.conv1_kernel, b.conv1_stride, "conv1")?;
        let p1 = pool(c1, b.pool1, "pool1")?;
        let c2 = conv(p1, b.conv2_kernel, b.conv2_stride, "conv2")?;
        let p2 = pool(c2, b.pool2, "pool2")?;
        Ok([c1, p1, c2, p2])
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backbone;
        if self.num_classes == 0 {
            return Err(Error::Parameter("class count must be positive".into()));
        }
        if self.num_perms == 0 {
            return Err(Error::Parameter("permutation count must be positive".into()));
        }
        if self.channels == 0 || b.conv1_channels == 0 || b.feature_dim == 0 {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.grid_side == 0 || !self.image_side.is_multiple_of(self.grid_side) {
            return Err(Error::Parameter(format!(
                "image side {} is not divisible by grid side {}",
                self.image_side, self.grid_side
            )));
        }
        self.stage_sides().map(|_| ())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let b = &self.backbone;
        let (f, h) = (b.feature_dim, self.domain_hidden());
        [
            (
                "backbone.conv1.weight",
                vec![b.conv1_channels, self.channels, b.conv1_kernel, b.conv1_kernel],
            ),
            ("backbone.conv1.bias", vec![b.conv1_channels]),
            (
                "backbone.conv2.weight",
                vec![f, b.conv1_channels, b.conv2_kernel, b.conv2_kernel],
            ),
            ("backbone.conv2.bias", vec![f]),
            ("object_head.weight", vec![f, self.num_classes]),
            ("object_head.bias", vec![self.num_classes]),
            ("puzzle_head.weight", vec![f, self.num_perms]),
            ("puzzle_head.bias", vec![self.num_perms]),
            ("domain_head.fc1.weight", vec![f, h]),
            ("domain_head.fc1.bias", vec![h]),
            ("domain_head.fc2.weight", vec![h, h]),
            ("domain_head.fc2.bias", vec![h]),
            ("domain_head.fc3.weight", vec![h, 1]),
            ("domain_head.fc3.bias", vec![1]),
        ]
        .into_iter()
        .map(|(n, s)| (n.to_string(), s))
        .collect()
    }
}

/// Which sub-network a parameter tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    ObjectHead,
    PuzzleHead,
    DomainHead,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next() {
            Some("backbone") => ParamGroup::Backbone,
            Some("object_head") => ParamGroup::ObjectHead,
            Some("puzzle_head") => ParamGroup::PuzzleHead,
            _ => ParamGroup::DomainHead,
        }
    }
}

// storage-order indices
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const OBJ_W: usize = 4;
const OBJ_B: usize = 5;
const PUZ_W: usize = 6;
const PUZ_B: usize = 7;
const DOM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SspdaModel {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor>,
}

/// Parameter handles of one model inside one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Deterministic initialization: weights uniform in ±1/sqrt(fan_in),
/// biases zero.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<SspdaModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (name, shape) in spec.layout() {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = if shape.len() == 4 {
                shape[1..].iter().product()
            } else {
                shape[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        params.push(Tensor::new(shape, data)?);
        names.push(name);
    }
    Ok(SspdaModel {
        spec: spec.clone(),
        names,
        params,
    })
}

impl SspdaModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.names.iter().map(|n| ParamGroup::of(n)).collect()
    }

    /// Replaces all parameters, checking count and shapes.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Dimension(
                "replacement parameters do not match the model layout".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            vars: self.params.iter().map(|p| g.param(p.clone())).collect(),
        }
    }

    /// Registers every parameter as a constant (inference, no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            vars: self.params.iter().map(|p| g.constant(p.clone())).collect(),
        }
    }

    /// `batch × c × h × w` images to `batch × F` features.
    pub fn forward_features(&self, g: &mut Graph, m: &BoundModel, images: Var) -> Result<Var> {
        let s = g.value(images).shape();
        if s.len() != 4 || s[1] != self.spec.channels || s[2] != self.spec.image_side || s[3] != self.spec.image_side {
            return Err(Error::Dimension(format!(
                "images {s:?} do not match {}×{}×{}",
                self.spec.channels, self.spec.image_side, self.spec.image_side
            )));
        }
        let b = &self.spec.backbone;
        let v = &m.vars;
        let x = g.conv2d(images, v[CONV1_W], Some(v[CONV1_B]), b.conv1_stride)?;
        let x = g.relu(x)?;
        let x = g.max_pool2d(x, b.pool1)?;
        let x = g.conv2d(x, v[CONV2_W], Some(v[CONV2_B]), b.conv2_stride)?;
        let x = g.relu(x)?;
        let x = g.max_pool2d(x, b.pool2)?;
        g.global_avg_pool(x)
    }

    /// Object logits `batch × |classes|`.
    pub fn forward_class(&self, g: &mut Graph, m: &BoundModel, feats: Var) -> Result<Var> {
        g.dense(feats, m.vars[OBJ_W], m.vars[OBJ_B])
    }

    /// Puzzle logits `batch × P`.
    pub fn forward_puzzle(&self, g: &mut Graph, m: &BoundModel, feats: Var) -> Result<Var> {
        g.dense(feats, m.vars[PUZ_W], m.vars[PUZ_B])
    }

    /// Probability of the source domain, `batch × 1`, computed behind a
    /// gradient reversal with coefficient `lambda`.
    pub fn forward_domain(&self, g: &mut Graph, m: &BoundModel, feats: Var, lambda: f64) -> Result<Var> {
        let v = &m.vars;
        let x = g.gradient_reversal(feats, lambda)?;
        let x = g.dense(x, v[DOM], v[DOM + 1])?;
        let x = g.relu(x)?;
        let x = g.dense(x, v[DOM + 2], v[DOM + 3])?;
        let x = g.relu(x)?;
        let x = g.dense(x, v[DOM + 4], v[DOM + 5])?;
        g.sigmoid(x)
    }

    /// Softmax class posteriors for a stack of images, evaluated in chunks
    /// without gradient tracking.
    pub fn predict_proba(&self, images: &[&Tensor]) -> Result<Tensor> {
        const CHUNK: usize = 64;
        let c = self.spec.num_classes;
        let mut out = Vec::with_capacity(images.len() * c);
        for chunk in images.chunks(CHUNK) {
            let mut g = Graph::new();
            let m = self.bind_frozen(&mut g);
            let x = g.constant(Tensor::stack(chunk)?);
            let f = self.forward_features(&mut g, &m, x)?;
            let z = self.forward_class(&mut g, &m, f)?;
            let p = g.softmax(z)?;
            out.extend_from_slice(g.value(p).data());
        }
        if images.is_empty() {
            return Err(Error::Parameter("no images to predict".into()));
        }
        Tensor::new(vec![images.len(), c], out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(&str, &Tensor)> = self.names.iter().map(String::as_str).zip(&self.params).collect();
        save_checkpoint(path, &named)
    }

    /// Loads parameters written by [`SspdaModel::save`] for the same layout.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let named = load_checkpoint(path)?;
        if named.len() != self.params.len() {
            return Err(Error::format(
                path,
                format!("{} tensors, model has {}", named.len(), self.params.len()),
            ));
        }
        for ((name, t), (want, have)) in named.iter().zip(self.names.iter().zip(&self.params)) {
            if name != want || t.shape() != have.shape() {
                return Err(Error::format(
                    path,
                    format!(
                        "tensor `{name}` {:?} does not match `{want}` {:?}",
                        t.shape(),
                        have.shape()
                    ),
                ));
            }
        }
        self.params = named.into_iter().map(|(_, t)| t).collect();
        Ok(())
    }
}

/// Writes a text header (`name d1 d2 ...` per tensor) followed by the raw
/// little-endian `f64` values of every tensor in header order.
pub fn save_checkpoint(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(format!("{CHECKPOINT_MAGIC}\n{}\n", tensors.len()).as_bytes());
    for (name, t) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Parameter(format!("bad tensor name `{name}`")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        buf.extend_from_slice(format!("{name} {}\n", dims.join(" ")).as_bytes());
    }
    buf.extend_from_slice(b"end\n");
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if !line.ends_with('\n') {
            return Err(Error::format(path, "truncated header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut reader)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not an sspda checkpoint"));
    }
    let count: usize = next_line(&mut reader)?
        .parse()
        .map_err(|_| Error::format(path, "bad tensor count"))?;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next_line(&mut reader)?;
        let mut parts = l.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::format(path, "empty header line"))?
            .to_string();
        let shape = parts
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::format(path, format!("bad dim in `{l}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        header.push((name, shape));
    }
    if next_line(&mut reader)? != "end" {
        return Err(Error::format(path, "missing `end` after header"));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in header {
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        reader
            .read_exact(&mut raw)
            .map_err(|_| Error::format(path, format!("truncated data for `{name}`")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        out.push((name, t));
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::format(path, "trailing bytes after tensor data"));
    }
    Ok(out)
}

/// Logistic ramp of the adversarial weight from 0 towards `lambda_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub lambda_max: f64,
    pub total_steps: usize,
}

impl LambdaSchedule {
    pub fn new(lambda_max: f64, total_steps: usize) -> Result<Self> {
        if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda_max must be finite and >= 0, got {lambda_max}"
            )));
        }
        Ok(LambdaSchedule {
            lambda_max,
            total_steps,
        })
    }
}

/// `lambda_max · (2 / (1 + exp(-10 q)) - 1)` with `q = step / total_steps`.
pub fn lambda_at(schedule: &LambdaSchedule, step: usize) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::Parameter(format!(
            "step {step} beyond schedule length {}",
            schedule.total_steps
        )));
    }
    if schedule.total_steps == 0 {
        return Ok(0.0);
    }
    let q = step as f64 / schedule.total_steps as f64;
    Ok(schedule.lambda_max * (2.0 / (1.0 + (-10.0 * q).exp()) - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_spec() -> ModelSpec {
        ModelSpec {
            channels: 3,
            image_side: 12,
            grid_side: 3,
            num_classes: 4,
            num_perms: 5,
            backbone: BackboneConfig {
                conv1_channels: 3,
                conv1_kernel: 3,
                conv1_stride: 1,
                pool1: 2,
                conv2_kernel: 2,
                conv2_stride: 1,
                pool2: 2,
                feature_dim: 6,
                domain_hidden: None,
            },
        }
    }

    fn default_spec() -> ModelSpec {
        ModelSpec {
            channels: 3,
            image_side: 48,
            grid_side: 3,
            num_classes: 6,
            num_perms: 30,
            backbone: BackboneConfig::default(),
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(&default_spec(), 11).unwrap();
        let b = build_model(&default_spec(), 11).unwrap();
        assert_eq!(a, b);
        let c = build_model(&default_spec(), 12).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn default_parameter_count_matches_layer_arithmetic() {
        // conv1 8·3·6·6 + 8, conv2 64·8·3·3 + 64, heads 64·6 + 6 and 64·30 + 30,
        // domain 64·32 + 32, 32·32 + 32, 32·1 + 1
        let expected = (8 * 3 * 36 + 8)
            + (64 * 8 * 9 + 64)
            + (64 * 6 + 6)
            + (64 * 30 + 30)
            + (64 * 32 + 32)
            + (32 * 32 + 32)
            + (32 + 1);
        assert_eq!(build_model(&default_spec(), 0).unwrap().param_count(), expected);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = default_spec();
        s.num_classes = 0;
        assert!(matches!(build_model(&s, 0), Err(Error::Parameter(_))));
        let mut s = default_spec();
        s.image_side = 50;
        assert!(build_model(&s, 0).is_err());
        let mut s = default_spec();
        s.backbone.pool2 = 2;
        assert!(build_model(&s, 0).is_err());
    }

    #[test]
    fn zero_image_yields_object_bias() {
        let model = build_model(&default_spec(), 3).unwrap();
        let mut g = Graph::new();
        let m = model.bind_frozen(&mut g);
        let x = g.constant(Tensor::zeros(vec![2, 3, 48, 48]));
        let f = model.forward_features(&mut g, &m, x).unwrap();
        let z = model.forward_class(&mut g, &m, f).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn posteriors_are_normalized_and_domain_in_open_interval() {
        let model = build_model(&small_spec(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let imgs: Vec<Tensor> = (0..3)
            .map(|_| Tensor::new(vec![3, 12, 12], (0..432).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let p = model.predict_proba(&refs).unwrap();
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut g = Graph::new();
        let m = model.bind_frozen(&mut g);
        let x = g.constant(Tensor::stack(&refs).unwrap());
        let f = model.forward_features(&mut g, &m, x).unwrap();
        let d = model.forward_domain(&mut g, &m, f, 0.5).unwrap();
        assert_eq!(g.value(d).shape(), &[3, 1]);
        assert!(g.value(d).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn domain_output_stays_open_for_huge_features() {
        let model = build_model(&small_spec(), 5).unwrap();
        let mut g = Graph::new();
        let m = model.bind_frozen(&mut g);
        for scale in [1e6, -1e6, 1e300, -1e300] {
            let f = g.constant(Tensor::new(vec![1, 6], vec![scale; 6]).unwrap());
            let d = model.forward_domain(&mut g, &m, f, 1.0).unwrap();
            let v = g.value(d).item();
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn zero_lambda_blocks_domain_gradient_to_backbone() {
        let model = build_model(&small_spec(), 5).unwrap();
        let mut g = Graph::new();
        let m = model.bind(&mut g);
        let x = g.constant(
            Tensor::new(
                vec![2, 3, 12, 12],
                (0..864).map(|i| (i as f64 * 0.01).sin().abs()).collect(),
            )
            .unwrap(),
        );
        let f = model.forward_features(&mut g, &m, x).unwrap();
        let d = model.forward_domain(&mut g, &m, f, 0.0).unwrap();
        let l = g.binary_cross_entropy(d, &[1.0, 1.0]).unwrap();
        g.backward(l).unwrap();
        for (v, group) in m.vars().iter().zip(model.groups()) {
            let grad = g.grad_tensor(*v);
            match group {
                ParamGroup::Backbone => assert!(grad.data().iter().all(|&x| x == 0.0)),
                ParamGroup::DomainHead => {}
                _ => assert!(g.grad(*v).is_none()),
            }
        }
        let fc3_bias = m.vars()[DOM + 5];
        assert!(g.grad_tensor(fc3_bias).data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = build_model(&small_spec(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let mut other = build_model(&small_spec(), 22).unwrap();
        other.load(&path).unwrap();
        assert_eq!(other, model);
        for (a, b) in other.params().iter().zip(model.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let text = std::fs::read(&path).unwrap();
        assert!(text.starts_with(b"sspda-checkpoint 1\n14\nbackbone.conv1.weight 3 3 3 3\n"));

        let mut wrong = build_model(&default_spec(), 0).unwrap();
        assert!(wrong.load(&path).is_err());
        std::fs::write(&path, &text[..text.len() - 3]).unwrap();
        assert!(other.load(&path).is_err());
    }

    #[test]
    fn lambda_schedule_examples() {
        let s = LambdaSchedule::new(0.1, 100).unwrap();
        assert_eq!(lambda_at(&s, 0).unwrap(), 0.0);
        let end = lambda_at(&s, 100).unwrap();
        assert!((end - 0.1 * (2.0 / (1.0 + (-10f64).exp()) - 1.0)).abs() < 1e-15);
        assert!((end - 0.0999909).abs() < 1e-7);
        let mut prev = 0.0;
        for step in 0..=100 {
            let l = lambda_at(&s, step).unwrap();
            assert!(l >= prev && l <= 0.1);
            prev = l;
        }
        assert!(matches!(lambda_at(&s, 101), Err(Error::Parameter(_))));
        assert!(LambdaSchedule::new(-0.1, 10).is_err());
    }
}
