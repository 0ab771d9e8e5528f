//! Multi-task objectives, class-weight estimation, model selection and the
//! training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, SgdState, Var};
use crate::data::{make_batches, stratified_split, BatchIndices, Sample};
use crate::error::{Error, Result};
use crate::jigsaw::{maybe_shuffle, select_permutations, PermutationSet};
use crate::network::{lambda_at, BackboneConfig, BoundModel, LambdaSchedule, ModelSpec, SspdaModel};
use crate::tensor::Tensor;

/// How a target sample picks its class weight in the weighted objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GammaTargetMode {
    /// `γ[argmax ŷ]` of the detached posterior.
    Argmax,
    /// `Σ_c γ_c ŷ_c` of the detached posterior.
    Expected,
}

/// Whether the adversarial weight ramps per optimization step or per epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaCadence {
    Step,
    Epoch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the source jigsaw term.
    pub alpha_s: f64,
    /// Weight of the target jigsaw term.
    pub alpha_t: f64,
    /// Weight of the target entropy term.
    pub eta: f64,
    /// Probability of leaving an image unshuffled.
    pub beta: f64,
    pub lambda_max: f64,
    pub lambda_cadence: LambdaCadence,
    pub use_gamma: bool,
    pub gamma_target: GammaTargetMode,
    /// Epochs trained with uniform class weights before the estimates are
    /// applied. Estimates are still recorded during the warm-up.
    pub gamma_warmup_epochs: usize,
    pub num_perms: usize,
    pub grid_side: usize,
    pub batch_source: usize,
    pub batch_target: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub selection_w: f64,
    pub val_fraction: f64,
    /// Random horizontal flips of source images.
    pub hflip: bool,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha_s: 0.0,
            alpha_t: 1.0,
            eta: 0.2,
            beta: 0.7,
            lambda_max: 0.0,
            lambda_cadence: LambdaCadence::Step,
            use_gamma: false,
            gamma_target: GammaTargetMode::Argmax,
            gamma_warmup_epochs: 0,
            num_perms: 30,
            grid_side: 3,
            batch_source: 32,
            batch_target: 32,
            learning_rate: 0.0005,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 30,
            selection_w: 0.6,
            val_fraction: 0.1,
            hflip: false,
            backbone: BackboneConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        unit("eta", self.eta)?;
        unit("beta", self.beta)?;
        unit("selection_w", self.selection_w)?;
        nonneg("alpha_s", self.alpha_s)?;
        nonneg("alpha_t", self.alpha_t)?;
        nonneg("lambda_max", self.lambda_max)?;
        nonneg("learning_rate", self.learning_rate)?;
        nonneg("weight_decay", self.weight_decay)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Parameter(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return Err(Error::Parameter("batch sizes must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be positive".into()));
        }
        if !(2..=3).contains(&self.grid_side) {
            return Err(Error::Parameter(format!(
                "grid_side must be 2 or 3, got {}",
                self.grid_side
            )));
        }
        let max_perms: usize = (1..=self.grid_side * self.grid_side).product();
        if self.num_perms == 0 || self.num_perms > max_perms {
            return Err(Error::Parameter(format!(
                "P must lie in [1, {max_perms}], got {}",
                self.num_perms
            )));
        }
        Ok(())
    }

    /// True when class weights or the adversarial term call for
    /// [`loss_eq2`] rather than [`loss_eq1`].
    pub fn uses_weighted_objective(&self) -> bool {
        self.use_gamma || self.lambda_max > 0.0
    }

    pub fn model_spec(&self, channels: usize, image_side: usize, num_classes: usize) -> ModelSpec {
        ModelSpec {
            channels,
            image_side,
            grid_side: self.grid_side,
            num_classes,
            num_perms: self.num_perms,
            backbone: self.backbone.clone(),
        }
    }
}

/// Per-class weights with maximum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaWeights {
    gamma: Vec<f64>,
}

impl GammaWeights {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.is_empty() || gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Parameter("class weights must lie in [0, 1]".into()));
        }
        Ok(GammaWeights { gamma })
    }

    pub fn uniform(num_classes: usize) -> Self {
        GammaWeights {
            gamma: vec![1.0; num_classes],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.gamma
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }
}

/// Column means of a `n × classes` posterior matrix, divided by the largest
/// mean. Each column is summed in sorted order, so the result does not
/// depend on the row order.
pub fn gamma_from_posteriors(posteriors: &Tensor) -> Result<GammaWeights> {
    let s = posteriors.shape();
    if s.len() != 2 {
        return Err(Error::Dimension(format!("posteriors must be n × classes, got {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    let d = posteriors.data();
    let mut means = Vec::with_capacity(c);
    for j in 0..c {
        let mut col: Vec<f64> = (0..n).map(|i| d[i * c + j]).collect();
        col.sort_by(f64::total_cmp);
        means.push(col.iter().sum::<f64>() / n as f64);
    }
    let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0 && max.is_finite()) {
        return Err(Error::Contract(format!("posterior means have maximum {max}")));
    }
    GammaWeights::new(means.iter().map(|m| m / max).collect())
}

pub fn estimate_gamma(model: &SspdaModel, target_images: &[&Tensor]) -> Result<GammaWeights> {
    if target_images.is_empty() {
        return Err(Error::Parameter("class weights need at least one target image".into()));
    }
    gamma_from_posteriors(&model.predict_proba(target_images)?)
}

/// Images stacked to `batch × c × h × w` with one integer label each.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Inputs of one optimization step. Labels of the shuffled sets are
/// permutation indices.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub source: LabeledImages,
    pub target: Tensor,
    pub shuffled_source: Option<LabeledImages>,
    pub shuffled_target: LabeledImages,
}

/// Graph handles of every term of one objective evaluation. Terms whose
/// weight is zero are not built.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cls: Var,
    pub jigsaw_s: Option<Var>,
    pub jigsaw_t: Option<Var>,
    pub entropy: Option<Var>,
    /// Source and target discriminator cross-entropies.
    pub domain: Option<(Var, Var)>,
}

/// Scalar values of [`LossTerms`], zero for absent terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub cls: f64,
    pub jigsaw_s: f64,
    pub jigsaw_t: f64,
    pub entropy: f64,
    pub domain: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).item());
        LossValues {
            total: g.value(self.total).item(),
            cls: g.value(self.cls).item(),
            jigsaw_s: v(self.jigsaw_s),
            jigsaw_t: v(self.jigsaw_t),
            entropy: v(self.entropy),
            domain: self.domain.map_or(0.0, |(s, t)| g.value(s).item() + g.value(t).item()),
        }
    }
}

fn puzzle_loss(g: &mut Graph, model: &SspdaModel, m: &BoundModel, set: &LabeledImages) -> Result<Var> {
    let x = g.constant(set.images.clone());
    let f = model.forward_features(g, m, x)?;
    let z = model.forward_puzzle(g, m, f)?;
    g.softmax_cross_entropy(z, &set.labels)
}

fn weighted(g: &mut Graph, x: Var, c: f64) -> Result<Var> {
    g.scale(x, c)
}

fn add_opt(g: &mut Graph, a: Option<Var>, b: Option<Var>) -> Result<Option<Var>> {
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(g.add(a, b)?),
        (a, None) => a,
        (None, b) => b,
    })
}

fn check_batch(batch: &StepBatch) -> Result<()> {
    if batch.source.labels.len() != batch.source.images.shape()[0]
        || batch.shuffled_target.labels.len() != batch.shuffled_target.images.shape()[0]
    {
        return Err(Error::Dimension("batch labels and images disagree in length".into()));
    }
    Ok(())
}

/// `((ℒ_c + α_s ℒ_p^s) + η H) + α_t ℒ_p^t`, every term a batch mean.
pub fn loss_eq1(
    g: &mut Graph,
    model: &SspdaModel,
    m: &BoundModel,
    batch: &StepBatch,
    config: &TrainConfig,
) -> Result<LossTerms> {
    check_batch(batch)?;
    let xs = g.constant(batch.source.images.clone());
    let fs = model.forward_features(g, m, xs)?;
    let zs = model.forward_class(g, m, fs)?;
    let cls = g.softmax_cross_entropy(zs, &batch.source.labels)?;

    let mut jigsaw_s = None;
    let mut src = cls;
    if config.alpha_s > 0.0 {
        let set = batch
            .shuffled_source
            .as_ref()
            .ok_or_else(|| Error::Contract("alpha_s > 0 needs a shuffled source batch".into()))?;
        let j = puzzle_loss(g, model, m, set)?;
        jigsaw_s = Some(j);
        let wj = weighted(g, j, config.alpha_s)?;
        src = g.add(src, wj)?;
    }

    let mut entropy = None;
    let mut tgt = None;
    if config.eta > 0.0 {
        let xt = g.constant(batch.target.clone());
        let ft = model.forward_features(g, m, xt)?;
        let zt = model.forward_class(g, m, ft)?;
        let pt = g.softmax(zt)?;
        let h = g.entropy_loss(pt)?;
        entropy = Some(h);
        tgt = Some(weighted(g, h, config.eta)?);
    }

    let (jigsaw_t, jig) = target_jigsaw(g, model, m, batch, config)?;
    let total = add_opt(g, Some(src), tgt)?;
    let total = add_opt(g, total, jig)?.expect("source term is always present");
    Ok(LossTerms {
        total,
        cls,
        jigsaw_s,
        jigsaw_t,
        entropy,
        domain: None,
    })
}

fn target_jigsaw(
    g: &mut Graph,
    model: &SspdaModel,
    m: &BoundModel,
    batch: &StepBatch,
    config: &TrainConfig,
) -> Result<(Option<Var>, Option<Var>)> {
    if config.alpha_t > 0.0 {
        let j = puzzle_loss(g, model, m, &batch.shuffled_target)?;
        Ok((Some(j), Some(weighted(g, j, config.alpha_t)?)))
    } else {
        Ok((None, None))
    }
}

/// Class weight of each target row from its detached posterior.
fn target_weights(probs: &Tensor, gamma: &GammaWeights, mode: GammaTargetMode) -> Vec<f64> {
    let c = gamma.len();
    probs
        .data()
        .chunks(c)
        .map(|row| match mode {
            GammaTargetMode::Argmax => gamma.values()[argmax(row)],
            GammaTargetMode::Expected => row.iter().zip(gamma.values()).map(|(p, w)| p * w).sum(),
        })
        .collect()
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class-weighted objective with a gradient-reversed discriminator:
///
/// `(mean_s γ_y ℒ_c + λ mean_s γ_y ℓ_d) + (η mean_t γ_ŷ H + λ mean_t γ_ŷ ℓ_d) + α_t ℒ_p^t`
///
/// where `ℓ_d` is the discriminator's binary cross-entropy (source label 1,
/// target label 0). The reversal node sits between features and
/// discriminator with unit coefficient, so one backward pass descends `ℓ_d`
/// in the discriminator and ascends it in the feature extractor, both
/// scaled by `λ`. The discriminator terms are built whenever `λ > 0` or
/// the configuration enables them.
#[allow(clippy::too_many_arguments)]
pub fn loss_eq2(
    g: &mut Graph,
    model: &SspdaModel,
    m: &BoundModel,
    batch: &StepBatch,
    gamma: &GammaWeights,
    lambda: f64,
    config: &TrainConfig,
) -> Result<LossTerms> {
    check_batch(batch)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if gamma.len() != model.spec().num_classes {
        return Err(Error::Dimension(format!(
            "{} class weights for {} classes",
            gamma.len(),
            model.spec().num_classes
        )));
    }
    let with_domain = lambda > 0.0 || config.lambda_max > 0.0;
    let labels = &batch.source.labels;
    if let Some(&bad) = labels.iter().find(|&&l| l >= gamma.len()) {
        return Err(Error::Index(format!("label {bad} outside [0, {})", gamma.len())));
    }
    let ws: Vec<f64> = labels.iter().map(|&l| gamma.values()[l]).collect();

    let xs = g.constant(batch.source.images.clone());
    let fs = model.forward_features(g, m, xs)?;
    let zs = model.forward_class(g, m, fs)?;
    let ce = g.cross_entropy_rows(zs, labels)?;
    let cls = g.weighted_mean(ce, &ws)?;
    let mut src = cls;

    let need_target = config.eta > 0.0 || with_domain;
    let mut entropy = None;
    let mut tgt = None;
    let mut domain = None;
    let mut ft = None;
    let mut wt = Vec::new();
    if need_target {
        let xt = g.constant(batch.target.clone());
        let f = model.forward_features(g, m, xt)?;
        let zt = model.forward_class(g, m, f)?;
        let pt = g.softmax(zt)?;
        wt = target_weights(g.value(pt), gamma, config.gamma_target);
        ft = Some(f);
        if config.eta > 0.0 {
            let h = g.entropy_rows(pt)?;
            let h = g.weighted_mean(h, &wt)?;
            entropy = Some(h);
            tgt = Some(weighted(g, h, config.eta)?);
        }
    }
    if with_domain {
        let ft = ft.expect("target features exist when the discriminator is on");
        let ds = model.forward_domain(g, m, fs, 1.0)?;
        let ls = g.bce_rows(ds, &vec![1.0; labels.len()])?;
        let dom_s = g.weighted_mean(ls, &ws)?;
        let dt = model.forward_domain(g, m, ft, 1.0)?;
        let lt = g.bce_rows(dt, &vec![0.0; wt.len()])?;
        let dom_t = g.weighted_mean(lt, &wt)?;
        let a = weighted(g, dom_s, lambda)?;
        src = g.add(src, a)?;
        let b = weighted(g, dom_t, lambda)?;
        tgt = add_opt(g, tgt, Some(b))?;
        domain = Some((dom_s, dom_t));
    }

    let (jigsaw_t, jig) = target_jigsaw(g, model, m, batch, config)?;
    let total = add_opt(g, Some(src), tgt)?;
    let total = add_opt(g, total, jig)?.expect("source term is always present");
    Ok(LossTerms {
        total,
        cls,
        jigsaw_s: None,
        jigsaw_t,
        entropy,
        domain,
    })
}

/// Exponentially smoothed validation accuracy and the best epoch so far.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionState {
    pub smoothed_accuracy: f64,
    pub best_smoothed: f64,
    /// 1-based; 0 before any update.
    pub best_epoch: usize,
    pub epochs_seen: usize,
}

impl Default for SelectionState {
    fn default() -> Self {
        SelectionState {
            smoothed_accuracy: 0.0,
            best_smoothed: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_seen: 0,
        }
    }
}

/// `A ← w A_prev + (1 − w) A`, with the first epoch taken as is. Ties keep
/// the earlier best epoch.
pub fn update_selection(state: &SelectionState, accuracy: f64, w: f64) -> SelectionState {
    let prev = state.smoothed_accuracy;
    let smoothed = if state.epochs_seen == 0 || accuracy == prev {
        // the blend of equal values is that value; skip the rounding
        accuracy
    } else {
        (w * prev + (1.0 - w) * accuracy).clamp(prev.min(accuracy), prev.max(accuracy))
    };
    let epoch = state.epochs_seen + 1;
    let (best_smoothed, best_epoch) = if smoothed > state.best_smoothed {
        (smoothed, epoch)
    } else {
        (state.best_smoothed, state.best_epoch)
    };
    SelectionState {
        smoothed_accuracy: smoothed,
        best_smoothed,
        best_epoch,
        epochs_seen: epoch,
    }
}

/// Losses of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lambda: f64,
    pub losses: LossValues,
}

/// One row of the metrics history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_cls: f64,
    pub loss_jigsaw_t: f64,
    pub loss_entropy: f64,
    pub loss_domain: f64,
    /// Adversarial weight at the last step of the epoch.
    pub lambda: f64,
    pub val_acc: f64,
    pub smoothed_val_acc: f64,
    /// Diagnostic only; never used for selection.
    pub target_acc_oracle: Option<f64>,
}

pub trait TrainCallbacks {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_epoch(&mut self, _metrics: &EpochMetrics) {}
}

impl TrainCallbacks for () {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: SspdaModel,
    /// Parameters at the epoch with the highest smoothed validation accuracy.
    pub best_model: SspdaModel,
    pub selection: SelectionState,
    pub history: Vec<EpochMetrics>,
    /// Entry 0 is estimated before the first epoch, entry `e` after epoch
    /// `e`. Empty unless class weights are in use.
    pub gamma_history: Vec<Vec<f64>>,
}

/// Independent random streams derived from the run seed. Keeping them apart
/// means switching a loss term on or off never changes the batches.
struct Streams {
    split: ChaCha8Rng,
    batches: ChaCha8Rng,
    shuffle: ChaCha8Rng,
    flip: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k + 1);
            r
        };
        Streams {
            split: stream(0),
            batches: stream(1),
            shuffle: stream(2),
            flip: stream(3),
        }
    }
}

fn hflip(image: &Tensor) -> Tensor {
    let s = image.shape();
    let w = s[2];
    let mut out = image.clone();
    for (dst, src) in out.data_mut().chunks_mut(w).zip(image.data().chunks(w)) {
        for x in 0..w {
            dst[x] = src[w - 1 - x];
        }
    }
    out
}

/// Accuracy of single-crop predictions against visible labels.
fn accuracy(model: &SspdaModel, samples: &[&Sample], labels: &[usize]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let images: Vec<&Tensor> = samples.iter().map(|s| s.image()).collect();
    let p = model.predict_proba(&images)?;
    let c = p.shape()[1];
    let correct = p
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Target accuracy from the ground-truth labels. This is the only place the
/// training loop looks at target labels; the value is reported and never fed
/// back into training or selection.
pub fn oracle_target_accuracy(model: &SspdaModel, target: &[Sample]) -> Result<Option<f64>> {
    let labels: Option<Vec<usize>> = target.iter().map(Sample::oracle_label).collect();
    match labels {
        Some(l) if !l.is_empty() => {
            let refs: Vec<&Sample> = target.iter().collect();
            accuracy(model, &refs, &l).map(Some)
        }
        _ => Ok(None),
    }
}

struct Assembler<'a> {
    source: &'a [&'a Sample],
    source_labels: &'a [usize],
    target: &'a [Sample],
    perms: &'a PermutationSet,
    config: &'a TrainConfig,
}

impl Assembler<'_> {
    fn build(&self, idx: &BatchIndices, streams: &mut Streams) -> Result<StepBatch> {
        let mut src: Vec<Tensor> = idx.source.iter().map(|&i| self.source[i].image().clone()).collect();
        if self.config.hflip {
            for img in &mut src {
                if streams.flip.gen::<bool>() {
                    *img = hflip(img);
                }
            }
        }
        let labels: Vec<usize> = idx.source.iter().map(|&i| self.source_labels[i]).collect();
        let shuffle = |imgs: &[&Tensor], rng: &mut ChaCha8Rng| -> Result<LabeledImages> {
            let mut out = Vec::with_capacity(imgs.len());
            let mut perms = Vec::with_capacity(imgs.len());
            for img in imgs {
                let (t, p) = maybe_shuffle(img, self.perms, self.config.beta, rng)?;
                out.push(t);
                perms.push(p);
            }
            let refs: Vec<&Tensor> = out.iter().collect();
            Ok(LabeledImages {
                images: Tensor::stack(&refs)?,
                labels: perms,
            })
        };
        let src_refs: Vec<&Tensor> = src.iter().collect();
        let shuffled_source = if self.config.alpha_s > 0.0 {
            Some(shuffle(&src_refs, &mut streams.shuffle)?)
        } else {
            None
        };
        let tgt_refs: Vec<&Tensor> = idx.target.iter().map(|&i| self.target[i].image()).collect();
        let shuffled_target = shuffle(&tgt_refs, &mut streams.shuffle)?;
        Ok(StepBatch {
            source: LabeledImages {
                images: Tensor::stack(&src_refs)?,
                labels,
            },
            target: Tensor::stack(&tgt_refs)?,
            shuffled_source,
            shuffled_target,
        })
    }
}

fn divergence(epoch: usize, step: usize, v: &LossValues) -> Option<Error> {
    let terms = [
        ("loss_cls", v.cls),
        ("loss_jigsaw_s", v.jigsaw_s),
        ("loss_jigsaw_t", v.jigsaw_t),
        ("loss_entropy", v.entropy),
        ("loss_domain", v.domain),
        ("loss_total", v.total),
    ];
    terms
        .iter()
        .find(|(_, x)| !x.is_finite())
        .map(|&(term, value)| Error::Divergence {
            epoch,
            step,
            term,
            value,
        })
}

/// Trains `model` on labeled `source` and unlabeled `target` samples.
///
/// A stratified share of the source is held out for validation. Each epoch
/// walks mixed batches, applies one SGD step per batch, then records
/// validation accuracy, smoothed selection state and (diagnostically) the
/// oracle target accuracy. Class weights are re-estimated on the full target
/// set after every epoch.
pub fn train(
    mut model: SspdaModel,
    source: &[Sample],
    target: &[Sample],
    config: &TrainConfig,
    callbacks: &mut dyn TrainCallbacks,
) -> Result<TrainOutcome> {
    config.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Parameter("training needs source and target samples".into()));
    }
    let labels: Vec<usize> = source
        .iter()
        .map(|s| {
            s.label()
                .ok_or_else(|| Error::Contract("every source sample needs a visible label".into()))
        })
        .collect::<Result<_>>()?;
    let classes = model.spec().num_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index(format!("source label {bad} outside [0, {classes})")));
    }
    let perms = select_permutations(config.grid_side, config.num_perms, config.seed)?;
    if model.spec().num_perms != perms.len() {
        return Err(Error::Dimension(format!(
            "puzzle head has {} outputs for {} permutations",
            model.spec().num_perms,
            perms.len()
        )));
    }

    let mut streams = Streams::new(config.seed);
    let (train_idx, val_idx) = stratified_split(&labels, config.val_fraction, &mut streams.split)?;
    let train_src: Vec<&Sample> = train_idx.iter().map(|&i| &source[i]).collect();
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let val_src: Vec<&Sample> = val_idx.iter().map(|&i| &source[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let target_images: Vec<&Tensor> = target.iter().map(Sample::image).collect();

    let assembler = Assembler {
        source: &train_src,
        source_labels: &train_labels,
        target,
        perms: &perms,
        config,
    };
    let steps_per_epoch = train_src
        .len()
        .div_ceil(config.batch_source)
        .max(target.len().div_ceil(config.batch_target));
    let schedule = match config.lambda_cadence {
        LambdaCadence::Step => LambdaSchedule::new(config.lambda_max, config.epochs * steps_per_epoch)?,
        LambdaCadence::Epoch => LambdaSchedule::new(config.lambda_max, config.epochs)?,
    };
    let mut sgd = SgdState::new(config.learning_rate, config.momentum, config.weight_decay)?;
    let weighted_objective = config.uses_weighted_objective();

    let uniform = GammaWeights::uniform(classes);
    let mut estimate = uniform.clone();
    let mut gamma_history = Vec::new();
    if config.use_gamma {
        estimate = estimate_gamma(&model, &target_images)?;
        gamma_history.push(estimate.values().to_vec());
    }

    let mut selection = SelectionState::default();
    let mut best_model = model.clone();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = make_batches(
            train_src.len(),
            target.len(),
            config.batch_source,
            config.batch_target,
            &mut streams.batches,
        )?;
        let gamma = if config.use_gamma && epoch > config.gamma_warmup_epochs {
            &estimate
        } else {
            &uniform
        };
        let mut sums = LossValues::default();
        let mut lambda = 0.0;
        for (s, idx) in batches.iter().enumerate() {
            let batch = assembler.build(idx, &mut streams)?;
            let global = (epoch - 1) * steps_per_epoch + s;
            lambda = match config.lambda_cadence {
                LambdaCadence::Step => lambda_at(&schedule, global)?,
                LambdaCadence::Epoch => lambda_at(&schedule, epoch - 1)?,
            };
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let terms = if weighted_objective {
                loss_eq2(&mut g, &model, &bound, &batch, gamma, lambda, config)?
            } else {
                loss_eq1(&mut g, &model, &bound, &batch, config)?
            };
            let values = terms.values(&g);
            if let Some(err) = divergence(epoch, s + 1, &values) {
                return Err(err);
            }
            g.backward(terms.total)?;
            let grads: Vec<Tensor> = bound.vars().iter().map(|&v| g.grad_tensor(v)).collect();
            sgd.step(model.params_mut(), &grads)?;
            callbacks.on_step(&StepRecord {
                epoch,
                step: s + 1,
                lambda,
                losses: values,
            });
            sums.total += values.total;
            sums.cls += values.cls;
            sums.jigsaw_t += values.jigsaw_t;
            sums.entropy += values.entropy;
            sums.domain += values.domain;
        }
        let n = batches.len() as f64;

        let val_acc = accuracy(&model, &val_src, &val_labels)?;
        selection = update_selection(&selection, val_acc, config.selection_w);
        if selection.best_epoch == epoch {
            best_model = model.clone();
        }
        let target_acc_oracle = oracle_target_accuracy(&model, target)?;
        if config.use_gamma {
            estimate = estimate_gamma(&model, &target_images)?;
            gamma_history.push(estimate.values().to_vec());
        }
        let metrics = EpochMetrics {
            epoch,
            loss_total: sums.total / n,
            loss_cls: sums.cls / n,
            loss_jigsaw_t: sums.jigsaw_t / n,
            loss_entropy: sums.entropy / n,
            loss_domain: sums.domain / n,
            lambda,
            val_acc,
            smoothed_val_acc: selection.smoothed_accuracy,
            target_acc_oracle,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val {:.3} smoothed {:.3}",
            metrics.loss_total,
            val_acc,
            selection.smoothed_accuracy
        );
        callbacks.on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        selection,
        history,
        gamma_history,
    })
}
