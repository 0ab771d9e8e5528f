#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspda_core::autodiff::{Graph, Var};
use sspda_core::jigsaw::{maybe_shuffle, select_permutations};
use sspda_core::network::{build_model, BackboneConfig, ModelSpec, SspdaModel};
use sspda_core::train::{LabeledImages, StepBatch};
use sspda_core::Tensor;

pub const SIDE: usize = 12;

pub fn tiny_spec(num_classes: usize, num_perms: usize) -> ModelSpec {
    ModelSpec {
        channels: 3,
        image_side: SIDE,
        grid_side: 3,
        num_classes,
        num_perms,
        backbone: BackboneConfig {
            conv1_channels: 3,
            conv1_kernel: 3,
            conv1_stride: 1,
            pool1: 2,
            conv2_kernel: 2,
            conv2_stride: 1,
            pool2: 2,
            feature_dim: 5,
            domain_hidden: Some(4),
        },
    }
}

pub fn tiny_model(num_classes: usize, num_perms: usize, seed: u64) -> SspdaModel {
    let mut m = build_model(&tiny_spec(num_classes, num_perms), seed).unwrap();
    // nonzero biases so every path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for (name, p) in m.names().to_vec().iter().zip(m.params_mut()) {
        if name.ends_with(".bias") {
            for v in p.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    m
}

pub fn random_images(n: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    (0..n)
        .map(|_| {
            Tensor::new(
                vec![3, SIDE, SIDE],
                (0..3 * SIDE * SIDE).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect()
}

fn stack(imgs: &[Tensor]) -> Tensor {
    let refs: Vec<&Tensor> = imgs.iter().collect();
    Tensor::stack(&refs).unwrap()
}

/// Random batch with `ns` source and `nt` target images; shuffled sets come
/// from the real permutation machinery with `beta`.
pub fn random_batch(
    ns: usize,
    nt: usize,
    num_classes: usize,
    num_perms: usize,
    beta: f64,
    with_source_puzzle: bool,
    rng: &mut ChaCha8Rng,
) -> StepBatch {
    let perms = select_permutations(3, num_perms, 0).unwrap();
    let src = random_images(ns, rng);
    let tgt = random_images(nt, rng);
    let mut shuffle = |imgs: &[Tensor]| {
        let mut out = Vec::new();
        let mut labels = Vec::new();
        for img in imgs {
            let (t, p) = maybe_shuffle(img, &perms, beta, rng).unwrap();
            out.push(t);
            labels.push(p);
        }
        LabeledImages {
            images: stack(&out),
            labels,
        }
    };
    let shuffled_target = shuffle(&tgt);
    let shuffled_source = with_source_puzzle.then(|| shuffle(&src));
    StepBatch {
        source: LabeledImages {
            images: stack(&src),
            labels: (0..ns).map(|_| rng.gen_range(0..num_classes)).collect(),
        },
        target: stack(&tgt),
        shuffled_source,
        shuffled_target,
    }
}

/// Largest relative deviation `|a - n| / max(|a|, |n|, 1e-3)` between the
/// analytic gradient and central differences of `numeric_objective`, over
/// every parameter tensor plus `coords` random entries.
/// `numeric_objective(model, index_of_param)` returns the scalar whose
/// derivative the analytic gradient of that parameter should equal.
///
/// ReLU and max-pool make the loss piecewise smooth. When the one-sided
/// differences disagree, a kink lies within the step, so the step shrinks
/// (down to 1e-7) until both sides agree.
pub fn fd_check<F, G>(model: &SspdaModel, analytic: G, numeric_objective: F, coords: usize, rng: &mut ChaCha8Rng) -> f64
where
    G: Fn(&SspdaModel) -> Vec<Tensor>,
    F: Fn(&SspdaModel, usize) -> f64,
{
    let grads = analytic(model);
    let mut worst = 0.0f64;
    let n_params = model.params().len();
    let picks: Vec<usize> = (0..n_params)
        .chain((0..coords).map(|_| rng.gen_range(0..n_params)))
        .collect();
    for pi in picks {
        let i = rng.gen_range(0..model.params()[pi].len());
        let at = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[pi].data_mut()[i] += delta;
            numeric_objective(&m, pi)
        };
        let centre = at(0.0);
        let mut numeric = 0.0;
        for h in [1e-5, 1e-6, 1e-7] {
            let (up, down) = (at(h), at(-h));
            numeric = (up - down) / (2.0 * h);
            let (fwd, bwd) = ((up - centre) / h, (centre - down) / h);
            if (fwd - bwd).abs() <= 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
                break;
            }
        }
        let a = grads[pi].data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}

pub fn grads_of(g: &Graph, vars: &[Var]) -> Vec<Tensor> {
    vars.iter().map(|&v| g.grad_tensor(v)).collect()
}
