mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspda_core::autodiff::Graph;
use sspda_core::network::SspdaModel;
use sspda_core::train::{loss_eq1, loss_eq2, GammaWeights, StepBatch, TrainConfig};
use sspda_core::{Error, Tensor};

const C: usize = 4;
const P: usize = 6;

/// Head outputs of a fresh forward pass, as plain row vectors.
struct Outputs {
    class_s: Vec<Vec<f64>>,
    class_t: Vec<Vec<f64>>,
    puzzle_t: Vec<Vec<f64>>,
    puzzle_s: Option<Vec<Vec<f64>>>,
    domain_s: Vec<f64>,
    domain_t: Vec<f64>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

fn outputs(model: &SspdaModel, batch: &StepBatch) -> Outputs {
    let mut g = Graph::new();
    let m = model.bind_frozen(&mut g);
    let mut heads = |x: &Tensor| {
        let x = g.constant(x.clone());
        let f = model.forward_features(&mut g, &m, x).unwrap();
        let zc = model.forward_class(&mut g, &m, f).unwrap();
        let zp = model.forward_puzzle(&mut g, &m, f).unwrap();
        let d = model.forward_domain(&mut g, &m, f, 1.0).unwrap();
        (rows(g.value(zc)), rows(g.value(zp)), g.value(d).data().to_vec())
    };
    let (class_s, _, domain_s) = heads(&batch.source.images);
    let (class_t, _, domain_t) = heads(&batch.target);
    let (_, puzzle_t, _) = heads(&batch.shuffled_target.images);
    let puzzle_s = batch.shuffled_source.as_ref().map(|s| heads(&s.images).1);
    Outputs {
        class_s,
        class_t,
        puzzle_t,
        puzzle_s,
        domain_s,
        domain_t,
    }
}

fn ce(row: &[f64], label: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln() - row[label]
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn mean_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(r, &l)| ce(r, l)).sum::<f64>() / labels.len() as f64
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn eq1_value(model: &SspdaModel, batch: &StepBatch, cfg: &TrainConfig) -> f64 {
    let mut g = Graph::new();
    let m = model.bind(&mut g);
    let terms = loss_eq1(&mut g, model, &m, batch, cfg).unwrap();
    g.value(terms.total).item()
}

fn eq2_value(model: &SspdaModel, batch: &StepBatch, gamma: &GammaWeights, lambda: f64, cfg: &TrainConfig) -> f64 {
    let mut g = Graph::new();
    let m = model.bind(&mut g);
    let terms = loss_eq2(&mut g, model, &m, batch, gamma, lambda, cfg).unwrap();
    g.value(terms.total).item()
}

#[test]
fn eq1_with_zero_weights_is_source_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = tiny_model(C, P, 1);
    let batch = random_batch(5, 3, C, P, 0.7, false, &mut rng);
    let cfg = TrainConfig {
        alpha_s: 0.0,
        alpha_t: 0.0,
        eta: 0.0,
        ..Default::default()
    };
    let mut g = Graph::new();
    let m = model.bind(&mut g);
    let t = loss_eq1(&mut g, &model, &m, &batch, &cfg).unwrap();
    assert_eq!(g.value(t.total).item(), g.value(t.cls).item());
    assert!(t.entropy.is_none() && t.jigsaw_t.is_none() && t.jigsaw_s.is_none());
    let o = outputs(&model, &batch);
    let oracle = mean_ce(&o.class_s, &batch.source.labels);
    assert!((g.value(t.total).item() - oracle).abs() < 1e-12);
}

#[test]
fn eq1_is_zero_for_confident_correct_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = tiny_model(C, P, 2);
    // constant, saturated prediction of class 2
    let names = model.names().to_vec();
    for (name, p) in names.iter().zip(model.params_mut()) {
        if name == "object_head.weight" {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if name == "object_head.bias" {
            p.data_mut().copy_from_slice(&[0.0, 0.0, 1000.0, 0.0]);
        }
    }
    let mut batch = random_batch(4, 4, C, P, 0.7, false, &mut rng);
    batch.source.labels = vec![2; 4];
    let cfg = TrainConfig {
        alpha_t: 0.0,
        ..Default::default()
    };
    assert_eq!(eq1_value(&model, &batch, &cfg), 0.0);
}

#[test]
fn eq1_matches_term_by_term_recomposition() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + seed);
        let model = tiny_model(C, P, seed);
        let batch = random_batch(5, 4, C, P, 0.5, true, &mut rng);
        let cfg = TrainConfig {
            alpha_s: 0.7,
            alpha_t: 1.3,
            eta: 0.2,
            ..Default::default()
        };
        let o = outputs(&model, &batch);
        let cls = mean_ce(&o.class_s, &batch.source.labels);
        let js = mean_ce(
            o.puzzle_s.as_ref().unwrap(),
            &batch.shuffled_source.as_ref().unwrap().labels,
        );
        let jt = mean_ce(&o.puzzle_t, &batch.shuffled_target.labels);
        let h = o.class_t.iter().map(|r| entropy(&softmax(r))).sum::<f64>() / o.class_t.len() as f64;
        let oracle = cls + 0.7 * js + 0.2 * h + 1.3 * jt;
        let got = eq1_value(&model, &batch, &cfg);
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }
}

#[test]
fn eq2_matches_term_by_term_recomposition() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
        let model = tiny_model(C, P, seed);
        let batch = random_batch(6, 5, C, P, 0.7, false, &mut rng);
        let gamma = GammaWeights::new(
            (0..C)
                .map(|c| if c == 1 { 1.0 } else { rng.gen_range(0.0..1.0) })
                .collect(),
        )
        .unwrap();
        let cfg = TrainConfig {
            eta: 0.2,
            alpha_t: 1.0,
            lambda_max: 0.1,
            ..Default::default()
        };
        let lambda = 0.05;
        let o = outputs(&model, &batch);
        let gs = gamma.values();
        let src = o
            .class_s
            .iter()
            .zip(&batch.source.labels)
            .zip(&o.domain_s)
            .map(|((r, &y), &d)| gs[y] * (ce(r, y) + lambda * -d.ln()))
            .sum::<f64>()
            / batch.source.labels.len() as f64;
        let tgt = o
            .class_t
            .iter()
            .zip(&o.domain_t)
            .map(|(r, &d)| {
                let p = softmax(r);
                gs[argmax(&p)] * (0.2 * entropy(&p) + lambda * -(1.0 - d).ln())
            })
            .sum::<f64>()
            / o.class_t.len() as f64;
        let jt = mean_ce(&o.puzzle_t, &batch.shuffled_target.labels);
        let oracle = src + tgt + jt;
        let got = eq2_value(&model, &batch, &gamma, lambda, &cfg);
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }
}

#[test]
fn eq2_without_weights_or_adversary_is_eq1_bit_for_bit() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = tiny_model(C, P, seed);
        let batch = random_batch(rng.gen_range(1..6), rng.gen_range(1..6), C, P, 0.7, false, &mut rng);
        let cfg = TrainConfig {
            alpha_s: 0.0,
            alpha_t: rng.gen_range(0.0..2.0),
            eta: rng.gen_range(0.0..1.0),
            lambda_max: if seed % 2 == 0 { 0.0 } else { 0.1 },
            ..Default::default()
        };
        let a = eq1_value(&model, &batch, &cfg);
        let b = eq2_value(&model, &batch, &GammaWeights::uniform(C), 0.0, &cfg);
        assert_eq!(a.to_bits(), b.to_bits(), "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn zero_class_weight_removes_that_class_from_object_head_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = tiny_model(C, P, 7);
    let gamma = GammaWeights::new(vec![0.0, 1.0, 0.5, 1.0]).unwrap();
    let cfg = TrainConfig {
        eta: 0.0,
        alpha_t: 0.0,
        ..Default::default()
    };
    let object_grad = |batch: &StepBatch| {
        let mut g = Graph::new();
        let m = model.bind(&mut g);
        let t = loss_eq2(&mut g, &model, &m, batch, &gamma, 0.0, &cfg).unwrap();
        g.backward(t.total).unwrap();
        let names = model.names();
        let vars = m.vars();
        names
            .iter()
            .zip(vars)
            .filter(|(n, _)| n.starts_with("object_head"))
            .flat_map(|(_, &v)| g.grad_tensor(v).into_data())
            .collect::<Vec<f64>>()
    };
    let mut all_zero = random_batch(4, 2, C, P, 0.7, false, &mut rng);
    all_zero.source.labels = vec![0; 4];
    assert!(object_grad(&all_zero).iter().all(|&v| v == 0.0));

    // replacing the class-0 images must not change the gradient
    let mut mixed = random_batch(4, 2, C, P, 0.7, false, &mut rng);
    mixed.source.labels = vec![0, 1, 0, 2];
    let before = object_grad(&mixed);
    let fresh = random_images(4, &mut rng);
    let plane = 3 * SIDE * SIDE;
    let data = mixed.source.images.data_mut();
    for i in [0, 2] {
        data[i * plane..(i + 1) * plane].copy_from_slice(fresh[i].data());
    }
    let after = object_grad(&mixed);
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn out_of_range_labels_are_index_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = tiny_model(C, P, 3);
    let mut batch = random_batch(2, 2, C, P, 0.7, false, &mut rng);
    batch.source.labels[1] = C;
    let cfg = TrainConfig::default();
    let mut g = Graph::new();
    let m = model.bind(&mut g);
    assert!(matches!(
        loss_eq1(&mut g, &model, &m, &batch, &cfg),
        Err(Error::Index(_))
    ));
    let mut g = Graph::new();
    let m = model.bind(&mut g);
    let r = loss_eq2(&mut g, &model, &m, &batch, &GammaWeights::uniform(C), 0.0, &cfg);
    assert!(matches!(r, Err(Error::Index(_))));
}

#[test]
fn eq1_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let model = tiny_model(C, P, 41);
    let batch = random_batch(4, 4, C, P, 0.5, true, &mut rng);
    let cfg = TrainConfig {
        alpha_s: 0.5,
        alpha_t: 1.0,
        eta: 0.2,
        ..Default::default()
    };
    let analytic = |m: &SspdaModel| {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let t = loss_eq1(&mut g, m, &b, &batch, &cfg).unwrap();
        g.backward(t.total).unwrap();
        grads_of(&g, b.vars())
    };
    let err = fd_check(&model, analytic, |m, _| eq1_value(m, &batch, &cfg), 60, &mut rng);
    assert!(err < 1e-3, "worst relative error {err}");
}

#[test]
fn eq2_gradients_follow_the_min_max_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let model = tiny_model(C, P, 42);
    let batch = random_batch(4, 4, C, P, 0.5, false, &mut rng);
    let gamma = GammaWeights::new(vec![1.0, 0.3, 0.8, 0.5]).unwrap();
    let cfg = TrainConfig {
        eta: 0.2,
        lambda_max: 0.1,
        ..Default::default()
    };
    let lambda = 0.07;
    let analytic = |m: &SspdaModel| {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let t = loss_eq2(&mut g, m, &b, &batch, &gamma, lambda, &cfg).unwrap();
        g.backward(t.total).unwrap();
        grads_of(&g, b.vars())
    };
    // the feature extractor ascends the discriminator terms, everything else
    // descends the objective as written
    let backbone: Vec<bool> = model.names().iter().map(|n| n.starts_with("backbone")).collect();
    let numeric = |m: &SspdaModel, pi: usize| {
        let mut g = Graph::new();
        let b = m.bind_frozen(&mut g);
        let t = loss_eq2(&mut g, m, &b, &batch, &gamma, lambda, &cfg).unwrap();
        let (ds, dt) = t.domain.unwrap();
        let total = g.value(t.total).item();
        if backbone[pi] {
            total - 2.0 * lambda * (g.value(ds).item() + g.value(dt).item())
        } else {
            total
        }
    };
    let err = fd_check(&model, analytic, numeric, 60, &mut rng);
    assert!(err < 1e-3, "worst relative error {err}");
}

#[test]
fn reversal_flips_only_the_feature_gradient() {
    // f = a·x, d = σ(b·R_λ(f)), loss = -ln d
    let (a, b, x): (f64, f64, f64) = (0.8, -0.6, 2.0);
    let s = 1.0 / (1.0 + (-(a * b * x)).exp());
    let plain_da = -(1.0 - s) * b * x;
    let plain_db = -(1.0 - s) * a * x;
    for lambda in [0.0, 0.1, 0.5, 1.0, 2.0] {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![1, 1], vec![x]).unwrap());
        let av = g.param(Tensor::new(vec![1, 1], vec![a]).unwrap());
        let bv = g.param(Tensor::new(vec![1, 1], vec![b]).unwrap());
        let zero = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
        let f = g.dense(xv, av, zero).unwrap();
        let r = g.gradient_reversal(f, lambda).unwrap();
        let z = g.dense(r, bv, zero).unwrap();
        let d = g.sigmoid(z).unwrap();
        let l = g.binary_cross_entropy(d, &[1.0]).unwrap();
        g.backward(l).unwrap();
        let da = g.grad_tensor(av).item();
        let db = g.grad_tensor(bv).item();
        assert!((db - plain_db).abs() < 1e-14, "λ={lambda}");
        assert!((da + lambda * plain_da).abs() < 1e-14, "λ={lambda}");
    }
}
