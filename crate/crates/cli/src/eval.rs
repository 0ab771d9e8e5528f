//! Target evaluation with optional multi-crop averaging.

use rand::Rng;
use sspda_core::data::{resize_nearest, Sample};
use sspda_core::network::SspdaModel;
use sspda_core::train::argmax;
use sspda_core::{Error, Tensor};

/// Fraction of the side length kept by each random crop.
pub const CROP_FRACTION: f64 = 0.9;

fn crop(image: &Tensor, top: usize, left: usize, side: usize) -> Tensor {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = image.data();
    let mut out = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in top..top + side {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&d[row + left..row + left + side]);
        }
    }
    Tensor::new(vec![c, side, side], out).expect("crop shape")
}

/// Random square crop of 90% side length, resized back to the input size.
pub fn random_crop<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> sspda_core::Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::Dimension(format!("expected a square [c,s,s] image, got {s:?}")));
    }
    let full = s[1];
    let side = ((full as f64 * CROP_FRACTION).round() as usize).clamp(1, full);
    let top = rng.gen_range(0..=full - side);
    let left = rng.gen_range(0..=full - side);
    resize_nearest(&crop(image, top, left, side), full)
}

/// Target accuracy against oracle labels. `crops == 1` is a single
/// full-image forward; otherwise softmax outputs of `crops` random crops are
/// averaged before the argmax.
pub fn evaluate<R: Rng + ?Sized>(
    model: &SspdaModel,
    samples: &[Sample],
    crops: usize,
    rng: &mut R,
) -> sspda_core::Result<f64> {
    if crops == 0 {
        return Err(Error::Parameter("crops must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Parameter("cannot evaluate on an empty dataset".into()));
    }
    let labels: Vec<usize> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.oracle_label()
                .ok_or_else(|| Error::Contract(format!("sample {i} is unlabeled; evaluation needs labels")))
        })
        .collect::<sspda_core::Result<_>>()?;

    let classes = model.spec().num_classes;
    let mut mean = vec![0.0; samples.len() * classes];
    if crops == 1 {
        let imgs: Vec<&Tensor> = samples.iter().map(Sample::image).collect();
        mean = model.predict_proba(&imgs)?.into_data();
    } else {
        for _ in 0..crops {
            let cropped: Vec<Tensor> = samples
                .iter()
                .map(|s| random_crop(s.image(), rng))
                .collect::<sspda_core::Result<_>>()?;
            let refs: Vec<&Tensor> = cropped.iter().collect();
            let p = model.predict_proba(&refs)?;
            for (m, v) in mean.iter_mut().zip(p.data()) {
                *m += v / crops as f64;
            }
        }
    }
    let correct = mean
        .chunks(classes)
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
