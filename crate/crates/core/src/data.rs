//! Synthetic partial-domain-shift datasets, PPM/PGM image I/O, directory and
//! manifest loaders, and mixed source/target batch scheduling.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Parameter(format!("unknown domain `{other}`"))),
        }
    }
}

/// One image with its class and domain.
///
/// Target labels are kept for oracle evaluation only: [`Sample::label`]
/// hides them, and the sole way to read one is [`Sample::oracle_label`].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    image: Tensor,
    label: Option<usize>,
    domain: Domain,
}

impl Sample {
    pub fn new(image: Tensor, label: Option<usize>, domain: Domain) -> Result<Self> {
        if image.ndim() != 3 {
            return Err(Error::Dimension(format!(
                "sample image must be c×h×w, got {:?}",
                image.shape()
            )));
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("pixel values must lie in [0, 1]".into()));
        }
        Ok(Sample { image, label, domain })
    }

    pub fn image(&self) -> &Tensor {
        &self.image
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Training-visible label: always `None` for target samples.
    pub fn label(&self) -> Option<usize> {
        match self.domain {
            Domain::Source => self.label,
            Domain::Target => None,
        }
    }

    /// Ground truth regardless of domain, for diagnostics and evaluation.
    pub fn oracle_label(&self) -> Option<usize> {
        self.label
    }
}

/// Parameters of the synthetic shape benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// The target domain keeps class ids `0..target_classes`.
    pub target_classes: usize,
    pub image_side: usize,
    pub grid_side: usize,
    pub samples_per_class: usize,
    /// Blend weight of the target channel permutation, in `[0, 1]`.
    pub color_shift: f64,
    /// Amplitude of the target background stripes.
    pub texture: f64,
    /// Standard deviation of additive target noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 6,
            target_classes: 3,
            image_side: 48,
            grid_side: 3,
            samples_per_class: 200,
            color_shift: 0.3,
            texture: 0.25,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.target_classes == 0 {
            return Err(Error::Parameter("class counts must be positive".into()));
        }
        if self.target_classes > self.num_classes {
            return Err(Error::Parameter(format!(
                "target classes {} exceed source classes {}",
                self.target_classes, self.num_classes
            )));
        }
        if self.grid_side == 0 || self.image_side == 0 || !self.image_side.is_multiple_of(self.grid_side) {
            return Err(Error::Parameter(format!(
                "image side {} is not divisible by grid side {}",
                self.image_side, self.grid_side
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Parameter("samples per class must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.color_shift) {
            return Err(Error::Parameter("color shift must lie in [0, 1]".into()));
        }
        if !(self.texture >= 0.0 && self.noise >= 0.0) {
            return Err(Error::Parameter("texture and noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Random placement of one glyph, in pixel units.
struct Placement {
    cx: f64,
    cy: f64,
    radius: f64,
    angle: f64,
}

/// Coverage of the glyph for `class` at normalized coordinates, in `[0, 1]`.
fn glyph(class: usize, u: f64, v: f64) -> f64 {
    let variant = class / 6;
    // later cycles differ by orientation and aspect
    let (u, v) = if variant > 0 {
        let a = variant as f64 * PI / 4.0;
        let (s, c) = a.sin_cos();
        ((c * u + s * v) * (1.0 + 0.3 * variant as f64), -s * u + c * v)
    } else {
        (u, v)
    };
    let inside = |x: bool| if x { 1.0 } else { 0.0 };
    let r = (u * u + v * v).sqrt();
    match class % 6 {
        0 => inside(u.abs() < 0.95 && v.abs() < 0.28),
        1 => inside(r < 0.75),
        2 => inside(r > 0.55 && r < 0.9),
        3 => inside((u.abs() < 0.22 && v.abs() < 0.95) || (v.abs() < 0.22 && u.abs() < 0.95)),
        4 => {
            if u.abs() < 0.9 && v.abs() < 0.9 {
                let cell = |x: f64| ((x + 0.9) / 0.6).floor() as i64;
                inside((cell(u) + cell(v)) % 2 == 0)
            } else {
                0.0
            }
        }
        _ => {
            if u.abs() < 0.85 && v.abs() < 0.85 {
                0.15 + 0.85 * (u + 0.85) / 1.7
            } else {
                0.0
            }
        }
    }
}

/// Renders one source-domain image: a warm glyph on a dark cool background,
/// 2× supersampled along each axis.
fn render(class: usize, side: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = side as f64;
    let p = Placement {
        cx: s * (0.5 + rng.gen_range(-0.12..0.12)),
        cy: s * (0.5 + rng.gen_range(-0.12..0.12)),
        radius: s * rng.gen_range(0.26..0.38),
        angle: rng.gen_range(-0.2..0.2),
    };
    let bg = [
        rng.gen_range(0.05..0.2),
        rng.gen_range(0.15..0.3),
        rng.gen_range(0.35..0.55),
    ];
    let fg = [
        rng.gen_range(0.8..0.95),
        rng.gen_range(0.45..0.65),
        rng.gen_range(0.1..0.25),
    ];
    let (sin, cos) = p.angle.sin_cos();
    let mut out = vec![0.0; CHANNELS * side * side];
    for y in 0..side {
        for x in 0..side {
            let mut m = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let dx = (x as f64 + ox - p.cx) / p.radius;
                let dy = (y as f64 + oy - p.cy) / p.radius;
                m += glyph(class, cos * dx + sin * dy, -sin * dx + cos * dy);
            }
            m /= 4.0;
            for c in 0..CHANNELS {
                out[c * side * side + y * side + x] = bg[c] * (1.0 - m) + fg[c] * m;
            }
        }
    }
    out
}

/// The fixed source → target appearance transform.
struct Shift {
    color_shift: f64,
    texture: f64,
    noise: Option<Normal<f64>>,
}

impl Shift {
    fn apply(&self, img: &mut [f64], side: usize, rng: &mut ChaCha8Rng) {
        let plane = side * side;
        let original = img.to_vec();
        // rgb -> brg
        for c in 0..CHANNELS {
            let from = (c + CHANNELS - 1) % CHANNELS;
            for i in 0..plane {
                img[c * plane + i] =
                    (1.0 - self.color_shift) * original[c * plane + i] + self.color_shift * original[from * plane + i];
            }
        }
        let phase = rng.gen_range(0.0..2.0 * PI);
        for y in 0..side {
            for x in 0..side {
                let stripe = self.texture * (((x + y) as f64) * 0.9 + phase).sin();
                for c in 0..CHANNELS {
                    let v = &mut img[c * plane + y * side + x];
                    *v += stripe;
                    if let Some(n) = &self.noise {
                        *v += n.sample(rng);
                    }
                }
            }
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Source samples of every class and target samples of classes
/// `0..target_classes`, class-major, deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.image_side;
    let shape = vec![CHANNELS, side, side];
    let shift = Shift {
        color_shift: spec.color_shift,
        texture: spec.texture,
        noise: if spec.noise > 0.0 {
            Some(Normal::new(0.0, spec.noise).map_err(|e| Error::Parameter(e.to_string()))?)
        } else {
            None
        },
    };
    let mut source = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            let img = Tensor::new(shape.clone(), render(class, side, &mut rng))?;
            source.push(Sample::new(img, Some(class), Domain::Source)?);
        }
    }
    let mut target = Vec::with_capacity(spec.target_classes * spec.samples_per_class);
    for class in 0..spec.target_classes {
        for _ in 0..spec.samples_per_class {
            let mut data = render(class, side, &mut rng);
            shift.apply(&mut data, side, &mut rng);
            target.push(Sample::new(
                Tensor::new(shape.clone(), data)?,
                Some(class),
                Domain::Target,
            )?);
        }
    }
    Ok((source, target))
}

/// Reads a binary PPM (P6) or PGM (P5) with `maxval <= 255` as a `c×h×w`
/// tensor scaled to `[0, 1]`.
pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes).map_err(|msg| Error::format(path, msg))
}

fn parse_pnm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(format!("unsupported magic `{m}`")),
    };
    let mut number = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if w == 0 || h == 0 {
        return Err("zero image size".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("maxval {maxval} is not in 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = channels * w * h;
    let raster = bytes
        .get(start..start + n)
        .ok_or_else(|| format!("raster holds {} of {n} bytes", bytes.len().saturating_sub(start)))?;
    let scale = maxval as f64;
    let mut data = vec![0.0; n];
    for (i, &b) in raster.iter().enumerate() {
        if b as usize > maxval {
            return Err(format!("sample {b} exceeds maxval {maxval}"));
        }
        // interleaved -> planar
        let (pixel, c) = (i / channels, i % channels);
        data[c * w * h + pixel] = b as f64 / scale;
    }
    Tensor::new(vec![channels, h, w], data).map_err(|e| e.to_string())
}

/// Writes a `1×h×w` tensor as P5 or a `3×h×w` tensor as P6, maxval 255.
pub fn write_pnm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
        return Err(Error::Dimension(format!("PNM output needs 1 or 3 channels, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut bytes = format!("{} {w} {h} 255\n", if c == 3 { "P6" } else { "P5" }).into_bytes();
    let d = image.data();
    for pixel in 0..h * w {
        for ch in 0..c {
            bytes.push((d[ch * h * w + pixel].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Nearest-neighbour resize of a `c×h×w` tensor to `c×side×side`; output
/// pixel `i` reads input pixel `floor(i·h/side)`.
pub fn resize_nearest(image: &Tensor, side: usize) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || side == 0 {
        return Err(Error::Dimension(format!("resize of {s:?} to {side}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = image.data();
    let mut out = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in 0..side {
            let sy = y * h / side;
            for x in 0..side {
                out.push(d[ch * h * w + sy * w + x * w / side]);
            }
        }
    }
    Tensor::new(vec![c, side, side], out)
}

/// Converts to `CHANNELS` channels (grey is replicated) at `side×side`.
fn normalize_image(image: Tensor, side: usize) -> Result<Tensor> {
    let image = if image.shape()[0] == 1 && CHANNELS != 1 {
        let plane = image.data();
        let (h, w) = (image.shape()[1], image.shape()[2]);
        let data = (0..CHANNELS).flat_map(|_| plane.iter().copied()).collect();
        Tensor::new(vec![CHANNELS, h, w], data)?
    } else {
        image
    };
    if image.shape()[1] == side && image.shape()[2] == side {
        Ok(image)
    } else {
        resize_nearest(&image, side)
    }
}

fn is_pnm(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("ppm" | "pgm" | "pnm"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads `path/<class>/*.ppm|pgm`; class ids follow the order of
/// `class_list`. Unknown class directories and non-image files are skipped
/// with a warning.
pub fn load_directory(path: &Path, class_list: &[String], side: usize, domain: Domain) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for entry in sorted_entries(path)? {
        if !entry.is_dir() {
            log::warn!("skipping non-directory {}", entry.display());
            continue;
        }
        let name = entry.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(class) = class_list.iter().position(|c| c == name) else {
            log::warn!("skipping unknown class directory {}", entry.display());
            continue;
        };
        for file in sorted_entries(&entry)? {
            if !is_pnm(&file) {
                log::warn!("skipping non-PNM file {}", file.display());
                continue;
            }
            let image = normalize_image(read_pnm(&file)?, side)?;
            samples.push(Sample::new(image, Some(class), domain)?);
        }
    }
    Ok(samples)
}

/// One manifest line: `relative_path class_id domain`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_id: usize,
    pub domain: Domain,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", i + 1));
        if fields.len() != 3 {
            return Err(bad("expected `relative_path class_id domain`"));
        }
        out.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            class_id: fields[1].parse().map_err(|_| bad("bad class id"))?,
            domain: fields[2].parse().map_err(|_| bad("bad domain"))?,
        });
    }
    Ok(out)
}

/// Loads every manifest entry relative to the manifest's directory and
/// splits the result by domain.
pub fn load_manifest(path: &Path, side: usize) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let root = path.parent().unwrap_or(Path::new("."));
    let (mut source, mut target) = (Vec::new(), Vec::new());
    for e in parse_manifest(path)? {
        let image = normalize_image(read_pnm(&root.join(&e.path))?, side)?;
        let sample = Sample::new(image, Some(e.class_id), e.domain)?;
        match e.domain {
            Domain::Source => source.push(sample),
            Domain::Target => target.push(sample),
        }
    }
    Ok((source, target))
}

/// Writes `dir/<domain>/class_<id>/<n>.ppm` for every sample plus
/// `dir/manifest.txt`; returns the manifest path.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<PathBuf> {
    let mut manifest = String::new();
    let mut counters = std::collections::HashMap::new();
    let mut made = BTreeSet::new();
    for s in samples {
        let class = s
            .oracle_label()
            .ok_or_else(|| Error::Contract("cannot write a sample without a class id".into()))?;
        let rel_dir = PathBuf::from(s.domain().to_string()).join(format!("class_{class}"));
        if made.insert(rel_dir.clone()) {
            let abs = dir.join(&rel_dir);
            std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
        }
        let n = counters.entry((s.domain(), class)).or_insert(0usize);
        let rel = rel_dir.join(format!("{:05}.ppm", *n));
        *n += 1;
        write_pnm(&dir.join(&rel), s.image())?;
        manifest.push_str(&format!("{} {class} {}\n", rel.display(), s.domain()));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Indices of one mixed batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// One epoch of mixed batches. The epoch length is set by whichever side
/// needs more batches; each side's index stream is a concatenation of fresh
/// random permutations, so every sample of the larger side appears once
/// before any repeats, and the smaller side is recycled.
pub fn make_batches<R: Rng + ?Sized>(
    source_len: usize,
    target_len: usize,
    batch_source: usize,
    batch_target: usize,
    rng: &mut R,
) -> Result<Vec<BatchIndices>> {
    if source_len == 0 || target_len == 0 {
        return Err(Error::Parameter("cannot batch an empty dataset".into()));
    }
    if batch_source == 0 || batch_target == 0 {
        return Err(Error::Parameter("batch sizes must be positive".into()));
    }
    let batches = source_len.div_ceil(batch_source).max(target_len.div_ceil(batch_target));
    let mut stream = |len: usize, need: usize| {
        let mut out = Vec::with_capacity(need);
        while out.len() < need {
            let mut perm: Vec<usize> = (0..len).collect();
            perm.shuffle(rng);
            out.extend(perm.into_iter().take(need - out.len()));
        }
        out
    };
    let s = stream(source_len, batches * batch_source);
    let t = stream(target_len, batches * batch_target);
    Ok(s.chunks(batch_source)
        .zip(t.chunks(batch_target))
        .map(|(s, t)| BatchIndices {
            source: s.to_vec(),
            target: t.to_vec(),
        })
        .collect())
}

/// Per-class split: `round(fraction · n_c)` samples of each class go to
/// validation, keeping at least one for training. Returns
/// `(train, validation)` index lists in ascending order.
pub fn stratified_split<R: Rng + ?Sized>(
    labels: &[usize],
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "validation fraction {fraction} not in [0, 1)"
        )));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).min(idx.len() - 1);
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
