//! Jigsaw puzzle machinery: permutation-set selection by greedy max-min
//! Hamming distance, tiling, and stochastic tile shuffling.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of positions at which two permutations disagree.
pub fn hamming(a: &[usize], b: &[usize]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "hamming: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// Ordered set of tile permutations; index 0 is always the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSet {
    grid_side: usize,
    perms: Vec<Vec<usize>>,
}

impl PermutationSet {
    /// Validates an explicit list of permutations.
    pub fn new(grid_side: usize, perms: Vec<Vec<usize>>) -> Result<Self> {
        let n = grid_side * grid_side;
        if grid_side == 0 || perms.is_empty() {
            return Err(Error::Parameter("empty permutation set".into()));
        }
        for (i, p) in perms.iter().enumerate() {
            let mut seen = vec![false; n];
            if p.len() != n {
                return Err(Error::Parameter(format!(
                    "permutation {i} has {} entries, expected {n}",
                    p.len()
                )));
            }
            for &v in p {
                if v >= n || std::mem::replace(&mut seen[v], true) {
                    return Err(Error::Parameter(format!(
                        "permutation {i} is not a bijection on 0..{n}"
                    )));
                }
            }
        }
        if perms[0].iter().enumerate().any(|(i, &v)| i != v) {
            return Err(Error::Parameter("permutation 0 must be the identity".into()));
        }
        let mut sorted = perms.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate permutations".into()));
        }
        Ok(PermutationSet { grid_side, perms })
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[usize]> {
        self.perms.get(index).map(Vec::as_slice)
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// Smallest Hamming distance over all pairs (0 for a single permutation).
    pub fn min_pairwise_distance(&self) -> usize {
        let mut best = usize::MAX;
        for i in 0..self.perms.len() {
            for j in i + 1..self.perms.len() {
                let d = self.perms[i].iter().zip(&self.perms[j]).filter(|(a, b)| a != b).count();
                best = best.min(d);
            }
        }
        if best == usize::MAX {
            0
        } else {
            best
        }
    }

    /// Text form: `"g P"` then one line of space-separated indices per permutation.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.grid_side, self.perms.len());
        for p in &self.perms {
            let line: Vec<String> = p.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parameter(format!("permutation file: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        let [g, p] = nums[..] else {
            return Err(bad(format!("header `{header}` must be `g P`")));
        };
        let mut perms = Vec::with_capacity(p);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let perm = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(format!("line {}: `{t}`", i + 2))))
                .collect::<Result<Vec<usize>>>()?;
            perms.push(perm);
        }
        if perms.len() != p {
            return Err(bad(format!("header declares {p} permutations, found {}", perms.len())));
        }
        PermutationSet::new(g, perms)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// All permutations of `0..n` in lexicographic order, packed row after row.
fn enumerate_lexicographic(n: usize) -> Vec<u8> {
    let mut current: Vec<u8> = (0..n as u8).collect();
    let mut out = Vec::with_capacity(factorial(n) * n);
    loop {
        out.extend_from_slice(&current);
        // next_permutation
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
    out
}

/// Greedy max-min selection over a candidate pool packed row after row in
/// lexicographic order, whose first row is the identity. Returns the chosen
/// row indices.
fn greedy_max_min(pool: &[u8], n: usize, count: usize) -> Vec<usize> {
    let rows = pool.len() / n;
    let dist = |a: usize, b: usize| -> u8 {
        pool[a * n..(a + 1) * n]
            .iter()
            .zip(&pool[b * n..(b + 1) * n])
            .filter(|(x, y)| x != y)
            .count() as u8
    };
    let mut selected = vec![0usize];
    let mut min_dist: Vec<u8> = (0..rows).map(|c| dist(c, 0)).collect();
    while selected.len() < count {
        let mut best = 0;
        let mut best_d = 0u8;
        for (c, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = c;
                if d as usize == n {
                    break;
                }
            }
        }
        debug_assert!(best_d > 0);
        selected.push(best);
        for (c, md) in min_dist.iter_mut().enumerate() {
            if *md > 0 {
                *md = (*md).min(dist(c, best));
            }
        }
    }
    selected
}

fn rows_to_perms(pool: &[u8], n: usize, rows: &[usize]) -> Vec<Vec<usize>> {
    rows.iter()
        .map(|&c| pool[c * n..(c + 1) * n].iter().map(|&v| v as usize).collect())
        .collect()
}

/// Arithmetic in GF(p²) with elements `a + b·x` and `x² = s·x + t`.
#[derive(Clone, Copy)]
struct QuadraticField {
    p: usize,
    s: usize,
    t: usize,
}

impl QuadraticField {
    fn for_grid(grid_side: usize) -> Self {
        match grid_side {
            // GF(4): x² = x + 1 over F2
            2 => QuadraticField { p: 2, s: 1, t: 1 },
            // GF(9): x² = -1 over F3
            3 => QuadraticField { p: 3, s: 0, t: 2 },
            _ => unreachable!("grid side validated by caller"),
        }
    }

    fn split(&self, e: usize) -> (usize, usize) {
        (e % self.p, e / self.p)
    }

    fn join(&self, a: usize, b: usize) -> usize {
        a % self.p + (b % self.p) * self.p
    }

    fn add(&self, u: usize, v: usize) -> usize {
        let ((a, b), (c, d)) = (self.split(u), self.split(v));
        self.join(a + c, b + d)
    }

    fn mul(&self, u: usize, v: usize) -> usize {
        let ((a, b), (c, d)) = (self.split(u), self.split(v));
        self.join(a * c + b * d * self.t, a * d + b * c + b * d * self.s)
    }
}

/// The affine maps `e ↦ α·e + β` (α ≠ 0) over GF(g²), acting on tile
/// positions. Two distinct affine maps agree on at most one point, so every
/// pair of these permutations is at Hamming distance ≥ g² − 1.
fn affine_code(grid_side: usize) -> Vec<u8> {
    let field = QuadraticField::for_grid(grid_side);
    let q = grid_side * grid_side;
    let mut perms: Vec<Vec<u8>> = Vec::with_capacity(q * (q - 1));
    for alpha in 1..q {
        for beta in 0..q {
            perms.push((0..q).map(|e| field.add(field.mul(alpha, e), beta) as u8).collect());
        }
    }
    perms.sort();
    perms.concat()
}

fn min_distance(perms: &[Vec<usize>]) -> usize {
    let mut best = usize::MAX;
    for i in 0..perms.len() {
        for j in i + 1..perms.len() {
            best = best.min(perms[i].iter().zip(&perms[j]).filter(|(a, b)| a != b).count());
        }
    }
    best
}

/// Greedy max-min Hamming selection over the full permutation group.
///
/// Starts from the identity, then repeatedly appends the permutation whose
/// minimum distance to the chosen set is largest, lexicographically first
/// among ties. Greedy over the whole group can paint itself into a corner
/// (on the 3×3 grid it drops to distance 7 from 18 permutations on), so the
/// same greedy is also run over the affine permutation code of GF(g²), and
/// that result is used only when its minimum distance is strictly larger.
///
/// `_seed` is accepted for a future sampling mode; exact mode is fully
/// deterministic.
pub fn select_permutations(grid_side: usize, count: usize, _seed: u64) -> Result<PermutationSet> {
    if !(2..=3).contains(&grid_side) {
        return Err(Error::Parameter(format!("grid side must be 2 or 3, got {grid_side}")));
    }
    let n = grid_side * grid_side;
    let total = factorial(n);
    if count == 0 || count > total {
        return Err(Error::Parameter(format!(
            "permutation count must lie in [1, {total}], got {count}"
        )));
    }
    let all = enumerate_lexicographic(n);
    let mut perms = rows_to_perms(&all, n, &greedy_max_min(&all, n, count));
    let code = affine_code(grid_side);
    if count > 1 && count <= code.len() / n {
        let alt = rows_to_perms(&code, n, &greedy_max_min(&code, n, count));
        if min_distance(&alt) > min_distance(&perms) {
            perms = alt;
        }
    }
    PermutationSet::new(grid_side, perms)
}

/// An image cut into `g²` equally sized tiles, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub grid_side: usize,
    pub tiles: Vec<Tensor>,
}

fn tile_dims(image: &Tensor, grid_side: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let s = image.shape();
    if s.len() != 3 || grid_side == 0 || !s[1].is_multiple_of(grid_side) || !s[2].is_multiple_of(grid_side) {
        return Err(Error::Dimension(format!(
            "image {s:?} cannot be tiled by a {grid_side}×{grid_side} grid"
        )));
    }
    Ok((s[0], s[1], s[2], s[1] / grid_side, s[2] / grid_side))
}

pub fn split_tiles(image: &Tensor, grid_side: usize) -> Result<TileGrid> {
    let (c, h, w, th, tw) = tile_dims(image, grid_side)?;
    let data = image.data();
    let mut tiles = Vec::with_capacity(grid_side * grid_side);
    for ty in 0..grid_side {
        for tx in 0..grid_side {
            let mut t = Vec::with_capacity(c * th * tw);
            for ch in 0..c {
                for y in 0..th {
                    let start = (ch * h + ty * th + y) * w + tx * tw;
                    t.extend_from_slice(&data[start..start + tw]);
                }
            }
            tiles.push(Tensor::new(vec![c, th, tw], t)?);
        }
    }
    Ok(TileGrid { grid_side, tiles })
}

impl TileGrid {
    /// Places tile `i` at grid position `i`.
    pub fn reassemble(&self) -> Result<Tensor> {
        let g = self.grid_side;
        let first = self.tiles.first().ok_or_else(|| Error::Dimension("no tiles".into()))?;
        if self.tiles.len() != g * g || self.tiles.iter().any(|t| t.shape() != first.shape()) {
            return Err(Error::Dimension("tiles do not form a full grid".into()));
        }
        let (c, th, tw) = (first.shape()[0], first.shape()[1], first.shape()[2]);
        let (h, w) = (th * g, tw * g);
        let mut out = vec![0.0; c * h * w];
        for (i, tile) in self.tiles.iter().enumerate() {
            let (ty, tx) = (i / g, i % g);
            for ch in 0..c {
                for y in 0..th {
                    let dst = (ch * h + ty * th + y) * w + tx * tw;
                    let src = (ch * th + y) * tw;
                    out[dst..dst + tw].copy_from_slice(&tile.data()[src..src + tw]);
                }
            }
        }
        Tensor::new(vec![c, h, w], out)
    }
}

/// Rearranges tiles so that output position `i` holds input tile `perm[i]`.
pub fn permute_tiles(image: &Tensor, grid_side: usize, perm: &[usize]) -> Result<Tensor> {
    let (c, h, w, th, tw) = tile_dims(image, grid_side)?;
    if perm.len() != grid_side * grid_side {
        return Err(Error::Dimension(format!(
            "permutation of length {} for a {grid_side}×{grid_side} grid",
            perm.len()
        )));
    }
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for (pos, &from) in perm.iter().enumerate() {
        let (dy, dx) = (pos / grid_side, pos % grid_side);
        let (sy, sx) = (from / grid_side, from % grid_side);
        for ch in 0..c {
            for y in 0..th {
                let d = (ch * h + dy * th + y) * w + dx * tw;
                let s = (ch * h + sy * th + y) * w + sx * tw;
                out[d..d + tw].copy_from_slice(&src[s..s + tw]);
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn shuffle_image(image: &Tensor, perm_set: &PermutationSet, perm_index: usize) -> Result<Tensor> {
    let perm = perm_set.get(perm_index).ok_or_else(|| {
        Error::Parameter(format!(
            "permutation index {perm_index} outside [0, {})",
            perm_set.len()
        ))
    })?;
    permute_tiles(image, perm_set.grid_side(), perm)
}

/// Keeps the image intact with probability `beta` (index 0); otherwise
/// shuffles it with a permutation drawn uniformly from `1..P`.
pub fn maybe_shuffle<R: Rng + ?Sized>(
    image: &Tensor,
    perm_set: &PermutationSet,
    beta: f64,
    rng: &mut R,
) -> Result<(Tensor, usize)> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Parameter(format!("beta must lie in [0, 1], got {beta}")));
    }
    if perm_set.len() < 2 || rng.gen::<f64>() < beta {
        return Ok((image.clone(), 0));
    }
    let index = rng.gen_range(1..perm_set.len());
    Ok((shuffle_image(image, perm_set, index)?, index))
}
