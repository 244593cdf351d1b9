//! Cross-view correspondence volumes and positive/negative patch pairing.
//!
//! A correspondence volume holds one similarity per pair of locations
//! `(h, w)` in one patch and `(h', w')` in another, flattened to
//! `row = h·W + w`, `col = h'·W' + w'`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;

/// Stabilizer added to norms before normalizing per-location vectors.
pub const NORM_EPS: f64 = 1e-8;

/// Default `ε` of the geometry volume, in scene units.
pub const GEOMETRY_EPS: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeKind {
    Appearance,
    Segmentation,
    Geometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrVolume {
    pub kind: VolumeKind,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CorrVolume {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Entry `(h, w, h', w')` for patches of widths `w_a` and `w_b`.
    pub fn at(&self, h: usize, w: usize, h2: usize, w2: usize, w_a: usize, w_b: usize) -> f64 {
        self.get(h * w_a + w, h2 * w_b + w2)
    }
}

/// Per-location vectors scaled by `1/(‖v‖ + ε)`, plus the norms.
pub fn normalize_rows(v: &[f64], channels: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; v.len()];
    let mut norms = Vec::with_capacity(v.len() / channels.max(1));
    for (src, dst) in v.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        let n = math::norm(src);
        let inv = 1.0 / (n + eps);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s * inv;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Cosine volume between two grids of `channels`-vectors.
pub fn cosine_volume(
    a: &[f64],
    b: &[f64],
    channels: usize,
    eps: f64,
    kind: VolumeKind,
) -> Result<CorrVolume> {
    if channels == 0 || a.len() % channels != 0 || b.len() % channels != 0 {
        return Err(invalid!("volume inputs must be whole {channels}-vectors"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correspondence input"));
    }
    let (na, _) = normalize_rows(a, channels, eps);
    let (nb, _) = normalize_rows(b, channels, eps);
    Ok(cosine_of_normalized(&na, &nb, channels, kind))
}

pub(crate) fn cosine_of_normalized(na: &[f64], nb: &[f64], channels: usize, kind: VolumeKind) -> CorrVolume {
    let rows = na.len() / channels;
    let cols = nb.len() / channels;
    let mut data = vec![0.0; rows * cols];
    for (i, va) in na.chunks_exact(channels).enumerate() {
        let out = &mut data[i * cols..(i + 1) * cols];
        for (o, vb) in out.iter_mut().zip(nb.chunks_exact(channels)) {
            *o = math::dot(va, vb);
        }
    }
    CorrVolume {
        kind,
        rows,
        cols,
        data,
    }
}

/// `G = Σ_{c∈{x,y,z}} 1/(|g_c − g'_c| + ε)` for two grids of 3D points.
pub fn geometry_volume(g: &[f64], g2: &[f64], eps: f64) -> Result<CorrVolume> {
    if !(eps > 0.0) {
        return Err(invalid!("geometry ε must be positive, got {eps}"));
    }
    if g.len() % 3 != 0 || g2.len() % 3 != 0 {
        return Err(invalid!("point grids must hold whole 3-vectors"));
    }
    if g.iter().chain(g2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rendered points"));
    }
    let rows = g.len() / 3;
    let cols = g2.len() / 3;
    let mut data = vec![0.0; rows * cols];
    for (i, p) in g.chunks_exact(3).enumerate() {
        let out = &mut data[i * cols..(i + 1) * cols];
        for (o, q) in out.iter_mut().zip(g2.chunks_exact(3)) {
            *o = 1.0 / ((p[0] - q[0]).abs() + eps)
                + 1.0 / ((p[1] - q[1]).abs() + eps)
                + 1.0 / ((p[2] - q[2]).abs() + eps);
        }
    }
    Ok(CorrVolume {
        kind: VolumeKind::Geometry,
        rows,
        cols,
        data,
    })
}

/// Unit-norm summary vector of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor(pub Vec<f64>);

impl PatchDescriptor {
    /// Normalizes an existing token (e.g. an exported per-patch token).
    pub fn from_token(token: &[f64]) -> Result<Self> {
        let n = math::norm(token);
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid!("descriptor token has zero or non-finite norm"));
        }
        Ok(Self(token.iter().map(|v| v / n).collect()))
    }

    pub fn cosine(&self, other: &PatchDescriptor) -> f64 {
        math::dot(&self.0, &other.0)
    }
}

/// L2-normalized mean of the patch's per-location features.
pub fn patch_descriptor(features: &[f64], channels: usize) -> Result<PatchDescriptor> {
    if channels == 0 || features.is_empty() || features.len() % channels != 0 {
        return Err(invalid!("patch features must hold whole {channels}-vectors"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("patch features"));
    }
    let mut mean = vec![0.0; channels];
    for v in features.chunks_exact(channels) {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let count = (features.len() / channels) as f64;
    for m in &mut mean {
        *m /= count;
    }
    if mean.iter().all(|&m| m == 0.0) {
        return Err(invalid!("patch features are all zero"));
    }
    PatchDescriptor::from_token(&mean)
}

/// Identity positives and least-similar negatives for a batch of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    /// `(i, i)` for every patch.
    pub positives: Vec<(usize, usize)>,
    /// `(i, argmin_{j≠i} M_ij)`.
    pub negatives: Vec<(usize, usize)>,
    /// Row `i` had no contrast (every off-diagonal similarity equal).
    pub low_contrast: Vec<bool>,
    /// The similarity matrix `M`, row-major.
    pub similarity: Vec<f64>,
}

/// Builds the pair set from descriptor cosines. Ties go to the smallest `j`.
pub fn select_pairs(descriptors: &[PatchDescriptor]) -> Result<PairSet> {
    let n = descriptors.len();
    if n < 2 {
        return Err(invalid!("pair selection needs at least 2 patches, got {n}"));
    }
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = descriptors[i].cosine(&descriptors[j]);
        }
    }
    Ok(pairs_from_similarity(n, sim))
}

/// Pair readout from a precomputed similarity matrix.
pub fn pairs_from_similarity(n: usize, similarity: Vec<f64>) -> PairSet {
    let mut negatives = Vec::with_capacity(n);
    let mut low_contrast = Vec::with_capacity(n);
    for i in 0..n {
        let row = &similarity[i * n..(i + 1) * n];
        let mut best = None::<(usize, f64)>;
        let mut hi = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            hi = hi.max(v);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((j, v));
            }
        }
        let (j, lo) = best.expect("n >= 2");
        negatives.push((i, j));
        low_contrast.push(lo == hi);
    }
    PairSet {
        positives: (0..n).map(|i| (i, i)).collect(),
        negatives,
        low_contrast,
        similarity,
    }
}
