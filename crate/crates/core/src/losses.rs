//! Photometric, appearance-contrastive and geometry-contrastive losses.
//!
//! Both contrastive terms share one correlation form,
//! `C(vol, S, b) = −Σ_{hwh'w'} (vol − b)·S`, where `S` is the cosine volume
//! of rendered segmentation logits. `vol` is the appearance volume `F` of
//! frozen features or the geometry volume `G` of rendered points; neither
//! receives gradients.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::correspond::{self, CorrVolume, PairSet, VolumeKind, NORM_EPS};
use crate::error::{invalid, Error, Result};

/// Geometry-level biases `(b_id, b_neg)` tuned per dataset family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryPreset {
    Llff,
    BlendedMvs,
    Co3d,
    TanksTemples,
}

impl GeometryPreset {
    pub fn biases(self) -> (f64, f64) {
        match self {
            GeometryPreset::Llff => (0.50, 3.00),
            GeometryPreset::BlendedMvs => (0.12, 0.60),
            GeometryPreset::Co3d => (0.25, 1.00),
            GeometryPreset::TanksTemples => (1.00, 5.00),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// λ0
    pub photometric: f64,
    /// λ1
    pub appearance: f64,
    /// λ2
    pub geometry: f64,
    /// λ_id
    pub identity: f64,
    /// λ_neg
    pub negative: f64,
    pub b_id_app: f64,
    pub b_neg_app: f64,
    pub b_id_geo: f64,
    pub b_neg_geo: f64,
}

/// Placeholder appearance biases; not published alongside the recipe.
pub const DEFAULT_B_ID_APP: f64 = 0.30;
pub const DEFAULT_B_NEG_APP: f64 = 0.10;

impl LossWeights {
    /// Segmentation-stage weights `(λ0, λ1, λ2, λ_id, λ_neg) = (0, 1, 0.01, 1, 1)`.
    pub fn segmentation_stage(preset: GeometryPreset) -> Self {
        let (b_id_geo, b_neg_geo) = preset.biases();
        Self {
            photometric: 0.0,
            appearance: 1.0,
            geometry: 0.01,
            identity: 1.0,
            negative: 1.0,
            b_id_app: DEFAULT_B_ID_APP,
            b_neg_app: DEFAULT_B_NEG_APP,
            b_id_geo,
            b_neg_geo,
        }
    }

    /// Photometric loss only.
    pub fn photometric_only() -> Self {
        Self {
            photometric: 1.0,
            appearance: 0.0,
            geometry: 0.0,
            ..Self::segmentation_stage(GeometryPreset::Llff)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.photometric,
            self.appearance,
            self.geometry,
            self.identity,
            self.negative,
            self.b_id_app,
            self.b_neg_app,
            self.b_id_geo,
            self.b_neg_geo,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("loss weights"));
        }
        if self.identity < 0.0 || self.negative < 0.0 {
            return Err(invalid!("λ_id and λ_neg must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reduction {
    Sum,
    /// Sum divided by the number of rays.
    #[default]
    Mean,
}

/// Squared color error over rays, with its gradient wrt the rendered colors.
pub fn photometric_loss(rendered: &[f64], truth: &[f64], reduction: Reduction) -> Result<(f64, Vec<f64>)> {
    if rendered.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            what: "photometric inputs",
            expected: truth.len(),
            actual: rendered.len(),
        });
    }
    if rendered.len() % 3 != 0 {
        return Err(invalid!("colors must be 3-vectors"));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / (rendered.len() / 3).max(1) as f64,
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; rendered.len()];
    for ((g, &r), &t) in grad.iter_mut().zip(rendered).zip(truth) {
        let d = r - t;
        loss += d * d;
        *g = 2.0 * d * scale;
    }
    Ok((loss * scale, grad))
}

/// Segmentation cosine volume with what backprop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegVolume {
    pub volume: CorrVolume,
    pub channels: usize,
    raw_a: Vec<f64>,
    raw_b: Vec<f64>,
    unit_a: Vec<f64>,
    unit_b: Vec<f64>,
    norm_a: Vec<f64>,
    norm_b: Vec<f64>,
}

impl SegVolume {
    pub fn new(seg_a: &[f64], seg_b: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || seg_a.len() % channels != 0 || seg_b.len() % channels != 0 {
            return Err(invalid!("segmentation grids must hold whole {channels}-vectors"));
        }
        if seg_a.iter().chain(seg_b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("segmentation logits"));
        }
        let (unit_a, norm_a) = correspond::normalize_rows(seg_a, channels, NORM_EPS);
        let (unit_b, norm_b) = correspond::normalize_rows(seg_b, channels, NORM_EPS);
        let volume = correspond::cosine_of_normalized(&unit_a, &unit_b, channels, VolumeKind::Segmentation);
        Ok(Self {
            volume,
            channels,
            raw_a: seg_a.to_vec(),
            raw_b: seg_b.to_vec(),
            unit_a,
            unit_b,
            norm_a,
            norm_b,
        })
    }
}

/// Correlation loss value and gradients wrt the raw logits of both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGrad {
    pub loss: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `−Σ (vol − b)·S`, differentiated through the logit normalization of `S`.
pub fn correlation_loss(vol: &CorrVolume, seg: &SegVolume, b: f64) -> Result<CorrelationGrad> {
    let s = &seg.volume;
    if vol.rows != s.rows || vol.cols != s.cols {
        return Err(Error::ShapeMismatch {
            what: "correlation extents",
            expected: s.rows * s.cols,
            actual: vol.rows * vol.cols,
        });
    }
    let c = seg.channels;
    let mut loss = 0.0;
    let mut d_unit_a = vec![0.0; seg.unit_a.len()];
    let mut d_unit_b = vec![0.0; seg.unit_b.len()];
    for i in 0..s.rows {
        let ua = &seg.unit_a[i * c..(i + 1) * c];
        let vrow = &vol.data[i * s.cols..(i + 1) * s.cols];
        let srow = &s.data[i * s.cols..(i + 1) * s.cols];
        let da = &mut d_unit_a[i * c..(i + 1) * c];
        for j in 0..s.cols {
            let weight = -(vrow[j] - b);
            loss += weight * srow[j];
            let ub = &seg.unit_b[j * c..(j + 1) * c];
            let db = &mut d_unit_b[j * c..(j + 1) * c];
            for ch in 0..c {
                da[ch] += weight * ub[ch];
                db[ch] += weight * ua[ch];
            }
        }
    }
    Ok(CorrelationGrad {
        loss,
        grad_a: normalize_backward(&seg.raw_a, &seg.norm_a, &d_unit_a, c),
        grad_b: normalize_backward(&seg.raw_b, &seg.norm_b, &d_unit_b, c),
    })
}

/// Chain rule through `v ↦ v/(‖v‖ + ε)`.
fn normalize_backward(raw: &[f64], norms: &[f64], d_unit: &[f64], channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for (k, &n) in norms.iter().enumerate() {
        let range = k * channels..(k + 1) * channels;
        let (v, g) = (&raw[range.clone()], &d_unit[range.clone()]);
        let o = &mut out[range];
        let denom = n + NORM_EPS;
        if n > 0.0 {
            let vg: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum();
            let coef = vg / (n * denom * denom);
            for ch in 0..channels {
                o[ch] = g[ch] / denom - v[ch] * coef;
            }
        } else {
            for ch in 0..channels {
                o[ch] = g[ch] / denom;
            }
        }
    }
    out
}

/// Value of one pair's contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub positive: bool,
    pub a: usize,
    pub b: usize,
    pub appearance: f64,
    pub geometry: f64,
}

/// A contrastive loss with gradients wrt each patch's rendered logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    /// Per patch, `P² × C_s`.
    pub seg_grads: Vec<Vec<f64>>,
    /// `(positive, a, b, unweighted term)` for every pair.
    pub terms: Vec<(bool, usize, usize, f64)>,
}

/// `λ_id·mean_i C(r_ii, b_id) + λ_neg·mean_i C(r_ij*, b_neg)`.
fn contrastive<F>(
    pairs: &PairSet,
    seg: &[Vec<f64>],
    channels: usize,
    lambda: (f64, f64),
    bias: (f64, f64),
    mut volume: F,
) -> Result<ContrastiveLoss>
where
    F: FnMut(usize, usize) -> Result<CorrVolume>,
{
    let n = seg.len();
    let mut seg_grads: Vec<Vec<f64>> = seg.iter().map(|s| vec![0.0; s.len()]).collect();
    let mut terms = Vec::with_capacity(pairs.positives.len() + pairs.negatives.len());
    let mut loss = 0.0;
    let groups = [
        (true, &pairs.positives, lambda.0, bias.0),
        (false, &pairs.negatives, lambda.1, bias.1),
    ];
    for (positive, list, lam, b) in groups {
        if list.is_empty() {
            continue;
        }
        let scale = lam / list.len() as f64;
        for &(i, j) in list {
            if i >= n || j >= n {
                return Err(invalid!("pair ({i}, {j}) refers to a missing patch"));
            }
            if lam == 0.0 {
                terms.push((positive, i, j, 0.0));
                continue;
            }
            let vol = volume(i, j)?;
            let sv = SegVolume::new(&seg[i], &seg[j], channels)?;
            let cg = correlation_loss(&vol, &sv, b)?;
            loss += scale * cg.loss;
            for (g, d) in seg_grads[i].iter_mut().zip(&cg.grad_a) {
                *g += scale * d;
            }
            for (g, d) in seg_grads[j].iter_mut().zip(&cg.grad_b) {
                *g += scale * d;
            }
            terms.push((positive, i, j, cg.loss));
        }
    }
    Ok(ContrastiveLoss {
        loss,
        seg_grads,
        terms,
    })
}

/// Appearance-level loss from frozen per-patch features.
pub fn app_loss(
    pairs: &PairSet,
    features: &[Vec<f64>],
    feature_channels: usize,
    seg: &[Vec<f64>],
    seg_channels: usize,
    w: &LossWeights,
) -> Result<ContrastiveLoss> {
    if features.len() != seg.len() {
        return Err(Error::ShapeMismatch {
            what: "patch features",
            expected: seg.len(),
            actual: features.len(),
        });
    }
    let units: Vec<Vec<f64>> = features
        .iter()
        .map(|f| correspond::normalize_rows(f, feature_channels, NORM_EPS).0)
        .collect();
    contrastive(
        pairs,
        seg,
        seg_channels,
        (w.identity, w.negative),
        (w.b_id_app, w.b_neg_app),
        |i, j| {
            if units[i].len() / feature_channels != seg[i].len() / seg_channels {
                return Err(invalid!("patch {i} features and logits cover different grids"));
            }
            Ok(correspond::cosine_of_normalized(
                &units[i],
                &units[j],
                feature_channels,
                VolumeKind::Appearance,
            ))
        },
    )
}

/// Geometry-level loss from rendered per-patch points (held constant).
pub fn geo_loss(
    pairs: &PairSet,
    points: &[Vec<f64>],
    seg: &[Vec<f64>],
    seg_channels: usize,
    eps: f64,
    w: &LossWeights,
) -> Result<ContrastiveLoss> {
    if points.len() != seg.len() {
        return Err(Error::ShapeMismatch {
            what: "patch points",
            expected: seg.len(),
            actual: points.len(),
        });
    }
    contrastive(
        pairs,
        seg,
        seg_channels,
        (w.identity, w.negative),
        (w.b_id_geo, w.b_neg_geo),
        |i, j| correspond::geometry_volume(&points[i], &points[j], eps),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub photometric: f64,
    pub app: f64,
    pub geo: f64,
    pub pairs: Vec<PairTerm>,
}

/// Everything the balanced loss consumes for one batch of patches.
#[derive(Debug, Clone, Copy)]
pub struct PatchBatch<'a> {
    /// Rendered colors per patch, `P² × 3`.
    pub colors: &'a [Vec<f64>],
    /// Ground-truth colors per patch.
    pub truth: &'a [Vec<f64>],
    /// Frozen features per patch, `P² × C'`.
    pub features: &'a [Vec<f64>],
    pub feature_channels: usize,
    /// Rendered points per patch, `P² × 3`.
    pub points: &'a [Vec<f64>],
    /// Rendered logits per patch, `P² × C_s`.
    pub seg: &'a [Vec<f64>],
    pub seg_channels: usize,
    pub pairs: &'a PairSet,
    pub geometry_eps: f64,
}

/// Gradients of the balanced loss wrt each patch's rendered colors and logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrads {
    pub color: Vec<Vec<f64>>,
    pub seg: Vec<Vec<f64>>,
}

/// `L = λ0·L_photometric + λ1·L_app + λ2·L_geo`.
pub fn total_loss(batch: &PatchBatch<'_>, w: &LossWeights) -> Result<(LossReport, PatchGrads)> {
    w.validate()?;
    let n = batch.seg.len();
    if batch.colors.len() != n || batch.truth.len() != n {
        return Err(Error::ShapeMismatch {
            what: "patch colors",
            expected: n,
            actual: batch.colors.len(),
        });
    }
    // photometric term averaged over every ray of every patch
    let flat_r: Vec<f64> = batch.colors.iter().flatten().copied().collect();
    let flat_t: Vec<f64> = batch.truth.iter().flatten().copied().collect();
    let (photometric, flat_g) = photometric_loss(&flat_r, &flat_t, Reduction::Mean)?;
    let mut color = Vec::with_capacity(n);
    let mut start = 0;
    for c in batch.colors {
        color.push(flat_g[start..start + c.len()].iter().map(|g| g * w.photometric).collect());
        start += c.len();
    }

    let app = if w.appearance != 0.0 {
        Some(app_loss(
            batch.pairs,
            batch.features,
            batch.feature_channels,
            batch.seg,
            batch.seg_channels,
            w,
        )?)
    } else {
        None
    };
    let geo = if w.geometry != 0.0 {
        Some(geo_loss(
            batch.pairs,
            batch.points,
            batch.seg,
            batch.seg_channels,
            batch.geometry_eps,
            w,
        )?)
    } else {
        None
    };

    let mut seg: Vec<Vec<f64>> = batch.seg.iter().map(|s| vec![0.0; s.len()]).collect();
    for (part, lam) in [(&app, w.appearance), (&geo, w.geometry)] {
        if let Some(part) = part {
            for (dst, src) in seg.iter_mut().zip(&part.seg_grads) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += lam * s;
                }
            }
        }
    }
    let app_value = app.as_ref().map_or(0.0, |a| a.loss);
    let geo_value = geo.as_ref().map_or(0.0, |g| g.loss);
    let mut pairs: Vec<PairTerm> = batch
        .pairs
        .positives
        .iter()
        .map(|&(a, b)| (true, a, b))
        .chain(batch.pairs.negatives.iter().map(|&(a, b)| (false, a, b)))
        .map(|(positive, a, b)| PairTerm {
            positive,
            a,
            b,
            appearance: 0.0,
            geometry: 0.0,
        })
        .collect();
    for (k, term) in pairs.iter_mut().enumerate() {
        if let Some(a) = &app {
            term.appearance = a.terms.get(k).map_or(0.0, |t| t.3);
        }
        if let Some(g) = &geo {
            term.geometry = g.terms.get(k).map_or(0.0, |t| t.3);
        }
    }
    let report = LossReport {
        total: w.photometric * photometric + w.appearance * app_value + w.geometry * geo_value,
        photometric,
        app: app_value,
        geo: geo_value,
        pairs,
    };
    Ok((report, PatchGrads { color, seg }))
}
