//! Differentiable volumetric accumulation along rays.
//!
//! For samples `t_k` with intervals `δ_k` the weights are
//! `w_k = T(k)·(1 − exp(−σ_k δ_k))` with `T(k) = exp(−Σ_{l<k} σ_l δ_l)`.
//! Color, depth, segmentation logits and accumulated opacity are all
//! `Σ_k w_k v_k` for the respective per-sample value `v_k`, and the rendered
//! point is `o + d·D`. Depth is not normalized by the accumulated weight.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{CameraModel, Pose};
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::field::{self, FieldParams, FieldQuery, GroupMask, OutputGrads, Tape};
use crate::math::{self, Vec3};
use crate::ray::{pixel_center_ray, stratified_samples, PatchRays, Ray, RaySamples};

/// Writes the weights `w` and transmittances `T(1..=K)`; returns `T(K+1)`.
pub fn weights_into(sigma: &[f64], delta: &[f64], w: &mut [f64], trans: &mut [f64]) -> Result<f64> {
    let k = sigma.len();
    if delta.len() != k || w.len() != k || trans.len() != k {
        return Err(Error::ShapeMismatch {
            what: "sample arrays",
            expected: k,
            actual: delta.len(),
        });
    }
    let mut optical = 0.0;
    for i in 0..k {
        let (s, d) = (sigma[i], delta[i]);
        if !(s >= 0.0) || !(d > 0.0) {
            return Err(invalid!("need σ ≥ 0 and δ > 0, got σ={s}, δ={d} at sample {i}"));
        }
        let t = math::exp(-optical);
        let tau = s * d;
        trans[i] = t;
        w[i] = t * -libm::expm1(-tau);
        optical += tau;
    }
    Ok(math::exp(-optical))
}

/// Per-sample weights and transmittances for one ray.
pub fn weights(sigma: &[f64], delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut w = vec![0.0; sigma.len()];
    let mut t = vec![0.0; sigma.len()];
    weights_into(sigma, delta, &mut w, &mut t)?;
    Ok((w, t))
}

/// Rendered quantities of one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub depth: f64,
    pub point: Vec3,
    pub seg: Vec<f64>,
    pub acc: f64,
}

/// Which heads to evaluate while rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegMode {
    /// No segmentation logits.
    Off,
    /// Logits at every sample.
    All,
    /// Logits only at samples whose weight exceeds the threshold; the
    /// remaining samples contribute nothing to the rendered logits.
    Cutoff(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub color: bool,
    pub seg: SegMode,
}

impl RenderOptions {
    pub const FULL: RenderOptions = RenderOptions {
        color: true,
        seg: SegMode::All,
    };
    pub const RADIANCE: RenderOptions = RenderOptions {
        color: true,
        seg: SegMode::Off,
    };
}

/// Forward state of a batch of rays.
#[derive(Debug, Clone)]
pub struct BatchRender {
    pub outputs: Vec<RayRender>,
    tape: Tape,
    /// Start of each ray's samples in the flat sample arrays.
    offsets: Vec<usize>,
    t: Vec<f64>,
    delta: Vec<f64>,
    w: Vec<f64>,
    trans: Vec<f64>,
    /// For each flat sample, its index among the segmentation rows.
    seg_slot: Vec<Option<usize>>,
    directions: Vec<Vec3>,
    seg_channels: usize,
}

/// Upstream gradients on one rendered ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGrad {
    pub color: [f64; 3],
    pub depth: f64,
    pub point: [f64; 3],
    pub seg: Vec<f64>,
    pub acc: f64,
}

impl RayGrad {
    pub fn zeros(seg_channels: usize) -> Self {
        Self {
            color: [0.0; 3],
            depth: 0.0,
            point: [0.0; 3],
            seg: vec![0.0; seg_channels],
            acc: 0.0,
        }
    }
}

/// Renders a batch of rays through the field, keeping state for backward.
pub fn render_rays(
    params: &FieldParams,
    rays: &[Ray],
    samples: &[RaySamples],
    opts: RenderOptions,
) -> Result<BatchRender> {
    if rays.len() != samples.len() {
        return Err(Error::ShapeMismatch {
            what: "rays vs sample sets",
            expected: rays.len(),
            actual: samples.len(),
        });
    }
    let channels = params.config().seg_channels;
    let mut offsets = Vec::with_capacity(rays.len() + 1);
    let mut queries = Vec::new();
    let (mut t, mut delta) = (Vec::new(), Vec::new());
    offsets.push(0);
    for (ray, s) in rays.iter().zip(samples) {
        if s.t.len() != s.delta.len() || s.t.is_empty() {
            return Err(invalid!("malformed ray samples"));
        }
        let dir = ray.direction.to_array();
        for &tk in &s.t {
            queries.push(FieldQuery {
                position: ray.at(tk).to_array(),
                direction: dir,
            });
        }
        t.extend_from_slice(&s.t);
        delta.extend_from_slice(&s.delta);
        offsets.push(t.len());
    }
    let n = t.len();
    let mut tape = field::forward_trunk(params, &queries, opts.color)?;
    let mut w = vec![0.0; n];
    let mut trans = vec![0.0; n];
    for r in 0..rays.len() {
        let range = offsets[r]..offsets[r + 1];
        weights_into(
            &tape.densities()[range.clone()],
            &delta[range.clone()],
            &mut w[range.clone()],
            &mut trans[range],
        )?;
    }
    let mut seg_slot = vec![None; n];
    match opts.seg {
        SegMode::Off => {}
        SegMode::All | SegMode::Cutoff(_) => {
            let cutoff = match opts.seg {
                SegMode::Cutoff(c) => Some(c),
                _ => None,
            };
            let rows: Vec<usize> = (0..n)
                .filter(|&i| cutoff.map_or(true, |c| w[i] > c))
                .collect();
            for (k, &i) in rows.iter().enumerate() {
                seg_slot[i] = Some(k);
            }
            field::forward_seg(params, &mut tape, rows)?;
        }
    }

    let mut outputs = Vec::with_capacity(rays.len());
    for (r, ray) in rays.iter().enumerate() {
        let mut out = RayRender {
            color: [0.0; 3],
            depth: 0.0,
            point: ray.origin,
            seg: vec![0.0; if opts.seg == SegMode::Off { 0 } else { channels }],
            acc: 0.0,
        };
        for i in offsets[r]..offsets[r + 1] {
            let wi = w[i];
            let c = tape.color(i);
            for ch in 0..3 {
                out.color[ch] += wi * c[ch];
            }
            out.depth += wi * t[i];
            out.acc += wi;
            if let Some(k) = seg_slot[i] {
                let s = tape.seg_logits(k, channels);
                for (o, &v) in out.seg.iter_mut().zip(s) {
                    *o += wi * v;
                }
            }
        }
        out.point = ray.origin + ray.direction * out.depth;
        outputs.push(out);
    }
    Ok(BatchRender {
        outputs,
        tape,
        offsets,
        t,
        delta,
        w,
        trans,
        seg_slot,
        directions: rays.iter().map(|r| r.direction).collect(),
        seg_channels: channels,
    })
}

impl BatchRender {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Weights of ray `r`.
    pub fn ray_weights(&self, r: usize) -> &[f64] {
        &self.w[self.offsets[r]..self.offsets[r + 1]]
    }

    /// Number of samples that carried segmentation logits.
    pub fn seg_sample_count(&self) -> usize {
        self.tape.seg_rows().len()
    }

    /// Accumulates parameter gradients for upstream gradients on each ray.
    pub fn backward(
        &self,
        params: &FieldParams,
        grads: &[RayGrad],
        mask: GroupMask,
        grad: &mut [f64],
    ) -> Result<()> {
        if grads.len() != self.outputs.len() {
            return Err(Error::ShapeMismatch {
                what: "ray gradients",
                expected: self.outputs.len(),
                actual: grads.len(),
            });
        }
        let channels = self.seg_channels;
        let mut up = OutputGrads::zeros(&self.tape, channels);
        let need_sigma = mask.trunk || mask.density;
        let mut g = Vec::new();
        for (r, rg) in grads.iter().enumerate() {
            let range = self.offsets[r]..self.offsets[r + 1];
            let d = self.directions[r];
            // point = o + d·D folds into the depth gradient
            let d_depth = rg.depth + rg.point[0] * d.x + rg.point[1] * d.y + rg.point[2] * d.z;
            if rg.seg.len() != channels && rg.seg.iter().any(|&v| v != 0.0) {
                return Err(Error::ShapeMismatch {
                    what: "ray segmentation gradient",
                    expected: channels,
                    actual: rg.seg.len(),
                });
            }
            g.clear();
            for i in range.clone() {
                let wi = self.w[i];
                let c = self.tape.color(i);
                let mut gi = d_depth * self.t[i] + rg.acc;
                if self.tape.has_color() {
                    for ch in 0..3 {
                        gi += rg.color[ch] * c[ch];
                        up.color[3 * i + ch] = wi * rg.color[ch];
                    }
                }
                if let Some(k) = self.seg_slot[i] {
                    let s = self.tape.seg_logits(k, channels);
                    for (ch, &gs) in rg.seg.iter().enumerate() {
                        gi += gs * s[ch];
                        up.seg[k * channels + ch] = wi * gs;
                    }
                }
                g.push(gi);
            }
            if need_sigma {
                // ∂L/∂σ_j = δ_j (T(j+1) g_j − Σ_{k>j} w_k g_k)
                let mut tail = 0.0;
                for (local, i) in range.enumerate().rev() {
                    let t_next = self.trans[i] - self.w[i];
                    up.density[i] = self.delta[i] * (t_next * g[local] - tail);
                    tail += self.w[i] * g[local];
                }
            }
        }
        field::backward(params, &self.tape, &up, mask, grad)
    }
}

/// Renders one ray with every head.
pub fn render_ray(params: &FieldParams, ray: &Ray, samples: &RaySamples) -> Result<RayRender> {
    let mut b = render_rays(params, core::slice::from_ref(ray), core::slice::from_ref(samples), RenderOptions::FULL)?;
    Ok(b.outputs.pop().unwrap())
}

/// Grid of rendered rays (a strided patch or a full image).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPatch {
    pub height: usize,
    pub width: usize,
    pub seg_channels: usize,
    /// `n × 3`.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    /// `n × 3`.
    pub point: Vec<f64>,
    /// `n × C_s`; empty when segmentation was not rendered.
    pub seg: Vec<f64>,
    pub acc: Vec<f64>,
}

impl RenderedPatch {
    pub fn from_rays(height: usize, width: usize, seg_channels: usize, rays: &[RayRender]) -> Self {
        let n = rays.len();
        debug_assert_eq!(n, height * width);
        let has_seg = rays.first().is_some_and(|r| !r.seg.is_empty());
        let mut p = RenderedPatch {
            height,
            width,
            seg_channels,
            color: Vec::with_capacity(n * 3),
            depth: Vec::with_capacity(n),
            point: Vec::with_capacity(n * 3),
            seg: Vec::with_capacity(if has_seg { n * seg_channels } else { 0 }),
            acc: Vec::with_capacity(n),
        };
        for r in rays {
            p.color.extend_from_slice(&r.color);
            p.depth.push(r.depth);
            p.point.extend_from_slice(&r.point.to_array());
            if has_seg {
                p.seg.extend_from_slice(&r.seg);
            }
            p.acc.push(r.acc);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }
}

/// Renders a patch given per-ray samples.
pub fn render_patch(
    params: &FieldParams,
    patch: &PatchRays,
    samples: &[RaySamples],
    opts: RenderOptions,
) -> Result<RenderedPatch> {
    let b = render_rays(params, &patch.rays, samples, opts)?;
    Ok(RenderedPatch::from_rays(
        patch.size,
        patch.size,
        params.config().seg_channels,
        &b.outputs,
    ))
}

/// Renders every pixel of a view with midpoint samples, `chunk_size` rays at a
/// time. The output does not depend on `chunk_size`.
pub fn render_view(
    params: &FieldParams,
    camera: &CameraModel,
    pose: &Pose,
    samples_per_ray: usize,
    chunk_size: usize,
    opts: RenderOptions,
) -> Result<RenderedPatch> {
    if chunk_size == 0 {
        return Err(invalid!("chunk_size must be at least 1"));
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let n = w * h;
    let base = stratified_samples::<rand_chacha::ChaCha8Rng>(camera.near, camera.far, samples_per_ray, None)?;
    let chunks = n.div_ceil(chunk_size);
    let results = exec::map_indexed(chunks, |c| {
        let start = c * chunk_size;
        let end = (start + chunk_size).min(n);
        let rays: Vec<Ray> = (start..end)
            .map(|i| pixel_center_ray(camera, pose, (i % w) as u32, (i / w) as u32))
            .collect();
        let samples = vec![base.clone(); rays.len()];
        render_rays(params, &rays, &samples, opts).map(|b| b.outputs)
    });
    let mut rays = Vec::with_capacity(n);
    for r in results {
        rays.extend(r?);
    }
    Ok(RenderedPatch::from_rays(h, w, params.config().seg_channels, &rays))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transparent_medium() {
        let (w, t) = weights(&[0.0; 4], &[0.5; 4]).unwrap();
        assert_eq!(w, [0.0; 4]);
        assert_eq!(t, [1.0; 4]);
    }

    #[test]
    fn opaque_first_sample() {
        let (w, _) = weights(&[1e9, 1.0, 1.0], &[1.0; 3]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert!(w[1] < 1e-300 && w[2] < 1e-300);
    }

    #[test]
    fn negative_density_rejected() {
        assert!(weights(&[0.1, -0.1], &[1.0, 1.0]).is_err());
        assert!(weights(&[0.1, 0.1], &[1.0, 0.0]).is_err());
    }
}
