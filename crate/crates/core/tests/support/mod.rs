//! Checks shared by the core test suites and the acceptance runner.
//!
//! Every check returns `Ok(summary)` or `Err(what went wrong)`. The oracles
//! here are written from the definitions, loop by loop, and deliberately
//! share no code with the implementation beyond its public entry points.
#![allow(dead_code)]

use nfseg_core::camera::{CameraModel, Pose};
use nfseg_core::correspond::{self, VolumeKind, NORM_EPS};
use nfseg_core::field::{self, FieldConfig, FieldParams, GroupMask};
use nfseg_core::losses::{self, GeometryPreset, LossWeights, PatchBatch, SegVolume};
use nfseg_core::math::Vec3;
use nfseg_core::metrics;
use nfseg_core::ray::{stratified_samples, Ray, RaySamples};
use nfseg_core::render::{self, render_rays, RenderOptions, SegMode};
use nfseg_core::scene::Scene;
use nfseg_core::synthetic::{make_synthetic_scene, SyntheticSpec};
use nfseg_core::train::{self, PatchInputs, TrainConfig};
use nfseg_core::EncodingConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const ORACLE_TOL: f64 = 1e-10;
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn worst(errs: &mut f64, a: f64, b: f64) {
    *errs = errs.max((a - b).abs() / b.abs().max(1.0));
}

pub fn tiny_field(seed: u64, seg_channels: usize) -> FieldParams {
    tiny_field_with(seed, seg_channels, 4)
}

/// `W = 16`, `D = 2` field with `freqs` position frequencies (half as many
/// for directions).
pub fn tiny_field_with(seed: u64, seg_channels: usize, freqs: usize) -> FieldParams {
    let cfg = FieldConfig {
        encoding: EncodingConfig {
            pos_freqs: freqs,
            dir_freqs: freqs.div_ceil(2),
        },
        trunk_depth: 2,
        trunk_width: 16,
        color_hidden: 16,
        seg_hidden: 16,
        seg_channels,
        density_bias: 0.5,
        position_scale: 1.0,
    };
    FieldParams::init(cfg, seed).unwrap()
}

fn unit(r: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.length() > 0.1 && v.length() <= 1.0 {
            return v.normalized();
        }
    }
}

fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// `T(k) = Π_{l<k} exp(−σ_l δ_l)`, `w_k = T(k)·(1 − exp(−σ_k δ_k))`.
pub fn oracle_weights(sigma: &[f64], delta: &[f64]) -> (Vec<f64>, f64) {
    let mut w = Vec::new();
    let mut t = 1.0;
    for k in 0..sigma.len() {
        let keep = (-sigma[k] * delta[k]).exp();
        w.push(t * (1.0 - keep));
        t *= keep;
    }
    (w, t)
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for c in 0..a.len() {
        dot += a[c] * b[c];
        na += a[c] * a[c];
        nb += b[c] * b[c];
    }
    dot / ((na.sqrt() + NORM_EPS) * (nb.sqrt() + NORM_EPS))
}

fn oracle_geometry(p: &[f64], q: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        s += 1.0 / ((p[c] - q[c]).abs() + eps);
    }
    s
}

/// `−Σ_{h,w,h',w'} (V − b)·S` with `V` and `S` evaluated entry by entry.
fn oracle_correlation<V, S>(pa: usize, pb: usize, b: f64, vol: V, seg: S) -> f64
where
    V: Fn(usize, usize, usize, usize) -> f64,
    S: Fn(usize, usize, usize, usize) -> f64,
{
    let mut total = 0.0;
    for h in 0..pa {
        for w in 0..pa {
            for h2 in 0..pb {
                for w2 in 0..pb {
                    total -= (vol(h, w, h2, w2) - b) * seg(h, w, h2, w2);
                }
            }
        }
    }
    total
}

/// Negative partner of patch `i`: the least cosine-similar pooled descriptor.
fn oracle_negative(features: &[Vec<f64>], channels: usize, i: usize) -> usize {
    let pooled: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let n = f.len() / channels;
            (0..channels).map(|c| (0..n).map(|k| f[k * channels + c]).sum::<f64>() / n as f64).collect()
        })
        .collect();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut best = (usize::MAX, f64::INFINITY);
    for j in 0..features.len() {
        if j != i {
            let c = cos(&pooled[i], &pooled[j]);
            if c < best.1 {
                best = (j, c);
            }
        }
    }
    best.0
}

/// Weights, color, depth, logits and all correspondence volumes and losses
/// against brute-force scalar evaluations on random small instances.
pub fn oracle_equivalence(instances: usize) -> Check {
    let mut r = rng(101);
    let mut max_err = [0.0f64; 8];

    for i in 0..instances {
        // weights on raw (σ, δ)
        let k = r.random_range(1..24);
        let sigma: Vec<f64> = (0..k).map(|_| 10f64.powf(r.random_range(-3.0..1.5))).collect();
        let delta: Vec<f64> = (0..k).map(|_| r.random_range(0.01..0.5)).collect();
        let (w, _) = render::weights(&sigma, &delta).map_err(|e| e.to_string())?;
        let (ow, _) = oracle_weights(&sigma, &delta);
        for (a, b) in w.iter().zip(&ow) {
            worst(&mut max_err[0], *a, *b);
        }

        // rendered color, depth, opacity and logits through a field
        let params = tiny_field(i as u64, 3);
        let ray = Ray {
            origin: Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)),
            direction: unit(&mut r),
            near: 0.2,
            far: 2.5,
        };
        let count = r.random_range(2..16);
        let samples = stratified_samples(ray.near, ray.far, count, Some(&mut r)).map_err(|e| e.to_string())?;
        let out = render::render_ray(&params, &ray, &samples).map_err(|e| e.to_string())?;
        let mut sig = Vec::new();
        let mut outs = Vec::new();
        for &t in &samples.t {
            let p = ray.origin + ray.direction * t;
            let o = field::forward(&params, p.to_array(), ray.direction.to_array()).map_err(|e| e.to_string())?;
            sig.push(o.density);
            outs.push(o);
        }
        let (ow, _) = oracle_weights(&sig, &samples.delta);
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        let mut acc = 0.0;
        let mut seg = [0.0; 3];
        for (k, o) in outs.iter().enumerate() {
            for c in 0..3 {
                color[c] += ow[k] * o.color[c];
                seg[c] += ow[k] * o.seg[c];
            }
            depth += ow[k] * samples.t[k];
            acc += ow[k];
        }
        for c in 0..3 {
            worst(&mut max_err[1], out.color[c], color[c]);
            worst(&mut max_err[1], out.seg[c], seg[c]);
            worst(&mut max_err[2], out.point.to_array()[c], (ray.origin + ray.direction * depth).to_array()[c]);
        }
        worst(&mut max_err[1], out.acc, acc);
        worst(&mut max_err[2], out.depth, depth);

        // F and S volumes between two patches of different sizes
        let (pa, pb) = (r.random_range(1..5), r.random_range(1..5));
        let ch = r.random_range(1..6);
        let fa = random_vec(&mut r, pa * pa * ch, -1.0, 1.0);
        let fb = random_vec(&mut r, pb * pb * ch, -1.0, 1.0);
        let fv = correspond::cosine_volume(&fa, &fb, ch, NORM_EPS, VolumeKind::Appearance).map_err(|e| e.to_string())?;
        let cs = r.random_range(1..4);
        let sa = random_vec(&mut r, pa * pa * cs, -2.0, 2.0);
        let sb = random_vec(&mut r, pb * pb * cs, -2.0, 2.0);
        let sv = SegVolume::new(&sa, &sb, cs).map_err(|e| e.to_string())?;
        let ga = random_vec(&mut r, pa * pa * 3, -1.0, 1.0);
        let gb = random_vec(&mut r, pb * pb * 3, -1.0, 1.0);
        let eps = r.random_range(0.005..0.2);
        let gv = correspond::geometry_volume(&ga, &gb, eps).map_err(|e| e.to_string())?;
        let cell = |v: &[f64], c: usize, p: usize, h: usize, w: usize| v[(h * p + w) * c..(h * p + w + 1) * c].to_vec();
        let f_at = |h, w, h2, w2| oracle_cosine(&cell(&fa, ch, pa, h, w), &cell(&fb, ch, pb, h2, w2));
        let s_at = |h, w, h2, w2| oracle_cosine(&cell(&sa, cs, pa, h, w), &cell(&sb, cs, pb, h2, w2));
        let g_at = |h, w, h2, w2| oracle_geometry(&cell(&ga, 3, pa, h, w), &cell(&gb, 3, pb, h2, w2), eps);
        for h in 0..pa {
            for w in 0..pa {
                for h2 in 0..pb {
                    for w2 in 0..pb {
                        worst(&mut max_err[3], fv.at(h, w, h2, w2, pa, pb), f_at(h, w, h2, w2));
                        worst(&mut max_err[4], sv.volume.at(h, w, h2, w2, pa, pb), s_at(h, w, h2, w2));
                        worst(&mut max_err[5], gv.at(h, w, h2, w2, pa, pb), g_at(h, w, h2, w2));
                    }
                }
            }
        }

        // correlation losses
        let b = r.random_range(-1.0..3.0);
        let app = losses::correlation_loss(&fv, &sv, b).map_err(|e| e.to_string())?;
        worst(&mut max_err[6], app.loss, oracle_correlation(pa, pb, b, f_at, s_at));
        let geo = losses::correlation_loss(&gv, &sv, b).map_err(|e| e.to_string())?;
        worst(&mut max_err[6], geo.loss, oracle_correlation(pa, pb, b, g_at, s_at));

        // full appearance and geometry losses over a batch of patches
        let n = r.random_range(2..5);
        let p = r.random_range(1..4);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, p * p * ch, 0.0, 1.0)).collect();
        let segs: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, p * p * cs, -2.0, 2.0)).collect();
        let pts: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, p * p * 3, -1.0, 1.0)).collect();
        let descriptors: Vec<_> = feats
            .iter()
            .map(|f| correspond::patch_descriptor(f, ch))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let pairs = correspond::select_pairs(&descriptors).map_err(|e| e.to_string())?;
        for i in 0..n {
            if pairs.negatives[i] != (i, oracle_negative(&feats, ch, i)) && !pairs.low_contrast[i] {
                return Err(format!("negative of patch {i} is {:?}", pairs.negatives[i]));
            }
        }
        let weights = LossWeights {
            identity: r.random_range(0.1..2.0),
            negative: r.random_range(0.1..2.0),
            b_id_app: r.random_range(0.0..1.0),
            b_neg_app: r.random_range(0.0..1.0),
            ..LossWeights::segmentation_stage(GeometryPreset::Llff)
        };
        let app = losses::app_loss(&pairs, &feats, ch, &segs, cs, &weights).map_err(|e| e.to_string())?;
        let geo = losses::geo_loss(&pairs, &pts, &segs, cs, eps, &weights).map_err(|e| e.to_string())?;
        let (mut app_o, mut geo_o) = (0.0, 0.0);
        for (list, lam, b_app, b_geo) in [
            (&pairs.positives, weights.identity, weights.b_id_app, weights.b_id_geo),
            (&pairs.negatives, weights.negative, weights.b_neg_app, weights.b_neg_geo),
        ] {
            for &(a, c) in list.iter() {
                let s_at = |h, w, h2, w2| oracle_cosine(&cell(&segs[a], cs, p, h, w), &cell(&segs[c], cs, p, h2, w2));
                let f_at = |h, w, h2, w2| oracle_cosine(&cell(&feats[a], ch, p, h, w), &cell(&feats[c], ch, p, h2, w2));
                let g_at = |h, w, h2, w2| oracle_geometry(&cell(&pts[a], 3, p, h, w), &cell(&pts[c], 3, p, h2, w2), eps);
                app_o += lam / n as f64 * oracle_correlation(p, p, b_app, f_at, s_at);
                geo_o += lam / n as f64 * oracle_correlation(p, p, b_geo, g_at, s_at);
            }
        }
        worst(&mut max_err[7], app.loss, app_o);
        worst(&mut max_err[7], geo.loss, geo_o);
    }
    let names = [
        "weights",
        "color/opacity/logits",
        "depth/point",
        "F volume",
        "S volume",
        "G volume",
        "correlation",
        "app/geo loss",
    ];
    let detail: Vec<String> = names.iter().zip(&max_err).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    if max_err.iter().all(|&e| e <= ORACLE_TOL) {
        Ok(format!("{instances} instances, max rel err: {}", detail.join(", ")))
    } else {
        Err(format!("tolerance {ORACLE_TOL:.0e} exceeded: {}", detail.join(", ")))
    }
}

/// A small scene and a fixed stage-2 batch for the gradient suite
/// (`W = 16`, `D = 2`, `P = 4`, `K = 4`, `N = 2`).
pub struct GradientFixture {
    pub scene: Scene,
    pub params: FieldParams,
    pub inputs: PatchInputs,
    pub points: Vec<Vec<f64>>,
}

pub fn gradient_fixture() -> GradientFixture {
    let mut spec = SyntheticSpec::single_sphere();
    spec.width = 16;
    spec.height = 16;
    spec.views = 4;
    spec.test_every = 4;
    let scene = make_synthetic_scene(&spec, 5).unwrap();
    // one frequency keeps the O(h²) truncation error of a 1e-4 step small
    let mut params = tiny_field_with(13, 2, 1);
    // Biases start at zero, so a row whose previous layer is fully inactive
    // sits exactly on a ReLU kink. Jitter every parameter to leave it.
    let mut jitter = rng(17);
    for v in params.as_mut_slice() {
        *v += jitter.random_range(-0.05..0.05);
    }
    let config = TrainConfig {
        patches: 2,
        patch_size: 4,
        stride: 2,
        samples: 4,
        ..TrainConfig::desk()
    };
    let (patches, samples) = train::sample_patches(&scene, &config, &mut rng(3)).unwrap();
    let inputs = train::gather_patch_inputs(&scene, patches, samples).unwrap();
    let points = inputs
        .patches
        .iter()
        .zip(&inputs.samples)
        .map(|(p, s)| {
            let b = render_rays(&params, &p.rays, s, RenderOptions::FULL).unwrap();
            b.outputs.iter().flat_map(|o| o.point.to_array()).collect()
        })
        .collect();
    GradientFixture {
        scene,
        params,
        inputs,
        points,
    }
}

/// The balanced loss with the rendered points frozen at the fixture's.
fn frozen_point_loss(fx: &GradientFixture, params: &FieldParams, w: &LossWeights) -> f64 {
    let mut colors = Vec::new();
    let mut seg = Vec::new();
    for (p, s) in fx.inputs.patches.iter().zip(&fx.inputs.samples) {
        let b = render_rays(params, &p.rays, s, RenderOptions::FULL).unwrap();
        colors.push(b.outputs.iter().flat_map(|o| o.color).collect::<Vec<f64>>());
        seg.push(b.outputs.iter().flat_map(|o| o.seg.clone()).collect::<Vec<f64>>());
    }
    let pairs = correspond::select_pairs(&fx.inputs.descriptors).unwrap();
    let batch = PatchBatch {
        colors: &colors,
        truth: &fx.inputs.truth,
        features: &fx.inputs.features,
        feature_channels: fx.inputs.feature_channels,
        points: &fx.points,
        seg: &seg,
        seg_channels: params.config().seg_channels,
        pairs: &pairs,
        geometry_eps: correspond::GEOMETRY_EPS,
    };
    losses::total_loss(&batch, w).unwrap().0.total
}

fn stage1_rays(fx: &GradientFixture) -> (Vec<Ray>, Vec<RaySamples>, Vec<[f64; 3]>) {
    let mut rays = Vec::new();
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    for (p, s) in fx.inputs.patches.iter().zip(&fx.inputs.samples) {
        let view = &fx.scene.views[p.view];
        for (k, &(x, y)) in p.pixels.iter().enumerate() {
            rays.push(p.rays[k]);
            samples.push(s[k].clone());
            truth.push(view.pixel(&fx.scene.camera, x as usize, y as usize));
        }
    }
    (rays, samples, truth)
}

/// Every field query of the fixture's batch.
fn fixture_queries(fx: &GradientFixture) -> Vec<field::FieldQuery> {
    let mut q = Vec::new();
    for (p, s) in fx.inputs.patches.iter().zip(&fx.inputs.samples) {
        for (ray, rs) in p.rays.iter().zip(s) {
            for &t in &rs.t {
                q.push(field::FieldQuery {
                    position: ray.at(t).to_array(),
                    direction: ray.direction.to_array(),
                });
            }
        }
    }
    q
}

/// Result of a finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdStats {
    /// Largest relative error among entries above the noise floor.
    pub max_rel: f64,
    /// Entries out of tolerance.
    pub bad: usize,
    /// Entries whose `±h` window crossed a ReLU kink and used a smaller step.
    pub kinked: usize,
}

/// Compares an analytic gradient with central differences of `f` over every
/// parameter, at step `FD_STEP`. Where the ReLU pattern at `x ± h` differs
/// from the one at `x` the loss is not smooth over the window, and the step
/// is halved until both sides share the base pattern.
pub fn compare_fd<F, P>(params: &FieldParams, analytic: &[f64], mut f: F, pattern: P) -> FdStats
where
    F: FnMut(&FieldParams) -> f64,
    P: Fn(&FieldParams) -> Vec<bool>,
{
    let base = pattern(params);
    // summation roundoff in the loss, amplified by 1/h
    let floor = 1e-7 * analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let mut p = params.clone();
    let mut stats = FdStats {
        max_rel: 0.0,
        bad: 0,
        kinked: 0,
    };
    for i in 0..params.len() {
        let x = params.as_slice()[i];
        let mut h = FD_STEP;
        loop {
            p.as_mut_slice()[i] = x + h;
            let same_up = pattern(&p) == base;
            p.as_mut_slice()[i] = x - h;
            let same_down = pattern(&p) == base;
            if (same_up && same_down) || h < 1e-9 {
                break;
            }
            h /= 2.0;
        }
        if h < FD_STEP {
            stats.kinked += 1;
        }
        p.as_mut_slice()[i] = x + h;
        let up = f(&p);
        p.as_mut_slice()[i] = x - h;
        let down = f(&p);
        p.as_mut_slice()[i] = x;
        let fd = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(fd.abs());
        let diff = (a - fd).abs();
        // below the floor an entry is judged on absolute error
        let rel = diff / scale.max(floor / FD_TOL);
        stats.max_rel = stats.max_rel.max(rel);
        if rel > FD_TOL {
            stats.bad += 1;
        }
    }
    stats
}

/// Analytic gradients of the photometric, appearance, geometry and total
/// losses wrt every parameter against central finite differences.
pub fn gradient_suite() -> Check {
    let fx = gradient_fixture();
    let n_params = fx.params.len();
    let mut lines = Vec::new();
    let mut failed = false;

    let (rays, samples, truth) = stage1_rays(&fx);
    let queries = fixture_queries(&fx);
    let pattern = |p: &FieldParams| field::forward_batch(p, &queries).unwrap().relu_pattern();
    let mut kinked = 0;
    let (_, g) = train::photometric_batch(&fx.params, &rays, &samples, &truth).map_err(|e| e.to_string())?;
    let s = compare_fd(
        &fx.params,
        &g,
        |p| train::photometric_batch(p, &rays, &samples, &truth).unwrap().0,
        pattern,
    );
    failed |= s.bad > 0;
    kinked = kinked.max(s.kinked);
    lines.push(format!("photometric {:.1e}", s.max_rel));

    let llff = LossWeights::segmentation_stage(GeometryPreset::Llff);
    let arms = [
        ("appearance", LossWeights { geometry: 0.0, ..llff }),
        ("geometry", LossWeights { appearance: 0.0, geometry: 1.0, ..llff }),
        ("total", LossWeights { photometric: 1.0, ..llff }),
    ];
    let opts = RenderOptions {
        color: true,
        seg: SegMode::All,
    };
    for (name, w) in arms {
        let (_, g, _) = train::segmentation_loss(&fx.params, &fx.inputs, &w, correspond::GEOMETRY_EPS, opts, GroupMask::ALL)
            .map_err(|e| e.to_string())?;
        let s = compare_fd(&fx.params, &g, |p| frozen_point_loss(&fx, p, &w), pattern);
        failed |= s.bad > 0;
        kinked = kinked.max(s.kinked);
        let bad = if s.bad > 0 { format!(" ({} bad)", s.bad) } else { String::new() };
        lines.push(format!("{name} {:.1e}{bad}", s.max_rel));
    }
    let msg = format!(
        "{n_params} params, max rel err: {}; {kinked} straddled a ReLU kink at h = {FD_STEP:.0e}",
        lines.join(", ")
    );
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

/// Weight-range, opacity and depth-bound properties over random `(σ, δ)`,
/// plus chunk-size independence of full-view rendering.
pub fn rendering_invariants(draws: usize) -> Check {
    let mut r = rng(202);
    for d in 0..draws {
        let k = r.random_range(1..65);
        let sigma: Vec<f64> = (0..k)
            .map(|_| if r.random_bool(0.1) { 0.0 } else { 10f64.powf(r.random_range(-4.0..3.0)) })
            .collect();
        let delta: Vec<f64> = (0..k).map(|_| 10f64.powf(r.random_range(-3.0..0.0))).collect();
        let t1 = r.random_range(0.0..2.0);
        let mut t = vec![t1];
        for i in 1..k {
            t.push(t[i - 1] + delta[i - 1]);
        }
        let (w, trans) = render::weights(&sigma, &delta).map_err(|e| e.to_string())?;
        let mut wt = vec![0.0; k];
        let mut tt = vec![0.0; k];
        let t_end = render::weights_into(&sigma, &delta, &mut wt, &mut tt).map_err(|e| e.to_string())?;
        if wt != w || tt != trans {
            return Err(format!("draw {d}: weights and weights_into disagree"));
        }
        if let Some(x) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(format!("draw {d}: weight {x} outside [0, 1]"));
        }
        let acc: f64 = w.iter().sum();
        if (acc - (1.0 - t_end)).abs() > 1e-12 || acc > 1.0 + 1e-12 {
            return Err(format!("draw {d}: Σw = {acc}, 1 − T(K+1) = {}", 1.0 - t_end));
        }
        let depth: f64 = w.iter().zip(&t).map(|(a, b)| a * b).sum();
        // depth is unnormalized, so the bound is on D / acc
        if acc > 0.0 {
            let lo = acc * t[0] * (1.0 - 1e-12);
            let hi = acc * t[k - 1] * (1.0 + 1e-12);
            if depth < lo || depth > hi {
                return Err(format!("draw {d}: D/acc = {} outside [{}, {}]", depth / acc, t[0], t[k - 1]));
            }
        }
    }

    let params = tiny_field(4, 2);
    let camera = CameraModel::from_fov(9, 7, 45.0, 0.5, 3.0);
    let pose = Pose::look_at(Vec3::new(0.3, 0.4, 2.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
    let reference = render::render_view(&params, &camera, &pose, 8, 1, RenderOptions::FULL).map_err(|e| e.to_string())?;
    for chunk in [2, 5, 17, 64, 4096] {
        let v = render::render_view(&params, &camera, &pose, 8, chunk, RenderOptions::FULL).map_err(|e| e.to_string())?;
        if v != reference {
            return Err(format!("chunk size {chunk} changes the render"));
        }
    }
    let base = stratified_samples::<ChaCha8Rng>(camera.near, camera.far, 8, None).map_err(|e| e.to_string())?;
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = nfseg_core::ray::pixel_center_ray(&camera, &pose, x, y);
            let one = render::render_ray(&params, &ray, &base).map_err(|e| e.to_string())?;
            let i = (y * camera.width + x) as usize;
            if one.color[..] != reference.color[3 * i..3 * i + 3]
                || one.depth != reference.depth[i]
                || one.acc != reference.acc[i]
                || one.seg[..] != reference.seg[2 * i..2 * i + 2]
            {
                return Err(format!("pixel ({x}, {y}) differs between per-pixel and chunked rendering"));
            }
        }
    }
    Ok(format!("{draws} draws in range; chunked == per-pixel bit for bit"))
}

/// Hand-computed ARI cases: `(pred, truth, value)`.
pub fn ari_cases() -> Vec<(Vec<u32>, Vec<u32>, f64)> {
    vec![
        (vec![0, 0, 1, 1], vec![5, 5, 7, 7], 1.0),
        (vec![0, 0, 1, 1], vec![0, 1, 0, 1], -0.5),
        (vec![0, 0, 0, 1, 1, 1], vec![0, 0, 1, 1, 2, 2], 8.0 / 33.0),
        (vec![0, 0, 1, 2, 2, 2, 2], vec![0, 0, 0, 1, 1, 1, 1], 0.8),
        (vec![0, 0, 0, 0], vec![0, 0, 1, 1], 0.0),
    ]
}

/// Two fixed 24×20 RGB images and a third unrelated one.
pub fn ssim_images() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (w, h) = (24usize, 20usize);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut g = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let (xf, yf, cf) = (x as f64, y as f64, c as f64);
                let av = 0.5 + 0.4 * (0.37 * xf + 0.71 * yf + 1.3 * cf).sin();
                a.push(av);
                b.push((av + 0.15 * (0.53 * xf - 0.29 * yf * cf + 0.4).cos()).clamp(0.0, 1.0));
                g.push(0.5 + 0.45 * (0.11 * xf * yf + 0.9 * cf).sin());
            }
        }
    }
    (a, b, g)
}

/// Mean SSIM of `ssim_images` pairs from an established reference
/// implementation (gaussian σ = 1.5, population covariances, data range 1).
pub const SSIM_REFERENCE: [f64; 2] = [0.9381538347129705, -0.04840934526596546];

/// ARI hand cases and relabeling invariance, PSNR analytic value, SSIM
/// identity and reference values.
pub fn metric_validation() -> Check {
    for (i, (p, t, v)) in ari_cases().into_iter().enumerate() {
        let got = metrics::ari(&p, &t).map_err(|e| e.to_string())?;
        if (got - v).abs() > 1e-12 {
            return Err(format!("ARI case {i}: {got} vs {v}"));
        }
    }
    let mut r = rng(303);
    for round in 0..100 {
        let n = r.random_range(20..200);
        let kp = r.random_range(1..7);
        let kt = r.random_range(1..7);
        let pred: Vec<u32> = (0..n).map(|_| r.random_range(0..kp)).collect();
        let truth: Vec<u32> = (0..n).map(|_| r.random_range(0..kt)).collect();
        let mut perm: Vec<u32> = (0..kp).map(|k| 100 + 7 * k).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let relabeled: Vec<u32> = pred.iter().map(|&l| perm[l as usize]).collect();
        let a = metrics::ari(&pred, &truth).map_err(|e| e.to_string())?;
        let b = metrics::ari(&relabeled, &truth).map_err(|e| e.to_string())?;
        let c = metrics::ari(&truth, &relabeled).map_err(|e| e.to_string())?;
        if (a - b).abs() > 1e-12 || (a - c).abs() > 1e-12 {
            return Err(format!("relabeling round {round} changed ARI: {a} {b} {c}"));
        }
    }
    let p = metrics::psnr_from_mse(0.01).map_err(|e| e.to_string())?;
    if p != 20.0 {
        return Err(format!("PSNR at MSE 0.01 is {p}"));
    }
    let (a, b, g) = ssim_images();
    let s_self = metrics::ssim(&a, &a, 24, 20, 3).map_err(|e| e.to_string())?;
    if (s_self - 1.0).abs() > 1e-15 {
        return Err(format!("self SSIM is {s_self}"));
    }
    let s_ab = metrics::ssim(&a, &b, 24, 20, 3).map_err(|e| e.to_string())?;
    let s_ag = metrics::ssim(&a, &g, 24, 20, 3).map_err(|e| e.to_string())?;
    for (got, want) in [s_ab, s_ag].into_iter().zip(SSIM_REFERENCE) {
        if (got - want).abs() > 1e-6 {
            return Err(format!("SSIM {got} vs reference {want}"));
        }
    }
    Ok(format!(
        "5 ARI cases, 100 relabelings, PSNR(0.01) = {p}, SSIM self = {s_self}, ref err {:.1e}/{:.1e}",
        (s_ab - SSIM_REFERENCE[0]).abs(),
        (s_ag - SSIM_REFERENCE[1]).abs()
    ))
}
