//! Two-stage optimization: radiance first, then the segmentation head alone.
//!
//! Each iteration draws its randomness from a ChaCha8 stream selected by
//! `(seed, stage, iteration)`, so a run resumed from a saved [`TrainState`]
//! reproduces the uninterrupted run bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspond::{self, PairSet, PatchDescriptor, GEOMETRY_EPS};
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::field::{FieldConfig, FieldParams, GroupMask, ParamGroup};
use crate::losses::{self, GeometryPreset, LossReport, LossWeights, PatchBatch};
use crate::optim::{exponential_lr, Adam, AdamConfig};
use crate::ray::{pixel_center_ray, sample_strided_patch, stratified_samples, PatchRays, Ray, RaySamples};
use crate::render::{render_rays, BatchRender, RayGrad, RenderOptions, SegMode};
use crate::scene::Scene;

/// Rays rendered per work item; fixed so results never depend on the thread count.
pub const RAY_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub field: FieldConfig,
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub lr: f64,
    /// Learning rate of the segmentation stage.
    pub stage2_lr: f64,
    /// Factor the learning rate reaches at the end of each stage.
    pub lr_decay: f64,
    pub adam: AdamConfig,
    /// Random rays per stage-1 iteration.
    pub rays_per_batch: usize,
    /// Patches (and distinct views) per stage-2 iteration, `N`.
    pub patches: usize,
    /// Patch side `P`.
    pub patch_size: usize,
    /// Pixel stride `k` between patch rays.
    pub stride: usize,
    /// Samples per ray `K`.
    pub samples: usize,
    pub weights: LossWeights,
    pub geometry_eps: f64,
    /// Evaluate the segmentation head only at samples whose weight exceeds
    /// this value during stage 2.
    pub seg_cutoff: Option<f64>,
    /// Stage 2 also updates the radiance parameters.
    pub joint: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
}

impl TrainConfig {
    /// Full-scale recipe: 150k + 50k iterations, `N = 8`, `64 × 64` patches at stride 6.
    pub fn paper() -> Self {
        Self {
            field: FieldConfig::default(),
            stage1_iters: 150_000,
            stage2_iters: 50_000,
            lr: 5e-4,
            stage2_lr: 5e-4,
            lr_decay: 0.1,
            adam: AdamConfig::default(),
            rays_per_batch: 1024,
            patches: 8,
            patch_size: 64,
            stride: 6,
            samples: 64,
            weights: LossWeights::segmentation_stage(GeometryPreset::Llff),
            geometry_eps: GEOMETRY_EPS,
            seg_cutoff: None,
            joint: false,
            seed: 0,
            checkpoint_every: 10_000,
            eval_every: 10_000,
        }
    }

    /// Reduced profile for a single workstation and 64×64 synthetic scenes.
    pub fn desk() -> Self {
        let paper = Self::paper();
        Self {
            field: FieldConfig {
                trunk_width: 64,
                seg_hidden: 64,
                position_scale: 4.0,
                ..paper.field
            },
            stage1_iters: 1000,
            stage2_iters: 100,
            lr: 2e-3,
            stage2_lr: 1e-3,
            patch_size: 16,
            stride: 2,
            samples: 32,
            rays_per_batch: 256,
            seg_cutoff: Some(1e-3),
            checkpoint_every: 250,
            eval_every: 0,
            ..paper
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.weights.validate()?;
        if self.patches < 2 {
            return Err(invalid!("need at least 2 patches per iteration"));
        }
        if self.patch_size == 0 || self.stride == 0 || self.samples < 2 || self.rays_per_batch == 0 {
            return Err(invalid!("patch size, stride, ray batch must be positive and samples ≥ 2"));
        }
        let rates = [self.lr, self.stage2_lr, self.lr_decay];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid!("learning rates and decay must be positive"));
        }
        if !(self.geometry_eps > 0.0) {
            return Err(invalid!("geometry ε must be positive"));
        }
        Ok(())
    }

    fn stage2_mask(&self) -> GroupMask {
        if self.joint {
            GroupMask::ALL
        } else {
            GroupMask::SEGMENTATION
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Radiance,
    Segmentation,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Radiance => 1,
            Stage::Segmentation => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::Radiance),
            2 => Ok(Stage::Segmentation),
            _ => Err(invalid!("unknown stage {n}")),
        }
    }
}

/// Everything needed to continue training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub stage: Stage,
    /// Completed iterations of the current stage.
    pub iteration: u64,
    pub params: FieldParams,
    pub optimizer: Adam,
    pub seed: u64,
}

impl TrainState {
    /// Freshly initialized field at the start of stage 1.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = FieldParams::init(config.field, config.seed)?;
        let radiance = 0..params.group_range(ParamGroup::Segmentation).start;
        Ok(Self {
            stage: Stage::Radiance,
            iteration: 0,
            optimizer: Adam::new(config.adam, radiance),
            params,
            seed: config.seed,
        })
    }

    /// Moves to stage 2 with fresh moments over the trainable range.
    pub fn begin_stage2(&mut self, config: &TrainConfig) {
        let range = if config.joint {
            0..self.params.len()
        } else {
            self.params.group_range(ParamGroup::Segmentation)
        };
        self.stage = Stage::Segmentation;
        self.iteration = 0;
        self.optimizer = Adam::new(config.adam, range);
    }
}

/// Per-iteration record for logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub stage: u8,
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub photometric: f64,
    pub app: f64,
    pub geo: f64,
    /// Batch PSNR from the photometric term (per-channel MSE).
    pub psnr: f64,
    /// Rows of the pair similarity matrix without contrast.
    pub low_contrast: usize,
}

fn iteration_rng(seed: u64, stage: Stage, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * iteration + stage.number() as u64 - 1);
    rng
}

fn batch_psnr(photometric: f64) -> f64 {
    crate::metrics::psnr_from_mse(photometric / 3.0).unwrap_or(f64::NAN)
}

/// Applies one optimizer update, rolling back if it produces non-finite values.
fn apply_update(state: &mut TrainState, grad: &[f64], lr: f64) -> Result<()> {
    let before = state.optimizer.clone();
    let range = state.optimizer.range.clone();
    let saved: Vec<f64> = state.params.as_slice()[range.clone()].to_vec();
    let iteration = state.iteration;
    let diverged = match state.optimizer.step(state.params.as_mut_slice(), grad, lr) {
        Err(Error::NonFinite(_)) => true,
        Err(e) => return Err(e),
        Ok(()) => state.params.as_slice()[range.clone()].iter().any(|v| !v.is_finite()),
    };
    if diverged {
        state.optimizer = before;
        state.params.as_mut_slice()[range].copy_from_slice(&saved);
        return Err(Error::Diverged { iteration });
    }
    state.iteration += 1;
    Ok(())
}

fn as_divergence(e: Error, iteration: u64) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { iteration },
        other => other,
    }
}

/// Loss and full gradient of one stage-1 batch of rays with target colors.
pub fn photometric_batch(
    params: &FieldParams,
    rays: &[Ray],
    samples: &[RaySamples],
    truth: &[[f64; 3]],
) -> Result<(f64, Vec<f64>)> {
    let n = rays.len();
    if samples.len() != n || truth.len() != n {
        return Err(invalid!("rays, samples and targets must align"));
    }
    let chunks = n.div_ceil(RAY_CHUNK);
    let parts = exec::map_indexed(chunks, |c| -> Result<(f64, Vec<f64>)> {
        let range = c * RAY_CHUNK..((c + 1) * RAY_CHUNK).min(n);
        let b = render_rays(params, &rays[range.clone()], &samples[range.clone()], RenderOptions::RADIANCE)?;
        let mut loss = 0.0;
        let channels = params.config().seg_channels;
        let grads: Vec<RayGrad> = b
            .outputs
            .iter()
            .zip(&truth[range])
            .map(|(o, t)| {
                let mut g = RayGrad::zeros(channels);
                for ch in 0..3 {
                    let d = o.color[ch] - t[ch];
                    loss += d * d;
                    g.color[ch] = 2.0 * d / n as f64;
                }
                g
            })
            .collect();
        let mut grad = params.zero_grad();
        b.backward(params, &grads, GroupMask::RADIANCE, &mut grad)?;
        Ok((loss, grad))
    });
    let mut loss = 0.0;
    let mut grad = params.zero_grad();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss / n as f64, grad))
}

/// One stage-1 iteration: random rays from random training views.
pub fn stage1_step(scene: &Scene, config: &TrainConfig, state: &mut TrainState) -> Result<IterationLog> {
    if state.stage != Stage::Radiance {
        return Err(invalid!("stage-1 step on a stage-2 state"));
    }
    let train = &scene.split.train;
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let cam = &scene.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut rng = iteration_rng(state.seed, state.stage, state.iteration);
    let mut rays = Vec::with_capacity(config.rays_per_batch);
    let mut samples = Vec::with_capacity(config.rays_per_batch);
    let mut truth = Vec::with_capacity(config.rays_per_batch);
    for _ in 0..config.rays_per_batch {
        let pick = rng.random_range(0..train.len() * w * h);
        let view = &scene.views[train[pick / (w * h)]];
        let (x, y) = ((pick % (w * h)) % w, (pick % (w * h)) / w);
        let ray = pixel_center_ray(cam, &view.pose, x as u32, y as u32);
        samples.push(stratified_samples(cam.near, cam.far, config.samples, Some(&mut rng))?);
        rays.push(ray);
        truth.push(view.pixel(cam, x, y));
    }
    let iteration = state.iteration;
    let (loss, grad) =
        photometric_batch(&state.params, &rays, &samples, &truth).map_err(|e| as_divergence(e, iteration))?;
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    let lr = exponential_lr(config.lr, config.lr_decay, iteration, config.stage1_iters);
    apply_update(state, &grad, lr)?;
    Ok(IterationLog {
        stage: 1,
        iteration,
        lr,
        loss,
        photometric: loss,
        app: 0.0,
        geo: 0.0,
        psnr: batch_psnr(loss),
        low_contrast: 0,
    })
}

/// Strided patches with their targets, ready for the segmentation losses.
#[derive(Debug, Clone)]
pub struct PatchInputs {
    pub patches: Vec<PatchRays>,
    pub samples: Vec<Vec<RaySamples>>,
    /// Ground-truth colors per patch, `P² × 3`.
    pub truth: Vec<Vec<f64>>,
    /// Frozen features per patch, `P² × C'`.
    pub features: Vec<Vec<f64>>,
    pub feature_channels: usize,
    pub descriptors: Vec<PatchDescriptor>,
}

/// Gathers per-patch targets, features and descriptors from the scene.
pub fn gather_patch_inputs(
    scene: &Scene,
    patches: Vec<PatchRays>,
    samples: Vec<Vec<RaySamples>>,
) -> Result<PatchInputs> {
    let cam = &scene.camera;
    let mut truth = Vec::with_capacity(patches.len());
    let mut features = Vec::with_capacity(patches.len());
    let mut descriptors = Vec::with_capacity(patches.len());
    let mut feature_channels = None;
    for patch in &patches {
        let view = &scene.views[patch.view];
        let fm = view
            .features
            .as_ref()
            .ok_or_else(|| Error::MissingFeatures(view.id.clone()))?;
        if *feature_channels.get_or_insert(fm.channels) != fm.channels {
            return Err(invalid!("feature channel count differs across views"));
        }
        let mut t = Vec::with_capacity(patch.len() * 3);
        let mut f = vec![0.0; patch.len() * fm.channels];
        for (k, &(px, py)) in patch.pixels.iter().enumerate() {
            t.extend_from_slice(&view.pixel(cam, px as usize, py as usize));
            let out = &mut f[k * fm.channels..(k + 1) * fm.channels];
            fm.sample_into(px as f64, py as f64, cam.width, cam.height, out)?;
        }
        let descriptor = match &view.tokens {
            Some(tokens) => {
                let span = (patch.size * patch.stride) as f64;
                let cx = (patch.origin.0 as f64 + span / 2.0).min(cam.width as f64 - 1.0);
                let cy = (patch.origin.1 as f64 + span / 2.0).min(cam.height as f64 - 1.0);
                PatchDescriptor::from_token(&tokens.sample(cx, cy, cam.width, cam.height)?)?
            }
            None => correspond::patch_descriptor(&f, fm.channels)?,
        };
        truth.push(t);
        features.push(f);
        descriptors.push(descriptor);
    }
    Ok(PatchInputs {
        patches,
        samples,
        truth,
        features,
        feature_channels: feature_channels.unwrap_or(0),
        descriptors,
    })
}

/// Rendered patches plus everything needed for their backward pass.
pub struct PatchForward {
    pub renders: Vec<BatchRender>,
    pub pairs: PairSet,
}

fn render_options(config: &TrainConfig) -> RenderOptions {
    RenderOptions {
        color: config.weights.photometric != 0.0,
        seg: match config.seg_cutoff {
            Some(c) => SegMode::Cutoff(c),
            None => SegMode::All,
        },
    }
}

/// The balanced loss on a set of patches and its gradient wrt the parameters
/// in `mask`.
pub fn segmentation_loss(
    params: &FieldParams,
    inputs: &PatchInputs,
    weights: &LossWeights,
    geometry_eps: f64,
    opts: RenderOptions,
    mask: GroupMask,
) -> Result<(LossReport, Vec<f64>, PairSet)> {
    let n = inputs.patches.len();
    let channels = params.config().seg_channels;
    let renders: Vec<Result<BatchRender>> = exec::map_indexed(n, |i| {
        render_rays(params, &inputs.patches[i].rays, &inputs.samples[i], opts)
    });
    let renders: Vec<BatchRender> = renders.into_iter().collect::<Result<_>>()?;
    let pairs = correspond::select_pairs(&inputs.descriptors)?;
    let mut colors = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    let mut seg = Vec::with_capacity(n);
    for r in &renders {
        colors.push(r.outputs.iter().flat_map(|o| o.color).collect::<Vec<f64>>());
        points.push(r.outputs.iter().flat_map(|o| o.point.to_array()).collect::<Vec<f64>>());
        seg.push(r.outputs.iter().flat_map(|o| o.seg.iter().copied()).collect::<Vec<f64>>());
    }
    let batch = PatchBatch {
        colors: &colors,
        truth: &inputs.truth,
        features: &inputs.features,
        feature_channels: inputs.feature_channels,
        points: &points,
        seg: &seg,
        seg_channels: channels,
        pairs: &pairs,
        geometry_eps,
    };
    let (report, grads) = losses::total_loss(&batch, weights)?;
    let parts = exec::map_indexed(n, |i| -> Result<Vec<f64>> {
        let ray_grads: Vec<RayGrad> = (0..renders[i].len())
            .map(|r| RayGrad {
                color: [grads.color[i][3 * r], grads.color[i][3 * r + 1], grads.color[i][3 * r + 2]],
                depth: 0.0,
                point: [0.0; 3],
                seg: grads.seg[i][r * channels..(r + 1) * channels].to_vec(),
                acc: 0.0,
            })
            .collect();
        let mut g = params.zero_grad();
        renders[i].backward(params, &ray_grads, mask, &mut g)?;
        Ok(g)
    });
    let mut grad = params.zero_grad();
    for part in parts {
        for (a, b) in grad.iter_mut().zip(&part?) {
            *a += b;
        }
    }
    Ok((report, grad, pairs))
}

/// Draws the `N` patches of one stage-2 iteration from distinct training views.
pub fn sample_patches<R: Rng + ?Sized>(
    scene: &Scene,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(Vec<PatchRays>, Vec<Vec<RaySamples>>)> {
    let train = &scene.split.train;
    if train.len() < config.patches {
        return Err(invalid!(
            "{} patches need as many training views, have {}",
            config.patches,
            train.len()
        ));
    }
    let cam = &scene.camera;
    let picks = index::sample(rng, train.len(), config.patches);
    let mut patches = Vec::with_capacity(config.patches);
    let mut samples = Vec::with_capacity(config.patches);
    for k in picks.iter() {
        let v = train[k];
        let patch = sample_strided_patch(cam, &scene.views[v].pose, v, config.patch_size, config.stride, rng)?;
        let mut s = Vec::with_capacity(patch.len());
        for _ in 0..patch.len() {
            s.push(stratified_samples(cam.near, cam.far, config.samples, Some(&mut *rng))?);
        }
        patches.push(patch);
        samples.push(s);
    }
    Ok((patches, samples))
}

/// One stage-2 iteration.
pub fn stage2_step(scene: &Scene, config: &TrainConfig, state: &mut TrainState) -> Result<IterationLog> {
    if state.stage != Stage::Segmentation {
        return Err(invalid!("stage-2 step on a stage-1 state"));
    }
    let iteration = state.iteration;
    let mut rng = iteration_rng(state.seed, state.stage, iteration);
    let (patches, samples) = sample_patches(scene, config, &mut rng)?;
    let inputs = gather_patch_inputs(scene, patches, samples)?;
    let (report, grad, pairs) = segmentation_loss(
        &state.params,
        &inputs,
        &config.weights,
        config.geometry_eps,
        render_options(config),
        config.stage2_mask(),
    )
    .map_err(|e| as_divergence(e, iteration))?;
    if !report.total.is_finite() {
        return Err(Error::Diverged { iteration });
    }
    let lr = exponential_lr(config.stage2_lr, config.lr_decay, iteration, config.stage2_iters);
    apply_update(state, &grad, lr)?;
    Ok(IterationLog {
        stage: 2,
        iteration,
        lr,
        loss: report.total,
        photometric: report.photometric,
        app: report.app,
        geo: report.geo,
        psnr: batch_psnr(report.photometric),
        low_contrast: pairs.low_contrast.iter().filter(|&&l| l).count(),
    })
}

/// Runs stage 1 from the state's current iteration to the configured end.
pub fn train_stage1(scene: &Scene, config: &TrainConfig, state: &mut TrainState) -> Result<Vec<IterationLog>> {
    config.validate()?;
    let mut logs = Vec::new();
    while state.iteration < config.stage1_iters {
        logs.push(stage1_step(scene, config, state)?);
    }
    Ok(logs)
}

/// Runs stage 2 from the state's current iteration to the configured end.
pub fn train_stage2(scene: &Scene, config: &TrainConfig, state: &mut TrainState) -> Result<Vec<IterationLog>> {
    config.validate()?;
    if state.stage == Stage::Radiance {
        state.begin_stage2(config);
    }
    let mut logs = Vec::new();
    while state.iteration < config.stage2_iters {
        logs.push(stage2_step(scene, config, state)?);
    }
    Ok(logs)
}
