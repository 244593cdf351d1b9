//! The scene function `(x, θ) ↦ (c, σ, s)`.
//!
//! A ReLU trunk reads the encoded position. Its last hidden feature feeds
//! three heads:
//!
//! * density: one linear unit followed by softplus, so `σ ≥ 0`;
//! * color: the feature concatenated with the encoded view direction, one
//!   ReLU hidden layer, then a sigmoid so `c ∈ [0, 1]³`;
//! * segmentation: four linear layers (`W → S → S → S → C_s`) with ReLU
//!   between them, producing raw logits. It never sees the view direction.
//!
//! Parameters live in one flat `f64` vector. Gradients are computed by hand
//! for batches of points, accumulating over the batch in ascending order.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{encode_into, encoded_len, EncodingConfig};
use crate::error::{invalid, Error, Result};
use crate::kernel;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub color_hidden: usize,
    pub seg_hidden: usize,
    pub seg_channels: usize,
    /// Initial bias of the density unit.
    pub density_bias: f64,
    /// Positions are divided by this before encoding.
    pub position_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            trunk_depth: 4,
            trunk_width: 128,
            color_hidden: 64,
            seg_hidden: 256,
            seg_channels: 2,
            density_bias: -1.5,
            position_scale: 1.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth == 0 || self.trunk_width == 0 {
            return Err(invalid!("trunk needs at least one layer of nonzero width"));
        }
        if self.color_hidden == 0 || self.seg_hidden == 0 || self.seg_channels == 0 {
            return Err(invalid!("head widths must be positive"));
        }
        if !(self.position_scale > 0.0 && self.density_bias.is_finite()) {
            return Err(invalid!("position_scale must be positive and density_bias finite"));
        }
        Ok(())
    }

    pub fn pos_dim(&self) -> usize {
        encoded_len(self.encoding.pos_freqs)
    }

    pub fn dir_dim(&self) -> usize {
        encoded_len(self.encoding.dir_freqs)
    }
}

/// Named ranges of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Trunk,
    Density,
    Color,
    Segmentation,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Trunk,
        ParamGroup::Density,
        ParamGroup::Color,
        ParamGroup::Segmentation,
    ];
}

/// Which parameter groups a backward pass must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupMask {
    pub trunk: bool,
    pub density: bool,
    pub color: bool,
    pub segmentation: bool,
}

impl GroupMask {
    pub const ALL: GroupMask = GroupMask {
        trunk: true,
        density: true,
        color: true,
        segmentation: true,
    };
    pub const SEGMENTATION: GroupMask = GroupMask {
        trunk: false,
        density: false,
        color: false,
        segmentation: true,
    };
    pub const RADIANCE: GroupMask = GroupMask {
        trunk: true,
        density: true,
        color: true,
        segmentation: false,
    };

    pub fn contains(&self, g: ParamGroup) -> bool {
        match g {
            ParamGroup::Trunk => self.trunk,
            ParamGroup::Density => self.density,
            ParamGroup::Color => self.color,
            ParamGroup::Segmentation => self.segmentation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    n_in: usize,
    n_out: usize,
    offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.n_in * self.n_out]
    }
    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.n_in * self.n_out;
        &p[start..start + self.n_out]
    }
    fn split_grad<'a>(&self, g: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let region = &mut g[self.offset..self.offset + self.len()];
        region.split_at_mut(self.n_in * self.n_out)
    }
}

/// Offsets of every layer in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    trunk: Vec<Dense>,
    density: Dense,
    color: [Dense; 2],
    seg: [Dense; 4],
    len: usize,
}

impl Layout {
    fn new(cfg: &FieldConfig) -> Self {
        let mut offset = 0;
        let mut next = |n_in: usize, n_out: usize| {
            let d = Dense {
                n_in,
                n_out,
                offset,
            };
            offset += d.len();
            d
        };
        let w = cfg.trunk_width;
        let mut trunk = Vec::with_capacity(cfg.trunk_depth);
        trunk.push(next(cfg.pos_dim(), w));
        for _ in 1..cfg.trunk_depth {
            trunk.push(next(w, w));
        }
        let density = next(w, 1);
        let color = [next(w + cfg.dir_dim(), cfg.color_hidden), next(cfg.color_hidden, 3)];
        let s = cfg.seg_hidden;
        let seg = [next(w, s), next(s, s), next(s, s), next(s, cfg.seg_channels)];
        Self {
            trunk,
            density,
            color,
            seg,
            len: offset,
        }
    }

    fn range(&self, group: ParamGroup) -> Range<usize> {
        let span = |first: &Dense, last: &Dense| first.offset..last.offset + last.len();
        match group {
            ParamGroup::Trunk => span(&self.trunk[0], self.trunk.last().unwrap()),
            ParamGroup::Density => span(&self.density, &self.density),
            ParamGroup::Color => span(&self.color[0], &self.color[1]),
            ParamGroup::Segmentation => span(&self.seg[0], &self.seg[3]),
        }
    }
}

/// All trainable weights of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    config: FieldConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl FieldParams {
    /// All-zero parameters.
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let values = vec![0.0; layout.len];
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    /// Rebuilds parameters from a flat vector, e.g. after loading a checkpoint.
    pub fn from_flat(config: FieldConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::ShapeMismatch {
                what: "flat parameter vector",
                expected: p.values.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        p.values = values;
        Ok(p)
    }

    /// Seeded fan-in uniform initialization.
    ///
    /// ReLU layers use the He-uniform bound `√(6/fan_in)`, output layers
    /// `√(1/fan_in)`; the density unit starts with small weights and the
    /// configured bias so that initial renders are neither empty nor opaque.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = p.layout.clone();
        let mut fill = |d: &Dense, gain: f64, values: &mut [f64]| {
            let bound = gain * math::sqrt(1.0 / d.n_in as f64);
            for w in &mut values[d.offset..d.offset + d.n_in * d.n_out] {
                *w = rng.random_range(-bound..bound);
            }
        };
        let relu_gain = math::sqrt(6.0);
        for d in &layout.trunk {
            fill(d, relu_gain, &mut p.values);
        }
        fill(&layout.density, 0.1, &mut p.values);
        fill(&layout.color[0], relu_gain, &mut p.values);
        fill(&layout.color[1], 1.0, &mut p.values);
        for d in &layout.seg[..3] {
            fill(d, relu_gain, &mut p.values);
        }
        fill(&layout.seg[3], 1.0, &mut p.values);
        let bias = layout.density.offset + layout.density.n_in;
        p.values[bias] = config.density_bias;
        Ok(p)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        self.layout.range(group)
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

/// Output of the field at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOutput {
    pub color: [f64; 3],
    pub density: f64,
    pub seg: Vec<f64>,
}

/// Position and view direction of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldQuery {
    pub position: [f64; 3],
    pub direction: [f64; 3],
}

/// Activations of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// `acts[0]` is the encoded position, `acts[l]` the output of trunk layer `l`.
    acts: Vec<Vec<f64>>,
    density_pre: Vec<f64>,
    density: Vec<f64>,
    color: Option<ColorTape>,
    seg: Option<SegTape>,
}

#[derive(Debug, Clone)]
struct ColorTape {
    input: Vec<f64>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
struct SegTape {
    rows: Vec<usize>,
    /// Gathered trunk features, then the three hidden activations.
    acts: [Vec<f64>; 4],
    out: Vec<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn density(&self, b: usize) -> f64 {
        self.density[b]
    }

    pub fn densities(&self) -> &[f64] {
        &self.density
    }

    /// Color of point `b`; zero when the color head was skipped.
    pub fn color(&self, b: usize) -> [f64; 3] {
        match &self.color {
            Some(c) => [c.out[3 * b], c.out[3 * b + 1], c.out[3 * b + 2]],
            None => [0.0; 3],
        }
    }

    pub fn has_color(&self) -> bool {
        self.color.is_some()
    }

    /// Batch rows that carry segmentation logits.
    pub fn seg_rows(&self) -> &[usize] {
        self.seg.as_ref().map_or(&[], |s| &s.rows)
    }

    /// Logits for the `k`-th entry of [`Tape::seg_rows`].
    pub fn seg_logits(&self, k: usize, channels: usize) -> &[f64] {
        let s = self.seg.as_ref().expect("segmentation head not evaluated");
        &s.out[k * channels..(k + 1) * channels]
    }

    /// Which post-ReLU units are active, over every hidden layer and row.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self.acts[1..].iter().flatten().map(|&a| a > 0.0).collect();
        if let Some(c) = &self.color {
            out.extend(c.hidden.iter().map(|&a| a > 0.0));
        }
        if let Some(s) = &self.seg {
            out.extend(s.acts[1..].iter().flatten().map(|&a| a > 0.0));
        }
        out
    }

    fn check_finite(&self) -> Result<()> {
        if self.density.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field density"));
        }
        if let Some(c) = &self.color {
            if c.out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("field color"));
            }
        }
        if let Some(s) = &self.seg {
            if s.out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("field segmentation"));
            }
        }
        Ok(())
    }
}

/// `y = x·W + b` for `rows` inputs, weights stored input-major.
///
/// Every output accumulates its inputs in ascending order, so the result of a
/// row does not depend on how many rows are processed together.
fn dense_forward(d: &Dense, params: &[f64], x: &[f64], rows: usize, y: &mut [f64]) {
    let (w, b) = (d.weights(params), d.bias(params));
    debug_assert_eq!(x.len(), rows * d.n_in);
    debug_assert_eq!(y.len(), rows * d.n_out);
    for yr in y.chunks_exact_mut(d.n_out) {
        yr.copy_from_slice(b);
    }
    kernel::gemm(rows, d.n_in, d.n_out, x, w, y);
}

/// Accumulates weight/bias gradients and optionally writes `∂L/∂x`.
fn dense_backward(
    d: &Dense,
    params: &[f64],
    x: &[f64],
    dy: &[f64],
    rows: usize,
    grad: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let (n_in, n_out) = (d.n_in, d.n_out);
    debug_assert_eq!(dy.len(), rows * n_out);
    {
        let (gw, gb) = d.split_grad(grad);
        for dyr in dy.chunks_exact(n_out) {
            for (g, &v) in gb.iter_mut().zip(dyr) {
                *g += v;
            }
        }
        let xt = kernel::transpose(x, rows, n_in);
        kernel::gemm(n_in, rows, n_out, &xt, dy, gw);
    }
    if let Some(dx) = dx {
        let wt = kernel::transpose(d.weights(params), n_in, n_out);
        dx.fill(0.0);
        kernel::gemm(rows, n_out, n_in, dy, &wt, dx);
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
}

/// Zeroes `dy` where the post-ReLU activation is inactive.
fn relu_mask(act: &[f64], dy: &mut [f64]) {
    for (g, &a) in dy.iter_mut().zip(act) {
        if !(a > 0.0) {
            *g = 0.0;
        }
    }
}

/// Trunk, density and (optionally) color for a batch of queries.
pub fn forward_trunk(params: &FieldParams, queries: &[FieldQuery], with_color: bool) -> Result<Tape> {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = params.as_slice();
    let batch = queries.len();
    let pos_dim = cfg.pos_dim();
    let inv_scale = 1.0 / cfg.position_scale;

    let mut enc = vec![0.0; batch * pos_dim];
    for (q, row) in queries.iter().zip(enc.chunks_exact_mut(pos_dim)) {
        let x = [
            q.position[0] * inv_scale,
            q.position[1] * inv_scale,
            q.position[2] * inv_scale,
        ];
        encode_into(x, cfg.encoding.pos_freqs, row);
    }
    let mut acts = Vec::with_capacity(lay.trunk.len() + 1);
    acts.push(enc);
    for d in &lay.trunk {
        let mut out = vec![0.0; batch * d.n_out];
        dense_forward(d, p, acts.last().unwrap(), batch, &mut out);
        relu_in_place(&mut out);
        acts.push(out);
    }
    let feature = acts.last().unwrap();

    let mut density_pre = vec![0.0; batch];
    dense_forward(&lay.density, p, feature, batch, &mut density_pre);
    let density = density_pre.iter().map(|&z| math::softplus(z)).collect();

    let color = with_color.then(|| {
        let w = cfg.trunk_width;
        let dir_dim = cfg.dir_dim();
        let in_dim = w + dir_dim;
        let mut input = vec![0.0; batch * in_dim];
        for (b, row) in input.chunks_exact_mut(in_dim).enumerate() {
            row[..w].copy_from_slice(&feature[b * w..(b + 1) * w]);
            encode_into(queries[b].direction, cfg.encoding.dir_freqs, &mut row[w..]);
        }
        let mut hidden = vec![0.0; batch * cfg.color_hidden];
        dense_forward(&lay.color[0], p, &input, batch, &mut hidden);
        relu_in_place(&mut hidden);
        let mut out = vec![0.0; batch * 3];
        dense_forward(&lay.color[1], p, &hidden, batch, &mut out);
        for v in &mut out {
            *v = math::sigmoid(*v);
        }
        ColorTape { input, hidden, out }
    });

    let tape = Tape {
        batch,
        acts,
        density_pre,
        density,
        color,
        seg: None,
    };
    tape.check_finite()?;
    Ok(tape)
}

/// Evaluates the segmentation head on the given tape rows (ascending).
pub fn forward_seg(params: &FieldParams, tape: &mut Tape, rows: Vec<usize>) -> Result<()> {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = params.as_slice();
    let w = cfg.trunk_width;
    let n = rows.len();
    let feature = tape.acts.last().unwrap();
    let mut input = vec![0.0; n * w];
    for (k, &r) in rows.iter().enumerate() {
        if r >= tape.batch {
            return Err(invalid!("segmentation row {r} outside batch of {}", tape.batch));
        }
        input[k * w..(k + 1) * w].copy_from_slice(&feature[r * w..(r + 1) * w]);
    }
    let mut h1 = vec![0.0; n * cfg.seg_hidden];
    dense_forward(&lay.seg[0], p, &input, n, &mut h1);
    relu_in_place(&mut h1);
    let mut h2 = vec![0.0; n * cfg.seg_hidden];
    dense_forward(&lay.seg[1], p, &h1, n, &mut h2);
    relu_in_place(&mut h2);
    let mut h3 = vec![0.0; n * cfg.seg_hidden];
    dense_forward(&lay.seg[2], p, &h2, n, &mut h3);
    relu_in_place(&mut h3);
    let mut out = vec![0.0; n * cfg.seg_channels];
    dense_forward(&lay.seg[3], p, &h3, n, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field segmentation"));
    }
    tape.seg = Some(SegTape {
        rows,
        acts: [input, h1, h2, h3],
        out,
    });
    Ok(())
}

/// Full forward pass for a batch; every head on every row.
pub fn forward_batch(params: &FieldParams, queries: &[FieldQuery]) -> Result<Tape> {
    let mut tape = forward_trunk(params, queries, true)?;
    forward_seg(params, &mut tape, (0..queries.len()).collect())?;
    Ok(tape)
}

/// Field output at a single point.
pub fn forward(params: &FieldParams, position: [f64; 3], direction: [f64; 3]) -> Result<FieldOutput> {
    let tape = forward_batch(params, &[FieldQuery { position, direction }])?;
    Ok(FieldOutput {
        color: tape.color(0),
        density: tape.density(0),
        seg: tape.seg_logits(0, params.config.seg_channels).to_vec(),
    })
}

/// Upstream gradients on the outputs of a [`Tape`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    /// `∂L/∂σ`, one per batch row.
    pub density: Vec<f64>,
    /// `∂L/∂c`, three per batch row; ignored when the color head was skipped.
    pub color: Vec<f64>,
    /// `∂L/∂s`, `C_s` per entry of [`Tape::seg_rows`].
    pub seg: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(tape: &Tape, seg_channels: usize) -> Self {
        Self {
            density: vec![0.0; tape.batch],
            color: vec![0.0; tape.batch * 3],
            seg: vec![0.0; tape.seg_rows().len() * seg_channels],
        }
    }
}

/// Accumulates into `grad` the gradient of `Σ_b ⟨upstream_b, output_b⟩`.
///
/// Only the groups in `mask` are written. Trunk gradients collect every
/// head's contribution, so `mask.trunk` requires running all head backward
/// passes that have nonzero upstream.
pub fn backward(
    params: &FieldParams,
    tape: &Tape,
    upstream: &OutputGrads,
    mask: GroupMask,
    grad: &mut [f64],
) -> Result<()> {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = params.as_slice();
    let batch = tape.batch;
    let w = cfg.trunk_width;
    if grad.len() != params.len() {
        return Err(Error::ShapeMismatch {
            what: "gradient buffer",
            expected: params.len(),
            actual: grad.len(),
        });
    }
    if upstream.density.len() != batch || upstream.color.len() != batch * 3 {
        return Err(Error::ShapeMismatch {
            what: "upstream gradient batch",
            expected: batch,
            actual: upstream.density.len(),
        });
    }
    let seg_rows = tape.seg_rows();
    if upstream.seg.len() != seg_rows.len() * cfg.seg_channels {
        return Err(Error::ShapeMismatch {
            what: "upstream segmentation gradient",
            expected: seg_rows.len() * cfg.seg_channels,
            actual: upstream.seg.len(),
        });
    }
    let feature = tape.acts.last().unwrap();
    let mut dfeature = mask.trunk.then(|| vec![0.0; batch * w]);

    // density head
    if mask.density || mask.trunk {
        let dz: Vec<f64> = upstream
            .density
            .iter()
            .zip(&tape.density_pre)
            .map(|(&g, &z)| g * math::sigmoid(z))
            .collect();
        let mut dx = dfeature.as_ref().map(|_| vec![0.0; batch * w]);
        let mut scratch;
        let target = if mask.density {
            &mut *grad
        } else {
            scratch = vec![0.0; params.len()];
            &mut scratch[..]
        };
        dense_backward(&lay.density, p, feature, &dz, batch, target, dx.as_deref_mut());
        if let (Some(df), Some(dx)) = (dfeature.as_mut(), dx) {
            add_assign(df, &dx);
        }
    }

    // color head
    if let Some(ct) = &tape.color {
        if mask.color || mask.trunk {
            let mut dz = vec![0.0; batch * 3];
            for ((d, &g), &c) in dz.iter_mut().zip(&upstream.color).zip(&ct.out) {
                *d = g * c * (1.0 - c);
            }
            let mut scratch = Vec::new();
            let target: &mut [f64] = if mask.color {
                &mut *grad
            } else {
                scratch.resize(params.len(), 0.0);
                &mut scratch
            };
            let mut dh = vec![0.0; batch * cfg.color_hidden];
            dense_backward(&lay.color[1], p, &ct.hidden, &dz, batch, target, Some(&mut dh));
            relu_mask(&ct.hidden, &mut dh);
            let in_dim = w + cfg.dir_dim();
            let mut din = dfeature.as_ref().map(|_| vec![0.0; batch * in_dim]);
            dense_backward(&lay.color[0], p, &ct.input, &dh, batch, target, din.as_deref_mut());
            if let (Some(df), Some(din)) = (dfeature.as_mut(), din) {
                for (dfr, dinr) in df.chunks_exact_mut(w).zip(din.chunks_exact(in_dim)) {
                    add_assign(dfr, &dinr[..w]);
                }
            }
        }
    }

    // segmentation head
    if let Some(st) = &tape.seg {
        if mask.segmentation || mask.trunk {
            let n = st.rows.len();
            let s = cfg.seg_hidden;
            let mut scratch = Vec::new();
            let target: &mut [f64] = if mask.segmentation {
                &mut *grad
            } else {
                scratch.resize(params.len(), 0.0);
                &mut scratch
            };
            let mut d3 = vec![0.0; n * s];
            dense_backward(&lay.seg[3], p, &st.acts[3], &upstream.seg, n, target, Some(&mut d3));
            relu_mask(&st.acts[3], &mut d3);
            let mut d2 = vec![0.0; n * s];
            dense_backward(&lay.seg[2], p, &st.acts[2], &d3, n, target, Some(&mut d2));
            relu_mask(&st.acts[2], &mut d2);
            let mut d1 = vec![0.0; n * s];
            dense_backward(&lay.seg[1], p, &st.acts[1], &d2, n, target, Some(&mut d1));
            relu_mask(&st.acts[1], &mut d1);
            let mut din = dfeature.as_ref().map(|_| vec![0.0; n * w]);
            dense_backward(&lay.seg[0], p, &st.acts[0], &d1, n, target, din.as_deref_mut());
            if let (Some(df), Some(din)) = (dfeature.as_mut(), din) {
                for (k, &r) in st.rows.iter().enumerate() {
                    add_assign(&mut df[r * w..(r + 1) * w], &din[k * w..(k + 1) * w]);
                }
            }
        }
    }

    // trunk
    if let Some(mut dy) = dfeature {
        for (l, d) in lay.trunk.iter().enumerate().rev() {
            relu_mask(&tape.acts[l + 1], &mut dy);
            let x = &tape.acts[l];
            if l == 0 {
                dense_backward(d, p, x, &dy, batch, grad, None);
            } else {
                let mut dx = vec![0.0; batch * d.n_in];
                dense_backward(d, p, x, &dy, batch, grad, Some(&mut dx));
                dy = dx;
            }
        }
    }
    Ok(())
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
