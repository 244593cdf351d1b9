//! Held-out evaluation: novel-view renders, K-means masks and metrics.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterModel, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::metrics::{self, SegMetrics};
use crate::render::{render_view, RenderOptions, RenderedPatch};
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_clusters: usize,
    pub seed: u64,
    pub samples: usize,
    pub chunk_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_clusters: 2,
            seed: 0,
            samples: 32,
            chunk_size: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: f64,
    pub ssim: f64,
    pub nv_ari: f64,
    pub iou_bg: f64,
    pub iou_fg: f64,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    /// Means of the per-view entries.
    pub mean: SegMetrics,
    pub psnr: f64,
    pub ssim: f64,
    /// ARI over the concatenation of all test pixels.
    pub pooled_ari: f64,
    pub n_clusters: usize,
    /// Truth labels scored, background first.
    pub classes: Vec<u32>,
    pub clusters: ClusterModel,
}

/// Metrics of one view given its cluster labels.
///
/// IoU uses the cluster→class mapping that maximizes this view's mean IoU;
/// `iou_fg` averages the non-background classes.
pub fn view_metrics(
    id: &str,
    render: &[f64],
    image: &[f64],
    width: usize,
    height: usize,
    labels: &[u32],
    truth: &[u32],
    n_clusters: usize,
    classes: &[u32],
) -> Result<ViewMetrics> {
    let (_, ious) = metrics::best_mapping_iou(labels, truth, n_clusters, classes)?;
    let iou_bg = ious[0];
    let iou_fg = if ious.len() > 1 {
        ious[1..].iter().sum::<f64>() / (ious.len() - 1) as f64
    } else {
        0.0
    };
    Ok(ViewMetrics {
        view: id.into(),
        psnr: metrics::psnr(render, image)?,
        ssim: metrics::ssim(render, image, width, height, 3)?,
        nv_ari: metrics::ari(labels, truth)?,
        iou_bg,
        iou_fg,
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
    })
}

/// Test-view renders, one per entry of the test split.
pub fn render_test_views(params: &FieldParams, scene: &Scene, opts: &EvalOptions) -> Result<Vec<RenderedPatch>> {
    scene
        .test_views()
        .map(|v| render_view(params, &scene.camera, &v.pose, opts.samples, opts.chunk_size, RenderOptions::FULL))
        .collect()
}

/// Clusters renders of the test views and scores them against their masks.
pub fn evaluate_renders(scene: &Scene, renders: &[RenderedPatch], opts: &EvalOptions) -> Result<(EvalReport, Vec<Vec<u32>>)> {
    let test: Vec<_> = scene.test_views().collect();
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut truths = Vec::with_capacity(test.len());
    for v in &test {
        let m = v.mask.as_ref().ok_or_else(|| Error::MissingMask(v.id.clone()))?;
        truths.push(m.iter().map(|&l| l as u32).collect::<Vec<u32>>());
    }
    let classes: Vec<u32> = truths
        .iter()
        .flatten()
        .copied()
        .chain(core::iter::once(0))
        .collect::<BTreeSet<u32>>()
        .into_iter()
        .collect();
    let dim = renders[0].seg_channels;
    let pooled: Vec<f64> = renders.iter().flat_map(|r| r.seg.iter().copied()).collect();
    let model = cluster::fit_kmeans(&pooled, dim, opts.n_clusters, opts.seed, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let (w, h) = (scene.camera.width as usize, scene.camera.height as usize);
    let mut views = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for ((v, r), truth) in test.iter().zip(renders).zip(&truths) {
        let l = cluster::assign(&model, &r.seg)?;
        views.push(view_metrics(&v.id, &r.color, &v.image, w, h, &l, truth, opts.n_clusters, &classes)?);
        labels.push(l);
    }
    let all_pred: Vec<u32> = labels.iter().flatten().copied().collect();
    let all_truth: Vec<u32> = truths.iter().flatten().copied().collect();
    let n = views.len() as f64;
    let mean_of = |f: fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
    let report = EvalReport {
        mean: SegMetrics {
            nv_ari: mean_of(|v| v.nv_ari),
            iou_bg: mean_of(|v| v.iou_bg),
            iou_fg: mean_of(|v| v.iou_fg),
            miou: mean_of(|v| v.miou),
        },
        psnr: mean_of(|v| v.psnr),
        ssim: mean_of(|v| v.ssim),
        pooled_ari: metrics::ari(&all_pred, &all_truth)?,
        n_clusters: opts.n_clusters,
        classes,
        clusters: model,
        views,
    };
    Ok((report, labels))
}

/// Renders the test split, fits K-means on the pooled logits and reports
/// per-view and mean metrics. Also returns each test view's cluster labels.
pub fn evaluate_scene(params: &FieldParams, scene: &Scene, opts: &EvalOptions) -> Result<(EvalReport, Vec<Vec<u32>>)> {
    if scene.split.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let renders = render_test_views(params, scene, opts)?;
    evaluate_renders(scene, &renders, opts)
}
