//! Segmentation and image-quality metrics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn choose2(n: u64) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Contingency counts `n_ij` with row sums `a_i` and column sums `b_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    pub counts: BTreeMap<(u32, u32), u64>,
    pub rows: BTreeMap<u32, u64>,
    pub cols: BTreeMap<u32, u64>,
    pub n: u64,
}

pub fn contingency(pred: &[u32], truth: &[u32]) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            what: "label maps",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut c = Contingency {
        counts: BTreeMap::new(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
        n: pred.len() as u64,
    };
    for (&p, &t) in pred.iter().zip(truth) {
        *c.counts.entry((p, t)).or_default() += 1;
        *c.rows.entry(p).or_default() += 1;
        *c.cols.entry(t).or_default() += 1;
    }
    Ok(c)
}

/// Adjusted Rand index between two labelings of the same pixels.
///
/// When both partitions are trivial in the same way (a single cluster, or all
/// singletons) the index is undefined; it is reported as 1.0 for identical
/// partitions and 0.0 otherwise.
pub fn ari(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Empty("label maps"));
    }
    let c = contingency(pred, truth)?;
    let index: f64 = c.counts.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = c.rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = c.cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(c.n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub nv_ari: f64,
    pub iou_bg: f64,
    pub iou_fg: f64,
    pub miou: f64,
}

/// `|A ∩ B| / |A ∪ B|`, 1.0 for an empty union.
fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p && t) as u64;
        union += (p || t) as u64;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Background/foreground IoU of a binary prediction under the best of the two
/// label assignments. `ari` is left at zero.
pub fn iou_metrics(pred: &[bool], truth: &[bool]) -> Result<SegMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            what: "binary masks",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let score = |flip: bool| {
        let p: Vec<bool> = pred.iter().map(|&v| v ^ flip).collect();
        let not_p: Vec<bool> = p.iter().map(|&v| !v).collect();
        let not_t: Vec<bool> = truth.iter().map(|&v| !v).collect();
        let fg = iou(&p, truth);
        let bg = iou(&not_p, &not_t);
        (bg, fg)
    };
    let (bg0, fg0) = score(false);
    let (bg1, fg1) = score(true);
    let (iou_bg, iou_fg) = if bg1 + fg1 > bg0 + fg0 { (bg1, fg1) } else { (bg0, fg0) };
    Ok(SegMetrics {
        nv_ari: 0.0,
        iou_bg,
        iou_fg,
        miou: 0.5 * (iou_bg + iou_fg),
    })
}

/// Per-class IoU of a clustering against multi-class truth under the
/// cluster→class mapping that maximizes mean IoU.
///
/// Clusters are `0..n_clusters`; `classes` lists the truth labels to score.
/// With as many clusters as classes only permutations are considered,
/// otherwise every mapping (several clusters may share one class). Ties keep
/// the first mapping in enumeration order. Returns the mapping and the IoU of
/// each class.
pub fn best_mapping_iou(
    pred: &[u32],
    truth: &[u32],
    n_clusters: usize,
    classes: &[u32],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let c = contingency(pred, truth)?;
    if classes.is_empty() || n_clusters == 0 {
        return Err(Error::Empty("clusters or classes"));
    }
    if n_clusters > 6 || classes.len() > 6 {
        return Err(invalid!("best-mapping IoU supports at most 6 clusters and classes"));
    }
    if let Some(&l) = c.rows.keys().find(|&&l| l as usize >= n_clusters) {
        return Err(invalid!("cluster label {l} outside 0..{n_clusters}"));
    }
    let permutations_only = n_clusters == classes.len();
    let mut assignment = vec![0usize; n_clusters];
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let combos = classes.len().pow(n_clusters as u32);
    'outer: for code in 0..combos {
        let mut rest = code;
        for a in assignment.iter_mut() {
            *a = rest % classes.len();
            rest /= classes.len();
        }
        if permutations_only {
            for i in 0..n_clusters {
                if assignment[..i].contains(&assignment[i]) {
                    continue 'outer;
                }
            }
        }
        let ious = mapped_ious(&c, classes, &assignment);
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        if best.as_ref().is_none_or(|(b, _, _)| mean > *b) {
            best = Some((mean, assignment.clone(), ious));
        }
    }
    let (_, assignment, ious) = best.ok_or(Error::Empty("label maps"))?;
    Ok((assignment, ious))
}

fn mapped_ious(c: &Contingency, classes: &[u32], assignment: &[usize]) -> Vec<f64> {
    classes
        .iter()
        .enumerate()
        .map(|(k, &class)| {
            let mut inter = 0u64;
            let mut pred_size = 0u64;
            for (cluster, &count) in &c.rows {
                if assignment[*cluster as usize] == k {
                    pred_size += count;
                    inter += c.counts.get(&(*cluster, class)).copied().unwrap_or(0);
                }
            }
            let truth_size = c.cols.get(&class).copied().unwrap_or(0);
            let union = pred_size + truth_size - inter;
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

/// Mean squared error over all entries.
pub fn mse(img: &[f64], reference: &[f64]) -> Result<f64> {
    if img.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            what: "images",
            expected: reference.len(),
            actual: img.len(),
        });
    }
    if img.is_empty() {
        return Err(Error::Empty("images"));
    }
    let s: f64 = img.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / img.len() as f64)
}

/// `−10·log10(MSE)` for images with data range 1, capped at [`PSNR_CAP`].
pub fn psnr(img: &[f64], reference: &[f64]) -> Result<f64> {
    psnr_from_mse(mse(img, reference)?)
}

pub fn psnr_from_mse(mse: f64) -> Result<f64> {
    if !(mse >= 0.0) {
        return Err(invalid!("MSE must be non-negative, got {mse}"));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * math::log10(mse)).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Normalized 1D gaussian taps of the SSIM window.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            math::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= s;
    }
    taps
}

/// Mean structural similarity of two `H × W × channels` images with data
/// range 1, over valid (fully inside) 11×11 gaussian windows, averaged over
/// channels. Images smaller than the window use a window clipped to the image.
pub fn ssim(img: &[f64], reference: &[f64], width: usize, height: usize, channels: usize) -> Result<f64> {
    let n = width * height * channels;
    if img.len() != n || reference.len() != n {
        return Err(Error::ShapeMismatch {
            what: "SSIM images",
            expected: n,
            actual: img.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("images"));
    }
    let win = SSIM_WINDOW.min(width).min(height);
    let taps = gaussian_taps(win, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let (ow, oh) = (width - win + 1, height - win + 1);
    let mut total = 0.0;
    for ch in 0..channels {
        let px = |buf: &[f64], x: usize, y: usize| buf[(y * width + x) * channels + ch];
        let mut sum = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, &ty) in taps.iter().enumerate() {
                    for (dx, &tx) in taps.iter().enumerate() {
                        let w = ty * tx;
                        let a = px(img, ox + dx, oy + dy);
                        let b = px(reference, ox + dx, oy + dy);
                        mx += w * a;
                        my += w * b;
                        sxx += w * a * a;
                        syy += w * b * b;
                        sxy += w * a * b;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_identity_and_complement() {
        let t = [0, 0, 1, 1, 1, 0];
        assert_eq!(ari(&t, &t).unwrap(), 1.0);
        let c: Vec<u32> = t.iter().map(|&v| 1 - v).collect();
        assert_eq!(ari(&c, &t).unwrap(), 1.0);
        assert!(ari(&[], &[]).is_err());
    }

    #[test]
    fn iou_all_background_prediction() {
        let truth = [true, true, false, false];
        let m = iou_metrics(&[false; 4], &truth).unwrap();
        assert_eq!((m.iou_fg, m.iou_bg, m.miou), (0.0, 0.5, 0.25));
        let m = iou_metrics(&truth, &truth).unwrap();
        assert_eq!((m.iou_fg, m.iou_bg, m.miou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn psnr_analytic() {
        let a = [0.1; 16];
        let b = [0.0; 16];
        // MSE = 0.01 up to rounding of 0.1²
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr_from_mse(0.01).unwrap(), 20.0);
    }

    #[test]
    fn ssim_self_pair() {
        let img: Vec<f64> = (0..16 * 16 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        assert!((ssim(&img, &img, 16, 16, 3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn best_mapping_merges_extra_clusters() {
        let truth = [0, 0, 1, 1];
        let pred = [0, 2, 1, 1];
        let (mapping, ious) = best_mapping_iou(&pred, &truth, 3, &[0, 1]).unwrap();
        assert_eq!(mapping, [0, 1, 0]);
        assert_eq!(ious, [1.0, 1.0]);
        // equal counts: permutations only
        let (mapping, _) = best_mapping_iou(&[1, 1, 0, 0], &truth, 2, &[0, 1]).unwrap();
        assert_eq!(mapping, [1, 0]);
    }
}
