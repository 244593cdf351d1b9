//! Color, depth and segmentation images of rendered views.
//!
//! Depth uses a five-stop viridis ramp over `[near, far]`; pixels that
//! accumulated no density (depth 0) are black. Overlays blend a fixed
//! per-cluster tint into the rendered color at 50%.

use nfseg_core::RenderedPatch;

use crate::image_io::to_u8;

const DEPTH_STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

pub const PALETTE: [[u8; 3]; 6] = [
    [40, 40, 40],
    [230, 60, 50],
    [50, 120, 230],
    [240, 200, 40],
    [60, 190, 90],
    [190, 80, 210],
];

pub fn depth_color(depth: f64, near: f64, far: f64) -> [u8; 3] {
    if !(depth > 0.0) {
        return [0, 0, 0];
    }
    let t = ((depth - near) / (far - near)).clamp(0.0, 1.0) * (DEPTH_STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(DEPTH_STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (DEPTH_STOPS[i], DEPTH_STOPS[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * f).round() as u8)
}

pub fn color_image(r: &RenderedPatch) -> Vec<u8> {
    r.color.iter().map(|&v| to_u8(v)).collect()
}

pub fn depth_image(r: &RenderedPatch, near: f64, far: f64) -> Vec<u8> {
    r.depth.iter().flat_map(|&d| depth_color(d, near, far)).collect()
}

/// Gray label image with labels spread over `0..=255`.
pub fn label_image(labels: &[u32], n_clusters: usize) -> Vec<u8> {
    let step = 255 / (n_clusters.max(2) - 1) as u32;
    labels.iter().map(|&l| (l * step).min(255) as u8).collect()
}

pub fn overlay_image(r: &RenderedPatch, labels: &[u32]) -> Vec<u8> {
    r.color
        .chunks_exact(3)
        .zip(labels)
        .flat_map(|(c, &l)| {
            let tint = PALETTE[l as usize % PALETTE.len()];
            [0, 1, 2].map(|k| (0.5 * c[k] * 255.0 + 0.5 * tint[k] as f64).round().clamp(0.0, 255.0) as u8)
        })
        .collect()
}
