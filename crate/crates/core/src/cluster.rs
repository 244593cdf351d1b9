//! Seeded K-means over rendered segmentation logits.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// `n_clusters × dim`, row-major.
    pub centers: Vec<f64>,
    pub n_clusters: usize,
    pub dim: usize,
    pub seed: u64,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

impl ClusterModel {
    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(centers: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.chunks_exact(dim).enumerate() {
        let d = dist2(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Fits `n_clusters` centers to the `M × dim` rows of `points`.
///
/// Initialization is k-means++ driven by a ChaCha8 stream seeded with `seed`.
/// When every remaining point coincides with a chosen center the next unused
/// point index is taken instead. Lloyd iterations stop once no center moves
/// more than `tol`, or after `max_iter` rounds; an empty cluster is moved to
/// the point farthest from its current center.
pub fn fit_kmeans(
    points: &[f64],
    dim: usize,
    n_clusters: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterModel> {
    if dim == 0 || points.len() % dim != 0 {
        return Err(invalid!("points must be whole {dim}-vectors"));
    }
    let m = points.len() / dim;
    if n_clusters < 2 {
        return Err(invalid!("need at least 2 clusters, got {n_clusters}"));
    }
    if m < n_clusters {
        return Err(invalid!("{m} points cannot fill {n_clusters} clusters"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input"));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = Vec::with_capacity(n_clusters);
    chosen.push(rng.random_range(0..m));
    let mut d2: Vec<f64> = (0..m).map(|i| dist2(row(i), row(chosen[0]))).collect();
    while chosen.len() < n_clusters {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the draw past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..m).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(dist2(row(i), row(next)));
        }
    }
    let mut centers: Vec<f64> = chosen.iter().flat_map(|&i| row(i).iter().copied()).collect();

    let mut labels = vec![0usize; m];
    let mut history = Vec::new();
    let mut inertia;
    let mut iter = 0;
    loop {
        inertia = 0.0;
        for (i, l) in labels.iter_mut().enumerate() {
            let (k, d) = nearest(&centers, dim, row(i));
            *l = k;
            inertia += d;
        }
        history.push(inertia);
        if iter >= max_iter {
            break;
        }
        iter += 1;

        let mut sums = vec![0.0; n_clusters * dim];
        let mut counts = vec![0usize; n_clusters];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for k in 0..n_clusters {
            let new: Vec<f64> = if counts[k] > 0 {
                sums[k * dim..(k + 1) * dim].iter().map(|s| s / counts[k] as f64).collect()
            } else {
                let c = &centers[k * dim..(k + 1) * dim];
                let mut far = (0, -1.0);
                for i in 0..m {
                    let d = dist2(row(i), c);
                    if d > far.1 {
                        far = (i, d);
                    }
                }
                row(far.0).to_vec()
            };
            let old = &mut centers[k * dim..(k + 1) * dim];
            shift = shift.max(crate::math::sqrt(dist2(old, &new)));
            old.copy_from_slice(&new);
        }
        if shift < tol {
            // one more assignment so labels and inertia match the final centers
            inertia = 0.0;
            for i in 0..m {
                inertia += nearest(&centers, dim, row(i)).1;
            }
            history.push(inertia);
            break;
        }
    }
    Ok(ClusterModel {
        centers,
        n_clusters,
        dim,
        seed,
        inertia,
        history,
    })
}

/// Nearest-center label per row of `logits`.
pub fn assign(model: &ClusterModel, logits: &[f64]) -> Result<Vec<u32>> {
    if logits.len() % model.dim != 0 {
        return Err(Error::ShapeMismatch {
            what: "logit rows",
            expected: model.dim,
            actual: logits.len() % model.dim,
        });
    }
    Ok(logits
        .chunks_exact(model.dim)
        .map(|x| nearest(&model.centers, model.dim, x).0 as u32)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_reseed_deterministically() {
        let pts = [1.0, 2.0].repeat(5);
        let m = fit_kmeans(&pts, 2, 3, 0, 100, 1e-6).unwrap();
        for k in 0..3 {
            assert_eq!(m.center(k), &[1.0, 2.0]);
        }
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_center() {
        let model = ClusterModel {
            centers: vec![0.0, 0.0, 2.0, 0.0],
            n_clusters: 2,
            dim: 2,
            seed: 0,
            inertia: 0.0,
            history: vec![],
        };
        assert_eq!(assign(&model, &[1.0, 0.0, 2.0, 0.0]).unwrap(), [0, 1]);
    }

    #[test]
    fn too_few_points() {
        assert!(fit_kmeans(&[0.0, 1.0], 1, 3, 0, 10, 1e-6).is_err());
    }
}
