//! In-memory scene: posed views with optional masks and feature maps.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Pose};
use crate::error::{invalid, Error, Result};
use crate::math;

/// Dense per-view feature tensor of shape `H' × W' × C'`, row-major `(h, w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub source_view_id: String,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        source_view_id: impl Into<String>,
    ) -> Result<Self> {
        let fm = Self {
            height,
            width,
            channels,
            data,
            source_view_id: source_view_id.into(),
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Empty("feature map dimensions"));
        }
        let expected = self.height * self.width * self.channels;
        if self.data.len() != expected {
            return Err(Error::ShapeMismatch {
                what: "feature map payload",
                expected,
                actual: self.data.len(),
            });
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(())
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Bilinear lookup of the feature under image pixel `(x, y)`.
    ///
    /// The pixel is mapped to the feature grid at `(x·W'/W, y·H'/H)`; grid
    /// sites are integer coordinates and lookups clamp at the edges.
    pub fn sample(&self, x: f64, y: f64, image_width: u32, image_height: u32) -> Result<Vec<f64>> {
        let mut out = alloc::vec![0.0; self.channels];
        self.sample_into(x, y, image_width, image_height, &mut out)?;
        Ok(out)
    }

    pub fn sample_into(
        &self,
        x: f64,
        y: f64,
        image_width: u32,
        image_height: u32,
        out: &mut [f64],
    ) -> Result<()> {
        if !(x >= 0.0 && y >= 0.0 && x < image_width as f64 && y < image_height as f64) {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                width: image_width,
                height: image_height,
            });
        }
        if out.len() != self.channels {
            return Err(Error::ShapeMismatch {
                what: "feature sample buffer",
                expected: self.channels,
                actual: out.len(),
            });
        }
        let u = x * self.width as f64 / image_width as f64;
        let v = y * self.height as f64 / image_height as f64;
        let (c0, c1, fu) = bracket(u, self.width);
        let (r0, r1, fv) = bracket(v, self.height);
        let (f00, f01) = (self.at(r0, c0), self.at(r0, c1));
        let (f10, f11) = (self.at(r1, c0), self.at(r1, c1));
        for (c, o) in out.iter_mut().enumerate() {
            let top = f00[c] as f64 * (1.0 - fu) + f01[c] as f64 * fu;
            let bottom = f10[c] as f64 * (1.0 - fu) + f11[c] as f64 * fu;
            *o = top * (1.0 - fv) + bottom * fv;
        }
        Ok(())
    }
}

/// Clamped integer neighbors and fractional weight along one axis.
fn bracket(u: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let u = u.clamp(0.0, max);
    let i0 = math::floor(u) as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, u - i0 as f64)
}

/// One image with its pose and optional supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedView {
    pub id: String,
    /// `H × W × 3` row-major, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub pose: Pose,
    /// `H × W` labels, 0 is background.
    pub mask: Option<Vec<u8>>,
    pub features: Option<FeatureMap>,
    /// Optional per-grid-cell descriptor tokens; when present they replace
    /// pooled features as patch descriptors.
    pub tokens: Option<FeatureMap>,
}

impl PosedView {
    pub fn pixel(&self, camera: &CameraModel, x: usize, y: usize) -> [f64; 3] {
        let i = (y * camera.width as usize + x) * 3;
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    pub fn mask_label(&self, camera: &CameraModel, x: usize, y: usize) -> Option<u8> {
        self.mask
            .as_ref()
            .map(|m| m[y * camera.width as usize + x])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub camera: CameraModel,
    pub views: Vec<PosedView>,
    pub split: Split,
}

impl Scene {
    /// Checks every cross-field invariant of a scene.
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let n_pix = self.camera.pixel_count();
        for view in &self.views {
            view.pose.validate()?;
            if view.image.len() != n_pix * 3 {
                return Err(Error::ShapeMismatch {
                    what: "image size",
                    expected: n_pix * 3,
                    actual: view.image.len(),
                });
            }
            if view.image.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid!("view {} has pixel values outside [0, 1]", view.id));
            }
            if let Some(mask) = &view.mask {
                if mask.len() != n_pix {
                    return Err(Error::ShapeMismatch {
                        what: "mask size",
                        expected: n_pix,
                        actual: mask.len(),
                    });
                }
            }
            if let Some(fm) = &view.features {
                fm.validate()?;
            }
            if let Some(tok) = &view.tokens {
                tok.validate()?;
            }
        }
        let n = self.views.len();
        let mut seen = alloc::vec![false; n];
        for &i in self.split.train.iter().chain(&self.split.test) {
            if i >= n {
                return Err(invalid!("split index {i} out of range for {n} views"));
            }
            if seen[i] {
                return Err(invalid!("view {i} appears twice in the splits"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid!("splits must cover every view"));
        }
        Ok(())
    }

    pub fn train_views(&self) -> impl Iterator<Item = &PosedView> {
        self.split.train.iter().map(move |&i| &self.views[i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &PosedView> {
        self.split.test.iter().map(move |&i| &self.views[i])
    }
}

/// Free-function form of [`FeatureMap::sample`].
pub fn sample_feature_at(
    fm: &FeatureMap,
    pixel: (f64, f64),
    image_size: (u32, u32),
) -> Result<Vec<f64>> {
    fm.sample(pixel.0, pixel.1, image_size.0, image_size.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid(h: usize, w: usize, c: usize) -> FeatureMap {
        let data = (0..h * w * c).map(|i| (i as f32) * 0.25 - 3.0).collect();
        FeatureMap::new(h, w, c, data, "v").unwrap()
    }

    #[test]
    fn constant_map_samples_constant() {
        let fm = FeatureMap::new(3, 5, 2, [0.5f32, -2.0].repeat(15), "v").unwrap();
        for &(x, y) in &[(0.0, 0.0), (7.3, 2.2), (15.9, 11.99)] {
            assert_eq!(fm.sample(x, y, 16, 12).unwrap(), vec![0.5, -2.0]);
        }
    }

    #[test]
    fn grid_site_returns_site_vector() {
        let fm = grid(4, 4, 3);
        // image twice the feature resolution: pixel (2c, 2r) lands on site (r, c)
        let v = fm.sample(4.0, 2.0, 8, 8).unwrap();
        let site: Vec<f64> = fm.at(1, 2).iter().map(|&x| x as f64).collect();
        assert_eq!(v, site);
    }

    #[test]
    fn out_of_bounds_pixel_is_an_error() {
        let fm = grid(2, 2, 1);
        assert!(matches!(
            fm.sample(8.0, 0.0, 8, 8),
            Err(Error::PixelOutOfBounds { .. })
        ));
        assert!(fm.sample(-0.1, 0.0, 8, 8).is_err());
    }

    #[test]
    fn non_finite_feature_rejected() {
        let err = FeatureMap::new(1, 1, 2, vec![1.0, f32::NAN], "v").unwrap_err();
        assert_eq!(err, Error::NonFinite("feature map"));
    }
}
