//! Procedural lambertian scenes with exact masks and noisy one-hot features.
//!
//! Primitives sit on the ground plane `y = 0`; cameras circle the origin at a
//! fixed distance and look at it. Every pixel is shaded from the first hit of
//! its center ray (no anti-aliasing, no shadows) and quantized to 8 bits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Pose};
use crate::error::{invalid, Result};
use crate::math::{self, Vec3};
use crate::ray::{pixel_center_ray, Ray};
use crate::scene::{FeatureMap, PosedView, Scene, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Cuboid { center: Vec3, half_extent: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
    /// Ground-truth mask label, 1..=254.
    pub mask_label: u8,
    /// Channel of the one-hot synthetic feature; 0 is the background's.
    pub feature_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: u32,
    pub height: u32,
    pub fov_y_degrees: f64,
    pub near: f64,
    pub far: f64,
    pub views: usize,
    /// Views with `index % test_every == 0` form the test split.
    pub test_every: usize,
    pub ring_radius: f64,
    pub elevation_degrees: f64,
    /// Elevation varies by `± swing · sin(3·azimuth)` around the ring.
    pub elevation_swing_degrees: f64,
    pub primitives: Vec<Primitive>,
    /// Ground albedo oscillates between these two colors.
    pub ground_albedo: [[f64; 3]; 2],
    /// Spatial frequency (radians per unit) of the ground texture.
    pub ground_frequency: f64,
    /// Direction towards the light.
    pub light: Vec3,
    pub ambient: f64,
    pub feature_channels: usize,
    /// Standard deviation σ_f of the feature noise.
    pub feature_noise: f64,
    /// Feature maps are `H/stride × W/stride`.
    pub feature_stride: usize,
}

impl SyntheticSpec {
    /// One red sphere on a gray ground.
    pub fn single_sphere() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_y_degrees: 40.0,
            near: 1.5,
            far: 7.5,
            views: 20,
            test_every: 5,
            ring_radius: 4.0,
            elevation_degrees: 50.0,
            elevation_swing_degrees: 8.0,
            primitives: vec![Primitive {
                shape: Shape::Sphere {
                    center: Vec3::new(0.0, 0.6, 0.0),
                    radius: 0.6,
                },
                albedo: [0.85, 0.15, 0.12],
                mask_label: 1,
                feature_label: 1,
            }],
            ground_albedo: [[0.55, 0.55, 0.52], [0.42, 0.44, 0.47]],
            ground_frequency: 1.3,
            light: Vec3::new(0.4, 1.0, 0.3),
            ambient: 0.35,
            feature_channels: 8,
            feature_noise: 0.3,
            feature_stride: 1,
        }
    }

    /// A sphere and a box resting on the ground that share one feature label.
    pub fn two_objects() -> Self {
        let mut s = Self::single_sphere();
        s.primitives = vec![
            Primitive {
                shape: Shape::Sphere {
                    center: Vec3::new(-0.65, 0.5, 0.55),
                    radius: 0.5,
                },
                albedo: [0.85, 0.15, 0.12],
                mask_label: 1,
                feature_label: 1,
            },
            Primitive {
                shape: Shape::Cuboid {
                    center: Vec3::new(0.65, 0.4, -0.55),
                    half_extent: Vec3::new(0.4, 0.4, 0.4),
                },
                albedo: [0.15, 0.35, 0.85],
                mask_label: 2,
                feature_label: 1,
            },
        ];
        s
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::from_fov(self.width, self.height, self.fov_y_degrees, self.near, self.far)
    }

    pub fn pose(&self, index: usize) -> Pose {
        let azimuth = 2.0 * core::f64::consts::PI * index as f64 / self.views as f64;
        let elev = (self.elevation_degrees + self.elevation_swing_degrees * math::sin(3.0 * azimuth))
            .to_radians();
        let eye = Vec3::new(
            self.ring_radius * math::cos(elev) * math::sin(azimuth),
            self.ring_radius * math::sin(elev),
            self.ring_radius * math::cos(elev) * math::cos(azimuth),
        );
        Pose::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0))
    }

    pub fn validate(&self) -> Result<()> {
        if self.views < 2 {
            return Err(invalid!("need at least 2 views, got {}", self.views));
        }
        if self.test_every < 2 || self.test_every > self.views {
            return Err(invalid!("test_every must lie in 2..={}", self.views));
        }
        self.camera().validate()?;
        if self.primitives.is_empty() || self.primitives.len() > 3 {
            return Err(invalid!("need 1 to 3 primitives, got {}", self.primitives.len()));
        }
        if self.feature_channels < 2 || self.feature_stride == 0 {
            return Err(invalid!("need at least 2 feature channels and a positive stride"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(invalid!("feature noise must be non-negative"));
        }
        for (k, p) in self.primitives.iter().enumerate() {
            if p.mask_label == 0 || p.mask_label == 255 {
                return Err(invalid!("primitive {k}: mask labels must lie in 1..=254"));
            }
            if p.feature_label >= self.feature_channels {
                return Err(invalid!("primitive {k}: feature label outside the channels"));
            }
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(invalid!("primitive {k}: albedo outside [0, 1]"));
            }
            let (center, reach) = bounding_sphere(&p.shape);
            for v in 0..self.views {
                let d = (center - self.pose(v).translation()).length();
                if d - reach < self.near || d + reach > self.far {
                    return Err(invalid!("primitive {k} leaves [near, far] as seen from view {v}"));
                }
            }
        }
        Ok(())
    }
}

fn bounding_sphere(shape: &Shape) -> (Vec3, f64) {
    match *shape {
        Shape::Sphere { center, radius } => (center, radius),
        Shape::Cuboid { center, half_extent } => (center, half_extent.length()),
    }
}

/// First intersection of a ray with one primitive: distance and normal.
pub fn intersect(shape: &Shape, ray: &Ray) -> Option<(f64, Vec3)> {
    match *shape {
        Shape::Sphere { center, radius } => {
            let oc = ray.origin - center;
            let b = oc.dot(ray.direction);
            let c = oc.dot(oc) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = math::sqrt(disc);
            let t = if -b - s > 0.0 { -b - s } else { -b + s };
            (t > 0.0).then(|| (t, (ray.at(t) - center).normalized()))
        }
        Shape::Cuboid { center, half_extent } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis = 0;
            for a in 0..3 {
                let (o, d) = (ray.origin[a] - center[a], ray.direction[a]);
                let h = half_extent[a];
                if d == 0.0 {
                    if o.abs() > h {
                        return None;
                    }
                    continue;
                }
                let (mut lo, mut hi) = ((-h - o) / d, (h - o) / d);
                if lo > hi {
                    core::mem::swap(&mut lo, &mut hi);
                }
                if lo > t0 {
                    t0 = lo;
                    axis = a;
                }
                t1 = t1.min(hi);
            }
            if t0 > t1 || t0 <= 0.0 {
                return None;
            }
            let mut n = [0.0; 3];
            n[axis] = if ray.direction[axis] > 0.0 { -1.0 } else { 1.0 };
            Some((t0, Vec3::from_array(n)))
        }
    }
}

/// What the center ray of a pixel sees first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hit {
    Primitive { index: usize, t: f64, normal: Vec3 },
    Ground { t: f64 },
    Nothing,
}

pub fn trace(spec: &SyntheticSpec, ray: &Ray) -> Hit {
    let mut best = Hit::Nothing;
    let mut best_t = f64::INFINITY;
    for (index, p) in spec.primitives.iter().enumerate() {
        if let Some((t, normal)) = intersect(&p.shape, ray) {
            if t < best_t {
                best_t = t;
                best = Hit::Primitive { index, t, normal };
            }
        }
    }
    if ray.direction.y < 0.0 {
        let t = -ray.origin.y / ray.direction.y;
        if t > 0.0 && t < best_t {
            best = Hit::Ground { t };
        }
    }
    best
}

fn ground_albedo(spec: &SyntheticSpec, p: Vec3) -> [f64; 3] {
    let f = spec.ground_frequency;
    let u = 0.5 + 0.5 * math::sin(f * p.x) * math::cos(f * p.z);
    let [a, b] = spec.ground_albedo;
    [
        a[0] + (b[0] - a[0]) * u,
        a[1] + (b[1] - a[1]) * u,
        a[2] + (b[2] - a[2]) * u,
    ]
}

fn quantize(v: f64) -> f64 {
    math::round(v.clamp(0.0, 1.0) * 255.0) / 255.0
}

/// Shaded color, mask label and feature label of one pixel.
pub fn shade(spec: &SyntheticSpec, ray: &Ray) -> ([f64; 3], u8, usize) {
    let light = spec.light.normalized();
    let lit = |albedo: [f64; 3], normal: Vec3| {
        let k = spec.ambient + (1.0 - spec.ambient) * normal.dot(light).max(0.0);
        [albedo[0] * k, albedo[1] * k, albedo[2] * k]
    };
    match trace(spec, ray) {
        Hit::Primitive { index, normal, .. } => {
            let p = &spec.primitives[index];
            (lit(p.albedo, normal), p.mask_label, p.feature_label)
        }
        Hit::Ground { t } => {
            let albedo = ground_albedo(spec, ray.at(t));
            (lit(albedo, Vec3::new(0.0, 1.0, 0.0)), 0, 0)
        }
        Hit::Nothing => ([0.0; 3], 0, 0),
    }
}

/// Renders the scene described by `spec`. Deterministic in `(spec, seed)`;
/// the seed only drives the feature noise.
pub fn make_synthetic_scene(spec: &SyntheticSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let camera = spec.camera();
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut views = Vec::with_capacity(spec.views);
    for v in 0..spec.views {
        let pose = spec.pose(v);
        let mut image = vec![0.0; w * h * 3];
        let mut mask = vec![0u8; w * h];
        let mut labels = vec![0usize; w * h];
        for y in 0..h {
            for x in 0..w {
                let ray = pixel_center_ray(&camera, &pose, x as u32, y as u32);
                let (c, m, f) = shade(spec, &ray);
                let i = y * w + x;
                for ch in 0..3 {
                    image[3 * i + ch] = quantize(c[ch]);
                }
                mask[i] = m;
                labels[i] = f;
            }
        }
        let id: String = format!("view_{v:03}");
        let features = synthetic_features(spec, &labels, seed, v, &id)?;
        views.push(PosedView {
            id,
            image,
            pose,
            mask: Some(mask),
            features: Some(features),
            tokens: None,
        });
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..spec.views).partition(|i| i % spec.test_every == 0);
    let scene = Scene {
        camera,
        views,
        split: Split { train, test },
    };
    scene.validate()?;
    Ok(scene)
}

/// Noisy L2-normalized one-hot features at `stride`-subsampled pixel centers.
fn synthetic_features(
    spec: &SyntheticSpec,
    labels: &[usize],
    seed: u64,
    view: usize,
    id: &str,
) -> Result<FeatureMap> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let s = spec.feature_stride;
    let (fw, fh) = (w.div_ceil(s), h.div_ceil(s));
    let c = spec.feature_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view as u64 + 1);
    let mut data = Vec::with_capacity(fw * fh * c);
    let mut v = vec![0.0f64; c];
    for fy in 0..fh {
        for fx in 0..fw {
            let label = labels[(fy * s).min(h - 1) * w + (fx * s).min(w - 1)];
            for (ch, x) in v.iter_mut().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *x = (ch == label) as u8 as f64 + spec.feature_noise * noise;
            }
            let n = math::norm(&v);
            data.extend(v.iter().map(|x| (x / n) as f32));
        }
    }
    FeatureMap::new(fh, fw, c, data, id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            width: 24,
            height: 24,
            views: 4,
            test_every: 2,
            ..SyntheticSpec::single_sphere()
        }
    }

    #[test]
    fn every_view_sees_part_of_the_sphere() {
        let spec = SyntheticSpec::single_sphere();
        let scene = make_synthetic_scene(&spec, 7).unwrap();
        assert_eq!(scene.views.len(), 20);
        for v in &scene.views {
            let m = v.mask.as_ref().unwrap();
            let fg = m.iter().filter(|&&l| l != 0).count();
            assert!(fg > 0 && fg < m.len(), "{}: {fg}", v.id);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_synthetic_scene(&small(), 3).unwrap();
        let b = make_synthetic_scene(&small(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_foreground_features_are_identical() {
        let mut spec = small();
        spec.feature_noise = 0.0;
        let scene = make_synthetic_scene(&spec, 1).unwrap();
        let v = &scene.views[0];
        let m = v.mask.as_ref().unwrap();
        let fm = v.features.as_ref().unwrap();
        let fg: Vec<usize> = (0..m.len()).filter(|&i| m[i] != 0).collect();
        let a = fm.at(fg[0] / 24, fg[0] % 24);
        let b = fm.at(fg[fg.len() - 1] / 24, fg[fg.len() - 1] % 24);
        let cos: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        assert_eq!(cos, 1.0);
    }

    #[test]
    fn too_few_views() {
        let mut spec = small();
        spec.views = 1;
        assert!(make_synthetic_scene(&spec, 0).is_err());
    }

    #[test]
    fn primitive_beyond_far_is_rejected() {
        let mut spec = small();
        spec.far = 3.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn the_whole_frame_hits_something_within_far() {
        let spec = SyntheticSpec::single_sphere();
        let camera = spec.camera();
        for v in 0..spec.views {
            let pose = spec.pose(v);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let ray = pixel_center_ray(&camera, &pose, x, y);
                    let t = match trace(&spec, &ray) {
                        Hit::Primitive { t, .. } | Hit::Ground { t } => t,
                        Hit::Nothing => f64::INFINITY,
                    };
                    assert!(t < spec.far, "view {v} pixel ({x},{y}) at {t}");
                }
            }
        }
    }
}
