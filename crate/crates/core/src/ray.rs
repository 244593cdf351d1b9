//! Camera rays, strided ray patches and stratified samples along rays.

use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::camera::{CameraModel, Pose};
use crate::error::{invalid, Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction; doubles as the viewing direction fed to the field.
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Ray through continuous image-plane coordinates `(x, y)`.
///
/// Integer pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`; see
/// [`pixel_center_ray`].
pub fn pixel_to_ray(camera: &CameraModel, pose: &Pose, pixel: (f64, f64)) -> Result<Ray> {
    let (x, y) = pixel;
    if !(x >= 0.0 && y >= 0.0 && x <= camera.width as f64 && y <= camera.height as f64) {
        return Err(Error::PixelOutOfBounds {
            x,
            y,
            width: camera.width,
            height: camera.height,
        });
    }
    Ok(unchecked_ray(camera, pose, x, y))
}

fn unchecked_ray(camera: &CameraModel, pose: &Pose, x: f64, y: f64) -> Ray {
    let local = Vec3::new((x - camera.cx) / camera.fx, -(y - camera.cy) / camera.fy, -1.0);
    Ray {
        origin: pose.translation(),
        direction: pose.rotate(local).normalized(),
        near: camera.near,
        far: camera.far,
    }
}

/// Ray through the center of integer pixel `(px, py)`.
pub fn pixel_center_ray(camera: &CameraModel, pose: &Pose, px: u32, py: u32) -> Ray {
    debug_assert!(px < camera.width && py < camera.height);
    unchecked_ray(camera, pose, px as f64 + 0.5, py as f64 + 0.5)
}

/// A `P × P` grid of rays sampled every `stride` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRays {
    pub size: usize,
    pub stride: usize,
    /// Top-left pixel `(x0, y0)` of the receptive field.
    pub origin: (u32, u32),
    pub view: usize,
    /// Row-major rays, index `i * size + j`.
    pub rays: Vec<Ray>,
    /// Integer pixel of each ray, `(x0 + j·k, y0 + i·k)`.
    pub pixels: Vec<(u32, u32)>,
}

impl PatchRays {
    /// Builds the patch at a fixed placement.
    pub fn at(
        camera: &CameraModel,
        pose: &Pose,
        view: usize,
        size: usize,
        stride: usize,
        origin: (u32, u32),
    ) -> Result<Self> {
        check_patch_fits(camera, size, stride)?;
        let span = (size * stride) as u32;
        if origin.0 + span > camera.width || origin.1 + span > camera.height {
            return Err(invalid!(
                "patch at {:?} with span {span} leaves the {}x{} image",
                origin,
                camera.width,
                camera.height
            ));
        }
        let mut rays = Vec::with_capacity(size * size);
        let mut pixels = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                let px = origin.0 + (j * stride) as u32;
                let py = origin.1 + (i * stride) as u32;
                pixels.push((px, py));
                rays.push(pixel_center_ray(camera, pose, px, py));
            }
        }
        Ok(Self {
            size,
            stride,
            origin,
            view,
            rays,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

fn check_patch_fits(camera: &CameraModel, size: usize, stride: usize) -> Result<()> {
    if size == 0 || stride == 0 {
        return Err(invalid!("patch size and stride must be positive"));
    }
    let span = size * stride;
    if span > camera.width.min(camera.height) as usize {
        return Err(invalid!(
            "patch span {size}x{stride} = {span} exceeds the {}x{} image",
            camera.width,
            camera.height
        ));
    }
    Ok(())
}

/// Number of valid placements along x and y for a strided patch.
pub fn placement_counts(camera: &CameraModel, size: usize, stride: usize) -> Result<(u32, u32)> {
    check_patch_fits(camera, size, stride)?;
    let span = (size * stride) as u32;
    Ok((camera.width - span + 1, camera.height - span + 1))
}

/// Strided patch at a uniformly random valid placement.
pub fn sample_strided_patch<R: RngCore + ?Sized>(
    camera: &CameraModel,
    pose: &Pose,
    view: usize,
    size: usize,
    stride: usize,
    rng: &mut R,
) -> Result<PatchRays> {
    let (nx, ny) = placement_counts(camera, size, stride)?;
    let x0 = rng.random_range(0..nx);
    let y0 = rng.random_range(0..ny);
    PatchRays::at(camera, pose, view, size, stride, (x0, y0))
}

/// Sample distances `t` and intervals `δ` along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// `K` stratified distances in `[near, far]`.
///
/// Bin `i` is `[near + i·h, near + (i+1)·h]` with `h = (far − near)/K`. With
/// `rng` each bin gets one uniform draw, otherwise its midpoint. The last
/// interval is the bin width `h`.
pub fn stratified_samples<R: RngCore + ?Sized>(
    near: f64,
    far: f64,
    count: usize,
    rng: Option<&mut R>,
) -> Result<RaySamples> {
    if count < 2 {
        return Err(invalid!("need at least 2 samples per ray, got {count}"));
    }
    if !(near < far) {
        return Err(invalid!("near {near} must be below far {far}"));
    }
    let width = (far - near) / count as f64;
    let mut t = Vec::with_capacity(count);
    match rng {
        Some(rng) => {
            for i in 0..count {
                let u: f64 = rng.random();
                t.push(near + (i as f64 + u) * width);
            }
        }
        None => {
            for i in 0..count {
                t.push(near + (i as f64 + 0.5) * width);
            }
        }
    }
    let mut delta = Vec::with_capacity(count);
    for i in 0..count - 1 {
        delta.push(t[i + 1] - t[i]);
    }
    delta.push(width);
    Ok(RaySamples { t, delta })
}

/// Stratified samples for a [`Ray`] using its own bounds.
pub fn samples_for_ray<R: RngCore + ?Sized>(
    ray: &Ray,
    count: usize,
    rng: Option<&mut R>,
) -> Result<RaySamples> {
    stratified_samples(ray.near, ray.far, count, rng)
}
