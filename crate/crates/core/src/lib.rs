//! Numeric core for self-supervised object segmentation with radiance fields.
//!
//! A small radiance field with a parallel segmentation head is first fitted to
//! posed images with a photometric loss, then the segmentation head alone is
//! trained with a contrastive loss that correlates rendered segmentation
//! logits against frozen 2D features (appearance level) and against rendered
//! 3D points (geometry level). Object masks are recovered from rendered logits
//! with K-means.
//!
//! The crate is `no_std` (it needs `alloc`). All transcendental functions go
//! through `libm`, so results are bit-reproducible across targets and across
//! the sequential and `parallel` builds.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod camera;
pub mod error;
pub mod cluster;
pub mod correspond;
pub mod encoding;
pub mod eval;
pub mod field;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod ray;
pub mod render;
pub mod scene;
pub mod synthetic;
pub mod train;

mod exec;
mod kernel;

pub use camera::{CameraModel, Pose};
pub use error::{Error, Result};
pub use cluster::ClusterModel;
pub use correspond::{CorrVolume, PairSet, PatchDescriptor, VolumeKind};
pub use encoding::EncodingConfig;
pub use eval::{EvalReport, ViewMetrics};
pub use field::{FieldConfig, FieldOutput, FieldParams, ParamGroup};
pub use losses::{LossReport, LossWeights};
pub use math::Vec3;
pub use metrics::SegMetrics;
pub use ray::{PatchRays, Ray, RaySamples};
pub use render::RenderedPatch;
pub use scene::{FeatureMap, PosedView, Scene, Split};
pub use synthetic::{Primitive, Shape, SyntheticSpec};
pub use train::{TrainConfig, TrainState};
