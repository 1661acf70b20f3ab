//! Frequency-domain LiDAR place recognition.
//!
//! A scan is cropped, stripped of ground returns and projected into a
//! Cartesian max-height image. The log-magnitude of that image's 2D spectrum
//! does not change under translation and rotates with the scene; unrolling
//! its centre on a polar grid gives a descriptor in which yaw becomes a
//! circular column shift. Keys built from per-ring statistics feed an exact
//! k-d tree for candidate retrieval, and a two-branch 2D point-to-plane ICP
//! recovers the relative pose of accepted matches.
//!
//! ```
//! use fresco::synth::{generate, perturb, SceneSpec};
//! use fresco::{describe, descriptor::compare, DescriptorParams};
//!
//! let params = DescriptorParams::default();
//! let scene = generate(&SceneSpec::new(7));
//! let revisit = perturb(&scene, 0.0, 0.0, 30.0, None);
//!
//! let a = describe(&scene, &params).unwrap();
//! let b = describe(&revisit, &params).unwrap();
//! let score = compare(&b, &a).unwrap();
//! // the viewpoint turned by 30 degrees, so the scene turned by -30 = 150 mod 180
//! assert_eq!(score.best_shift, 50);
//! ```

pub mod bev;
pub mod config;
pub mod dataset;
pub mod descriptor;
mod error;
pub mod eval;
pub mod index;
mod io;
pub mod kdtree;
pub mod pointcloud;
pub mod pose;
pub mod selftest;
pub mod spectrum;
pub mod synth;

pub use error::{Error, Result};

use serde::Serialize;

use crate::pointcloud::{GroundParams, PointCloud};
use crate::spectrum::FrescoDescriptor;

/// Everything needed to turn a raw scan into a descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DescriptorParams {
    /// Side of the BEV window, meters.
    pub window: f64,
    /// Bins per BEV side.
    pub bins: usize,
    /// Side of the central spectrum region that is unrolled.
    pub crop: usize,
    /// Radial rings of the descriptor.
    pub rings: usize,
    /// Angular sectors of the descriptor; must be even.
    pub sectors: usize,
    #[serde(skip)]
    pub ground: GroundParams,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            window: 80.0,
            bins: 128,
            crop: 64,
            rings: 32,
            sectors: 120,
            ground: GroundParams::default(),
        }
    }
}

/// Crop, ground removal, BEV projection, spectrum and polar unrolling.
pub fn describe(cloud: &PointCloud, params: &DescriptorParams) -> Result<FrescoDescriptor> {
    let cleaned = pointcloud::preprocess(cloud, params.window, &params.ground);
    describe_preprocessed(&cleaned, params)
}

/// Same as [`describe`] for a cloud that is already cropped and ground-free.
pub fn describe_preprocessed(cloud: &PointCloud, params: &DescriptorParams) -> Result<FrescoDescriptor> {
    let img = bev::make_bev(cloud, params.window, params.bins)?;
    let f = spectrum::fbev(&img);
    spectrum::unroll_polar(&f, params.crop, params.rings, params.sectors)
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bev.md")]
    mod bev {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/pose.md")]
    mod pose {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
