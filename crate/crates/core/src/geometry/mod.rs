//! Multi-view geometry: triangulation, epipolar estimation, PnP and bundle
//! adjustment.
//!
//! Two-view quantities follow the pose convention of [`crate::types`]: the
//! leader camera is the reference frame and a [`RelativePose`] maps leader
//! coordinates into the follower camera, so `p_f^T F p_l = 0`.

mod bundle;
mod essential;
mod fundamental;
mod p3p;
mod pnp;
mod ransac;
mod triangulate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Pixel, Point3};

pub use bundle::{bundle_adjust, reprojection_rms, BundleResult, Observation};
pub use essential::{essential_and_pose, essential_from_fundamental};
pub use fundamental::{
    epipolar_residual, fundamental_8pt, fundamental_from_pose, ransac_fundamental,
    symmetric_epipolar_distance, FundamentalMatrix,
};
pub use p3p::p3p;
pub use pnp::{pnp_ransac, pnp_solve, PNP_MIN_POINTS};
pub use ransac::RansacParams;
pub use triangulate::{stereo_triangulate, triangulate_linear, StereoRig};

/// Matched pixel pair: leader image first, follower image second.
pub type PixelPair = (Pixel, Pixel);

/// 3D leader-frame points paired with their follower-image projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet2D3D {
    pub points3: Vec<Point3>,
    pub pixels: Vec<Pixel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet2D3D {
    pub fn new(points3: Vec<Point3>, pixels: Vec<Pixel>) -> Result<Self> {
        if points3.len() != pixels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points vs {} pixels",
                points3.len(),
                pixels.len()
            )));
        }
        Ok(Self {
            points3,
            pixels,
            weights: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points3.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3.is_empty()
    }

    /// Subset selected by `mask`.
    pub fn select(&self, mask: &[bool]) -> Self {
        let keep = |i: &usize| mask[*i];
        let idx: Vec<usize> = (0..self.len()).filter(keep).collect();
        Self {
            points3: idx.iter().map(|&i| self.points3[i]).collect(),
            pixels: idx.iter().map(|&i| self.pixels[i]).collect(),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }

    /// Drops later entries whose 3D point duplicates an earlier one within 1e-9.
    pub fn dedup(&self) -> Self {
        let mut mask = vec![true; self.len()];
        for i in 0..self.len() {
            for j in 0..i {
                if mask[j] && (self.points3[i] - self.points3[j]).norm() <= 1e-9 {
                    mask[i] = false;
                    break;
                }
            }
        }
        self.select(&mask)
    }
}
