//! Two-view reconstruction when the leader has no 3D: refined key-point
//! pairs, RANSAC fundamental matrix, essential matrix and pose, linear
//! triangulation and bundle adjustment. The pose and points are up to scale.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionSet;
use crate::error::{Error, Result};
use crate::geometry::{
    bundle_adjust, essential_and_pose, essential_from_fundamental, ransac_fundamental,
    triangulate_linear, Observation, RansacParams,
};
use crate::imaging::Image;
use crate::refine::{build_correspondences, refine_stacked, Correspondence, RefineParams};
use crate::reid::{associate_with, Association, ReidParams};
use crate::types::{CameraModel, Point3, RelativePose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfmConfig {
    pub reid: ReidParams,
    pub refine: RefineParams,
    pub ransac: RansacParams,
    /// Skip the photometric refinement and use the detected key-points.
    pub skip_refinement: bool,
}

impl Default for SfmConfig {
    fn default() -> Self {
        Self {
            reid: ReidParams::default(),
            refine: RefineParams::default(),
            ransac: RansacParams::fundamental(),
            skip_refinement: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfmResult {
    pub associations: Vec<Association>,
    pub correspondences: Vec<Correspondence>,
    pub fundamental: Matrix3<f64>,
    pub essential: Matrix3<f64>,
    /// Fundamental-matrix inliers among `correspondences`.
    pub inliers: Vec<bool>,
    /// Leader to follower, unit translation, after bundle adjustment.
    pub pose: RelativePose,
    /// Leader-frame points, one per entry of `point_correspondence`.
    pub points: Vec<Point3>,
    /// Index into `correspondences` of each reconstructed point.
    pub point_correspondence: Vec<usize>,
    pub initial_rms: f64,
    pub final_rms: f64,
}

/// Geometric part of the reconstruction: fundamental matrix, pose, points
/// and bundle adjustment over the given correspondences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoViewGeometry {
    pub fundamental: Matrix3<f64>,
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
    pub pose: RelativePose,
    pub points: Vec<Point3>,
    pub point_correspondence: Vec<usize>,
    pub initial_rms: f64,
    pub final_rms: f64,
}

/// Full two-view pipeline from images and detections.
pub fn two_view_reconstruct(
    leader: (&Image, &DetectionSet, &CameraModel),
    follower: (&Image, &DetectionSet, &CameraModel),
    cfg: &SfmConfig,
) -> Result<SfmResult> {
    let (leader_img, leader_det, leader_cam) = leader;
    let (follower_img, follower_det, follower_cam) = follower;
    let associations = associate_with(
        leader_img,
        leader_det,
        follower_img,
        follower_det,
        &cfg.reid,
    );
    if associations.iter().all(|a| a.leader_index.is_none()) {
        return Err(Error::NoAssociations);
    }
    let initial = build_correspondences(&associations, leader_det, follower_det)?;
    let correspondences = if cfg.skip_refinement {
        initial
    } else {
        refine_stacked(leader_img, follower_img, &initial, &cfg.refine)?
    };
    let g =
        reconstruct_from_correspondences(&correspondences, leader_cam, follower_cam, &cfg.ransac)?;
    Ok(SfmResult {
        associations,
        correspondences,
        fundamental: g.fundamental,
        essential: g.essential,
        inliers: g.inliers,
        pose: g.pose,
        points: g.points,
        point_correspondence: g.point_correspondence,
        initial_rms: g.initial_rms,
        final_rms: g.final_rms,
    })
}

pub fn reconstruct_from_correspondences(
    correspondences: &[Correspondence],
    leader_cam: &CameraModel,
    follower_cam: &CameraModel,
    ransac: &RansacParams,
) -> Result<TwoViewGeometry> {
    let pairs: Vec<_> = correspondences
        .iter()
        .map(|c| (c.leader_px, c.follower_px))
        .collect();
    let (f, inliers) = ransac_fundamental(&pairs, ransac)?;
    let inlier_pairs: Vec<_> = pairs
        .iter()
        .zip(&inliers)
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    let essential = essential_from_fundamental(&f, leader_cam, follower_cam);
    let pose = essential_and_pose(&f, leader_cam, follower_cam, &inlier_pairs)?;

    let mut points = Vec::new();
    let mut point_correspondence = Vec::new();
    let mut observations = Vec::new();
    for (i, (pair, _)) in pairs
        .iter()
        .zip(&inliers)
        .enumerate()
        .filter(|(_, (_, m))| **m)
    {
        let Ok(x) = triangulate_linear(&pose, leader_cam, follower_cam, *pair) else {
            continue;
        };
        let k = points.len();
        observations.push(Observation {
            camera: 0,
            point: k,
            pixel: pair.0,
        });
        observations.push(Observation {
            camera: 1,
            point: k,
            pixel: pair.1,
        });
        points.push(x);
        point_correspondence.push(i);
    }
    if points.is_empty() {
        return Err(Error::InsufficientInliers {
            found: 0,
            required: ransac.min_inliers,
        });
    }
    let ba = bundle_adjust(
        &[RelativePose::identity(), pose],
        &points,
        &observations,
        &[*leader_cam, *follower_cam],
    )?;
    Ok(TwoViewGeometry {
        fundamental: f.0,
        essential,
        inliers,
        pose: ba.poses[1],
        points: ba.points,
        point_correspondence,
        initial_rms: ba.initial_rms,
        final_rms: ba.rms,
    })
}
