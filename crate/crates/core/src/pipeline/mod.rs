//! End-to-end leader/follower estimation: associate people, refine the
//! key-point correspondences, and solve PnP against the leader's 3D
//! key-points. Also the leader's stereo front end, the two-view
//! reconstruction used when no 3D is available, and timestamp pairing.

mod sfm;
mod sync;

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionSet, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{
    pnp_ransac, stereo_triangulate, CorrespondenceSet2D3D, RansacParams, StereoRig,
};
use crate::imaging::Image;
use crate::refine::{build_correspondences, refine_stacked, Correspondence, RefineParams};
use crate::reid::{associate_with, Association, ReidParams};
use crate::types::{compose, invert, project, CameraModel, Pixel, Point3, RelativePose};

pub use sfm::{
    reconstruct_from_correspondences, two_view_reconstruct, SfmConfig, SfmResult, TwoViewGeometry,
};
pub use sync::{
    flush_matches, match_timestamps, sliding_window_match, MeasurementBuffer, Timestamped,
};

/// Fewest refined correspondences accepted before PnP.
pub const MIN_CORRESPONDENCES: usize = 6;
/// Views whose rays meet at the person at more than this angle (radians)
/// see mostly different sides of the body.
pub const MAX_VIEWING_ANGLE: f64 = 135.0 * std::f64::consts::PI / 180.0;
/// Largest row difference (px) accepted between rectified stereo matches.
pub const STEREO_MAX_ROW_DIFF: f64 = 2.0;

/// Leader measurement: image, detections and 3D key-points in the leader
/// camera frame, row-aligned with the detections.
#[derive(Debug, Clone)]
pub struct LeaderBundle {
    pub image: Image,
    pub detections: DetectionSet,
    pub keypoints3d: Vec<[Option<Point3>; NUM_KEYPOINTS]>,
    pub timestamp: f64,
}

impl LeaderBundle {
    pub fn new(
        image: Image,
        detections: DetectionSet,
        keypoints3d: Vec<[Option<Point3>; NUM_KEYPOINTS]>,
        timestamp: f64,
    ) -> Result<Self> {
        if keypoints3d.len() != detections.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} 3D rows for {} detections",
                keypoints3d.len(),
                detections.len()
            )));
        }
        for (s, p) in detections.skeletons.iter().zip(&keypoints3d) {
            if (0..NUM_KEYPOINTS).any(|j| p[j].is_some() && !s.visible[j]) {
                return Err(Error::Precondition(
                    "3D key-point given for an undetected slot".into(),
                ));
            }
        }
        Ok(Self {
            image,
            detections,
            keypoints3d,
            timestamp,
        })
    }

    /// Depth-sensor route: the 3D key-points travel inside the detection file.
    pub fn from_depth_detections(image: Image, detections: DetectionSet) -> Result<Self> {
        if !detections.has_3d() && !detections.is_empty() {
            return Err(Error::Precondition(
                "detections carry no keypoints3d".into(),
            ));
        }
        let keypoints3d = detections
            .skeletons
            .iter()
            .map(|s| std::array::from_fn(|j| s.point3d(j).filter(|_| s.visible[j])))
            .collect();
        let timestamp = detections.timestamp;
        Self::new(image, detections, keypoints3d, timestamp)
    }

    /// Stereo route: associate people between the rectified left and right
    /// views, refine the right key-points against the left ones and
    /// triangulate from disparity. Slots that fail any check stay `None`.
    pub fn from_stereo(
        left: (&Image, &DetectionSet),
        right: (&Image, &DetectionSet),
        rig: &StereoRig,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let (left_img, left_det) = left;
        let (right_img, right_det) = right;
        let mut keypoints3d = vec![[None; NUM_KEYPOINTS]; left_det.len()];
        let assoc = associate_with(left_img, left_det, right_img, right_det, &cfg.reid);
        let (initial, rows) = correspondences_with_rows(&assoc, left_det, right_det, |_, _| true)?;
        let refined = refine_stacked(left_img, right_img, &initial, &cfg.refine)?;
        for (c, (left_row, _)) in refined.iter().zip(rows) {
            let (l, r) = (c.leader_px, c.follower_px);
            if (l.y - r.y).abs() > STEREO_MAX_ROW_DIFF {
                continue;
            }
            if let Ok(p) = stereo_triangulate(rig, l, r) {
                keypoints3d[left_row][c.keypoint_index] = Some(p);
            }
        }
        Self::new(
            left_img.clone(),
            left_det.clone(),
            keypoints3d,
            left_det.timestamp,
        )
    }

    pub fn num_points(&self) -> usize {
        self.keypoints3d
            .iter()
            .flatten()
            .filter(|p| p.is_some())
            .count()
    }
}

/// Follower measurement.
#[derive(Debug, Clone)]
pub struct FollowerBundle {
    pub image: Image,
    pub detections: DetectionSet,
    pub camera: CameraModel,
    pub timestamp: f64,
}

impl FollowerBundle {
    pub fn new(
        image: Image,
        detections: DetectionSet,
        camera: CameraModel,
        timestamp: f64,
    ) -> Result<Self> {
        camera.validate()?;
        if (detections.width, detections.height) != (camera.width, camera.height)
            || (image.width(), image.height()) != (camera.width as usize, camera.height as usize)
        {
            return Err(Error::DimensionMismatch(format!(
                "camera is {}x{}, detections {}x{}, image {}x{}",
                camera.width,
                camera.height,
                detections.width,
                detections.height,
                image.width(),
                image.height()
            )));
        }
        for s in &detections.skeletons {
            for j in 0..NUM_KEYPOINTS {
                if let Some(p) = s.slot(j) {
                    if !camera.contains(p) {
                        return Err(Error::Bounds {
                            x: p.x,
                            y: p.y,
                            width: camera.width,
                            height: camera.height,
                        });
                    }
                }
            }
        }
        Ok(Self {
            image,
            detections,
            camera,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub reid: ReidParams,
    pub refine: RefineParams,
    pub ransac: RansacParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reid: ReidParams::default(),
            refine: RefineParams::default(),
            ransac: RansacParams::pnp(),
        }
    }
}

/// Wall time of each stage, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub reid_ms: f64,
    pub refine_ms: f64,
    pub pnp_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub associations: Vec<Association>,
    /// Refined correspondences admitted to PnP.
    pub correspondences: usize,
    pub inliers: usize,
    /// Over the PnP inliers, pixels.
    pub reprojection_rms: f64,
    /// Mean distance the refinement moved the follower key-points, pixels.
    pub mean_refinement_shift: f64,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Unrefined correspondences plus the (leader row, follower row) of each,
/// keeping only those accepted by `keep(leader_row, keypoint)`.
fn correspondences_with_rows(
    assoc: &[Association],
    leader: &DetectionSet,
    follower: &DetectionSet,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<(Vec<Correspondence>, Vec<(usize, usize)>)> {
    let mut cs = Vec::new();
    let mut rows = Vec::new();
    for a in assoc {
        let Some(li) = a.leader_index else {
            continue;
        };
        for c in build_correspondences(std::slice::from_ref(a), leader, follower)? {
            if keep(li, c.keypoint_index) {
                rows.push((li, a.follower_index));
                cs.push(c);
            }
        }
    }
    Ok((cs, rows))
}

/// Pose mapping leader-camera coordinates into the follower camera.
pub fn estimate_relative_pose(
    leader: &LeaderBundle,
    follower: &FollowerBundle,
    cfg: &PipelineConfig,
) -> Result<(RelativePose, Diagnostics)> {
    let start = Instant::now();
    let t = Instant::now();
    let associations = associate_with(
        &leader.image,
        &leader.detections,
        &follower.image,
        &follower.detections,
        &cfg.reid,
    );
    if associations.iter().all(|a| a.leader_index.is_none()) {
        return Err(Error::NoAssociations);
    }
    let reid_ms = ms(t);

    let t = Instant::now();
    let (initial, rows) = correspondences_with_rows(
        &associations,
        &leader.detections,
        &follower.detections,
        |li, j| leader.keypoints3d[li][j].is_some(),
    )?;
    if initial.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientCorrespondences {
            found: initial.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    let refined = refine_stacked(&leader.image, &follower.image, &initial, &cfg.refine)?;
    let refine_ms = ms(t);

    let t = Instant::now();
    let points3: Vec<Point3> = refined
        .iter()
        .zip(&rows)
        .map(|(c, (li, _))| leader.keypoints3d[*li][c.keypoint_index].expect("filtered above"))
        .collect();
    let pixels: Vec<Pixel> = refined.iter().map(|c| c.follower_px).collect();
    let cset = CorrespondenceSet2D3D::new(points3, pixels)?;
    let (pose, mask) = pnp_ransac(&cset, &follower.camera, &cfg.ransac)?;
    let pnp_ms = ms(t);

    let inlier_errors: Vec<f64> = mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| {
            project(&follower.camera, &pose, &cset.points3[i])
                .map(|p| p.distance(cset.pixels[i]).powi(2))
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let reprojection_rms =
        (inlier_errors.iter().sum::<f64>() / inlier_errors.len().max(1) as f64).sqrt();
    let mean_refinement_shift = refined
        .iter()
        .map(|c| c.follower_px.distance(c.follower_px0))
        .sum::<f64>()
        / refined.len() as f64;
    let diagnostics = Diagnostics {
        associations,
        correspondences: refined.len(),
        inliers: inlier_errors.len(),
        reprojection_rms,
        mean_refinement_shift,
        timings: StageTimings {
            reid_ms,
            refine_ms,
            pnp_ms,
            total_ms: ms(start),
        },
    };
    Ok((pose, diagnostics))
}

/// Angle at the person between the rays to the two cameras, and whether it
/// exceeds [`MAX_VIEWING_ANGLE`]. `leader_to_follower` maps leader-camera
/// coordinates into the follower camera; `person_centroid` is in the leader
/// frame.
pub fn viewing_angle_check(
    leader_to_follower: &RelativePose,
    person_centroid: &Point3,
) -> Result<(f64, bool)> {
    let in_follower = leader_to_follower.transform_point(person_centroid);
    for depth in [person_centroid.z, in_follower.z] {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth { depth });
        }
    }
    let to_leader: Vector3<f64> = -person_centroid.coords;
    let to_follower = leader_to_follower.center() - person_centroid;
    let angle = if to_leader == to_follower {
        0.0
    } else {
        to_leader.angle(&to_follower)
    };
    Ok((angle, angle > MAX_VIEWING_ANGLE))
}

/// Follower-to-global pose from the leader's global pose (leader to global)
/// and the follower-to-leader transform.
pub fn follower_global_pose(
    leader_global: &RelativePose,
    follower_to_leader: &RelativePose,
) -> Result<RelativePose> {
    if leader_global.up_to_scale || follower_to_leader.up_to_scale {
        return Err(Error::ScaleMismatch);
    }
    compose(leader_global, follower_to_leader)
}

/// Follower-to-leader transform from an estimate of [`estimate_relative_pose`].
pub fn follower_to_leader(leader_to_follower: &RelativePose) -> RelativePose {
    invert(leader_to_follower)
}
