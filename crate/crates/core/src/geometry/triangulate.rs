use nalgebra::{Matrix3x4, Matrix4, RowVector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CameraModel, Pixel, Point3, RelativePose, MIN_DEPTH};

/// Smallest disparity accepted by [`stereo_triangulate`], in pixels.
pub const MIN_DISPARITY: f64 = 0.1;
/// Smallest angle between viewing rays accepted by [`triangulate_linear`].
pub const MIN_RAY_ANGLE: f64 = 1e-4;

/// Rectified stereo pair sharing the left camera's intrinsics; the right
/// camera sits `baseline` meters along the left camera's +x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub camera: CameraModel,
    pub baseline: f64,
}

impl StereoRig {
    /// Pose mapping left-camera coordinates into the right camera.
    pub fn right_from_left(&self) -> RelativePose {
        RelativePose::new(
            nalgebra::Matrix3::identity(),
            nalgebra::Vector3::new(-self.baseline, 0.0, 0.0),
        )
    }
}

/// Depth from disparity on a rectified rig; the point is expressed in the
/// left camera frame.
pub fn stereo_triangulate(rig: &StereoRig, left: Pixel, right: Pixel) -> Result<Point3> {
    let disparity = left.x - right.x;
    if !(disparity > MIN_DISPARITY) {
        return Err(Error::DegenerateDisparity(disparity));
    }
    let z = rig.camera.fx * rig.baseline / disparity;
    Ok(rig.camera.back_project(left, z))
}

fn camera_matrix(camera: &CameraModel, pose: &RelativePose) -> Matrix3x4<f64> {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
    camera.matrix() * rt
}

/// Homogeneous DLT solution without any depth checks. `None` when the
/// solution lies at infinity.
pub(crate) fn triangulate_dlt(
    pose: &RelativePose,
    leader: &CameraModel,
    follower: &CameraModel,
    pair: (Pixel, Pixel),
) -> Option<Point3> {
    let p1 = camera_matrix(leader, &RelativePose::identity());
    let p2 = camera_matrix(follower, pose);
    let (a, b) = pair;
    // Row-normalize for conditioning; the scale of each equation is arbitrary.
    let rows = [
        a.x * p1.row(2) - p1.row(0),
        a.y * p1.row(2) - p1.row(1),
        b.x * p2.row(2) - p2.row(0),
        b.y * p2.row(2) - p2.row(1),
    ];
    let mut m = Matrix4::zeros();
    for (i, r) in rows.iter().enumerate() {
        let n = r.norm();
        let r: RowVector4<f64> = if n > 0.0 { r / n } else { *r };
        m.set_row(i, &r);
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    let h = v_t.row(k);
    if h[3].abs() < 1e-14 * h.norm() {
        return None;
    }
    Some(Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Linear (DLT) triangulation of one leader/follower pixel pair. The point
/// is returned in the leader frame.
pub fn triangulate_linear(
    pose: &RelativePose,
    leader: &CameraModel,
    follower: &CameraModel,
    pair: (Pixel, Pixel),
) -> Result<Point3> {
    let ray_l = leader.normalize(pair.0).normalize();
    let ray_f = (pose.rotation.transpose() * follower.normalize(pair.1)).normalize();
    let baseline = pose.center().coords;
    // Parallel viewing rays, or rays running along the baseline.
    let angle = ray_l.cross(&ray_f).norm().atan2(ray_l.dot(&ray_f));
    let along_baseline = baseline.norm() > 0.0
        && ray_l.cross(&baseline.normalize()).norm() < MIN_RAY_ANGLE
        && ray_f.cross(&baseline.normalize()).norm() < MIN_RAY_ANGLE;
    if angle < MIN_RAY_ANGLE || along_baseline {
        return Err(Error::ParallelRays);
    }
    let x = triangulate_dlt(pose, leader, follower, pair).ok_or(Error::ParallelRays)?;
    let depth_f = pose.transform_point(&x).z;
    if x.z <= MIN_DEPTH || depth_f <= MIN_DEPTH {
        return Err(Error::NegativeDepth);
    }
    Ok(x)
}
