//! Planar follower paths around a static leader.

use nalgebra::Vector3;

use super::{SceneCamera, SceneSpec, FOLLOWER_ID, LEADER_ID};
use crate::error::{Error, Result};
use crate::types::Point3;

/// Downward tilt of the path cameras, radians.
const PATH_PITCH: f64 = 0.05;

/// Waypoints along the perimeter of `[-half_x, half_x] x [-half_z, half_z]`,
/// starting at `(-half_x, -half_z)`, one every `step` meters (each side is
/// split evenly). The start is not repeated at the end.
pub fn rectangle_path(half_x: f64, half_z: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    if !(half_x > 0.0 && half_z > 0.0 && step > 0.0)
        || ![half_x, half_z, step].iter().all(|v| v.is_finite())
    {
        return Err(Error::Config(format!(
            "rectangle needs positive finite sizes, got {half_x} {half_z} {step}"
        )));
    }
    let corners = [
        (-half_x, -half_z),
        (half_x, -half_z),
        (half_x, half_z),
        (-half_x, half_z),
        (-half_x, -half_z),
    ];
    let mut out = Vec::new();
    for w in corners.windows(2) {
        let ((x0, z0), (x1, z1)) = (w[0], w[1]);
        let n = ((x1 - x0).hypot(z1 - z0) / step).round().max(1.0) as usize;
        for i in 0..n {
            let t = i as f64 / n as f64;
            out.push((x0 + t * (x1 - x0), z0 + t * (z1 - z0)));
        }
    }
    Ok(out)
}

pub fn path_camera_id(k: usize) -> String {
    format!("{FOLLOWER_ID}_{k:03}")
}

/// Replaces the follower of `spec` by one camera per waypoint. Waypoints are
/// ground-plane offsets from the leader center; every path camera sits at
/// the leader's height and turns to face the group center.
pub fn with_planar_followers(spec: &SceneSpec, offsets: &[(f64, f64)]) -> Result<SceneSpec> {
    let leader = spec
        .cameras
        .iter()
        .find(|c| c.id == LEADER_ID)
        .ok_or_else(|| Error::Config(format!("scene has no {LEADER_ID} camera")))?;
    if spec.person_poses.is_empty() {
        return Err(Error::Config(
            "a follower path needs at least one person".into(),
        ));
    }
    let group = spec
        .person_poses
        .iter()
        .map(|p| p.position.coords)
        .sum::<Vector3<f64>>()
        / spec.person_poses.len() as f64;
    let origin = leader.center();
    let mut out = spec.clone();
    out.cameras.retain(|c| c.id != FOLLOWER_ID);
    for (k, &(dx, dz)) in offsets.iter().enumerate() {
        let center = Point3::new(origin.x + dx, origin.y, origin.z + dz);
        let look = group - center.coords;
        out.cameras.push(SceneCamera::looking(
            path_camera_id(k),
            leader.camera.with_depth_source(Default::default()),
            center,
            look.x.atan2(look.z),
            PATH_PITCH,
        ));
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn rectangle_perimeter() {
        let p = rectangle_path(1.5, 1.0, 0.25).unwrap();
        assert_eq!(p.len(), 40);
        assert_eq!(p[0], (-1.5, -1.0));
        assert_eq!(p[12], (1.5, -1.0));
        assert_eq!(p[20], (1.5, 1.0));
        for w in p.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            assert!((d - 0.25).abs() < 1e-12);
        }
        assert!(p
            .iter()
            .all(|(x, z)| (x.abs() - 1.5).abs() < 1e-12 || (z.abs() - 1.0).abs() < 1e-12));
        assert!(rectangle_path(0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn path_cameras_face_the_group() {
        let spec = random_two_view_spec(2, &RandomSceneOptions::default());
        let path = rectangle_path(1.0, 0.5, 0.5).unwrap();
        let out = with_planar_followers(&spec, &path).unwrap();
        assert_eq!(out.cameras.len(), 1 + path.len());
        assert!(out.camera_index(FOLLOWER_ID).is_none());
        let leader = &out.cameras[0];
        let scene = generate_scene(&out).unwrap();
        for (k, (dx, dz)) in path.iter().enumerate() {
            let cam = &out.cameras[out.camera_index(&path_camera_id(k)).unwrap()];
            let d = cam.center() - leader.center();
            assert!((d.x - dx).abs() < 1e-12 && d.y.abs() < 1e-12 && (d.z - dz).abs() < 1e-12);
            // Every person's hip sits in front of the camera.
            for p in scene.people_in_camera(out.camera_index(&cam.id).unwrap()) {
                assert!(p[crate::detection::Keypoint::RightHip as usize].z > 0.0);
            }
        }
    }
}
