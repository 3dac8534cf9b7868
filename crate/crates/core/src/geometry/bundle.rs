use nalgebra::{DMatrix, DVector, Matrix2x3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{skew, CameraModel, Pixel, Point3, RelativePose, MIN_DEPTH};

const MAX_ITERATIONS: usize = 100;
const RELATIVE_TOLERANCE: f64 = 1e-12;

/// One image measurement of a 3D point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Pixel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleResult {
    pub poses: Vec<RelativePose>,
    pub points: Vec<Point3>,
    pub initial_rms: f64,
    pub rms: f64,
    pub iterations: usize,
}

fn residual(camera: &CameraModel, pose: &RelativePose, x: &Point3, px: Pixel) -> (f64, f64) {
    let xc = pose.transform_point(x);
    (
        camera.fx * xc.x / xc.z + camera.cx - px.x,
        camera.fy * xc.y / xc.z + camera.cy - px.y,
    )
}

/// Root-mean-square pixel residual over all observations.
pub fn reprojection_rms(
    poses: &[RelativePose],
    points: &[Point3],
    observations: &[Observation],
    intrinsics: &[CameraModel],
) -> f64 {
    if observations.is_empty() {
        return 0.0;
    }
    let sum: f64 = observations
        .iter()
        .map(|o| {
            let (u, v) = residual(
                &intrinsics[o.camera],
                &poses[o.camera],
                &points[o.point],
                o.pixel,
            );
            u * u + v * v
        })
        .sum();
    (sum / observations.len() as f64).sqrt()
}

/// Sum of squared residuals; infinite when any point is behind its camera.
fn total_cost(
    poses: &[RelativePose],
    points: &[Point3],
    observations: &[Observation],
    intrinsics: &[CameraModel],
) -> f64 {
    observations
        .iter()
        .map(|o| {
            let pose = &poses[o.camera];
            if pose.transform_point(&points[o.point]).z <= MIN_DEPTH {
                return f64::INFINITY;
            }
            let (u, v) = residual(&intrinsics[o.camera], pose, &points[o.point], o.pixel);
            u * u + v * v
        })
        .sum()
}

/// Parameter layout: cameras 1.. then points. Camera 0 is held fixed; when
/// the poses are up to scale, camera 1 keeps its translation norm and moves
/// only on the tangent plane of that sphere.
struct Layout {
    camera_offsets: Vec<Option<usize>>,
    translation_dims: Vec<usize>,
    point_offset: usize,
    len: usize,
}

impl Layout {
    fn new(poses: &[RelativePose], n_points: usize, fix_scale: bool) -> Self {
        let mut camera_offsets = vec![None];
        let mut translation_dims = vec![0];
        let mut offset = 0;
        for c in 1..poses.len() {
            let t_dims = if fix_scale && c == 1 { 2 } else { 3 };
            camera_offsets.push(Some(offset));
            translation_dims.push(t_dims);
            offset += 3 + t_dims;
        }
        Self {
            camera_offsets,
            translation_dims,
            point_offset: offset,
            len: offset + 3 * n_points,
        }
    }
}

/// Two unit vectors spanning the plane orthogonal to `t`.
fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = t.normalize();
    let helper = if u.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let b1 = u.cross(&helper).normalize();
    let b2 = u.cross(&b1);
    (b1, b2)
}

/// Jointly refines poses (except the first) and points by Levenberg-Marquardt
/// on the total squared reprojection error. Steps that do not lower the cost
/// are rejected, so the final RMS never exceeds the initial one.
pub fn bundle_adjust(
    poses: &[RelativePose],
    points: &[Point3],
    observations: &[Observation],
    intrinsics: &[CameraModel],
) -> Result<BundleResult> {
    if intrinsics.len() != poses.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} poses vs {} intrinsics",
            poses.len(),
            intrinsics.len()
        )));
    }
    if poses.len() < 2 {
        return Err(Error::GaugeUnderconstrained(format!(
            "need at least two cameras, got {}",
            poses.len()
        )));
    }
    let mut seen = vec![0usize; points.len()];
    for o in observations {
        if o.camera >= poses.len() || o.point >= points.len() {
            return Err(Error::Precondition(format!(
                "observation index out of range: {o:?}"
            )));
        }
        seen[o.point] += 1;
    }
    if let Some(i) = seen.iter().position(|&s| s < 2) {
        return Err(Error::Precondition(format!(
            "point {i} has {} observations; at least 2 required",
            seen[i]
        )));
    }
    let fix_scale = poses[1..].iter().all(|p| p.up_to_scale);
    if fix_scale && poses[1].translation.norm() <= 0.0 {
        return Err(Error::GaugeUnderconstrained(
            "zero baseline for up-to-scale gauge".into(),
        ));
    }

    let mut poses = poses.to_vec();
    let mut points = points.to_vec();
    let initial_rms = reprojection_rms(&poses, &points, observations, intrinsics);
    let mut current = total_cost(&poses, &points, observations, intrinsics);
    if !current.is_finite() {
        return Err(Error::Diverged(
            "points behind a camera before optimization".into(),
        ));
    }
    let layout = Layout::new(&poses, points.len(), fix_scale);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    // Already at the optimum to round-off: leave the input untouched.
    let stationary = current <= 1e-24 * observations.len() as f64;

    while !stationary && iterations < MAX_ITERATIONS {
        iterations += 1;
        let basis = tangent_basis(&poses[1].translation);
        let mut jtj = DMatrix::<f64>::zeros(layout.len, layout.len);
        let mut jtr = DVector::<f64>::zeros(layout.len);
        for o in observations {
            let camera = &intrinsics[o.camera];
            let pose = &poses[o.camera];
            let x = points[o.point];
            let rx = pose.rotation * x.coords;
            let xc = rx + pose.translation;
            let z_inv = 1.0 / xc.z;
            let r = [
                camera.fx * xc.x * z_inv + camera.cx - o.pixel.x,
                camera.fy * xc.y * z_inv + camera.cy - o.pixel.y,
            ];
            let d_proj = Matrix2x3::new(
                camera.fx * z_inv,
                0.0,
                -camera.fx * xc.x * z_inv * z_inv,
                0.0,
                camera.fy * z_inv,
                -camera.fy * xc.y * z_inv * z_inv,
            );
            // Sparse row of the Jacobian as (column, d/dcol) blocks.
            let mut cols: Vec<(usize, [f64; 2])> = Vec::with_capacity(9);
            if let Some(off) = layout.camera_offsets[o.camera] {
                let d_rot = d_proj * -skew(&rx);
                for k in 0..3 {
                    cols.push((off + k, [d_rot[(0, k)], d_rot[(1, k)]]));
                }
                if layout.translation_dims[o.camera] == 2 {
                    let s = pose.translation.norm();
                    for (k, b) in [basis.0, basis.1].iter().enumerate() {
                        let d = d_proj * (b * s);
                        cols.push((off + 3 + k, [d[0], d[1]]));
                    }
                } else {
                    for k in 0..3 {
                        cols.push((off + 3 + k, [d_proj[(0, k)], d_proj[(1, k)]]));
                    }
                }
            }
            let d_point = d_proj * pose.rotation;
            let p_off = layout.point_offset + 3 * o.point;
            for k in 0..3 {
                cols.push((p_off + k, [d_point[(0, k)], d_point[(1, k)]]));
            }
            for &(a, ja) in &cols {
                jtr[a] += ja[0] * r[0] + ja[1] * r[1];
                for &(b, jb) in &cols {
                    jtj[(a, b)] += ja[0] * jb[0] + ja[1] * jb[1];
                }
            }
        }

        let mut accepted = None;
        while lambda < 1e16 {
            let mut damped = jtj.clone();
            for k in 0..layout.len {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let (cand_poses, cand_points) = apply_step(&poses, &points, &layout, &step, basis);
            let c = total_cost(&cand_poses, &cand_points, observations, intrinsics);
            if c < current {
                accepted = Some((cand_poses, cand_points, c));
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((p, x, c)) = accepted else {
            break;
        };
        let relative = (current - c) / current;
        poses = p;
        points = x;
        current = c;
        if relative < RELATIVE_TOLERANCE || current < 1e-30 {
            break;
        }
    }

    let rms = reprojection_rms(&poses, &points, observations, intrinsics);
    if !rms.is_finite() {
        return Err(Error::Diverged("non-finite reprojection error".into()));
    }
    Ok(BundleResult {
        poses,
        points,
        initial_rms,
        rms,
        iterations,
    })
}

fn apply_step(
    poses: &[RelativePose],
    points: &[Point3],
    layout: &Layout,
    step: &DVector<f64>,
    basis: (Vector3<f64>, Vector3<f64>),
) -> (Vec<RelativePose>, Vec<Point3>) {
    let mut new_poses = poses.to_vec();
    for (c, pose) in new_poses.iter_mut().enumerate() {
        let Some(off) = layout.camera_offsets[c] else {
            continue;
        };
        let d_rot = Vector3::new(step[off], step[off + 1], step[off + 2]);
        if layout.translation_dims[c] == 2 {
            let s = pose.translation.norm();
            let u = pose.translation / s + basis.0 * step[off + 3] + basis.1 * step[off + 4];
            let rotated = pose.retract(&d_rot, &Vector3::zeros());
            *pose = RelativePose {
                translation: u.normalize() * s,
                ..rotated
            };
        } else {
            let d_t = Vector3::new(step[off + 3], step[off + 4], step[off + 5]);
            *pose = pose.retract(&d_rot, &d_t);
        }
    }
    let new_points = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let o = layout.point_offset + 3 * i;
            Point3::new(p.x + step[o], p.y + step[o + 1], p.z + step[o + 2])
        })
        .collect();
    (new_poses, new_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::project;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(
        rng: &mut ChaCha8Rng,
        up_to_scale: bool,
    ) -> (Vec<RelativePose>, Vec<Point3>, Vec<Observation>) {
        let mut poses = vec![
            RelativePose::identity(),
            RelativePose::from_axis_angle(
                Vector3::new(0.0, -0.15, 0.0),
                Vector3::new(-0.8, 0.05, 0.05),
            ),
            RelativePose::from_axis_angle(
                Vector3::new(0.05, 0.2, 0.0),
                Vector3::new(0.9, -0.1, 0.1),
            ),
        ];
        if up_to_scale {
            for p in &mut poses[1..] {
                *p = RelativePose::up_to_scale(p.rotation, p.translation);
            }
        }
        let points: Vec<Point3> = (0..40)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(4.0..6.0),
                )
            })
            .collect();
        let mut obs = Vec::new();
        for (c, pose) in poses.iter().enumerate() {
            for (i, x) in points.iter().enumerate() {
                obs.push(Observation {
                    camera: c,
                    point: i,
                    pixel: project(&cam(), pose, x).unwrap(),
                });
            }
        }
        (poses, points, obs)
    }

    fn naive_rms(poses: &[RelativePose], points: &[Point3], obs: &[Observation]) -> f64 {
        let mut sum = 0.0;
        for o in obs {
            let p = project(&cam(), &poses[o.camera], &points[o.point]).unwrap();
            sum += (p.x - o.pixel.x).powi(2) + (p.y - o.pixel.y).powi(2);
        }
        (sum / obs.len() as f64).sqrt()
    }

    #[test]
    fn stationary_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (poses, points, obs) = scene(&mut rng, false);
        let r = bundle_adjust(&poses, &points, &obs, &[cam(); 3]).unwrap();
        assert_eq!(r.poses, poses);
        assert_eq!(r.points, points);
        assert!(r.rms < 1e-9);
    }

    #[test]
    fn perturbed_scene_converges() {
        for up_to_scale in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let (poses, points, obs) = scene(&mut rng, up_to_scale);
            let noisy_points: Vec<Point3> = points
                .iter()
                .map(|p| Point3::from(p.coords.map(|v| v * (1.0 + rng.random_range(-0.01..0.01)))))
                .collect();
            let mut noisy_poses = poses.clone();
            for p in &mut noisy_poses[1..] {
                let t = p
                    .translation
                    .map(|v| v * (1.0 + rng.random_range(-0.01..0.01)));
                let t = if up_to_scale { t.normalize() } else { t };
                *p = RelativePose {
                    translation: t,
                    ..p.retract(&Vector3::new(0.01, -0.01, 0.005), &Vector3::zeros())
                };
            }
            let r = bundle_adjust(&noisy_poses, &noisy_points, &obs, &[cam(); 3]).unwrap();
            assert!(
                r.rms <= 0.1 * r.initial_rms,
                "{} -> {}",
                r.initial_rms,
                r.rms
            );
            assert_eq!(r.poses[0], noisy_poses[0]);
            if up_to_scale {
                assert!((r.poses[1].translation.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_observation_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (poses, points, mut obs) = scene(&mut rng, false);
        obs.retain(|o| !(o.point == 5 && o.camera > 0));
        assert!(matches!(
            bundle_adjust(&poses, &points, &obs, &[cam(); 3]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            bundle_adjust(&poses[..1], &points, &obs, &[cam(); 1]),
            Err(Error::GaugeUnderconstrained(_))
        ));
    }

    #[test]
    fn rms_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (poses, points, mut obs) = scene(&mut rng, false);
        assert!(reprojection_rms(&poses, &points, &obs, &[cam(); 3]) < 1e-12);
        obs[7].pixel.x += 3.0;
        let expected = 3.0 / (obs.len() as f64).sqrt();
        assert!((reprojection_rms(&poses, &points, &obs, &[cam(); 3]) - expected).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn rms_matches_naive(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (poses, points, mut obs) = scene(&mut rng, false);
            for o in obs.iter_mut().step_by(3) {
                o.pixel.y += shift;
            }
            let a = reprojection_rms(&poses, &points, &obs, &[cam(); 3]);
            prop_assert!((a - naive_rms(&poses, &points, &obs)).abs() < 1e-12);
        }
    }
}
