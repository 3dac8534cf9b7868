use nalgebra::{Matrix3, Vector3};

use super::fundamental::FundamentalMatrix;
use super::triangulate::triangulate_dlt;
use super::PixelPair;
use crate::error::{Error, Result};
use crate::types::{CameraModel, RelativePose, MIN_DEPTH};

/// `K_f^T F K_l` with singular values projected to (1, 1, 0).
pub fn essential_from_fundamental(
    f: &FundamentalMatrix,
    leader: &CameraModel,
    follower: &CameraModel,
) -> Matrix3<f64> {
    let e = follower.matrix().transpose() * f.0 * leader.matrix();
    let (u, v_t) = signed_svd(&e);
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t
}

/// SVD factors with both orthogonal factors made proper rotations. Flipping
/// the sign of the third singular vector is harmless because the third
/// singular value of an essential matrix is zero.
fn signed_svd(e: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // nalgebra does not sort singular values; move the smallest last.
    let k = svd.singular_values.imin();
    if k != 2 {
        u.swap_columns(k, 2);
        v_t.swap_rows(k, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    (u, v_t)
}

/// The four `(R, t)` factorizations of `E = [t]x R` with unit `t`.
pub(crate) fn decompose_essential(e: &Matrix3<f64>) -> [RelativePose; 4] {
    let (u, v_t) = signed_svd(e);
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned();
    [
        RelativePose::up_to_scale(r1, t),
        RelativePose::up_to_scale(r1, -t),
        RelativePose::up_to_scale(r2, t),
        RelativePose::up_to_scale(r2, -t),
    ]
}

/// Number of pairs triangulating in front of both cameras.
fn positive_depth_count(
    pose: &RelativePose,
    leader: &CameraModel,
    follower: &CameraModel,
    pairs: &[PixelPair],
) -> usize {
    pairs
        .iter()
        .filter(|pair| {
            triangulate_dlt(pose, leader, follower, **pair)
                .is_some_and(|x| x.z > MIN_DEPTH && pose.transform_point(&x).z > MIN_DEPTH)
        })
        .count()
}

/// Relative pose (unit translation) from F by cheirality: the decomposition
/// putting a strict majority of triangulated pairs in front of both cameras.
pub fn essential_and_pose(
    f: &FundamentalMatrix,
    leader: &CameraModel,
    follower: &CameraModel,
    pairs: &[PixelPair],
) -> Result<RelativePose> {
    let e = essential_from_fundamental(f, leader, follower);
    let candidates = decompose_essential(&e);
    let counts = candidates.map(|c| positive_depth_count(&c, leader, follower, pairs));
    let (best, &count) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    if 2 * count <= pairs.len() {
        return Err(Error::CheiralityAmbiguity);
    }
    Ok(candidates[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fundamental_8pt, fundamental_from_pose};
    use crate::types::{project, Pixel, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraModel {
        CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RelativePose {
        RelativePose::from_axis_angle(
            Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.2..0.2),
            ),
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ),
        )
    }

    fn pairs_for(rng: &mut ChaCha8Rng, pose: &RelativePose, n: usize) -> Vec<PixelPair> {
        let mut out = Vec::new();
        while out.len() < n {
            let x = Point3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..7.0),
            );
            if let (Ok(a), Ok(b)) = (
                project(&cam(), &RelativePose::identity(), &x),
                project(&cam(), pose, &x),
            ) {
                out.push((a, b));
            }
        }
        out
    }

    fn direction_error(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.cross(b).norm().atan2(a.dot(b))
    }

    #[test]
    fn cheirality_selects_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..100 {
            let truth = random_pose(&mut rng);
            let pairs = pairs_for(&mut rng, &truth, 18);
            let f = fundamental_8pt(&pairs).unwrap();
            let pose = essential_and_pose(&f, &cam(), &cam(), &pairs).unwrap();
            assert!(pose.up_to_scale);
            assert!((pose.translation.norm() - 1.0).abs() < 1e-12);
            assert!(truth.rotation_error(&pose) < 1e-4, "trial {trial}");
            assert!(
                direction_error(&truth.translation, &pose.translation) < 1e-4,
                "trial {trial}"
            );
        }
    }

    #[test]
    fn essential_has_unit_singular_values() {
        let truth =
            RelativePose::from_axis_angle(Vector3::new(0.1, 0.2, 0.0), Vector3::new(1.0, 0.0, 0.1));
        let f = fundamental_from_pose(&truth, &cam(), &cam()).unwrap();
        let e = essential_from_fundamental(&f, &cam(), &cam());
        let mut s: Vec<f64> = e
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        s.sort_by(f64::total_cmp);
        assert!(s[0].abs() < 1e-12 && (s[1] - 1.0).abs() < 1e-12 && (s[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_cheirality_is_ambiguous() {
        let truth =
            RelativePose::from_axis_angle(Vector3::new(0.0, 0.2, 0.0), Vector3::new(1.0, 0.0, 0.0));
        let f = fundamental_from_pose(&truth, &cam(), &cam()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let front = pairs_for(&mut rng, &truth, 6);
        // Points behind both cameras project to valid-looking pixels under
        // the negated point; they vote for the mirrored baseline.
        let mut behind = Vec::new();
        while behind.len() < 6 {
            let x = Point3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(3.0..6.0),
            );
            let xl = -x.coords;
            let xf = truth.rotation * xl + truth.translation;
            if xf.z < 0.0 {
                let a = Pixel::new(600.0 * xl.x / xl.z + 320.0, 600.0 * xl.y / xl.z + 240.0);
                let b = Pixel::new(600.0 * xf.x / xf.z + 320.0, 600.0 * xf.y / xf.z + 240.0);
                behind.push((a, b));
            }
        }
        let all: Vec<PixelPair> = front.into_iter().chain(behind).collect();
        assert!(matches!(
            essential_and_pose(&f, &cam(), &cam(), &all),
            Err(Error::CheiralityAmbiguity)
        ));
    }
}
