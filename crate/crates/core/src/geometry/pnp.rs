use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix6, SymmetricEigen, Vector3, Vector6};

use super::p3p::p3p;
use super::ransac::{best_consensus, Consensus, RansacParams};
use super::CorrespondenceSet2D3D;
use crate::error::{Error, Result};
use crate::types::{orthonormalize, skew, CameraModel, Pixel, Point3, RelativePose, MIN_DEPTH};

/// Fewest correspondences [`pnp_solve`] accepts.
pub const PNP_MIN_POINTS: usize = 4;

const MAX_ITERATIONS: usize = 50;
const RELATIVE_TOLERANCE: f64 = 1e-10;

/// Squared reprojection error of one correspondence, infinite when the point
/// falls behind the camera.
fn squared_error(camera: &CameraModel, pose: &RelativePose, x: &Point3, px: Pixel) -> f64 {
    let xc = pose.transform_point(x);
    if xc.z <= MIN_DEPTH {
        return f64::INFINITY;
    }
    let u = camera.fx * xc.x / xc.z + camera.cx - px.x;
    let v = camera.fy * xc.y / xc.z + camera.cy - px.y;
    u * u + v * v
}

fn weight(cset: &CorrespondenceSet2D3D, i: usize) -> f64 {
    cset.weights.as_ref().map_or(1.0, |w| w[i])
}

fn cost(cset: &CorrespondenceSet2D3D, camera: &CameraModel, pose: &RelativePose) -> f64 {
    (0..cset.len())
        .map(|i| weight(cset, i) * squared_error(camera, pose, &cset.points3[i], cset.pixels[i]))
        .sum()
}

/// Normalized DLT on the 3x4 projection matrix. `None` for fewer than six
/// points or (near-)planar structure.
fn dlt_pose(cset: &CorrespondenceSet2D3D, camera: &CameraModel) -> Option<RelativePose> {
    let n = cset.len();
    if n < 6 {
        return None;
    }
    let centroid = cset.points3.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &cset.points3 {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n as f64);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if !(hi > 0.0) || lo < 1e-6 * hi {
        return None;
    }
    let scale = (3.0 / eig.eigenvalues.sum()).sqrt();
    let mut a = DMatrix::zeros(2 * n.max(6), 12);
    for (i, (p, px)) in cset.points3.iter().zip(&cset.pixels).enumerate() {
        let x = (p.coords - centroid) * scale;
        let h = [x.x, x.y, x.z, 1.0];
        let m = camera.normalize(*px);
        for k in 0..4 {
            a[(2 * i, k)] = h[k];
            a[(2 * i, 8 + k)] = -m.x * h[k];
            a[(2 * i + 1, 4 + k)] = h[k];
            a[(2 * i + 1, 8 + k)] = -m.y * h[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let row = v_t.row(svd.singular_values.imin());
    let pn = Matrix3x4::from_row_iterator(row.iter().copied());
    // Undo the 3D normalization: x' = s (x - c).
    let m = pn.fixed_view::<3, 3>(0, 0) * scale;
    let p4 = pn.column(3) - m * centroid;
    let sign = if m.determinant() < 0.0 { -1.0 } else { 1.0 };
    let svd_m = m.svd(false, false);
    let s = sign * svd_m.singular_values.mean();
    if !(s.abs() > 0.0) || !s.is_finite() {
        return None;
    }
    Some(RelativePose::new(orthonormalize(&(m / s)), p4 / s))
}

/// P3P candidates from a handful of spread-out triples.
fn p3p_candidates(cset: &CorrespondenceSet2D3D, camera: &CameraModel) -> Vec<RelativePose> {
    let n = cset.len();
    let mut out = Vec::new();
    for start in 0..n.min(8) {
        let idx = [start, (start + n / 3) % n, (start + 2 * n / 3) % n];
        if idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2] {
            continue;
        }
        let points = idx.map(|i| cset.points3[i]);
        let bearings = idx.map(|i| camera.normalize(cset.pixels[i]));
        out.extend(p3p(&points, &bearings));
    }
    out
}

/// Pose minimizing the (weighted) squared reprojection error of leader-frame
/// points into the follower image. Levenberg-Marquardt over an axis-angle
/// increment left-composed onto the rotation and an additive translation.
pub fn pnp_solve(
    cset: &CorrespondenceSet2D3D,
    camera: &CameraModel,
    initial: Option<&RelativePose>,
) -> Result<RelativePose> {
    let n = cset.len();
    if n < PNP_MIN_POINTS {
        return Err(Error::Precondition(format!(
            "PnP needs at least {PNP_MIN_POINTS} correspondences, got {n}"
        )));
    }
    if cset.pixels.len() != n || cset.weights.as_ref().is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch(
            "correspondence set lengths differ".into(),
        ));
    }
    let mut pose = match initial {
        Some(p) => RelativePose::new(p.rotation, p.translation),
        None => {
            let mut candidates = p3p_candidates(cset, camera);
            candidates.extend(dlt_pose(cset, camera));
            candidates
                .into_iter()
                .map(|c| (cost(cset, camera, &c), c))
                .filter(|(c, _)| c.is_finite())
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, p)| p)
                .ok_or_else(|| Error::DegenerateConfiguration("no PnP initialization".into()))?
        }
    };
    let mut current = cost(cset, camera, &pose);
    if !current.is_finite() {
        return Err(Error::Diverged(
            "initial pose puts points behind the camera".into(),
        ));
    }
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if current < 1e-30 {
            break;
        }
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for i in 0..n {
            let w = weight(cset, i);
            let rx = pose.rotation * cset.points3[i].coords;
            let xc = rx + pose.translation;
            let (fx, fy) = (camera.fx, camera.fy);
            let z_inv = 1.0 / xc.z;
            let r = nalgebra::Vector2::new(
                fx * xc.x * z_inv + camera.cx - cset.pixels[i].x,
                fy * xc.y * z_inv + camera.cy - cset.pixels[i].y,
            );
            let d_proj = nalgebra::Matrix2x3::new(
                fx * z_inv,
                0.0,
                -fx * xc.x * z_inv * z_inv,
                0.0,
                fy * z_inv,
                -fy * xc.y * z_inv * z_inv,
            );
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0)
                .copy_from(&(d_proj * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
            jtj += w * j.transpose() * j;
            jtr += w * j.transpose() * r;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..6 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = pose.retract(
                &step.fixed_rows::<3>(0).into_owned(),
                &step.fixed_rows::<3>(3).into_owned(),
            );
            let c = cost(cset, camera, &candidate);
            if c < current {
                let relative = (current - c) / current;
                pose = candidate;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = relative >= RELATIVE_TOLERANCE;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    if !current.is_finite() {
        return Err(Error::Diverged("non-finite PnP cost".into()));
    }
    Ok(pose.renormalized())
}

fn inlier_mask(
    cset: &CorrespondenceSet2D3D,
    camera: &CameraModel,
    pose: &RelativePose,
    threshold: f64,
) -> Vec<bool> {
    let t2 = threshold * threshold;
    (0..cset.len())
        .map(|i| squared_error(camera, pose, &cset.points3[i], cset.pixels[i]) < t2)
        .collect()
}

/// Four-point RANSAC: P3P on three points, the fourth picks among the
/// candidates; consensus by reprojection error, then refinement on the
/// inliers with [`pnp_solve`].
pub fn pnp_ransac(
    cset: &CorrespondenceSet2D3D,
    camera: &CameraModel,
    params: &RansacParams,
) -> Result<(RelativePose, Vec<bool>)> {
    params.validate()?;
    let n = cset.len();
    let required = params.min_inliers.max(PNP_MIN_POINTS);
    if n < PNP_MIN_POINTS {
        return Err(Error::InsufficientInliers { found: n, required });
    }
    let threshold = params.inlier_threshold;
    let best = best_consensus(n, 4, params, |idx| {
        let points = [
            cset.points3[idx[0]],
            cset.points3[idx[1]],
            cset.points3[idx[2]],
        ];
        let bearings = [0, 1, 2].map(|k| camera.normalize(cset.pixels[idx[k]]));
        let model = p3p(&points, &bearings).into_iter().min_by(|a, b| {
            let ea = squared_error(camera, a, &cset.points3[idx[3]], cset.pixels[idx[3]]);
            let eb = squared_error(camera, b, &cset.points3[idx[3]], cset.pixels[idx[3]]);
            ea.total_cmp(&eb)
        })?;
        let distances =
            (0..n).map(|i| squared_error(camera, &model, &cset.points3[i], cset.pixels[i]).sqrt());
        Some(Consensus::from_distances(model, distances, threshold))
    });
    let Some(best) = best else {
        return Err(Error::InsufficientInliers { found: 0, required });
    };
    if best.count < required {
        return Err(Error::InsufficientInliers {
            found: best.count,
            required,
        });
    }
    let mut pose = best.model;
    let mut mask = best.mask;
    for _ in 0..5 {
        let inliers = cset.select(&mask);
        let Ok(refined) = pnp_solve(&inliers, camera, Some(&pose)) else {
            break;
        };
        let refined_mask = inlier_mask(cset, camera, &refined, threshold);
        let before = mask.iter().filter(|m| **m).count();
        // Keep the refit only if it does not shrink the consensus.
        if refined_mask.iter().filter(|m| **m).count() < before {
            break;
        }
        let same = refined_mask == mask;
        pose = refined;
        mask = refined_mask;
        if same {
            break;
        }
    }
    Ok((pose, mask))
}
