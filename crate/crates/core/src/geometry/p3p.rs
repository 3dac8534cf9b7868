//! Lambda Twist P3P (Persson and Nordberg, ECCV 2018), adapted from the
//! rust-cv `p3p` crate to f64 and this crate's pose type.

use nalgebra::{Matrix3, Vector3};

use crate::types::{orthonormalize, Point3, RelativePose};

/// Up to four poses with `lambda_i * f_i = R x_i + t` for the three world
/// points `x_i` and bearing vectors `f_i` (need not be unit length).
/// Degenerate inputs (collinear points, coincident bearings) yield no poses.
pub fn p3p(points: &[Point3; 3], bearings: &[Vector3<f64>; 3]) -> Vec<RelativePose> {
    let [wp1, wp2, wp3] = points.map(|p| p.coords);
    let norms = bearings.map(|b| b.norm());
    if norms.iter().any(|n| !(*n > 0.0)) {
        return Vec::new();
    }
    let f1 = bearings[0] / norms[0];
    let f2 = bearings[1] / norms[1];
    let f3 = bearings[2] / norms[2];

    let d12 = wp1 - wp2;
    let d13 = wp1 - wp3;
    let d23 = wp2 - wp3;
    let d12xd13 = d12.cross(&d13);

    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();

    let c12 = f1.dot(&f2);
    let c23 = f2.dot(&f3);
    let c31 = f3.dot(&f1);
    let blob = c12 * c23 * c31 - 1.0;

    let s12_sqr = 1.0 - c12 * c12;
    let s23_sqr = 1.0 - c23 * c23;
    let s31_sqr = 1.0 - c31 * c31;

    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    let p3 = a13 * (a23 * s31_sqr - a13 * s23_sqr);
    let p2 =
        2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23_sqr + a23 * (a23 - a12) * s31_sqr;
    let p1 = a23 * (a13 - a23) * s12_sqr
        - a12 * a12 * s23_sqr
        - 2.0 * a12 * (blob * a23 + a13 * s23_sqr);
    let p0 = a12 * (a12 * s23_sqr - a23 * s12_sqr);
    if p3 == 0.0 || !p3.is_finite() {
        return Vec::new();
    }

    let g = cube_root(p2 / p3, p1 / p3, p0 / p3);

    #[rustfmt::skip]
    let d0 = Matrix3::new(
        a23 * (1.0 - g),  -(a23 * c12),               a23 * c31 * g,
        -(a23 * c12),     a23 - a12 + a13 * g,        -c23 * (a13 * g - a12),
        a23 * c31 * g,    -c23 * (a13 * g - a12),     g * (a13 - a23) - a12,
    );
    let (eig_vectors, eig_values) = eigen_decomposition_singular(&d0);

    let mut lambdas = Vec::with_capacity(4);
    let eigen_ratio = (0.0f64.max(-eig_values[1] / eig_values[0])).sqrt();

    for ratio in [eigen_ratio, -eigen_ratio] {
        let w2 = 1.0 / (ratio * eig_vectors.m12 - eig_vectors.m11);
        let w0 = w2 * (eig_vectors.m21 - ratio * eig_vectors.m22);
        let w1 = w2 * (eig_vectors.m31 - ratio * eig_vectors.m32);

        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        let Some((tau1, tau2)) = root2real(b, c) else {
            continue;
        };
        for tau in [tau1, tau2] {
            if !(tau > 0.0) {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d > 0.0 {
                let l2 = d.sqrt();
                let l3 = tau * l2;
                let l1 = w0 * l2 + w1 * l3;
                if l1 >= 0.0 {
                    lambdas.push(Vector3::new(l1, l2, l3));
                }
            }
        }
    }

    let x_mat = Matrix3::from_columns(&[d12, d13, d12xd13]);
    let Some(x_inv) = x_mat.try_inverse() else {
        return Vec::new();
    };

    lambdas
        .into_iter()
        .filter_map(|lambda| {
            let l = refine_lambda(lambda, a12, a13, a23, b12, b13, b23);
            let ry1 = l[0] * f1;
            let ry2 = l[1] * f2;
            let ry3 = l[2] * f3;
            let yd1 = ry1 - ry2;
            let yd2 = ry1 - ry3;
            let y_mat = Matrix3::from_columns(&[yd1, yd2, yd1.cross(&yd2)]);
            let rot = orthonormalize(&(y_mat * x_inv));
            let t = ry1 - rot * wp1;
            (rot.iter().all(|v| v.is_finite()) && t.iter().all(|v| v.is_finite()))
                .then(|| RelativePose::new(rot, t))
        })
        .collect()
}

/// Gauss-Newton polish of the three depths against the law-of-cosines
/// residuals.
fn refine_lambda(
    lambda: Vector3<f64>,
    a12: f64,
    a13: f64,
    a23: f64,
    b12: f64,
    b13: f64,
    b23: f64,
) -> Vector3<f64> {
    let residual = |l: &Vector3<f64>| {
        Vector3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let mut l = lambda;
    let mut res = residual(&l);
    for _ in 0..5 {
        if res.lp_norm(1) < 1e-14 * (a12 + a13 + a23) {
            break;
        }
        let dr1dl1 = 2.0 * l.x + b12 * l.y;
        let dr1dl2 = 2.0 * l.y + b12 * l.x;
        let dr2dl1 = 2.0 * l.x + b13 * l.z;
        let dr2dl3 = 2.0 * l.z + b13 * l.x;
        let dr3dl2 = 2.0 * l.y + b23 * l.z;
        let dr3dl3 = 2.0 * l.z + b23 * l.y;
        let det = 1.0 / (-dr1dl1 * dr2dl3 * dr3dl2 - dr1dl2 * dr2dl1 * dr3dl3);
        #[rustfmt::skip]
        let jacobian = Matrix3::new(
            -dr2dl3 * dr3dl2, -dr1dl2 * dr3dl3,  dr1dl2 * dr2dl3,
            -dr2dl1 * dr3dl3,  dr1dl1 * dr3dl3, -dr1dl1 * dr2dl3,
             dr2dl1 * dr3dl2, -dr1dl1 * dr3dl2, -dr1dl2 * dr2dl1,
        );
        let next = l - det * (jacobian * res);
        let next_res = residual(&next);
        if !(next_res.lp_norm(1) <= res.lp_norm(1)) {
            break;
        }
        l = next;
        res = next_res;
    }
    l
}

/// Real roots of `r^2 + b r + c`.
fn root2real(b: f64, c: f64) -> Option<(f64, f64)> {
    let discriminant = b * b - 4.0 * c;
    if discriminant < 0.0 {
        return None;
    }
    let y = discriminant.sqrt();
    if b < 0.0 {
        Some((0.5 * (-b + y), 0.5 * (-b - y)))
    } else {
        Some((2.0 * c / (-b + y), 2.0 * c / (-b - y)))
    }
}

/// One real root of `r^3 + b r^2 + c r + d`, chosen where the derivative is
/// large, by Newton iterations from a case-dependent start.
fn cube_root(b: f64, c: f64, d: f64) -> f64 {
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = ((t1 + b) * t1 + c) * t1 + d;
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k = ((t2 + b) * t2 + c) * t2 + d;
            r0 = t2 + (-k / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if ((3.0 * r0 + 2.0 * b) * r0 + c).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    for i in 0..50 {
        let fx = ((r0 + b) * r0 + c) * r0 + d;
        if i >= 7 && fx.abs() <= 1e-13 {
            break;
        }
        let fpx = (3.0 * r0 + 2.0 * b) * r0 + c;
        r0 -= fx / fpx;
    }
    r0
}

/// Eigen-decomposition of a symmetric matrix known to be singular; the
/// third eigenvalue is zero and omitted.
fn eigen_decomposition_singular(x: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let v3 = Vector3::new(
        x[1] * x[5] - x[2] * x[4],
        x[2] * x[3] - x[5] * x[0],
        x[4] * x[0] - x[1] * x[3],
    )
    .normalize();

    let x12_sqr = x.m12 * x.m12;
    let b = -x.m11 - x.m22 - x.m33;
    let c = -x12_sqr - x.m13 * x.m13 - x.m23 * x.m23 + x.m11 * (x.m22 + x.m33) + x.m22 * x.m33;
    let (mut e1, mut e2) = root2real(b, c).unwrap_or((-0.5 * b, -0.5 * b));
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }

    let mx0011 = -x.m11 * x.m22;
    let prec_0 = x.m12 * x.m23 - x.m13 * x.m22;
    let prec_1 = x.m12 * x.m13 - x.m11 * x.m23;
    let eigen_vector = |e: f64| {
        let tmp = 1.0 / (e * (x.m11 + x.m22) + mx0011 - e * e + x12_sqr);
        let a1 = -(e * x.m13 + prec_0) * tmp;
        let a2 = -(e * x.m23 + prec_1) * tmp;
        let rnorm = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vector3::new(a1 * rnorm, a2 * rnorm, rnorm)
    };
    let vectors = Matrix3::from_columns(&[eigen_vector(e1), eigen_vector(e2), v3]);
    (vectors, Vector3::new(e1, e2, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_pose_among_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..200 {
            let truth = RelativePose::from_axis_angle(
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let inv = crate::types::invert(&truth);
            let cam_pts: [Point3; 3] = std::array::from_fn(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(2.0..6.0),
                )
            });
            let world = cam_pts.map(|p| inv.transform_point(&p));
            let bearings = cam_pts.map(|p| p.coords);
            let poses = p3p(&world, &bearings);
            if poses.iter().any(|p| {
                truth.rotation_error(p) < 1e-8 && (p.translation - truth.translation).norm() < 1e-8
            }) {
                hits += 1;
            }
        }
        assert!(hits >= 198, "{hits}/200");
    }

    #[test]
    fn collinear_points_give_nothing() {
        let world = [
            Point3::new(0.0, 0.0, 3.0),
            Point3::new(1.0, 0.0, 3.0),
            Point3::new(2.0, 0.0, 3.0),
        ];
        let bearings = world.map(|p| p.coords);
        assert!(p3p(&world, &bearings).is_empty());
    }
}
