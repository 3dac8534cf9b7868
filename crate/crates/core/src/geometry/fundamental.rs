use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::ransac::{ranked_consensus, Consensus, RansacParams};
use super::PixelPair;
use crate::error::{Error, Result};
use crate::types::{skew, CameraModel, Pixel, RelativePose};

/// Rank-2 fundamental matrix with unit Frobenius norm, `p_f^T F p_l = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalMatrix(pub Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects onto rank 2, scales to unit Frobenius norm and fixes the sign
    /// so the largest-magnitude entry is positive.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let mut svd = m.svd(true, true);
        let k = svd.singular_values.imin();
        svd.singular_values[k] = 0.0;
        let f = svd
            .recompose()
            .map_err(|e| Error::DegenerateConfiguration(e.to_string()))?;
        Self::normalized(&f)
    }

    /// Unit Frobenius norm and sign fix only, for matrices already rank 2.
    fn normalized(f: &Matrix3<f64>) -> Result<Self> {
        let norm = f.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateConfiguration(
                "zero fundamental matrix".into(),
            ));
        }
        let f = f / norm;
        let pivot = f
            .iter()
            .copied()
            .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        Ok(Self(if pivot < 0.0 { -f } else { f }))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

fn homogeneous(p: Pixel) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Algebraic residual `p_f^T F p_l`.
pub fn epipolar_residual(f: &Matrix3<f64>, pair: PixelPair) -> f64 {
    homogeneous(pair.1).dot(&(f * homogeneous(pair.0)))
}

/// `sqrt(d(p_f, F p_l)^2 + d(p_l, F^T p_f)^2)` in pixels.
pub fn symmetric_epipolar_distance(f: &Matrix3<f64>, pair: PixelPair) -> f64 {
    let (a, b) = (homogeneous(pair.0), homogeneous(pair.1));
    let line_f = f * a;
    let line_l = f.transpose() * b;
    let r = b.dot(&line_f);
    let n1 = line_f.x * line_f.x + line_f.y * line_f.y;
    let n2 = line_l.x * line_l.x + line_l.y * line_l.y;
    if n1 <= 0.0 || n2 <= 0.0 {
        return f64::INFINITY;
    }
    (r * r * (1.0 / n1 + 1.0 / n2)).sqrt()
}

/// `K_f^{-T} [t]x R K_l^{-1}` for a leader-to-follower pose.
pub fn fundamental_from_pose(
    pose: &RelativePose,
    leader: &CameraModel,
    follower: &CameraModel,
) -> Result<FundamentalMatrix> {
    let e = skew(&pose.translation) * pose.rotation;
    // Rank 2 by construction; an SVD projection would only add round-off.
    FundamentalMatrix::normalized(
        &(follower.inverse_matrix().transpose() * e * leader.inverse_matrix()),
    )
}

/// Similarity taking points to zero centroid and mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = Pixel> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points
        .clone()
        .fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized eight-point estimate from at least eight pairs.
pub fn fundamental_8pt(pairs: &[PixelPair]) -> Result<FundamentalMatrix> {
    if pairs.len() < 8 {
        return Err(Error::Precondition(format!(
            "eight-point algorithm needs 8 pairs, got {}",
            pairs.len()
        )));
    }
    let t_l = normalizing_transform(pairs.iter().map(|p| p.0));
    let t_f = normalizing_transform(pairs.iter().map(|p| p.1));
    let rows = pairs.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (pl, pf)) in pairs.iter().enumerate() {
        let l = t_l * homogeneous(*pl);
        let f = t_f * homogeneous(*pf);
        let row = [
            f.x * l.x,
            f.x * l.y,
            f.x,
            f.y * l.x,
            f.y * l.y,
            f.y,
            l.x,
            l.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[8]];
    // A one-dimensional null space is required; a second tiny singular value
    // means the pairs do not pin F down (e.g. collinear points).
    if svd.singular_values[order[1]] <= 1e-8 * largest {
        return Err(Error::DegenerateConfiguration(
            "design matrix has a null space larger than one".into(),
        ));
    }
    let v = v_t.row(order[0]);
    let f_norm = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let rank2 = FundamentalMatrix::from_matrix(&f_norm)?;
    FundamentalMatrix::from_matrix(&(t_f.transpose() * rank2.0 * t_l))
}

/// Hypotheses that get a local refit in [`ransac_fundamental`].
const LOCAL_REFITS: usize = 10;

/// Eight-point RANSAC under the symmetric epipolar distance. The best few
/// hypotheses are each refit on their consensus set until it stops
/// changing; the refit with the lowest truncated loss wins.
pub fn ransac_fundamental(
    pairs: &[PixelPair],
    params: &RansacParams,
) -> Result<(FundamentalMatrix, Vec<bool>)> {
    params.validate()?;
    if pairs.len() < 8 {
        return Err(Error::InsufficientInliers {
            found: pairs.len(),
            required: params.min_inliers.max(8),
        });
    }
    let threshold = params.inlier_threshold;
    let consensus = |model: FundamentalMatrix| {
        let distances = pairs
            .iter()
            .map(|p| symmetric_epipolar_distance(&model.0, *p));
        Consensus::from_distances(model, distances, threshold)
    };
    let ranked = ranked_consensus(pairs.len(), 8, params, LOCAL_REFITS, |idx| {
        let sample: Vec<PixelPair> = idx.iter().map(|&i| pairs[i]).collect();
        Some(consensus(fundamental_8pt(&sample).ok()?))
    });
    let required = params.min_inliers.max(8);
    let mut best: Option<Consensus<FundamentalMatrix>> = None;
    for start in ranked {
        let mut current = start;
        for _ in 0..5 {
            let inliers: Vec<PixelPair> = pairs
                .iter()
                .zip(&current.mask)
                .filter(|(_, m)| **m)
                .map(|(p, _)| *p)
                .collect();
            let Ok(refit) = fundamental_8pt(&inliers) else {
                break;
            };
            let refit = consensus(refit);
            if refit.cost >= current.cost {
                break;
            }
            let same = refit.mask == current.mask;
            current = refit;
            if same {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| current.cost < b.cost) {
            best = Some(current);
        }
    }
    let Some(best) = best else {
        return Err(Error::InsufficientInliers { found: 0, required });
    };
    if best.count < required {
        return Err(Error::InsufficientInliers {
            found: best.count,
            required,
        });
    }
    Ok((best.model, best.mask))
}
