use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Hypothesize-and-verify settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Pixels; symmetric epipolar distance for F, reprojection error for PnP.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl RansacParams {
    pub fn fundamental() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold: 2.0,
            min_inliers: 8,
            seed: 0,
        }
    }

    pub fn pnp() -> Self {
        Self {
            max_iterations: 1000,
            inlier_threshold: 4.0,
            min_inliers: 6,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.inlier_threshold > 0.0) {
            return Err(Error::Config(format!("invalid RANSAC parameters {self:?}")));
        }
        Ok(())
    }
}

/// Result of scoring one hypothesis.
pub(crate) struct Consensus<M> {
    pub model: M,
    pub mask: Vec<bool>,
    pub count: usize,
    /// Truncated quadratic loss `sum(min(d^2, threshold^2))`.
    pub cost: f64,
}

impl<M> Consensus<M> {
    pub fn from_distances(model: M, distances: impl Iterator<Item = f64>, threshold: f64) -> Self {
        let t2 = threshold * threshold;
        let mut mask = Vec::new();
        let mut cost = 0.0;
        for d in distances {
            let d2 = d * d;
            mask.push(d < threshold);
            cost += if d2 < t2 { d2 } else { t2 };
        }
        let count = mask.iter().filter(|m| **m).count();
        Self {
            model,
            mask,
            count,
            cost,
        }
    }
}

/// Draws every minimal sample up front from the seeded stream, scores them
/// (in parallel when enabled) and returns the hypothesis with the lowest
/// truncated loss; the lowest hypothesis index wins ties.
pub(crate) fn best_consensus<M, F>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    score: F,
) -> Option<Consensus<M>>
where
    M: Send,
    F: Fn(&[usize]) -> Option<Consensus<M>> + Sync + Send,
{
    ranked_consensus(n, sample_size, params, 1, score)
        .into_iter()
        .next()
}

/// Like [`best_consensus`] but keeps the `keep` lowest-loss hypotheses, best
/// first.
pub(crate) fn ranked_consensus<M, F>(
    n: usize,
    sample_size: usize,
    params: &RansacParams,
    keep: usize,
    score: F,
) -> Vec<Consensus<M>>
where
    M: Send,
    F: Fn(&[usize]) -> Option<Consensus<M>> + Sync + Send,
{
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<Vec<usize>> = (0..params.max_iterations)
        .map(|_| sample(&mut rng, n, sample_size).into_vec())
        .collect();
    let mut scored: Vec<Consensus<M>> = par::map_slice(&samples, |s| score(s))
        .into_iter()
        .flatten()
        .collect();
    // Stable, so the lower hypothesis index stays first among equal losses.
    scored.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    scored.truncate(keep);
    scored
}
