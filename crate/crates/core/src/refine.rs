//! Key-point correspondence refinement: the follower key-point descends the
//! SSIM loss between fixed-size patches around the leader and follower
//! points, confined to a box around its initial position.

use serde::{Deserialize, Serialize};

use crate::detection::{mutual_visibility, DetectionSet};
use crate::error::{Error, Result};
use crate::imaging::{ssim_loss, ssim_loss_and_gradient, Image, Patch, SSIM_WINDOW};
use crate::par;
use crate::reid::Association;
use crate::types::Pixel;

pub const DEFAULT_ETA: f64 = 0.003;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_PATCH: usize = 32;
pub const DEFAULT_RADIUS: f64 = 32.0;
/// Per-point early stop: an applied step shorter than this (px).
pub const STEP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    pub eta: f64,
    pub max_iter: usize,
    pub patch_size: usize,
    /// Half-width of the open box `|p - p0|_inf < radius`.
    pub radius: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            max_iter: DEFAULT_MAX_ITER,
            patch_size: DEFAULT_PATCH,
            radius: DEFAULT_RADIUS,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() || !(self.radius > 0.0) {
            return Err(Error::Config(format!(
                "invalid refinement parameters {self:?}"
            )));
        }
        if self.patch_size < SSIM_WINDOW {
            return Err(Error::DegeneratePatch {
                width: self.patch_size,
                height: self.patch_size,
            });
        }
        Ok(())
    }

    /// Number of SSIM windows in a patch. The descent step is taken on the
    /// loss summed over the SSIM map, i.e. the mean loss times this count.
    pub fn window_count(&self) -> f64 {
        let n = (self.patch_size + 1 - SSIM_WINDOW) as f64;
        n * n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub leader_px: Pixel,
    pub follower_px: Pixel,
    pub follower_px0: Pixel,
    pub keypoint_index: usize,
    /// Mean `1 - SSIM` at every visited point, starting with the initial one.
    pub loss_history: Vec<f64>,
}

impl Correspondence {
    pub fn new(leader_px: Pixel, follower_px: Pixel, keypoint_index: usize) -> Self {
        Self {
            leader_px,
            follower_px,
            follower_px0: follower_px,
            keypoint_index,
            loss_history: Vec::new(),
        }
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.loss_history.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_history.last().copied()
    }
}

/// Per-point state of the descent loop.
struct Descent {
    fixed: Patch,
    current: Pixel,
    origin: Pixel,
    history: Vec<f64>,
    active: bool,
}

impl Descent {
    fn new(leader_img: &Image, c: &Correspondence, params: &RefineParams) -> Result<Self> {
        let fixed = leader_img.extract_patch(c.leader_px, params.patch_size, params.patch_size)?;
        Ok(Self {
            fixed,
            current: c.follower_px,
            origin: c.follower_px0,
            history: Vec::with_capacity(params.max_iter + 1),
            active: true,
        })
    }

    /// One gradient step, projected back into the box around the origin.
    fn step(&mut self, follower_img: &Image, params: &RefineParams) -> Result<()> {
        let (loss, grad) = ssim_loss_and_gradient(&self.fixed, follower_img, self.current)?;
        self.history.push(loss);
        let scale = params.eta * params.window_count();
        let limit = params.radius * (1.0 - 1e-9);
        let next = Pixel::new(
            (self.current.x - scale * grad.x).clamp(self.origin.x - limit, self.origin.x + limit),
            (self.current.y - scale * grad.y).clamp(self.origin.y - limit, self.origin.y + limit),
        );
        let moved = next.distance(self.current);
        self.current = next;
        if !(moved >= STEP_TOLERANCE) {
            self.active = false;
        }
        Ok(())
    }

    fn finish(mut self, follower_img: &Image, c: &Correspondence) -> Result<Correspondence> {
        let last = ssim_loss(&self.fixed, follower_img, self.current)?;
        self.history.push(last);
        let initial = self.history[0];
        let current = if last > initial {
            self.history.push(initial);
            c.follower_px0
        } else {
            self.current
        };
        let mut loss_history = c.loss_history.clone();
        loss_history.extend(self.history);
        Ok(Correspondence {
            leader_px: c.leader_px,
            follower_px: current,
            follower_px0: c.follower_px0,
            keypoint_index: c.keypoint_index,
            loss_history,
        })
    }
}

/// Refines a single correspondence.
pub fn refine_one(
    leader_img: &Image,
    follower_img: &Image,
    c: &Correspondence,
    params: &RefineParams,
) -> Result<Correspondence> {
    params.validate()?;
    let mut d = Descent::new(leader_img, c, params)?;
    for _ in 0..params.max_iter {
        if !d.active {
            break;
        }
        d.step(follower_img, params)?;
    }
    d.finish(follower_img, c)
}

/// Refines many correspondences in one stacked loop: a shared iteration
/// counter, per-point early stopping, points updated in parallel.
pub fn refine_stacked(
    leader_img: &Image,
    follower_img: &Image,
    correspondences: &[Correspondence],
    params: &RefineParams,
) -> Result<Vec<Correspondence>> {
    params.validate()?;
    let mut states = par::map_slice(correspondences, |c| Descent::new(leader_img, c, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for _ in 0..params.max_iter {
        if !states.iter().any(|s| s.active) {
            break;
        }
        let results = par::map_mut(&mut states, |s| {
            if s.active {
                s.step(follower_img, params)
            } else {
                Ok(())
            }
        });
        results.into_iter().collect::<Result<Vec<_>>>()?;
    }
    states
        .into_iter()
        .zip(correspondences)
        .map(|(s, c)| s.finish(follower_img, c))
        .collect()
}

/// Builds one correspondence per mutually visible key-point of every
/// associated pair (association order, then key-point index) and refines
/// them together.
pub fn refine_all(
    leader_img: &Image,
    follower_img: &Image,
    associations: &[Association],
    leader_det: &DetectionSet,
    follower_det: &DetectionSet,
    params: &RefineParams,
) -> Result<Vec<Correspondence>> {
    let initial = build_correspondences(associations, leader_det, follower_det)?;
    if initial.is_empty() {
        return Ok(Vec::new());
    }
    refine_stacked(leader_img, follower_img, &initial, params)
}

/// Unrefined correspondences for the associated pairs.
pub fn build_correspondences(
    associations: &[Association],
    leader_det: &DetectionSet,
    follower_det: &DetectionSet,
) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    for a in associations {
        let Some(li) = a.leader_index else {
            continue;
        };
        let (Some(l), Some(f)) = (
            leader_det.skeletons.get(li),
            follower_det.skeletons.get(a.follower_index),
        ) else {
            return Err(Error::Precondition(format!(
                "association {a:?} indexes past the detections"
            )));
        };
        for (j, both) in mutual_visibility(l, f).iter().enumerate() {
            if *both {
                out.push(Correspondence::new(
                    l.slot(j).unwrap(),
                    f.slot(j).unwrap(),
                    j,
                ));
            }
        }
    }
    Ok(out)
}
