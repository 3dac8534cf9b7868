//! Command-line arguments. The parsed structure is echoed verbatim into
//! `run_config.json`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pose_anchor::geometry::RansacParams;
use pose_anchor::pipeline::{PipelineConfig, SfmConfig};
use pose_anchor::refine::{
    RefineParams, DEFAULT_ETA, DEFAULT_MAX_ITER, DEFAULT_PATCH, DEFAULT_RADIUS,
};
use pose_anchor::reid::{ReidParams, DEFAULT_DELTA_MIN, MIN_BOX_AREA};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "pose-anchor",
    version,
    about = "Relative pose between robots from shared views of people"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Render a synthetic scene with ground truth.
    Synth(SynthArgs),
    /// Associate the people seen by two cameras.
    Reid(PairArgs),
    /// Refine key-point correspondences; writes a per-iteration loss CSV.
    Refine(PairArgs),
    /// Two-view reconstruction up to scale: F, E, pose, points, bundle adjustment.
    Sfm(SfmArgs),
    /// Follower pose relative to a leader with 3D key-points.
    Estimate(EstimateArgs),
    /// SVG of a loss CSV (mean loss per iteration) or of estimate.json (trajectory).
    Plot(PlotArgs),
}

/// Stage parameters shared by the processing subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Tuning {
    /// Minimum similarity for a person association.
    #[arg(long, default_value_t = DEFAULT_DELTA_MIN)]
    pub delta_min: f64,
    /// Minimum body-part box area, square pixels.
    #[arg(long, default_value_t = MIN_BOX_AREA)]
    pub min_box_area: f64,
    /// Refinement step size.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Refinement iteration cap.
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Refinement patch side, pixels.
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    pub patch: usize,
    /// Refinement search radius around the detection, pixels.
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    pub radius: f64,
    /// RANSAC hypotheses (default 1000).
    #[arg(long)]
    pub ransac_iters: Option<usize>,
    /// RANSAC inlier threshold, pixels (default 2 for F, 4 for PnP).
    #[arg(long)]
    pub inlier_px: Option<f64>,
    /// RANSAC seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Tuning {
    fn reid(&self) -> ReidParams {
        ReidParams {
            delta_min: self.delta_min,
            min_box_area: self.min_box_area,
        }
    }

    fn refine(&self) -> RefineParams {
        RefineParams {
            eta: self.eta,
            max_iter: self.max_iter,
            patch_size: self.patch,
            radius: self.radius,
        }
    }

    fn ransac(&self, base: RansacParams) -> RansacParams {
        RansacParams {
            max_iterations: self.ransac_iters.unwrap_or(base.max_iterations),
            inlier_threshold: self.inlier_px.unwrap_or(base.inlier_threshold),
            seed: self.seed,
            ..base
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            reid: self.reid(),
            refine: self.refine(),
            ransac: self.ransac(RansacParams::pnp()),
        }
    }

    pub fn sfm(&self, skip_refinement: bool) -> SfmConfig {
        SfmConfig {
            reid: self.reid(),
            refine: self.refine(),
            ransac: self.ransac(RansacParams::fundamental()),
            skip_refinement,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Scene config file; without it a random two-view scene is drawn from --seed.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Seed of the random scene when no --scene is given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PairArgs {
    /// Leader camera directory (image.png, detections.json, camera.json).
    #[arg(long)]
    pub leader: PathBuf,
    /// Follower camera directory.
    #[arg(long)]
    pub follower: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args, Serialize)]
pub struct SfmArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    /// Use the detected key-points without refinement.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    /// Scene directory; uses its `leader` camera and every `follower*` camera.
    #[arg(long, conflicts_with_all = ["leader", "follower"])]
    pub scene: Option<PathBuf>,
    /// Leader camera directory; repeat for a time series.
    #[arg(long)]
    pub leader: Vec<PathBuf>,
    /// Follower camera directory; repeat for several followers.
    #[arg(long)]
    pub follower: Vec<PathBuf>,
    /// Right camera of a rectified stereo leader (needs --baseline).
    #[arg(long, requires = "baseline")]
    pub leader_right: Option<PathBuf>,
    /// Stereo baseline, meters.
    #[arg(long)]
    pub baseline: Option<f64>,
    /// Pair leader and follower detections by timestamp within this window, seconds.
    #[arg(long)]
    pub window_s: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    /// A loss CSV from `refine` or an estimate.json from `estimate`.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
