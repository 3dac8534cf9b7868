//! Robot-to-robot relative pose estimation using human body key-points as
//! shared landmarks.
//!
//! A leader robot detects people, triangulates their key-points in its own
//! frame and shares them. A follower associates the same people in its view
//! by structural similarity of body-part crops, refines each key-point
//! correspondence by descending an SSIM loss, and solves PnP with RANSAC for
//! its pose relative to the leader.

pub mod detection;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod par;
pub mod pipeline;
pub mod refine;
pub mod reid;
pub mod report;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use types::{compose, invert, project, CameraModel, DepthSource, Pixel, Point3, RelativePose};
