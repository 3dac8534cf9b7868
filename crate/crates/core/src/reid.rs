//! Person re-identification from hierarchical body-part crops.
//!
//! Each person is summarized by up to six boxes (face, upper body, lower
//! body, both arms, full body) spanned by their key-points. Two detections
//! are compared by the mean RGB SSIM over the boxes valid in both views, and
//! follower people are matched to leader people greedily by descending score.

use serde::{Deserialize, Serialize};

use crate::detection::{DetectionSet, Keypoint, Skeleton};
use crate::error::{Error, Result};
use crate::imaging::{ssim_rgb, Image, Patch, SSIM_WINDOW};
use crate::par;

/// Minimum accepted box area in square pixels.
pub const MIN_BOX_AREA: f64 = 64.0;
/// Default association threshold on the mean part SSIM.
pub const DEFAULT_DELTA_MIN: f64 = 0.4;
/// Fraction of the key-point span added on each side of a box.
const BOX_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Face,
    UpperBody,
    LowerBody,
    LeftArm,
    RightArm,
    FullBody,
}

impl BodyPart {
    pub const ALL: [BodyPart; 6] = [
        BodyPart::Face,
        BodyPart::UpperBody,
        BodyPart::LowerBody,
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::FullBody,
    ];

    /// Key-points that must all be visible for the box to be valid. The full
    /// body box instead spans whatever is visible.
    pub fn constituents(self) -> &'static [Keypoint] {
        use Keypoint::*;
        match self {
            BodyPart::Face => &[Nose, RightEye, LeftEye, RightEar, LeftEar],
            BodyPart::UpperBody => &[Neck, RightShoulder, LeftShoulder, RightHip, LeftHip],
            BodyPart::LowerBody => &[
                RightHip, LeftHip, RightKnee, LeftKnee, RightAnkle, LeftAnkle,
            ],
            BodyPart::LeftArm => &[LeftShoulder, LeftElbow, LeftWrist],
            BodyPart::RightArm => &[RightShoulder, RightElbow, RightWrist],
            BodyPart::FullBody => &[],
        }
    }
}

/// Axis-aligned box `[x0, x1) x [y0, y1)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartBox {
    pub part: BodyPart,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub valid: bool,
}

impl PartBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    fn invalid(part: BodyPart) -> Self {
        Self {
            part,
            x0: 0.0,
            y0: 0.0,
            x1: 0.0,
            y1: 0.0,
            valid: false,
        }
    }

    /// Integer crop covering the box.
    pub fn crop(&self, image: &Image) -> Patch {
        let x0 = self.x0.floor().max(0.0) as usize;
        let y0 = self.y0.floor().max(0.0) as usize;
        let x1 = (self.x1.ceil() as usize).min(image.width());
        let y1 = (self.y1.ceil() as usize).min(image.height());
        image.crop(x0, y0, x1, y1)
    }
}

/// Association settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidParams {
    pub delta_min: f64,
    pub min_box_area: f64,
}

impl Default for ReidParams {
    fn default() -> Self {
        Self {
            delta_min: DEFAULT_DELTA_MIN,
            min_box_area: MIN_BOX_AREA,
        }
    }
}

/// The six hierarchical boxes of one skeleton, in [`BodyPart::ALL`] order.
pub fn part_boxes(s: &Skeleton, width: usize, height: usize) -> [PartBox; 6] {
    part_boxes_with_min_area(s, width, height, MIN_BOX_AREA)
}

/// [`part_boxes`] with an explicit minimum box area.
pub fn part_boxes_with_min_area(
    s: &Skeleton,
    width: usize,
    height: usize,
    min_area: f64,
) -> [PartBox; 6] {
    BodyPart::ALL.map(|part| {
        let points: Vec<_> = if part == BodyPart::FullBody {
            (0..s.keypoints.len()).filter_map(|j| s.slot(j)).collect()
        } else {
            let pts: Vec<_> = part
                .constituents()
                .iter()
                .filter_map(|k| s.get(*k))
                .collect();
            if pts.len() != part.constituents().len() {
                return PartBox::invalid(part);
            }
            pts
        };
        if points.is_empty() {
            return PartBox::invalid(part);
        }
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &points {
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
        let (mx, my) = (BOX_MARGIN * (x1 - x0), BOX_MARGIN * (y1 - y0));
        let mut b = PartBox {
            part,
            x0: (x0 - mx).max(0.0),
            y0: (y0 - my).max(0.0),
            x1: (x1 + mx).min(width as f64),
            y1: (y1 + my).min(height as f64),
            valid: true,
        };
        b.valid = b.x1 > b.x0 && b.y1 > b.y0 && b.area() >= min_area;
        b
    })
}

/// Mean RGB SSIM over body parts valid in both views. The leader crop is
/// resized to the follower crop; crops thinner than one SSIM window are
/// first stretched to the window size.
pub fn pair_similarity(
    leader_image: &Image,
    leader: &Skeleton,
    follower_image: &Image,
    follower: &Skeleton,
) -> Result<f64> {
    pair_similarity_with_min_area(leader_image, leader, follower_image, follower, MIN_BOX_AREA)
}

/// [`pair_similarity`] with an explicit minimum box area.
pub fn pair_similarity_with_min_area(
    leader_image: &Image,
    leader: &Skeleton,
    follower_image: &Image,
    follower: &Skeleton,
    min_area: f64,
) -> Result<f64> {
    let lb = part_boxes_with_min_area(
        leader,
        leader_image.width(),
        leader_image.height(),
        min_area,
    );
    let fb = part_boxes_with_min_area(
        follower,
        follower_image.width(),
        follower_image.height(),
        min_area,
    );
    let mut total = 0.0;
    let mut count = 0usize;
    for (l, f) in lb.iter().zip(&fb) {
        if !(l.valid && f.valid) {
            continue;
        }
        let mut fc = f.crop(follower_image);
        let (w, h) = (fc.width().max(SSIM_WINDOW), fc.height().max(SSIM_WINDOW));
        if (w, h) != (fc.width(), fc.height()) {
            fc = fc.resize(w, h);
        }
        let lc = l.crop(leader_image).resize(w, h);
        total += ssim_rgb(&lc, &fc)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoComparableParts);
    }
    Ok(total / count as f64)
}

/// Follower person `follower_index` matched to `leader_index` (if any).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Association {
    pub follower_index: usize,
    pub leader_index: Option<usize>,
    /// Score of the accepted pair, or the best score seen when unmatched
    /// (`-1` when no part was comparable with any leader person).
    pub score: f64,
}

/// Full leader x follower similarity table; `None` where no part is comparable.
pub fn similarity_matrix(
    leader_image: &Image,
    leader: &DetectionSet,
    follower_image: &Image,
    follower: &DetectionSet,
) -> Vec<Vec<Option<f64>>> {
    similarity_matrix_with_min_area(leader_image, leader, follower_image, follower, MIN_BOX_AREA)
}

/// [`similarity_matrix`] with an explicit minimum box area.
pub fn similarity_matrix_with_min_area(
    leader_image: &Image,
    leader: &DetectionSet,
    follower_image: &Image,
    follower: &DetectionSet,
    min_area: f64,
) -> Vec<Vec<Option<f64>>> {
    let (nl, nf) = (leader.len(), follower.len());
    let flat = par::map_range(nl * nf, |k| {
        let (li, fi) = (k / nf, k % nf);
        pair_similarity_with_min_area(
            leader_image,
            &leader.skeletons[li],
            follower_image,
            &follower.skeletons[fi],
            min_area,
        )
        .ok()
    });
    flat.chunks(nf.max(1)).take(nl).map(<[_]>::to_vec).collect()
}

/// Associates follower people with leader people.
///
/// Pairs are accepted greedily in descending score order (ties go to the
/// lower leader index, then the lower follower index) as long as neither
/// side is taken and the score reaches `delta_min`.
pub fn associate(
    leader_image: &Image,
    leader: &DetectionSet,
    follower_image: &Image,
    follower: &DetectionSet,
    delta_min: f64,
) -> Vec<Association> {
    let params = ReidParams {
        delta_min,
        ..Default::default()
    };
    associate_with(leader_image, leader, follower_image, follower, &params)
}

/// [`associate`] with explicit parameters.
pub fn associate_with(
    leader_image: &Image,
    leader: &DetectionSet,
    follower_image: &Image,
    follower: &DetectionSet,
    params: &ReidParams,
) -> Vec<Association> {
    let scores = similarity_matrix_with_min_area(
        leader_image,
        leader,
        follower_image,
        follower,
        params.min_box_area,
    );
    associate_from_scores(&scores, follower.len(), params.delta_min)
}

/// Greedy one-to-one assignment on a precomputed `[leader][follower]` table.
pub fn associate_from_scores(
    scores: &[Vec<Option<f64>>],
    num_followers: usize,
    delta_min: f64,
) -> Vec<Association> {
    let mut pairs: Vec<(f64, usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(li, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(fi, s)| s.map(|s| (s, li, fi)))
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out: Vec<Association> = (0..num_followers)
        .map(|fi| Association {
            follower_index: fi,
            leader_index: None,
            score: scores
                .iter()
                .filter_map(|row| row.get(fi).copied().flatten())
                .fold(-1.0, f64::max),
        })
        .collect();
    let mut leader_taken = vec![false; scores.len()];
    for (s, li, fi) in pairs {
        if s < delta_min {
            break;
        }
        if leader_taken[li] || out[fi].leader_index.is_some() {
            continue;
        }
        leader_taken[li] = true;
        out[fi].leader_index = Some(li);
        out[fi].score = s;
    }
    out
}
