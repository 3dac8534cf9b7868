//! Per-image human key-point detections.
//!
//! A detection document is a JSON object
//!
//! ```json
//! { "image": "left.png", "width": 640, "height": 480, "timestamp": 0.0,
//!   "people": [ [[x, y], ... 18 entries ...], ... ],
//!   "keypoints3d": [ [[x, y, z] | null, ... 18 entries ...], ... ] }
//! ```
//!
//! where `[-1, -1]` marks an undetected slot. A third number per key-point is
//! accepted as a confidence score and ignored. `keypoints3d` is optional and,
//! when present, runs parallel to `people`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report;
use crate::types::{Pixel, Point3};

pub const NUM_KEYPOINTS: usize = 18;

/// Key-point slots in detector output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum Keypoint {
    Nose = 0,
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightEye,
    LeftEye,
    RightEar,
    LeftEar,
}

impl Keypoint {
    pub const ALL: [Keypoint; NUM_KEYPOINTS] = [
        Keypoint::Nose,
        Keypoint::Neck,
        Keypoint::RightShoulder,
        Keypoint::RightElbow,
        Keypoint::RightWrist,
        Keypoint::LeftShoulder,
        Keypoint::LeftElbow,
        Keypoint::LeftWrist,
        Keypoint::RightHip,
        Keypoint::RightKnee,
        Keypoint::RightAnkle,
        Keypoint::LeftHip,
        Keypoint::LeftKnee,
        Keypoint::LeftAnkle,
        Keypoint::RightEye,
        Keypoint::LeftEye,
        Keypoint::RightEar,
        Keypoint::LeftEar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// 18 ordered key-points of one detected person.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub keypoints: [Pixel; NUM_KEYPOINTS],
    pub visible: [bool; NUM_KEYPOINTS],
    /// Leader-frame 3D positions, when the emitting robot could measure them.
    pub points3d: Option<[Option<Point3>; NUM_KEYPOINTS]>,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self {
            keypoints: [Pixel::default(); NUM_KEYPOINTS],
            visible: [false; NUM_KEYPOINTS],
            points3d: None,
        }
    }
}

impl Skeleton {
    /// Builds a skeleton from optional slots; `None` marks an undetected key-point.
    pub fn from_slots(slots: [Option<Pixel>; NUM_KEYPOINTS]) -> Self {
        let mut s = Skeleton::default();
        for (j, slot) in slots.into_iter().enumerate() {
            if let Some(px) = slot {
                s.keypoints[j] = px;
                s.visible[j] = true;
            }
        }
        s
    }

    pub fn get(&self, kp: Keypoint) -> Option<Pixel> {
        self.slot(kp.index())
    }

    pub fn slot(&self, j: usize) -> Option<Pixel> {
        self.visible[j].then_some(self.keypoints[j])
    }

    pub fn point3d(&self, j: usize) -> Option<Point3> {
        self.points3d.as_ref().and_then(|p| p[j])
    }

    pub fn set_invisible(&mut self, j: usize) {
        self.visible[j] = false;
        self.keypoints[j] = Pixel::default();
        if let Some(p) = self.points3d.as_mut() {
            p[j] = None;
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Mean x over visible key-points.
    pub fn mean_x(&self) -> Option<f64> {
        let (sum, n) = self
            .keypoints
            .iter()
            .zip(&self.visible)
            .filter(|(_, v)| **v)
            .fold((0.0, 0usize), |(s, n), (p, _)| (s + p.x, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// All people detected in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub skeletons: Vec<Skeleton>,
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub timestamp: f64,
}

impl DetectionSet {
    pub fn new(image_ref: impl Into<String>, width: u32, height: u32, timestamp: f64) -> Self {
        Self {
            skeletons: Vec::new(),
            image_ref: image_ref.into(),
            width,
            height,
            timestamp,
        }
    }

    pub fn len(&self) -> usize {
        self.skeletons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skeletons.is_empty()
    }

    pub fn has_3d(&self) -> bool {
        self.skeletons.iter().any(|s| s.points3d.is_some())
    }

    /// Serializes to the detection document format.
    pub fn to_json(&self) -> String {
        let doc = DetectionDocument {
            image: self.image_ref.clone(),
            width: self.width,
            height: self.height,
            timestamp: self.timestamp,
            people: self
                .skeletons
                .iter()
                .map(|s| {
                    (0..NUM_KEYPOINTS)
                        .map(|j| match s.slot(j) {
                            Some(p) => vec![p.x, p.y],
                            None => vec![-1.0, -1.0],
                        })
                        .collect()
                })
                .collect(),
            keypoints3d: self.has_3d().then(|| {
                self.skeletons
                    .iter()
                    .map(|s| {
                        (0..NUM_KEYPOINTS)
                            .map(|j| s.point3d(j).map(|p| [p.x, p.y, p.z]))
                            .collect()
                    })
                    .collect()
            }),
        };
        report::to_json_string(&doc)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionDocument {
    image: String,
    width: u32,
    height: u32,
    timestamp: f64,
    people: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keypoints3d: Option<Vec<Vec<Option<[f64; 3]>>>>,
}

/// Parses a detection document; rows come out sorted left to right.
pub fn parse_detections(document: &str) -> Result<DetectionSet> {
    let doc: DetectionDocument =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    if !doc.timestamp.is_finite() {
        return Err(Error::Schema("timestamp must be finite".into()));
    }
    if let Some(k3) = &doc.keypoints3d {
        if k3.len() != doc.people.len() {
            return Err(Error::Schema(format!(
                "keypoints3d has {} rows for {} people",
                k3.len(),
                doc.people.len()
            )));
        }
    }
    let mut skeletons = Vec::with_capacity(doc.people.len());
    for (i, person) in doc.people.iter().enumerate() {
        if person.len() != NUM_KEYPOINTS {
            return Err(Error::Schema(format!(
                "person {i} has {} key-points, expected {NUM_KEYPOINTS}",
                person.len()
            )));
        }
        let mut s = Skeleton::default();
        for (j, entry) in person.iter().enumerate() {
            if !(2..=3).contains(&entry.len()) {
                return Err(Error::Schema(format!(
                    "person {i} key-point {j} has {} numbers",
                    entry.len()
                )));
            }
            let (x, y) = (entry[0], entry[1]);
            if x == -1.0 && y == -1.0 {
                continue;
            }
            let inside = x.is_finite()
                && y.is_finite()
                && x >= 0.0
                && y >= 0.0
                && x < doc.width as f64
                && y < doc.height as f64;
            if !inside {
                return Err(Error::Bounds {
                    x,
                    y,
                    width: doc.width,
                    height: doc.height,
                });
            }
            s.keypoints[j] = Pixel::new(x, y);
            s.visible[j] = true;
        }
        if let Some(k3) = &doc.keypoints3d {
            let row = &k3[i];
            if row.len() != NUM_KEYPOINTS {
                return Err(Error::Schema(format!(
                    "keypoints3d row {i} has {} entries",
                    row.len()
                )));
            }
            let mut pts = [None; NUM_KEYPOINTS];
            for (j, p) in row.iter().enumerate() {
                if let Some([x, y, z]) = *p {
                    if s.visible[j] {
                        pts[j] = Some(Point3::new(x, y, z));
                    }
                }
            }
            s.points3d = Some(pts);
        }
        skeletons.push(s);
    }
    Ok(DetectionSet {
        skeletons: sort_by_mean_x(skeletons),
        image_ref: doc.image,
        width: doc.width,
        height: doc.height,
        timestamp: doc.timestamp,
    })
}

/// Stable sort by mean visible x; skeletons with nothing visible go last.
pub fn sort_by_mean_x(mut skeletons: Vec<Skeleton>) -> Vec<Skeleton> {
    skeletons.sort_by(mean_x_order);
    skeletons
}

/// The row order used by [`sort_by_mean_x`].
pub fn mean_x_order(a: &Skeleton, b: &Skeleton) -> std::cmp::Ordering {
    match (a.mean_x(), b.mean_x()) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

pub fn mutual_visibility(a: &Skeleton, b: &Skeleton) -> [bool; NUM_KEYPOINTS] {
    std::array::from_fn(|j| a.visible[j] && b.visible[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn person_at(x: f64) -> Vec<[f64; 2]> {
        (0..NUM_KEYPOINTS)
            .map(|j| [x + j as f64, 100.0 + 5.0 * j as f64])
            .collect()
    }

    fn doc(people: &[Vec<[f64; 2]>]) -> String {
        serde_json::json!({
            "image": "img.png", "width": 640, "height": 480, "timestamp": 1.5,
            "people": people,
        })
        .to_string()
    }

    fn skeleton_with(visible: &[usize], x: f64) -> Skeleton {
        let mut slots = [None; NUM_KEYPOINTS];
        for &j in visible {
            slots[j] = Some(Pixel::new(x + j as f64, 10.0));
        }
        Skeleton::from_slots(slots)
    }

    #[test]
    fn empty_document() {
        let ds = parse_detections(&doc(&[])).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.timestamp, 1.5);
    }

    #[test]
    fn fully_visible_person() {
        let ds = parse_detections(&doc(&[person_at(50.0)])).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.skeletons[0].visible.iter().all(|v| *v));
        assert_eq!(ds.skeletons[0].keypoints[3], Pixel::new(53.0, 115.0));
    }

    #[test]
    fn rows_sorted_left_to_right() {
        // Mean x 400 + 8.5 and 100 + 8.5.
        let ds = parse_detections(&doc(&[person_at(400.0), person_at(100.0)])).unwrap();
        assert_eq!(ds.skeletons[0].keypoints[0].x, 100.0);
        assert_eq!(ds.skeletons[1].keypoints[0].x, 400.0);
    }

    #[test]
    fn missing_slots_and_confidence() {
        let text = r#"{"image":"a","width":100,"height":100,"timestamp":0,
            "people":[[[-1,-1],[5,5,0.9],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],
                       [-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[-1,-1],[7,8]]]}"#;
        let ds = parse_detections(text).unwrap();
        let s = &ds.skeletons[0];
        assert_eq!(s.visible_count(), 2);
        assert_eq!(s.get(Keypoint::Neck), Some(Pixel::new(5.0, 5.0)));
        assert_eq!(s.get(Keypoint::LeftEar), Some(Pixel::new(7.0, 8.0)));
        assert_eq!(s.get(Keypoint::Nose), None);
    }

    #[test]
    fn schema_and_bounds_errors() {
        assert!(matches!(parse_detections("{"), Err(Error::Schema(_))));
        let short = doc(&[person_at(0.0)[..17].to_vec()]);
        assert!(matches!(parse_detections(&short), Err(Error::Schema(_))));
        let mut p = person_at(0.0);
        p[4] = [640.0, 10.0];
        assert!(matches!(
            parse_detections(&doc(&[p])),
            Err(Error::Bounds { .. })
        ));
        let mut p = person_at(0.0);
        p[4] = [-1.0, 10.0];
        assert!(matches!(
            parse_detections(&doc(&[p])),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn keypoints3d_follow_their_rows() {
        let text = serde_json::json!({
            "image": "l", "width": 640, "height": 480, "timestamp": 0.0,
            "people": [person_at(300.0), person_at(10.0)],
            "keypoints3d": [
                (0..18).map(|j| if j == 2 { None } else { Some([3.0, 0.0, j as f64]) }).collect::<Vec<_>>(),
                (0..18).map(|j| Some([1.0, 0.0, j as f64])).collect::<Vec<_>>(),
            ],
        })
        .to_string();
        let ds = parse_detections(&text).unwrap();
        assert_eq!(ds.skeletons[0].point3d(5), Some(Point3::new(1.0, 0.0, 5.0)));
        assert_eq!(ds.skeletons[1].point3d(2), None);
        assert_eq!(ds.skeletons[1].point3d(4), Some(Point3::new(3.0, 0.0, 4.0)));
        assert_eq!(parse_detections(&ds.to_json()).unwrap(), ds);
    }

    #[test]
    fn sort_edge_cases() {
        assert!(sort_by_mean_x(Vec::new()).is_empty());
        let empty_a = Skeleton::default();
        let mut empty_b = Skeleton::default();
        empty_b.keypoints[0] = Pixel::new(1.0, 1.0);
        let a = skeleton_with(&[0, 1], 50.0);
        let b = skeleton_with(&[3], 20.0);
        let sorted = sort_by_mean_x(vec![empty_a.clone(), a.clone(), empty_b.clone(), b.clone()]);
        assert_eq!(sorted, vec![b, a, empty_a, empty_b]);
    }

    #[test]
    fn sort_matches_reference_over_all_permutations() {
        let people: Vec<Skeleton> = [300.0, 120.0, 480.0, 10.0, 220.0]
            .iter()
            .map(|&x| skeleton_with(&[0, 4, 9], x))
            .collect();
        // Reference: selection of the minimum mean-x each round.
        let mut reference = Vec::new();
        let mut pool = people.clone();
        while !pool.is_empty() {
            let (k, _) = pool
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    a.1.mean_x()
                        .unwrap()
                        .partial_cmp(&b.1.mean_x().unwrap())
                        .unwrap()
                })
                .unwrap();
            reference.push(pool.remove(k));
        }
        let mut count = 0;
        permute(&mut people.clone(), 0, &mut |perm| {
            assert_eq!(sort_by_mean_x(perm.to_vec()), reference);
            count += 1;
        });
        assert_eq!(count, 120);
        assert_eq!(sort_by_mean_x(reference.clone()), reference);
    }

    fn permute(items: &mut Vec<Skeleton>, k: usize, f: &mut impl FnMut(&[Skeleton])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, f);
            items.swap(k, i);
        }
    }

    #[test]
    fn mutual_visibility_cases() {
        let all: Vec<usize> = (0..18).collect();
        let a = skeleton_with(&all, 0.0);
        assert!(mutual_visibility(&a, &a).iter().all(|v| *v));
        let even = skeleton_with(&(0..18).step_by(2).collect::<Vec<_>>(), 0.0);
        let odd = skeleton_with(&(1..18).step_by(2).collect::<Vec<_>>(), 0.0);
        assert!(mutual_visibility(&even, &odd).iter().all(|v| !*v));
        let lo = skeleton_with(&(0..=8).collect::<Vec<_>>(), 0.0);
        let hi = skeleton_with(&(5..18).collect::<Vec<_>>(), 0.0);
        let m = mutual_visibility(&lo, &hi);
        for (j, v) in m.iter().enumerate() {
            assert_eq!(*v, (5..=8).contains(&j));
        }
    }

    fn arb_skeleton() -> impl Strategy<Value = Skeleton> {
        prop::collection::vec(
            prop::option::weighted(0.7, (0.0f64..640.0, 0.0f64..480.0)),
            18,
        )
        .prop_map(|slots| {
            let mut arr = [None; NUM_KEYPOINTS];
            for (j, s) in slots.into_iter().enumerate() {
                arr[j] = s.map(|(x, y)| Pixel::new(x, y));
            }
            Skeleton::from_slots(arr)
        })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(people in prop::collection::vec(arb_skeleton(), 0..6), ts in -1e6f64..1e6) {
            let ds = DetectionSet {
                skeletons: sort_by_mean_x(people),
                image_ref: "frame.png".into(),
                width: 640,
                height: 480,
                timestamp: ts,
            };
            prop_assert_eq!(parse_detections(&ds.to_json()).unwrap(), ds);
        }

        #[test]
        fn sorting_is_a_permutation(people in prop::collection::vec(arb_skeleton(), 0..8)) {
            let sorted = sort_by_mean_x(people.clone());
            prop_assert_eq!(sorted.len(), people.len());
            for p in &people {
                let want = people.iter().filter(|q| *q == p).count();
                let got = sorted.iter().filter(|q| *q == p).count();
                prop_assert_eq!(want, got);
            }
            let means: Vec<f64> = sorted.iter().filter_map(Skeleton::mean_x).collect();
            prop_assert!(means.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
