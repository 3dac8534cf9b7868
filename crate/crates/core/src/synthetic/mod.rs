//! Ground-truth scenes: template skeletons placed in a world frame, cameras
//! with known poses, textured renders and the matching detection files.
//!
//! The world frame has +y pointing down (gravity) and the ground plane at
//! y = 0, so a level camera with identity rotation looks along +z.

mod config;
mod io;
mod render;
mod trajectory;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionSet, Keypoint, Skeleton, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::types::{compose, invert, CameraModel, DepthSource, Pixel, Point3, RelativePose};

pub use config::{parse_scene_config, scene_config_string};
pub use io::{load_view, write_scene, ViewFiles};
pub use render::{render_view, render_views, RenderedView, ViewTruth};
pub use trajectory::{path_camera_id, rectangle_path, with_planar_followers};

/// Key-point extent (eyes to ankles) of the template at scale 1, meters.
pub const TEMPLATE_HEIGHT: f64 = 1.7;

/// Placement of one person on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonPose {
    /// Point between the ankles.
    pub position: Point3,
    /// Rotation about the vertical axis; 0 faces the -z direction.
    pub heading: f64,
    pub scale: f64,
}

/// A camera with its ground-truth world-to-camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub id: String,
    pub camera: CameraModel,
    pub pose: RelativePose,
}

impl SceneCamera {
    /// Camera at `center` looking along yaw (about +y, 0 = +z) then pitch
    /// (about the camera x axis, positive tilts the view down).
    pub fn looking(
        id: impl Into<String>,
        camera: CameraModel,
        center: Point3,
        yaw: f64,
        pitch: f64,
    ) -> Self {
        let camera_to_world = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch);
        let rotation = camera_to_world.inverse().into_inner();
        Self {
            id: id.into(),
            camera,
            pose: RelativePose::new(rotation, -(rotation * center.coords)),
        }
    }

    pub fn center(&self) -> Point3 {
        self.pose.center()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub person_poses: Vec<PersonPose>,
    pub cameras: Vec<SceneCamera>,
    pub texture_seed: u64,
    pub keypoint_noise_sigma: f64,
    pub outlier_rate: f64,
}

impl SceneSpec {
    pub fn num_people(&self) -> usize {
        self.person_poses.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(Error::Config(format!(
                "outlier_rate {} not in [0, 1)",
                self.outlier_rate
            )));
        }
        if !(self.keypoint_noise_sigma >= 0.0) || !self.keypoint_noise_sigma.is_finite() {
            return Err(Error::Config(
                "keypoint_noise_sigma must be finite and >= 0".into(),
            ));
        }
        for p in &self.person_poses {
            if !(p.scale > 0.0) || !p.heading.is_finite() {
                return Err(Error::Config(format!("invalid person pose {p:?}")));
            }
        }
        let mut ids: Vec<&str> = self.cameras.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("camera ids must be unique".into()));
        }
        for c in &self.cameras {
            c.camera.validate()?;
            if c.id.is_empty() || c.id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid camera id {:?}", c.id)));
            }
        }
        Ok(())
    }

    pub fn camera_index(&self, id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.id == id)
    }
}

/// Template key-points at scale 1 in the person frame: x to the person's
/// left, y down, z backwards (the person faces -z). Ankles sit on y = 0.
/// Every point lies on the surface of a rendered body part, so its
/// projection marks the same texture in every view.
pub fn template_skeleton() -> [Vector3<f64>; NUM_KEYPOINTS] {
    use Keypoint::*;
    let mut t = [Vector3::zeros(); NUM_KEYPOINTS];
    let mut set = |k: Keypoint, x: f64, y: f64, z: f64| t[k.index()] = Vector3::new(x, y, z);
    set(Nose, 0.0, -1.63, 0.0);
    set(Neck, 0.0, -1.45, 0.0);
    set(RightShoulder, -0.20, -1.42, 0.0);
    set(RightElbow, -0.25, -1.13, 0.03);
    set(RightWrist, -0.27, -0.86, -0.04);
    set(LeftShoulder, 0.20, -1.42, 0.0);
    set(LeftElbow, 0.25, -1.13, 0.03);
    set(LeftWrist, 0.27, -0.86, -0.04);
    set(RightHip, -0.11, -0.93, 0.0);
    set(RightKnee, -0.12, -0.50, -0.03);
    set(RightAnkle, -0.12, 0.0, 0.02);
    set(LeftHip, 0.11, -0.93, 0.0);
    set(LeftKnee, 0.12, -0.50, -0.03);
    set(LeftAnkle, 0.12, 0.0, 0.02);
    set(RightEye, -0.035, -1.70, 0.0);
    set(LeftEye, 0.035, -1.70, 0.0);
    set(RightEar, -0.075, -1.66, 0.0);
    set(LeftEar, 0.075, -1.66, 0.0);
    t
}

/// World-from-person rotation for a heading.
pub fn heading_rotation(heading: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), heading).into_inner()
}

/// Generated scene: the spec plus world-frame key-points of every person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub spec: SceneSpec,
    pub people: Vec<[Point3; NUM_KEYPOINTS]>,
}

impl Scene {
    /// Pose mapping camera `from`'s frame into camera `to`'s frame.
    pub fn relative_pose(&self, from: usize, to: usize) -> RelativePose {
        let a = &self.spec.cameras[from].pose;
        let b = &self.spec.cameras[to].pose;
        compose(b, &invert(a)).expect("scene poses are metric")
    }

    /// Person key-points expressed in a camera frame.
    pub fn people_in_camera(&self, camera: usize) -> Vec<[Point3; NUM_KEYPOINTS]> {
        let pose = &self.spec.cameras[camera].pose;
        self.people
            .iter()
            .map(|p| p.map(|x| pose.transform_point(&x)))
            .collect()
    }
}

/// Places the template skeleton for every person; deterministic in the spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let template = template_skeleton();
    let people = spec
        .person_poses
        .iter()
        .map(|p| {
            let r = heading_rotation(p.heading);
            template.map(|v| Point3::from(p.position.coords + r * (v * p.scale)))
        })
        .collect();
    Ok(Scene {
        spec: spec.clone(),
        people,
    })
}

/// Jitters visible key-points with i.i.d. Gaussian noise and replaces a
/// `outlier_rate` fraction by uniform in-frame positions. Results are
/// clamped into the frame so the file stays valid.
pub fn perturb_keypoints(
    det: &DetectionSet,
    sigma: f64,
    outlier_rate: f64,
    seed: u64,
) -> DetectionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let (w, h) = (det.width as f64, det.height as f64);
    let clamp = |v: f64, max: f64| v.clamp(0.0, max * (1.0 - f64::EPSILON) - 1e-9);
    let mut out = det.clone();
    for s in &mut out.skeletons {
        for j in 0..NUM_KEYPOINTS {
            if !s.visible[j] {
                continue;
            }
            // Draw both streams unconditionally so the noise of one point
            // does not depend on the rate.
            let (nx, ny) = (normal.sample(&mut rng), normal.sample(&mut rng));
            let u: f64 = rng.random();
            let (ox, oy): (f64, f64) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
            let p = s.keypoints[j];
            s.keypoints[j] = if u < outlier_rate {
                Pixel::new(ox, oy)
            } else if sigma > 0.0 {
                Pixel::new(clamp(p.x + nx, w), clamp(p.y + ny, h))
            } else {
                p
            };
        }
    }
    out
}

/// Options for [`random_two_view_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneOptions {
    pub min_people: usize,
    pub max_people: usize,
    /// Follower placement angle around the group center, radians (range of |angle|).
    pub follower_angle: (f64, f64),
    /// Baseline of an additional rectified right camera next to the leader.
    pub stereo_baseline: Option<f64>,
    pub keypoint_noise_sigma: f64,
    pub outlier_rate: f64,
}

impl Default for RandomSceneOptions {
    fn default() -> Self {
        Self {
            min_people: 2,
            max_people: 3,
            follower_angle: (0.2, 0.5),
            stereo_baseline: None,
            keypoint_noise_sigma: 0.0,
            outlier_rate: 0.0,
        }
    }
}

pub const LEADER_ID: &str = "leader";
pub const LEADER_RIGHT_ID: &str = "leader_right";
pub const FOLLOWER_ID: &str = "follower";

/// The 640x480, f = 600 camera used by the generated scenes.
pub fn default_camera() -> CameraModel {
    CameraModel::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid intrinsics")
}

fn all_in_frame(camera: &SceneCamera, people: &[[Point3; NUM_KEYPOINTS]], margin: f64) -> bool {
    people.iter().flatten().all(|x| {
        let xc = camera.pose.transform_point(x);
        match camera.camera.project_camera_point(&xc.coords) {
            Ok(p) => {
                p.x >= margin
                    && p.y >= margin
                    && p.x < camera.camera.width as f64 - margin
                    && p.y < camera.camera.height as f64 - margin
            }
            Err(_) => false,
        }
    })
}

/// A leader (plus optional stereo partner) and one follower viewing a group
/// of people from different angles; every key-point is in both frames.
pub fn random_two_view_spec(seed: u64, opts: &RandomSceneOptions) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = default_camera();
    loop {
        let n = rng.random_range(opts.min_people..=opts.max_people);
        // A loose row facing the leader, spaced so that bodies rarely overlap.
        let spacing = rng.random_range(0.75..0.9);
        let depth = 3.2 + 0.3 * n as f64;
        let people: Vec<PersonPose> = (0..n)
            .map(|i| PersonPose {
                position: Point3::new(
                    (i as f64 - (n as f64 - 1.0) / 2.0) * spacing + rng.random_range(-0.1..0.1),
                    0.0,
                    depth + rng.random_range(-0.4..0.4),
                ),
                heading: rng.random_range(-0.4..0.4),
                scale: rng.random_range(0.92..1.08),
            })
            .collect();
        let center = people
            .iter()
            .map(|p| p.position.coords)
            .sum::<Vector3<f64>>()
            / n as f64;
        let leader_center = Point3::new(
            rng.random_range(-0.2..0.2),
            -rng.random_range(1.2..1.5),
            0.0,
        );
        let to_group = center - leader_center.coords;
        let leader_yaw = to_group.x.atan2(to_group.z);
        let pitch = rng.random_range(0.0..0.08);
        let leader = SceneCamera::looking(LEADER_ID, camera, leader_center, leader_yaw, pitch);

        let (lo, hi) = opts.follower_angle;
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let angle = side * rng.random_range(lo..hi);
        let distance = (leader_center.coords - center).xz().norm() * rng.random_range(0.9..1.15);
        let base_angle = (leader_center.x - center.x).atan2(leader_center.z - center.z);
        let a = base_angle + angle;
        let follower_center = Point3::new(
            center.x + distance * a.sin(),
            -rng.random_range(1.0..1.6),
            center.z + distance * a.cos(),
        );
        let look = center - follower_center.coords;
        let follower_yaw = look.x.atan2(look.z) + rng.random_range(-0.05..0.05);
        let follower = SceneCamera::looking(
            FOLLOWER_ID,
            camera,
            follower_center,
            follower_yaw,
            rng.random_range(0.0..0.1),
        );

        let mut cameras = vec![leader.clone()];
        if let Some(b) = opts.stereo_baseline {
            cameras[0].camera = camera.with_depth_source(DepthSource::Stereo { baseline: b });
            let right_center = leader.center().coords
                + leader.pose.rotation.transpose() * Vector3::new(b, 0.0, 0.0);
            cameras.push(SceneCamera {
                id: LEADER_RIGHT_ID.into(),
                camera,
                pose: RelativePose::new(
                    leader.pose.rotation,
                    -(leader.pose.rotation * right_center),
                ),
            });
        }
        cameras.push(follower);
        let spec = SceneSpec {
            person_poses: people,
            cameras,
            texture_seed: seed,
            keypoint_noise_sigma: opts.keypoint_noise_sigma,
            outlier_rate: opts.outlier_rate,
        };
        let scene = generate_scene(&spec).expect("generated spec is valid");
        if spec
            .cameras
            .iter()
            .all(|c| all_in_frame(c, &scene.people, 20.0))
        {
            return spec;
        }
    }
}

/// Skeleton rows for exact projections (no noise) of the given people.
pub(crate) fn skeleton_from_pixels(pixels: &[Option<Pixel>; NUM_KEYPOINTS]) -> Skeleton {
    Skeleton::from_slots(*pixels)
}
