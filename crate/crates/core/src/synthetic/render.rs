//! Software renderer: every body part is a textured flat parallelogram in
//! 3D, intersected per sample ray. People are composited back to front;
//! within a person the parts are drawn in a fixed order (torso under head
//! and limbs) so joints look alike from every viewpoint.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{heading_rotation, perturb_keypoints, skeleton_from_pixels, Scene};
use crate::detection::{mean_x_order, DetectionSet, Keypoint, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::par;
use crate::types::{CameraModel, Pixel, Point3, RelativePose};

const BACKGROUND: [f32; 3] = [128.0, 128.0, 128.0];
/// Sub-pixel sample offsets for 2x2 supersampling.
const SAMPLES: [(f64, f64); 4] = [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)];
const NEAR: f64 = 0.05;

/// Body part quad, in drawing order: two joints, half-width across and extension beyond the
/// joints along the limb, in meters at scale 1.
struct PartShape {
    a: PartEnd,
    b: PartEnd,
    half_width: f64,
    extend: f64,
}

#[derive(Clone, Copy)]
enum PartEnd {
    Joint(Keypoint),
    Mid(Keypoint, Keypoint),
}

const PARTS: [PartShape; 10] = {
    use Keypoint::*;
    use PartEnd::*;
    const fn limb(a: Keypoint, b: Keypoint, half_width: f64) -> PartShape {
        PartShape {
            a: Joint(a),
            b: Joint(b),
            half_width,
            extend: 0.05,
        }
    }
    [
        PartShape {
            a: Joint(Neck),
            b: Mid(RightHip, LeftHip),
            half_width: 0.22,
            extend: 0.06,
        },
        PartShape {
            a: Joint(Neck),
            b: Mid(RightEye, LeftEye),
            half_width: 0.11,
            extend: 0.09,
        },
        limb(RightShoulder, RightElbow, 0.06),
        limb(RightElbow, RightWrist, 0.05),
        limb(LeftShoulder, LeftElbow, 0.06),
        limb(LeftElbow, LeftWrist, 0.05),
        limb(RightHip, RightKnee, 0.08),
        limb(RightKnee, RightAnkle, 0.065),
        limb(LeftHip, LeftKnee, 0.08),
        limb(LeftKnee, LeftAnkle, 0.065),
    ]
};

fn end_point(end: PartEnd, kp: &[Point3; NUM_KEYPOINTS]) -> Vector3<f64> {
    match end {
        PartEnd::Joint(k) => kp[k.index()].coords,
        PartEnd::Mid(a, b) => (kp[a.index()].coords + kp[b.index()].coords) * 0.5,
    }
}

/// A parallelogram `origin + u * edge_u + v * edge_v`, (u, v) in [0, 1]²,
/// in camera coordinates, with its texture.
struct Quad {
    origin: Vector3<f64>,
    edge_u: Vector3<f64>,
    edge_v: Vector3<f64>,
    normal: Vector3<f64>,
    /// Dual basis: `u = (x - origin) . dual_u`.
    dual_u: Vector3<f64>,
    dual_v: Vector3<f64>,
    size: (f64, f64),
    texture: Texture,
}

impl Quad {
    fn new(
        origin: Vector3<f64>,
        edge_u: Vector3<f64>,
        edge_v: Vector3<f64>,
        texture: Texture,
    ) -> Self {
        let normal = edge_u.cross(&edge_v);
        let dual_u = edge_v.cross(&normal) / edge_u.dot(&edge_v.cross(&normal));
        let dual_v = normal.cross(&edge_u) / edge_v.dot(&normal.cross(&edge_u));
        Self {
            origin,
            edge_u,
            edge_v,
            normal,
            dual_u,
            dual_v,
            size: (edge_u.norm(), edge_v.norm()),
            texture,
        }
    }

    fn corners(&self) -> [Vector3<f64>; 4] {
        let (o, u, v) = (self.origin, self.edge_u, self.edge_v);
        [o, o + u, o + v, o + u + v]
    }

    /// Texture coordinates (meters) where the ray hits the quad.
    fn hit(&self, ray: &Vector3<f64>) -> Option<(f64, f64)> {
        let denom = self.normal.dot(ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = self.normal.dot(&self.origin) / denom;
        if s <= NEAR {
            return None;
        }
        let rel = ray * s - self.origin;
        let (u, v) = (rel.dot(&self.dual_u), rel.dot(&self.dual_v));
        ((0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v))
            .then(|| (u * self.size.0, v * self.size.1))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x51_7CC1_B727_220A, |h, &p| splitmix(h ^ p))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Band-limited value noise blended between two colors.
#[derive(Clone, Copy)]
struct Texture {
    key: u64,
    colors: [[f32; 3]; 2],
}

/// Octaves as (lattice cell in meters, weight).
const OCTAVES: [(f64, f64); 1] = [(0.05, 1.0)];

impl Texture {
    fn new(texture_seed: u64, person: usize, part: usize) -> Self {
        let key = hash(&[texture_seed, person as u64, part as u64]);
        let color = |i: u64| -> [f32; 3] {
            std::array::from_fn(|c| (25.0 + 210.0 * unit(hash(&[key, i, c as u64]))) as f32)
        };
        // The second color differs from the first by 90..130 per channel so
        // every part has strong texture contrast.
        let a = color(1);
        let b = std::array::from_fn(|c| {
            let d = (90.0 + 40.0 * unit(hash(&[key, 3, c as u64]))) as f32;
            if a[c] < 128.0 {
                a[c] + d
            } else {
                a[c] - d
            }
        });
        Self {
            key,
            colors: [a, b],
        }
    }

    fn lattice(&self, octave: u64, i: i64, j: i64) -> f64 {
        unit(hash(&[self.key, octave, i as u64, j as u64]))
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        OCTAVES
            .iter()
            .enumerate()
            .map(|(o, &(cell, weight))| {
                let (gx, gy) = (x / cell, y / cell);
                let (i, j) = (gx.floor(), gy.floor());
                let (tx, ty) = (smooth(gx - i), smooth(gy - j));
                let (i, j, o) = (i as i64, j as i64, o as u64);
                let top = self.lattice(o, i, j) * (1.0 - tx) + self.lattice(o, i + 1, j) * tx;
                let bottom =
                    self.lattice(o, i, j + 1) * (1.0 - tx) + self.lattice(o, i + 1, j + 1) * tx;
                weight * (top * (1.0 - ty) + bottom * ty)
            })
            .sum()
    }

    fn color(&self, x: f64, y: f64) -> [f32; 3] {
        let t = self.noise(x, y) as f32;
        let [a, b] = self.colors;
        std::array::from_fn(|c| a[c] * (1.0 - t) + b[c] * t)
    }
}

/// Quads of one person in a camera frame, or `None` if any part crosses
/// the near plane.
fn person_quads(scene: &Scene, person: usize, pose: &RelativePose) -> Option<Vec<Quad>> {
    let spec = &scene.spec.person_poses[person];
    let world = &scene.people[person];
    let facing = heading_rotation(spec.heading) * Vector3::new(0.0, 0.0, -1.0);
    let kp = world.map(|p| pose.transform_point(&p));
    let facing = pose.rotation * facing;
    let mut quads = Vec::with_capacity(PARTS.len());
    for (i, part) in PARTS.iter().enumerate() {
        let a = end_point(part.a, &kp);
        let b = end_point(part.b, &kp);
        let axis = (b - a).normalize();
        let across = axis.cross(&facing).normalize() * (part.half_width * spec.scale);
        let ext = axis * (part.extend * spec.scale);
        let origin = a - ext - across;
        let quad = Quad::new(
            origin,
            across * 2.0,
            b - a + ext * 2.0,
            Texture::new(scene.spec.texture_seed, person, i),
        );
        if quad.corners().iter().any(|c| c.z <= NEAR) {
            return None;
        }
        quads.push(quad);
    }
    Some(quads)
}

/// Ground truth for one rendered view, row-aligned with the emitted
/// detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub camera_id: String,
    pub camera: CameraModel,
    /// World-to-camera pose.
    pub pose: RelativePose,
    /// Scene person index of every detection row.
    pub person_ids: Vec<usize>,
    /// Exact projections, `None` where out of frame, behind or occluded.
    pub keypoints: Vec<[Option<Pixel>; NUM_KEYPOINTS]>,
    /// Camera-frame 3D key-points of every row.
    pub points3d: Vec<[Point3; NUM_KEYPOINTS]>,
}

#[derive(Debug, Clone)]
pub struct RenderedView {
    pub image: Image,
    /// Emitted (noisy) detections, in file order.
    pub detections: DetectionSet,
    /// Noise-free detections in the same row order.
    pub truth_detections: DetectionSet,
    pub truth: ViewTruth,
}

impl RenderedView {
    /// The emitted detections with camera-frame 3D key-points attached
    /// wherever a key-point is visible. Like a depth sensor read at the
    /// detected pixel, each point is that pixel back-projected to the true
    /// key-point depth.
    pub fn detections_with_depth(&self) -> DetectionSet {
        let mut det = self.detections.clone();
        let camera = self.truth.camera;
        for (s, p) in det.skeletons.iter_mut().zip(&self.truth.points3d) {
            let points =
                std::array::from_fn(|j| s.slot(j).map(|px| camera.back_project(px, p[j].z)));
            s.points3d = Some(points);
        }
        det
    }
}

fn noise_seed(texture_seed: u64, camera: usize) -> u64 {
    hash(&[texture_seed, 0x6E6F_6973_65, camera as u64])
}

/// Renders one camera of the scene.
pub fn render_view(scene: &Scene, camera_index: usize) -> Result<RenderedView> {
    let cam = scene
        .spec
        .cameras
        .get(camera_index)
        .ok_or_else(|| Error::Precondition(format!("no camera {camera_index}")))?;
    let (k, pose) = (&cam.camera, &cam.pose);
    let (w, h) = (k.width as usize, k.height as usize);
    let people_cam = scene.people_in_camera(camera_index);

    // Back to front by person depth.
    let mut order: Vec<(f64, usize)> = people_cam
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().map(|x| x.z).sum::<f64>() / NUM_KEYPOINTS as f64, i))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut samples = vec![BACKGROUND; w * h * SAMPLES.len()];
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut rank = vec![usize::MAX; scene.people.len()];
    let k_inv = k.inverse_matrix();
    for (r, &(_, person)) in order.iter().enumerate() {
        rank[person] = r;
        let Some(quads) = person_quads(scene, person, pose) else {
            continue;
        };
        for quad in &quads {
            let proj: Vec<Pixel> = quad
                .corners()
                .iter()
                .filter_map(|c| k.project_camera_point(c).ok())
                .collect();
            let x0 = proj
                .iter()
                .map(|p| p.x)
                .fold(f64::INFINITY, f64::min)
                .floor()
                - 1.0;
            let x1 = proj
                .iter()
                .map(|p| p.x)
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil()
                + 1.0;
            let y0 = proj
                .iter()
                .map(|p| p.y)
                .fold(f64::INFINITY, f64::min)
                .floor()
                - 1.0;
            let y1 = proj
                .iter()
                .map(|p| p.y)
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil()
                + 1.0;
            let (x0, x1) = (x0.max(0.0) as usize, (x1.min(w as f64 - 1.0)).max(-1.0));
            let (y0, y1) = (y0.max(0.0) as usize, (y1.min(h as f64 - 1.0)).max(-1.0));
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let ray =
                        |dx: f64, dy: f64| k_inv * Vector3::new(x as f64 + dx, y as f64 + dy, 1.0);
                    for (s, &(dx, dy)) in SAMPLES.iter().enumerate() {
                        if let Some((u, v)) = quad.hit(&ray(dx, dy)) {
                            samples[(y * w + x) * SAMPLES.len() + s] = quad.texture.color(u, v);
                        }
                    }
                    if quad.hit(&ray(0.0, 0.0)).is_some() {
                        owner[y * w + x] = Some(person);
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(w * h * 3);
    for px in samples.chunks_exact(SAMPLES.len()) {
        for c in 0..3 {
            let mean = px.iter().map(|s| s[c]).sum::<f32>() / SAMPLES.len() as f32;
            data.push(mean.round().clamp(0.0, 255.0) as u8);
        }
    }
    let image = Image::from_raw(w, h, data)?;

    // Exact key-points with visibility.
    let exact: Vec<[Option<Pixel>; NUM_KEYPOINTS]> = people_cam
        .iter()
        .enumerate()
        .map(|(person, kp)| {
            std::array::from_fn(|j| {
                let px = k
                    .project_camera_point(&kp[j].coords)
                    .ok()
                    .filter(|p| k.contains(*p))?;
                let (xi, yi) = (px.x.round() as usize, px.y.round() as usize);
                let occluded = owner
                    .get(yi.min(h - 1) * w + xi.min(w - 1))
                    .copied()
                    .flatten()
                    .is_some_and(|o| rank[o] > rank[person] && o != person);
                (!occluded).then_some(px)
            })
        })
        .collect();

    let image_ref = format!("{}/image.png", cam.id);
    let mut truth_det = DetectionSet::new(image_ref, k.width, k.height, 0.0);
    truth_det.skeletons = exact.iter().map(skeleton_from_pixels).collect();
    let noisy = perturb_keypoints(
        &truth_det,
        scene.spec.keypoint_noise_sigma,
        scene.spec.outlier_rate,
        noise_seed(scene.spec.texture_seed, camera_index),
    );

    // File order is ascending mean x of the emitted rows.
    let mut ids: Vec<usize> = (0..noisy.skeletons.len()).collect();
    ids.sort_by(|&a, &b| mean_x_order(&noisy.skeletons[a], &noisy.skeletons[b]));
    let mut detections = noisy.clone();
    detections.skeletons = ids.iter().map(|&i| noisy.skeletons[i].clone()).collect();
    truth_det.skeletons = ids
        .iter()
        .map(|&i| truth_det.skeletons[i].clone())
        .collect();

    Ok(RenderedView {
        image,
        detections,
        truth_detections: truth_det,
        truth: ViewTruth {
            camera_id: cam.id.clone(),
            camera: *k,
            pose: *pose,
            keypoints: ids.iter().map(|&i| exact[i]).collect(),
            points3d: ids.iter().map(|&i| people_cam[i]).collect(),
            person_ids: ids,
        },
    })
}

/// Renders every camera of the scene, in camera order.
pub fn render_views(scene: &Scene) -> Result<Vec<RenderedView>> {
    par::map_range(scene.spec.cameras.len(), |i| render_view(scene, i))
        .into_iter()
        .collect()
}
