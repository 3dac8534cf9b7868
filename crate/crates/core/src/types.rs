//! Shared geometric types and the elementary pose / projection algebra.
//!
//! Pose convention: a [`RelativePose`] `T` maps coordinates expressed in a
//! source frame into a target frame, `x_target = R * x_source + t`. The
//! pose returned by PnP maps leader-frame points into the follower camera
//! frame.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Depth below which a point counts as on or behind the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

/// Continuous image coordinate in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn distance(self, other: Pixel) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// How a camera obtains metric depth for its detections.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepthSource {
    #[default]
    None,
    /// Rectified stereo pair; `baseline` in meters along +x of the left camera.
    Stereo {
        baseline: f64,
    },
    DepthMap,
}

/// Pinhole intrinsics. No lens distortion is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub depth_source: DepthSource,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_source: DepthSource::None,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_depth_source(mut self, depth_source: DepthSource) -> Self {
        self.depth_source = depth_source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Pixel> {
        if p.z <= MIN_DEPTH {
            return Err(Error::NonPositiveDepth { depth: p.z });
        }
        Ok(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates `(x, y, 1)` of a pixel.
    pub fn normalize(&self, px: Pixel) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// Camera-frame point at the given depth along the pixel's ray.
    pub fn back_project(&self, px: Pixel, depth: f64) -> Point3 {
        Point3::from(self.normalize(px) * depth)
    }

    pub fn contains(&self, px: Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

/// Rigid transform between two frames, `x_target = rotation * x_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Translation is a unit direction with unknown magnitude.
    pub up_to_scale: bool,
}

impl Default for RelativePose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            up_to_scale: false,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            up_to_scale: false,
        }
    }

    /// Up-to-scale pose; the translation is normalized to unit length.
    pub fn up_to_scale(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: translation.normalize(),
            up_to_scale: true,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(Rotation3::new(axis_angle).into_inner(), translation)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Origin of the target frame expressed in the source frame. For a
    /// world-to-camera pose this is the camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    /// Projects the rotation back onto SO(3).
    pub fn renormalized(&self) -> Self {
        let rotation = orthonormalize(&self.rotation);
        Self { rotation, ..*self }
    }

    /// Geodesic angle between the two rotations in radians.
    pub fn rotation_error(&self, other: &RelativePose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Applies a left-multiplied axis-angle increment and an additive translation step.
    pub fn retract(&self, d_rot: &Vector3<f64>, d_trans: &Vector3<f64>) -> Self {
        let rotation = Rotation3::new(*d_rot).into_inner() * self.rotation;
        Self {
            rotation,
            translation: self.translation + d_trans,
            up_to_scale: self.up_to_scale,
        }
    }
}

/// Rotation angle of a (near-)rotation matrix in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos is ill-conditioned near zero; use the skew part there.
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = 0.5 * skew.norm();
    sin.atan2(cos)
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Projects a point through `pose` and the camera intrinsics.
pub fn project(camera: &CameraModel, pose: &RelativePose, point: &Point3) -> Result<Pixel> {
    camera.project_camera_point(&pose.transform_point(point).coords)
}

/// `a ∘ b`: first apply `b`, then `a`.
pub fn compose(a: &RelativePose, b: &RelativePose) -> Result<RelativePose> {
    if a.up_to_scale != b.up_to_scale {
        return Err(Error::ScaleMismatch);
    }
    Ok(RelativePose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
        up_to_scale: a.up_to_scale,
    })
}

pub fn invert(p: &RelativePose) -> RelativePose {
    let rt = p.rotation.transpose();
    RelativePose {
        rotation: rt,
        translation: -(rt * p.translation),
        up_to_scale: p.up_to_scale,
    }
}
