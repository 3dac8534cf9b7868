//! `key = value` scene configuration.
//!
//! ```text
//! # explicit scene
//! texture_seed = 7
//! keypoint_noise_sigma = 0.5
//! outlier_rate = 0.1
//! person.0 = x y z heading scale
//! camera.leader = fx fy cx cy width height  cx cy cz yaw pitch
//! camera.follower = fx fy cx cy width height  r00 r01 .. r22 tx ty tz
//! stereo.leader = 0.3
//!
//! # or a random two-view scene
//! random_seed = 3
//! num_people = 3
//! stereo_baseline = 0.3
//!
//! # optional: replace the follower by a rectangle of waypoints around the
//! # leader (half width in x, half depth in z, spacing; meters)
//! trajectory = 1.5 1.0 0.25
//! ```
//!
//! Camera lines take either a center with yaw and pitch (11 numbers) or a
//! full world-to-camera rotation and translation (18 numbers).

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use super::{
    random_two_view_spec, rectangle_path, with_planar_followers, PersonPose, RandomSceneOptions,
    SceneCamera, SceneSpec,
};
use crate::error::{Error, Result};
use crate::report::fmt_f64;
use crate::types::{CameraModel, DepthSource, Point3, RelativePose};

fn numbers(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("{key}: {t:?} is not a finite number")))
        })
        .collect()
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn intrinsics(key: &str, v: &[f64]) -> Result<CameraModel> {
    let dim = |x: f64| -> Result<u32> {
        (x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64)
            .then_some(x as u32)
            .ok_or_else(|| {
                Error::Config(format!("{key}: image size {x} must be a positive integer"))
            })
    };
    CameraModel::new(v[0], v[1], v[2], v[3], dim(v[4])?, dim(v[5])?)
}

/// Parses a scene configuration.
pub fn parse_scene_config(text: &str) -> Result<SceneSpec> {
    let mut entries = BTreeMap::new();
    let mut order = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim().to_string();
        if entries
            .insert(key.clone(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {}: duplicate key {key}",
                n + 1
            )));
        }
        order.push(key);
    }
    let get = |k: &str| entries.get(k).map(String::as_str);

    let sigma = get("keypoint_noise_sigma")
        .map(|v| scalar::<f64>("keypoint_noise_sigma", v))
        .transpose()?;
    let rate = get("outlier_rate")
        .map(|v| scalar::<f64>("outlier_rate", v))
        .transpose()?;
    let num_people = get("num_people")
        .map(|v| scalar::<usize>("num_people", v))
        .transpose()?;

    let mut spec = if let Some(seed) = get("random_seed") {
        let seed: u64 = scalar("random_seed", seed)?;
        let n = num_people.unwrap_or(3);
        if n == 0 {
            return Err(Error::Config("a random scene needs num_people >= 1".into()));
        }
        let opts = RandomSceneOptions {
            min_people: n,
            max_people: n,
            stereo_baseline: get("stereo_baseline")
                .map(|v| scalar("stereo_baseline", v))
                .transpose()?,
            ..Default::default()
        };
        let mut spec = random_two_view_spec(seed, &opts);
        if let Some(t) = get("texture_seed") {
            spec.texture_seed = scalar("texture_seed", t)?;
        }
        spec
    } else {
        let mut people = Vec::new();
        let mut cameras = Vec::new();
        for key in &order {
            let value = &entries[key];
            if let Some(idx) = key.strip_prefix("person.") {
                let i: usize = scalar(key, idx)?;
                let v = numbers(key, value)?;
                if v.len() != 5 {
                    return Err(Error::Config(format!(
                        "{key}: expected x y z heading scale"
                    )));
                }
                people.push((
                    i,
                    PersonPose {
                        position: Point3::new(v[0], v[1], v[2]),
                        heading: v[3],
                        scale: v[4],
                    },
                ));
            } else if let Some(id) = key.strip_prefix("camera.") {
                let v = numbers(key, value)?;
                let model = match v.len() {
                    11 | 18 => intrinsics(key, &v)?,
                    _ => return Err(Error::Config(format!("{key}: expected 11 or 18 numbers"))),
                };
                let cam = if v.len() == 11 {
                    SceneCamera::looking(id, model, Point3::new(v[6], v[7], v[8]), v[9], v[10])
                } else {
                    let r = Matrix3::from_row_slice(&v[6..15]);
                    let t = Vector3::new(v[15], v[16], v[17]);
                    if (r.transpose() * r - Matrix3::identity()).norm() > 1e-6
                        || r.determinant() < 0.0
                    {
                        return Err(Error::Config(format!("{key}: rotation is not orthonormal")));
                    }
                    SceneCamera {
                        id: id.to_string(),
                        camera: model,
                        pose: RelativePose::new(r, t),
                    }
                };
                cameras.push(cam);
            } else if !matches!(
                key.as_str(),
                "texture_seed"
                    | "keypoint_noise_sigma"
                    | "outlier_rate"
                    | "num_people"
                    | "trajectory"
            ) && !key.starts_with("stereo.")
            {
                return Err(Error::Config(format!("unknown key {key}")));
            }
        }
        people.sort_by_key(|(i, _)| *i);
        if people.iter().enumerate().any(|(n, (i, _))| n != *i) {
            return Err(Error::Config("person indices must be 0, 1, 2, ...".into()));
        }
        if let Some(n) = num_people {
            if n != people.len() {
                return Err(Error::Config(format!(
                    "num_people = {n} but {} person lines",
                    people.len()
                )));
            }
        }
        SceneSpec {
            person_poses: people.into_iter().map(|(_, p)| p).collect(),
            cameras,
            texture_seed: get("texture_seed")
                .map(|v| scalar("texture_seed", v))
                .transpose()?
                .unwrap_or(0),
            keypoint_noise_sigma: 0.0,
            outlier_rate: 0.0,
        }
    };
    for (key, value) in &entries {
        if let Some(id) = key.strip_prefix("stereo.") {
            let baseline: f64 = scalar(key, value)?;
            let cam = spec
                .cameras
                .iter_mut()
                .find(|c| c.id == id)
                .ok_or_else(|| Error::Config(format!("{key}: no camera {id}")))?;
            cam.camera = cam
                .camera
                .with_depth_source(DepthSource::Stereo { baseline });
        }
    }
    if let Some(v) = get("trajectory") {
        let v = numbers("trajectory", v)?;
        if v.len() != 3 {
            return Err(Error::Config(
                "trajectory: expected half_x half_z step".into(),
            ));
        }
        spec = with_planar_followers(&spec, &rectangle_path(v[0], v[1], v[2])?)?;
    }
    spec.keypoint_noise_sigma = sigma.unwrap_or(spec.keypoint_noise_sigma);
    spec.outlier_rate = rate.unwrap_or(spec.outlier_rate);
    spec.validate()?;
    Ok(spec)
}

/// Writes a spec in the explicit form; parsing it back gives the same spec.
pub fn scene_config_string(spec: &SceneSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("texture_seed = {}\n", spec.texture_seed));
    out.push_str(&format!(
        "keypoint_noise_sigma = {}\n",
        fmt_f64(spec.keypoint_noise_sigma)
    ));
    out.push_str(&format!("outlier_rate = {}\n", fmt_f64(spec.outlier_rate)));
    out.push_str(&format!("num_people = {}\n", spec.num_people()));
    for (i, p) in spec.person_poses.iter().enumerate() {
        let v = [p.position.x, p.position.y, p.position.z, p.heading, p.scale];
        out.push_str(&format!("person.{i} = {}\n", join(&v)));
    }
    for c in &spec.cameras {
        let k = &c.camera;
        let mut v = vec![k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64];
        let r = &c.pose.rotation;
        for i in 0..3 {
            for j in 0..3 {
                v.push(r[(i, j)]);
            }
        }
        v.extend(c.pose.translation.iter());
        out.push_str(&format!("camera.{} = {}\n", c.id, join(&v)));
        if let DepthSource::Stereo { baseline } = k.depth_source {
            out.push_str(&format!("stereo.{} = {}\n", c.id, fmt_f64(baseline)));
        }
    }
    out
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_config() {
        let text = "\
            # two people, one camera\n\
            texture_seed = 5\n\
            keypoint_noise_sigma = 0.5\n\
            person.1 = 0.5 0 4 0.1 1.0\n\
            person.0 = -0.5 0 4 0 1.05\n\
            camera.a = 600 600 320 240 640 480  0 -1.3 0 0 0.05\n";
        let spec = parse_scene_config(text).unwrap();
        assert_eq!(spec.num_people(), 2);
        assert_eq!(spec.person_poses[0].scale, 1.05);
        assert_eq!(spec.texture_seed, 5);
        assert_eq!(spec.keypoint_noise_sigma, 0.5);
        assert_eq!(spec.outlier_rate, 0.0);
        assert_eq!(spec.cameras[0].id, "a");
    }

    #[test]
    fn round_trip() {
        let opts = RandomSceneOptions {
            stereo_baseline: Some(0.25),
            outlier_rate: 0.1,
            keypoint_noise_sigma: 0.7,
            ..Default::default()
        };
        let spec = random_two_view_spec(17, &opts);
        assert_eq!(
            spec.cameras[0].camera.depth_source,
            DepthSource::Stereo { baseline: 0.25 }
        );
        let text = scene_config_string(&spec);
        assert_eq!(parse_scene_config(&text).unwrap(), spec);
    }

    #[test]
    fn random_config_is_deterministic() {
        let text = "random_seed = 4\nnum_people = 3\nkeypoint_noise_sigma = 1\n";
        let a = parse_scene_config(text).unwrap();
        assert_eq!(a, parse_scene_config(text).unwrap());
        assert_eq!(a.num_people(), 3);
        assert_eq!(a.keypoint_noise_sigma, 1.0);
    }

    #[test]
    fn trajectory_key() {
        let spec = parse_scene_config("random_seed = 2\ntrajectory = 1.0 0.5 0.5\n").unwrap();
        assert_eq!(spec.cameras.len(), 1 + 12);
        assert_eq!(spec.cameras[1].id, "follower_000");
        assert_eq!(
            parse_scene_config(&scene_config_string(&spec)).unwrap(),
            spec
        );
        assert!(parse_scene_config("random_seed = 2\ntrajectory = 1 2\n").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "outlier_rate = 1.0\n",
            "person.0 = 1 2 3\n",
            "bogus = 1\n",
            "texture_seed = 1\ntexture_seed = 2\n",
            "person.1 = 0 0 4 0 1\n",
            "num_people = 2\nperson.0 = 0 0 4 0 1\n",
            "camera.a = 600 600 320 240 640 480 0 0 0\n",
            "no equals sign\n",
            "stereo.x = 0.3\n",
        ] {
            assert!(
                matches!(parse_scene_config(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
