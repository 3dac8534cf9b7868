//! Scene directory layout:
//! `<dir>/<camera_id>/{image.png, detections.json, camera.json, truth.json}`
//! plus `<dir>/scene.cfg` with the spec that produced it.

use std::fs;
use std::path::Path;

use super::{scene_config_string, RenderedView, Scene, ViewTruth};
use crate::detection::{parse_detections, DetectionSet};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::report::to_json_string;
use crate::types::CameraModel;

/// Writes every rendered view. Cameras listed in `depth_cameras` get their
/// exact 3D key-points embedded in the detection file.
pub fn write_scene(
    dir: &Path,
    scene: &Scene,
    views: &[RenderedView],
    depth_cameras: &[&str],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scene.cfg"), scene_config_string(&scene.spec))?;
    for v in views {
        let sub = dir.join(&v.truth.camera_id);
        fs::create_dir_all(&sub)?;
        v.image.save_png(sub.join("image.png"))?;
        let det = if depth_cameras.contains(&v.truth.camera_id.as_str()) {
            v.detections_with_depth()
        } else {
            v.detections.clone()
        };
        fs::write(sub.join("detections.json"), det.to_json())?;
        fs::write(sub.join("camera.json"), to_json_string(&v.truth.camera))?;
        fs::write(sub.join("truth.json"), to_json_string(&v.truth))?;
    }
    Ok(())
}

/// The files of one camera directory; `truth` is absent for real data.
#[derive(Debug, Clone)]
pub struct ViewFiles {
    pub image: Image,
    pub detections: DetectionSet,
    pub camera: CameraModel,
    pub truth: Option<ViewTruth>,
}

pub fn load_view(dir: &Path) -> Result<ViewFiles> {
    let image = Image::load_png(dir.join("image.png"))?;
    let detections = parse_detections(&fs::read_to_string(dir.join("detections.json"))?)?;
    let truth_path = dir.join("truth.json");
    let truth: Option<ViewTruth> = if truth_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(truth_path)?)?)
    } else {
        None
    };
    let camera_path = dir.join("camera.json");
    let camera = if camera_path.exists() {
        serde_json::from_str::<CameraModel>(&fs::read_to_string(camera_path)?)?
    } else if let Some(t) = &truth {
        t.camera
    } else {
        return Err(Error::Config(format!(
            "{} has no camera.json",
            dir.display()
        )));
    };
    camera.validate()?;
    Ok(ViewFiles {
        image,
        detections,
        camera,
        truth,
    })
}
