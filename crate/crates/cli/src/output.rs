//! JSON shapes shared by the subcommands.

use std::fs;
use std::path::Path;

use pose_anchor::report::to_json_string;
use pose_anchor::{Error, RelativePose, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub fn error_json(e: &Error) -> String {
    json!({ "error": e.code(), "message": e.to_string() }).to_string()
}

/// Writes `value` as pretty JSON with 17-digit floats.
pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), to_json_string(value))?;
    Ok(())
}

/// Row-major nested arrays, which read naturally in JSON.
pub fn matrix_json<M: std::ops::Index<(usize, usize), Output = f64>>(m: &M) -> Value {
    let rows: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
    json!(rows)
}

/// Rotation (row-major), translation, unit quaternion `[w, x, y, z]` and
/// the scale flag.
pub fn pose_json(p: &RelativePose) -> Value {
    let q = p.quaternion();
    json!({
        "rotation": matrix_json(&p.rotation),
        "translation": [p.translation.x, p.translation.y, p.translation.z],
        "quaternion": [q.w, q.i, q.j, q.k],
        "up_to_scale": p.up_to_scale,
    })
}
