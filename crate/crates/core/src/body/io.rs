//! Model and pose files.
//!
//! A model file is JSON:
//! `{"mesh": "template.ply", "skeleton": {"joints": [...]}, "weights": [[[joint, w], ...], ...]}`
//! where `mesh` is resolved relative to the model file. Each joint carries
//! `name`, `parent` (index or null), `offset`, `twist_axis` and optional
//! `bounds` (`lower`/`upper` for swing 1, swing 2, twist).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_weights, SkinnedModel, Skeleton, SwingTwistPose};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_mesh, MeshFormat};

#[derive(Serialize, Deserialize)]
struct ModelFile {
    mesh: PathBuf,
    skeleton: Skeleton,
    weights: Vec<Vec<(u32, f64)>>,
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SkinnedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    file.skeleton.validate()?;
    let mesh_path = path.parent().unwrap_or(Path::new(".")).join(&file.mesh);
    let template = load_mesh(&mesh_path, None)?;
    validate_weights(&file.weights, template.vertex_count(), file.skeleton.len())?;
    Ok(SkinnedModel {
        template,
        skeleton: file.skeleton,
        weights: file.weights,
    })
}

/// Writes `path` and the template mesh as `<stem>.ply` next to it.
pub fn save_model(model: &SkinnedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidParameter(format!("bad model path {}", path.display())))?;
    let mesh_name = PathBuf::from(format!("{stem}.ply"));
    let dir = path.parent().unwrap_or(Path::new("."));
    save_mesh(&model.template, dir.join(&mesh_name), Some(MeshFormat::Ply))?;
    let file = ModelFile {
        mesh: mesh_name,
        skeleton: model.skeleton.clone(),
        weights: model.weights.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Many(Vec<SwingTwistPose>),
    One(Box<SwingTwistPose>),
}

/// Reads a JSON array of poses; a single pose object is also accepted.
pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<SwingTwistPose>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: PoseFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    Ok(match file {
        PoseFile::Many(v) => v,
        PoseFile::One(p) => vec![*p],
    })
}

pub fn save_poses(poses: &[SwingTwistPose], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(poses).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
