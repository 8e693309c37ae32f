use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{load_mesh, TriMesh};

/// A keyframe and the inclusive frame range it is responsible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameGroup {
    pub keyframe: usize,
    pub first: usize,
    pub last: usize,
}

impl FrameGroup {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.first..=self.last).contains(&frame)
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

/// Checks that groups are ordered, partition `0..frame_count`, and each
/// contains its keyframe.
pub fn validate_groups(groups: &[FrameGroup], frame_count: usize) -> Result<()> {
    let mut next = 0;
    for (i, g) in groups.iter().enumerate() {
        if g.first != next || g.last < g.first {
            return Err(Error::InvalidParameter(format!(
                "group {i} covers {}..={} but frame {next} is next",
                g.first, g.last
            )));
        }
        if !g.contains(g.keyframe) {
            return Err(Error::InvalidParameter(format!(
                "group {i}: keyframe {} lies outside {}..={}",
                g.keyframe, g.first, g.last
            )));
        }
        next = g.last + 1;
    }
    if next != frame_count && !groups.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "groups cover {next} of {frame_count} frames"
        )));
    }
    Ok(())
}

/// On-disk description of a sequence. Relative frame paths are resolved
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub frame_rate: f64,
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<FrameGroup>>,
}

impl SequenceManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SequenceManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut m.frames {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "frame rate must be positive, got {}",
                self.frame_rate
            )));
        }
        if self.frames.is_empty() {
            return Err(Error::InvalidParameter("manifest lists no frames".into()));
        }
        if let Some(g) = &self.groups {
            validate_groups(g, self.frames.len())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct MeshSequence {
    pub frames: Vec<TriMesh>,
    pub frame_rate: f64,
    pub groups: Option<Vec<FrameGroup>>,
    /// File stem per frame, used to name outputs.
    pub names: Vec<String>,
}

impl MeshSequence {
    pub fn new(frames: Vec<TriMesh>, frame_rate: f64) -> Result<Self> {
        let names = (0..frames.len()).map(|i| format!("frame_{i:05}")).collect();
        let s = MeshSequence {
            frames,
            frame_rate,
            groups: None,
            names,
        };
        if s.frames.is_empty() {
            return Err(Error::InvalidParameter("sequence has no frames".into()));
        }
        Ok(s)
    }

    pub fn with_groups(mut self, groups: Vec<FrameGroup>) -> Result<Self> {
        validate_groups(&groups, self.frames.len())?;
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let m = SequenceManifest::load(manifest_path)?;
        let frames = m
            .frames
            .par_iter()
            .map(|p| load_mesh(p, None))
            .collect::<Result<Vec<_>>>()?;
        let names = m
            .frames
            .iter()
            .enumerate()
            .map(|(i, p)| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("frame_{i:05}"))
            })
            .collect();
        Ok(MeshSequence {
            frames,
            frame_rate: m.frame_rate,
            groups: m.groups,
            names,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::save_mesh;
    use crate::synthetic;

    #[test]
    fn group_validation() {
        let ok = [
            FrameGroup { keyframe: 0, first: 0, last: 2 },
            FrameGroup { keyframe: 5, first: 3, last: 9 },
        ];
        validate_groups(&ok, 10).unwrap();
        assert!(validate_groups(&ok, 11).is_err());
        let gap = [
            FrameGroup { keyframe: 0, first: 0, last: 2 },
            FrameGroup { keyframe: 5, first: 4, last: 9 },
        ];
        assert!(validate_groups(&gap, 10).is_err());
        let outside = [FrameGroup { keyframe: 7, first: 0, last: 5 }];
        assert!(validate_groups(&outside, 6).is_err());
    }

    #[test]
    fn manifest_round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cube = synthetic::cube(1.0);
        for i in 0..3 {
            save_mesh(&cube, dir.path().join(format!("f{i}.ply")), None).unwrap();
        }
        let m = SequenceManifest {
            frame_rate: 30.0,
            frames: (0..3).map(|i| PathBuf::from(format!("f{i}.ply"))).collect(),
            groups: None,
        };
        let p = dir.path().join("seq.json");
        m.save(&p).unwrap();
        let seq = MeshSequence::load(&p).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.names, vec!["f0", "f1", "f2"]);
        assert_eq!(seq.frames[2], cube);
    }
}
