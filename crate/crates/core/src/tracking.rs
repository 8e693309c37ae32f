//! Keyframe selection, forward/backward tracking within groups, greedy
//! merging of frames tracked from two keyframes, and transition blending.

use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defgraph::{DeformationGraph, GraphHierarchy};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_mesh, FrameGroup, MeshSequence, TriMesh};
use crate::registration::{register, register_with_hierarchy, RegistrationParams};
use crate::report::write_report;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KeyframePolicy {
    EveryNth { n: usize },
    /// One keyframe per window of `n` frames, maximizing
    /// `w_area * zscore(area) - w_genus * genus` inside the window.
    Scored { n: usize, w_area: f64, w_genus: f64 },
}

impl KeyframePolicy {
    pub fn every_nth(n: usize) -> Self {
        KeyframePolicy::EveryNth { n }
    }

    pub fn scored(n: usize) -> Self {
        KeyframePolicy::Scored {
            n,
            w_area: 1.0,
            w_genus: 1.0,
        }
    }

    pub fn window(&self) -> usize {
        match *self {
            KeyframePolicy::EveryNth { n } | KeyframePolicy::Scored { n, .. } => n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window() == 0 {
            return Err(Error::InvalidParameter("keyframe interval must be at least 1".into()));
        }
        if let KeyframePolicy::Scored { w_area, w_genus, .. } = *self {
            if !(w_area >= 0.0 && w_genus >= 0.0 && w_area.is_finite() && w_genus.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "keyframe score weights must be non-negative, got ({w_area}, {w_genus})"
                )));
            }
        }
        Ok(())
    }
}

/// Parses `every_nth:N`, `scored:N` or `scored:N:W_AREA:W_GENUS`.
impl FromStr for KeyframePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidParameter(format!(
                "bad keyframe policy `{s}` (expected every_nth:N or scored:N[:W_AREA:W_GENUS])"
            ))
        };
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts.get(i).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad());
        let n = parts
            .get(1)
            .ok_or_else(bad)?
            .parse::<usize>()
            .map_err(|_| bad())?;
        let p = match (parts[0], parts.len()) {
            ("every_nth", 2) => KeyframePolicy::every_nth(n),
            ("scored", 2) => KeyframePolicy::scored(n),
            ("scored", 4) => KeyframePolicy::Scored {
                n,
                w_area: num(2)?,
                w_genus: num(3)?,
            },
            _ => return Err(bad()),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Total genus over components, or `None` when some component is open or
/// otherwise lacks a genus.
fn frame_genus(mesh: &TriMesh) -> Option<u32> {
    mesh.genus_per_component()
        .iter()
        .map(|c| c.kind.genus())
        .sum()
}

/// Keyframe score per frame of one window. Frames without a defined genus
/// rank below every frame that has one.
fn window_scores(areas: &[f64], genus: &[Option<u32>], w_area: f64, w_genus: f64) -> Vec<(bool, f64)> {
    let n = areas.len() as f64;
    let mean = areas.iter().sum::<f64>() / n;
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    areas
        .iter()
        .zip(genus)
        .map(|(&a, g)| {
            let z = if sd > 1e-12 * mean.abs().max(1e-300) { (a - mean) / sd } else { 0.0 };
            match g {
                Some(g) => (true, w_area * z - w_genus * *g as f64),
                None => (false, w_area * z),
            }
        })
        .collect()
}

/// Assigns every frame to its nearest keyframe, ties to the earlier one.
pub fn groups_from_keyframes(keyframes: &[usize], frame_count: usize) -> Vec<FrameGroup> {
    let mut groups: Vec<FrameGroup> = Vec::with_capacity(keyframes.len());
    for (i, &k) in keyframes.iter().enumerate() {
        let first = if i == 0 {
            0
        } else {
            // Frames up to the midpoint (inclusive on ties) go to the previous one.
            let prev = keyframes[i - 1];
            prev + (k - prev) / 2 + 1
        };
        let last = match keyframes.get(i + 1) {
            Some(&next) => k + (next - k) / 2,
            None => frame_count - 1,
        };
        groups.push(FrameGroup { keyframe: k, first, last });
    }
    groups
}

pub fn select_keyframes(seq: &MeshSequence, policy: &KeyframePolicy) -> Result<Vec<FrameGroup>> {
    policy.validate()?;
    if seq.is_empty() {
        return Err(Error::InvalidParameter("sequence has no frames".into()));
    }
    let n = policy.window();
    let count = seq.len();
    let keyframes: Vec<usize> = match *policy {
        KeyframePolicy::EveryNth { .. } => (0..count).step_by(n).collect(),
        KeyframePolicy::Scored { w_area, w_genus, .. } => {
            let areas: Vec<f64> = seq.frames.par_iter().map(|m| m.surface_area()).collect();
            let genus: Vec<Option<u32>> = seq.frames.par_iter().map(frame_genus).collect();
            let mut ks = Vec::new();
            for start in (0..count).step_by(n) {
                let end = (start + n).min(count);
                let scores = window_scores(&areas[start..end], &genus[start..end], w_area, w_genus);
                let mut best = 0;
                for (i, s) in scores.iter().enumerate().skip(1) {
                    let b = scores[best];
                    if s.0 && !b.0 || s.0 == b.0 && s.1 > b.1 {
                        best = i;
                    }
                }
                if !scores[best].0 {
                    warn!("no closed frame in window {start}..{end}; keyframe {} has undefined genus", start + best);
                }
                ks.push(start + best);
            }
            ks
        }
    };
    Ok(groups_from_keyframes(&keyframes, count))
}

#[derive(Clone, Debug)]
pub struct TrackedFrame {
    pub frame: usize,
    pub keyframe: usize,
    /// The keyframe mesh deformed onto this frame.
    pub mesh: TriMesh,
    pub error: f64,
    pub converged: bool,
    /// Frames whose registrations were chained to reach this one, in
    /// order, starting next to the keyframe. Empty for the keyframe.
    pub chain: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct GroupTrack {
    pub keyframe: usize,
    pub first: usize,
    pub last: usize,
    /// One entry per frame of `first..=last`, in frame order.
    pub frames: Vec<TrackedFrame>,
}

/// Tracks the keyframe mesh through `first..=last`, forward and backward,
/// each step starting from the previous step's solved graph.
pub fn track_group(
    seq: &MeshSequence,
    keyframe: usize,
    first: usize,
    last: usize,
    params: &RegistrationParams,
) -> Result<GroupTrack> {
    params.validate()?;
    if first > last || last >= seq.len() || !(first..=last).contains(&keyframe) {
        return Err(Error::InvalidParameter(format!(
            "keyframe {keyframe} and range {first}..={last} do not fit a {}-frame sequence",
            seq.len()
        )));
    }
    let key = &seq.frames[keyframe];
    let spacing = params.node_spacing.unwrap_or(0.025 * key.bbox_diagonal());
    let hierarchy = GraphHierarchy::build(
        key,
        spacing,
        params.levels,
        params.level_ratio,
        params.nodes_per_vertex,
    )?;
    let identity = hierarchy.levels[params.levels - 1].clone();

    let mut slots: Vec<Option<TrackedFrame>> = (first..=last).map(|_| None).collect();
    slots[keyframe - first] = Some(TrackedFrame {
        frame: keyframe,
        keyframe,
        mesh: key.clone(),
        error: 0.0,
        converged: true,
        chain: Vec::new(),
    });

    let forward: Vec<usize> = (keyframe + 1..=last).collect();
    let backward: Vec<usize> = (first..keyframe).rev().collect();
    for direction in [forward, backward] {
        let mut graph: DeformationGraph = identity.clone();
        let mut chain = Vec::new();
        for f in direction {
            let res = register_with_hierarchy(key, &hierarchy, &seq.frames[f], params, Some(&graph))?;
            if !res.converged {
                warn!("frame {f}: registration from keyframe {keyframe} did not converge (error {:.3e})", res.error);
            }
            chain.push(f);
            graph = res.graph;
            slots[f - first] = Some(TrackedFrame {
                frame: f,
                keyframe,
                mesh: res.deformed_source,
                error: res.error,
                converged: res.converged,
                chain: chain.clone(),
            });
        }
    }
    Ok(GroupTrack {
        keyframe,
        first,
        last,
        frames: slots.into_iter().map(|s| s.expect("every frame tracked")).collect(),
    })
}

/// A frame tracked from two keyframes and the greedy decision between them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleTracked {
    pub frame: usize,
    pub chosen_keyframe: usize,
    pub chosen_error: f64,
    pub rejected_keyframe: usize,
    pub rejected_error: f64,
}

#[derive(Clone, Debug)]
pub struct TrackedSequence {
    /// Exactly one entry per input frame, in frame order.
    pub frames: Vec<TrackedFrame>,
    /// Nominal groups from keyframe selection, before overlap.
    pub groups: Vec<FrameGroup>,
    pub double_tracked: Vec<DoubleTracked>,
    pub frame_rate: f64,
    pub names: Vec<String>,
}

impl TrackedSequence {
    pub fn keyframes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.keyframe).collect()
    }

    /// Frames whose final mesh came from `keyframe`.
    pub fn members(&self, keyframe: usize) -> Vec<usize> {
        self.frames
            .iter()
            .filter(|f| f.keyframe == keyframe)
            .map(|f| f.frame)
            .collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.error).collect()
    }

    pub fn report(&self) -> TrackingReport {
        TrackingReport {
            frame_rate: self.frame_rate,
            keyframes: self.keyframes(),
            groups: self.groups.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| FrameRecord {
                    name: self.names[f.frame].clone(),
                    frame: f.frame,
                    keyframe: f.keyframe,
                    error: f.error,
                    converged: f.converged,
                    chain: f.chain.clone(),
                })
                .collect(),
            double_tracked: self.double_tracked.clone(),
        }
    }

    /// Writes `<name>.ply` per frame and `tracking_report.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.frames
            .par_iter()
            .map(|f| save_mesh(&f.mesh, dir.join(format!("{}.ply", self.names[f.frame])), None))
            .collect::<Result<Vec<_>>>()?;
        write_report(&self.report(), dir.join(REPORT_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: TrackingReport = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        for (i, r) in report.frames.iter().enumerate() {
            if r.frame != i {
                return Err(Error::Config(format!(
                    "{}: frame record {i} is numbered {}",
                    path.display(),
                    r.frame
                )));
            }
        }
        let meshes = report
            .frames
            .par_iter()
            .map(|r| load_mesh(dir.join(format!("{}.ply", r.name)), None))
            .collect::<Result<Vec<_>>>()?;
        let names = report.frames.iter().map(|r| r.name.clone()).collect();
        let frames = report
            .frames
            .into_iter()
            .zip(meshes)
            .map(|(r, mesh)| TrackedFrame {
                frame: r.frame,
                keyframe: r.keyframe,
                mesh,
                error: r.error,
                converged: r.converged,
                chain: r.chain,
            })
            .collect();
        Ok(TrackedSequence {
            frames,
            groups: report.groups,
            double_tracked: report.double_tracked,
            frame_rate: report.frame_rate,
            names,
        })
    }
}

pub const REPORT_FILE: &str = "tracking_report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub name: String,
    pub frame: usize,
    pub keyframe: usize,
    pub error: f64,
    pub converged: bool,
    pub chain: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub frame_rate: f64,
    pub keyframes: Vec<usize>,
    pub groups: Vec<FrameGroup>,
    pub frames: Vec<FrameRecord>,
    pub double_tracked: Vec<DoubleTracked>,
}

/// Tracks every group, extending each `overlap` frames into its neighbours
/// (never past a neighbouring keyframe), then keeps the lower-error result
/// for frames tracked twice.
pub fn track_sequence(
    seq: &MeshSequence,
    policy: &KeyframePolicy,
    params: &RegistrationParams,
    overlap: usize,
) -> Result<TrackedSequence> {
    let groups = match &seq.groups {
        Some(g) => g.clone(),
        None => select_keyframes(seq, policy)?,
    };
    track_groups(seq, &groups, params, overlap)
}

/// As [`track_sequence`] with the groups given.
pub fn track_groups(
    seq: &MeshSequence,
    groups: &[FrameGroup],
    params: &RegistrationParams,
    overlap: usize,
) -> Result<TrackedSequence> {
    crate::mesh::validate_groups(groups, seq.len())?;
    let extended: Vec<(usize, usize, usize)> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let first = match i.checked_sub(1).map(|p| groups[p].keyframe) {
                Some(prev) => g.first.saturating_sub(overlap).max(prev + 1),
                None => g.first,
            };
            let last = match groups.get(i + 1) {
                Some(next) => (g.last + overlap).min(next.keyframe - 1),
                None => g.last,
            };
            (g.keyframe, first.min(g.first), last.max(g.last))
        })
        .collect();
    info!("tracking {} groups over {} frames", groups.len(), seq.len());
    let tracks = extended
        .par_iter()
        .map(|&(k, a, b)| track_group(seq, k, a, b, params))
        .collect::<Result<Vec<_>>>()?;

    // Groups are in keyframe order, so the first candidate seen for a frame
    // always has the earlier keyframe.
    let mut slots: Vec<Option<TrackedFrame>> = (0..seq.len()).map(|_| None).collect();
    let mut double = Vec::new();
    for track in tracks {
        for tf in track.frames {
            let f = tf.frame;
            match slots[f].take() {
                None => slots[f] = Some(tf),
                Some(prev) => {
                    let (win, lose) = if tf.error < prev.error { (tf, prev) } else { (prev, tf) };
                    double.push(DoubleTracked {
                        frame: f,
                        chosen_keyframe: win.keyframe,
                        chosen_error: win.error,
                        rejected_keyframe: lose.keyframe,
                        rejected_error: lose.error,
                    });
                    slots[f] = Some(win);
                }
            }
        }
    }
    double.sort_by_key(|d| d.frame);
    Ok(TrackedSequence {
        frames: slots.into_iter().map(|s| s.expect("groups cover every frame")).collect(),
        groups: groups.to_vec(),
        double_tracked: double,
        frame_rate: seq.frame_rate,
        names: seq.names.clone(),
    })
}

/// Registers `a_end` onto `b_start` and interpolates linearly from `a_end`
/// to the registered mesh over `window` meshes. A window of one returns
/// the registered mesh alone.
pub fn smooth_transition(
    a_end: &TriMesh,
    b_start: &TriMesh,
    window: usize,
    params: &RegistrationParams,
) -> Result<Vec<TriMesh>> {
    if window == 0 {
        return Err(Error::InvalidParameter("transition window must be at least 1".into()));
    }
    let reg = register(a_end, b_start, params)?;
    blend_to(a_end, &reg.deformed_source, window)
}

/// Linear vertex interpolation from `from` (first output) to `to` (last).
pub fn blend_to(from: &TriMesh, to: &TriMesh, window: usize) -> Result<Vec<TriMesh>> {
    if from.vertex_count() != to.vertex_count() {
        return Err(Error::DimensionMismatch {
            what: "blend vertex count",
            expected: from.vertex_count(),
            found: to.vertex_count(),
        });
    }
    if window == 1 {
        return Ok(vec![to.clone()]);
    }
    (0..window)
        .map(|i| {
            let t = i as f64 / (window - 1) as f64;
            let v = from
                .vertices()
                .iter()
                .zip(to.vertices())
                .map(|(a, b)| a + (b - a) * t)
                .collect();
            from.with_vertices(v)
        })
        .collect()
}
