use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pose_distance, retarget, GlueMap};
use crate::body::{JointPose, Skeleton, SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::geodesic_angle;
use crate::mesh::{validate_groups, FrameGroup, TriMesh};
use crate::registration::RegistrationParams;
use crate::tracking::smooth_transition;

/// One tracked group of frames with its fitted poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionNode {
    pub keyframe: usize,
    pub first: usize,
    pub last: usize,
    pub poses: Vec<SwingTwistPose>,
}

impl MotionNode {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionEdge {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub blend_window: usize,
}

/// Nodes are tracked groups; explicit edges join the end of one group to
/// the start of another. Stepping forward inside a group, or holding a
/// frame, is always allowed and costs nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionGraph {
    pub nodes: Vec<MotionNode>,
    pub edges: Vec<MotionEdge>,
}

impl MotionGraph {
    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.poses.is_empty() || n.poses.len() != n.last + 1 - n.first {
                return Err(Error::InvalidParameter(format!("motion node {i} has an inconsistent frame range")));
            }
        }
        for e in &self.edges {
            if e.from >= self.nodes.len() || e.to >= self.nodes.len() {
                return Err(Error::InvalidParameter(format!("edge {} -> {} leaves the graph", e.from, e.to)));
            }
            if !(e.cost >= 0.0) || e.blend_window == 0 {
                return Err(Error::InvalidParameter(format!("edge {} -> {} has a bad cost or window", e.from, e.to)));
            }
        }
        Ok(())
    }

    /// Weakly connected component label per node.
    pub fn components(&self) -> Vec<usize> {
        let mut label: Vec<usize> = (0..self.nodes.len()).collect();
        fn root(l: &mut [usize], mut i: usize) -> usize {
            while l[i] != i {
                l[i] = l[l[i]];
                i = l[i];
            }
            i
        }
        for e in &self.edges {
            let (a, b) = (root(&mut label, e.from), root(&mut label, e.to));
            label[a.max(b)] = a.min(b);
        }
        (0..label.len()).map(|i| root(&mut label, i)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: MotionGraph = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        g.validate()?;
        Ok(g)
    }
}

/// One node per group; an edge A -> B (A != B) whenever the last pose of A
/// is closer than `cost_threshold` to the first pose of B.
pub fn build_motion_graph(
    skeleton: &Skeleton,
    groups: &[FrameGroup],
    poses: &[SwingTwistPose],
    cost_threshold: f64,
    blend_window: usize,
) -> Result<MotionGraph> {
    validate_groups(groups, poses.len())?;
    if blend_window == 0 {
        return Err(Error::InvalidParameter("blend window must be at least 1".into()));
    }
    let nodes: Vec<MotionNode> = groups
        .iter()
        .map(|g| MotionNode {
            keyframe: g.keyframe,
            first: g.first,
            last: g.last,
            poses: poses[g.first..=g.last].to_vec(),
        })
        .collect();
    let mut edges = Vec::new();
    for (a, na) in nodes.iter().enumerate() {
        for (b, nb) in nodes.iter().enumerate() {
            if a == b {
                continue;
            }
            let d = pose_distance(skeleton, na.poses.last().unwrap(), &nb.poses[0])?;
            if d < cost_threshold {
                edges.push(MotionEdge {
                    from: a,
                    to: b,
                    cost: d,
                    blend_window,
                });
            }
        }
    }
    Ok(MotionGraph { nodes, edges })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisParams {
    /// Weight of transition costs against pose distances.
    pub lambda: f64,
    /// Candidate frames kept per target step; `None` searches all frames.
    pub beam_width: Option<usize>,
    /// Largest pose distance (rad) for a cross-group edge.
    pub cost_threshold: f64,
    pub blend_window: usize,
    pub registration: RegistrationParams,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            lambda: 1.0,
            beam_width: Some(8),
            cost_threshold: 0.5,
            blend_window: 5,
            registration: RegistrationParams::default(),
        }
    }
}

impl SynthesisParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.beam_width == Some(0) {
            return Err(Error::InvalidParameter("beam_width must be at least 1".into()));
        }
        if !(self.cost_threshold >= 0.0) {
            return Err(Error::InvalidParameter("cost_threshold must be non-negative".into()));
        }
        if self.blend_window == 0 {
            return Err(Error::InvalidParameter("blend_window must be at least 1".into()));
        }
        self.registration.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendDirective {
    pub edge: usize,
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStep {
    pub node: usize,
    /// Tracked frame index.
    pub frame: usize,
    /// Target minus source: root rotation as target * source^-1, the rest
    /// component-wise.
    pub delta: SwingTwistPose,
    /// Set on the first step after crossing a graph edge.
    pub blend: Option<BlendDirective>,
}

impl SynthesisStep {
    /// Largest component of the pose adjustment (rad or m).
    pub fn delta_magnitude(&self) -> f64 {
        let mut m = geodesic_angle(&self.delta.root_rotation, &crate::geom::Quat::identity());
        m = m.max(self.delta.root_translation.amax());
        for j in &self.delta.joints {
            for s in j.scalars() {
                m = m.max(s.abs());
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub steps: Vec<SynthesisStep>,
    pub cost: f64,
}

impl SynthesisPlan {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_report(self, path)
    }
}

fn pose_delta(source: &SwingTwistPose, target: &SwingTwistPose) -> SwingTwistPose {
    SwingTwistPose {
        root_rotation: target.root_rotation * source.root_rotation.inverse(),
        root_translation: target.root_translation - source.root_translation,
        joints: source
            .joints
            .iter()
            .zip(&target.joints)
            .map(|(s, t)| {
                let (a, b) = (s.scalars(), t.scalars());
                JointPose::from_scalars([b[0] - a[0], b[1] - a[1], b[2] - a[2]])
            })
            .collect(),
        bounds: None,
    }
}

type State = (usize, usize);

/// Dynamic programming over graph frames: each target step picks a frame,
/// paying its pose distance to the target, and consecutive picks must be
/// a hold, a step forward inside a group, or an edge from a group's last
/// frame to another group's first (paying `lambda` times the edge cost).
pub fn plan_synthesis(
    graph: &MotionGraph,
    skeleton: &Skeleton,
    target: &[SwingTwistPose],
    params: &SynthesisParams,
) -> Result<SynthesisPlan> {
    params.validate()?;
    graph.validate()?;
    if target.is_empty() {
        return Err(Error::InvalidParameter("target pose sequence is empty".into()));
    }
    if graph.nodes.is_empty() {
        return Err(Error::InvalidParameter("motion graph has no nodes".into()));
    }
    let comps = graph.components();
    if comps.iter().any(|&c| c != comps[0]) {
        warn!("motion graph is disconnected; the plan stays inside one component");
    }
    let all: Vec<State> = graph
        .nodes
        .iter()
        .enumerate()
        .flat_map(|(n, node)| (0..node.len()).map(move |i| (n, i)))
        .collect();
    let pose = |s: State| &graph.nodes[s.0].poses[s.1];
    let trans_cost = |c: f64| if c == 0.0 { 0.0 } else { params.lambda * c };
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for (k, e) in graph.edges.iter().enumerate() {
        incoming[e.to].push(k);
    }
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for (k, e) in graph.edges.iter().enumerate() {
        outgoing[e.from].push(k);
    }

    let distances = |t: usize, states: &[State]| -> Result<Vec<f64>> {
        states.par_iter().map(|&s| pose_distance(skeleton, pose(s), &target[t])).collect()
    };
    let beam = |t: usize, extra: &[State]| -> Result<Vec<State>> {
        let Some(k) = params.beam_width else { return Ok(all.clone()) };
        let d = distances(t, &all)?;
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        let mut out: Vec<State> = order.iter().take(k).map(|&i| all[i]).collect();
        out.extend_from_slice(extra);
        out.sort_unstable();
        out.dedup();
        Ok(out)
    };

    // Per step: candidate states, accumulated cost, back pointer
    // (previous candidate index, edge taken).
    let mut layers: Vec<(Vec<State>, Vec<f64>, Vec<(usize, Option<usize>)>)> = Vec::with_capacity(target.len());
    let first = beam(0, &[])?;
    let d0 = distances(0, &first)?;
    layers.push((first, d0, Vec::new()));
    for t in 1..target.len() {
        let (prev, prev_cost, _) = &layers[t - 1];
        // Successors of the best previous states keep the beam feasible.
        let mut extra = Vec::new();
        if let Some(k) = params.beam_width {
            let mut order: Vec<usize> = (0..prev.len()).filter(|&i| prev_cost[i].is_finite()).collect();
            order.sort_by(|&a, &b| prev_cost[a].total_cmp(&prev_cost[b]).then(a.cmp(&b)));
            for &i in order.iter().take(k) {
                let (n, j) = prev[i];
                extra.push((n, j));
                if j + 1 < graph.nodes[n].len() {
                    extra.push((n, j + 1));
                } else {
                    extra.extend(outgoing[n].iter().map(|&e| (graph.edges[e].to, 0)));
                }
            }
        }
        let cand = beam(t, &extra)?;
        let d = distances(t, &cand)?;
        let lookup: HashMap<State, usize> = prev.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut cost = vec![f64::INFINITY; cand.len()];
        let mut back = vec![(usize::MAX, None); cand.len()];
        for (ci, &(n, j)) in cand.iter().enumerate() {
            let mut consider = |from: State, c: f64, edge: Option<usize>| {
                if let Some(&pi) = lookup.get(&from) {
                    let v = prev_cost[pi] + c;
                    if v < cost[ci] {
                        cost[ci] = v;
                        back[ci] = (pi, edge);
                    }
                }
            };
            consider((n, j), 0.0, None);
            if j > 0 {
                consider((n, j - 1), 0.0, None);
            } else {
                for &e in &incoming[n] {
                    let edge = &graph.edges[e];
                    consider((edge.from, graph.nodes[edge.from].len() - 1), trans_cost(edge.cost), Some(e));
                }
            }
            cost[ci] += d[ci];
        }
        if cost.iter().all(|c| !c.is_finite()) {
            return Err(Error::Solver(format!("no feasible synthesis path at step {t}")));
        }
        layers.push((cand, cost, back));
    }

    let (last_states, last_cost, _) = layers.last().unwrap();
    let mut best = 0;
    for i in 1..last_states.len() {
        if last_cost[i] < last_cost[best] {
            best = i;
        }
    }
    let total = last_cost[best];
    let mut picks = vec![(0usize, None); target.len()];
    let mut i = best;
    for t in (0..target.len()).rev() {
        let edge = if t > 0 { layers[t].2[i].1 } else { None };
        picks[t] = (i, edge);
        if t > 0 {
            i = layers[t].2[i].0;
        }
    }
    let steps = picks
        .iter()
        .enumerate()
        .map(|(t, &(i, edge))| {
            let s = layers[t].0[i];
            let node = &graph.nodes[s.0];
            SynthesisStep {
                node: s.0,
                frame: node.first + s.1,
                delta: pose_delta(pose(s), &target[t]),
                blend: edge.map(|e| BlendDirective {
                    edge: e,
                    window: graph.edges[e].blend_window,
                }),
            }
        })
        .collect();
    Ok(SynthesisPlan { steps, cost: total })
}

/// Retargets every planned frame to its exact target pose and blends
/// across graph edges: the frames leading into a cut are morphed towards
/// the first frame after it.
pub fn render_plan(
    plan: &SynthesisPlan,
    graph: &MotionGraph,
    model: &SkinnedModel,
    glues: &[GlueMap],
    target: &[SwingTwistPose],
    params: &SynthesisParams,
) -> Result<Vec<TriMesh>> {
    if plan.steps.len() != target.len() {
        return Err(Error::DimensionMismatch {
            what: "plan length",
            expected: target.len(),
            found: plan.steps.len(),
        });
    }
    let mut out: Vec<TriMesh> = plan
        .steps
        .par_iter()
        .zip(target)
        .map(|(s, tp)| {
            let glue = glues.get(s.frame).ok_or_else(|| {
                Error::InvalidParameter(format!("no glue map for frame {} ({} given)", s.frame, glues.len()))
            })?;
            let node = &graph.nodes[s.node];
            retarget(glue, model, &node.poses[s.frame - node.first], tp)
        })
        .collect::<Result<_>>()?;

    for t in 1..plan.steps.len() {
        let Some(b) = plan.steps[t].blend else { continue };
        let mut run = 0;
        while run < t && plan.steps[t - 1 - run].node == plan.steps[t - 1].node {
            run += 1;
        }
        let w = b.window.min(run);
        if out[t - 1].vertex_count() == out[t].vertex_count() && out[t - 1].faces() == out[t].faces() {
            // Same connectivity: nothing to register, the cut is already
            // seamless up to the pose change.
            continue;
        }
        let morph = match smooth_transition(&out[t - 1], &out[t], w + 1, &params.registration) {
            Ok(m) => m,
            Err(e) => {
                warn!("transition into step {t} not blended: {e}");
                continue;
            }
        };
        let base = morph[0].vertices().to_vec();
        for k in 0..w {
            let s = t - w + k;
            if out[s].faces() != out[t - 1].faces() {
                continue;
            }
            let v: Vec<_> = out[s]
                .vertices()
                .iter()
                .zip(morph[k + 1].vertices().iter().zip(&base))
                .map(|(p, (m, b))| p + (m - b))
                .collect();
            out[s] = out[s].with_vertices(v)?;
        }
    }
    Ok(out)
}

/// Plans a path through the graph for the target poses and renders it.
pub fn synthesize(
    graph: &MotionGraph,
    model: &SkinnedModel,
    glues: &[GlueMap],
    target: &[SwingTwistPose],
    params: &SynthesisParams,
) -> Result<(SynthesisPlan, Vec<TriMesh>)> {
    let plan = plan_synthesis(graph, &model.skeleton, target, params)?;
    let meshes = render_plan(&plan, graph, model, glues, target, params)?;
    Ok((plan, meshes))
}
