//! Pairwise non-rigid registration: bidirectional point-to-plane ICP over a
//! hierarchy of deformation graphs with an as-rigid-as-possible regularizer,
//! solved by damped Gauss-Newton.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{Matrix3, Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defgraph::{
    arap_energy, arap_residual, refine_to_level, restrict_to_level, DeformationGraph,
    GraphHierarchy,
};
use crate::error::{Error, Result};
use crate::geom::{exp_map, skew, Quat, Vec3};
use crate::linalg::{conjugate_gradient, CsrMatrix, SkylineLdl};
use crate::mesh::{SpatialIndex, TriMesh};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    pub levels: usize,
    pub iters_per_level: usize,
    /// Correspondence distance gate at the finest level. `None` means 5% of
    /// the target bounding-box diagonal. Coarser levels double it per level.
    pub max_corr_dist: Option<f64>,
    pub max_normal_angle: f64,
    /// Regularizer weight at the coarsest level, halved at each finer one.
    pub arap_weight: f64,
    pub point_to_plane_weight: f64,
    /// Finest node spacing. `None` means 2.5% of the source diagonal.
    pub node_spacing: Option<f64>,
    pub nodes_per_vertex: usize,
    pub level_ratio: f64,
    pub rigid_prealign: bool,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            levels: 3,
            iters_per_level: 8,
            max_corr_dist: None,
            max_normal_angle: 60.0,
            arap_weight: 100.0,
            point_to_plane_weight: 1.0,
            node_spacing: None,
            nodes_per_vertex: 4,
            level_ratio: 2.0,
            rigid_prealign: true,
        }
    }
}

impl RegistrationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        if self.levels == 0 || self.iters_per_level == 0 || self.nodes_per_vertex == 0 {
            return Err(Error::InvalidParameter(
                "levels, iters_per_level and nodes_per_vertex must be at least 1".into(),
            ));
        }
        if let Some(d) = self.max_corr_dist {
            positive("max_corr_dist", d)?;
        }
        if let Some(s) = self.node_spacing {
            positive("node_spacing", s)?;
        }
        positive("max_normal_angle", self.max_normal_angle)?;
        positive("arap_weight", self.arap_weight)?;
        positive("point_to_plane_weight", self.point_to_plane_weight)?;
        if !(self.level_ratio > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "level_ratio must exceed 1, got {}",
                self.level_ratio
            )));
        }
        Ok(())
    }

    fn finest_spacing(&self, source: &TriMesh) -> f64 {
        self.node_spacing
            .unwrap_or_else(|| 0.025 * source.bbox_diagonal())
    }

    fn finest_gate(&self, target: &TriMesh) -> f64 {
        self.max_corr_dist
            .unwrap_or_else(|| 0.05 * target.bbox_diagonal())
    }

    /// Gate and regularizer weight for `level` (0 = coarsest).
    fn level_gate(&self, target: &TriMesh, level: usize) -> f64 {
        self.finest_gate(target) * 2f64.powi((self.levels - 1 - level) as i32)
    }

    fn level_arap(&self, level: usize) -> f64 {
        self.arap_weight * 0.5f64.powi(level as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SourceToTarget,
    TargetToSource,
}

/// One point-to-plane constraint.
///
/// Forward: `vertex` is a source vertex and (`face`, `bary`, `point`) the
/// closest target surface point, `normal` the target face normal.
/// Reverse: `vertex` is a target vertex and (`face`, `bary`, `point`) the
/// closest point on the deformed source, `normal` the target vertex normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub direction: Direction,
    pub vertex: u32,
    pub face: u32,
    pub bary: [f64; 3],
    pub point: Vec3,
    pub normal: Vec3,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrespondenceGates {
    pub max_distance: f64,
    pub max_normal_angle_deg: f64,
    /// Use every `stride`-th vertex on each side, weighted by `stride`.
    pub stride: usize,
}

/// Precomputed target data shared by every iteration.
struct TargetData<'a> {
    mesh: &'a TriMesh,
    index: SpatialIndex,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
}

impl<'a> TargetData<'a> {
    fn new(mesh: &'a TriMesh) -> Self {
        TargetData {
            mesh,
            index: SpatialIndex::new(mesh),
            face_normals: mesh.face_normals(),
            vertex_normals: mesh.vertex_normals(),
        }
    }
}

/// Forward and reverse correspondences between a (deformed) source and a
/// target, pruned by distance and normal-angle gates.
pub fn find_correspondences(
    source: &TriMesh,
    target: &TriMesh,
    target_index: &SpatialIndex,
    gates: &CorrespondenceGates,
) -> Vec<Correspondence> {
    let source_index = SpatialIndex::new(source);
    correspondences_with(
        source,
        &source_index,
        &source.vertex_normals(),
        &source.face_normals(),
        target,
        target_index,
        &target.face_normals(),
        &target.vertex_normals(),
        gates,
    )
}

#[allow(clippy::too_many_arguments)]
fn correspondences_with(
    source: &TriMesh,
    source_index: &SpatialIndex,
    source_vnormals: &[Vec3],
    source_fnormals: &[Vec3],
    target: &TriMesh,
    target_index: &SpatialIndex,
    target_fnormals: &[Vec3],
    target_vnormals: &[Vec3],
    gates: &CorrespondenceGates,
) -> Vec<Correspondence> {
    let stride = gates.stride.max(1);
    let cos_gate = gates.max_normal_angle_deg.to_radians().cos();
    let weight = stride as f64;
    let n_src = source.vertex_count().div_ceil(stride);
    let forward: Vec<Option<Correspondence>> = (0..n_src)
        .into_par_iter()
        .map(|s| {
            let i = s * stride;
            let p = source.vertices()[i];
            let hit = target_index.closest_point_within(&p, gates.max_distance)?;
            let n = target_fnormals[hit.face as usize];
            if source_vnormals[i].dot(&n) < cos_gate {
                return None;
            }
            Some(Correspondence {
                direction: Direction::SourceToTarget,
                vertex: i as u32,
                face: hit.face,
                bary: hit.bary,
                point: hit.point,
                normal: n,
                distance: hit.distance,
                weight,
            })
        })
        .collect();
    let n_tgt = target.vertex_count().div_ceil(stride);
    let reverse: Vec<Option<Correspondence>> = (0..n_tgt)
        .into_par_iter()
        .map(|s| {
            let j = s * stride;
            let y = target.vertices()[j];
            let hit = source_index.closest_point_within(&y, gates.max_distance)?;
            let n = target_vnormals[j];
            if source_fnormals[hit.face as usize].dot(&n) < cos_gate {
                return None;
            }
            Some(Correspondence {
                direction: Direction::TargetToSource,
                vertex: j as u32,
                face: hit.face,
                bary: hit.bary,
                point: hit.point,
                normal: n,
                distance: hit.distance,
                weight,
            })
        })
        .collect();
    forward.into_iter().chain(reverse).flatten().collect()
}

/// Symmetric RMS point-to-surface distance between two meshes.
pub fn registration_error(a: &TriMesh, b: &TriMesh) -> Result<f64> {
    if a.vertex_count() == 0 || b.vertex_count() == 0 || a.face_count() == 0 || b.face_count() == 0
    {
        return Err(Error::EmptyMesh);
    }
    let (ia, ib) = (SpatialIndex::new(a), SpatialIndex::new(b));
    let one_way = |from: &TriMesh, to: &SpatialIndex| -> f64 {
        let d: Vec<f64> = from
            .vertices()
            .par_iter()
            .map(|p| to.closest_point(p).map(|s| s.distance * s.distance).unwrap_or(0.0))
            .collect();
        d.iter().sum()
    };
    let sa = one_way(a, &ib);
    let sb = one_way(b, &ia);
    Ok(((sa + sb) / (a.vertex_count() + b.vertex_count()) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub node_spacing: f64,
    pub nodes: usize,
    pub gate: f64,
    pub arap_weight: f64,
    /// Energy before and after each accepted step.
    pub steps: Vec<(f64, f64)>,
    pub correspondences: Vec<usize>,
    pub rejected_steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub deformed_source: TriMesh,
    pub graph: DeformationGraph,
    pub error: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub levels: Vec<LevelReport>,
    /// Rigid pre-alignment that seeded the first level, if any.
    pub rigid: Option<(Quat, Vec3)>,
}

pub fn register(
    source: &TriMesh,
    target: &TriMesh,
    params: &RegistrationParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    check_nonempty(source)?;
    let hierarchy = GraphHierarchy::build(
        source,
        params.finest_spacing(source),
        params.levels,
        params.level_ratio,
        params.nodes_per_vertex,
    )?;
    register_with_hierarchy(source, &hierarchy, target, params, None)
}

fn check_nonempty(m: &TriMesh) -> Result<()> {
    if m.vertex_count() == 0 || m.face_count() == 0 {
        Err(Error::EmptyMesh)
    } else {
        Ok(())
    }
}

/// Registration over a prebuilt hierarchy. `init` is a solved graph at the
/// finest level used to seed the coarsest level; without it the coarsest
/// level starts from identity or the rigid pre-alignment.
pub fn register_with_hierarchy(
    source: &TriMesh,
    hierarchy: &GraphHierarchy,
    target: &TriMesh,
    params: &RegistrationParams,
    init: Option<&DeformationGraph>,
) -> Result<RegistrationResult> {
    params.validate()?;
    check_nonempty(source)?;
    check_nonempty(target)?;
    if hierarchy.levels.len() != params.levels {
        return Err(Error::DimensionMismatch {
            what: "hierarchy levels",
            expected: params.levels,
            found: hierarchy.levels.len(),
        });
    }
    if hierarchy.levels[0].vertex_count() != source.vertex_count() {
        return Err(Error::DimensionMismatch {
            what: "graph vertex count",
            expected: source.vertex_count(),
            found: hierarchy.levels[0].vertex_count(),
        });
    }
    let tdata = TargetData::new(target);
    let mut rigid = None;
    let mut graph = match init {
        Some(g) => restrict_to_level(hierarchy, g, 0)?,
        None => {
            let mut g = hierarchy.levels[0].clone();
            if params.rigid_prealign {
                let (r, t) = rigid_align(source, &tdata, params);
                for n in &mut g.nodes {
                    n.rotation = r;
                    n.translation = r * n.position + t - n.position;
                }
                rigid = Some((r, t));
            }
            g
        }
    };

    let mut reports = Vec::with_capacity(params.levels);
    let mut iterations = 0;
    let mut converged = true;
    for level in 0..params.levels {
        if level > 0 {
            graph = refine_to_level(hierarchy, &graph, level)?;
        }
        let stride = 4usize.pow((params.levels - 1 - level) as u32);
        let mut solver = LevelSolver {
            source,
            target: &tdata,
            gates: CorrespondenceGates {
                max_distance: params.level_gate(target, level),
                max_normal_angle_deg: params.max_normal_angle,
                stride,
            },
            data_weight: params.point_to_plane_weight,
            arap_weight: params.level_arap(level),
        };
        let (report, iters, ok) = solver.run(&mut graph, params.iters_per_level, level)?;
        iterations += iters;
        converged &= ok;
        reports.push(report);
    }
    let deformed = source.with_vertices(graph.warp_points(source.vertices())?)?;
    let error = registration_error(&deformed, target)?;
    Ok(RegistrationResult {
        deformed_source: deformed,
        graph,
        error,
        iterations_used: iterations,
        converged,
        levels: reports,
        rigid,
    })
}

/// Rigid point-to-plane ICP from a centroid alignment. Returns (R, t) with
/// x -> R x + t.
fn rigid_align(source: &TriMesh, target: &TargetData, params: &RegistrationParams) -> (Quat, Vec3) {
    let centroid = |m: &TriMesh| {
        m.vertices().iter().fold(Vec3::zeros(), |a, p| a + p) / m.vertex_count() as f64
    };
    let mut r = Quat::identity();
    let mut t = centroid(target.mesh) - centroid(source);
    let stride = (source.vertex_count().max(target.mesh.vertex_count()) / 4000).max(1);
    let diag = target.mesh.bbox_diagonal().max(source.bbox_diagonal());
    let mut gate = 0.5 * diag;
    let floor = params.level_gate(target.mesh, 0).min(gate);
    let mut mi = SpatialIndex::new(source);
    for it in 0..30 {
        let moved = source
            .with_vertices(source.vertices().iter().map(|p| r * p + t).collect())
            .expect("rigid motion keeps the mesh valid");
        mi.update_vertices(moved.vertices());
        let corr = correspondences_with(
            &moved,
            &mi,
            &moved.vertex_normals(),
            &moved.face_normals(),
            target.mesh,
            &target.index,
            &target.face_normals,
            &target.vertex_normals,
            &CorrespondenceGates {
                max_distance: gate,
                max_normal_angle_deg: params.max_normal_angle,
                stride,
            },
        );
        if corr.len() < 6 {
            break;
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in &corr {
            let (x, resid) = match c.direction {
                Direction::SourceToTarget => {
                    let x = moved.vertices()[c.vertex as usize];
                    (x, c.normal.dot(&(x - c.point)))
                }
                Direction::TargetToSource => {
                    let y = target.mesh.vertices()[c.vertex as usize];
                    (c.point, c.normal.dot(&(c.point - y)))
                }
            };
            let j = {
                let a = x.cross(&c.normal);
                Vector6::new(a.x, a.y, a.z, c.normal.x, c.normal.y, c.normal.z)
            };
            h += j * j.transpose() * c.weight;
            g += j * (resid * c.weight);
        }
        // Tiny Tikhonov term keeps degenerate (symmetric) shapes solvable.
        let tr = h.trace().max(1e-300);
        for d in 0..6 {
            h[(d, d)] += 1e-12 * tr;
        }
        let Some(delta) = h.cholesky().map(|c| -c.solve(&g)) else {
            break;
        };
        let dr = exp_map(&Vec3::new(delta[0], delta[1], delta[2]));
        let dt = Vec3::new(delta[3], delta[4], delta[5]);
        r = dr * r;
        t = dr * t + dt;
        let step = delta.fixed_rows::<3>(0).norm() * diag + dt.norm();
        debug!("rigid icp {it}: {} correspondences, step {step:.3e}, gate {gate:.3e}", corr.len());
        gate = (gate * 0.7).max(floor);
        if step < 1e-9 * diag {
            break;
        }
    }
    (r, t)
}

/// Jacobian of one scalar residual: per node, d r / d omega and d r / d t.
type NodeJac = (u32, Vec3, Vec3);

struct LevelSolver<'a> {
    source: &'a TriMesh,
    target: &'a TargetData<'a>,
    gates: CorrespondenceGates,
    data_weight: f64,
    arap_weight: f64,
}

impl LevelSolver<'_> {
    fn run(
        &mut self,
        graph: &mut DeformationGraph,
        iters: usize,
        level: usize,
    ) -> Result<(LevelReport, usize, bool)> {
        let start = Instant::now();
        let mut report = LevelReport {
            level,
            node_spacing: graph.node_spacing,
            nodes: graph.node_count(),
            gate: self.gates.max_distance,
            arap_weight: self.arap_weight,
            steps: Vec::new(),
            correspondences: Vec::new(),
            rejected_steps: 0,
            seconds: 0.0,
        };
        let diag = self.source.bbox_diagonal().max(1e-300);
        let mut mu = 1e-4;
        let mut converged = true;
        let mut used = 0;
        let mut source_index = SpatialIndex::new(self.source);
        for _ in 0..iters {
            used += 1;
            let deformed = self.source.with_vertices(graph.warp_points(self.source.vertices())?)?;
            source_index.update_vertices(deformed.vertices());
            let corr = correspondences_with(
                &deformed,
                &source_index,
                &deformed.vertex_normals(),
                &deformed.face_normals(),
                self.target.mesh,
                &self.target.index,
                &self.target.face_normals,
                &self.target.vertex_normals,
                &self.gates,
            );
            report.correspondences.push(corr.len());
            let problem = Problem {
                source: self.source,
                target: self.target.mesh,
                corr: &corr,
                data_weight: self.data_weight,
                arap_weight: self.arap_weight,
            };
            let lin = problem.linearize(graph);
            let gnorm = lin.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            // Round-off floor: RMS residual below 1e-12 of the diagonal.
            let floor = (1e-12 * diag).powi(2) * corr.len() as f64;
            if lin.energy <= floor.max(1e-30) || gnorm <= 1e-14 * lin.energy.max(1e-300).sqrt() {
                break;
            }
            let mut accepted = None;
            for _ in 0..16 {
                let delta = match lin.solve(mu) {
                    Ok(d) => d,
                    Err(e) => {
                        debug!("damped solve failed at mu={mu:e}: {e}");
                        mu *= 10.0;
                        continue;
                    }
                };
                let cand = apply_step(graph, &delta);
                let e1 = problem.energy(&cand);
                if e1 < lin.energy {
                    mu = (mu * 0.5).max(1e-12);
                    accepted = Some((cand, e1, delta));
                    break;
                }
                report.rejected_steps += 1;
                mu *= 10.0;
            }
            let Some((cand, e1, delta)) = accepted else {
                warn!("level {level}: no decreasing step after maximum damping");
                converged = false;
                break;
            };
            assert!(e1 <= lin.energy, "accepted step increased the energy");
            report.steps.push((lin.energy, e1));
            *graph = cand;
            let step = delta
                .chunks_exact(6)
                .map(|d| Vec3::new(d[0], d[1], d[2]).norm() * graph.node_spacing + Vec3::new(d[3], d[4], d[5]).norm())
                .fold(0.0f64, f64::max);
            if step < 1e-10 * diag {
                break;
            }
        }
        report.seconds = start.elapsed().as_secs_f64();
        debug!(
            "level {level}: {} nodes, {} steps, {:.3}s",
            report.nodes,
            report.steps.len(),
            report.seconds
        );
        Ok((report, used, converged))
    }
}

fn apply_step(graph: &DeformationGraph, delta: &[f64]) -> DeformationGraph {
    let mut out = graph.clone();
    for (n, d) in out.nodes.iter_mut().zip(delta.chunks_exact(6)) {
        let w = Vec3::new(d[0], d[1], d[2]);
        n.rotation = Quat::new_normalize((exp_map(&w) * n.rotation).into_inner());
        n.translation += Vec3::new(d[3], d[4], d[5]);
    }
    out
}

/// Data plus regularizer energy with correspondences held fixed.
struct Problem<'a> {
    source: &'a TriMesh,
    target: &'a TriMesh,
    corr: &'a [Correspondence],
    data_weight: f64,
    arap_weight: f64,
}

struct Linearization {
    n: usize,
    energy: f64,
    grad: Vec<f64>,
    /// Upper block rows: `cols[row_ptr[j]..row_ptr[j+1]]` hold k >= j.
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    blocks: Vec<Matrix6<f64>>,
}

impl Problem<'_> {
    fn residual(&self, graph: &DeformationGraph, c: &Correspondence) -> f64 {
        match c.direction {
            Direction::SourceToTarget => {
                let i = c.vertex as usize;
                let x = graph.warp_vertex(i, &self.source.vertices()[i]);
                c.normal.dot(&(x - c.point))
            }
            Direction::TargetToSource => {
                let f = self.source.faces()[c.face as usize];
                let x = (0..3).fold(Vec3::zeros(), |acc, k| {
                    let v = f[k] as usize;
                    acc + graph.warp_vertex(v, &self.source.vertices()[v]) * c.bary[k]
                });
                c.normal.dot(&(x - self.target.vertices()[c.vertex as usize]))
            }
        }
    }

    fn residual_jacobian(&self, graph: &DeformationGraph, c: &Correspondence) -> Vec<NodeJac> {
        let n = &c.normal;
        match c.direction {
            Direction::SourceToTarget => {
                let i = c.vertex as usize;
                let p = self.source.vertices()[i];
                graph
                    .bindings(i)
                    .map(|(j, w)| {
                        let node = &graph.nodes[j];
                        let a = node.rotation * (p - node.position);
                        (j as u32, a.cross(n) * w, n * w)
                    })
                    .collect()
            }
            Direction::TargetToSource => {
                // Merge the bary-weighted influences of the three corners.
                let mut acc: Vec<(u32, f64, Vec3)> = Vec::with_capacity(12);
                let f = self.source.faces()[c.face as usize];
                for k in 0..3 {
                    let v = f[k] as usize;
                    if c.bary[k] == 0.0 {
                        continue;
                    }
                    let p = self.source.vertices()[v];
                    for (j, w) in graph.bindings(v) {
                        let cw = c.bary[k] * w;
                        let d = (p - graph.nodes[j].position) * cw;
                        match acc.iter_mut().find(|e| e.0 == j as u32) {
                            Some(e) => {
                                e.1 += cw;
                                e.2 += d;
                            }
                            None => acc.push((j as u32, cw, d)),
                        }
                    }
                }
                acc.into_iter()
                    .map(|(j, cw, d)| {
                        let a = graph.nodes[j as usize].rotation * d;
                        (j, a.cross(n), n * cw)
                    })
                    .collect()
            }
        }
    }

    fn energy(&self, graph: &DeformationGraph) -> f64 {
        let data: f64 = self
            .corr
            .iter()
            .map(|c| c.weight * self.residual(graph, c).powi(2))
            .sum();
        self.data_weight * data + self.arap_weight * arap_energy(graph)
    }

    fn linearize(&self, graph: &DeformationGraph) -> Linearization {
        let n = graph.node_count();
        let jacs: Vec<(f64, f64, Vec<NodeJac>)> = self
            .corr
            .par_iter()
            .map(|c| {
                (
                    c.weight * self.data_weight,
                    self.residual(graph, c),
                    self.residual_jacobian(graph, c),
                )
            })
            .collect();

        // Block sparsity: graph edges, diagonal, and every pair sharing a residual.
        let mut keys: Vec<u64> = Vec::new();
        let key = |a: u32, b: u32| ((a.min(b) as u64) << 32) | a.max(b) as u64;
        keys.extend((0..n as u32).map(|j| key(j, j)));
        keys.extend(graph.edges.iter().map(|&[a, b]| key(a, b)));
        for (_, _, jac) in &jacs {
            for (x, a) in jac.iter().enumerate() {
                for b in &jac[x + 1..] {
                    keys.push(key(a.0, b.0));
                }
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(keys.len());
        for &k in &keys {
            row_ptr[(k >> 32) as usize + 1] += 1;
            cols.push(k as u32);
        }
        for j in 0..n {
            row_ptr[j + 1] += row_ptr[j];
        }
        let mut lin = Linearization {
            n,
            energy: 0.0,
            grad: vec![0.0; 6 * n],
            blocks: vec![Matrix6::zeros(); cols.len()],
            row_ptr,
            cols,
        };

        let mut data = 0.0;
        for (w, r, jac) in &jacs {
            data += w * r * r / self.data_weight;
            let vecs: Vec<(u32, Vector6<f64>)> = jac
                .iter()
                .map(|(j, dw, dt)| (*j, Vector6::new(dw.x, dw.y, dw.z, dt.x, dt.y, dt.z)))
                .collect();
            for (a, va) in &vecs {
                let g = &mut lin.grad[6 * *a as usize..6 * *a as usize + 6];
                for d in 0..6 {
                    g[d] += w * r * va[d];
                }
                for (b, vb) in &vecs {
                    if a <= b {
                        *lin.block_mut(*a, *b) += va * vb.transpose() * *w;
                    }
                }
            }
        }

        // Regularizer: residual e_jk = R_j (g_k - g_j) + g_j + t_j - g_k - t_k.
        let wa = self.arap_weight;
        let mut reg = 0.0;
        for &[a, b] in &graph.edges {
            for (j, k) in [(a, b), (b, a)] {
                let e = arap_residual(graph, j as usize, k as usize);
                reg += e.norm_squared();
                let (nj, nk) = (&graph.nodes[j as usize], &graph.nodes[k as usize]);
                let jr = -skew(&(nj.rotation * (nk.position - nj.position)));
                // Jj = [jr | I], Jk = [0 | -I].
                let mut jj = nalgebra::Matrix3x6::<f64>::zeros();
                jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr);
                jj.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
                let mut jk = nalgebra::Matrix3x6::<f64>::zeros();
                jk.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
                let gj = jj.transpose() * e * wa;
                let gk = jk.transpose() * e * wa;
                for d in 0..6 {
                    lin.grad[6 * j as usize + d] += gj[d];
                    lin.grad[6 * k as usize + d] += gk[d];
                }
                *lin.block_mut(j, j) += jj.transpose() * jj * wa;
                *lin.block_mut(k, k) += jk.transpose() * jk * wa;
                if j < k {
                    *lin.block_mut(j, k) += jj.transpose() * jk * wa;
                } else {
                    *lin.block_mut(k, j) += jk.transpose() * jj * wa;
                }
            }
        }
        lin.energy = self.data_weight * data + wa * reg;
        lin
    }
}

impl Linearization {
    fn block_mut(&mut self, a: u32, b: u32) -> &mut Matrix6<f64> {
        let r = self.row_ptr[a as usize]..self.row_ptr[a as usize + 1];
        let k = self.cols[r.clone()]
            .binary_search(&b)
            .expect("block in precomputed pattern");
        &mut self.blocks[r.start + k]
    }

    /// Solves (H + mu diag(H)) delta = -g.
    fn solve(&self, mu: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let mut diag = vec![0.0; 6 * n];
        for j in 0..n {
            let b = &self.blocks[self.row_ptr[j]];
            for d in 0..6 {
                diag[6 * j + d] = b[(d, d)];
            }
        }
        let floor = 1e-12 * diag.iter().cloned().fold(0.0, f64::max).max(1e-300);

        // Full symmetric block rows for the scalar CSR.
        let mut full: Vec<Vec<(u32, usize, bool)>> = vec![Vec::new(); n];
        for j in 0..n {
            for p in self.row_ptr[j]..self.row_ptr[j + 1] {
                let k = self.cols[p] as usize;
                full[j].push((k as u32, p, false));
                if k != j {
                    full[k].push((j as u32, p, true));
                }
            }
        }
        let nnz: usize = full.iter().map(|r| r.len() * 36).sum();
        let mut row_ptr = Vec::with_capacity(6 * n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (j, row) in full.iter_mut().enumerate() {
            row.sort_unstable_by_key(|e| e.0);
            for a in 0..6 {
                for &(k, p, transposed) in row.iter() {
                    let blk = &self.blocks[p];
                    for b in 0..6 {
                        let mut v = if transposed { blk[(b, a)] } else { blk[(a, b)] };
                        if k as usize == j && a == b {
                            v += mu * diag[6 * j + a].max(floor) + floor;
                        }
                        col_idx.push(6 * k as usize + b);
                        values.push(v);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        let h = CsrMatrix::from_raw(6 * n, 6 * n, row_ptr, col_idx, values);
        let rhs: Vec<f64> = self.grad.iter().map(|g| -g).collect();
        let (envelope, perm) = SkylineLdl::envelope(&h);
        if envelope <= 40_000_000 {
            Ok(SkylineLdl::factor_with_ordering(&h, perm)?.solve(&rhs))
        } else {
            let mut x = vec![0.0; 6 * n];
            let out = conjugate_gradient(&h, &rhs, &mut x, 1e-10, 20 * 6 * n);
            if !out.converged {
                debug!("pcg stopped at relative residual {:e}", out.relative_residual);
            }
            Ok(x)
        }
    }
}

/// Stacked data residuals and their dense Jacobian with respect to the node
/// parameters (per node: rotation increment, then translation), for fixed
/// correspondences. Columns follow node order. Rotation increments act on
/// the left: R <- exp(w) R.
pub fn data_residuals_and_jacobian(
    source: &TriMesh,
    target: &TriMesh,
    graph: &DeformationGraph,
    corr: &[Correspondence],
) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
    let p = Problem {
        source,
        target,
        corr,
        data_weight: 1.0,
        arap_weight: 0.0,
    };
    let mut jm = nalgebra::DMatrix::zeros(corr.len(), 6 * graph.node_count());
    let r = corr
        .iter()
        .enumerate()
        .map(|(row, c)| {
            for (j, dw, dt) in p.residual_jacobian(graph, c) {
                for d in 0..3 {
                    jm[(row, 6 * j as usize + d)] += dw[d];
                    jm[(row, 6 * j as usize + 3 + d)] += dt[d];
                }
            }
            p.residual(graph, c)
        })
        .collect();
    (r, jm)
}

/// Applies a parameter increment laid out as in [`data_residuals_and_jacobian`].
pub fn perturb_graph(graph: &DeformationGraph, delta: &[f64]) -> DeformationGraph {
    apply_step(graph, delta)
}
