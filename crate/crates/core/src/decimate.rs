//! Quadric edge-collapse simplification with per-vertex importance.
//!
//! Collapse cost is the quadric error at the contraction point scaled by
//! `mean(importance)^exponent`, so important regions are collapsed last and
//! keep more triangles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{triangle_normal_area2, Vec3};
use crate::mesh::{TriMesh, MIN_FACE_AREA};

/// Symmetric 4x4 error quadric, stored as its upper triangle.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quadric([f64; 10]);

impl Quadric {
    pub fn zero() -> Self {
        Quadric([0.0; 10])
    }

    /// `weight * (n.p + d)^2` for the plane `n.p + d = 0`.
    pub fn from_plane(n: &Vec3, d: f64, weight: f64) -> Self {
        let (a, b, c) = (n.x, n.y, n.z);
        Quadric(
            [
                a * a,
                a * b,
                a * c,
                a * d,
                b * b,
                b * c,
                b * d,
                c * c,
                c * d,
                d * d,
            ]
            .map(|x| x * weight),
        )
    }

    pub fn add(&self, o: &Quadric) -> Quadric {
        let mut r = self.0;
        for (x, y) in r.iter_mut().zip(&o.0) {
            *x += y;
        }
        Quadric(r)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let q = &self.0;
        Matrix4::new(
            q[0], q[1], q[2], q[3], q[1], q[4], q[5], q[6], q[2], q[5], q[7], q[8], q[3], q[6],
            q[8], q[9],
        )
    }

    pub fn evaluate(&self, p: &Vec3) -> f64 {
        let q = &self.0;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimizer when the 3x3 block has condition number below 1e8.
    pub fn optimal_point(&self) -> Option<Vec3> {
        let q = &self.0;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let eig = SymmetricEigen::new(a);
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
        if !(lo > 0.0) || hi / lo >= 1e8 {
            return None;
        }
        let b = Vec3::new(q[3], q[6], q[8]);
        let inv = eig.eigenvectors
            * Matrix3::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e))
            * eig.eigenvectors.transpose();
        Some(-(inv * b))
    }
}

/// Area-weighted sum of incident face plane quadrics per vertex, and the
/// ids of degenerate faces that were skipped.
pub fn compute_vertex_quadrics(mesh: &TriMesh) -> (Vec<Quadric>, Vec<usize>) {
    let mut q = vec![Quadric::zero(); mesh.vertex_count()];
    let mut skipped = Vec::new();
    for (fi, f) in mesh.faces().iter().enumerate() {
        let [a, b, c] = mesh.triangle(fi);
        let (n, area2) = triangle_normal_area2(&a, &b, &c);
        if area2 * 0.5 < MIN_FACE_AREA {
            skipped.push(fi);
            continue;
        }
        let fq = Quadric::from_plane(&n, -n.dot(&a), area2 * 0.5);
        for &i in f {
            q[i as usize] = q[i as usize].add(&fq);
        }
    }
    (q, skipped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecimationParams {
    pub target_faces: usize,
    pub importance_exponent: f64,
    pub preserve_boundary: bool,
}

impl Default for DecimationParams {
    fn default() -> Self {
        DecimationParams {
            target_faces: 10_000,
            importance_exponent: 2.0,
            preserve_boundary: true,
        }
    }
}

impl DecimationParams {
    pub fn validate(&self) -> Result<()> {
        if self.target_faces < 4 {
            return Err(Error::InvalidParameter(format!(
                "target_faces must be at least 4, got {}",
                self.target_faces
            )));
        }
        if !(self.importance_exponent >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "importance_exponent must be >= 0, got {}",
                self.importance_exponent
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Decimation {
    pub mesh: TriMesh,
    /// Collapsed edges in order, as (kept vertex, removed vertex) in input ids.
    pub collapses: Vec<(u32, u32)>,
    /// Accumulated collapse cost after each collapse.
    pub error_trace: Vec<f64>,
    pub reached_target: bool,
    pub skipped_faces: Vec<usize>,
}

/// Boundary planes are weighted this much relative to the squared edge
/// length so that boundary vertices slide along, not off, the boundary.
const BOUNDARY_WEIGHT: f64 = 1e3;

#[derive(Clone, Copy, Debug)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
    va: u32,
    vb: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // Reversed so the max-heap pops the lexicographically smallest
    // (cost, min id, max id).
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then(o.a.cmp(&self.a))
            .then(o.b.cmp(&self.b))
            .then(o.va.cmp(&self.va))
            .then(o.vb.cmp(&self.vb))
    }
}

struct State {
    pos: Vec<Vec3>,
    quad: Vec<Quadric>,
    imp: Vec<f64>,
    alive: Vec<bool>,
    version: Vec<u32>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vf: Vec<Vec<u32>>,
    exponent: f64,
}

impl State {
    fn neighbors(&self, v: u32) -> Vec<u32> {
        let mut n: Vec<u32> = self.vf[v as usize]
            .iter()
            .flat_map(|&f| self.faces[f as usize])
            .filter(|&x| x != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn edge_faces(&self, a: u32, b: u32) -> Vec<u32> {
        self.vf[a as usize]
            .iter()
            .copied()
            .filter(|&f| self.faces[f as usize].contains(&b))
            .collect()
    }

    fn is_boundary_vertex(&self, v: u32) -> bool {
        self.neighbors(v)
            .into_iter()
            .any(|n| self.edge_faces(v, n).len() == 1)
    }

    /// Contraction point and cost for edge (a, b).
    fn evaluate(&self, a: u32, b: u32) -> (Vec3, f64) {
        let q = self.quad[a as usize].add(&self.quad[b as usize]);
        let (pa, pb) = (self.pos[a as usize], self.pos[b as usize]);
        let p = q.optimal_point().unwrap_or_else(|| {
            let mid = (pa + pb) * 0.5;
            let mut best = (mid, q.evaluate(&mid));
            for c in [pa, pb] {
                let e = q.evaluate(&c);
                if e < best.1 {
                    best = (c, e);
                }
            }
            best.0
        });
        let err = q.evaluate(&p).max(0.0);
        let mean = 0.5 * (self.imp[a as usize] + self.imp[b as usize]);
        (p, err * mean.powf(self.exponent))
    }

    fn candidate(&self, a: u32, b: u32) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        Candidate {
            cost: self.evaluate(a, b).1,
            a,
            b,
            va: self.version[a as usize],
            vb: self.version[b as usize],
        }
    }

    /// Topological and geometric checks for collapsing b into a at p.
    fn collapse_allowed(&self, a: u32, b: u32, p: &Vec3) -> bool {
        let shared = self.edge_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        // Link condition: common neighbours are exactly the opposite vertices.
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<u32> = na.iter().copied().filter(|x| nb.binary_search(x).is_ok()).collect();
        let mut opposite: Vec<u32> = shared
            .iter()
            .map(|&f| {
                self.faces[f as usize]
                    .into_iter()
                    .find(|&x| x != a && x != b)
                    .unwrap()
            })
            .collect();
        opposite.sort_unstable();
        if common != opposite {
            return false;
        }
        // Joining two boundary vertices across an interior edge pinches.
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        let mut seen: Vec<[u32; 3]> = Vec::new();
        for &v in &[a, b] {
            for &f in &self.vf[v as usize] {
                let t = self.faces[f as usize];
                if t.contains(&a) && t.contains(&b) {
                    continue;
                }
                let old = t.map(|i| self.pos[i as usize]);
                let new = t.map(|i| if i == a || i == b { *p } else { self.pos[i as usize] });
                let n0 = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n1 = (new[1] - new[0]).cross(&(new[2] - new[0]));
                if n0.dot(&n1) <= 0.0 || 0.5 * n1.norm() < MIN_FACE_AREA {
                    return false;
                }
                let mut key = t.map(|i| if i == b { a } else { i });
                key.sort_unstable();
                if seen.contains(&key) {
                    return false;
                }
                seen.push(key);
            }
        }
        true
    }

    fn collapse(&mut self, a: u32, b: u32, p: Vec3) {
        let (au, bu) = (a as usize, b as usize);
        for f in std::mem::take(&mut self.vf[bu]) {
            let t = self.faces[f as usize];
            if t.contains(&a) {
                self.face_alive[f as usize] = false;
                for &i in &t {
                    if i != b {
                        self.vf[i as usize].retain(|&g| g != f);
                    }
                }
            } else {
                self.faces[f as usize] = t.map(|i| if i == b { a } else { i });
                self.vf[au].push(f);
            }
        }
        self.vf[au].sort_unstable();
        self.pos[au] = p;
        self.quad[au] = self.quad[au].add(&self.quad[bu]);
        self.imp[au] = self.imp[au].max(self.imp[bu]);
        self.alive[bu] = false;
    }
}

/// Simplifies `mesh` towards `params.target_faces` faces.
pub fn decimate(mesh: &TriMesh, params: &DecimationParams) -> Result<Decimation> {
    params.validate()?;
    let (mut quad, skipped) = compute_vertex_quadrics(mesh);
    if mesh.face_count() <= params.target_faces {
        return Ok(Decimation {
            mesh: mesh.clone(),
            collapses: Vec::new(),
            error_trace: Vec::new(),
            reached_target: true,
            skipped_faces: skipped,
        });
    }
    let n = mesh.vertex_count();
    let table = mesh.edge_table();
    if params.preserve_boundary {
        for (e, &[a, b]) in table.edges.iter().enumerate() {
            let inc = table.faces_of(e);
            if inc.len() != 1 {
                continue;
            }
            let fnorm = mesh.face_normal(inc[0] as usize);
            let (pa, pb) = (mesh.vertices()[a as usize], mesh.vertices()[b as usize]);
            let edge = pb - pa;
            let m = edge.cross(&fnorm);
            let len = m.norm();
            if len == 0.0 {
                continue;
            }
            let m = m / len;
            let bq = Quadric::from_plane(&m, -m.dot(&pa), BOUNDARY_WEIGHT * edge.norm_squared());
            quad[a as usize] = quad[a as usize].add(&bq);
            quad[b as usize] = quad[b as usize].add(&bq);
        }
    }

    let mut vf = vec![Vec::new(); n];
    let mut face_alive = vec![true; mesh.face_count()];
    for &f in &skipped {
        face_alive[f] = false;
    }
    for (fi, f) in mesh.faces().iter().enumerate() {
        if face_alive[fi] {
            for &i in f {
                vf[i as usize].push(fi as u32);
            }
        }
    }
    let mut st = State {
        pos: mesh.vertices().to_vec(),
        quad,
        imp: (0..n).map(|i| mesh.importance_of(i)).collect(),
        alive: vec![true; n],
        version: vec![0; n],
        faces: mesh.faces().to_vec(),
        face_alive,
        vf,
        exponent: params.importance_exponent,
    };

    let mut heap: BinaryHeap<Candidate> = table
        .edges
        .iter()
        .enumerate()
        .filter(|(e, _)| table.faces_of(*e).len() <= 2)
        .map(|(_, &[a, b])| st.candidate(a, b))
        .collect();

    let mut live_faces = st.face_alive.iter().filter(|&&x| x).count();
    let mut collapses = Vec::new();
    let mut trace = Vec::new();
    let mut total = 0.0;
    while live_faces > params.target_faces {
        let Some(c) = heap.pop() else { break };
        let (a, b) = (c.a, c.b);
        if !st.alive[a as usize]
            || !st.alive[b as usize]
            || st.version[a as usize] != c.va
            || st.version[b as usize] != c.vb
        {
            continue;
        }
        let (p, cost) = st.evaluate(a, b);
        if !st.collapse_allowed(a, b, &p) {
            continue;
        }
        let removed = st.edge_faces(a, b).len();
        st.collapse(a, b, p);
        live_faces -= removed;
        total += cost;
        collapses.push((a, b));
        trace.push(total);

        // Validity of every edge touching the new one-ring may have changed.
        let ring = st.neighbors(a);
        st.version[a as usize] += 1;
        for &v in &ring {
            st.version[v as usize] += 1;
        }
        let mut edges: Vec<(u32, u32)> = Vec::new();
        for &v in std::iter::once(&a).chain(&ring) {
            for w in st.neighbors(v) {
                edges.push((v.min(w), v.max(w)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        for (x, y) in edges {
            heap.push(st.candidate(x, y));
        }
    }
    let reached_target = live_faces <= params.target_faces;
    if !reached_target {
        log::warn!(
            "decimation stopped at {live_faces} faces, above the target of {}",
            params.target_faces
        );
    }

    // Compact, keeping the relative order of surviving vertices and faces.
    let mut remap = vec![u32::MAX; n];
    let mut used = vec![false; n];
    for (f, t) in st.faces.iter().enumerate() {
        if st.face_alive[f] {
            for &i in t {
                used[i as usize] = true;
            }
        }
    }
    let mut verts = Vec::new();
    let mut imp = Vec::new();
    let mut uv = Vec::new();
    for i in 0..n {
        if used[i] {
            remap[i] = verts.len() as u32;
            verts.push(st.pos[i]);
            imp.push(st.imp[i]);
            if let Some(u) = mesh.uv() {
                uv.push(u[i]);
            }
        }
    }
    let faces: Vec<[u32; 3]> = st
        .faces
        .iter()
        .enumerate()
        .filter(|(f, _)| st.face_alive[*f])
        .map(|(_, t)| t.map(|i| remap[i as usize]))
        .collect();
    let mut out = TriMesh::new(verts, faces)?;
    if mesh.importance().is_some() {
        out = out.with_importance(imp)?;
    }
    if mesh.uv().is_some() {
        out = out.with_uv(uv)?;
    }
    Ok(Decimation {
        mesh: out,
        collapses,
        error_trace: trace,
        reached_target,
        skipped_faces: skipped,
    })
}

/// Homogeneous form of a quadric, for inspection.
pub fn quadric_form(q: &Quadric, p: &Vec3) -> f64 {
    let h = Vector4::new(p.x, p.y, p.z, 1.0);
    (h.transpose() * q.matrix() * h)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SpatialIndex;
    use crate::synthetic;

    /// Symmetric Hausdorff distance estimated from vertices and face
    /// samples of both meshes.
    fn hausdorff(a: &TriMesh, b: &TriMesh) -> f64 {
        fn one_way(from: &TriMesh, to: &TriMesh) -> f64 {
            let idx = SpatialIndex::new(to);
            let mut worst = 0.0f64;
            for f in 0..from.face_count() {
                let [p, q, r] = from.triangle(f);
                for i in 0..=4 {
                    for j in 0..=(4 - i) {
                        let (u, v) = (i as f64 / 4.0, j as f64 / 4.0);
                        let x = p * (1.0 - u - v) + q * u + r * v;
                        worst = worst.max(idx.closest_point(&x).unwrap().distance);
                    }
                }
            }
            worst
        }
        one_way(a, b).max(one_way(b, a))
    }

    #[test]
    fn planar_vertex_quadric_vanishes_on_plane() {
        let g = synthetic::grid(5, 5, 0.2);
        let (q, skipped) = compute_vertex_quadrics(&g);
        assert!(skipped.is_empty());
        for qi in &q {
            for p in [Vec3::new(0.3, -7.0, 0.0), Vec3::new(12.0, 1.0, 0.0)] {
                assert!(qi.evaluate(&p).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cube_corner_quadric_matches_plane_distances() {
        let cube = synthetic::cube(1.0);
        let (q, _) = compute_vertex_quadrics(&cube);
        assert!(q[0].evaluate(&Vec3::zeros()).abs() < 1e-12);
        // Oracle: area-weighted squared distances to each incident face plane.
        let p = Vec3::new(0.0, 0.0, -0.1);
        let direct: f64 = (0..cube.face_count())
            .filter(|&f| cube.faces()[f].contains(&0))
            .map(|f| {
                let n = cube.face_normal(f);
                let d = n.dot(&(p - cube.triangle(f)[0]));
                cube.face_area(f) * d * d
            })
            .sum();
        assert!((q[0].evaluate(&p) - direct).abs() < 1e-12);
        assert!((direct - 0.01).abs() < 1e-12);
        assert!((quadric_form(&q[0], &p) - direct).abs() < 1e-12);
    }

    #[test]
    fn isolated_vertex_has_zero_quadric() {
        let mut v = synthetic::regular_tetrahedron(1.0).vertices().to_vec();
        v.push(Vec3::new(5.0, 5.0, 5.0));
        let m = TriMesh::new(v, synthetic::regular_tetrahedron(1.0).faces().to_vec()).unwrap();
        assert_eq!(compute_vertex_quadrics(&m).0[4], Quadric::zero());
    }

    #[test]
    fn planar_grid_to_ten_percent_is_exact() {
        let g = synthetic::grid(20, 20, 0.05);
        let params = DecimationParams {
            target_faces: 80,
            ..Default::default()
        };
        let d = decimate(&g, &params).unwrap();
        assert!(d.reached_target);
        assert!(d.mesh.face_count() <= 80);
        d.mesh.validate_areas().unwrap();
        let h = hausdorff(&g, &d.mesh);
        assert!(h < 1e-6, "hausdorff {h}");
    }

    #[test]
    fn target_at_or_above_face_count_is_identity() {
        let s = synthetic::icosphere(1.0, 2);
        for t in [320, 1000] {
            let d = decimate(
                &s,
                &DecimationParams {
                    target_faces: t,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(d.mesh, s);
            assert!(d.collapses.is_empty());
        }
    }

    #[test]
    fn rejects_tiny_target() {
        let p = DecimationParams {
            target_faces: 3,
            ..Default::default()
        };
        assert!(decimate(&synthetic::cube(1.0), &p).is_err());
    }

    #[test]
    fn unreachable_target_is_best_effort() {
        let d = decimate(
            &synthetic::torus(1.0, 0.4, 12, 8),
            &DecimationParams {
                target_faces: 4,
                ..Default::default()
            },
        )
        .unwrap();
        // A torus cannot be triangulated with fewer than 14 faces.
        assert!(!d.reached_target);
        assert!(d.mesh.face_count() >= 14);
        assert_eq!(d.mesh.genus_per_component()[0].kind.genus(), Some(1));
    }

    #[test]
    fn importance_keeps_more_triangles_in_the_masked_patch() {
        let s = synthetic::icosphere(1.0, 4);
        let in_patch = |p: &Vec3| p.z > 0.6;
        let mask: Vec<f64> = s
            .vertices()
            .iter()
            .map(|p| if in_patch(p) { 1.0 } else { 0.01 })
            .collect();
        let target = s.face_count() / 5;
        let params = DecimationParams {
            target_faces: target,
            ..Default::default()
        };
        let count = |m: &TriMesh| {
            (0..m.face_count())
                .filter(|&f| {
                    let [a, b, c] = m.triangle(f);
                    in_patch(&((a + b + c) / 3.0))
                })
                .count()
        };
        let masked = decimate(&s.clone().with_importance(mask).unwrap(), &params).unwrap();
        let uniform = decimate(&s, &params).unwrap();
        assert_eq!(masked.mesh.face_count(), uniform.mesh.face_count());
        let (cm, cu) = (count(&masked.mesh), count(&uniform.mesh));
        assert!(cm > cu, "masked {cm} vs uniform {cu}");
    }

    /// Oracle: at every step scan all edges, take the smallest valid
    /// (cost, min id, max id), no heap and no versioning.
    fn reference_collapse_sequence(mesh: &TriMesh, target: usize) -> Vec<(u32, u32)> {
        let n = mesh.vertex_count();
        let (quad, _) = compute_vertex_quadrics(mesh);
        let mut vf = vec![Vec::new(); n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            for &i in f {
                vf[i as usize].push(fi as u32);
            }
        }
        let mut st = State {
            pos: mesh.vertices().to_vec(),
            quad,
            imp: vec![1.0; n],
            alive: vec![true; n],
            version: vec![0; n],
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.face_count()],
            vf,
            exponent: 0.0,
        };
        let mut live = mesh.face_count();
        let mut seq = Vec::new();
        while live > target {
            let mut best: Option<(f64, u32, u32, Vec3)> = None;
            for a in 0..n as u32 {
                if !st.alive[a as usize] {
                    continue;
                }
                for b in st.neighbors(a) {
                    if b <= a {
                        continue;
                    }
                    let (p, cost) = st.evaluate(a, b);
                    if !st.collapse_allowed(a, b, &p) {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((c, ba, bb, _)) => {
                            cost.total_cmp(&c).then(a.cmp(&ba)).then(b.cmp(&bb)) == Ordering::Less
                        }
                    };
                    if better {
                        best = Some((cost, a, b, p));
                    }
                }
            }
            let Some((_, a, b, p)) = best else { break };
            live -= st.edge_faces(a, b).len();
            st.collapse(a, b, p);
            seq.push((a, b));
        }
        seq
    }

    #[test]
    fn matches_reference_unweighted_collapse_on_small_mesh() {
        // Irregular 200-face closed mesh: a bumpy torus.
        let t = synthetic::torus(1.0, 0.35, 10, 10);
        let v = t
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, p)| p * (1.0 + 0.03 * ((i * 37 % 11) as f64 / 11.0)))
            .collect();
        let t = t.with_vertices(v).unwrap();
        assert_eq!(t.face_count(), 200);
        let params = DecimationParams {
            target_faces: 60,
            importance_exponent: 0.0,
            preserve_boundary: true,
        };
        let ours = decimate(&t, &params).unwrap();
        let reference = reference_collapse_sequence(&t, 60);
        assert_eq!(ours.collapses, reference);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn genus_kept_and_error_monotone(
                seed in 0u64..1000, frac in 0.1f64..0.9,
            ) {
                let t = synthetic::torus(1.0, 0.4, 16, 10);
                let v = t.vertices().iter().enumerate()
                    .map(|(i, p)| p * (1.0 + 0.02 * (((i as u64 * 2654435761 + seed) % 97) as f64 / 97.0)))
                    .collect();
                let t = t.with_vertices(v).unwrap();
                let target = ((t.face_count() as f64 * frac) as usize).max(4);
                let d = decimate(&t, &DecimationParams { target_faces: target, ..Default::default() }).unwrap();
                prop_assert_eq!(d.mesh.genus_per_component()[0].kind.genus(), Some(1));
                prop_assert!(d.error_trace.windows(2).all(|w| w[1] >= w[0]));
                d.mesh.validate_areas().unwrap();
            }

            #[test]
            fn accumulated_quadrics_are_psd(seed in 0u64..1000) {
                let s = synthetic::icosphere(1.0, 1);
                let v = s.vertices().iter().enumerate()
                    .map(|(i, p)| p * (1.0 + 0.2 * (((i as u64 * 7919 + seed) % 31) as f64 / 31.0)))
                    .collect();
                let s = s.with_vertices(v).unwrap();
                for q in compute_vertex_quadrics(&s).0 {
                    let e = SymmetricEigen::new(q.matrix()).eigenvalues;
                    prop_assert!(e.iter().all(|&x| x > -1e-9));
                }
            }
        }
    }
}
