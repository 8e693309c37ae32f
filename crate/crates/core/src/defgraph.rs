//! Embedded deformation graphs: sparse nodes carrying a rotation and a
//! translation that warp an attached mesh, their as-rigid-as-possible
//! regularizer, and a coarse-to-fine hierarchy.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{weighted_quat_average, Quat, Vec3};
use crate::mesh::{PointIndex, TriMesh, UnionFind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    /// Rest position g.
    pub position: Vec3,
    /// Stored as [x, y, z, w].
    pub rotation: Quat,
    pub translation: Vec3,
    /// Mesh vertex the node was sampled at.
    pub vertex: u32,
}

impl GraphNode {
    /// Image of `p` under this node's rigid map.
    #[inline]
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.position) + self.position + self.translation
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationGraph {
    pub nodes: Vec<GraphNode>,
    /// Undirected edges with `a < b`, sorted.
    pub edges: Vec<[u32; 2]>,
    pub node_spacing: f64,
    pub k: usize,
    /// Per-vertex bindings in CSR form: vertex `i` uses entries
    /// `binding_offsets[i]..binding_offsets[i + 1]`.
    pub binding_offsets: Vec<u32>,
    pub binding_nodes: Vec<u32>,
    pub binding_weights: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub node_spacing: f64,
    pub k: usize,
}

impl DeformationGraph {
    pub fn vertex_count(&self) -> usize {
        self.binding_offsets.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn bindings(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.binding_offsets[v] as usize..self.binding_offsets[v + 1] as usize;
        self.binding_nodes[r.clone()]
            .iter()
            .zip(&self.binding_weights[r])
            .map(|(&n, &w)| (n as usize, w))
    }

    /// Warps a rest-space point bound like vertex `v`. Written as a
    /// displacement so identity transforms return `p` bit for bit.
    #[inline]
    pub fn warp_vertex(&self, v: usize, p: &Vec3) -> Vec3 {
        p + self.bindings(v).fold(Vec3::zeros(), |acc, (j, w)| {
            let n = &self.nodes[j];
            let d = p - n.position;
            acc + (n.rotation * d - d + n.translation) * w
        })
    }

    /// Applies the warp to points bound like the mesh vertices.
    pub fn warp_points(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        if points.len() != self.vertex_count() {
            return Err(Error::DimensionMismatch {
                what: "vertices bound to the deformation graph",
                expected: self.vertex_count(),
                found: points.len(),
            });
        }
        Ok(points
            .par_iter()
            .enumerate()
            .map(|(i, p)| self.warp_vertex(i, p))
            .collect())
    }

    /// Same nodes and bindings with every node transform set to identity.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.rotation = Quat::identity();
            n.translation = Vec3::zeros();
        }
    }

    pub fn is_identity(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.rotation == Quat::identity() && n.translation == Vec3::zeros())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: DeformationGraph = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.binding_nodes.len() != self.binding_weights.len()
            || self.binding_offsets.last().copied() != Some(self.binding_nodes.len() as u32)
        {
            return Err(Error::InvalidParameter("inconsistent binding arrays".into()));
        }
        for v in 0..self.vertex_count() {
            let mut sum = 0.0;
            for (j, w) in self.bindings(v) {
                if j >= n || w < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "vertex {v}: invalid binding to node {j} with weight {w}"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "vertex {v}: binding weights sum to {sum}"
                )));
            }
        }
        if self.edges.iter().any(|e| e[0] >= e[1] || e[1] as usize >= n) {
            return Err(Error::InvalidParameter("invalid graph edge".into()));
        }
        Ok(())
    }
}

/// Samples nodes, binds vertices and connects the graph.
pub fn build_graph(mesh: &TriMesh, node_spacing: f64, k: usize) -> Result<DeformationGraph> {
    if !(node_spacing > 0.0) || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "node spacing must be positive and K at least 1 (got {node_spacing}, {k})"
        )));
    }
    if mesh.vertex_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    if node_spacing > mesh.bbox_diagonal() {
        log::warn!(
            "node spacing {node_spacing} exceeds the bounding-box diagonal {}; one node per component",
            mesh.bbox_diagonal()
        );
    }
    let verts = mesh.vertices();
    let comps = mesh.connected_components();
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); comps.count];
    for (v, &c) in comps.vertex_labels.iter().enumerate() {
        members[c as usize].push(v as u32);
    }

    // Farthest-point sampling per component, seeded at its lowest vertex.
    let mut node_vertices: Vec<u32> = Vec::new();
    let mut comp_nodes: Vec<Vec<u32>> = vec![Vec::new(); comps.count];
    for (c, mem) in members.iter().enumerate() {
        let mut dist = vec![f64::INFINITY; mem.len()];
        let mut pick = 0usize;
        loop {
            let node = mem[pick];
            comp_nodes[c].push(node_vertices.len() as u32);
            node_vertices.push(node);
            let g = verts[node as usize];
            let mut far = (0usize, -1.0f64);
            for (i, &v) in mem.iter().enumerate() {
                let d = (verts[v as usize] - g).norm();
                if d < dist[i] {
                    dist[i] = d;
                }
                if dist[i] > far.1 {
                    far = (i, dist[i]);
                }
            }
            if far.1 < node_spacing {
                break;
            }
            pick = far.0;
        }
    }

    let nodes: Vec<GraphNode> = node_vertices
        .iter()
        .map(|&v| GraphNode {
            position: verts[v as usize],
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
            vertex: v,
        })
        .collect();

    // Bind each vertex to its K nearest nodes in its own component.
    let comp_index: Vec<PointIndex> = comp_nodes
        .iter()
        .map(|ids| PointIndex::new(ids.iter().map(|&j| nodes[j as usize].position).collect()))
        .collect();
    let per_vertex: Vec<Vec<(u32, f64)>> = (0..verts.len())
        .into_par_iter()
        .map(|v| {
            let c = comps.vertex_labels[v] as usize;
            let near: Vec<(u32, f64)> = comp_index[c]
                .knn(&verts[v], k + 1)
                .into_iter()
                .map(|(i, d2)| (i, d2.sqrt()))
                .collect();
            let ids = &comp_nodes[c];
            let (bound, d_ref) = if near.len() > k {
                (&near[..k], near[k].1)
            } else {
                let far = near.last().map_or(0.0, |x| x.1);
                (&near[..], far + node_spacing)
            };
            let mut w: Vec<(u32, f64)> = bound
                .iter()
                .map(|&(i, d)| {
                    let r = if d_ref > 0.0 { (1.0 - d / d_ref).max(0.0) } else { 1.0 };
                    (ids[i as usize], r * r)
                })
                .collect();
            let s: f64 = w.iter().map(|x| x.1).sum();
            if s > 0.0 {
                for x in &mut w {
                    x.1 /= s;
                }
            } else {
                let u = 1.0 / w.len() as f64;
                for x in &mut w {
                    x.1 = u;
                }
            }
            w
        })
        .collect();

    let mut binding_offsets = Vec::with_capacity(verts.len() + 1);
    let mut binding_nodes = Vec::new();
    let mut binding_weights = Vec::new();
    binding_offsets.push(0u32);
    for b in &per_vertex {
        for &(j, w) in b {
            binding_nodes.push(j);
            binding_weights.push(w);
        }
        binding_offsets.push(binding_nodes.len() as u32);
    }

    // Edges between nodes sharing a bound vertex.
    let mut edges: Vec<[u32; 2]> = Vec::new();
    for b in &per_vertex {
        for x in 0..b.len() {
            for y in x + 1..b.len() {
                let (p, q) = (b[x].0, b[y].0);
                edges.push([p.min(q), p.max(q)]);
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();

    // Repair: join graph pieces through mesh edges between primary nodes so
    // the graph is connected wherever the surface is.
    let primary: Vec<u32> = per_vertex
        .iter()
        .map(|b| {
            b.iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ib.cmp(ia)))
                .map(|(_, x)| x.0)
                .unwrap()
        })
        .collect();
    let mut uf = UnionFind::new(nodes.len());
    for e in &edges {
        uf.union(e[0] as usize, e[1] as usize);
    }
    let mut extra = Vec::new();
    for &[a, b] in &mesh.edge_table().edges {
        let (p, q) = (primary[a as usize], primary[b as usize]);
        if uf.find(p as usize) != uf.find(q as usize) {
            uf.union(p as usize, q as usize);
            extra.push([p.min(q), p.max(q)]);
        }
    }
    if !extra.is_empty() {
        edges.extend(extra);
        edges.sort_unstable();
        edges.dedup();
    }

    Ok(DeformationGraph {
        nodes,
        edges,
        node_spacing,
        k,
        binding_offsets,
        binding_nodes,
        binding_weights,
    })
}

/// Warps `mesh` with the graph; connectivity and attributes are unchanged.
pub fn apply_deformation(graph: &DeformationGraph, mesh: &TriMesh) -> Result<TriMesh> {
    let v = graph.warp_points(mesh.vertices())?;
    mesh.with_vertices(v)
}

/// Residual of the regularizer for the ordered pair (j, k).
#[inline]
pub fn arap_residual(graph: &DeformationGraph, j: usize, k: usize) -> Vec3 {
    let (nj, nk) = (&graph.nodes[j], &graph.nodes[k]);
    nj.transform(&nk.position) - (nk.position + nk.translation)
}

/// Embedded-deformation regularizer. Each undirected edge contributes
/// both orientations so the energy does not depend on edge storage order.
pub fn arap_energy(graph: &DeformationGraph) -> f64 {
    graph
        .edges
        .iter()
        .map(|&[a, b]| {
            let (a, b) = (a as usize, b as usize);
            arap_residual(graph, a, b).norm_squared() + arap_residual(graph, b, a).norm_squared()
        })
        .sum()
}

/// Gradient of [`arap_energy`] with respect to each node translation.
pub fn arap_translation_gradient(graph: &DeformationGraph) -> Vec<Vec3> {
    let mut g = vec![Vec3::zeros(); graph.nodes.len()];
    for &[a, b] in &graph.edges {
        let (a, b) = (a as usize, b as usize);
        for (j, k) in [(a, b), (b, a)] {
            let e = arap_residual(graph, j, k) * 2.0;
            g[j] += e;
            g[k] -= e;
        }
    }
    g
}

/// Graphs at decreasing node spacing over the same mesh, coarse first.
#[derive(Clone, Debug)]
pub struct GraphHierarchy {
    pub levels: Vec<DeformationGraph>,
    /// `prolongation[l]` maps level `l` nodes to level `l - 1` nodes;
    /// entry 0 is empty.
    pub prolongation: Vec<Vec<Vec<(u32, f64)>>>,
}

impl GraphHierarchy {
    /// `levels` graphs with spacing `finest_spacing * ratio^(levels-1-l)`.
    pub fn build(
        mesh: &TriMesh,
        finest_spacing: f64,
        levels: usize,
        ratio: f64,
        k: usize,
    ) -> Result<Self> {
        if levels == 0 || !(ratio > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "hierarchy needs at least one level and a spacing ratio above 1 (got {levels}, {ratio})"
            )));
        }
        let graphs = (0..levels)
            .map(|l| {
                let s = finest_spacing * ratio.powi((levels - 1 - l) as i32);
                build_graph(mesh, s, k)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut prolongation = vec![Vec::new()];
        for l in 1..levels {
            let coarse = &graphs[l - 1];
            prolongation.push(
                graphs[l]
                    .nodes
                    .iter()
                    .map(|n| {
                        coarse
                            .bindings(n.vertex as usize)
                            .map(|(j, w)| (j as u32, w))
                            .collect()
                    })
                    .collect(),
            );
        }
        Ok(GraphHierarchy {
            levels: graphs,
            prolongation,
        })
    }
}

/// Initializes level `level` from the solved graph of level `level - 1`.
pub fn refine_to_level(
    hierarchy: &GraphHierarchy,
    coarse_solution: &DeformationGraph,
    level: usize,
) -> Result<DeformationGraph> {
    if level == 0 || level >= hierarchy.levels.len() {
        return Err(Error::InvalidParameter(format!(
            "refinement level {level} outside 1..{}",
            hierarchy.levels.len()
        )));
    }
    if coarse_solution.nodes.len() != hierarchy.levels[level - 1].nodes.len() {
        return Err(Error::DimensionMismatch {
            what: "coarse solution node count",
            expected: hierarchy.levels[level - 1].nodes.len(),
            found: coarse_solution.nodes.len(),
        });
    }
    let mut fine = hierarchy.levels[level].clone();
    for (node, weights) in fine.nodes.iter_mut().zip(&hierarchy.prolongation[level]) {
        node.rotation = weighted_quat_average(
            weights
                .iter()
                .map(|&(j, w)| (coarse_solution.nodes[j as usize].rotation, w)),
        );
        let warped = weights.iter().fold(Vec3::zeros(), |acc, &(j, w)| {
            acc + coarse_solution.nodes[j as usize].transform(&node.position) * w
        });
        node.translation = warped - node.position;
    }
    Ok(fine)
}

/// Copies the node transforms of `solved` (same level) into a coarser
/// level by sampling the warp at the coarse node positions. Used to seed a
/// new coarse-to-fine pass from a previous fine solution.
pub fn restrict_to_level(
    hierarchy: &GraphHierarchy,
    fine_solution: &DeformationGraph,
    level: usize,
) -> Result<DeformationGraph> {
    let target = hierarchy
        .levels
        .get(level)
        .ok_or_else(|| Error::InvalidParameter(format!("restriction level {level} out of range")))?;
    if fine_solution.vertex_count() != target.vertex_count() {
        return Err(Error::DimensionMismatch {
            what: "graph vertex count",
            expected: target.vertex_count(),
            found: fine_solution.vertex_count(),
        });
    }
    let mut out = target.clone();
    for node in &mut out.nodes {
        let v = node.vertex as usize;
        let rot = weighted_quat_average(
            fine_solution
                .bindings(v)
                .map(|(j, w)| (fine_solution.nodes[j].rotation, w)),
        );
        node.rotation = rot;
        node.translation = fine_solution.warp_vertex(v, &node.position) - node.position;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::{Rng as _, SeedableRng};

    fn rigid(angle: f64, axis: Vec3, t: Vec3) -> (Quat, Vec3) {
        (Quat::from_scaled_axis(axis.normalize() * angle), t)
    }

    fn set_global(g: &mut DeformationGraph, r: Quat, t: Vec3) {
        // x -> R x + t expressed per node.
        for n in &mut g.nodes {
            n.rotation = r;
            n.translation = r * n.position + t - n.position;
        }
    }

    #[test]
    fn huge_spacing_gives_single_node() {
        let m = synthetic::icosphere(1.0, 2);
        let g = build_graph(&m, 5.0, 4).unwrap();
        assert_eq!(g.node_count(), 1);
        for v in 0..m.vertex_count() {
            let b: Vec<_> = g.bindings(v).collect();
            assert_eq!(b, vec![(0, 1.0)]);
        }
    }

    #[test]
    fn cube_node_separation() {
        // Densely tessellated unit cube: subdivide each face as a grid.
        let m = dense_cube(8);
        let g = build_graph(&m, 0.4, 4).unwrap();
        let mut min = f64::INFINITY;
        for (i, a) in g.nodes.iter().enumerate() {
            for b in &g.nodes[i + 1..] {
                min = min.min((a.position - b.position).norm());
            }
        }
        assert!(g.node_count() > 4);
        assert!(min >= 0.28, "{min}");
    }

    pub(crate) fn dense_cube(n: usize) -> TriMesh {
        // Six grids folded onto the cube sides, then welded.
        let mut parts = Vec::new();
        let g = synthetic::grid(n, n, 1.0 / n as f64);
        let maps: [fn(&Vec3) -> Vec3; 6] = [
            |p| Vec3::new(p.y, p.x, 0.0),
            |p| Vec3::new(p.x, p.y, 1.0),
            |p| Vec3::new(p.x, 0.0, p.y),
            |p| Vec3::new(p.y, 1.0, p.x),
            |p| Vec3::new(0.0, p.x, p.y),
            |p| Vec3::new(1.0, p.y, p.x),
        ];
        for f in maps {
            parts.push(g.with_vertices(g.vertices().iter().map(f).collect()).unwrap());
        }
        weld(&synthetic::merge(&parts))
    }

    fn weld(m: &TriMesh) -> TriMesh {
        let mut key: Vec<(i64, i64, i64)> = Vec::new();
        let mut remap = Vec::new();
        let mut verts = Vec::new();
        for p in m.vertices() {
            let k = (
                (p.x * 1e6).round() as i64,
                (p.y * 1e6).round() as i64,
                (p.z * 1e6).round() as i64,
            );
            match key.iter().position(|&q| q == k) {
                Some(i) => remap.push(i as u32),
                None => {
                    key.push(k);
                    verts.push(*p);
                    remap.push((verts.len() - 1) as u32);
                }
            }
        }
        let faces = m.faces().iter().map(|f| f.map(|i| remap[i as usize])).collect();
        TriMesh::new(verts, faces).unwrap()
    }

    #[test]
    fn weights_sum_to_one_on_large_mesh() {
        let m = synthetic::torus(1.0, 0.3, 100, 50);
        assert!(m.vertex_count() >= 5000);
        let m2 = synthetic::merge(&[m.clone(), synthetic::translated(&m, Vec3::new(4.0, 0.0, 0.0))]);
        assert!(m2.vertex_count() >= 10_000);
        let g = build_graph(&m2, 0.2, 4).unwrap();
        g.validate().unwrap();
        for v in 0..m2.vertex_count() {
            let b: Vec<_> = g.bindings(v).collect();
            assert_eq!(b.len(), 4);
            let s: f64 = b.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(b.iter().all(|x| x.1 >= 0.0));
        }
    }

    #[test]
    fn graph_is_connected_on_connected_surface() {
        for spacing in [0.05, 0.15, 0.4] {
            let m = synthetic::cylinder(0.05, 1.0, 60, 16);
            let g = build_graph(&m, spacing, 4).unwrap();
            let mut uf = UnionFind::new(g.node_count());
            for e in &g.edges {
                uf.union(e[0] as usize, e[1] as usize);
            }
            let r = uf.find(0);
            assert!((0..g.node_count()).all(|i| uf.find(i) == r), "spacing {spacing}");
        }
    }

    #[test]
    fn identity_warp_is_exact() {
        let m = synthetic::torus(1.0, 0.3, 24, 12);
        let g = build_graph(&m, 0.3, 4).unwrap();
        assert_eq!(apply_deformation(&g, &m).unwrap(), m);
    }

    #[test]
    fn common_rigid_motion_is_reproduced() {
        let m = synthetic::torus(1.0, 0.3, 24, 12);
        let mut g = build_graph(&m, 0.3, 4).unwrap();
        let (r, t) = rigid(0.7, Vec3::new(1.0, 2.0, -0.5), Vec3::new(0.3, -1.0, 2.0));
        set_global(&mut g, r, t);
        let out = apply_deformation(&g, &m).unwrap();
        for (a, b) in m.vertices().iter().zip(out.vertices()) {
            assert!((r * a + t - b).norm() < 1e-9);
        }
        assert!(arap_energy(&g) < 1e-18 * 1e6, "{}", arap_energy(&g));
    }

    #[test]
    fn single_translated_node_matches_direct_evaluation() {
        let m = synthetic::grid(10, 10, 0.1);
        let mut g = build_graph(&m, 0.25, 4).unwrap();
        g.nodes[3].translation = Vec3::new(0.0, 0.0, 0.1);
        let out = apply_deformation(&g, &m).unwrap();
        // Oracle: displacement = (weight of node 3 in the binding) * 0.1.
        for v in 0..m.vertex_count() {
            let w3: f64 = (g.binding_offsets[v]..g.binding_offsets[v + 1])
                .filter(|&e| g.binding_nodes[e as usize] == 3)
                .map(|e| g.binding_weights[e as usize])
                .sum();
            let d = out.vertices()[v] - m.vertices()[v];
            assert!((d - Vec3::new(0.0, 0.0, 0.1 * w3)).norm() < 1e-15);
        }
    }

    #[test]
    fn coincident_vertex_bound_to_single_node() {
        let m = synthetic::icosphere(1.0, 1);
        let mut g = build_graph(&m, 10.0, 4).unwrap();
        g.nodes[0].translation = Vec3::new(0.25, -0.5, 1.0);
        g.nodes[0].rotation = Quat::from_scaled_axis(Vec3::new(0.3, 0.2, 0.1));
        let v = g.nodes[0].vertex as usize;
        let out = apply_deformation(&g, &m).unwrap();
        assert_eq!(out.vertices()[v], g.nodes[0].position + g.nodes[0].translation);
    }

    fn chain3() -> DeformationGraph {
        let pos = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        DeformationGraph {
            nodes: pos
                .iter()
                .enumerate()
                .map(|(i, &p)| GraphNode {
                    position: p,
                    rotation: Quat::identity(),
                    translation: Vec3::zeros(),
                    vertex: i as u32,
                })
                .collect(),
            edges: vec![[0, 1], [1, 2]],
            node_spacing: 1.0,
            k: 1,
            binding_offsets: vec![0, 1, 2, 3],
            binding_nodes: vec![0, 1, 2],
            binding_weights: vec![1.0; 3],
        }
    }

    #[test]
    fn arap_energy_of_scaled_chain_matches_hand_value() {
        let mut g = chain3();
        assert_eq!(arap_energy(&g), 0.0);
        for n in &mut g.nodes {
            n.translation = n.position * 0.1;
        }
        // Per direction: |0.1 (g_j - g_k)|^2; edges have lengths 1 and 2.
        let hand = 2.0 * (0.01 * 1.0 + 0.01 * 4.0);
        assert!((arap_energy(&g) - hand).abs() < 1e-15);
    }

    fn random_graph(seed: u64, n: usize) -> DeformationGraph {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = chain3();
        g.nodes = (0..n)
            .map(|i| GraphNode {
                position: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
                rotation: Quat::from_scaled_axis(Vec3::new(rng.gen(), rng.gen(), rng.gen())),
                translation: Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 0.1,
                vertex: i as u32,
            })
            .collect();
        g.edges = (0..n as u32)
            .flat_map(|i| [(i, (i + 1) % n as u32), (i, (i + 3) % n as u32)])
            .map(|(a, b)| [a.min(b), a.max(b)])
            .filter(|e| e[0] != e[1])
            .collect();
        g.edges.sort_unstable();
        g.edges.dedup();
        g.binding_offsets = vec![0];
        g.binding_nodes.clear();
        g.binding_weights.clear();
        g
    }

    #[test]
    fn translation_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let g = random_graph(seed, 12);
            let grad = arap_translation_gradient(&g);
            let h = 1e-6;
            for j in 0..g.nodes.len() {
                for c in 0..3 {
                    let mut gp = g.clone();
                    gp.nodes[j].translation[c] += h;
                    let mut gm = g.clone();
                    gm.nodes[j].translation[c] -= h;
                    let fd = (arap_energy(&gp) - arap_energy(&gm)) / (2.0 * h);
                    let an = grad[j][c];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn refine_identity_and_rigid() {
        let m = synthetic::cylinder(0.1, 1.0, 40, 16);
        let h = GraphHierarchy::build(&m, 0.1, 3, 2.0, 4).unwrap();
        assert!(h.levels[0].node_spacing > h.levels[1].node_spacing);
        for l in 1..3 {
            for p in &h.prolongation[l] {
                let s: f64 = p.iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        let fine = refine_to_level(&h, &h.levels[0], 1).unwrap();
        assert!(fine.nodes.iter().all(|n| n.translation.norm() < 1e-15
            && (n.rotation.angle()) < 1e-15));

        let (r, t) = rigid(0.5, Vec3::new(0.2, 1.0, 0.3), Vec3::new(0.1, 0.2, -0.3));
        let mut coarse = h.levels[0].clone();
        set_global(&mut coarse, r, t);
        let fine = refine_to_level(&h, &coarse, 1).unwrap();
        let out = apply_deformation(&fine, &m).unwrap();
        for (a, b) in m.vertices().iter().zip(out.vertices()) {
            assert!((r * a + t - b).norm() < 1e-6);
        }
        assert!(refine_to_level(&h, &coarse, 3).is_err());
        assert!(refine_to_level(&h, &coarse, 0).is_err());
    }

    #[test]
    fn refine_bent_bar_stays_close_to_coarse_warp() {
        let m = synthetic::cylinder(0.05, 1.0, 60, 16);
        let h = GraphHierarchy::build(&m, 0.08, 2, 2.0, 4).unwrap();
        // Coarse solution: each node follows the bend map locally.
        let bent = synthetic::bend_along_y(&m, 1.0, 0.8);
        let mut coarse = h.levels[0].clone();
        let rho = 1.0 / 0.8;
        for n in &mut coarse.nodes {
            let target = bent.vertices()[n.vertex as usize];
            n.rotation = Quat::from_scaled_axis(Vec3::new(0.0, 0.0, -n.position.y / rho));
            n.translation = target - n.position;
        }
        let cw = apply_deformation(&coarse, &m).unwrap();
        let fine = refine_to_level(&h, &coarse, 1).unwrap();
        let fw = apply_deformation(&fine, &m).unwrap();
        let rms = |a: &[Vec3], b: &[Vec3]| {
            (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64)
                .sqrt()
        };
        let disp = rms(cw.vertices(), m.vertices());
        let diff = rms(cw.vertices(), fw.vertices());
        assert!(diff <= 0.1 * disp, "{diff} vs {disp}");
    }

    #[test]
    fn json_round_trip() {
        let m = synthetic::icosphere(1.0, 2);
        let mut g = build_graph(&m, 0.5, 4).unwrap();
        g.nodes[1].rotation = Quat::from_scaled_axis(Vec3::new(0.1, 0.2, 0.3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        g.save(&p).unwrap();
        assert_eq!(DeformationGraph::load(&p).unwrap(), g);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn warp_is_linear_in_translations(seed in any::<u64>(), s in -3.0f64..3.0) {
                let m = synthetic::icosphere(1.0, 2);
                let mut g = build_graph(&m, 0.6, 4).unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                for n in &mut g.nodes {
                    n.rotation = Quat::from_scaled_axis(Vec3::new(rng.gen(), rng.gen(), rng.gen()));
                }
                let t1: Vec<Vec3> = g.nodes.iter().map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
                let t2: Vec<Vec3> = g.nodes.iter().map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
                let eval = |t: &dyn Fn(usize) -> Vec3| {
                    let mut h = g.clone();
                    for (j, n) in h.nodes.iter_mut().enumerate() { n.translation = t(j); }
                    h.warp_points(m.vertices()).unwrap()
                };
                let a = eval(&|j| t1[j]);
                let b = eval(&|j| t2[j]);
                let z = eval(&|_| Vec3::zeros());
                let c = eval(&|j| t1[j] + t2[j] * s);
                for i in 0..m.vertex_count() {
                    let lin = a[i] + (b[i] - z[i]) * s;
                    prop_assert!((lin - c[i]).norm() < 1e-9);
                }
            }

            #[test]
            fn arap_invariant_under_common_rigid_motion(seed in any::<u64>(), angle in -3.0f64..3.0) {
                let g = random_graph(seed, 15);
                let e0 = arap_energy(&g);
                let r0 = Quat::from_scaled_axis(Vec3::new(0.3, -0.4, 0.8).normalize() * angle);
                let t0 = Vec3::new(1.0, -2.0, 0.5);
                let mut h = g.clone();
                for n in &mut h.nodes {
                    // Compose x -> R0 (node map) + T0.
                    let rj = n.rotation;
                    n.translation = r0 * (n.position + n.translation) + t0 - n.position;
                    n.rotation = r0 * rj;
                }
                prop_assert!((arap_energy(&h) - e0).abs() <= 1e-12 * e0.max(1e-300) + 1e-15);
            }
        }
    }
}
