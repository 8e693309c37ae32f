//! Indexed triangle meshes and the topology/geometry queries built on them.

mod io;
mod laplacian;
mod sequence;
mod spatial;

use std::sync::{Arc, OnceLock};

pub use io::{load_importance, load_mesh, save_importance, save_mesh, MeshFormat};
pub use laplacian::{cotangent_laplacian, CotanLaplacian};
pub use sequence::{validate_groups, FrameGroup, MeshSequence, SequenceManifest};
pub use spatial::{
    closest_point_on_triangle, ClosestPoint, PointIndex, SpatialIndex, SurfacePoint, TriangleBvh,
};

use crate::error::{Error, Result};
use crate::geom::{triangle_area, triangle_normal_area2, Aabb, Vec3};

/// Faces with area below this are considered degenerate on load.
pub const MIN_FACE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    importance: Option<Vec<f64>>,
    uv: Option<Vec<[f64; 2]>>,
    edges: OnceLock<Arc<EdgeTable>>,
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices
            && self.faces == other.faces
            && self.importance == other.importance
            && self.uv == other.uv
    }
}

impl TriMesh {
    /// Builds a mesh, checking index ranges and repeated vertices per face.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: i as usize,
                        vertex_count: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                let v = if f[0] == f[1] || f[0] == f[2] { f[0] } else { f[1] };
                return Err(Error::RepeatedVertex {
                    face: fi,
                    vertex: v as usize,
                });
            }
        }
        Ok(TriMesh {
            vertices,
            faces,
            importance: None,
            uv: None,
            edges: OnceLock::new(),
        })
    }

    /// Attaches a per-vertex importance mask with values in [0, 1].
    pub fn with_importance(mut self, importance: Vec<f64>) -> Result<Self> {
        if importance.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "importance mask length",
                expected: self.vertices.len(),
                found: importance.len(),
            });
        }
        if let Some((i, v)) = importance
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidParameter(format!(
                "importance of vertex {i} is {v}, expected a value in [0, 1]"
            )));
        }
        self.importance = Some(importance);
        Ok(self)
    }

    pub fn with_uv(mut self, uv: Vec<[f64; 2]>) -> Result<Self> {
        if uv.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "uv count",
                expected: self.vertices.len(),
                found: uv.len(),
            });
        }
        self.uv = Some(uv);
        Ok(self)
    }

    /// Same connectivity and attributes, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "vertex count",
                expected: self.vertices.len(),
                found: vertices.len(),
            });
        }
        Ok(TriMesh {
            vertices,
            faces: self.faces.clone(),
            importance: self.importance.clone(),
            uv: self.uv.clone(),
            edges: self.edges.clone(),
        })
    }

    /// Rejects faces whose area is below [`MIN_FACE_AREA`], listing them.
    pub fn validate_areas(&self) -> Result<()> {
        let bad: Vec<usize> = (0..self.faces.len())
            .filter(|&f| self.face_area(f) < MIN_FACE_AREA)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::DegenerateFaces(bad))
        }
    }

    #[inline]
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    #[inline]
    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn importance(&self) -> Option<&[f64]> {
        self.importance.as_deref()
    }

    /// Importance of vertex `i`, 1 when no mask is attached.
    #[inline]
    pub fn importance_of(&self, i: usize) -> f64 {
        self.importance.as_ref().map_or(1.0, |m| m[i])
    }

    pub fn uv(&self) -> Option<&[[f64; 2]]> {
        self.uv.as_deref()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        triangle_area(&a, &b, &c)
    }

    /// Unit face normal (zero for degenerate faces).
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        triangle_normal_area2(&a, &b, &c).0
    }

    pub fn face_normals(&self) -> Vec<Vec3> {
        (0..self.faces.len()).map(|f| self.face_normal(f)).collect()
    }

    /// Area-weighted vertex normals; isolated vertices get a zero normal.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            let w = (b - a).cross(&(c - a));
            for &i in f {
                n[i as usize] += w;
            }
        }
        for v in &mut n {
            let l = v.norm();
            if l > 0.0 {
                *v /= l;
            }
        }
        n
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounding_box().diagonal()
    }

    /// Vertex to incident faces, as CSR offsets and face ids.
    pub fn vertex_faces(&self) -> (Vec<usize>, Vec<u32>) {
        let n = self.vertices.len();
        let mut count = vec![0usize; n + 1];
        for f in &self.faces {
            for &i in f {
                count[i as usize + 1] += 1;
            }
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut fill = count.clone();
        let mut out = vec![0u32; count[n]];
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                out[fill[i as usize]] = fi as u32;
                fill[i as usize] += 1;
            }
        }
        (count, out)
    }

    /// Undirected edges with their incident faces. Built once and cached.
    pub fn edge_table(&self) -> &EdgeTable {
        self.edges
            .get_or_init(|| Arc::new(EdgeTable::build(&self.faces)))
    }

    /// Connected components over shared vertices. Vertices referenced by no
    /// face form singleton components. Components are numbered in order of
    /// their lowest vertex index.
    pub fn connected_components(&self) -> Components {
        let n = self.vertices.len();
        let mut uf = UnionFind::new(n);
        for f in &self.faces {
            uf.union(f[0] as usize, f[1] as usize);
            uf.union(f[1] as usize, f[2] as usize);
        }
        let mut label = vec![u32::MAX; n];
        let mut root_label = vec![u32::MAX; n];
        let mut count = 0u32;
        for v in 0..n {
            let r = uf.find(v);
            if root_label[r] == u32::MAX {
                root_label[r] = count;
                count += 1;
            }
            label[v] = root_label[r];
        }
        Components {
            vertex_labels: label,
            count: count as usize,
        }
    }

    /// Sum of triangle areas.
    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Per connected component, the genus for closed orientable 2-manifold
    /// components, or a flag describing why the genus is not defined.
    /// Components without faces are skipped.
    pub fn genus_per_component(&self) -> Vec<ComponentTopology> {
        let comps = self.connected_components();
        let mut faces_of: Vec<Vec<usize>> = vec![Vec::new(); comps.count];
        for (fi, f) in self.faces.iter().enumerate() {
            faces_of[comps.vertex_labels[f[0] as usize] as usize].push(fi);
        }
        let (vf_off, vf) = self.vertex_faces();
        let table = self.edge_table();
        let mut out = Vec::new();
        for (c, faces) in faces_of.iter().enumerate() {
            if faces.is_empty() {
                continue;
            }
            let kind = self.classify_component(faces, table, &vf_off, &vf);
            out.push(ComponentTopology { component: c, kind });
        }
        // Renumber densely so ids follow the order of face-bearing components.
        for (i, t) in out.iter_mut().enumerate() {
            t.component = i;
        }
        out
    }

    fn classify_component(
        &self,
        faces: &[usize],
        table: &EdgeTable,
        vf_off: &[usize],
        vf: &[u32],
    ) -> SurfaceKind {
        let mut verts: Vec<u32> = faces.iter().flat_map(|&f| self.faces[f]).collect();
        verts.sort_unstable();
        verts.dedup();

        let mut edge_ids: Vec<usize> = Vec::with_capacity(faces.len() * 3);
        for &f in faces {
            let t = self.faces[f];
            for k in 0..3 {
                edge_ids.push(
                    table
                        .find(t[k], t[(k + 1) % 3])
                        .expect("edge of a face is in the table"),
                );
            }
        }
        edge_ids.sort_unstable();
        edge_ids.dedup();

        let mut open = false;
        for &e in &edge_ids {
            match table.faces_of(e).len() {
                1 => open = true,
                2 => {}
                _ => return SurfaceKind::NonManifold,
            }
        }

        // Vertex links must be single cycles (closed) or single paths (open).
        for &v in &verts {
            let inc = &vf[vf_off[v as usize]..vf_off[v as usize + 1]];
            if !link_is_single_fan(v, inc, &self.faces) {
                return SurfaceKind::NonManifold;
            }
        }
        if open {
            return SurfaceKind::Open;
        }

        // Orientation: each interior edge must be traversed once per direction.
        for &e in &edge_ids {
            let [a, b] = table.edges[e];
            let fs = table.faces_of(e);
            let dir = |f: u32| {
                let t = self.faces[f as usize];
                (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b)
            };
            if dir(fs[0]) == dir(fs[1]) {
                return SurfaceKind::NonOrientable;
            }
        }

        let chi = verts.len() as i64 - edge_ids.len() as i64 + faces.len() as i64;
        if chi > 2 || (2 - chi) % 2 != 0 {
            return SurfaceKind::NonManifold;
        }
        SurfaceKind::Closed {
            genus: ((2 - chi) / 2) as u32,
        }
    }
}

fn link_is_single_fan(v: u32, incident: &[u32], faces: &[[u32; 3]]) -> bool {
    // Link edges: the two other vertices of each incident face.
    let link: Vec<(u32, u32)> = incident
        .iter()
        .map(|&f| {
            let t = faces[f as usize];
            let k = t.iter().position(|&x| x == v).unwrap();
            (t[(k + 1) % 3], t[(k + 2) % 3])
        })
        .collect();
    if link.is_empty() {
        return true;
    }
    let mut nodes: Vec<u32> = link.iter().flat_map(|&(a, b)| [a, b]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let idx = |x: u32| nodes.binary_search(&x).unwrap();
    let mut degree = vec![0usize; nodes.len()];
    let mut uf = UnionFind::new(nodes.len());
    for &(a, b) in &link {
        degree[idx(a)] += 1;
        degree[idx(b)] += 1;
        uf.union(idx(a), idx(b));
    }
    if degree.iter().any(|&d| d > 2) {
        return false;
    }
    let r = uf.find(0);
    if (1..nodes.len()).any(|i| uf.find(i) != r) {
        return false;
    }
    true
}

#[derive(Clone, Debug)]
pub struct Components {
    pub vertex_labels: Vec<u32>,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SurfaceKind {
    Closed { genus: u32 },
    Open,
    NonManifold,
    NonOrientable,
}

impl SurfaceKind {
    pub fn genus(&self) -> Option<u32> {
        match self {
            SurfaceKind::Closed { genus } => Some(*genus),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ComponentTopology {
    pub component: usize,
    #[serde(flatten)]
    pub kind: SurfaceKind,
}

/// Sorted undirected edge list with incident faces.
#[derive(Clone, Debug)]
pub struct EdgeTable {
    pub edges: Vec<[u32; 2]>,
    offsets: Vec<usize>,
    faces: Vec<u32>,
}

impl EdgeTable {
    fn build(faces: &[[u32; 3]]) -> Self {
        let mut all: Vec<(u32, u32, u32)> = Vec::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                all.push((a.min(b), a.max(b), fi as u32));
            }
        }
        all.sort_unstable();
        let mut edges = Vec::new();
        let mut offsets = vec![0];
        let mut out_faces = Vec::with_capacity(all.len());
        let mut i = 0;
        while i < all.len() {
            let (a, b, _) = all[i];
            while i < all.len() && all[i].0 == a && all[i].1 == b {
                out_faces.push(all[i].2);
                i += 1;
            }
            edges.push([a, b]);
            offsets.push(out_faces.len());
        }
        EdgeTable {
            edges,
            offsets,
            faces: out_faces,
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn find(&self, a: u32, b: u32) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    pub fn faces_of(&self, e: usize) -> &[u32] {
        &self.faces[self.offsets[e]..self.offsets[e + 1]]
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn rejects_out_of_range_and_repeated_indices() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let err = TriMesh::new(v.clone(), vec![[0, 1, 2], [0, 1, 9]]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { face: 1, index: 9, .. }));
        let err = TriMesh::new(v, vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, Error::RepeatedVertex { face: 0, vertex: 1 }));
    }

    #[test]
    fn degenerate_faces_are_listed() {
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        match m.validate_areas() {
            Err(Error::DegenerateFaces(ids)) => assert_eq!(ids, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn analytic_areas() {
        assert!((synthetic::cube(1.0).surface_area() - 6.0).abs() < 1e-12);
        let t = synthetic::regular_tetrahedron(1.0);
        assert!((t.surface_area() - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn icosphere_area_close_to_sphere() {
        // Oracle: sum of flat triangles inscribed in the unit sphere.
        let s = synthetic::icosphere(1.0, 3);
        let area = s.surface_area();
        let sphere = 4.0 * std::f64::consts::PI;
        assert!(((area - sphere) / sphere).abs() < 0.02, "{area}");
        assert!(area < sphere);
    }

    #[test]
    fn genus_of_reference_shapes() {
        let cube = synthetic::cube(1.0);
        assert_eq!(cube.edge_table().len(), 18);
        assert_eq!(
            cube.genus_per_component(),
            vec![ComponentTopology {
                component: 0,
                kind: SurfaceKind::Closed { genus: 0 }
            }]
        );
        let torus = synthetic::torus(1.0, 0.3, 24, 12);
        assert_eq!(torus.genus_per_component()[0].kind.genus(), Some(1));

        let a = synthetic::regular_tetrahedron(1.0);
        let b = synthetic::translated(&a, Vec3::new(5.0, 0.0, 0.0));
        let two = synthetic::merge(&[a, b]);
        let g: Vec<_> = two
            .genus_per_component()
            .iter()
            .map(|c| (c.component, c.kind.genus()))
            .collect();
        assert_eq!(g, vec![(0, Some(0)), (1, Some(0))]);
    }

    #[test]
    fn open_and_non_manifold_components_are_flagged() {
        let grid = synthetic::grid(4, 4, 1.0);
        assert_eq!(grid.genus_per_component()[0].kind, SurfaceKind::Open);

        // Three triangles sharing one edge.
        let v = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::z(),
            Vec3::new(0.0, -1.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap();
        assert_eq!(m.genus_per_component()[0].kind, SurfaceKind::NonManifold);
    }

    #[test]
    fn flipped_face_makes_cube_non_orientable() {
        let cube = synthetic::cube(1.0);
        let mut faces = cube.faces().to_vec();
        faces[0].swap(1, 2);
        let m = TriMesh::new(cube.vertices().to_vec(), faces).unwrap();
        assert_eq!(m.genus_per_component()[0].kind, SurfaceKind::NonOrientable);
    }

    mod props {
        use super::*;
        use crate::geom::Quat;
        use proptest::prelude::*;

        fn rigid(m: &TriMesh, axis: Vec3, angle: f64, t: Vec3) -> TriMesh {
            let q = Quat::from_scaled_axis(axis.normalize() * angle);
            m.with_vertices(m.vertices().iter().map(|v| q * v + t).collect())
                .unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn area_is_rigid_invariant_and_scales_quadratically(
                ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
                angle in -3.0f64..3.0, tx in -5.0f64..5.0, s in 0.1f64..10.0,
            ) {
                let m = synthetic::torus(1.0, 0.4, 16, 8);
                let a0 = m.surface_area();
                let moved = rigid(&m, Vec3::new(ax, ay, az), angle, Vec3::new(tx, -tx, 0.5));
                prop_assert!(((moved.surface_area() - a0) / a0).abs() < 1e-9);
                let scaled = m.with_vertices(m.vertices().iter().map(|v| v * s).collect()).unwrap();
                prop_assert!(((scaled.surface_area() - s * s * a0) / (s * s * a0)).abs() < 1e-9);
            }

            #[test]
            fn genus_is_invariant_under_permutation_and_rigid_motion(
                seed in any::<u64>(), angle in -3.0f64..3.0,
            ) {
                use rand::{seq::SliceRandom, SeedableRng};
                let m = synthetic::merge(&[
                    synthetic::torus(1.0, 0.3, 12, 8),
                    synthetic::translated(&synthetic::cube(1.0), Vec3::new(4.0, 0.0, 0.0)),
                ]);
                let before: Vec<_> = m.genus_per_component().iter().map(|c| c.kind).collect();
                let mut perm: Vec<u32> = (0..m.vertex_count() as u32).collect();
                perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let mut verts = vec![Vec3::zeros(); m.vertex_count()];
                for (old, &new) in perm.iter().enumerate() {
                    verts[new as usize] = m.vertices()[old];
                }
                let faces = m.faces().iter().map(|f| f.map(|i| perm[i as usize])).collect();
                let p = TriMesh::new(verts, faces).unwrap();
                let p = rigid(&p, Vec3::new(0.3, 0.5, 0.8), angle, Vec3::new(1.0, 2.0, 3.0));
                let mut after: Vec<_> = p.genus_per_component().iter().map(|c| c.kind).collect();
                let mut before = before;
                before.sort_by_key(|k| format!("{k:?}"));
                after.sort_by_key(|k| format!("{k:?}"));
                prop_assert_eq!(before, after);
            }
        }
    }
}
