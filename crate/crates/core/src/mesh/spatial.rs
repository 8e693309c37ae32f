//! Closest-point queries: triangle BVH for surface queries and a kd-tree for
//! nearest-vertex queries.
//!
//! Ties are resolved towards the lowest face (or vertex) id. Two squared
//! distances tie when they agree to a relative 1e-12, which absorbs the
//! rounding differences between faces that are equidistant by symmetry.

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

use super::TriMesh;

#[inline]
pub(crate) fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.max(b) + 1e-300
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    /// Barycentric coordinates (u, v, w) with respect to (a, b, c).
    pub bary: [f64; 3],
    /// Component of `p - point` along the right-hand-rule unit normal.
    pub signed_distance: f64,
}

/// Closest point of the closed triangle (a, b, c) to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Result<ClosestPoint> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a)
        .norm_squared()
        .max((c - a).norm_squared())
        .max((c - b).norm_squared());
    let nl = n.norm();
    if !(nl > 1e-14 * scale) {
        return Err(Error::DegenerateTriangle);
    }
    let (point, bary) = closest_on_triangle_raw(p, a, b, c);
    let signed_distance = (p - point).dot(&(n / nl));
    Ok(ClosestPoint {
        point,
        bary,
        signed_distance,
    })
}

/// Region-based closest point (Ericson). Degenerate triangles fall back to
/// the closest point on their edges.
#[inline]
pub(crate) fn closest_on_triangle_raw(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let sum = va + vb + vc;
    if !(sum.abs() > 0.0) || !sum.is_finite() {
        return closest_on_edges(p, a, b, c);
    }
    let denom = 1.0 / sum;
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

fn closest_on_edges(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let seg = |x: &Vec3, y: &Vec3| -> (Vec3, f64) {
        let d = y - x;
        let l = d.norm_squared();
        let t = if l > 0.0 {
            ((p - x).dot(&d) / l).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (x + d * t, t)
    };
    let (p0, t0) = seg(a, b);
    let (p1, t1) = seg(b, c);
    let (p2, t2) = seg(c, a);
    let cands = [
        (p0, [1.0 - t0, t0, 0.0]),
        (p1, [0.0, 1.0 - t1, t1]),
        (p2, [t2, 0.0, 1.0 - t2]),
    ];
    let mut best = cands[0];
    for c in &cands[1..] {
        if (c.0 - p).norm_squared() < (best.0 - p).norm_squared() {
            best = *c;
        }
    }
    best
}

/// Result of a surface query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub face: u32,
    pub point: Vec3,
    pub bary: [f64; 3],
    pub distance: f64,
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive. Internal: index of the right child (left is next).
    index: u32,
    /// Number of primitives for a leaf, 0 for internal nodes.
    count: u32,
}

const LEAF_SIZE: usize = 4;

/// Bounding volume hierarchy over the triangles of a mesh.
#[derive(Clone, Debug)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    prims: Vec<u32>,
}

impl TriangleBvh {
    pub fn build(vertices: &[Vec3], faces: &[[u32; 3]]) -> Self {
        let mut prims: Vec<u32> = (0..faces.len() as u32).collect();
        let centroids: Vec<Vec3> = faces
            .iter()
            .map(|f| {
                (vertices[f[0] as usize] + vertices[f[1] as usize] + vertices[f[2] as usize])
                    / 3.0
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1);
        if !faces.is_empty() {
            build_node(&mut nodes, &mut prims, 0, &centroids);
        }
        let mut bvh = TriangleBvh { nodes, prims };
        bvh.refit(vertices, faces);
        bvh
    }

    /// Recomputes node bounds for moved vertices, keeping the tree layout.
    pub fn refit(&mut self, vertices: &[Vec3], faces: &[[u32; 3]]) {
        for i in (0..self.nodes.len()).rev() {
            let n = &self.nodes[i];
            let bounds = if n.count > 0 {
                let mut b = Aabb::empty();
                for &p in &self.prims[n.index as usize..(n.index + n.count) as usize] {
                    for &v in &faces[p as usize] {
                        b.grow(&vertices[v as usize]);
                    }
                }
                b
            } else {
                let mut b = self.nodes[i + 1].bounds;
                b.merge(&self.nodes[n.index as usize].bounds);
                b
            };
            self.nodes[i].bounds = bounds;
        }
    }

    /// Closest surface point within `max_distance`, ties to the lowest face.
    pub fn closest(
        &self,
        vertices: &[Vec3],
        faces: &[[u32; 3]],
        p: &Vec3,
        max_distance: f64,
    ) -> Option<SurfacePoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = if max_distance.is_finite() {
            max_distance * max_distance
        } else {
            f64::INFINITY
        };
        let mut best: Option<(u32, Vec3, [f64; 3])> = None;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            let bd = node.bounds.distance_squared(p);
            if bd > best_d2 && !ties(bd, best_d2) {
                continue;
            }
            if node.count > 0 {
                for &f in &self.prims[node.index as usize..(node.index + node.count) as usize] {
                    let t = faces[f as usize];
                    let (q, bary) = closest_on_triangle_raw(
                        p,
                        &vertices[t[0] as usize],
                        &vertices[t[1] as usize],
                        &vertices[t[2] as usize],
                    );
                    let d2 = (p - q).norm_squared();
                    let better = match best {
                        None => d2 <= best_d2 || ties(d2, best_d2),
                        Some((bf, _, _)) => {
                            if ties(d2, best_d2) {
                                f < bf
                            } else {
                                d2 < best_d2
                            }
                        }
                    };
                    if better {
                        best_d2 = if best.is_none() || d2 < best_d2 { d2 } else { best_d2 };
                        best = Some((f, q, bary));
                    }
                }
            } else {
                let l = ni + 1;
                let r = node.index;
                let dl = self.nodes[l as usize].bounds.distance_squared(p);
                let dr = self.nodes[r as usize].bounds.distance_squared(p);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best.map(|(face, point, bary)| SurfacePoint {
            face,
            point,
            bary,
            distance: (p - point).norm(),
        })
    }
}

fn build_node(nodes: &mut Vec<Node>, prims: &mut [u32], offset: u32, centroids: &[Vec3]) -> u32 {
    let me = nodes.len() as u32;
    nodes.push(Node {
        bounds: Aabb::empty(),
        index: offset,
        count: prims.len() as u32,
    });
    if prims.len() <= LEAF_SIZE {
        return me;
    }
    let cb = Aabb::from_points(prims.iter().map(|&p| &centroids[p as usize]));
    let axis = cb.largest_axis();
    if cb.max[axis] - cb.min[axis] <= 0.0 {
        // All centroids coincide: keep as one (possibly large) leaf.
        return me;
    }
    let mid = prims.len() / 2;
    prims.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = prims.split_at_mut(mid);
    build_node(nodes, left, offset, centroids);
    let r = build_node(nodes, right, offset + mid as u32, centroids);
    nodes[me as usize].index = r;
    nodes[me as usize].count = 0;
    me
}

/// kd-tree over a point set with k-nearest queries.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vec3>,
    nodes: Vec<KdNode>,
    order: Vec<u32>,
}

#[derive(Clone, Debug)]
struct KdNode {
    bounds: Aabb,
    index: u32,
    count: u32,
}

const KD_LEAF: usize = 8;

impl PointIndex {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            kd_build(&mut nodes, &mut order, 0, &points);
        }
        PointIndex {
            points,
            nodes,
            order,
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point, ties to the lowest index.
    pub fn nearest(&self, p: &Vec3) -> Option<(u32, f64)> {
        self.knn(p, 1).first().map(|&(i, d2)| (i, d2.sqrt()))
    }

    /// The `k` nearest points as (index, squared distance), sorted by
    /// distance then index.
    pub fn knn(&self, p: &Vec3, k: usize) -> Vec<(u32, f64)> {
        let mut best: Vec<(u32, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.nodes.is_empty() {
            return best;
        }
        let worst = |best: &Vec<(u32, f64)>| {
            if best.len() < k {
                f64::INFINITY
            } else {
                best[best.len() - 1].1
            }
        };
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.distance_squared(p) > worst(&best) {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.index as usize..(node.index + node.count) as usize] {
                    let d2 = (self.points[i as usize] - p).norm_squared();
                    if best.len() == k {
                        let (li, ld) = best[k - 1];
                        if d2 > ld || (d2 == ld && i > li) {
                            continue;
                        }
                    }
                    let pos = best
                        .iter()
                        .position(|&(bi, bd)| d2 < bd || (d2 == bd && i < bi))
                        .unwrap_or(best.len());
                    best.insert(pos, (i, d2));
                    best.truncate(k);
                }
            } else {
                let l = ni + 1;
                let r = node.index;
                let dl = self.nodes[l as usize].bounds.distance_squared(p);
                let dr = self.nodes[r as usize].bounds.distance_squared(p);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

fn kd_build(nodes: &mut Vec<KdNode>, order: &mut [u32], offset: u32, points: &[Vec3]) -> u32 {
    let me = nodes.len() as u32;
    let bounds = Aabb::from_points(order.iter().map(|&i| &points[i as usize]));
    nodes.push(KdNode {
        bounds,
        index: offset,
        count: order.len() as u32,
    });
    if order.len() <= KD_LEAF {
        return me;
    }
    let axis = bounds.largest_axis();
    if bounds.max[axis] - bounds.min[axis] <= 0.0 {
        return me;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    kd_build(nodes, left, offset, points);
    let r = kd_build(nodes, right, offset + mid as u32, points);
    nodes[me as usize].index = r;
    nodes[me as usize].count = 0;
    me
}

/// Acceleration structure over a mesh: surface and nearest-vertex queries.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    bvh: TriangleBvh,
    points: Option<PointIndex>,
}

impl SpatialIndex {
    pub fn new(mesh: &TriMesh) -> Self {
        Self::from_parts(mesh.vertices().to_vec(), mesh.faces().to_vec())
    }

    pub fn from_parts(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let bvh = TriangleBvh::build(&vertices, &faces);
        SpatialIndex {
            vertices,
            faces,
            bvh,
            points: None,
        }
    }

    /// Moves the indexed vertices without changing connectivity.
    pub fn update_vertices(&mut self, vertices: &[Vec3]) {
        assert_eq!(vertices.len(), self.vertices.len());
        self.vertices.copy_from_slice(vertices);
        self.bvh.refit(&self.vertices, &self.faces);
        self.points = None;
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    /// Globally nearest surface point.
    pub fn closest_point(&self, p: &Vec3) -> Result<SurfacePoint> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(self
            .bvh
            .closest(&self.vertices, &self.faces, p, f64::INFINITY)
            .expect("non-empty index always yields a point"))
    }

    /// Nearest surface point no farther than `max_distance`.
    pub fn closest_point_within(&self, p: &Vec3, max_distance: f64) -> Option<SurfacePoint> {
        self.bvh.closest(&self.vertices, &self.faces, p, max_distance)
    }

    /// Nearest mesh vertex (index, distance), ties to the lowest index.
    pub fn nearest_vertex(&mut self, p: &Vec3) -> Option<(u32, f64)> {
        if self.points.is_none() {
            self.points = Some(PointIndex::new(self.vertices.clone()));
        }
        self.points.as_ref().unwrap().nearest(p)
    }

    pub fn face_normal(&self, f: u32) -> Vec3 {
        let t = self.faces[f as usize];
        let a = self.vertices[t[0] as usize];
        let b = self.vertices[t[1] as usize];
        let c = self.vertices[t[2] as usize];
        let n = (b - a).cross(&(c - a));
        let l = n.norm();
        if l > 0.0 {
            n / l
        } else {
            Vec3::zeros()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri() -> (Vec3, Vec3, Vec3) {
        (
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.2, 0.9, 0.0),
        )
    }

    #[test]
    fn vertex_maps_to_itself() {
        let (a, b, c) = tri();
        let r = closest_point_on_triangle(&a, &a, &b, &c).unwrap();
        assert_eq!(r.point, a);
        assert_eq!(r.bary, [1.0, 0.0, 0.0]);
        assert_eq!(r.signed_distance, 0.0);
    }

    #[test]
    fn point_above_centroid() {
        let (a, b, c) = tri();
        let n = (b - a).cross(&(c - a)).normalize();
        let g = (a + b + c) / 3.0;
        let r = closest_point_on_triangle(&(g + n * 0.37), &a, &b, &c).unwrap();
        assert!((r.point - g).norm() < 1e-12);
        for k in 0..3 {
            assert!((r.bary[k] - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((r.signed_distance - 0.37).abs() < 1e-12);
        let below = closest_point_on_triangle(&(g - n * 0.2), &a, &b, &c).unwrap();
        assert!((below.signed_distance + 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_triangle_is_an_error() {
        let a = Vec3::zeros();
        let b = Vec3::x();
        let c = Vec3::new(2.0, 0.0, 0.0);
        assert!(matches!(
            closest_point_on_triangle(&Vec3::y(), &a, &b, &c),
            Err(Error::DegenerateTriangle)
        ));
    }

    #[test]
    fn outside_edge_matches_dense_sampling() {
        // Oracle: dense barycentric sampling of the closed triangle.
        let (a, b, c) = tri();
        let p = Vec3::new(0.5, -0.4, 0.3);
        let r = closest_point_on_triangle(&p, &a, &b, &c).unwrap();
        let n = 2000;
        let mut best = (f64::INFINITY, Vec3::zeros());
        for i in 0..=n {
            for j in 0..=(n - i) {
                let u = i as f64 / n as f64;
                let v = j as f64 / n as f64;
                let q = a * (1.0 - u - v) + b * u + c * v;
                let d = (q - p).norm();
                if d < best.0 {
                    best = (d, q);
                }
            }
        }
        assert!((r.point - best.1).norm() < 1e-6, "{:?} vs {:?}", r.point, best.1);
        assert!(((r.point - p).norm() - best.0).abs() < 1e-6);
        // On edge ab: w = 0.
        assert_eq!(r.bary[2], 0.0);
        assert!((r.bary.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    fn brute_force(mesh: &TriMesh, p: &Vec3) -> (u32, f64) {
        let mut best: Option<(u32, f64)> = None;
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.triangle(f);
            let (q, _) = closest_on_triangle_raw(p, &a, &b, &c);
            let d2 = (q - p).norm_squared();
            best = match best {
                None => Some((f as u32, d2)),
                Some((bf, bd)) => {
                    if (d2 - bd).abs() <= 1e-12 * d2.max(bd) + 1e-300 {
                        Some((bf.min(f as u32), bd.min(d2)))
                    } else if d2 < bd {
                        Some((f as u32, d2))
                    } else {
                        Some((bf, bd))
                    }
                }
            };
        }
        let (f, d2) = best.unwrap();
        (f, d2.sqrt())
    }

    #[test]
    fn cube_center_ties_to_lowest_face() {
        let cube = synthetic::cube(1.0);
        let idx = SpatialIndex::new(&cube);
        let r = idx.closest_point(&Vec3::new(0.5, 0.5, 0.5)).unwrap();
        assert!((r.distance - 0.5).abs() < 1e-12);
        assert_eq!(r.face, 0);
    }

    #[test]
    fn point_on_surface_is_found_in_its_face() {
        let cube = synthetic::cube(1.0);
        let idx = SpatialIndex::new(&cube);
        let [a, b, c] = cube.triangle(5);
        let p = a * 0.2 + b * 0.5 + c * 0.3;
        let r = idx.closest_point(&p).unwrap();
        assert_eq!(r.face, 5);
        assert!(r.distance < 1e-15);
    }

    #[test]
    fn random_queries_match_brute_force() {
        let mesh = synthetic::icosphere(1.0, 3);
        let idx = SpatialIndex::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            let r = idx.closest_point(&p).unwrap();
            let (bf, bd) = brute_force(&mesh, &p);
            assert!((r.distance - bd).abs() < 1e-9);
            assert_eq!(r.face, bf);
        }
    }

    #[test]
    fn closest_distance_bounds_sampled_surface_points() {
        let mesh = synthetic::torus(1.0, 0.35, 20, 10);
        let idx = SpatialIndex::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Vec3> = (0..10_000)
            .map(|_| {
                let f = rng.gen_range(0..mesh.face_count());
                let [a, b, c] = mesh.triangle(f);
                let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                a + (b - a) * u + (c - a) * v
            })
            .collect();
        for _ in 0..20 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.0..1.0),
            );
            let d = idx.closest_point(&p).unwrap().distance;
            let min_sample = samples
                .iter()
                .map(|s| (s - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= min_sample + 1e-12);
        }
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let m = TriMesh::new(vec![Vec3::zeros()], vec![]).unwrap();
        assert!(matches!(
            SpatialIndex::new(&m).closest_point(&Vec3::zeros()),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn refit_tracks_moved_vertices() {
        let mesh = synthetic::icosphere(1.0, 2);
        let mut idx = SpatialIndex::new(&mesh);
        let moved: Vec<Vec3> = mesh.vertices().iter().map(|v| v * 2.0).collect();
        idx.update_vertices(&moved);
        let r = idx.closest_point(&Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert!((r.distance - 1.0).abs() < 0.05);
    }

    #[test]
    fn knn_matches_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..500)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let index = PointIndex::new(pts.clone());
        for _ in 0..50 {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let got = index.knn(&p, 5);
            let mut all: Vec<(u32, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, q)| (i as u32, (q - p).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, all[..5].to_vec());
        }
    }
}
