//! Procedural meshes and models for tests, examples and benchmarks.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::body::{Joint, JointBounds, SkinnedModel, Skeleton};
use crate::geom::Vec3;
use crate::mesh::TriMesh;

fn build(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> TriMesh {
    TriMesh::new(vertices, faces).expect("generated mesh is valid")
}

/// Axis-aligned cube `[0, size]^3`, two triangles per side, outward winding.
pub fn cube(size: f64) -> TriMesh {
    let v: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                (i & 1) as f64 * size,
                ((i >> 1) & 1) as f64 * size,
                ((i >> 2) & 1) as f64 * size,
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // z = 0
        [4, 5, 7],
        [4, 7, 6], // z = 1
        [0, 1, 5],
        [0, 5, 4], // y = 0
        [2, 6, 7],
        [2, 7, 3], // y = 1
        [0, 4, 6],
        [0, 6, 2], // x = 0
        [1, 3, 7],
        [1, 7, 5], // x = 1
    ];
    build(v, faces)
}

/// Cube `[0, size]^3` with every side split into an `n x n` grid of
/// quads. Shared edges reuse vertices, so the surface is closed.
pub fn tessellated_cube(size: f64, n: usize) -> TriMesh {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut v = Vec::new();
    let mut f = Vec::new();
    let h = size / n as f64;
    for d in 0..3 {
        for side in [0, n] {
            let mut id = |i: usize, j: usize| {
                let mut c = [0usize; 3];
                c[d] = side;
                c[(d + 1) % 3] = i;
                c[(d + 2) % 3] = j;
                *index.entry(c).or_insert_with(|| {
                    v.push(Vec3::new(c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h));
                    (v.len() - 1) as u32
                })
            };
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, e) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    if side == n {
                        f.push([a, b, c]);
                        f.push([a, c, e]);
                    } else {
                        f.push([a, c, b]);
                        f.push([a, e, c]);
                    }
                }
            }
        }
    }
    build(v, f)
}

pub fn regular_tetrahedron(edge: f64) -> TriMesh {
    let s = edge / (2.0 * 2f64.sqrt());
    let v = vec![
        Vec3::new(1.0, 1.0, 1.0) * s,
        Vec3::new(1.0, -1.0, -1.0) * s,
        Vec3::new(-1.0, 1.0, -1.0) * s,
        Vec3::new(-1.0, -1.0, 1.0) * s,
    ];
    build(v, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
}

/// Subdivided icosahedron projected to a sphere: 20 * 4^subdivisions faces.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) * 0.5).normalize());
                (v.len() - 1) as u32
            })
        };
        for &[a, b, c] in &f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    for p in &mut v {
        *p *= radius;
    }
    build(v, f)
}

/// Torus around the z axis: `nu` segments around the ring, `nv` around the
/// tube, `2 * nu * nv` faces.
pub fn torus(major: f64, minor: f64, nu: usize, nv: usize) -> TriMesh {
    let mut v = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * PI * i as f64 / nu as f64;
        for j in 0..nv {
            let w = 2.0 * PI * j as f64 / nv as f64;
            let r = major + minor * w.cos();
            v.push(Vec3::new(r * u.cos(), r * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: usize, j: usize| ((i % nu) * nv + (j % nv)) as u32;
    let mut f = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, f)
}

/// Planar grid in z = 0 with `nx * ny` square cells of side `spacing`, each
/// split along the same diagonal. Normals point to +z.
pub fn grid(nx: usize, ny: usize, spacing: f64) -> TriMesh {
    let mut v = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            v.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
        }
    }
    let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut f = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build(v, f)
}

/// Closed cylinder along +y from y = 0 to y = length: `rings` segments
/// along the axis, `segments` around it, fan caps.
/// Face count is `2 * segments * (rings + 1)`.
pub fn cylinder(radius: f64, length: f64, rings: usize, segments: usize) -> TriMesh {
    let mut v = Vec::with_capacity((rings + 1) * segments + 2);
    for r in 0..=rings {
        let y = length * r as f64 / rings as f64;
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            v.push(Vec3::new(radius * a.cos(), y, radius * a.sin()));
        }
    }
    let bottom = v.len() as u32;
    v.push(Vec3::zeros());
    let top = v.len() as u32;
    v.push(Vec3::new(0.0, length, 0.0));
    let id = |r: usize, s: usize| (r * segments + s % segments) as u32;
    let mut f = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            f.push([id(r, s), id(r + 1, s), id(r + 1, s + 1)]);
            f.push([id(r, s), id(r + 1, s + 1), id(r, s + 1)]);
        }
    }
    for s in 0..segments {
        f.push([bottom, id(0, s), id(0, s + 1)]);
        f.push([top, id(rings, s + 1), id(rings, s)]);
    }
    build(v, f)
}

/// Bends geometry laid out along +y into a circular arc in the x-y plane,
/// turning by `angle` over `length` while keeping the axis length.
pub fn bend_along_y(mesh: &TriMesh, length: f64, angle: f64) -> TriMesh {
    if angle == 0.0 {
        return mesh.clone();
    }
    let rho = length / angle;
    let v = mesh
        .vertices()
        .iter()
        .map(|p| {
            let phi = p.y / rho;
            let r = rho - p.x;
            Vec3::new(rho - r * phi.cos(), r * phi.sin(), p.z)
        })
        .collect();
    mesh.with_vertices(v).unwrap()
}

pub fn translated(mesh: &TriMesh, t: Vec3) -> TriMesh {
    mesh.with_vertices(mesh.vertices().iter().map(|p| p + t).collect())
        .unwrap()
}

/// Disjoint union; vertex and face order follow the input order.
pub fn merge(parts: &[TriMesh]) -> TriMesh {
    let mut v = Vec::new();
    let mut f = Vec::new();
    for m in parts {
        let base = v.len() as u32;
        v.extend_from_slice(m.vertices());
        f.extend(m.faces().iter().map(|t| t.map(|i| i + base)));
    }
    build(v, f)
}

/// Capsule around the segment `a -> b` with elliptic cross-section radii
/// (`rx`, `rz`) and ellipsoidal end caps of axial length `cap`. `rings`
/// counts the vertex rings between the two poles.
/// Face count is `2 * segments * (rings)`.
#[allow(clippy::too_many_arguments)]
pub fn capsule(
    a: Vec3,
    b: Vec3,
    rx: f64,
    rz: f64,
    cap: f64,
    rings: usize,
    cap_rings: usize,
    segments: usize,
) -> TriMesh {
    assert!(rings >= 2 * cap_rings + 2 && cap_rings >= 1 && segments >= 3);
    let len = (b - a).norm();
    let u = (b - a) / len;
    // Side axis: world x projected out of u, else z.
    let seed = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
    let e1 = (seed - u * seed.dot(&u)).normalize();
    let e2 = u.cross(&e1);
    let body_rings = rings - 2 * cap_rings;
    // Axial position and radius scale of each ring.
    let mut profile = Vec::with_capacity(rings);
    for k in 1..=cap_rings {
        let t = PI / 2.0 * k as f64 / (cap_rings + 1) as f64;
        profile.push((-cap * t.cos(), t.sin()));
    }
    for k in 0..body_rings {
        profile.push((len * k as f64 / (body_rings - 1) as f64, 1.0));
    }
    for k in (1..=cap_rings).rev() {
        let t = PI / 2.0 * k as f64 / (cap_rings + 1) as f64;
        profile.push((len + cap * t.cos(), t.sin()));
    }
    let mut v = Vec::with_capacity(rings * segments + 2);
    v.push(a - u * cap);
    for &(h, s) in &profile {
        for j in 0..segments {
            let phi = 2.0 * PI * j as f64 / segments as f64;
            v.push(a + u * h + e1 * (rx * s * phi.cos()) + e2 * (rz * s * phi.sin()));
        }
    }
    let north = v.len() as u32;
    v.push(b + u * cap);
    let id = |r: usize, j: usize| (1 + r * segments + j % segments) as u32;
    let mut f = Vec::with_capacity(2 * segments * rings);
    for j in 0..segments {
        f.push([0, id(0, j + 1), id(0, j)]);
    }
    for r in 0..rings - 1 {
        for j in 0..segments {
            f.push([id(r, j), id(r, j + 1), id(r + 1, j + 1)]);
            f.push([id(r, j), id(r + 1, j + 1), id(r + 1, j)]);
        }
    }
    for j in 0..segments {
        f.push([north, id(rings - 1, j), id(rings - 1, j + 1)]);
    }
    build(v, f)
}

/// Joint names of [`humanoid`], in skeleton order.
pub const HUMANOID_JOINTS: [&str; 12] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "l_shoulder",
    "l_elbow",
    "r_shoulder",
    "r_elbow",
    "l_hip",
    "l_knee",
    "r_hip",
    "r_knee",
];

/// A 1.8 m tall, y-up, T-posed human made of one elliptic capsule per joint,
/// skinned with smooth blends across each joint. The face count is close
/// to `target_faces`.
pub fn humanoid(target_faces: usize) -> SkinnedModel {
    let y = Vec3::y();
    let x = Vec3::x();
    let lim = |s: f64, t: f64| {
        Some(JointBounds {
            lower: [-s, -s, -t],
            upper: [s, s, t],
        })
    };
    #[rustfmt::skip]
    let spec: [(usize, Option<usize>, Vec3, Vec3); 12] = [
        (0, None, Vec3::new(0.0, 0.95, 0.0), y),
        (1, Some(0), Vec3::new(0.0, 0.10, 0.0), y),
        (2, Some(1), Vec3::new(0.0, 0.20, 0.0), y),
        (3, Some(2), Vec3::new(0.0, 0.25, 0.0), y),
        (4, Some(2), Vec3::new(0.19, 0.17, 0.0), x),
        (5, Some(4), Vec3::new(0.28, 0.0, 0.0), x),
        (6, Some(2), Vec3::new(-0.19, 0.17, 0.0), -x),
        (7, Some(6), Vec3::new(-0.28, 0.0, 0.0), -x),
        (8, Some(0), Vec3::new(0.09, -0.05, 0.0), -y),
        (9, Some(8), Vec3::new(0.0, -0.40, 0.0), -y),
        (10, Some(0), Vec3::new(-0.09, -0.05, 0.0), -y),
        (11, Some(10), Vec3::new(0.0, -0.40, 0.0), -y),
    ];
    let joints: Vec<Joint> = spec
        .iter()
        .map(|&(i, parent, offset, axis)| Joint {
            name: HUMANOID_JOINTS[i].into(),
            parent,
            offset,
            twist_axis: axis,
            bounds: if parent.is_some() { lim(1.5, 1.5) } else { None },
        })
        .collect();
    let skeleton = Skeleton::new(joints).expect("humanoid skeleton is valid");
    let rest = skeleton.rest_positions();

    // Per joint: segment start, end, radii (x-ish, z-ish) and cap length.
    let p = |v: [f64; 3]| Vec3::new(v[0], v[1], v[2]);
    #[rustfmt::skip]
    let parts: [(usize, Vec3, Vec3, f64, f64, f64); 12] = [
        (0, p([0.0, 0.86, 0.0]), p([0.0, 1.05, 0.0]), 0.16, 0.11, 0.06),
        (1, p([0.0, 1.05, 0.0]), p([0.0, 1.25, 0.0]), 0.15, 0.10, 0.05),
        (2, p([0.0, 1.25, 0.0]), p([0.0, 1.43, 0.0]), 0.17, 0.11, 0.06),
        (3, p([0.0, 1.56, 0.0]), p([0.0, 1.71, 0.0]), 0.085, 0.10, 0.09),
        (4, p([0.19, 1.42, 0.0]), p([0.47, 1.42, 0.0]), 0.045, 0.05, 0.04),
        (5, p([0.47, 1.42, 0.0]), p([0.72, 1.42, 0.0]), 0.032, 0.045, 0.04),
        (6, p([-0.19, 1.42, 0.0]), p([-0.47, 1.42, 0.0]), 0.045, 0.05, 0.04),
        (7, p([-0.47, 1.42, 0.0]), p([-0.72, 1.42, 0.0]), 0.032, 0.045, 0.04),
        (8, p([0.09, 0.90, 0.0]), p([0.09, 0.50, 0.0]), 0.07, 0.075, 0.05),
        (9, p([0.09, 0.50, 0.0]), p([0.09, 0.05, 0.0]), 0.045, 0.06, 0.05),
        (10, p([-0.09, 0.90, 0.0]), p([-0.09, 0.50, 0.0]), 0.07, 0.075, 0.05),
        (11, p([-0.09, 0.50, 0.0]), p([-0.09, 0.05, 0.0]), 0.045, 0.06, 0.05),
    ];
    let area = |&(_, a, b, rx, rz, cap): &(usize, Vec3, Vec3, f64, f64, f64)| {
        let circ = PI * (rx + rz);
        ((b - a).norm() + 2.0 * cap, circ)
    };
    let total: f64 = parts.iter().map(|q| { let (l, c) = area(q); l * c }).sum();
    let mut meshes = Vec::new();
    let mut weights = Vec::new();
    for part in &parts {
        let &(j, a, b, rx, rz, cap) = part;
        let (l, c) = area(part);
        let faces = target_faces as f64 * l * c / total;
        // Square-ish elements: segments / rings ~ circumference / length.
        let segments = ((faces / 2.0 * c / l).sqrt().round() as usize).max(8);
        let rings = ((faces / (2.0 * segments as f64)).round() as usize).max(8);
        let cap_rings = (rings as f64 * cap / l).round().max(2.0) as usize;
        let rings = rings.max(2 * cap_rings + 2);
        let m = capsule(a, b, rx, rz, cap, rings, cap_rings, segments);
        let axis = (b - a).normalize();
        let children: Vec<usize> = (0..12).filter(|&c| skeleton.joints[c].parent == Some(j)).collect();
        for q in m.vertices() {
            let mut row: Vec<(u32, f64)> = Vec::new();
            let blend = 0.08;
            if let Some(par) = skeleton.joints[j].parent {
                let d = (q - rest[j]).dot(&axis);
                if d < blend {
                    row.push((par as u32, 0.5 * (1.0 - d / blend).min(1.0)));
                }
            }
            for &c in &children {
                // Only children sitting on the segment's far end blend here.
                if (rest[c] - b).norm() > 0.1 {
                    continue;
                }
                let d = (rest[c] - q).dot(&axis);
                if d < blend {
                    row.push((c as u32, 0.5 * (1.0 - d / blend).min(1.0)));
                }
            }
            let others: f64 = row.iter().map(|e| e.1).sum();
            row.insert(0, (j as u32, 1.0 - others));
            let s: f64 = row.iter().map(|e| e.1).sum();
            for e in &mut row {
                e.1 /= s;
            }
            weights.push(row);
        }
        meshes.push(m);
    }
    SkinnedModel::new(merge(&meshes), skeleton, weights).expect("humanoid model is valid")
}
