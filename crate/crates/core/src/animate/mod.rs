//! Pose editing and example-based synthesis: captured frames are glued to
//! the fitted template, carried along when the template is re-posed, and
//! recombined through a motion graph.

mod synth;

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{skin, swing_quat, twist_quat, Skeleton, SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::{geodesic_angle, Vec3};
use crate::mesh::{SpatialIndex, TriMesh};

pub use synth::{
    build_motion_graph, plan_synthesis, render_plan, synthesize, BlendDirective, MotionEdge, MotionGraph,
    MotionNode, SynthesisParams, SynthesisPlan, SynthesisStep,
};

/// Frame vertices farther than this fraction of the fitted mesh's bounding
/// box diagonal are reported as outliers.
pub const OUTLIER_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueEntry {
    pub face: u32,
    pub bary: [f64; 3],
    /// Signed distance along the face normal.
    pub h: f64,
}

/// Binding of every captured-frame vertex to a template triangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlueMap {
    pub entries: Vec<GlueEntry>,
    /// Connectivity of the captured frame, kept for reconstruction.
    pub faces: Vec<[u32; 3]>,
    /// Vertices farther than the outlier distance from the template.
    pub outliers: Vec<u32>,
    /// Vertices for which no nearby triangle contains the orthogonal
    /// projection; their barycentrics extrapolate the closest triangle.
    pub extrapolated: Vec<u32>,
}

impl GlueMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Frame vertices from the glued triangles of `template`.
    pub fn reconstruct(&self, template: &TriMesh) -> Result<TriMesh> {
        let faces = template.faces();
        let x = template.vertices();
        let verts = self
            .entries
            .iter()
            .map(|e| {
                let f = *faces.get(e.face as usize).ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "glued face {} out of range for a template with {} faces",
                        e.face,
                        faces.len()
                    ))
                })?;
                let [a, b, c] = f.map(|i| x[i as usize]);
                let n = (b - a).cross(&(c - a)).normalize();
                Ok(a * e.bary[0] + b * e.bary[1] + c * e.bary[2] + n * e.h)
            })
            .collect::<Result<Vec<_>>>()?;
        TriMesh::new(verts, self.faces.clone())
    }
}

/// Barycentrics of the orthogonal projection of `p` onto the plane of
/// (a, b, c), and the signed distance along the unit normal.
fn plane_projection(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<([f64; 3], f64)> {
    let e0 = b - a;
    let e1 = c - a;
    let n = e0.cross(&e1);
    let len = n.norm();
    if len < 1e-300 {
        return None;
    }
    let n = n / len;
    let d = p - a;
    let h = d.dot(&n);
    let q = d - n * h;
    let (d00, d01, d11) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));
    let (d20, d21) = (q.dot(&e0), q.dot(&e1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    Some(([1.0 - v - w, v, w], h))
}

/// Glues every vertex of `frame` to the template posed as `fitted`.
///
/// The closest triangle is preferred; when its orthogonal projection falls
/// outside it, the nearest triangle around it that does contain the
/// projection is used, so barycentrics stay non-negative and the
/// reconstruction stays exact.
pub fn build_glue_map(frame: &TriMesh, fitted: &TriMesh) -> Result<GlueMap> {
    if fitted.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    let index = SpatialIndex::new(fitted);
    let (vf_start, vf) = fitted.vertex_faces();
    let faces = fitted.faces();
    let x = fitted.vertices();
    let limit = OUTLIER_FRACTION * fitted.bbox_diagonal();
    let inside = |b: &[f64; 3]| b.iter().all(|&t| t >= -1e-12);

    let glued: Vec<(GlueEntry, bool, bool)> = frame
        .vertices()
        .par_iter()
        .map(|p| {
            let hit = index.closest_point(p)?;
            let tri = |f: u32| faces[f as usize].map(|i| x[i as usize]);
            let project = |f: u32| {
                let [a, b, c] = tri(f);
                plane_projection(p, &a, &b, &c)
            };
            let mut best: Option<(u32, [f64; 3], f64)> = None;
            if let Some((b, h)) = project(hit.face).filter(|(b, _)| inside(b)) {
                best = Some((hit.face, b, h));
            } else {
                for &v in &faces[hit.face as usize] {
                    for &f in &vf[vf_start[v as usize]..vf_start[v as usize + 1]] {
                        if let Some((b, h)) = project(f).filter(|(b, _)| inside(b)) {
                            if best.map_or(true, |(bf, _, bh)| h.abs() < bh.abs() || (h.abs() == bh.abs() && f < bf)) {
                                best = Some((f, b, h));
                            }
                        }
                    }
                }
            }
            let extrapolated = best.is_none();
            let (face, bary, h) = match best {
                Some(b) => b,
                None => {
                    let (b, h) = project(hit.face).ok_or(Error::DegenerateTriangle)?;
                    (hit.face, b, h)
                }
            };
            Ok((GlueEntry { face, bary, h }, hit.distance > limit, extrapolated))
        })
        .collect::<Result<_>>()?;

    let outliers: Vec<u32> = (0..glued.len()).filter(|&i| glued[i].1).map(|i| i as u32).collect();
    let extrapolated: Vec<u32> = (0..glued.len()).filter(|&i| glued[i].2).map(|i| i as u32).collect();
    if !outliers.is_empty() {
        warn!(
            "{} frame vertices lie more than {limit:.4} m from the template; glued anyway",
            outliers.len()
        );
    }
    Ok(GlueMap {
        entries: glued.into_iter().map(|g| g.0).collect(),
        faces: frame.faces().to_vec(),
        outliers,
        extrapolated,
    })
}

/// Glue maps for many frames at once, in parallel.
pub fn build_glue_maps(frames: &[&TriMesh], fitted: &[TriMesh]) -> Result<Vec<GlueMap>> {
    if frames.len() != fitted.len() {
        return Err(Error::DimensionMismatch {
            what: "fitted meshes",
            expected: frames.len(),
            found: fitted.len(),
        });
    }
    frames.par_iter().zip(fitted).map(|(f, m)| build_glue_map(f, m)).collect()
}

/// Re-poses a glued frame: the template is skinned at `target_pose` and
/// each frame vertex rebuilt from its triangle and that triangle's new
/// normal.
pub fn retarget(
    glue: &GlueMap,
    model: &SkinnedModel,
    source_pose: &SwingTwistPose,
    target_pose: &SwingTwistPose,
) -> Result<TriMesh> {
    for p in [source_pose, target_pose] {
        if p.joints.len() != model.joint_count() {
            return Err(Error::DimensionMismatch {
                what: "pose joints",
                expected: model.joint_count(),
                found: p.joints.len(),
            });
        }
    }
    glue.reconstruct(&skin(model, target_pose)?)
}

/// Sum of geodesic angles between corresponding local joint rotations
/// plus the root orientation angle. Root translation is ignored.
pub fn pose_distance(skeleton: &Skeleton, a: &SwingTwistPose, b: &SwingTwistPose) -> Result<f64> {
    for p in [a, b] {
        if p.joints.len() != skeleton.len() {
            return Err(Error::DimensionMismatch {
                what: "pose joints",
                expected: skeleton.len(),
                found: p.joints.len(),
            });
        }
    }
    let mut d = geodesic_angle(&a.root_rotation, &b.root_rotation);
    for (j, (ja, jb)) in skeleton.joints.iter().zip(a.joints.iter().zip(&b.joints)) {
        if ja == jb {
            continue;
        }
        let ax = &j.twist_axis;
        let qa = swing_quat(ax, ja.swing) * twist_quat(ax, ja.twist);
        let qb = swing_quat(ax, jb.swing) * twist_quat(ax, jb.twist);
        d += geodesic_angle(&qa, &qb);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{forward_kinematics, JointPose};
    use crate::geom::{exp_map, Quat};
    use crate::synthetic;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn max_dist(a: &TriMesh, b: &TriMesh) -> f64 {
        a.vertices().iter().zip(b.vertices()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)
    }

    fn offset_along_normals(m: &TriMesh, d: f64) -> TriMesh {
        let n = m.vertex_normals();
        m.with_vertices(m.vertices().iter().zip(&n).map(|(p, n)| p + n * d).collect()).unwrap()
    }

    #[test]
    fn gluing_the_template_to_itself_is_exact() {
        let model = synthetic::humanoid(2000);
        let fitted = skin(&model, &model.zero_pose()).unwrap();
        let g = build_glue_map(&fitted, &fitted).unwrap();
        for e in &g.entries {
            assert!(e.h.abs() < 1e-9);
            assert!((e.bary.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(e.bary.iter().all(|&b| b >= -1e-12));
        }
        assert!(max_dist(&g.reconstruct(&fitted).unwrap(), &fitted) < 1e-9);
        assert!(g.outliers.is_empty());
    }

    #[test]
    fn normal_offset_is_measured() {
        let sphere = synthetic::icosphere(0.3, 4);
        let frame = offset_along_normals(&sphere, 0.002);
        let g = build_glue_map(&frame, &sphere).unwrap();
        for e in &g.entries {
            assert!((e.h - 0.002).abs() < 1e-4, "{}", e.h);
        }
    }

    #[test]
    fn reconstruction_is_the_formula() {
        let sphere = synthetic::icosphere(0.3, 2);
        let frame = offset_along_normals(&synthetic::icosphere(0.3, 3), -0.004);
        let g = build_glue_map(&frame, &sphere).unwrap();
        let rec = g.reconstruct(&sphere).unwrap();
        for (e, p) in g.entries.iter().zip(rec.vertices()) {
            let [a, b, c] = sphere.triangle(e.face as usize);
            let n = sphere.face_normal(e.face as usize);
            let q = a * e.bary[0] + b * e.bary[1] + c * e.bary[2] + n * e.h;
            assert!((q - p).norm() < 1e-12);
        }
        assert!(max_dist(&rec, &frame) < 1e-9);
        assert_eq!(rec.faces(), frame.faces());
    }

    #[test]
    fn far_vertices_are_outliers() {
        let sphere = synthetic::icosphere(0.3, 2);
        let mut v = sphere.vertices().to_vec();
        v[0] *= 2.0;
        let frame = sphere.with_vertices(v).unwrap();
        let g = build_glue_map(&frame, &sphere).unwrap();
        assert_eq!(g.outliers, vec![0]);
        assert!(max_dist(&g.reconstruct(&sphere).unwrap(), &frame) < 1e-9);
    }

    #[test]
    fn bad_face_id_is_an_error() {
        let sphere = synthetic::icosphere(0.3, 1);
        let mut g = build_glue_map(&sphere, &sphere).unwrap();
        g.entries[0].face = 10_000;
        assert!(g.reconstruct(&sphere).is_err());
    }

    /// A loose garment: the template pushed out by 1.5 cm and
    /// re-tessellated by a different face budget.
    fn clothed(pose: &SwingTwistPose) -> TriMesh {
        let dressed = synthetic::humanoid(5000);
        offset_along_normals(&skin(&dressed, pose).unwrap(), 0.015)
    }

    #[test]
    fn identity_and_rigid_retargets() {
        let model = synthetic::humanoid(3000);
        let mut src = model.zero_pose();
        src.joints[4] = JointPose::from_scalars([0.2, 0.1, 0.0]);
        src.joints[9] = JointPose::from_scalars([0.0, 0.5, 0.0]);
        let frame = clothed(&src);
        let g = build_glue_map(&frame, &skin(&model, &src).unwrap()).unwrap();
        let same = retarget(&g, &model, &src, &src).unwrap();
        assert!(max_dist(&same, &frame) < 1e-6);

        let rot = exp_map(&Vec3::new(0.3, -1.1, 0.4));
        let t = Vec3::new(0.5, -0.2, 1.0);
        let mut moved = src.clone();
        moved.root_rotation = rot * src.root_rotation;
        moved.root_translation = rot * src.root_translation + t;
        let out = retarget(&g, &model, &src, &moved).unwrap();
        let expect: Vec<Vec3> = frame.vertices().iter().map(|p| rot * p + t).collect();
        let worst = out.vertices().iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn arm_raise_moves_only_the_arm() {
        let model = synthetic::humanoid(3000);
        let src = model.zero_pose();
        let frame = clothed(&src);
        let fitted = skin(&model, &src).unwrap();
        let g = build_glue_map(&frame, &fitted).unwrap();
        let mut up = src.clone();
        up.joints[4] = JointPose::from_scalars([0.0, 20f64.to_radians(), 0.0]);
        let out = retarget(&g, &model, &src, &up).unwrap();
        let ka = forward_kinematics(&model.skeleton, &src).unwrap();
        let ks = forward_kinematics(&model.skeleton, &up).unwrap();
        let only = |f: u32, joints: &[u32]| {
            model.template.faces()[f as usize]
                .iter()
                .all(|&v| model.weights[v as usize].iter().all(|&(j, w)| w == 0.0 || joints.contains(&j)))
        };
        let (mut torso, mut arm) = (0, 0);
        for (i, e) in g.entries.iter().enumerate() {
            let d = out.vertices()[i] - frame.vertices()[i];
            if only(e.face, &[0, 1, 2, 3, 8, 9, 10, 11]) {
                torso += 1;
                assert!(d.norm() < 1e-3);
            } else if only(e.face, &[4, 5]) {
                arm += 1;
                // Carried rigidly with the shoulder.
                let expect = ks.joints[4].rotation * (ka.joints[4].rotation.inverse() * (frame.vertices()[i] - ka.joints[4].position))
                    + ks.joints[4].position;
                assert!(d.norm() > 0.02);
                assert!((out.vertices()[i] - expect).norm() < 1e-6);
            }
        }
        assert!(torso > 100 && arm > 50, "{torso} {arm}");
    }

    #[test]
    fn pose_distance_examples() {
        let model = synthetic::humanoid(1000);
        let s = &model.skeleton;
        let mut a = model.zero_pose();
        a.joints[4] = JointPose::from_scalars([0.2, 0.1, 0.3]);
        assert_eq!(pose_distance(s, &a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.root_translation = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(pose_distance(s, &a, &b).unwrap(), 0.0);
        let mut c = model.zero_pose();
        c.joints[7].twist = PI / 6.0;
        assert!((pose_distance(s, &model.zero_pose(), &c).unwrap() - PI / 6.0).abs() < 1e-12);
        assert!(pose_distance(s, &a, &SwingTwistPose::zero(3)).is_err());
    }

    fn random_pose(model: &SkinnedModel, rng: &mut ChaCha8Rng) -> SwingTwistPose {
        let mut p = model.zero_pose();
        for j in p.joints.iter_mut() {
            *j = JointPose::from_scalars([0, 1, 2].map(|_| rng.gen_range(-1.0..1.0)));
        }
        p.root_rotation = exp_map(&Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.5));
        p
    }

    #[test]
    fn pose_distance_is_a_pseudometric_on_samples() {
        let model = synthetic::humanoid(1000);
        let s = &model.skeleton;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (a, b, c) = (random_pose(&model, &mut rng), random_pose(&model, &mut rng), random_pose(&model, &mut rng));
            let ab = pose_distance(s, &a, &b).unwrap();
            assert!((ab - pose_distance(s, &b, &a).unwrap()).abs() < 1e-12);
            let ac = pose_distance(s, &a, &c).unwrap();
            let cb = pose_distance(s, &c, &b).unwrap();
            assert!(ab <= ac + cb + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn glue_at_source_pose_is_exact(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = synthetic::humanoid(1500);
            let mut p = model.zero_pose();
            for j in p.joints.iter_mut().skip(1) {
                *j = JointPose::from_scalars([0, 1, 2].map(|_| rng.gen_range(-0.4..0.4)));
            }
            p.root_rotation = Quat::from_scaled_axis(Vec3::new(0.0, rng.gen_range(-3.0..3.0), 0.0));
            let fitted = skin(&model, &p).unwrap();
            let frame = offset_along_normals(&skin(&synthetic::humanoid(2500), &p).unwrap(), rng.gen_range(-0.01..0.02));
            let g = build_glue_map(&frame, &fitted).unwrap();
            prop_assert!(max_dist(&retarget(&g, &model, &p, &p).unwrap(), &frame) < 1e-6);
            for e in &g.entries {
                prop_assert!((e.bary.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
