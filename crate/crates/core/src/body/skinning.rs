use nalgebra::{Quaternion, UnitQuaternion};
use rayon::prelude::*;

use super::swing_twist::{swing_basis, swing_quat, twist_quat};
use super::{SkinnedModel, Skeleton, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::{exp_map, left_jacobian, Quat, Vec3};
use crate::mesh::TriMesh;

#[derive(Clone, Debug, PartialEq)]
pub struct PosedJoint {
    /// Global rotation (parent, swing, twist).
    pub rotation: Quat,
    pub position: Vec3,
    pub rest_position: Vec3,
    /// Global rotation of the parent frame (root rotation for the root).
    pub parent_rotation: Quat,
    /// Parent rotation times this joint's swing: the linear-blend stage.
    pub swing_rotation: Quat,
    pub twist_axis: Vec3,
    pub twist_angle: f64,
    /// Swing exponential coordinates in world rest axes.
    pub swing_vector: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kinematics {
    pub joints: Vec<PosedJoint>,
    pub root_translation: Vec3,
}

/// Global joint frames: parent global, then rest offset, swing and twist.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &SwingTwistPose) -> Result<Kinematics> {
    if pose.joints.len() != skeleton.len() {
        return Err(Error::DimensionMismatch {
            what: "pose joints",
            expected: skeleton.len(),
            found: pose.joints.len(),
        });
    }
    let rest = skeleton.rest_positions();
    let mut out: Vec<Option<PosedJoint>> = vec![None; skeleton.len()];
    for i in skeleton.topological_order() {
        let j = &skeleton.joints[i];
        let jp = &pose.joints[i];
        let (pr, pos) = match j.parent {
            Some(p) => {
                let par = out[p].as_ref().expect("parents come first");
                (par.rotation, par.position + par.rotation * j.offset)
            }
            None => (pose.root_rotation, pose.root_rotation * j.offset + pose.root_translation),
        };
        let (b1, b2) = swing_basis(&j.twist_axis);
        let swing = swing_quat(&j.twist_axis, jp.swing);
        let sr = pr * swing;
        out[i] = Some(PosedJoint {
            rotation: sr * twist_quat(&j.twist_axis, jp.twist),
            position: pos,
            rest_position: rest[i],
            parent_rotation: pr,
            swing_rotation: sr,
            twist_axis: j.twist_axis,
            twist_angle: jp.twist,
            swing_vector: b1 * jp.swing[0] + b2 * jp.swing[1],
        });
    }
    Ok(Kinematics {
        joints: out.into_iter().map(|j| j.unwrap()).collect(),
        root_translation: pose.root_translation,
    })
}

/// Unit dual quaternion as (real, dual) parts.
#[derive(Clone, Copy, Debug)]
struct DualQuat {
    r: Quaternion<f64>,
    d: Quaternion<f64>,
}

impl DualQuat {
    /// Rotation `angle` about `axis` through `center`.
    fn twist(axis: &Vec3, angle: f64, center: &Vec3) -> Self {
        let r = twist_quat(axis, angle);
        let t = center - r * center;
        DualQuat {
            r: *r.as_ref(),
            d: Quaternion::from_imag(t) * *r.as_ref() * 0.5,
        }
    }

    /// d/d(angle) of [`DualQuat::twist`].
    fn twist_derivative(axis: &Vec3, angle: f64, center: &Vec3) -> Self {
        let r = twist_quat(axis, angle);
        let rq = *r.as_ref();
        let t = center - r * center;
        let dr = Quaternion::from_imag(*axis) * rq * 0.5;
        let dt = -axis.cross(&(center - t));
        DualQuat {
            r: dr,
            d: Quaternion::from_imag(dt) * rq * 0.5 + Quaternion::from_imag(t) * dr * 0.5,
        }
    }
}

/// Weighted dual-quaternion blend applied to `y`, optionally with the
/// derivative with respect to one influence's angle.
struct Blend {
    c0: Quaternion<f64>,
    ce: Quaternion<f64>,
    norm: f64,
}

impl Blend {
    fn new(parts: &[(DualQuat, f64)]) -> Self {
        let pivot = parts
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ib.cmp(ia)))
            .map(|(_, p)| p.0.r)
            .unwrap();
        let mut br = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        let mut bd = br;
        for (dq, w) in parts {
            let s = if dq.r.coords.dot(&pivot.coords) < 0.0 { -w } else { *w };
            br += dq.r * s;
            bd += dq.d * s;
        }
        let norm = br.norm();
        Blend {
            c0: br / norm,
            ce: bd / norm,
            norm,
        }
    }

    fn apply(&self, y: &Vec3) -> Vec3 {
        let rot = UnitQuaternion::new_unchecked(self.c0);
        let t = (self.ce * self.c0.conjugate()).imag() * 2.0;
        rot * y + t
    }

    /// Derivative of `apply(y)` for blend-input derivatives (dBr, dBd).
    fn derivative(&self, y: &Vec3, dbr: Quaternion<f64>, dbd: Quaternion<f64>) -> Vec3 {
        let dn = self.c0.coords.dot(&dbr.coords);
        let dc0 = (dbr - self.c0 * dn) / self.norm;
        let dce = (dbd - self.ce * dn) / self.norm;
        let yq = Quaternion::from_imag(*y);
        let drot = (dc0 * yq * self.c0.conjugate() + self.c0 * yq * dc0.conjugate()).imag();
        let dt = (dce * self.c0.conjugate() + self.ce * dc0.conjugate()).imag() * 2.0;
        drot + dt
    }
}

fn sign_towards(r: &Quaternion<f64>, pivot: &Quaternion<f64>) -> f64 {
    if r.coords.dot(&pivot.coords) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn twist_parts(kin: &Kinematics, row: &[(u32, f64)]) -> Vec<(DualQuat, f64)> {
    row.iter()
        .map(|&(j, w)| {
            let pj = &kin.joints[j as usize];
            (DualQuat::twist(&pj.twist_axis, pj.twist_angle, &pj.rest_position), w)
        })
        .collect()
}

/// Linear blend of the swing-stage transforms, written as a displacement so
/// identity frames return `y` exactly.
#[inline]
fn swing_stage(kin: &Kinematics, row: &[(u32, f64)], y: &Vec3) -> Vec3 {
    y + row.iter().fold(Vec3::zeros(), |acc, &(j, w)| {
        let pj = &kin.joints[j as usize];
        let d = y - pj.rest_position;
        acc + (pj.swing_rotation * d - d + (pj.position - pj.rest_position)) * w
    })
}

fn skin_vertex(kin: &Kinematics, row: &[(u32, f64)], y: &Vec3) -> Vec3 {
    let twisted = if row.iter().all(|&(j, _)| kin.joints[j as usize].twist_angle == 0.0) {
        *y
    } else {
        Blend::new(&twist_parts(kin, row)).apply(y)
    };
    swing_stage(kin, row, &twisted)
}

/// Hybrid skinning: per-vertex dual-quaternion blend of joint twists in
/// rest space, then linear blending of the swing-and-ancestor transforms.
pub fn skin(model: &SkinnedModel, pose: &SwingTwistPose) -> Result<TriMesh> {
    let kin = forward_kinematics(&model.skeleton, pose)?;
    let v: Vec<Vec3> = model
        .template
        .vertices()
        .par_iter()
        .zip(&model.weights)
        .map(|(y, row)| skin_vertex(&kin, row, y))
        .collect();
    model.template.with_vertices(v)
}

/// Plain linear blend skinning with full joint transforms, as a reference.
pub fn skin_lbs(model: &SkinnedModel, pose: &SwingTwistPose) -> Result<TriMesh> {
    let kin = forward_kinematics(&model.skeleton, pose)?;
    let v: Vec<Vec3> = model
        .template
        .vertices()
        .par_iter()
        .zip(&model.weights)
        .map(|(y, row)| {
            y + row.iter().fold(Vec3::zeros(), |acc, &(j, w)| {
                let pj = &kin.joints[j as usize];
                let d = y - pj.rest_position;
                acc + (pj.rotation * d - d + (pj.position - pj.rest_position)) * w
            })
        })
        .collect();
    model.template.with_vertices(v)
}

/// Skinned positions and their derivatives with respect to the pose
/// parameters: root rotation increment (left, 3), root translation (3), then
/// (swing 1, swing 2, twist) for every non-root joint.
#[derive(Clone, Debug)]
pub struct PoseJacobian {
    pub params: usize,
    pub positions: Vec<Vec3>,
    data: Vec<Vec3>,
}

impl PoseJacobian {
    /// Columns for vertex `v`.
    pub fn of(&self, v: usize) -> &[Vec3] {
        &self.data[v * self.params..(v + 1) * self.params]
    }

    pub fn param_count(joints: usize) -> usize {
        6 + 3 * joints.saturating_sub(1)
    }
}

/// Applies a parameter increment laid out as in [`PoseJacobian`].
pub fn apply_pose_increment(pose: &SwingTwistPose, delta: &[f64]) -> SwingTwistPose {
    let mut out = pose.clone();
    let w = Vec3::new(delta[0], delta[1], delta[2]);
    out.root_rotation = UnitQuaternion::new_normalize((exp_map(&w) * pose.root_rotation).into_inner());
    out.root_translation += Vec3::new(delta[3], delta[4], delta[5]);
    for (j, d) in out.joints.iter_mut().skip(1).zip(delta[6..].chunks_exact(3)) {
        j.swing[0] += d[0];
        j.swing[1] += d[1];
        j.twist += d[2];
    }
    out
}

pub fn pose_jacobian(model: &SkinnedModel, pose: &SwingTwistPose) -> Result<PoseJacobian> {
    pose_jacobian_for(model, pose, None)
}

/// As [`pose_jacobian`], restricted to the listed vertices (others get zero
/// rows but correct positions).
pub(crate) fn pose_jacobian_for(
    model: &SkinnedModel,
    pose: &SwingTwistPose,
    subset: Option<&[bool]>,
) -> Result<PoseJacobian> {
    let sk = &model.skeleton;
    let kin = forward_kinematics(sk, pose)?;
    let anc = sk.ancestor_table();
    let nj = sk.len();
    let params = PoseJacobian::param_count(nj);
    // Per joint: world angular velocities of its three scalars.
    let omegas: Vec<[Vec3; 3]> = (0..nj)
        .map(|i| {
            let pj = &kin.joints[i];
            let (b1, b2) = swing_basis(&pj.twist_axis);
            let jl = left_jacobian(&pj.swing_vector);
            let pr = pj.parent_rotation;
            let twist_axis_world = pj.swing_rotation * pj.twist_axis;
            [pr * (jl * b1), pr * (jl * b2), twist_axis_world]
        })
        .collect();

    let rows: Vec<(Vec3, Vec<Vec3>)> = model
        .template
        .vertices()
        .par_iter()
        .zip(&model.weights)
        .enumerate()
        .map(|(v, (y, row))| {
            let mut cols = vec![Vec3::zeros(); params];
            let twisting = row.iter().any(|&(j, _)| kin.joints[j as usize].twist_angle != 0.0);
            let parts = twist_parts(&kin, row);
            let blend = Blend::new(&parts);
            let xt = if twisting { blend.apply(y) } else { *y };
            let x = swing_stage(&kin, row, &xt);
            if subset.is_some_and(|s| !s[v]) {
                return (x, Vec::new());
            }
            let images: Vec<Vec3> = row
                .iter()
                .map(|&(j, _)| {
                    let pj = &kin.joints[j as usize];
                    pj.swing_rotation * (xt - pj.rest_position) + pj.position
                })
                .collect();
            let rel = x - kin.root_translation;
            for k in 0..3 {
                cols[k] = Vec3::ith(k, 1.0).cross(&rel);
                cols[3 + k] = Vec3::ith(k, 1.0);
            }
            let pivot = parts
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ib.cmp(ia)))
                .map(|(_, p)| p.0.r)
                .unwrap();
            for i in 1..nj {
                let pi = kin.joints[i].position;
                let base = 6 + 3 * (i - 1);
                for (slot, &(j, w)) in row.iter().enumerate() {
                    let j = j as usize;
                    let arm = images[slot] - pi;
                    if j == i || anc[i][j] {
                        for k in 0..2 {
                            cols[base + k] += omegas[i][k].cross(&arm) * w;
                        }
                    }
                    if anc[i][j] {
                        cols[base + 2] += omegas[i][2].cross(&arm) * w;
                    }
                }
                // Twist stage: only when joint i influences this vertex.
                if let Some(slot) = row.iter().position(|&(j, _)| j as usize == i) {
                    let pj = &kin.joints[i];
                    let dq = DualQuat::twist_derivative(&pj.twist_axis, pj.twist_angle, &pj.rest_position);
                    let s = sign_towards(&parts[slot].0.r, &pivot) * row[slot].1;
                    let dxt = blend.derivative(y, dq.r * s, dq.d * s);
                    for &(j, w) in row {
                        cols[base + 2] += (kin.joints[j as usize].swing_rotation * dxt) * w;
                    }
                }
            }
            (x, cols)
        })
        .collect();
    let mut positions = Vec::with_capacity(rows.len());
    let mut data = Vec::with_capacity(rows.len() * params);
    for (x, cols) in rows {
        positions.push(x);
        if cols.is_empty() {
            data.extend(std::iter::repeat(Vec3::zeros()).take(params));
        } else {
            data.extend(cols);
        }
    }
    Ok(PoseJacobian {
        params,
        positions,
        data,
    })
}
