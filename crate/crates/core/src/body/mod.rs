//! Skinned human template: skeleton, swing-twist pose parameterization and
//! hybrid skinning (dual-quaternion twist, linear-blend swing).

mod io;
mod skinning;
mod swing_twist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};
use crate::mesh::TriMesh;

pub use io::{load_model, load_poses, save_model, save_poses};
pub use skinning::{
    apply_pose_increment, forward_kinematics, pose_jacobian, skin, skin_lbs, Kinematics, PoseJacobian,
    PosedJoint,
};
pub use swing_twist::{swing_basis, swing_quat, swing_twist_decompose, twist_quat, SwingTwist};

/// Maximum skinning influences per vertex.
pub const MAX_INFLUENCES: usize = 8;

/// Lower and upper limits for (swing 1, swing 2, twist), radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl JointBounds {
    pub fn contains(&self, v: &[f64; 3]) -> bool {
        (0..3).all(|k| v[k] >= self.lower[k] && v[k] <= self.upper[k])
    }

    pub fn clamp(&self, v: &mut [f64; 3]) {
        for k in 0..3 {
            v[k] = v[k].clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint (from the origin for the root).
    pub offset: Vec3,
    /// Unit twist axis in the parent-relative rest frame.
    pub twist_axis: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<JointBounds>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let s = Skeleton { joints };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::InvalidModel("skeleton has no joints".into()));
        }
        if self.joints[0].parent.is_some() {
            return Err(Error::InvalidModel(format!(
                "root must be listed first, joint '{}' has a parent",
                self.joints[0].name
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            match j.parent {
                None if i > 0 => {
                    return Err(Error::InvalidModel(format!(
                        "second root at joint {i} '{}'",
                        j.name
                    )))
                }
                Some(p) if p >= n => {
                    return Err(Error::InvalidModel(format!(
                        "joint {i} '{}' has parent {p} out of range",
                        j.name
                    )))
                }
                _ => {}
            }
            if ((j.twist_axis.norm() - 1.0).abs() > 1e-9) || !j.twist_axis.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "joint {i} '{}' twist axis is not unit length",
                    j.name
                )));
            }
            if !j.offset.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "joint {i} '{}' has a non-finite offset",
                    j.name
                )));
            }
            if let Some(b) = &j.bounds {
                if (0..3).any(|k| !(b.lower[k] <= b.upper[k])) {
                    return Err(Error::InvalidModel(format!(
                        "joint {i} '{}' has lower bounds above upper bounds",
                        j.name
                    )));
                }
            }
        }
        // Every chain must reach the root within n steps.
        for i in 0..n {
            let mut cur = i;
            let mut steps = 0;
            while let Some(p) = self.joints[cur].parent {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::InvalidModel(format!(
                        "cyclic parent chain through joint {i} '{}'",
                        self.joints[i].name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Joints ordered so that parents precede children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.joints.len();
        let mut children = vec![Vec::new(); n];
        for (i, j) in self.joints.iter().enumerate() {
            if let Some(p) = j.parent {
                children[p].push(i);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(children[i].iter().rev());
        }
        order
    }

    /// `anc[i][j]` is true when `i` is a strict ancestor of `j`.
    pub fn ancestor_table(&self) -> Vec<Vec<bool>> {
        let n = self.joints.len();
        let mut t = vec![vec![false; n]; n];
        for j in 0..n {
            let mut cur = self.joints[j].parent;
            while let Some(p) = cur {
                t[p][j] = true;
                cur = self.joints[p].parent;
            }
        }
        t
    }

    /// Rest positions of all joints (accumulated offsets).
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![Vec3::zeros(); self.joints.len()];
        for i in self.topological_order() {
            let j = &self.joints[i];
            pos[i] = match j.parent {
                Some(p) => pos[p] + j.offset,
                None => j.offset,
            };
        }
        pos
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
}

/// Swing (two exponential-map coordinates orthogonal to the twist axis) and
/// twist (radians about the axis) of one joint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointPose {
    pub swing: [f64; 2],
    pub twist: f64,
}

impl JointPose {
    pub fn scalars(&self) -> [f64; 3] {
        [self.swing[0], self.swing[1], self.twist]
    }

    pub fn from_scalars(s: [f64; 3]) -> Self {
        JointPose {
            swing: [s[0], s[1]],
            twist: s[2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwingTwistPose {
    pub root_rotation: Quat,
    pub root_translation: Vec3,
    /// One entry per skeleton joint, root included. The root's own angles
    /// are applied but never optimized; the root rotation covers them.
    pub joints: Vec<JointPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<JointBounds>>,
}

impl SwingTwistPose {
    pub fn zero(joint_count: usize) -> Self {
        SwingTwistPose {
            root_rotation: Quat::identity(),
            root_translation: Vec3::zeros(),
            joints: vec![JointPose::default(); joint_count],
            bounds: None,
        }
    }

    /// Number of optimizable joint scalars: three per non-root joint.
    pub fn scalar_count(&self) -> usize {
        3 * self.joints.len().saturating_sub(1)
    }

    /// Non-root joint scalars in joint order: (swing 1, swing 2, twist).
    pub fn scalars(&self) -> Vec<f64> {
        self.joints.iter().skip(1).flat_map(|j| j.scalars()).collect()
    }

    pub fn set_scalars(&mut self, s: &[f64]) {
        assert_eq!(s.len(), self.scalar_count());
        for (j, c) in self.joints.iter_mut().skip(1).zip(s.chunks_exact(3)) {
            *j = JointPose::from_scalars([c[0], c[1], c[2]]);
        }
    }

    /// Bounds in effect for joint `i`: the pose's own, else the skeleton's.
    pub fn bounds_for<'a>(&'a self, skeleton: &'a Skeleton, i: usize) -> Option<&'a JointBounds> {
        match &self.bounds {
            Some(b) => b.get(i),
            None => skeleton.joints.get(i).and_then(|j| j.bounds.as_ref()),
        }
    }

    /// Clamps every joint into its bounds.
    pub fn clamp_to_bounds(&mut self, skeleton: &Skeleton) {
        for i in 0..self.joints.len() {
            if let Some(b) = self.bounds_for(skeleton, i).copied() {
                let mut s = self.joints[i].scalars();
                b.clamp(&mut s);
                self.joints[i] = JointPose::from_scalars(s);
            }
        }
    }

    pub fn validate(&self, skeleton: &Skeleton) -> Result<()> {
        if self.joints.len() != skeleton.len() {
            return Err(Error::DimensionMismatch {
                what: "pose joints",
                expected: skeleton.len(),
                found: self.joints.len(),
            });
        }
        if let Some(b) = &self.bounds {
            if b.len() != skeleton.len() {
                return Err(Error::DimensionMismatch {
                    what: "pose bounds",
                    expected: skeleton.len(),
                    found: b.len(),
                });
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            let s = j.scalars();
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidPose(format!("joint {i} has non-finite angles")));
            }
            if Vec3::new(s[0], s[1], 0.0).norm() >= std::f64::consts::PI {
                return Err(Error::InvalidPose(format!(
                    "joint {i} '{}' swing magnitude reaches pi",
                    skeleton.joints[i].name
                )));
            }
            if let Some(b) = self.bounds_for(skeleton, i) {
                if !b.contains(&s) {
                    return Err(Error::InvalidPose(format!(
                        "joint {i} '{}' outside its bounds",
                        skeleton.joints[i].name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedModel {
    pub template: TriMesh,
    pub skeleton: Skeleton,
    /// Per vertex (joint, weight) influences.
    pub weights: Vec<Vec<(u32, f64)>>,
}

impl SkinnedModel {
    pub fn new(template: TriMesh, skeleton: Skeleton, weights: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let m = SkinnedModel {
            template,
            skeleton,
            weights,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.len()
    }

    pub fn zero_pose(&self) -> SwingTwistPose {
        SwingTwistPose::zero(self.skeleton.len())
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        validate_weights(&self.weights, self.template.vertex_count(), self.skeleton.len())
    }

    /// Same model with new template vertex positions and joint offsets.
    pub fn with_shape(&self, vertices: Vec<Vec3>, offsets: &[Vec3]) -> Result<Self> {
        let mut out = self.clone();
        out.template = self.template.with_vertices(vertices)?;
        for (j, o) in out.skeleton.joints.iter_mut().zip(offsets) {
            j.offset = *o;
        }
        Ok(out)
    }
}

pub(crate) fn validate_weights(weights: &[Vec<(u32, f64)>], vertices: usize, joints: usize) -> Result<()> {
    if weights.len() != vertices {
        return Err(Error::InvalidModel(format!(
            "{} weight rows for {vertices} vertices",
            weights.len()
        )));
    }
    for (v, row) in weights.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::InvalidModel(format!("no influences at vertex {v}")));
        }
        if row.len() > MAX_INFLUENCES {
            return Err(Error::InvalidModel(format!(
                "{} influences at vertex {v} (at most {MAX_INFLUENCES})",
                row.len()
            )));
        }
        let mut sum = 0.0;
        for (k, &(j, w)) in row.iter().enumerate() {
            if j as usize >= joints {
                return Err(Error::InvalidModel(format!(
                    "unknown joint {j} at vertex {v}"
                )));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidModel(format!("negative weight {w} at vertex {v}")));
            }
            if row[..k].iter().any(|&(o, _)| o == j) {
                return Err(Error::InvalidModel(format!("joint {j} listed twice at vertex {v}")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("weights summing to {sum} at vertex {v}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain() -> Skeleton {
        Skeleton::new(vec![
            Joint {
                name: "root".into(),
                parent: None,
                offset: Vec3::zeros(),
                twist_axis: Vec3::y(),
                bounds: None,
            },
            Joint {
                name: "a".into(),
                parent: Some(0),
                offset: Vec3::new(0.0, 1.0, 0.0),
                twist_axis: Vec3::y(),
                bounds: None,
            },
            Joint {
                name: "b".into(),
                parent: Some(1),
                offset: Vec3::new(0.0, 1.0, 0.0),
                twist_axis: Vec3::y(),
                bounds: None,
            },
        ])
        .unwrap()
    }

    #[test]
    fn cyclic_parents_are_rejected() {
        let mut s = chain();
        s.joints[1].parent = Some(2);
        let e = s.validate().unwrap_err().to_string();
        assert!(e.contains("cyclic"), "{e}");
    }

    #[test]
    fn root_must_come_first() {
        let mut s = chain();
        s.joints.swap(0, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn weight_sum_error_names_vertex() {
        let mut w = vec![vec![(0u32, 1.0)]; 10];
        w[7] = vec![(0, 0.5), (1, 0.4)];
        let e = validate_weights(&w, 10, 3).unwrap_err().to_string();
        assert!(e.contains("0.9") && e.contains("vertex 7"), "{e}");
    }

    #[test]
    fn rest_positions_accumulate() {
        let p = chain().rest_positions();
        assert_eq!(p[2], Vec3::new(0.0, 2.0, 0.0));
    }

    #[test]
    fn clamp_enforces_bounds() {
        let mut s = chain();
        s.joints[1].bounds = Some(JointBounds {
            lower: [-0.1, -0.1, -0.2],
            upper: [0.1, 0.1, 0.2],
        });
        let mut p = SwingTwistPose::zero(3);
        p.joints[1] = JointPose::from_scalars([0.5, -0.5, 0.1]);
        assert!(p.validate(&s).is_err());
        p.clamp_to_bounds(&s);
        assert_eq!(p.joints[1].scalars(), [0.1, -0.1, 0.1]);
        p.validate(&s).unwrap();
    }
}
