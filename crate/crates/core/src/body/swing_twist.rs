use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::geom::{exp_map, Quat, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingTwist {
    pub swing: Quat,
    /// Radians in (-pi, pi].
    pub twist_angle: f64,
    /// The rotation was a 180° swing with no axial component; the twist is
    /// undefined and reported as 0.
    pub degenerate: bool,
}

/// Splits `q` into `swing * twist(axis, angle)`, where the twist is the
/// projection of `q` onto rotations about `axis`.
pub fn swing_twist_decompose(q: &Quat, axis: &Vec3) -> SwingTwist {
    let qi = q.as_ref();
    let v = qi.imag();
    let along = v.dot(axis);
    let proj = axis * along;
    let n = (qi.w * qi.w + along * along).sqrt();
    if n <= 1e-15 {
        return SwingTwist {
            swing: *q,
            twist_angle: 0.0,
            degenerate: true,
        };
    }
    // Pure twist up to rounding: keep q itself so the swing is exactly identity.
    if (v - proj).norm() <= 4.0 * f64::EPSILON * v.norm().max(f64::MIN_POSITIVE) {
        let (w, s) = if qi.w < 0.0 { (-qi.w, -along) } else { (qi.w, along) };
        let mut angle = 2.0 * s.atan2(w);
        if angle <= -PI {
            angle += 2.0 * PI;
        }
        return SwingTwist {
            swing: Quat::identity(),
            twist_angle: angle,
            degenerate: false,
        };
    }
    let twist = UnitQuaternion::new_unchecked(Quaternion::new(qi.w / n, proj.x / n, proj.y / n, proj.z / n));
    let swing = q * twist.inverse();
    let (w, s) = if qi.w < 0.0 { (-qi.w, -along) } else { (qi.w, along) };
    let mut angle = 2.0 * s.atan2(w);
    if angle <= -PI {
        angle += 2.0 * PI;
    }
    SwingTwist {
        swing,
        twist_angle: angle,
        degenerate: false,
    }
}

/// Rotation of `angle` radians about unit `axis`.
pub fn twist_quat(axis: &Vec3, angle: f64) -> Quat {
    let (s, c) = (0.5 * angle).sin_cos();
    UnitQuaternion::new_unchecked(Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s))
}

/// Orthonormal pair spanning the plane orthogonal to `axis`.
pub fn swing_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let a = axis.abs();
    let e = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let b1 = axis.cross(&e).normalize();
    let b2 = axis.cross(&b1);
    (b1, b2)
}

/// Swing rotation exp(s1 b1 + s2 b2) for the given twist axis.
pub fn swing_quat(axis: &Vec3, swing: [f64; 2]) -> Quat {
    if swing == [0.0, 0.0] {
        return Quat::identity();
    }
    let (b1, b2) = swing_basis(axis);
    exp_map(&(b1 * swing[0] + b2 * swing[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::quat_distance;
    use proptest::prelude::*;

    #[test]
    fn pure_twist_has_identity_swing() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let q = twist_quat(&axis, 40f64.to_radians());
        let st = swing_twist_decompose(&q, &axis);
        assert_eq!(st.swing, Quat::identity());
        assert!((st.twist_angle - 40f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn identity_decomposes_to_identity() {
        let st = swing_twist_decompose(&Quat::identity(), &Vec3::z());
        assert_eq!(st.swing, Quat::identity());
        assert_eq!(st.twist_angle, 0.0);
        assert!(!st.degenerate);
    }

    #[test]
    fn half_turn_swing_is_flagged() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(0.0, 1.0, 0.0, 0.0));
        let st = swing_twist_decompose(&q, &Vec3::z());
        assert!(st.degenerate);
        assert_eq!(st.twist_angle, 0.0);
    }

    #[test]
    fn swing_has_no_axial_component() {
        let axis = Vec3::y();
        let q = exp_map(&Vec3::new(0.3, 0.7, -0.2));
        let st = swing_twist_decompose(&q, &axis);
        assert!(st.swing.imag().dot(&axis).abs() < 1e-15);
    }

    #[test]
    fn swing_basis_is_orthonormal() {
        for a in [Vec3::x(), Vec3::y(), -Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
            let (b1, b2) = swing_basis(&a);
            assert!(b1.dot(&a).abs() < 1e-15 && b2.dot(&a).abs() < 1e-15);
            assert!((b1.norm() - 1.0).abs() < 1e-15 && (b2.norm() - 1.0).abs() < 1e-15);
            assert!((b1.cross(&b2) - a).norm() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn round_trip(w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                      ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0) {
            let c = nalgebra::Vector4::new(x, y, z, w);
            prop_assume!(c.norm() > 1e-3);
            let axis = Vec3::new(ax, ay, az);
            prop_assume!(axis.norm() > 1e-3);
            let axis = axis.normalize();
            let q = UnitQuaternion::from_quaternion(Quaternion::from(c));
            let st = swing_twist_decompose(&q, &axis);
            prop_assume!(!st.degenerate);
            let back = st.swing * twist_quat(&axis, st.twist_angle);
            prop_assert!(quat_distance(&back, &q) < 1e-12);
            prop_assert!(st.twist_angle > -PI && st.twist_angle <= PI);
        }
    }
}
