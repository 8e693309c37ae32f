//! Small geometric helpers shared across modules.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

#[inline]
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation from a rotation vector (axis times angle).
#[inline]
pub fn exp_map(phi: &Vec3) -> Quat {
    UnitQuaternion::from_scaled_axis(*phi)
}

/// Rotation vector of `q`, angle in [0, pi].
pub fn log_map(q: &Quat) -> Vec3 {
    let q = canonical(q);
    let v = q.imag();
    let s = v.norm();
    if s < 1e-300 {
        return Vec3::zeros();
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Left Jacobian of the SO(3) exponential: d exp(phi) = [J_l(phi) d phi]x exp(phi).
pub fn left_jacobian(phi: &Vec3) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-8 {
        // Series: (1 - cos t)/t^2 and (t - sin t)/t^3.
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Representative with non-negative scalar part.
#[inline]
pub fn canonical(q: &Quat) -> Quat {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

/// Geodesic angle between two rotations, in [0, pi].
pub fn geodesic_angle(a: &Quat, b: &Quat) -> f64 {
    let d = a.inverse() * b;
    let v = d.imag().norm();
    2.0 * v.atan2(d.w.abs())
}

/// Distance between two unit quaternions as 4-vectors, up to sign.
pub fn quat_distance(a: &Quat, b: &Quat) -> f64 {
    let qa = a.as_ref().coords;
    let qb = b.as_ref().coords;
    (qa - qb).norm().min((qa + qb).norm())
}

/// Weighted average of rotations, sign-aligned to the highest-weight entry.
/// Returns identity when the weights are empty or cancel out.
pub fn weighted_quat_average(items: impl IntoIterator<Item = (Quat, f64)>) -> Quat {
    let items: Vec<(Quat, f64)> = items.into_iter().collect();
    let Some(pivot) = items
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ib.cmp(ia)))
        .map(|(_, (q, _))| q.as_ref().coords)
    else {
        return Quat::identity();
    };
    let mut acc = nalgebra::Vector4::zeros();
    for (q, w) in &items {
        let c = q.as_ref().coords;
        let s = if c.dot(&pivot) < 0.0 { -1.0 } else { 1.0 };
        acc += c * (s * w);
    }
    let n = acc.norm();
    if n < 1e-300 {
        return Quat::identity();
    }
    UnitQuaternion::new_unchecked(Quaternion::from(acc / n))
}

/// Unit normal of triangle (a, b, c) following the right-hand rule, with the
/// doubled area.
#[inline]
pub fn triangle_normal_area2(a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64) {
    let n = (b - a).cross(&(c - a));
    let l = n.norm();
    if l > 0.0 {
        (n / l, l)
    } else {
        (Vec3::zeros(), 0.0)
    }
}

#[inline]
pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    #[inline]
    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    #[inline]
    pub fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn diagonal(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            (self.max - self.min).norm()
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (0 inside).
    #[inline]
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    pub fn largest_axis(&self) -> usize {
        let e = self.max - self.min;
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn log_inverts_exp() {
        for phi in [
            Vec3::new(0.3, -0.2, 0.9),
            Vec3::new(1e-9, 0.0, 0.0),
            Vec3::new(0.0, 3.0, 0.0),
        ] {
            let back = log_map(&exp_map(&phi));
            assert!((back - phi).norm() < 1e-12, "{phi:?} -> {back:?}");
        }
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let phi = Vec3::new(0.4, -0.7, 0.25);
        let jl = left_jacobian(&phi);
        let r = exp_map(&phi);
        let h = 1e-6;
        for k in 0..3 {
            let mut dp = Vec3::zeros();
            dp[k] = h;
            let rp = exp_map(&(phi + dp));
            let rm = exp_map(&(phi - dp));
            // (rp * r^-1) ~ exp(h * J_l e_k)
            let wp = log_map(&(rp * r.inverse()));
            let wm = log_map(&(rm * r.inverse()));
            let fd = (wp - wm) / (2.0 * h);
            assert!((fd - jl.column(k)).norm() < 1e-8);
        }
    }

    #[test]
    fn geodesic_angle_of_known_rotation() {
        let a = Quat::from_axis_angle(&Vec3::z_axis(), 0.1);
        let b = Quat::from_axis_angle(&Vec3::z_axis(), 0.1 + PI / 6.0);
        assert!((geodesic_angle(&a, &b) - PI / 6.0).abs() < 1e-12);
        let flipped = UnitQuaternion::new_unchecked(-b.into_inner());
        assert!((geodesic_angle(&a, &flipped) - PI / 6.0).abs() < 1e-12);
    }

    #[test]
    fn quat_average_of_identical_is_identity_rotation() {
        let q = Quat::from_axis_angle(&Vec3::x_axis(), 0.7);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        let avg = weighted_quat_average([(q, 0.5), (neg, 0.3), (q, 0.2)]);
        assert!(geodesic_angle(&avg, &q) < 1e-12);
    }
}
