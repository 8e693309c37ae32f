use log::debug;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{forward_targets, model_to_frame_rms, BoundsEnforcement, FitParams, FitResult, PlaneTarget, PosePriorGMM};
use crate::body::{apply_pose_increment, pose_jacobian, skin, SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{SpatialIndex, TriMesh};

/// Weight of the log-barrier on joint bounds.
const BARRIER_WEIGHT: f64 = 1e-6;
const CHUNK: usize = 512;
/// Weight of the point-to-point part of the data term. Point-to-plane
/// alone lets near-cylindrical limbs spin freely about their axis.
const POINT_WEIGHT: f64 = 0.1;

struct Objective<'a> {
    model: &'a SkinnedModel,
    prior: Option<&'a PosePriorGMM>,
    prior_weight: f64,
    barrier: bool,
}

impl Objective<'_> {
    fn data(&self, x: &[Vec3], targets: &[PlaneTarget]) -> f64 {
        let parts: Vec<f64> = targets
            .par_chunks(CHUNK)
            .map(|c| {
                c.iter()
                    .map(|t| {
                        let d = x[t.vertex as usize] - t.point;
                        let r = t.normal.dot(&d);
                        r * r + POINT_WEIGHT * d.norm_squared()
                    })
                    .sum()
            })
            .collect();
        parts.iter().sum()
    }

    /// Prior and barrier energy with gradient and diagonal curvature over
    /// the joint scalars.
    fn extra(&self, pose: &SwingTwistPose) -> (f64, Vec<f64>, Vec<f64>) {
        let s = pose.scalars();
        let mut e = 0.0;
        let mut g = vec![0.0; s.len()];
        let mut h = vec![0.0; s.len()];
        if let (Some(p), true) = (self.prior, self.prior_weight > 0.0) {
            let (nl, pg, pc) = p.neg_log_terms(&s);
            e += self.prior_weight * nl;
            for i in 0..s.len() {
                g[i] += self.prior_weight * pg[i];
                h[i] += self.prior_weight * pc[i];
            }
        }
        if self.barrier {
            for (j, jp) in pose.joints.iter().enumerate().skip(1) {
                let Some(b) = pose.bounds_for(&self.model.skeleton, j) else { continue };
                for (k, v) in jp.scalars().into_iter().enumerate() {
                    let (du, dl) = (b.upper[k] - v, v - b.lower[k]);
                    if du <= 0.0 || dl <= 0.0 {
                        return (f64::INFINITY, g, h);
                    }
                    let i = 3 * (j - 1) + k;
                    e -= BARRIER_WEIGHT * (du.ln() + dl.ln());
                    g[i] += BARRIER_WEIGHT * (1.0 / du - 1.0 / dl);
                    h[i] += BARRIER_WEIGHT * (1.0 / (du * du) + 1.0 / (dl * dl));
                }
            }
        }
        (e, g, h)
    }
}

/// Places a pose strictly inside its bounds: clamps, then for the barrier
/// moves values off the boundary by a small fraction of the interval.
fn feasible_start(model: &SkinnedModel, pose: &SwingTwistPose, barrier: bool) -> SwingTwistPose {
    let mut p = pose.clone();
    p.clamp_to_bounds(&model.skeleton);
    if barrier {
        for j in 1..p.joints.len() {
            if let Some(b) = p.bounds_for(&model.skeleton, j).copied() {
                let mut s = p.joints[j].scalars();
                for k in 0..3 {
                    let m = 1e-3 * (b.upper[k] - b.lower[k]);
                    s[k] = s[k].clamp(b.lower[k] + m, b.upper[k] - m);
                }
                p.joints[j] = crate::body::JointPose::from_scalars(s);
            }
        }
    }
    p
}

fn rms_change(a: &[Vec3], b: &[Vec3]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len().max(1) as f64).sqrt()
}

/// Damped Gauss-Newton over root rotation, root translation and the
/// swing/twist scalars of every non-root joint. The data term pulls model
/// vertices onto the planes of their closest frame points, plus a lighter
/// pull onto the points themselves; the prior adds
/// `prior_weight * -log p(pose)`. Root joint angles are left as given.
pub fn fit_pose(
    model: &SkinnedModel,
    frame: &TriMesh,
    init: &SwingTwistPose,
    prior: Option<&PosePriorGMM>,
    params: &FitParams,
) -> Result<FitResult> {
    params.validate()?;
    if init.joints.len() != model.joint_count() {
        return Err(Error::DimensionMismatch {
            what: "pose joints",
            expected: model.joint_count(),
            found: init.joints.len(),
        });
    }
    if let Some(p) = prior {
        p.validate()?;
        if p.dim() != init.scalar_count() {
            return Err(Error::DimensionMismatch {
                what: "pose prior dimension",
                expected: init.scalar_count(),
                found: p.dim(),
            });
        }
    }
    if frame.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    let barrier = params.bounds == BoundsEnforcement::Barrier;
    let obj = Objective {
        model,
        prior,
        prior_weight: params.prior_weight,
        barrier,
    };
    let index = SpatialIndex::new(frame);
    let frame_normals = frame.face_normals();
    let gate = params.gate(frame);

    let mut pose = feasible_start(model, init, barrier);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut mu = 1e-6;
    let n = 6 + pose.scalar_count();

    for it in 0..params.max_iters {
        iterations = it + 1;
        let jac = pose_jacobian(model, &pose)?;
        let posed = model.template.with_vertices(jac.positions.clone())?;
        let targets = forward_targets(&posed, &index, &frame_normals, gate, params.max_normal_angle);
        if targets.is_empty() {
            if it == 0 {
                return Err(Error::InitializationTooFar);
            }
            break;
        }
        // Normal equations, summed per fixed-size chunk for a
        // thread-independent result.
        let partial: Vec<(DMatrix<f64>, DVector<f64>)> = targets
            .par_chunks(CHUNK)
            .map(|c| {
                let mut h = DMatrix::<f64>::zeros(n, n);
                let mut g = DVector::<f64>::zeros(n);
                let mut row = DVector::<f64>::zeros(n);
                for t in c {
                    let v = t.vertex as usize;
                    let d = jac.positions[v] - t.point;
                    let cols = jac.of(v);
                    for (k, col) in cols.iter().enumerate() {
                        row[k] = t.normal.dot(col);
                    }
                    h.syger(1.0, &row, &row, 1.0);
                    g.axpy(t.normal.dot(&d), &row, 1.0);
                    for a in 0..3 {
                        for (k, col) in cols.iter().enumerate() {
                            row[k] = col[a];
                        }
                        h.syger(POINT_WEIGHT, &row, &row, 1.0);
                        g.axpy(POINT_WEIGHT * d[a], &row, 1.0);
                    }
                }
                (h, g)
            })
            .collect();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for (ph, pg) in partial {
            h += ph;
            g += pg;
        }
        // syger only writes the lower triangle.
        h.fill_upper_triangle_with_lower_triangle();
        let (e_extra, ge, he) = obj.extra(&pose);
        for i in 0..ge.len() {
            g[6 + i] += ge[i];
            h[(6 + i, 6 + i)] += he[i];
        }
        let e0 = obj.data(&jac.positions, &targets) + e_extra;
        // The prior's negative log density may be negative, so only the
        // gradient decides.
        if g.amax() <= 1e-15 * (1.0 + e0.abs()) {
            converged = true;
            break;
        }
        let scale = (0..n).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = None;
        for _ in 0..20 {
            let mut a = h.clone();
            for i in 0..n {
                a[(i, i)] += mu * h[(i, i)].max(1e-9 * scale) + 1e-15 * scale;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut trial = apply_pose_increment(&pose, delta.as_slice());
            if !barrier {
                trial.clamp_to_bounds(&model.skeleton);
            }
            let (e_extra1, _, _) = obj.extra(&trial);
            if !e_extra1.is_finite() {
                mu *= 10.0;
                continue;
            }
            let x1 = skin(model, &trial)?;
            let e1 = obj.data(x1.vertices(), &targets) + e_extra1;
            if e1 <= e0 {
                accepted = Some((trial, x1, e1));
                mu = (mu * 0.3).max(1e-12);
                break;
            }
            mu *= 10.0;
        }
        let Some((trial, x1, e1)) = accepted else {
            debug!("fit_pose: no decreasing step at iteration {it}");
            converged = true;
            break;
        };
        trace.push((e0, e1));
        let moved = rms_change(&jac.positions, x1.vertices());
        pose = trial;
        if moved < params.convergence_tol {
            converged = true;
            break;
        }
    }
    let posed = skin(model, &pose)?;
    Ok(FitResult {
        residual: model_to_frame_rms(&posed, &index),
        pose,
        model: model.clone(),
        energy: trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::JointPose;
    use crate::synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(model: &SkinnedModel, rng: &mut ChaCha8Rng, scale: f64) -> SwingTwistPose {
        let mut p = model.zero_pose();
        for j in p.joints.iter_mut().skip(1) {
            *j = JointPose::from_scalars([0, 1, 2].map(|_| rng.gen_range(-scale..scale)));
        }
        p.root_translation = Vec3::new(0.02, -0.01, 0.03);
        p
    }

    #[test]
    fn fixed_point_is_kept() {
        let model = synthetic::humanoid(3000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&model, &mut rng, 0.25);
        let frame = skin(&model, &p).unwrap();
        let r = fit_pose(&model, &frame, &p, None, &FitParams::default()).unwrap();
        assert!(r.residual < 1e-6, "{}", r.residual);
        for (a, b) in r.pose.scalars().iter().zip(p.scalars()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn perturbed_start_recovers_pose() {
        let model = synthetic::humanoid(6000);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let p = random_pose(&model, &mut rng, 0.25);
            let frame = skin(&model, &p).unwrap();
            let mut init = p.clone();
            let s: Vec<f64> = p.scalars().iter().map(|v| v + rng.gen_range(-5f64..5.0).to_radians()).collect();
            init.set_scalars(&s);
            let r = fit_pose(&model, &frame, &init, None, &FitParams::default()).unwrap();
            for (e0, e1) in &r.energy {
                assert!(e1 <= e0);
            }
            let worst = r
                .pose
                .scalars()
                .iter()
                .zip(p.scalars())
                .map(|(a, b)| (a - b).abs().to_degrees())
                .fold(0.0, f64::max);
            assert!(worst < 0.5, "worst scalar error {worst} deg after {} iterations", r.iterations);
        }
    }

    #[test]
    fn bounds_hold_for_both_enforcements() {
        let model = synthetic::humanoid(3000);
        let mut target = model.zero_pose();
        target.joints[5] = JointPose::from_scalars([0.0, 1.45, 0.0]);
        let frame = skin(&model, &target).unwrap();
        for bounds in [BoundsEnforcement::Clamp, BoundsEnforcement::Barrier] {
            let mut init = target.clone();
            init.joints[5] = JointPose::from_scalars([0.0, 1.7, 0.0]);
            let params = FitParams { bounds, ..FitParams::default() };
            let r = fit_pose(&model, &frame, &init, None, &params).unwrap();
            r.pose.validate(&model.skeleton).unwrap();
            assert!((r.pose.joints[5].swing[1] - 1.45).abs() < 0.01, "{bounds:?} {:?}", r.pose.joints[5]);
        }
    }

    #[test]
    fn far_initialization_is_reported() {
        let model = synthetic::humanoid(2000);
        let frame = synthetic::translated(&model.template, Vec3::new(10.0, 0.0, 0.0));
        let err = fit_pose(&model, &frame, &model.zero_pose(), None, &FitParams::default()).unwrap_err();
        assert!(matches!(err, Error::InitializationTooFar));
    }
}
