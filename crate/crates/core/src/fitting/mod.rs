//! Fitting the skinned body model to captured frames: pose optimization,
//! shape refinement and frame-to-frame pose tracking.

mod gmm;
mod pose;
mod shape;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{SpatialIndex, TriMesh};
use crate::tracking::TrackedSequence;

pub use gmm::{fit_gmm, gmm_logprob, GmmComponent, PosePriorGMM};
pub use pose::fit_pose;
pub use shape::{adapt_shape, ShapeResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsEnforcement {
    /// Project every step back into the bounds.
    Clamp,
    /// Log-barrier term in the energy; steps never leave the interior.
    Barrier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    /// Correspondence distance gate. `None` means 5% of the frame's
    /// bounding-box diagonal.
    pub max_corr_dist: Option<f64>,
    pub max_normal_angle: f64,
    pub prior_weight: f64,
    pub laplacian_weight: f64,
    pub bounds: BoundsEnforcement,
    pub max_iters: usize,
    /// Stop when an accepted step moves the vertices by less than this RMS
    /// distance (m).
    pub convergence_tol: f64,
    /// Pose/shape alternations in [`track_poses`]; 0 disables shape
    /// refinement.
    pub shape_rounds: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            max_corr_dist: None,
            max_normal_angle: 60.0,
            prior_weight: 1e-3,
            laplacian_weight: 1.0,
            bounds: BoundsEnforcement::Clamp,
            max_iters: 50,
            convergence_tol: 1e-8,
            shape_rounds: 2,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")))
            }
        };
        nonneg("prior_weight", self.prior_weight)?;
        nonneg("laplacian_weight", self.laplacian_weight)?;
        nonneg("convergence_tol", self.convergence_tol)?;
        if !(self.max_normal_angle > 0.0) {
            return Err(Error::InvalidParameter("max_normal_angle must be positive".into()));
        }
        if let Some(d) = self.max_corr_dist {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidParameter(format!("max_corr_dist must be positive, got {d}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    fn gate(&self, frame: &TriMesh) -> f64 {
        self.max_corr_dist.unwrap_or_else(|| 0.05 * frame.bbox_diagonal())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub pose: SwingTwistPose,
    pub model: SkinnedModel,
    /// RMS distance from the posed model's vertices to the frame surface.
    pub residual: f64,
    /// Energy before and after each accepted step.
    pub energy: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

/// RMS distance from every vertex of `posed` to the surface of `frame`.
pub fn model_to_frame_rms(posed: &TriMesh, frame: &SpatialIndex) -> f64 {
    let d: Vec<f64> = posed
        .vertices()
        .par_iter()
        .map(|p| frame.closest_point(p).map(|s| s.distance * s.distance).unwrap_or(0.0))
        .collect();
    (d.iter().sum::<f64>() / d.len().max(1) as f64).sqrt()
}

/// One point-to-plane constraint from a model vertex to the frame.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PlaneTarget {
    pub vertex: u32,
    pub point: Vec3,
    pub normal: Vec3,
}

/// Model-vertex to frame-surface closest points, gated by distance and
/// the angle between the model vertex normal and the frame face normal.
pub(crate) fn forward_targets(
    posed: &TriMesh,
    frame: &SpatialIndex,
    frame_normals: &[Vec3],
    gate: f64,
    max_angle_deg: f64,
) -> Vec<PlaneTarget> {
    let cos_gate = max_angle_deg.to_radians().cos();
    let normals = posed.vertex_normals();
    posed
        .vertices()
        .par_iter()
        .enumerate()
        .filter_map(|(v, p)| {
            let hit = frame.closest_point_within(p, gate)?;
            let n = frame_normals[hit.face as usize];
            (normals[v].dot(&n) >= cos_gate).then_some(PlaneTarget {
                vertex: v as u32,
                point: hit.point,
                normal: n,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PoseTrack {
    /// Final (possibly shape-adapted) model.
    pub model: SkinnedModel,
    /// One result per frame. Failed frames keep the last good pose.
    pub fits: Vec<FitResult>,
    /// Frames whose fit failed, with the error message.
    pub failures: Vec<(usize, String)>,
    pub shape_rounds: Vec<ShapeResult>,
}

fn fit_chain(
    model: &SkinnedModel,
    frames: &[&TriMesh],
    inits: &dyn Fn(usize, &SwingTwistPose) -> SwingTwistPose,
    init0: &SwingTwistPose,
    prior: Option<&PosePriorGMM>,
    params: &FitParams,
    failures: &mut Vec<(usize, String)>,
) -> Vec<FitResult> {
    let mut out: Vec<FitResult> = Vec::with_capacity(frames.len());
    let mut last = init0.clone();
    for (t, frame) in frames.iter().enumerate() {
        let init = inits(t, &last);
        match fit_pose(model, frame, &init, prior, params) {
            Ok(r) => {
                last = r.pose.clone();
                out.push(r);
            }
            Err(e) => {
                warn!("frame {t}: pose fit failed: {e}");
                failures.push((t, e.to_string()));
                let residual = crate::body::skin(model, &last)
                    .map(|m| model_to_frame_rms(&m, &SpatialIndex::new(frame)))
                    .unwrap_or(f64::NAN);
                out.push(FitResult {
                    pose: last.clone(),
                    model: model.clone(),
                    residual,
                    energy: Vec::new(),
                    iterations: 0,
                    converged: false,
                });
            }
        }
    }
    out
}

/// Fits every frame in order, each from the previous frame's pose, then
/// alternates shape refinement over all frames with one pose re-fit.
/// Fails only when no frame at all could be fitted.
pub fn track_poses(
    model: &SkinnedModel,
    tracked: &TrackedSequence,
    init0: &SwingTwistPose,
    prior: Option<&PosePriorGMM>,
    params: &FitParams,
) -> Result<PoseTrack> {
    let frames: Vec<&TriMesh> = tracked.frames.iter().map(|f| &f.mesh).collect();
    track_pose_frames(model, &frames, init0, prior, params)
}

pub fn track_pose_frames(
    model: &SkinnedModel,
    frames: &[&TriMesh],
    init0: &SwingTwistPose,
    prior: Option<&PosePriorGMM>,
    params: &FitParams,
) -> Result<PoseTrack> {
    params.validate()?;
    init0.validate(&model.skeleton).or_else(|e| match e {
        // Out-of-bounds starts are clamped by fit_pose.
        Error::InvalidPose(_) => Ok(()),
        e => Err(e),
    })?;
    let mut failures = Vec::new();
    let mut fits = fit_chain(model, frames, &|_, last| last.clone(), init0, prior, params, &mut failures);
    if !frames.is_empty() && failures.len() == frames.len() {
        // Nothing to continue from; report the first frame's failure.
        return Err(fit_pose(model, frames[0], init0, prior, params).err().unwrap_or(Error::InitializationTooFar));
    }
    let mut current = model.clone();
    let mut rounds = Vec::new();
    for round in 0..params.shape_rounds {
        let good: Vec<(&TriMesh, SwingTwistPose)> = frames
            .iter()
            .zip(&fits)
            .enumerate()
            .filter(|(t, _)| !failures.iter().any(|f| f.0 == *t))
            .map(|(_, (m, r))| (*m, r.pose.clone()))
            .collect();
        if good.is_empty() {
            warn!("no successfully fitted frames; skipping shape refinement");
            break;
        }
        let refs: Vec<(&TriMesh, &SwingTwistPose)> = good.iter().map(|(m, p)| (*m, p)).collect();
        let shaped = adapt_shape(&current, &refs, params)?;
        log::info!(
            "shape round {round}: residual {:.3e} -> {:.3e}",
            shaped.residual_before,
            shaped.residual_after
        );
        current = shaped.model.clone();
        rounds.push(shaped);
        failures.clear();
        let previous: Vec<SwingTwistPose> = fits.iter().map(|r| r.pose.clone()).collect();
        fits = fit_chain(&current, frames, &|t, _| previous[t].clone(), init0, prior, params, &mut failures);
    }
    for r in &mut fits {
        r.model = current.clone();
    }
    Ok(PoseTrack {
        model: current,
        fits,
        failures,
        shape_rounds: rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{skin, JointPose};
    use crate::synthetic;

    fn no_shape() -> FitParams {
        FitParams { shape_rounds: 0, ..FitParams::default() }
    }

    #[test]
    fn static_sequence_keeps_the_first_pose() {
        let model = synthetic::humanoid(3000);
        let mut p = model.zero_pose();
        p.joints[4] = JointPose::from_scalars([0.2, -0.1, 0.3]);
        p.joints[9] = JointPose::from_scalars([0.0, 0.4, 0.0]);
        let frame = skin(&model, &p).unwrap();
        let frames = vec![&frame; 5];
        let track = track_pose_frames(&model, &frames, &p, None, &FitParams::default()).unwrap();
        assert!(track.failures.is_empty());
        assert_eq!(track.fits.len(), 5);
        for r in &track.fits {
            for (a, b) in r.pose.scalars().iter().zip(p.scalars()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn smooth_trajectory_is_recovered() {
        let model = synthetic::humanoid(6000);
        let truth: Vec<SwingTwistPose> = (0..8)
            .map(|t| {
                let s = t as f64 * 0.04;
                let mut p = model.zero_pose();
                p.joints[4] = JointPose::from_scalars([0.1 + s, -0.5 * s, 0.2]);
                p.joints[5] = JointPose::from_scalars([0.0, 0.3 + s, 0.1]);
                p.joints[8] = JointPose::from_scalars([-s, 0.1, 0.0]);
                p.joints[9] = JointPose::from_scalars([0.0, 2.0 * s, 0.0]);
                p.root_translation = Vec3::new(0.01 * t as f64, 0.0, 0.0);
                p
            })
            .collect();
        let meshes: Vec<TriMesh> = truth.iter().map(|p| skin(&model, p).unwrap()).collect();
        let frames: Vec<&TriMesh> = meshes.iter().collect();
        let track = track_pose_frames(&model, &frames, &model.zero_pose(), None, &no_shape()).unwrap();
        for (r, p) in track.fits.iter().zip(&truth) {
            let worst = r
                .pose
                .scalars()
                .iter()
                .zip(p.scalars())
                .map(|(a, b)| (a - b).abs().to_degrees())
                .fold(0.0, f64::max);
            assert!(worst < 0.5, "{worst}");
        }
    }

    #[test]
    fn prior_settles_an_occluded_limb() {
        // The left forearm is cut from the frame, so only the prior decides
        // the elbow. Two modes for the elbow; the start is nearer the first.
        let model = synthetic::humanoid(3000);
        let mut p = model.zero_pose();
        p.joints[4] = JointPose::from_scalars([0.1, 0.2, 0.0]);
        let full = skin(&model, &p).unwrap();
        let faces: Vec<[u32; 3]> = full
            .faces()
            .iter()
            .copied()
            .filter(|f| f.iter().all(|&v| model.weights[v as usize].iter().all(|&(j, w)| j != 5 || w == 0.0)))
            .collect();
        assert!(faces.len() < full.face_count());
        let frame = TriMesh::new(full.vertices().to_vec(), faces).unwrap();

        let sigma = 0.1;
        let base = p.scalars();
        let elbow = 3 * 4;
        let mode = |s: f64| {
            let mut m = base.clone();
            m[elbow..elbow + 3].copy_from_slice(&[s, 0.0, 0.0]);
            m
        };
        let prior = PosePriorGMM {
            components: [0.5, -0.5]
                .iter()
                .map(|&s| GmmComponent {
                    weight: 0.5,
                    mean: mode(s),
                    variance: vec![sigma * sigma; base.len()],
                })
                .collect(),
        };
        let mut init = p.clone();
        init.joints[5] = JointPose::from_scalars([0.25, 0.1, -0.1]);
        let params = FitParams { prior_weight: 1e-3, ..no_shape() };
        let track = track_pose_frames(&model, &[&frame], &init, Some(&prior), &params).unwrap();
        let got = track.fits[0].pose.joints[5].scalars();
        for (g, m) in got.iter().zip([0.5, 0.0, 0.0]) {
            assert!((g - m).abs() < 2.0 * sigma, "{got:?}");
        }
    }
}
