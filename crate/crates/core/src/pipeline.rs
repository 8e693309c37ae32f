//! End-to-end orchestration (track, fit, glue, synthesize), the on-disk
//! layout of each stage's artifacts, and file summaries for `info`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::animate::{build_glue_map, build_motion_graph, synthesize, GlueMap, SynthesisParams, SynthesisPlan};
use crate::body::{load_model, load_poses, save_model, save_poses, skin, SkinnedModel, SwingTwistPose};
use crate::error::{Error, Result};
use crate::fitting::{track_poses, FitParams, PoseTrack, PosePriorGMM};
use crate::mesh::{load_mesh, save_mesh, FrameGroup, MeshSequence, SequenceManifest, TriMesh};
use crate::registration::RegistrationParams;
use crate::report::write_report;
use crate::tracking::{track_sequence, KeyframePolicy, TrackedSequence, TrackingReport, REPORT_FILE};

pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const FIT_REPORT_FILE: &str = "fit_report.json";
pub const PLAN_FILE: &str = "plan.json";

/// One JSON file describing a full run. Relative paths are resolved
/// against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sequence manifest of the captured frames.
    pub input: PathBuf,
    /// Skinned template model.
    pub model: PathBuf,
    /// Pose aligning the model with the first frame; the zero pose if absent.
    pub init_pose: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    /// Target poses for synthesis; the fitted poses (a replay) if absent.
    pub target: Option<PathBuf>,
    pub output: PathBuf,
    /// Worker threads; all cores if absent.
    pub threads: Option<usize>,
    /// Seed for randomized utilities. The pipeline stages are deterministic.
    pub seed: u64,
    pub keyframes: KeyframePolicy,
    pub overlap: usize,
    pub registration: RegistrationParams,
    pub fitting: FitParams,
    pub synthesis: SynthesisParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("sequence.json"),
            model: PathBuf::from("model.json"),
            init_pose: None,
            prior: None,
            target: None,
            output: PathBuf::from("out"),
            threads: None,
            seed: 0,
            keyframes: KeyframePolicy::every_nth(10),
            overlap: 2,
            registration: RegistrationParams::default(),
            fitting: FitParams::default(),
            synthesis: SynthesisParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: PipelineConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        c.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.model);
        fix(&mut self.output);
        for p in [&mut self.init_pose, &mut self.prior, &mut self.target].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist("input manifest", &self.input)?;
        must_exist("model", &self.model)?;
        for (what, p) in [("init pose", &self.init_pose), ("prior", &self.prior), ("target", &self.target)] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.keyframes.validate()?;
        self.registration.validate()?;
        self.fitting.validate()?;
        self.synthesis.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub frame: usize,
    pub name: String,
    pub keyframe: usize,
    pub tracking_error: f64,
    pub fit_residual: Option<f64>,
    pub fit_converged: Option<bool>,
    pub glue_outliers: Option<usize>,
}

/// Outcome of a run. Timings go to a separate file so that the report
/// itself is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: Vec<FrameSummary>,
    pub keyframes: Vec<usize>,
    pub groups: Vec<FrameGroup>,
    /// Frames tracked from two keyframes: (frame, chosen keyframe, rejected keyframe).
    pub double_tracked: Vec<(usize, usize, usize)>,
    pub synthesized_frames: usize,
    pub warnings: Vec<String>,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFrameRecord {
    pub frame: usize,
    pub name: String,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub energy: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRoundRecord {
    pub residual_before: f64,
    pub residual_after: f64,
    pub frozen_joints: Vec<usize>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub frames: Vec<FitFrameRecord>,
    pub failures: Vec<(usize, String)>,
    pub shape_rounds: Vec<ShapeRoundRecord>,
}

/// Writes the adapted model (`model.json` + `model.ply`), all poses
/// (`poses.json`), one `<name>.pose.json` per frame and `fit_report.json`.
pub fn save_fits(dir: &Path, track: &PoseTrack, names: &[String]) -> Result<FitReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_model(&track.model, dir.join("model.json"))?;
    let poses: Vec<SwingTwistPose> = track.fits.iter().map(|f| f.pose.clone()).collect();
    save_poses(&poses, dir.join("poses.json"))?;
    for (p, name) in poses.iter().zip(names) {
        save_poses(std::slice::from_ref(p), dir.join(format!("{name}.pose.json")))?;
    }
    let report = FitReport {
        frames: track
            .fits
            .iter()
            .enumerate()
            .map(|(i, f)| FitFrameRecord {
                frame: i,
                name: names[i].clone(),
                residual: f.residual,
                iterations: f.iterations,
                converged: f.converged,
                energy: f.energy.clone(),
            })
            .collect(),
        failures: track.failures.clone(),
        shape_rounds: track
            .shape_rounds
            .iter()
            .map(|s| ShapeRoundRecord {
                residual_before: s.residual_before,
                residual_after: s.residual_after,
                frozen_joints: s.frozen_joints.clone(),
                iterations: s.iterations,
            })
            .collect(),
    };
    write_report(&report, dir.join(FIT_REPORT_FILE))?;
    Ok(report)
}

/// Adapted model and per-frame poses from a fit directory.
pub fn load_fits(dir: &Path) -> Result<(SkinnedModel, Vec<SwingTwistPose>)> {
    Ok((load_model(dir.join("model.json"))?, load_poses(dir.join("poses.json"))?))
}

/// Glues every tracked frame to the model skinned at that frame's pose.
pub fn glue_frames(model: &SkinnedModel, poses: &[SwingTwistPose], frames: &[&TriMesh]) -> Result<Vec<GlueMap>> {
    if poses.len() != frames.len() {
        return Err(Error::DimensionMismatch {
            what: "fitted poses",
            expected: frames.len(),
            found: poses.len(),
        });
    }
    frames
        .par_iter()
        .zip(poses)
        .map(|(f, p)| build_glue_map(f, &skin(model, p)?))
        .collect()
}

pub fn save_glues(dir: &Path, glues: &[GlueMap], names: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    glues
        .par_iter()
        .zip(names)
        .map(|(g, n)| g.save(dir.join(format!("{n}.glue.json"))))
        .collect()
}

pub fn load_glues(dir: &Path, names: &[String]) -> Result<Vec<GlueMap>> {
    names.par_iter().map(|n| GlueMap::load(dir.join(format!("{n}.glue.json")))).collect()
}

/// Writes `synth_<i>.ply` per output frame and the plan.
pub fn save_synthesis(dir: &Path, plan: &SynthesisPlan, meshes: &[TriMesh]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    meshes
        .par_iter()
        .enumerate()
        .map(|(i, m)| save_mesh(m, dir.join(format!("synth_{i:05}.ply")), None))
        .collect::<Result<Vec<_>>>()?;
    plan.save(dir.join(PLAN_FILE))
}

/// Graph, glue and rendering for a fitted, tracked sequence.
pub fn synthesize_from(
    tracked: &TrackedSequence,
    model: &SkinnedModel,
    poses: &[SwingTwistPose],
    glues: &[GlueMap],
    target: &[SwingTwistPose],
    params: &SynthesisParams,
) -> Result<(SynthesisPlan, Vec<TriMesh>)> {
    let graph = build_motion_graph(&model.skeleton, &tracked.groups, poses, params.cost_threshold, params.blend_window)?;
    synthesize(&graph, model, glues, target, params)
}

fn stage<T>(
    report: &mut RunReport,
    name: &'static str,
    f: impl FnOnce(&mut RunReport) -> Result<T>,
) -> Result<T> {
    let t0 = Instant::now();
    info!("stage {name}");
    let r = f(report);
    report.timings.push(StageTiming {
        stage: name.into(),
        seconds: t0.elapsed().as_secs_f64(),
    });
    match r {
        Ok(v) => {
            report.completed_stages.push(name.into());
            Ok(v)
        }
        Err(e) => {
            report.failed_stage = Some(name.into());
            report.error = Some(format!("{e}"));
            Err(Error::Stage {
                stage: name,
                source: Box::new(e),
            })
        }
    }
}

/// Runs every stage in order under `config.output`:
/// `tracked/`, `fits/`, `glue/`, `synth/`, plus `run_report.json` and
/// `timings.json`. On failure the report names the failed stage and the
/// artifacts of earlier stages are left in place.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let out = config.output.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut report = RunReport::default();
    let result = pool.install(|| run_stages(config, &mut report));
    write_report(&report, out.join(RUN_REPORT_FILE))?;
    write_report(&report.timings, out.join(TIMINGS_FILE))?;
    result.map(|_| report)
}

fn run_stages(config: &PipelineConfig, report: &mut RunReport) -> Result<()> {
    let out = &config.output;
    let (seq, model, init, prior, target) = stage(report, "load", |_| {
        let seq = MeshSequence::load(&config.input)?;
        let model = load_model(&config.model)?;
        let init = match &config.init_pose {
            Some(p) => load_poses(p)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Config(format!("{} holds no pose", p.display())))?,
            None => model.zero_pose(),
        };
        let prior = config.prior.as_ref().map(PosePriorGMM::load).transpose()?;
        let target = config.target.as_ref().map(load_poses).transpose()?;
        Ok((seq, model, init, prior, target))
    })?;

    let tracked = stage(report, "track", |r| {
        let t = track_sequence(&seq, &config.keyframes, &config.registration, config.overlap)?;
        t.save(out.join("tracked"))?;
        r.keyframes = t.keyframes();
        r.groups = t.groups.clone();
        r.double_tracked = t
            .double_tracked
            .iter()
            .map(|d| (d.frame, d.chosen_keyframe, d.rejected_keyframe))
            .collect();
        r.frames = t
            .frames
            .iter()
            .map(|f| FrameSummary {
                frame: f.frame,
                name: t.names[f.frame].clone(),
                keyframe: f.keyframe,
                tracking_error: f.error,
                fit_residual: None,
                fit_converged: None,
                glue_outliers: None,
            })
            .collect();
        for f in t.frames.iter().filter(|f| !f.converged) {
            r.warnings.push(format!("frame {}: registration did not converge", f.frame));
        }
        Ok(t)
    })?;

    let (fitted_model, poses) = stage(report, "fit", |r| {
        let track = track_poses(&model, &tracked, &init, prior.as_ref(), &config.fitting)?;
        save_fits(&out.join("fits"), &track, &tracked.names)?;
        for (s, f) in r.frames.iter_mut().zip(&track.fits) {
            s.fit_residual = Some(f.residual);
            s.fit_converged = Some(f.converged);
        }
        for (t, msg) in &track.failures {
            r.warnings.push(format!("frame {t}: pose fit failed: {msg}"));
        }
        for s in &track.shape_rounds {
            if !s.frozen_joints.is_empty() {
                r.warnings.push(format!("shape refinement froze joints {:?}", s.frozen_joints));
            }
        }
        let poses = track.fits.iter().map(|f| f.pose.clone()).collect::<Vec<_>>();
        Ok((track.model, poses))
    })?;

    let glues = stage(report, "glue", |r| {
        let frames: Vec<&TriMesh> = tracked.frames.iter().map(|f| &f.mesh).collect();
        let glues = glue_frames(&fitted_model, &poses, &frames)?;
        save_glues(&out.join("glue"), &glues, &tracked.names)?;
        for (s, g) in r.frames.iter_mut().zip(&glues) {
            s.glue_outliers = Some(g.outliers.len());
            if !g.outliers.is_empty() {
                r.warnings.push(format!("frame {}: {} glue outliers", s.frame, g.outliers.len()));
            }
        }
        Ok(glues)
    })?;

    stage(report, "synth", |r| {
        let target = target.unwrap_or_else(|| poses.clone());
        let (plan, meshes) = synthesize_from(&tracked, &fitted_model, &poses, &glues, &target, &config.synthesis)?;
        save_synthesis(&out.join("synth"), &plan, &meshes)?;
        r.synthesized_frames = meshes.len();
        Ok(())
    })?;
    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(())
}

fn mesh_summary(out: &mut String, mesh: &TriMesh) {
    let bb = mesh.bounding_box();
    let topo = mesh.genus_per_component();
    let _ = writeln!(out, "vertices: {}", mesh.vertex_count());
    let _ = writeln!(out, "faces: {}", mesh.face_count());
    let _ = writeln!(
        out,
        "bbox: [{:.6}, {:.6}, {:.6}] .. [{:.6}, {:.6}, {:.6}] (diagonal {:.6})",
        bb.min.x,
        bb.min.y,
        bb.min.z,
        bb.max.x,
        bb.max.y,
        bb.max.z,
        bb.diagonal()
    );
    let _ = writeln!(out, "area: {:.6}", mesh.surface_area());
    let _ = writeln!(out, "components: {}", topo.len());
    for t in &topo {
        let kind = match t.kind.genus() {
            Some(g) => format!("closed, genus {g}"),
            None => format!("{:?}", t.kind).to_lowercase(),
        };
        let _ = writeln!(out, "  component {}: {kind}", t.component);
    }
    if mesh.importance().is_some() {
        let _ = writeln!(out, "importance mask: yes");
    }
}

fn group_table(out: &mut String, groups: &[FrameGroup]) {
    let _ = writeln!(out, "groups: {}", groups.len());
    let _ = writeln!(out, "  {:>8} {:>8} {:>8} {:>8}", "keyframe", "first", "last", "frames");
    for g in groups {
        let _ = writeln!(out, "  {:>8} {:>8} {:>8} {:>8}", g.keyframe, g.first, g.last, g.len());
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::json(path, e))
}

/// Human-readable summary of a mesh, sequence manifest, model, pose file,
/// prior, glue map, report or tracked directory.
pub fn info(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut out = String::new();
    if path.is_dir() {
        if path.join(REPORT_FILE).is_file() {
            let t = TrackedSequence::load(path)?;
            let _ = writeln!(out, "tracked sequence: {} frames at {} fps", t.frames.len(), t.frame_rate);
            group_table(&mut out, &t.groups);
            for g in &t.groups {
                let m = &t.frames[g.keyframe].mesh;
                let _ = writeln!(out, "  keyframe {}: {} vertices, {} faces", g.keyframe, m.vertex_count(), m.face_count());
            }
            let worst = t.errors().into_iter().fold(0.0, f64::max);
            let _ = writeln!(out, "double tracked: {}", t.double_tracked.len());
            let _ = writeln!(out, "max tracking error: {worst:.3e} m");
            return Ok(out);
        }
        if path.join(RUN_REPORT_FILE).is_file() {
            return info(path.join(RUN_REPORT_FILE));
        }
        return Err(Error::UnknownFormat(format!("{}: directory without a known report", path.display())));
    }
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("ply") | Some("obj") => {
            let m = load_mesh(path, None)?;
            let _ = writeln!(out, "mesh: {}", path.display());
            mesh_summary(&mut out, &m);
        }
        Some("json") => {
            let v = read_json(path)?;
            let has = |k: &str| v.get(k).is_some();
            if has("skeleton") && has("weights") {
                let m = load_model(path)?;
                let _ = writeln!(out, "skinned model: {} joints", m.joint_count());
                for (i, j) in m.skeleton.joints.iter().enumerate() {
                    let parent = j.parent.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
                    let _ = writeln!(out, "  {i:>3} {:<16} parent {parent}", j.name);
                }
                mesh_summary(&mut out, &m.template);
            } else if has("frame_rate") && v["frames"].get(0).map_or(false, |f| f.is_string()) {
                let m = SequenceManifest::load(path)?;
                let _ = writeln!(out, "sequence manifest: {} frames at {} fps", m.frames.len(), m.frame_rate);
                match &m.groups {
                    Some(g) => group_table(&mut out, g),
                    None => {
                        let _ = writeln!(out, "groups: not given");
                    }
                }
            } else if has("keyframes") && has("groups") && has("double_tracked") && has("frame_rate") {
                let r: TrackingReport = parse(path, v)?;
                let _ = writeln!(out, "tracking report: {} frames", r.frames.len());
                group_table(&mut out, &r.groups);
            } else if has("completed_stages") {
                let r: RunReport = parse(path, v)?;
                let _ = writeln!(out, "run report: {} frames, stages {}", r.frames.len(), r.completed_stages.join(", "));
                if let Some(s) = &r.failed_stage {
                    let _ = writeln!(out, "failed stage: {s}: {}", r.error.as_deref().unwrap_or(""));
                }
                group_table(&mut out, &r.groups);
                let _ = writeln!(out, "warnings: {}", r.warnings.len());
            } else if has("shape_rounds") && has("failures") {
                let r: FitReport = parse(path, v)?;
                let worst = r.frames.iter().map(|f| f.residual).fold(0.0, f64::max);
                let _ = writeln!(out, "fit report: {} frames, {} failures, max residual {worst:.3e} m", r.frames.len(), r.failures.len());
            } else if has("components") {
                let p: PosePriorGMM = parse(path, v)?;
                p.validate()?;
                let _ = writeln!(out, "pose prior: {} components, dimension {}", p.components.len(), p.dim());
            } else if has("entries") && has("faces") {
                let g: GlueMap = parse(path, v)?;
                let _ = writeln!(
                    out,
                    "glue map: {} vertices, {} faces, {} outliers, {} extrapolated",
                    g.entries.len(),
                    g.faces.len(),
                    g.outliers.len(),
                    g.extrapolated.len()
                );
            } else if has("steps") && has("cost") {
                let p: SynthesisPlan = parse(path, v)?;
                let blends = p.steps.iter().filter(|s| s.blend.is_some()).count();
                let _ = writeln!(out, "synthesis plan: {} steps, {blends} transitions, cost {:.6}", p.steps.len(), p.cost);
            } else if v.is_array() || has("root_rotation") {
                let poses = load_poses(path)?;
                let _ = writeln!(out, "poses: {}", poses.len());
                if let Some(p) = poses.first() {
                    let _ = writeln!(out, "joints: {}", p.joints.len());
                }
            } else if has("input") && has("model") {
                let c = PipelineConfig::load(path)?;
                let _ = writeln!(out, "pipeline config: input {}, model {}, output {}", c.input.display(), c.model.display(), c.output.display());
            } else {
                return Err(Error::UnknownFormat(format!("{}: unrecognized JSON document", path.display())));
            }
        }
        _ => return Err(Error::UnknownFormat(path.display().to_string())),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn cube_summary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cube.ply");
        save_mesh(&synthetic::cube(1.0), &p, None).unwrap();
        let s = info(&p).unwrap();
        assert!(s.contains("vertices: 8\n"), "{s}");
        assert!(s.contains("faces: 12\n"));
        assert!(s.contains("area: 6.000000\n"));
        assert!(s.contains("closed, genus 0"));
    }

    #[test]
    fn corrupt_mesh_reports_an_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ply");
        save_mesh(&synthetic::cube(1.0), &p, None).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 7);
        std::fs::write(&p, bytes).unwrap();
        let e = info(&p).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{e}");
        assert!(e.to_string().contains("at byte"));
    }

    #[test]
    fn unknown_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "hello").unwrap();
        assert_eq!(info(&p).unwrap_err().code(), "E_UNKNOWN_FORMAT");
        let j = dir.path().join("x.json");
        std::fs::write(&j, "{\"what\": 1}").unwrap();
        assert_eq!(info(&j).unwrap_err().code(), "E_UNKNOWN_FORMAT");
    }

    #[test]
    fn missing_model_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let m = SequenceManifest {
            frame_rate: 30.0,
            frames: vec!["f.ply".into()],
            groups: None,
        };
        m.save(dir.path().join("sequence.json")).unwrap();
        let mut c = PipelineConfig::default();
        c.resolve(dir.path());
        let e = run_pipeline(&c).unwrap_err();
        assert_eq!(e.code(), "E_CONFIG");
        assert!(e.to_string().contains("model"));
        assert!(!c.output.exists());
    }

    #[test]
    fn config_round_trips_with_defaults() {
        let c: PipelineConfig = serde_json::from_str("{\"overlap\": 3, \"fitting\": {\"prior_weight\": 0.5}}").unwrap();
        assert_eq!(c.overlap, 3);
        assert_eq!(c.fitting.prior_weight, 0.5);
        assert_eq!(c.fitting.max_iters, FitParams::default().max_iters);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<PipelineConfig>("{\"bogus\": 1}").is_err());
    }
}
