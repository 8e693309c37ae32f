use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vvkit::body::{save_model, save_poses, skin, JointPose, SkinnedModel};
use vvkit::mesh::{load_mesh, save_mesh, SequenceManifest};
use vvkit::pipeline::{info, run_pipeline, PipelineConfig, RunReport, TIMINGS_FILE};
use vvkit::synthetic;
use vvkit::tracking::{KeyframePolicy, TrackedSequence};

fn posed_model() -> (SkinnedModel, vvkit::body::SwingTwistPose) {
    let model = synthetic::humanoid(2000);
    let mut p = model.zero_pose();
    p.joints[4] = JointPose::from_scalars([0.1, 0.3, 0.0]);
    p.joints[11] = JointPose::from_scalars([0.0, 0.4, 0.0]);
    (model, p)
}

/// Ten identical frames of the posed humanoid, its model and a config.
fn static_fixture(dir: &Path) -> PipelineConfig {
    let (model, pose) = posed_model();
    let frame = skin(&model, &pose).unwrap();
    let mut frames = Vec::new();
    for i in 0..10 {
        let name = format!("f{i:02}.ply");
        save_mesh(&frame, dir.join(&name), None).unwrap();
        frames.push(PathBuf::from(name));
    }
    SequenceManifest { frame_rate: 25.0, frames, groups: None }
        .save(dir.join("sequence.json"))
        .unwrap();
    save_model(&model, dir.join("model.json")).unwrap();
    save_poses(&[pose], dir.join("init.json")).unwrap();
    let mut c = PipelineConfig {
        init_pose: Some("init.json".into()),
        keyframes: KeyframePolicy::every_nth(5),
        ..PipelineConfig::default()
    };
    c.resolve(dir);
    c
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != TIMINGS_FILE {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn static_sequence_end_to_end_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = static_fixture(dir.path());
    let report = run_pipeline(&config).unwrap();
    assert_eq!(report.frames.len(), 10);
    assert_eq!(report.completed_stages, vec!["load", "track", "fit", "glue", "synth"]);
    assert_eq!(report.keyframes.len(), 2);
    for f in &report.frames {
        assert!(f.tracking_error < 1e-9, "{f:?}");
        assert!(f.fit_residual.unwrap() < 1e-6);
    }
    assert_eq!(report.synthesized_frames, 10);
    // One distinct pose cannot pin every joint offset; freezing is the only
    // expected complaint.
    assert!(report.warnings.iter().all(|w| w.contains("froze joints")), "{:?}", report.warnings);

    let out = config.output.clone();
    let tracked = TrackedSequence::load(out.join("tracked")).unwrap();
    for t in 0..10 {
        let synth = load_mesh(out.join(format!("synth/synth_{t:05}.ply")), None).unwrap();
        let orig = &tracked.frames[t].mesh;
        assert_eq!(synth.faces(), orig.faces());
        let worst = synth.vertices().iter().zip(orig.vertices()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "frame {t}: {worst}");
    }
    let text = std::fs::read_to_string(out.join("run_report.json")).unwrap();
    let back: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back.frames.len(), 10);

    let summary = info(out.join("tracked")).unwrap();
    for g in &tracked.groups {
        assert!(summary.contains(&format!("{:>8} {:>8} {:>8}", g.keyframe, g.first, g.last)), "{summary}");
    }

    let first = files(&out);
    config.output = dir.path().join("again");
    config.threads = Some(1);
    run_pipeline(&config).unwrap();
    let second = files(&config.output);
    assert_eq!(first.keys().collect::<Vec<_>>(), second.keys().collect::<Vec<_>>());
    for (k, v) in &first {
        assert!(v == &second[k], "{} differs between runs", k.display());
    }
}

#[test]
fn failing_stage_is_reported_and_earlier_artifacts_kept() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = static_fixture(dir.path());
    // The fit cannot start: the model is placed 10 m away from the frames.
    let (_, mut pose) = posed_model();
    pose.root_translation.x += 10.0;
    save_poses(&[pose], dir.path().join("far.json")).unwrap();
    config.init_pose = Some(dir.path().join("far.json"));
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.code(), "E_INIT");
    let text = std::fs::read_to_string(config.output.join("run_report.json")).unwrap();
    let report: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.failed_stage.as_deref(), Some("fit"));
    assert_eq!(report.completed_stages, vec!["load", "track"]);
    assert!(config.output.join("tracked/tracking_report.json").is_file());
    assert!(!config.output.join("fits").exists());
}
