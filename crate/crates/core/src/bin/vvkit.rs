use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use vvkit::animate::{retarget, GlueMap, SynthesisParams};
use vvkit::body::{load_model, load_poses};
use vvkit::decimate::{decimate, DecimationParams};
use vvkit::fitting::{track_poses, FitParams, PosePriorGMM};
use vvkit::mesh::{load_importance, load_mesh, save_mesh, MeshSequence};
use vvkit::pipeline::{
    glue_frames, info as describe, load_fits, load_glues, run_pipeline, save_fits, save_glues, save_synthesis,
    synthesize_from, PipelineConfig,
};
use vvkit::registration::{register, RegistrationParams};
use vvkit::report::write_report;
use vvkit::tracking::{track_sequence, KeyframePolicy, TrackedSequence};
use vvkit::{Error, Result};

#[derive(Parser)]
#[command(name = "vvkit", version, about = "Volumetric video tracking, body fitting and animation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized utilities.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a mesh, manifest, model, report or tracked directory.
    Info { path: PathBuf },
    /// Simplify a mesh with quadric edge collapses.
    Decimate(DecimateArgs),
    /// Non-rigidly register a source mesh onto a target.
    Register(RegisterArgs),
    /// Track a sequence into groups of shared connectivity.
    Track(TrackArgs),
    /// Fit the body model to a tracked sequence.
    Fit(FitArgs),
    /// Glue tracked frames to the fitted model.
    Glue(GlueArgs),
    /// Re-pose one glued frame.
    Retarget(RetargetArgs),
    /// Synthesize frames for a target pose sequence.
    Synth(SynthArgs),
    /// Run the whole pipeline from a config file.
    Run { config: PathBuf },
}

#[derive(Args)]
struct DecimateArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    target_faces: Option<usize>,
    /// Per-vertex importance mask (overrides a sidecar next to the input).
    #[arg(long)]
    importance: Option<PathBuf>,
    #[arg(long)]
    exponent: Option<f64>,
    #[arg(long)]
    no_preserve_boundary: bool,
}

#[derive(Args)]
struct RegisterArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Registration parameters as JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Where to write the per-level report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `every_nth:N`, `scored:N` or `scored:N:W_AREA:W_GENUS`.
    #[arg(long, default_value = "every_nth:10")]
    policy: KeyframePolicy,
    #[arg(long, default_value_t = 2)]
    overlap: usize,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tracked: PathBuf,
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct GlueArgs {
    #[arg(long)]
    fits: PathBuf,
    #[arg(long)]
    tracked: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetargetArgs {
    #[arg(long)]
    glue: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Pose the glue map was built at.
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    fits: PathBuf,
    #[arg(long)]
    tracked: PathBuf,
    #[arg(long)]
    glue: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    params: Option<PathBuf>,
}

fn read_params<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.into(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Json {
                path: p.into(),
                source: e,
            })
        }
    }
}

fn first_pose(path: &Path) -> Result<vvkit::body::SwingTwistPose> {
    load_poses(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config(format!("{} holds no pose", path.display())))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Info { path } => print!("{}", describe(&path)?),
        Command::Decimate(a) => {
            let mut mesh = load_mesh(&a.input, None)?;
            if let Some(p) = &a.importance {
                mesh = mesh.with_importance(load_importance(p)?)?;
            }
            let mut params = DecimationParams::default();
            if let Some(n) = a.target_faces {
                params.target_faces = n;
            }
            if let Some(e) = a.exponent {
                params.importance_exponent = e;
            }
            params.preserve_boundary = !a.no_preserve_boundary;
            let d = decimate(&mesh, &params)?;
            info!("{} -> {} faces", mesh.face_count(), d.mesh.face_count());
            save_mesh(&d.mesh, &a.out, None)?;
            println!("{} faces -> {} faces", mesh.face_count(), d.mesh.face_count());
        }
        Command::Register(a) => {
            let params: RegistrationParams = read_params(a.params.as_deref())?;
            let source = load_mesh(&a.source, None)?;
            let target = load_mesh(&a.target, None)?;
            let r = register(&source, &target, &params)?;
            save_mesh(&r.deformed_source, &a.out, None)?;
            if let Some(p) = &a.report {
                write_report(&r.levels, p)?;
            }
            println!("rms error {:.6e} m, converged {}", r.error, r.converged);
        }
        Command::Track(a) => {
            let params: RegistrationParams = read_params(a.params.as_deref())?;
            let seq = MeshSequence::load(&a.manifest)?;
            let t = track_sequence(&seq, &a.policy, &params, a.overlap)?;
            t.save(&a.out)?;
            let worst = t.errors().into_iter().fold(0.0, f64::max);
            println!("{} frames in {} groups, max error {worst:.3e} m", t.frames.len(), t.groups.len());
        }
        Command::Fit(a) => {
            let params: FitParams = read_params(a.params.as_deref())?;
            let model = load_model(&a.model)?;
            let tracked = TrackedSequence::load(&a.tracked)?;
            let init = first_pose(&a.init)?;
            let prior = a.prior.as_ref().map(PosePriorGMM::load).transpose()?;
            let track = track_poses(&model, &tracked, &init, prior.as_ref(), &params)?;
            let report = save_fits(&a.out, &track, &tracked.names)?;
            let worst = report.frames.iter().map(|f| f.residual).fold(0.0, f64::max);
            println!("{} frames fitted, {} failures, max residual {worst:.3e} m", report.frames.len(), report.failures.len());
        }
        Command::Glue(a) => {
            let (model, poses) = load_fits(&a.fits)?;
            let tracked = TrackedSequence::load(&a.tracked)?;
            let frames: Vec<_> = tracked.frames.iter().map(|f| &f.mesh).collect();
            let glues = glue_frames(&model, &poses, &frames)?;
            save_glues(&a.out, &glues, &tracked.names)?;
            let outliers: usize = glues.iter().map(|g| g.outliers.len()).sum();
            println!("{} frames glued, {outliers} outlier vertices", glues.len());
        }
        Command::Retarget(a) => {
            let glue = GlueMap::load(&a.glue)?;
            let model = load_model(&a.model)?;
            let out = retarget(&glue, &model, &first_pose(&a.source)?, &first_pose(&a.pose)?)?;
            save_mesh(&out, &a.out, None)?;
        }
        Command::Synth(a) => {
            let params: SynthesisParams = read_params(a.params.as_deref())?;
            let (model, poses) = load_fits(&a.fits)?;
            let tracked = TrackedSequence::load(&a.tracked)?;
            let glues = load_glues(&a.glue, &tracked.names)?;
            let target = load_poses(&a.target)?;
            let (plan, meshes) = synthesize_from(&tracked, &model, &poses, &glues, &target, &params)?;
            save_synthesis(&a.out, &plan, &meshes)?;
            println!("{} frames synthesized, plan cost {:.6}", meshes.len(), plan.cost);
        }
        Command::Run { config } => {
            let mut c = PipelineConfig::load(&config)?;
            if cli.threads.is_some() {
                c.threads = cli.threads;
            }
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let r = run_pipeline(&c)?;
            println!(
                "{} frames, {} groups, {} synthesized, {} warnings",
                r.frames.len(),
                r.groups.len(),
                r.synthesized_frames,
                r.warnings.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error[E_CONFIG]: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
