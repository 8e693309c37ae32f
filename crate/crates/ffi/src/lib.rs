//! C interface to vvkit.
//!
//! Objects cross the boundary as opaque handles created by `*_load`,
//! `*_new` and the operations, and released with the matching `*_free`.
//! Every fallible call returns a `VvStatus`; on failure the message is
//! available from `vv_last_error_message` on the same thread until the
//! next failing call. Panics never unwind into C: they become
//! `VV_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Quaternion;
use vvkit::animate::{build_glue_map, retarget, GlueMap};
use vvkit::body::{load_model, load_poses, save_poses, skin, SkinnedModel, SwingTwistPose};
use vvkit::decimate::{decimate, DecimationParams};
use vvkit::fitting::{fit_pose, FitParams};
use vvkit::geom::{Quat, Vec3};
use vvkit::mesh::{load_mesh, save_mesh};
use vvkit::pipeline::{run_pipeline, PipelineConfig};
use vvkit::registration::{register, RegistrationParams};
use vvkit::TriMesh;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VvStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string was not UTF-8 or a buffer was too small.
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Format = 5,
    UnknownFormat = 6,
    Mesh = 7,
    Dimension = 8,
    Param = 9,
    Model = 10,
    Pose = 11,
    Init = 12,
    Solver = 13,
    Config = 14,
    Json = 15,
    Panic = 99,
}

pub struct VvMesh(TriMesh);
pub struct VvModel(SkinnedModel);
pub struct VvPose(SwingTwistPose);
pub struct VvGlue(GlueMap);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VvStatus, String);

impl From<vvkit::Error> for Failure {
    fn from(e: vvkit::Error) -> Self {
        let status = match e.code() {
            "E_IO" => VvStatus::Io,
            "E_PARSE" => VvStatus::Parse,
            "E_FORMAT" => VvStatus::Format,
            "E_UNKNOWN_FORMAT" => VvStatus::UnknownFormat,
            "E_MESH" => VvStatus::Mesh,
            "E_DIMENSION" => VvStatus::Dimension,
            "E_PARAM" => VvStatus::Param,
            "E_MODEL" => VvStatus::Model,
            "E_POSE" => VvStatus::Pose,
            "E_INIT" => VvStatus::Init,
            "E_SOLVER" => VvStatus::Solver,
            "E_CONFIG" => VvStatus::Config,
            "E_JSON" => VvStatus::Json,
            _ => VvStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VvStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            VvStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VvStatus::NullPointer, format!("{what} is null"))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VvStatus::InvalidArgument, "path is not UTF-8".into()))
}

/// Writes a new handle to `out`.
unsafe fn emit<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = ptr::null_mut();
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn vv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn vv_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

// Meshes ---------------------------------------------------------------------

/// Loads an OBJ or PLY file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_load(path_: *const c_char, out: *mut *mut VvMesh) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let m = load_mesh(path(path_)?, None)?;
        emit(out, VvMesh(m));
        Ok(())
    })
}

/// Builds a mesh from `vertex_count` xyz triples and `face_count` index
/// triples.
///
/// # Safety
/// The arrays must hold `3 * vertex_count` doubles and `3 * face_count`
/// indices.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_new(
    vertices: *const f64,
    vertex_count: usize,
    faces: *const u32,
    face_count: usize,
    out: *mut *mut VvMesh,
) -> VvStatus {
    guard(|| {
        check_out(out)?;
        if (vertices.is_null() && vertex_count > 0) || (faces.is_null() && face_count > 0) {
            return Err(null("array"));
        }
        let v = if vertex_count == 0 { &[][..] } else { std::slice::from_raw_parts(vertices, 3 * vertex_count) };
        let f = if face_count == 0 { &[][..] } else { std::slice::from_raw_parts(faces, 3 * face_count) };
        let m = TriMesh::new(
            v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            f.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )?;
        emit(out, VvMesh(m));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be a valid handle and `path_` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_save(mesh: *const VvMesh, path_: *const c_char) -> VvStatus {
    guard(|| {
        let m = get(mesh, "mesh")?;
        save_mesh(&m.0, path(path_)?, None)?;
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_free(mesh: *mut VvMesh) {
    free(mesh)
}

/// Vertex count, 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_vertex_count(mesh: *const VvMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertex_count())
}

/// Face count, 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_face_count(mesh: *const VvMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.face_count())
}

/// Copies xyz triples into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `out` must be writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_copy_vertices(mesh: *const VvMesh, out: *mut f64, capacity: usize) -> VvStatus {
    guard(|| {
        let m = get(mesh, "mesh")?;
        let need = 3 * m.0.vertex_count();
        let dst = buffer(out, capacity, need)?;
        for (c, p) in dst.chunks_exact_mut(3).zip(m.0.vertices()) {
            c.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Copies index triples into `out`, which holds `capacity` indices.
///
/// # Safety
/// `out` must be writable for `capacity` indices.
#[no_mangle]
pub unsafe extern "C" fn vv_mesh_copy_faces(mesh: *const VvMesh, out: *mut u32, capacity: usize) -> VvStatus {
    guard(|| {
        let m = get(mesh, "mesh")?;
        let need = 3 * m.0.face_count();
        let dst = buffer(out, capacity, need)?;
        for (c, f) in dst.chunks_exact_mut(3).zip(m.0.faces()) {
            c.copy_from_slice(f);
        }
        Ok(())
    })
}

unsafe fn buffer<'a, T>(out: *mut T, capacity: usize, need: usize) -> Result<&'a mut [T], Failure> {
    if capacity < need {
        return Err(Failure(
            VvStatus::InvalidArgument,
            format!("buffer holds {capacity} values, {need} needed"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if out.is_null() {
        return Err(null("buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(out, need))
}

/// Quadric edge-collapse simplification down to `target_faces`.
///
/// # Safety
/// `mesh` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_decimate(mesh: *const VvMesh, target_faces: usize, out: *mut *mut VvMesh) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let m = get(mesh, "mesh")?;
        let params = DecimationParams {
            target_faces,
            ..Default::default()
        };
        emit(out, VvMesh(decimate(&m.0, &params)?.mesh));
        Ok(())
    })
}

/// Non-rigid registration of `source` onto `target` with default
/// parameters. Writes the deformed source and, if `rms` is not null, the
/// symmetric RMS error in metres.
///
/// # Safety
/// Handles must be valid; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_register(
    source: *const VvMesh,
    target: *const VvMesh,
    out: *mut *mut VvMesh,
    rms: *mut f64,
) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let r = register(&get(source, "source")?.0, &get(target, "target")?.0, &RegistrationParams::default())?;
        if !rms.is_null() {
            *rms = r.error;
        }
        emit(out, VvMesh(r.deformed_source));
        Ok(())
    })
}

// Models and poses -----------------------------------------------------------

/// # Safety
/// `path_` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_model_load(path_: *const c_char, out: *mut *mut VvModel) -> VvStatus {
    guard(|| {
        check_out(out)?;
        emit(out, VvModel(load_model(path(path_)?)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vv_model_free(model: *mut VvModel) {
    free(model)
}

/// # Safety
/// `model` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vv_model_joint_count(model: *const VvModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.joint_count())
}

/// The model's rest (zero) pose.
///
/// # Safety
/// `model` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_zero(model: *const VvModel, out: *mut *mut VvPose) -> VvStatus {
    guard(|| {
        check_out(out)?;
        emit(out, VvPose(get(model, "model")?.0.zero_pose()));
        Ok(())
    })
}

/// Pose number `index` of a pose file (a single pose or a list).
///
/// # Safety
/// `path_` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_load(path_: *const c_char, index: usize, out: *mut *mut VvPose) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let mut poses = load_poses(path(path_)?)?;
        if index >= poses.len() {
            return Err(Failure(
                VvStatus::InvalidArgument,
                format!("pose {index} requested, file holds {}", poses.len()),
            ));
        }
        emit(out, VvPose(poses.swap_remove(index)));
        Ok(())
    })
}

/// # Safety
/// `pose` must be a valid handle and `path_` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_save(pose: *const VvPose, path_: *const c_char) -> VvStatus {
    guard(|| {
        let p = get(pose, "pose")?;
        save_poses(std::slice::from_ref(&p.0), path(path_)?)?;
        Ok(())
    })
}

/// # Safety
/// `pose` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_free(pose: *mut VvPose) {
    free(pose)
}

/// Number of swing/twist scalars: three per non-root joint.
///
/// # Safety
/// `pose` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_scalar_count(pose: *const VvPose) -> usize {
    pose.as_ref().map_or(0, |p| p.0.scalar_count())
}

/// Copies the joint scalars (swing x, swing y, twist per non-root joint).
///
/// # Safety
/// `out` must be writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_get_scalars(pose: *const VvPose, out: *mut f64, capacity: usize) -> VvStatus {
    guard(|| {
        let s = get(pose, "pose")?.0.scalars();
        buffer(out, capacity, s.len())?.copy_from_slice(&s);
        Ok(())
    })
}

/// # Safety
/// `values` must hold `count` doubles; `count` must equal the scalar count.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_set_scalars(pose: *mut VvPose, values: *const f64, count: usize) -> VvStatus {
    guard(|| {
        let p = pose.as_mut().ok_or_else(|| null("pose"))?;
        let n = p.0.scalar_count();
        if count != n {
            return Err(Failure(VvStatus::Dimension, format!("pose has {n} scalars, {count} given")));
        }
        if n > 0 && values.is_null() {
            return Err(null("values"));
        }
        let v = if n == 0 { &[][..] } else { std::slice::from_raw_parts(values, n) };
        p.0.set_scalars(v);
        Ok(())
    })
}

/// Sets the root orientation (quaternion w, x, y, z; normalized here) and
/// translation (x, y, z).
///
/// # Safety
/// `rotation` must hold 4 doubles and `translation` 3.
#[no_mangle]
pub unsafe extern "C" fn vv_pose_set_root(pose: *mut VvPose, rotation: *const f64, translation: *const f64) -> VvStatus {
    guard(|| {
        let p = pose.as_mut().ok_or_else(|| null("pose"))?;
        let r = std::slice::from_raw_parts(get(rotation, "rotation")?, 4);
        let t = std::slice::from_raw_parts(get(translation, "translation")?, 3);
        let q = Quaternion::new(r[0], r[1], r[2], r[3]);
        if !(q.norm() > 1e-12) || r.iter().chain(t).any(|v| !v.is_finite()) {
            return Err(Failure(VvStatus::Pose, "root rotation must be a finite nonzero quaternion".into()));
        }
        p.0.root_rotation = Quat::from_quaternion(q);
        p.0.root_translation = Vec3::new(t[0], t[1], t[2]);
        Ok(())
    })
}

/// Poses the model.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_skin(model: *const VvModel, pose: *const VvPose, out: *mut *mut VvMesh) -> VvStatus {
    guard(|| {
        check_out(out)?;
        emit(out, VvMesh(skin(&get(model, "model")?.0, &get(pose, "pose")?.0)?));
        Ok(())
    })
}

/// Fits the model's pose to `frame` from `init` with default parameters.
/// `residual` (nullable) receives the RMS model-to-frame distance.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_fit_pose(
    model: *const VvModel,
    frame: *const VvMesh,
    init: *const VvPose,
    out: *mut *mut VvPose,
    residual: *mut f64,
) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let r = fit_pose(
            &get(model, "model")?.0,
            &get(frame, "frame")?.0,
            &get(init, "init")?.0,
            None,
            &FitParams::default(),
        )?;
        if !residual.is_null() {
            *residual = r.residual;
        }
        emit(out, VvPose(r.pose));
        Ok(())
    })
}

// Glue and retargeting -------------------------------------------------------

/// Glues `frame` to `fitted`, the model skinned at the frame's pose.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_glue_build(frame: *const VvMesh, fitted: *const VvMesh, out: *mut *mut VvGlue) -> VvStatus {
    guard(|| {
        check_out(out)?;
        emit(out, VvGlue(build_glue_map(&get(frame, "frame")?.0, &get(fitted, "fitted")?.0)?));
        Ok(())
    })
}

/// # Safety
/// `path_` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_glue_load(path_: *const c_char, out: *mut *mut VvGlue) -> VvStatus {
    guard(|| {
        check_out(out)?;
        emit(out, VvGlue(GlueMap::load(path(path_)?)?));
        Ok(())
    })
}

/// # Safety
/// `glue` must be a valid handle and `path_` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vv_glue_save(glue: *const VvGlue, path_: *const c_char) -> VvStatus {
    guard(|| {
        get(glue, "glue")?.0.save(path(path_)?)?;
        Ok(())
    })
}

/// # Safety
/// `glue` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vv_glue_free(glue: *mut VvGlue) {
    free(glue)
}

/// Number of outlier vertices recorded while gluing.
///
/// # Safety
/// `glue` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn vv_glue_outlier_count(glue: *const VvGlue) -> usize {
    glue.as_ref().map_or(0, |g| g.0.outliers.len())
}

/// Re-poses a glued frame from `source` (the pose it was glued at) to
/// `target`.
///
/// # Safety
/// Handles must be valid and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vv_retarget(
    glue: *const VvGlue,
    model: *const VvModel,
    source: *const VvPose,
    target: *const VvPose,
    out: *mut *mut VvMesh,
) -> VvStatus {
    guard(|| {
        check_out(out)?;
        let m = retarget(
            &get(glue, "glue")?.0,
            &get(model, "model")?.0,
            &get(source, "source")?.0,
            &get(target, "target")?.0,
        )?;
        emit(out, VvMesh(m));
        Ok(())
    })
}

/// Runs the whole pipeline described by a config file. Reports are
/// written to the configured output directory even on failure.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vv_run(config_path: *const c_char) -> VvStatus {
    guard(|| {
        let c = PipelineConfig::load(path(config_path)?)?;
        run_pipeline(&c)?;
        Ok(())
    })
}
