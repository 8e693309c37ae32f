use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vvkit::body::{save_model, save_poses, skin};
use vvkit::mesh::save_mesh;
use vvkit::synthetic;
use vvkit_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = vv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn vertices(m: *const VvMesh) -> Vec<f64> {
    let mut v = vec![0.0; 3 * vv_mesh_vertex_count(m)];
    assert_eq!(vv_mesh_copy_vertices(m, v.as_mut_ptr(), v.len()), VvStatus::Ok);
    v
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(vv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn mesh_round_trip_through_arrays_and_files() {
    let v = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let f = [0u32, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3];
    let dir = tempfile::tempdir().unwrap();
    let file = c(&dir.path().join("tet.ply"));
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(vv_mesh_new(v.as_ptr(), 4, f.as_ptr(), 4, &mut m), VvStatus::Ok);
        assert_eq!((vv_mesh_vertex_count(m), vv_mesh_face_count(m)), (4, 4));
        assert_eq!(vv_mesh_save(m, file.as_ptr()), VvStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(vv_mesh_load(file.as_ptr(), &mut back), VvStatus::Ok);
        assert_eq!(vertices(back), v);
        let mut faces = [0u32; 12];
        assert_eq!(vv_mesh_copy_faces(back, faces.as_mut_ptr(), 12), VvStatus::Ok);
        assert_eq!(faces, f);

        let mut small = [0.0; 5];
        assert_eq!(vv_mesh_copy_vertices(back, small.as_mut_ptr(), 5), VvStatus::InvalidArgument);
        assert!(last_error().contains("12 needed"));
        vv_mesh_free(m);
        vv_mesh_free(back);
    }
}

#[test]
fn errors_map_to_status_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = c(&dir.path().join("missing.obj"));
    let odd = c(&dir.path().join("mesh.xyz"));
    std::fs::write(dir.path().join("mesh.xyz"), "1 2 3").unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(vv_mesh_load(missing.as_ptr(), &mut m), VvStatus::Io);
        assert!(m.is_null());
        assert!(last_error().contains("missing.obj"));
        assert_eq!(vv_mesh_load(odd.as_ptr(), &mut m), VvStatus::UnknownFormat);

        // Face index out of range.
        let v = [0.0; 9];
        let f = [0u32, 1, 7];
        assert_eq!(vv_mesh_new(v.as_ptr(), 3, f.as_ptr(), 1, &mut m), VvStatus::Mesh);
        assert!(m.is_null());

        vv_clear_error();
        assert!(vv_last_error_message().is_null());
    }
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(vv_mesh_load(ptr::null(), &mut m), VvStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert_eq!(vv_mesh_load(c(Path::new("x.obj")).as_ptr(), ptr::null_mut()), VvStatus::NullPointer);
        assert_eq!(vv_mesh_save(ptr::null(), c(Path::new("x.obj")).as_ptr()), VvStatus::NullPointer);
        assert_eq!(vv_skin(ptr::null(), ptr::null(), &mut m), VvStatus::NullPointer);
        assert_eq!(vv_mesh_vertex_count(ptr::null()), 0);
        assert_eq!(vv_pose_scalar_count(ptr::null()), 0);
        vv_mesh_free(ptr::null_mut());
        vv_model_free(ptr::null_mut());
        vv_pose_free(ptr::null_mut());
        vv_glue_free(ptr::null_mut());
    }
}

#[test]
fn last_error_is_per_thread() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(vv_mesh_load(ptr::null(), &mut m), VvStatus::NullPointer);
    }
    let other = std::thread::spawn(|| vv_last_error_message().is_null()).join().unwrap();
    assert!(other);
    assert!(last_error().contains("null"));
}

#[test]
fn skin_fit_glue_and_retarget() {
    let dir = tempfile::tempdir().unwrap();
    let model = synthetic::humanoid(2000);
    let model_path = dir.path().join("model.json");
    save_model(&model, &model_path).unwrap();

    let mut truth = model.zero_pose();
    let mut s = truth.scalars();
    s[3 * 4] = 0.3; // left elbow swing
    s[3 * 8 + 1] = -0.2; // left knee swing
    truth.set_scalars(&s);
    let frame_path = dir.path().join("frame.ply");
    save_mesh(&skin(&model, &truth).unwrap(), &frame_path, None).unwrap();
    let pose_path = dir.path().join("truth.json");
    save_poses(&[truth.clone()], &pose_path).unwrap();

    unsafe {
        let (mut mdl, mut frame, mut zero, mut fitted) =
            (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(vv_model_load(c(&model_path).as_ptr(), &mut mdl), VvStatus::Ok);
        assert_eq!(vv_model_joint_count(mdl), 12);
        assert_eq!(vv_mesh_load(c(&frame_path).as_ptr(), &mut frame), VvStatus::Ok);
        assert_eq!(vv_pose_zero(mdl, &mut zero), VvStatus::Ok);
        assert_eq!(vv_pose_scalar_count(zero), 33);

        let mut residual = f64::NAN;
        assert_eq!(vv_fit_pose(mdl, frame, zero, &mut fitted, &mut residual), VvStatus::Ok);
        assert!(residual < 1e-4, "{residual}");
        let mut got = vec![0.0; 33];
        assert_eq!(vv_pose_get_scalars(fitted, got.as_mut_ptr(), 33), VvStatus::Ok);
        for (g, t) in got.iter().zip(&s) {
            assert!((g - t).abs() < 1e-3, "{got:?}");
        }

        // Skinning the loaded truth reproduces the frame.
        let (mut posed, mut truth_h) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(vv_pose_load(c(&pose_path).as_ptr(), 0, &mut truth_h), VvStatus::Ok);
        let mut past_end = ptr::null_mut();
        assert_eq!(vv_pose_load(c(&pose_path).as_ptr(), 1, &mut past_end), VvStatus::InvalidArgument);
        assert!(past_end.is_null());
        assert_eq!(vv_skin(mdl, truth_h, &mut posed), VvStatus::Ok);
        let (a, b) = (vertices(posed), vertices(frame));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-6));

        // Glue the frame to its fit, then retarget it back to rest.
        let (mut glue, mut rest, mut loaded) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(vv_glue_build(frame, posed, &mut glue), VvStatus::Ok);
        assert_eq!(vv_glue_outlier_count(glue), 0);
        let glue_path = c(&dir.path().join("glue.json"));
        assert_eq!(vv_glue_save(glue, glue_path.as_ptr()), VvStatus::Ok);
        assert_eq!(vv_glue_load(glue_path.as_ptr(), &mut loaded), VvStatus::Ok);
        assert_eq!(vv_retarget(loaded, mdl, truth_h, zero, &mut rest), VvStatus::Ok);
        let template: Vec<f64> = model.template.vertices().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let worst = vertices(rest).iter().zip(&template).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");

        // Moving the root moves the skinned mesh rigidly.
        let q = [0.5f64.sqrt(), 0.0, 0.0, 0.5f64.sqrt()];
        let t = [1.0, 2.0, 3.0];
        assert_eq!(vv_pose_set_root(zero, q.as_ptr(), t.as_ptr()), VvStatus::Ok);
        let bad = [0.0; 4];
        assert_eq!(vv_pose_set_root(zero, bad.as_ptr(), t.as_ptr()), VvStatus::Pose);
        let mut moved = ptr::null_mut();
        assert_eq!(vv_skin(mdl, zero, &mut moved), VvStatus::Ok);
        let m = vertices(moved);
        for (p, r) in m.chunks(3).zip(template.chunks(3)) {
            // 90 degrees about z: (x, y) -> (-y, x)
            let want = [-r[1] + 1.0, r[0] + 2.0, r[2] + 3.0];
            assert!(p.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-9));
        }

        assert_eq!(vv_pose_set_scalars(zero, got.as_ptr(), 5), VvStatus::Dimension);

        for h in [frame, posed, rest, moved] {
            vv_mesh_free(h);
        }
        for h in [zero, fitted, truth_h] {
            vv_pose_free(h);
        }
        vv_glue_free(glue);
        vv_glue_free(loaded);
        vv_model_free(mdl);
    }
}

#[test]
fn decimate_and_register() {
    let dir = tempfile::tempdir().unwrap();
    let sphere = dir.path().join("sphere.obj");
    save_mesh(&synthetic::icosphere(1.0, 3), &sphere, None).unwrap();
    unsafe {
        let (mut m, mut d, mut r) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(vv_mesh_load(c(&sphere).as_ptr(), &mut m), VvStatus::Ok);
        assert_eq!(vv_decimate(m, 320, &mut d), VvStatus::Ok);
        assert_eq!(vv_mesh_face_count(d), 320);

        let mut rms = f64::NAN;
        assert_eq!(vv_register(d, m, &mut r, &mut rms), VvStatus::Ok);
        assert_eq!(vv_mesh_vertex_count(r), vv_mesh_vertex_count(d));
        assert!(rms.is_finite() && rms < 0.02, "{rms}");
        for h in [m, d, r] {
            vv_mesh_free(h);
        }
    }
}

#[test]
fn run_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, "{\"input\": 3}").unwrap();
    let status = unsafe { vv_run(c(&cfg).as_ptr()) };
    assert!(matches!(status, VvStatus::Config | VvStatus::Json), "{status:?}");
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vvkit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "vv_version",
        "vv_last_error_message",
        "vv_mesh_load",
        "vv_mesh_new",
        "vv_decimate",
        "vv_register",
        "vv_fit_pose",
        "vv_retarget",
        "vv_run",
        "VV_STATUS_PANIC",
        "typedef struct VvMesh VvMesh",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }

    let src = std::env::temp_dir().join(format!("vvkit_header_{}.c", std::process::id()));
    std::fs::write(&src, "#include \"vvkit.h\"\nint main(void) { VvMesh *m = 0; return vv_mesh_load(\"a.obj\", &m) == VV_STATUS_OK; }\n").unwrap();
    let out = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output();
    let _ = std::fs::remove_file(&src);
    match out {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("no C compiler, header only checked textually"),
    }
}
