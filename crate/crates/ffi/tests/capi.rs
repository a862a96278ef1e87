use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dgsr_ffi::*;

fn last_error() -> String {
    let p = dgsr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_model_bytes() -> Vec<u8> {
    use dgsr::math::Vec3;
    use dgsr::scene::{format, GaussianModel, GaussianPrimitive};
    let mut m = GaussianModel::new("t", 0).unwrap();
    m.push(GaussianPrimitive::isotropic(Vec3::zeros(), 0.4, 0.9, [0.8; 3]));
    m.canonicalize();
    format::serialize(&m)
}

fn camera(size: u32) -> *mut DgsrCamera {
    let id = CString::new("c0").unwrap();
    let mut cam = ptr::null_mut();
    let st = unsafe {
        dgsr_camera_look_at(id.as_ptr(), [0.0, 0.0, -4.0].as_ptr(), [0.0; 3].as_ptr(), [0.0, -1.0, 0.0].as_ptr(), 20.0, size, size, &mut cam)
    };
    assert_eq!(st, DgsrStatus::Ok);
    cam
}

#[test]
fn model_round_trip_and_render() {
    let bytes = tiny_model_bytes();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dgsr_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut model) }, DgsrStatus::Ok);
    assert_eq!(unsafe { dgsr_model_len(model) }, 1);
    assert_eq!(unsafe { dgsr_model_sh_degree(model) }, 0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.csgs").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dgsr_model_save(model, path.as_ptr()) }, DgsrStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { dgsr_model_load(path.as_ptr(), &mut loaded) }, DgsrStatus::Ok);
    assert_eq!(std::fs::read(dir.path().join("m.csgs")).unwrap(), bytes);

    let cam = camera(16);
    let mut rgb = vec![0f32; 3 * 16 * 16];
    assert_eq!(unsafe { dgsr_render_rgb(loaded, cam, rgb.as_mut_ptr(), rgb.len()) }, DgsrStatus::Ok);
    let center = 3 * (8 * 16 + 8);
    assert!(rgb[center] > 0.7, "center pixel {}", rgb[center]);
    assert!(rgb[0] < rgb[center]);

    let mut short = vec![0f32; 10];
    assert_eq!(unsafe { dgsr_render_rgb(loaded, cam, short.as_mut_ptr(), short.len()) }, DgsrStatus::BufferTooSmall);
    assert!(last_error().contains("768"));

    let mut db = 0.0;
    assert_eq!(unsafe { dgsr_psnr(rgb.as_ptr(), rgb.as_ptr(), 16, 16, &mut db) }, DgsrStatus::Ok);
    assert_eq!(db, 99.0);
    unsafe {
        dgsr_camera_free(cam);
        dgsr_model_free(model);
        dgsr_model_free(loaded);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.csgs").unwrap();
    assert_eq!(unsafe { dgsr_model_load(missing.as_ptr(), &mut model) }, DgsrStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("I/O"));

    let junk = [1u8, 2, 3];
    assert_eq!(unsafe { dgsr_model_from_bytes(junk.as_ptr(), junk.len(), &mut model) }, DgsrStatus::Format);
    assert_eq!(unsafe { dgsr_model_load(ptr::null(), &mut model) }, DgsrStatus::NullPointer);
    assert_eq!(unsafe { dgsr_model_len(ptr::null()) }, 0);
    unsafe { dgsr_model_free(ptr::null_mut()) };

    let bad = CString::new("[pipeline]\nworkers = 0\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dgsr_config_parse(bad.as_ptr(), &mut cfg) }, DgsrStatus::Config);
    assert!(cfg.is_null());
}

#[test]
fn fscore_matches_the_library() {
    let pred = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let gt = [0.0, 0.0, 0.05, 5.0, 5.0, 5.0];
    let mut f = DgsrFScore::default();
    assert_eq!(unsafe { dgsr_fscore(pred.as_ptr(), 2, gt.as_ptr(), 2, 0.1, &mut f) }, DgsrStatus::Ok);
    assert_eq!((f.precision, f.recall), (0.5, 0.5));
    assert_eq!(unsafe { dgsr_fscore(pred.as_ptr(), 2, ptr::null(), 0, 0.1, &mut f) }, DgsrStatus::InvalidArgument);
}

#[test]
fn tiny_pipeline_runs_through_the_c_interface() {
    let toml = CString::new(
        "[trainer]\nmax_iters = 10\nstage1_iters = 3\nprune_iter = 6\ndensify_start = 100\n\
         [aggregation]\ndistill_epochs = 1\n\
         [scene]\ncamera_grid = 2\nwidth = 16\nheight = 16\nfocal = 16.0\nholdout = 1\nsupersample = 1\n\
         [init]\nstride = 4\n",
    )
    .unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dgsr_config_parse(toml.as_ptr(), &mut cfg) }, DgsrStatus::Ok);
    let dir = tempfile::tempdir().unwrap();
    let root = CString::new(dir.path().to_str().unwrap()).unwrap();
    let spec = CString::new("(1x1)*1").unwrap();
    assert_eq!(unsafe { dgsr_run_pipeline(cfg, spec.as_ptr(), root.as_ptr(), 1) }, DgsrStatus::Ok);
    assert!(dir.path().join("cloud/artifact.csgs").is_file());

    let bad = CString::new("(2x3)*1").unwrap();
    assert_eq!(unsafe { dgsr_run_pipeline(cfg, bad.as_ptr(), root.as_ptr(), 1) }, DgsrStatus::Config);
    unsafe { dgsr_config_free(cfg) };
}

#[test]
fn header_declares_the_interface_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dgsr.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["dgsr_model_load", "dgsr_render_rgb", "dgsr_fscore", "dgsr_run_pipeline", "dgsr_last_error", "DGSR_STATUS_OK", "DgsrModel"] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    // Syntax check only when a C compiler is available.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
