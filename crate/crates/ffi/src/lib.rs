//! C interface to model I/O, rendering, metrics and the synthetic pipeline.
//!
//! Every function returns a [`DgsrStatus`]. On failure the message is kept
//! per thread and can be read with [`dgsr_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dgsr::config::RunConfig;
use dgsr::eval::{fscore, psnr, synth_scene};
use dgsr::image::ImageBuf;
use dgsr::math::Vec3;
use dgsr::orchestrate::{execute, partition_cameras, stage_synthetic_inputs, ExecuteOptions, PartitionSpec, RunLayout};
use dgsr::raster::{render, RenderConfig};
use dgsr::scene::{format, Camera, CameraSet, GaussianModel};
use dgsr::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Pipeline = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A Gaussian model.
pub struct DgsrModel(GaussianModel);

/// A pinhole camera.
pub struct DgsrCamera(Camera);

/// A run configuration.
pub struct DgsrConfig(RunConfig);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DgsrFScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DgsrStatus {
    match e {
        Error::Io(_) | Error::Image(_) | Error::MissingArtifact { .. } => DgsrStatus::Io,
        Error::MalformedHeader(_)
        | Error::VersionMismatch { .. }
        | Error::TruncatedPayload { .. }
        | Error::Parse { .. }
        | Error::SchemaViolation { .. } => DgsrStatus::Format,
        Error::Config(_) | Error::PartitionSpec(_) => DgsrStatus::Config,
        Error::StageFailed { .. } | Error::EmptyCell(_) | Error::NonFiniteLoss { .. } | Error::NoCameras(_) => DgsrStatus::Pipeline,
        _ => DgsrStatus::InvalidArgument,
    }
}

/// Runs `f`, recording its error or panic.
fn guard(f: impl FnOnce() -> Result<(), (DgsrStatus, String)>) -> DgsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgsrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DgsrStatus::Panic
        }
    }
}

fn lift(e: Error) -> (DgsrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DgsrStatus, String) {
    (DgsrStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DgsrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DgsrStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (DgsrStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (DgsrStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dgsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Loads a serialized model file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_load(path: *const c_char, out: *mut *mut DgsrModel) -> DgsrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let model = format::load(&PathBuf::from(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(DgsrModel(model)));
        Ok(())
    })
}

/// Decodes a model from serialized bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut DgsrModel) -> DgsrStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let out = out_arg(out, "out")?;
        let data = std::slice::from_raw_parts(bytes, len);
        let model = format::deserialize(data, "ffi").map_err(lift)?;
        *out = Box::into_raw(Box::new(DgsrModel(model)));
        Ok(())
    })
}

/// Writes a model in the serialized format.
///
/// # Safety
/// `model` must come from this library and `path` be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_save(model: *const DgsrModel, path: *const c_char) -> DgsrStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let path = str_arg(path, "path")?;
        format::save(&model.0, &PathBuf::from(path)).map_err(lift)
    })
}

/// Number of primitives, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_len(model: *const DgsrModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.len())
}

/// Spherical-harmonics degree, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_sh_degree(model: *const DgsrModel) -> u8 {
    model.as_ref().map_or(0, |m| m.0.sh_degree)
}

/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dgsr_model_free(model: *mut DgsrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Camera at `eye` looking at `target`, with `up` roughly opposite the image y axis.
///
/// # Safety
/// `id` must be nul-terminated, the vectors point to 3 doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn dgsr_camera_look_at(
    id: *const c_char,
    eye: *const f64,
    target: *const f64,
    up: *const f64,
    focal: f64,
    width: u32,
    height: u32,
    out: *mut *mut DgsrCamera,
) -> DgsrStatus {
    guard(|| {
        let id = str_arg(id, "id")?;
        let v = |p: *const f64, what: &str| -> Result<Vec3, (DgsrStatus, String)> {
            if p.is_null() {
                return Err(null(what));
            }
            let s = std::slice::from_raw_parts(p, 3);
            Ok(Vec3::new(s[0], s[1], s[2]))
        };
        let out = out_arg(out, "out")?;
        let cam = Camera::look_at(id, v(eye, "eye")?, v(target, "target")?, v(up, "up")?, focal, width, height);
        cam.validate().map_err(lift)?;
        *out = Box::into_raw(Box::new(DgsrCamera(cam)));
        Ok(())
    })
}

/// # Safety
/// `camera` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dgsr_camera_free(camera: *mut DgsrCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Renders `model` from `camera` into `rgb`, row-major interleaved RGB in
/// [0, 1]. `len` must be at least `3 · width · height`.
///
/// # Safety
/// Handles must come from this library and `rgb` hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn dgsr_render_rgb(model: *const DgsrModel, camera: *const DgsrCamera, rgb: *mut f32, len: usize) -> DgsrStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let cam = ref_arg(camera, "camera")?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let need = 3 * cam.0.pixel_count();
        if len < need {
            return Err((DgsrStatus::BufferTooSmall, format!("need {need} floats, got {len}")));
        }
        let rb = render(&model.0, &cam.0, &RenderConfig::default().forward_only());
        let out = std::slice::from_raw_parts_mut(rgb, need);
        for (o, v) in out.iter_mut().zip(&rb.rgb.data) {
            *o = *v as f32;
        }
        Ok(())
    })
}

/// PSNR in decibels between two RGB images of `width · height` pixels.
///
/// # Safety
/// `a` and `b` must each hold `3 · width · height` floats.
#[no_mangle]
pub unsafe extern "C" fn dgsr_psnr(a: *const f32, b: *const f32, width: usize, height: usize, out: *mut f64) -> DgsrStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("image"));
        }
        let out = out_arg(out, "out")?;
        let n = 3 * width * height;
        let img = |p: *const f32| {
            let data = std::slice::from_raw_parts(p, n).iter().map(|&v| v as f64).collect();
            ImageBuf::from_vec(width, height, 3, data)
        };
        *out = psnr(&img(a).map_err(lift)?, &img(b).map_err(lift)?).map_err(lift)?;
        Ok(())
    })
}

/// Precision, recall and F-score of `pred` against `gt` at threshold `eps`.
/// Clouds are packed `x y z` triples.
///
/// # Safety
/// `pred` must hold `3 · n_pred` doubles and `gt` hold `3 · n_gt`.
#[no_mangle]
pub unsafe extern "C" fn dgsr_fscore(
    pred: *const f64,
    n_pred: usize,
    gt: *const f64,
    n_gt: usize,
    eps: f64,
    out: *mut DgsrFScore,
) -> DgsrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cloud = |p: *const f64, n: usize| -> Vec<Vec3> {
            if p.is_null() || n == 0 {
                return Vec::new();
            }
            std::slice::from_raw_parts(p, 3 * n)
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect()
        };
        let f = fscore(&cloud(pred, n_pred), &cloud(gt, n_gt), eps).map_err(lift)?;
        *out = DgsrFScore {
            precision: f.precision,
            recall: f.recall,
            f: f.f,
        };
        Ok(())
    })
}

/// Built-in defaults.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgsr_config_default(out: *mut *mut DgsrConfig) -> DgsrStatus {
    guard(|| {
        *out_arg(out, "out")? = Box::into_raw(Box::new(DgsrConfig(RunConfig::default())));
        Ok(())
    })
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be nul-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dgsr_config_parse(toml: *const c_char, out: *mut *mut DgsrConfig) -> DgsrStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(DgsrConfig(RunConfig::from_toml_str(text).map_err(lift)?)));
        Ok(())
    })
}

/// # Safety
/// `config` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dgsr_config_free(config: *mut DgsrConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Synthesizes the configured scene, partitions it per `spec` (for example
/// `"(2x2)*1"`) and runs the full pipeline under `run_root`. The cloud model
/// is written to `run_root/cloud/artifact.csgs`.
///
/// # Safety
/// `config` must come from this library; strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn dgsr_run_pipeline(config: *const DgsrConfig, spec: *const c_char, run_root: *const c_char, workers: usize) -> DgsrStatus {
    guard(|| {
        let cfg = &ref_arg(config, "config")?.0;
        let spec: PartitionSpec = str_arg(spec, "spec")?.parse().map_err(lift)?;
        let root = PathBuf::from(str_arg(run_root, "run_root")?);
        let scene = synth_scene(cfg.seed, &cfg.scene).map_err(lift)?;
        let cams = CameraSet::new(scene.cameras.clone()).map_err(lift)?;
        let topo = partition_cameras(&cams, spec, &scene.extent()).map_err(lift)?;
        let layout = RunLayout::new(root);
        stage_synthetic_inputs(&scene, &topo, &layout, cfg).map_err(lift)?;
        let opts = ExecuteOptions {
            workers: (workers > 0).then_some(workers),
            ..Default::default()
        };
        execute(&topo, &layout, cfg, &opts).map_err(lift)?;
        Ok(())
    })
}
