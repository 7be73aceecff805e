//! C ABI for binloc.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `_free` function. Every fallible function returns a [`BinlocStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`binloc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use binloc::localize::localize_point;
use binloc::persist::{model_from_container, ArrayContainer, RunConfig};
use binloc::ppam::PpamModel;
use binloc::spectro::{stft, AudioBuffer};
use binloc::vessl::{self, map_estimates, separate};
use binloc::Error;

/// Result codes. Non-zero values mirror the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinlocStatus {
    Ok = 0,
    InvalidInput = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    FingerprintMismatch = 6,
    Numerical = 7,
    NullPointer = 8,
    Panic = 9,
}

impl From<&Error> for BinlocStatus {
    fn from(e: &Error) -> Self {
        match e.category() {
            "invalid_input" => Self::InvalidInput,
            "config" => Self::Config,
            "io" => Self::Io,
            "format" => Self::Format,
            "fingerprint_mismatch" => Self::FingerprintMismatch,
            _ => Self::Numerical,
        }
    }
}

/// A run configuration and a model ladder, coarse to fine.
pub struct BinlocModel {
    config: RunConfig,
    ladder: Vec<PpamModel>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BinlocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BinlocStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let status = BinlocStatus::from(&e);
            set_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            BinlocStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            BinlocStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn stereo(left: *const f64, right: *const f64, n: usize, sample_rate: u32) -> Result<AudioBuffer, Failure> {
    let l = slice_arg(left, n, "left")?.to_vec();
    let r = slice_arg(right, n, "right")?.to_vec();
    Ok(AudioBuffer::new(l, r, sample_rate)?)
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn binloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn binloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads `n_paths` model files, ordered coarse to fine. `config_json` may be
/// null for the default configuration; the models must carry its cue-layout
/// fingerprint.
///
/// # Safety
/// `paths` must point to `n_paths` nul-terminated strings and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_load(
    paths: *const *const c_char,
    n_paths: usize,
    config_json: *const c_char,
    out: *mut *mut BinlocModel,
) -> BinlocStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| Error::Config(e.to_string()))?
        };
        config.validate()?;
        let paths = slice_arg(paths, n_paths, "paths")?;
        if paths.is_empty() {
            return Err(Error::InvalidArgument("at least one model path is required".into()).into());
        }
        let mut ladder = Vec::with_capacity(paths.len());
        for &p in paths {
            let c = ArrayContainer::load(&PathBuf::from(str_arg(p, "path")?))?;
            c.require_fingerprint(&config.fingerprint())?;
            ladder.push(model_from_container(&c)?);
        }
        *out = Box::into_raw(Box::new(BinlocModel { config, ladder }));
        Ok(())
    })
}

/// Releases a handle from [`binloc_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_free(model: *mut BinlocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Component count of the finest model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn binloc_model_components(model: *const BinlocModel) -> usize {
    model.as_ref().and_then(|m| m.ladder.last()).map_or(0, |m| m.n_components())
}

/// Localizes the single source of a stereo signal with the finest model and
/// writes `[azimuth, elevation]` in degrees to `out_direction`.
///
/// # Safety
/// `left` and `right` must hold `n_samples` values each; `out_direction`
/// must have room for two.
#[no_mangle]
pub unsafe extern "C" fn binloc_localize(
    model: *const BinlocModel,
    left: *const f64,
    right: *const f64,
    n_samples: usize,
    sample_rate: u32,
    out_direction: *mut f64,
) -> BinlocStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if out_direction.is_null() {
            return Err(Failure::Null("out_direction"));
        }
        let audio = stereo(left, right, n_samples, sample_rate)?;
        let (_, obs) = m.config.features.extract(&audio)?;
        let finest = m.ladder.last().expect("ladder is non-empty");
        let (x, _) = localize_point(finest, &obs)?;
        std::slice::from_raw_parts_mut(out_direction, 2).copy_from_slice(&[x[0], x[1]]);
        Ok(())
    })
}

/// Localizes and separates `n_sources` sources. Writes `2·n_sources`
/// directions and, when the buffers are non-null, each separated source's
/// left and right channels, source after source, `n_sources·n_samples`
/// values per buffer.
///
/// # Safety
/// Buffer sizes must match the description above.
#[no_mangle]
pub unsafe extern "C" fn binloc_separate(
    model: *const BinlocModel,
    left: *const f64,
    right: *const f64,
    n_samples: usize,
    sample_rate: u32,
    n_sources: usize,
    out_directions: *mut f64,
    out_left: *mut f64,
    out_right: *mut f64,
) -> BinlocStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if out_directions.is_null() {
            return Err(Failure::Null("out_directions"));
        }
        let audio = stereo(left, right, n_samples, sample_rate)?;
        let (_, obs) = m.config.features.extract(&audio)?;
        let opts = vessl::VesslOptions { n_sources, seed: m.config.seed, ..m.config.vessl };
        let state = vessl::run(&m.ladder, &obs, &opts)?;
        let map = map_estimates(&state.qxz, &state.qw)?;
        let dirs = std::slice::from_raw_parts_mut(out_directions, 2 * n_sources);
        for (i, s) in map.sources.iter().enumerate() {
            dirs[2 * i] = s.direction[0];
            dirs[2 * i + 1] = s.direction[1];
        }
        if !out_left.is_null() && !out_right.is_null() {
            let (l, r) = stft(&audio, &m.config.features.stft)?;
            let outs = separate(&l, &r, &map, &obs.dims, n_samples)?;
            let ol = std::slice::from_raw_parts_mut(out_left, n_sources * n_samples);
            let or = std::slice::from_raw_parts_mut(out_right, n_sources * n_samples);
            for (i, o) in outs.iter().enumerate() {
                ol[i * n_samples..(i + 1) * n_samples].copy_from_slice(&o.left);
                or[i * n_samples..(i + 1) * n_samples].copy_from_slice(&o.right);
            }
        }
        Ok(())
    })
}
