//! C interface to `nleq`.
//!
//! Objects are exposed as opaque handles created by `*_new`/`*_load` and
//! released by the matching `*_free`. Every fallible function returns an
//! [`NleqStatus`]; on failure a description is available from
//! [`nleq_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use nleq::channel::simulate;
use nleq::config::ConfigFile;
use nleq::demapper::DemapperParams;
use nleq::framing::split_protocol;
use nleq::trainer::{train, write_run_directory};
use nleq::{file_header, Constellation, Error, Mlp};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NleqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidState = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// Opaque constellation handle.
pub struct NleqConstellation(Constellation);

/// Opaque network handle.
pub struct NleqModel(Mlp);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NleqStatus {
    match e {
        Error::InvalidParameter(_) => NleqStatus::InvalidParameter,
        Error::InvalidState(_) => NleqStatus::InvalidState,
        Error::Numerical { .. } => NleqStatus::Numerical,
        Error::Io { .. } => NleqStatus::Io,
        Error::Parse { .. } => NleqStatus::Parse,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NleqStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NleqStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as {what}"));
            NleqStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".to_string());
            NleqStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidParameter(format!("{what} is not valid UTF-8"))))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nleq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn nleq_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Unit-power 2^m-ASK with Gray labels and a uniform prior.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn nleq_constellation_new_ask(bits_per_symbol: usize, out: *mut *mut NleqConstellation) -> NleqStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let c = Constellation::make_ask(bits_per_symbol)?;
        *out = Box::into_raw(Box::new(NleqConstellation(c)));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from [`nleq_constellation_new_ask`].
#[no_mangle]
pub unsafe extern "C" fn nleq_constellation_free(c: *mut NleqConstellation) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nleq_constellation_len(c: *const NleqConstellation) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Bits per symbol, or 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nleq_constellation_bits_per_symbol(c: *const NleqConstellation) -> usize {
    c.as_ref().map_or(0, |c| c.0.bits_per_symbol())
}

/// Copy the points (ascending) and their labels. Both arrays must hold
/// `len` entries, with `len` equal to the constellation size.
///
/// # Safety
/// Pointers must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn nleq_constellation_points(
    c: *const NleqConstellation,
    points: *mut f64,
    labels: *mut u32,
    len: usize,
) -> NleqStatus {
    guard(|| {
        let c = &non_null(c, "constellation")?.0;
        if len != c.len() {
            return Err(Error::InvalidParameter(format!("buffer length {len}, constellation has {} points", c.len())).into());
        }
        slice_mut(points, len, "points")?.copy_from_slice(c.points());
        slice_mut(labels, len, "labels")?.copy_from_slice(c.labels());
        Ok(())
    })
}

/// Gaussian soft demapping of `n` equalized samples at noise variance
/// `sigma2`. Writes `n * m` LLRs (row-major, bit 0 = label MSB,
/// positive favors 0) into `llrs`.
///
/// # Safety
/// `y` must hold `n` values and `llrs` room for `n * m`.
#[no_mangle]
pub unsafe extern "C" fn nleq_demap(
    c: *const NleqConstellation,
    sigma2: f64,
    y: *const f64,
    n: usize,
    llrs: *mut f64,
) -> NleqStatus {
    guard(|| {
        let c = &non_null(c, "constellation")?.0;
        let m = c.bits_per_symbol();
        let params = DemapperParams::new(c, sigma2)?;
        let y = slice(y, n, "y")?;
        let out = slice_mut(llrs, n * m, "llrs")?;
        let mut joint = vec![0.0; c.len()];
        for (k, &v) in y.iter().enumerate() {
            params.log_joint_into(v, &mut joint);
            params.llrs_from_log_joint(&joint, &mut out[k * m..(k + 1) * m]);
        }
        Ok(())
    })
}

/// Load a network checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn nleq_model_load(path: *const c_char, out: *mut *mut NleqModel) -> NleqStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = Mlp::load(&path)?;
        *out = Box::into_raw(Box::new(NleqModel(model)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from [`nleq_model_load`].
#[no_mangle]
pub unsafe extern "C" fn nleq_model_free(m: *mut NleqModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Input width (tap count), or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nleq_model_input_len(m: *const NleqModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.input_len())
}

/// Output width, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nleq_model_output_len(m: *const NleqModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.output_len())
}

/// Run the network on `n` row-major input windows.
///
/// # Safety
/// `inputs` must hold `n * input_len` values, `outputs` room for
/// `n * output_len`.
#[no_mangle]
pub unsafe extern "C" fn nleq_model_predict(m: *const NleqModel, inputs: *const f64, n: usize, outputs: *mut f64) -> NleqStatus {
    guard(|| {
        let m = &non_null(m, "model")?.0;
        let inputs = slice(inputs, n * m.input_len(), "inputs")?;
        let out = slice_mut(outputs, n * m.output_len(), "outputs")?;
        out.copy_from_slice(&m.predict(inputs, n)?);
        Ok(())
    })
}

/// Train the model described by a TOML experiment file and write its results
/// directory under `out_dir` (or the file's `out_dir` when null).
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn nleq_train_from_config(config_path: *const c_char, out_dir: *const c_char) -> NleqStatus {
    guard(|| {
        let config_path = path_arg(config_path, "config_path")?;
        let out_dir = if out_dir.is_null() { None } else { Some(path_arg(out_dir, "out_dir")?) };
        train_from_config(&config_path, out_dir.as_deref()).map_err(Failure::from)
    })
}

fn train_from_config(config_path: &Path, out_dir: Option<&Path>) -> nleq::Result<()> {
    let cfg = ConfigFile::load(config_path)?;
    let exp = cfg.experiment();
    let c = exp.constellation()?;
    let frames = match &cfg.data.path {
        Some(p) => nleq::channel::read_frames_csv(p, &c)?,
        None => simulate(&c, &exp.channel, exp.n_frames, exp.frame_len)?.frames,
    };
    let run = train(&exp, &frames)?;
    let (_, eval) = split_protocol(&frames)?;
    let dir = out_dir.unwrap_or(&cfg.out_dir).join(exp.variant.name());
    write_run_directory(&dir, &run, eval, &file_header(exp.seed))
}
