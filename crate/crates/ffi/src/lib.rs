//! C ABI for picardnet.
//!
//! Every function returns a [`PnStatus`]. On failure the message is kept per
//! thread and can be read with [`pn_last_error_message`] until the next call
//! on that thread. Networks are opaque [`PnNetwork`] handles released with
//! [`pn_network_free`]; strings returned by the library are released with
//! [`pn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use picardnet::index_rng::{FrozenSample, IndexPath};
use picardnet::mlp_solver::{mlp_estimate, MlpConfig};
use picardnet::net_builder::build_mlp_network;
use picardnet::problems::problem_by_name;
use picardnet::{Error, ReluNetwork};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    ResourceGuard = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque network handle.
pub struct PnNetwork {
    net: ReluNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PnStatus {
    match e {
        Error::Dimension(_) | Error::Architecture(_) | Error::InvalidArgument(_) | Error::Unreachable { .. } => {
            PnStatus::InvalidArgument
        }
        Error::Config(_) | Error::Json(_) => PnStatus::Config,
        Error::ResourceGuard { .. } | Error::CostGuard { .. } => PnStatus::ResourceGuard,
        Error::Numeric { .. } => PnStatus::Numeric,
        Error::Io(_) => PnStatus::Io,
    }
}

fn guard<F>(f: F) -> PnStatus
where
    F: FnOnce() -> Result<(), (PnStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PnStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside picardnet");
            PnStatus::Panic
        }
    }
}

fn lib(e: Error) -> (PnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PnStatus, String) {
    (PnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (PnStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a network from its JSON serialization.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pn_network_from_json(json: *const c_char, out: *mut *mut PnNetwork) -> PnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = read_str(json, "json")?;
        let net = ReluNetwork::from_json_str(s).map_err(lib)?;
        *out = Box::into_raw(Box::new(PnNetwork { net }));
        Ok(())
    })
}

/// Serialize a network; free the result with `pn_string_free`.
///
/// # Safety
/// `net` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pn_network_to_json(net: *const PnNetwork, out: *mut *mut c_char) -> PnStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(net.net.to_json_string()).map_err(|e| (PnStatus::Io, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from `pn_network_to_json`.
#[no_mangle]
pub unsafe extern "C" fn pn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pn_network_free(net: *mut PnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input and output dimension, depth (number of affine layers) and the
/// parameter count of a network. Counts beyond `u64` saturate.
///
/// # Safety
/// `net` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn pn_network_shape(
    net: *const PnNetwork,
    input_dim: *mut usize,
    output_dim: *mut usize,
    depth: *mut usize,
    param_count: *mut u64,
) -> PnStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        if let Some(p) = input_dim.as_mut() {
            *p = net.input_dim();
        }
        if let Some(p) = output_dim.as_mut() {
            *p = net.output_dim();
        }
        if let Some(p) = depth.as_mut() {
            *p = net.layers().len();
        }
        if let Some(p) = param_count.as_mut() {
            *p = u64::try_from(net.param_count()).unwrap_or(u64::MAX);
        }
        Ok(())
    })
}

/// Evaluate the realization at `x`.
///
/// # Safety
/// `x` must hold `x_len` values and `out` room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn pn_network_realize(
    net: *const PnNetwork,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PnStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        let x = read_slice(x, x_len, "x")?;
        if out_len != net.output_dim() {
            return Err((
                PnStatus::InvalidArgument,
                format!("output buffer holds {out_len}, network has {} outputs", net.output_dim()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let y = net.realize(x).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&y);
        Ok(())
    })
}

/// `U^{root}_{n,M}(t, x)` for a catalog problem on the `M^M`-step grid.
///
/// # Safety
/// `problem` must be a NUL-terminated string, `x` must hold `dim` values and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pn_mlp_estimate(
    problem: *const c_char,
    dim: usize,
    horizon: f64,
    n: u32,
    m: u32,
    seed: u64,
    t: f64,
    x: *const f64,
    out: *mut f64,
) -> PnStatus {
    guard(|| {
        let name = read_str(problem, "problem")?;
        let x = read_slice(x, dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let entry = problem_by_name(name, dim, horizon).map_err(lib)?;
        let cfg = MlpConfig::with_default_grid(n, m, horizon, FrozenSample::new(seed)).map_err(lib)?;
        *out = mlp_estimate(&entry.problem, &cfg, &IndexPath::root(), t, x).map_err(lib)?;
        Ok(())
    })
}

/// Build `Φ^{root}_{n,t}` for a catalog problem with exact encodings on the
/// `M^M`-step grid; its realization equals `pn_mlp_estimate` with the same
/// arguments.
///
/// # Safety
/// `problem` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pn_build_mlp_network(
    problem: *const c_char,
    dim: usize,
    horizon: f64,
    n: u32,
    m: u32,
    seed: u64,
    t: f64,
    out: *mut *mut PnNetwork,
) -> PnStatus {
    guard(|| {
        let name = read_str(problem, "problem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let entry = problem_by_name(name, dim, horizon).map_err(lib)?;
        let nets = entry.problem.encodings.clone().ok_or_else(|| {
            (PnStatus::InvalidArgument, format!("{name} has no exact network encodings"))
        })?;
        let cfg = MlpConfig::with_default_grid(n, m, horizon, FrozenSample::new(seed)).map_err(lib)?;
        let built = build_mlp_network(&nets, &cfg, &IndexPath::root(), t).map_err(lib)?;
        *out = Box::into_raw(Box::new(PnNetwork { net: built.network }));
        Ok(())
    })
}
