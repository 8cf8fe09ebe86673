//! C ABI over `rcmwalk`.
//!
//! Objects are opaque heap handles freed with their `_free` function. Every call
//! returns an [`RcmStatus`]; on failure `rcm_last_error` holds a message for the
//! calling thread until its next failing call. Panics are caught and reported as
//! `RCM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use rcmwalk::lattice::{LatticeBox, Point};
use rcmwalk::layered::{kernel_estimate, KernelMode, LayeredModel, Target};
use rcmwalk::oracle::{exact_green, exact_prob, Boundary, GeneratorBox};
use rcmwalk::scenery::{Law, SceneryField};
use rcmwalk::{theory, walk, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Regime = 4,
    Resource = 5,
    InsufficientData = 6,
    Config = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RcmLaw {
    ParetoUnit = 0,
    /// `param` is the cap.
    CappedPareto = 1,
    /// `param` is the value.
    Constant = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RcmKernelMode {
    RaoBlackwell = 0,
    RaoBlackwellBridge = 1,
    DirectGillespie = 2,
    Factorized = 3,
}

/// Opaque scenery field.
pub struct RcmScenery(SceneryField);

/// Opaque layered conductance model.
pub struct RcmModel(LayeredModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> RcmStatus {
    match e {
        Error::Argument(_) => RcmStatus::InvalidArgument,
        Error::Dimension { .. } => RcmStatus::Dimension,
        Error::Regime(_) => RcmStatus::Regime,
        Error::Resource(_) => RcmStatus::Resource,
        Error::InsufficientData(_) => RcmStatus::InsufficientData,
        Error::Config(_) => RcmStatus::Config,
        Error::Io(_) | Error::Json(_) => RcmStatus::Io,
    }
}

/// Run `f`, mapping errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), RcmStatus>) -> RcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcmStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside rcmwalk");
            RcmStatus::Panic
        }
    }
}

fn fail(e: Error) -> RcmStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(name: &str) -> RcmStatus {
    set_error(&format!("{name} is null"));
    RcmStatus::NullPointer
}

unsafe fn coords<'a>(p: *const i64, len: usize, name: &str) -> Result<&'a [i64], RcmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, v: T, name: &str) -> Result<(), RcmStatus> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = v;
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the calling thread's last failure; empty if none. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn rcm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn rcm_scenery_new(
    seed: u64,
    alpha: f64,
    dimension: usize,
    law: RcmLaw,
    param: f64,
    out: *mut *mut RcmScenery,
) -> RcmStatus {
    guard(|| {
        let law = match law {
            RcmLaw::ParetoUnit => Law::ParetoUnit,
            RcmLaw::CappedPareto => Law::CappedPareto { cap: param },
            RcmLaw::Constant => Law::Constant { value: param },
        };
        let f = SceneryField::new(seed, alpha, dimension, law).map_err(fail)?;
        write(out, Box::into_raw(Box::new(RcmScenery(f))), "out")
    })
}

/// # Safety
/// `s` must come from `rcm_scenery_new` and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rcm_scenery_free(s: *mut RcmScenery) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// `z(x)` at the `len` coordinates `x`.
///
/// # Safety
/// `s` must be a live handle, `x` must point to `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_scenery_z(s: *const RcmScenery, x: *const i64, len: usize, out: *mut f64) -> RcmStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("scenery"))?;
        let x = coords(x, len, "x")?;
        let z = s.0.z_at(x).map_err(fail)?;
        write(out, z, "out")
    })
}

/// Free-walk kernel `p_t(0, x)` with jump rate `rate` per direction.
///
/// # Safety
/// `x` must point to `d` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_kernel(d: usize, t: f64, x: *const i64, rate: f64, out: *mut f64) -> RcmStatus {
    guard(|| {
        let x = coords(x, d, "x")?;
        let v = walk::kernel(d, t, x, rate).map_err(fail)?;
        write(out, v, "out")
    })
}

/// Layered model on `Z^{d1+d2}`; the scenery is copied and must have dimension `d2`.
///
/// # Safety
/// `scenery` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_model_new(d1: usize, d2: usize, scenery: *const RcmScenery, out: *mut *mut RcmModel) -> RcmStatus {
    guard(|| {
        let s = scenery.as_ref().ok_or_else(|| null("scenery"))?;
        let m = LayeredModel::new(d1, d2, s.0.clone()).map_err(fail)?;
        write(out, Box::into_raw(Box::new(RcmModel(m))), "out")
    })
}

/// # Safety
/// `m` must come from `rcm_model_new` and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn rcm_model_free(m: *mut RcmModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

unsafe fn target(m: &LayeredModel, x: *const i64, len: usize) -> Result<Target, RcmStatus> {
    let x = coords(x, len, "target")?;
    if x.len() != m.dim() {
        return Err(fail(Error::Dimension { expected: m.dim(), got: x.len() }));
    }
    Target::new(&x[..m.d1], &x[m.d1..]).map_err(fail)
}

/// Monte Carlo `P(X_t = x)` from the origin with `n` samples.
///
/// # Safety
/// `m` must be live, `x` must point to `len` values, outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_kernel_estimate(
    m: *const RcmModel,
    t: f64,
    x: *const i64,
    len: usize,
    n: u64,
    mode: RcmKernelMode,
    seed: u64,
    mean: *mut f64,
    stderr: *mut f64,
) -> RcmStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("model"))?.0;
        let tg = target(m, x, len)?;
        let mode = match mode {
            RcmKernelMode::RaoBlackwell => KernelMode::RaoBlackwell,
            RcmKernelMode::RaoBlackwellBridge => KernelMode::RaoBlackwellBridge,
            RcmKernelMode::DirectGillespie => KernelMode::DirectGillespie,
            RcmKernelMode::Factorized => KernelMode::Factorized,
        };
        let e = kernel_estimate(m, t, &tg, n, mode, seed).map_err(fail)?;
        write(mean, e.mean, "mean")?;
        write(stderr, e.stderr, "stderr")
    })
}

fn oracle_box(m: &LayeredModel, radius: i64) -> Result<GeneratorBox, RcmStatus> {
    if radius < 0 {
        return Err(fail(Error::Argument(format!("radius must be >= 0, got {radius}"))));
    }
    GeneratorBox::layered(m, LatticeBox::cube(m.dim(), radius), Boundary::Absorbing, false).map_err(fail)
}

/// Exact `P(X_t = x)` from the origin in the absorbing box `[-radius, radius]^{d1+d2}`.
///
/// # Safety
/// `m` must be live, `x` must point to `len` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_exact_prob(m: *const RcmModel, radius: i64, t: f64, x: *const i64, len: usize, out: *mut f64) -> RcmStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("model"))?.0;
        let tg = target(m, x, len)?;
        let g = oracle_box(m, radius)?;
        let origin = Point::origin(m.dim());
        let v = exact_prob(&g, t, origin.coords(), &tg.coords()).map_err(fail)?;
        write(out, v.value, "out")
    })
}

/// Exact Green function `g(0, x)` of the walk killed on leaving `[-radius, radius]^{d1+d2}`.
///
/// # Safety
/// `m` must be live, `x` must point to `len` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_exact_green(m: *const RcmModel, radius: i64, x: *const i64, len: usize, out: *mut f64) -> RcmStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("model"))?.0;
        let tg = target(m, x, len)?;
        let g = oracle_box(m, radius)?;
        let origin = Point::origin(m.dim());
        let v = exact_green(&g, origin.coords(), &tg.coords()).map_err(fail)?;
        write(out, v.value, "out")
    })
}

/// Decay exponent `beta` of `P(X_t = 0) = t^{-beta + o(1)}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_ondiag_exponent(d1: usize, d2: usize, alpha: f64, out: *mut f64) -> RcmStatus {
    guard(|| {
        let v = theory::ondiag_exponent(d1, d2, alpha).map_err(fail)?;
        write(out, v, "out")
    })
}

/// Exponent of `g(0, n e1) = n^{gamma + o(1)}` (negative).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rcm_green_exponent(d1: usize, d2: usize, alpha: f64, out: *mut f64) -> RcmStatus {
    guard(|| {
        let v = theory::green_exponent(d1, d2, alpha).map_err(fail)?;
        write(out, v, "out")
    })
}
