//! C interface: a field handle that runs the auction allocator, a model
//! handle for the imitation network, and a few stateless helpers.
//!
//! Every fallible call returns a [`PtcStatus`]. On failure the message is
//! kept per thread and read back with [`ptc_last_error`]. Panics are caught
//! at the boundary and reported as `PTC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ptc_core::ann::AnnModel;
use ptc_core::auction::{allocate, flows_from_valves, invert_valves, AuctionConfig, StaticPredictor, ValveSet};
use ptc_core::harness::weighted_mean;
use ptc_core::models::{static_outlet, LoopParams};
use ptc_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Training = 5,
    Panic = 6,
}

impl From<&Error> for PtcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain { .. } | Error::Shape { .. } | Error::Config(_) | Error::Comparison(_) => {
                PtcStatus::InvalidArgument
            }
            Error::Parse { .. } | Error::MissingFiles(_) | Error::Io { .. } => PtcStatus::Io,
            Error::Training(_) => PtcStatus::Training,
            _ => PtcStatus::Numerical,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PtcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(PtcStatus::from(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(PtcStatus::NullPointer, format!("{name} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(PtcStatus::InvalidArgument, message.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PtcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtcStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("panic: {message}"));
            PtcStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or points to `n` readable values.
unsafe fn input<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` is null or points to `n` writable values.
unsafe fn output<'a>(p: *mut f64, n: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ptc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ptc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A field of loops with their fault factors and the allocator settings.
pub struct PtcField {
    loops: Vec<LoopParams>,
    auction: AuctionConfig,
    t_in: f64,
}

/// Create a field of `n_loops` loops. `alpha_kopt` and `alpha_hl` hold one
/// factor per loop; either may be null for healthy loops (factor 1).
///
/// # Safety
/// Non-null arrays hold `n_loops` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ptc_field_new(
    n_loops: usize,
    alpha_kopt: *const f64,
    alpha_hl: *const f64,
    t_in: f64,
    out: *mut *mut PtcField,
) -> PtcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n_loops == 0 {
            return Err(invalid("a field needs at least one loop"));
        }
        let factor = |p: *const f64, i: usize| if p.is_null() { 1.0 } else { *p.add(i) };
        let loops: Vec<LoopParams> = (0..n_loops)
            .map(|i| LoopParams::default().with_faults(factor(alpha_kopt, i), factor(alpha_hl, i)))
            .collect();
        for p in &loops {
            p.validate()?;
        }
        if !t_in.is_finite() {
            return Err(invalid("inlet temperature must be finite"));
        }
        *out = Box::into_raw(Box::new(PtcField {
            loops,
            auction: AuctionConfig::default(),
            t_in,
        }));
        Ok(())
    })
}

/// # Safety
/// `field` is null or came from [`ptc_field_new`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ptc_field_free(field: *mut PtcField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of auction rounds per allocation.
///
/// # Safety
/// `field` came from [`ptc_field_new`].
#[no_mangle]
pub unsafe extern "C" fn ptc_field_set_rounds(field: *mut PtcField, rounds: u32) -> PtcStatus {
    guard(|| {
        let f = field.as_mut().ok_or_else(|| null("field"))?;
        f.auction.n_it = rounds as usize;
        Ok(())
    })
}

/// Run the auction from the split given by `valves_in` and write the new
/// per-loop flows (m³/s) and the valve apertures that realise them. Either
/// output may be null when not needed.
///
/// # Safety
/// `field` came from [`ptc_field_new`]; arrays hold one value per loop.
#[no_mangle]
pub unsafe extern "C" fn ptc_field_allocate(
    field: *const PtcField,
    t_a: f64,
    i_eff: f64,
    q_total: f64,
    valves_in: *const f64,
    flows_out: *mut f64,
    valves_out: *mut f64,
) -> PtcStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        let n = f.loops.len();
        let valves = ValveSet {
            apertures: input(valves_in, n, "valves_in")?.to_vec(),
        };
        if valves.apertures.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(invalid("valve apertures must lie in (0, 1]"));
        }
        let predictor = StaticPredictor::new(&f.loops, f.t_in, t_a, i_eff);
        let flows = allocate(&valves, q_total, &f.auction, &predictor)?;
        if !flows_out.is_null() {
            output(flows_out, n, "flows_out")?.copy_from_slice(&flows);
        }
        if !valves_out.is_null() {
            let inv = invert_valves(&valves, &flows, q_total, &f.auction)?;
            output(valves_out, n, "valves_out")?.copy_from_slice(&inv.valves.apertures);
        }
        Ok(())
    })
}

/// Steady outlet temperature of loop `index` at flow `q` (m³/s).
///
/// # Safety
/// `field` came from [`ptc_field_new`]; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ptc_field_static_outlet(
    field: *const PtcField,
    index: usize,
    t_a: f64,
    i_eff: f64,
    q: f64,
    out: *mut f64,
) -> PtcStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        let p = f
            .loops
            .get(index)
            .ok_or_else(|| invalid(format!("loop {index} out of {}", f.loops.len())))?;
        let t = static_outlet(p, f.t_in, t_a, i_eff, q)?;
        *out.as_mut().ok_or_else(|| null("out"))? = t;
        Ok(())
    })
}

/// Proportional split of `q_total` by `n` valve apertures.
///
/// # Safety
/// Both arrays hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ptc_flows_from_valves(
    valves: *const f64,
    n: usize,
    q_total: f64,
    flows_out: *mut f64,
) -> PtcStatus {
    guard(|| {
        let v = ValveSet {
            apertures: input(valves, n, "valves")?.to_vec(),
        };
        let flows = flows_from_valves(&v, q_total)?;
        output(flows_out, n, "flows_out")?.copy_from_slice(&flows);
        Ok(())
    })
}

/// Weather-class weighted mean of per-class values.
#[no_mangle]
pub extern "C" fn ptc_weighted_mean(sunny: f64, partly_cloudy: f64, cloudy: f64) -> f64 {
    weighted_mean(sunny, partly_cloudy, cloudy)
}

/// A trained imitation network with its scalers. Read-only after loading,
/// so one handle may serve several threads.
pub struct PtcModel {
    model: AnnModel,
}

/// Load a model file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ptc_model_load(path: *const c_char, out: *mut *mut PtcModel) -> PtcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let model = AnnModel::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(PtcModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` is null or came from [`ptc_model_load`] and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ptc_model_free(model: *mut PtcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width of the network, or 0 for a null handle.
///
/// # Safety
/// `model` is null or came from [`ptc_model_load`].
#[no_mangle]
pub unsafe extern "C" fn ptc_model_n_inputs(model: *const PtcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.net.n_inputs())
}

/// Output width of the network, or 0 for a null handle.
///
/// # Safety
/// `model` is null or came from [`ptc_model_load`].
#[no_mangle]
pub unsafe extern "C" fn ptc_model_n_outputs(model: *const PtcModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.net.n_outputs())
}

/// Valve apertures for one raw controller state.
///
/// # Safety
/// `model` came from [`ptc_model_load`]; `features` holds `n_features`
/// values and `valves_out` has room for `n_valves`.
#[no_mangle]
pub unsafe extern "C" fn ptc_model_infer(
    model: *const PtcModel,
    features: *const f64,
    n_features: usize,
    valves_out: *mut f64,
    n_valves: usize,
) -> PtcStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if n_features != m.net.n_inputs() || n_valves != m.net.n_outputs() {
            return Err(invalid(format!(
                "network maps {} inputs to {} outputs, got {n_features} and {n_valves}",
                m.net.n_inputs(),
                m.net.n_outputs()
            )));
        }
        let x = input(features, n_features, "features")?;
        let valves = m.infer_apertures(x, &mut m.buffers())?;
        output(valves_out, n_valves, "valves_out")?.copy_from_slice(&valves.apertures);
        Ok(())
    })
}
