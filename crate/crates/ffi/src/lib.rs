//! C ABI over the cascade-tuner library.
//!
//! Models and cascades are opaque handles created by `*_new`/`*_from_json`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`CtStatus`]; on failure the message is available from
//! [`ct_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cascade_tuner::abstention::cost_savings_estimate;
use cascade_tuner::cascade::{
    route, validate_thresholds, Architecture, CascadeSpec, Decision, ModelProfile, QueryRecord,
};
use cascade_tuner::joint::MarkovJointModel;
use cascade_tuner::metrics::{analytic_performance, loss_gradient};
use cascade_tuner::optimize::{optimize_thresholds, OptimizerOptions};
use cascade_tuner::ThresholdVector;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Model = 4,
    Optimize = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtArchitecture {
    Early = 0,
    Final = 1,
}

/// Opaque fitted joint confidence model.
pub struct CtModel(MarkovJointModel);

/// Opaque cascade description (model costs and architecture).
pub struct CtCascade(CascadeSpec);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CtPerformance {
    pub p_correct: f64,
    pub p_error: f64,
    pub expected_cost: f64,
    pub p_abstention: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CtRouteOutcome {
    /// 1-based position of the deciding model.
    pub position: usize,
    /// 1 if the query was abstained on, 0 if answered.
    pub abstained: i32,
    pub cumulative_cost: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CtCostSavings {
    pub total_cost_factor: f64,
    pub new_abstention_rate: f64,
    pub early_fraction: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

type CtResult = Result<(), (CtStatus, String)>;

fn guard(f: impl FnOnce() -> CtResult) -> CtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CtStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CtStatus::Panic
        }
    }
}

fn err<E: std::fmt::Display>(status: CtStatus) -> impl Fn(E) -> (CtStatus, String) {
    move |e| (status, e.to_string())
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], (CtStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((CtStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, (CtStatus, String)> {
    p.as_ref()
        .ok_or_else(|| (CtStatus::NullPointer, format!("{name} is null")))
}

unsafe fn thresholds(
    phi: *const f64,
    n_phi: usize,
    xi: *const f64,
    n_xi: usize,
) -> Result<ThresholdVector, (CtStatus, String)> {
    Ok(ThresholdVector::new(
        slice(phi, n_phi, "phi")?.to_vec(),
        slice(xi, n_xi, "xi")?.to_vec(),
    ))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ct_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ct_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses a model from the JSON written by `cascade-tuner fit` (the
/// `model` field) or by the library's model serializer.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_model_from_json(
    json: *const c_char,
    out: *mut *mut CtModel,
) -> CtStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err((
                CtStatus::NullPointer,
                "json and out must be non-null".into(),
            ));
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(err(CtStatus::Parse))?;
        let model = MarkovJointModel::from_json(s).map_err(err(CtStatus::Parse))?;
        *out = Box::into_raw(Box::new(CtModel(model)));
        Ok(())
    })
}

/// Number of models described by `model` (0 for null).
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ct_model_k(model: *const CtModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.k())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ct_model_free(model: *mut CtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a cascade of `k` models with the given expected costs.
///
/// # Safety
/// `costs` must point to `k` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_cascade_new(
    costs: *const f64,
    k: usize,
    architecture: CtArchitecture,
    out: *mut *mut CtCascade,
) -> CtStatus {
    guard(|| {
        if out.is_null() {
            return Err((CtStatus::NullPointer, "out is null".into()));
        }
        let costs = slice(costs, k, "costs")?;
        let models = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| ModelProfile {
                name: format!("m{}", i + 1),
                expected_cost: c,
            })
            .collect();
        let arch = match architecture {
            CtArchitecture::Early => Architecture::EarlyAbstention,
            CtArchitecture::Final => Architecture::FinalModelAbstention,
        };
        let spec = CascadeSpec::new(models, arch).map_err(err(CtStatus::InvalidArgument))?;
        *out = Box::into_raw(Box::new(CtCascade(spec)));
        Ok(())
    })
}

/// # Safety
/// `cascade` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ct_cascade_free(cascade: *mut CtCascade) {
    if !cascade.is_null() {
        drop(Box::from_raw(cascade));
    }
}

/// Validates `phi` (length k−1) and `xi` (length k) against the cascade.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn ct_validate_thresholds(
    cascade: *const CtCascade,
    phi: *const f64,
    n_phi: usize,
    xi: *const f64,
    n_xi: usize,
) -> CtStatus {
    guard(|| {
        let c = handle(cascade, "cascade")?;
        let t = thresholds(phi, n_phi, xi, n_xi)?;
        validate_thresholds(&c.0, &t).map_err(err(CtStatus::InvalidArgument))
    })
}

/// Closed-form error, cost and abstention of a threshold vector.
///
/// # Safety
/// Handles must be live; arrays valid for their lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ct_analytic_performance(
    model: *const CtModel,
    cascade: *const CtCascade,
    phi: *const f64,
    n_phi: usize,
    xi: *const f64,
    n_xi: usize,
    out: *mut CtPerformance,
) -> CtStatus {
    guard(|| {
        let (m, c) = (handle(model, "model")?, handle(cascade, "cascade")?);
        if out.is_null() {
            return Err((CtStatus::NullPointer, "out is null".into()));
        }
        let t = thresholds(phi, n_phi, xi, n_xi)?;
        let p = analytic_performance(&m.0, &c.0, &t).map_err(err(CtStatus::Model))?;
        *out = CtPerformance {
            p_correct: p.p_correct,
            p_error: p.p_error_no_abstain,
            expected_cost: p.expected_cost,
            p_abstention: p.p_abstention,
        };
        Ok(())
    })
}

/// Gradient of the loss with respect to `[phi..., xi...]`, written to
/// `grad` (length `n_phi + n_xi`).
///
/// # Safety
/// Handles must be live; arrays valid for their lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ct_loss_gradient(
    model: *const CtModel,
    cascade: *const CtCascade,
    phi: *const f64,
    n_phi: usize,
    xi: *const f64,
    n_xi: usize,
    lambda_c: f64,
    lambda_a: f64,
    grad: *mut f64,
    grad_len: usize,
) -> CtStatus {
    guard(|| {
        let (m, c) = (handle(model, "model")?, handle(cascade, "cascade")?);
        let t = thresholds(phi, n_phi, xi, n_xi)?;
        if grad.is_null() {
            return Err((CtStatus::NullPointer, "grad is null".into()));
        }
        let g = loss_gradient(&m.0, &c.0, &t, lambda_c, lambda_a).map_err(err(CtStatus::Model))?;
        if grad_len < g.len() {
            return Err((
                CtStatus::BufferTooSmall,
                format!("grad needs {} entries, got {grad_len}", g.len()),
            ));
        }
        ptr::copy_nonoverlapping(g.as_ptr(), grad, g.len());
        Ok(())
    })
}

/// Optimizes thresholds for one preference pair with default options and
/// the given seed. Writes `k−1` deferral and `k` abstention thresholds.
///
/// # Safety
/// Handles must be live; `phi_out` holds `k−1`, `xi_out` holds `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn ct_optimize_thresholds(
    model: *const CtModel,
    cascade: *const CtCascade,
    lambda_c: f64,
    lambda_a: f64,
    seed: u64,
    phi_out: *mut f64,
    xi_out: *mut f64,
    loss_out: *mut f64,
) -> CtStatus {
    guard(|| {
        let (m, c) = (handle(model, "model")?, handle(cascade, "cascade")?);
        let k = c.0.len();
        if (k > 1 && phi_out.is_null()) || xi_out.is_null() {
            return Err((
                CtStatus::NullPointer,
                "output arrays must be non-null".into(),
            ));
        }
        let opts = OptimizerOptions {
            seed,
            ..OptimizerOptions::default()
        };
        let cell = optimize_thresholds(&m.0, &c.0, lambda_c, lambda_a, &opts)
            .map_err(err(CtStatus::Optimize))?;
        if k > 1 {
            ptr::copy_nonoverlapping(cell.phi.as_ptr(), phi_out, k - 1);
        }
        ptr::copy_nonoverlapping(cell.xi.as_ptr(), xi_out, k);
        if !loss_out.is_null() {
            *loss_out = cell.loss;
        }
        Ok(())
    })
}

/// Routes one query with confidences `conf` (length k) at the cascade's
/// expected costs.
///
/// # Safety
/// Handles must be live; arrays valid for their lengths; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ct_route(
    cascade: *const CtCascade,
    phi: *const f64,
    n_phi: usize,
    xi: *const f64,
    n_xi: usize,
    conf: *const f64,
    n_conf: usize,
    out: *mut CtRouteOutcome,
) -> CtStatus {
    guard(|| {
        let c = handle(cascade, "cascade")?;
        if out.is_null() {
            return Err((CtStatus::NullPointer, "out is null".into()));
        }
        let t = thresholds(phi, n_phi, xi, n_xi)?;
        validate_thresholds(&c.0, &t).map_err(err(CtStatus::InvalidArgument))?;
        let k = c.0.len();
        let rec = QueryRecord {
            query_id: String::new(),
            confidences: slice(conf, n_conf, "conf")?.to_vec(),
            correct: vec![true; k],
            costs: c.0.expected_costs(),
        };
        rec.validate(k).map_err(err(CtStatus::InvalidArgument))?;
        let o = route(&c.0, &t, &rec);
        *out = CtRouteOutcome {
            position: o.decision.position(),
            abstained: i32::from(matches!(o.decision, Decision::Abstained(_))),
            cumulative_cost: o.cumulative_cost,
        };
        Ok(())
    })
}

/// Cost and abstention after early abstention at the given recall and
/// precision.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ct_cost_savings_estimate(
    abstention_rate: f64,
    recall: f64,
    precision: f64,
    cost_ratio: f64,
    out: *mut CtCostSavings,
) -> CtStatus {
    guard(|| {
        if out.is_null() {
            return Err((CtStatus::NullPointer, "out is null".into()));
        }
        let s = cost_savings_estimate(abstention_rate, recall, precision, cost_ratio)
            .map_err(err(CtStatus::InvalidArgument))?;
        *out = CtCostSavings {
            total_cost_factor: s.total_cost_factor,
            new_abstention_rate: s.new_abstention_rate,
            early_fraction: s.early_fraction,
        };
        Ok(())
    })
}
