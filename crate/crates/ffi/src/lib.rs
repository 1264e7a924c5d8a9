//! C ABI over the slicetwin library.
//!
//! Every function returns a [`StStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and read with
//! [`st_last_error`]. Panics are caught at the boundary and reported as
//! [`StStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use slicetwin::baselines::{netshare_grants, AllocatorId};
use slicetwin::experiment::{run_experiment, run_single, write_run_outputs, ExperimentError, Scenario, SweepRow};
use slicetwin::radio::{self, AllocationState};
use slicetwin::rng::{stream_id, stream_rng};
use slicetwin::twin::{Normalizer, TwinConfig, TwinModel, Window};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The scenario JSON does not parse or fails validation.
    Schema = 3,
    Runtime = 4,
    Io = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(StStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(StStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(message: impl Into<String>) -> Self {
        Failure(StStatus::InvalidArgument, message.into())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let status = match e {
            _ if e.is_schema_error() => StStatus::Schema,
            ExperimentError::Io { .. } => StStatus::Io,
            _ => StStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            StStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg(format!("{what} is not valid UTF-8")))
}

fn finite(values: &[f64]) -> Result<(), Failure> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Failure::arg("arguments must be finite"))
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Free-space path loss in dB at distance `d_m` metres and carrier `f_mhz`.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_path_loss_db(d_m: f64, f_mhz: f64, out: *mut f64) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        *out = radio::path_loss_db(d_m, f_mhz).map_err(|e| Failure::arg(e.to_string()))?;
        Ok(())
    })
}

/// Shannon rate in b/s.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_achievable_rate(w_hz: f64, p_w: f64, h2: f64, noise_w: f64, out: *mut f64) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        finite(&[w_hz, p_w, h2, noise_w])?;
        if w_hz < 0.0 || p_w < 0.0 || h2 < 0.0 || noise_w <= 0.0 {
            return Err(Failure::arg("bandwidth, power and gain must be >= 0 and noise > 0"));
        }
        *out = radio::achievable_rate(w_hz, p_w, h2, noise_w);
        Ok(())
    })
}

/// Mean M/M/1 delay in seconds, capped at `cap_s` when the queue is unstable.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_average_delay(
    rate_bps: f64,
    arrival_rate: f64,
    packet_bits: f64,
    cap_s: f64,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        finite(&[rate_bps, arrival_rate, packet_bits, cap_s])?;
        if packet_bits <= 0.0 || arrival_rate < 0.0 || cap_s <= 0.0 {
            return Err(Failure::arg("packet size and cap must be positive, arrivals >= 0"));
        }
        *out = radio::average_delay(rate_bps, arrival_rate, packet_bits, cap_s);
        Ok(())
    })
}

/// Sigmoid satisfaction of a rate requirement.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_rate_utility(rate_bps: f64, r_min_bps: f64, steepness: f64, out: *mut f64) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        finite(&[rate_bps, r_min_bps, steepness])?;
        *out = radio::rate_utility(rate_bps, r_min_bps, steepness);
        Ok(())
    })
}

/// Sigmoid satisfaction of a delay requirement.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_delay_utility(delay_s: f64, tau_max_s: f64, steepness: f64, out: *mut f64) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        finite(&[delay_s, tau_max_s, steepness])?;
        *out = radio::delay_utility(delay_s, tau_max_s, steepness);
        Ok(())
    })
}

/// Raw (`w / phi`) and clipped (`min(w, phi) / w`) utilization.
///
/// # Safety
/// `raw` and `clipped` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_utilization(granted: u32, demanded: u32, raw: *mut f64, clipped: *mut f64) -> StStatus {
    guard(|| {
        let raw = unsafe { out(raw, "raw") }?;
        let clipped = unsafe { out(clipped, "clipped") }?;
        let u = radio::utilization(granted, demanded);
        *raw = u.raw;
        *clipped = u.clipped;
        Ok(())
    })
}

/// Weighted slice reward.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_reward(omega: f64, mean_utility: f64, lambda: f64, mu: f64, out: *mut f64) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        finite(&[omega, mean_utility, lambda, mu])?;
        *out = radio::reward(omega, mean_utility, lambda, mu);
        Ok(())
    })
}

/// Applies RB deltas to `grants` and projects onto the feasible set.
/// `grants`, `caps`, `deltas` and `out_grants` all hold `n` entries; the
/// input grants must already be feasible.
///
/// # Safety
/// Each pointer must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn st_apply_allocation(
    grants: *const u32,
    caps: *const u32,
    n: usize,
    total_rbs: u32,
    deltas: *const i64,
    out_grants: *mut u32,
) -> StStatus {
    guard(|| {
        let grants = unsafe { slice(grants, n, "grants") }?;
        let caps = unsafe { slice(caps, n, "caps") }?;
        let deltas = unsafe { slice(deltas, n, "deltas") }?;
        let dst = unsafe { slice_mut(out_grants, n, "out_grants") }?;
        let state = AllocationState::new(grants.to_vec(), caps.to_vec(), total_rbs)
            .map_err(|e| Failure::arg(e.to_string()))?;
        dst.copy_from_slice(state.apply(deltas).grants());
        Ok(())
    })
}

/// Demand-proportional split of `total_rbs` over `n` slices.
///
/// # Safety
/// `demands` and `out_grants` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn st_netshare_grants(
    demands: *const f64,
    n: usize,
    total_rbs: u32,
    out_grants: *mut u32,
) -> StStatus {
    guard(|| {
        let demands = unsafe { slice(demands, n, "demands") }?;
        let dst = unsafe { slice_mut(out_grants, n, "out_grants") }?;
        let grants = netshare_grants(demands, total_rbs).map_err(|e| Failure::arg(e.to_string()))?;
        dst.copy_from_slice(&grants);
        Ok(())
    })
}

/// Opaque digital-twin forecaster.
pub struct StTwin {
    model: TwinModel,
    window: usize,
}

/// Creates a twin with the default configuration over `nodes` devices and
/// `channels` demand channels, looking back `window` steps.
///
/// # Safety
/// `out` must be null or valid for a write. Release the handle with
/// [`st_twin_free`].
#[no_mangle]
pub unsafe extern "C" fn st_twin_new(
    nodes: usize,
    channels: usize,
    window: usize,
    seed: u64,
    out: *mut *mut StTwin,
) -> StStatus {
    guard(|| {
        let out = unsafe { self::out(out, "out") }?;
        let config = TwinConfig {
            window,
            ..TwinConfig::default()
        };
        let mut rng = stream_rng(seed, stream_id("twin-init", 0));
        let model = TwinModel::new(config, nodes, channels, &mut rng).map_err(|e| Failure::arg(e.to_string()))?;
        *out = Box::into_raw(Box::new(StTwin { model, window }));
        Ok(())
    })
}

/// # Safety
/// `twin` must come from [`st_twin_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_twin_free(twin: *mut StTwin) {
    if !twin.is_null() {
        drop(Box::from_raw(twin));
    }
}

/// Number of trainable parameters.
///
/// # Safety
/// `twin` must be a live handle; `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_twin_param_count(twin: *const StTwin, out: *mut usize) -> StStatus {
    guard(|| {
        let twin = unsafe { twin.as_ref() }.ok_or_else(|| Failure::null("twin"))?;
        *unsafe { self::out(out, "out") }? = twin.model.params().len();
        Ok(())
    })
}

/// Sets input scaling from a sample of raw demand values.
///
/// # Safety
/// `twin` must be a live handle; `values` valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn st_twin_fit_normalizer(twin: *mut StTwin, values: *const f64, len: usize) -> StStatus {
    guard(|| {
        let twin = unsafe { twin.as_mut() }.ok_or_else(|| Failure::null("twin"))?;
        let values = unsafe { slice(values, len, "values") }?;
        finite(values)?;
        twin.model.set_normalizer(Normalizer::fit(values));
        Ok(())
    })
}

fn window_from(twin: &StTwin, t_end: usize, data: &[f64]) -> Result<Window, Failure> {
    let nodes = twin.model.nodes();
    let per_node = twin.model.channels() * twin.window;
    if data.len() != nodes * per_node {
        return Err(Failure::arg(format!(
            "window holds {} values; expected nodes x channels x window = {}",
            data.len(),
            nodes * per_node
        )));
    }
    finite(data)?;
    Ok(Window {
        t_end,
        nodes: data.chunks(per_node).map(<[f64]>::to_vec).collect(),
    })
}

/// Forecasts aggregate demand for step `t_end + 1`. `data` is node-major,
/// then channel-major, then time: `data[(v * channels + z) * window + k]`.
///
/// # Safety
/// `twin` must be a live handle; `data` valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn st_twin_predict(
    twin: *const StTwin,
    t_end: usize,
    data: *const f64,
    len: usize,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let twin = unsafe { twin.as_ref() }.ok_or_else(|| Failure::null("twin"))?;
        let data = unsafe { slice(data, len, "data") }?;
        let out = unsafe { self::out(out, "out") }?;
        let window = window_from(twin, t_end, data)?;
        *out = twin
            .model
            .predict(&window)
            .map_err(|e| Failure(StStatus::Runtime, e.to_string()))?
            .aggregate;
        Ok(())
    })
}

/// One online training step towards the observed per-node demand `next`
/// (`next_len` equals the node count, single channel). Writes the pre-step
/// loss to `loss`, which may be null.
///
/// # Safety
/// `twin` must be a live handle; `data` and `next` valid for their lengths.
#[no_mangle]
pub unsafe extern "C" fn st_twin_train_step(
    twin: *mut StTwin,
    t_end: usize,
    data: *const f64,
    len: usize,
    next: *const f64,
    next_len: usize,
    loss: *mut f64,
) -> StStatus {
    guard(|| {
        let twin = unsafe { twin.as_mut() }.ok_or_else(|| Failure::null("twin"))?;
        let data = unsafe { slice(data, len, "data") }?;
        let next = unsafe { slice(next, next_len, "next") }?;
        finite(next)?;
        let window = window_from(twin, t_end, data)?;
        let l = twin
            .model
            .train_step(&window, next)
            .map_err(|e| Failure(StStatus::Runtime, e.to_string()))?;
        if let Some(loss) = unsafe { loss.as_mut() } {
            *loss = l;
        }
        Ok(())
    })
}

/// Checks a scenario JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn st_scenario_validate(json: *const c_char) -> StStatus {
    guard(|| {
        Scenario::from_json_str(unsafe { text(json, "json") }?)?;
        Ok(())
    })
}

/// Final-window means of one run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StRunSummary {
    pub reward: f64,
    pub omega: f64,
    pub qos: f64,
    pub federation_scalars: u64,
    pub report_scalars: u64,
}

/// Runs one allocator (`"dt-mafl"`, `"fl-only"`, `"madqn"`, `"netshare"`)
/// on one seed of a scenario given as JSON.
///
/// # Safety
/// `json` and `allocator` must be NUL-terminated strings; `out` null or
/// valid for a write.
#[no_mangle]
pub unsafe extern "C" fn st_run_single(
    json: *const c_char,
    allocator: *const c_char,
    seed: u64,
    out: *mut StRunSummary,
) -> StStatus {
    guard(|| {
        let scenario = Scenario::from_json_str(unsafe { text(json, "json") }?)?;
        let allocator: AllocatorId = unsafe { text(allocator, "allocator") }?
            .parse()
            .map_err(|e: String| Failure::arg(e))?;
        let out = unsafe { self::out(out, "out") }?;
        let run = run_single(&scenario, allocator, seed)?;
        let row = SweepRow::from_run(&run, scenario.window_len());
        *out = StRunSummary {
            reward: row.reward,
            omega: row.omega,
            qos: row.u_mean,
            federation_scalars: run.comm.federation_scalars,
            report_scalars: run.comm.report_scalars,
        };
        Ok(())
    })
}

/// Runs a whole scenario and writes its outputs under `out_dir`.
///
/// # Safety
/// `json` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn st_run_experiment(json: *const c_char, out_dir: *const c_char) -> StStatus {
    guard(|| {
        let scenario = Scenario::from_json_str(unsafe { text(json, "json") }?)?;
        let dir = Path::new(unsafe { text(out_dir, "out_dir") }?);
        let output = run_experiment(&scenario)?;
        write_run_outputs(dir, &scenario, &output)?;
        Ok(())
    })
}
