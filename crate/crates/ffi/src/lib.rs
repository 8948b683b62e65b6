//! C ABI over `detant-core`.
//!
//! Every fallible function returns a [`DetantStatus`]. On failure the message
//! is kept per thread and read with [`detant_last_error`]. Strings returned
//! through `char **` out-parameters are owned by the caller and released with
//! [`detant_string_free`]. Matrices are row-major `double` buffers.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use detant_core::benchmark::{build_benchmark, parse_jsonl, AnnotationStream, BuildParams, SupplementSet};
use detant_core::eval::{evaluate, EvalConfig, FrequencyEntry, FrequencyTable, GtRecord, Prediction};
use detant_core::losses::{focal_verb_loss, horizon_weights, rampup};
use detant_core::matching::{giou, hungarian, iou, BBox};
use detant_core::model::{model_forward, ForwardOutput, ModelBundle, ModelConfig, ModelParams, VisualMemory};
use detant_core::numerics::Mat;
use detant_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetantStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Annotation = 5,
    Io = 6,
    Json = 7,
    Utf8 = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model: configuration plus parameters.
pub struct DetantModel {
    config: ModelConfig,
    params: ModelParams,
}

/// Opaque result of one forward pass.
pub struct DetantForward {
    output: ForwardOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(DetantStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Shape { .. } => DetantStatus::Shape,
            Error::NonFinite(_) => DetantStatus::NonFinite,
            Error::InvalidArgument(_) => DetantStatus::InvalidArgument,
            Error::Annotation(_) => DetantStatus::Annotation,
            Error::Io { .. } => DetantStatus::Io,
            Error::Json(_) => DetantStatus::Json,
        };
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        Failure(code, msg)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(DetantStatus::Json, format!("json error: {e}"))
    }
}

fn fail<T>(code: DetantStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DetantStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DetantStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            DetantStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        fail(DetantStatus::NullPointer, format!("{what} is null"))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(DetantStatus::Utf8, format!("{what} is not UTF-8")))
}

unsafe fn read_opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        read_str(p, what).map(Some)
    }
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn read_mat(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Mat, Failure> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(DetantStatus::InvalidArgument, format!("{what} size overflows")))?;
    Ok(Mat::new(rows, cols, read_slice(p, n, what)?.to_vec())?)
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    non_null(out, what)?;
    out.write(v);
    Ok(())
}

unsafe fn write_buf(values: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len < values.len() {
        return fail(
            DetantStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        );
    }
    if !values.is_empty() {
        non_null(buf, "buffer")?;
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    non_null(out, "string out-parameter")?;
    let c = CString::new(s).or_else(|_| fail(DetantStatus::Utf8, "output contains NUL"))?;
    out.write(c.into_raw());
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn detant_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn detant_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a model from a JSON `ModelConfig` (missing fields take defaults;
/// null means all defaults). Parameters are initialized from the config seed.
#[no_mangle]
pub unsafe extern "C" fn detant_model_new(config_json: *const c_char, out: *mut *mut DetantModel) -> DetantStatus {
    guard(|| {
        non_null(out, "out")?;
        let config: ModelConfig = match read_opt_str(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => ModelConfig::default(),
        };
        let params = ModelParams::init(&config)?;
        write_out(out, Box::into_raw(Box::new(DetantModel { config, params })), "out")
    })
}

/// Loads a model from a bundle JSON string.
#[no_mangle]
pub unsafe extern "C" fn detant_model_from_bundle(bundle_json: *const c_char, out: *mut *mut DetantModel) -> DetantStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = ModelBundle::from_json(read_str(bundle_json, "bundle_json")?)?;
        write_out(
            out,
            Box::into_raw(Box::new(DetantModel {
                config: b.config,
                params: b.params,
            })),
            "out",
        )
    })
}

/// Releases a model. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn detant_model_free(model: *mut DetantModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Resolved configuration of a model as JSON.
#[no_mangle]
pub unsafe extern "C" fn detant_model_config_json(model: *const DetantModel, out: *mut *mut c_char) -> DetantStatus {
    guard(|| {
        non_null(model, "model")?;
        write_string(out, serde_json::to_string(&(*model).config)?)
    })
}

/// Runs the decoder on `tokens` (`n_tokens × hidden`).
#[no_mangle]
pub unsafe extern "C" fn detant_model_forward(
    model: *const DetantModel,
    tokens: *const f64,
    n_tokens: usize,
    hidden: usize,
    out: *mut *mut DetantForward,
) -> DetantStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        let memory = VisualMemory {
            tokens: read_mat(tokens, n_tokens, hidden, "tokens")?,
        };
        let output = model_forward(&m.config, &m.params, &memory)?;
        write_out(out, Box::into_raw(Box::new(DetantForward { output })), "out")
    })
}

/// Runs the decoder on seeded Gaussian visual tokens.
#[no_mangle]
pub unsafe extern "C" fn detant_model_forward_synthetic(
    model: *const DetantModel,
    seed: u64,
    out: *mut *mut DetantForward,
) -> DetantStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        let memory = VisualMemory::synthesize(&m.config, seed);
        let output = model_forward(&m.config, &m.params, &memory)?;
        write_out(out, Box::into_raw(Box::new(DetantForward { output })), "out")
    })
}

/// Releases a forward result. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_free(fwd: *mut DetantForward) {
    if !fwd.is_null() {
        drop(Box::from_raw(fwd));
    }
}

/// Number of pair slots, or 0 for null.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_slots(fwd: *const DetantForward) -> usize {
    fwd.as_ref().map_or(0, |f| f.output.subject_boxes.len())
}

/// Number of anticipation horizons, or 0 for null.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_horizon_count(fwd: *const DetantForward) -> usize {
    fwd.as_ref().map_or(0, |f| f.output.horizons.len())
}

/// Horizon value at `index`, or 0 when out of range.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_horizon(fwd: *const DetantForward, index: usize) -> u32 {
    fwd.as_ref()
        .and_then(|f| f.output.horizons.get(index).copied())
        .unwrap_or(0)
}

/// Subject (`role = 0`) or object (`role = 1`) boxes, `slots × 4` normalized
/// `(cx, cy, w, h)`.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_boxes(
    fwd: *const DetantForward,
    role: u32,
    buf: *mut f64,
    len: usize,
) -> DetantStatus {
    guard(|| {
        non_null(fwd, "forward")?;
        let o = &(*fwd).output;
        let boxes = match role {
            0 => &o.subject_boxes,
            1 => &o.object_boxes,
            _ => return fail(DetantStatus::InvalidArgument, format!("role {role} is not 0 or 1")),
        };
        let flat: Vec<f64> = boxes.iter().flatten().copied().collect();
        write_buf(&flat, buf, len)
    })
}

/// Object logits, `slots × (object_classes + 1)`; the last column is no-object.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_object_logits(
    fwd: *const DetantForward,
    buf: *mut f64,
    len: usize,
) -> DetantStatus {
    guard(|| {
        non_null(fwd, "forward")?;
        write_buf((*fwd).output.object_logits.values(), buf, len)
    })
}

/// Verb logits, `slots × verb_classes`. `horizon_index = -1` selects the
/// current frame, otherwise an index into the horizon list.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_verb_logits(
    fwd: *const DetantForward,
    horizon_index: i64,
    buf: *mut f64,
    len: usize,
) -> DetantStatus {
    guard(|| {
        non_null(fwd, "forward")?;
        let o = &(*fwd).output;
        let m = if horizon_index == -1 {
            &o.verb_logits_current
        } else {
            match usize::try_from(horizon_index).ok().and_then(|i| o.verb_logits_future.get(i)) {
                Some(m) => m,
                None => {
                    return fail(
                        DetantStatus::InvalidArgument,
                        format!("horizon index {horizon_index} out of range"),
                    )
                }
            }
        };
        write_buf(m.values(), buf, len)
    })
}

/// Full forward result as JSON.
#[no_mangle]
pub unsafe extern "C" fn detant_forward_to_json(fwd: *const DetantForward, out: *mut *mut c_char) -> DetantStatus {
    guard(|| {
        non_null(fwd, "forward")?;
        write_string(out, serde_json::to_string(&(*fwd).output)?)
    })
}

/// Minimum-cost assignment of a `rows × cols` cost matrix. `row_to_col`
/// (length `rows`) receives the matched column or -1.
#[no_mangle]
pub unsafe extern "C" fn detant_hungarian(
    cost: *const f64,
    rows: usize,
    cols: usize,
    row_to_col: *mut i64,
    total_cost: *mut f64,
) -> DetantStatus {
    guard(|| {
        let m = read_mat(cost, rows, cols, "cost")?;
        let a = hungarian(&m)?;
        if rows > 0 {
            non_null(row_to_col, "row_to_col")?;
            let out = slice::from_raw_parts_mut(row_to_col, rows);
            out.fill(-1);
            for &(r, c) in &a.pairs {
                out[r] = c as i64;
            }
        }
        if !total_cost.is_null() {
            total_cost.write(a.total_cost(&m));
        }
        Ok(())
    })
}

/// Focal verb loss of `probs` against multi-hot `targets`, both `rows × cols`.
#[no_mangle]
pub unsafe extern "C" fn detant_focal_verb_loss(
    probs: *const f64,
    targets: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> DetantStatus {
    guard(|| {
        let p = read_mat(probs, rows, cols, "probs")?;
        let t = read_mat(targets, rows, cols, "targets")?;
        write_out(out, focal_verb_loss(&p, &t)?, "out")
    })
}

/// Horizon loss weights; `out` receives `n` values.
#[no_mangle]
pub unsafe extern "C" fn detant_horizon_weights(
    eta: f64,
    gamma: f64,
    horizons: *const u32,
    n: usize,
    out: *mut f64,
) -> DetantStatus {
    guard(|| {
        let w = horizon_weights(eta, gamma, read_slice(horizons, n, "horizons")?)?;
        write_buf(&w, out, n)
    })
}

/// Warm-up ramp for the auxiliary-loss weight at `epoch`.
#[no_mangle]
pub unsafe extern "C" fn detant_rampup(epoch: u32, alpha0: f64, warmup_epochs: u32, out: *mut f64) -> DetantStatus {
    guard(|| write_out(out, rampup(epoch, alpha0, warmup_epochs)?, "out"))
}

unsafe fn read_box(p: *const f64, what: &str) -> Result<BBox, Failure> {
    let s = read_slice(p, 4, what)?;
    Ok(BBox::from_array([s[0], s[1], s[2], s[3]]))
}

/// IoU of two `(cx, cy, w, h)` boxes.
#[no_mangle]
pub unsafe extern "C" fn detant_iou(a: *const f64, b: *const f64, out: *mut f64) -> DetantStatus {
    guard(|| write_out(out, iou(&read_box(a, "a")?, &read_box(b, "b")?), "out"))
}

/// Generalized IoU of two `(cx, cy, w, h)` boxes.
#[no_mangle]
pub unsafe extern "C" fn detant_giou(a: *const f64, b: *const f64, out: *mut f64) -> DetantStatus {
    guard(|| write_out(out, giou(&read_box(a, "a")?, &read_box(b, "b")?), "out"))
}

/// Benchmark construction on JSONL annotation streams. Supplements and params
/// may be null. The result is the full benchmark output as JSON.
#[no_mangle]
pub unsafe extern "C" fn detant_bench_build(
    streams_jsonl: *const c_char,
    supplements_jsonl: *const c_char,
    params_json: *const c_char,
    out: *mut *mut c_char,
) -> DetantStatus {
    guard(|| {
        non_null(out, "out")?;
        let streams: Vec<AnnotationStream> = parse_jsonl(read_str(streams_jsonl, "streams_jsonl")?)?;
        let sup: Vec<SupplementSet> = match read_opt_str(supplements_jsonl, "supplements_jsonl")? {
            Some(s) => parse_jsonl(s)?,
            None => Vec::new(),
        };
        let params: BuildParams = match read_opt_str(params_json, "params_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => BuildParams::default(),
        };
        let built = build_benchmark(&streams, &sup, &params)?;
        write_string(out, serde_json::to_string(&built)?)
    })
}

/// mAP and recall report from JSONL predictions and ground truth. The
/// frequency table (JSON list) and config may be null.
#[no_mangle]
pub unsafe extern "C" fn detant_eval(
    predictions_jsonl: *const c_char,
    ground_truth_jsonl: *const c_char,
    frequencies_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> DetantStatus {
    guard(|| {
        non_null(out, "out")?;
        let preds: Vec<Prediction> = parse_jsonl(read_str(predictions_jsonl, "predictions_jsonl")?)?;
        let gts: Vec<GtRecord> = parse_jsonl(read_str(ground_truth_jsonl, "ground_truth_jsonl")?)?;
        let freq = match read_opt_str(frequencies_json, "frequencies_json")? {
            Some(s) => FrequencyTable::from_entries(&serde_json::from_str::<Vec<FrequencyEntry>>(s)?),
            None => FrequencyTable::default(),
        };
        let config: EvalConfig = match read_opt_str(config_json, "config_json")? {
            Some(s) => serde_json::from_str(s)?,
            None => EvalConfig::default(),
        };
        let report = evaluate(&preds, &gts, &config, &freq)?;
        write_string(out, serde_json::to_string(&report)?)
    })
}
