//! C interface to the simulator.
//!
//! Objects are opaque handles created and destroyed through this API.
//! Every fallible call returns an [`EmpaStatus`]; on failure a message is
//! kept per thread and can be fetched with [`empa_last_error`]. Strings
//! returned by the library must be released with [`empa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use empa_core::engine::{self, RunOutput, SimConfig, SimError};
use empa_core::isa::{self, Program, NUM_REGS};
use empa_core::topology::GridConfig;
use empa_core::workloads;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmpaStatus {
    Ok = 0,
    NullPointer = 1,
    Utf8 = 2,
    Assembly = 3,
    InvalidConfig = 4,
    Deadlock = 5,
    CycleCap = 6,
    Simulation = 7,
    Panic = 8,
    OutOfRange = 9,
}

/// An assembled program.
pub struct EmpaProgram(Program);

/// Simulation parameters.
pub struct EmpaConfig(SimConfig);

/// Outcome of a completed run.
pub struct EmpaRunResult(RunOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: EmpaStatus, msg: impl Into<String>) -> EmpaStatus {
    set_error(msg);
    status
}

fn sim_status(e: &SimError) -> EmpaStatus {
    match e {
        SimError::Deadlock { .. } => EmpaStatus::Deadlock,
        SimError::CycleCapExceeded { .. } => EmpaStatus::CycleCap,
        SimError::InvalidProgram(_) => EmpaStatus::Assembly,
        SimError::Config(_) => EmpaStatus::InvalidConfig,
        _ => EmpaStatus::Simulation,
    }
}

/// Runs `f`, turning a panic into [`EmpaStatus::Panic`].
fn guard(f: impl FnOnce() -> EmpaStatus) -> EmpaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == EmpaStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(p) => {
            let what = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(EmpaStatus::Panic, format!("panic: {what}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, EmpaStatus> {
    if p.is_null() {
        return Err(fail(EmpaStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(EmpaStatus::Utf8, "string argument is not UTF-8"))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn empa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message describing the last failure on this thread, or NULL. The caller
/// owns the returned string.
#[no_mangle]
pub extern "C" fn empa_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn empa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Assembles `source` into a new program handle.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_program_assemble(source: *const c_char, out: *mut *mut EmpaProgram) -> EmpaStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmpaStatus::NullPointer, "out is null");
        }
        let src = match str_arg(source) {
            Ok(s) => s,
            Err(e) => return e,
        };
        match isa::assemble(src) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(EmpaProgram(p)));
                EmpaStatus::Ok
            }
            Err(d) => fail(EmpaStatus::Assembly, d.0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")),
        }
    })
}

/// Builds a bundled workload. A negative `param` selects its default.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_program_corpus(name: *const c_char, param: i64, out: *mut *mut EmpaProgram) -> EmpaStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmpaStatus::NullPointer, "out is null");
        }
        let name = match str_arg(name) {
            Ok(s) => s,
            Err(e) => return e,
        };
        let param = u32::try_from(param).ok();
        let Some(src) = workloads::source(name, param) else {
            return fail(EmpaStatus::OutOfRange, format!("no corpus workload `{name}`"));
        };
        match isa::assemble(&src) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(EmpaProgram(p)));
                EmpaStatus::Ok
            }
            Err(d) => fail(EmpaStatus::Assembly, d.to_string()),
        }
    })
}

/// Disassembles a program. The caller owns the returned string.
///
/// # Safety
/// `program` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn empa_program_disassemble(program: *const EmpaProgram) -> *mut c_char {
    match program.as_ref() {
        Some(p) => into_c_string(isa::disassemble(&p.0)),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `program` must be a live handle or NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn empa_program_free(program: *mut EmpaProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Default configuration: 8x8 grid and the standard costs.
#[no_mangle]
pub extern "C" fn empa_config_new() -> *mut EmpaConfig {
    Box::into_raw(Box::new(EmpaConfig(SimConfig::default())))
}

/// Configuration from a JSON object with flat keys.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_config_from_json(json: *const c_char, out: *mut *mut EmpaConfig) -> EmpaStatus {
    guard(|| {
        if out.is_null() {
            return fail(EmpaStatus::NullPointer, "out is null");
        }
        let text = match str_arg(json) {
            Ok(s) => s,
            Err(e) => return e,
        };
        match SimConfig::from_json(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(EmpaConfig(c)));
                EmpaStatus::Ok
            }
            Err(e) => fail(EmpaStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn empa_config_set_grid(config: *mut EmpaConfig, width: u32, height: u32) -> EmpaStatus {
    guard(|| {
        let Some(c) = config.as_mut() else { return fail(EmpaStatus::NullPointer, "config is null") };
        match GridConfig::new(width, height) {
            Ok(g) => {
                c.0.grid = g;
                c.0.denied_cores.retain(|&d| (d as usize) < g.core_count());
                EmpaStatus::Ok
            }
            Err(e) => fail(EmpaStatus::InvalidConfig, e.to_string()),
        }
    })
}

/// Sets the per-hop, memory and meta-dispatch latencies in cycles.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn empa_config_set_costs(config: *mut EmpaConfig, hop: u64, memory: u64, meta: u64) -> EmpaStatus {
    guard(|| {
        let Some(c) = config.as_mut() else { return fail(EmpaStatus::NullPointer, "config is null") };
        c.0.hop_cost = hop;
        c.0.memory_latency = memory;
        c.0.meta_dispatch_cost = meta;
        EmpaStatus::Ok
    })
}

/// Replaces the denied-core list.
///
/// # Safety
/// `config` must be a live handle and `cores` point at `len` ids (or be NULL with `len` 0).
#[no_mangle]
pub unsafe extern "C" fn empa_config_set_denied(config: *mut EmpaConfig, cores: *const u32, len: usize) -> EmpaStatus {
    guard(|| {
        let Some(c) = config.as_mut() else { return fail(EmpaStatus::NullPointer, "config is null") };
        if cores.is_null() && len > 0 {
            return fail(EmpaStatus::NullPointer, "cores is null");
        }
        let list = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(cores, len).to_vec() };
        let mut next = c.0.clone();
        next.denied_cores = list;
        if let Err(e) = next.validate() {
            return fail(EmpaStatus::InvalidConfig, e.to_string());
        }
        c.0 = next;
        EmpaStatus::Ok
    })
}

/// # Safety
/// `config` must be a live handle or NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn empa_config_free(config: *mut EmpaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs `program` to completion.
///
/// # Safety
/// `program` and `config` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_run(program: *const EmpaProgram, config: *const EmpaConfig, out: *mut *mut EmpaRunResult) -> EmpaStatus {
    guard(|| {
        let (Some(p), Some(c)) = (program.as_ref(), config.as_ref()) else {
            return fail(EmpaStatus::NullPointer, "program or config is null");
        };
        if out.is_null() {
            return fail(EmpaStatus::NullPointer, "out is null");
        }
        match engine::run(&p.0, &c.0) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(EmpaRunResult(r)));
                EmpaStatus::Ok
            }
            Err(e) => fail(sim_status(&e), e.to_string()),
        }
    })
}

/// Runs both the many-core model and the single-core baseline and writes
/// the comparison report as JSON into `*out` (caller owns it).
///
/// # Safety
/// `program` and `config` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_compare_json(program: *const EmpaProgram, config: *const EmpaConfig, out: *mut *mut c_char) -> EmpaStatus {
    guard(|| {
        let (Some(p), Some(c)) = (program.as_ref(), config.as_ref()) else {
            return fail(EmpaStatus::NullPointer, "program or config is null");
        };
        if out.is_null() {
            return fail(EmpaStatus::NullPointer, "out is null");
        }
        match engine::compare(&p.0, &c.0) {
            Ok(r) => {
                *out = into_c_string(serde_json::to_string(&r).expect("report serializes"));
                EmpaStatus::Ok
            }
            Err(e) => fail(sim_status(&e), e.to_string()),
        }
    })
}

/// Headline numbers of a run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmpaSummary {
    pub makespan: u64,
    pub energy: u64,
    pub messages: u64,
    pub hops: u64,
    pub memory_ops: u64,
    pub qt_count: u64,
    pub spawn_cycles: u64,
}

/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_result_summary(result: *const EmpaRunResult, out: *mut EmpaSummary) -> EmpaStatus {
    guard(|| {
        let (Some(r), Some(o)) = (result.as_ref(), out.as_mut()) else {
            return fail(EmpaStatus::NullPointer, "result or out is null");
        };
        let m = &r.0.metrics;
        *o = EmpaSummary {
            makespan: m.makespan,
            energy: m.energy,
            messages: m.messages,
            hops: m.hops,
            memory_ops: m.memory_ops,
            qt_count: m.qt_count,
            spawn_cycles: m.spawn_cycles,
        };
        EmpaStatus::Ok
    })
}

/// Final value of root register `index`.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_result_register(result: *const EmpaRunResult, index: u32, out: *mut i64) -> EmpaStatus {
    guard(|| {
        let (Some(r), Some(o)) = (result.as_ref(), out.as_mut()) else {
            return fail(EmpaStatus::NullPointer, "result or out is null");
        };
        if index as usize >= NUM_REGS {
            return fail(EmpaStatus::OutOfRange, format!("register {index} out of range"));
        }
        *o = r.0.final_state.registers[index as usize];
        EmpaStatus::Ok
    })
}

/// Final value of memory word `addr` (0 when never written).
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn empa_result_memory(result: *const EmpaRunResult, addr: u64, out: *mut i64) -> EmpaStatus {
    guard(|| {
        let (Some(r), Some(o)) = (result.as_ref(), out.as_mut()) else {
            return fail(EmpaStatus::NullPointer, "result or out is null");
        };
        *o = r.0.final_state.memory.get(&addr).copied().unwrap_or(0);
        EmpaStatus::Ok
    })
}

/// Full metrics as JSON. The caller owns the returned string.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn empa_result_metrics_json(result: *const EmpaRunResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => into_c_string(serde_json::to_string(&r.0.metrics).expect("metrics serialize")),
        None => ptr::null_mut(),
    }
}

/// Event log as JSON lines. The caller owns the returned string.
///
/// # Safety
/// `result` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn empa_result_events_jsonl(result: *const EmpaRunResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => into_c_string(r.0.log.to_jsonl()),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `result` must be a live handle or NULL; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn empa_result_free(result: *mut EmpaRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
