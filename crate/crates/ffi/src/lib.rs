//! C ABI over the medledger core.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`MlStatus`]. On failure a message is
//!   stored per thread and can be read with [`ml_last_error_message`].
//! * Objects are opaque handles created by `*_open`/`*_new`/`*_run` functions
//!   and released by the matching `*_free`. Passing NULL to a free function is
//!   a no-op.
//! * Strings are NUL-terminated UTF-8. Strings returned through `char **` are
//!   owned by the caller and released with [`ml_string_free`]; `const char *`
//!   results borrow from their handle.
//! * Hashes and CIDs cross the boundary as raw 32-byte digests.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use medledger::cas::{cid_of, CasError, CasNetwork, Cid};
use medledger::channel::ChannelFile;
use medledger::ehr;
use medledger::scenario::{self, RunOptions, Scenario, ScenarioError};
use medledger::state::{self, Snapshot, StateError};

/// Status codes. Values 3 to 10 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    StepFailed = 5,
    Io = 6,
    CorruptState = 7,
    UnknownRecord = 8,
    Cas = 9,
    Setup = 10,
    Panic = 11,
}

/// Result of running a scenario script.
pub struct MlRun {
    run: scenario::Run,
    transcript: CString,
}

/// A verified state directory.
pub struct MlState {
    snapshot: Snapshot,
}

/// A standalone content-addressed store.
pub struct MlCas {
    cas: CasNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MlStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> FfiResult<()>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MlStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            MlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MlStatus::NullArgument, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> FfiResult<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_digest(out: *mut u8, digest: &[u8; 32]) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output digest"));
    }
    ptr::copy_nonoverlapping(digest.as_ptr(), out, 32);
    Ok(())
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output string"));
    }
    *out = CString::new(s).expect("no interior NULs").into_raw();
    Ok(())
}

fn scenario_failure(e: ScenarioError) -> Failure {
    let status = match e {
        ScenarioError::Io(_) => MlStatus::Io,
        ScenarioError::Parse(_) => MlStatus::Parse,
        ScenarioError::Setup(_) => MlStatus::Setup,
    };
    Failure(status, e.to_string())
}

fn state_failure(e: StateError) -> Failure {
    let status = match e {
        StateError::Io { .. } => MlStatus::Io,
        StateError::CorruptFile { .. } => MlStatus::CorruptState,
    };
    Failure(status, e.to_string())
}

fn cas_failure(e: CasError) -> Failure {
    Failure(MlStatus::Cas, format!("{}: {e}", e.name()))
}

/// Message of the last failed call on this thread, or NULL if the last call
/// succeeded. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn ml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ml_bytes_free(data: *mut u8, len: usize) {
    if !data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(data, len)));
    }
}

/// SHA-256 content identifier of `data`.
#[no_mangle]
pub unsafe extern "C" fn ml_cid_of(data: *const u8, len: usize, out_digest: *mut u8) -> MlStatus {
    guard(|| write_digest(out_digest, &cid_of(bytes_arg(data, len, "data")?).0))
}

/// Text form (`sha256:<hex>`) of a 32-byte digest.
#[no_mangle]
pub unsafe extern "C" fn ml_cid_to_string(digest: *const u8, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        let d: [u8; 32] = bytes_arg(digest, 32, "digest")?.try_into().expect("32 bytes");
        write_string(out, Cid(d).to_string())
    })
}

/// Parses and runs a scenario script. `channel_toml` may be NULL for the
/// bundled channel; `seed` overrides the script's seed when `override_seed`
/// is true. Step failures do not make this call fail: check
/// [`ml_run_failures`].
#[no_mangle]
pub unsafe extern "C" fn ml_scenario_run(
    script: *const c_char,
    channel_toml: *const c_char,
    override_seed: bool,
    seed: u64,
    parallel_delivery: bool,
    out: *mut *mut MlRun,
) -> MlStatus {
    guard(|| {
        let script = str_arg(script, "script")?;
        let channel = if channel_toml.is_null() {
            ChannelFile::default_file()
        } else {
            ChannelFile::parse(str_arg(channel_toml, "channel_toml")?)
                .map_err(|e| Failure(MlStatus::Config, e.to_string()))?
        };
        let parsed = Scenario::parse(script, &channel).map_err(|e| scenario_failure(e.into()))?;
        let options = RunOptions {
            seed: override_seed.then_some(seed),
            parallel_delivery,
            label: String::new(),
        };
        let run = scenario::run(&parsed, channel, &options).map_err(scenario_failure)?;
        let transcript = CString::new(run.transcript.clone()).expect("transcripts have no NULs");
        write_handle(out, MlRun { run, transcript })
    })
}

/// Number of failed steps and assertions.
#[no_mangle]
pub unsafe extern "C" fn ml_run_failures(run: *const MlRun) -> usize {
    run.as_ref().map_or(0, |r| r.run.failures)
}

/// Transcript text, borrowed from the handle.
#[no_mangle]
pub unsafe extern "C" fn ml_run_transcript(run: *const MlRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.transcript.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn ml_run_tip_hash(run: *const MlRun, out_digest: *mut u8) -> MlStatus {
    guard(|| write_digest(out_digest, &handle(run, "run")?.run.network.tip_hash()))
}

#[no_mangle]
pub unsafe extern "C" fn ml_run_state_hash(run: *const MlRun, out_digest: *mut u8) -> MlStatus {
    guard(|| write_digest(out_digest, &handle(run, "run")?.run.network.state_hash()))
}

/// Record id of a scenario record alias, caller-owned.
#[no_mangle]
pub unsafe extern "C" fn ml_run_record_id(run: *const MlRun, alias: *const c_char, out: *mut *mut c_char) -> MlStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let alias = str_arg(alias, "alias")?;
        let info = run
            .run
            .records
            .get(alias)
            .ok_or_else(|| Failure(MlStatus::UnknownRecord, format!("no record alias {alias:?}")))?;
        write_string(out, info.record_id.clone())
    })
}

/// Writes chain, world state, channel and storage inventory to `dir`.
#[no_mangle]
pub unsafe extern "C" fn ml_run_export(run: *const MlRun, dir: *const c_char) -> MlStatus {
    guard(|| {
        let run = handle(run, "run")?;
        state::export(&run.run.network, Path::new(str_arg(dir, "dir")?)).map_err(state_failure)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_run_free(run: *mut MlRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Loads and verifies an exported state directory.
#[no_mangle]
pub unsafe extern "C" fn ml_state_open(dir: *const c_char, out: *mut *mut MlState) -> MlStatus {
    guard(|| {
        let snapshot = state::import(Path::new(str_arg(dir, "dir")?)).map_err(state_failure)?;
        write_handle(out, MlState { snapshot })
    })
}

/// Re-runs full chain verification on a loaded state.
#[no_mangle]
pub unsafe extern "C" fn ml_state_verify(st: *const MlState) -> MlStatus {
    guard(|| {
        handle(st, "state")?
            .snapshot
            .ledger
            .verify_chain_report()
            .map_err(|f| Failure(MlStatus::CorruptState, f.to_string()))
    })
}

/// Block count including genesis.
#[no_mangle]
pub unsafe extern "C" fn ml_state_height(st: *const MlState) -> u64 {
    st.as_ref().map_or(0, |s| s.snapshot.ledger.height())
}

#[no_mangle]
pub unsafe extern "C" fn ml_state_tip_hash(st: *const MlState, out_digest: *mut u8) -> MlStatus {
    guard(|| write_digest(out_digest, &handle(st, "state")?.snapshot.ledger.tip_hash()))
}

#[no_mangle]
pub unsafe extern "C" fn ml_state_world_hash(st: *const MlState, out_digest: *mut u8) -> MlStatus {
    guard(|| {
        let s = handle(st, "state")?;
        write_digest(out_digest, &s.snapshot.ledger.world_state().state_hash())
    })
}

/// Audit trail of a record as tab-separated lines
/// `height, tx_index, operation, creator, validity, tx_id`, caller-owned.
#[no_mangle]
pub unsafe extern "C" fn ml_state_audit(
    st: *const MlState,
    record_id: *const c_char,
    out: *mut *mut c_char,
    out_rows: *mut usize,
) -> MlStatus {
    guard(|| {
        let ledger = &handle(st, "state")?.snapshot.ledger;
        let rid = str_arg(record_id, "record_id")?;
        let key = ehr::record_key(rid);
        if ledger.get_state(&key).is_none() {
            return Err(Failure(MlStatus::UnknownRecord, format!("unknown record {rid}")));
        }
        let rows = ledger.audit_trail(&key);
        let mut text = String::new();
        for r in &rows {
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.block_height,
                r.tx_index,
                r.operation,
                r.creator_subject,
                r.validity.as_str(),
                hex::encode(r.tx_id)
            ));
        }
        if !out_rows.is_null() {
            *out_rows = rows.len();
        }
        write_string(out, text)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_state_free(st: *mut MlState) {
    if !st.is_null() {
        drop(Box::from_raw(st));
    }
}

/// Empty store with replication factor `r` (at least 1).
#[no_mangle]
pub unsafe extern "C" fn ml_cas_new(replication_factor: u32, out: *mut *mut MlCas) -> MlStatus {
    guard(|| {
        if replication_factor == 0 {
            return Err(Failure(MlStatus::Cas, "replication factor must be at least 1".into()));
        }
        write_handle(
            out,
            MlCas {
                cas: CasNetwork::new(replication_factor),
            },
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_cas_add_node(
    cas: *mut MlCas,
    node_id: *const c_char,
    operator_org: *const c_char,
) -> MlStatus {
    guard(|| {
        let cas = handle_mut(cas, "cas")?;
        cas.cas
            .add_node(str_arg(node_id, "node_id")?, str_arg(operator_org, "operator_org")?)
            .map_err(cas_failure)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_cas_set_node_alive(cas: *mut MlCas, node_id: *const c_char, alive: bool) -> MlStatus {
    guard(|| {
        let cas = handle_mut(cas, "cas")?;
        cas.cas
            .set_node_alive(str_arg(node_id, "node_id")?, alive)
            .map_err(cas_failure)
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_cas_put(cas: *mut MlCas, data: *const u8, len: usize, out_digest: *mut u8) -> MlStatus {
    guard(|| {
        let cas = handle_mut(cas, "cas")?;
        let cid = cas.cas.put(bytes_arg(data, len, "data")?).map_err(cas_failure)?;
        write_digest(out_digest, &cid.0)
    })
}

/// Copies the content of `digest` onto `node_id` from a live holder.
#[no_mangle]
pub unsafe extern "C" fn ml_cas_pin(cas: *mut MlCas, digest: *const u8, node_id: *const c_char) -> MlStatus {
    guard(|| {
        let cas = handle_mut(cas, "cas")?;
        let d: [u8; 32] = bytes_arg(digest, 32, "digest")?.try_into().expect("32 bytes");
        cas.cas.pin(&Cid(d), str_arg(node_id, "node_id")?).map_err(cas_failure)
    })
}

/// Verified read. The buffer is caller-owned; release it with
/// [`ml_bytes_free`].
#[no_mangle]
pub unsafe extern "C" fn ml_cas_get(
    cas: *const MlCas,
    digest: *const u8,
    out_data: *mut *mut u8,
    out_len: *mut usize,
) -> MlStatus {
    guard(|| {
        let cas = handle(cas, "cas")?;
        let d: [u8; 32] = bytes_arg(digest, 32, "digest")?.try_into().expect("32 bytes");
        if out_data.is_null() || out_len.is_null() {
            return Err(null("output buffer"));
        }
        let content = cas.cas.get(&Cid(d)).map_err(cas_failure)?;
        let boxed = content.into_boxed_slice();
        *out_len = boxed.len();
        *out_data = Box::into_raw(boxed).cast();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ml_cas_free(cas: *mut MlCas) {
    if !cas.is_null() {
        drop(Box::from_raw(cas));
    }
}
