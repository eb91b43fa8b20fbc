use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use medledger_ffi::*;

const FIG1: &str = include_str!("../../core/scenarios/fig1.scn");

fn last_error() -> String {
    let p = ml_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn run_fig1(parallel: bool) -> *mut MlRun {
    let script = CString::new(FIG1).unwrap();
    let mut run = ptr::null_mut();
    let status = unsafe { ml_scenario_run(script.as_ptr(), ptr::null(), false, 0, parallel, &mut run) };
    assert_eq!(status, MlStatus::Ok);
    run
}

#[test]
fn cid_matches_the_core() {
    let mut d = [0u8; 32];
    assert_eq!(unsafe { ml_cid_of(b"abc".as_ptr(), 3, d.as_mut_ptr()) }, MlStatus::Ok);
    assert_eq!(d, medledger::cas::cid_of(b"abc").0);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ml_cid_to_string(d.as_ptr(), &mut s) }, MlStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { ml_string_free(s) };
    assert_eq!(text, medledger::cas::cid_of(b"abc").to_string());
}

#[test]
fn null_arguments_are_reported() {
    assert_eq!(
        unsafe { ml_cid_of(ptr::null(), 4, ptr::null_mut()) },
        MlStatus::NullArgument
    );
    assert!(last_error().contains("NULL"));
    let mut d = [0u8; 32];
    assert_eq!(unsafe { ml_cid_of(ptr::null(), 0, d.as_mut_ptr()) }, MlStatus::Ok);
    assert!(ml_last_error_message().is_null());
    unsafe {
        ml_run_free(ptr::null_mut());
        ml_state_free(ptr::null_mut());
        ml_cas_free(ptr::null_mut());
        ml_string_free(ptr::null_mut());
    }
}

#[test]
fn scenario_run_is_deterministic_across_delivery_modes() {
    let (a, b) = (run_fig1(false), run_fig1(true));
    unsafe {
        assert_eq!(ml_run_failures(a), 0);
        let ta = CStr::from_ptr(ml_run_transcript(a)).to_owned();
        let tb = CStr::from_ptr(ml_run_transcript(b)).to_owned();
        assert_eq!(ta, tb);
        let (mut ha, mut hb) = ([0u8; 32], [0u8; 32]);
        ml_run_state_hash(a, ha.as_mut_ptr());
        ml_run_state_hash(b, hb.as_mut_ptr());
        assert_eq!(ha, hb);
        ml_run_free(a);
        ml_run_free(b);
    }
}

#[test]
fn scenario_errors_map_to_status_codes() {
    let mut run = ptr::null_mut();
    let bad = CString::new("seed 1\nregister ghost\n").unwrap();
    assert_eq!(
        unsafe { ml_scenario_run(bad.as_ptr(), ptr::null(), false, 0, false, &mut run) },
        MlStatus::Parse
    );
    assert!(last_error().contains("line 2"));
    let cfg = CString::new("[channel]\nid = 1\n").unwrap();
    let ok = CString::new(FIG1).unwrap();
    assert_eq!(
        unsafe { ml_scenario_run(ok.as_ptr(), cfg.as_ptr(), false, 0, false, &mut run) },
        MlStatus::Config
    );
    assert!(run.is_null());
    let invalid = [0xffu8, 0];
    assert_eq!(
        unsafe { ml_scenario_run(invalid.as_ptr().cast(), ptr::null(), false, 0, false, &mut run) },
        MlStatus::InvalidUtf8
    );
}

#[test]
fn exported_state_round_trips_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let run = run_fig1(false);
    unsafe {
        assert_eq!(ml_run_export(run, cdir.as_ptr()), MlStatus::Ok);
        let mut st = ptr::null_mut();
        assert_eq!(ml_state_open(cdir.as_ptr(), &mut st), MlStatus::Ok);
        assert_eq!(ml_state_height(st), 7);
        let (mut t1, mut t2) = ([0u8; 32], [0u8; 32]);
        ml_run_tip_hash(run, t1.as_mut_ptr());
        ml_state_tip_hash(st, t2.as_mut_ptr());
        assert_eq!(t1, t2);

        let alias = CString::new("xray").unwrap();
        let mut rid = ptr::null_mut();
        assert_eq!(ml_run_record_id(run, alias.as_ptr(), &mut rid), MlStatus::Ok);
        let mut audit = ptr::null_mut();
        let mut rows = 0usize;
        assert_eq!(ml_state_audit(st, rid, &mut audit, &mut rows), MlStatus::Ok);
        assert_eq!(rows, 3);
        let text = CStr::from_ptr(audit).to_str().unwrap().to_string();
        assert!(text.lines().all(|l| l.split('\t').count() == 6));
        ml_string_free(audit);
        ml_string_free(rid);
        ml_state_free(st);
        ml_run_free(run);
    }
    let chain = dir.path().join("chain.bin");
    let mut bytes = std::fs::read(&chain).unwrap();
    let n = bytes.len();
    bytes[n - 10] ^= 1;
    std::fs::write(&chain, bytes).unwrap();
    let mut st = ptr::null_mut();
    assert_eq!(unsafe { ml_state_open(cdir.as_ptr(), &mut st) }, MlStatus::CorruptState);
    assert!(st.is_null());
    assert!(last_error().contains("chain.bin"));
}

#[test]
fn cas_failover_through_the_abi() {
    unsafe {
        let mut cas = ptr::null_mut();
        assert_eq!(ml_cas_new(0, &mut cas), MlStatus::Cas);
        assert_eq!(ml_cas_new(2, &mut cas), MlStatus::Ok);
        for n in ["n0", "n1", "n2"] {
            let id = CString::new(n).unwrap();
            let org = CString::new("orgA").unwrap();
            assert_eq!(ml_cas_add_node(cas, id.as_ptr(), org.as_ptr()), MlStatus::Ok);
        }
        let mut d = [0u8; 32];
        assert_eq!(ml_cas_put(cas, b"bundle".as_ptr(), 6, d.as_mut_ptr()), MlStatus::Ok);
        let n0 = CString::new("n0").unwrap();
        let n1 = CString::new("n1").unwrap();
        let n2 = CString::new("n2").unwrap();
        assert_eq!(ml_cas_pin(cas, d.as_ptr(), n2.as_ptr()), MlStatus::Ok);
        ml_cas_set_node_alive(cas, n0.as_ptr(), false);
        ml_cas_set_node_alive(cas, n1.as_ptr(), false);
        let (mut data, mut len) = (ptr::null_mut(), 0usize);
        assert_eq!(ml_cas_get(cas, d.as_ptr(), &mut data, &mut len), MlStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(data, len), b"bundle");
        ml_bytes_free(data, len);
        ml_cas_set_node_alive(cas, n2.as_ptr(), false);
        assert_eq!(ml_cas_get(cas, d.as_ptr(), &mut data, &mut len), MlStatus::Cas);
        assert!(last_error().starts_with("NotFound"));
        ml_cas_free(cas);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libmedledger_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C smoke program failed to build");
    let run = Command::new(&exe).arg(out.path().join("state")).output().unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}
