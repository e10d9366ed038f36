use std::ffi::{c_char, c_int, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use chestrag_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(chestrag_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn index_round_trip_and_errors() {
    let vectors = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.6, 0.8];
    let labels = [0u32, 1, 0, 1];
    let mut index = ptr::null_mut();
    unsafe {
        assert_eq!(chestrag_index_new(vectors.as_ptr(), labels.as_ptr(), 4, 2, &mut index), ChestragStatus::Ok);
        assert_eq!(chestrag_index_len(index), 4);
        let (mut pos, mut dist) = ([0usize; 3], [0.0f64; 3]);
        let q = [0.0, 2.0];
        assert_eq!(
            chestrag_index_query(index, q.as_ptr(), 2, 3, pos.as_mut_ptr(), dist.as_mut_ptr()),
            ChestragStatus::Ok
        );
        assert_eq!(pos, [1, 3, 0]);
        assert_eq!(dist[0], 0.0);
        assert!((dist[1] - 0.4).abs() < 1e-12);
        assert_eq!(
            chestrag_index_query(index, q.as_ptr(), 1, 3, pos.as_mut_ptr(), dist.as_mut_ptr()),
            ChestragStatus::InvalidArgument
        );
        assert!(last_error().contains("dimension"), "{}", last_error());
        assert_eq!(
            chestrag_index_query(ptr::null(), q.as_ptr(), 2, 1, pos.as_mut_ptr(), dist.as_mut_ptr()),
            ChestragStatus::NullPointer
        );
        chestrag_index_free(index);
        chestrag_index_free(ptr::null_mut());

        let zero = [0.0, 0.0];
        let mut bad = ptr::null_mut();
        assert_eq!(chestrag_index_new(zero.as_ptr(), labels.as_ptr(), 1, 2, &mut bad), ChestragStatus::InvalidArgument);
        assert!(bad.is_null());
    }
}

#[test]
fn ece_and_parse_label() {
    let conf = [0.95, 0.05];
    let hit = [0u8, 1];
    let mut e = 0.0;
    unsafe {
        assert_eq!(chestrag_ece(conf.as_ptr(), hit.as_ptr(), 2, 10, &mut e), ChestragStatus::Ok);
        assert!((e - 0.95).abs() < 1e-12);
        assert_eq!(chestrag_ece(conf.as_ptr(), hit.as_ptr(), 2, 0, &mut e), ChestragStatus::InvalidArgument);
        let over = [1.5];
        assert_eq!(chestrag_ece(over.as_ptr(), hit.as_ptr(), 1, 10, &mut e), ChestragStatus::InvalidArgument);
    }

    let names: Vec<CString> = ["Effusion", "Mass"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const c_char> = names.iter().map(|s| s.as_ptr()).collect();
    let excl = CString::new("Pneumonia").unwrap();
    let excl_ptrs = [excl.as_ptr()];
    let parse = |text: &str| -> c_int {
        let t = CString::new(text).unwrap();
        let mut out = 42;
        let status = unsafe { chestrag_parse_label(t.as_ptr(), ptrs.as_ptr(), 2, excl_ptrs.as_ptr(), 1, &mut out) };
        assert_eq!(status, ChestragStatus::Ok);
        out
    };
    assert_eq!(parse("EFFUSION noted"), 0);
    assert_eq!(parse("mass, then effusion"), 1);
    assert_eq!(parse("Pneumonia with effusion"), -1);
    assert_eq!(parse("nothing"), -1);
    let mut out = 0;
    let status = unsafe { chestrag_parse_label(ptr::null(), ptrs.as_ptr(), 2, ptr::null(), 0, &mut out) };
    assert_eq!(status, ChestragStatus::NullPointer);
}

const SMALL: &str = r#"{
  "classes": ["A", "B", "C"],
  "excluded": [],
  "data": {"synthetic": {"counts": [30, 30, 30], "dim": 4, "separation": 6.0, "seed": 3}},
  "conditions": ["baseline", "image-rag"],
  "runs": 2, "epochs": 2, "batches_per_epoch": 4, "batch_size": 8
}"#;

#[test]
fn experiment_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let json = CString::new(SMALL).unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut exp = ptr::null_mut();
    unsafe {
        assert_eq!(chestrag_experiment_from_json(json.as_ptr(), &mut exp), ChestragStatus::Ok);
        let mut s: *mut c_char = ptr::null_mut();
        assert_eq!(chestrag_experiment_summary_json(exp, &mut s), ChestragStatus::InvalidArgument);
        assert_eq!(chestrag_experiment_run(exp, out_dir.as_ptr(), 0, 2), ChestragStatus::Ok, "{}", last_error());
        assert!(dir.path().join("summary.csv").is_file());
        assert!(dir.path().join("image-rag/run_001/metrics.jsonl").is_file());
        assert_eq!(chestrag_experiment_run(exp, out_dir.as_ptr(), 0, 1), ChestragStatus::Config);
        assert!(last_error().contains("not empty"));
        assert_eq!(chestrag_experiment_run(exp, out_dir.as_ptr(), 1, 1), ChestragStatus::Ok);

        assert_eq!(chestrag_experiment_summary_json(exp, &mut s), ChestragStatus::Ok);
        let text = CStr::from_ptr(s).to_str().unwrap().to_string();
        chestrag_string_free(s);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 2);
        assert_eq!(v[0]["condition"], "baseline");
        assert_eq!(v[1]["runs"], 2);
        chestrag_experiment_free(exp);

        let bad = CString::new(r#"{"lambda": 2.0}"#).unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(chestrag_experiment_from_json(bad.as_ptr(), &mut none), ChestragStatus::Config);
        assert!(none.is_null());
        assert!(last_error().contains("lambda"));
    }
}

fn target_dir() -> PathBuf {
    // tests/../../../target/<profile> next to this test binary
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libchestrag_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("cc available");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}
