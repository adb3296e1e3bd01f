use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use superpos::backbone::{init_backbone, save_checkpoint, BackboneConfig};
use superpos_ffi::*;

fn tiny_checkpoint(dir: &Path) -> CString {
    let config = BackboneConfig {
        model_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 32,
        ..BackboneConfig::default()
    };
    let backbone = init_backbone(config).unwrap();
    let path = dir.join("bb.json");
    save_checkpoint(&backbone, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { sp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn load_query_run_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path());
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { sp_backbone_load(path.as_ptr(), &mut handle) }, SpStatus::Ok);
    assert!(!handle.is_null());

    let mut count = 0usize;
    assert_eq!(unsafe { sp_backbone_parameter_count(handle, &mut count) }, SpStatus::Ok);
    let expected = init_backbone(BackboneConfig {
        model_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 32,
        ..BackboneConfig::default()
    })
    .unwrap()
    .weights()
    .parameter_count();
    assert_eq!(count, expected);

    let mut hash_before = 0u64;
    assert_eq!(unsafe { sp_backbone_weights_hash(handle, &mut hash_before) }, SpStatus::Ok);

    let config = CString::new(
        r#"{"method":"superpos","m":8,"epochs":1,"task":"majority","sizes":{"train":16,"val":16,"test":16}}"#,
    )
    .unwrap();
    let mut summary = ptr::null_mut();
    let status = unsafe { sp_run_experiment(handle, config.as_ptr(), &mut summary) };
    assert_eq!(status, SpStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(summary) }.to_str().unwrap().to_owned();
    unsafe { sp_string_free(summary) };
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["trainable_params"], 10 * (16 * 8 + 8));
    assert_eq!(value["weights_hash_before"], value["weights_hash_after"]);
    assert_eq!(value["weights_hash_before"], format!("{hash_before:016x}"));

    unsafe { sp_backbone_free(handle) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/bb.json").unwrap();
    assert_eq!(unsafe { sp_backbone_load(missing.as_ptr(), &mut handle) }, SpStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/bb.json"));

    assert_eq!(
        unsafe { sp_backbone_load(ptr::null(), &mut handle) },
        SpStatus::NullPointer
    );
    assert_eq!(unsafe { sp_backbone_parameter_count(ptr::null(), &mut 0) }, SpStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let path = tiny_checkpoint(dir.path());
    assert_eq!(unsafe { sp_backbone_load(path.as_ptr(), &mut handle) }, SpStatus::Ok);
    assert_eq!(last_error(), "");
    let bad = CString::new(r#"{"method":"nope"}"#).unwrap();
    let mut summary = ptr::null_mut();
    assert_eq!(unsafe { sp_run_experiment(handle, bad.as_ptr(), &mut summary) }, SpStatus::Parse);
    assert!(summary.is_null());
    let bad_task = CString::new(r#"{"task":"nope","epochs":0}"#).unwrap();
    assert_eq!(
        unsafe { sp_run_experiment(handle, bad_task.as_ptr(), &mut summary) },
        SpStatus::InvalidParameter
    );
    unsafe { sp_backbone_free(handle) };
    unsafe { sp_backbone_free(ptr::null_mut()) };
    unsafe { sp_string_free(ptr::null_mut()) };
}

#[test]
fn error_message_truncates_safely() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/somewhere/bb.json").unwrap();
    unsafe { sp_backbone_load(missing.as_ptr(), &mut handle) };
    let mut buf = [1 as std::ffi::c_char; 8];
    let full = unsafe { sp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(full > 8);
    assert_eq!(buf[7], 0);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes().len(), 7);
}

#[test]
fn trainable_counts_match_closed_forms() {
    let mut out = 0usize;
    unsafe { sp_trainable_count(SpMethod::Simple, 64, 10, 128, 128, &mut out) };
    assert_eq!(out, 640);
    unsafe { sp_trainable_count(SpMethod::Superpos, 64, 10, 128, 128, &mut out) };
    assert_eq!(out, 10 * (64 * 128 + 128));
    unsafe { sp_trainable_count(SpMethod::Residual, 64, 10, 128, 128, &mut out) };
    assert_eq!(out, 640 + 2 * 64 * 128 + 128);
}

#[test]
fn metrics_through_the_abi() {
    // TP=2, FP=1, FN=1, TN=4
    let preds = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let targets = [1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let mut mcc = 0.0;
    let mut undefined = 9u8;
    let status = unsafe {
        sp_compute_metric(
            SpMetric::Mcc,
            preds.as_ptr(),
            ptr::null(),
            targets.as_ptr(),
            preds.len(),
            &mut mcc,
            &mut undefined,
        )
    };
    assert_eq!(status, SpStatus::Ok);
    assert!((mcc - 7.0 / 15.0).abs() < 1e-12);
    assert_eq!(undefined, 0);

    let valid = [1u8, 1, 0, 1, 1, 1, 1, 1];
    let mut acc = 0.0;
    unsafe {
        sp_compute_metric(
            SpMetric::Accuracy,
            targets.as_ptr(),
            valid.as_ptr(),
            targets.as_ptr(),
            targets.len(),
            &mut acc,
            ptr::null_mut(),
        )
    };
    assert!((acc - 7.0 / 8.0).abs() < 1e-12);

    let constant = [0.5; 4];
    let ramp = [0.0, 0.1, 0.2, 0.3];
    let mut r = 1.0;
    unsafe {
        sp_compute_metric(
            SpMetric::Pearson,
            constant.as_ptr(),
            ptr::null(),
            ramp.as_ptr(),
            4,
            &mut r,
            &mut undefined,
        )
    };
    assert_eq!((r, undefined), (0.0, 1));

    let negative = [-1.0];
    assert_eq!(
        unsafe {
            sp_compute_metric(
                SpMetric::F1,
                negative.as_ptr(),
                ptr::null(),
                negative.as_ptr(),
                1,
                &mut r,
                ptr::null_mut(),
            )
        },
        SpStatus::InvalidParameter
    );
}

#[test]
fn standardized_scores_through_the_abi() {
    let table = [10.0, 50.0, 20.0, 80.0];
    let (mut means, mut stds) = ([0.0; 2], [0.0; 2]);
    let status = unsafe { sp_standardized_scores(table.as_ptr(), 2, 2, means.as_mut_ptr(), stds.as_mut_ptr()) };
    assert_eq!(status, SpStatus::Ok);
    assert_eq!(means, [0.0, 100.0]);
    assert_eq!(stds, [0.0, 0.0]);

    let status = unsafe { sp_standardized_scores(table.as_ptr(), 1, 4, means.as_mut_ptr(), stds.as_mut_ptr()) };
    assert_eq!(status, SpStatus::InvalidParameter);
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/superpos.h");
    let text = std::fs::read_to_string(&header).expect("build script writes the header");
    for symbol in [
        "sp_backbone_load",
        "sp_backbone_free",
        "sp_run_experiment",
        "sp_string_free",
        "sp_last_error_message",
        "sp_compute_metric",
        "SP_STATUS_OK",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
