use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use asac_ffi::*;

const SMALL: &str = "synth.phi = 0, 0.9\n\
                     synth.steps = 4\n\
                     synth.episodes = 12\n\
                     model.hidden = 4\n\
                     training.iterations = 3\n\
                     training.batch_size = 4\n\
                     cost.lambda = 0.01\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(asac_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn generate_train_rates_save_load() {
    let cfg = CString::new(SMALL).unwrap();
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(asac_dataset_generate(cfg.as_ptr(), 3, &mut ds), AsacStatus::Ok);
        assert_eq!(asac_dataset_len(ds), 12);
        assert_eq!(asac_dataset_features(ds), 2);

        let mut model = ptr::null_mut();
        assert_eq!(
            asac_train(ds, cfg.as_ptr(), &mut model),
            AsacStatus::Ok,
            "{}",
            last_error()
        );
        let mut rates = [f64::NAN; 2];
        assert_eq!(asac_model_rates(model, ds, 1, rates.as_mut_ptr(), 2), AsacStatus::Ok);
        assert!(rates.iter().all(|r| (0.0..=1.0).contains(r)));

        let mut wrong = [0.0; 3];
        assert_eq!(
            asac_model_rates(model, ds, 1, wrong.as_mut_ptr(), 3),
            AsacStatus::Dimension
        );
        assert!(last_error().contains("3"));

        let dir = tempfile::tempdir().unwrap();
        let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(asac_model_save(model, dir_c.as_ptr()), AsacStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(
            asac_model_load(dir_c.as_ptr(), cfg.as_ptr(), &mut loaded),
            AsacStatus::Ok
        );
        let mut again = [f64::NAN; 2];
        assert_eq!(asac_model_rates(loaded, ds, 1, again.as_mut_ptr(), 2), AsacStatus::Ok);
        assert_eq!(rates, again);

        asac_model_free(loaded);
        asac_model_free(model);
        asac_dataset_free(ds);
    }
}

#[test]
fn csv_load_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(&good, "episode_id,t,y,x1\na,1,0.5,1\na,2,0.1,\n").unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "episode_id,t,y,x1\na,1,0.5,1\na,3,0.1,2\n").unwrap();
    let good_c = CString::new(good.to_str().unwrap()).unwrap();
    let bad_c = CString::new(bad.to_str().unwrap()).unwrap();
    let missing_c = CString::new(dir.path().join("none.csv").to_str().unwrap()).unwrap();

    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(asac_dataset_load_csv(good_c.as_ptr(), &mut ds), AsacStatus::Ok);
        assert_eq!(asac_dataset_len(ds), 1);
        assert_eq!(asac_dataset_features(ds), 1);
        assert_eq!(last_error(), "");
        asac_dataset_free(ds);

        let mut other = ptr::null_mut();
        assert_eq!(asac_dataset_load_csv(bad_c.as_ptr(), &mut other), AsacStatus::Config);
        assert!(last_error().contains("`a`"), "{}", last_error());
        assert!(other.is_null());
        assert_eq!(asac_dataset_load_csv(missing_c.as_ptr(), &mut other), AsacStatus::Io);
        assert_eq!(asac_dataset_load_csv(ptr::null(), &mut other), AsacStatus::NullArgument);

        let bad_cfg = CString::new("training.iterations = zero").unwrap();
        assert_eq!(
            asac_dataset_generate(bad_cfg.as_ptr(), 0, &mut other),
            AsacStatus::Config
        );
        let invalid = [0xffu8, 0];
        assert_eq!(
            asac_dataset_generate(invalid.as_ptr().cast(), 0, &mut other),
            AsacStatus::Utf8
        );
        assert_eq!(asac_dataset_len(ptr::null()), 0);
        asac_dataset_free(ptr::null_mut());
        asac_model_free(ptr::null_mut());
    }
}

#[test]
fn feature_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("three.csv");
    std::fs::write(&csv, "episode_id,t,y,x1,x2,x3\na,1,0,1,2,3\nb,1,1,1,2,3\n").unwrap();
    let csv_c = CString::new(csv.to_str().unwrap()).unwrap();
    let cfg = CString::new(SMALL).unwrap();
    let mut ds = ptr::null_mut();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(asac_dataset_load_csv(csv_c.as_ptr(), &mut ds), AsacStatus::Ok);
        assert_eq!(asac_train(ds, cfg.as_ptr(), &mut model), AsacStatus::Config);
        assert!(model.is_null());
        asac_dataset_free(ds);
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(asac_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/asac.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "asac_dataset_load_csv",
        "asac_train",
        "asac_model_rates",
        "asac_last_error",
        "ASAC_STATUS_CONFIG",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
