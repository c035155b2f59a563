//! Exercises the C surface the way a foreign caller would: raw pointers,
//! status codes, and strings that cross the boundary in both directions.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use lipkit_ffi::*;

fn read_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let text = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { lipkit_string_free(p) };
    text
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(lipkit_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn blobs(per_class: usize, seed: u64) -> *mut LipkitDataset {
    let task = CString::new("blobs").unwrap();
    let mut ds = ptr::null_mut();
    let status =
        unsafe { lipkit_dataset_synthetic(task.as_ptr(), per_class, 2, 2, seed, &mut ds) };
    assert_eq!(status, LipkitStatus::Ok, "{}", last_error());
    ds
}

/// Small but convergent training setup shared by the round-trip tests,
/// passed through the JSON configuration path.
fn trained_model(ds: *const LipkitDataset) -> *mut LipkitModel {
    let mut cfg = lipkit::trainer::TrainConfig::new(8.0);
    cfg.outer_iters = 6;
    cfg.seed = 3;
    let config = CString::new(serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut model = ptr::null_mut();
    let status = unsafe {
        lipkit_train(
            ds,
            8.0,
            config.as_ptr(),
            ptr::null(),
            &mut model,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, LipkitStatus::Ok, "{}", last_error());
    model
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(lipkit_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
    assert!(v.chars().next().unwrap().is_ascii_digit());
}

#[test]
fn dataset_lifecycle_and_validation() {
    let ds = blobs(10, 4);
    unsafe {
        assert_eq!(lipkit_dataset_len(ds), 20);
        assert_eq!(lipkit_dataset_dim(ds), 2);
        lipkit_dataset_free(ds);

        assert_eq!(lipkit_dataset_len(ptr::null()), 0);
        assert_eq!(lipkit_dataset_dim(ptr::null()), 0);
        lipkit_dataset_free(ptr::null_mut());

        let points = [0.1, 0.2, 0.8, 0.9];
        let labels = [0.0, 1.0];
        let mut raw = ptr::null_mut();
        assert_eq!(
            lipkit_dataset_new(points.as_ptr(), 2, 2, labels.as_ptr(), &mut raw),
            LipkitStatus::Ok
        );
        assert_eq!(lipkit_dataset_len(raw), 2);
        lipkit_dataset_free(raw);

        let bad = [0.1, f64::NAN, 0.8, 0.9];
        assert_eq!(
            lipkit_dataset_new(bad.as_ptr(), 2, 2, labels.as_ptr(), &mut raw),
            LipkitStatus::InvalidArgument
        );
        assert!(last_error().contains("finite"));

        assert_eq!(
            lipkit_dataset_new(points.as_ptr(), 2, 2, labels.as_ptr(), ptr::null_mut()),
            LipkitStatus::NullArgument
        );

        let task = CString::new("spiral").unwrap();
        assert_eq!(
            lipkit_dataset_synthetic(task.as_ptr(), 5, 2, 2, 0, &mut raw),
            LipkitStatus::InvalidArgument
        );
        assert!(last_error().contains("unknown task"));
    }
}

#[test]
fn train_predict_and_text_round_trip() {
    let ds = blobs(15, 5);
    let n = unsafe { lipkit_dataset_len(ds) };

    let mut model = ptr::null_mut();
    let mut report = ptr::null_mut();
    let status = unsafe {
        lipkit_train(
            ds,
            8.0,
            ptr::null(),
            ptr::null(),
            &mut model,
            &mut report,
        )
    };
    assert!(
        status == LipkitStatus::Ok || status == LipkitStatus::NotConverged,
        "{}",
        last_error()
    );
    let report: serde_json::Value = serde_json::from_str(&read_string(report)).unwrap();
    assert_eq!(report["train"]["config"]["lip_budget"], 8.0);
    assert_eq!(report["class_values"].as_array().unwrap().len(), 2);
    let clean = report["clean_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&clean));

    unsafe {
        assert_eq!(lipkit_model_dim(model), 2);
        assert_eq!(lipkit_model_n_classes(model), 2);

        let x = [0.25, 0.25];
        let mut scores = [f64::NAN; 2];
        assert_eq!(
            lipkit_model_scores(model, x.as_ptr(), 2, scores.as_mut_ptr()),
            LipkitStatus::Ok
        );
        assert!(scores.iter().all(|s| s.is_finite()));
        assert_eq!(scores[0], -scores[1]);

        let mut text = ptr::null_mut();
        assert_eq!(lipkit_model_to_text(model, &mut text), LipkitStatus::Ok);
        let text = read_string(text);
        let ctext = CString::new(text).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(
            lipkit_model_from_text(ctext.as_ptr(), &mut back),
            LipkitStatus::Ok
        );

        let grid: Vec<f64> = (0..n).flat_map(|i| [i as f64 / n as f64, 0.5]).collect();
        let mut first = vec![0.0; n];
        let mut second = vec![0.0; n];
        assert_eq!(
            lipkit_model_predict(model, grid.as_ptr(), n, 2, first.as_mut_ptr()),
            LipkitStatus::Ok
        );
        assert_eq!(
            lipkit_model_predict(back, grid.as_ptr(), n, 2, second.as_mut_ptr()),
            LipkitStatus::Ok
        );
        assert_eq!(first, second);
        assert!(first.iter().all(|y| *y == 0.0 || *y == 1.0));

        let dir = std::env::temp_dir().join(format!("lipkit-abi-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = CString::new(dir.join("model.txt").to_str().unwrap()).unwrap();
        assert_eq!(lipkit_model_save(model, path.as_ptr()), LipkitStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(
            lipkit_model_load(path.as_ptr(), &mut loaded),
            LipkitStatus::Ok
        );
        assert_eq!(lipkit_model_n_classes(loaded), 2);

        lipkit_model_free(loaded);
        lipkit_model_free(back);
        lipkit_model_free(model);
        lipkit_dataset_free(ds);
    }
}

#[test]
fn attack_at_zero_radius_reproduces_clean_accuracy() {
    let ds = blobs(15, 5);
    let model = trained_model(ds);
    let n = unsafe { lipkit_dataset_len(ds) };

    let deltas = [0.0, 0.1];
    let mut accuracy = [f64::NAN; 2];
    let mut report = ptr::null_mut();
    let status = unsafe {
        lipkit_attack(
            model,
            ds,
            deltas.as_ptr(),
            2,
            ptr::null(),
            &mut report,
            accuracy.as_mut_ptr(),
        )
    };
    assert_eq!(status, LipkitStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&read_string(report)).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(accuracy[0] >= accuracy[1]);
    assert_eq!(rows[0]["accuracy"].as_f64().unwrap(), accuracy[0]);

    // The zero-radius accuracy must equal argmax agreement of the clean
    // scores with the labels; blob draws alternate between the classes.
    let outs = report["clean_scores"].as_array().unwrap();
    assert_eq!(outs.len(), n);
    let mut hits = 0usize;
    for (i, s) in outs.iter().enumerate() {
        let s = s.as_array().unwrap();
        let class = usize::from(s[1].as_f64().unwrap() > s[0].as_f64().unwrap());
        hits += usize::from(class == i % 2);
    }
    assert_eq!(accuracy[0], hits as f64 / n as f64);

    unsafe {
        lipkit_model_free(model);
        lipkit_dataset_free(ds);
    }
}

#[test]
fn certify_suites_all_pass() {
    let mut report = ptr::null_mut();
    let status = unsafe { lipkit_certify(40, 0, &mut report) };
    assert_eq!(status, LipkitStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&read_string(report)).unwrap();
    assert_eq!(report["all_pass"], true);
    let suites = report["suites"].as_array().unwrap();
    assert_eq!(suites.len(), 4);
    for suite in suites {
        assert_eq!(suite["passed"], true, "{}", suite["name"]);
        assert!(suite["worst"].as_f64().unwrap() <= suite["tolerance"].as_f64().unwrap());
    }
    assert_eq!(
        unsafe { lipkit_certify(0, 0, ptr::null_mut()) },
        LipkitStatus::InvalidArgument
    );
}

#[test]
fn lipschitz_estimates_list_every_method() {
    let ds = blobs(15, 5);
    let model = trained_model(ds);
    let mut json = ptr::null_mut();
    let status = unsafe { lipkit_lipschitz_estimates(model, 8, 4, 11, &mut json) };
    assert_eq!(status, LipkitStatus::Ok, "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&read_string(json)).unwrap();
    let ests = report["estimates"][0].as_array().unwrap();
    let methods: Vec<&str> = ests
        .iter()
        .map(|e| e["method"].as_str().unwrap())
        .collect();
    for want in [
        "exact-diag",
        "coord-nystrom",
        "holistic-nystrom",
        "rkhs-norm",
        "empirical-search",
    ] {
        assert!(methods.contains(&want), "missing {want}");
    }
    for e in ests {
        assert!(e["value"].as_f64().unwrap().is_finite());
    }
    unsafe {
        lipkit_model_free(model);
        lipkit_dataset_free(ds);
    }
}

#[test]
fn failures_set_status_and_message() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(
            lipkit_train(
                ptr::null(),
                5.0,
                ptr::null(),
                ptr::null(),
                &mut model,
                ptr::null_mut()
            ),
            LipkitStatus::NullArgument
        );

        let ds = blobs(6, 1);
        let bad = CString::new("{not json").unwrap();
        assert_eq!(
            lipkit_train(ds, 5.0, bad.as_ptr(), ptr::null(), &mut model, ptr::null_mut()),
            LipkitStatus::BadFormat
        );
        assert!(last_error().contains("configuration"));

        assert_eq!(
            lipkit_train(ds, -1.0, ptr::null(), ptr::null(), &mut model, ptr::null_mut()),
            LipkitStatus::InvalidArgument
        );

        let garbage = CString::new("lipkit-model v2\n").unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(
            lipkit_model_from_text(garbage.as_ptr(), &mut back),
            LipkitStatus::BadFormat
        );
        assert!(!last_error().is_empty());

        let missing = CString::new("/nonexistent/lipkit/model.txt").unwrap();
        assert_eq!(
            lipkit_model_load(missing.as_ptr(), &mut back),
            LipkitStatus::IoFailed
        );

        lipkit_string_free(ptr::null_mut());
        lipkit_dataset_free(ds);
    }
}

#[test]
fn attack_rejects_foreign_labels() {
    let ds = blobs(8, 2);
    let model = trained_model(ds);
    unsafe {
        // Labels outside the model's class set cannot be evaluated.
        let points = [0.2, 0.2, 0.7, 0.7];
        let labels = [3.0, 4.0];
        let mut foreign = ptr::null_mut();
        assert_eq!(
            lipkit_dataset_new(points.as_ptr(), 2, 2, labels.as_ptr(), &mut foreign),
            LipkitStatus::Ok
        );
        let deltas = [0.05];
        assert_eq!(
            lipkit_attack(
                model,
                foreign,
                deltas.as_ptr(),
                1,
                ptr::null(),
                ptr::null_mut(),
                ptr::null_mut()
            ),
            LipkitStatus::InvalidArgument
        );
        assert!(last_error().contains("classes"));
        lipkit_dataset_free(foreign);
        lipkit_model_free(model);
        lipkit_dataset_free(ds);
    }
}
