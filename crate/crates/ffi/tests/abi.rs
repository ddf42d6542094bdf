use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use fedgauntlet::dataset::{pack_idx_images, pack_idx_labels, ImageSet};
use fedgauntlet_ffi::*;

const SIDE: usize = 8;

/// Ten separable classes on 8x8 images, written as the four IDX files.
fn write_idx(dir: &Path) {
    for (count, img, lab) in [
        (400, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (100, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        let pixels = labels
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| {
                (0..SIDE * SIDE).map(move |p| {
                    if p % 10 == c as usize {
                        220
                    } else {
                        ((i * 7 + p * 13) % 40) as u8
                    }
                })
            })
            .collect();
        let set = ImageSet {
            count,
            rows: SIDE,
            cols: SIDE,
            pixels,
        };
        std::fs::write(dir.join(img), pack_idx_images(&set)).unwrap();
        std::fs::write(dir.join(lab), pack_idx_labels(&labels)).unwrap();
    }
}

fn cs(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fg_last_error()) }
        .to_string_lossy()
        .into_owned()
}

const SMALL: &str = r#"
model = "mlr"
clients = 4
rounds = 3
train_cap = 400
test_cap = 100
[arch]
image_side = 8
"#;

#[test]
fn run_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path());
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(fg_config_from_toml(cs(SMALL).as_ptr(), &mut cfg), FgStatus::Ok);
        assert_eq!(
            fg_config_set(cfg, cs("attack.kind").as_ptr(), cs("\"label_flip\"").as_ptr()),
            FgStatus::Ok
        );
        assert_eq!(
            fg_config_set(cfg, cs("defense.kind").as_ptr(), cs("\"lof\"").as_ptr()),
            FgStatus::Ok
        );

        let mut data = ptr::null_mut();
        assert_eq!(
            fg_data_load(cs(dir.path().to_str().unwrap()).as_ptr(), &mut data),
            FgStatus::Ok
        );

        let mut report = ptr::null_mut();
        assert_eq!(fg_run(cfg, data, &mut report), FgStatus::Ok, "{}", last_error());
        let mut rounds = 0usize;
        assert_eq!(fg_report_num_rounds(report, &mut rounds), FgStatus::Ok);
        assert_eq!(rounds, 3);
        let (mut final_acc, mut last_round) = (0.0, 0.0);
        assert_eq!(fg_report_final_accuracy(report, &mut final_acc), FgStatus::Ok);
        assert_eq!(fg_report_round_accuracy(report, 2, &mut last_round), FgStatus::Ok);
        assert!((0.0..=1.0).contains(&final_acc));
        assert_eq!(final_acc, last_round);
        let mut rejected = 99usize;
        assert_eq!(fg_report_round_rejected(report, 0, &mut rejected), FgStatus::Ok);
        assert!(rejected <= 4);
        assert_eq!(
            fg_report_round_accuracy(report, 3, &mut last_round),
            FgStatus::OutOfRange
        );
        assert!(last_error().contains("out of 3"));

        let csv = dir.path().join("report.csv");
        assert_eq!(
            fg_report_write_csv(report, cs(csv.to_str().unwrap()).as_ptr()),
            FgStatus::Ok
        );
        assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 5);

        fg_report_free(report);
        fg_data_free(data);
        fg_config_free(cfg);
    }
}

#[test]
fn config_round_trips_through_toml_buffer() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(fg_config_new(&mut cfg), FgStatus::Ok);
        assert_eq!(
            fg_config_set(cfg, cs("rounds").as_ptr(), cs("7").as_ptr()),
            FgStatus::Ok
        );
        let mut needed = 0usize;
        assert_eq!(
            fg_config_to_toml(cfg, ptr::null_mut(), 0, &mut needed),
            FgStatus::OutOfRange
        );
        let mut buf = vec![0 as std::ffi::c_char; needed];
        assert_eq!(
            fg_config_to_toml(cfg, buf.as_mut_ptr(), buf.len(), &mut needed),
            FgStatus::Ok
        );
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap().to_owned();
        assert!(text.contains("rounds = 7"));

        let mut again = ptr::null_mut();
        assert_eq!(fg_config_from_toml(cs(&text).as_ptr(), &mut again), FgStatus::Ok);
        fg_config_free(again);
        fg_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(fg_config_new(ptr::null_mut()), FgStatus::NullPointer);
        assert_eq!(fg_config_from_toml(ptr::null(), &mut cfg), FgStatus::NullPointer);
        assert_eq!(
            fg_config_from_toml(cs("model = \"resnet\"").as_ptr(), &mut cfg),
            FgStatus::Config
        );
        assert!(!last_error().is_empty());
        assert!(cfg.is_null());

        assert_eq!(fg_config_new(&mut cfg), FgStatus::Ok);
        assert!(last_error().is_empty());
        assert_eq!(
            fg_config_set(cfg, cs("clients").as_ptr(), cs("0").as_ptr()),
            FgStatus::Config
        );
        assert_eq!(
            fg_config_set(cfg, cs("rounds").as_ptr(), cs("[unclosed").as_ptr()),
            FgStatus::Config
        );

        let bad = [0xffu8, 0];
        assert_eq!(
            fg_config_set(cfg, bad.as_ptr().cast(), cs("1").as_ptr()),
            FgStatus::InvalidUtf8
        );

        let mut data = ptr::null_mut();
        assert_eq!(fg_data_load(cs("/nonexistent/mnist").as_ptr(), &mut data), FgStatus::Io);
        let mut out = 0.0;
        assert_eq!(fg_report_final_accuracy(ptr::null(), &mut out), FgStatus::NullPointer);
        fg_config_free(cfg);
        fg_config_free(ptr::null_mut());
        fg_report_free(ptr::null_mut());
        fg_data_free(ptr::null_mut());
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_lists_every_export() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fedgauntlet.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "fg_last_error",
        "fg_config_new",
        "fg_config_set",
        "fg_run",
        "fg_report_free",
        "FG_STATUS_PANIC = 12",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
