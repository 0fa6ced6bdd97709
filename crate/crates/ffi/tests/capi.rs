//! The C interface exercised through its exported symbols, as a C caller
//! would use them.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use vidta_ffi::*;

fn last_error() -> String {
    let p = vidta_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_model(seed: u64) -> *mut VidtaModel {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { vidta_model_new(VIDTA_PRESET_TOY, seed, &mut m) },
        VidtaStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(vidta_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn single_and_batch_prediction_agree() {
    let m = toy_model(1);
    let smiles = [cstr("CC(=O)Oc1ccccc1C(=O)O"), cstr("Cn1cnc2c1c(=O)n(C)c(=O)n2C")];
    let prots = [cstr("MKTAYIAKQRQISFVK"), cstr(">kinase fragment\nGGSWYQRT\nACDE")];
    let sp: Vec<*const c_char> = smiles.iter().map(|s| s.as_ptr()).collect();
    let pp: Vec<*const c_char> = prots.iter().map(|s| s.as_ptr()).collect();
    let mut batch = [0.0f64; 2];
    unsafe {
        assert_eq!(
            vidta_model_predict_batch(m, sp.as_ptr(), pp.as_ptr(), 2, batch.as_mut_ptr()),
            VidtaStatus::Ok
        );
        for i in 0..2 {
            let mut one = f64::NAN;
            assert_eq!(vidta_model_predict(m, sp[i], pp[i], &mut one), VidtaStatus::Ok);
            assert_eq!(one.to_bits(), batch[i].to_bits());
        }
        assert!(vidta_last_error().is_null());
        vidta_model_free(m);
    }
}

#[test]
fn saved_models_reload_with_identical_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().join("m.ckpt").to_str().unwrap());
    let m = toy_model(2);
    let (s, p) = (cstr("c1ccccc1O"), cstr("MKTAYIAK"));
    unsafe {
        let mut before = 0.0;
        assert_eq!(
            vidta_model_predict(m, s.as_ptr(), p.as_ptr(), &mut before),
            VidtaStatus::Ok
        );
        assert_eq!(vidta_model_save(m, path.as_ptr()), VidtaStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(vidta_model_load(path.as_ptr(), &mut loaded), VidtaStatus::Ok);
        let mut after = 0.0;
        assert_eq!(
            vidta_model_predict(loaded, s.as_ptr(), p.as_ptr(), &mut after),
            VidtaStatus::Ok
        );
        assert_eq!(before.to_bits(), after.to_bits());
        vidta_model_free(loaded);
        vidta_model_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let m = toy_model(3);
    let mut out = 0.0;
    let p = cstr("MKT");
    unsafe {
        let bad = cstr("C1CC");
        assert_eq!(
            vidta_model_predict(m, bad.as_ptr(), p.as_ptr(), &mut out),
            VidtaStatus::ParseError
        );
        assert!(last_error().contains("pair 0"));

        let bad_residue = cstr("MK1T");
        let good = cstr("CCO");
        assert_eq!(
            vidta_model_predict(m, good.as_ptr(), bad_residue.as_ptr(), &mut out),
            VidtaStatus::ParseError
        );

        assert_eq!(
            vidta_model_predict(m, ptr::null(), p.as_ptr(), &mut out),
            VidtaStatus::NullPointer
        );
        assert!(last_error().contains("smiles"));
        assert_eq!(
            vidta_model_predict(ptr::null(), good.as_ptr(), p.as_ptr(), &mut out),
            VidtaStatus::NullPointer
        );

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(
            vidta_model_predict(m, invalid.as_ptr().cast(), p.as_ptr(), &mut out),
            VidtaStatus::InvalidUtf8
        );

        let missing = cstr("/no/such/dir/model.ckpt");
        let mut loaded = ptr::null_mut();
        assert_eq!(vidta_model_load(missing.as_ptr(), &mut loaded), VidtaStatus::Io);
        assert!(loaded.is_null());

        let mut none = ptr::null_mut();
        assert_eq!(vidta_model_new(99, 0, &mut none), VidtaStatus::InvalidArgument);

        // a successful call clears the previous error
        assert_eq!(
            vidta_model_predict(m, good.as_ptr(), p.as_ptr(), &mut out),
            VidtaStatus::Ok
        );
        assert!(vidta_last_error().is_null());

        vidta_model_free(m);
        vidta_model_free(ptr::null_mut());
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.ckpt");
    std::fs::write(&file, b"not a checkpoint").unwrap();
    let path = cstr(file.to_str().unwrap());
    let mut m = ptr::null_mut();
    let status = unsafe { vidta_model_load(path.as_ptr(), &mut m) };
    assert_ne!(status, VidtaStatus::Ok);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn smiles_counts() {
    let (mut atoms, mut bonds) = (0usize, 0usize);
    let s = cstr("c1ccc%11ccccc%11c1");
    unsafe {
        assert_eq!(
            vidta_parse_smiles_counts(s.as_ptr(), &mut atoms, &mut bonds),
            VidtaStatus::Ok
        );
    }
    assert_eq!((atoms, bonds), (10, 11));
    let bad = cstr("C(C");
    assert_eq!(
        unsafe { vidta_parse_smiles_counts(bad.as_ptr(), &mut atoms, &mut bonds) },
        VidtaStatus::ParseError
    );
}

#[test]
fn affinity_spaces() {
    let mut out = 0.0;
    unsafe {
        for (kd, pkd) in [(1.0, 9.0), (100.0, 7.0), (10000.0, 5.0)] {
            assert_eq!(
                vidta_transform_affinity(kd, VIDTA_SPACE_RAW_KD_NM, &mut out),
                VidtaStatus::Ok
            );
            assert_eq!(out, pkd);
        }
        assert_eq!(
            vidta_transform_affinity(11.2, VIDTA_SPACE_KIBA, &mut out),
            VidtaStatus::Ok
        );
        assert_eq!(out, 11.2);
        assert_eq!(
            vidta_transform_affinity(-1.0, VIDTA_SPACE_RAW_KD_NM, &mut out),
            VidtaStatus::InvalidArgument
        );
        assert_eq!(
            vidta_transform_affinity(1.0, 17, &mut out),
            VidtaStatus::InvalidArgument
        );
    }
}

#[test]
fn metrics_of_perfect_and_mismatched_inputs() {
    let truth = [5.0, 6.0, 7.5, 9.0];
    let mut m = VidtaMetrics::default();
    unsafe {
        assert_eq!(
            vidta_metrics(truth.as_ptr(), truth.as_ptr(), 4, &mut m),
            VidtaStatus::Ok
        );
    }
    assert_eq!((m.ci, m.mse, m.n), (1.0, 0.0, 4));
    assert!((m.pcc - 1.0).abs() < 1e-12 && (m.rm2 - 1.0).abs() < 1e-9);
    let flat = [1.0; 4];
    assert_eq!(
        unsafe { vidta_metrics(flat.as_ptr(), flat.as_ptr(), 4, &mut m) },
        VidtaStatus::InvalidArgument
    );
}

#[test]
fn handles_are_shareable_across_threads() {
    struct Shared(*mut VidtaModel);
    unsafe impl Sync for Shared {}
    impl Shared {
        fn get(&self) -> *mut VidtaModel {
            self.0
        }
    }
    let m = Shared(toy_model(4));
    let (s, p) = (cstr("CCN(CC)CC"), cstr("MKTAYIAK"));
    let mut reference = 0.0;
    unsafe { vidta_model_predict(m.0, s.as_ptr(), p.as_ptr(), &mut reference) };
    std::thread::scope(|scope| {
        for _ in 0..4 {
            scope.spawn(|| {
                let mut out = 0.0;
                let status = unsafe { vidta_model_predict(m.get(), s.as_ptr(), p.as_ptr(), &mut out) };
                assert_eq!(status, VidtaStatus::Ok);
                assert_eq!(out.to_bits(), reference.to_bits());
            });
        }
    });
    unsafe { vidta_model_free(m.0) };
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vidta.h")).unwrap();
    for name in [
        "vidta_last_error",
        "vidta_version",
        "vidta_model_load",
        "vidta_model_new",
        "vidta_model_save",
        "vidta_model_free",
        "vidta_model_predict",
        "vidta_model_predict_batch",
        "vidta_parse_smiles_counts",
        "vidta_transform_affinity",
        "vidta_metrics",
        "typedef struct VidtaModel VidtaModel",
        "VIDTA_STATUS_OK = 0",
        "VIDTA_SPACE_RAW_KD_NM 3",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
