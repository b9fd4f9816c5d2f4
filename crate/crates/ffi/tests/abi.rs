use std::ffi::{CStr, CString};
use std::ptr;

use setnet_ffi::*;

fn last_error() -> String {
    let p = setnet_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dataset_roundtrip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.setd").to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(setnet_dataset_generate(SetnetTask::NormalVar as u32, 10, 20, 3, 0, &mut ds), SetnetStatus::Ok);
        assert_eq!(setnet_dataset_write(ds, path.as_ptr()), SetnetStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(setnet_dataset_read(path.as_ptr(), &mut back), SetnetStatus::Ok);
        let (mut n, mut m, mut d) = (0, 0, 0);
        assert_eq!(setnet_dataset_shape(back, &mut n, &mut m, &mut d), SetnetStatus::Ok);
        assert_eq!((n, m, d), (10, 20, 1));
        setnet_dataset_free(ds);
        setnet_dataset_free(back);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(setnet_dataset_generate(9, 10, 20, 3, 0, &mut ds), SetnetStatus::InvalidArgument);
        assert!(last_error().contains("unknown task"));
        assert_eq!(setnet_dataset_generate(0, 10, 1, 3, 0, &mut ds), SetnetStatus::InvalidArgument);
        assert_eq!(setnet_dataset_generate(0, 10, 5, 3, 0, ptr::null_mut()), SetnetStatus::NullPointer);
        let missing = CString::new("/nonexistent/x.setd").unwrap();
        assert_eq!(setnet_dataset_read(missing.as_ptr(), &mut ds), SetnetStatus::Io);
        let bad = CString::new(r#"{"family":"deep_sets"}"#).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(setnet_model_new(bad.as_ptr(), &mut m), SetnetStatus::InvalidArgument);
        assert!(m.is_null());
    }
}

#[test]
fn model_predict_train_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = CString::new(dir.path().join("m.setn").to_str().unwrap()).unwrap();
    let cfg = CString::new(
        r#"{"family":"deep_sets_pp","input_dim":1,"encoder_depth":2,"hidden":8,"decoder_widths":[8]}"#,
    )
    .unwrap();
    let tcfg = CString::new(r#"{"epochs":2,"batch_size":8,"learning_rate":0.001}"#).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(setnet_model_new(cfg.as_ptr(), &mut model), SetnetStatus::Ok);
        let mut count = 0;
        assert_eq!(setnet_model_param_count(model, &mut count), SetnetStatus::Ok);
        assert!(count > 0);

        let (mut tr, mut te) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(setnet_dataset_generate(0, 32, 10, 1, 0, &mut tr), SetnetStatus::Ok);
        assert_eq!(setnet_dataset_generate(0, 8, 10, 1, 1, &mut te), SetnetStatus::Ok);
        let mut loss = f64::NAN;
        assert_eq!(setnet_model_train(model, tr, te, tcfg.as_ptr(), &mut loss), SetnetStatus::Ok);
        assert!(loss.is_finite());

        let x: Vec<f64> = (0..2 * 5).map(|i| i as f64 * 0.3).collect();
        let mut y = [0.0; 2];
        assert_eq!(setnet_model_predict(model, x.as_ptr(), 2, 5, 1, y.as_mut_ptr(), 2), SetnetStatus::Ok);
        let mut short = [0.0; 1];
        assert_eq!(setnet_model_predict(model, x.as_ptr(), 2, 5, 1, short.as_mut_ptr(), 1), SetnetStatus::Dimension);

        assert_eq!(setnet_model_save(model, ckpt.as_ptr()), SetnetStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(setnet_model_load(ckpt.as_ptr(), &mut loaded), SetnetStatus::Ok);
        let mut y2 = [0.0; 2];
        assert_eq!(setnet_model_predict(loaded, x.as_ptr(), 2, 5, 1, y2.as_mut_ptr(), 2), SetnetStatus::Ok);
        assert_eq!(y, y2);

        setnet_model_free(model);
        setnet_model_free(loaded);
        setnet_dataset_free(tr);
        setnet_dataset_free(te);
    }
}

#[test]
fn prop1_and_version() {
    assert_eq!(setnet_check_prop1(), SetnetStatus::Ok);
    let v = unsafe { CStr::from_ptr(setnet_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn free_accepts_null() {
    unsafe {
        setnet_model_free(ptr::null_mut());
        setnet_dataset_free(ptr::null_mut());
    }
}
