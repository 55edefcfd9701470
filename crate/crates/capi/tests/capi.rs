//! Exercises the C ABI the way a foreign caller would: through the
//! extern functions, raw pointers and status codes.

use ndarray::{Array1, Array2};
use sparsebm_capi::*;
use std::ffi::{CStr, CString};
use std::ptr;

use sparsebm::data::{save_canonical, DatasetSplit};
use sparsebm::evaluation::exact_log_partition;
use sparsebm::io::save_rbm;
use sparsebm::pruning::PruneMask;
use sparsebm::rbm::{free_energy, BinaryVector, RbmParams};

fn fixture_model() -> (RbmParams, PruneMask) {
    let weights = Array2::from_shape_fn((6, 4), |(i, j)| 0.1 * (i as f64) - 0.05 * (j as f64));
    let mut keep = Array2::from_elem((6, 4), 1u8);
    keep[[0, 0]] = 0;
    keep[[5, 3]] = 0;
    let mask = PruneMask::new(keep).unwrap();
    let mut params = RbmParams::new(
        weights,
        Array1::from_shape_fn(6, |i| 0.02 * i as f64),
        Array1::from_shape_fn(4, |j| -0.03 * j as f64),
    )
    .unwrap();
    mask.zero_dropped(&mut params.weights);
    (params, mask)
}

#[test]
fn model_lifecycle_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.rbm");
    let (params, mask) = fixture_model();
    save_rbm(&params, Some(&mask), &model_path).unwrap();

    let c_path = CString::new(model_path.to_str().unwrap()).unwrap();
    let mut handle: *mut SbmModel = ptr::null_mut();
    unsafe {
        assert_eq!(sbm_model_load(c_path.as_ptr(), &mut handle), SbmStatus::Ok);
        assert!(!handle.is_null());
        assert_eq!(sbm_model_n_visible(handle), 6);
        assert_eq!(sbm_model_n_hidden(handle), 4);
        let sp = sbm_model_sparsity(handle);
        assert!((sp - 2.0 / 24.0).abs() < 1e-12);

        // Free energy agrees with the library.
        let v = [1u8, 0, 1, 1, 0, 1];
        let mut f = 0.0f64;
        assert_eq!(sbm_model_free_energy(handle, v.as_ptr(), v.len(), &mut f), SbmStatus::Ok);
        let expect =
            free_energy(&params, &BinaryVector::from_bits(&v).unwrap()).unwrap();
        assert!((f - expect).abs() < 1e-12);

        // Hidden probabilities land in the caller's buffer.
        let mut probs = [0.0f64; 4];
        assert_eq!(
            sbm_model_hidden_probs(handle, v.as_ptr(), v.len(), probs.as_mut_ptr(), 4),
            SbmStatus::Ok
        );
        assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let mut small = [0.0f64; 2];
        assert_eq!(
            sbm_model_hidden_probs(handle, v.as_ptr(), v.len(), small.as_mut_ptr(), 2),
            SbmStatus::Shape
        );

        // Exact log Z agrees; a tiny limit trips the capability path.
        let mut lz = 0.0f64;
        assert_eq!(sbm_model_exact_log_z(handle, 25, &mut lz), SbmStatus::Ok);
        assert!((lz - exact_log_partition(&params, 25).unwrap()).abs() < 1e-12);
        assert_eq!(sbm_model_exact_log_z(handle, 2, &mut lz), SbmStatus::Capability);

        // Save through the ABI and reload.
        let copy_path = dir.path().join("copy.rbm");
        let c_copy = CString::new(copy_path.to_str().unwrap()).unwrap();
        assert_eq!(sbm_model_save(handle, c_copy.as_ptr()), SbmStatus::Ok);
        assert_eq!(
            std::fs::read(&model_path).unwrap(),
            std::fs::read(&copy_path).unwrap()
        );

        sbm_model_free(handle);
    }
}

#[test]
fn dataset_and_avg_log_prob() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.rbm");
    let data_path = dir.path().join("d.sbd");
    let (params, _) = fixture_model();
    save_rbm(&params, None, &model_path).unwrap();
    let split = DatasetSplit::new(
        Array2::from_shape_fn((10, 6), |(i, j)| ((i + j) % 2) as u8),
        None,
        "toy",
        "test",
    )
    .unwrap();
    save_canonical(&split, &data_path).unwrap();

    let c_model = CString::new(model_path.to_str().unwrap()).unwrap();
    let c_data = CString::new(data_path.to_str().unwrap()).unwrap();
    unsafe {
        let mut model: *mut SbmModel = ptr::null_mut();
        let mut data: *mut SbmDataset = ptr::null_mut();
        assert_eq!(sbm_model_load(c_model.as_ptr(), &mut model), SbmStatus::Ok);
        assert_eq!(sbm_dataset_load(c_data.as_ptr(), &mut data), SbmStatus::Ok);
        assert_eq!(sbm_dataset_rows(data), 10);
        assert_eq!(sbm_dataset_width(data), 6);

        let mut lz = 0.0f64;
        assert_eq!(sbm_model_exact_log_z(model, 25, &mut lz), SbmStatus::Ok);
        let mut avg = 0.0f64;
        assert_eq!(sbm_avg_log_prob(model, data, lz, &mut avg), SbmStatus::Ok);
        let expect =
            sparsebm::evaluation::avg_test_log_prob(&params, lz, &split).unwrap();
        assert!((avg - expect).abs() < 1e-12);

        sbm_dataset_free(data);
        sbm_model_free(model);
    }
}

#[test]
fn error_paths_set_messages() {
    unsafe {
        let mut handle: *mut SbmModel = ptr::null_mut();
        let missing = CString::new("/nonexistent/path.rbm").unwrap();
        assert_eq!(sbm_model_load(missing.as_ptr(), &mut handle), SbmStatus::Io);
        let msg = CStr::from_ptr(sbm_last_error_message()).to_string_lossy().into_owned();
        assert!(msg.contains("/nonexistent/path.rbm"), "message was: {msg}");

        assert_eq!(sbm_model_load(ptr::null(), &mut handle), SbmStatus::NullArgument);
        assert_eq!(
            sbm_model_load(missing.as_ptr(), ptr::null_mut()),
            SbmStatus::NullArgument
        );

        // Null handles are inert in the accessors.
        assert_eq!(sbm_model_n_visible(ptr::null()), 0);
        assert_eq!(sbm_dataset_rows(ptr::null()), 0);
        sbm_model_free(ptr::null_mut());
        sbm_dataset_free(ptr::null_mut());
    }
}
