use std::ffi::{CStr, CString};
use std::ptr;

use spgan::dataset::{make_toy_repository, ToyFamily};
use spgan::training::{save_checkpoint, Trainer, TrainingConfig};
use spgan_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(spgan_last_error()) }.to_string_lossy().into_owned()
}

fn checkpoint_file(dir: &std::path::Path) -> CString {
    let mut cfg = TrainingConfig::desk();
    cfg.n_points = 64;
    cfg.k = 4;
    cfg.latent_dim = 8;
    let repo = make_toy_repository(&ToyFamily::ALL, 2, 64, 0).unwrap();
    let ckpt = Trainer::new(cfg, &repo.clouds()).unwrap().checkpoint();
    let path = dir.join("toy.spck");
    save_checkpoint(&ckpt, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn generate_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path());
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(spgan_model_load(path.as_ptr(), &mut model), SpganStatus::Ok);
        assert_eq!(spgan_model_num_points(model), 64);
        let d = spgan_model_latent_dim(model);
        assert_eq!(d, 8);

        let mut z = vec![0f32; d];
        assert_eq!(spgan_model_sample_code(model, 7, 0, z.as_mut_ptr(), d), SpganStatus::Ok);
        let mut cloud = ptr::null_mut();
        assert_eq!(spgan_model_generate(model, z.as_ptr(), d, &mut cloud), SpganStatus::Ok);
        assert_eq!(spgan_cloud_num_points(cloud), 64);
        let mut pts = vec![0f32; 64 * 3];
        assert_eq!(spgan_cloud_copy_points(cloud, pts.as_mut_ptr(), pts.len()), SpganStatus::Ok);
        assert!(pts.iter().all(|v| v.abs() <= 1.0));

        let codes: Vec<f32> = (0..64).flat_map(|_| z.iter().copied()).collect();
        let mut same = ptr::null_mut();
        assert_eq!(spgan_model_generate_codes(model, codes.as_ptr(), 64, d, &mut same), SpganStatus::Ok);
        let mut dist = -1.0;
        assert_eq!(spgan_chamfer(cloud, same, &mut dist), SpganStatus::Ok);
        assert_eq!(dist, 0.0);

        let file = dir.path().join("out.sppc");
        let file_c = CString::new(file.to_str().unwrap()).unwrap();
        assert_eq!(spgan_cloud_save(cloud, file_c.as_ptr()), SpganStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(spgan_cloud_load(file_c.as_ptr(), &mut back), SpganStatus::Ok);
        let mut pts2 = vec![0f32; 64 * 3];
        spgan_cloud_copy_points(back, pts2.as_mut_ptr(), pts2.len());
        assert_eq!(pts, pts2);

        let mut colors = vec![0f32; 64 * 3];
        assert_eq!(spgan_model_colors(model, colors.as_mut_ptr(), colors.len()), SpganStatus::Ok);
        assert!(colors.iter().all(|c| (0.0..=1.0).contains(c)));

        spgan_cloud_free(back);
        spgan_cloud_free(same);
        spgan_cloud_free(cloud);
        spgan_model_free(model);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut model = ptr::null_mut();
        let missing = CString::new("/nonexistent/model.spck").unwrap();
        assert_eq!(spgan_model_load(missing.as_ptr(), &mut model), SpganStatus::Io);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(spgan_model_load(ptr::null(), &mut model), SpganStatus::NullPointer);
        assert!(last_error().contains("path"));

        let a = [0f32, 0.0];
        let b = [2f32, 4.0];
        let mut out = [0f32; 2];
        assert_eq!(spgan_interp_codes(a.as_ptr(), b.as_ptr(), 2, 0.5, out.as_mut_ptr()), SpganStatus::Ok);
        assert_eq!(out, [1.0, 2.0]);
        assert!(last_error().is_empty());
        assert_eq!(
            spgan_interp_codes(a.as_ptr(), b.as_ptr(), 2, 1.5, out.as_mut_ptr()),
            SpganStatus::InvalidArgument
        );
        assert!(last_error().contains("alpha"));
        assert_eq!(spgan_model_num_points(ptr::null()), 0);
        spgan_model_free(ptr::null_mut());
        spgan_cloud_free(ptr::null_mut());
    }
}

#[test]
fn small_buffers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint_file(dir.path());
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(spgan_model_load(path.as_ptr(), &mut model), SpganStatus::Ok);
        let mut z = [0f32; 4];
        assert_eq!(spgan_model_sample_code(model, 0, 0, z.as_mut_ptr(), 4), SpganStatus::BufferTooSmall);
        let wrong = [0f32; 3];
        let mut cloud = ptr::null_mut();
        assert_eq!(
            spgan_model_generate_codes(model, wrong.as_ptr(), 1, 3, &mut cloud),
            SpganStatus::InvalidArgument
        );
        spgan_model_free(model);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spgan.h")).unwrap();
    for name in [
        "spgan_model_load",
        "spgan_model_generate",
        "spgan_cloud_copy_points",
        "spgan_last_error",
        "SPGAN_STATUS_OK",
        "typedef struct SpganModel SpganModel",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    let version = unsafe { CStr::from_ptr(spgan_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
