use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mllab::backbone::{init_network, BackboneKind, NetworkConfig};
use mllab::loss::{evaluate_loss, ClassifierParams, LossKind, LossSpec};
use mllab::tensor::{FeatureBatch, Mat};
use mllab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; mllab_last_error_length() + 1];
    assert_eq!(unsafe { mllab_last_error_message(buf.as_mut_ptr(), buf.len()) }, MllabStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn default_net(kind: MllabBackbone, input_dim: usize, seed: u64) -> *mut MllabNetwork {
    let mut cfg = std::mem::MaybeUninit::<MllabNetworkConfig>::uninit();
    let mut net = ptr::null_mut();
    unsafe {
        assert_eq!(mllab_network_config_default(kind as u32, input_dim, cfg.as_mut_ptr()), MllabStatus::Ok);
        assert_eq!(mllab_network_new(cfg.as_ptr(), seed, &mut net), MllabStatus::Ok);
    }
    net
}

#[test]
fn embed_matches_core() {
    for (ffi_kind, kind) in [
        (MllabBackbone::Residual, BackboneKind::Residual),
        (MllabBackbone::DepthwiseSeparable, BackboneKind::DepthwiseSeparable),
    ] {
        let net = default_net(ffi_kind, 6, 9);
        let reference = init_network(NetworkConfig::new(kind, 6), 9).unwrap();
        let x = Mat::from_fn(3, 6, |r, c| ((r * 6 + c) as f64 * 0.37).sin());
        let d = unsafe { mllab_network_embed_dim(net) };
        assert_eq!(d, reference.embed_dim());
        assert_eq!(unsafe { mllab_network_param_count(net) }, reference.params().len());
        let mut out = vec![0.0; 3 * d];
        let st = unsafe { mllab_network_embed(net, x.as_slice().as_ptr(), 3, 6, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, MllabStatus::Ok);
        assert_eq!(out, reference.embed(&x).unwrap().into_vec());

        let st = unsafe { mllab_network_embed(net, x.as_slice().as_ptr(), 3, 6, out.as_mut_ptr(), 2) };
        assert_eq!(st, MllabStatus::BufferTooSmall);
        let st = unsafe { mllab_network_embed(net, x.as_slice().as_ptr(), 2, 9, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, MllabStatus::DimensionMismatch);
        assert!(!last_error().is_empty());
        unsafe { mllab_network_free(net) };
    }
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.bin").to_str().unwrap()).unwrap();
    let net = default_net(MllabBackbone::Residual, 4, 1);
    let mut back = ptr::null_mut();
    unsafe {
        assert_eq!(mllab_network_save(net, path.as_ptr()), MllabStatus::Ok);
        assert_eq!(mllab_network_load(path.as_ptr(), &mut back), MllabStatus::Ok);
        assert_eq!(mllab_network_param_count(back), mllab_network_param_count(net));
        let x = [0.1, -0.2, 0.3, 0.4];
        let mut a = vec![0.0; mllab_network_embed_dim(net)];
        let mut b = a.clone();
        mllab_network_embed(net, x.as_ptr(), 1, 4, a.as_mut_ptr(), a.len());
        mllab_network_embed(back, x.as_ptr(), 1, 4, b.as_mut_ptr(), b.len());
        assert_eq!(a, b);
        mllab_network_free(net);
        mllab_network_free(back);

        let missing = CString::new(dir.path().join("absent.bin").to_str().unwrap()).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(mllab_network_load(missing.as_ptr(), &mut h), MllabStatus::Io);
        std::fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
        let junk = CString::new(dir.path().join("junk.bin").to_str().unwrap()).unwrap();
        assert_eq!(mllab_network_load(junk.as_ptr(), &mut h), MllabStatus::Checkpoint);
        assert!(h.is_null());
        assert_eq!(mllab_network_load(ptr::null(), &mut h), MllabStatus::NullPointer);
        mllab_network_free(ptr::null_mut());
    }
}

#[test]
fn invalid_network_config() {
    let cfg = MllabNetworkConfig {
        kind: MllabBackbone::Residual as u32,
        input_dim: 0,
        width: 4,
        blocks: 1,
        embed_dim: 2,
        grid_side: 2,
        kernel: 3,
    };
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { mllab_network_new(&cfg, 1, &mut net) }, MllabStatus::InvalidArgument);
    assert!(net.is_null());
    assert!(last_error().contains("input_dim"), "{}", last_error());
}

#[test]
fn loss_matches_core_for_every_kind() {
    let (n, d, c) = (4, 3, 3);
    let x: Vec<f64> = (0..n * d).map(|i| ((i as f64) * 0.71).cos()).collect();
    let labels = [0usize, 1, 2, 1];
    let w: Vec<f64> = (0..d * c).map(|i| ((i as f64) * 1.3).sin()).collect();
    let b = [0.1, -0.2, 0.05];
    for (ffi_kind, kind) in [
        (MllabLoss::CrossEntropy, LossKind::CrossEntropy),
        (MllabLoss::AngularSoftmax, LossKind::AngularSoftmax),
        (MllabLoss::AmSoftmax, LossKind::AMSoftmax),
        (MllabLoss::ArcFace, LossKind::ArcFace),
        (MllabLoss::MarginalJoint, LossKind::MarginalJoint),
    ] {
        let mut p = std::mem::MaybeUninit::<MllabLossParams>::uninit();
        assert_eq!(unsafe { mllab_loss_params_default(ffi_kind as u32, p.as_mut_ptr()) }, MllabStatus::Ok);
        let p = unsafe { p.assume_init() };
        let mut loss = 0.0;
        let (mut gx, mut gw, mut gb) = (vec![0.0; n * d], vec![0.0; d * c], vec![0.0; c]);
        let st = unsafe {
            mllab_loss_evaluate(
                &p,
                x.as_ptr(),
                labels.as_ptr(),
                n,
                d,
                w.as_ptr(),
                b.as_ptr(),
                c,
                &mut loss,
                gx.as_mut_ptr(),
                gw.as_mut_ptr(),
                gb.as_mut_ptr(),
            )
        };
        assert_eq!(st, MllabStatus::Ok, "{kind:?}: {}", last_error());
        let batch = FeatureBatch::new(Mat::from_vec(n, d, x.clone()).unwrap(), labels.to_vec(), c).unwrap();
        let params = ClassifierParams::new(Mat::from_vec(d, c, w.clone()).unwrap(), b.to_vec()).unwrap();
        let expect = evaluate_loss(&LossSpec::new(kind), &batch, &params).unwrap();
        assert_eq!(loss, expect.loss);
        assert_eq!(gx, expect.grad_features.into_vec());
        assert_eq!(gw, expect.grad_weights.into_vec());
        assert_eq!(gb, expect.grad_biases);

        // gradients are optional
        let st = unsafe {
            mllab_loss_evaluate(
                &p,
                x.as_ptr(),
                labels.as_ptr(),
                n,
                d,
                w.as_ptr(),
                b.as_ptr(),
                c,
                &mut loss,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        };
        assert_eq!(st, MllabStatus::Ok);
    }
}

#[test]
fn loss_argument_errors() {
    let mut p = std::mem::MaybeUninit::<MllabLossParams>::uninit();
    unsafe { mllab_loss_params_default(MllabLoss::ArcFace as u32, p.as_mut_ptr()) };
    let mut p = unsafe { p.assume_init() };
    let x = [0.0, 0.0];
    let labels = [0usize];
    let w = [1.0, 0.0, 0.0, 1.0];
    let b = [0.0, 0.0];
    let mut loss = 0.0;
    let call = |p: &MllabLossParams, x: &[f64], loss: &mut f64| unsafe {
        mllab_loss_evaluate(
            p,
            x.as_ptr(),
            labels.as_ptr(),
            1,
            2,
            w.as_ptr(),
            b.as_ptr(),
            2,
            loss,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(call(&p, &x, &mut loss), MllabStatus::Domain);
    p.m_add = 4.0;
    assert_eq!(call(&p, &[1.0, 0.0], &mut loss), MllabStatus::Domain);
    p.m_add = 0.5;
    assert_eq!(call(&p, &[f64::NAN, 0.0], &mut loss), MllabStatus::NonFinite);
    p.kind = 17;
    assert_eq!(call(&p, &[1.0, 0.0], &mut loss), MllabStatus::InvalidArgument);
    assert!(last_error().contains("selector"));
    p.kind = MllabLoss::ArcFace as u32;
    let mut unused = std::mem::MaybeUninit::<MllabLossParams>::uninit();
    assert_eq!(unsafe { mllab_loss_params_default(5, unused.as_mut_ptr()) }, MllabStatus::InvalidArgument);
    let mut cfg = std::mem::MaybeUninit::<MllabNetworkConfig>::uninit();
    assert_eq!(unsafe { mllab_network_config_default(2, 4, cfg.as_mut_ptr()) }, MllabStatus::InvalidArgument);
    let st = unsafe {
        mllab_loss_evaluate(
            &p,
            ptr::null(),
            labels.as_ptr(),
            1,
            2,
            w.as_ptr(),
            b.as_ptr(),
            2,
            &mut loss,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(st, MllabStatus::NullPointer);
}

#[test]
fn scalar_helpers() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(mllab_asoftmax_psi(std::f64::consts::PI, 3, &mut v), MllabStatus::Ok);
        assert!((v - (1.0 - 6.0)).abs() < 1e-12);
        assert_eq!(mllab_asoftmax_psi(4.0, 3, &mut v), MllabStatus::Domain);

        let drops = [8usize, 12, 16];
        assert_eq!(mllab_lr_at_epoch(0.01, 10.0, drops.as_ptr(), 3, 20, 8, &mut v), MllabStatus::Ok);
        assert!((v - 0.001).abs() < 1e-15);
        assert_eq!(
            mllab_lr_at_epoch(0.01, 10.0, drops.as_ptr(), 3, 20, 21, &mut v),
            MllabStatus::InvalidArgument
        );

        let raw = [0.0, 127.5, 255.0];
        let mut out = [9.0; 3];
        assert_eq!(mllab_pixel_normalize(raw.as_ptr(), 3, out.as_mut_ptr()), MllabStatus::Ok);
        assert_eq!(out, [-0.99609375, 0.0, 0.99609375]);
        assert_eq!(mllab_pixel_normalize([300.0].as_ptr(), 1, out.as_mut_ptr()), MllabStatus::Domain);

        let dist = [0.0, 0.1, 2.0, 2.1];
        let same = [1u8, 1, 0, 0];
        let (mut t, mut a) = (0.0, 0.0);
        assert_eq!(mllab_best_threshold_accuracy(dist.as_ptr(), same.as_ptr(), 4, &mut t, &mut a), MllabStatus::Ok);
        assert_eq!((t, a), (1.05, 100.0));
        assert_eq!(mllab_kfold_verification(dist.as_ptr(), same.as_ptr(), 4, 2, 3, &mut a), MllabStatus::Ok);
        assert_eq!(a, 100.0);
        assert_eq!(
            mllab_kfold_verification(dist.as_ptr(), same.as_ptr(), 4, 10, 3, &mut a),
            MllabStatus::InvalidArgument
        );
        assert_eq!(mllab_best_threshold_accuracy(dist.as_ptr(), same.as_ptr(), 0, &mut t, &mut a), MllabStatus::InvalidArgument);
    }
}

#[test]
fn error_buffer_contract() {
    unsafe {
        let mut v = 0.0;
        mllab_asoftmax_psi(-1.0, 2, &mut v);
        let len = mllab_last_error_length();
        assert!(len > 0);
        let mut small = vec![0 as c_char; len];
        assert_eq!(mllab_last_error_message(small.as_mut_ptr(), small.len()), MllabStatus::BufferTooSmall);
        assert_eq!(mllab_last_error_message(ptr::null_mut(), 10), MllabStatus::NullPointer);
        assert_eq!(mllab_asoftmax_psi(1.0, 2, &mut v), MllabStatus::Ok);
        assert_eq!(mllab_last_error_length(), 0);
        let version = CStr::from_ptr(mllab_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
    }
}

fn header_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("mllab.h")
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(header_path()).unwrap();
    for sym in [
        "mllab_version",
        "mllab_last_error_message",
        "mllab_network_new",
        "mllab_network_free",
        "mllab_network_embed",
        "mllab_network_save",
        "mllab_network_load",
        "mllab_loss_params_default",
        "mllab_loss_evaluate",
        "mllab_asoftmax_psi",
        "mllab_lr_at_epoch",
        "mllab_best_threshold_accuracy",
        "mllab_kfold_verification",
        "mllab_pixel_normalize",
        "typedef struct MllabNetwork MllabNetwork;",
        "MLLAB_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

/// Compile and run a C program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_against_static_library() {
    let Ok(exe) = std::env::current_exe() else { return };
    // target/<profile>/deps/<test-binary>
    let profile_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    let lib = profile_dir.join("libmllab_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "mllab.h"
int main(void) {
    MllabNetworkConfig cfg;
    MllabNetwork *net = NULL;
    if (mllab_network_config_default(MLLAB_BACKBONE_RESIDUAL, 4, &cfg) != MLLAB_STATUS_OK) return 1;
    if (mllab_network_new(&cfg, 7, &net) != MLLAB_STATUS_OK) return 2;
    double x[4] = {0.5, -0.5, 0.25, 1.0};
    double e[64];
    if (mllab_network_embed(net, x, 1, 4, e, 64) != MLLAB_STATUS_OK) return 3;
    mllab_network_free(net);
    double psi;
    if (mllab_asoftmax_psi(7.0, 2, &psi) != MLLAB_STATUS_DOMAIN) return 4;
    char msg[256];
    if (mllab_last_error_message(msg, sizeof msg) != MLLAB_STATUS_OK) return 5;
    printf("%zu %s\n", mllab_network_embed_dim(NULL), msg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_path().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("0 "), "{text}");
    assert!(text.contains("outside"), "{text}");
}
