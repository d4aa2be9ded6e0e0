use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use bitdiff::denoiser::{save_checkpoint, Checkpoint, ModelSpec};
use bitdiff::rng::{stream_rng, Stream};
use bitdiff::CodecSpec;
use bitdiff_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bd_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn codec(kind: BdCodecKind, k: usize) -> *mut BdCodec {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { bd_codec_new(kind as u32, k, 1.0, &mut c) }, BdStatus::Ok);
    assert!(!c.is_null());
    c
}

#[test]
fn encode_decode_round_trip_all_kinds() {
    for (kind, k) in [
        (BdCodecKind::Base2, 256),
        (BdCodecKind::Gray, 256),
        (BdCodecKind::PermutedBase2, 256),
        (BdCodecKind::OneHot, 16),
    ] {
        let c = codec(kind, k);
        let n_bits = unsafe { bd_codec_n_bits(c) };
        assert_eq!(unsafe { bd_codec_vocab_size(c) }, k);
        let values: Vec<u32> = (0..k as u32).collect();
        let mut bits = vec![0.0; k * n_bits];
        let s = unsafe { bd_codec_encode(c, values.as_ptr(), k, bits.as_mut_ptr(), bits.len()) };
        assert_eq!(s, BdStatus::Ok);
        assert!(bits.iter().all(|b| b.abs() == 1.0));
        let mut back = vec![u32::MAX; k];
        let s = unsafe { bd_codec_decode(c, bits.as_ptr(), bits.len(), back.as_mut_ptr(), k) };
        assert_eq!(s, BdStatus::Ok);
        assert_eq!(back, values);
        unsafe { bd_codec_free(c) };
    }
}

#[test]
fn base2_encoding_is_lsb_first() {
    let c = codec(BdCodecKind::Base2, 8);
    let mut bits = [0.0; 3];
    assert_eq!(unsafe { bd_codec_encode(c, [6u32].as_ptr(), 1, bits.as_mut_ptr(), 3) }, BdStatus::Ok);
    assert_eq!(bits, [-1.0, 1.0, 1.0]);
    unsafe { bd_codec_free(c) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { bd_codec_new(7, 8, 1.0, &mut c) }, BdStatus::InvalidArgument);
    assert!(c.is_null());
    assert!(last_error().contains("codec kind"));
    assert_eq!(unsafe { bd_codec_new(0, 1, 1.0, &mut c) }, BdStatus::Config);
    assert_eq!(unsafe { bd_codec_new(0, 8, 1.0, ptr::null_mut()) }, BdStatus::NullPointer);

    let dup: Vec<u32> = (0..256).map(|v| if v == 3 { 4 } else { v }).collect();
    assert_eq!(unsafe { bd_codec_new_permuted(dup.as_ptr(), 256, 1.0, &mut c) }, BdStatus::Invariant);
    assert!(last_error().contains("bijection"));

    let ok = codec(BdCodecKind::Base2, 8);
    let mut bits = [0.0; 2];
    let s = unsafe { bd_codec_encode(ok, [1u32].as_ptr(), 1, bits.as_mut_ptr(), 2) };
    assert_eq!(s, BdStatus::InvalidArgument);
    let mut bits = [0.0; 3];
    let s = unsafe { bd_codec_encode(ok, [9u32].as_ptr(), 1, bits.as_mut_ptr(), 3) };
    assert_eq!(s, BdStatus::Range, "{}", last_error());
    let s = unsafe { bd_codec_encode(ptr::null(), [1u32].as_ptr(), 1, bits.as_mut_ptr(), 3) };
    assert_eq!(s, BdStatus::NullPointer);
    let mut r = 0.0;
    let oh = codec(BdCodecKind::OneHot, 4);
    assert_eq!(unsafe { bd_codec_hamming_correlation(oh, &mut r) }, BdStatus::Unsupported);
    unsafe {
        bd_codec_free(ok);
        bd_codec_free(oh);
        bd_codec_free(ptr::null_mut());
        bd_denoiser_free(ptr::null_mut());
    }
    assert_eq!(unsafe { bd_codec_n_bits(ptr::null()) }, 0);
}

#[test]
fn correlation_matches_library() {
    let c = codec(BdCodecKind::Base2, 256);
    let mut r = 0.0;
    assert_eq!(unsafe { bd_codec_hamming_correlation(c, &mut r) }, BdStatus::Ok);
    let lib = bitdiff::codec::hamming_correlation(&CodecSpec::base2(256).unwrap()).unwrap();
    assert_eq!(r, lib);
    unsafe { bd_codec_free(c) };
}

#[test]
fn oracle_generation_hits_bernoulli_frequency() {
    let c = codec(BdCodecKind::Base2, 2);
    let probs = [0.3, 0.7];
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { bd_denoiser_new_oracle(c, probs.as_ptr(), 2, 1, &mut d) }, BdStatus::Ok);
    assert_eq!(unsafe { bd_denoiser_features(d) }, 1);
    let mut cfg = bd_sampler_config_default();
    cfg.strategy = BdStrategy::None as u32;
    cfg.seed = 1;
    let n = 10_000;
    let mut values = vec![0u32; n];
    let mut bits = vec![0.0; n];
    let s = unsafe { bd_generate(d, c, &cfg, n, values.as_mut_ptr(), n, bits.as_mut_ptr(), n) };
    assert_eq!(s, BdStatus::Ok, "{}", last_error());
    let p1 = values.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
    assert!((p1 - 0.7).abs() <= 0.015, "{p1}");
    for (v, b) in values.iter().zip(&bits) {
        assert_eq!(*v == 1, *b > 0.0);
    }

    let mut again = vec![0u32; n];
    unsafe { bd_generate(d, c, &cfg, n, again.as_mut_ptr(), n, ptr::null_mut(), 0) };
    assert_eq!(again, values);

    cfg.step_rule = 5;
    let s = unsafe { bd_generate(d, c, &cfg, n, values.as_mut_ptr(), n, ptr::null_mut(), 0) };
    assert_eq!(s, BdStatus::InvalidArgument);
    cfg.step_rule = BdStepRule::Ddim as u32;
    cfg.steps = 0;
    let s = unsafe { bd_generate(d, c, &cfg, n, values.as_mut_ptr(), n, ptr::null_mut(), 0) };
    assert_eq!(s, BdStatus::Config);
    unsafe {
        bd_denoiser_free(d);
        bd_codec_free(c);
    }
}

#[test]
fn checkpoint_denoiser_matches_library_sampling() {
    let spec = CodecSpec::base2(8).unwrap();
    let net = ModelSpec::default().build(&spec, 2, &mut stream_rng(1, Stream::Init, 0)).unwrap();
    let ckpt = Checkpoint {
        model: net,
        ema: None,
        codec_fingerprint: spec.fingerprint(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&mut std::fs::File::create(&path).unwrap(), &ckpt).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let c = codec(BdCodecKind::Base2, 8);
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { bd_denoiser_load_checkpoint(c, cpath.as_ptr(), &mut d) }, BdStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { bd_denoiser_features(d) }, 6);
    let cfg = BdSamplerConfig {
        steps: 10,
        seed: 4,
        ..bd_sampler_config_default()
    };
    let mut values = vec![0u32; 2 * 50];
    assert_eq!(unsafe { bd_generate(d, c, &cfg, 50, values.as_mut_ptr(), 100, ptr::null_mut(), 0) }, BdStatus::Ok);

    let loaded = bitdiff::denoiser::load_checkpoint(&mut std::fs::File::open(&path).unwrap()).unwrap();
    let scfg = bitdiff::SamplerConfig {
        steps: 10,
        rng_seed: 4,
        ..Default::default()
    };
    let g = bitdiff::generate(&loaded.sampling_model().unwrap(), &spec, &bitdiff::Schedule::default(), &scfg, 50, false).unwrap();
    assert_eq!(values, g.samples.values().iter().copied().collect::<Vec<_>>());

    let gray = codec(BdCodecKind::Gray, 8);
    let mut d2 = ptr::null_mut();
    assert_eq!(unsafe { bd_denoiser_load_checkpoint(gray, cpath.as_ptr(), &mut d2) }, BdStatus::Config);
    let missing = CString::new("/nonexistent/x.ckpt").unwrap();
    assert_eq!(unsafe { bd_denoiser_load_checkpoint(c, missing.as_ptr(), &mut d2) }, BdStatus::Io);
    unsafe {
        bd_denoiser_free(d);
        bd_codec_free(c);
        bd_codec_free(gray);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/bitdiff.h")).unwrap();
    for name in [
        "bd_codec_new",
        "bd_codec_free",
        "bd_denoiser_new_oracle",
        "bd_denoiser_load_checkpoint",
        "bd_generate",
        "bd_last_error_message",
        "BD_STATUS_INVARIANT",
        "typedef struct BdCodec BdCodec",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

fn static_lib() -> Option<PathBuf> {
    // tests/<exe> lives in target/<profile>/deps
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libbitdiff_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let lib = static_lib().expect("cargo builds the static library alongside the tests");
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C smoke test");
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8_lossy(&run.stdout);
    let p1: f64 = stdout.split_whitespace().last().unwrap().parse().unwrap();
    assert!((p1 - 0.7).abs() < 0.03, "{stdout}");
}
