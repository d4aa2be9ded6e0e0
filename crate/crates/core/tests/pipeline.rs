use std::path::Path;

use bitdiff::config::RunConfig;
use bitdiff::denoiser::{load_checkpoint, save_checkpoint, Checkpoint, Denoiser, ModelSpec};
use bitdiff::eval::{bit_histogram, self_cond_ablation, td_sweep};
use bitdiff::rng::{stream_rng, Stream};
use bitdiff::sampler::{asymmetric_denoise_probe, generate_with_rng, SHARD_ROWS};
use bitdiff::*;

fn toy() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy_k8.cfg");
    RunConfig::load(&path, &[]).unwrap()
}

fn oracle(cfg: &RunConfig) -> OracleDenoiser {
    OracleDenoiser::from_distribution(&cfg.codec, &cfg.distribution().unwrap(), cfg.schedule).unwrap()
}

#[test]
fn single_step_sampling_decodes_first_prediction() {
    let cfg = toy();
    let o = oracle(&cfg);
    let sc = SamplerConfig {
        steps: 1,
        strategy: Strategy::NoSelfCond,
        ..cfg.sample.clone()
    };
    let mut rng = stream_rng(9, Stream::Sample, 0);
    let g = generate_with_rng(&o, &cfg.codec, &cfg.schedule, &sc, 200, &mut rng, false).unwrap();

    let mut rng = stream_rng(9, Stream::Sample, 0);
    let x1 = {
        use rand_distr::{Distribution, StandardNormal};
        let v: Vec<f64> = (0..200 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        AnalogTensor::from_vec(200, 3, v).unwrap()
    };
    let pred = o.predict(&x1, &AnalogTensor::zeros_like(&x1), 1.0).unwrap();
    assert_eq!(g.final_pred, pred);
    assert_eq!(g.samples, cfg.codec.decode(&pred.clipped(1.0)).unwrap());
}

#[test]
fn output_independent_of_thread_count() {
    let cfg = toy();
    let o = oracle(&cfg);
    let sc = SamplerConfig {
        steps: 8,
        step_rule: StepRule::Ddpm,
        ..cfg.sample.clone()
    };
    let n = 2 * SHARD_ROWS + 17;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate(&o, &cfg.codec, &cfg.schedule, &sc, n, true).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a.samples.batch(), n);

    // Shard i depends only on (seed, i), so a shorter batch is a prefix.
    let short = generate(&o, &cfg.codec, &cfg.schedule, &sc, SHARD_ROWS, false).unwrap();
    assert_eq!(short.final_pred.data().view(), a.final_pred.data().slice(ndarray::s![..SHARD_ROWS, ..]));
}

#[test]
fn oracle_samples_concentrate() {
    let cfg = toy();
    let o = oracle(&cfg);
    let g = generate(&o, &cfg.codec, &cfg.schedule, &cfg.sample, 5000, false).unwrap();
    let h = bit_histogram(&g.final_pred, 50, 1.0, 0.5).unwrap();
    assert!(h.concentration >= 0.99, "{}", h.concentration);
    assert_eq!(h.total(), 5000 * 3);
}

#[test]
fn oracle_td_probe_has_zero_baseline_and_best_at_most_baseline() {
    let cfg = toy();
    let o = oracle(&cfg);
    let x0 = cfg.distribution().unwrap().sample(2000, &mut stream_rng(1, Stream::Data, 0));
    let sc = SamplerConfig {
        steps: 5,
        ..cfg.sample.clone()
    };
    let rows = asymmetric_denoise_probe(&o, &cfg.codec, &cfg.schedule, &sc, &x0, 0.6, 0.0, &[0.5, 1.0, 2.0]).unwrap();
    assert_eq!(rows[0].td, 0.0);
    assert_eq!(rows.len(), 4);
    let best = rows.iter().map(|r| r.bit_error).fold(f64::INFINITY, f64::min);
    assert!(best <= rows[0].bit_error);

    let task = cfg.toy_task().unwrap();
    let table = td_sweep(&o, &task, &cfg.sample, &[0.0, 1.0], &[5, 10], 500).unwrap();
    assert_eq!(table.cells.len(), 4);
}

#[test]
fn ablation_smoke_and_rerun() {
    let cfg = toy();
    let task = cfg.toy_task().unwrap();
    let train = TrainConfig {
        total_steps: 3000,
        ..cfg.train.clone()
    };
    let report = self_cond_ablation(&task, &cfg.model, &train, &cfg.sample, 5000).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(!report.rows[0].self_cond && report.rows[1].self_cond);
    for r in &report.rows {
        assert!(r.final_tv < 0.2, "self_cond={} tv={}", r.self_cond, r.final_tv);
    }

    let small = TrainConfig {
        total_steps: 200,
        ..cfg.train.clone()
    };
    let a = self_cond_ablation(&task, &cfg.model, &small, &cfg.sample, 300).unwrap();
    let b = self_cond_ablation(&task, &cfg.model, &small, &cfg.sample, 300).unwrap();
    assert_eq!(a.to_ndjson().unwrap(), b.to_ndjson().unwrap());
}

#[test]
fn checkpoint_file_round_trip_samples_identically() {
    let cfg = toy();
    let spec = ModelSpec {
        hidden: vec![12, 12],
        ..cfg.model.clone()
    };
    let net = spec.build(&cfg.codec, 1, &mut stream_rng(4, Stream::Init, 0)).unwrap();
    let ckpt = Checkpoint {
        model: net.clone(),
        ema: Some(net.params().clone()),
        codec_fingerprint: cfg.codec.fingerprint(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&mut std::fs::File::create(&path).unwrap(), &ckpt).unwrap();
    let loaded = load_checkpoint(&mut std::fs::File::open(&path).unwrap()).unwrap();
    let again = dir.path().join("m2.ckpt");
    save_checkpoint(&mut std::fs::File::create(&again).unwrap(), &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let m = loaded.sampling_model().unwrap();
    assert_eq!(m.features(), 3);
    let a = generate(&m, &cfg.codec, &cfg.schedule, &cfg.sample, 100, false).unwrap();
    let b = generate(&load_checkpoint(&mut std::fs::File::open(&again).unwrap()).unwrap().sampling_model().unwrap(), &cfg.codec, &cfg.schedule, &cfg.sample, 100, false).unwrap();
    assert_eq!(a, b);
}
