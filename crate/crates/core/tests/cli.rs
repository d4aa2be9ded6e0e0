use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bitdiff::cli::{read_sample_dump, EXIT_CONFIG, EXIT_FORMAT, EXIT_INVARIANT, EXIT_IO};

const CFG: &str = "\
run.seed = 2
codec.vocab_size = 4
model.hidden = 8
train.total_steps = 40
train.log_every = 10
sample.steps = 10
sample.count = 50
task.probs = 0.4, 0.3, 0.2, 0.1
io.output_dir = out
";

fn bitdiff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitdiff"))
        .args(args)
        .current_dir(dir)
        .env_remove("BITDIFF_OUTPUT_DIR")
        .env_remove("BITDIFF_THREADS")
        .output()
        .expect("spawn bitdiff")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), CFG).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_header_only_metrics() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["train", "-c", "run.cfg", "--set", "train.total_steps=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = fs::read_to_string(dir.path().join("out/metrics.ndjson")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert!(metrics.starts_with(r#"{"kind":"header","command":"train""#));
    assert!(dir.path().join("out/model.ckpt").exists());
}

#[test]
fn metrics_log_one_record_per_window() {
    let dir = setup();
    assert!(bitdiff(dir.path(), &["train", "-c", "run.cfg"]).status.success());
    let metrics = fs::read_to_string(dir.path().join("out/metrics.ndjson")).unwrap();
    let steps: Vec<u64> = metrics
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![10, 20, 30, 40]);
}

#[test]
fn zero_count_gives_header_only_dump() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["sample", "-c", "run.cfg", "--oracle", "--count", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (header, records) = read_sample_dump(&dir.path().join("out/samples.ndjson")).unwrap();
    assert_eq!(header.count, Some(0));
    assert_eq!(header.denoiser.as_deref(), Some("oracle"));
    assert!(records.is_empty());
}

#[test]
fn sample_records_carry_run_fields() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["sample", "-c", "run.cfg", "--oracle", "--bits", "--set", "sample.strategy=momentum:0.5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, records) = read_sample_dump(&dir.path().join("out/samples.ndjson")).unwrap();
    assert_eq!(records.len(), 50);
    for r in &records {
        assert_eq!((r.seed, r.steps, r.strategy.as_str()), (2, 10, "momentum:0.5"));
        assert_eq!(r.values.len(), 1);
        assert!(r.values[0] < 4);
        assert_eq!(r.bits.as_ref().map(Vec::len), Some(2));
    }
    let o = bitdiff(dir.path(), &["eval", "-c", "run.cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn checkpoint_sampling_needs_matching_codec() {
    let dir = setup();
    assert!(bitdiff(dir.path(), &["train", "-c", "run.cfg"]).status.success());
    let o = bitdiff(dir.path(), &["sample", "-c", "run.cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bitdiff(dir.path(), &["sample", "-c", "run.cfg", "--set", "codec.kind=gray"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&o).contains("different codec"));
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["train", "-c", "run.cfg", "--set", "train.nonsense=1"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&o).contains("train.nonsense"));

    let o = bitdiff(dir.path(), &["train", "-c", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(EXIT_IO));

    let o = bitdiff(dir.path(), &["sample", "-c", "run.cfg"]);
    assert_eq!(o.status.code(), Some(EXIT_IO), "no checkpoint yet: {}", stderr(&o));

    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/samples.ndjson"), "not json\n").unwrap();
    let o = bitdiff(dir.path(), &["eval", "-c", "run.cfg"]);
    assert_eq!(o.status.code(), Some(EXIT_FORMAT));
}

#[test]
fn codec_check_names_broken_permutation_invariant() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["codec-check"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("all codec checks passed"));

    let mut table: Vec<String> = (0..256).map(|v| v.to_string()).collect();
    table[10] = "11".into();
    fs::write(dir.path().join("dup.txt"), table.join("\n")).unwrap();
    let o = bitdiff(dir.path(), &["codec-check", "--permutation", "dup.txt"]);
    assert_eq!(o.status.code(), Some(EXIT_INVARIANT));
    assert!(stderr(&o).contains("not a bijection"), "{}", stderr(&o));

    fs::write(dir.path().join("short.txt"), "0\n1\n2\n").unwrap();
    let o = bitdiff(dir.path(), &["codec-check", "--permutation", "short.txt"]);
    assert_eq!(o.status.code(), Some(EXIT_INVARIANT));
    assert!(stderr(&o).contains("entries"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_load_and_check() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for entry in fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        let cfg = bitdiff::config::RunConfig::load(&path, &[]).unwrap();
        cfg.distribution().unwrap();
        bitdiff::cli::check_codec(&cfg.codec).unwrap();
    }
}

#[test]
fn env_overrides_output_dir_but_flag_wins() {
    let dir = setup();
    let run = |extra: &[&str]| {
        let mut args = vec!["sample", "-c", "run.cfg", "--oracle", "--count", "3"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_bitdiff"))
            .args(&args)
            .current_dir(dir.path())
            .env("BITDIFF_OUTPUT_DIR", "envdir")
            .env("BITDIFF_THREADS", "1")
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(dir.path().join("envdir/samples.ndjson").exists());
    assert!(run(&["--set", "io.output_dir=flagdir"]).status.success());
    assert!(dir.path().join("flagdir/samples.ndjson").exists());
}

#[test]
fn probe_td_grid_shape() {
    let dir = setup();
    let o = bitdiff(
        dir.path(),
        &["probe-td", "-c", "run.cfg", "--oracle", "--set", "probe.count=40", "--set", "probe.td_values=0,1,2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("out/probe_td.ndjson")).unwrap();
    let recs: Vec<serde_json::Value> = report.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let grid = recs.iter().filter(|r| r.get("tv").is_some()).count();
    let probes = recs.iter().filter(|r| r["kind"] == "bit_error").count();
    assert_eq!(grid, 3 * 3);
    assert_eq!(probes, 3 * 3);
}

#[test]
fn ablation_reports_two_rows() {
    let dir = setup();
    let o = bitdiff(dir.path(), &["ablate-selfcond", "-c", "run.cfg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("out/ablation.ndjson")).unwrap();
    let rows: Vec<serde_json::Value> = report.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["self_cond"], false);
    assert_eq!(rows[1]["self_cond"], true);
}
