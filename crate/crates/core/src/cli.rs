//! The `bitdiff` command line: train, sample, eval, codec-check, probe-td
//! and ablate-selfcond, each driven by a run config file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::{gray, hamming, hamming_correlation, load_permutation, CodecKind, CodecSpec};
use crate::config::RunConfig;
use crate::denoiser::{load_checkpoint, save_checkpoint, Checkpoint, Denoiser, OracleDenoiser};
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::eval::{bit_histogram, self_cond_ablation, td_sweep, total_variation, DEFAULT_BINS};
use crate::rng::{stream_rng, Stream};
use crate::sampler::{asymmetric_denoise_probe, generate, SamplerConfig};
use crate::tensor::{AnalogTensor, DiscreteBatch};
use crate::trainer::Trainer;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_FORMAT: i32 = 5;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Range(_) | Error::Domain(_) => EXIT_CONFIG,
        Error::Invariant(_) => EXIT_INVARIANT,
        Error::Io(_) => EXIT_IO,
        Error::Format(_) => EXIT_FORMAT,
        Error::Shape(_) | Error::Unsupported(_) => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "bitdiff", version, about = "Diffusion over analog bits for discrete data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run config file.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set train.total_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DenoiserArgs {
    /// Use the exact posterior-mean denoiser of the task distribution.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Checkpoint to sample from (default: `io.checkpoint` in the output dir).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the MLP denoiser; writes a checkpoint and a metrics log.
    Train(ConfigArgs),
    /// Generate samples; writes an NDJSON sample dump.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        denoiser: DenoiserArgs,
        /// Number of samples (default: `sample.count`).
        #[arg(long)]
        count: Option<usize>,
        /// Include the final analog bits in each record.
        #[arg(long)]
        bits: bool,
        /// Also write every step's prediction to `trace.ndjson`.
        #[arg(long)]
        trace: bool,
        /// Dump path (default: `io.samples` in the output dir).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Total variation and analog-bit histogram of a sample dump.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Sample dump (default: `io.samples` in the output dir).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Concentration threshold as a fraction of the scale.
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
    },
    /// Exhaustive codec round-trip, adjacency and correlation checks.
    CodecCheck {
        /// Check only the codec of this config instead of the built-in set.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Check the permuted 256-symbol code with this table.
        #[arg(long)]
        permutation: Option<PathBuf>,
    },
    /// TV over a time-difference x step-count grid, plus denoising bit errors.
    ProbeTd {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        denoiser: DenoiserArgs,
    },
    /// Train with and without self-conditioning and compare.
    AblateSelfcond(ConfigArgs),
}

/// First line of every NDJSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub steps: usize,
    pub strategy: String,
    pub values: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct TraceRecord<'a> {
    step: usize,
    t: f64,
    x_pred: &'a [f64],
}

#[derive(Debug, Serialize)]
struct ProbeRecord {
    kind: &'static str,
    steps: usize,
    td: f64,
    bit_error: f64,
}

/// Parse `args` and run; returns the process exit status.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(&load(c)?, out),
        Command::Sample {
            config,
            denoiser,
            count,
            bits,
            trace,
            output,
        } => {
            let cfg = load(config)?;
            let opts = SampleOptions {
                count: count.unwrap_or(cfg.sample_count),
                bits: *bits,
                trace: *trace,
                output: output.clone(),
            };
            cmd_sample(&cfg, denoiser, &opts, out)
        }
        Command::Eval {
            config,
            samples,
            bins,
            theta,
        } => cmd_eval(&load(config)?, samples.as_deref(), *bins, *theta, out),
        Command::CodecCheck {
            config,
            overrides,
            permutation,
        } => {
            let specs = match config {
                Some(path) => vec![RunConfig::load(path, overrides)?.codec],
                None if !overrides.is_empty() => {
                    return Err(Error::config("--set needs --config"));
                }
                None => builtin_codecs()?,
            };
            cmd_codec_check(&specs, permutation.as_deref(), out)
        }
        Command::ProbeTd { config, denoiser } => cmd_probe_td(&load(config)?, denoiser, out),
        Command::AblateSelfcond(c) => cmd_ablate(&load(c)?, out),
    }
}

fn load(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    if cfg.io.threads > 0 {
        // Only the first call can size the global pool; results do not
        // depend on the thread count either way.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.io.threads)
            .build_global();
    }
    Ok(cfg)
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_context(e, dir))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_context(e, path))?))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_context(e, path))
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn header(cfg: &RunConfig, command: &str) -> Header {
    Header {
        kind: "header".into(),
        command: command.into(),
        denoiser: None,
        count: None,
        config: cfg.raw.canonical(),
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dist = cfg.distribution()?;
    let net = cfg
        .model
        .build(&cfg.codec, cfg.task.positions, &mut stream_rng(cfg.seed, Stream::Init, 0))?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;
    let metrics_path = cfg.io.resolve(&cfg.io.metrics);
    let mut metrics = create(&metrics_path)?;
    writeln!(metrics, "{}", json(&header(cfg, "train"))?)?;
    let losses = trainer.fit(
        &dist,
        &cfg.codec,
        &cfg.schedule,
        &mut stream_rng(cfg.seed, Stream::Train, 0),
        &mut stream_rng(cfg.seed, Stream::Data, 0),
        |r| {
            writeln!(metrics, "{}", json(r)?)?;
            Ok(())
        },
    )?;
    metrics.flush()?;
    let ckpt = Checkpoint {
        model: trainer.model.clone(),
        ema: Some(trainer.ema.shadow.clone()),
        codec_fingerprint: cfg.codec.fingerprint(),
    };
    let ckpt_path = cfg.io.resolve(&cfg.io.checkpoint);
    let mut w = create(&ckpt_path)?;
    save_checkpoint(&mut w, &ckpt)?;
    w.flush()?;
    let tail = &losses[losses.len().saturating_sub(cfg.train.log_every as usize)..];
    let mean = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    writeln!(out, "trained {} steps, final window loss {mean:.6}", losses.len())?;
    writeln!(out, "checkpoint: {}", ckpt_path.display())?;
    writeln!(out, "metrics: {}", metrics_path.display())?;
    Ok(())
}

/// The denoiser a sampling command runs with, and its label.
fn pick_denoiser(
    cfg: &RunConfig,
    dist: &DiscreteDistribution,
    args: &DenoiserArgs,
) -> Result<(Box<dyn Denoiser>, String)> {
    if args.oracle {
        let o = OracleDenoiser::from_distribution(&cfg.codec, dist, cfg.schedule)?;
        return Ok((Box::new(o), "oracle".into()));
    }
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.io.resolve(&cfg.io.checkpoint));
    let model = load_model(cfg, &path)?;
    Ok((Box::new(model), "checkpoint".into()))
}

/// Load a checkpoint and check it belongs to this config's codec and task.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<crate::denoiser::MlpDenoiser> {
    let ckpt = load_checkpoint(&mut BufReader::new(open(path)?))?;
    if ckpt.codec_fingerprint != cfg.codec.fingerprint() {
        return Err(Error::config(format!(
            "checkpoint {} was trained with a different codec",
            path.display()
        )));
    }
    let model = ckpt.sampling_model()?;
    let want = cfg.task.positions * cfg.codec.n_bits();
    if model.features() != want {
        return Err(Error::config(format!(
            "checkpoint has {} analog bits per row, task needs {want}",
            model.features()
        )));
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub count: usize,
    pub bits: bool,
    pub trace: bool,
    pub output: Option<PathBuf>,
}

pub fn cmd_sample(cfg: &RunConfig, den: &DenoiserArgs, opts: &SampleOptions, out: &mut dyn Write) -> Result<()> {
    let dist = cfg.distribution()?;
    let (denoiser, label) = pick_denoiser(cfg, &dist, den)?;
    let g = generate(&*denoiser, &cfg.codec, &cfg.schedule, &cfg.sample, opts.count, opts.trace)?;
    let path = opts
        .output
        .clone()
        .unwrap_or_else(|| cfg.io.resolve(&cfg.io.samples));
    let mut w = create(&path)?;
    let mut h = header(cfg, "sample");
    h.kind = "samples".into();
    h.denoiser = Some(label);
    h.count = Some(opts.count);
    writeln!(w, "{}", json(&h)?)?;
    let strategy = cfg.sample.strategy.to_string();
    for i in 0..g.samples.batch() {
        let rec = SampleRecord {
            seed: cfg.sample.rng_seed,
            steps: cfg.sample.steps,
            strategy: strategy.clone(),
            values: g.samples.row(i),
            bits: opts.bits.then(|| g.final_pred.data().row(i).to_vec()),
        };
        writeln!(w, "{}", json(&rec)?)?;
    }
    w.flush()?;
    if let Some(trace) = &g.trace {
        let tpath = path.with_file_name("trace.ndjson");
        let mut tw = create(&tpath)?;
        for (step, e) in trace.iter().enumerate() {
            let rec = TraceRecord {
                step,
                t: e.t,
                x_pred: e.x_pred.as_slice(),
            };
            writeln!(tw, "{}", json(&rec)?)?;
        }
        tw.flush()?;
        writeln!(out, "trace: {}", tpath.display())?;
    }
    if opts.count > 0 {
        let tv = total_variation(&g.samples, &dist)?;
        writeln!(out, "samples: {} (tv to task distribution {tv:.6})", opts.count)?;
    } else {
        writeln!(out, "samples: 0")?;
    }
    writeln!(out, "dump: {}", path.display())?;
    Ok(())
}

/// Read a sample dump written by `sample`.
pub fn read_sample_dump(path: &Path) -> Result<(Header, Vec<SampleRecord>)> {
    let mut lines = BufReader::new(open(path)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty sample dump", path.display())))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| Error::Format(format!("{}: bad header: {e}", path.display())))?;
    if header.kind != "samples" {
        return Err(Error::Format(format!("{}: not a sample dump", path.display())));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}: line {}: {e}", path.display(), i + 2)))?,
        );
    }
    Ok((header, records))
}

pub fn cmd_eval(cfg: &RunConfig, samples: Option<&Path>, bins: usize, theta: f64, out: &mut dyn Write) -> Result<()> {
    let dist = cfg.distribution()?;
    let path = samples.map_or_else(|| cfg.io.resolve(&cfg.io.samples), Path::to_path_buf);
    let (_, records) = read_sample_dump(&path)?;
    if records.is_empty() {
        return Err(Error::Format(format!("{}: no sample records", path.display())));
    }
    let rows: Vec<Vec<u32>> = records.iter().map(|r| r.values.clone()).collect();
    let batch = DiscreteBatch::from_rows(&rows)?;
    if batch.positions() != cfg.task.positions {
        return Err(Error::config(format!(
            "dump has {} positions, task has {}",
            batch.positions(),
            cfg.task.positions
        )));
    }
    let tv = total_variation(&batch, &dist)?;
    writeln!(out, "samples: {}", batch.batch())?;
    writeln!(out, "tv: {tv:.6}")?;
    if records.iter().all(|r| r.bits.is_some()) {
        let width = records[0].bits.as_ref().map_or(0, Vec::len);
        let flat: Vec<f64> = records.iter().flat_map(|r| r.bits.clone().unwrap_or_default()).collect();
        if flat.len() != width * records.len() {
            return Err(Error::Format("analog bit rows differ in length".into()));
        }
        let analog = AnalogTensor::from_vec(records.len(), width, flat)?;
        let h = bit_histogram(&analog, bins, cfg.codec.scale(), theta)?;
        let hpath = cfg.io.resolve(Path::new("histogram.csv"));
        let mut w = create(&hpath)?;
        w.write_all(h.to_csv().as_bytes())?;
        w.flush()?;
        writeln!(out, "concentration(|v| > {theta}b): {:.6}", h.concentration)?;
        writeln!(out, "histogram: {}", hpath.display())?;
    } else {
        writeln!(out, "no analog bits in dump; rerun `sample --bits` for the histogram")?;
    }
    Ok(())
}

/// Codecs checked when no config is given.
pub fn builtin_codecs() -> Result<Vec<CodecSpec>> {
    Ok(vec![
        CodecSpec::base2(256)?,
        CodecSpec::gray(256)?,
        CodecSpec::permuted_uint8()?,
        CodecSpec::one_hot(16)?,
    ])
}

/// Exhaustive checks of one codec; returns report lines.
pub fn check_codec(spec: &CodecSpec) -> Result<Vec<String>> {
    let k = spec.vocab_size();
    let mut lines = Vec::new();
    let all = DiscreteBatch::from_column(&(0..k as u32).collect::<Vec<_>>());
    let back = spec.decode(&spec.encode(&all)?)?;
    if let Some(v) = (0..k).find(|&i| back.values()[[i, 0]] != i as u32) {
        return Err(Error::Invariant(format!(
            "{} K={k}: decode(encode({v})) = {}",
            spec.kind(),
            back.values()[[v, 0]]
        )));
    }
    lines.push(format!("{} K={k}: round trip ok over {k} symbols", spec.kind()));
    if spec.kind() == CodecKind::Gray {
        for v in 1..k as u32 {
            let d = hamming(gray(v - 1), gray(v));
            if d != 1 || spec.code_of(v) != gray(v) {
                return Err(Error::Invariant(format!(
                    "gray K={k}: codes of {} and {v} differ in {d} bits",
                    v - 1
                )));
            }
        }
        lines.push(format!("gray K={k}: {} adjacent pairs at Hamming distance 1", k - 1));
    }
    if spec.kind().is_bit_code() {
        let r = hamming_correlation(spec)?;
        lines.push(format!("{} K={k}: hamming correlation r = {r:.6}", spec.kind()));
    }
    Ok(lines)
}

pub fn cmd_codec_check(specs: &[CodecSpec], permutation: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut specs = specs.to_vec();
    if let Some(p) = permutation {
        let table = load_permutation(p).map_err(|e| match e {
            Error::Io(io) => io_context(io, p),
            other => other,
        })?;
        let permuted = CodecSpec::new(CodecKind::PermutedBase2, 256, 1.0, Some(table))?;
        specs.retain(|s| s.kind() != CodecKind::PermutedBase2);
        specs.push(permuted);
    }
    for s in &specs {
        for line in check_codec(s)? {
            writeln!(out, "{line}")?;
        }
    }
    writeln!(out, "all codec checks passed")?;
    Ok(())
}

pub fn cmd_probe_td(cfg: &RunConfig, den: &DenoiserArgs, out: &mut dyn Write) -> Result<()> {
    let task = cfg.toy_task()?;
    let (denoiser, label) = pick_denoiser(cfg, &task.dist, den)?;
    let probe = &cfg.probe;
    let table = td_sweep(&*denoiser, &task, &cfg.sample, &probe.td_values, &probe.steps_values, probe.count)?;
    let path = cfg.io.resolve(Path::new("probe_td.ndjson"));
    let mut w = create(&path)?;
    let mut h = header(cfg, "probe-td");
    h.denoiser = Some(label);
    h.count = Some(probe.count);
    writeln!(w, "{}", json(&h)?)?;
    w.write_all(table.to_ndjson()?.as_bytes())?;
    writeln!(out, "tv of {} samples", probe.count)?;
    write!(out, "{}", table.to_table())?;
    let mut data_rng = stream_rng(cfg.seed, Stream::Data, 1);
    let x0 = task.dist.sample(probe.count, &mut data_rng);
    writeln!(out, "bit error denoising from t={} to t={}", probe.t_from, probe.t_to)?;
    writeln!(out, "steps  td        bit_error")?;
    for &steps in &probe.steps_values {
        let scfg = SamplerConfig {
            steps,
            ..cfg.sample.clone()
        };
        let rows = asymmetric_denoise_probe(
            &*denoiser,
            &task.codec,
            &task.sched,
            &scfg,
            &x0,
            probe.t_from,
            probe.t_to,
            &probe.td_values,
        )?;
        for r in rows {
            writeln!(out, "{steps:<5}  {:<8}  {:.6}", r.td, r.bit_error)?;
            let rec = ProbeRecord {
                kind: "bit_error",
                steps,
                td: r.td,
                bit_error: r.bit_error,
            };
            writeln!(w, "{}", json(&rec)?)?;
        }
    }
    w.flush()?;
    writeln!(out, "report: {}", path.display())?;
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let task = cfg.toy_task()?;
    let report = self_cond_ablation(&task, &cfg.model, &cfg.train, &cfg.sample, cfg.sample_count)?;
    let path = cfg.io.resolve(Path::new("ablation.ndjson"));
    let mut w = create(&path)?;
    writeln!(w, "{}", json(&header(cfg, "ablate-selfcond"))?)?;
    w.write_all(report.to_ndjson()?.as_bytes())?;
    w.flush()?;
    write!(out, "{}", report.to_table())?;
    writeln!(out, "report: {}", path.display())?;
    Ok(())
}
