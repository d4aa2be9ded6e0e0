//! Run configuration: a flat `section.key = value` file, strict about
//! unknown keys. See `docs/config-format.md` for the grammar.
//!
//! Value precedence, highest first: `--set key=value` overrides, the
//! `BITDIFF_OUTPUT_DIR` / `BITDIFF_THREADS` environment variables, the
//! file, built-in defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codec::{load_permutation, shipped_permutation, CodecKind, CodecSpec};
use crate::denoiser::{HeadKind, ModelSpec};
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::eval::ToyTask;
use crate::sampler::{SamplerConfig, StepRule, Strategy};
use crate::schedule::Schedule;
use crate::tensor::DiscreteBatch;
use crate::trainer::{LossKind, TrainConfig};

pub const ENV_OUTPUT_DIR: &str = "BITDIFF_OUTPUT_DIR";
pub const ENV_THREADS: &str = "BITDIFF_THREADS";

/// Every accepted key with its default (empty means "unset").
const KEYS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("codec.kind", "base2"),
    ("codec.vocab_size", "8"),
    ("codec.scale", "1.0"),
    ("codec.permutation", ""),
    ("schedule.ns", "0.0002"),
    ("schedule.ds", "0.00025"),
    ("model.hidden", "64,64"),
    ("model.time_freqs", "4"),
    ("model.head", "linear"),
    ("model.zero_init_output", "false"),
    ("train.loss", "l2"),
    ("train.self_cond", "true"),
    ("train.self_cond_prob", "0.5"),
    ("train.learning_rate", "0.001"),
    ("train.batch_size", "128"),
    ("train.total_steps", "10000"),
    ("train.ema_decay", "0.999"),
    ("train.log_every", "100"),
    ("sample.steps", "100"),
    ("sample.td", "0"),
    ("sample.step_rule", "ddim"),
    ("sample.strategy", "default"),
    ("sample.count", "10000"),
    ("task.positions", "1"),
    ("task.probs", ""),
    ("task.data_path", ""),
    ("probe.td_values", "0,0.5,1,2"),
    ("probe.steps_values", "5,10,20"),
    ("probe.count", "2000"),
    ("probe.t_from", "0.6"),
    ("probe.t_to", "0.0"),
    ("io.output_dir", "out"),
    ("io.checkpoint", "model.ckpt"),
    ("io.metrics", "metrics.ndjson"),
    ("io.samples", "samples.ndjson"),
    ("io.threads", "0"),
];

/// Where a value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    File,
    Env,
    Flag,
}

/// Raw key/value table after layering; values are still strings.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, (String, Origin)>,
    base_dir: PathBuf,
}

impl RawConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .map(|&(k, v)| (k.to_string(), (v.to_string(), Origin::Default)))
            .collect();
        Self {
            values,
            base_dir: PathBuf::from("."),
        }
    }

    /// Layer file text over the defaults. Relative input paths in the file
    /// resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut raw = Self::defaults();
        raw.base_dir = base_dir.to_path_buf();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = strip_comment(line).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {lineno}: expected `key = value`")))?;
            let k = k.trim();
            if let Some(prev) = seen.insert(k.to_string(), lineno) {
                return Err(Error::config(format!(
                    "line {lineno}: key `{k}` already set on line {prev}"
                )));
            }
            raw.set(k, v.trim(), Origin::File)
                .map_err(|e| Error::config(format!("line {lineno}: {}", strip_prefix(&e))))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Self::parse(&text, &base)
    }

    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.to_string(), origin);
                Ok(())
            }
            None => Err(Error::config(format!("unknown key `{key}`"))),
        }
    }

    /// Apply a `key=value` override.
    pub fn set_flag(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim(), Origin::Flag)
    }

    /// Apply the environment overrides from `lookup` unless a flag already
    /// set the key.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for (var, key) in [(ENV_OUTPUT_DIR, "io.output_dir"), (ENV_THREADS, "io.threads")] {
            if let Some(v) = lookup(var) {
                if self.origin(key) != Origin::Flag {
                    self.set(key, &v, Origin::Env)?;
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values.get(key).expect("known key").0
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.values.get(key).expect("known key").1
    }

    /// Canonical `key = value` listing of every non-`io` key, used to stamp
    /// outputs with the settings that produced them.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| !k.starts_with("io."))
            .map(|(k, (v, _))| (k.clone(), v.clone()))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.canonical() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key);
        if v.trim().is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("`{key}`: cannot parse `{}`", x.trim())))
            })
            .collect()
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            other => Err(Error::config(format!("`{key}`: expected a boolean, got `{other}`"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        if v.is_empty() {
            return None;
        }
        let p = PathBuf::from(v);
        Some(if p.is_absolute() || self.origin(key) != Origin::File {
            p
        } else {
            self.base_dir.join(p)
        })
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Ground-truth source for toy tasks.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSource {
    /// Explicit probabilities over all `vocab^positions` joint states.
    Probs(Vec<f64>),
    /// File of samples, one row of symbols per line.
    Data(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub positions: usize,
    pub source: TaskSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub td_values: Vec<f64>,
    pub steps_values: Vec<usize>,
    pub count: usize,
    pub t_from: f64,
    pub t_to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IoConfig {
    pub output_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub samples: PathBuf,
    /// 0 leaves the thread pool at its default size.
    pub threads: usize,
}

impl IoConfig {
    /// `name` under the output directory unless absolute.
    pub fn resolve(&self, name: &Path) -> PathBuf {
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.output_dir.join(name)
        }
    }
}

/// Fully typed configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub codec: CodecSpec,
    pub schedule: Schedule,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub sample: SamplerConfig,
    pub sample_count: usize,
    pub task: TaskConfig,
    pub probe: ProbeConfig,
    pub io: IoConfig,
    pub raw: RawConfig,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let seed: u64 = raw.parsed("run.seed")?;
        let kind: CodecKind = raw.parsed("codec.kind")?;
        let vocab: usize = raw.parsed("codec.vocab_size")?;
        let scale: f64 = raw.parsed("codec.scale")?;
        let permutation = match (kind, raw.path("codec.permutation")) {
            (CodecKind::PermutedBase2, Some(p)) => {
                if !p.exists() {
                    return Err(Error::config(format!("permutation file {} not found", p.display())));
                }
                Some(load_permutation(&p)?)
            }
            (CodecKind::PermutedBase2, None) if vocab == 256 => Some(shipped_permutation()),
            (_, Some(_)) => {
                return Err(Error::config(format!("`codec.permutation` set for {kind} codec")));
            }
            _ => None,
        };
        let codec = CodecSpec::new(kind, vocab, scale, permutation)?;
        let schedule = Schedule::new(raw.parsed("schedule.ns")?, raw.parsed("schedule.ds")?)?;
        let model = ModelSpec {
            hidden: raw.list("model.hidden")?,
            time_freqs: raw.parsed("model.time_freqs")?,
            head: HeadKind::parse(raw.get("model.head"))?,
            zero_init_output: raw.flag("model.zero_init_output")?,
        };
        let train = TrainConfig {
            loss_kind: raw.get("train.loss").parse::<LossKind>()?,
            self_cond: raw.flag("train.self_cond")?,
            self_cond_prob: raw.parsed("train.self_cond_prob")?,
            learning_rate: raw.parsed("train.learning_rate")?,
            batch_size: raw.parsed("train.batch_size")?,
            total_steps: raw.parsed("train.total_steps")?,
            ema_decay: raw.parsed("train.ema_decay")?,
            rng_seed: seed,
            log_every: raw.parsed("train.log_every")?,
        };
        train.validate()?;
        train.check_head(model.head)?;
        let sample = SamplerConfig {
            steps: raw.parsed("sample.steps")?,
            td: raw.parsed("sample.td")?,
            step_rule: raw.get("sample.step_rule").parse::<StepRule>()?,
            strategy: raw.get("sample.strategy").parse::<Strategy>()?,
            rng_seed: seed,
            scale,
        };
        sample.validate()?;
        let positions: usize = raw.parsed("task.positions")?;
        if positions == 0 {
            return Err(Error::config("task.positions must be positive"));
        }
        let source = match (raw.get("task.probs").is_empty(), raw.path("task.data_path")) {
            (false, None) => TaskSource::Probs(raw.list("task.probs")?),
            (true, Some(p)) => {
                if !p.exists() {
                    return Err(Error::config(format!("data file {} not found", p.display())));
                }
                TaskSource::Data(p)
            }
            (true, None) => return Err(Error::config("set one of `task.probs` or `task.data_path`")),
            (false, Some(_)) => {
                return Err(Error::config("`task.probs` and `task.data_path` are mutually exclusive"))
            }
        };
        let probe = ProbeConfig {
            td_values: raw.list("probe.td_values")?,
            steps_values: raw.list("probe.steps_values")?,
            count: raw.parsed("probe.count")?,
            t_from: raw.parsed("probe.t_from")?,
            t_to: raw.parsed("probe.t_to")?,
        };
        if probe.steps_values.contains(&0) {
            return Err(Error::config("probe.steps_values must be positive"));
        }
        let io = IoConfig {
            output_dir: PathBuf::from(raw.get("io.output_dir")),
            checkpoint: PathBuf::from(raw.get("io.checkpoint")),
            metrics: PathBuf::from(raw.get("io.metrics")),
            samples: PathBuf::from(raw.get("io.samples")),
            threads: raw.parsed("io.threads")?,
        };
        Ok(Self {
            seed,
            codec,
            schedule,
            model,
            train,
            sample,
            sample_count: raw.parsed("sample.count")?,
            task: TaskConfig { positions, source },
            probe,
            io,
            raw,
        })
    }

    /// File, then environment, then `--set` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.set_flag(o)?;
        }
        raw.apply_env(|k| std::env::var(k).ok())?;
        Self::from_raw(raw)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(RawConfig::parse(text, Path::new("."))?)
    }

    pub fn distribution(&self) -> Result<DiscreteDistribution> {
        let vocab = self.codec.vocab_size();
        match &self.task.source {
            TaskSource::Probs(p) => DiscreteDistribution::new(vocab, self.task.positions, p.clone()),
            TaskSource::Data(path) => {
                let batch = load_samples(path, self.task.positions)?;
                DiscreteDistribution::empirical(&batch, vocab)
            }
        }
    }

    pub fn toy_task(&self) -> Result<ToyTask> {
        Ok(ToyTask {
            codec: self.codec.clone(),
            dist: self.distribution()?,
            sched: self.schedule,
        })
    }
}

/// Read whitespace-separated symbol rows; `#` starts a comment.
pub fn load_samples(path: &Path, positions: usize) -> Result<DiscreteBatch> {
    let text = std::fs::read_to_string(path)?;
    parse_samples(&text, positions)
}

pub fn parse_samples(text: &str, positions: usize) -> Result<DiscreteBatch> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|x| {
                x.parse::<u32>()
                    .map_err(|_| Error::Format(format!("line {}: bad symbol `{x}`", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != positions {
            return Err(Error::Format(format!(
                "line {}: expected {positions} symbols, found {}",
                i + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("data file holds no samples".into()));
    }
    DiscreteBatch::from_rows(&rows)
}
