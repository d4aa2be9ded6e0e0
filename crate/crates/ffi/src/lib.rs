//! C ABI over the `bitdiff` library.
//!
//! Handles are opaque pointers created by `bd_*_new`/`bd_*_load` functions
//! and released with the matching `bd_*_free`. Every fallible call returns a
//! [`BdStatus`]; on failure `bd_last_error_message` describes the error for
//! the calling thread. Outputs are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use bitdiff::codec::{hamming_correlation, shipped_permutation, CodecKind};
use bitdiff::denoiser::{load_checkpoint, Denoiser};
use bitdiff::{generate, CodecSpec, DiscreteBatch, DiscreteDistribution, Error, OracleDenoiser};
use bitdiff::{AnalogTensor, SamplerConfig, Schedule, StepRule, Strategy};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Invariant = 3,
    Io = 4,
    Format = 5,
    Range = 6,
    Domain = 7,
    Shape = 8,
    Unsupported = 9,
    InvalidArgument = 10,
    Panic = 11,
}

/// Values accepted as `kind` by `bd_codec_new`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdCodecKind {
    Base2 = 0,
    Gray = 1,
    PermutedBase2 = 2,
    OneHot = 3,
}

/// Values accepted as `BdSamplerConfig::step_rule`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStepRule {
    Ddim = 0,
    Ddpm = 1,
}

/// Values accepted as `BdSamplerConfig::strategy`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdStrategy {
    None = 0,
    Default = 1,
    /// `strategy_param` is the momentum.
    Momentum = 2,
    /// `strategy_param` is the guidance weight.
    SelfGuidance = 3,
}

/// Reverse-process settings for `bd_generate`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdSamplerConfig {
    pub steps: u32,
    /// Time difference in step units.
    pub td: f64,
    pub step_rule: u32,
    pub strategy: u32,
    pub strategy_param: f64,
    pub seed: u64,
}

/// Symbol to analog-bit codec.
pub struct BdCodec {
    inner: CodecSpec,
}

/// Denoiser: either the exact oracle of a distribution or a trained network.
pub struct BdDenoiser {
    inner: Box<dyn Denoiser>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BdStatus {
    match e {
        Error::Config(_) => BdStatus::Config,
        Error::Invariant(_) => BdStatus::Invariant,
        Error::Io(_) => BdStatus::Io,
        Error::Format(_) => BdStatus::Format,
        Error::Range(_) => BdStatus::Range,
        Error::Domain(_) => BdStatus::Domain,
        Error::Shape(_) => BdStatus::Shape,
        Error::Unsupported(_) => BdStatus::Unsupported,
    }
}

struct Fail(BdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(BdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(BdStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BdStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn publish<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    // SAFETY: checked non-null; caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn codec_kind(kind: u32) -> Result<CodecKind, Fail> {
    Ok(match kind {
        0 => CodecKind::Base2,
        1 => CodecKind::Gray,
        2 => CodecKind::PermutedBase2,
        3 => CodecKind::OneHot,
        k => return Err(invalid(format!("unknown codec kind {k}"))),
    })
}

fn sampler_config(c: &BdSamplerConfig, scale: f64) -> Result<SamplerConfig, Fail> {
    let step_rule = match c.step_rule {
        0 => StepRule::Ddim,
        1 => StepRule::Ddpm,
        r => return Err(invalid(format!("unknown step rule {r}"))),
    };
    let strategy = match c.strategy {
        0 => Strategy::NoSelfCond,
        1 => Strategy::Default,
        2 => Strategy::Momentum(c.strategy_param),
        3 => Strategy::SelfGuidance(c.strategy_param),
        s => return Err(invalid(format!("unknown strategy {s}"))),
    };
    Ok(SamplerConfig {
        steps: c.steps as usize,
        td: c.td,
        step_rule,
        strategy,
        rng_seed: c.seed,
        scale,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `bd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn bd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default sampler settings: 100 DDIM steps, td 0, previous-estimate
/// self-conditioning, seed 0.
#[no_mangle]
pub extern "C" fn bd_sampler_config_default() -> BdSamplerConfig {
    BdSamplerConfig {
        steps: 100,
        td: 0.0,
        step_rule: BdStepRule::Ddim as u32,
        strategy: BdStrategy::Default as u32,
        strategy_param: 0.0,
        seed: 0,
    }
}

/// Create a codec. `kind` is a `BdCodecKind`; the permuted kind uses the
/// built-in 256-entry table and needs `vocab_size == 256`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_new(kind: u32, vocab_size: usize, scale: f64, out: *mut *mut BdCodec) -> BdStatus {
    guard(|| {
        let kind = codec_kind(kind)?;
        let perm = (kind == CodecKind::PermutedBase2).then(shipped_permutation);
        let inner = CodecSpec::new(kind, vocab_size, scale, perm)?;
        publish(out, BdCodec { inner })
    })
}

/// Create a permuted-bit codec from an explicit table of `len` entries.
///
/// # Safety
/// `table` must point to `len` readable values; `out` as in `bd_codec_new`.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_new_permuted(
    table: *const u32,
    len: usize,
    scale: f64,
    out: *mut *mut BdCodec,
) -> BdStatus {
    guard(|| {
        let table = slice(table, len, "table")?.to_vec();
        let inner = CodecSpec::new(CodecKind::PermutedBase2, len, scale, Some(table))?;
        publish(out, BdCodec { inner })
    })
}

/// # Safety
/// `codec` must be null or a handle from `bd_codec_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_free(codec: *mut BdCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `codec` must be null or a live codec handle.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_vocab_size(codec: *const BdCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.inner.vocab_size())
}

/// Analog bits per symbol, or 0 for a null handle.
///
/// # Safety
/// `codec` must be null or a live codec handle.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_n_bits(codec: *const BdCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.inner.n_bits())
}

/// Encode `n` symbols into `n * n_bits` analog bits, symbol-major.
///
/// # Safety
/// `values` must hold `n` entries and `out` `out_len` writable entries.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_encode(
    codec: *const BdCodec,
    values: *const u32,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> BdStatus {
    guard(|| {
        let codec = &handle(codec, "codec")?.inner;
        let values = slice(values, n, "values")?;
        if out_len != n * codec.n_bits() {
            return Err(invalid(format!("output holds {out_len} values, need {}", n * codec.n_bits())));
        }
        let out = slice_mut(out, out_len, "out")?;
        let bits = codec.encode(&DiscreteBatch::from_column(values))?;
        out.copy_from_slice(bits.as_slice());
        Ok(())
    })
}

/// Decode `n * n_bits` analog bits into `n` symbols.
///
/// # Safety
/// `bits` must hold `bits_len` entries and `out` `n` writable entries.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_decode(
    codec: *const BdCodec,
    bits: *const f64,
    bits_len: usize,
    out: *mut u32,
    n: usize,
) -> BdStatus {
    guard(|| {
        let codec = &handle(codec, "codec")?.inner;
        if bits_len != n * codec.n_bits() {
            return Err(invalid(format!("{bits_len} bits do not make {n} symbols")));
        }
        let bits = slice(bits, bits_len, "bits")?;
        let out = slice_mut(out, n, "out")?;
        let analog = AnalogTensor::from_vec(n, codec.n_bits(), bits.to_vec())?;
        let decoded = codec.decode(&analog)?;
        for (o, v) in out.iter_mut().zip(decoded.values().iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Pearson correlation between symbol distance and code Hamming distance
/// over all symbol pairs.
///
/// # Safety
/// `codec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_codec_hamming_correlation(codec: *const BdCodec, out: *mut f64) -> BdStatus {
    guard(|| {
        let codec = &handle(codec, "codec")?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = hamming_correlation(codec)?;
        Ok(())
    })
}

/// Exact posterior-mean denoiser of a distribution over `positions`
/// symbols; `probs` has `vocab_size^positions` entries summing to 1 and is
/// indexed by `sum_p v_p * vocab_size^p`. Uses the default noise schedule.
///
/// # Safety
/// `codec` must be live, `probs` must hold `n_probs` entries, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_denoiser_new_oracle(
    codec: *const BdCodec,
    probs: *const f64,
    n_probs: usize,
    positions: usize,
    out: *mut *mut BdDenoiser,
) -> BdStatus {
    guard(|| {
        let codec = &handle(codec, "codec")?.inner;
        let probs = slice(probs, n_probs, "probs")?.to_vec();
        let dist = DiscreteDistribution::new(codec.vocab_size(), positions, probs)?;
        let o = OracleDenoiser::from_distribution(codec, &dist, Schedule::default())?;
        publish(out, BdDenoiser { inner: Box::new(o) })
    })
}

/// Load a trained network from a checkpoint file; samples with the EMA
/// weights when the file has them. The checkpoint must have been trained
/// with an identical codec.
///
/// # Safety
/// `codec` must be live, `path` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bd_denoiser_load_checkpoint(
    codec: *const BdCodec,
    path: *const c_char,
    out: *mut *mut BdDenoiser,
) -> BdStatus {
    guard(|| {
        let codec = &handle(codec, "codec")?.inner;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let bytes = std::fs::read(Path::new(path)).map_err(Error::from)?;
        let ckpt = load_checkpoint(&mut &bytes[..])?;
        if ckpt.codec_fingerprint != codec.fingerprint() {
            return Err(Fail(BdStatus::Config, "checkpoint was trained with a different codec".into()));
        }
        let model = ckpt.sampling_model()?;
        if model.features() % codec.n_bits() != 0 {
            return Err(Fail(BdStatus::Config, "checkpoint width does not fit the codec".into()));
        }
        publish(out, BdDenoiser { inner: Box::new(model) })
    })
}

/// # Safety
/// `den` must be null or a denoiser handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bd_denoiser_free(den: *mut BdDenoiser) {
    if !den.is_null() {
        drop(Box::from_raw(den));
    }
}

/// Analog bits per sample row, or 0 for a null handle.
///
/// # Safety
/// `den` must be null or a live denoiser handle.
#[no_mangle]
pub unsafe extern "C" fn bd_denoiser_features(den: *const BdDenoiser) -> usize {
    den.as_ref().map_or(0, |d| d.inner.features())
}

/// Generate `batch` samples. `values` receives `batch * positions` symbols
/// (row-major) where `positions = features / n_bits`. `bits` may be null;
/// otherwise it receives the final `batch * features` raw analog bits.
///
/// # Safety
/// Handles must be live; `cfg` readable; output buffers writable for their
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn bd_generate(
    den: *const BdDenoiser,
    codec: *const BdCodec,
    cfg: *const BdSamplerConfig,
    batch: usize,
    values: *mut u32,
    values_len: usize,
    bits: *mut f64,
    bits_len: usize,
) -> BdStatus {
    guard(|| {
        let den = &handle(den, "denoiser")?.inner;
        let codec = &handle(codec, "codec")?.inner;
        let cfg = sampler_config(handle(cfg, "config")?, codec.scale())?;
        let features = den.features();
        if features % codec.n_bits() != 0 {
            return Err(Fail(BdStatus::Shape, "denoiser width does not fit the codec".into()));
        }
        let positions = features / codec.n_bits();
        if values_len != batch * positions {
            return Err(invalid(format!("values holds {values_len}, need {}", batch * positions)));
        }
        if !bits.is_null() && bits_len != batch * features {
            return Err(invalid(format!("bits holds {bits_len}, need {}", batch * features)));
        }
        let values = slice_mut(values, values_len, "values")?;
        let g = generate(&**den, codec, &Schedule::default(), &cfg, batch, false)?;
        for (o, v) in values.iter_mut().zip(g.samples.values().iter()) {
            *o = *v;
        }
        if !bits.is_null() {
            slice_mut(bits, bits_len, "bits")?.copy_from_slice(g.final_pred.as_slice());
        }
        Ok(())
    })
}
