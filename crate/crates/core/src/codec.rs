//! Discrete symbols to analog bits and back.
//!
//! Bit-code kinds store bits least-significant first. Every kind maps the
//! binary `{0, 1}` representation affinely onto `{-b, +b}`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{AnalogTensor, DiscreteBatch};

const SHIPPED_PERMUTATION: &str = include_str!("../data/uint8_rand_perm.txt");

/// Largest vocabulary for which pairwise Hamming statistics are enumerated.
pub const MAX_CORRELATION_VOCAB: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecKind {
    Base2,
    Gray,
    PermutedBase2,
    OneHot,
}

impl CodecKind {
    pub fn is_bit_code(self) -> bool {
        !matches!(self, CodecKind::OneHot)
    }
}

impl fmt::Display for CodecKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CodecKind::Base2 => "base2",
            CodecKind::Gray => "gray",
            CodecKind::PermutedBase2 => "permuted-base2",
            CodecKind::OneHot => "one-hot",
        };
        f.write_str(s)
    }
}

impl FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base2" | "uint8" => Ok(CodecKind::Base2),
            "gray" => Ok(CodecKind::Gray),
            "permuted-base2" | "uint8-rand" => Ok(CodecKind::PermutedBase2),
            "one-hot" | "onehot" => Ok(CodecKind::OneHot),
            other => Err(Error::config(format!("unknown codec kind `{other}`"))),
        }
    }
}

/// Binary-reflected Gray code.
pub fn gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

pub fn gray_inverse(mut g: u32) -> u32 {
    let mut v = g;
    while g > 1 {
        g >>= 1;
        v ^= g;
    }
    v
}

pub fn hamming(a: u32, b: u32) -> u32 {
    (a ^ b).count_ones()
}

/// Number of bits needed to address `k` symbols.
pub fn bits_for(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// Bits of every value, LSB first, shape `[batch, positions, n]`.
pub fn int_to_bits(x: &DiscreteBatch, n: u32) -> Result<Array3<u8>> {
    if n > 32 {
        return Err(Error::Range(format!("bit width {n} exceeds 32")));
    }
    let limit = 1u64 << n;
    let (batch, positions) = (x.batch(), x.positions());
    let mut out = Array3::zeros((batch, positions, n as usize));
    for ((i, p), &v) in x.values().indexed_iter() {
        if u64::from(v) >= limit {
            return Err(Error::Range(format!("value {v} does not fit in {n} bits")));
        }
        for j in 0..n {
            out[[i, p, j as usize]] = ((v >> j) & 1) as u8;
        }
    }
    Ok(out)
}

/// Inverse of [`int_to_bits`]: `sum_j bits_j * 2^j`.
pub fn bit_to_int(bits: &Array3<u8>) -> Result<DiscreteBatch> {
    let (batch, positions, n) = bits.dim();
    if n > 32 {
        return Err(Error::Range(format!("bit width {n} exceeds 32")));
    }
    let mut out = Array2::zeros((batch, positions));
    for i in 0..batch {
        for p in 0..positions {
            let mut v = 0u32;
            for j in 0..n {
                match bits[[i, p, j]] {
                    0 => {}
                    1 => v |= 1 << j,
                    other => {
                        return Err(Error::Domain(format!("non-binary entry {other}")));
                    }
                }
            }
            out[[i, p]] = v;
        }
    }
    Ok(DiscreteBatch::new(out))
}

/// How discrete symbols map to analog-bit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecSpec {
    kind: CodecKind,
    vocab_size: usize,
    n_bits: usize,
    scale: f64,
    permutation: Option<Vec<u32>>,
    // code -> symbol, sized 2^n_bits for bit-code kinds
    inverse: Vec<Option<u32>>,
}

impl CodecSpec {
    pub fn new(
        kind: CodecKind,
        vocab_size: usize,
        scale: f64,
        permutation: Option<Vec<u32>>,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("scale must be positive, got {scale}")));
        }
        match (kind, &permutation) {
            (CodecKind::PermutedBase2, None) => {
                return Err(Error::config("permuted-base2 codec requires a permutation table"));
            }
            (CodecKind::PermutedBase2, Some(p)) => check_permutation(p, vocab_size)?,
            (_, Some(_)) => {
                return Err(Error::config(format!(
                    "permutation table given for {kind} codec"
                )));
            }
            _ => {}
        }
        let n_bits = match kind {
            CodecKind::OneHot => vocab_size,
            _ => {
                if vocab_size > MAX_BIT_CODE_VOCAB {
                    return Err(Error::config(format!(
                        "vocab_size {vocab_size} exceeds {MAX_BIT_CODE_VOCAB}"
                    )));
                }
                bits_for(vocab_size) as usize
            }
        };
        let mut spec = Self {
            kind,
            vocab_size,
            n_bits,
            scale,
            permutation,
            inverse: Vec::new(),
        };
        if kind.is_bit_code() {
            let mut inverse = vec![None; 1usize << n_bits];
            for v in 0..vocab_size as u32 {
                inverse[spec.code_of(v) as usize] = Some(v);
            }
            spec.inverse = inverse;
        }
        Ok(spec)
    }

    pub fn base2(vocab_size: usize) -> Result<Self> {
        Self::new(CodecKind::Base2, vocab_size, 1.0, None)
    }

    pub fn gray(vocab_size: usize) -> Result<Self> {
        Self::new(CodecKind::Gray, vocab_size, 1.0, None)
    }

    pub fn one_hot(vocab_size: usize) -> Result<Self> {
        Self::new(CodecKind::OneHot, vocab_size, 1.0, None)
    }

    /// The 256-symbol permuted code with the embedded table.
    pub fn permuted_uint8() -> Result<Self> {
        Self::new(CodecKind::PermutedBase2, 256, 1.0, Some(shipped_permutation()))
    }

    pub fn with_scale(self, scale: f64) -> Result<Self> {
        Self::new(self.kind, self.vocab_size, scale, self.permutation)
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn permutation(&self) -> Option<&[u32]> {
        self.permutation.as_deref()
    }

    /// Integer code word of a symbol (bit-code kinds only).
    pub fn code_of(&self, v: u32) -> u32 {
        match self.kind {
            CodecKind::Base2 => v,
            CodecKind::Gray => gray(v),
            CodecKind::PermutedBase2 => self.permutation.as_ref().expect("validated")[v as usize],
            CodecKind::OneHot => 1 << v,
        }
    }

    /// Analog vector of a single symbol, length `n_bits`.
    pub fn codeword(&self, v: u32) -> Vec<f64> {
        let b = self.scale;
        let to_analog = |bit: bool| if bit { b } else { -b };
        match self.kind {
            CodecKind::OneHot => (0..self.n_bits).map(|j| to_analog(j == v as usize)).collect(),
            _ => {
                let code = self.code_of(v);
                (0..self.n_bits).map(|j| to_analog((code >> j) & 1 == 1)).collect()
            }
        }
    }

    /// All `K` codewords in symbol order.
    pub fn codebook(&self) -> Vec<Vec<f64>> {
        (0..self.vocab_size as u32).map(|v| self.codeword(v)).collect()
    }

    pub fn check_vocab(&self, x: &DiscreteBatch) -> Result<()> {
        x.check_vocab(self.vocab_size)
    }

    pub fn encode(&self, x: &DiscreteBatch) -> Result<AnalogTensor> {
        self.check_vocab(x)?;
        let (batch, positions) = (x.batch(), x.positions());
        let width = positions * self.n_bits;
        let mut data = Vec::with_capacity(batch * width);
        for &v in x.values().iter() {
            data.extend(self.codeword(v));
        }
        AnalogTensor::from_vec(batch, width, data)
    }

    /// Decode one position's analog bits.
    pub fn decode_symbol(&self, bits: &[f64]) -> u32 {
        debug_assert_eq!(bits.len(), self.n_bits);
        if self.kind == CodecKind::OneHot {
            let mut best = 0;
            for (j, &v) in bits.iter().enumerate() {
                if v > bits[best] {
                    best = j;
                }
            }
            return best as u32;
        }
        let code = bits
            .iter()
            .enumerate()
            .fold(0u32, |acc, (j, &v)| if v > 0.0 { acc | (1 << j) } else { acc });
        match self.inverse[code as usize] {
            Some(v) => v,
            None => self.nearest_symbol(bits),
        }
    }

    // Only reachable when K is not a power of two and the thresholded code
    // is unused: fall back to the nearest codeword in Euclidean distance.
    fn nearest_symbol(&self, bits: &[f64]) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for v in 0..self.vocab_size as u32 {
            let d: f64 = self
                .codeword(v)
                .iter()
                .zip(bits)
                .map(|(c, x)| (c - x) * (c - x))
                .sum();
            if d < best.0 {
                best = (d, v);
            }
        }
        best.1
    }

    pub fn decode(&self, x: &AnalogTensor) -> Result<DiscreteBatch> {
        if !x.features().is_multiple_of(self.n_bits) {
            return Err(Error::shape(format!(
                "{} features is not a multiple of {} bits",
                x.features(),
                self.n_bits
            )));
        }
        let positions = x.features() / self.n_bits;
        let mut out = Array2::zeros((x.batch(), positions));
        for (i, row) in x.data().rows().into_iter().enumerate() {
            let row = row.to_vec();
            for (p, chunk) in row.chunks(self.n_bits).enumerate() {
                out[[i, p]] = self.decode_symbol(chunk);
            }
        }
        Ok(DiscreteBatch::new(out))
    }

    /// Stable 64-bit digest of the codec definition.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(format!(
            "{};k={};n={};b={:016x}",
            self.kind,
            self.vocab_size,
            self.n_bits,
            self.scale.to_bits()
        ));
        if let Some(p) = &self.permutation {
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

const MAX_BIT_CODE_VOCAB: usize = 1 << 24;

fn check_permutation(table: &[u32], vocab_size: usize) -> Result<()> {
    if table.len() != vocab_size {
        return Err(Error::Invariant(format!(
            "permutation has {} entries, expected {vocab_size}",
            table.len()
        )));
    }
    let mut seen = vec![false; vocab_size];
    for &v in table {
        let slot = seen.get_mut(v as usize).ok_or_else(|| {
            Error::Invariant(format!("permutation entry {v} outside [0, {vocab_size})"))
        })?;
        if *slot {
            return Err(Error::Invariant(format!(
                "permutation is not a bijection: {v} appears twice"
            )));
        }
        *slot = true;
    }
    Ok(())
}

/// Parse a permutation table file: optional `#` header line, then one
/// integer per line.
pub fn parse_permutation(text: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('#')) {
            continue;
        }
        let v = line.parse::<u32>().map_err(|e| {
            Error::Format(format!("permutation line {}: `{line}`: {e}", lineno + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn load_permutation(path: &Path) -> Result<Vec<u32>> {
    parse_permutation(&std::fs::read_to_string(path)?)
}

pub fn write_permutation(table: &[u32], header: &str) -> String {
    let mut s = format!("# {header}\n");
    for v in table {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

/// The embedded 256-entry table for the permuted 8-bit code.
pub fn shipped_permutation() -> Vec<u32> {
    parse_permutation(SHIPPED_PERMUTATION).expect("embedded permutation table parses")
}

/// Pearson correlation, over all unordered symbol pairs, between `|i - j|`
/// and the Hamming distance of their codes. Degenerate inputs give 0.
pub fn hamming_correlation(spec: &CodecSpec) -> Result<f64> {
    if !spec.kind().is_bit_code() {
        return Err(Error::Unsupported(
            "Hamming correlation is constant for one-hot codes".into(),
        ));
    }
    let k = spec.vocab_size();
    if k > MAX_CORRELATION_VOCAB {
        return Err(Error::Range(format!(
            "vocab_size {k} too large to enumerate pairs (max {MAX_CORRELATION_VOCAB})"
        )));
    }
    let codes: Vec<u32> = (0..k as u32).map(|v| spec.code_of(v)).collect();
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..k {
        for j in (i + 1)..k {
            let x = (j - i) as f64;
            let y = f64::from(hamming(codes[i], codes[j]));
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
    }
    if n < 2.0 {
        return Ok(0.0);
    }
    let cov = sxy - sx * sy / n;
    let vx = sxx - sx * sx / n;
    let vy = syy - sy * sy / n;
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}
