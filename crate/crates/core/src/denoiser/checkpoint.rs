//! Binary checkpoint format. The byte layout is documented in
//! `docs/checkpoint-format.md`; all integers and floats are little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

use super::mlp::{Dense, HeadKind, MlpConfig, MlpDenoiser, MlpParams, OutputHead};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BITDIFF\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_EMA: u32 = 1;

/// A network plus optional EMA shadow weights, tagged with the codec it was
/// trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpDenoiser,
    pub ema: Option<MlpParams>,
    pub codec_fingerprint: u64,
}

impl Checkpoint {
    /// Network carrying the EMA weights when present, the live ones otherwise.
    pub fn sampling_model(&self) -> Result<MlpDenoiser> {
        match &self.ema {
            Some(p) => self.model.with_params(p.clone()),
            None => Ok(self.model.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, self)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        load_checkpoint(&mut &bytes[..])
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_len(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    put_u32(w, v)
}

fn put_array(w: &mut impl Write, name: &str, data: &[f64]) -> Result<()> {
    put_len(w, name.len())?;
    w.write_all(name.as_bytes())?;
    put_u64(w, data.len() as u64)?;
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    let cfg = model.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    put_len(w, cfg.features)?;
    put_len(w, cfg.time_freqs)?;
    let widths = model.params().widths();
    put_len(w, widths.len())?;
    for &width in &widths {
        put_len(w, width)?;
    }
    let head = model.head();
    put_u32(w, head.kind().code())?;
    let (vocab, bits, scale) = match head {
        OutputHead::Linear => (0, 0, 0.0),
        OutputHead::Sigmoid { scale } => (0, 0, *scale),
        OutputHead::SoftmaxFactorization { codebook } => (codebook.nrows(), codebook.ncols(), 0.0),
    };
    put_len(w, vocab)?;
    put_len(w, bits)?;
    put_u64(w, f64::to_bits(scale))?;
    put_u64(w, ckpt.codec_fingerprint)?;
    put_u32(w, if ckpt.ema.is_some() { FLAG_EMA } else { 0 })?;

    let mut arrays: Vec<(String, &[f64])> = Vec::new();
    let names = model.params().names();
    for (n, a) in names.iter().zip(model.params().arrays()) {
        arrays.push((format!("live.{n}"), a));
    }
    if let OutputHead::SoftmaxFactorization { codebook } = head {
        arrays.push(("head.codebook".into(), codebook.as_slice().expect("standard layout")));
    }
    if let Some(ema) = &ckpt.ema {
        if !ema.same_shape(model.params()) {
            return Err(Error::shape("EMA weights do not mirror live weights"));
        }
        for (n, a) in names.iter().zip(ema.arrays()) {
            arrays.push((format!("ema.{n}"), a));
        }
    }
    put_len(w, arrays.len())?;
    for (name, data) in arrays {
        put_array(w, &name, data)?;
    }
    Ok(())
}

struct Reader<'a, R: Read> {
    inner: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn array(&mut self, expected_name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let name_len = self.usize()?;
        if name_len > 256 {
            return Err(Error::Format(format!("array name of {name_len} bytes")));
        }
        let mut name = vec![0u8; name_len];
        self.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        if name != expected_name {
            return Err(Error::Format(format!("expected array `{expected_name}`, found `{name}`")));
        }
        let len = self.u64()? as usize;
        if len != expected_len {
            return Err(Error::Format(format!(
                "array `{name}` has {len} values, expected {expected_len}"
            )));
        }
        (0..len)
            .map(|_| Ok(f64::from(f32::from_le_bytes(self.bytes()?))))
            .collect()
    }
}

fn read_params<R: Read>(r: &mut Reader<'_, R>, prefix: &str, widths: &[usize]) -> Result<MlpParams> {
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (i, w) in widths.windows(2).enumerate() {
        let weight = r.array(&format!("{prefix}.layer{i}.weight"), w[0] * w[1])?;
        let bias = r.array(&format!("{prefix}.layer{i}.bias"), w[1])?;
        layers.push(Dense {
            weight: Array2::from_shape_vec((w[1], w[0]), weight).expect("length checked"),
            bias: Array1::from(bias),
        });
    }
    Ok(MlpParams { layers })
}

pub fn load_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let features = r.usize()?;
    let time_freqs = r.usize()?;
    let n_widths = r.usize()?;
    if !(2..=64).contains(&n_widths) {
        return Err(Error::Format(format!("implausible layer count {n_widths}")));
    }
    let widths = (0..n_widths).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let head_kind = HeadKind::from_code(r.u32()?)
        .ok_or_else(|| Error::Format("unknown head kind".into()))?;
    let vocab = r.usize()?;
    let bits = r.usize()?;
    let scale = f64::from_bits(r.u64()?);
    let codec_fingerprint = r.u64()?;
    let flags = r.u32()?;
    let n_arrays = r.usize()?;

    let layers = n_widths - 1;
    let expected_arrays = 2 * layers
        + usize::from(head_kind == HeadKind::SoftmaxFactorization)
        + if flags & FLAG_EMA != 0 { 2 * layers } else { 0 };
    if n_arrays != expected_arrays {
        return Err(Error::Format(format!(
            "{n_arrays} arrays, expected {expected_arrays}"
        )));
    }
    let live = read_params(&mut r, "live", &widths)?;
    let head = match head_kind {
        HeadKind::Linear => OutputHead::Linear,
        HeadKind::Sigmoid => OutputHead::Sigmoid { scale },
        HeadKind::SoftmaxFactorization => {
            let cb = r.array("head.codebook", vocab * bits)?;
            OutputHead::SoftmaxFactorization {
                codebook: Array2::from_shape_vec((vocab, bits), cb).expect("length checked"),
            }
        }
    };
    let ema = if flags & FLAG_EMA != 0 {
        Some(read_params(&mut r, "ema", &widths)?)
    } else {
        None
    };
    let hidden = widths[1..widths.len() - 1].to_vec();
    let config = MlpConfig {
        features,
        hidden,
        time_freqs,
    };
    let model = MlpDenoiser::from_parts(config, head, live)
        .map_err(|e| Error::Format(format!("inconsistent checkpoint: {e}")))?;
    Ok(Checkpoint {
        model,
        ema,
        codec_fingerprint,
    })
}
