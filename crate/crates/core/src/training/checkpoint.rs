//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "UWHDN"  magic, 5 bytes
//! u32      schema version
//! [u8; 32] architecture hash
//! u32      header length, then that many bytes of JSON header
//! u32      tensor count, then per tensor:
//!          u16 name length, name, u8 rank, u64 per dim, element data
//! [u8; 32] SHA-256 of every preceding byte
//! ```
//!
//! Tensors are the parameters (E_hf, E_h, D, D_adv, G_C, G_U, D_C, D_U),
//! then the generator optimizer moments (all m, then all v), then the
//! discriminator optimizer moments.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::state::TrainState;
use crate::error::{Error, Result};
use crate::nn::ArchConfig;

pub const MAGIC: &[u8; 5] = b"UWHDN";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    dtype: String,
    step: u64,
    epoch: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
    generator_steps: u64,
    discriminator_steps: u64,
}

fn dtype_name(d: DType) -> Result<&'static str> {
    match d {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::InvalidParam(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.dims() {
        out.extend((d as u64).to_le_bytes());
    }
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
        other => return Err(Error::InvalidParam(format!("unsupported checkpoint dtype {other:?}"))),
    }
    Ok(())
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let (seed, stream, word_pos) = (state.rng.get_seed(), state.rng.get_stream(), state.rng.get_word_pos());
    let header = Header {
        arch: *state.arch(),
        dtype: dtype_name(state.dtype())?.into(),
        step: state.step,
        epoch: state.epoch,
        rng_seed: seed,
        rng_stream: stream,
        rng_word_pos: word_pos.to_string(),
        generator_steps: state.generator_opt.steps_taken(),
        discriminator_steps: state.discriminator_opt.steps_taken(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::checkpoint(path, e.to_string()))?;

    let mut tensors: Vec<(String, Tensor)> =
        state.parameters().into_iter().map(|(n, v)| (n, v.as_tensor().clone())).collect();
    for (tag, opt) in [("gen_opt", &state.generator_opt), ("disc_opt", &state.discriminator_opt)] {
        let (m, v) = opt.moments();
        for (kind, moments) in [("m", m), ("v", v)] {
            for ((name, _), t) in opt.vars().iter().zip(moments) {
                tensors.push((format!("{tag}.{kind}.{name}"), t.clone()));
            }
        }
    }

    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(SCHEMA_VERSION.to_le_bytes());
    out.extend(state.arch().hash());
    out.extend((header.len() as u32).to_le_bytes());
    out.extend(&header);
    out.extend((tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        write_tensor(&mut out, name, t)?;
    }
    let digest: [u8; 32] = Sha256::digest(&out).into();
    out.extend(digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::checkpoint(self.path, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, dtype: DType, device: &Device) -> Result<(String, Tensor)> {
        let len = self.u16()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::checkpoint(self.path, "tensor name is not UTF-8"))?;
        let rank = self.u8()? as usize;
        let dims = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let t = match dtype {
            DType::F32 => {
                let raw = self.take(n * 4)?;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, device)?
            }
            _ => {
                let raw = self.take(n * 8)?;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::from_vec(v, dims, device)?
            }
        };
        Ok((name, t))
    }
}

/// Loads a checkpoint whose architecture must equal `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchConfig) -> Result<TrainState> {
    load(path, Some(expected))
}

/// Loads a checkpoint with whatever architecture it records.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    load(path, None)
}

fn load(path: &Path, expected: Option<&ArchConfig>) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::checkpoint(path, m);
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 4 + 32 + 32 {
        return Err(bad(format!("truncated: only {} bytes", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (truncated or corrupted file)".into()));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(bad(format!("schema version {version}, this build reads {SCHEMA_VERSION}")));
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(arch) = expected {
        if hash != arch.hash() {
            return Err(bad(format!("architecture hash mismatch: checkpoint was not written for {arch:?}")));
        }
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?).map_err(|e| bad(format!("header: {e}")))?;
    if hash != header.arch.hash() {
        return Err(bad("architecture hash does not match recorded architecture".into()));
    }
    let dtype = match header.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(bad(format!("unsupported dtype {other}"))),
    };
    let device = Device::Cpu;
    let count = r.u32()? as usize;
    let tensors = (0..count).map(|_| r.tensor(dtype, &device)).collect::<Result<Vec<_>>>()?;
    if r.pos != body.len() {
        return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
    }

    // Build everything first; nothing is returned unless all of it is consistent.
    let mut state = TrainState::from_seed(header.arch, 0, dtype, &device)?;
    let mut it = tensors.into_iter();
    let mut next = |want: &str, dims: &[usize]| -> Result<Tensor> {
        let (name, t) = it.next().ok_or_else(|| bad(format!("missing tensor {want}")))?;
        if name != want || t.dims() != dims {
            return Err(bad(format!("expected {want} {dims:?}, found {name} {:?}", t.dims())));
        }
        Ok(t)
    };
    let params = state.parameters();
    let loaded = params.iter().map(|(n, v)| next(n, v.dims())).collect::<Result<Vec<_>>>()?;
    let mut moments = Vec::new();
    for (tag, opt) in [("gen_opt", &state.generator_opt), ("disc_opt", &state.discriminator_opt)] {
        let mut mv = Vec::new();
        for kind in ["m", "v"] {
            let ts = opt
                .vars()
                .iter()
                .map(|(n, v)| next(&format!("{tag}.{kind}.{n}"), v.dims()))
                .collect::<Result<Vec<_>>>()?;
            mv.push(ts);
        }
        moments.push(mv);
    }
    if it.next().is_some() {
        return Err(bad("unexpected extra tensors".into()));
    }
    let word_pos: u128 = header.rng_word_pos.parse().map_err(|_| bad("bad rng position".into()))?;

    for ((_, var), t) in params.iter().zip(&loaded) {
        var.set(t)?;
    }
    let mut moments = moments.into_iter();
    let mut gen = moments.next().unwrap().into_iter();
    state
        .generator_opt
        .restore(header.generator_steps, gen.next().unwrap(), gen.next().unwrap())?;
    let mut disc = moments.next().unwrap().into_iter();
    state
        .discriminator_opt
        .restore(header.discriminator_steps, disc.next().unwrap(), disc.next().unwrap())?;
    let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    state.step = header.step;
    state.epoch = header.epoch;
    Ok(state)
}
