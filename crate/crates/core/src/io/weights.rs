//! Weight-file serialization for denoiser and unrolled-network parameters.
//!
//! Layout: the magic bytes `MHDR1\n`, a little-endian u64 giving the JSON
//! header length, the header itself (sorted keys), then every tensor's
//! samples as little-endian f32 concatenated in directory order. In-memory
//! math runs in f64 but files store f32: a save/load round trip reproduces
//! weights exactly at 32-bit precision, and that narrowing is the stored
//! contract, not an accident.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoise::{ConvArch, DenoiserWeights, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::solver::UnrolledWeights;

pub const MAGIC: &[u8; 6] = b"MHDR1\n";

/// Where a set of weights came from, for reproducibility audits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub phase: String,
    pub steps: usize,
}

/// Either kind of trainable weights the file format carries.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightPayload {
    Denoiser(DenoiserWeights),
    Unrolled(UnrolledWeights),
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    arch: ConvArch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_layers: Option<usize>,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

fn tensor_len(shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::MalformedHeader("tensor shape overflows".into()))
}

fn encode(payload: &WeightPayload, provenance: Option<Provenance>) -> Result<Vec<u8>> {
    let (kind, arch, t_layers, tensors) = match payload {
        WeightPayload::Denoiser(w) => {
            w.validate()?;
            ("denoiser", w.arch, None, &w.tensors)
        }
        WeightPayload::Unrolled(w) => {
            w.validate()?;
            ("unrolled", w.arch, Some(w.t_layers), &w.params.tensors)
        }
    };
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for t in tensors {
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset });
        offset += 4 * t.len();
    }
    let header = Header {
        kind: kind.into(),
        arch,
        t_layers,
        tensors: entries,
        provenance,
    };
    // Round-tripping through Value sorts the object keys.
    let json = serde_json::to_string(&serde_json::to_value(&header)?)?;

    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for t in tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(WeightPayload, Option<Provenance>)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let hstart = MAGIC.len() + 8;
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|l| hstart.checked_add(l))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::MalformedHeader("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[hstart..hend])?;
    let payload = &bytes[hend..];

    // The directory must be contiguous and account for the whole payload.
    let mut expect_off = 0usize;
    for e in &header.tensors {
        if e.offset != expect_off {
            return Err(Error::DirectoryMismatch(format!(
                "tensor {} at offset {}, expected {}",
                e.name, e.offset, expect_off
            )));
        }
        let bytes_len = tensor_len(&e.shape)?
            .checked_mul(4)
            .ok_or_else(|| Error::MalformedHeader("tensor shape overflows".into()))?;
        expect_off = expect_off
            .checked_add(bytes_len)
            .ok_or_else(|| Error::MalformedHeader("tensor directory overflows".into()))?;
    }
    if payload.len() != expect_off {
        return Err(Error::TruncatedPayload { expected: expect_off, got: payload.len() });
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut pos = 0usize;
    for e in header.tensors {
        let n = tensor_len(&e.shape)?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(payload[pos..pos + 4].try_into().unwrap()) as f64);
            pos += 4;
        }
        tensors.push(Tensor { name: e.name, shape: e.shape, data });
    }

    let payload = match header.kind.as_str() {
        "denoiser" => {
            let w = DenoiserWeights { arch: header.arch, tensors };
            w.validate()?;
            WeightPayload::Denoiser(w)
        }
        "unrolled" => {
            let t = header
                .t_layers
                .ok_or_else(|| Error::MalformedHeader("unrolled weights need t_layers".into()))?;
            WeightPayload::Unrolled(UnrolledWeights::from_tensors(header.arch, t, tensors)?)
        }
        other => {
            return Err(Error::MalformedHeader(format!("unknown weight kind {other:?}")))
        }
    };
    Ok((payload, header.provenance))
}

/// Saves weights (and optional provenance) to a weight file.
pub fn save_weights(
    path: &Path,
    payload: &WeightPayload,
    provenance: Option<Provenance>,
) -> Result<()> {
    write_atomic(path, &encode(payload, provenance)?)
}

/// Loads a weight file, validating the header before touching the payload.
pub fn load_weights(path: &Path) -> Result<(WeightPayload, Option<Provenance>)> {
    decode(&fs::read(path)?)
}
