//! Binary checkpoint format.
//!
//! ```text
//! magic      "DCNN1"                       5 bytes (format version is the last byte)
//! descriptor u32 input_size, u32 input_channels,
//!            u32 block_count, u32 channels[block_count],
//!            u32 dense_count, u32 widths[dense_count]
//! tensors    per block: conv weight, conv bias, gamma, beta, running mean, running var
//!            per dense layer: weight, bias
//!            each as u32 element count followed by that many f32 values
//! ```
//!
//! All integers and reals are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{DisCnn, CONV_CHANNELS, DENSE_WIDTHS, INPUT_CHANNELS, INPUT_SIZE};
use crate::ops::RunningStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DCNN";
pub const VERSION: u8 = b'1';

fn descriptor() -> Vec<u32> {
    let mut d = vec![INPUT_SIZE as u32, INPUT_CHANNELS as u32, CONV_CHANNELS.len() as u32];
    d.extend(CONV_CHANNELS.iter().map(|&c| c as u32));
    d.push(DENSE_WIDTHS.len() as u32);
    d.extend(DENSE_WIDTHS.iter().map(|&w| w as u32));
    d
}

/// Serializes a model to checkpoint bytes.
pub fn encode(model: &DisCnn<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * model.parameter_count() + 1024);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in descriptor() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |t: &Tensor<f32>| {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for b in &model.blocks {
        let identity = RunningStats::identity(b.gamma.len());
        let stats = b.running.as_ref().unwrap_or(&identity);
        for t in [&b.weight, &b.bias, &b.gamma, &b.beta, &stats.mean, &stats.var] {
            put(t);
        }
    }
    for d in &model.dense {
        put(&d.weight);
        put(&d.bias);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor_into(&mut self, t: &mut Tensor<f32>) -> Result<()> {
        let n = self.u32()? as usize;
        if n != t.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "tensor of {n} elements where {} expected",
                t.len()
            )));
        }
        let bytes = self.take(4 * n)?;
        for (dst, src) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

/// Parses checkpoint bytes.
pub fn decode(bytes: &[u8]) -> Result<DisCnn<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let mut r = Reader {
        buf: &bytes[MAGIC.len()..],
    };
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version as char));
    }
    let expected = descriptor();
    let mut found = Vec::with_capacity(expected.len());
    for _ in 0..3 {
        found.push(r.u32()?);
    }
    for _ in 0..found[2] {
        found.push(r.u32()?);
        if found.len() > expected.len() {
            break;
        }
    }
    if found.len() <= expected.len() {
        let dense = r.u32()?;
        found.push(dense);
        for _ in 0..dense {
            found.push(r.u32()?);
            if found.len() > expected.len() {
                break;
            }
        }
    }
    if found != expected {
        return Err(Error::ArchitectureMismatch(format!(
            "descriptor {found:?}, expected {expected:?}"
        )));
    }

    let mut model = DisCnn::<f32>::zeroed();
    for b in &mut model.blocks {
        let mut stats = RunningStats::identity(b.gamma.len());
        for t in [&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta, &mut stats.mean, &mut stats.var] {
            r.tensor_into(t)?;
        }
        b.running = Some(stats);
    }
    for d in &mut model.dense {
        r.tensor_into(&mut d.weight)?;
        r.tensor_into(&mut d.bias)?;
    }
    if !r.buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.buf.len())));
    }
    Ok(model)
}

pub fn save_model(model: &DisCnn<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DisCnn<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
