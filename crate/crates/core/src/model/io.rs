//! Binary model file.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "SHED"                 4 bytes magic
//! version                u32 (= 1)
//! payload_len            u64
//! payload                payload_len bytes
//! crc32                  u32, CRC-32 (IEEE) of payload
//! ```
//!
//! The payload holds the config block followed by tensor records:
//!
//! ```text
//! embed_dim, lstm_hidden, lstm_layers, attn_hidden, num_classes, max_seq_len   u32 each
//! dropout                                                                      f64
//! fc_count u32, fc_dims u32 * fc_count
//! tensor_count u32
//! per tensor: name_len u16, name (UTF-8), rank u8, dims u32 * rank, values f64 * prod(dims)
//! ```
//!
//! Learned parameters come first in model order, then the batch-norm running
//! statistics as `fc{i}.bn.running_mean` / `fc{i}.bn.running_var`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ShedModel};
use crate::error::{ModelFileError, Result};
use crate::nn::RngStream;

pub const MAGIC: &[u8; 4] = b"SHED";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;

fn running_names(i: usize) -> (String, String) {
    (format!("fc{i}.bn.running_mean"), format!("fc{i}.bn.running_var"))
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dims.len() as u8);
    for &d in dims {
        put_u32(buf, d);
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_payload(model: &ShedModel) -> Vec<u8> {
    let cfg = model.config();
    let mut buf = Vec::new();
    for v in [
        cfg.embed_dim,
        cfg.lstm_hidden,
        cfg.lstm_layers,
        cfg.attn_hidden,
        cfg.num_classes,
        cfg.max_seq_len,
    ] {
        put_u32(&mut buf, v);
    }
    buf.extend_from_slice(&cfg.dropout.to_le_bytes());
    put_u32(&mut buf, cfg.fc_dims.len());
    for &d in &cfg.fc_dims {
        put_u32(&mut buf, d);
    }
    let states = model.batch_norm_states();
    put_u32(&mut buf, model.params().len() + 2 * states.len());
    for t in model.params().iter() {
        put_tensor(&mut buf, t.name(), t.dims(), &t.data);
    }
    for (i, s) in states.iter().enumerate() {
        let (mean, var) = running_names(i);
        put_tensor(&mut buf, &mean, &[s.running_mean.len()], &s.running_mean);
        put_tensor(&mut buf, &var, &[s.running_var.len()], &s.running_var);
    }
    buf
}

/// Serializes the model (parameters, running statistics, config).
pub fn write_model<W: Write>(model: &ShedModel, mut w: W) -> Result<()> {
    let payload = encode_payload(model);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn save_model(model: &ShedModel, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelFileError::Malformed("payload ends inside a field".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelFileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Reads a model written by [`write_model`].
pub fn read_model<R: Read>(mut r: R) -> Result<ShedModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ShedModel> {
    read_model(BufReader::new(File::open(path)?))
}

fn decode(bytes: &[u8]) -> Result<ShedModel> {
    if bytes.len() < MAGIC.len() {
        return Err(ModelFileError::Truncated.into());
    }
    if &bytes[..4] != MAGIC {
        return Err(ModelFileError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelFileError::Truncated.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ModelFileError::UnsupportedVersion(version).into());
    }
    let payload_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (HEADER_LEN as u64)
        .checked_add(payload_len)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| ModelFileError::Malformed("payload length overflows".into()))?;
    if (bytes.len() as u64) < expected {
        return Err(ModelFileError::Truncated.into());
    }
    if bytes.len() as u64 > expected {
        return Err(ModelFileError::Malformed("trailing bytes after checksum".into()).into());
    }
    let end = HEADER_LEN + payload_len as usize;
    let payload = &bytes[HEADER_LEN..end];
    let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(ModelFileError::ChecksumMismatch { stored, computed }.into());
    }
    decode_payload(payload)
}

fn decode_payload(payload: &[u8]) -> Result<ShedModel> {
    let malformed = |m: String| ModelFileError::Malformed(m);
    let mut c = Cursor { buf: payload, pos: 0 };
    let embed_dim = c.u32()?;
    let lstm_hidden = c.u32()?;
    let lstm_layers = c.u32()?;
    let attn_hidden = c.u32()?;
    let num_classes = c.u32()?;
    let max_seq_len = c.u32()?;
    let dropout = c.f64()?;
    let fc_count = c.u32()?;
    let fc_dims = (0..fc_count).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
    let config = ModelConfig {
        embed_dim,
        lstm_hidden,
        lstm_layers,
        attn_hidden,
        fc_dims,
        num_classes,
        dropout,
        max_seq_len,
    };
    config
        .validate()
        .map_err(|e| malformed(format!("invalid config block: {e}")))?;
    let mut model = ShedModel::new(config, &RngStream::new(0))?;

    let count = c.u32()?;
    let expected = model.params().len() + 2 * model.batch_norm_states().len();
    if count != expected {
        return Err(malformed(format!("expected {expected} tensors, found {count}")).into());
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u8()? as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        if !seen.insert(name.clone()) {
            return Err(malformed(format!("duplicate tensor `{name}`")).into());
        }
        assign(&mut model, &name, &dims, values)?;
    }
    if c.pos != payload.len() {
        return Err(malformed("unread bytes at end of payload".into()).into());
    }
    Ok(model)
}

fn assign(model: &mut ShedModel, name: &str, dims: &[usize], values: Vec<f64>) -> Result<(), ModelFileError> {
    if let Some(t) = model.params_mut().by_name_mut(name) {
        if t.dims() != dims {
            return Err(ModelFileError::Malformed(format!(
                "tensor `{name}` has dims {dims:?}, expected {:?}",
                t.dims()
            )));
        }
        t.data = values;
        return Ok(());
    }
    for (i, state) in model.batch_norm_states_mut().iter_mut().enumerate() {
        let (mean, var) = running_names(i);
        let slot = if name == mean {
            &mut state.running_mean
        } else if name == var {
            &mut state.running_var
        } else {
            continue;
        };
        if dims != [slot.len()] {
            return Err(ModelFileError::Malformed(format!("running statistic `{name}` has dims {dims:?}")));
        }
        *slot = values;
        return Ok(());
    }
    Err(ModelFileError::Malformed(format!("unknown tensor `{name}`")))
}
