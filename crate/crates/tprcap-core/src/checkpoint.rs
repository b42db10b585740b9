//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "TPRC" | version u32 | six flag bytes | dims 6×u32
//! | tensor count u32 | entries sorted by name | crc32 u32
//! ```
//!
//! Each entry is `name_len u32, name bytes, rank u32, extents u32…,
//! values f64…`. The flag bytes are the three decomposition switches,
//! the g-gate activation, the frozen-embedding marker, and whether the
//! model has been cross-entropy pre-trained. The CRC covers every byte
//! before the trailer and is verified before any field is parsed.

use std::fs;
use std::path::Path;

use crate::captioner::{Model, ModelDims};
use crate::cell::{GActivation, VariantConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TPRC";
pub const VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

/// Serializes a model to the checkpoint byte format.
pub fn write_checkpoint(model: &Model, xe_trained: bool) -> Vec<u8> {
    let mut named: Vec<(String, &Tensor)> = model.named_tensors();
    named.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    push_u32(&mut out, VERSION);
    out.push(model.config.decompose_embedding as u8);
    out.push(model.config.decompose_hidden as u8);
    out.push(model.config.decompose_tpr as u8);
    out.push(match model.g_activation {
        GActivation::Sigmoid => 0,
        GActivation::Tanh => 1,
    });
    out.push(model.freeze_embedding as u8);
    out.push(xe_trained as u8);
    let ModelDims { d, m, k_v, k_s, vocab } = model.dims;
    for dim in [d, m, k_v, k_s, vocab, d] {
        push_u32(&mut out, dim as u32);
    }
    push_u32(&mut out, named.len() as u32);
    for (name, tensor) in named {
        push_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, tensor.rank() as u32);
        for &e in tensor.shape() {
            push_u32(&mut out, e as u32);
        }
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    push_u32(&mut out, crc);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(Error::Corrupt(format!("checkpoint truncated reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn byte_flag(&mut self, what: &str) -> Result<bool> {
        match self.take(1, what)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Corrupt(format!("flag {what} has value {other}"))),
        }
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Parses checkpoint bytes back into a model and its `xe_trained` flag.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(Model, bool)> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Corrupt("checkpoint shorter than its trailer".into()));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([trailer[0], trailer[1], trailer[2], trailer[3]]);
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Corrupt(format!(
            "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }

    let mut cur = Cursor { bytes: payload, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Corrupt("bad magic, not a TPRC checkpoint".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, supported: VERSION });
    }
    let config = VariantConfig {
        decompose_embedding: cur.byte_flag("decompose_embedding")?,
        decompose_hidden: cur.byte_flag("decompose_hidden")?,
        decompose_tpr: cur.byte_flag("decompose_tpr")?,
    };
    let g_activation = match cur.take(1, "g_activation")?[0] {
        0 => GActivation::Sigmoid,
        1 => GActivation::Tanh,
        other => return Err(Error::Corrupt(format!("unknown g activation code {other}"))),
    };
    let freeze_embedding = cur.byte_flag("freeze_embedding")?;
    let xe_trained = cur.byte_flag("xe_trained")?;

    let mut dims = [0usize; 6];
    for (i, slot) in dims.iter_mut().enumerate() {
        *slot = cur.u32(&format!("dims[{i}]"))? as usize;
    }
    let [d, m, k_v, k_s, vocab, d_emb] = dims;
    if d_emb != d {
        return Err(Error::Corrupt(format!(
            "embedding dimension {d_emb} disagrees with role dimension {d}"
        )));
    }
    let dims = ModelDims { d, m, k_v, k_s, vocab };

    let count = cur.u32("tensor count")? as usize;
    let mut table: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Corrupt(format!("tensor #{i} name is not UTF-8")))?
            .to_owned();
        if let Some((prev, _)) = table.last() {
            if *prev >= name {
                return Err(Error::Corrupt(format!(
                    "tensor table not sorted: {prev:?} precedes {name:?}"
                )));
            }
        }
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("extent of {name}"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 8, &format!("values of {name}"))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Corrupt(format!("non-finite value in tensor {name}")));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Corrupt(format!("tensor {name}: {e}")))?;
        table.push((name, tensor));
    }
    if !cur.done() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after the tensor table",
            payload.len() - cur.pos
        )));
    }

    let mut model = Model::init(&dims, config, 0)?;
    model.g_activation = g_activation;
    model.freeze_embedding = freeze_embedding;
    let mut iter = table.into_iter().peekable();
    let mut named = model.named_tensors_mut();
    named.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, slot) in named {
        match iter.peek() {
            Some((got, _)) if *got == name => {
                let (_, tensor) = iter.next().expect("peeked");
                if tensor.shape() != slot.shape() {
                    return Err(Error::Shape {
                        op: "checkpoint",
                        detail: format!(
                            "tensor {name} has shape {:?}, want {:?}",
                            tensor.shape(),
                            slot.shape()
                        ),
                    });
                }
                *slot = tensor;
            }
            Some((got, _)) => {
                let which = if *got < name { got.clone() } else { name };
                return Err(Error::Corrupt(format!("unexpected or missing tensor {which}")));
            }
            None => return Err(Error::Corrupt(format!("missing tensor {name}"))),
        }
    }
    if let Some((extra, _)) = iter.next() {
        return Err(Error::Corrupt(format!("unexpected tensor {extra}")));
    }
    model.validate()?;
    Ok((model, xe_trained))
}

pub fn save_checkpoint<P: AsRef<Path>>(model: &Model, xe_trained: bool, path: P) -> Result<()> {
    fs::write(path, write_checkpoint(model, xe_trained))?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(Model, bool)> {
    let bytes = fs::read(path)?;
    read_checkpoint(&bytes)
}
