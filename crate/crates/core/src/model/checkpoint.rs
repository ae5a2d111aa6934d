//! Bit-exact binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! - magic `TMEM`, version u32 = 1
//! - config block: 7 u32 (layers, d_model, heads, vocab_size, context,
//!   ff_hidden, reserved 0) + flags u32 (bit 0: example-tied block follows,
//!   as p_mem f32 + per_example_units u32)
//! - tensor count u32, then per tensor: name length u16, UTF-8 name, dtype
//!   code u8 (0 = 32-bit float), rank u8, dims as u32s, raw payload
//!
//! Tensor order is the parameter enumeration: embeddings, per-layer blocks
//! in depth order, final norm, head.

use super::config::{ExampleTiedConfig, ModelConfig};
use super::params::{skeleton, tensor_count};
use super::Model;
use crate::tensor::TensorSet;
use crate::{Error, Result};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TMEM";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = &model.config;
    for v in [
        cfg.layers as u32,
        cfg.d_model as u32,
        cfg.heads as u32,
        cfg.vocab_size as u32,
        cfg.context as u32,
        cfg.ff_hidden() as u32,
        0u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    let flags: u32 = u32::from(cfg.example_tied.is_some());
    w.write_all(&flags.to_le_bytes())?;
    if let Some(et) = cfg.example_tied {
        w.write_all(&(et.p_mem as f32).to_le_bytes())?;
        w.write_all(&(et.per_example_units as u32).to_le_bytes())?;
    }
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for t in &model.params.tensors {
        let name = t.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[DTYPE_F32, t.rank() as u8])?;
        for &dim in &t.shape {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Cursor<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            Error::Checkpoint(format!("truncated {what} at offset {at}: {e}"))
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.take(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut c = Cursor {
        inner: BufReader::new(file),
        offset: 0,
    };

    let mut magic = [0u8; 4];
    c.take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?} at offset 0, expected {MAGIC:?}"
        )));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} at offset 4"
        )));
    }
    let layers = c.u32("config.layers")? as usize;
    let d_model = c.u32("config.d_model")? as usize;
    let heads = c.u32("config.heads")? as usize;
    let vocab_size = c.u32("config.vocab_size")? as usize;
    let context = c.u32("config.context")? as usize;
    let ff_hidden = c.u32("config.ff_hidden")? as usize;
    let _reserved = c.u32("config.reserved")?;
    let flags = c.u32("config.flags")?;
    let example_tied = if flags & 1 != 0 {
        let p_mem = c.f32("config.p_mem")? as f64;
        let per_example_units = c.u32("config.per_example_units")? as usize;
        Some(ExampleTiedConfig {
            p_mem,
            per_example_units,
        })
    } else {
        None
    };
    let config = ModelConfig {
        layers,
        d_model,
        heads,
        vocab_size,
        context,
        example_tied,
    };
    config.validate().map_err(|e| {
        Error::Checkpoint(format!("checkpoint declares invalid config: {e}"))
    })?;
    if ff_hidden != config.ff_hidden() {
        return Err(Error::Checkpoint(format!(
            "ff_hidden {ff_hidden} does not match 4*d_model {}",
            config.ff_hidden()
        )));
    }

    let declared = c.u32("tensor count")? as usize;
    if declared != tensor_count(&config) {
        return Err(Error::Checkpoint(format!(
            "tensor count {declared} does not match config ({} expected)",
            tensor_count(&config)
        )));
    }

    let mut params: TensorSet<f32> = skeleton(&config);
    for expect in params.tensors.iter_mut() {
        let name_len = c.u16("tensor name length")? as usize;
        let mut name = vec![0u8; name_len];
        c.take(&mut name, "tensor name")?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("tensor name not UTF-8: {e}")))?;
        if name != expect.name {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} out of order, expected {:?}",
                expect.name
            )));
        }
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?}: unsupported dtype code {dtype}"
            )));
        }
        let rank = c.u8("rank")? as usize;
        if rank != expect.rank() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?}: rank {rank}, expected {}",
                expect.rank()
            )));
        }
        for (i, &want) in expect.shape.iter().enumerate() {
            let dim = c.u32("dim")? as usize;
            if dim != want {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?}: dim[{i}] = {dim}, expected {want}"
                )));
            }
        }
        let mut payload = vec![0u8; expect.len() * 4];
        c.take(&mut payload, &format!("tensor {name:?} payload"))?;
        for (v, chunk) in expect.data.iter_mut().zip(payload.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    // Anything after the declared tensors is corruption.
    let mut extra = [0u8; 1];
    if c.inner.read(&mut extra)? != 0 {
        return Err(Error::Checkpoint(format!(
            "trailing bytes after the last tensor at offset {}",
            c.offset
        )));
    }

    Ok(Model { config, params })
}
