//! `CNPK1` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CNPK1"                       5-byte magic
//! flags        u8               bit 0 latent, bit 1 classifier
//! repr_dim     u32
//! x_dim y_dim hidden encoder_layers decoder_layers latent_layers z_dim classes   u32 each
//! activation   u8               0 relu, 1 tanh
//! aggregator   u8               0 mean, 1 sum
//! sigma_floor  f64
//! tensor_count u32
//! per tensor:  rank u32, then rank × u32 dims
//! weights:     f64 blobs, tensors in declaration order
//! ```

use std::path::Path;

use super::config::{Activation, Aggregator, ModelConfig, Variant};
use super::params::{layout, CnpParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 5] = b"CNPK1";
const FLAG_LATENT: u8 = 1;
const FLAG_CLASSIFIER: u8 = 2;

pub fn encode(params: &CnpParams) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(64 + params.count() * 8);
    out.extend_from_slice(MAGIC);
    let flags = match c.variant {
        Variant::Deterministic => 0,
        Variant::Latent { .. } => FLAG_LATENT,
        Variant::Classifier { .. } => FLAG_CLASSIFIER,
    };
    out.push(flags);
    let u32s = [
        c.repr_dim,
        c.x_dim,
        c.y_dim,
        c.hidden,
        c.encoder_layers,
        c.decoder_layers,
        c.latent_layers,
        c.z_dim().unwrap_or(0),
        c.classes().unwrap_or(0),
    ];
    for v in u32s {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match c.activation {
        Activation::Relu => 0,
        Activation::Tanh => 1,
    });
    out.push(match c.aggregator {
        Aggregator::Mean => 0,
        Aggregator::Sum => 1,
    });
    out.extend_from_slice(&c.sigma_floor.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in &params.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::Format {
                format: "checkpoint",
                offset: self.offset,
                message: format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.offset),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bad(&self, message: impl Into<String>) -> Error {
        Error::Format {
            format: "checkpoint",
            offset: self.offset,
            message: message.into(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<CnpParams> {
    let mut r = Reader { bytes, offset: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format {
            format: "checkpoint",
            offset: 0,
            message: "bad magic, expected CNPK1".into(),
        });
    }
    let flags = r.u8()?;
    let repr_dim = r.u32()?;
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()?;
    }
    let [x_dim, y_dim, hidden, encoder_layers, decoder_layers, latent_layers, z_dim, classes] = dims;
    let activation = match r.u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        other => return Err(r.bad(format!("unknown activation code {other}"))),
    };
    let aggregator = match r.u8()? {
        0 => Aggregator::Mean,
        1 => Aggregator::Sum,
        other => return Err(r.bad(format!("unknown aggregator code {other}"))),
    };
    let sigma_floor = r.f64()?;
    let variant = match flags {
        0 => Variant::Deterministic,
        FLAG_LATENT => Variant::Latent { z_dim },
        FLAG_CLASSIFIER => Variant::Classifier { classes },
        other => return Err(r.bad(format!("unknown variant flags {other:#x}"))),
    };
    let config = ModelConfig {
        x_dim,
        y_dim,
        repr_dim,
        hidden,
        encoder_layers,
        decoder_layers,
        latent_layers,
        activation,
        aggregator,
        variant,
        sigma_floor,
    };
    config.validate().map_err(|e| r.bad(e.to_string()))?;
    let (_, expected) = layout(&config);
    let count = r.u32()?;
    if count != expected.len() {
        return Err(r.bad(format!("{count} tensors, layout expects {}", expected.len())));
    }
    let mut shapes = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(r.bad(format!("tensor {name} has shape {dims:?}, expected {shape:?}")));
        }
        shapes.push(dims);
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in shapes {
        let n = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.offset != bytes.len() {
        return Err(r.bad(format!("{} trailing bytes", bytes.len() - r.offset)));
    }
    CnpParams::from_tensors(config, tensors)
}

pub fn save(params: &CnpParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<CnpParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
