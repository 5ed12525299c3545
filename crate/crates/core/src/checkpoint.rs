//! Versioned binary checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "TVNETCKP" | version u32
//! t, c, s, d, K, L, dilation×3 : u32 | ablation flags u8 (trend, variation, men, fodam)
//! has_norm u8 | [c means, c stds, s means, s stds : f64]   (when has_norm = 1)
//! tensor count u32 | per tensor: name len u32, name, ndim u32, dims u32…, values f64…
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{AblationConfig, ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"TVNETCKP";
const VERSION: u32 = 1;

/// Trained parameters plus the normalization they were trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub norm: Option<NormStats>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.params.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [cfg.t_max, cfg.dynamic, cfg.statics, cfg.classes, cfg.order, cfg.kernel_width] {
            put_u32(&mut out, v);
        }
        for b in cfg.dilations {
            put_u32(&mut out, b);
        }
        let ab = cfg.ablation;
        let flags = [ab.use_trend, ab.use_variation, ab.use_men2d, ab.use_fodam]
            .iter()
            .enumerate()
            .fold(0u8, |acc, (i, on)| acc | (u8::from(*on) << i));
        out.push(flags);
        match &self.norm {
            Some(n) => {
                out.push(1);
                put_f64s(&mut out, &n.dynamic_mean);
                put_f64s(&mut out, &n.dynamic_std);
                put_f64s(&mut out, &n.static_mean);
                put_f64s(&mut out, &n.static_std);
            }
            None => out.push(0),
        }
        let named = self.params.named();
        put_u32(&mut out, named.len());
        for (name, t) in named {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for d in t.shape() {
                put_u32(&mut out, *d);
            }
            put_f64s(&mut out, t.data());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in dims.iter_mut() {
            *d = r.u32()? as usize;
        }
        let mut dilations = [0usize; 3];
        for b in dilations.iter_mut() {
            *b = r.u32()? as usize;
        }
        let flags = r.u8()?;
        if flags >> 4 != 0 {
            return Err(Error::Checkpoint(format!("unknown flag bits {flags:#x}")));
        }
        let bit = |i: u8| flags & (1 << i) != 0;
        let config = ModelConfig {
            t_max: dims[0],
            dynamic: dims[1],
            statics: dims[2],
            classes: dims[3],
            order: dims[4],
            kernel_width: dims[5],
            dilations,
            ablation: AblationConfig {
                use_trend: bit(0),
                use_variation: bit(1),
                use_men2d: bit(2),
                use_fodam: bit(3),
            },
        };
        let norm = match r.u8()? {
            0 => None,
            1 => Some(NormStats {
                dynamic_mean: r.f64s(config.dynamic)?,
                dynamic_std: r.f64s(config.dynamic)?,
                static_mean: r.f64s(config.statics)?,
                static_std: r.f64s(config.statics)?,
            }),
            other => return Err(Error::Checkpoint(format!("bad normalization marker {other}"))),
        };
        let mut params = ModelParams::zeros(&config)
            .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
        let expected = params.names();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        for (slot, name) in params.tensors_mut().into_iter().zip(&expected) {
            let len = r.u32()? as usize;
            let stored = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            if &stored != name {
                return Err(Error::Checkpoint(format!("expected tensor {name}, found {stored}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, config implies {:?}",
                    slot.shape()
                )));
            }
            let values = r.f64s(slot.len())?;
            *slot = Tensor::new(shape, values)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite {
                what: "in checkpoint parameters".into(),
            });
        }
        Ok(Self { params, norm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("truncated".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
