//! Binary checkpoint format: magic "MKHN", version, config snapshot,
//! named parameter tensors (row-major 64-bit little-endian), normalization
//! stats and the run seed. Save/load round-trips bitwise.

use std::io::{Read, Write};
use std::path::Path;

use crate::array::Array;
use crate::autodiff::ParamMap;
use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"MKHN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub config_text: String,
    pub n_nodes: usize,
    pub params: ParamMap<F>,
    pub stats: NormalizationStats<F>,
    pub seed: u64,
}

fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 string in checkpoint".into()))
    }
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_u32(&mut out, VERSION);
        write_str(&mut out, &self.config_text);
        write_u64(&mut out, self.n_nodes as u64);

        write_u64(&mut out, self.params.len() as u64);
        for (name, tensor) in &self.params {
            write_str(&mut out, name);
            write_u32(&mut out, tensor.rank() as u32);
            for &e in tensor.shape() {
                write_u64(&mut out, e as u64);
            }
            for &v in tensor.data() {
                write_f64(&mut out, v.to_f64().unwrap());
            }
        }

        write_u64(&mut out, self.stats.mean.len() as u64);
        for &v in &self.stats.mean {
            write_f64(&mut out, v.to_f64().unwrap());
        }
        for &v in &self.stats.std {
            write_f64(&mut out, v.to_f64().unwrap());
        }
        write_u64(&mut out, self.seed);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                magic,
                std::str::from_utf8(MAGIC).unwrap()
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let config_text = r.string()?;
        let n_nodes = r.u64()? as usize;

        let n_params = r.u64()? as usize;
        let mut params = ParamMap::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(
                    F::from_f64(r.f64()?)
                        .ok_or_else(|| Error::Format("value outside scalar range".into()))?,
                );
            }
            params.insert(name, Array::new(shape, data)?);
        }

        let n_vars = r.u64()? as usize;
        let mut mean = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            mean.push(F::from_f64(r.f64()?).unwrap());
        }
        let mut std = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            std.push(F::from_f64(r.f64()?).unwrap());
        }
        let seed = r.u64()?;
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint payload".into()));
        }
        Ok(Checkpoint {
            config_text,
            n_nodes,
            params,
            stats: NormalizationStats { mean, std },
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
