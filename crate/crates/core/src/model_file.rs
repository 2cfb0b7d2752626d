//! Versioned binary container for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "TXCHART\0"
//! version    u32
//! kind       u32 length + UTF-8
//! config     u32 length + UTF-8 JSON
//! count      u32
//! count × { name: u32 length + UTF-8, ndim: u32, dims: ndim × u64, data: Π dims × f64 }
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Parameters;

pub const MAGIC: &[u8; 8] = b"TXCHART\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl ModelFile {
    pub fn new<C: Serialize>(kind: &str, config: &C) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)?,
            tensors: Vec::new(),
        })
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn config<C: DeserializeOwned>(&self) -> Result<C> {
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::ModelFormat(format!(
                "expected a {kind} model, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::ModelFormat(format!("missing tensor {name}")))
    }

    pub fn array1(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(Error::ModelFormat(format!("{name}: expected rank 1")));
        }
        Ok(Array1::from(t.data.clone()))
    }

    pub fn array2(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return Err(Error::ModelFormat(format!("{name}: expected rank 2")));
        }
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|e| Error::ModelFormat(format!("{name}: {e}")))
    }

    /// Append every tensor of `params` under `prefix`.
    pub fn write_params<P: Parameters + ?Sized>(&mut self, prefix: &str, params: &P) {
        let mut out = Vec::new();
        params.visit(prefix, &mut |name, shape, data| {
            out.push((name, Tensor::new(shape.to_vec(), data.to_vec())));
        });
        self.tensors.extend(out);
    }

    /// Fill `params` (already shaped) from tensors stored under `prefix`.
    pub fn read_params<P: Parameters + ?Sized>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let mut wanted = Vec::new();
        params.visit(prefix, &mut |name, shape, _| wanted.push((name, shape.to_vec())));
        let mut sources = Vec::with_capacity(wanted.len());
        for (name, shape) in &wanted {
            let t = self.get(name)?;
            if &t.shape != shape {
                return Err(Error::ModelFormat(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )));
            }
            sources.push(&t.data);
        }
        let mut next = sources.into_iter();
        params.visit_mut(&mut |data| {
            data.copy_from_slice(next.next().expect("one source per tensor"));
        });
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config.to_string());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &d in &tensor.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::ModelFormat("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version}"
            )));
        }
        let kind = r.string()?;
        let config = serde_json::from_str(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::ModelFormat(format!("{name}: shape overflow")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| {
                Error::ModelFormat(format!("{name}: shape overflow"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((name, Tensor { shape, data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
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
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated model file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::ModelFormat(format!("invalid UTF-8: {e}")))
    }
}
