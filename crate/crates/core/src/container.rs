//! Versioned little-endian tensor container shared by model checkpoints and
//! SVM model files.
//!
//! Layout:
//!
//! ```text
//! magic      4 bytes  "ANTC"
//! version    u32
//! kind       u16 length + UTF-8
//! metadata   u32 length + UTF-8 (TOML)
//! count      u32
//! count x {
//!     name   u16 length + UTF-8
//!     dtype  u8   (1 = f32, 2 = f64)
//!     ndim   u8
//!     dims   ndim x u64
//!     data   product(dims) x dtype, little-endian
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ANTC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Take the tensor out if it has element type `T`.
    pub fn into_typed<T: Scalar>(self) -> Option<Tensor<T>> {
        let any: Box<dyn std::any::Any> = match self {
            AnyTensor::F32(t) => Box::new(t),
            AnyTensor::F64(t) => Box::new(t),
        };
        any.downcast::<Tensor<T>>().ok().map(|b| *b)
    }

    pub fn from_typed<T: Scalar>(t: Tensor<T>) -> Self {
        let any: Box<dyn std::any::Any> = Box::new(t);
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(*any.downcast().expect("dtype tag matches f32")),
            DType::F64 => AnyTensor::F64(*any.downcast().expect("dtype tag matches f64")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: String,
    pub tensors: Vec<(String, AnyTensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: impl Into<String>) -> Self {
        Container {
            kind: kind.into(),
            meta: meta.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), AnyTensor::from_typed(t)));
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str16(&mut out, &self.kind);
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str16(&mut out, name);
            out.push(t.dtype().code());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match t {
                AnyTensor::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                AnyTensor::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        if bytes.len() < MAGIC.len() {
            return Err(r.truncated("magic"));
        }
        if r.take(4, "magic")? != MAGIC {
            return Err(r.format("magic bytes do not identify a tensor container"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version {
                path: r.path,
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.str16("kind")?;
        let meta_len = r.u32("metadata length")? as usize;
        let meta =
            String::from_utf8(r.take(meta_len, "metadata")?.to_vec()).map_err(|_| r.format("metadata is not UTF-8"))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let name = r.str16(&format!("tensor {i} name"))?;
            let dtype_code = r.u8(&format!("tensor {name} dtype"))?;
            let dtype = DType::from_code(dtype_code)
                .ok_or_else(|| r.format(&format!("tensor {name}: unknown dtype {dtype_code}")))?;
            let ndim = r.u8(&format!("tensor {name} rank"))? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64(&format!("tensor {name} shape"))? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| r.format(&format!("tensor {name}: shape {shape:?} overflows")))?;
            let payload = r.take(len, &format!("tensor {name} payload"))?;
            let t = match dtype {
                DType::F32 => AnyTensor::F32(decode(shape, payload)),
                DType::F64 => AnyTensor::F64(decode(shape, payload)),
            };
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(r.format(&format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(Container { kind, meta, tensors })
    }
}

fn decode<T: Scalar>(shape: Vec<usize>, payload: &[u8]) -> Tensor<T> {
    let size = T::DTYPE.size();
    let data = payload.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data).expect("payload length was derived from the shape")
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    fn truncated(&self, context: &str) -> Error {
        Error::Truncated {
            path: self.path.clone(),
            context: context.to_string(),
        }
    }

    fn format(&self, detail: &str) -> Error {
        Error::Format {
            path: self.path.clone(),
            what: "tensor container",
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.truncated(context));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, context: &str) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn str16(&mut self, context: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len, context)?.to_vec())
            .map_err(|_| self.format(&format!("{context} is not UTF-8")))
    }
}
