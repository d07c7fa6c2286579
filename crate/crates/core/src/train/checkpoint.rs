use std::path::Path;

use crate::bin::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ROIGANCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_U8: u8 = 2;
const TAG_U64: u8 = 3;

/// One named, typed, shaped array.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    /// Little-endian payload.
    pub bytes: Vec<u8>,
}

fn elem_size(tag: u8) -> Option<usize> {
    match tag {
        0 => Some(DType::F32.size()),
        1 => Some(DType::F64.size()),
        TAG_U8 => Some(1),
        TAG_U64 => Some(8),
        _ => None,
    }
}

impl Entry {
    pub fn tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self::slice(name, t.shape().to_vec(), t.data())
    }

    pub fn slice<T: Element>(name: impl Into<String>, shape: Vec<usize>, data: &[T]) -> Self {
        let mut bytes = Vec::with_capacity(data.len() * T::DTYPE.size());
        data.iter().for_each(|&v| v.write_le(&mut bytes));
        Self {
            name: name.into(),
            dtype: T::DTYPE.tag(),
            shape,
            bytes,
        }
    }

    pub fn u8s(name: impl Into<String>, data: &[u8]) -> Self {
        Self {
            name: name.into(),
            dtype: TAG_U8,
            shape: vec![data.len()],
            bytes: data.to_vec(),
        }
    }

    pub fn u64s(name: impl Into<String>, data: &[u64]) -> Self {
        Self {
            name: name.into(),
            dtype: TAG_U64,
            shape: vec![data.len()],
            bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn mismatch(&self, msg: impl Into<String>) -> Error {
        Error::CheckpointMismatch {
            name: self.name.clone(),
            msg: msg.into(),
        }
    }

    fn values<T: Element>(&self, expected_shape: &[usize]) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE.tag() {
            return Err(self.mismatch(format!("dtype tag {} but {:?} expected", self.dtype, T::DTYPE)));
        }
        if self.shape != expected_shape {
            return Err(self.mismatch(format!("shape {:?} but {:?} expected", self.shape, expected_shape)));
        }
        Ok(self.bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }

    pub fn to_tensor<T: Element>(&self, expected_shape: &[usize]) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), self.values(expected_shape)?)
    }

    /// Flat values of a 1-D entry; `len` may be zero (e.g. optimizer moments
    /// before the first step).
    pub fn to_vec<T: Element>(&self, len: usize) -> Result<Vec<T>> {
        self.values(&[len])
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        if self.dtype != TAG_U8 {
            return Err(self.mismatch("expected bytes"));
        }
        Ok(&self.bytes)
    }

    pub fn as_u64(&self) -> Result<Vec<u64>> {
        if self.dtype != TAG_U64 {
            return Err(self.mismatch("expected u64 values"));
        }
        Ok(self
            .bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parameters, optimizer moments and run state, each as a table of entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub params: Vec<Entry>,
    pub optimizer: Vec<Entry>,
    pub state: Vec<Entry>,
}

fn find<'a>(table: &'a [Entry], what: &str, name: &str) -> Result<&'a Entry> {
    table
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::CheckpointMismatch {
            name: name.to_string(),
            msg: format!("missing from {what} table"),
        })
}

impl Checkpoint {
    pub fn param(&self, name: &str) -> Result<&Entry> {
        find(&self.params, "parameter", name)
    }

    pub fn optim(&self, name: &str) -> Result<&Entry> {
        find(&self.optimizer, "optimizer", name)
    }

    pub fn state(&self, name: &str) -> Result<&Entry> {
        find(&self.state, "state", name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        for table in [&self.params, &self.optimizer, &self.state] {
            w.u32(table.len() as u32);
            for e in table {
                w.str(&e.name);
                w.u8(e.dtype);
                w.u32(e.shape.len() as u32);
                e.shape.iter().for_each(|&d| w.u64(d as u64));
                w.bytes(&e.bytes);
            }
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, not a ROIGANCK checkpoint".into(),
            });
        }
        let at = r.offset();
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: at,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let mut tables: [Vec<Entry>; 3] = Default::default();
        for table in &mut tables {
            let n = r.u32()?;
            for _ in 0..n {
                let name = r.str()?;
                let at = r.offset();
                let dtype = r.u8()?;
                let size = elem_size(dtype).ok_or_else(|| Error::Format {
                    offset: at,
                    msg: format!("unknown dtype tag {dtype} for `{name}`"),
                })?;
                let ndim = r.u32()? as usize;
                let mut shape = Vec::with_capacity(ndim.min(16));
                let mut numel = 1usize;
                for _ in 0..ndim {
                    let d = usize::try_from(r.u64()?).map_err(|_| r.error("dimension overflows"))?;
                    numel = numel.checked_mul(d).ok_or_else(|| r.error("extent overflows"))?;
                    shape.push(d);
                }
                let len = numel.checked_mul(size).ok_or_else(|| r.error("extent overflows"))?;
                let bytes = r.take(len)?.to_vec();
                table.push(Entry {
                    name,
                    dtype,
                    shape,
                    bytes,
                });
            }
        }
        r.finish()?;
        let [params, optimizer, state] = tables;
        Ok(Self {
            params,
            optimizer,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}
