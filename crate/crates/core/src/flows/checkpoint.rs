//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "KFLOWCK1"
//! desc_len   u64       length of the JSON architecture descriptor
//! desc       bytes     UTF-8 JSON
//! count      u64       number of entries
//! entry*     name_len u32, name bytes, trainable u8, ndim u32,
//!            dims u64 * ndim, values f64 * prod(dims)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"KFLOWCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(descriptor: String, store: &ParamStore) -> Self {
        let entries = store
            .entries()
            .iter()
            .map(|e| CheckpointEntry {
                name: e.name.clone(),
                trainable: e.trainable,
                value: e.value.clone(),
            })
            .collect();
        Self { descriptor, entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.descriptor.len() as u64).to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(u8::from(e.trainable));
            out.extend_from_slice(&(e.value.shape().len() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(Error::malformed(origin, "bad magic"));
        }
        let dlen = r.u64()? as usize;
        let descriptor = String::from_utf8(r.take(dlen)?.to_vec())
            .map_err(|_| Error::malformed(origin, "descriptor is not UTF-8"))?;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::malformed(origin, "entry name is not UTF-8"))?;
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push(CheckpointEntry {
                name,
                trainable,
                value: Tensor::new(shape, data)?,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::malformed(origin, "trailing bytes"));
        }
        Ok(Self { descriptor, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?, path)
    }

    /// Copies values into a store built from the same descriptor.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} entries, model expects {}",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store.find(&e.name).ok_or_else(|| Error::Unknown {
                kind: "parameter",
                name: e.name.clone(),
            })?;
            store.set(id, e.value.clone())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::malformed(self.origin, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            values in proptest::collection::vec(proptest::num::f64::ANY, 1..40),
            trainable in any::<bool>(),
        ) {
            let mut store = ParamStore::new();
            let n = values.len();
            let t = Tensor::new([n], values).unwrap();
            if trainable {
                store.add("a.weight", t);
            } else {
                store.add_buffer("a.buf", t);
            }
            store.add("b", Tensor::zeros([2, 3]));
            let ck = Checkpoint::from_store("{\"x\":1}".into(), &store);
            let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.descriptor, ck.descriptor.clone());
            for (a, b) in back.entries.iter().zip(&ck.entries) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.trainable, b.trainable);
                let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }

    #[test]
    fn truncated_file_is_malformed() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::ones([2, 2]));
        let bytes = Checkpoint::from_store("{}".into(), &store).to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }));
    }
}
