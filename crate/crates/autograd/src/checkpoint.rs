//! `SXM1` checkpoint container.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//!
//! ```text
//! "SXM1" | kind: u8 | meta_len | meta (UTF-8) | n_records |
//!     n_records × ( name_len | name | rank | dims[rank] | payload[prod(dims)] )
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SXM1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: u8,
    pub metadata: String,
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: u8, metadata: String) -> Self {
        Self {
            kind,
            metadata,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push((name.into(), tensor));
    }

    /// Append every parameter of `store` in id order.
    pub fn push_store(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.records.push((p.name.clone(), p.value.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrite every parameter of `store` from the record of the same name.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = self
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record `{name}`")))?;
            store.set_value(id, t.clone())?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.kind])?;
        write_u32(w, self.metadata.len())?;
        w.write_all(self.metadata.as_bytes())?;
        write_u32(w, self.records.len())?;
        for (name, t) in &self.records {
            write_u32(w, name.len())?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.rank())?;
            for &d in t.shape() {
                write_u32(w, d)?;
            }
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let meta_len = read_u32(r)?;
        let metadata = String::from_utf8(read_bytes(r, meta_len)?)
            .map_err(|e| Error::Checkpoint(format!("metadata is not UTF-8: {e}")))?;
        let n = read_u32(r)?;
        let mut records = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = read_u32(r)?;
            let name = String::from_utf8(read_bytes(r, name_len)?)
                .map_err(|e| Error::Checkpoint(format!("record name is not UTF-8: {e}")))?;
            let rank = read_u32(r)?;
            if rank == 0 || rank > 8 {
                return Err(Error::Checkpoint(format!("record `{name}` has rank {rank}")));
            }
            let dims = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            records.push((name, Tensor::new(dims, data)?));
        }
        Ok(Self {
            kind: kind[0],
            metadata,
            records,
        })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("length {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_bytes<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut c = Checkpoint::new(0x02, "k=v".into());
        c.push("w", Tensor::matrix(1, 2, vec![1.5, -2.0]).unwrap());
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"SXM1");
        assert_eq!(b[4], 0x02);
        assert_eq!(&b[5..9], &3u32.to_le_bytes());
        assert_eq!(&b[9..12], b"k=v");
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(b.len(), 16 + 4 + 1 + 4 + 8 + 16);
        assert_eq!(Checkpoint::from_bytes(&b).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"XXXX\x01").is_err());
        let mut c = Checkpoint::new(1, String::new());
        c.push("w", Tensor::scalar(1.0));
        let b = c.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
    }
}
