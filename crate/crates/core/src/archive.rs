//! Binary parameter archive shared by checkpoints and vocoder imports.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "FVCA"
//! version    u32      container version (1)
//! header_len u64
//! header     header_len bytes of UTF-8 JSON
//! n_blobs    u64
//! blob*      name_len u32, name (UTF-8), ndim u32, dims u64 * ndim,
//!            prod(dims) float32 values, row-major
//! ```

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::nn::Blob;

pub const MAGIC: &[u8; 4] = b"FVCA";
pub const CONTAINER_VERSION: u32 = 1;

const MAX_NDIM: u32 = 8;

/// Decoded archive: raw header bytes plus blobs in stored order.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: Vec<u8>,
    pub blobs: Vec<Blob>,
}

impl Archive {
    pub fn encode(header: &[u8], blobs: &[Blob]) -> Result<Vec<u8>> {
        let payload: usize = blobs.iter().map(|b| b.data.len() * 4 + b.name.len() + 16).sum();
        let mut out = Vec::with_capacity(32 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header);
        out.extend_from_slice(&(blobs.len() as u64).to_le_bytes());
        for b in blobs {
            let expected: usize = b.shape.iter().product();
            if expected != b.data.len() {
                return Err(Error::Checkpoint(format!(
                    "blob {} has {} values for shape {:?}",
                    b.name,
                    b.data.len(),
                    b.shape
                )));
            }
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses untrusted bytes. Never allocates more than the input can back.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Checkpoint(format!("unsupported container version {version}")));
        }
        let header_len = r.len_u64()?;
        let header = r.take(header_len)?.to_vec();
        let n_blobs = r.len_u64()?;
        let mut blobs = Vec::new();
        let mut names = HashSet::new();
        for _ in 0..n_blobs {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate blob {name}")));
            }
            let ndim = r.u32()?;
            if ndim > MAX_NDIM {
                return Err(Error::Checkpoint(format!("blob {name} has {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim as usize);
            let mut count: usize = 1;
            for _ in 0..ndim {
                let d = r.len_u64()?;
                count = count
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint(format!("blob {name} shape overflows")))?;
                shape.push(d);
            }
            let n_bytes = count
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("blob {name} shape overflows")))?;
            let raw = r.take(n_bytes)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(Blob { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last blob",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { header, blobs })
    }

    pub fn header_json<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_slice(&self.header).map_err(|e| Error::Checkpoint(format!("header: {e}")))
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
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated archive".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint("length exceeds address space".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<Blob> {
        vec![
            Blob {
                name: "a.weight".into(),
                shape: vec![2, 3],
                data: vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0],
            },
            Blob {
                name: "b".into(),
                shape: vec![],
                data: vec![0.25],
            },
        ]
    }

    #[test]
    fn round_trip() {
        let bytes = Archive::encode(br#"{"x":1}"#, &sample()).unwrap();
        let a = Archive::decode(&bytes).unwrap();
        assert_eq!(a.header, br#"{"x":1}"#);
        assert_eq!(a.blobs, sample());
        assert_eq!(Archive::encode(&a.header, &a.blobs).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = Archive::encode(b"{}", &sample()).unwrap();
        assert!(Archive::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Archive::decode(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Archive::decode(&magic).is_err());
        let dup = vec![sample()[1].clone(), sample()[1].clone()];
        assert!(Archive::decode(&Archive::encode(b"{}", &dup).unwrap()).is_err());
    }

    #[test]
    fn huge_declared_shape_is_rejected_without_allocating() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u64.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'x');
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(Archive::decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(data in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Archive::decode(&data);
        }

        #[test]
        fn encode_decode_identity(values in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let blob = Blob { name: "p".into(), shape: vec![values.len()], data: values };
            let bytes = Archive::encode(b"{}", std::slice::from_ref(&blob)).unwrap();
            prop_assert_eq!(Archive::decode(&bytes).unwrap().blobs, vec![blob]);
        }
    }
}
