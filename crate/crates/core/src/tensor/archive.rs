//! Binary checkpoint archive.
//!
//! Layout: magic `CPSD`, one version byte, then records until end of file.
//! Each record is `name_len: u64`, `name: utf-8`, `rank: u64`,
//! `dims: [u64; rank]`, `payload: [f64; product(dims)]`, all little-endian.

use std::fs;
use std::path::Path;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CPSD";
const VERSION: u8 = 1;

pub fn write_archive_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * params.numel() + 64 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_archive_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut params = ParamSet::new();
    while r.pos < bytes.len() {
        let len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("record name: {e}")))?
            .to_string();
        let rank = r.u64()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("`{name}` has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let payload = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint(format!("`{name}` payload size overflows")))?,
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(dims, data)?);
    }
    Ok(params)
}

pub fn write_archive(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_archive_bytes(params))?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<ParamSet> {
    read_archive_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let b = write_archive_bytes(&ps);
        assert_eq!(&b[..5], b"CPSD\x01");
        assert_eq!(u64::from_le_bytes(b[5..13].try_into().unwrap()), 1);
        assert_eq!(b[13], b'w');
        assert_eq!(b.len(), 5 + 8 + 1 + 8 + 8 + 16);
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::zeros(&[3, 3]));
        let b = write_archive_bytes(&ps);
        assert!(read_archive_bytes(&b[..b.len() - 3]).is_err());
        assert!(read_archive_bytes(b"NOPE\x01").is_err());
    }

    proptest! {
        #[test]
        fn archive_round_trip(
            entries in proptest::collection::btree_map(
                "[a-z_.0-9]{1,12}",
                (1usize..4, 1usize..5).prop_flat_map(|(r, c)| {
                    proptest::collection::vec(-1e6f64..1e6, r * c).prop_map(move |d| (r, c, d))
                }),
                0..6,
            )
        ) {
            let mut ps = ParamSet::new();
            for (name, (r, c, d)) in &entries {
                ps.insert(name.clone(), Tensor::new(vec![*r, *c], d.clone()).unwrap());
            }
            let back = read_archive_bytes(&write_archive_bytes(&ps)).unwrap();
            prop_assert_eq!(back, ps);
        }
    }
}
