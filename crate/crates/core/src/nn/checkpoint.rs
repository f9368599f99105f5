//! Binary checkpoint format.
//!
//! ```text
//! "LSGP2P01"                      8-byte magic
//! u32 LE                          parameter count
//! per parameter, in name order:
//!   u16 LE name length, UTF-8 name
//!   u8 rank, rank × u32 LE dimensions
//!   f32 LE values, row-major
//! u64 LE                          FNV-1a of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::config::NetConfig;
use crate::nn::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LSGP2P01";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn encode(store: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(store.len())
        .map_err(|_| Error::Config("too many parameters for checkpoint".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in store.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Config(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Config(format!("rank of {name} exceeds 255")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::Config(format!("dimension of {name} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint after validating its checksum. `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<ParamStore> {
    let corrupt = |reason: String| Error::CorruptCheckpoint {
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() + 4 + 8 {
        return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic bytes".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let actual = fnv1a64(body);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let parse = |r: &mut Reader| -> std::result::Result<ParamStore, String> {
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| format!("parameter name is not UTF-8: {e}"))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or("tensor too large")?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| format!("{name}: {e}"))?;
            store.insert(name, t).map_err(|e| e.to_string())?;
        }
        if r.pos != r.bytes.len() {
            return Err(format!("{} trailing bytes", r.bytes.len() - r.pos));
        }
        Ok(store)
    };
    parse(&mut r).map_err(corrupt)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode(store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Recovers the network configuration from parameter shapes.
pub fn infer_config(store: &ParamStore) -> Result<NetConfig> {
    let enc1 = store.get("g.enc1.w")?.shape().to_vec();
    let out = store.get("g.out.w")?.shape().to_vec();
    let disc = store.get("d.out.w")?.shape().to_vec();
    let depth = (1..)
        .take_while(|i| store.contains(&format!("g.enc{i}.w")))
        .count();
    let cfg = NetConfig {
        image_size: 1usize.checked_shl(depth as u32).unwrap_or(0),
        in_channels: enc1[1],
        mask_channels: out[1],
        base_width: enc1[0],
        disc_out_channels: disc[0],
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn layout_of_single_parameter() {
        let mut s = ParamStore::new();
        s.insert("g.x", Tensor::new(&[2], vec![1.0f32, -2.0]).unwrap()).unwrap();
        let bytes = encode(&s).unwrap();
        let mut want = b"LSGP2P01".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&3u16.to_le_bytes());
        want.extend_from_slice(b"g.x");
        want.push(1);
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        let sum = fnv1a64(&want);
        want.extend_from_slice(&sum.to_le_bytes());
        assert_eq!(bytes, want);
        assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), s);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut s = ParamStore::new();
        s.insert("d.out.b", Tensor::new(&[3], vec![0.5f32, 1.5, 2.5]).unwrap()).unwrap();
        let bytes = encode(&s).unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(
                matches!(decode(&bad, Path::new("mem")), Err(Error::CorruptCheckpoint { .. })),
                "byte {i}"
            );
        }
    }
}
