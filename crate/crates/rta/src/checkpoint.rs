//! RTA1 checkpoint files: magic `RTA1`, a version byte, a manifest of
//! (name, shape) entries, then f32 little-endian payloads in manifest order.

use std::io::Read;
use std::path::Path;

use crate::tensor::Array;
use crate::RtaError;

const MAGIC: &[u8; 4] = b"RTA1";
const VERSION: u8 = 1;

/// Ordered named tensors. Names carry module structure (`lm/embed`,
/// `agg/kind`, ...), and scalar metadata rides along as 1x1 tensors.
#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, tensor: Array) {
        self.entries.push((name.to_string(), tensor));
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.push(name, Array::from_vec(1, 1, vec![value]));
    }

    pub fn get(&self, name: &str) -> Result<&Array, RtaError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| RtaError::Checkpoint(format!("missing tensor '{name}'")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64, RtaError> {
        let a = self.get(name)?;
        if (a.rows, a.cols) != (1, 1) {
            return Err(RtaError::Checkpoint(format!("tensor '{name}' is not scalar")));
        }
        Ok(a.data[0])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<(), RtaError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.push(VERSION);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, a) in &self.entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(a.rows as u64).to_le_bytes());
            buf.extend_from_slice(&(a.cols as u64).to_le_bytes());
        }
        for (_, a) in &self.entries {
            for &v in &a.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RtaError> {
        let mut f = std::fs::File::open(path).map_err(|e| {
            RtaError::Checkpoint(format!("cannot open {}: {e}", path.display()))
        })?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], RtaError> {
            if *pos + n > buf.len() {
                return Err(RtaError::Checkpoint("truncated checkpoint".into()));
            }
            let s = &buf[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(RtaError::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let version = take(&mut pos, 1)?[0];
        if version != VERSION {
            return Err(RtaError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
                .map_err(|_| RtaError::Checkpoint("non-utf8 tensor name".into()))?;
            let rows = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let cols = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            manifest.push((name, rows, cols));
        }
        let mut entries = Vec::with_capacity(count);
        for (name, rows, cols) in manifest {
            let n = rows * cols;
            let bytes = take(&mut pos, n * 4)?;
            let data: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            entries.push((name, Array::from_vec(rows, cols, data)));
        }
        Ok(Checkpoint { entries })
    }

    /// FNV-1a over the serialized bytes; used by the frozen-weight contracts.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, a) in &self.entries {
            eat(name.as_bytes());
            eat(&(a.rows as u64).to_le_bytes());
            eat(&(a.cols as u64).to_le_bytes());
            for &v in &a.data {
                eat(&(v as f32).to_le_bytes());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_names_shapes_and_f32_values() {
        let mut ck = Checkpoint::new();
        ck.push("lm/embed", Array::from_vec(2, 3, vec![1.5, -2.25, 0.0, 3.125, 4.5, -0.5]));
        ck.push_scalar("agg/kind", 2.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rta1");
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.get("lm/embed").unwrap(), ck.get("lm/embed").unwrap());
        assert_eq!(loaded.get_scalar("agg/kind").unwrap(), 2.0);
        assert_eq!(loaded.content_hash(), ck.content_hash());
    }

    #[test]
    fn magic_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rta1");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn file_starts_with_magic_and_version() {
        let ck = Checkpoint::new();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.rta1");
        ck.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"RTA1");
        assert_eq!(bytes[4], 1);
    }
}
