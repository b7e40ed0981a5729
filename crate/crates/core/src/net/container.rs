//! Checkpoint container.
//!
//! ```text
//! LREM1
//! meta <key> <value>
//! tensor <name> <rows>x<cols> f64 <byte offset>
//! end
//! <raw little-endian f64 arrays in manifest order>
//! ```

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{LremError, Result};

pub const MAGIC: &[u8] = b"LREM1\n";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").expect("write to vec");
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            writeln!(out, "tensor {name} {}x{} f64 {offset}", t.rows, t.cols).expect("write to vec");
            offset += t.len() * 8;
        }
        out.extend_from_slice(b"end\n");
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if !bytes.starts_with(MAGIC) {
            return Err("bad magic".into());
        }
        let mut pos = MAGIC.len();
        let mut meta = Vec::new();
        let mut headers: Vec<(String, usize, usize, usize)> = Vec::new();
        loop {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or("unterminated manifest")?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| "manifest is not UTF-8")?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                (Some("tensor"), Some(rest)) => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 4 || f[2] != "f64" {
                        return Err(format!("bad tensor line `{line}`"));
                    }
                    let (r, c) = f[1].split_once('x').ok_or("bad shape")?;
                    let r: usize = r.parse().map_err(|_| "bad rows")?;
                    let c: usize = c.parse().map_err(|_| "bad cols")?;
                    let off: usize = f[3].parse().map_err(|_| "bad offset")?;
                    headers.push((f[0].to_string(), r, c, off));
                }
                _ => return Err(format!("bad manifest line `{line}`")),
            }
        }
        let data = &bytes[pos..];
        let mut tensors = Vec::with_capacity(headers.len());
        let mut expected = 0usize;
        for (name, r, c, off) in headers {
            if off != expected {
                return Err(format!("tensor {name} offset {off}, expected {expected}"));
            }
            let n = r * c;
            let end = off + n * 8;
            if end > data.len() {
                return Err(format!("tensor {name} truncated"));
            }
            let vals = data[off..end]
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(r, c, vals)));
            expected = end;
        }
        if expected != data.len() {
            return Err("trailing bytes after tensor data".into());
        }
        Ok(Container { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| LremError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LremError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| LremError::Format {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// SHA-256 over tensor names, shapes and little-endian values.
pub fn fingerprint<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> [u8; 32] {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        h.update((t.rows as u64).to_le_bytes());
        h.update((t.cols as u64).to_le_bytes());
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let c = Container {
            meta: vec![("step".into(), "3".into()), ("note".into(), "a b".into())],
            tensors: vec![
                ("w".into(), Tensor::from_vec(2, 2, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE])),
                ("b".into(), Tensor::from_vec(1, 3, vec![0.1, 0.2, 0.3])),
            ],
        };
        let bytes = c.to_bytes();
        assert!(bytes.starts_with(b"LREM1\n"));
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        assert_eq!(c.meta("note"), Some("a b"));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
