//! Checkpoint files: a plain-text manifest next to a little-endian f64 blob.
//!
//! ```text
//! koopctl-checkpoint 1
//! blob <bytes> <fnv64 hex>
//! meta <key> <value>
//! tensor <name> <rows> <cols> <offset>
//! ```
//!
//! The blob lives at `<manifest>.bin`. Offsets are in bytes; tensors are
//! stored column-major.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ndmath::Mat;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "koopctl-checkpoint";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Mat)>,
}

fn fnv64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(
            !key.contains(char::is_whitespace) && !value.contains('\n'),
            "checkpoint meta `{key}` must be single-line"
        );
        self.meta.push((key.to_string(), value));
    }

    pub fn put(&mut self, name: &str, m: &Mat) {
        assert!(!name.contains(char::is_whitespace), "tensor name `{name}`");
        self.tensors.push((name.to_string(), m.clone()));
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| corrupt(format!("missing meta `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| corrupt(format!("bad value `{v}` for meta `{key}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, m)| m)
            .ok_or_else(|| corrupt(format!("missing tensor `{name}`")))
    }

    /// Copies a stored tensor into `dst`, checking the shape.
    pub fn restore(&self, name: &str, dst: &mut Mat) -> Result<()> {
        let src = self.tensor(name)?;
        if src.shape() != dst.shape() {
            return Err(corrupt(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.copy_from(src);
        Ok(())
    }

    fn encode(&self) -> (String, Vec<u8>) {
        let mut blob = Vec::new();
        let mut body = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(body, "meta {k} {v}");
        }
        for (name, m) in &self.tensors {
            let _ = writeln!(body, "tensor {name} {} {} {}", m.nrows(), m.ncols(), blob.len());
            for v in m.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = format!(
            "{MAGIC} {FORMAT_VERSION}\nblob {} {:016x}\n{body}",
            blob.len(),
            fnv64(&blob)
        );
        (manifest, blob)
    }

    /// Writes both files through temporaries and renames, blob first.
    pub fn save(&self, manifest: &Path) -> Result<()> {
        let (text, blob) = self.encode();
        if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bin = blob_path(manifest);
        let write = |path: &Path, bytes: &[u8]| -> Result<()> {
            let mut tmp = path.as_os_str().to_owned();
            tmp.push(".tmp");
            let tmp = PathBuf::from(tmp);
            fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
        };
        write(&bin, &blob)?;
        write(manifest, text.as_bytes())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let bin = blob_path(manifest);
        let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::decode(&text, &blob)
    }

    fn decode(text: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty manifest"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) => {
                let v: u32 = v.parse().map_err(|_| corrupt("bad version line"))?;
                if v != FORMAT_VERSION {
                    return Err(corrupt(format!(
                        "format version {v}, this build reads {FORMAT_VERSION}"
                    )));
                }
            }
            _ => return Err(corrupt("not a koopctl checkpoint")),
        }
        let blob_line = lines.next().ok_or_else(|| corrupt("missing blob line"))?;
        let parts: Vec<&str> = blob_line.split(' ').collect();
        if parts.len() != 3 || parts[0] != "blob" {
            return Err(corrupt("malformed blob line"));
        }
        let len: usize = parts[1].parse().map_err(|_| corrupt("malformed blob length"))?;
        let sum = u64::from_str_radix(parts[2], 16).map_err(|_| corrupt("malformed checksum"))?;
        if blob.len() != len || fnv64(blob) != sum {
            return Err(corrupt("blob does not match manifest checksum"));
        }

        let mut ck = Checkpoint::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 4 {
                    return Err(corrupt(format!("malformed tensor line `{line}`")));
                }
                let num = |s: &str| s.parse::<usize>().map_err(|_| corrupt(format!("bad number in `{line}`")));
                let (rows, cols, off) = (num(f[1])?, num(f[2])?, num(f[3])?);
                let end = rows
                    .checked_mul(cols)
                    .and_then(|n| n.checked_mul(8))
                    .and_then(|n| n.checked_add(off))
                    .filter(|&e| e <= blob.len())
                    .ok_or_else(|| corrupt(format!("tensor `{}` runs past the blob", f[0])))?;
                let data: Vec<f64> = blob[off..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                ck.tensors
                    .push((f[0].to_string(), Mat::from_vec(rows, cols, data)));
            } else if !line.is_empty() {
                return Err(corrupt(format!("unrecognised manifest line `{line}`")));
            }
        }
        Ok(ck)
    }
}
