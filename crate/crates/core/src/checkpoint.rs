//! Tensor checkpoints: a UTF-8 manifest next to a little-endian `f32` blob.
//!
//! `manifest.txt`:
//!
//! ```text
//! # topoprior checkpoint
//! format 1
//! meta <key> <value>
//! tensor <name> <rows>x<cols> <byte offset into tensors.bin>
//! ```
//!
//! Values are stored as `f32`; tensors that are already `f32`-representable
//! (all model parameters are) survive a save/load cycle bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const BLOB_FILE: &str = "tensors.bin";
const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Array2<f64>)>,
}

impl Checkpoint {
    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<f64>) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing meta key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_str(key)?;
        raw.parse()
            .map_err(|_| Error::invalid(format!("checkpoint meta `{key}` has bad value `{raw}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor `{name}`")))
    }

    /// Fetch a tensor and require a given shape.
    pub fn tensor_shaped(&self, name: &str, shape: (usize, usize)) -> Result<&Array2<f64>> {
        let t = self.tensor(name)?;
        if t.dim() != shape {
            return Err(Error::invalid(format!(
                "tensor `{name}` is {}x{}, expected {}x{}",
                t.nrows(),
                t.ncols(),
                shape.0,
                shape.1
            )));
        }
        Ok(t)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("# topoprior checkpoint\n");
        manifest.push_str(&format!("format {FORMAT_VERSION}\n"));
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::invalid(format!("meta entry `{k}` cannot be stored")));
            }
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            if name.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("tensor name `{name}` contains whitespace")));
            }
            manifest.push_str(&format!("tensor {name} {}x{} {}\n", t.nrows(), t.ncols(), blob.len()));
            for v in t.iter() {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mpath = dir.join(MANIFEST_FILE);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;

        let mut ckpt = Checkpoint::default();
        let mut saw_format = false;
        for (idx, line) in manifest.lines().enumerate() {
            let lineno = idx + 1;
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            let kind = parts.next().unwrap_or_default();
            let rest = parts.next().unwrap_or_default();
            match kind {
                "format" => {
                    if rest != FORMAT_VERSION {
                        return Err(Error::parse_line(&mpath, lineno, format!("unsupported format `{rest}`")));
                    }
                    saw_format = true;
                }
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| Error::parse_line(&mpath, lineno, "meta needs a key and a value"))?;
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let fields: Vec<&str> = rest.split(' ').collect();
                    let [name, shape, offset] = fields[..] else {
                        return Err(Error::parse_line(&mpath, lineno, "tensor needs name, shape and offset"));
                    };
                    let (r, c) = shape
                        .split_once('x')
                        .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
                        .ok_or_else(|| Error::parse_line(&mpath, lineno, format!("bad shape `{shape}`")))?;
                    let offset: usize = offset
                        .parse()
                        .map_err(|_| Error::parse_line(&mpath, lineno, format!("bad offset `{offset}`")))?;
                    let end = offset + r * c * 4;
                    if end > blob.len() {
                        return Err(Error::parse_offset(&bpath, blob.len(), format!("tensor `{name}` runs past the end of the blob")));
                    }
                    let values: Vec<f64> = blob[offset..end]
                        .chunks_exact(4)
                        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                        .collect();
                    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                        return Err(Error::parse_offset(&bpath, offset + 4 * i, format!("non-finite value in `{name}`")));
                    }
                    ckpt.tensors.push((name.to_string(), Array2::from_shape_vec((r, c), values).expect("r × c")));
                }
                other => {
                    return Err(Error::parse_line(&mpath, lineno, format!("unknown record `{other}`")));
                }
            }
        }
        if !saw_format {
            return Err(Error::parse_line(&mpath, 1, "missing format line"));
        }
        Ok(ckpt)
    }
}
