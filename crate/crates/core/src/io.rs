//! Point-cloud files.
//!
//! * `xyz` text: UTF-8, one point per line as three decimal floats separated by
//!   single spaces; lines starting with `#` are comments.
//! * `pcf` binary: magic `PCF1`, then `rows` and `cols` (= 3) as little-endian
//!   `u32`, then `rows × 3` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

pub const BINARY_MAGIC: &[u8; 4] = b"PCF1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    XyzText,
    F32leBinary,
}

impl CloudFormat {
    /// Guess from the file extension: `.xyz`/`.txt` are text, `.pcf`/`.bin` binary.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Some(Self::XyzText),
            "pcf" | "bin" => Some(Self::F32leBinary),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::XyzText => "xyz",
            Self::F32leBinary => "pcf",
        }
    }
}

pub fn read_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::XyzText => {
            let text = std::str::from_utf8(&bytes).map_err(|e| {
                Error::parse_offset(path, e.valid_up_to(), "invalid UTF-8")
            })?;
            parse_xyz(path, text)
        }
        CloudFormat::F32leBinary => decode_binary(path, &bytes),
    }
}

pub fn write_cloud(pc: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        CloudFormat::XyzText => format_xyz(pc).into_bytes(),
        CloudFormat::F32leBinary => encode_binary(pc),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut flat = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(Error::parse_line(
                path,
                lineno,
                format!("expected 3 space-separated values, found {}", fields.len()),
            ));
        }
        for field in fields {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse_line(path, lineno, format!("not a number: {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse_line(path, lineno, format!("non-finite value {field:?}")));
            }
            flat.push(v);
        }
    }
    if flat.is_empty() {
        return Err(Error::parse_line(path, text.lines().count().max(1), "no points in file"));
    }
    let n = flat.len() / 3;
    PointCloud::new(Array2::from_shape_vec((n, 3), flat).expect("3 values per row"))
}

pub fn format_xyz(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(pc.n_points() * 32);
    for row in pc.points().outer_iter() {
        // `{}` on f64 prints the shortest string that parses back to the same value.
        out.push_str(&format!("{} {} {}\n", row[0], row[1], row[2]));
    }
    out
}

pub fn encode_binary(pc: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + pc.n_points() * 12);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(pc.n_points() as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for v in pc.points().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_binary(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse_offset(path, bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(Error::parse_offset(path, 0, "bad magic, expected PCF1"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if cols != 3 {
        return Err(Error::parse_offset(path, 8, format!("expected 3 columns, header says {cols}")));
    }
    if rows == 0 {
        return Err(Error::parse_offset(path, 4, "header declares zero rows"));
    }
    let expected = HEADER_LEN + rows * cols * 4;
    if bytes.len() != expected {
        return Err(Error::parse_offset(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for {rows} rows, file has {}", bytes.len()),
        ));
    }
    let mut flat = Vec::with_capacity(rows * 3);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::parse_offset(path, HEADER_LEN + 4 * i, "non-finite value"));
        }
        flat.push(f64::from(v));
    }
    PointCloud::new(Array2::from_shape_vec((rows, 3), flat).expect("rows × 3"))
}
