use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;

use topoprior::io::{read_cloud, write_cloud, CloudFormat};
use topoprior::rng::{derive_seed, rng_from_seed, STREAM_SUBSAMPLE};
use topoprior::{normalize_to_unit_sphere, PointCloud};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Default)]
pub struct PrepareReport {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(PathBuf, String)>,
    pub skipped: Vec<PathBuf>,
}

fn name_seed(name: &str) -> u64 {
    // FNV-1a, stable across runs and platforms.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform subsample without replacement, keeping the source order.
pub fn subsample(pc: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, String> {
    if pc.n_points() < n {
        return Err(format!("has {} points, fewer than the required {n}", pc.n_points()));
    }
    if pc.n_points() == n {
        return Ok(pc.clone());
    }
    let mut idx = sample(&mut rng_from_seed(seed), pc.n_points(), n).into_vec();
    idx.sort_unstable();
    pc.select_rows(&idx).map_err(|e| e.to_string())
}

fn prepare_one(path: &Path, format: CloudFormat, n_points: usize, seed: u64) -> Result<PointCloud, String> {
    let pc = read_cloud(path, format).map_err(|e| e.to_string())?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let pc = subsample(&pc, n_points, derive_seed(seed, &[STREAM_SUBSAMPLE, name_seed(stem)]))?;
    normalize_to_unit_sphere(&pc).map_err(|e| e.to_string())
}

/// Every readable cloud in `input` is subsampled to `n_points`, normalized
/// into the unit sphere and written as binary, with a manifest listing them.
pub fn cmd_prepare(input: &Path, output: &Path, n_points: usize, seed: u64) -> Result<PrepareReport, CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| CliError::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;

    let mut report = PrepareReport::default();
    let mut manifest = String::from("file,source,n_points\n");
    for path in entries {
        let Some(format) = CloudFormat::from_path(&path) else {
            report.skipped.push(path);
            continue;
        };
        match prepare_one(&path, format, n_points, seed) {
            Ok(pc) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
                let file = format!("{stem}.pcf");
                let dest = output.join(&file);
                write_cloud(&pc, &dest, CloudFormat::F32leBinary)?;
                let source = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
                manifest.push_str(&format!("{file},{source},{}\n", pc.n_points()));
                report.written.push(dest);
            }
            Err(msg) => report.failures.push((path, msg)),
        }
    }
    let mpath = output.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| CliError::io(&mpath, e))?;
    if report.written.is_empty() && !report.failures.is_empty() {
        return Err(CliError::Failed(format!(
            "all {} input clouds failed, first: {}: {}",
            report.failures.len(),
            report.failures[0].0.display(),
            report.failures[0].1
        )));
    }
    Ok(report)
}

/// Clouds of a prepared dataset in manifest order, or every cloud file in
/// the directory (sorted by name) when there is no manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<PointCloud>, CliError> {
    let mpath = dir.join(MANIFEST);
    let files: Vec<PathBuf> = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| dir.join(l.split(',').next().unwrap_or_default()))
            .collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| CloudFormat::from_path(p).is_some())
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(CliError::Failed(format!("no clouds found in {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            let format = CloudFormat::from_path(p).unwrap_or(CloudFormat::F32leBinary);
            read_cloud(p, format).map_err(CliError::from)
        })
        .collect()
}
