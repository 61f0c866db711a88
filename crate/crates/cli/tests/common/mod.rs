#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use topoprior::io::{write_cloud, CloudFormat};
use topoprior::synthetic::{procedural_category, procedural_dataset, ShapeFamily};
use topoprior_cli::RunConfig;

/// Writes `count` procedural clouds of `n` points as xyz text into `dir`.
pub fn write_raw_xyz(dir: &Path, count: usize, n: usize, seed: u64) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    procedural_dataset(count, n, seed)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, pc)| {
            let path = dir.join(format!("shape_{i:02}.xyz"));
            write_cloud(pc, &path, CloudFormat::XyzText).unwrap();
            path
        })
        .collect()
}

/// Writes an already-normalized dataset (binary clouds, no manifest).
pub fn write_dataset(dir: &Path, family: Option<ShapeFamily>, count: usize, n: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let clouds = match family {
        Some(f) => procedural_category(f, count, n, seed).unwrap(),
        None => procedural_dataset(count, n, seed).unwrap(),
    };
    for (i, pc) in clouds.iter().enumerate() {
        write_cloud(pc, dir.join(format!("shape_{i:02}.pcf")), CloudFormat::F32leBinary).unwrap();
    }
}

/// A configuration small enough for a train + eval round trip in well under a second.
pub fn toy_config(dataset: &Path, out: &Path) -> RunConfig {
    let text = format!(
        "n_points = 64\nlatent_dim = 4\nk_centroids = 8\nhidden_width = 8\nsteps = 6\n\
         learning_rate = 0.001\neval_samples = 4\ngrid_resolution = 8\nseed = 3\n\
         dataset_dir = {}\noutput_dir = {}\n",
        dataset.display(),
        out.display()
    );
    RunConfig::parse(&text, Path::new(".")).unwrap()
}

pub fn write_config(path: &Path, cfg: &RunConfig) {
    fs::write(path, cfg.to_text()).unwrap();
}
