//! Writes procedural point clouds as xyz text, one directory per shape family.
//!
//! ```text
//! cargo run -p topoprior --example toy_dataset -- <out_dir> [count] [points] [seed]
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use topoprior::io::{write_cloud, CloudFormat};
use topoprior::synthetic::{procedural_category, ShapeFamily};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first().map(PathBuf::from) else {
        eprintln!("usage: toy_dataset <out_dir> [count=8] [points=2048] [seed=0]");
        return ExitCode::from(1);
    };
    let arg = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(count), Ok(points), Ok(seed)) = (arg(1, 8), arg(2, 2048), arg(3, 0)) else {
        eprintln!("count, points and seed must be non-negative integers");
        return ExitCode::from(1);
    };
    for family in ShapeFamily::ALL {
        let dir = out.join(family.name());
        let written = std::fs::create_dir_all(&dir)
            .map_err(|e| e.to_string())
            .and_then(|_| procedural_category(family, count as usize, points as usize, seed).map_err(|e| e.to_string()))
            .and_then(|clouds| {
                clouds.iter().enumerate().try_for_each(|(i, pc)| {
                    write_cloud(pc, dir.join(format!("{}_{i:03}.xyz", family.name())), CloudFormat::XyzText)
                        .map_err(|e| e.to_string())
                })
            });
        if let Err(e) = written {
            eprintln!("{}: {e}", dir.display());
            return ExitCode::from(2);
        }
        println!("wrote {count} {} clouds to {}", family.name(), dir.display());
    }
    ExitCode::SUCCESS
}
