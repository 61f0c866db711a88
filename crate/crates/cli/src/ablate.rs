//! Category × centroid-count sweeps rendered as a comparison table.
//!
//! Matrix file (same `key = value` syntax as run configs):
//!
//! ```text
//! base_config = toy.conf
//! categories = airplane:data/airplane, chair:data/chair
//! columns = vanilla, 2048, 128, 64, 32, 16
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::commands::{cmd_eval, cmd_train};
use crate::config::RunConfig;
use crate::error::CliError;

pub const DEFAULT_COLUMNS: [Column; 6] = [
    Column::Vanilla,
    Column::Centroids(2048),
    Column::Centroids(128),
    Column::Centroids(64),
    Column::Centroids(32),
    Column::Centroids(16),
];

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_MD: &str = "ablation.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Vanilla,
    Centroids(usize),
}

impl Column {
    pub fn label(&self) -> String {
        match self {
            Column::Vanilla => "Vanilla".to_string(),
            Column::Centroids(k) => k.to_string(),
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        if s.eq_ignore_ascii_case("vanilla") {
            return Ok(Column::Vanilla);
        }
        s.parse()
            .map(Column::Centroids)
            .map_err(|_| CliError::Config(format!("column `{s}` is neither `vanilla` nor a cluster count")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationMatrix {
    pub base: RunConfig,
    pub categories: Vec<(String, PathBuf)>,
    pub columns: Vec<Column>,
}

impl AblationMatrix {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().unwrap_or(Path::new("."));
        let mut base = None;
        let mut categories = Vec::new();
        let mut columns = DEFAULT_COLUMNS.to_vec();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}: line {}: expected `key = value`", path.display(), idx + 1)))?;
            let value = value.trim();
            match key.trim() {
                "base_config" => base = Some(RunConfig::load(&base_dir.join(value))?),
                "categories" => {
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let (name, dir) = item.split_once(':').ok_or_else(|| {
                            CliError::Config(format!("category `{item}` must be `name:directory`"))
                        })?;
                        categories.push((name.trim().to_string(), base_dir.join(dir.trim())));
                    }
                }
                "columns" => {
                    columns = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(Column::parse)
                        .collect::<Result<_, _>>()?
                }
                other => return Err(CliError::Config(format!("unknown ablation key `{other}`"))),
            }
        }
        if categories.is_empty() {
            return Err(CliError::Config("ablation matrix lists no categories".into()));
        }
        if columns.is_empty() {
            return Err(CliError::Config("ablation matrix lists no columns".into()));
        }
        Ok(Self {
            base: base.unwrap_or_default(),
            categories,
            columns,
        })
    }

    fn cell_config(&self, category: usize, column: Column, out: &Path) -> RunConfig {
        let (name, dir) = &self.categories[category];
        let mut cfg = self.base.clone();
        cfg.dataset_dir = dir.clone();
        cfg.output_dir = out.join(name).join(column.label().to_lowercase());
        match column {
            Column::Vanilla => cfg.vanilla = true,
            Column::Centroids(k) => {
                cfg.vanilla = false;
                cfg.k_centroids = k;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub columns: Vec<Column>,
    /// `(category, metric, one value per column)`; `None` marks a failed cell.
    pub rows: Vec<(String, &'static str, Vec<Option<f64>>)>,
    pub failures: Vec<String>,
}

/// Index of the smallest present value, first one on ties.
pub fn row_minimum(values: &[Option<f64>]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,metric");
        for c in &self.columns {
            let _ = write!(s, ",{}", c.label());
        }
        s.push_str(",best\n");
        for (cat, metric, values) in &self.rows {
            let _ = write!(s, "{cat},{metric}");
            for v in values {
                match v {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            let best = row_minimum(values).map(|i| self.columns[i].label()).unwrap_or_default();
            let _ = writeln!(s, ",{best}");
        }
        s
    }

    /// Markdown table with each row's minimum in bold.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Category | Metric |");
        for c in &self.columns {
            let _ = write!(s, " {} |", c.label());
        }
        s.push_str("\n|---|---|");
        for _ in &self.columns {
            s.push_str("---|");
        }
        s.push('\n');
        for (cat, metric, values) in &self.rows {
            let best = row_minimum(values);
            let _ = write!(s, "| {cat} | {metric} (↓) |");
            for (i, v) in values.iter().enumerate() {
                let cell = match v {
                    Some(v) if *metric == "FPD" => format!("{v:.2}"),
                    Some(v) => format!("{v:.4}"),
                    None => "n/a".to_string(),
                };
                if best == Some(i) {
                    let _ = write!(s, " **{cell}** |");
                } else {
                    let _ = write!(s, " {cell} |");
                }
            }
            s.push('\n');
        }
        s.push_str("\nFPD in units of 1e-3; JSD in nats.\n");
        s
    }
}

/// Train and evaluate every (category, column) cell, then write
/// `ablation.csv` and `ablation.md` under `out`. A failed cell is recorded
/// and the rest still run.
pub fn cmd_ablate(matrix: &AblationMatrix, out: &Path) -> Result<AblationTable, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let cells: Vec<(usize, usize)> = (0..matrix.categories.len())
        .flat_map(|c| (0..matrix.columns.len()).map(move |k| (c, k)))
        .collect();
    let results: Vec<Result<(f64, f64), CliError>> = cells
        .par_iter()
        .map(|&(c, k)| {
            let cfg = matrix.cell_config(c, matrix.columns[k], out);
            cfg.validate()?;
            let summary = cmd_train(&cfg, None)?;
            let report = cmd_eval(Some(&summary.final_checkpoint), &cfg.dataset_dir, &cfg, false)?;
            Ok((report.fpd_milli(), report.jsd))
        })
        .collect();

    let n_cols = matrix.columns.len();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (c, (name, _)) in matrix.categories.iter().enumerate() {
        let mut fpd = vec![None; n_cols];
        let mut jsd = vec![None; n_cols];
        for k in 0..n_cols {
            match &results[c * n_cols + k] {
                Ok((f, j)) => {
                    fpd[k] = Some(*f);
                    jsd[k] = Some(*j);
                }
                Err(e) => failures.push(format!("{name} / {}: {e}", matrix.columns[k].label())),
            }
        }
        rows.push((name.clone(), "FPD", fpd));
        rows.push((name.clone(), "JSD", jsd));
    }
    let table = AblationTable {
        columns: matrix.columns.clone(),
        rows,
        failures,
    };
    let csv = out.join(ABLATION_CSV);
    fs::write(&csv, table.to_csv()).map_err(|e| CliError::io(&csv, e))?;
    let md = out.join(ABLATION_MD);
    fs::write(&md, table.to_markdown()).map_err(|e| CliError::io(&md, e))?;
    Ok(table)
}
