use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use topoprior::checkpoint::Checkpoint;
use topoprior::io::{write_cloud, CloudFormat};
use topoprior::metrics::{evaluate_generator, evaluate_sets, generate_samples, EvalConfig, EvalReport, FeatureExtractor};
use topoprior::train::{train, CheckpointPolicy, TrainState};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::prepare::load_dataset;
use crate::svg::render_cloud_svg;

pub const LOSS_LOG: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
}

/// Train from `cfg` (or continue from `resume`), writing the loss log and
/// checkpoints under the output directory. Resumed runs append to the log.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let tcfg = cfg.train_config();
    tcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let resume_state = match resume {
        Some(p) => Some(TrainState::from_checkpoint(&Checkpoint::load(p)?)?),
        None => None,
    };
    let dataset = load_dataset(&cfg.dataset_dir)?;

    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    let log_path = cfg.output_dir.join(LOSS_LOG);
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume_state.is_some())
        .truncate(resume_state.is_none())
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);

    let policy = CheckpointPolicy {
        dir: cfg.output_dir.join(CHECKPOINT_DIR),
        every: (cfg.checkpoint_every > 0).then_some(cfg.checkpoint_every),
    };
    let state = train(&dataset, cfg.schedule(), &tcfg, resume_state, Some(&policy), Some(&mut log))?;
    log.flush().map_err(|e| CliError::io(&log_path, e))?;

    // Each checkpoint carries the config it was trained with.
    for entry in fs::read_dir(&policy.dir).map_err(|e| CliError::io(&policy.dir, e))? {
        let dir = entry.map_err(|e| CliError::io(&policy.dir, e))?.path();
        if dir.is_dir() {
            write_file(&dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;
        }
    }
    Ok(TrainSummary {
        final_checkpoint: policy.path_for(state.step),
        steps: state.step,
    })
}

fn load_state(checkpoint: &Path, cfg: Option<&RunConfig>) -> Result<TrainState, CliError> {
    let state = TrainState::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    if let Some(cfg) = cfg {
        let net = state.params.config;
        if net.latent_dim != cfg.latent_dim || net.vanilla != cfg.vanilla || net.hidden != cfg.hidden_width {
            return Err(CliError::Failed(format!(
                "checkpoint {} has generator input width {} (d = {}, vanilla = {}, h = {}), config expects d = {}, vanilla = {}, h = {}",
                checkpoint.display(),
                net.input_width(),
                net.latent_dim,
                net.vanilla,
                net.hidden,
                cfg.latent_dim,
                cfg.vanilla,
                cfg.hidden_width
            )));
        }
    }
    Ok(state)
}

/// Writes `count` generated clouds plus one SVG preview each.
pub fn cmd_generate(
    checkpoint: &Path,
    cfg: Option<&RunConfig>,
    count: usize,
    out: &Path,
    seed: u64,
    also_xyz: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let state = load_state(checkpoint, cfg)?;
    create_dir(out)?;
    let samples = generate_samples(&state.params, &state.sphere, count, seed)?;
    let mut written = Vec::with_capacity(count);
    for (i, pc) in samples.iter().enumerate() {
        let stem = format!("sample_{i:04}");
        let bin = out.join(format!("{stem}.pcf"));
        write_cloud(pc, &bin, CloudFormat::F32leBinary)?;
        if also_xyz {
            write_cloud(pc, out.join(format!("{stem}.xyz")), CloudFormat::XyzText)?;
        }
        write_file(&out.join(format!("{stem}.svg")), render_cloud_svg(pc, &stem))?;
        written.push(bin);
    }
    Ok(written)
}

fn eval_config(cfg: &RunConfig) -> Result<EvalConfig, CliError> {
    let mut ec = EvalConfig::new(cfg.grid_resolution, cfg.seed);
    if let Some(path) = &cfg.feature_weights {
        ec.extractor = FeatureExtractor::from_checkpoint(&Checkpoint::load(path)?)?;
    }
    Ok(ec)
}

pub fn metrics_csv(report: &EvalReport, cfg: &RunConfig) -> String {
    let hash = cfg.hash();
    format!(
        "metric,value,unit,config_hash\nfpd,{},1e-3,{hash}\njsd,{},nats,{hash}\n",
        report.fpd_milli(),
        report.jsd
    )
}

/// Scores generated samples (or, with `self_compare`, the references
/// themselves) against the reference set and writes `metrics.csv`.
pub fn cmd_eval(
    checkpoint: Option<&Path>,
    references: &Path,
    cfg: &RunConfig,
    self_compare: bool,
) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let ec = eval_config(cfg)?;
    let refs = load_dataset(references)?;
    let report = if self_compare {
        evaluate_sets(&refs, &refs, &ec)?
    } else {
        let checkpoint = checkpoint.ok_or_else(|| {
            CliError::Config("eval needs --checkpoint unless --self-compare is given".into())
        })?;
        let state = load_state(checkpoint, Some(cfg))?;
        evaluate_generator(&state.params, &state.sphere, cfg.eval_samples, &refs, &ec)?
    };
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(METRICS_CSV), metrics_csv(&report, cfg))?;
    Ok(report)
}
