mod common;

use std::fs;

use topoprior::checkpoint::Checkpoint;
use topoprior::train::TrainState;
use topoprior_cli::commands::{cmd_train, LOSS_LOG};
use topoprior_cli::error::CliError;

#[test]
fn loss_log_has_one_row_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_dataset(&data, None, 4, 64, 0);
    let cfg = common::toy_config(&data, &tmp.path().join("run"));
    let summary = cmd_train(&cfg, None).unwrap();
    assert_eq!(summary.steps, 6);
    let log = fs::read_to_string(cfg.output_dir.join(LOSS_LOG)).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], "step,loss_g,loss_d_shape,loss_d_point");
    assert_eq!(lines.len() - 1, 6);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields[0] as usize, i + 1);
        assert!(fields.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn vanilla_checkpoint_has_narrow_generator_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_dataset(&data, None, 2, 64, 0);
    for (vanilla, width) in [(true, 3 + 4), (false, 3 + 4 + 3)] {
        let mut cfg = common::toy_config(&data, &tmp.path().join(format!("run_{vanilla}")));
        cfg.vanilla = vanilla;
        let summary = cmd_train(&cfg, None).unwrap();
        let ckpt = Checkpoint::load(&summary.final_checkpoint).unwrap();
        assert_eq!(ckpt.meta_parse::<usize>("input_width").unwrap(), width);
        let state = TrainState::from_checkpoint(&ckpt).unwrap();
        assert_eq!(state.params.generator.embed1.weight.nrows(), width);
    }
}

#[test]
fn identical_runs_write_identical_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_dataset(&data, None, 4, 64, 0);
    let a = common::toy_config(&data, &tmp.path().join("a"));
    let b = common::toy_config(&data, &tmp.path().join("b"));
    cmd_train(&a, None).unwrap();
    cmd_train(&b, None).unwrap();
    let read = |c: &topoprior_cli::RunConfig| fs::read(c.output_dir.join(LOSS_LOG)).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn resuming_continues_the_same_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    common::write_dataset(&data, None, 4, 64, 0);
    let full = common::toy_config(&data, &tmp.path().join("full"));
    cmd_train(&full, None).unwrap();

    let mut half = common::toy_config(&data, &tmp.path().join("half"));
    half.steps = 3;
    let first = cmd_train(&half, None).unwrap();
    half.steps = 6;
    cmd_train(&half, Some(&first.final_checkpoint)).unwrap();

    assert_eq!(
        fs::read_to_string(full.output_dir.join(LOSS_LOG)).unwrap(),
        fs::read_to_string(half.output_dir.join(LOSS_LOG)).unwrap()
    );
}

#[test]
fn invalid_config_fails_before_writing_anything() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::toy_config(&tmp.path().join("missing"), &tmp.path().join("run"));
    cfg.k_centroids = 7;
    assert!(matches!(cmd_train(&cfg, None), Err(CliError::Config(_))));
    assert!(!cfg.output_dir.exists());
}
