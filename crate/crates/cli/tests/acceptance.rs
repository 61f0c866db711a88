//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs under `cargo test --workspace` (or `cargo test -p topoprior-cli --test
//! acceptance` on its own). Every tolerance and time budget is pinned below.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng as _;

use topoprior::gradcheck::{loss_gradient_max_error, GradCheckInstance};
use topoprior::kmeans::{kmeans, KMeansConfig};
use topoprior::loss::{loss_discriminator, loss_generator, LossConfig, TargetMode};
use topoprior::metrics::{evaluate_generator, fpd, jsd_probabilities, sqrtm_spd, EvalConfig, GaussianStats};
use topoprior::nets::ScorePair;
use topoprior::pointcloud::sample_unit_sphere;
use topoprior::prior::{assemble_training_prior, assemble_vanilla_prior, build_centroid_block, centroid_block_for, BlockLayout};
use topoprior::rng::rng_from_seed;
use topoprior::synthetic::{procedural_category, procedural_dataset, procedural_shape, ShapeFamily};
use topoprior::train::{default_config, train, Schedule, TrainConfig, TrainState};
use topoprior_cli::ablate::{cmd_ablate, AblationMatrix, ABLATION_CSV, ABLATION_MD};

type Outcome = Result<String, String>;

/// `(id, name, time budget, check)`; checks may record loss logs for later ones.
type Criterion<'a> = (u32, &'static str, Duration, Box<dyn FnOnce(&mut Vec<Vec<u8>>) -> Outcome + 'a>);

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

// ── 1. shape contract ─────────────────────────────────────────────────────

fn shape_contract() -> Outcome {
    let (n, d) = (2048, 128);
    let sphere = sample_unit_sphere(n, 1).map_err(|e| e.to_string())?;
    let reference = procedural_shape(ShapeFamily::TwoBlobs, n, 2).map_err(|e| e.to_string())?;
    let block = centroid_block_for(&reference, 16, BlockLayout::Contiguous, 3, &KMeansConfig::default())
        .map_err(|e| e.to_string())?;
    let training = assemble_training_prior(&sphere, d, &block, 4).map_err(|e| e.to_string())?;
    let vanilla = assemble_vanilla_prior(&sphere, d, 4).map_err(|e| e.to_string())?;
    let t = training.data().dim();
    let v = vanilla.data().dim();
    check(
        t == (2048, 134) && v == (2048, 131),
        format!("training {}x{}, vanilla {}x{}", t.0, t.1, v.0, v.1),
        format!("got training {t:?}, vanilla {v:?}"),
    )
}

// ── 2. centroid block layout ──────────────────────────────────────────────

fn block_layout() -> Outcome {
    let n = 2048;
    let reference = procedural_shape(ShapeFamily::BoxSurface, n, 5).map_err(|e| e.to_string())?;
    for k in [16, 32, 64, 128, 2048] {
        let centroids = kmeans(&reference, k, 6, &KMeansConfig::default()).map_err(|e| e.to_string())?.centroids;
        let block = build_centroid_block(&centroids, n).map_err(|e| e.to_string())?;
        let rep = n / k;
        let mut counts = vec![0usize; k];
        for (i, row) in block.rows().outer_iter().enumerate() {
            if row != centroids.row(i / rep) {
                return Err(format!("K={k}: row {i} is not centroid {}", i / rep));
            }
            // Count by value so that the multiplicity check does not trust the layout.
            let matches: Vec<usize> = (0..k).filter(|&c| centroids.row(c) == row).collect();
            if matches.len() != 1 {
                return Err(format!("K={k}: row {i} matches {} centroids", matches.len()));
            }
            counts[matches[0]] += 1;
        }
        if counts.iter().any(|&c| c != rep) {
            return Err(format!("K={k}: multiplicities {counts:?}, expected {rep}"));
        }
    }
    Ok("K ∈ {16,32,64,128,2048}: row i = centroid ⌊i/(N/K)⌋, each N/K times".into())
}

// ── 3. k-means against exhaustive search ──────────────────────────────────

fn exhaustive_optimum(points: &Array2<f64>, k: usize) -> f64 {
    let n = points.nrows();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..3 {
                sums[l][j] += points[[i, j]];
            }
        }
        let mut inertia = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..3 {
                inertia += (points[[i, j]] - sums[l][j] / counts[l] as f64).powi(2);
            }
        }
        best = best.min(inertia);
        // Next assignment in base k.
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

fn kmeans_oracle() -> Outcome {
    let mut rng = rng_from_seed(2024);
    let mut worst_ratio = 0.0f64;
    for inst in 0..50 {
        let n = rng.random_range(3..=10);
        let k = rng.random_range(1..=3);
        let points = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let pc = topoprior::PointCloud::new(points.clone()).map_err(|e| e.to_string())?;
        let res = kmeans(&pc, k, inst, &KMeansConfig::default()).map_err(|e| e.to_string())?;
        let opt = exhaustive_optimum(&points, k);
        let ratio = if opt > 0.0 { res.inertia / opt } else { 1.0 };
        worst_ratio = worst_ratio.max(ratio);
        if res.inertia > 1.05 * opt + 1e-12 {
            return Err(format!("instance {inst} (n={n}, K={k}): inertia {} vs optimum {opt}", res.inertia));
        }
        if let Some(w) = res.trace.windows(2).find(|w| w[1] > w[0]) {
            return Err(format!("instance {inst}: inertia rose from {} to {}", w[0], w[1]));
        }
    }
    Ok(format!("50 instances, worst inertia/optimum = {worst_ratio:.6}, traces non-increasing"))
}

// ── 4. loss identities ────────────────────────────────────────────────────

fn oracle_generator(s: &ScorePair, beta: f64) -> f64 {
    let n = s.per_point.len() as f64;
    let mut point_sum = 0.0;
    for &v in s.per_point.iter() {
        point_sum += (v - 1.0) * (v - 1.0);
    }
    0.5 * (s.per_shape - 1.0) * (s.per_shape - 1.0) + beta * point_sum / (2.0 * n)
}

fn oracle_discriminator(fake: &ScorePair, real: &ScorePair, literal: bool) -> f64 {
    let fake_term = |v: f64| if literal { (v - 1.0) * (v - 1.0) } else { v * v };
    let shape = 0.5 * (fake_term(fake.per_shape) + (real.per_shape - 1.0) * (real.per_shape - 1.0));
    let mut point = 0.0;
    for &v in fake.per_point.iter() {
        point += fake_term(v) / (2.0 * fake.per_point.len() as f64);
    }
    for &v in real.per_point.iter() {
        point += (v - 1.0) * (v - 1.0) / (2.0 * real.per_point.len() as f64);
    }
    shape + point
}

fn loss_identities() -> Outcome {
    let mut rng = rng_from_seed(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=32);
        let mut draw = || ScorePair {
            per_point: Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..2.0)),
            per_shape: rng.random_range(-1.0..2.0),
        };
        let (fake, real) = (draw(), draw());
        let beta = rng.random_range(0.1..3.0);
        for mode in [TargetMode::Standard, TargetMode::Literal] {
            let cfg = LossConfig::new(beta, mode).map_err(|e| e.to_string())?;
            worst = worst.max((loss_generator(&fake, &cfg) - oracle_generator(&fake, beta)).abs());
            let ld = loss_discriminator(&fake, &real, &cfg).total();
            worst = worst.max((ld - oracle_discriminator(&fake, &real, mode == TargetMode::Literal)).abs());
        }
    }
    if worst > 1e-9 {
        return Err(format!("max deviation from substitution oracle {worst:e}"));
    }
    let ones = ScorePair { per_point: Array1::ones(16), per_shape: 1.0 };
    let lg = loss_generator(&ones, &LossConfig::new(1.3, TargetMode::Standard).map_err(|e| e.to_string())?);
    let ld = loss_discriminator(&ones, &ones, &LossConfig::new(1.3, TargetMode::Literal).map_err(|e| e.to_string())?).total();
    check(
        lg == 0.0 && ld == 0.0,
        format!("100 random cases within {worst:.1e}; L_G(1)=0, literal L_D(1)=0"),
        format!("L_G at ones {lg}, literal L_D at ones {ld}"),
    )
}

// ── 5. gradient checks ────────────────────────────────────────────────────

fn gradient_checks() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    for seed in 0..5 {
        let inst = GradCheckInstance::kink_free(seed, 8, 4, 8, 4).map_err(|e| e.to_string())?;
        for mode in [TargetMode::Standard, TargetMode::Literal] {
            let cfg = LossConfig::new(1.7, mode).map_err(|e| e.to_string())?;
            for (name, e) in inst.all_errors(&cfg).map_err(|e| e.to_string())? {
                if e > worst.1 {
                    worst = (format!("seed {seed} {name}"), e);
                }
            }
        }
    }
    let loss_gap = loss_gradient_max_error(5, 50);
    check(
        worst.1 < 1e-3 && loss_gap < 1e-6,
        format!("5 seeds, worst relative error {:.2e} ({}); loss gradients within {loss_gap:.1e}", worst.1, worst.0),
        format!("worst relative error {:.2e} at {}; loss gradient gap {loss_gap:e}", worst.1, worst.0),
    )
}

// ── 6. metric closed forms ────────────────────────────────────────────────

fn stats(mean: &[f64], cov: &[f64]) -> GaussianStats {
    let f = mean.len();
    GaussianStats {
        mean: Array1::from_vec(mean.to_vec()),
        covariance: Array2::from_shape_vec((f, f), cov.to_vec()).expect("square"),
    }
}

fn metric_closed_forms() -> Outcome {
    let e = |r: topoprior::Result<f64>| r.map_err(|e| e.to_string());
    let mut rng = rng_from_seed(6);
    let p: Vec<f64> = {
        let raw: Vec<f64> = (0..27).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };
    let self_jsd = e(jsd_probabilities(&p, &p))?;
    let disjoint = e(jsd_probabilities(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.25, 0.75]))?;
    let half = e(jsd_probabilities(&[0.5, 0.5], &[1.0, 0.0]))?;
    if self_jsd.abs() > 1e-12 || (disjoint - std::f64::consts::LN_2).abs() > 1e-9 || (half - 0.215762).abs() > 1e-5 {
        return Err(format!("JSD self {self_jsd}, disjoint {disjoint}, half {half}"));
    }

    let b = Array2::from_shape_simple_fn((8, 8), || rng.random_range(-1.0..1.0));
    let cov = b.dot(&b.t()) + Array2::<f64>::eye(8) * 0.1;
    let mean: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = stats(&mean, cov.as_slice().expect("standard layout"));
    let identical = e(fpd(&s, &s))?;
    let one_d = e(fpd(&stats(&[0.0], &[1.0]), &stats(&[1.0], &[1.0])))?;
    let diag = e(fpd(&stats(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]), &stats(&[0.0, 0.0], &[4.0, 0.0, 0.0, 4.0])))?;
    if identical.abs() > 1e-8 || (one_d - 1.0).abs() > 1e-8 || (diag - 2.0).abs() > 1e-8 {
        return Err(format!("FPD identical {identical}, 1-D {one_d}, diagonal {diag}"));
    }

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let b = Array2::from_shape_simple_fn((8, 8), || rng.random_range(-1.0..1.0));
        let a = b.dot(&b.t()) + Array2::<f64>::eye(8) * 1e-3;
        let root = sqrtm_spd(&a).map_err(|e| e.to_string())?;
        let err = (&root.dot(&root) - &a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(err);
    }
    check(
        worst < 1e-6,
        format!("JSD 0 / ln2 / {half:.6}; FPD {identical:.1e} / {one_d} / {diag}; sqrtm residual {worst:.1e}"),
        format!("sqrtm reconstruction residual {worst:e}"),
    )
}

// ── 7 and 9. toy training ─────────────────────────────────────────────────

const TOY_SEEDS: [u64; 3] = [0, 1, 2];
const TOY_STEPS: u64 = 300;

fn toy_config(seed: u64) -> TrainConfig {
    let mut cfg = default_config(256, 16, 32, 16);
    cfg.seed = seed;
    // The default 1e-4 barely moves a 300-step run at this scale.
    cfg.optimizer.learning_rate = 1e-3;
    cfg
}

fn toy_dataset() -> Vec<topoprior::PointCloud> {
    procedural_dataset(16, 256, 0).expect("procedural shapes")
}

fn toy_run(data: &[topoprior::PointCloud], seed: u64) -> topoprior::Result<(TrainState, Vec<u8>)> {
    let mut log = Vec::new();
    let state = train(data, Schedule::Steps(TOY_STEPS), &toy_config(seed), None, None, Some(&mut log))?;
    Ok((state, log))
}

fn loss_d_at(log: &[u8], step: u64) -> Option<f64> {
    let text = std::str::from_utf8(log).ok()?;
    let row = text.lines().nth(step as usize)?;
    let f: Vec<f64> = row.split(',').map(|v| v.parse().ok()).collect::<Option<_>>()?;
    (f[0] as u64 == step).then(|| f[2] + f[3])
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn training_smoke(logs: &mut Vec<Vec<u8>>) -> Outcome {
    let data = toy_dataset();
    let eval = EvalConfig::new(28, 1234);
    let (mut d10, mut d300, mut j0, mut j300) = (vec![], vec![], vec![], vec![]);
    for seed in TOY_SEEDS {
        let initial = TrainState::new(&toy_config(seed)).map_err(|e| e.to_string())?;
        let before = evaluate_generator(&initial.params, &initial.sphere, 64, &data, &eval).map_err(|e| e.to_string())?;
        let (state, log) = toy_run(&data, seed).map_err(|e| e.to_string())?;
        let after = evaluate_generator(&state.params, &state.sphere, 64, &data, &eval).map_err(|e| e.to_string())?;
        d10.push(loss_d_at(&log, 10).ok_or("loss log lacks step 10")?);
        d300.push(loss_d_at(&log, TOY_STEPS).ok_or("loss log lacks step 300")?);
        j0.push(before.jsd);
        j300.push(after.jsd);
        logs.push(log);
    }
    let (md10, md300, mj0, mj300) = (median(d10), median(d300), median(j0), median(j300));
    check(
        md300 < md10 && mj300 < mj0,
        format!("median L_D {md10:.4} → {md300:.4}; median JSD {mj0:.4} → {mj300:.4}"),
        format!("median L_D {md10:.4} → {md300:.4}; median JSD {mj0:.4} → {mj300:.4}"),
    )
}

fn determinism(first: &[Vec<u8>]) -> Outcome {
    if first.len() != TOY_SEEDS.len() {
        return Err("training smoke did not produce logs to compare".into());
    }
    let data = toy_dataset();
    for (seed, before) in TOY_SEEDS.iter().zip(first) {
        let (_, again) = toy_run(&data, *seed).map_err(|e| e.to_string())?;
        if &again != before {
            return Err(format!("seed {seed}: loss CSV differs between runs"));
        }
    }
    Ok(format!("{} seeds × {TOY_STEPS} steps: loss CSVs bit-identical", TOY_SEEDS.len()))
}

// ── 8. ablation structure ─────────────────────────────────────────────────

fn ablation_structure(root: &Path) -> Outcome {
    let io = |e: std::io::Error| e.to_string();
    let mut categories = Vec::new();
    for family in ShapeFamily::ALL {
        let dir = root.join(family.name());
        fs::create_dir_all(&dir).map_err(io)?;
        for (i, pc) in procedural_category(family, 4, 2048, 8).map_err(|e| e.to_string())?.iter().enumerate() {
            topoprior::io::write_cloud(pc, dir.join(format!("{i}.pcf")), topoprior::io::CloudFormat::F32leBinary)
                .map_err(|e| e.to_string())?;
        }
        categories.push(format!("{0}:{0}", family.name()));
    }
    fs::write(
        root.join("base.conf"),
        "n_points = 2048\nlatent_dim = 8\nhidden_width = 8\nsteps = 8\nlearning_rate = 0.001\n\
         eval_samples = 4\ngrid_resolution = 28\nseed = 0\n",
    )
    .map_err(io)?;
    // No `columns` key: the default sweep is exercised.
    fs::write(root.join("matrix.conf"), format!("base_config = base.conf\ncategories = {}\n", categories.join(", ")))
        .map_err(io)?;
    let matrix = AblationMatrix::load(&root.join("matrix.conf")).map_err(|e| e.to_string())?;
    let table = cmd_ablate(&matrix, &root.join("report")).map_err(|e| e.to_string())?;
    if !table.failures.is_empty() {
        return Err(format!("failed cells: {:?}", table.failures));
    }

    let csv = fs::read_to_string(root.join("report").join(ABLATION_CSV)).map_err(io)?;
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default();
    if header != "category,metric,Vanilla,2048,128,64,32,16,best" {
        return Err(format!("header `{header}`"));
    }
    let labels: Vec<&str> = header.split(',').collect();
    let rows: Vec<&str> = lines.collect();
    if rows.len() != 8 {
        return Err(format!("{} data rows, expected 4 categories × 2 metrics", rows.len()));
    }
    for (r, row) in rows.iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        let (cat, metric) = (ShapeFamily::ALL[r / 2].name(), ["FPD", "JSD"][r % 2]);
        if f.len() != 9 || f[0] != cat || f[1] != metric {
            return Err(format!("row {r} `{row}`, expected {cat},{metric},… with 9 fields"));
        }
        let values: Vec<f64> = f[2..8].iter().map(|v| v.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| format!("row {r}: {e}"))?;
        let argmin = (0..6).fold(0, |b, i| if values[i] < values[b] { i } else { b });
        if f[8] != labels[2 + argmin] {
            return Err(format!("row {r}: best `{}` but the minimum is in `{}`", f[8], labels[2 + argmin]));
        }
    }
    let md = fs::read_to_string(root.join("report").join(ABLATION_MD)).map_err(io)?;
    let bold_rows = md.lines().filter(|l| l.matches("**").count() == 2).count();
    check(
        bold_rows == 8,
        "4 categories × {FPD, JSD} × {Vanilla,2048,128,64,32,16}; minima marked in CSV and markdown",
        format!("{bold_rows} markdown rows carry exactly one bold minimum, expected 8"),
    )
}

// ── driver ────────────────────────────────────────────────────────────────

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut logs = Vec::new();
    let criteria: Vec<Criterion<'_>> = vec![
        (1, "prior shape contract", Duration::from_secs(1), Box::new(|_| shape_contract())),
        (2, "centroid block layout", Duration::from_secs(1), Box::new(|_| block_layout())),
        (3, "k-means vs exhaustive optimum", Duration::from_secs(10), Box::new(|_| kmeans_oracle())),
        (4, "loss identities", Duration::from_secs(1), Box::new(|_| loss_identities())),
        (5, "gradient checks", Duration::from_secs(30), Box::new(|_| gradient_checks())),
        (6, "metric closed forms", Duration::from_secs(10), Box::new(|_| metric_closed_forms())),
        (7, "toy training smoke", Duration::from_secs(300), Box::new(training_smoke)),
        (8, "ablation table structure", Duration::from_secs(600), Box::new(|_| ablation_structure(tmp.path()))),
        (9, "training determinism", Duration::from_secs(300), Box::new(|logs| determinism(logs))),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut logs)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(_) if elapsed > budget => Err(format!("took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name} ({elapsed:.2?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name} ({elapsed:.2?}): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
