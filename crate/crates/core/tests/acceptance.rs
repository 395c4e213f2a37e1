//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use stcl::chains::*;
use stcl::cli::{run_compare_losses, ExperimentConfig, Prepared};
use stcl::graph::StateGraph;
use stcl::loss::*;
use stcl::probe::fit_linear_probe;
use stcl::spectral::*;
use stcl::tasks::*;
use stcl::train::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, start: Instant) -> (bool, f64) {
    let t = start.elapsed();
    (t <= limit, t.as_secs_f64())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let n = 3 + (i as usize * 7) % 28;
        let k = 1 + (i as usize) % 8;
        let density = 0.2 + 0.6 * ((i % 5) as f64) / 4.0;
        let g = random_graph(n, density, 1000 + i);
        let z = random_z(n, k, 1.5, 2000 + i);
        let cl = population_contrastive_loss(&g, &z).unwrap();
        let mf = population_mf_loss(&g, &z).unwrap();
        worst = worst.max((cl - (mf - g.frobenius_norm_sq())).abs());
    }
    let (fast, secs) = within(Duration::from_secs(10), start);
    outcome(
        worst <= 1e-9 && fast,
        format!(
            "loss identity on 50 chains: max deviation {worst:.2e} (<= 1e-9), {secs:.2}s (< 10s)"
        ),
    )
}

fn fd_gradient(f: impl Fn(&EmbeddingMatrix) -> f64, z: &EmbeddingMatrix) -> DMatrix<f64> {
    let h = 1e-5;
    let base = z.as_matrix().clone();
    DMatrix::from_fn(base.nrows(), base.ncols(), |i, j| {
        let mut p = base.clone();
        p[(i, j)] += h;
        let mut m = base.clone();
        m[(i, j)] -= h;
        (f(&EmbeddingMatrix::new(p).unwrap()) - f(&EmbeddingMatrix::new(m).unwrap())) / (2.0 * h)
    })
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let g = random_graph(15, 0.4, seed);
        let z = random_z(15, 4, 1.0, seed + 50);
        let dev = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1e-12);

        let analytic = loss_gradient(LossSource::Population(&g), &z).unwrap();
        worst = worst.max(dev(
            &analytic,
            &fd_gradient(|z| population_contrastive_loss(&g, z).unwrap(), &z),
        ));
        worst = worst.max(dev(
            &analytic,
            &fd_gradient(|z| population_mf_loss(&g, z).unwrap(), &z),
        ));

        let kernel = build_random_reversible_chain(15, 0.4, seed).unwrap();
        let ens = sample_trajectories(&kernel, InitialState::Stationary, 2, 64, seed).unwrap();
        let mut stream = make_batches(
            &ens,
            BatchConfig {
                batch_size: 32,
                negative_mode: if seed % 2 == 0 {
                    NegativeMode::InBatchCross
                } else {
                    NegativeMode::IndependentResample
                },
                burn_in: 0,
            },
            seed,
        )
        .unwrap();
        let batch = stream.next().unwrap();
        let analytic = loss_gradient(LossSource::Empirical(&batch), &z).unwrap();
        worst = worst.max(dev(
            &analytic,
            &fd_gradient(|z| empirical_contrastive_loss(&batch, z).unwrap(), &z),
        ));
    }
    let (fast, secs) = within(Duration::from_secs(30), start);
    outcome(
        worst < 1e-5 && fast,
        format!("gradients vs central differences (n=15, k=4): max relative error {worst:.2e} (< 1e-5), {secs:.2}s (< 30s)"),
    )
}

fn alignment_to_top(g: &StateGraph, z: &EmbeddingMatrix, k: usize) -> f64 {
    let top = eig_sym(g.norm_adjacency()).unwrap().top_vectors(k);
    subspace_alignment(&z.rescaled(g), &top).unwrap().mean_angle
}

fn optimum(g: &StateGraph, k: usize) -> f64 {
    population_contrastive_loss(g, &closed_form_minimizer(g, k).unwrap().to_embedding()).unwrap()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let g = ring_graph(100, 0.0);
    let cfg = TrainConfig {
        learning_rate: default_learning_rate(g.degree().max()),
        steps: 3000,
        batch_size: 1,
        optimizer: Optimizer::GradientDescent,
        schedule: Schedule::Constant,
        seed: 0,
        mode: TrainMode::Population,
        eval_every: 100,
        negative_mode: NegativeMode::InBatchCross,
        burn_in: 0,
    };
    let (enc, report) = train_stcl(
        TrainSource::Population(&g),
        &Encoder::tabular(100, 5, 0),
        &cfg,
        None,
    )
    .unwrap();
    let loss = report.final_population_loss.unwrap();
    let opt = optimum(&g, 5);
    let gap = rel_err(loss, opt);
    let angle = alignment_to_top(&g, &enc.embedding(None).unwrap(), 5);
    let (fast, secs) = within(Duration::from_secs(120), start);
    outcome(
        gap < 0.01 && angle < 0.1 && fast,
        format!(
            "population training, ring n=100, k=5: loss {loss:.6} vs optimum {opt:.6} (gap {gap:.2e} < 1e-2), mean angle {angle:.2e} rad (< 0.1), {secs:.2}s (< 120s)"
        ),
    )
}

/// Empirical-mode tabular training shared by criteria 4, 5 and 6.
fn train_empirical(
    kernel: &TransitionKernel,
    g: &StateGraph,
    k: usize,
    seed: u64,
) -> EmbeddingMatrix {
    let ens = sample_trajectories(kernel, InitialState::Stationary, 10, 10_000, seed).unwrap();
    let cfg = TrainConfig {
        learning_rate: default_learning_rate(max_visit_frequency(&ens)),
        steps: 10_000,
        batch_size: 256,
        optimizer: Optimizer::GradientDescent,
        schedule: Schedule::Cosine,
        seed,
        mode: TrainMode::Empirical,
        eval_every: 500,
        negative_mode: NegativeMode::InBatchCross,
        burn_in: 0,
    };
    let src = TrainSource::Empirical {
        ensemble: &ens,
        graph: Some(g),
    };
    let (enc, _) = train_stcl(src, &Encoder::tabular(g.n_states(), k, seed), &cfg, None).unwrap();
    enc.embedding(None).unwrap()
}

fn criterion_4(ring_z: &EmbeddingMatrix, g: &StateGraph, secs: f64) -> Outcome {
    let angle = alignment_to_top(g, ring_z, 5);
    outcome(
        angle < 0.15 && secs < 300.0,
        format!("empirical training, ring n=100, m=10, t=1e4, k=5: mean angle {angle:.4} rad (< 0.15), {secs:.2}s (< 300s)"),
    )
}

fn criterion_5(ring_z: &EmbeddingMatrix, g: &StateGraph) -> Outcome {
    let task = ring_pose_task(100).unwrap();
    let exact = closed_form_minimizer(g, 8).unwrap().matrix;
    let r_exact = fit_linear_probe(&exact, &task, true)
        .unwrap()
        .r_squared
        .mean;
    let r_stcl = fit_linear_probe(ring_z.as_matrix(), &task, true)
        .unwrap()
        .r_squared
        .mean;
    outcome(
        r_exact >= 0.999 && r_stcl >= 0.95,
        format!("ring pose probe: exact k=8 R^2 {r_exact:.6} (>= 0.999), trained R^2 {r_stcl:.4} (>= 0.95)"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let kernel = build_grid_chain(11, 10, GridMode::MetropolisUniform, 0.0).unwrap();
    let g = graph_of(&kernel);
    let task = grid_coordinate_task(11, 10).unwrap();
    let probe = |z: &DMatrix<f64>| fit_linear_probe(z, &task, true).unwrap().r_squared.mean;

    let r_exact = probe(&closed_form_minimizer(&g, 8).unwrap().matrix);
    let mut rows = Vec::new();
    let mut ok = r_exact >= 0.9;
    for seed in 0..3u64 {
        let r_stcl = probe(train_empirical(&kernel, &g, 8, seed).as_matrix());
        let spec = NoiseSpec {
            nuisance_dims: 16,
            nuisance_scale: DEFAULT_NUISANCE_SCALE,
            noise_scale: 1.0,
            seed,
        };
        let obs = ObservationModel::coordinate_noise(task.targets.clone(), spec).unwrap();
        let r_pca = probe(&pca_embedding(&obs.observation_matrix(), 8).unwrap().matrix);
        ok &= r_stcl >= 0.85 && r_pca < r_stcl;
        rows.push(format!("seed {seed}: trained {r_stcl:.4} / pca {r_pca:.4}"));
    }
    let (fast, secs) = within(Duration::from_secs(600), start);
    outcome(
        ok && fast,
        format!(
            "grid 11x10, k=8: exact R^2 {r_exact:.4} (>= 0.9); {} (trained >= 0.85 and > pca); {secs:.2}s (< 600s)",
            rows.join(", ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = ExperimentConfig::from_json(
        r#"{"environment": {"kind": "ring", "n": 10}, "embedding": {"k": 3},
            "compare": {"budgets": [100, 1000, 10000, 100000], "seeds": [0, 1, 2], "chains": 10}}"#,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = run_compare_losses(&Prepared::new(cfg).unwrap(), dir.path()).unwrap();
    let means: Vec<f64> = rows
        .iter()
        .filter(|r| r.kind == "seed-mean")
        .map(|r| r.relative_error)
        .collect();
    let exhaustive = rows
        .iter()
        .find(|r| r.kind == "exhaustive")
        .unwrap()
        .relative_error;
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let last = *means.last().unwrap();
    let populations_equal = rows
        .windows(2)
        .all(|w| w[0].population_loss == w[1].population_loss);
    outcome(
        monotone && last < 0.02 && exhaustive < 1e-12 && populations_equal,
        format!(
            "compare-losses ring n=10: mean relative errors {:?} (non-increasing, last < 2e-2), exhaustive {exhaustive:.1e}",
            means.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn collect_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
  "environment": {"kind": "grid", "rows": 4, "cols": 5},
  "embedding": {"k": 4, "method": "stcl-empirical"},
  "sampling": {"m": 3, "t": 400, "seed": 5},
  "training": {"steps": 300, "batch_size": 32, "eval_every": 25},
  "task": "grid-coordinates",
  "observation": {"kind": "coordinate-noise", "nuisance_dims": 4, "noise_scale": 0.5},
  "probe": {"methods": ["exact-spectral", "pca", "stcl-population", "stcl-empirical", "ground-truth"]},
  "compare": {"budgets": [100, 1000], "seeds": [0, 1]}
}"#,
    )
    .unwrap();
    let mut failures = Vec::new();
    let mut files = 0;
    for cmd in ["spectrum", "train", "probe", "compare-losses", "experiment"] {
        let runs: Vec<_> = (0..2)
            .map(|i| {
                let out = root.path().join(format!("{cmd}-{i}"));
                let status = Command::new(env!("CARGO_BIN_EXE_stcl"))
                    .args([cmd, "--quiet", "--seed", "11", "--config"])
                    .arg(&config)
                    .arg("--out")
                    .arg(&out)
                    .status()
                    .unwrap();
                (status.success(), collect_files(&out))
            })
            .collect();
        if !(runs[0].0 && runs[1].0) || runs[0].1.is_empty() || runs[0].1 != runs[1].1 {
            failures.push(cmd);
        }
        files += runs[0].1.len();
    }
    outcome(
        failures.is_empty(),
        format!(
            "CLI reruns byte-identical for 5 commands ({files} files); mismatches: {failures:?}"
        ),
    )
}

fn small_chains() -> Vec<TransitionKernel> {
    let mut out = Vec::new();
    for n in 3..=8 {
        for laziness in [0.0, 0.3] {
            out.push(build_ring_chain(n, laziness).unwrap());
        }
    }
    for (rows, cols) in [(1, 2), (2, 2), (1, 5), (2, 3), (2, 4), (1, 8)] {
        for mode in [GridMode::DegreeWalk, GridMode::MetropolisUniform] {
            out.push(build_grid_chain(rows, cols, mode, 0.1).unwrap());
        }
    }
    for n in 2..=8 {
        for seed in 0..4 {
            out.push(build_random_reversible_chain(n, 0.3 + 0.2 * seed as f64, seed).unwrap());
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let chains = small_chains();
    let mut worst_enum = 0.0f64;
    let mut beaten = 0;
    for (c, kernel) in chains.iter().enumerate() {
        let g = graph_of(kernel);
        let n = g.n_states();
        let k = 1 + c % n.min(4);
        let batch = TransitionBatch::exhaustive(&g);
        let z = random_z(n, k, 1.0, c as u64);
        let emp = empirical_contrastive_loss(&batch, &z).unwrap();
        let pop = population_contrastive_loss(&g, &z).unwrap();
        worst_enum = worst_enum.max((emp - pop).abs());

        let best = optimum(&g, k);
        for s in 0..100u64 {
            let z = random_z(n, k, 1.5, 10_000 * c as u64 + s);
            if population_contrastive_loss(&g, &z).unwrap() < best - 1e-12 {
                beaten += 1;
            }
        }
    }
    outcome(
        worst_enum <= 1e-12 && beaten == 0,
        format!(
            "{} chains with n <= 8: enumeration vs population max deviation {worst_enum:.1e} (<= 1e-12), {beaten} of {} random embeddings beat the minimizer",
            chains.len(),
            chains.len() * 100
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> =
        vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];

    let start = Instant::now();
    let ring = build_ring_chain(100, 0.0).unwrap();
    let g = graph_of(&ring);
    let ring_z = train_empirical(&ring, &g, 5, 0);
    let secs = start.elapsed().as_secs_f64();
    results.push((4, criterion_4(&ring_z, &g, secs)));
    results.push((5, criterion_5(&ring_z, &g)));
    results.push((6, criterion_6()));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    let mut failed = 0;
    for (i, r) in &results {
        println!(
            "{} criterion {i}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
