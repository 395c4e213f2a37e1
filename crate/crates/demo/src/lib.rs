//! Three interactive views over `stcl`, exported to JavaScript as JSON strings.
//!
//! The plain functions are what the tests call; the `#[wasm_bindgen]`
//! wrappers turn errors into an `{"error": ...}` object.

use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use stcl::chains::{
    build_grid_chain, build_ring_chain, sample_trajectories, stationary_distribution, GridMode,
    InitialState, TransitionKernel,
};
use stcl::graph::{build_state_graph, StateGraph};
use stcl::loss::{population_contrastive_loss, NegativeMode};
use stcl::probe::fit_linear_probe;
use stcl::spectral::{closed_form_minimizer, eig_sym, pca_embedding, subspace_alignment};
use stcl::tasks::{grid_coordinate_task, NoiseSpec, ObservationModel, DEFAULT_NUISANCE_SCALE};
use stcl::train::{
    default_learning_rate, max_visit_frequency, train_stcl, Encoder, Optimizer, Schedule,
    TrainConfig, TrainMode, TrainSource,
};

/// Grid used by the probe view.
const GRID_ROWS: usize = 11;
const GRID_COLS: usize = 10;

fn environment(kind: &str, a: usize, b: usize, laziness: f64) -> stcl::Result<TransitionKernel> {
    match kind {
        "grid" => build_grid_chain(a, b, GridMode::MetropolisUniform, laziness),
        "ring" => build_ring_chain(a, laziness),
        other => Err(stcl::Error::InvalidArgument(format!(
            "unknown environment {other:?}"
        ))),
    }
}

fn graph_of(kernel: &TransitionKernel) -> stcl::Result<StateGraph> {
    let pi = stationary_distribution(kernel)?;
    build_state_graph(kernel, &pi, 1e-10)
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SpectrumView {
    pub n_states: usize,
    /// Leading eigenvalues, descending (at most 30).
    pub eigenvalues: Vec<f64>,
    /// `k` eigenvectors, each a list of per-state values.
    pub eigenvectors: Vec<Vec<f64>>,
}

/// Eigenvalues and top-`k` eigenvectors of the normalized adjacency.
/// `a` is the ring size or the grid row count; `b` is the grid column count.
pub fn spectrum(
    kind: &str,
    a: usize,
    b: usize,
    laziness: f64,
    k: usize,
) -> stcl::Result<SpectrumView> {
    let g = graph_of(&environment(kind, a, b, laziness)?)?;
    let basis = eig_sym(g.norm_adjacency())?;
    let k = k.clamp(1, g.n_states());
    Ok(SpectrumView {
        n_states: g.n_states(),
        eigenvalues: basis.values.iter().take(30).copied().collect(),
        eigenvectors: columns(&basis.top_vectors(k)),
    })
}

#[derive(Debug, Serialize)]
pub struct TrainingView {
    pub steps: Vec<usize>,
    /// Exact contrastive loss at each recorded step.
    pub population_loss: Vec<f64>,
    pub optimum: f64,
    pub mean_angle: f64,
    pub learning_rate: f64,
    /// Rescaled embedding columns of the trained encoder.
    pub embedding: Vec<Vec<f64>>,
}

/// Trains a tabular encoder on a ring, either on the exact graph or on
/// sampled trajectories of `m` chains of length `t`.
pub fn train_ring(
    n: usize,
    k: usize,
    steps: usize,
    empirical: bool,
    m: usize,
    t: usize,
    seed: u64,
) -> stcl::Result<TrainingView> {
    let kernel = build_ring_chain(n, 0.0)?;
    let g = graph_of(&kernel)?;
    let k = k.clamp(1, n);
    let steps = steps.max(1);
    let ensemble = if empirical {
        Some(sample_trajectories(
            &kernel,
            InitialState::Stationary,
            m.max(1),
            t.max(2),
            seed,
        )?)
    } else {
        None
    };
    let (source, mode, lr) = match &ensemble {
        Some(e) => (
            TrainSource::Empirical {
                ensemble: e,
                graph: Some(&g),
            },
            TrainMode::Empirical,
            default_learning_rate(max_visit_frequency(e)),
        ),
        None => (
            TrainSource::Population(&g),
            TrainMode::Population,
            default_learning_rate(g.degree().max()),
        ),
    };
    let config = TrainConfig {
        learning_rate: lr,
        steps,
        batch_size: 256,
        optimizer: Optimizer::GradientDescent,
        schedule: if empirical {
            Schedule::Cosine
        } else {
            Schedule::Constant
        },
        seed,
        mode,
        eval_every: (steps / 100).max(1),
        negative_mode: NegativeMode::InBatchCross,
        burn_in: 0,
    };
    let (encoder, report) = train_stcl(source, &Encoder::tabular(n, k, seed), &config, None)?;
    let population: Vec<_> = report
        .loss_curve
        .iter()
        .filter(|p| p.mode == stcl::train::CurveKind::Population)
        .collect();
    let z = encoder.embedding(None)?;
    let rescaled = z.rescaled(&g);
    let top = eig_sym(g.norm_adjacency())?.top_vectors(k);
    let optimum = population_contrastive_loss(&g, &closed_form_minimizer(&g, k)?.to_embedding())?;
    Ok(TrainingView {
        steps: population.iter().map(|p| p.step).collect(),
        population_loss: population.iter().map(|p| p.loss).collect(),
        optimum,
        mean_angle: subspace_alignment(&rescaled, &top)?.mean_angle,
        learning_rate: report.learning_rate,
        embedding: columns(&rescaled),
    })
}

#[derive(Debug, Serialize)]
pub struct ProbeEntry {
    pub method: &'static str,
    pub r_squared: f64,
    /// Predicted `(x, y)` per grid cell.
    pub predictions: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct ProbeView {
    pub rows: usize,
    pub cols: usize,
    pub targets: Vec<[f64; 2]>,
    pub entries: Vec<ProbeEntry>,
}

/// Probes exact-spectral, trained and PCA embeddings (k = 8) for the
/// coordinates of an 11x10 grid, PCA seeing noisy observations.
pub fn grid_probe(noise: f64, steps: usize, seed: u64) -> stcl::Result<ProbeView> {
    let kernel = build_grid_chain(GRID_ROWS, GRID_COLS, GridMode::MetropolisUniform, 0.0)?;
    let g = graph_of(&kernel)?;
    let task = grid_coordinate_task(GRID_ROWS, GRID_COLS)?;
    let k = 8;

    let ens = sample_trajectories(&kernel, InitialState::Stationary, 10, 10_000, seed)?;
    let config = TrainConfig {
        learning_rate: default_learning_rate(max_visit_frequency(&ens)),
        steps: steps.max(1),
        batch_size: 256,
        optimizer: Optimizer::GradientDescent,
        schedule: Schedule::Cosine,
        seed,
        mode: TrainMode::Empirical,
        eval_every: steps.max(1),
        negative_mode: NegativeMode::InBatchCross,
        burn_in: 0,
    };
    let src = TrainSource::Empirical {
        ensemble: &ens,
        graph: None,
    };
    let (encoder, _) = train_stcl(src, &Encoder::tabular(g.n_states(), k, seed), &config, None)?;

    let spec = NoiseSpec {
        nuisance_dims: 16,
        nuisance_scale: DEFAULT_NUISANCE_SCALE,
        noise_scale: noise.max(0.0),
        seed,
    };
    let obs = ObservationModel::coordinate_noise(task.targets.clone(), spec)?;

    let embeddings = [
        ("exact-spectral", closed_form_minimizer(&g, k)?.matrix),
        ("trained", encoder.embedding(None)?.into_inner()),
        ("pca", pca_embedding(&obs.observation_matrix(), k)?.matrix),
    ];
    let pairs = |m: &DMatrix<f64>| m.row_iter().map(|r| [r[0], r[1]]).collect::<Vec<_>>();
    let mut entries = Vec::new();
    for (method, z) in embeddings {
        let fit = fit_linear_probe(&z, &task, true)?;
        entries.push(ProbeEntry {
            method,
            r_squared: fit.r_squared.mean,
            predictions: pairs(&fit.predictions),
        });
    }
    Ok(ProbeView {
        rows: GRID_ROWS,
        cols: GRID_COLS,
        targets: pairs(&task.targets),
        entries,
    })
}

fn to_json<T: Serialize>(r: stcl::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(kind: &str, a: usize, b: usize, laziness: f64, k: usize) -> String {
    to_json(spectrum(kind, a, b, laziness, k))
}

#[wasm_bindgen(js_name = trainRing)]
pub fn train_ring_js(
    n: usize,
    k: usize,
    steps: usize,
    empirical: bool,
    m: usize,
    t: usize,
    seed: u32,
) -> String {
    to_json(train_ring(n, k, steps, empirical, m, t, seed as u64))
}

#[wasm_bindgen(js_name = gridProbe)]
pub fn grid_probe_js(noise: f64, steps: usize, seed: u32) -> String {
    to_json(grid_probe(noise, steps, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_spectrum_view() {
        let v = spectrum("ring", 40, 0, 0.0, 3).unwrap();
        assert_eq!(v.n_states, 40);
        assert_eq!(v.eigenvectors.len(), 3);
        assert!((v.eigenvalues[0] - 1.0).abs() < 1e-10);
        assert!(spectrum("torus", 4, 4, 0.0, 2).is_err());
    }

    #[test]
    fn population_training_view_reaches_optimum() {
        let v = train_ring(30, 3, 800, false, 0, 0, 1).unwrap();
        let last = *v.population_loss.last().unwrap();
        assert!((last - v.optimum).abs() < 1e-3 * v.optimum.abs());
        assert!(v.mean_angle < 0.05);
        assert_eq!(v.steps.len(), v.population_loss.len());
    }

    #[test]
    fn probe_view_orders_methods() {
        let v = grid_probe(1.0, 2000, 0).unwrap();
        let r2 = |m: &str| v.entries.iter().find(|e| e.method == m).unwrap().r_squared;
        assert!(r2("exact-spectral") > 0.9);
        assert!(r2("trained") > r2("pca"));
        assert_eq!(v.targets.len(), 110);
    }

    #[test]
    fn errors_become_json() {
        let s = spectrum_js("ring", 2, 0, 0.0, 1);
        assert!(s.contains("\"error\""));
    }
}
