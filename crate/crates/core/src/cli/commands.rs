use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chains::{
    sample_trajectories, stationary_distribution, StationaryDist, TransitionKernel,
};
use crate::graph::{build_state_graph, StateGraph};
use crate::io::{
    eigenvalues_csv, fmt_f64, loss_curve_csv, matrix_csv, predictions_csv, write_json, write_text,
};
use crate::loss::{empirical_contrastive_loss, population_contrastive_loss, TransitionBatch};
use crate::probe::{fit_linear_probe, RSquared};
use crate::spectral::{
    closed_form_minimizer, eig_sym, pca_embedding, subspace_alignment, AlignmentReport,
};
use crate::tasks::{grid_coordinate_task, ring_pose_task, NoiseSpec, ObservationModel, ProbeTask};
use crate::train::{
    default_learning_rate, max_visit_frequency, train_stcl, Encoder, EncoderFile, EncoderKind,
    TrainConfig, TrainMode, TrainReport, TrainSource,
};

use super::config::{EnvironmentSpec, ExperimentConfig, ObservationSpec, ProbeMethod, TaskName};
use super::{CliError, Context};

/// Reversibility tolerance used when building the state graph.
const GRAPH_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Train,
    Probe,
    CompareLosses,
    Experiment,
}

/// Validated config plus everything derived from the environment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub kernel: TransitionKernel,
    pub pi: StationaryDist,
    pub graph: StateGraph,
    pub task: Option<ProbeTask>,
    pub observations: Option<ObservationModel>,
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let kernel = config.environment.build().ctx("environment")?;
        let pi = stationary_distribution(&kernel).ctx("environment")?;
        let graph = build_state_graph(&kernel, &pi, GRAPH_TOL).ctx("environment")?;
        let task = match (config.task, &config.environment) {
            (None, _) => None,
            (Some(TaskName::RingPose), env) => Some(ring_pose_task(env.n_states()).ctx("task")?),
            (Some(TaskName::GridCoordinates), EnvironmentSpec::Grid { rows, cols, .. }) => {
                Some(grid_coordinate_task(*rows, *cols).ctx("task")?)
            }
            (Some(t), _) => {
                return Err(CliError::Config(format!(
                    "task: {t:?} does not fit the environment"
                )))
            }
        };
        let observations = match config.observation {
            None => None,
            Some(ObservationSpec::OneHot) => Some(ObservationModel::one_hot(kernel.n_states())),
            Some(ObservationSpec::CoordinateNoise {
                nuisance_dims,
                nuisance_scale,
                noise_scale,
                seed,
            }) => {
                let clean = task
                    .as_ref()
                    .ok_or_else(|| CliError::Config("observation: needs a task".into()))?
                    .targets
                    .clone();
                let spec = NoiseSpec {
                    nuisance_dims,
                    nuisance_scale,
                    noise_scale,
                    seed,
                };
                Some(ObservationModel::coordinate_noise(clean, spec).ctx("observation")?)
            }
        };
        Ok(Self {
            config,
            kernel,
            pi,
            graph,
            task,
            observations,
        })
    }

    fn k(&self) -> usize {
        self.config.embedding.k
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    write_text(path, contents).ctx(&path.display().to_string())
}

fn write_json_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json(path, value).ctx(&path.display().to_string())
}

#[derive(Debug, Clone, Serialize)]
struct SpectrumSummary {
    environment: String,
    n_states: usize,
    k: usize,
    top_eigenvalues: Vec<f64>,
    spectral_gap: f64,
    tie_at_cutoff: bool,
    frobenius_norm_sq: f64,
    optimal_contrastive_loss: f64,
    stationary_min: f64,
    stationary_max: f64,
}

/// Writes the kernel, stationary distribution, eigenvalues, top-k
/// eigenvectors of the normalized adjacency and the closed-form minimizer.
pub fn run_spectrum(p: &Prepared, out: &Path) -> Result<(), CliError> {
    let k = p.k();
    let basis = eig_sym(p.graph.norm_adjacency()).ctx("spectrum")?;
    let minimizer = closed_form_minimizer(&p.graph, k).ctx("spectrum")?;
    let opt = population_contrastive_loss(&p.graph, &minimizer.to_embedding()).ctx("spectrum")?;

    write_json_file(&out.join("kernel.json"), &p.kernel.to_file())?;
    let pi = DMatrix::from_column_slice(p.pi.len(), 1, p.pi.as_slice());
    write(&out.join("stationary.csv"), &matrix_csv(&pi, "pi"))?;
    write(
        &out.join("eigenvalues.csv"),
        &eigenvalues_csv(&basis.values),
    )?;
    write(
        &out.join("eigenvectors.csv"),
        &matrix_csv(&basis.top_vectors(k), "u"),
    )?;
    write(
        &out.join("minimizer.csv"),
        &matrix_csv(&minimizer.matrix, "z"),
    )?;

    let values = basis.values.as_slice();
    let summary = SpectrumSummary {
        environment: p.kernel.label().to_string(),
        n_states: p.graph.n_states(),
        k,
        top_eigenvalues: values[..k].to_vec(),
        spectral_gap: values[0] - values.get(1).copied().unwrap_or(values[0]),
        tie_at_cutoff: minimizer.tie_at_cutoff,
        frobenius_norm_sq: p.graph.frobenius_norm_sq(),
        optimal_contrastive_loss: opt,
        stationary_min: p
            .pi
            .as_slice()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min),
        stationary_max: p.pi.as_slice().iter().copied().fold(0.0, f64::max),
    };
    if summary.tie_at_cutoff {
        warn!(
            "eigenvalues {k} and {} coincide; the top-{k} eigenspace is not unique",
            k + 1
        );
    }
    write_json_file(&out.join("spectrum.json"), &summary)?;
    info!("spectrum: lambda_1..{k} = {:?}", summary.top_eigenvalues);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct TrainSummary {
    mode: TrainMode,
    encoder: EncoderKind,
    k: usize,
    steps: usize,
    learning_rate: f64,
    restarts: usize,
    final_population_loss: Option<f64>,
    final_mf_loss: Option<f64>,
    optimal_contrastive_loss: f64,
    relative_gap: Option<f64>,
    alignment: Option<AlignmentReport>,
}

struct Trained {
    encoder: Encoder,
    report: TrainReport,
    embedding: DMatrix<f64>,
    summary: TrainSummary,
}

fn train_with_mode(p: &Prepared, mode: TrainMode, out: Option<&Path>) -> Result<Trained, CliError> {
    let cfg = &p.config;
    let t = &cfg.training;
    let k = p.k();
    let n = p.graph.n_states();

    let obs_matrix = p.observations.as_ref().map(|o| o.observation_matrix());
    let encoder = match t.encoder {
        EncoderKind::Tabular => Encoder::tabular(n, k, t.seed),
        EncoderKind::Linear => {
            let d = p.observations.as_ref().map(|o| o.dim()).unwrap_or(n);
            Encoder::linear(d, k, t.seed)
        }
    };
    let linear_obs = match t.encoder {
        EncoderKind::Linear => p.observations.as_ref(),
        EncoderKind::Tabular => None,
    };

    let s = &cfg.sampling;
    let ensemble = match mode {
        TrainMode::Population => None,
        TrainMode::Empirical => {
            let e = sample_trajectories(&p.kernel, s.init, s.m, s.t, s.seed).ctx("sampling")?;
            info!(
                "sampled {} chains with {} transitions",
                e.n_chains(),
                e.n_transitions()
            );
            Some(e)
        }
    };
    let max_mass = match &ensemble {
        Some(e) => max_visit_frequency(e),
        None => p.pi.as_slice().iter().copied().fold(0.0, f64::max),
    };
    let learning_rate = t
        .learning_rate
        .unwrap_or_else(|| default_learning_rate(max_mass));
    let train_cfg = TrainConfig {
        learning_rate,
        steps: t.steps,
        batch_size: t.batch_size,
        optimizer: t.optimizer,
        schedule: t.schedule,
        seed: t.seed,
        mode,
        eval_every: t.eval_every,
        negative_mode: t.negative_mode,
        burn_in: s.burn_in,
    };
    let source = match &ensemble {
        Some(e) => TrainSource::Empirical {
            ensemble: e,
            graph: Some(&p.graph),
        },
        None => TrainSource::Population(&p.graph),
    };
    let (encoder, report) = train_stcl(source, &encoder, &train_cfg, linear_obs).ctx("training")?;
    let z = encoder
        .embedding(linear_obs.and(obs_matrix.as_ref()))
        .ctx("training")?;

    let minimizer = closed_form_minimizer(&p.graph, k).ctx("training")?;
    let opt = population_contrastive_loss(&p.graph, &minimizer.to_embedding()).ctx("training")?;
    let top = eig_sym(p.graph.norm_adjacency())
        .ctx("training")?
        .top_vectors(k);
    let alignment = match subspace_alignment(&z.rescaled(&p.graph), &top) {
        Ok(a) => Some(a),
        Err(e) => {
            warn!("alignment skipped: {e}");
            None
        }
    };
    let relative_gap = report
        .final_population_loss
        .map(|l| (l - opt).abs() / opt.abs().max(f64::MIN_POSITIVE));
    if let Some(gap) = relative_gap {
        info!(
            "final population loss {:.6} vs closed-form optimum {opt:.6} (relative gap {gap:.3e})",
            report.final_population_loss.unwrap_or(f64::NAN)
        );
    }
    if let Some(a) = &alignment {
        info!(
            "mean principal angle to the top-{k} eigenspace: {:.3e} rad",
            a.mean_angle
        );
    }
    if let Some(e) = ensemble.as_ref().zip(out) {
        write_json_file(&e.1.join("trajectories.json"), e.0)?;
    }

    let summary = TrainSummary {
        mode,
        encoder: encoder.kind(),
        k,
        steps: t.steps,
        learning_rate: report.learning_rate,
        restarts: report.restarts,
        final_population_loss: report.final_population_loss,
        final_mf_loss: report.final_mf_loss,
        optimal_contrastive_loss: opt,
        relative_gap,
        alignment,
    };
    Ok(Trained {
        embedding: z.into_inner(),
        encoder,
        report,
        summary,
    })
}

/// Trains an encoder and writes it with its loss curve, embedding and summary.
pub fn run_train(p: &Prepared, out: &Path) -> Result<(), CliError> {
    let trained = train_with_mode(p, p.config.train_mode(), Some(out))?;
    write_json_file(&out.join("encoder.json"), &trained.encoder.to_file())?;
    write(
        &out.join("loss_curve.csv"),
        &loss_curve_csv(&trained.report),
    )?;
    write(
        &out.join("embedding.csv"),
        &matrix_csv(&trained.embedding, "z"),
    )?;
    write_json_file(&out.join("train_report.json"), &trained.summary)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub method: String,
    pub task: String,
    pub embedding_dim: usize,
    pub r_squared: RSquared,
}

#[derive(Debug, Clone, Serialize)]
struct ProbeSummary {
    task: String,
    intercept: bool,
    /// method -> mean R^2
    table: BTreeMap<String, f64>,
    rows: Vec<ProbeRow>,
}

fn probe_embedding(
    p: &Prepared,
    method: ProbeMethod,
    task: &ProbeTask,
) -> Result<DMatrix<f64>, CliError> {
    let k = p.k();
    let ctx = format!("probe.methods[{}]", method.name());
    Ok(match method {
        ProbeMethod::ExactSpectral => closed_form_minimizer(&p.graph, k).ctx(&ctx)?.matrix,
        ProbeMethod::Pca => {
            let obs = p
                .observations
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("{ctx}: needs an observation model")))?;
            pca_embedding(&obs.observation_matrix(), k)
                .ctx(&ctx)?
                .matrix
        }
        ProbeMethod::StclPopulation => train_with_mode(p, TrainMode::Population, None)?.embedding,
        ProbeMethod::StclEmpirical => train_with_mode(p, TrainMode::Empirical, None)?.embedding,
        ProbeMethod::GroundTruth => task.targets.clone(),
        ProbeMethod::EncoderFile => {
            let path =
                p.config.probe.encoder_path.as_ref().ok_or_else(|| {
                    CliError::Config(format!("{ctx}: probe.encoder_path is missing"))
                })?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let file: EncoderFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let encoder = Encoder::from_file(&file).ctx(&ctx)?;
            let obs = match encoder.kind() {
                EncoderKind::Linear => Some(
                    p.observations
                        .as_ref()
                        .ok_or_else(|| {
                            CliError::Config(format!("{ctx}: linear encoder needs observations"))
                        })?
                        .observation_matrix(),
                ),
                EncoderKind::Tabular => None,
            };
            encoder.embedding(obs.as_ref()).ctx(&ctx)?.into_inner()
        }
    })
}

/// Fits a linear probe per configured method and writes the R^2 table and
/// per-state predictions.
pub fn run_probe(p: &Prepared, out: &Path) -> Result<Vec<ProbeRow>, CliError> {
    let task = p
        .task
        .as_ref()
        .ok_or_else(|| CliError::Config("task: required by probe".into()))?;
    let intercept = p.config.probe.intercept;
    let mut rows = Vec::new();
    let mut table = BTreeMap::new();
    for &method in &p.config.probe.methods {
        let z = probe_embedding(p, method, task)?;
        let result = fit_linear_probe(&z, task, intercept)
            .ctx(&format!("probe.methods[{}]", method.name()))?;
        write(
            &out.join(format!("predictions_{}.csv", method.name())),
            &predictions_csv(task, &result),
        )?;
        info!(
            "probe {} on {}: R^2 = {:.4}",
            method.name(),
            task.name,
            result.r_squared.mean
        );
        table.insert(method.name().to_string(), result.r_squared.mean);
        rows.push(ProbeRow {
            method: method.name().to_string(),
            task: task.name.clone(),
            embedding_dim: z.ncols(),
            r_squared: result.r_squared,
        });
    }
    let summary = ProbeSummary {
        task: task.name.clone(),
        intercept,
        table,
        rows: rows.clone(),
    };
    write_json_file(&out.join("probe_summary.json"), &summary)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    /// Pooled transitions; the exhaustive row reports the number of weighted pairs.
    pub budget: usize,
    /// `None` for seed means and the exhaustive row.
    pub seed: Option<u64>,
    pub kind: &'static str,
    pub empirical_loss: f64,
    pub population_loss: f64,
    pub relative_error: f64,
}

fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = String::from("budget,seed,kind,empirical_loss,population_loss,relative_error\n");
    for r in rows {
        let seed = r.seed.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.budget,
            seed,
            r.kind,
            fmt_f64(r.empirical_loss),
            fmt_f64(r.population_loss),
            fmt_f64(r.relative_error)
        ));
    }
    s
}

/// Evaluates the sampled loss of the closed-form minimizer at growing sample
/// budgets against its exact population loss.
///
/// Each estimate pools every consecutive pair of `chains` chains of
/// `budget / chains + 1` states as positives, with all ordered cross pairs of
/// their first states as negatives.
pub fn run_compare_losses(p: &Prepared, out: &Path) -> Result<Vec<CompareRow>, CliError> {
    let c = &p.config.compare;
    let s = &p.config.sampling;
    let z = closed_form_minimizer(&p.graph, p.k())
        .ctx("compare")?
        .to_embedding();
    let population = population_contrastive_loss(&p.graph, &z).ctx("compare")?;
    let rel = |e: f64| (e - population).abs() / population.abs().max(f64::MIN_POSITIVE);

    let mut rows = Vec::new();
    for &budget in &c.budgets {
        let t = budget / c.chains + 1;
        let mut errors = Vec::with_capacity(c.seeds.len());
        let mut losses = Vec::with_capacity(c.seeds.len());
        for &seed in &c.seeds {
            let ensemble =
                sample_trajectories(&p.kernel, s.init, c.chains, t, seed).ctx("compare")?;
            let pairs: Vec<(usize, usize)> = ensemble
                .sequences
                .iter()
                .flat_map(|seq| seq.windows(2).map(|w| (w[0], w[1])))
                .collect();
            let batch = TransitionBatch::in_batch(pairs);
            let empirical = empirical_contrastive_loss(&batch, &z).ctx("compare")?;
            errors.push(rel(empirical));
            losses.push(empirical);
            rows.push(CompareRow {
                budget,
                seed: Some(seed),
                kind: "sampled",
                empirical_loss: empirical,
                population_loss: population,
                relative_error: rel(empirical),
            });
        }
        let mean_err = DVector::from_vec(errors).mean();
        info!("budget {budget}: mean relative error {mean_err:.3e}");
        rows.push(CompareRow {
            budget,
            seed: None,
            kind: "seed-mean",
            empirical_loss: DVector::from_vec(losses).mean(),
            population_loss: population,
            relative_error: mean_err,
        });
    }
    let exhaustive = TransitionBatch::exhaustive(&p.graph);
    let exact = empirical_contrastive_loss(&exhaustive, &z).ctx("compare")?;
    rows.push(CompareRow {
        budget: exhaustive.negatives.len(),
        seed: None,
        kind: "exhaustive",
        empirical_loss: exact,
        population_loss: population,
        relative_error: rel(exact),
    });
    write(&out.join("compare_losses.csv"), &compare_csv(&rows))?;
    Ok(rows)
}

/// spectrum, train and (when a task is configured) probe, each in its own subdirectory.
pub fn run_experiment(p: &Prepared, out: &Path) -> Result<(), CliError> {
    run_spectrum(p, &out.join("spectrum"))?;
    run_train(p, &out.join("train"))?;
    if p.task.is_some() {
        run_probe(p, &out.join("probe"))?;
    } else {
        info!("no task configured; skipping probe");
    }
    Ok(())
}

pub fn run_command(command: Command, config: ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let prepared = Prepared::new(config)?;
    match command {
        Command::Spectrum => run_spectrum(&prepared, out),
        Command::Train => run_train(&prepared, out),
        Command::Probe => run_probe(&prepared, out).map(|_| ()),
        Command::CompareLosses => run_compare_losses(&prepared, out).map(|_| ()),
        Command::Experiment => run_experiment(&prepared, out),
    }
}
