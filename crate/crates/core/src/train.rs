//! Gradient-descent training of tabular and linear encoders against the
//! contrastive loss, either exactly (population mode, needs the state graph)
//! or from minibatches of a trajectory ensemble (empirical mode).

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chains::{row_major, TrajectoryEnsemble};
use crate::graph::StateGraph;
use crate::loss::{
    loss_gradient, make_batches, population_contrastive_loss, population_mf_loss, BatchConfig,
    EmbeddingMatrix, LossSource, NegativeMode,
};
use crate::tasks::ObservationModel;
use crate::{Error, Result};

/// Standard deviation of freshly initialized encoder weights.
pub const INIT_SCALE: f64 = 1e-2;

/// A loss above this aborts the run as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Number of times the learning rate is halved before giving up.
pub const MAX_BACKOFFS: usize = 5;

/// Learning rate in the rescaled coordinates `W = D^{1/2} Z`; see [`default_learning_rate`].
pub const BASE_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Tabular,
    Linear,
}

/// Representation map `f`: a per-state table or a linear map of observation features.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    /// `N x k` embedding table indexed by state.
    Tabular(EmbeddingMatrix),
    /// `d x k` weights; `f(x) = W^T x`.
    Linear(DMatrix<f64>),
}

/// Argument of [`Encoder::encode`].
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a> {
    State(usize),
    Features(&'a DVector<f64>),
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // row-major fill so the draw order matches the serialized layout
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            scale * v
        })
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

impl Encoder {
    /// Tabular encoder with `N(0, INIT_SCALE^2)` entries.
    pub fn tabular(n_states: usize, k: usize, seed: u64) -> Self {
        Encoder::Tabular(EmbeddingMatrix(gaussian_matrix(
            n_states, k, INIT_SCALE, seed,
        )))
    }

    /// Linear encoder with `N(0, INIT_SCALE^2)` weights.
    pub fn linear(input_dim: usize, k: usize, seed: u64) -> Self {
        Encoder::Linear(gaussian_matrix(input_dim, k, INIT_SCALE, seed))
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Tabular(_) => EncoderKind::Tabular,
            Encoder::Linear(_) => EncoderKind::Linear,
        }
    }

    /// Output dimension `k`.
    pub fn dim(&self) -> usize {
        self.params().ncols()
    }

    pub fn params(&self) -> &DMatrix<f64> {
        match self {
            Encoder::Tabular(z) => z.as_matrix(),
            Encoder::Linear(w) => w,
        }
    }

    fn with_params(&self, params: DMatrix<f64>) -> Self {
        match self {
            Encoder::Tabular(_) => Encoder::Tabular(EmbeddingMatrix(params)),
            Encoder::Linear(_) => Encoder::Linear(params),
        }
    }

    pub fn encode(&self, input: EncoderInput<'_>) -> Result<DVector<f64>> {
        match (self, input) {
            (Encoder::Tabular(z), EncoderInput::State(s)) => {
                if s >= z.n_states() {
                    return Err(Error::InvalidArgument(format!(
                        "state {s} outside 0..{}",
                        z.n_states()
                    )));
                }
                Ok(z.as_matrix().row(s).transpose())
            }
            (Encoder::Linear(w), EncoderInput::Features(x)) => {
                if x.len() != w.nrows() {
                    return Err(Error::DimensionMismatch {
                        context: "linear encoder input",
                        expected: w.nrows(),
                        actual: x.len(),
                    });
                }
                Ok(w.tr_mul(x))
            }
            (Encoder::Tabular(_), EncoderInput::Features(_)) => Err(Error::InvalidArgument(
                "tabular encoders take state indices".into(),
            )),
            (Encoder::Linear(_), EncoderInput::State(_)) => Err(Error::InvalidArgument(
                "linear encoders take feature vectors".into(),
            )),
        }
    }

    /// Stacks `f(x_i)` for every state; linear encoders need the `N x d` observation matrix.
    pub fn embedding(&self, observations: Option<&DMatrix<f64>>) -> Result<EmbeddingMatrix> {
        match self {
            Encoder::Tabular(z) => Ok(z.clone()),
            Encoder::Linear(w) => {
                let x = observations.ok_or_else(|| {
                    Error::InvalidArgument("linear encoder needs an observation model".into())
                })?;
                if x.ncols() != w.nrows() {
                    return Err(Error::DimensionMismatch {
                        context: "observation dimension",
                        expected: w.nrows(),
                        actual: x.ncols(),
                    });
                }
                EmbeddingMatrix::new(x * w)
            }
        }
    }

    pub fn to_file(&self) -> EncoderFile {
        let p = self.params();
        EncoderFile {
            kind: self.kind(),
            rows: p.nrows(),
            cols: p.ncols(),
            weights: row_major(p),
        }
    }

    pub fn from_file(file: &EncoderFile) -> Result<Self> {
        if file.weights.len() != file.rows * file.cols {
            return Err(Error::DimensionMismatch {
                context: "encoder file weights",
                expected: file.rows * file.cols,
                actual: file.weights.len(),
            });
        }
        let m = DMatrix::from_row_slice(file.rows, file.cols, &file.weights);
        Ok(match file.kind {
            EncoderKind::Tabular => Encoder::Tabular(EmbeddingMatrix::new(m)?),
            EncoderKind::Linear => Encoder::Linear(m),
        })
    }
}

/// JSON layout of a trained encoder: kind, shape and row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderFile {
    pub kind: EncoderKind,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Optimizer {
    GradientDescent,
    Momentum { beta: f64 },
}

/// Step-size schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `lr * (1 + cos(pi * step / steps)) / 2`, which damps minibatch noise late in empirical runs.
    Cosine,
}

impl Schedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * step as f64 / steps as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Population,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub seed: u64,
    pub mode: TrainMode,
    pub eval_every: usize,
    pub negative_mode: NegativeMode,
    pub burn_in: usize,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument(
                "eval_every must be at least 1".into(),
            ));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidArgument(format!(
                    "momentum {beta} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// `BASE_LEARNING_RATE / max_i pi_i`. Tabular gradients carry a factor of
/// `pi_i` per row, so this is a step of `BASE_LEARNING_RATE` in the rescaled
/// coordinates for uniform `pi`.
pub fn default_learning_rate(max_state_mass: f64) -> f64 {
    BASE_LEARNING_RATE / max_state_mass
}

/// Largest pooled visit frequency of an ensemble, the empirical stand-in for `max pi`.
pub fn max_visit_frequency(ensemble: &TrajectoryEnsemble) -> f64 {
    let counts = ensemble.visit_counts();
    let total: usize = counts.iter().sum();
    counts.into_iter().max().unwrap_or(0) as f64 / total.max(1) as f64
}

/// Data to train from.
#[derive(Debug, Clone, Copy)]
pub enum TrainSource<'a> {
    Population(&'a StateGraph),
    /// The graph, when known, is used only to report exact population losses.
    Empirical {
        ensemble: &'a TrajectoryEnsemble,
        graph: Option<&'a StateGraph>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Population,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub mode: CurveKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Population points are exact contrastive losses; empirical points are
    /// the loss of the batch drawn at that step, before the update.
    pub loss_curve: Vec<LossPoint>,
    /// Exact contrastive loss of the final encoder, when the graph is known.
    pub final_population_loss: Option<f64>,
    /// Exact factorization loss of the final encoder, when the graph is known.
    pub final_mf_loss: Option<f64>,
    pub wall_steps: usize,
    /// Learning rate of the successful run after any divergence backoff.
    pub learning_rate: f64,
    pub restarts: usize,
}

/// Trains `encoder` with plain or momentum gradient descent.
///
/// On divergence the run restarts from the same initialization with half the
/// learning rate, up to [`MAX_BACKOFFS`] times.
pub fn train_stcl(
    source: TrainSource<'_>,
    encoder: &Encoder,
    config: &TrainConfig,
    observations: Option<&ObservationModel>,
) -> Result<(Encoder, TrainReport)> {
    config.validate()?;
    match (source, config.mode) {
        (TrainSource::Population(_), TrainMode::Population) => {}
        (TrainSource::Empirical { .. }, TrainMode::Empirical) => {}
        (_, mode) => {
            return Err(Error::InvalidArgument(format!(
                "{mode:?} mode does not match the training source"
            )));
        }
    }
    let n_states = match source {
        TrainSource::Population(g) => g.n_states(),
        TrainSource::Empirical { ensemble, .. } => ensemble.n_states,
    };
    let x = match encoder {
        Encoder::Tabular(z) => {
            if z.n_states() != n_states {
                return Err(Error::DimensionMismatch {
                    context: "tabular encoder rows",
                    expected: n_states,
                    actual: z.n_states(),
                });
            }
            None
        }
        Encoder::Linear(w) => {
            let obs = observations.ok_or_else(|| {
                Error::InvalidArgument("linear encoder needs an observation model".into())
            })?;
            if obs.n_states() != n_states || obs.dim() != w.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "observation model vs encoder",
                    expected: w.nrows(),
                    actual: obs.dim(),
                });
            }
            Some(obs.observation_matrix())
        }
    };

    let mut init = encoder.params().clone();
    if init.iter().all(|&v| v == 0.0) {
        warn!("zero initialization is a stationary point; perturbing with scale {INIT_SCALE}");
        init = gaussian_matrix(init.nrows(), init.ncols(), INIT_SCALE, config.seed ^ 0x5EED);
    }

    let mut lr = config.learning_rate;
    for attempt in 0..=MAX_BACKOFFS {
        match run(source, &init, x.as_ref(), config, lr) {
            Ok((params, mut report)) => {
                report.restarts = attempt;
                return Ok((encoder.with_params(params), report));
            }
            Err(Error::Diverged { step, loss, .. }) if attempt < MAX_BACKOFFS => {
                warn!("diverged at step {step} (loss {loss:e}) with learning rate {lr:e}; halving");
                lr /= 2.0;
            }
            Err(e) => return Err(e),
        }
    }
    unreachable!("the final attempt returns")
}

fn embed(params: &DMatrix<f64>, x: Option<&DMatrix<f64>>) -> EmbeddingMatrix {
    match x {
        Some(x) => EmbeddingMatrix(x * params),
        None => EmbeddingMatrix(params.clone()),
    }
}

fn run(
    source: TrainSource<'_>,
    init: &DMatrix<f64>,
    x: Option<&DMatrix<f64>>,
    config: &TrainConfig,
    lr: f64,
) -> Result<(DMatrix<f64>, TrainReport)> {
    let mut params = init.clone();
    let mut velocity = DMatrix::zeros(params.nrows(), params.ncols());
    let mut curve = Vec::new();

    let (graph, mut batches) = match source {
        TrainSource::Population(g) => (Some(g), None),
        TrainSource::Empirical { ensemble, graph } => {
            let cfg = BatchConfig {
                batch_size: config.batch_size,
                negative_mode: config.negative_mode,
                burn_in: config.burn_in,
            };
            (graph, Some(make_batches(ensemble, cfg, config.seed)?))
        }
    };

    for step in 0..config.steps {
        let z = embed(&params, x);
        let (loss, grad_z, kind) = match batches.as_mut() {
            None => {
                let g = graph.expect("population mode has a graph");
                let src = LossSource::Population(g);
                (
                    crate::loss::loss_value(src, &z)?,
                    loss_gradient(src, &z)?,
                    CurveKind::Population,
                )
            }
            Some(stream) => {
                let batch = stream.next().expect("batch streams are infinite");
                let src = LossSource::Empirical(&batch);
                (
                    crate::loss::loss_value(src, &z)?,
                    loss_gradient(src, &z)?,
                    CurveKind::Empirical,
                )
            }
        };
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged {
                step,
                loss,
                learning_rate: lr,
            });
        }
        if step % config.eval_every == 0 {
            curve.push(LossPoint {
                step,
                loss,
                mode: kind,
            });
            if let (CurveKind::Empirical, Some(g)) = (kind, graph) {
                curve.push(LossPoint {
                    step,
                    loss: population_contrastive_loss(g, &z)?,
                    mode: CurveKind::Population,
                });
            }
        }

        let grad = match x {
            Some(x) => x.tr_mul(&grad_z),
            None => grad_z,
        };
        let lr = lr * config.schedule.factor(step, config.steps);
        match config.optimizer {
            Optimizer::GradientDescent => params -= grad * lr,
            Optimizer::Momentum { beta } => {
                velocity *= beta;
                velocity += &grad;
                params -= &velocity * lr;
            }
        }
    }

    let z = embed(&params, x);
    let (final_population_loss, final_mf_loss) = match graph {
        Some(g) => {
            let cl = population_contrastive_loss(g, &z)?;
            if !cl.is_finite() || cl > DIVERGENCE_THRESHOLD {
                return Err(Error::Diverged {
                    step: config.steps,
                    loss: cl,
                    learning_rate: lr,
                });
            }
            curve.push(LossPoint {
                step: config.steps,
                loss: cl,
                mode: CurveKind::Population,
            });
            (Some(cl), Some(population_mf_loss(g, &z)?))
        }
        None => (None, None),
    };

    Ok((
        params,
        TrainReport {
            loss_curve: curve,
            final_population_loss,
            final_mf_loss,
            wall_steps: config.steps,
            learning_rate: lr,
            restarts: 0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{build_ring_chain, stationary_distribution};
    use crate::graph::build_state_graph;

    fn ring_graph(n: usize) -> StateGraph {
        let k = build_ring_chain(n, 0.0).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        build_state_graph(&k, &pi, 1e-10).unwrap()
    }

    fn config(lr: f64, steps: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            steps,
            batch_size: 16,
            optimizer: Optimizer::GradientDescent,
            schedule: Schedule::Constant,
            seed: 0,
            mode: TrainMode::Population,
            eval_every: 1,
            negative_mode: NegativeMode::InBatchCross,
            burn_in: 0,
        }
    }

    #[test]
    fn tabular_encode_is_row_lookup() {
        let e = Encoder::tabular(6, 3, 1);
        let row = e.encode(EncoderInput::State(0)).unwrap();
        assert_eq!(row, e.params().row(0).transpose());
        assert!(e.encode(EncoderInput::State(6)).is_err());
        assert!(e
            .encode(EncoderInput::Features(&DVector::zeros(6)))
            .is_err());
    }

    #[test]
    fn linear_encode_is_transpose_product() {
        let e = Encoder::linear(4, 2, 3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        assert_eq!(
            e.encode(EncoderInput::Features(&x)).unwrap(),
            e.params().transpose() * &x
        );
        assert!(e
            .encode(EncoderInput::Features(&DVector::zeros(3)))
            .is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_encoder_unchanged() {
        let g = ring_graph(10);
        let e = Encoder::tabular(10, 2, 5);
        let (out, report) =
            train_stcl(TrainSource::Population(&g), &e, &config(0.0, 20), None).unwrap();
        assert_eq!(out, e);
        let first = report.loss_curve[0].loss;
        assert!(report.loss_curve.iter().all(|p| p.loss == first));
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let g = ring_graph(10);
        let e = Encoder::tabular(10, 2, 5);
        let mut cfg = config(0.1, 5);
        cfg.mode = TrainMode::Empirical;
        assert!(train_stcl(TrainSource::Population(&g), &e, &cfg, None).is_err());
    }

    #[test]
    fn divergence_backs_off_then_fails() {
        let g = ring_graph(10);
        let e = Encoder::tabular(10, 2, 5);
        // absurd step sizes that survive five halvings still blow up
        let err = train_stcl(TrainSource::Population(&g), &e, &config(1e9, 50), None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
        // a moderately large step recovers after backoff
        let (_, report) =
            train_stcl(TrainSource::Population(&g), &e, &config(80.0, 200), None).unwrap();
        assert!(report.restarts > 0);
        assert!(report.learning_rate < 80.0);
    }

    #[test]
    fn zero_init_is_perturbed() {
        let g = ring_graph(10);
        let e = Encoder::Tabular(EmbeddingMatrix::zeros(10, 2));
        let (out, _) = train_stcl(TrainSource::Population(&g), &e, &config(1.0, 50), None).unwrap();
        assert!(out.params().amax() > 0.0);
    }

    #[test]
    fn encoder_file_round_trip() {
        let e = Encoder::linear(5, 3, 2);
        let json = serde_json::to_string(&e.to_file()).unwrap();
        let back = Encoder::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(e, back);
    }
}
