//! JSON experiment configuration. Unknown keys are rejected and every value
//! that a module would later refuse is checked up front.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chains::{
    build_grid_chain, build_random_reversible_chain, build_ring_chain, GridMode, InitialState,
    TransitionKernel,
};
use crate::loss::NegativeMode;
use crate::tasks::DEFAULT_NUISANCE_SCALE;
use crate::train::{EncoderKind, Optimizer, Schedule, TrainMode};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub task: Option<TaskName>,
    #[serde(default)]
    pub observation: Option<ObservationSpec>,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum EnvironmentSpec {
    Ring {
        n: usize,
        #[serde(default)]
        laziness: f64,
    },
    Grid {
        rows: usize,
        cols: usize,
        #[serde(default = "default_grid_mode")]
        mode: GridMode,
        #[serde(default)]
        laziness: f64,
    },
    RandomReversible {
        n: usize,
        density: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_grid_mode() -> GridMode {
    GridMode::MetropolisUniform
}

impl EnvironmentSpec {
    pub fn build(&self) -> crate::Result<TransitionKernel> {
        match *self {
            EnvironmentSpec::Ring { n, laziness } => build_ring_chain(n, laziness),
            EnvironmentSpec::Grid {
                rows,
                cols,
                mode,
                laziness,
            } => build_grid_chain(rows, cols, mode, laziness),
            EnvironmentSpec::RandomReversible { n, density, seed } => {
                build_random_reversible_chain(n, density, seed)
            }
        }
    }

    pub fn n_states(&self) -> usize {
        match *self {
            EnvironmentSpec::Ring { n, .. } | EnvironmentSpec::RandomReversible { n, .. } => n,
            EnvironmentSpec::Grid { rows, cols, .. } => rows * cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMethod {
    StclPopulation,
    StclEmpirical,
    ExactSpectral,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_method")]
    pub method: EmbeddingMethod,
}

fn default_k() -> usize {
    8
}

fn default_method() -> EmbeddingMethod {
    EmbeddingMethod::StclPopulation
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        Self {
            k: default_k(),
            method: default_method(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_init")]
    pub init: InitialState,
}

fn default_m() -> usize {
    10
}

fn default_t() -> usize {
    10_000
}

fn default_init() -> InitialState {
    InitialState::Stationary
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            m: default_m(),
            t: default_t(),
            seed: 0,
            burn_in: 0,
            init: default_init(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    /// Defaults to `0.1 / max pi` (see `train::default_learning_rate`).
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    /// Derived from `embedding.method` when absent.
    #[serde(default)]
    pub mode: Option<TrainMode>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub negative_mode: NegativeMode,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
}

fn default_steps() -> usize {
    5000
}

fn default_batch_size() -> usize {
    256
}

fn default_optimizer() -> Optimizer {
    Optimizer::GradientDescent
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

fn default_eval_every() -> usize {
    50
}

fn default_encoder() -> EncoderKind {
    EncoderKind::Tabular
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            learning_rate: None,
            steps: default_steps(),
            batch_size: default_batch_size(),
            optimizer: default_optimizer(),
            schedule: default_schedule(),
            seed: 0,
            mode: None,
            eval_every: default_eval_every(),
            negative_mode: NegativeMode::default(),
            encoder: default_encoder(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskName {
    RingPose,
    GridCoordinates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ObservationSpec {
    OneHot,
    CoordinateNoise {
        nuisance_dims: usize,
        #[serde(default = "default_nuisance_scale")]
        nuisance_scale: f64,
        noise_scale: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_nuisance_scale() -> f64 {
    DEFAULT_NUISANCE_SCALE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMethod {
    ExactSpectral,
    Pca,
    StclPopulation,
    StclEmpirical,
    GroundTruth,
    EncoderFile,
}

impl ProbeMethod {
    pub fn name(self) -> &'static str {
        match self {
            ProbeMethod::ExactSpectral => "exact-spectral",
            ProbeMethod::Pca => "pca",
            ProbeMethod::StclPopulation => "stcl-population",
            ProbeMethod::StclEmpirical => "stcl-empirical",
            ProbeMethod::GroundTruth => "ground-truth",
            ProbeMethod::EncoderFile => "encoder-file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_probe_methods")]
    pub methods: Vec<ProbeMethod>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    /// Trained encoder for the `encoder-file` method.
    #[serde(default)]
    pub encoder_path: Option<PathBuf>,
}

fn default_probe_methods() -> Vec<ProbeMethod> {
    vec![ProbeMethod::ExactSpectral, ProbeMethod::GroundTruth]
}

fn default_true() -> bool {
    true
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            methods: default_probe_methods(),
            intercept: true,
            encoder_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// Number of sampled transitions per estimate.
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_compare_seeds")]
    pub seeds: Vec<u64>,
    /// Chains per ensemble; each chain has `budget / chains + 1` states.
    #[serde(default = "default_m")]
    pub chains: usize,
}

fn default_budgets() -> Vec<usize> {
    vec![100, 1_000, 10_000, 100_000]
}

fn default_compare_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl Default for CompareSpec {
    fn default() -> Self {
        Self {
            budgets: default_budgets(),
            seeds: default_compare_seeds(),
            chains: default_m(),
        }
    }
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Replaces every seed in the configuration; comparison seeds become
    /// `seed, seed + 1, ...` with their original count.
    pub fn override_seed(&mut self, seed: u64) {
        self.sampling.seed = seed;
        self.training.seed = seed;
        if let Some(ObservationSpec::CoordinateNoise { seed: s, .. }) = self.observation.as_mut() {
            *s = seed;
        }
        let count = self.compare.seeds.len() as u64;
        self.compare.seeds = (0..count).map(|i| seed.wrapping_add(i)).collect();
    }

    pub fn train_mode(&self) -> TrainMode {
        self.training.mode.unwrap_or(match self.embedding.method {
            EmbeddingMethod::StclEmpirical => TrainMode::Empirical,
            _ => TrainMode::Population,
        })
    }

    /// Checks everything that can be checked without running an experiment.
    pub fn validate(&self) -> Result<(), CliError> {
        let kernel = self
            .environment
            .build()
            .map_err(|e| invalid("environment", e))?;
        let n = kernel.n_states();

        let k = self.embedding.k;
        if k == 0 || k > n {
            return Err(invalid("embedding.k", format!("{k} must lie in 1..={n}")));
        }

        let s = &self.sampling;
        if s.m == 0 {
            return Err(invalid("sampling.m", "need at least one chain"));
        }
        if s.t < 2 {
            return Err(invalid("sampling.t", "chains need at least 2 states"));
        }
        if s.burn_in + 2 > s.t {
            return Err(invalid("sampling.burn_in", "leaves no transitions to pool"));
        }
        if let InitialState::Fixed(st) = s.init {
            if st >= n {
                return Err(invalid(
                    "sampling.init",
                    format!("state {st} outside 0..{n}"),
                ));
            }
        }

        let t = &self.training;
        if let Some(lr) = t.learning_rate {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(invalid(
                    "training.learning_rate",
                    "must be finite and non-negative",
                ));
            }
        }
        if t.steps == 0 {
            return Err(invalid("training.steps", "must be at least 1"));
        }
        if t.eval_every == 0 {
            return Err(invalid("training.eval_every", "must be at least 1"));
        }
        if t.batch_size == 0 || (t.negative_mode == NegativeMode::InBatchCross && t.batch_size < 2)
        {
            return Err(invalid(
                "training.batch_size",
                "must be positive, and at least 2 for in-batch-cross negatives",
            ));
        }
        if let Optimizer::Momentum { beta } = t.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid("training.optimizer.beta", "must lie in [0, 1)"));
            }
        }
        if t.encoder == EncoderKind::Linear && self.observation.is_none() {
            return Err(invalid(
                "training.encoder",
                "linear encoders need an observation model",
            ));
        }
        if let Some(mode) = t.mode {
            let implied = match self.embedding.method {
                EmbeddingMethod::StclPopulation => Some(TrainMode::Population),
                EmbeddingMethod::StclEmpirical => Some(TrainMode::Empirical),
                _ => None,
            };
            if implied.is_some_and(|m| m != mode) {
                return Err(invalid("training.mode", "contradicts embedding.method"));
            }
        }

        match (self.task, &self.environment) {
            (Some(TaskName::RingPose), EnvironmentSpec::Ring { .. }) | (None, _) => {}
            (Some(TaskName::GridCoordinates), EnvironmentSpec::Grid { rows, cols, .. }) => {
                if *rows < 2 || *cols < 2 {
                    return Err(invalid("task", "grid coordinates need at least a 2x2 grid"));
                }
            }
            (Some(task), _) => {
                return Err(invalid(
                    "task",
                    format!("{task:?} does not fit the environment"),
                ));
            }
        }

        if let Some(ObservationSpec::CoordinateNoise {
            nuisance_scale,
            noise_scale,
            ..
        }) = self.observation
        {
            if self.task.is_none() {
                return Err(invalid(
                    "observation",
                    "coordinate-noise observations are built from the task targets",
                ));
            }
            if !(nuisance_scale >= 0.0 && noise_scale >= 0.0) {
                return Err(invalid("observation", "scales must be non-negative"));
            }
        }

        let needs_pca = self.embedding.method == EmbeddingMethod::Pca
            || self.probe.methods.contains(&ProbeMethod::Pca);
        if needs_pca && self.observation.is_none() {
            return Err(invalid("observation", "pca needs an observation model"));
        }
        if self.probe.methods.contains(&ProbeMethod::EncoderFile)
            && self.probe.encoder_path.is_none()
        {
            return Err(invalid(
                "probe.encoder_path",
                "required by the encoder-file method",
            ));
        }

        let c = &self.compare;
        if c.chains == 0 {
            return Err(invalid("compare.chains", "need at least one chain"));
        }
        if c.seeds.is_empty() {
            return Err(invalid("compare.seeds", "need at least one seed"));
        }
        if let Some(&b) = c.budgets.iter().find(|&&b| b < c.chains) {
            return Err(invalid(
                "compare.budgets",
                format!("budget {b} is below the chain count"),
            ));
        }
        Ok(())
    }
}
