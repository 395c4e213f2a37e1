//! Population factorization loss, population and sampled contrastive losses,
//! their gradients, and minibatch construction from trajectory ensembles.
//!
//! With `W = D^{1/2} Z` the factorization loss expands as
//!
//! ```text
//! ||Abar - W W^T||_F^2 = ||Abar||_F^2 - 2 sum_ij A_ij z_i.z_j + sum_ij pi_i pi_j (z_i.z_j)^2
//! ```
//!
//! so the contrastive loss (the last two terms) differs from it by the
//! constant `||Abar||_F^2` and shares its gradient.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chains::TrajectoryEnsemble;
use crate::graph::StateGraph;
use crate::{Error, Result};

/// `N x k` representation matrix whose row `i` is `f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(pub(crate) DMatrix<f64>);

impl EmbeddingMatrix {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "embedding has non-finite entries".into(),
            ));
        }
        Ok(Self(z))
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self(DMatrix::zeros(n, k))
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `D^{1/2} Z`, the rescaled representation that enters the factorization loss.
    pub fn rescaled(&self, graph: &StateGraph) -> DMatrix<f64> {
        scale_rows(&self.0, graph.sqrt_degree())
    }
}

fn scale_rows(z: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| s[i] * z[(i, j)])
}

fn check_rows(graph: &StateGraph, z: &EmbeddingMatrix) -> Result<()> {
    if z.n_states() != graph.n_states() {
        return Err(Error::DimensionMismatch {
            context: "embedding rows vs graph states",
            expected: graph.n_states(),
            actual: z.n_states(),
        });
    }
    Ok(())
}

/// `||Abar - D^{1/2} Z Z^T D^{1/2}||_F^2`.
pub fn population_mf_loss(graph: &StateGraph, z: &EmbeddingMatrix) -> Result<f64> {
    check_rows(graph, z)?;
    let w = z.rescaled(graph);
    Ok((graph.norm_adjacency() - &w * w.transpose()).norm_squared())
}

/// `-2 sum_ij pi_i P(i,j) z_i.z_j + sum_ij pi_i pi_j (z_i.z_j)^2`.
pub fn population_contrastive_loss(graph: &StateGraph, z: &EmbeddingMatrix) -> Result<f64> {
    check_rows(graph, z)?;
    let z = z.as_matrix();
    let az = graph.adjacency() * z;
    let positive = z.component_mul(&az).sum();
    let w = scale_rows(z, graph.sqrt_degree());
    let gram = w.transpose() * &w;
    Ok(-2.0 * positive + gram.norm_squared())
}

/// Negative pairs of a [`TransitionBatch`].
#[derive(Debug, Clone, PartialEq)]
pub enum Negatives {
    /// Explicit ordered pairs `(a, b)`; uniform weights when `weights` is `None`.
    Pairs {
        pairs: Vec<(usize, usize)>,
        weights: Option<Vec<f64>>,
    },
    /// Every ordered pair `(anchors[p], anchors[q])` with `p != q`, uniformly weighted.
    /// Equal states at different positions still form a pair.
    CrossProduct(Vec<usize>),
}

impl Negatives {
    pub fn len(&self) -> usize {
        match self {
            Negatives::Pairs { pairs, .. } => pairs.len(),
            Negatives::CrossProduct(a) => a.len() * a.len().saturating_sub(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Materializes the pair list (quadratic in the anchor count for cross products).
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match self {
            Negatives::Pairs { pairs, .. } => pairs.clone(),
            Negatives::CrossProduct(a) => {
                let mut out = Vec::with_capacity(self.len());
                for (p, &x) in a.iter().enumerate() {
                    for (q, &y) in a.iter().enumerate() {
                        if p != q {
                            out.push((x, y));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Positive (consecutive) and negative (independent) state pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub positives: Vec<(usize, usize)>,
    /// Uniform weights when `None`.
    pub positive_weights: Option<Vec<f64>>,
    pub negatives: Negatives,
}

impl TransitionBatch {
    /// Uniformly weighted positives and explicit negatives.
    pub fn new(positives: Vec<(usize, usize)>, negatives: Vec<(usize, usize)>) -> Self {
        Self {
            positives,
            positive_weights: None,
            negatives: Negatives::Pairs {
                pairs: negatives,
                weights: None,
            },
        }
    }

    /// Negatives are all cross pairs of the positives' first elements.
    pub fn in_batch(positives: Vec<(usize, usize)>) -> Self {
        let anchors = positives.iter().map(|p| p.0).collect();
        Self {
            positives,
            positive_weights: None,
            negatives: Negatives::CrossProduct(anchors),
        }
    }

    /// Every transition weighted by `A_ij` and every ordered state pair by
    /// `pi_a pi_b`: the exact expectation behind the sampled estimator.
    pub fn exhaustive(graph: &StateGraph) -> Self {
        let n = graph.n_states();
        let a = graph.adjacency();
        let pi = graph.degree();
        let mut positives = Vec::new();
        let mut pw = Vec::new();
        let mut negatives = Vec::with_capacity(n * n);
        let mut nw = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] > 0.0 {
                    positives.push((i, j));
                    pw.push(a[(i, j)]);
                }
                negatives.push((i, j));
                nw.push(pi[i] * pi[j]);
            }
        }
        Self {
            positives,
            positive_weights: Some(pw),
            negatives: Negatives::Pairs {
                pairs: negatives,
                weights: Some(nw),
            },
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::EmptyBatch("positive"));
        }
        if self.negatives.is_empty() {
            return Err(Error::EmptyBatch("negative"));
        }
        let bad = |&(a, b): &(usize, usize)| a >= n || b >= n;
        let neg_bad = match &self.negatives {
            Negatives::Pairs { pairs, weights } => {
                if let Some(w) = weights {
                    if w.len() != pairs.len() {
                        return Err(Error::DimensionMismatch {
                            context: "negative weights",
                            expected: pairs.len(),
                            actual: w.len(),
                        });
                    }
                }
                pairs.iter().any(bad)
            }
            Negatives::CrossProduct(a) => a.iter().any(|&s| s >= n),
        };
        if self.positives.iter().any(bad) || neg_bad {
            return Err(Error::InvalidArgument(format!(
                "batch index outside 0..{n}"
            )));
        }
        if let Some(w) = &self.positive_weights {
            if w.len() != self.positives.len() {
                return Err(Error::DimensionMismatch {
                    context: "positive weights",
                    expected: self.positives.len(),
                    actual: w.len(),
                });
            }
        }
        Ok(())
    }
}

fn dot(z: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    z.row(a).dot(&z.row(b))
}

fn weight_iter(weights: &Option<Vec<f64>>, len: usize) -> impl Iterator<Item = f64> + '_ {
    let uniform = 1.0 / len as f64;
    (0..len).map(move |p| weights.as_ref().map_or(uniform, |w| w[p]))
}

/// `-2 * mean z_i.z_j over positives + mean (z_a.z_b)^2 over negatives`,
/// with explicit weights replacing the means when present.
pub fn empirical_contrastive_loss(batch: &TransitionBatch, z: &EmbeddingMatrix) -> Result<f64> {
    batch.validate(z.n_states())?;
    let z = z.as_matrix();
    let positive: f64 = batch
        .positives
        .iter()
        .zip(weight_iter(&batch.positive_weights, batch.positives.len()))
        .map(|(&(i, j), w)| w * dot(z, i, j))
        .sum();
    let negative = match &batch.negatives {
        Negatives::Pairs { pairs, weights } => pairs
            .iter()
            .zip(weight_iter(weights, pairs.len()))
            .map(|(&(a, b), w)| w * dot(z, a, b).powi(2))
            .sum(),
        Negatives::CrossProduct(anchors) => {
            // sum_{p != q} (z_p.z_q)^2 = ||Zb^T Zb||_F^2 - sum_p ||z_p||^4
            let zb = gather_rows(z, anchors);
            let m = zb.transpose() * &zb;
            let diag: f64 = zb.row_iter().map(|r| r.norm_squared().powi(2)).sum();
            (m.norm_squared() - diag) / batch.negatives.len() as f64
        }
    };
    Ok(-2.0 * positive + negative)
}

fn gather_rows(z: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), z.ncols(), |p, j| z[(rows[p], j)])
}

/// Which loss a gradient or value refers to.
#[derive(Debug, Clone, Copy)]
pub enum LossSource<'a> {
    /// Exact contrastive loss of a state graph (same gradient as the factorization loss).
    Population(&'a StateGraph),
    /// Sampled estimator over one batch.
    Empirical(&'a TransitionBatch),
}

pub fn loss_value(source: LossSource<'_>, z: &EmbeddingMatrix) -> Result<f64> {
    match source {
        LossSource::Population(g) => population_contrastive_loss(g, z),
        LossSource::Empirical(b) => empirical_contrastive_loss(b, z),
    }
}

/// Exact gradient of the selected loss with respect to every entry of `z`.
///
/// Population: `-4 A Z + 4 D Z (Z^T D Z)`. Empirical: rows of states absent
/// from the batch are zero.
pub fn loss_gradient(source: LossSource<'_>, z: &EmbeddingMatrix) -> Result<DMatrix<f64>> {
    match source {
        LossSource::Population(graph) => {
            check_rows(graph, z)?;
            let zm = z.as_matrix();
            let dz = scale_rows(zm, graph.degree());
            let gram = zm.transpose() * &dz;
            Ok(graph.adjacency() * zm * -4.0 + dz * gram * 4.0)
        }
        LossSource::Empirical(batch) => {
            batch.validate(z.n_states())?;
            let zm = z.as_matrix();
            let k = zm.ncols();
            let mut grad = DMatrix::zeros(zm.nrows(), k);
            for (&(i, j), w) in batch
                .positives
                .iter()
                .zip(weight_iter(&batch.positive_weights, batch.positives.len()))
            {
                let zi = zm.row(i).into_owned();
                let zj = zm.row(j).into_owned();
                let mut gi = grad.row_mut(i);
                gi -= zj * (2.0 * w);
                let mut gj = grad.row_mut(j);
                gj -= zi * (2.0 * w);
            }
            match &batch.negatives {
                Negatives::Pairs { pairs, weights } => {
                    for (&(a, b), w) in pairs.iter().zip(weight_iter(weights, pairs.len())) {
                        let za = zm.row(a).into_owned();
                        let zb = zm.row(b).into_owned();
                        let c = 2.0 * w * za.dot(&zb);
                        let mut ga = grad.row_mut(a);
                        ga += &zb * c;
                        let mut gb = grad.row_mut(b);
                        gb += za * c;
                    }
                }
                Negatives::CrossProduct(anchors) => {
                    // d/dz_p = 4 (M z_p - ||z_p||^2 z_p) / (B (B - 1))
                    let scale = 4.0 / batch.negatives.len() as f64;
                    let zb = gather_rows(zm, anchors);
                    let m = zb.transpose() * &zb;
                    let mz = &zb * &m;
                    for (p, &s) in anchors.iter().enumerate() {
                        let zp = zb.row(p);
                        let g = (mz.row(p) - zp * zp.norm_squared()) * scale;
                        let mut gs = grad.row_mut(s);
                        gs += g;
                    }
                }
            }
            Ok(grad)
        }
    }
}

/// How negatives are formed from a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Cross pairs of the positives' first elements.
    #[default]
    InBatchCross,
    /// Fresh uniform draws of pooled states, one pair per positive.
    IndependentResample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub negative_mode: NegativeMode,
    /// States dropped from the front of every chain before pooling.
    pub burn_in: usize,
}

/// Infinite, seeded stream of minibatches drawn from a pooled ensemble.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pairs: Vec<(usize, usize)>,
    states: Vec<usize>,
    config: BatchConfig,
    rng: ChaCha8Rng,
}

/// Pools consecutive pairs from every chain (after burn-in) and samples
/// positives uniformly with replacement, treating pooled states as draws from `pi`.
pub fn make_batches(
    ensemble: &TrajectoryEnsemble,
    config: BatchConfig,
    seed: u64,
) -> Result<BatchStream> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if config.negative_mode == NegativeMode::InBatchCross && config.batch_size < 2 {
        return Err(Error::InvalidArgument(
            "in-batch-cross negatives need a batch size of at least 2".into(),
        ));
    }
    let mut pairs = Vec::new();
    let mut states = Vec::new();
    for seq in &ensemble.sequences {
        let kept = seq.get(config.burn_in..).unwrap_or(&[]);
        pairs.extend(kept.windows(2).map(|w| (w[0], w[1])));
        states.extend_from_slice(kept);
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("pooled transition"));
    }
    Ok(BatchStream {
        pairs,
        states,
        config,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl BatchStream {
    pub fn pooled_pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pooled_states(&self) -> &[usize] {
        &self.states
    }
}

impl Iterator for BatchStream {
    type Item = TransitionBatch;

    fn next(&mut self) -> Option<TransitionBatch> {
        let b = self.config.batch_size;
        let positives: Vec<(usize, usize)> = (0..b)
            .map(|_| self.pairs[self.rng.random_range(0..self.pairs.len())])
            .collect();
        Some(match self.config.negative_mode {
            NegativeMode::InBatchCross => TransitionBatch::in_batch(positives),
            NegativeMode::IndependentResample => {
                let n = self.states.len();
                let negatives = (0..b)
                    .map(|_| {
                        let a = self.states[self.rng.random_range(0..n)];
                        let c = self.states[self.rng.random_range(0..n)];
                        (a, c)
                    })
                    .collect();
                TransitionBatch::new(positives, negatives)
            }
        })
    }
}
