//! Finite-state Markov chains: kernel constructors, stationary distributions,
//! detailed-balance checks and seeded trajectory ensembles.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on row sums of a transition kernel.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Residual target for power iteration, measured as `||pi P - pi||_1`.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Iteration cap for [`stationary_distribution`].
pub const STATIONARY_MAX_ITERS: usize = 500_000;

/// Connectivity retries for [`build_random_reversible_chain`].
pub const MAX_CONNECTIVITY_RETRIES: usize = 100;

/// Row-stochastic transition matrix over `N` discrete states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    probs: DMatrix<f64>,
    label: String,
}

impl TransitionKernel {
    /// Validates and wraps a dense row-stochastic matrix.
    pub fn new(probs: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        if probs.nrows() != probs.ncols() {
            return Err(Error::DimensionMismatch {
                context: "transition kernel columns",
                expected: probs.nrows(),
                actual: probs.ncols(),
            });
        }
        if probs.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "kernel must have at least one state".into(),
            ));
        }
        for (row, r) in probs.row_iter().enumerate() {
            if r.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "row {row} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row, sum });
            }
        }
        Ok(Self {
            probs,
            label: label.into(),
        })
    }

    /// Builds `P(i,j) = W_ij / sum_j W_ij` from a symmetric non-negative weight matrix.
    /// The result is reversible with `pi_i` proportional to the row sums of `W`.
    pub fn from_symmetric_weights(
        weights: &DMatrix<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "weight matrix columns",
                expected: n,
                actual: weights.ncols(),
            });
        }
        let mut probs = DMatrix::zeros(n, n);
        for i in 0..n {
            let total: f64 = weights.row(i).iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "state {i} has no outgoing weight"
                )));
            }
            for j in 0..n {
                probs[(i, j)] = weights[(i, j)] / total;
            }
        }
        Self::new(probs, label)
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[(from, to)]
    }

    /// Human-readable identifier of the constructor and its parameters.
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Positive-probability successors of every state, in index order.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        (0..self.n_states())
            .map(|i| {
                (0..self.n_states())
                    .filter(|&j| self.probs[(i, j)] > 0.0)
                    .collect()
            })
            .collect()
    }

    pub fn to_file(&self) -> KernelFile {
        KernelFile {
            n_states: self.n_states(),
            label: self.label.clone(),
            probs: row_major(&self.probs),
        }
    }

    pub fn from_file(file: &KernelFile) -> Result<Self> {
        let n = file.n_states;
        if file.probs.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "kernel file probs",
                expected: n * n,
                actual: file.probs.len(),
            });
        }
        Self::new(
            DMatrix::from_row_slice(n, n, &file.probs),
            file.label.clone(),
        )
    }
}

/// JSON schema for a kernel: `n_states`, `label`, and the row-major probability array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub n_states: usize,
    pub label: String,
    pub probs: Vec<f64>,
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter()
        .flat_map(|r| r.iter().copied().collect::<Vec<_>>())
        .collect()
}

/// Stationary distribution `pi` of a kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pi: DVector<f64>,
}

impl StationaryDist {
    /// Wraps a probability vector; entries must be non-negative and sum to one.
    pub fn new(pi: DVector<f64>) -> Result<Self> {
        if pi.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "stationary distribution has a negative or non-finite entry".into(),
            ));
        }
        let sum = pi.sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "stationary distribution sums to {sum}"
            )));
        }
        Ok(Self { pi })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            pi: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn as_slice(&self) -> &[f64] {
        self.pi.as_slice()
    }

    pub fn get(&self, state: usize) -> f64 {
        self.pi[state]
    }

    /// `||pi P - pi||_1` against the given kernel.
    pub fn residual(&self, kernel: &TransitionKernel) -> f64 {
        (kernel.probs().tr_mul(&self.pi) - &self.pi).lp_norm(1)
    }
}

/// Lazy symmetric ring walk: step to either neighbor with probability
/// `(1 - laziness) / 2`, stay with probability `laziness`.
pub fn build_ring_chain(n: usize, laziness: f64) -> Result<TransitionKernel> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "ring needs at least 3 states, got {n}"
        )));
    }
    check_laziness(laziness)?;
    let step = (1.0 - laziness) / 2.0;
    let mut probs = DMatrix::zeros(n, n);
    for i in 0..n {
        probs[(i, (i + 1) % n)] += step;
        probs[(i, (i + n - 1) % n)] += step;
        probs[(i, i)] += laziness;
    }
    TransitionKernel::new(probs, format!("ring(n={n},laziness={laziness})"))
}

/// Random-walk flavour on a grid graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    /// Uniform move to a grid neighbor; stationary mass proportional to degree.
    DegreeWalk,
    /// Metropolis-Hastings correction of the degree walk; uniform stationary mass.
    MetropolisUniform,
}

impl std::fmt::Display for GridMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridMode::DegreeWalk => f.write_str("degree-walk"),
            GridMode::MetropolisUniform => f.write_str("metropolis-uniform"),
        }
    }
}

/// Row-major index of grid cell `(row, col)`.
pub fn grid_index(row: usize, col: usize, cols: usize) -> usize {
    row * cols + col
}

/// `(row, col)` of a row-major grid state.
pub fn grid_position(state: usize, cols: usize) -> (usize, usize) {
    (state / cols, state % cols)
}

/// 4-connected neighbors of every cell of a `rows x cols` grid.
pub fn grid_neighbors(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(4); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let s = grid_index(r, c, cols);
            if r > 0 {
                out[s].push(grid_index(r - 1, c, cols));
            }
            if r + 1 < rows {
                out[s].push(grid_index(r + 1, c, cols));
            }
            if c > 0 {
                out[s].push(grid_index(r, c - 1, cols));
            }
            if c + 1 < cols {
                out[s].push(grid_index(r, c + 1, cols));
            }
        }
    }
    out
}

pub fn build_grid_chain(
    rows: usize,
    cols: usize,
    mode: GridMode,
    laziness: f64,
) -> Result<TransitionKernel> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid {rows}x{cols} must have at least 2 cells"
        )));
    }
    check_laziness(laziness)?;
    let neighbors = grid_neighbors(rows, cols);
    let n = rows * cols;
    let mut probs = DMatrix::zeros(n, n);
    for (i, nbrs) in neighbors.iter().enumerate() {
        let deg_i = nbrs.len() as f64;
        let mut moved = 0.0;
        for &j in nbrs {
            let p = match mode {
                GridMode::DegreeWalk => 1.0 / deg_i,
                // min(1, deg_i / deg_j) / deg_i
                GridMode::MetropolisUniform => 1.0 / deg_i.max(neighbors[j].len() as f64),
            };
            let p = (1.0 - laziness) * p;
            probs[(i, j)] = p;
            moved += p;
        }
        probs[(i, i)] = 1.0 - moved;
    }
    TransitionKernel::new(
        probs,
        format!("grid(rows={rows},cols={cols},mode={mode},laziness={laziness})"),
    )
}

/// Random reversible chain from a symmetric weight matrix with edge density
/// `density`. Graphs are redrawn until connected, at most
/// [`MAX_CONNECTIVITY_RETRIES`] times.
pub fn build_random_reversible_chain(
    n: usize,
    density: f64,
    seed: u64,
) -> Result<TransitionKernel> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 states, got {n}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "density {density} outside (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_CONNECTIVITY_RETRIES {
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < density {
                    // (0, 1]
                    let w = 1.0 - rng.random::<f64>();
                    weights[(i, j)] = w;
                    weights[(j, i)] = w;
                }
            }
        }
        let support: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| weights[(i, j)] > 0.0).collect())
            .collect();
        if first_unreachable(&support).is_none() {
            return TransitionKernel::from_symmetric_weights(
                &weights,
                format!("random-reversible(n={n},density={density},seed={seed})"),
            );
        }
    }
    Err(Error::Disconnected {
        attempts: MAX_CONNECTIVITY_RETRIES,
    })
}

fn check_laziness(laziness: f64) -> Result<()> {
    if !(0.0..1.0).contains(&laziness) {
        return Err(Error::InvalidArgument(format!(
            "laziness {laziness} outside [0, 1)"
        )));
    }
    Ok(())
}

/// First state not reachable from state 0 by breadth-first search.
fn first_unreachable(adj: &[Vec<usize>]) -> Option<usize> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Checks strong connectivity of the positive-probability support.
pub fn check_irreducible(kernel: &TransitionKernel) -> Result<()> {
    let forward = kernel.successors();
    if let Some(s) = first_unreachable(&forward) {
        return Err(Error::Reducible { unreachable: s });
    }
    let mut backward = vec![Vec::new(); forward.len()];
    for (i, succ) in forward.iter().enumerate() {
        for &j in succ {
            backward[j].push(i);
        }
    }
    // a state that cannot reach 0 is equally a sign of reducibility
    if let Some(s) = first_unreachable(&backward) {
        return Err(Error::Reducible { unreachable: s });
    }
    Ok(())
}

/// Power iteration for `pi^T P = pi^T`, run on the lazy kernel `(P + I) / 2`
/// so that periodic chains still converge. Starts from the uniform vector.
pub fn stationary_distribution(kernel: &TransitionKernel) -> Result<StationaryDist> {
    check_irreducible(kernel)?;
    let n = kernel.n_states();
    let pt = kernel.probs().transpose();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_MAX_ITERS {
        pt.mul_to(&pi, &mut next);
        residual = (&next - &pi).lp_norm(1);
        if residual <= STATIONARY_TOL {
            let total = next.sum();
            next /= total;
            return StationaryDist::new(next);
        }
        pi += &next;
        pi *= 0.5;
        let total = pi.sum();
        pi /= total;
    }
    Err(Error::NotConverged {
        iterations: STATIONARY_MAX_ITERS,
        residual,
    })
}

/// Outcome of a detailed-balance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reversibility {
    pub reversible: bool,
    pub max_violation: f64,
}

/// `max_{i,j} |pi_i P(i,j) - pi_j P(j,i)|` compared against `tol`.
pub fn check_reversibility(
    kernel: &TransitionKernel,
    pi: &StationaryDist,
    tol: f64,
) -> Reversibility {
    let n = kernel.n_states();
    let mut max_violation = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (pi.get(i) * kernel.prob(i, j) - pi.get(j) * kernel.prob(j, i)).abs();
            max_violation = max_violation.max(v);
        }
    }
    Reversibility {
        reversible: max_violation <= tol,
        max_violation,
    }
}

/// How the first state of every sampled chain is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "state")]
pub enum InitialState {
    Stationary,
    Uniform,
    Fixed(usize),
}

/// `M` state-index sequences sampled from one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEnsemble {
    pub n_states: usize,
    pub seed: u64,
    pub kernel_id: String,
    pub sequences: Vec<Vec<usize>>,
}

impl TrajectoryEnsemble {
    pub fn n_chains(&self) -> usize {
        self.sequences.len()
    }

    /// Total number of consecutive pairs across all chains.
    pub fn n_transitions(&self) -> usize {
        self.sequences
            .iter()
            .map(|s| s.len().saturating_sub(1))
            .sum()
    }

    pub fn visit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_states];
        for s in self.sequences.iter().flatten() {
            counts[*s] += 1;
        }
        counts
    }

    /// Counts of `(s_t, s_{t+1})` pairs.
    pub fn transition_counts(&self) -> DMatrix<f64> {
        let mut counts = DMatrix::zeros(self.n_states, self.n_states);
        for seq in &self.sequences {
            for w in seq.windows(2) {
                counts[(w[0], w[1])] += 1.0;
            }
        }
        counts
    }

    /// Checks index ranges and that every step has positive probability under `kernel`.
    pub fn validate(&self, kernel: &TransitionKernel) -> Result<()> {
        if self.n_states != kernel.n_states() {
            return Err(Error::DimensionMismatch {
                context: "ensemble states",
                expected: kernel.n_states(),
                actual: self.n_states,
            });
        }
        for (c, seq) in self.sequences.iter().enumerate() {
            if let Some(&s) = seq.iter().find(|&&s| s >= self.n_states) {
                return Err(Error::InvalidArgument(format!(
                    "chain {c} visits invalid state {s}"
                )));
            }
            if let Some(w) = seq.windows(2).find(|w| kernel.prob(w[0], w[1]) <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "chain {c} contains impossible step {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over the positive entries of a probability vector.
#[derive(Debug, Clone)]
pub(crate) struct Categorical {
    states: Vec<usize>,
    cumulative: Vec<f64>,
}

impl Categorical {
    pub(crate) fn new(probs: impl IntoIterator<Item = f64>) -> Self {
        let mut states = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (s, p) in probs.into_iter().enumerate() {
            if p > 0.0 {
                acc += p;
                states.push(s);
                cumulative.push(acc);
            }
        }
        Self { states, cumulative }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty distribution");
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.states[k.min(self.states.len() - 1)]
    }
}

/// Per-chain generator: chain `c` draws from stream `c` of the seed, so each
/// chain is reproducible on its own regardless of sampling order.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Samples `m` independent chains of length `t`.
pub fn sample_trajectories(
    kernel: &TransitionKernel,
    init: InitialState,
    m: usize,
    t: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    if t < 2 {
        return Err(Error::InvalidArgument(format!("chain length {t} < 2")));
    }
    let n = kernel.n_states();
    let start = match init {
        InitialState::Stationary => {
            Categorical::new(stationary_distribution(kernel)?.as_slice().iter().copied())
        }
        InitialState::Uniform => Categorical::new(std::iter::repeat_n(1.0, n)),
        InitialState::Fixed(s) if s < n => {
            Categorical::new((0..n).map(|i| if i == s { 1.0 } else { 0.0 }))
        }
        InitialState::Fixed(s) => {
            return Err(Error::InvalidArgument(format!(
                "initial state {s} out of range"
            )));
        }
    };
    let rows: Vec<Categorical> = kernel
        .probs()
        .row_iter()
        .map(|r| Categorical::new(r.iter().copied()))
        .collect();

    let sequences = (0..m)
        .map(|c| {
            let mut rng = chain_rng(seed, c as u64);
            let mut seq = Vec::with_capacity(t);
            let mut s = start.sample(&mut rng);
            seq.push(s);
            for _ in 1..t {
                s = rows[s].sample(&mut rng);
                seq.push(s);
            }
            seq
        })
        .collect();

    Ok(TrajectoryEnsemble {
        n_states: n,
        seed,
        kernel_id: kernel.label().to_string(),
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unidirectional_cycle(n: usize) -> TransitionKernel {
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            p[(i, (i + 1) % n)] = 1.0;
        }
        TransitionKernel::new(p, "cycle").unwrap()
    }

    /// Independent route: solve `(P^T - I) pi = 0` with the normalization row replaced in.
    fn linear_solve_stationary(kernel: &TransitionKernel) -> DVector<f64> {
        let n = kernel.n_states();
        let mut m = kernel.probs().transpose() - DMatrix::identity(n, n);
        let mut rhs = DVector::zeros(n);
        for j in 0..n {
            m[(n - 1, j)] = 1.0;
        }
        rhs[n - 1] = 1.0;
        m.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn ring_of_four_moves_to_neighbors() {
        let k = build_ring_chain(4, 0.0).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.5, 0.0, 0.5, //
                0.5, 0.0, 0.5, 0.0, //
                0.0, 0.5, 0.0, 0.5, //
                0.5, 0.0, 0.5, 0.0,
            ],
        );
        assert_eq!(k.probs(), &expected);
    }

    #[test]
    fn ring_rejects_bad_arguments() {
        assert!(build_ring_chain(2, 0.0).is_err());
        assert!(build_ring_chain(5, 1.0).is_err());
        assert!(build_ring_chain(5, -0.1).is_err());
    }

    #[test]
    fn ring_stationary_is_uniform() {
        for laziness in [0.0, 0.1] {
            let k = build_ring_chain(100, laziness).unwrap();
            let pi = stationary_distribution(&k).unwrap();
            let oracle = linear_solve_stationary(&k);
            for i in 0..100 {
                assert!((pi.get(i) - 0.01).abs() < 1e-12);
                assert!((oracle[i] - 0.01).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degree_walk_grid_stationary_is_degree_over_two_edges() {
        let k = build_grid_chain(11, 10, GridMode::DegreeWalk, 0.0).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        let nbrs = grid_neighbors(11, 10);
        // |E| = 11*9 + 10*10 = 199
        for (i, nb) in nbrs.iter().enumerate() {
            assert!(
                (pi.get(i) - nb.len() as f64 / 398.0).abs() < 1e-10,
                "state {i}"
            );
        }
        assert!((pi.get(0) - 2.0 / 398.0).abs() < 1e-10);
        let oracle = linear_solve_stationary(&k);
        assert!((&oracle - pi.as_vector()).amax() < 1e-10);
        assert!(pi.residual(&k) < 1e-10);
    }

    #[test]
    fn metropolis_grid_is_uniform_and_reversible() {
        let k = build_grid_chain(2, 2, GridMode::MetropolisUniform, 0.0).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        for i in 0..4 {
            assert!((pi.get(i) - 0.25).abs() < 1e-12);
        }
        let k = build_grid_chain(11, 10, GridMode::MetropolisUniform, 0.0).unwrap();
        let pi = stationary_distribution(&k).unwrap();
        assert!((pi.as_vector() - DVector::from_element(110, 1.0 / 110.0)).amax() < 1e-12);
        let rev = check_reversibility(&k, &pi, 1e-10);
        assert!(rev.reversible, "{rev:?}");
    }

    #[test]
    fn grid_rejects_single_cell() {
        assert!(build_grid_chain(1, 1, GridMode::DegreeWalk, 0.0).is_err());
        assert!(build_grid_chain(0, 5, GridMode::DegreeWalk, 0.0).is_err());
        assert!(build_grid_chain(1, 2, GridMode::DegreeWalk, 0.0).is_ok());
    }

    #[test]
    fn random_chain_two_states() {
        for seed in 0..5 {
            let k = build_random_reversible_chain(2, 1.0, seed).unwrap();
            assert!(k.prob(0, 1) > 0.0 && k.prob(1, 0) > 0.0);
            for r in k.probs().row_iter() {
                assert!((r.sum() - 1.0).abs() < ROW_SUM_TOL);
            }
        }
    }

    #[test]
    fn random_chain_is_reversible_and_deterministic() {
        let a = build_random_reversible_chain(20, 0.3, 7).unwrap();
        let b = build_random_reversible_chain(20, 0.3, 7).unwrap();
        assert_eq!(a, b);
        let pi = stationary_distribution(&a).unwrap();
        assert!(check_reversibility(&a, &pi, 1e-10).reversible);
    }

    #[test]
    fn random_chain_gives_up_when_disconnected() {
        let err = build_random_reversible_chain(40, 1e-4, 1).unwrap_err();
        assert!(matches!(err, Error::Disconnected { attempts: 100 }));
    }

    #[test]
    fn reversibility_of_symmetric_and_cyclic_kernels() {
        let k = build_ring_chain(6, 0.2).unwrap();
        let r = check_reversibility(&k, &StationaryDist::uniform(6), 0.0);
        assert!(r.reversible);
        assert_eq!(r.max_violation, 0.0);

        let cyc = unidirectional_cycle(3);
        let r = check_reversibility(&cyc, &StationaryDist::uniform(3), 1e-10);
        assert!(!r.reversible);
        assert!((r.max_violation - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_chains_converge() {
        let cyc = unidirectional_cycle(3);
        let pi = stationary_distribution(&cyc).unwrap();
        assert!((pi.get(0) - 1.0 / 3.0).abs() < 1e-12);
        let two = build_grid_chain(1, 2, GridMode::DegreeWalk, 0.0).unwrap();
        let pi = stationary_distribution(&two).unwrap();
        assert!((pi.get(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reducible_chain_is_reported() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5]);
        let k = TransitionKernel::new(p, "split").unwrap();
        assert!(matches!(
            stationary_distribution(&k),
            Err(Error::Reducible { .. })
        ));
        // absorbing state: everything reaches 2 but 2 reaches nothing else
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let k = TransitionKernel::new(p, "absorbing").unwrap();
        assert!(matches!(
            stationary_distribution(&k),
            Err(Error::Reducible { .. })
        ));
    }

    #[test]
    fn kernel_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
        assert!(matches!(
            TransitionKernel::new(bad, "x"),
            Err(Error::NotStochastic { row: 0, .. })
        ));
        let neg = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 0.5, 0.5]);
        assert!(TransitionKernel::new(neg, "x").is_err());
    }

    #[test]
    fn kernel_file_round_trip() {
        let k = build_grid_chain(3, 2, GridMode::DegreeWalk, 0.25).unwrap();
        let json = serde_json::to_string(&k.to_file()).unwrap();
        let back = TransitionKernel::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(k, back);
    }

    #[test]
    fn fixed_start_ring_trajectory() {
        let k = build_ring_chain(4, 0.0).unwrap();
        let e = sample_trajectories(&k, InitialState::Fixed(0), 1, 3, 11).unwrap();
        let seq = &e.sequences[0];
        assert_eq!(seq.len(), 3);
        assert_eq!(seq[0], 0);
        for w in seq.windows(2) {
            let d = (w[1] + 4 - w[0]) % 4;
            assert!(d == 1 || d == 3);
        }
        e.validate(&k).unwrap();
    }

    #[test]
    fn sampling_is_deterministic_and_per_chain() {
        let k = build_ring_chain(10, 0.1).unwrap();
        let a = sample_trajectories(&k, InitialState::Stationary, 5, 50, 3).unwrap();
        let b = sample_trajectories(&k, InitialState::Stationary, 5, 50, 3).unwrap();
        assert_eq!(a, b);
        // chain c depends only on (seed, c): a shorter ensemble is a prefix
        let c = sample_trajectories(&k, InitialState::Stationary, 2, 50, 3).unwrap();
        assert_eq!(&a.sequences[..2], &c.sequences[..]);
        let d = sample_trajectories(&k, InitialState::Stationary, 5, 50, 4).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn sampling_rejects_bad_shapes() {
        let k = build_ring_chain(5, 0.0).unwrap();
        assert!(sample_trajectories(&k, InitialState::Uniform, 0, 5, 0).is_err());
        assert!(sample_trajectories(&k, InitialState::Uniform, 1, 1, 0).is_err());
        assert!(sample_trajectories(&k, InitialState::Fixed(5), 1, 5, 0).is_err());
    }

    #[test]
    fn validate_catches_impossible_steps() {
        let k = build_ring_chain(5, 0.0).unwrap();
        let e = TrajectoryEnsemble {
            n_states: 5,
            seed: 0,
            kernel_id: k.label().into(),
            sequences: vec![vec![0, 2]],
        };
        assert!(e.validate(&k).is_err());
    }
}
