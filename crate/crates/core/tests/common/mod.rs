#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stcl::chains::{
    build_random_reversible_chain, build_ring_chain, stationary_distribution, TransitionKernel,
};
use stcl::graph::{build_state_graph, StateGraph};
use stcl::loss::EmbeddingMatrix;

pub fn graph_of(kernel: &TransitionKernel) -> StateGraph {
    let pi = stationary_distribution(kernel).unwrap();
    build_state_graph(kernel, &pi, 1e-10).unwrap()
}

pub fn ring_graph(n: usize, laziness: f64) -> StateGraph {
    graph_of(&build_ring_chain(n, laziness).unwrap())
}

pub fn random_graph(n: usize, density: f64, seed: u64) -> StateGraph {
    graph_of(&build_random_reversible_chain(n, density, seed).unwrap())
}

/// Entries uniform in `[-scale, scale]`.
pub fn random_z(n: usize, k: usize, scale: f64, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingMatrix::new(DMatrix::from_fn(n, k, |_, _| {
        rng.random_range(-scale..scale)
    }))
    .unwrap()
}

/// Dense solve of `pi^T (P - I) = 0` with `sum pi = 1`, independent of power iteration.
pub fn stationary_by_solve(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    let mut m = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    m.lu().solve(&rhs).unwrap().iter().copied().collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
