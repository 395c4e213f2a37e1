//! State graph of a reversible chain: `A = diag(pi) P`, `D = diag(pi)`,
//! `Abar = D^{-1/2} A D^{-1/2}` and `Lbar = I - Abar`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chains::{check_reversibility, row_major, StationaryDist, TransitionKernel};
use crate::{Error, Result};

/// Dense state graph. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGraph {
    adjacency: DMatrix<f64>,
    degree: DVector<f64>,
    sqrt_degree: DVector<f64>,
    norm_adjacency: DMatrix<f64>,
    norm_laplacian: DMatrix<f64>,
}

/// Builds the state graph after verifying detailed balance at `tol`.
///
/// `A` is symmetrized as `(A + A^T) / 2` after the check so that every
/// downstream eigensolve sees an exactly symmetric matrix.
pub fn build_state_graph(
    kernel: &TransitionKernel,
    pi: &StationaryDist,
    tol: f64,
) -> Result<StateGraph> {
    let n = kernel.n_states();
    if pi.len() != n {
        return Err(Error::DimensionMismatch {
            context: "stationary distribution length",
            expected: n,
            actual: pi.len(),
        });
    }
    if let Some(state) = pi.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::ZeroMass { state });
    }
    let rev = check_reversibility(kernel, pi, tol);
    if !rev.reversible {
        return Err(Error::Irreversible {
            max_violation: rev.max_violation,
        });
    }

    let mut adjacency = DMatrix::from_fn(n, n, |i, j| pi.get(i) * kernel.prob(i, j));
    adjacency = (&adjacency + adjacency.transpose()) * 0.5;
    StateGraph::from_parts(adjacency, pi.as_vector().clone())
}

impl StateGraph {
    /// Assembles a graph from a symmetric adjacency and a positive degree vector.
    pub fn from_parts(adjacency: DMatrix<f64>, degree: DVector<f64>) -> Result<Self> {
        let n = degree.len();
        if adjacency.nrows() != n || adjacency.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "adjacency size",
                expected: n,
                actual: adjacency.nrows(),
            });
        }
        if let Some(state) = degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::ZeroMass { state });
        }
        let sqrt_degree = degree.map(f64::sqrt);
        let inv_sqrt = sqrt_degree.map(|s| 1.0 / s);
        // s_i * s_j is commutative in floating point, so Abar stays exactly symmetric
        let norm_adjacency =
            DMatrix::from_fn(n, n, |i, j| adjacency[(i, j)] * (inv_sqrt[i] * inv_sqrt[j]));
        let norm_laplacian = DMatrix::identity(n, n) - &norm_adjacency;
        Ok(Self {
            adjacency,
            degree,
            sqrt_degree,
            norm_adjacency,
            norm_laplacian,
        })
    }

    pub fn n_states(&self) -> usize {
        self.degree.len()
    }

    /// `A_ij = pi_i P(i,j)`, the joint law of a stationary transition.
    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Diagonal of `D`, equal to `pi`.
    pub fn degree(&self) -> &DVector<f64> {
        &self.degree
    }

    /// Diagonal of `D^{1/2}`.
    pub fn sqrt_degree(&self) -> &DVector<f64> {
        &self.sqrt_degree
    }

    pub fn norm_adjacency(&self) -> &DMatrix<f64> {
        &self.norm_adjacency
    }

    pub fn norm_laplacian(&self) -> &DMatrix<f64> {
        &self.norm_laplacian
    }

    /// `||Abar||_F^2`, the constant separating the factorization loss from the contrastive loss.
    pub fn frobenius_norm_sq(&self) -> f64 {
        self.norm_adjacency.norm_squared()
    }

    /// Max violation of the structural invariants; used by tests and `--check` style tooling.
    pub fn invariant_report(&self) -> GraphInvariants {
        let n = self.n_states();
        let a = &self.adjacency;
        let asym = (a - a.transpose()).amax();
        let row_sum_err = (0..n)
            .map(|i| (a.row(i).sum() - self.degree[i]).abs())
            .fold(0.0, f64::max);
        let top = &self.norm_adjacency * &self.sqrt_degree - &self.sqrt_degree;
        let identity_err =
            (&self.norm_adjacency + &self.norm_laplacian - DMatrix::identity(n, n)).amax();
        GraphInvariants {
            adjacency_asymmetry: asym,
            degree_row_sum_error: row_sum_err,
            top_eigenvector_error: top.amax(),
            adjacency_plus_laplacian_error: identity_err,
        }
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            n_states: self.n_states(),
            adjacency: row_major(&self.adjacency),
            degree: self.degree.iter().copied().collect(),
            norm_adjacency: row_major(&self.norm_adjacency),
            norm_laplacian: row_major(&self.norm_laplacian),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphInvariants {
    pub adjacency_asymmetry: f64,
    pub degree_row_sum_error: f64,
    pub top_eigenvector_error: f64,
    pub adjacency_plus_laplacian_error: f64,
}

/// JSON layout of a state graph; every matrix is dense row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n_states: usize,
    pub adjacency: Vec<f64>,
    pub degree: Vec<f64>,
    pub norm_adjacency: Vec<f64>,
    pub norm_laplacian: Vec<f64>,
}
