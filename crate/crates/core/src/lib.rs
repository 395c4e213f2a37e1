//! Spectral temporal contrastive learning (STCL) on finite reversible Markov chains.
//!
//! The crate follows the pipeline from dynamics to downstream evaluation:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`chains`] | ring, grid and random reversible kernels; stationary distributions; trajectory sampling |
//! | [`graph`] | state graph `A = diag(pi) P`, normalized adjacency and Laplacian |
//! | [`spectral`] | symmetric eigendecomposition, closed-form loss minimizer, PCA, subspace angles |
//! | [`loss`] | matrix-factorization loss, population and sampled contrastive losses, gradients, batching |
//! | [`train`] | gradient-descent training of tabular and linear encoders |
//! | [`tasks`] | observation models and probe targets (ring pose, grid coordinates) |
//! | [`probe`] | least-squares linear probes and R² |
//! | [`cli`] | JSON-configured experiment commands behind the `stcl` binary |
//!
//! ```
//! use stcl::chains::{build_ring_chain, stationary_distribution};
//! use stcl::graph::build_state_graph;
//! use stcl::spectral::closed_form_minimizer;
//! use stcl::loss::population_mf_loss;
//!
//! let kernel = build_ring_chain(20, 0.2).unwrap();
//! let pi = stationary_distribution(&kernel).unwrap();
//! let graph = build_state_graph(&kernel, &pi, 1e-10).unwrap();
//! let z = closed_form_minimizer(&graph, 3).unwrap();
//! let loss = population_mf_loss(&graph, &z.to_embedding()).unwrap();
//! assert!(loss < graph.frobenius_norm_sq());
//! ```

pub mod chains;
pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod loss;
pub mod probe;
pub mod spectral;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
