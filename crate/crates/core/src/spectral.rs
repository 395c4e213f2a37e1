//! Symmetric eigendecomposition, the closed-form minimizer of the
//! factorization loss, a PCA baseline and principal-angle diagnostics.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::Serialize;

use crate::graph::StateGraph;
use crate::loss::EmbeddingMatrix;
use crate::{Error, Result};

/// Largest tolerated `|M_ij - M_ji|` for [`eig_sym`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative singular-value cutoff for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Relative gap under which two eigen/singular values count as tied.
pub const TIE_RTOL: f64 = 1e-9;

/// Eigenpairs sorted by descending eigenvalue. Each eigenvector has its
/// largest-magnitude entry positive (first such entry on exact ties).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

impl EigenBasis {
    pub fn top_vectors(&self, k: usize) -> DMatrix<f64> {
        self.vectors.columns(0, k).into_owned()
    }

    pub fn top_values(&self, k: usize) -> DVector<f64> {
        self.values.rows(0, k).into_owned()
    }

    /// `U diag(values) U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        scaled * self.vectors.transpose()
    }
}

/// Full eigendecomposition of a symmetric matrix.
pub fn eig_sym(matrix: &DMatrix<f64>) -> Result<EigenBasis> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch {
            context: "eig_sym columns",
            expected: matrix.nrows(),
            actual: matrix.ncols(),
        });
    }
    let asym = (matrix - matrix.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric {
            max_asymmetry: asym,
        });
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let order = descending_order(eig.eigenvalues.as_slice());
    let n = matrix.nrows();
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_signs(&mut vectors);
    Ok(EigenBasis { vectors, values })
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal));
    order
}

/// Flips every column so that its entry of largest magnitude is positive.
pub fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// What produced a [`SpectralEmbedding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    ClosedFormMinimizer,
    RawEigenvectors,
    Pca,
}

/// `N x k` per-state embedding together with the spectrum it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    pub matrix: DMatrix<f64>,
    pub kind: EmbeddingKind,
    /// Eigenvalues (or singular values for PCA) of the full decomposition, descending.
    pub spectrum: Vec<f64>,
    /// The k-th and (k+1)-th values coincide, so the column span is not unique.
    pub tie_at_cutoff: bool,
}

impl SpectralEmbedding {
    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn to_embedding(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::new(self.matrix.clone()).expect("spectral embeddings are finite")
    }
}

fn tie_at(values: &[f64], k: usize) -> bool {
    if k == 0 || k >= values.len() {
        return false;
    }
    let (a, b) = (values[k - 1], values[k]);
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs()).max(1.0)
}

fn check_k(k: usize, limit: usize) -> Result<()> {
    if k == 0 || k > limit {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={limit}"
        )));
    }
    Ok(())
}

/// Top-`k` eigenvectors of `Abar` as an embedding (no degree rescaling).
pub fn top_eigenvectors(graph: &StateGraph, k: usize) -> Result<SpectralEmbedding> {
    check_k(k, graph.n_states())?;
    let basis = eig_sym(graph.norm_adjacency())?;
    Ok(SpectralEmbedding {
        matrix: basis.top_vectors(k),
        kind: EmbeddingKind::RawEigenvectors,
        tie_at_cutoff: tie_at(basis.values.as_slice(), k),
        spectrum: basis.values.iter().copied().collect(),
    })
}

/// `Z* = D^{-1/2} U_k max(Lambda_k, 0)^{1/2}`, the best rank-`k` factor of
/// `Abar` among `D^{1/2} Z Z^T D^{1/2}`. Negative eigenvalues cannot be
/// represented by a Gram matrix and are clipped to zero. The orthogonal
/// freedom `Z* Q` is fixed to `Q = I`.
pub fn closed_form_minimizer(graph: &StateGraph, k: usize) -> Result<SpectralEmbedding> {
    check_k(k, graph.n_states())?;
    let basis = eig_sym(graph.norm_adjacency())?;
    let inv_sqrt = graph.sqrt_degree().map(|s| 1.0 / s);
    let scale: Vec<f64> = (0..k).map(|j| basis.values[j].max(0.0).sqrt()).collect();
    let matrix = DMatrix::from_fn(graph.n_states(), k, |i, j| {
        inv_sqrt[i] * basis.vectors[(i, j)] * scale[j]
    });
    Ok(SpectralEmbedding {
        matrix,
        kind: EmbeddingKind::ClosedFormMinimizer,
        tie_at_cutoff: tie_at(basis.values.as_slice(), k),
        spectrum: basis.values.iter().copied().collect(),
    })
}

/// Projections of the mean-centered rows of `observations` onto the top-`k`
/// principal directions, i.e. `U_k Sigma_k` of the centered data.
pub fn pca_embedding(observations: &DMatrix<f64>, k: usize) -> Result<SpectralEmbedding> {
    let (n, d) = observations.shape();
    check_k(k, n.min(d))?;
    let mut centered = observations.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let svd = SVD::new(centered.clone(), false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut directions = v_t.rows(0, k).transpose();
    fix_signs(&mut directions);
    let spectrum: Vec<f64> = svd.singular_values.iter().copied().collect();
    Ok(SpectralEmbedding {
        matrix: centered * directions,
        kind: EmbeddingKind::Pca,
        tie_at_cutoff: tie_at(&spectrum, k),
        spectrum,
    })
}

/// Principal angles and Procrustes distance between two embeddings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    /// Radians, ascending, each in `[0, pi/2]`.
    pub principal_angles: Vec<f64>,
    pub mean_angle: f64,
    /// `min_Q ||a - b Q||_F` over orthogonal `Q`.
    pub procrustes_residual: f64,
}

fn orthonormal_basis(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = SVD::new(m.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let rank = if smax > 0.0 {
        svd.singular_values
            .iter()
            .filter(|&&s| s > RANK_RTOL * smax)
            .count()
    } else {
        0
    };
    (u.columns(0, rank.min(u.ncols())).into_owned(), rank)
}

/// Compares column spans of `a` and `b` (both `N x k`).
///
/// Cosines come from the singular values of `Qa^T Qb` and sines from those
/// of `Qb - Qa Qa^T Qb`; each angle uses whichever is better conditioned.
pub fn subspace_alignment(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<AlignmentReport> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "alignment rows",
            expected: a.nrows(),
            actual: b.nrows(),
        });
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            context: "alignment columns",
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    let k = a.ncols();
    let (qa, rank_a) = orthonormal_basis(a);
    let (qb, rank_b) = orthonormal_basis(b);
    if rank_a < k || rank_b < k {
        return Err(Error::RankDeficient { rank_a, rank_b, k });
    }

    let cross = qa.transpose() * &qb;
    let cosines = SVD::new(cross.clone(), false, false).singular_values;
    let residual = &qb - &qa * cross;
    let mut sines: Vec<f64> = SVD::new(residual, false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sines.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let mut cos_sorted: Vec<f64> = cosines.iter().copied().collect();
    cos_sorted.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));

    let mut angles: Vec<f64> = cos_sorted
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c >= 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let mean_angle = angles.iter().sum::<f64>() / k as f64;

    Ok(AlignmentReport {
        principal_angles: angles,
        mean_angle,
        procrustes_residual: procrustes_residual(a, b),
    })
}

/// `min_Q ||a - b Q||_F` with `Q = U V^T` from the SVD of `b^T a`.
pub fn procrustes_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = b.transpose() * a;
    let svd = SVD::new(m, true, true);
    let q = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
    (a - b * q).norm()
}
