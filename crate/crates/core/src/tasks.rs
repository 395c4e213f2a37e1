//! Observation models and downstream regression targets.
//!
//! Pixel observations are replaced by two synthetic models: one-hot state
//! indicators, and clean coordinates padded with random nuisance features and
//! per-state noise. Both are fixed functions of the state, so repeated visits
//! yield the same observation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chains::{chain_rng, grid_position};
use crate::{Error, Result};

/// Default standard deviation of nuisance features in the coordinate-noise model.
pub const DEFAULT_NUISANCE_SCALE: f64 = 2.0;

/// Per-state regression targets, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTask {
    pub name: String,
    pub targets: DMatrix<f64>,
}

impl ProbeTask {
    pub fn n_states(&self) -> usize {
        self.targets.nrows()
    }
}

/// `(cos theta_i, sin theta_i)` with `theta_i = 2 pi i / n`: the pose of a
/// rotating object visited by a ring walk.
pub fn ring_pose_task(n: usize) -> Result<ProbeTask> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "ring pose needs n >= 3, got {n}"
        )));
    }
    let targets = DMatrix::from_fn(n, 2, |i, j| {
        let theta = 2.0 * PI * i as f64 / n as f64;
        if j == 0 {
            theta.cos()
        } else {
            theta.sin()
        }
    });
    Ok(ProbeTask {
        name: "ring-pose".into(),
        targets,
    })
}

/// Mean-centered `(col, row)` coordinates of every cell of a row-major grid.
pub fn grid_coordinate_task(rows: usize, cols: usize) -> Result<ProbeTask> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid coordinates need at least 2x2, got {rows}x{cols}"
        )));
    }
    let mid_col = (cols - 1) as f64 / 2.0;
    let mid_row = (rows - 1) as f64 / 2.0;
    let targets = DMatrix::from_fn(rows * cols, 2, |s, j| {
        let (r, c) = grid_position(s, cols);
        if j == 0 {
            c as f64 - mid_col
        } else {
            r as f64 - mid_row
        }
    });
    Ok(ProbeTask {
        name: "grid-coordinates".into(),
        targets,
    })
}

/// Maps a state index to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationModel {
    OneHot {
        n_states: usize,
    },
    /// `[clean_i + noise, nuisance_i + noise]`, where nuisance features have
    /// standard deviation `nuisance_scale` and every dimension gets Gaussian
    /// noise of standard deviation `noise_scale`. All draws are seeded per
    /// `(seed, state)`.
    CoordinateNoise {
        clean: DMatrix<f64>,
        nuisance_dims: usize,
        nuisance_scale: f64,
        noise_scale: f64,
        seed: u64,
    },
}

/// Serializable parameters of the coordinate-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub nuisance_dims: usize,
    #[serde(default = "default_nuisance_scale")]
    pub nuisance_scale: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_nuisance_scale() -> f64 {
    DEFAULT_NUISANCE_SCALE
}

impl ObservationModel {
    pub fn one_hot(n_states: usize) -> Self {
        Self::OneHot { n_states }
    }

    pub fn coordinate_noise(clean: DMatrix<f64>, spec: NoiseSpec) -> Result<Self> {
        if !(spec.noise_scale >= 0.0 && spec.nuisance_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise scales must be non-negative".into(),
            ));
        }
        Ok(Self::CoordinateNoise {
            clean,
            nuisance_dims: spec.nuisance_dims,
            nuisance_scale: spec.nuisance_scale,
            noise_scale: spec.noise_scale,
            seed: spec.seed,
        })
    }

    pub fn n_states(&self) -> usize {
        match self {
            Self::OneHot { n_states } => *n_states,
            Self::CoordinateNoise { clean, .. } => clean.nrows(),
        }
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Self::OneHot { n_states } => *n_states,
            Self::CoordinateNoise {
                clean,
                nuisance_dims,
                ..
            } => clean.ncols() + nuisance_dims,
        }
    }

    pub fn observe(&self, state: usize) -> Result<DVector<f64>> {
        if state >= self.n_states() {
            return Err(Error::InvalidArgument(format!(
                "state {state} outside 0..{}",
                self.n_states()
            )));
        }
        Ok(match self {
            Self::OneHot { n_states } => {
                let mut e = DVector::zeros(*n_states);
                e[state] = 1.0;
                e
            }
            Self::CoordinateNoise {
                clean,
                nuisance_dims,
                nuisance_scale,
                noise_scale,
                seed,
            } => {
                let mut rng = chain_rng(*seed, state as u64);
                let c = clean.ncols();
                let mut x = DVector::zeros(c + nuisance_dims);
                for j in 0..c {
                    x[j] = clean[(state, j)];
                }
                for j in 0..*nuisance_dims {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    x[c + j] = nuisance_scale * v;
                }
                for j in 0..x.len() {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    x[j] += noise_scale * v;
                }
                x
            }
        })
    }

    /// `N x d` matrix whose row `i` is `observe(i)`.
    pub fn observation_matrix(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            let x = self.observe(i).expect("state in range");
            m.set_row(i, &x.transpose());
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_pose_of_four() {
        let t = ring_pose_task(4).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (i, (c, s)) in expected.iter().enumerate() {
            assert!((t.targets[(i, 0)] - c).abs() < 1e-15);
            assert!((t.targets[(i, 1)] - s).abs() < 1e-15);
        }
        assert!(ring_pose_task(2).is_err());
    }

    #[test]
    fn grid_coordinates_are_centered() {
        let t = grid_coordinate_task(2, 2).unwrap();
        let expected = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)];
        for (i, (x, y)) in expected.iter().enumerate() {
            assert_eq!(t.targets[(i, 0)], *x);
            assert_eq!(t.targets[(i, 1)], *y);
        }
        let t = grid_coordinate_task(11, 10).unwrap();
        assert!(t.targets.column(0).sum().abs() < 1e-12);
        assert!(t.targets.column(1).sum().abs() < 1e-12);
        assert!(grid_coordinate_task(1, 5).is_err());
    }

    #[test]
    fn one_hot_observation() {
        let m = ObservationModel::one_hot(5);
        assert_eq!(m.observe(3).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(m.observe(5).is_err());
        assert_eq!(m.observation_matrix(), DMatrix::identity(5, 5));
    }

    #[test]
    fn noiseless_coordinates_pass_through() {
        let task = grid_coordinate_task(3, 4).unwrap();
        let spec = NoiseSpec {
            nuisance_dims: 0,
            nuisance_scale: 2.0,
            noise_scale: 0.0,
            seed: 4,
        };
        let m = ObservationModel::coordinate_noise(task.targets.clone(), spec).unwrap();
        assert_eq!(m.observation_matrix(), task.targets);
    }

    #[test]
    fn observations_are_deterministic_per_state() {
        let task = ring_pose_task(10).unwrap();
        let spec = NoiseSpec {
            nuisance_dims: 16,
            nuisance_scale: 2.0,
            noise_scale: 1.0,
            seed: 1,
        };
        let m = ObservationModel::coordinate_noise(task.targets.clone(), spec).unwrap();
        assert_eq!(m.dim(), 18);
        assert_eq!(m.observe(7).unwrap(), m.observe(7).unwrap());
        assert_eq!(
            m.observation_matrix().row(7).transpose(),
            m.observe(7).unwrap()
        );
        assert_ne!(m.observe(7).unwrap(), m.observe(8).unwrap());
        let other = ObservationModel::coordinate_noise(task.targets, NoiseSpec { seed: 2, ..spec })
            .unwrap();
        assert_ne!(m.observe(7).unwrap(), other.observe(7).unwrap());
    }
}
