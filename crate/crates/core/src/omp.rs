//! Gridded orthogonal matching pursuit baseline.
//!
//! The dictionary holds unit-norm separable steering vectors on a uniform
//! grid over `theta' in [0, pi]`, `phi' in [-pi/2, pi/2]` (the frame of the
//! atomic set, where `f_y = sin theta' sin phi'` and `f_z = cos phi'`). It is
//! never materialized: correlations are computed as `a^H (A^H r)` with the
//! vertical factor applied once per elevation row.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDictionary {
    /// Number of `theta'` samples.
    pub grid_y: usize,
    /// Number of `phi'` samples.
    pub grid_z: usize,
}

impl Default for GridDictionary {
    fn default() -> Self {
        Self { grid_y: 2048, grid_z: 2048 }
    }
}

impl GridDictionary {
    pub fn new(grid_y: usize, grid_z: usize) -> Result<Self> {
        if grid_y < 2 || grid_z < 2 {
            return Err(Error::Config(format!("OMP grid {grid_y}x{grid_z} needs at least two points per axis")));
        }
        Ok(Self { grid_y, grid_z })
    }

    pub fn theta_at(&self, i: usize) -> f64 {
        PI * i as f64 / (self.grid_y - 1) as f64
    }

    pub fn phi_at(&self, j: usize) -> f64 {
        -PI / 2.0 + PI * j as f64 / (self.grid_z - 1) as f64
    }

    /// `(f_y, f_z)` of grid point `(i, j)`.
    pub fn frequencies(&self, i: usize, j: usize) -> (f64, f64) {
        let (t, p) = (self.theta_at(i), self.phi_at(j));
        (t.sin() * p.sin(), p.cos())
    }

    /// Unit-norm atom at grid point `(i, j)` (z index fastest).
    pub fn atom(&self, i: usize, j: usize, m_y: usize, m_z: usize) -> DVector<C64> {
        let (fy, fz) = self.frequencies(i, j);
        atom_from_frequencies(fy, fz, m_y, m_z)
    }
}

fn atom_from_frequencies(fy: f64, fz: f64, m_y: usize, m_z: usize) -> DVector<C64> {
    let s = 1.0 / ((m_y * m_z) as f64).sqrt();
    DVector::from_fn(m_y * m_z, |m, _| {
        let (a, b) = ((m / m_z) as f64, (m % m_z) as f64);
        C64::from_polar(s, PI * (a * fy + b * fz))
    })
}

#[derive(Debug, Clone)]
pub struct OmpResult {
    pub h_hat: DVector<C64>,
    /// Selected grid indices `(i, j)` in selection order.
    pub atoms: Vec<(usize, usize)>,
    pub gains: Vec<C64>,
    /// Residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// Frequencies of the atom with the largest fitted gain.
    pub f_y: f64,
    pub f_z: f64,
    /// Grid angles `(theta', phi')` of that atom.
    pub theta_grid: f64,
    pub phi_grid: f64,
}

/// Best grid point for the back-projected residual `g = A^H r`.
fn best_atom(g: &DVector<C64>, grid: &GridDictionary, m_y: usize, m_z: usize, taken: &[(usize, usize)]) -> (usize, usize, f64) {
    (0..grid.grid_z)
        .into_par_iter()
        .map(|j| {
            let fz = grid.phi_at(j).cos();
            // u[a] = sum_b conj(alpha_z[b]) g[a m_z + b]
            let u: Vec<C64> = (0..m_y)
                .map(|a| {
                    (0..m_z)
                        .map(|b| C64::from_polar(1.0, -PI * b as f64 * fz) * g[a * m_z + b])
                        .sum()
                })
                .collect();
            let sp = grid.phi_at(j).sin();
            let mut best = (0, j, -1.0);
            for i in 0..grid.grid_y {
                if taken.contains(&(i, j)) {
                    continue;
                }
                let fy = grid.theta_at(i).sin() * sp;
                let step = C64::from_polar(1.0, -PI * fy);
                let mut rot = C64::new(1.0, 0.0);
                let mut acc = C64::new(0.0, 0.0);
                for ua in &u {
                    acc += rot * ua;
                    rot *= step;
                }
                let score = acc.norm_sqr();
                if score > best.2 {
                    best = (i, j, score);
                }
            }
            best
        })
        .reduce(|| (0, 0, -1.0), |a, b| if b.2 > a.2 || (b.2 == a.2 && (b.1, b.0) < (a.1, a.0)) { b } else { a })
}

/// Runs `sparsity` OMP iterations on `y = sqrt(P) W^H h + n`.
pub fn omp_estimate(
    y: &DVector<C64>,
    w: &DMatrix<C64>,
    tx_power_mw: f64,
    m_y: usize,
    m_z: usize,
    grid: &GridDictionary,
    sparsity: usize,
) -> Result<OmpResult> {
    let m = m_y * m_z;
    if sparsity == 0 {
        return Err(Error::Domain("OMP sparsity must be at least 1".into()));
    }
    if w.nrows() != m {
        return Err(Error::DimensionMismatch { what: "combiner rows vs M", expected: m, found: w.nrows() });
    }
    if y.len() != w.ncols() {
        return Err(Error::DimensionMismatch { what: "observations vs K", expected: w.ncols(), found: y.len() });
    }
    let a = w.adjoint() * C64::from(tx_power_mw.sqrt());
    let mut residual = y.clone();
    let mut atoms: Vec<(usize, usize)> = Vec::new();
    let mut cols: Vec<DVector<C64>> = Vec::new();
    let mut gains = DVector::zeros(0);
    let mut residual_norms = vec![residual.norm()];
    let floor = 1e-14 * y.norm().max(f64::MIN_POSITIVE);
    for _ in 0..sparsity {
        if residual.norm() <= floor {
            break;
        }
        let g = a.adjoint() * &residual;
        let (i, j, _) = best_atom(&g, grid, m_y, m_z, &atoms);
        atoms.push((i, j));
        cols.push(grid.atom(i, j, m_y, m_z));
        let phi = &a * DMatrix::from_columns(&cols);
        gains = linalg::pinv(&phi) * y;
        residual = y - &phi * &gains;
        residual_norms.push(residual.norm());
    }
    let d = DMatrix::from_columns(&cols);
    let h_hat = &d * &gains;
    let k = (0..gains.len())
        .max_by(|&p, &q| gains[p].norm().total_cmp(&gains[q].norm()))
        .unwrap_or(0);
    let (i, j) = atoms.get(k).copied().unwrap_or((0, 0));
    let (f_y, f_z) = grid.frequencies(i, j);
    Ok(OmpResult {
        h_hat,
        atoms,
        gains: gains.iter().copied().collect(),
        residual_norms,
        f_y,
        f_z,
        theta_grid: grid.theta_at(i),
        phi_grid: grid.phi_at(j),
    })
}
