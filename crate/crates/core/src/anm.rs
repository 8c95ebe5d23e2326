//! Atomic-norm denoising of a subarray channel from compressed pilots.
//!
//! Solves
//!
//! ```text
//! min_{h,u,t}  (mu/2) (t + tr(T(u)) / M) + 1/2 ||y - A h||^2
//! s.t.         [[T(u), h], [h^H, t]] >= 0,           A = sqrt(P) W^H,
//! ```
//!
//! where `T(u)` is the two-level (block-Toeplitz with Toeplitz blocks) matrix
//! generated by `u`, with ADMM on the splitting `Z = [[T(u), h], [h^H, t]]`,
//! `Z` PSD. Each iteration costs one `(M+1) x (M+1)` Hermitian
//! eigendecomposition.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Penalty weight `c sigma sqrt(M ln M)`.
pub fn regularization_weight(noise_std: f64, m: usize, c: f64) -> f64 {
    let m = m as f64;
    c * noise_std * (m * m.ln()).sqrt()
}

/// Two-level Toeplitz matrix for channels ordered `alpha_y (x) alpha_z`.
///
/// `T[(a, b), (c, d)] = u(a - c, b - d)` with `a, c` the horizontal and `b, d`
/// the vertical element indices; `u(-k) = conj(u(k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelToeplitz {
    pub m_y: usize,
    pub m_z: usize,
    /// `(2 M_y - 1) x (2 M_z - 1)` generator, entry `(k_y + M_y - 1, k_z + M_z - 1)`.
    pub generator: DMatrix<C64>,
}

impl TwoLevelToeplitz {
    pub fn zeros(m_y: usize, m_z: usize) -> Self {
        Self {
            m_y,
            m_z,
            generator: DMatrix::zeros(2 * m_y - 1, 2 * m_z - 1),
        }
    }

    pub fn get(&self, ky: isize, kz: isize) -> C64 {
        self.generator[((ky + self.m_y as isize - 1) as usize, (kz + self.m_z as isize - 1) as usize)]
    }

    /// Nearest two-level Toeplitz matrix in Frobenius norm: every
    /// `(k_y, k_z)` diagonal of `a` is replaced by its mean.
    pub fn project(a: &DMatrix<C64>, m_y: usize, m_z: usize) -> Self {
        let (ny, nz) = (2 * m_y - 1, 2 * m_z - 1);
        let mut sum = DMatrix::<C64>::zeros(ny, nz);
        let m = m_y * m_z;
        for col in 0..m {
            let (c, d) = (col / m_z, col % m_z);
            for row in 0..m {
                let (a_, b) = (row / m_z, row % m_z);
                sum[(a_ + m_y - 1 - c, b + m_z - 1 - d)] += a[(row, col)];
            }
        }
        let mut generator = DMatrix::zeros(ny, nz);
        for iy in 0..ny {
            for iz in 0..nz {
                let count = (m_y - (iy as isize - m_y as isize + 1).unsigned_abs())
                    * (m_z - (iz as isize - m_z as isize + 1).unsigned_abs());
                generator[(iy, iz)] = sum[(iy, iz)] / count as f64;
            }
        }
        // enforce conjugate symmetry exactly
        for iy in 0..ny {
            for iz in 0..nz {
                let (jy, jz) = (ny - 1 - iy, nz - 1 - iz);
                if (iy, iz) < (jy, jz) {
                    let v = (generator[(iy, iz)] + generator[(jy, jz)].conj()) * 0.5;
                    generator[(iy, iz)] = v;
                    generator[(jy, jz)] = v.conj();
                } else if (iy, iz) == (jy, jz) {
                    generator[(iy, iz)].im = 0.0;
                }
            }
        }
        Self { m_y, m_z, generator }
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        let m = self.m_y * self.m_z;
        DMatrix::from_fn(m, m, |row, col| {
            let (a, b) = ((row / self.m_z) as isize, (row % self.m_z) as isize);
            let (c, d) = ((col / self.m_z) as isize, (col % self.m_z) as isize);
            self.get(a - c, b - d)
        })
    }

    /// `tr(T(u)) = M u(0, 0)`.
    pub fn trace(&self) -> f64 {
        (self.m_y * self.m_z) as f64 * self.get(0, 0).re
    }
}

/// One denoising instance.
#[derive(Debug, Clone)]
pub struct AnmProblem {
    pub y: DVector<C64>,
    /// `M x K` combiner.
    pub w: DMatrix<C64>,
    /// Transmit power, mW.
    pub tx_power_mw: f64,
    pub mu: f64,
    pub m_y: usize,
    pub m_z: usize,
}

impl AnmProblem {
    fn validate(&self) -> Result<()> {
        let m = self.m_y * self.m_z;
        if m == 0 {
            return Err(Error::Config("subarray dimensions must be >= 1".into()));
        }
        if self.w.nrows() != m {
            return Err(Error::DimensionMismatch {
                what: "combiner rows vs M_y * M_z",
                expected: m,
                found: self.w.nrows(),
            });
        }
        if self.w.ncols() != self.y.len() {
            return Err(Error::DimensionMismatch {
                what: "observations vs combiner columns",
                expected: self.w.ncols(),
                found: self.y.len(),
            });
        }
        if !(self.mu > 0.0) {
            return Err(Error::Domain("regularization weight must be > 0".into()));
        }
        if !(self.tx_power_mw > 0.0) {
            return Err(Error::Domain("transmit power must be > 0".into()));
        }
        Ok(())
    }

    /// Measurement operator `sqrt(P) W^H`.
    pub fn operator(&self) -> DMatrix<C64> {
        self.w.adjoint() * C64::from(self.tx_power_mw.sqrt())
    }

    /// Objective at `(h, T(u), t)`.
    pub fn objective(&self, h: &DVector<C64>, toeplitz: &TwoLevelToeplitz, t: f64) -> f64 {
        let m = (self.m_y * self.m_z) as f64;
        let r = &self.y - self.operator() * h;
        0.5 * self.mu * (t + toeplitz.trace() / m) + 0.5 * r.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnmOptions {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Rebalance `rho` when the primal and dual residuals drift apart.
    #[serde(default = "yes")]
    pub adaptive_rho: bool,
    /// Record the objective and residuals at every iteration.
    #[serde(default)]
    pub trace: bool,
}

fn yes() -> bool {
    true
}

impl Default for AnmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-5,
            max_iter: 5000,
            adaptive_rho: true,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnmStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct AnmSolution {
    pub h_hat: DVector<C64>,
    pub toeplitz: TwoLevelToeplitz,
    pub t: f64,
    pub status: AnmStatus,
    /// Final residuals of the internally normalised problem.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl AnmSolution {
    /// `[[T(u), h], [h^H, t]]`.
    pub fn arrow_matrix(&self) -> DMatrix<C64> {
        assemble(&self.toeplitz.to_matrix(), &self.h_hat, self.t)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["iter", "objective", "primal_residual", "dual_residual", "rho"]).map_err(io)?;
        for r in &self.trace {
            w.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.primal_residual.to_string(),
                r.dual_residual.to_string(),
                r.rho.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn assemble(t_mat: &DMatrix<C64>, x: &DVector<C64>, t: f64) -> DMatrix<C64> {
    let m = x.len();
    let mut out = DMatrix::zeros(m + 1, m + 1);
    out.view_mut((0, 0), (m, m)).copy_from(t_mat);
    for i in 0..m {
        out[(i, m)] = x[i];
        out[(m, i)] = x[i].conj();
    }
    out[(m, m)] = C64::from(t);
    out
}

/// Solves the denoising problem with ADMM.
///
/// The data are rescaled internally so that `||y|| = 1` and `||A||_2 = 1`;
/// tolerances refer to that normalised problem.
pub fn solve(problem: &AnmProblem, opts: &AnmOptions) -> Result<AnmSolution> {
    problem.validate()?;
    let (m_y, m_z) = (problem.m_y, problem.m_z);
    let m = m_y * m_z;
    let y_norm = problem.y.norm();
    if y_norm == 0.0 {
        return Ok(AnmSolution {
            h_hat: DVector::zeros(m),
            toeplitz: TwoLevelToeplitz::zeros(m_y, m_z),
            t: 0.0,
            status: AnmStatus::Converged,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            trace: Vec::new(),
        });
    }
    let a = problem.operator();
    let alpha = a.singular_values().max();
    let an = &a / C64::from(alpha);
    let yn = &problem.y / C64::from(y_norm);
    let mu = problem.mu / (alpha * y_norm);

    // (A^H A + 2 rho I)^-1 through the eigenbasis of A^H A
    let (gram_vals, gram_vecs) = linalg::hermitian_eigen(&an.ad_mul(&an));
    let ahy = an.ad_mul(&yn);
    let ahy_eig = gram_vecs.ad_mul(&ahy);

    let n = m + 1;
    let mut rho = opts.rho;
    let mut z = DMatrix::<C64>::zeros(n, n);
    let mut lam = DMatrix::<C64>::zeros(n, n);
    let mut theta_prev = DMatrix::<C64>::zeros(n, n);
    let mut x = DVector::<C64>::zeros(m);
    let mut toep = TwoLevelToeplitz::zeros(m_y, m_z);
    let mut t = 0.0;
    let mut status = AnmStatus::MaxIter;
    let (mut r_norm, mut s_norm) = (f64::INFINITY, f64::INFINITY);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let sqrt_n = n as f64;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        // t-update
        t = z[(m, m)].re + (lam[(m, m)].re - mu / 2.0) / rho;
        // x-update
        let z1 = z.view((0, m), (m, 1)).column(0).into_owned();
        let l1 = lam.view((0, m), (m, 1)).column(0).into_owned();
        let rhs = gram_vecs.ad_mul(&(&l1 * C64::from(2.0) + &z1 * C64::from(2.0 * rho))) + &ahy_eig;
        let sol = DVector::from_fn(m, |k, _| rhs[k] / (gram_vals[k] + 2.0 * rho));
        x = &gram_vecs * sol;
        // u-update
        let mut target = z.view((0, 0), (m, m)).into_owned() + lam.view((0, 0), (m, m)) / C64::from(rho);
        for k in 0..m {
            target[(k, k)] -= C64::from(mu / (2.0 * m as f64 * rho));
        }
        toep = TwoLevelToeplitz::project(&target, m_y, m_z);
        let theta = assemble(&toep.to_matrix(), &x, t);
        // Z-update
        z = linalg::psd_projection(&(&theta - &lam / C64::from(rho)));
        // dual update
        lam += (&z - &theta) * C64::from(rho);

        r_norm = (&z - &theta).norm();
        s_norm = rho * (&theta - &theta_prev).norm();
        theta_prev = theta;
        let eps_pri = opts.eps_abs * sqrt_n + opts.eps_rel * z.norm().max(theta_prev.norm());
        let eps_dual = opts.eps_abs * sqrt_n + opts.eps_rel * lam.norm();
        if opts.trace {
            trace.push(TraceRow {
                iter,
                objective: normalised_objective(&an, &yn, mu, &x, &toep, t),
                primal_residual: r_norm,
                dual_residual: s_norm,
                rho,
            });
        }
        if r_norm <= eps_pri && s_norm <= eps_dual {
            status = AnmStatus::Converged;
            break;
        }
        if opts.adaptive_rho {
            if r_norm > 10.0 * s_norm {
                rho *= 2.0;
            } else if s_norm > 10.0 * r_norm {
                rho /= 2.0;
            }
        }
    }

    // undo the normalisation: h = (||y|| / alpha) x; T and t are
    // homogeneous of degree one in h
    let scale = y_norm / alpha;
    let mut toeplitz = toep;
    toeplitz.generator *= C64::from(scale);
    let obj_scale = y_norm * y_norm;
    for row in &mut trace {
        row.objective *= obj_scale;
    }
    Ok(AnmSolution {
        h_hat: x * C64::from(scale),
        toeplitz,
        t: t * scale,
        status,
        primal_residual: r_norm,
        dual_residual: s_norm,
        iterations,
        trace,
    })
}

fn normalised_objective(
    an: &DMatrix<C64>,
    yn: &DVector<C64>,
    mu: f64,
    x: &DVector<C64>,
    toep: &TwoLevelToeplitz,
    t: f64,
) -> f64 {
    let m = x.len() as f64;
    0.5 * mu * (t + toep.trace() / m) + 0.5 * (yn - an * x).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::dft_combiner;
    use approx::assert_relative_eq;

    fn atom(fy: f64, fz: f64, my: usize, mz: usize) -> DVector<C64> {
        let ay = DVector::from_fn(my, |k, _| C64::from_polar(1.0, std::f64::consts::PI * fy * k as f64));
        let az = DVector::from_fn(mz, |k, _| C64::from_polar(1.0, std::f64::consts::PI * fz * k as f64));
        crate::channel::kron(&ay, &az)
    }

    #[test]
    fn weight_formula() {
        assert_relative_eq!(regularization_weight(1.0, 1, 1.0), 0.0);
        assert_relative_eq!(regularization_weight(2.0, 16, 1.0), 2.0 * regularization_weight(1.0, 16, 1.0));
    }

    #[test]
    fn toeplitz_projection_is_idempotent_and_hermitian() {
        let v = atom(0.3, -0.2, 3, 4);
        let w = atom(-0.6, 0.5, 3, 4);
        let a = &v * v.adjoint() + &w * w.adjoint() * C64::from(0.5);
        let t = TwoLevelToeplitz::project(&a, 3, 4);
        let tm = t.to_matrix();
        // sums of atoms are already two-level Toeplitz
        assert!((&tm - &a).norm() < 1e-12);
        assert!((&tm - tm.adjoint()).norm() < 1e-15);
        let again = TwoLevelToeplitz::project(&tm, 3, 4);
        assert!((again.generator - &t.generator).norm() < 1e-14);
        assert_relative_eq!(t.trace(), 1.5 * 12.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let p = AnmProblem {
            y: DVector::zeros(16),
            w: dft_combiner(16, 16),
            tx_power_mw: 1.0,
            mu: 0.3,
            m_y: 4,
            m_z: 4,
        };
        let s = solve(&p, &AnmOptions::default()).unwrap();
        assert_eq!(s.h_hat.norm(), 0.0);
        assert_eq!(s.t, 0.0);
        assert_eq!(s.toeplitz.generator.norm(), 0.0);
    }

    #[test]
    fn noiseless_single_atom_recovery() {
        let h = atom(0.41, -0.27, 4, 4) * C64::from_polar(2e-4, 0.7);
        let w = dft_combiner(16, 16);
        let a = w.adjoint();
        let y = &a * &h;
        let p = AnmProblem {
            y,
            w,
            tx_power_mw: 1.0,
            mu: 1e-6 * 2e-4,
            m_y: 4,
            m_z: 4,
        };
        let s = solve(&p, &AnmOptions::default()).unwrap();
        assert_eq!(s.status, AnmStatus::Converged);
        assert!((&s.h_hat - &h).norm() / h.norm() < 1e-3);
    }

    #[test]
    fn arrow_matrix_is_psd_at_convergence() {
        let h = atom(0.2, 0.6, 4, 4) + atom(-0.5, 0.1, 4, 4) * C64::from(0.3);
        let w = dft_combiner(16, 32);
        let y = w.adjoint() * &h + DVector::from_fn(32, |k, _| C64::from_polar(0.05, 1.3 * k as f64));
        let p = AnmProblem {
            y,
            w,
            tx_power_mw: 1.0,
            mu: 0.5,
            m_y: 4,
            m_z: 4,
        };
        let s = solve(&p, &AnmOptions::default()).unwrap();
        assert_eq!(s.status, AnmStatus::Converged);
        let arrow = s.arrow_matrix();
        let (vals, _) = linalg::hermitian_eigen(&arrow);
        assert!(vals[0] >= -1e-6 * s.toeplitz.to_matrix().norm(), "min eig {}", vals[0]);
        // the feasible point built from the true atomic decomposition
        // (T = sum |c| a a^H, t = sum |c|) cannot beat the solver
        let comps = [(atom(0.2, 0.6, 4, 4), 1.0), (atom(-0.5, 0.1, 4, 4), 0.3)];
        let mut t_mat = DMatrix::zeros(16, 16);
        for (a, c) in &comps {
            t_mat += a * a.adjoint() * C64::from(*c);
        }
        let truth_t = TwoLevelToeplitz::project(&t_mat, 4, 4);
        let obj_truth = p.objective(&h, &truth_t, 1.3);
        let obj = p.objective(&s.h_hat, &s.toeplitz, s.t);
        assert!(obj <= obj_truth + 1e-6, "{obj} vs {obj_truth}");
    }

    #[test]
    fn phase_rotation_equivariance() {
        let h = atom(0.2, 0.6, 4, 4);
        let w = dft_combiner(16, 32);
        let y = w.adjoint() * &h + DVector::from_fn(32, |k, _| C64::from_polar(0.1, 0.7 * (k * k) as f64));
        let base = AnmProblem {
            y: y.clone(),
            w: w.clone(),
            tx_power_mw: 1.0,
            mu: 0.4,
            m_y: 4,
            m_z: 4,
        };
        let rot = C64::from_polar(1.0, 1.1);
        let rotated = AnmProblem { y: y * rot, ..base.clone() };
        let opts = AnmOptions {
            eps_abs: 1e-9,
            eps_rel: 1e-9,
            max_iter: 20_000,
            ..Default::default()
        };
        let a = solve(&base, &opts).unwrap();
        let b = solve(&rotated, &opts).unwrap();
        assert!((&a.h_hat * rot - &b.h_hat).norm() < 1e-6 * a.h_hat.norm());
    }

    #[test]
    fn trace_is_recorded_and_written() {
        let h = atom(0.2, 0.6, 4, 4);
        let w = dft_combiner(16, 16);
        let p = AnmProblem {
            y: w.adjoint() * &h,
            w,
            tx_power_mw: 1.0,
            mu: 0.1,
            m_y: 4,
            m_z: 4,
        };
        let s = solve(
            &p,
            &AnmOptions {
                trace: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.trace.len(), s.iterations);
        let mut buf = Vec::new();
        s.write_trace_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), s.iterations + 1);
    }

    #[test]
    fn dimension_errors() {
        let p = AnmProblem {
            y: DVector::zeros(8),
            w: dft_combiner(16, 16),
            tx_power_mw: 1.0,
            mu: 0.1,
            m_y: 4,
            m_z: 4,
        };
        assert!(matches!(solve(&p, &AnmOptions::default()), Err(Error::DimensionMismatch { .. })));
    }
}
