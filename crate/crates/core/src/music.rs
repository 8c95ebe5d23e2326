//! Per-axis correlation matrices and root-MUSIC angle extraction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Minimum `|sin|` for which the azimuth division is trusted.
pub const RELIABILITY_FLOOR: f64 = 0.05;

/// Angular distance below which two unit-circle roots are treated as the
/// split halves of one double root.
const DOUBLE_ROOT_SPLIT: f64 = 1e-6;

/// Vertical and horizontal correlation matrices of a channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPair {
    pub c_z: DMatrix<C64>,
    pub c_y: DMatrix<C64>,
}

fn symmetrize(a: DMatrix<C64>) -> DMatrix<C64> {
    (&a + a.adjoint()) * C64::from(0.5)
}

/// Splits `C = h h^H` into the `M_z x M_z` sum of its diagonal blocks and the
/// `M_y x M_y` sum of its stride-`M_z` submatrices.
pub fn decompose(h: &DVector<C64>, m_y: usize, m_z: usize) -> Result<CorrelationPair> {
    if h.len() != m_y * m_z {
        return Err(Error::DimensionMismatch {
            what: "channel length vs M_y * M_z",
            expected: m_y * m_z,
            found: h.len(),
        });
    }
    let mut c_z = DMatrix::zeros(m_z, m_z);
    let mut c_y = DMatrix::zeros(m_y, m_y);
    for a in 0..m_y {
        for b in 0..m_z {
            let u = h[a * m_z + b];
            for c in 0..m_y {
                for d in 0..m_z {
                    let v = u * h[c * m_z + d].conj();
                    if a == c {
                        c_z[(b, d)] += v;
                    }
                    if b == d {
                        c_y[(a, c)] += v;
                    }
                }
            }
        }
    }
    Ok(CorrelationPair {
        c_z: symmetrize(c_z),
        c_y: symmetrize(c_y),
    })
}

/// Diagonal scaling that evens out row and column norms before eigenvalue
/// computation (Parlett–Reinsch).
fn balance(a: &mut DMatrix<C64>) {
    let n = a.nrows();
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].norm();
                    r += a[(i, j)].norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / radix {
                cc *= radix;
                rr /= radix;
                f *= radix;
            }
            while cc >= rr * radix {
                cc /= radix;
                rr *= radix;
                f /= radix;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Roots of `sum_n p[n] z^n` (coefficients in ascending order).
pub fn polynomial_roots(p: &[C64]) -> Vec<C64> {
    let scale = p.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Vec::new();
    }
    let mut hi = p.len();
    while hi > 0 && p[hi - 1].norm() <= 1e-14 * scale {
        hi -= 1;
    }
    let lo = p.iter().take_while(|c| c.norm() <= 1e-14 * scale).count();
    let mut roots = vec![C64::new(0.0, 0.0); lo];
    if hi <= lo + 1 {
        return roots;
    }
    let coeffs = &p[lo..hi];
    let deg = coeffs.len() - 1;
    let lead = coeffs[deg];
    let mut comp = DMatrix::<C64>::zeros(deg, deg);
    for j in 0..deg {
        comp[(0, j)] = -coeffs[deg - 1 - j] / lead;
    }
    for i in 1..deg {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    balance(&mut comp);
    let eig = comp
        .clone()
        .schur()
        .eigenvalues()
        .expect("complex Schur form is triangular");
    roots.extend(eig.iter().copied());
    roots
}

/// Spatial frequencies `f` (phase `j pi m f`) of the `model_order` strongest
/// components of a Hermitian correlation matrix.
pub fn root_music(c: &DMatrix<C64>, model_order: usize) -> Result<Vec<f64>> {
    let n = c.nrows();
    if model_order == 0 || model_order >= n {
        return Err(Error::ModelOrder { order: model_order, size: n });
    }
    let (_, vecs) = linalg::hermitian_eigen(c);
    let en = vecs.columns(0, n - model_order);
    let b = en * en.adjoint();
    // z^(n-1) a(z)^H B a(z): p[n-1+k] sums the k-th superdiagonal
    let mut p = vec![C64::new(0.0, 0.0); 2 * n - 1];
    for i in 0..n {
        for j in 0..n {
            p[n - 1 + j - i] += b[(i, j)];
        }
    }
    let mut roots: Vec<C64> = polynomial_roots(&p)
        .into_iter()
        .filter(|z| z.norm() <= 1.0 + 1e-9 && z.norm() > 0.0)
        .collect();
    roots.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()));
    // A double root splits by ~sqrt(eps) into a straddling pair; their mean
    // is accurate to ~eps, which matters at grazing elevations.
    let mut picked: Vec<(C64, bool)> = Vec::with_capacity(model_order);
    for z in roots {
        let full = picked.len() == model_order;
        match picked.iter_mut().find(|(w, _)| (z.arg() - w.arg()).abs() < DOUBLE_ROOT_SPLIT) {
            Some((w, merged)) => {
                if !*merged {
                    *w = (*w + z) * 0.5;
                    *merged = true;
                }
            }
            None if !full => picked.push((z, false)),
            None => {}
        }
    }
    if picked.len() < model_order {
        return Err(Error::ModelOrder { order: model_order, size: n });
    }
    Ok(picked.iter().map(|(z, _)| z.arg() / PI).collect())
}

/// Powers of the components at `freqs` in `c`: `diag(A^+ C A^+H)`.
pub fn component_powers(c: &DMatrix<C64>, freqs: &[f64]) -> Vec<f64> {
    let n = c.nrows();
    let cols: Vec<DVector<C64>> = freqs
        .iter()
        .map(|f| DVector::from_fn(n, |m, _| C64::from_polar(1.0, PI * f * m as f64)))
        .collect();
    let a = DMatrix::from_columns(&cols);
    let ap = linalg::pinv(&a);
    let x = &ap * c * ap.adjoint();
    (0..freqs.len()).map(|k| x[(k, k)].re).collect()
}

/// Half-space of azimuths the estimator resolves to.
///
/// The steering vectors only determine `sin(theta) sin(phi)` and `cos(phi)`;
/// the sector fixes the remaining ambiguity. Both sectors assume the
/// transmitter lies in front of the surface (`x < x_sub`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AzimuthSector {
    /// `theta` in `[-pi, -pi/2]`: transmitter at `y <= y_sub`.
    #[default]
    LowerY,
    /// `theta` in `[pi/2, pi]`: transmitter at `y >= y_sub`.
    UpperY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AoaEstimate {
    pub theta: f64,
    pub phi: f64,
    /// False when the azimuth division or the elevation sign is ill-conditioned.
    pub reliable: bool,
    /// Fitted power of the selected vertical component.
    pub component_power: f64,
    pub f_y: f64,
    pub f_z: f64,
}

fn strongest(c: &DMatrix<C64>, model_order: usize) -> Result<(f64, f64)> {
    let order = model_order.min(c.nrows().saturating_sub(1)).max(1);
    let freqs = root_music(c, order)?;
    let powers = component_powers(c, &freqs);
    let k = powers
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("at least one component");
    Ok((freqs[k], powers[k]))
}

/// Maps the dominant `(f_y, f_z)` to bearing angles.
pub fn angles_from_frequencies(f_y: f64, f_z: f64, sector: AzimuthSector) -> (f64, f64, bool) {
    // cos(phi) >= 0: a negative vertical frequency is aliasing around 0 or 1
    let f_z = if f_z < 0.0 {
        if f_z > -0.5 {
            0.0
        } else {
            1.0
        }
    } else {
        f_z.min(1.0)
    };
    let abs_phi = f_z.acos();
    // sin(theta) <= 0 in the lower sector, >= 0 in the upper one
    let sign = match sector {
        AzimuthSector::LowerY => -f_y.signum(),
        AzimuthSector::UpperY => f_y.signum(),
    };
    let phi = if f_y == 0.0 { -abs_phi } else { sign * abs_phi };
    let sp = phi.sin();
    let ratio = if sp == 0.0 { 0.0 } else { (f_y / sp).clamp(-1.0, 1.0) };
    let theta = match sector {
        AzimuthSector::LowerY => -PI - ratio.asin(),
        AzimuthSector::UpperY => PI - ratio.asin(),
    };
    let reliable = sp.abs() >= RELIABILITY_FLOOR && theta.sin().abs() >= RELIABILITY_FLOOR;
    (theta, phi, reliable)
}

/// LoS azimuth/elevation from the correlation pair, keeping the component of
/// largest fitted power on each axis.
pub fn extract_aoa(pair: &CorrelationPair, model_order: usize, sector: AzimuthSector) -> Result<AoaEstimate> {
    if model_order == 0 {
        return Err(Error::ModelOrder { order: 0, size: pair.c_z.nrows() });
    }
    let (f_z, component_power) = strongest(&pair.c_z, model_order)?;
    let (f_y, _) = strongest(&pair.c_y, model_order)?;
    let (theta, phi, reliable) = angles_from_frequencies(f_y, f_z, sector);
    Ok(AoaEstimate {
        theta,
        phi,
        reliable,
        component_power,
        f_y,
        f_z,
    })
}

/// `decompose` followed by `extract_aoa`.
pub fn estimate_aoa(
    h: &DVector<C64>,
    m_y: usize,
    m_z: usize,
    model_order: usize,
    sector: AzimuthSector,
) -> Result<AoaEstimate> {
    extract_aoa(&decompose(h, m_y, m_z)?, model_order, sector)
}
