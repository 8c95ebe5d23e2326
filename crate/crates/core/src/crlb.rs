//! Cramér–Rao bounds: channel-parameter Fisher information, the LoS angle
//! bound with nuisance parameters projected out, and the position error bound.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, Path, PathSet, ScenarioConfig};
use crate::error::{Error, Result};
use crate::geometry::{Scene, SubarrayConfig};
use crate::linalg;
use crate::measurement::CombinerKind;
use crate::units;
use crate::C64;

/// Relative tolerance on the element spacing being half a wavelength.
const SPACING_TOL: f64 = 1e-9;

/// How the derivative with respect to the path distance is formed.
///
/// Both choices are scalar multiples of `W^H h_l`, so the LoS angle bound and
/// the position error bound do not depend on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistancePartial {
    /// `((-j pi - 1) / d) W^H h_l`.
    #[default]
    Simplified,
    /// `(-j 2 pi / lambda - 1 / d) W^H h_l`, the derivative of the gain model.
    Exact,
}

fn check_spacing(sub: &SubarrayConfig, wavelength: f64) -> Result<()> {
    for s in [sub.spacing_y, sub.spacing_z] {
        if ((s - wavelength / 2.0) / wavelength).abs() > SPACING_TOL {
            return Err(Error::UnsupportedSpacing {
                spacing_m: s,
                half_wavelength_m: wavelength / 2.0,
            });
        }
    }
    Ok(())
}

/// Partial derivatives of `mu = W^H h` as the `K x 3L` matrix whose columns
/// follow `[theta_1, phi_1, d_1, ..., theta_L, phi_L, d_L]`.
pub fn mu_partials(
    sub: &SubarrayConfig,
    paths: &[Path],
    w: &DMatrix<C64>,
    wavelength: f64,
    mode: DistancePartial,
) -> Result<DMatrix<C64>> {
    check_spacing(sub, wavelength)?;
    let m = sub.num_elements();
    if w.nrows() != m {
        return Err(Error::DimensionMismatch {
            what: "combiner rows vs subarray elements",
            expected: m,
            found: w.nrows(),
        });
    }
    let mz = sub.elements_z;
    let j = C64::i();
    let pi = std::f64::consts::PI;
    let mut d = DMatrix::zeros(m, 3 * paths.len());
    for (l, p) in paths.iter().enumerate() {
        let h = channel::steering(p.theta, p.phi, sub, wavelength) * p.gain;
        let (st, ct) = p.theta.sin_cos();
        let (sp, cp) = p.phi.sin_cos();
        for e in 0..m {
            let (iy, iz) = ((e / mz) as f64, (e % mz) as f64);
            let d1 = j * pi * iy * ct * sp;
            let d2 = j * pi * iy * st * cp;
            let d3 = -j * pi * iz * sp;
            d[(e, 3 * l)] = d1 * h[e];
            d[(e, 3 * l + 1)] = (d2 + d3) * h[e];
            d[(e, 3 * l + 2)] = match mode {
                DistancePartial::Simplified => (-j * pi - 1.0) / p.distance * h[e],
                DistancePartial::Exact => (-j * 2.0 * pi / wavelength - 1.0 / p.distance) * h[e],
            };
        }
    }
    Ok(w.ad_mul(&d))
}

/// `(2P / sigma^2) Re{G^H G}` for powers in dBm.
pub fn fim(partials: &DMatrix<C64>, tx_power_dbm: f64, noise_var_dbm: f64) -> DMatrix<f64> {
    let scale = 2.0 * units::dbm_to_mw(tx_power_dbm) / units::dbm_to_mw(noise_var_dbm);
    let gram = partials.ad_mul(partials);
    let re = gram.map(|v| v.re) * scale;
    (&re + re.transpose()) * 0.5
}

/// Numerical rank of a real FIM.
pub fn fim_rank(j: &DMatrix<f64>) -> usize {
    let sv = j.singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| max > 0.0 && s > linalg::RANK_TOL * max).count()
}

/// Information and bound on the LoS azimuth/elevation pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosBound {
    /// `(2P / sigma^2) Re{G1^H (I - P_G2) G1}`.
    pub info: Matrix2<f64>,
    /// Its inverse; `+inf` entries when the information is singular.
    pub cov: Matrix2<f64>,
}

impl LosBound {
    /// Diagonal bounds `(eps_theta, eps_phi)`, rad^2.
    pub fn eps(&self) -> (f64, f64) {
        (self.cov[(0, 0)], self.cov[(1, 1)])
    }

    pub fn is_finite(&self) -> bool {
        self.cov.iter().all(|v| v.is_finite())
    }
}

/// LoS angle bound with every other channel parameter treated as nuisance.
///
/// The nuisance directions are projected out over their complex span, which
/// equals the real Schur complement of a FIM whose nuisance columns `G2` are
/// augmented with `j G2` (each nuisance derivative scaled by a free complex
/// factor). It is therefore never smaller than the corresponding block of the
/// inverse of `(2P / sigma^2) Re{G^H G}`.
pub fn los_bound(partials: &DMatrix<C64>, tx_power_dbm: f64, noise_var_dbm: f64) -> LosBound {
    let scale = 2.0 * units::dbm_to_mw(tx_power_dbm) / units::dbm_to_mw(noise_var_dbm);
    let g1 = partials.columns(0, 2).into_owned();
    let g2 = partials.columns(2, partials.ncols() - 2).into_owned();
    let r = linalg::project_out(&g2, &g1);
    // G1^H (I - P) G1 = ((I - P) G1)^H ((I - P) G1)
    let s = r.ad_mul(&r);
    let info = Matrix2::new(s[(0, 0)].re, s[(0, 1)].re, s[(1, 0)].re, s[(1, 1)].re) * scale;
    let info = (info + info.transpose()) * 0.5;
    let dm = DMatrix::from_column_slice(2, 2, info.as_slice());
    let cov = match linalg::inverse_if_regular(&dm) {
        Some(inv) => Matrix2::from_column_slice(inv.as_slice()),
        None => Matrix2::from_element(f64::INFINITY),
    };
    LosBound { info, cov }
}

/// Jacobian `d(theta, phi) / d p_ms` (rows x, y, z).
pub fn jacobian(theta: f64, phi: f64, d: f64) -> Result<Matrix3x2<f64>> {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    if cp.abs() < 1e-12 {
        return Err(Error::DegenerateGeometry("azimuth is undefined at |phi| = pi/2".into()));
    }
    if !(d > 0.0) {
        return Err(Error::Domain("distance must be > 0".into()));
    }
    Ok(Matrix3x2::new(
        -st / (d * cp),
        -ct * sp / d,
        ct / (d * cp),
        -st * sp / d,
        0.0,
        cp / d,
    ))
}

/// `sqrt(tr((sum_i T_i J_i T_i^T)^-1))`, `+inf` when the sum is singular.
pub fn peb_from_terms(terms: &[(Matrix3x2<f64>, Matrix2<f64>)]) -> f64 {
    let mut f = Matrix3::zeros();
    for (t, j) in terms {
        f += t * j * t.transpose();
    }
    let dm = DMatrix::from_column_slice(3, 3, f.as_slice());
    match linalg::inverse_if_regular(&dm) {
        Some(inv) => inv.trace().max(0.0).sqrt(),
        None => f64::INFINITY,
    }
}

/// Bound ingredients of one subarray.
#[derive(Debug, Clone)]
pub struct SubarrayBound {
    pub fim: DMatrix<f64>,
    pub los: LosBound,
    pub jacobian: Matrix3x2<f64>,
}

/// Full bound evaluation for a scene.
#[derive(Debug, Clone)]
pub struct CrlbReport {
    pub subarrays: Vec<SubarrayBound>,
    /// Position error bound, meters.
    pub peb: f64,
}

/// Evaluates all bounds for `paths` observed through `combiners`.
pub fn evaluate(
    scene: &Scene,
    paths: &PathSet,
    combiners: &[DMatrix<C64>],
    tx_power_dbm: f64,
    noise_var_dbm: f64,
    mode: DistancePartial,
) -> Result<CrlbReport> {
    if combiners.len() != scene.num_subarrays() {
        return Err(Error::DimensionMismatch {
            what: "combiners vs subarrays",
            expected: scene.num_subarrays(),
            found: combiners.len(),
        });
    }
    let wavelength = scene.wavelength();
    let mut subarrays = Vec::with_capacity(scene.num_subarrays());
    for (i, sub) in scene.subarrays.iter().enumerate() {
        let g = mu_partials(sub, paths.paths(i), &combiners[i], wavelength, mode)?;
        let los = paths.los(i);
        subarrays.push(SubarrayBound {
            fim: fim(&g, tx_power_dbm, noise_var_dbm),
            los: los_bound(&g, tx_power_dbm, noise_var_dbm),
            jacobian: jacobian(los.theta, los.phi, los.distance)?,
        });
    }
    let terms: Vec<_> = subarrays.iter().map(|s| (s.jacobian, s.los.info)).collect();
    Ok(CrlbReport {
        peb: peb_from_terms(&terms),
        subarrays,
    })
}

/// Position error bound of `scene` for the given scenario and training.
pub fn peb(
    scene: &Scene,
    scenario: &ScenarioConfig,
    combiner: CombinerKind,
    k: usize,
    tx_power_dbm: f64,
    noise_var_dbm: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = channel::make_paths(scene, scenario, &mut rng)?;
    let combiners: Vec<_> = scene
        .subarrays
        .iter()
        .map(|s| combiner.build(s.num_elements(), k, &mut rng))
        .collect();
    Ok(evaluate(scene, &paths, &combiners, tx_power_dbm, noise_var_dbm, DistancePartial::Simplified)?.peb)
}

/// Position error variance of a single subarray with a diagonal angle bound:
/// `eps_theta d^2 cos^2(phi) + eps_phi d^2`.
pub fn error_decomposition(eps: (f64, f64), d: f64, phi: f64) -> f64 {
    let c = phi.cos();
    eps.0 * d * d * c * c + eps.1 * d * d
}

/// One point of the LoS angle bound versus NLoS angle offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NlosPoint {
    pub delta: f64,
    /// Averaged bound on the LoS azimuth variance, rad^2.
    pub theta_var: f64,
    /// Averaged bound on the LoS elevation variance, rad^2.
    pub phi_var: f64,
}

/// LoS angle bounds of one subarray versus the NLoS offset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NlosCurve {
    pub spread: f64,
    /// Bounds with the LoS path alone.
    pub single_path: (f64, f64),
    pub points: Vec<NlosPoint>,
}

impl NlosCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_curves_csv(std::slice::from_ref(self), out)
    }
}

/// Several curves (e.g. one per spread) in one table.
pub fn write_curves_csv<W: Write>(curves: &[NlosCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["delta_rad", "spread_rad", "theta_var_rad2", "phi_var_rad2", "theta_var_los_rad2", "phi_var_los_rad2"])
        .map_err(io)?;
    for c in curves {
        for p in &c.points {
            w.write_record([p.delta, c.spread, p.theta_var, p.phi_var, c.single_path.0, c.single_path.1].map(|v| v.to_string()))
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Number of midpoint nodes used to average over the random offset.
const SPREAD_NODES: usize = 32;

/// Two-path LoS angle bounds of subarray `i` over `deltas`.
///
/// With `spread > 0` the offset is uniform on `[delta - spread, delta +
/// spread]` and the variance bounds are averaged over it with a midpoint rule.
#[allow(clippy::too_many_arguments)]
pub fn nlos_effect_curve(
    scene: &Scene,
    i: usize,
    deltas: &[f64],
    spread: f64,
    scenario: &ScenarioConfig,
    w: &DMatrix<C64>,
    tx_power_dbm: f64,
    noise_var_dbm: f64,
) -> Result<NlosCurve> {
    let sub = scene
        .subarrays
        .get(i)
        .ok_or_else(|| Error::Domain(format!("subarray index {i} out of range")))?;
    let wavelength = scene.wavelength();
    let fc = scene.carrier_freq_ghz;
    let los = *PathSet::line_of_sight(scene)?.los(i);
    let bound = |paths: &[Path]| -> Result<(f64, f64)> {
        let g = mu_partials(sub, paths, w, wavelength, DistancePartial::Simplified)?;
        Ok(los_bound(&g, tx_power_dbm, noise_var_dbm).eps())
    };
    let single_path = bound(&[los])?;
    let nodes: Vec<f64> = if spread > 0.0 {
        (0..SPREAD_NODES)
            .map(|n| -spread + (2.0 * n as f64 + 1.0) * spread / SPREAD_NODES as f64)
            .collect()
    } else {
        vec![0.0]
    };
    let points = deltas
        .par_iter()
        .map(|&delta| {
            let mut acc = (0.0, 0.0);
            for &u in &nodes {
                let nlos = channel::offset_path(&los, delta + u, scenario, fc)?;
                let b = bound(&[los, nlos])?;
                acc.0 += b.0;
                acc.1 += b.1;
            }
            let n = nodes.len() as f64;
            Ok(NlosPoint {
                delta,
                theta_var: acc.0 / n,
                phi_var: acc.1 / n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NlosCurve {
        spread,
        single_path,
        points,
    })
}

/// Position error bound contribution check used by tests and diagnostics:
/// `tr((T diag(eps)^-1 T^T)^+)` for a single subarray.
pub fn single_subarray_error(eps: (f64, f64), theta: f64, phi: f64, d: f64) -> Result<f64> {
    let t = jacobian(theta, phi, d)?;
    let j = Matrix2::new(1.0 / eps.0, 0.0, 0.0, 1.0 / eps.1);
    let f = t * j * t.transpose();
    let pinv = f.pseudo_inverse(1e-12 * f.norm()).map_err(|e| Error::Domain(e.into()))?;
    Ok(pinv.trace())
}

/// Bound matrix for `Re{G^H G}` blocks, exposed for property tests.
pub fn schur_information(g1: &DMatrix<C64>, g2: &DMatrix<C64>) -> DMatrix<C64> {
    let r = linalg::project_out(g2, g1);
    r.ad_mul(&r)
}

/// `W^H h` for a set of paths, the noiseless mean of the observations.
pub fn mean_observation(sub: &SubarrayConfig, paths: &[Path], w: &DMatrix<C64>, wavelength: f64) -> DVector<C64> {
    let mut h = DVector::zeros(sub.num_elements());
    for p in paths {
        h += channel::steering(p.theta, p.phi, sub, wavelength) * p.gain;
    }
    w.ad_mul(&h)
}
