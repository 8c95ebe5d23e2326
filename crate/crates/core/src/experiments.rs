//! Monte Carlo harness: single-trial localization, parameter sweeps, heatmaps
//! and their CSV/JSON output.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anm::{self, AnmOptions, AnmProblem};
use crate::channel::{self, ChannelModel, ScenarioConfig};
use crate::crlb;
use crate::error::{Error, Result};
use crate::fusion::{self, EstimateBundle};
use crate::geometry::{build_partition, ElementLayout, PartitionPattern, Scene, Vec3};
use crate::measurement::{self, CombinerKind, MeasurementSet, Training};
use crate::music::{self, AoaEstimate, AzimuthSector};
use crate::omp::{self, GridDictionary};
use crate::units;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Atomic-norm denoising, root-MUSIC and LS fusion.
    #[default]
    AnmMusic,
    /// Gridded OMP with the dominant atom as the angle estimate.
    Omp,
    /// Position error bound only; no Monte Carlo.
    CrlbOnly,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::AnmMusic => "anm_music",
            EstimatorKind::Omp => "omp",
            EstimatorKind::CrlbOnly => "crlb_only",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [EstimatorKind::AnmMusic, EstimatorKind::Omp, EstimatorKind::CrlbOnly]
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator '{s}' (anm_music, omp or crlb_only)")))
    }
}

/// Estimator tuning shared by every subarray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// `c` in `mu = c sigma ||A||_2 sqrt(M ln M)`.
    pub mu_scale: f64,
    /// Paths assumed by root-MUSIC and OMP.
    pub model_order: usize,
    pub sector: AzimuthSector,
    pub anm: AnmOptions,
    pub omp_grid: GridDictionary,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mu_scale: DEFAULT_MU_SCALE,
            model_order: 2,
            sector: AzimuthSector::LowerY,
            anm: AnmOptions::default(),
            omp_grid: GridDictionary::default(),
        }
    }
}

/// Calibrated on the reference scene (see the README).
pub const DEFAULT_MU_SCALE: f64 = 1.0;

/// Regularization weight for one subarray: the noise level seen through the
/// measurement operator, `sigma ||sqrt(P) W^H||_2`, times `c sqrt(M ln M)`.
pub fn anm_weight(noise_var_mw: f64, tx_power_mw: f64, w: &nalgebra::DMatrix<crate::C64>, c: f64) -> f64 {
    let op_norm = tx_power_mw.sqrt() * w.singular_values().max();
    let mu = anm::regularization_weight(noise_var_mw.sqrt() * op_norm, w.nrows(), c);
    // a noiseless run still needs a positive weight
    mu.max(1e-12 * op_norm)
}

/// Per-subarray angle estimates from one training period.
pub fn estimate_angles(
    scene: &Scene,
    meas: &MeasurementSet,
    estimator: EstimatorKind,
    pipe: &PipelineConfig,
) -> Result<Vec<AoaEstimate>> {
    let p_mw = units::dbm_to_mw(meas.tx_power_dbm);
    let noise_mw = units::dbm_to_mw(meas.noise_var_dbm);
    scene
        .subarrays
        .iter()
        .enumerate()
        .map(|(i, sub)| {
            let (my, mz) = (sub.elements_y, sub.elements_z);
            let (y, w) = (&meas.received[i], &meas.combiners[i]);
            match estimator {
                EstimatorKind::AnmMusic => {
                    let problem = AnmProblem {
                        y: y.clone(),
                        w: w.clone(),
                        tx_power_mw: p_mw,
                        mu: anm_weight(noise_mw, p_mw, w, pipe.mu_scale),
                        m_y: my,
                        m_z: mz,
                    };
                    let sol = anm::solve(&problem, &pipe.anm)?;
                    music::estimate_aoa(&sol.h_hat, my, mz, pipe.model_order, pipe.sector)
                }
                EstimatorKind::Omp => {
                    let r = omp::omp_estimate(y, w, p_mw, my, mz, &pipe.omp_grid, pipe.model_order)?;
                    let (theta, phi, reliable) = music::angles_from_frequencies(r.f_y, r.f_z, pipe.sector);
                    Ok(AoaEstimate {
                        theta,
                        phi,
                        reliable,
                        component_power: r.gains.iter().map(|g| g.norm_sqr()).fold(0.0, f64::max),
                        f_y: r.f_y,
                        f_z: r.f_z,
                    })
                }
                EstimatorKind::CrlbOnly => Err(Error::Config("the bound-only estimator produces no angles".into())),
            }
        })
        .collect()
}

/// Position fix from one training period.
pub fn localize(
    scene: &Scene,
    meas: &MeasurementSet,
    estimator: EstimatorKind,
    pipe: &PipelineConfig,
) -> Result<EstimateBundle> {
    let est = estimate_angles(scene, meas, estimator, pipe)?;
    let anchors: Vec<Vec3> = scene.subarrays.iter().map(|s| s.centroid).collect();
    fusion::fuse(&anchors, &est)
}

/// Everything a Monte Carlo trial depends on besides its seed.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub scene: Scene,
    pub scenario: ScenarioConfig,
    pub training: Training,
    pub estimator: EstimatorKind,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub p_hat: Vec3,
    pub error_m: f64,
    pub low_confidence: bool,
}

/// One draw of paths, combiners and noise followed by localization.
pub fn run_trial(setup: &TrialSetup, seed: u64) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = channel::make_paths(&setup.scene, &setup.scenario, &mut rng)?;
    let meas = measurement::measure(&setup.scene, &paths, &setup.training, &mut rng)?;
    let fix = localize(&setup.scene, &meas, setup.estimator, &setup.pipeline)?;
    Ok(TrialOutcome {
        p_hat: fix.p_hat,
        error_m: (fix.p_hat - setup.scene.ms_position).norm(),
        low_confidence: fix.low_confidence,
    })
}

/// Position error bound companion of a setup, evaluated with the draw of
/// trial seed `seed` (combiners matter only for the random-phase family).
pub fn setup_peb(setup: &TrialSetup, seed: u64) -> Result<f64> {
    crlb::peb(
        &setup.scene,
        &setup.scenario,
        setup.training.combiner,
        setup.training.k,
        setup.training.tx_power_dbm,
        setup.training.noise_var_dbm,
        seed,
    )
}

/// Seed of trial `trial` at sweep point `point` (SplitMix64 finalizer over the
/// three inputs).
pub fn trial_seed(base_seed: u64, point: usize, trial: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base_seed) ^ point as u64) ^ trial as u64)
}

/// Scene recipe for sweeps that rebuild the partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlan {
    pub pattern: PartitionPattern,
    pub layout: ElementLayout,
    pub ms_position: Vec3,
    pub carrier_freq_ghz: f64,
}

impl ScenePlan {
    /// The four-subarray reference deployment.
    pub fn reference() -> Self {
        let fc = 28.0;
        Self {
            pattern: PartitionPattern::new(2, 2, 0.4, 0.4, Vec3::new(2.0, 5.0, 5.0)),
            layout: ElementLayout::half_wavelength(4, 4, units::wavelength_m(fc)),
            ms_position: Vec3::zeros(),
            carrier_freq_ghz: fc,
        }
    }

    pub fn build(&self) -> Result<Scene> {
        Scene::new(self.ms_position, build_partition(&self.pattern, &self.layout), self.carrier_freq_ghz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    TxPower,
    #[serde(rename = "k")]
    TrainingOverhead,
    MsPosition,
    SubarraySpacing,
    PartitionPattern,
}

impl SweepVariable {
    pub fn label(self) -> &'static str {
        match self {
            SweepVariable::TxPower => "tx_power_dbm",
            SweepVariable::TrainingOverhead => "k",
            SweepVariable::MsPosition => "ms_position_m",
            SweepVariable::SubarraySpacing => "subarray_spacing_m",
            SweepVariable::PartitionPattern => "partition_pattern",
        }
    }
}

/// One point of a sweep: a number, a pattern label or a position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Label(String),
    Point([f64; 3]),
}

impl SweepValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            SweepValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    fn number(&self, var: SweepVariable) -> Result<f64> {
        match self {
            SweepValue::Number(v) => Ok(*v),
            other => Err(Error::Config(format!("{} expects numbers, got {other}", var.label()))),
        }
    }
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Label(s) => write!(f, "{s}"),
            SweepValue::Point(p) => write!(f, "{} {} {}", p[0], p[1], p[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<SweepValue>,
    pub trials: usize,
    pub base_seed: u64,
    pub estimator: EstimatorKind,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must not be empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Aggregate of one sweep point.
///
/// Trials without a position fix are excluded from `rmse_m` and counted in
/// `fail_rate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRecord {
    pub series: String,
    pub estimator: EstimatorKind,
    pub variable: SweepVariable,
    pub value: SweepValue,
    pub rmse_m: f64,
    pub crlb_m: f64,
    pub fail_rate: f64,
    pub low_confidence_rate: f64,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors_m: Option<Vec<f64>>,
}

/// The setup of sweep point `value`.
pub fn apply_sweep_value(
    base: &TrialSetup,
    plan: Option<&ScenePlan>,
    var: SweepVariable,
    value: &SweepValue,
) -> Result<TrialSetup> {
    let mut s = base.clone();
    let need_plan = || plan.ok_or_else(|| Error::Config(format!("sweeping {} needs a partition plan", var.label())));
    match var {
        SweepVariable::TxPower => s.training.tx_power_dbm = value.number(var)?,
        SweepVariable::TrainingOverhead => {
            let k = value.number(var)?;
            if !(k >= 1.0 && k.fract() == 0.0) {
                return Err(Error::Config(format!("K must be a positive integer, got {k}")));
            }
            s.training.k = k as usize;
        }
        SweepVariable::MsPosition => match value {
            SweepValue::Point(p) => s.scene = s.scene.with_ms_position(Vec3::new(p[0], p[1], p[2])),
            other => return Err(Error::Config(format!("ms_position expects [x, y, z], got {other}"))),
        },
        SweepVariable::SubarraySpacing => {
            let v = value.number(var)?;
            let mut p = need_plan()?.clone();
            p.pattern.v_spacing = v;
            p.pattern.h_spacing = v;
            p.ms_position = base.scene.ms_position;
            s.scene = p.build()?;
        }
        SweepVariable::PartitionPattern => {
            let label = match value {
                SweepValue::Label(l) => l,
                other => return Err(Error::Config(format!("partition_pattern expects a label, got {other}"))),
            };
            let mut p = need_plan()?.clone();
            p.pattern = PartitionPattern::from_label(label, p.pattern.v_spacing, p.pattern.h_spacing, p.pattern.centroid)?;
            p.ms_position = base.scene.ms_position;
            s.scene = p.build()?;
        }
    }
    s.estimator = base.estimator;
    Ok(s)
}

/// Root mean square of the successful trial errors.
fn aggregate(outcomes: &[Result<TrialOutcome>]) -> (f64, f64, f64, Vec<f64>) {
    let errors: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().map(|t| t.error_m)).collect();
    let low = outcomes.iter().filter(|o| matches!(o, Ok(t) if t.low_confidence)).count();
    let n = outcomes.len() as f64;
    let rmse = if errors.is_empty() {
        f64::NAN
    } else {
        (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
    };
    (rmse, (n - errors.len() as f64) / n, low as f64 / n, errors)
}

/// Runs every sweep point; trials run in parallel but each is a pure function
/// of its derived seed and results are reduced in trial order, so the output
/// does not depend on the number of workers.
pub fn run_sweep(
    spec: &SweepSpec,
    base: &TrialSetup,
    plan: Option<&ScenePlan>,
    series: &str,
    keep_errors: bool,
) -> Result<Vec<RmseRecord>> {
    spec.validate()?;
    let mut base = base.clone();
    base.estimator = spec.estimator;
    let mut records = Vec::with_capacity(spec.values.len());
    for (idx, value) in spec.values.iter().enumerate() {
        let setup = apply_sweep_value(&base, plan, spec.variable, value)?;
        let crlb_m = setup_peb(&setup, trial_seed(spec.base_seed, idx, 0))?;
        let (rmse_m, fail_rate, low_confidence_rate, errors, trials) = if spec.estimator == EstimatorKind::CrlbOnly {
            (crlb_m, 0.0, 0.0, Vec::new(), 0)
        } else {
            let outcomes: Vec<Result<TrialOutcome>> = (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(&setup, trial_seed(spec.base_seed, idx, t)))
                .collect();
            let (r, f, l, e) = aggregate(&outcomes);
            (r, f, l, e, spec.trials)
        };
        records.push(RmseRecord {
            series: series.to_string(),
            estimator: spec.estimator,
            variable: spec.variable,
            value: value.clone(),
            rmse_m,
            crlb_m,
            fail_rate,
            low_confidence_rate,
            trials,
            errors_m: keep_errors.then_some(errors),
        });
    }
    Ok(records)
}

/// Writes records with the columns
/// `series,estimator,sweep_var,value,rmse_m,crlb_m,fail_rate,low_confidence_rate,trials`.
pub fn write_records_csv<W: Write>(records: &[RmseRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "series",
        "estimator",
        "sweep_var",
        "value",
        "rmse_m",
        "crlb_m",
        "fail_rate",
        "low_confidence_rate",
        "trials",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.series.clone(),
            r.estimator.label().to_string(),
            r.variable.label().to_string(),
            r.value.to_string(),
            r.rmse_m.to_string(),
            r.crlb_m.to_string(),
            r.fail_rate.to_string(),
            r.low_confidence_rate.to_string(),
            r.trials.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// Mean transmit-power gap (dB) between a practical RMSE curve and a bound
/// curve at matched error levels.
///
/// For each practical point the power at which the bound reaches the same
/// error is found by linear interpolation of `log10(error)` over power (linear
/// extrapolation from the end segments), and the differences are averaged.
pub fn power_gap_db(practice: &[(f64, f64)], theory: &[(f64, f64)]) -> Option<f64> {
    if theory.len() < 2 {
        return None;
    }
    let mut th: Vec<(f64, f64)> = theory.iter().map(|&(p, e)| (p, e.log10())).collect();
    th.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = practice
        .iter()
        .filter(|(_, e)| e.is_finite() && *e > 0.0)
        .filter_map(|&(p, e)| {
            let target = e.log10();
            let seg = th
                .windows(2)
                .find(|w| (w[0].1 - target) * (w[1].1 - target) <= 0.0 && w[0].1 != w[1].1)
                .map(|w| (w[0], w[1]))
                .or_else(|| {
                    let (first, last) = ((th[0], th[1]), (th[th.len() - 2], th[th.len() - 1]));
                    Some(if target > th[0].1 { first } else { last })
                })?;
            let ((p0, l0), (p1, l1)) = seg;
            if l1 == l0 {
                return None;
            }
            let p_theory = p0 + (target - l0) * (p1 - p0) / (l1 - l0);
            Some(p - p_theory)
        })
        .collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// One cell of a position heatmap in the `x = x0` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatmapCell {
    pub y_m: f64,
    pub z_m: f64,
    /// Infinite where the bound is singular.
    pub peb_m: f64,
    /// `NaN` when no Monte Carlo trials were requested or all failed.
    pub rmse_m: f64,
}

/// Evenly spaced samples `start, start + step, ..., <= stop`.
pub fn grid_axis(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) {
        return Err(Error::Config(format!("invalid grid axis {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start + i as f64 * step).collect())
}

/// Bound (and optionally Monte Carlo RMSE) over a grid of transmitter
/// positions `[x, y, z]`; points where the geometry is degenerate get an
/// infinite bound.
pub fn heatmap(base: &TrialSetup, x: f64, ys: &[f64], zs: &[f64], trials: usize, base_seed: u64) -> Result<Vec<HeatmapCell>> {
    if ys.is_empty() || zs.is_empty() {
        return Err(Error::Config("heatmap grid must not be empty".into()));
    }
    let points: Vec<(f64, f64)> = zs.iter().flat_map(|&z| ys.iter().map(move |&y| (y, z))).collect();
    let cells = points
        .iter()
        .enumerate()
        .map(|(idx, &(y, z))| {
            let mut setup = base.clone();
            setup.scene = base.scene.with_ms_position(Vec3::new(x, y, z));
            let peb_m = setup_peb(&setup, trial_seed(base_seed, idx, 0)).unwrap_or(f64::INFINITY);
            let rmse_m = if trials == 0 {
                f64::NAN
            } else {
                let outcomes: Vec<_> = (0..trials)
                    .into_par_iter()
                    .map(|t| run_trial(&setup, trial_seed(base_seed, idx, t)))
                    .collect();
                aggregate(&outcomes).0
            };
            HeatmapCell { y_m: y, z_m: z, peb_m, rmse_m }
        })
        .collect();
    Ok(cells)
}

pub fn write_heatmap_csv<W: Write>(cells: &[HeatmapCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["y_m", "z_m", "peb_m", "rmse_m"]).map_err(csv_err)?;
    for c in cells {
        w.write_record([c.y_m.to_string(), c.z_m.to_string(), c.peb_m.to_string(), c.rmse_m.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// JSON run manifest: the configuration echo plus seeds and versions.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize> {
    pub command: String,
    pub crate_version: &'static str,
    pub base_seed: u64,
    pub trials: usize,
    pub outputs: Vec<String>,
    pub config: C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(command: &str, base_seed: u64, trials: usize, config: C) -> Self {
        Self {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION"),
            base_seed,
            trials,
            outputs: Vec::new(),
            config,
            extra: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// The reference-scene setup used by the standard experiments: two paths with
/// a `pi/4` offset, DFT combiners, far-field channels.
pub fn reference_setup(k: usize, tx_power_dbm: f64, estimator: EstimatorKind) -> TrialSetup {
    TrialSetup {
        scene: Scene::reference(),
        scenario: ScenarioConfig::default(),
        training: Training {
            k,
            combiner: CombinerKind::Dft,
            tx_power_dbm,
            noise_var_dbm: measurement::NoiseModel::default().variance_dbm(),
            model: ChannelModel::FarField,
        },
        estimator,
        pipeline: PipelineConfig::default(),
    }
}
