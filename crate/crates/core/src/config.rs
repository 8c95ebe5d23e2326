//! Run configuration.
//!
//! A TOML document with one table per concern. Every key carries its unit in
//! its name (`_dbm`, `_ghz`, `_mhz`, `_m`, `_rad`, `_db`) and unknown keys are
//! rejected. Omitted keys take the reference-deployment values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::anm::AnmOptions;
use crate::channel::{ChannelModel, ElevationPolicy, ScenarioConfig};
use crate::error::{Error, Result};
use crate::experiments::{EstimatorKind, PipelineConfig, ScenePlan, SweepSpec, SweepValue, SweepVariable, TrialSetup};
use crate::geometry::{ElementLayout, PartitionPattern, Scene, Vec3};
use crate::measurement::{CombinerKind, NoiseModel, Training};
use crate::music::AzimuthSector;
use crate::omp::GridDictionary;
use crate::units;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    /// Explicit scene description (TOML). When set, the partition keys below
    /// are ignored and partition sweeps are unavailable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// `"<columns>x<rows>"`.
    pub pattern: String,
    pub v_spacing_m: f64,
    pub h_spacing_m: f64,
    pub centroid_m: [f64; 3],
    pub elements_y: usize,
    pub elements_z: usize,
    pub ms_position_m: [f64; 3],
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            file: None,
            pattern: "2x2".into(),
            v_spacing_m: 0.4,
            h_spacing_m: 0.4,
            centroid_m: [2.0, 5.0, 5.0],
            elements_y: 4,
            elements_z: 4,
            ms_position_m: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    pub carrier_freq_ghz: f64,
    pub bandwidth_mhz: f64,
    pub noise_figure_db: f64,
    pub combiner: CombinerKind,
    pub k: usize,
    pub tx_power_dbm: f64,
    pub channel_model: ChannelModel,
}

impl Default for WaveformSection {
    fn default() -> Self {
        let noise = NoiseModel::default();
        Self {
            carrier_freq_ghz: 28.0,
            bandwidth_mhz: noise.bandwidth_mhz,
            noise_figure_db: noise.noise_figure_db,
            combiner: CombinerKind::Dft,
            k: 32,
            tx_power_dbm: 20.0,
            channel_model: ChannelModel::FarField,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub delta_rad: f64,
    pub delta_spread_rad: f64,
    pub power_ratio_db: f64,
    pub num_paths: usize,
    pub elevation_policy: ElevationPolicy,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = ScenarioConfig::default();
        Self {
            delta_rad: s.delta,
            delta_spread_rad: s.delta_spread,
            power_ratio_db: s.power_ratio_db,
            num_paths: s.num_paths,
            elevation_policy: s.elevation_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    /// `c` in `mu = c sigma ||A||_2 sqrt(M ln M)`.
    pub mu_scale: f64,
    pub model_order: usize,
    pub sector: AzimuthSector,
    pub anm_rho: f64,
    pub anm_eps_abs: f64,
    pub anm_eps_rel: f64,
    pub anm_max_iter: usize,
    pub omp_grid_y: usize,
    pub omp_grid_z: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            kind: EstimatorKind::AnmMusic,
            mu_scale: p.mu_scale,
            model_order: p.model_order,
            sector: p.sector,
            anm_rho: p.anm.rho,
            anm_eps_abs: p.anm.eps_abs,
            anm_eps_rel: p.anm.eps_rel,
            anm_max_iter: p.anm.max_iter,
            omp_grid_y: p.omp_grid.grid_y,
            omp_grid_z: p.omp_grid.grid_z,
        }
    }
}

/// A second sweep dimension: one curve per value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    pub variable: SeriesVariable,
    pub values: Vec<SweepValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVariable {
    #[serde(rename = "k")]
    TrainingOverhead,
    SubarraySpacing,
    PartitionPattern,
    TxPower,
    Estimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    pub values: Vec<SweepValue>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesSection>,
}

fn default_trials() -> usize {
    200
}

fn default_seed() -> u64 {
    1
}

/// LoS angle bound versus NLoS offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlosCurveSection {
    pub subarray: usize,
    pub delta_min_rad: f64,
    pub delta_max_rad: f64,
    pub delta_step_rad: f64,
    pub spreads_rad: Vec<f64>,
    /// Seed of the random-phase combiner.
    pub combiner_seed: u64,
}

impl Default for NlosCurveSection {
    fn default() -> Self {
        Self {
            subarray: 0,
            delta_min_rad: 0.05,
            delta_max_rad: 1.5,
            delta_step_rad: 0.05,
            spreads_rad: vec![0.0],
            combiner_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSection {
    pub x_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
    pub step_m: f64,
    /// Monte Carlo trials per cell; 0 computes the bound only.
    pub trials: usize,
    pub base_seed: u64,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        Self {
            x_m: 0.0,
            y_min_m: 0.0,
            y_max_m: 10.0,
            z_min_m: 0.0,
            z_max_m: 10.0,
            step_m: 0.5,
            trials: 0,
            base_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdopCase {
    pub pattern: String,
    pub centroid_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdopSection {
    pub cases: Vec<GdopCase>,
}

impl Default for GdopSection {
    /// The nine pattern/centroid combinations of the partitioning study.
    fn default() -> Self {
        let mut cases = Vec::new();
        for c in [[2.0, 5.0, 5.0], [2.0, 2.0, 7.0], [2.0, 7.0, 2.0]] {
            for p in ["2x2", "1x4", "4x1"] {
                cases.push(GdopCase {
                    pattern: p.into(),
                    centroid_m: c,
                });
            }
        }
        Self { cases }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSection,
    pub waveform: WaveformSection,
    pub scenario: ScenarioSection,
    pub estimator: EstimatorSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub nlos_curve: NlosCurveSection,
    pub heatmap: HeatmapSection,
    pub gdop: GdopSection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSection::default(),
            waveform: WaveformSection::default(),
            scenario: ScenarioSection::default(),
            estimator: EstimatorSection::default(),
            sweep: None,
            nlos_curve: NlosCurveSection::default(),
            heatmap: HeatmapSection::default(),
            gdop: GdopSection::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Names accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 5] = ["nlos-bound", "overhead", "heatmap", "spacing", "partitions"];

fn numbers(v: &[f64]) -> Vec<SweepValue> {
    v.iter().copied().map(SweepValue::Number).collect()
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Built-in experiment configurations.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let powers = numbers(&[-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        match name {
            // LoS angle bounds vs NLoS offset: K = 64 random phases, P = 0 dBm
            "nlos-bound" => {
                c.waveform.k = 64;
                c.waveform.combiner = CombinerKind::RandomPhase;
                c.waveform.tx_power_dbm = 0.0;
                c.nlos_curve.spreads_rad = vec![0.0, 0.1, 0.2];
            }
            // RMSE vs power for three training overheads
            "overhead" => {
                c.sweep = Some(SweepSection {
                    variable: SweepVariable::TxPower,
                    values: powers,
                    trials: default_trials(),
                    base_seed: default_seed(),
                    series: Some(SeriesSection {
                        variable: SeriesVariable::TrainingOverhead,
                        values: numbers(&[16.0, 32.0, 64.0]),
                    }),
                });
            }
            // bound over the x = 0 plane at -20 dBm
            "heatmap" => {
                c.waveform.tx_power_dbm = -20.0;
            }
            // RMSE vs power for four subarray spacings
            "spacing" => {
                c.sweep = Some(SweepSection {
                    variable: SweepVariable::TxPower,
                    values: powers,
                    trials: default_trials(),
                    base_seed: default_seed(),
                    series: Some(SeriesSection {
                        variable: SeriesVariable::SubarraySpacing,
                        values: numbers(&[0.2, 0.4, 0.8, 1.2]),
                    }),
                });
            }
            // partitioning study: GDoP table plus the bound at 20 dBm
            "partitions" => {
                c.estimator.kind = EstimatorKind::CrlbOnly;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scene;
        if s.file.is_none() {
            PartitionPattern::from_label(&s.pattern, s.v_spacing_m, s.h_spacing_m, Vec3::from(s.centroid_m))?;
            if s.elements_y == 0 || s.elements_z == 0 {
                return Err(Error::Config("scene.elements_y and scene.elements_z must be >= 1".into()));
            }
            if !(s.v_spacing_m >= 0.0 && s.h_spacing_m >= 0.0) {
                return Err(Error::Config("scene spacings must be >= 0".into()));
            }
        }
        let w = &self.waveform;
        if !(w.carrier_freq_ghz > 0.0) {
            return Err(Error::Config("waveform.carrier_freq_ghz must be > 0".into()));
        }
        if w.k == 0 {
            return Err(Error::Config("waveform.k must be >= 1".into()));
        }
        if !w.tx_power_dbm.is_finite() {
            return Err(Error::Config("waveform.tx_power_dbm must be finite".into()));
        }
        self.noise_model().validate()?;
        self.scenario_config().validate()?;
        let e = &self.estimator;
        if !(e.mu_scale > 0.0) {
            return Err(Error::Config("estimator.mu_scale must be > 0".into()));
        }
        if e.model_order == 0 {
            return Err(Error::Config("estimator.model_order must be >= 1".into()));
        }
        if !(e.anm_rho > 0.0 && e.anm_eps_abs > 0.0 && e.anm_eps_rel >= 0.0) || e.anm_max_iter == 0 {
            return Err(Error::Config("estimator ANM settings must be positive".into()));
        }
        GridDictionary::new(e.omp_grid_y, e.omp_grid_z)?;
        if let Some(sw) = &self.sweep {
            self.sweep_spec_for(sw).validate()?;
            if let Some(series) = &sw.series {
                if series.values.is_empty() {
                    return Err(Error::Config("sweep.series.values must not be empty".into()));
                }
            }
            let needs_plan = matches!(sw.variable, SweepVariable::SubarraySpacing | SweepVariable::PartitionPattern)
                || matches!(
                    sw.series.as_ref().map(|s| s.variable),
                    Some(SeriesVariable::SubarraySpacing | SeriesVariable::PartitionPattern)
                );
            if needs_plan && s.file.is_some() {
                return Err(Error::Config("spacing and partition sweeps need the partition keys, not scene.file".into()));
            }
        }
        let n = &self.nlos_curve;
        if !(n.delta_step_rad > 0.0) || !(n.delta_max_rad >= n.delta_min_rad) {
            return Err(Error::Config("nlos_curve delta range is empty".into()));
        }
        if n.spreads_rad.is_empty() || n.spreads_rad.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("nlos_curve.spreads_rad must be non-empty and >= 0".into()));
        }
        let h = &self.heatmap;
        if !(h.step_m > 0.0) || !(h.y_max_m >= h.y_min_m) || !(h.z_max_m >= h.z_min_m) {
            return Err(Error::Config("heatmap grid is empty".into()));
        }
        for c in &self.gdop.cases {
            PartitionPattern::from_label(&c.pattern, s.v_spacing_m, s.h_spacing_m, Vec3::from(c.centroid_m))?;
        }
        Ok(())
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel {
            bandwidth_mhz: self.waveform.bandwidth_mhz,
            noise_figure_db: self.waveform.noise_figure_db,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            delta: s.delta_rad,
            delta_spread: s.delta_spread_rad,
            power_ratio_db: s.power_ratio_db,
            num_paths: s.num_paths,
            elevation_policy: s.elevation_policy,
        }
    }

    /// Partition recipe, or `None` when the scene comes from a file.
    pub fn scene_plan(&self) -> Result<Option<ScenePlan>> {
        let s = &self.scene;
        if s.file.is_some() {
            return Ok(None);
        }
        let fc = self.waveform.carrier_freq_ghz;
        Ok(Some(ScenePlan {
            pattern: PartitionPattern::from_label(&s.pattern, s.v_spacing_m, s.h_spacing_m, Vec3::from(s.centroid_m))?,
            layout: ElementLayout::half_wavelength(s.elements_y, s.elements_z, units::wavelength_m(fc)),
            ms_position: Vec3::from(s.ms_position_m),
            carrier_freq_ghz: fc,
        }))
    }

    pub fn scene(&self) -> Result<Scene> {
        match &self.scene.file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read scene file {}: {e}", path.display())))?;
                Scene::from_toml(&text)
            }
            None => self.scene_plan()?.expect("partition plan").build(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let e = &self.estimator;
        PipelineConfig {
            mu_scale: e.mu_scale,
            model_order: e.model_order,
            sector: e.sector,
            anm: AnmOptions {
                rho: e.anm_rho,
                eps_abs: e.anm_eps_abs,
                eps_rel: e.anm_eps_rel,
                max_iter: e.anm_max_iter,
                ..AnmOptions::default()
            },
            omp_grid: GridDictionary {
                grid_y: e.omp_grid_y,
                grid_z: e.omp_grid_z,
            },
        }
    }

    pub fn trial_setup(&self) -> Result<TrialSetup> {
        let w = &self.waveform;
        Ok(TrialSetup {
            scene: self.scene()?,
            scenario: self.scenario_config(),
            training: Training {
                k: w.k,
                combiner: w.combiner,
                tx_power_dbm: w.tx_power_dbm,
                noise_var_dbm: self.noise_model().variance_dbm(),
                model: w.channel_model,
            },
            estimator: self.estimator.kind,
            pipeline: self.pipeline(),
        })
    }

    fn sweep_spec_for(&self, sw: &SweepSection) -> SweepSpec {
        SweepSpec {
            variable: sw.variable,
            values: sw.values.clone(),
            trials: sw.trials,
            base_seed: sw.base_seed,
            estimator: self.estimator.kind,
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        self.sweep
            .as_ref()
            .map(|sw| self.sweep_spec_for(sw))
            .ok_or_else(|| Error::Config("this command needs a [sweep] table".into()))
    }

    /// One `(series label, setup, partition plan)` per curve of the sweep;
    /// a single unlabeled entry without a `[sweep.series]` table.
    pub fn series_setups(&self) -> Result<Vec<(String, TrialSetup, Option<ScenePlan>)>> {
        let base = self.trial_setup()?;
        let plan = self.scene_plan()?;
        let Some(series) = self.sweep.as_ref().and_then(|s| s.series.as_ref()) else {
            return Ok(vec![(String::new(), base, plan)]);
        };
        series
            .values
            .iter()
            .map(|value| {
                let var = match series.variable {
                    SeriesVariable::TrainingOverhead => SweepVariable::TrainingOverhead,
                    SeriesVariable::SubarraySpacing => SweepVariable::SubarraySpacing,
                    SeriesVariable::PartitionPattern => SweepVariable::PartitionPattern,
                    SeriesVariable::TxPower => SweepVariable::TxPower,
                    SeriesVariable::Estimator => {
                        let kind = match value {
                            SweepValue::Label(l) => l.parse::<EstimatorKind>()?,
                            other => return Err(Error::Config(format!("estimator series expects labels, got {other}"))),
                        };
                        let mut s = base.clone();
                        s.estimator = kind;
                        return Ok((format!("estimator={value}"), s, plan.clone()));
                    }
                };
                let setup = crate::experiments::apply_sweep_value(&base, plan.as_ref(), var, value)?;
                let mut plan = plan.clone();
                if let (Some(p), SweepVariable::SubarraySpacing, SweepValue::Number(v)) = (plan.as_mut(), var, value) {
                    p.pattern.v_spacing = *v;
                    p.pattern.h_spacing = *v;
                }
                if let (Some(p), SweepVariable::PartitionPattern, SweepValue::Label(l)) = (plan.as_mut(), var, value) {
                    p.pattern = PartitionPattern::from_label(l, p.pattern.v_spacing, p.pattern.h_spacing, p.pattern.centroid)?;
                }
                Ok((format!("{}={value}", var.label()), setup, plan))
            })
            .collect()
    }

    /// Offsets of the NLoS curve.
    pub fn nlos_deltas(&self) -> Vec<f64> {
        let n = &self.nlos_curve;
        let count = ((n.delta_max_rad - n.delta_min_rad) / n.delta_step_rad + 1e-9).floor() as usize + 1;
        (0..count).map(|i| n.delta_min_rad + i as f64 * n.delta_step_rad).collect()
    }
}
