//! Per-subarray channel synthesis.
//!
//! Two models are provided. [`farfield_channel`] is the plane-wave Kronecker
//! model `h = sum_l gamma_l alpha_y(theta_l, phi_l) (x) alpha_z(phi_l)` that the
//! bound and the estimators are built on. [`nearfield_channel`] uses the exact
//! element-to-source distances; it agrees with the far-field model only up to
//! the angle reparameterisation described on [`ChannelModel::NearField`].

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Scene, SubarrayConfig, Vec3};
use crate::C64;

/// Free-space path-loss intercept, dB.
const PATHLOSS_INTERCEPT_DB: f64 = 32.45;

/// `[1, e^{j k s}, ..., e^{j k (n-1) s}]` with `k = 2 pi spacing / lambda`.
fn phase_ramp(n: usize, s: f64, spacing: f64, wavelength: f64) -> DVector<C64> {
    let k = 2.0 * PI * spacing / wavelength * s;
    DVector::from_fn(n, |m, _| C64::from_polar(1.0, k * m as f64))
}

/// Horizontal array response, phase progression `sin(theta) sin(phi)`.
pub fn steering_y(theta: f64, phi: f64, m_y: usize, spacing: f64, wavelength: f64) -> DVector<C64> {
    phase_ramp(m_y, theta.sin() * phi.sin(), spacing, wavelength)
}

/// Vertical array response, phase progression `cos(phi)`.
pub fn steering_z(phi: f64, m_z: usize, spacing: f64, wavelength: f64) -> DVector<C64> {
    phase_ramp(m_z, phi.cos(), spacing, wavelength)
}

/// Kronecker product of two vectors, `b` running fastest.
pub fn kron(a: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
    let nb = b.len();
    DVector::from_fn(a.len() * nb, |k, _| a[k / nb] * b[k % nb])
}

/// `alpha_y(theta, phi) (x) alpha_z(phi)` for one subarray.
pub fn steering(theta: f64, phi: f64, sub: &SubarrayConfig, wavelength: f64) -> DVector<C64> {
    kron(
        &steering_y(theta, phi, sub.elements_y, sub.spacing_y, wavelength),
        &steering_z(phi, sub.elements_z, sub.spacing_z, wavelength),
    )
}

/// Free-space path loss `10^3.245 d^2 f_c^2` (linear, `f_c` in GHz).
pub fn pathloss(distance: f64, carrier_freq_ghz: f64) -> Result<f64> {
    if !(distance > 0.0) || !(carrier_freq_ghz > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs positive distance and frequency, got {distance} m, {carrier_freq_ghz} GHz"
        )));
    }
    Ok(10f64.powf(PATHLOSS_INTERCEPT_DB / 10.0) * distance * distance * carrier_freq_ghz * carrier_freq_ghz)
}

/// One propagation path as seen by a subarray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub theta: f64,
    pub phi: f64,
    /// Total travelled distance, meters.
    pub distance: f64,
    /// Linear path loss.
    pub pathloss: f64,
    /// `e^{-j 2 pi d / lambda} / sqrt(pathloss)`.
    pub gain: C64,
    /// The elevation left `[-pi/2, pi/2]` when the path was generated.
    pub elevation_out_of_range: bool,
}

impl Path {
    /// Builds a path whose gain follows from its distance.
    pub fn new(theta: f64, phi: f64, distance: f64, carrier_freq_ghz: f64) -> Result<Self> {
        let pl = pathloss(distance, carrier_freq_ghz)?;
        let wavelength = crate::units::wavelength_m(carrier_freq_ghz);
        Ok(Self {
            theta,
            phi,
            distance,
            pathloss: pl,
            gain: C64::from_polar(1.0 / pl.sqrt(), -2.0 * PI * distance / wavelength),
            elevation_out_of_range: false,
        })
    }
}

/// Paths of every subarray; entry 0 of each list is the LoS path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub per_subarray: Vec<Vec<Path>>,
}

impl PathSet {
    pub fn paths(&self, i: usize) -> &[Path] {
        &self.per_subarray[i]
    }

    pub fn los(&self, i: usize) -> &Path {
        &self.per_subarray[i][0]
    }

    pub fn any_elevation_out_of_range(&self) -> bool {
        self.per_subarray.iter().flatten().any(|p| p.elevation_out_of_range)
    }

    /// LoS-only path set from the scene geometry.
    pub fn line_of_sight(scene: &Scene) -> Result<Self> {
        let per_subarray = (0..scene.num_subarrays())
            .map(|i| {
                let a = geometry::truth_angles(scene, i)?;
                Ok(vec![Path::new(a.theta, a.phi, a.distance, scene.carrier_freq_ghz)?])
            })
            .collect::<Result<_>>()?;
        Ok(Self { per_subarray })
    }
}

/// Far-field channel of subarray `i`.
pub fn farfield_channel(paths: &PathSet, i: usize, config: &SubarrayConfig, wavelength: f64) -> DVector<C64> {
    let mut h = DVector::zeros(config.num_elements());
    for p in paths.paths(i) {
        h += steering(p.theta, p.phi, config, wavelength) * p.gain;
    }
    h
}

/// Exact-distance channel of subarray `i`.
///
/// Path `l` is radiated from the point `p_c + d_l xi(theta_l, phi_l)`, which
/// for the LoS path is the transmitter itself. Element phases are taken
/// relative to the centroid distance.
pub fn nearfield_channel(scene: &Scene, i: usize, paths: &PathSet) -> Result<DVector<C64>> {
    let sub = &scene.subarrays[i];
    let k = 2.0 * PI / scene.wavelength();
    let mut h = DVector::zeros(sub.num_elements());
    for p in paths.paths(i) {
        let source: Vec3 = sub.centroid + geometry::bearing(p.theta, p.phi) * p.distance;
        let d_c = (source - sub.centroid).norm();
        for m in 0..sub.num_elements() {
            let d_m = (source - sub.element_position(m)).norm();
            if d_m == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "source of a path coincides with element {m} of subarray {i}"
                )));
            }
            h[m] += p.gain * C64::from_polar(1.0, k * (d_m - d_c));
        }
    }
    Ok(h)
}

/// Which physical model synthesises the received channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    /// Plane-wave Kronecker model, consistent with the bound.
    #[default]
    FarField,
    /// Exact spherical wavefronts. In the far-field limit this tends to a
    /// plane wave whose horizontal/vertical phase slopes are the y/z direction
    /// cosines of the propagation direction `-xi`, which coincide with the
    /// Kronecker model only at [`equivalent_angles`], not at the bearing angles.
    NearField,
}

/// Angles at which the Kronecker steering reproduces the far-field limit of
/// the spherical model for bearing `(theta, phi)`.
///
/// Returns `(theta_eq, phi_eq)` with `cos(phi_eq) = -xi_z` and
/// `sin(theta_eq) sin(phi_eq) = -xi_y`.
pub fn equivalent_angles(theta: f64, phi: f64) -> (f64, f64) {
    let xi = geometry::bearing(theta, phi);
    let phi_eq = (-xi.z).clamp(-1.0, 1.0).acos();
    let s = phi_eq.sin();
    let theta_eq = if s.abs() < 1e-15 {
        0.0
    } else {
        (-xi.y / s).clamp(-1.0, 1.0).asin()
    };
    (theta_eq, phi_eq)
}

/// Channel of subarray `i` under `model`.
pub fn channel(model: ChannelModel, scene: &Scene, paths: &PathSet, i: usize) -> Result<DVector<C64>> {
    match model {
        ChannelModel::FarField => Ok(farfield_channel(paths, i, &scene.subarrays[i], scene.wavelength())),
        ChannelModel::NearField => nearfield_channel(scene, i, paths),
    }
}

/// What to do when an NLoS elevation leaves `[-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElevationPolicy {
    /// Keep the raw angle; the steering vectors remain well defined.
    #[default]
    Extend,
    /// Saturate at `+-pi/2`.
    Clamp,
}

/// Multipath scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Mean NLoS angle offset, radians.
    pub delta: f64,
    /// Half-width of the uniform spread around `delta`, radians.
    pub delta_spread: f64,
    /// LoS-to-NLoS power ratio, dB.
    pub power_ratio_db: f64,
    /// Paths per subarray including LoS.
    pub num_paths: usize,
    #[serde(default)]
    pub elevation_policy: ElevationPolicy,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            delta: PI / 4.0,
            delta_spread: 0.0,
            power_ratio_db: 20.0,
            num_paths: 2,
            elevation_policy: ElevationPolicy::Extend,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_spread >= 0.0) {
            return Err(Error::Config("delta_spread must be >= 0".into()));
        }
        if !(self.power_ratio_db >= 0.0) {
            return Err(Error::Config("power_ratio_db must be >= 0".into()));
        }
        if self.num_paths == 0 {
            return Err(Error::Config("num_paths must be >= 1".into()));
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        Ok(())
    }

    /// NLoS-to-LoS distance ratio giving the configured power ratio.
    pub fn distance_ratio(&self) -> f64 {
        10f64.powf(self.power_ratio_db / 20.0)
    }

    /// Draws one angle offset from `U[delta - spread, delta + spread]`.
    pub fn draw_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.delta_spread == 0.0 {
            self.delta
        } else {
            rng.random_range(self.delta - self.delta_spread..=self.delta + self.delta_spread)
        }
    }
}

/// NLoS path displaced from `los` by `offset` along both propagation angles
/// (`theta + offset`, `phi - offset` in bearing angles).
pub fn offset_path(los: &Path, offset: f64, cfg: &ScenarioConfig, carrier_freq_ghz: f64) -> Result<Path> {
    let mut phi = los.phi - offset;
    let out = !(-FRAC_PI_2..=FRAC_PI_2).contains(&phi);
    if out && cfg.elevation_policy == ElevationPolicy::Clamp {
        phi = phi.clamp(-FRAC_PI_2, FRAC_PI_2);
    }
    let mut p = Path::new(los.theta + offset, phi, los.distance * cfg.distance_ratio(), carrier_freq_ghz)?;
    p.elevation_out_of_range = out;
    Ok(p)
}

/// Builds the multipath set of every subarray.
///
/// NLoS path `k` (1-based) is offset by `k * delta_hat_k` from the LoS path
/// along both angles of the propagation direction, i.e. `theta + k delta_hat`
/// and `phi - k delta_hat` in bearing angles, with one independent draw per
/// subarray and path. Its distance is `10^(ratio/20)` times the LoS distance.
pub fn make_paths<R: Rng + ?Sized>(scene: &Scene, cfg: &ScenarioConfig, rng: &mut R) -> Result<PathSet> {
    cfg.validate()?;
    let fc = scene.carrier_freq_ghz;
    let mut per_subarray = Vec::with_capacity(scene.num_subarrays());
    for i in 0..scene.num_subarrays() {
        let los_angles = geometry::truth_angles(scene, i)?;
        let los = Path::new(los_angles.theta, los_angles.phi, los_angles.distance, fc)?;
        let mut paths = vec![los];
        for k in 1..cfg.num_paths {
            let offset = k as f64 * cfg.draw_offset(rng);
            paths.push(offset_path(&los, offset, cfg, fc)?);
        }
        per_subarray.push(paths);
    }
    Ok(PathSet { per_subarray })
}

/// [`make_paths`] with a dedicated seeded generator.
pub fn make_two_path(scene: &Scene, cfg: &ScenarioConfig, seed: u64) -> Result<PathSet> {
    make_paths(scene, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units;
    use approx::assert_relative_eq;

    const LAMBDA: f64 = 0.010_706_873_5;

    #[test]
    fn steering_trivial_cases() {
        let a = steering_y(0.0, 0.7, 5, LAMBDA / 2.0, LAMBDA);
        assert!(a.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));
        let b = steering_y(FRAC_PI_2, FRAC_PI_2, 2, LAMBDA / 2.0, LAMBDA);
        assert!((b[1] - C64::new(-1.0, 0.0)).norm() < 1e-12);
        let c = steering_z(FRAC_PI_2, 4, LAMBDA / 2.0, LAMBDA);
        assert!(c.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-15));
        let d = steering_z(0.0, 2, LAMBDA / 2.0, LAMBDA);
        assert!((d[1] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_formula_oracle() {
        let (t, p) = (PI / 3.0, PI / 4.0);
        let a = steering_y(t, p, 4, LAMBDA / 2.0, LAMBDA);
        for m in 0..4 {
            let e = C64::from_polar(1.0, PI * m as f64 * t.sin() * p.sin());
            assert!((a[m] - e).norm() < 1e-12);
        }
        let z = steering_z(0.6, 4, LAMBDA / 2.0, LAMBDA);
        for m in 0..4 {
            let e = C64::from_polar(1.0, PI * m as f64 * 0.6f64.cos());
            assert!((z[m] - e).norm() < 1e-12);
        }
    }

    #[test]
    fn pathloss_values() {
        assert_relative_eq!(pathloss(1.0, 1.0).unwrap(), 1_757.923_613_958_693, max_relative = 1e-12);
        let d = 54.32f64.sqrt();
        assert_relative_eq!(
            pathloss(d, 28.0).unwrap(),
            10f64.powf(3.245) * 54.32 * 784.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(pathloss(2.0, 5.0).unwrap(), 4.0 * pathloss(1.0, 5.0).unwrap(), max_relative = 1e-12);
        assert!(pathloss(0.0, 28.0).is_err());
        assert!(pathloss(1.0, -1.0).is_err());
    }

    #[test]
    fn single_path_all_ones() {
        let sub = SubarrayConfig::half_wavelength(Vec3::zeros(), 4, 4, LAMBDA);
        let p = Path {
            theta: 0.0,
            phi: 0.0,
            distance: 1.0,
            pathloss: 1.0,
            gain: C64::new(1.0, 0.0),
            elevation_out_of_range: false,
        };
        let ps = PathSet {
            per_subarray: vec![vec![p]],
        };
        let h = farfield_channel(&ps, 0, &sub, LAMBDA);
        // alpha_z at phi = 0 alternates sign; theta = 0 leaves alpha_y flat.
        for m in 0..16 {
            let e = if (m % 4) % 2 == 0 { 1.0 } else { -1.0 };
            assert!((h[m] - C64::new(e, 0.0)).norm() < 1e-12);
        }
        let p2 = Path { phi: FRAC_PI_2, ..p };
        let ps2 = PathSet {
            per_subarray: vec![vec![p2]],
        };
        let h2 = farfield_channel(&ps2, 0, &sub, LAMBDA);
        assert!(h2.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn reference_los_elementwise() {
        let scene = Scene::reference();
        let ps = PathSet::line_of_sight(&scene).unwrap();
        let sub = &scene.subarrays[0];
        let h = farfield_channel(&ps, 0, sub, scene.wavelength());
        let v = scene.ms_position - sub.centroid;
        let d = v.norm();
        let (theta, phi) = (v.y.atan2(v.x), (v.z / d).asin());
        let rho = 10f64.powf(3.245) * d * d * 784.0;
        let lambda = units::wavelength_m(28.0);
        for m in 0..16 {
            let (my, mz) = ((m / 4) as f64, (m % 4) as f64);
            let ph = -2.0 * PI * d / lambda + PI * my * theta.sin() * phi.sin() + PI * mz * phi.cos();
            let e = C64::from_polar(1.0 / rho.sqrt(), ph);
            assert!((h[m] - e).norm() < 1e-9 * e.norm());
        }
    }

    #[test]
    fn two_path_power_ratio() {
        let scene = Scene::reference();
        let ps = make_two_path(&scene, &ScenarioConfig::default(), 7).unwrap();
        for i in 0..4 {
            let (a, b) = (ps.paths(i)[0], ps.paths(i)[1]);
            assert_relative_eq!(b.distance / a.distance, 10.0, max_relative = 1e-14);
            let db = 20.0 * (a.gain.norm() / b.gain.norm()).log10();
            assert!((db - 20.0).abs() < 1e-9);
            assert!((b.theta - a.theta - PI / 4.0).abs() < 1e-15);
            assert!((a.phi - b.phi - PI / 4.0).abs() < 1e-15);
            let sub = &scene.subarrays[i];
            let c1 = steering(a.theta, a.phi, sub, scene.wavelength()) * a.gain;
            let c2 = steering(b.theta, b.phi, sub, scene.wavelength()) * b.gain;
            assert_relative_eq!(c2.norm() / c1.norm(), 0.1, max_relative = 1e-12);
        }
    }

    #[test]
    fn elevation_policy() {
        let scene = Scene::reference();
        let cfg = ScenarioConfig {
            delta: 1.2,
            ..Default::default()
        };
        let ext = make_two_path(&scene, &cfg, 1).unwrap();
        assert!(ext.any_elevation_out_of_range());
        assert!(ext.paths(0)[1].phi < -FRAC_PI_2);
        let clamped = make_two_path(
            &scene,
            &ScenarioConfig {
                elevation_policy: ElevationPolicy::Clamp,
                ..cfg
            },
            1,
        )
        .unwrap();
        assert!(clamped.any_elevation_out_of_range());
        assert_eq!(clamped.paths(0)[1].phi, -FRAC_PI_2);
    }

    #[test]
    fn offset_moments() {
        let cfg = ScenarioConfig {
            delta: 0.5,
            delta_spread: 0.2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| cfg.draw_offset(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sigma = (0.04f64 / 3.0).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * sigma / (n as f64).sqrt());
        assert!((var - 0.04 / 3.0).abs() < 0.02 * 0.04 / 3.0);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let scene = Scene::reference();
        let cfg = ScenarioConfig {
            delta_spread: 0.1,
            ..Default::default()
        };
        assert_eq!(make_two_path(&scene, &cfg, 11).unwrap(), make_two_path(&scene, &cfg, 11).unwrap());
        assert_ne!(make_two_path(&scene, &cfg, 11).unwrap(), make_two_path(&scene, &cfg, 12).unwrap());
    }

    #[test]
    fn invalid_scenario() {
        let scene = Scene::reference();
        for cfg in [
            ScenarioConfig {
                delta_spread: -0.1,
                ..Default::default()
            },
            ScenarioConfig {
                power_ratio_db: -1.0,
                ..Default::default()
            },
            ScenarioConfig {
                num_paths: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(make_two_path(&scene, &cfg, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn nearfield_single_element_broadside() {
        let sub = SubarrayConfig::half_wavelength(Vec3::new(2.0, 0.0, 0.0), 1, 1, LAMBDA);
        let scene = Scene::new(Vec3::zeros(), vec![sub], 28.0).unwrap();
        let ps = PathSet::line_of_sight(&scene).unwrap();
        let h = nearfield_channel(&scene, 0, &ps).unwrap();
        let g = ps.los(0).gain;
        assert!((h[0] - g).norm() < 1e-15 * g.norm());
    }

    #[test]
    fn nearfield_elementwise_distance_oracle() {
        let scene = Scene::reference();
        let ps = PathSet::line_of_sight(&scene).unwrap();
        let h = nearfield_channel(&scene, 0, &ps).unwrap();
        let sub = &scene.subarrays[0];
        let m = 6;
        let dm = (scene.ms_position - sub.element_position(m)).norm();
        let dc = (scene.ms_position - sub.centroid).norm();
        let e = ps.los(0).gain * C64::from_polar(1.0, 2.0 * PI / scene.wavelength() * (dm - dc));
        assert!((h[m] - e).norm() < 1e-9 * e.norm());
    }

    #[test]
    fn nearfield_converges_to_equivalent_planewave() {
        let lambda = units::wavelength_m(28.0);
        let sub = SubarrayConfig::half_wavelength(Vec3::zeros(), 4, 4, lambda);
        let aperture = 4.0 * lambda / 2.0 * 2f64.sqrt();
        let (theta, phi) = (-2.3, -0.6);
        let mut errors = Vec::new();
        for scale in [1e2, 1e3, 1e4] {
            let d = scale * aperture;
            let ms = geometry::bearing(theta, phi) * d;
            let scene = Scene::new(ms, vec![sub.clone()], 28.0).unwrap();
            let ps = PathSet::line_of_sight(&scene).unwrap();
            let near = nearfield_channel(&scene, 0, &ps).unwrap();
            let (te, pe) = equivalent_angles(theta, phi);
            let far = steering(te, pe, &sub, lambda);
            // remove gain and the centring phase of the far-field reference
            let ratio: Vec<C64> = near.iter().zip(far.iter()).map(|(n, f)| n / f).collect();
            let mean = ratio.iter().sum::<C64>() / ratio.len() as f64;
            let err = ratio.iter().map(|r| (r / mean).arg().abs()).fold(0.0, f64::max);
            errors.push(err);
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
        assert!(errors[2] < 1e-2);
    }

    #[test]
    fn farfield_single_path_is_rank_one() {
        let scene = Scene::reference();
        let ps = PathSet::line_of_sight(&scene).unwrap();
        let h = farfield_channel(&ps, 2, &scene.subarrays[2], scene.wavelength());
        let mat = nalgebra::DMatrix::from_column_slice(4, 4, h.as_slice());
        let sv = mat.singular_values();
        assert!(sv[1] < 1e-12 * sv[0]);
    }
}
