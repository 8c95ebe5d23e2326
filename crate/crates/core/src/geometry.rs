//! Scene description and geometric ground truth.
//!
//! Angles follow the bearing convention `p_ms = p_sub + d * xi(theta, phi)` with
//! `xi = [cos(theta) cos(phi), sin(theta) cos(phi), sin(phi)]`: `theta` is the
//! azimuth in `(-pi, pi]` measured in the x–y plane and `phi` the elevation in
//! `[-pi/2, pi/2]`. Subarrays lie in planes parallel to the y–z plane.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

pub type Vec3 = Vector3<f64>;

/// Zenith detection threshold on `|cos(phi)|`.
const ZENITH_EPS: f64 = 1e-12;

/// One uniform planar subarray of meta-atoms feeding a single RF chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubarrayConfig {
    /// Subarray centroid, meters.
    pub centroid: Vec3,
    /// Number of elements along y (horizontal).
    pub elements_y: usize,
    /// Number of elements along z (vertical).
    pub elements_z: usize,
    /// Horizontal element spacing, meters.
    pub spacing_y: f64,
    /// Vertical element spacing, meters.
    pub spacing_z: f64,
}

impl SubarrayConfig {
    /// A `elements_y x elements_z` subarray with half-wavelength spacing.
    pub fn half_wavelength(centroid: Vec3, elements_y: usize, elements_z: usize, wavelength: f64) -> Self {
        Self {
            centroid,
            elements_y,
            elements_z,
            spacing_y: wavelength / 2.0,
            spacing_z: wavelength / 2.0,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.elements_y * self.elements_z
    }

    /// Offset of element `m` from the centroid. Elements are ordered with the
    /// z index running fastest, matching `alpha_y (x) alpha_z`.
    pub fn element_offset(&self, m: usize) -> Vec3 {
        let my = (m / self.elements_z) as f64;
        let mz = (m % self.elements_z) as f64;
        let cy = (self.elements_y as f64 - 1.0) / 2.0;
        let cz = (self.elements_z as f64 - 1.0) / 2.0;
        Vec3::new(0.0, (my - cy) * self.spacing_y, (mz - cz) * self.spacing_z)
    }

    pub fn element_position(&self, m: usize) -> Vec3 {
        self.centroid + self.element_offset(m)
    }

    fn validate(&self) -> Result<()> {
        if self.elements_y == 0 || self.elements_z == 0 {
            return Err(Error::Config("subarray element counts must be >= 1".into()));
        }
        if !(self.spacing_y > 0.0 && self.spacing_z > 0.0) {
            return Err(Error::Config("subarray element spacings must be > 0".into()));
        }
        if !self.centroid.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("subarray centroid must be finite".into()));
        }
        Ok(())
    }
}

/// Geometric ground truth of one simulation: transmitter, subarrays, carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    /// Mobile station position, meters.
    pub ms_position: Vec3,
    /// Carrier frequency, GHz.
    pub carrier_freq_ghz: f64,
    pub subarrays: Vec<SubarrayConfig>,
}

impl Scene {
    pub fn new(ms_position: Vec3, subarrays: Vec<SubarrayConfig>, carrier_freq_ghz: f64) -> Result<Self> {
        let scene = Self {
            ms_position,
            carrier_freq_ghz,
            subarrays,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// The four-subarray reference deployment: a 2x2 partition centred at
    /// `[2, 5, 5]` with 0.4 m offsets, 4x4 half-wavelength subarrays, 28 GHz,
    /// transmitter at the origin.
    pub fn reference() -> Self {
        let fc = 28.0;
        let pattern = PartitionPattern::new(2, 2, 0.4, 0.4, Vec3::new(2.0, 5.0, 5.0));
        let layout = ElementLayout::half_wavelength(4, 4, units::wavelength_m(fc));
        Self::new(Vec3::zeros(), build_partition(&pattern, &layout), fc).expect("reference scene is valid")
    }

    pub fn wavelength(&self) -> f64 {
        units::wavelength_m(self.carrier_freq_ghz)
    }

    pub fn num_subarrays(&self) -> usize {
        self.subarrays.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_freq_ghz > 0.0) {
            return Err(Error::Config("carrier_freq_ghz must be > 0".into()));
        }
        if self.subarrays.is_empty() {
            return Err(Error::Config("scene needs at least one subarray".into()));
        }
        if !self.ms_position.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("ms_position must be finite".into()));
        }
        for (i, s) in self.subarrays.iter().enumerate() {
            s.validate()?;
            for t in &self.subarrays[..i] {
                if (t.centroid - s.centroid).norm() == 0.0 {
                    return Err(Error::Config(format!("subarray {i} duplicates another centroid")));
                }
            }
        }
        Ok(())
    }

    /// Parses and validates a TOML scene description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Same scene with a different transmitter position.
    pub fn with_ms_position(&self, p: Vec3) -> Self {
        Self {
            ms_position: p,
            ..self.clone()
        }
    }
}

/// Azimuth, elevation and range of a point seen from an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleTriple {
    pub theta: f64,
    pub phi: f64,
    pub distance: f64,
    /// Set when the point lies straight above or below the anchor; `theta`
    /// is then arbitrary (reported as 0).
    pub zenith: bool,
}

/// Unit bearing `xi(theta, phi)`.
pub fn bearing(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(ct * cp, st * cp, sp)
}

/// Angles and distance of `target` as seen from `anchor`.
pub fn angles_between(anchor: &Vec3, target: &Vec3) -> Result<AngleTriple> {
    let v = target - anchor;
    let d = v.norm();
    if !(d > 0.0) {
        return Err(Error::DegenerateGeometry("target coincides with anchor".into()));
    }
    let xi = v / d;
    let phi = xi.z.clamp(-1.0, 1.0).asin();
    let horizontal = xi.x.hypot(xi.y);
    let zenith = horizontal <= ZENITH_EPS;
    let theta = if zenith { 0.0 } else { xi.y.atan2(xi.x) };
    Ok(AngleTriple {
        theta,
        phi,
        distance: d,
        zenith,
    })
}

/// Ground-truth LoS angles and distance between subarray `i` and the MS.
pub fn truth_angles(scene: &Scene, i: usize) -> Result<AngleTriple> {
    let sub = scene
        .subarrays
        .get(i)
        .ok_or_else(|| Error::Domain(format!("subarray index {i} out of range")))?;
    angles_between(&sub.centroid, &scene.ms_position)
}

/// Inverse of [`angles_between`]: `anchor + d * xi(theta, phi)`.
pub fn reconstruct(anchor: &Vec3, angles: &AngleTriple) -> Vec3 {
    anchor + bearing(angles.theta, angles.phi) * angles.distance
}

/// Element grid shared by every subarray of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementLayout {
    pub elements_y: usize,
    pub elements_z: usize,
    pub spacing_y: f64,
    pub spacing_z: f64,
}

impl ElementLayout {
    pub fn half_wavelength(elements_y: usize, elements_z: usize, wavelength: f64) -> Self {
        Self {
            elements_y,
            elements_z,
            spacing_y: wavelength / 2.0,
            spacing_z: wavelength / 2.0,
        }
    }
}

/// Regular partition of the surface into `cols x rows` subarrays.
///
/// `cols` counts subarrays along y and `rows` along z, so the label `1x4`
/// (one column, four rows) is a vertical stack and `4x1` a horizontal line.
/// `v_spacing` / `h_spacing` are the distances `d_V` / `d_H` of the outermost
/// centroids of a 2x2 block to the pattern centroid; neighbouring centroids
/// are therefore `2 d_V` (`2 d_H`) apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPattern {
    pub rows: usize,
    pub cols: usize,
    pub v_spacing: f64,
    pub h_spacing: f64,
    pub centroid: Vec3,
}

impl PartitionPattern {
    pub fn new(cols: usize, rows: usize, v_spacing: f64, h_spacing: f64, centroid: Vec3) -> Self {
        Self {
            rows,
            cols,
            v_spacing,
            h_spacing,
            centroid,
        }
    }

    /// Parses labels such as `"2x2"`, `"1x4"` or `"4×1"` (columns first).
    pub fn from_label(label: &str, v_spacing: f64, h_spacing: f64, centroid: Vec3) -> Result<Self> {
        let norm = label.replace('×', "x").to_ascii_lowercase();
        let (c, r) = norm
            .split_once('x')
            .ok_or_else(|| Error::Config(format!("bad partition label {label:?}")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad partition label {label:?}")))
        };
        let (cols, rows) = (parse(c)?, parse(r)?);
        if cols == 0 || rows == 0 {
            return Err(Error::Config(format!("partition label {label:?} has a zero count")));
        }
        Ok(Self::new(cols, rows, v_spacing, h_spacing, centroid))
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.cols, self.rows)
    }

    pub fn num_subarrays(&self) -> usize {
        self.rows * self.cols
    }

    /// Subarray centroids, columns (increasing y) outermost and rows
    /// (decreasing z) innermost.
    pub fn centroids(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.num_subarrays());
        for q in 0..self.cols {
            let dy = (2.0 * q as f64 - (self.cols as f64 - 1.0)) * self.h_spacing;
            for r in 0..self.rows {
                let dz = -(2.0 * r as f64 - (self.rows as f64 - 1.0)) * self.v_spacing;
                out.push(self.centroid + Vec3::new(0.0, dy, dz));
            }
        }
        out
    }
}

/// Instantiates one subarray per pattern cell.
pub fn build_partition(pattern: &PartitionPattern, layout: &ElementLayout) -> Vec<SubarrayConfig> {
    pattern
        .centroids()
        .into_iter()
        .map(|centroid| SubarrayConfig {
            centroid,
            elements_y: layout.elements_y,
            elements_z: layout.elements_z,
            spacing_y: layout.spacing_y,
            spacing_z: layout.spacing_z,
        })
        .collect()
}

/// Geometric dilution of precision together with the matrix it was built from.
#[derive(Debug, Clone)]
pub struct GdopReport {
    pub value: f64,
    /// `I x 3` matrix whose rows are `p_sub,i / d_i`.
    pub h: DMatrix<f64>,
    pub used_pseudo_inverse: bool,
}

/// `sqrt(tr((H^T H)^-1))` with rows `p_sub,i / d_i`, falling back to the
/// Moore–Penrose pseudo-inverse when `H^T H` is singular.
///
/// The rows use absolute subarray coordinates, so the value depends on the
/// choice of origin.
pub fn gdop(scene: &Scene) -> GdopReport {
    let n = scene.num_subarrays();
    let mut h = DMatrix::zeros(n, 3);
    for (i, s) in scene.subarrays.iter().enumerate() {
        let d = (scene.ms_position - s.centroid).norm();
        for c in 0..3 {
            h[(i, c)] = s.centroid[c] / d;
        }
    }
    let hth: Matrix3<f64> = {
        let g = h.transpose() * &h;
        Matrix3::from_iterator(g.iter().copied())
    };
    let sv = hth.singular_values();
    let rcond = sv.min() / sv.max();
    let (inv, used_pinv) = match hth.try_inverse() {
        Some(inv) if rcond > 1e-12 => (inv, false),
        _ => (
            hth.pseudo_inverse(1e-12 * sv.max()).expect("non-negative epsilon"),
            true,
        ),
    };
    GdopReport {
        value: inv.trace().max(0.0).sqrt(),
        h,
        used_pseudo_inverse: used_pinv,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_vec_close(a: &Vec3, b: &Vec3, tol: f64) {
        assert!((a - b).norm() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn broadside_along_negative_x() {
        let a = angles_between(&Vec3::new(3.0, 1.0, 2.0), &Vec3::new(-2.0, 1.0, 2.0)).unwrap();
        assert!((a.theta - PI).abs() < 1e-15);
        assert_eq!(a.phi, 0.0);
        assert!((a.distance - 5.0).abs() < 1e-15);
        assert!(!a.zenith);
    }

    #[test]
    fn zenith_sets_flag() {
        let a = angles_between(&Vec3::zeros(), &Vec3::new(0.0, 0.0, 2.5)).unwrap();
        assert!(a.zenith);
        assert!((a.phi - FRAC_PI_2).abs() < 1e-15);
        assert_vec_close(&reconstruct(&Vec3::zeros(), &a), &Vec3::new(0.0, 0.0, 2.5), 1e-12);
    }

    #[test]
    fn reference_subarray_one_angles() {
        let scene = Scene::reference();
        let a = truth_angles(&scene, 0).unwrap();
        let v = Vec3::new(-2.0, -4.6, -5.4);
        let d = 54.32f64.sqrt();
        assert!((a.distance - d).abs() < 1e-12);
        let xi = v / d;
        assert!((a.theta - xi.y.atan2(xi.x)).abs() < 1e-15);
        assert!((a.phi - xi.z.asin()).abs() < 1e-15);
        assert!((a.distance - 7.3702).abs() < 1e-4);
    }

    #[test]
    fn coincident_points_error() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert!(matches!(angles_between(&p, &p), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn reference_partition_centroids() {
        let scene = Scene::reference();
        let expected = [
            Vec3::new(2.0, 4.6, 5.4),
            Vec3::new(2.0, 4.6, 4.6),
            Vec3::new(2.0, 5.4, 5.4),
            Vec3::new(2.0, 5.4, 4.6),
        ];
        assert_eq!(scene.subarrays.len(), 4);
        for (s, e) in scene.subarrays.iter().zip(expected.iter()) {
            assert_vec_close(&s.centroid, e, 1e-15);
        }
    }

    #[test]
    fn single_cell_partition() {
        let c = Vec3::new(2.0, 5.0, 5.0);
        let p = PartitionPattern::new(1, 1, 0.4, 0.4, c);
        assert_eq!(p.centroids(), vec![c]);
    }

    #[test]
    fn vertical_stack_is_arithmetic_progression() {
        let p = PartitionPattern::from_label("1x4", 0.4, 0.4, Vec3::new(2.0, 5.0, 5.0)).unwrap();
        let zs: Vec<f64> = p.centroids().iter().map(|c| c.z).collect();
        for (z, e) in zs.iter().zip([6.2, 5.4, 4.6, 3.8]) {
            assert!((z - e).abs() < 1e-12);
        }
        assert!(p.centroids().iter().all(|c| c.y == 5.0));
    }

    #[test]
    fn label_parsing() {
        let p = PartitionPattern::from_label("4×1", 0.4, 0.4, Vec3::zeros()).unwrap();
        assert_eq!((p.cols, p.rows), (4, 1));
        assert_eq!(p.label(), "4x1");
        assert!(PartitionPattern::from_label("4-1", 0.4, 0.4, Vec3::zeros()).is_err());
        assert!(PartitionPattern::from_label("0x1", 0.4, 0.4, Vec3::zeros()).is_err());
    }

    fn pattern_scene(label: &str, c: Vec3) -> Scene {
        let p = PartitionPattern::from_label(label, 0.4, 0.4, c).unwrap();
        let layout = ElementLayout::half_wavelength(4, 4, units::wavelength_m(28.0));
        Scene::new(Vec3::zeros(), build_partition(&p, &layout), 28.0).unwrap()
    }

    #[test]
    fn gdop_table_values() {
        let cases = [
            ("2x2", [2.0, 5.0, 5.0], 34.7729),
            ("1x4", [2.0, 5.0, 5.0], 5.5910),
            ("4x1", [2.0, 7.0, 2.0], 11.0305),
        ];
        for (label, c, expected) in cases {
            let g = gdop(&pattern_scene(label, Vec3::from(c)));
            assert!((g.value - expected).abs() < 1e-3, "{label}: {}", g.value);
        }
    }

    #[test]
    fn gdop_single_subarray_uses_pseudo_inverse() {
        let g = gdop(&pattern_scene("1x1", Vec3::new(2.0, 5.0, 5.0)));
        assert!(g.used_pseudo_inverse);
        assert!(g.value.is_finite() && g.value > 0.0);
    }

    #[test]
    fn gdop_row_column_symmetry() {
        let a = gdop(&pattern_scene("1x4", Vec3::new(2.0, 5.0, 5.0))).value;
        let b = gdop(&pattern_scene("4x1", Vec3::new(2.0, 5.0, 5.0))).value;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn scene_validation() {
        let s = SubarrayConfig::half_wavelength(Vec3::new(2.0, 5.0, 5.0), 4, 4, 0.01);
        assert!(Scene::new(Vec3::zeros(), vec![], 28.0).is_err());
        assert!(Scene::new(Vec3::zeros(), vec![s.clone(), s.clone()], 28.0).is_err());
        assert!(Scene::new(Vec3::zeros(), vec![s.clone()], 0.0).is_err());
        let mut bad = s.clone();
        bad.elements_y = 0;
        assert!(Scene::new(Vec3::zeros(), vec![bad], 28.0).is_err());
        assert!(Scene::new(Vec3::zeros(), vec![s], 28.0).is_ok());
    }

    #[test]
    fn wavelength_matches_carrier() {
        let s = Scene::reference();
        assert!((s.wavelength() - units::SPEED_OF_LIGHT / 28e9).abs() < 1e-18);
    }

    #[test]
    fn toml_round_trip() {
        let s = Scene::reference();
        let text = s.to_toml().unwrap();
        assert_eq!(Scene::from_toml(&text).unwrap(), s);
        let bad = format!("{text}\nbogus_key = 1\n");
        assert!(Scene::from_toml(&bad).is_err());
    }

    #[test]
    fn element_offsets_centered() {
        let s = SubarrayConfig::half_wavelength(Vec3::zeros(), 4, 2, 0.01);
        let sum: Vec3 = (0..s.num_elements()).map(|m| s.element_offset(m)).sum();
        assert!(sum.norm() < 1e-15);
        assert_eq!(s.element_offset(0).x, 0.0);
        // z index runs fastest
        assert!((s.element_offset(1).z - s.element_offset(0).z - 0.005).abs() < 1e-15);
        assert_eq!(s.element_offset(1).y, s.element_offset(0).y);
    }
}
