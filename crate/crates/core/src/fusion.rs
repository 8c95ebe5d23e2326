//! Least-squares intersection of per-subarray bearings with MAD outlier rejection.

use nalgebra::Matrix3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{bearing, Vec3};
use crate::music::AoaEstimate;

/// Outlier threshold in units of the median absolute deviation.
pub const MAD_FACTOR: f64 = 3.0;

/// Deviation tolerated from the median when the MAD itself is zero.
pub const MAD_ZERO_TOL: f64 = 1e-9;

/// `I - xi xi^T`: projector onto the plane orthogonal to the bearing.
pub fn bearing_projector(theta: f64, phi: f64) -> Matrix3<f64> {
    let xi = bearing(theta, phi);
    Matrix3::identity() - xi * xi.transpose()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Inclusion mask: `false` for values more than three MADs from the median.
///
/// Fewer than three values are always kept. With a zero MAD only values
/// within [`MAD_ZERO_TOL`] of the median survive.
pub fn mad_filter(values: &[f64]) -> Vec<bool> {
    if values.len() < 3 {
        return vec![true; values.len()];
    }
    let med = median(&mut values.to_vec());
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let bound = if mad == 0.0 { MAD_ZERO_TOL } else { MAD_FACTOR * mad };
    values.iter().map(|v| (v - med).abs() <= bound).collect()
}

/// `argmin_p sum_i |B_i (p - a_i)|^2` over the given anchors and bearings.
pub fn ls_position(anchors: &[Vec3], angles: &[(f64, f64)]) -> Result<Vec3> {
    if anchors.len() != angles.len() {
        return Err(Error::DimensionMismatch {
            what: "anchors vs bearings",
            expected: anchors.len(),
            found: angles.len(),
        });
    }
    let mut lhs = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    for (a, &(theta, phi)) in anchors.iter().zip(angles) {
        let b = bearing_projector(theta, phi);
        lhs += b;
        rhs += b * a;
    }
    let sv = lhs.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if max == 0.0 || min / max < 1e-12 {
        return Err(Error::NoFix(format!(
            "{} bearings leave the normal matrix singular (singular values {:.3e}..{:.3e})",
            anchors.len(),
            min,
            max
        )));
    }
    lhs.try_inverse()
        .map(|inv| inv * rhs)
        .ok_or_else(|| Error::NoFix("normal matrix not invertible".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateBundle {
    pub estimates: Vec<AoaEstimate>,
    pub anchors: Vec<Vec3>,
    pub p_hat: Vec3,
    pub used_mask: Vec<bool>,
    /// Set when outlier rejection left fewer than two subarrays and the fix
    /// was computed from all reliable ones instead.
    pub low_confidence: bool,
}

impl EstimateBundle {
    pub fn num_used(&self) -> usize {
        self.used_mask.iter().filter(|&&u| u).count()
    }
}

/// Unreliable estimates are dropped, MAD rejection runs on the remaining
/// azimuths and elevations, and the survivors are intersected.
pub fn fuse(anchors: &[Vec3], estimates: &[AoaEstimate]) -> Result<EstimateBundle> {
    if anchors.len() != estimates.len() {
        return Err(Error::DimensionMismatch {
            what: "anchors vs estimates",
            expected: anchors.len(),
            found: estimates.len(),
        });
    }
    let reliable: Vec<usize> = (0..estimates.len()).filter(|&i| estimates[i].reliable).collect();
    let thetas: Vec<f64> = reliable.iter().map(|&i| estimates[i].theta).collect();
    let phis: Vec<f64> = reliable.iter().map(|&i| estimates[i].phi).collect();
    let (keep_t, keep_p) = (mad_filter(&thetas), mad_filter(&phis));
    let mut mask = vec![false; estimates.len()];
    for (k, &i) in reliable.iter().enumerate() {
        mask[i] = keep_t[k] && keep_p[k];
    }
    let mut low_confidence = false;
    if mask.iter().filter(|&&m| m).count() < 2 {
        low_confidence = true;
        mask = estimates.iter().map(|e| e.reliable).collect();
        if reliable.len() < 2 {
            mask = vec![true; estimates.len()];
        }
    }
    let (a, ang): (Vec<Vec3>, Vec<(f64, f64)>) = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (anchors[i], (estimates[i].theta, estimates[i].phi)))
        .unzip();
    let p_hat = ls_position(&a, &ang)?;
    Ok(EstimateBundle {
        estimates: estimates.to_vec(),
        anchors: anchors.to_vec(),
        p_hat,
        used_mask: mask,
        low_confidence,
    })
}
