//! Physical constants and power-unit conversions.
//!
//! All power bookkeeping inside the crate is done in milliwatts: transmit
//! power and noise variance are carried in dBm at the API boundary and
//! converted once with [`dbm_to_mw`].

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Thermal noise power spectral density at room temperature, dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Wavelength in meters for a carrier given in GHz.
pub fn wavelength_m(carrier_freq_ghz: f64) -> f64 {
    SPEED_OF_LIGHT / (carrier_freq_ghz * 1e9)
}
