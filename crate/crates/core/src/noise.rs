//! Measurement noise: the voltage-divider admittance meter and the
//! circular complex Gaussian admittance-noise model.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::MeasurementSet;

/// Thevenin equivalent of an admittance meter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeterParams {
    /// Source voltage phasor V_S (V).
    pub v_source: Complex64,
    /// Source admittance Y_S (S).
    pub y_source: Complex64,
    /// Variance of the voltage noise V_mN (V^2).
    pub sigma2_n: f64,
}

impl MeterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_n >= 0.0) || !self.sigma2_n.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be finite and >= 0, got {}",
                self.sigma2_n
            )));
        }
        if self.v_source.norm() == 0.0 {
            return Err(Error::InvalidParameter("source voltage is zero".into()));
        }
        if !(self.y_source.re > 0.0) {
            return Err(Error::InvalidParameter(
                "source admittance must have a positive real part".into(),
            ));
        }
        Ok(())
    }

    /// Meter with a 1 V source, `|Y_S| = |y_expected| / 100` and the noise
    /// variance that yields `snr_db` on the divider voltage.
    pub fn for_admittance(y_expected: Complex64, snr_db: f64) -> Self {
        let y_source = Complex64::new(y_expected.norm() / 100.0, 0.0);
        let v_source = Complex64::new(1.0, 0.0);
        let v_m0 = divider_voltage(v_source, y_source, y_expected);
        Self {
            v_source,
            y_source,
            sigma2_n: v_m0.norm_sqr() / db_to_power(snr_db),
        }
    }

    pub fn snr_db(&self, y_true: Complex64) -> f64 {
        let v_m0 = divider_voltage(self.v_source, self.y_source, y_true);
        power_to_db(v_m0.norm_sqr() / self.sigma2_n)
    }
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Noiseless voltage across `y_m`: V_S Y_S / (Y_S + Y_m).
pub fn divider_voltage(v_source: Complex64, y_source: Complex64, y_m: Complex64) -> Complex64 {
    v_source * y_source / (y_source + y_m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisySample {
    pub y_measured: Complex64,
    pub y_true: Complex64,
    /// Predicted ANR, `10 log10(|V_S - V_m0|^2 / sigma2_n)`.
    pub anr_db: f64,
}

/// Zero-mean circular complex Gaussian with total variance `variance`.
pub fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// One noisy reading through the divider, inverted with the exact relation
/// `Y_m = Y_S (V_S - V_m) / V_m`, `V_m = V_m0 + V_mN`.
pub fn measure_once<R: Rng + ?Sized>(
    meter: &MeterParams,
    y_true: Complex64,
    rng: &mut R,
) -> Result<NoisySample> {
    meter.validate()?;
    if (meter.y_source + y_true).norm() == 0.0 {
        return Err(Error::SingularLoad);
    }
    let v_m0 = divider_voltage(meter.v_source, meter.y_source, y_true);
    let anr_db = anr(meter.v_source, v_m0, meter.sigma2_n);
    if meter.sigma2_n == 0.0 {
        return Ok(NoisySample {
            y_measured: y_true,
            y_true,
            anr_db,
        });
    }
    let v_m = loop {
        let v = v_m0 + circular_gaussian(rng, meter.sigma2_n);
        if v.norm() > 0.0 {
            break v;
        }
    };
    Ok(NoisySample {
        y_measured: meter.y_source * (meter.v_source - v_m) / v_m,
        y_true,
        anr_db,
    })
}

/// Adds circular Gaussian noise of variance `|y_true|^2 / 10^(anr_db/10)`.
pub fn perturb_admittance<R: Rng + ?Sized>(y_true: Complex64, anr_db: f64, rng: &mut R) -> Complex64 {
    if anr_db == f64::INFINITY {
        return y_true;
    }
    y_true + circular_gaussian(rng, y_true.norm_sqr() / db_to_power(anr_db))
}

/// Perturbs every entry of a noiseless measurement set at one ANR.
pub fn perturb_measurements<R: Rng + ?Sized>(
    meas: &MeasurementSet,
    anr_db: f64,
    rng: &mut R,
) -> MeasurementSet {
    let entries: BTreeMap<_, _> = meas
        .entries
        .iter()
        .map(|(&id, &y)| (id, perturb_admittance(y, anr_db, rng)))
        .collect();
    MeasurementSet {
        freq: meas.freq,
        entries,
        anr_db,
    }
}

/// Admittance-to-noise ratio `10 log10(|V_S - V_m0|^2 / sigma2_n)` in dB.
pub fn anr(v_source: Complex64, v_m0: Complex64, sigma2_n: f64) -> f64 {
    if sigma2_n == 0.0 {
        return f64::INFINITY;
    }
    power_to_db((v_source - v_m0).norm_sqr() / sigma2_n)
}

/// ANR actually delivered by the exact divider inversion to first order.
///
/// Linearizing `Y_m = Y_S (V_S - V_m)/V_m` around `V_m0` gives the noise
/// `-(Y_S + Y_m0) V_mN / V_m0`, so the ratio is `|Y_m0 V_m0|^2 / (|Y_S + Y_m0|^2 sigma2_n)`.
pub fn realized_anr(meter: &MeterParams, y_true: Complex64) -> f64 {
    if meter.sigma2_n == 0.0 {
        return f64::INFINITY;
    }
    let v_m0 = divider_voltage(meter.v_source, meter.y_source, y_true);
    let noise_gain = ((meter.y_source + y_true) / v_m0).norm_sqr();
    power_to_db(y_true.norm_sqr() / (noise_gain * meter.sigma2_n))
}

/// Typical operating ranges of one PLC band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPreset {
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    /// Quarter-wave length sanity figure at 2e8 m/s.
    pub max_cable_m: f64,
    pub anr_min_db: f64,
    /// `None` for open-ended ranges.
    pub anr_max_db: Option<f64>,
}

pub fn band_presets() -> BTreeMap<String, BandPreset> {
    let mut m = BTreeMap::new();
    m.insert(
        "cenelec".to_string(),
        BandPreset {
            freq_min_hz: 3e3,
            freq_max_hz: 150e3,
            max_cable_m: 16_600.0,
            anr_min_db: 99.0,
            anr_max_db: Some(135.0),
        },
    );
    m.insert(
        "fcc".to_string(),
        BandPreset {
            freq_min_hz: 150e3,
            freq_max_hz: 500e3,
            max_cable_m: 330.0,
            anr_min_db: 122.0,
            anr_max_db: Some(158.0),
        },
    );
    m.insert(
        "broadband".to_string(),
        BandPreset {
            freq_min_hz: 2e6,
            freq_max_hz: 30e6,
            max_cable_m: 25.0,
            anr_min_db: 99.0,
            anr_max_db: None,
        },
    );
    m
}

pub fn band_presets_json() -> Result<String> {
    Ok(serde_json::to_string_pretty(&band_presets())?)
}

pub fn band_presets_from_json(text: &str) -> Result<BTreeMap<String, BandPreset>> {
    Ok(serde_json::from_str(text)?)
}

/// The `cenelec-default` operating point: SNR 55 dB read as ANR 99 dB.
/// Valid only when the measured voltage is small against the source voltage.
pub const CENELEC_DEFAULT_SNR_DB: f64 = 55.0;
pub const CENELEC_DEFAULT_ANR_DB: f64 = 99.0;

pub fn scenario_anr_db(name: &str) -> Result<f64> {
    match name {
        "cenelec-default" => Ok(CENELEC_DEFAULT_ANR_DB),
        other => Err(Error::Config(format!("unknown ANR scenario `{other}`"))),
    }
}
