//! Uniform transmission-line primitives: per-unit-length cable parameters,
//! the reflection coefficient, the carry-back transform and the
//! single-line distance inversion.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `|1 + rho e^{-2 Gamma d}|` below this is treated as a resonance.
pub const RESONANCE_EPS: f64 = 1e-12;

/// Per-unit-length primary parameters (R in Ω/m, L in H/m, G in S/m, C in F/m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CableParams {
    pub name: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl CableParams {
    pub fn new(name: impl Into<String>, r: f64, l: f64, g: f64, c: f64) -> Result<Self> {
        let cable = Self {
            name: name.into(),
            r,
            l,
            g,
            c,
        };
        cable.validate()?;
        Ok(cable)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.r, self.l, self.g, self.c].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidParameter(format!(
                "cable `{}` has non-finite parameters",
                self.name
            )));
        }
        if self.r < 0.0 || self.g < 0.0 || self.l <= 0.0 || self.c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "cable `{}` requires R >= 0, L > 0, G >= 0, C > 0",
                self.name
            )));
        }
        Ok(())
    }

    /// Phase velocity of the lossless counterpart, 1/sqrt(LC).
    pub fn nominal_velocity(&self) -> f64 {
        1.0 / (self.l * self.c).sqrt()
    }

    pub fn secondary(&self, freq: f64) -> Result<SecondaryParams> {
        secondary_params(self, freq)
    }
}

/// Built-in cable library.
///
/// `lv-distribution` propagates at 2e8 m/s, the velocity used for the
/// reference PLC band tables.
pub fn cable_presets() -> Vec<CableParams> {
    vec![
        CableParams {
            name: "lv-distribution".into(),
            r: 1.0e-3,
            l: 2.5e-7,
            g: 1.0e-10,
            c: 1.0e-10,
        },
        CableParams {
            name: "lv-service".into(),
            r: 7.0e-3,
            l: 5.0e-7,
            g: 2.0e-10,
            c: 1.0 / (75.0 * 1.5e8),
        },
        CableParams {
            name: "mv-underground".into(),
            r: 1.5e-4,
            l: 1.8e-7,
            g: 1.0e-11,
            c: 2.0e-10,
        },
    ]
}

pub fn cable_preset(name: &str) -> Result<CableParams> {
    cable_presets()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnknownCable(name.to_string()))
}

/// Parses a JSON cable document: a single `{name, R, L, G, C}` object or an array of them.
pub fn cables_from_json(text: &str) -> Result<Vec<CableParams>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let cables: Vec<CableParams> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    for c in &cables {
        c.validate()?;
    }
    Ok(cables)
}

/// Secondary line parameters at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondaryParams {
    /// Propagation constant alpha + j beta (1/m).
    pub gamma: Complex64,
    /// Characteristic admittance (S).
    pub yc: Complex64,
    pub freq: f64,
    /// 2 pi / beta (m).
    pub wavelength: f64,
}

impl SecondaryParams {
    pub fn alpha(&self) -> f64 {
        self.gamma.re
    }

    pub fn beta(&self) -> f64 {
        self.gamma.im
    }

    pub fn quarter_wave(&self) -> f64 {
        self.wavelength / 4.0
    }
}

/// Gamma = sqrt((R + jwL)(G + jwC)) with Re(Gamma) >= 0, and Y_C = Gamma / (R + jwL).
pub fn secondary_params(cable: &CableParams, freq: f64) -> Result<SecondaryParams> {
    cable.validate()?;
    if !freq.is_finite() || freq <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "frequency must be finite and positive, got {freq}"
        )));
    }
    let omega = 2.0 * PI * freq;
    let z = Complex64::new(cable.r, omega * cable.l);
    let y = Complex64::new(cable.g, omega * cable.c);
    let mut gamma = if cable.r == 0.0 && cable.g == 0.0 {
        Complex64::new(0.0, omega * (cable.l * cable.c).sqrt())
    } else {
        (z * y).sqrt()
    };
    if gamma.re < 0.0 || (gamma.re == 0.0 && gamma.im < 0.0) {
        gamma = -gamma;
    }
    // arg(Y_C) = (arg y - arg z) / 2 lies in (-pi/4, pi/4), so Re(Y_C) > 0.
    let yc = gamma / z;
    Ok(SecondaryParams {
        gamma,
        yc,
        freq,
        wavelength: 2.0 * PI / gamma.im,
    })
}

/// (Y_C - Y_L) / (Y_C + Y_L).
pub fn reflection_coefficient(y_load: Complex64, yc: Complex64) -> Result<Complex64> {
    let den = yc + y_load;
    if den.norm() == 0.0 {
        return Err(Error::SingularLoad);
    }
    Ok((yc - y_load) / den)
}

/// Admittance seen at the near end of a line of length `d` terminated by `y_far`.
pub fn carry_back(y_far: Complex64, sec: &SecondaryParams, d: f64) -> Result<Complex64> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "line length must be finite and >= 0, got {d}"
        )));
    }
    let rho = reflection_coefficient(y_far, sec.yc)?;
    if rho == Complex64::new(0.0, 0.0) {
        return Ok(sec.yc);
    }
    let x = rho * (-2.0 * sec.gamma * d).exp();
    let den = 1.0 + x;
    if den.norm() < RESONANCE_EPS {
        return Err(Error::Resonance(RESONANCE_EPS));
    }
    Ok(sec.yc * (1.0 - x) / den)
}

/// Length of a single line from the near-end admittance and the known load.
///
/// Uses only the magnitude `|rho(d)| = |rho_L| e^{-2 alpha d}`; the phase is
/// periodic in `d` and is discarded.
pub fn single_line_distance(
    y_meas: Complex64,
    y_load: Complex64,
    sec: &SecondaryParams,
) -> Result<f64> {
    if sec.alpha() <= 0.0 {
        return Err(Error::IdealLine);
    }
    let rho_l = reflection_coefficient(y_load, sec.yc)?.norm();
    if rho_l == 0.0 {
        return Err(Error::MatchedLoad);
    }
    let rho_m = reflection_coefficient(y_meas, sec.yc)?.norm();
    let d = (rho_l.ln() - rho_m.ln()) / (2.0 * sec.alpha());
    // one ulp of headroom in the log ratio
    let slack = 4.0 * f64::EPSILON / (2.0 * sec.alpha());
    if d < -slack {
        return Err(Error::InconsistentMeasurement(d));
    }
    Ok(d.max(0.0))
}
