//! Phasor primitives shared by every other module.
//!
//! All quantities are complex αβ-frame vectors in per-unit. The
//! [`PerUnitBase`] only matters at I/O boundaries.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A complex αβ-frame quantity in per-unit.
pub type Phasor = Complex64;

pub const J: Phasor = Complex64::new(0.0, 1.0);

/// Rejects NaN/Inf phasors before they reach a control law.
pub fn ensure_finite(x: Phasor, what: &str) -> Result<Phasor> {
    if x.re.is_finite() && x.im.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{what} is not finite ({x})")))
    }
}

/// Magnitude/angle decomposition with the zero phasor mapped to angle 0.
pub fn polar(x: Phasor) -> (f64, f64) {
    if x.re == 0.0 && x.im == 0.0 {
        return (0.0, 0.0);
    }
    let mut angle = x.im.atan2(x.re);
    // atan2 returns -π for (-x, -0.0); fold onto the (-π, π] range.
    if angle <= -std::f64::consts::PI {
        angle = std::f64::consts::PI;
    }
    (x.norm(), angle)
}

/// Rotates `x` into a frame advanced by `theta`: returns `x·e^{-jθ}`.
pub fn to_sync_frame(x: Phasor, theta: f64) -> Phasor {
    x * Phasor::from_polar(1.0, -theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Volts (line-to-line RMS).
    pub voltage_base: f64,
    /// Volt-amperes.
    pub power_base: f64,
    /// rad/s.
    pub frequency_base: f64,
}

impl PerUnitBase {
    pub fn new(voltage_base: f64, power_base: f64, frequency_base: f64) -> Result<Self> {
        let base = Self {
            voltage_base,
            power_base,
            frequency_base,
        };
        base.validate()?;
        Ok(base)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("voltage_base", self.voltage_base),
            ("power_base", self.power_base),
            ("frequency_base", self.frequency_base),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be strictly positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn current_base(&self) -> f64 {
        self.power_base / (3f64.sqrt() * self.voltage_base)
    }

    pub fn impedance_base(&self) -> f64 {
        self.voltage_base * self.voltage_base / self.power_base
    }
}

impl Default for PerUnitBase {
    /// 690 V, 2 MVA, 50 Hz.
    fn default() -> Self {
        Self {
            voltage_base: 690.0,
            power_base: 2.0e6,
            frequency_base: 2.0 * std::f64::consts::PI * 50.0,
        }
    }
}

/// Power setpoints normalised by `v*²` and rotated by `e^{jφ}`.
///
/// `rho_phi` (real part) enters the amplitude balance of the steady-state
/// equations and the left-hand side of every stability inequality;
/// `sigma_phi` (imaginary part) enters the angle balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedSetpoint {
    pub rho_phi: f64,
    pub sigma_phi: f64,
    /// `(p* − jq*)/v*²` before rotation.
    pub raw_ratio: Phasor,
}

impl RotatedSetpoint {
    pub fn rotated(&self) -> Phasor {
        Phasor::new(self.rho_phi, self.sigma_phi)
    }
}

pub fn rotated_setpoint(p_star: f64, q_star: f64, v_star: f64, varphi: f64) -> Result<RotatedSetpoint> {
    if !(v_star > 0.0) || !v_star.is_finite() {
        return Err(Error::Domain(format!("voltage setpoint must be positive, got {v_star}")));
    }
    let raw_ratio = Phasor::new(p_star, -q_star) / (v_star * v_star);
    let rotated = Phasor::from_polar(1.0, varphi) * raw_ratio;
    Ok(RotatedSetpoint {
        rho_phi: rotated.re,
        sigma_phi: rotated.im,
        raw_ratio,
    })
}

/// Stiff grid behind the network's grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    /// Voltage magnitude (p.u.).
    pub v_g: f64,
    /// Initial angle (rad) in the co-rotating frame.
    pub theta_g: f64,
    /// Grid frequency (rad/s).
    pub omega_g: f64,
    /// Nominal frequency (rad/s).
    pub omega_0: f64,
}

impl GridModel {
    pub fn nominal(v_g: f64, omega_0: f64) -> Self {
        Self {
            v_g,
            theta_g: 0.0,
            omega_g: omega_0,
            omega_0,
        }
    }

    /// `ω_Δ = ω_0 − ω_g`.
    pub fn omega_delta(&self) -> f64 {
        self.omega_0 - self.omega_g
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_g >= 0.0) || !self.v_g.is_finite() {
            return Err(Error::Domain(format!("grid voltage must be nonnegative, got {}", self.v_g)));
        }
        if !(self.omega_0 > 0.0 && self.omega_g > 0.0) {
            return Err(Error::Domain("grid frequencies must be positive".into()));
        }
        Ok(())
    }

    /// Grid angle at time `t` in the frame rotating at `ω_0`.
    pub fn angle_at(&self, t: f64) -> f64 {
        self.theta_g - self.omega_delta() * t
    }

    /// Grid voltage phasor at time `t` in the frame rotating at `ω_0`.
    pub fn phasor_at(&self, t: f64) -> Phasor {
        Phasor::from_polar(self.v_g, self.angle_at(t))
    }
}
