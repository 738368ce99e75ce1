//! Per-converter control laws: complex-droop (dVOC) reference dynamics,
//! virtual-admittance current references, the circular limiter with its
//! degree of saturation (DoS), the DoS filter and the fault-ride-through
//! mode switch.
//!
//! Gains are per-unit. The droop and amplitude terms are scaled by the
//! base angular frequency so that `η = 0.04` corresponds to a 4 % droop.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::phasor::{rotated_setpoint, Phasor, RotatedSetpoint, J};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    #[default]
    Normal,
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Limiter with plain virtual-admittance feedback.
    ConventionalWithLimiter,
    /// Limiter with `1/μ_f` feedback in both the droop and voltage loops.
    #[default]
    SaturationInformed,
    /// Reference behaviour: never limits, never switches.
    NoLimiter,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::ConventionalWithLimiter => "conventional-with-limiter",
            Strategy::SaturationInformed => "saturation-informed",
            Strategy::NoLimiter => "no-limiter",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Self::ConventionalWithLimiter, Self::SaturationInformed, Self::NoLimiter]
            .into_iter()
            .find(|s| s.tag() == tag)
    }
}

/// Angular rates shared by all converters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRates {
    /// Nominal frequency (rad/s).
    pub omega_0: f64,
    /// Base frequency scaling the per-unit gains (rad/s).
    pub omega_b: f64,
}

impl FrameRates {
    pub fn nominal(omega_0: f64) -> Self {
        Self { omega_0, omega_b: omega_0 }
    }
}

/// Parameters swapped in while a saturation-informed converter is saturated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrtOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_v: Option<Phasor>,
}

pub const DEFAULT_EXIT_HYSTERESIS: f64 = 0.01;
pub const DEFAULT_MIN_DWELL: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterConfig {
    pub strategy: Strategy,
    pub eta: f64,
    pub alpha: f64,
    /// Rotation angle φ (rad).
    pub varphi: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub v_star: f64,
    /// Virtual impedance of the voltage loop while saturated.
    pub z_v: Phasor,
    pub i_lim: f64,
    /// DoS filter time constant (s).
    pub tau: f64,
    /// Terminal-voltage threshold that starts fault ride-through.
    pub v_sat: f64,
    /// Rating relative to the system power base.
    pub rating: f64,
    pub frt_overrides: Option<FrtOverrides>,
    pub exit_hysteresis: f64,
    pub min_dwell: f64,
}

impl ConverterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(self.eta >= 0.0 && self.alpha >= 0.0) {
            return bad(format!("eta and alpha must be nonnegative ({}, {})", self.eta, self.alpha));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.i_lim > 0.0) {
            return bad(format!("i_lim must be positive, got {}", self.i_lim));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.varphi) {
            return bad(format!("varphi must lie in [0, π/2], got {}", self.varphi));
        }
        if !(self.v_star > 0.0) {
            return bad(format!("v_star must be positive, got {}", self.v_star));
        }
        if !(self.rating > 0.0) {
            return bad(format!("rating must be positive, got {}", self.rating));
        }
        if !(0.0..1.0).contains(&self.exit_hysteresis) || !(self.min_dwell >= 0.0) {
            return bad("exit_hysteresis must be in [0, 1) and min_dwell nonnegative".into());
        }
        let zs = std::iter::once(self.z_v).chain(self.frt_overrides.and_then(|o| o.z_v));
        for z in zs {
            if !(z.norm() > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
                return bad(format!("virtual impedance must be nonzero and finite, got {z}"));
            }
        }
        Ok(())
    }

    /// Parameters in force for `mode`.
    pub fn effective(&self, mode: Mode) -> ConverterConfig {
        let mut out = self.clone();
        if mode == Mode::Saturated && self.strategy == Strategy::SaturationInformed {
            if let Some(o) = self.frt_overrides {
                out.p_star = o.p_star.unwrap_or(self.p_star);
                out.q_star = o.q_star.unwrap_or(self.q_star);
                out.z_v = o.z_v.unwrap_or(self.z_v);
            }
        }
        out
    }

    /// Equivalent parameters on the system power base. Fed system-base
    /// currents, the result reproduces the converter's own-base dynamics.
    pub fn to_system_base(&self) -> ConverterConfig {
        let r = self.rating;
        let mut out = self.clone();
        out.eta = self.eta / r;
        out.alpha = self.alpha * r;
        out.p_star = self.p_star * r;
        out.q_star = self.q_star * r;
        out.z_v = self.z_v / r;
        out.i_lim = self.i_lim * r;
        out.frt_overrides = self.frt_overrides.map(|o| FrtOverrides {
            p_star: o.p_star.map(|p| p * r),
            q_star: o.q_star.map(|q| q * r),
            z_v: o.z_v.map(|z| z / r),
        });
        out.rating = 1.0;
        out
    }

    /// `(p* − jq*)/v*²`.
    pub fn setpoint_ratio(&self) -> Phasor {
        Phasor::new(self.p_star, -self.q_star) / (self.v_star * self.v_star)
    }

    pub fn rotated_setpoint(&self) -> Result<RotatedSetpoint> {
        rotated_setpoint(self.p_star, self.q_star, self.v_star, self.varphi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterState {
    pub v_hat: Phasor,
    /// Filtered degree of saturation, in (0, 1].
    pub mu_f: f64,
    pub mode: Mode,
    pub mode_entry_time: f64,
}

impl ConverterState {
    pub fn new(v_hat: Phasor) -> Self {
        Self {
            v_hat,
            mu_f: 1.0,
            mode: Mode::Normal,
            mode_entry_time: 0.0,
        }
    }
}

fn droop_terms(v: Phasor, i_o: Phasor, setpoint: Phasor, v_star_sq: f64, cfg: &ConverterConfig, rates: FrameRates) -> Phasor {
    let gain = rates.omega_b * cfg.eta;
    J * rates.omega_0 * v
        + gain * Phasor::from_polar(1.0, cfg.varphi) * (setpoint * v - i_o)
        + gain * cfg.alpha * ((v_star_sq - v.norm_sqr()) / v_star_sq) * v
}

/// Complex-droop reference dynamics `dv̂/dt`.
pub fn dvoc_derivative(state: &ConverterState, i_o: Phasor, cfg: &ConverterConfig, rates: FrameRates) -> Phasor {
    droop_terms(state.v_hat, i_o, cfg.setpoint_ratio(), cfg.v_star * cfg.v_star, cfg, rates)
}

/// Complex-droop dynamics with the current feedback scaled up by `1/μ_f`.
pub fn saturation_informed_dvoc_derivative(
    state: &ConverterState,
    i_o: Phasor,
    cfg: &ConverterConfig,
    rates: FrameRates,
) -> Result<Phasor> {
    if !(state.mu_f > 0.0) {
        return Err(Error::Domain(format!("mu_f must be positive, got {}", state.mu_f)));
    }
    Ok(dvoc_derivative(state, i_o / state.mu_f, cfg, rates))
}

/// Equivalent droop law for the internal virtual voltage `v̂_μ`, with the
/// amplitude setpoint lowered to `v*_μ = μ_f·v*`. Neglects `μ̇_f·v̂`.
pub fn equivalent_dvoc_derivative(
    v_hat_mu: Phasor,
    i_o: Phasor,
    cfg: &ConverterConfig,
    mu_f: f64,
    rates: FrameRates,
) -> Result<Phasor> {
    if !(mu_f > 0.0) {
        return Err(Error::Domain(format!("mu_f must be positive, got {mu_f}")));
    }
    let v_mu_star = mu_f * cfg.v_star;
    Ok(droop_terms(v_hat_mu, i_o, cfg.setpoint_ratio(), v_mu_star * v_mu_star, cfg, rates))
}

/// Virtual-admittance current reference. In SATURATED mode the terminal
/// voltage feedback is scaled by `1/μ_f`.
pub fn reference_current(v_hat: Phasor, v: Phasor, mu_f: f64, cfg: &ConverterConfig, mode: Mode) -> Result<Phasor> {
    match mode {
        Mode::Normal => Ok((v_hat - v) / cfg.z_v),
        Mode::Saturated => {
            if !(mu_f > 0.0) {
                return Err(Error::Domain(format!("mu_f must be positive, got {mu_f}")));
            }
            Ok((v_hat - v / mu_f) / cfg.z_v)
        }
    }
}

/// Circular limiter. Returns the limited current and the DoS `|ī|/|î|`.
pub fn circular_limit(i_ref: Phasor, i_lim: f64) -> (Phasor, f64) {
    let mag = i_ref.norm();
    if mag <= i_lim {
        (i_ref, 1.0)
    } else {
        let mu = i_lim / mag;
        (i_ref * mu, mu)
    }
}

/// First-order DoS filter `dμ_f/dt = (μ − μ_f)/τ`.
pub fn dos_filter_derivative(mu: f64, mu_f: f64, tau: f64) -> f64 {
    (mu - mu_f) / tau
}

/// `v̂_μ = μ_f·v̂`.
pub fn internal_virtual_voltage(state: &ConverterState) -> Phasor {
    state.mu_f * state.v_hat
}

/// Mode supervisor evaluated once per step.
///
/// Entry is immediate on a low terminal voltage or an over-limit
/// reference. Exit requires the filtered DoS back within the hysteresis
/// band, a healthy terminal voltage and the minimum dwell time.
pub fn mode_transition(
    state: &ConverterState,
    v_terminal: Phasor,
    i_unsat_ref: Phasor,
    cfg: &ConverterConfig,
    t: f64,
) -> Mode {
    if cfg.strategy == Strategy::NoLimiter {
        return Mode::Normal;
    }
    let v = v_terminal.norm();
    match state.mode {
        Mode::Normal if v < cfg.v_sat || i_unsat_ref.norm() > cfg.i_lim => Mode::Saturated,
        Mode::Normal => Mode::Normal,
        Mode::Saturated => {
            let desaturated = state.mu_f >= 1.0 - cfg.exit_hysteresis;
            let dwell = t - state.mode_entry_time;
            if desaturated && v >= cfg.v_sat && dwell >= cfg.min_dwell {
                Mode::Normal
            } else {
                Mode::Saturated
            }
        }
    }
}
