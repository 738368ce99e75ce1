//! Sufficient transient-stability conditions under current saturation and
//! the network-strength measures they rely on.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::network::CMatrix;
use crate::phasor::{Phasor, RotatedSetpoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    SingleGrid,
    MultiGrid,
    Microgrid,
}

/// Voltage information available for the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Variant {
    /// Uses the reduced amplitude setpoint `v*_μ = μ_s·v*`.
    Exact { v_mu_star: f64 },
    /// Replaces `v*_μ` by `v* ≥ v*_μ`.
    VStarRelaxed { v_star: f64 },
    /// Drops the voltage term.
    NoVoltageInfo,
}

impl Variant {
    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Exact { .. } => "exact",
            Variant::VStarRelaxed { .. } => "v_star_relaxed",
            Variant::NoVoltageInfo => "no_voltage_info",
        }
    }

    fn voltage_term(&self, alpha: f64, v_hat_mu_s: f64) -> f64 {
        let r = match *self {
            Variant::Exact { v_mu_star } => v_mu_star,
            Variant::VStarRelaxed { v_star } => v_star,
            Variant::NoVoltageInfo => return 0.0,
        };
        0.5 * alpha * v_hat_mu_s * v_hat_mu_s / (r * r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub condition_kind: ConditionKind,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `rhs − lhs`.
    pub margin: f64,
    /// gSCR, `λ₂`, or the rotated scalar admittance for a single converter.
    pub network_strength: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<&'static str>,
}

impl StabilityReport {
    fn new(kind: ConditionKind, lhs: f64, rhs: f64, strength: f64, variant: Option<&'static str>) -> Self {
        Self {
            condition_kind: kind,
            lhs,
            rhs,
            satisfied: lhs < rhs,
            margin: rhs - lhs,
            network_strength: strength,
            variant,
        }
    }
}

/// `(M + Mᵀ)/2` with `M = Re{e^{jφ}·Y}` taken entrywise.
pub fn rotated_real_part(y: &CMatrix, varphi: f64) -> DMatrix<f64> {
    let rot = Phasor::from_polar(1.0, varphi);
    let m = y.map(|v| (rot * v).re);
    (&m + m.transpose()) * 0.5
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite eigenvalue".into()));
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Generalized short-circuit ratio `λ_min(Re{e^{jφ}Y})`.
pub fn gscr(y: &CMatrix, varphi: f64) -> Result<f64> {
    if y.nrows() == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    Ok(sorted_eigenvalues(rotated_real_part(y, varphi))?[0])
}

/// Algebraic connectivity `λ₂(Re{e^{jφ}Y})`.
pub fn algebraic_connectivity(y: &CMatrix, varphi: f64) -> Result<f64> {
    if y.nrows() < 2 {
        return Err(Error::Domain("algebraic connectivity needs at least two nodes".into()));
    }
    Ok(sorted_eigenvalues(rotated_real_part(y, varphi))?[1])
}

fn worst_setpoint(setpoints: &[RotatedSetpoint]) -> Result<f64> {
    setpoints
        .iter()
        .map(|s| s.rho_phi)
        .reduce(f64::max)
        .ok_or_else(|| Error::Domain("no setpoints".into()))
}

/// Single converter behind admittance `y`.
pub fn check_single(
    setpoint: &RotatedSetpoint,
    alpha: f64,
    v_hat_mu_s: f64,
    y: Phasor,
    varphi: f64,
    variant: Variant,
) -> StabilityReport {
    let strength = (Phasor::from_polar(1.0, varphi) * y).re;
    let lhs = setpoint.rho_phi + alpha;
    let rhs = variant.voltage_term(alpha, v_hat_mu_s) + strength;
    StabilityReport::new(ConditionKind::SingleGrid, lhs, rhs, strength, Some(variant.tag()))
}

/// Decentralized multi-converter condition using the worst converter,
/// the smallest internal voltage and the augmented converter block.
pub fn check_multi_grid(
    setpoints: &[RotatedSetpoint],
    alpha: f64,
    v_hat_mu_s_min: f64,
    y_c_aug: &CMatrix,
    varphi: f64,
    variant: Variant,
) -> Result<StabilityReport> {
    if setpoints.len() != y_c_aug.nrows() {
        return Err(Error::Domain("one setpoint per converter required".into()));
    }
    let strength = gscr(y_c_aug, varphi)?;
    let lhs = worst_setpoint(setpoints)? + alpha;
    let rhs = variant.voltage_term(alpha, v_hat_mu_s_min) + strength;
    Ok(StabilityReport::new(ConditionKind::MultiGrid, lhs, rhs, strength, Some(variant.tag())))
}

/// `(1 + cos δ̄)(1 − μ̄)²/2`.
pub fn microgrid_prefactor(delta_bar: f64, mu_bar: f64) -> Result<f64> {
    if !(0.0..FRAC_PI_2).contains(&delta_bar) {
        return Err(Error::Domain(format!("delta_bar must lie in [0, π/2), got {delta_bar}")));
    }
    if !(mu_bar > 0.0 && mu_bar < 1.0) {
        return Err(Error::Domain(format!("mu_bar must lie in (0, 1), got {mu_bar}")));
    }
    Ok((1.0 + delta_bar.cos()) * (1.0 - mu_bar).powi(2) / 2.0)
}

/// Islanded condition on the augmented microgrid matrix.
pub fn check_microgrid(
    setpoints: &[RotatedSetpoint],
    alpha: f64,
    delta_bar: f64,
    mu_bar: f64,
    y_m_aug: &CMatrix,
    varphi: f64,
) -> Result<StabilityReport> {
    if setpoints.len() != y_m_aug.nrows() {
        return Err(Error::Domain("one setpoint per converter required".into()));
    }
    let pre = microgrid_prefactor(delta_bar, mu_bar)?;
    let strength = algebraic_connectivity(y_m_aug, varphi)?;
    let lhs = worst_setpoint(setpoints)? + alpha;
    Ok(StabilityReport::new(ConditionKind::Microgrid, lhs, pre * strength, strength, None))
}

/// Strength after adding `|z_v|` at every converter of a uniform-angle
/// network: `λ/(1 + λ|z_v|)`.
pub fn strength_reduction(lambda_orig: f64, z_v_mag: f64) -> f64 {
    lambda_orig / (1.0 + lambda_orig * z_v_mag)
}
