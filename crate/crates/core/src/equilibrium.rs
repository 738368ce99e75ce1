//! Current-saturated steady states of a single saturation-informed
//! converter behind `z = z_g + z_v`.
//!
//! With the grid phasor real, the internal virtual voltage
//! `v̂_μs = V·e^{jδ}` and `ϕ = ∠z − φ`, the steady state satisfies
//!
//! ```text
//! A + α − αV²/(μ²v*²) = |y|cos ϕ − v_g|y|cos(δ+ϕ)/V      (amplitude)
//! B + ω_Δ/η           = −|y|sin ϕ + v_g|y|sin(δ+ϕ)/V     (angle)
//! cos δ               = (V² + v_g² − i_lim²|z|²)/(2V·v_g) (limiter)
//! ```
//!
//! where `A + jB = e^{jφ}(p* − jq*)/v*²`. The real part `A` enters the
//! amplitude balance and the imaginary part `B` the angle balance.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::control::ConverterConfig;
use crate::error::{Error, Result};
use crate::phasor::{Phasor, RotatedSetpoint};

/// Residual bound for an accepted solution.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Angle samples used to bracket roots of the angle balance.
const SCAN_POINTS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatedEquilibriumProblem {
    pub setpoint: RotatedSetpoint,
    pub alpha: f64,
    /// Per-unit droop gain.
    pub eta: f64,
    /// Base frequency converting `η` to 1/s.
    pub omega_b: f64,
    pub v_star: f64,
    pub i_lim: f64,
    pub z_total: Phasor,
    pub varphi: f64,
    /// `∠z − φ`.
    pub phi: f64,
    pub v_g: f64,
    /// `ω_0 − ω_g` (rad/s).
    pub omega_delta: f64,
}

impl SaturatedEquilibriumProblem {
    /// Problem for `cfg` (parameters already in force) behind `z_g`.
    pub fn from_config(cfg: &ConverterConfig, z_g: Phasor, v_g: f64, omega_delta: f64, omega_b: f64) -> Result<Self> {
        let z_total = z_g + cfg.z_v;
        let p = Self {
            setpoint: cfg.rotated_setpoint()?,
            alpha: cfg.alpha,
            eta: cfg.eta,
            omega_b,
            v_star: cfg.v_star,
            i_lim: cfg.i_lim,
            z_total,
            varphi: cfg.varphi,
            phi: z_total.arg() - cfg.varphi,
            v_g,
            omega_delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let z = self.z_total.norm();
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("|z| must be positive and finite, got {z}")));
        }
        let gap = wrap(self.z_total.arg() - self.varphi - self.phi);
        if gap.abs() > 1e-9 {
            return Err(Error::Domain(format!("phi inconsistent with ∠z − varphi by {gap}")));
        }
        if !(self.v_g >= 0.0 && self.i_lim > 0.0 && self.v_star > 0.0 && self.alpha >= 0.0) {
            return Err(Error::Domain("need v_g ≥ 0, i_lim > 0, v_star > 0, alpha ≥ 0".into()));
        }
        if self.omega_delta != 0.0 && !(self.eta * self.omega_b > 0.0) {
            return Err(Error::Domain("nonzero omega_delta needs a positive droop gain".into()));
        }
        Ok(())
    }

    fn a(&self) -> f64 {
        self.setpoint.rho_phi
    }

    /// Left side of the angle balance.
    fn angle_target(&self) -> f64 {
        let freq = if self.omega_delta == 0.0 {
            0.0
        } else {
            self.omega_delta / (self.eta * self.omega_b)
        };
        self.setpoint.sigma_phi + freq
    }

    fn y_mag(&self) -> f64 {
        1.0 / self.z_total.norm()
    }

    /// Residuals of the (amplitude, angle, limiter) equations.
    pub fn residuals(&self, v: f64, delta: f64, mu: f64) -> [f64; 3] {
        let y = self.y_mag();
        let (vg, phi, a) = (self.v_g, self.phi, self.alpha);
        let amp = self.a() + a - a * v * v / (mu * mu * self.v_star * self.v_star) - (y * phi.cos() - vg * y * (delta + phi).cos() / v);
        let ang = self.angle_target() - (-y * phi.sin() + vg * y * (delta + phi).sin() / v);
        let lz = self.i_lim * self.z_total.norm();
        let lim = if vg > 0.0 {
            delta.cos() - (v * v + vg * vg - lz * lz) / (2.0 * v * vg)
        } else {
            v - lz
        };
        [amp, ang, lim]
    }

    /// Whether the closed-form tuning applies (uniform angle, `B = 0`,
    /// nominal grid frequency).
    pub fn closed_form_applicable(&self) -> bool {
        wrap(self.phi).abs() <= 1e-12 && self.setpoint.sigma_phi.abs() <= 1e-12 && self.omega_delta == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub v_hat_mu_s: f64,
    pub delta_s: f64,
    pub mu_s: f64,
    pub residual: f64,
    pub exists: bool,
    pub desaturating: bool,
    /// Defined under the closed-form tuning only.
    pub lambda_exsat: Option<f64>,
    /// Roots of the angle balance with admissible `μ_s`.
    pub root_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl EquilibriumSolution {
    fn missing(p: &SaturatedEquilibriumProblem, why: String) -> Self {
        Self {
            v_hat_mu_s: f64::NAN,
            delta_s: f64::NAN,
            mu_s: f64::NAN,
            residual: f64::NAN,
            exists: false,
            desaturating: false,
            lambda_exsat: p.closed_form_applicable().then(|| desaturation_indicator(p)),
            root_count: 0,
            diagnostic: Some(why),
        }
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// `μ²` from the amplitude balance; `None` when not positive.
fn mu_from_amplitude(p: &SaturatedEquilibriumProblem, v: f64, delta: f64) -> Option<f64> {
    let y = p.y_mag();
    let r = p.a() + p.alpha - y * p.phi.cos() + p.v_g * y * (delta + p.phi).cos() / v;
    let mu2 = p.alpha * v * v / (p.v_star * p.v_star * r);
    (p.alpha > 0.0 && r > 0.0 && mu2.is_finite() && mu2 > 0.0).then(|| mu2.sqrt())
}

fn finish(p: &SaturatedEquilibriumProblem, v: f64, delta: f64, mu: f64, roots: usize) -> EquilibriumSolution {
    let residual = p.residuals(v, delta, mu).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let lambda = p.closed_form_applicable().then(|| desaturation_indicator(p));
    let exists = residual <= RESIDUAL_TOLERANCE;
    EquilibriumSolution {
        v_hat_mu_s: v,
        delta_s: delta,
        mu_s: mu,
        residual,
        exists,
        desaturating: lambda.map_or(mu >= 1.0, |l| l >= 0.0),
        lambda_exsat: lambda,
        root_count: roots,
        diagnostic: (!exists).then(|| format!("residual {residual:e} above tolerance")),
    }
}

/// General solver. The limiter equation is satisfied identically by
/// writing `v̂_μs = v_g + z·i_lim·e^{jβ}`; roots of the angle balance in
/// `β` are bracketed on a dense grid and bisected, then `μ_s` follows
/// from the amplitude balance. The largest-`V` admissible root wins.
pub fn solve_saturated_equilibrium(p: &SaturatedEquilibriumProblem) -> Result<EquilibriumSolution> {
    p.validate()?;
    let lz = p.i_lim * p.z_total.norm();

    if p.v_g == 0.0 {
        let [_, ang, _] = p.residuals(lz, 0.0, 1.0);
        if ang.abs() > RESIDUAL_TOLERANCE {
            return Ok(EquilibriumSolution::missing(p, format!("angle balance fails at v_g = 0 by {ang:e}")));
        }
        return Ok(match mu_from_amplitude(p, lz, 0.0) {
            Some(mu) => finish(p, lz, 0.0, mu, 1),
            None => EquilibriumSolution::missing(p, "amplitude balance gives μ² ≤ 0".into()),
        });
    }

    let point = |beta: f64| {
        let w = p.v_g + p.z_total * Phasor::from_polar(p.i_lim, beta);
        (w.norm(), w.arg())
    };
    let f = |beta: f64| {
        let (v, d) = point(beta);
        p.residuals(v, d, 1.0)[1]
    };

    let step = 2.0 * PI / SCAN_POINTS as f64;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev = (-PI, f(-PI));
    for k in 1..=SCAN_POINTS {
        let b = -PI + k as f64 * step;
        let fb = f(b);
        let (a, fa) = prev;
        if fa == 0.0 {
            roots.push(a);
        } else if fa.signum() != fb.signum() && fb != 0.0 && fa.is_finite() && fb.is_finite() {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            let r = 0.5 * (lo + hi);
            // A genuine root, not a pole where V → 0.
            if f(r).abs() < 1e-8 {
                roots.push(r);
            }
        }
        prev = (b, fb);
    }

    let mut candidates: Vec<(f64, f64, f64)> = roots
        .into_iter()
        .filter_map(|beta| {
            let (v, d) = point(beta);
            (v > 0.0).then_some(())?;
            mu_from_amplitude(p, v, d).map(|mu| (v, d, mu))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    candidates.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && wrap(a.1 - b.1).abs() < 1e-12);
    match candidates.first() {
        Some(&(v, d, mu)) => Ok(finish(p, v, d, mu, candidates.len())),
        None => Ok(EquilibriumSolution::missing(p, "no admissible root of the angle balance".into())),
    }
}

/// Closed form under uniform angle, `B = 0` and nominal frequency:
/// `δ_s = 0`, `V = v_g + i_lim|z|`, `μ_s² = αV²/(v*²(A + α − i_lim/V))`.
pub fn closed_form_aligned(p: &SaturatedEquilibriumProblem) -> Result<EquilibriumSolution> {
    p.validate()?;
    if !p.closed_form_applicable() {
        return Err(Error::Applicability(
            "closed form needs ∠z = φ, a zero imaginary rotated setpoint and ω_Δ = 0".into(),
        ));
    }
    let v = p.v_g + p.i_lim * p.z_total.norm();
    let r = p.a() + p.alpha - p.i_lim / v;
    let mu2 = p.alpha * v * v / (p.v_star * p.v_star * r);
    if !(p.alpha > 0.0 && r > 0.0 && mu2 > 0.0) {
        return Ok(EquilibriumSolution::missing(p, "amplitude balance gives μ² ≤ 0".into()));
    }
    Ok(finish(p, v, 0.0, mu2.sqrt(), 1))
}

/// `λ_exsat = α(v_g + i_lim|z|)²/v*² + i_lim/(v_g + i_lim|z|) − A − α`.
/// Nonnegative means a desaturating (`μ_s ≥ 1`) solution exists.
pub fn desaturation_indicator(p: &SaturatedEquilibriumProblem) -> f64 {
    let v = p.v_g + p.i_lim * p.z_total.norm();
    p.alpha * v * v / (p.v_star * p.v_star) + p.i_lim / v - p.a() - p.alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistenceCondition {
    pub name: &'static str,
    /// Quantities the condition needs.
    pub requires: &'static str,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    /// `None` when a required quantity is unknown.
    pub holds: Option<bool>,
}

/// Sufficient conditions for a saturated solution under the closed-form
/// tuning, from most to least informed. Each implies the next weaker
/// threshold only through `|z| ≥ |z_v|`.
pub fn existence_conditions(p: &SaturatedEquilibriumProblem, z_v: Phasor, z_g: Option<Phasor>) -> Vec<ExistenceCondition> {
    let gain = p.a() + p.alpha;
    let z = z_g.map(|zg| (zg + z_v).norm());
    let grid = z.map(|z| p.i_lim / (p.v_g + p.i_lim * z));
    let imp = z_g.map(|zg| gain * (zg.norm() + z_v.norm()));
    let local = gain * z_v.norm();
    vec![
        ExistenceCondition {
            name: "grid-informed",
            requires: "v_g, z_g, z_v",
            lhs: Some(gain),
            rhs: grid,
            holds: grid.map(|g| gain > g),
        },
        ExistenceCondition {
            name: "impedance-informed",
            requires: "z_g, z_v",
            lhs: imp,
            rhs: Some(1.0),
            holds: imp.map(|x| x > 1.0),
        },
        ExistenceCondition {
            name: "local",
            requires: "z_v",
            lhs: Some(local),
            rhs: Some(1.0),
            holds: Some(local >= 1.0),
        },
    ]
}
