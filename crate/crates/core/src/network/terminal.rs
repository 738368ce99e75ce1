//! Algebraic network solve for converter terminal voltages and currents.
//!
//! NORMAL ports pin their terminal voltage to `v̂` (ideal inner-loop
//! tracking). SATURATED ports inject the circular-limiter output of the
//! virtual-admittance reference `î = (v̂ − v/s)/z_v`, where `s = μ_f` for
//! saturation-informed feedback and `s = 1` otherwise. The limiter makes
//! the saturated currents depend on the terminal voltages they produce,
//! so the exact solve is a fixed point in the saturated currents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CMatrix, CVector, KronReducedNetwork};
use crate::control::circular_limit;
use crate::error::{Error, Result};
use crate::phasor::Phasor;

pub use crate::control::Mode as PortMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    /// Memoryless limiter solved self-consistently with the network.
    #[default]
    ExactLimiter,
    /// Saturated ports replaced by `μ_f`-scaled sources behind `z_v`.
    EquivalentCircuit,
}

/// One converter as seen by the network, in system per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterPort {
    pub mode: PortMode,
    pub v_hat: Phasor,
    pub z_v: Phasor,
    pub i_lim: f64,
    pub mu_f: f64,
    /// Divide the terminal-voltage feedback by `μ_f`.
    pub scale_feedback: bool,
}

impl ConverterPort {
    fn feedback_scale(&self) -> f64 {
        if self.scale_feedback {
            self.mu_f
        } else {
            1.0
        }
    }

    /// Reference current for a given terminal voltage.
    fn reference(&self, v: Phasor) -> Phasor {
        (self.v_hat - v / self.feedback_scale()) / self.z_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Newton iterations attempted when the damped Picard budget runs out.
    pub newton_iterations: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-10,
            max_iterations: 50,
            newton_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSolution {
    /// Output currents (into the network).
    pub i_o: Vec<Phasor>,
    /// Terminal voltages.
    pub v: Vec<Phasor>,
    /// Current reference before the limiter (equals `i_o` for NORMAL ports).
    pub i_ref: Vec<Phasor>,
    /// Instantaneous degree of saturation.
    pub mu: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn solve_terminal(
    net: &KronReducedNetwork,
    ports: &[ConverterPort],
    grid: Option<Phasor>,
    mode: SolveMode,
    opts: &FixedPointOptions,
    warm: Option<&[Phasor]>,
) -> Result<TerminalSolution> {
    let n = net.n_converters;
    if ports.len() != n {
        return Err(Error::Domain(format!("expected {n} converter ports, got {}", ports.len())));
    }
    let v_g = match (net.is_islanded, grid) {
        (false, Some(v)) => Some(v),
        (true, None) => None,
        (false, None) => return Err(Error::Domain("grid-connected network needs a grid voltage".into())),
        (true, Some(_)) => return Err(Error::Domain("islanded network cannot take a grid voltage".into())),
    };
    let sat: Vec<usize> = (0..n).filter(|&k| ports[k].mode == PortMode::Saturated).collect();
    let stiff: Vec<usize> = (0..n).filter(|&k| ports[k].mode == PortMode::Normal).collect();
    if sat.len() == n && net.is_islanded && n == 0 {
        return Err(Error::Domain("no voltage-forming node".into()));
    }
    for &k in &sat {
        let p = &ports[k];
        if !(p.mu_f > 0.0) {
            return Err(Error::Domain(format!("converter {k}: mu_f must be positive, got {}", p.mu_f)));
        }
        if !(p.i_lim > 0.0) || p.z_v.norm() == 0.0 {
            return Err(Error::Domain(format!("converter {k}: i_lim and z_v must be nonzero")));
        }
    }

    let y = &net.full;
    let mut v: Vec<Phasor> = ports.iter().map(|p| p.v_hat).collect();
    let mut i_ref = vec![Phasor::new(0.0, 0.0); n];
    let mut mu = vec![1.0; n];
    let mut iterations = 0;
    let mut residual = 0.0;
    let mut i_sat: Vec<Phasor> = Vec::new();

    if !sat.is_empty() {
        let m = sat.len();
        // Known injection terms from stiff ports and the grid.
        let b = CVector::from_fn(m, |r, _| {
            let row = sat[r];
            let mut acc: Phasor = stiff.iter().map(|&c| y[(row, c)] * ports[c].v_hat).sum();
            if let Some(vg) = v_g {
                acc += y[(row, n)] * vg;
            }
            acc
        });
        let y_ss = CMatrix::from_fn(m, m, |r, c| y[(sat[r], sat[c])]);

        match mode {
            SolveMode::EquivalentCircuit => {
                let mut a = y_ss.clone();
                let mut rhs = -b.clone();
                for (r, &k) in sat.iter().enumerate() {
                    let p = &ports[k];
                    a[(r, r)] += p.mu_f / (p.feedback_scale() * p.z_v);
                    rhs[r] += p.mu_f * p.v_hat / p.z_v;
                }
                let v_s = a
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("equivalent-circuit network matrix".into()))?;
                for (r, &k) in sat.iter().enumerate() {
                    v[k] = v_s[r];
                }
            }
            SolveMode::ExactLimiter => {
                let lu = y_ss.lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("saturated-port block of the reduced network".into()));
                }
                let voltages = |ibar: &[Phasor]| -> CVector {
                    let rhs = CVector::from_fn(m, |r, _| ibar[r] - b[r]);
                    lu.solve(&rhs).expect("invertibility checked")
                };
                let limited = |ibar: &[Phasor]| -> Vec<Phasor> {
                    let v_s = voltages(ibar);
                    sat.iter()
                        .enumerate()
                        .map(|(r, &k)| circular_limit(ports[k].reference(v_s[r]), ports[k].i_lim).0)
                        .collect()
                };
                let fp_residual = |ibar: &[Phasor], g: &[Phasor]| -> f64 {
                    ibar.iter().zip(g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
                };

                let mut ibar: Vec<Phasor> = match warm {
                    Some(w) if w.len() == n => sat.iter().map(|&k| w[k]).collect(),
                    _ => limited(&vec![Phasor::new(0.0, 0.0); m]),
                };
                let mut converged = false;
                for it in 0..opts.max_iterations {
                    let g = limited(&ibar);
                    residual = fp_residual(&ibar, &g);
                    iterations = it + 1;
                    if residual < opts.tolerance {
                        converged = true;
                        break;
                    }
                    for (x, gx) in ibar.iter_mut().zip(&g) {
                        *x = (1.0 - opts.damping) * *x + opts.damping * gx;
                    }
                }
                if !converged {
                    let (x, res, its) = newton_fixed_point(&ibar, &limited, opts);
                    iterations += its;
                    residual = res;
                    ibar = x;
                    if residual >= opts.tolerance {
                        return Err(Error::NonConvergence { iterations, residual });
                    }
                }
                let v_s = voltages(&ibar);
                for (r, &k) in sat.iter().enumerate() {
                    v[k] = v_s[r];
                }
                i_sat = ibar;
            }
        }
    }

    let mut i_o = vec![Phasor::new(0.0, 0.0); n];
    for k in 0..n {
        let mut acc: Phasor = (0..n).map(|c| y[(k, c)] * v[c]).sum();
        if let Some(vg) = v_g {
            acc += y[(k, n)] * vg;
        }
        i_o[k] = acc;
    }
    for (r, &k) in sat.iter().enumerate() {
        if mode == SolveMode::ExactLimiter {
            i_o[k] = i_sat[r];
        }
        let p = &ports[k];
        i_ref[k] = p.reference(v[k]);
        mu[k] = circular_limit(i_ref[k], p.i_lim).1;
    }
    for &k in &stiff {
        i_ref[k] = i_o[k];
    }
    Ok(TerminalSolution {
        i_o,
        v,
        i_ref,
        mu,
        iterations,
        residual,
    })
}

fn pack(x: &[Phasor]) -> DVector<f64> {
    DVector::from_iterator(2 * x.len(), x.iter().flat_map(|c| [c.re, c.im]))
}

fn unpack(x: &DVector<f64>) -> Vec<Phasor> {
    x.as_slice().chunks(2).map(|c| Phasor::new(c[0], c[1])).collect()
}

/// Newton on `F(x) = x − G(x)` with a finite-difference Jacobian and
/// step halving. Returns the iterate, its residual and iterations used.
fn newton_fixed_point(
    start: &[Phasor],
    g: &dyn Fn(&[Phasor]) -> Vec<Phasor>,
    opts: &FixedPointOptions,
) -> (Vec<Phasor>, f64, usize) {
    let f = |x: &DVector<f64>| -> DVector<f64> {
        let xs = unpack(x);
        x - pack(&g(&xs))
    };
    let norm = |r: &DVector<f64>| r.amax();
    let mut x = pack(start);
    let mut r = f(&x);
    let dim = x.len();
    let mut used = 0;
    for _ in 0..opts.newton_iterations {
        if norm(&r) < opts.tolerance {
            break;
        }
        used += 1;
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        for c in 0..dim {
            let h = 1e-7 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            xp[c] += h;
            let col = (f(&xp) - &r) / h;
            jac.set_column(c, &col);
        }
        let Some(step) = jac.lu().solve(&(-&r)) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &x + &step * t;
            let rt = f(&trial);
            if norm(&rt) < norm(&r) {
                x = trial;
                r = rt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let res = norm(&r);
    (unpack(&x), res, used)
}

#[cfg(test)]
mod tests {
    use super::super::{Branch, NetworkModel, Node, NodeRole};
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn single(zg: Phasor) -> KronReducedNetwork {
        let m = NetworkModel {
            nodes: vec![
                Node { id: "t".into(), role: NodeRole::ConverterTerminal },
                Node { id: "g".into(), role: NodeRole::Grid },
            ],
            branches: vec![Branch { id: "zg".into(), from: "t".into(), to: "g".into(), z: zg }],
            shunts: vec![],
        };
        KronReducedNetwork::from_model(&m, &["t"], Some("g")).unwrap()
    }

    fn port(mode: PortMode, v_hat: Phasor, mu_f: f64) -> ConverterPort {
        ConverterPort {
            mode,
            v_hat,
            z_v: Phasor::from_polar(0.2, FRAC_PI_4),
            i_lim: 1.1,
            mu_f,
            scale_feedback: true,
        }
    }

    #[test]
    fn equal_potentials_carry_no_current() {
        let net = single(Phasor::new(0.37, 0.81));
        let s = solve_terminal(
            &net,
            &[port(PortMode::Normal, Phasor::new(1.0, 0.0), 1.0)],
            Some(Phasor::new(1.0, 0.0)),
            SolveMode::ExactLimiter,
            &FixedPointOptions::default(),
            None,
        )
        .unwrap();
        assert!(s.i_o[0].norm() < 1e-14);
        assert_eq!(s.v[0], Phasor::new(1.0, 0.0));
    }

    #[test]
    fn equivalent_circuit_is_series_circuit() {
        let zg = Phasor::new(0.1, 0.1);
        let net = single(zg);
        let p = port(PortMode::Saturated, Phasor::from_polar(0.9, 0.2), 0.7);
        let vg = Phasor::from_polar(0.3, -0.1);
        let s = solve_terminal(&net, &[p], Some(vg), SolveMode::EquivalentCircuit, &FixedPointOptions::default(), None).unwrap();
        let expected = (0.7 * p.v_hat - vg) / (p.z_v + zg);
        assert!((s.i_o[0] - expected).norm() < 1e-12);
    }

    /// Oracle for the single-port exact limiter: with `ī = i_lim·e^{jβ}`
    /// the fixed point is a root of the scalar angle residual
    /// `wrap(∠î(β) − β)`, located by dense sampling plus bisection.
    fn angle_oracle(p: &ConverterPort, zg: Phasor, vg: Phasor) -> Phasor {
        let ref_of = |beta: f64| {
            let i = Phasor::from_polar(p.i_lim, beta);
            p.reference(vg + zg * i)
        };
        let wrap = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;
        let res = |beta: f64| wrap(ref_of(beta).arg() - beta);
        let n = 20_000;
        let mut roots = Vec::new();
        for k in 0..n {
            let (a, b) = (-PI + 2.0 * PI * k as f64 / n as f64, -PI + 2.0 * PI * (k + 1) as f64 / n as f64);
            let (ra, rb) = (res(a), res(b));
            if ra.signum() != rb.signum() && (ra - rb).abs() < 1.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if res(mid).signum() == res(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
        }
        assert_eq!(roots.len(), 1, "oracle expects a unique saturated fixed point");
        assert!(ref_of(roots[0]).norm() > p.i_lim);
        Phasor::from_polar(p.i_lim, roots[0])
    }

    #[test]
    fn exact_limiter_during_deep_dip() {
        let zg = Phasor::new(0.1, 0.1);
        let net = single(zg);
        let p = port(PortMode::Saturated, Phasor::from_polar(0.95, 0.15), 0.85);
        let vg = Phasor::new(0.3, 0.0);
        let s = solve_terminal(&net, &[p], Some(vg), SolveMode::ExactLimiter, &FixedPointOptions::default(), None).unwrap();
        assert!((s.i_o[0].norm() - 1.1).abs() < 1e-12);
        let oracle = angle_oracle(&p, zg, vg);
        assert!((s.i_o[0] - oracle).norm() < 1e-9, "{} vs {}", s.i_o[0], oracle);
        assert!((s.v[0] - (vg + zg * s.i_o[0])).norm() < 1e-9);
        assert!(s.mu[0] < 1.0);
    }

    #[test]
    fn conventional_feedback_also_matches_oracle() {
        let zg = Phasor::new(0.1, 0.1);
        let net = single(zg);
        let mut p = port(PortMode::Saturated, Phasor::from_polar(0.92, -0.6), 0.4);
        p.scale_feedback = false;
        p.z_v = Phasor::new(0.2, 0.0);
        let vg = Phasor::new(0.3, 0.0);
        let s = solve_terminal(&net, &[p], Some(vg), SolveMode::ExactLimiter, &FixedPointOptions::default(), None).unwrap();
        let oracle = angle_oracle(&p, zg, vg);
        assert!((s.i_o[0] - oracle).norm() < 1e-9);
    }

    #[test]
    fn modes_coincide_when_filter_matches_dos() {
        let zg = Phasor::new(0.1, 0.1);
        let net = single(zg);
        let vg = Phasor::new(0.3, 0.0);
        let mut p = port(PortMode::Saturated, Phasor::from_polar(0.9, 0.1), 0.8);
        // Bisect on μ_f for the point where the filter state equals the DoS.
        let gap = |mu_f: f64| {
            let mut q = p;
            q.mu_f = mu_f;
            solve_terminal(&net, &[q], Some(vg), SolveMode::ExactLimiter, &FixedPointOptions::default(), None).unwrap().mu[0] - mu_f
        };
        let (mut lo, mut hi) = (0.05, 1.0);
        assert!(gap(lo) > 0.0 && gap(hi) < 0.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        p.mu_f = 0.5 * (lo + hi);
        let a = solve_terminal(&net, &[p], Some(vg), SolveMode::ExactLimiter, &FixedPointOptions::default(), None).unwrap();
        let b = solve_terminal(&net, &[p], Some(vg), SolveMode::EquivalentCircuit, &FixedPointOptions::default(), None).unwrap();
        assert!((a.mu[0] - p.mu_f).abs() < 1e-10);
        assert!((a.i_o[0] - b.i_o[0]).norm() < 1e-8);
        assert!((a.v[0] - b.v[0]).norm() < 1e-8);
    }

    #[test]
    fn unsaturated_reference_passes_through() {
        let net = single(Phasor::new(0.1, 0.1));
        let vg = Phasor::new(0.98, 0.0);
        let p = port(PortMode::Saturated, Phasor::new(1.0, 0.02), 1.0);
        let s = solve_terminal(&net, &[p], Some(vg), SolveMode::ExactLimiter, &FixedPointOptions::default(), None).unwrap();
        assert!(s.i_o[0].norm() < 1.1);
        assert_eq!(s.mu[0], 1.0);
        assert!((s.i_o[0] - s.i_ref[0]).norm() < 1e-9);
    }

    #[test]
    fn nonpositive_filter_state_is_rejected() {
        let net = single(Phasor::new(0.1, 0.1));
        let p = port(PortMode::Saturated, Phasor::new(1.0, 0.0), 0.0);
        let err = solve_terminal(&net, &[p], Some(Phasor::new(1.0, 0.0)), SolveMode::ExactLimiter, &FixedPointOptions::default(), None);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn exhausted_budget_reports_residual() {
        // Misaligned grid impedance so the first Picard step is not exact.
        let net = single(Phasor::new(0.02, 0.3));
        let p = port(PortMode::Saturated, Phasor::from_polar(0.95, 0.15), 0.85);
        let opts = FixedPointOptions { max_iterations: 1, newton_iterations: 0, ..Default::default() };
        match solve_terminal(&net, &[p], Some(Phasor::new(0.3, 0.0)), SolveMode::ExactLimiter, &opts, None) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
