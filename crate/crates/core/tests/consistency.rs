//! Cross-module agreement: time-domain steady states against the
//! algebraic solvers, and solver settings that must not matter.

mod common;

use common::{fixture_spec, march, sustained_dip, wrap};
use gfmsat::control::{internal_virtual_voltage, Mode, Strategy};
use gfmsat::equilibrium::{closed_form_aligned, solve_saturated_equilibrium, SaturatedEquilibriumProblem};
use gfmsat::network::SolveMode;
use gfmsat::phasor::Phasor;
use gfmsat::sim::{run, run_detailed, Engine, ScenarioSpec};

const Z_G: Phasor = Phasor::new(0.1, 0.1);

fn problem(spec: &ScenarioSpec, v_g: f64) -> SaturatedEquilibriumProblem {
    let cfg = spec.converters[0].config.effective(Mode::Saturated);
    SaturatedEquilibriumProblem::from_config(&cfg, Z_G, v_g, 0.0, spec.base.frequency_base).unwrap()
}

#[test]
fn sustained_fault_settles_on_closed_form_solution() {
    let spec = sustained_dip(0.3, 6.0);
    let st = march(&spec);
    let c = st.converters[0];
    assert_eq!(c.mode, Mode::Saturated);
    let cf = closed_form_aligned(&problem(&spec, 0.3)).unwrap();
    let v_mu = internal_virtual_voltage(&c);
    assert!((v_mu.norm() - cf.v_hat_mu_s).abs() < 1e-3);
    assert!((c.mu_f - cf.mu_s).abs() < 1e-3);
    assert!(wrap(v_mu.arg() - st.theta_g).abs() < 1e-3);
}

#[test]
fn sustained_fault_settles_on_numeric_solution_with_rotated_setpoint() {
    for v_g in [0.3, 0.5] {
        let mut spec = sustained_dip(v_g, 10.0);
        spec.converters[0].config.frt_overrides = None;
        let st = march(&spec);
        let c = st.converters[0];
        let sol = solve_saturated_equilibrium(&problem(&spec, v_g)).unwrap();
        assert!(sol.exists && sol.mu_s < 1.0);
        assert!(sol.delta_s.abs() > 0.1, "nontrivial angle expected");
        let v_mu = internal_virtual_voltage(&c);
        assert!((v_mu.norm() - sol.v_hat_mu_s).abs() < 1e-3, "v_g = {v_g}");
        assert!((c.mu_f - sol.mu_s).abs() < 1e-3, "v_g = {v_g}");
        assert!(wrap(v_mu.arg() - st.theta_g - sol.delta_s).abs() < 1e-3, "v_g = {v_g}");
    }
}

#[test]
fn exact_and_equivalent_limiter_share_the_fault_steady_state() {
    for overrides in [true, false] {
        let mut exact = sustained_dip(0.3, 6.0);
        if !overrides {
            exact.converters[0].config.frt_overrides = None;
        }
        let mut equiv = exact.clone();
        equiv.solver.mode = SolveMode::EquivalentCircuit;
        let (a, b) = (march(&exact).converters[0], march(&equiv).converters[0]);
        assert!((a.v_hat - b.v_hat).norm() <= 1e-6);
        assert!((a.mu_f - b.mu_f).abs() <= 1e-6);
    }
}

/// Without events the initial operating point must not move.
fn stationary_drift(mut spec: ScenarioSpec) -> f64 {
    spec.events.clear();
    spec.solver.t_end = 1.0;
    let mut engine = Engine::new(&spec).unwrap();
    let (st0, _) = engine.initialize().unwrap();
    let st1 = march(&spec);
    let islanded = spec.is_islanded();
    // Grid-connected states are compared in the grid frame, islanded ones
    // relative to the first converter.
    let frame = |st: &gfmsat::sim::SystemState, k: usize| {
        let v = st.converters[k].v_hat;
        if islanded {
            v * st.converters[0].v_hat.conj() / st.converters[0].v_hat.norm()
        } else {
            v * Phasor::from_polar(1.0, -st.theta_g)
        }
    };
    (0..spec.converters.len())
        .map(|k| (frame(&st1, k) - frame(&st0, k)).norm() + (st1.converters[k].mu_f - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn operating_point_is_stationary() {
    for name in ["case1-single", "case2-three-converter", "case3-ieee9"] {
        for strategy in [Strategy::SaturationInformed, Strategy::ConventionalWithLimiter] {
            let drift = stationary_drift(fixture_spec(name).with_strategy(strategy));
            assert!(drift <= 1e-8, "{name} {strategy:?}: drift {drift:e}");
        }
    }
}

#[test]
fn verdicts_do_not_depend_on_sampling_rate() {
    let base = fixture_spec("case1-single");
    for strategy in [Strategy::SaturationInformed, Strategy::ConventionalWithLimiter] {
        let verdicts: Vec<_> = [1000.0, 2000.0, 5000.0, 10000.0]
            .into_iter()
            .map(|rate| {
                let mut spec = base.with_strategy(strategy);
                spec.solver.log_rate = rate;
                run(&spec).unwrap().1
            })
            .collect();
        for v in &verdicts[1..] {
            assert_eq!(v.classification, verdicts[0].classification);
            assert_eq!(v.recovered_to_prefault, verdicts[0].recovered_to_prefault);
            assert!((v.max_angle_excursion - verdicts[0].max_angle_excursion).abs() < 1e-2);
        }
    }
}

#[test]
fn logged_current_respects_the_limit() {
    let spec = fixture_spec("case1-single");
    let out = run_detailed(&spec).unwrap();
    let peak = out.log.converters[0].imag.iter().copied().fold(0.0, f64::max);
    assert!(peak <= 1.1 + 1e-6, "peak {peak}");
    assert!(peak >= 1.1 - 1e-6, "limit never reached");
}
