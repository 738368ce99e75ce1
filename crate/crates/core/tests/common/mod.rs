#![allow(dead_code)]

use gfmsat::control::Strategy;
use gfmsat::network::{EventKind, FaultEvent};
use gfmsat::scenario::load_scenario;
use gfmsat::sim::{Engine, ScenarioSpec, SystemState};

pub fn fixture_spec(name: &str) -> ScenarioSpec {
    load_scenario(name).expect("fixture parses").spec
}

/// Case I with the dip held for the rest of the run.
pub fn sustained_dip(v_g: f64, t_end: f64) -> ScenarioSpec {
    let mut spec = fixture_spec("case1-single").with_strategy(Strategy::SaturationInformed);
    spec.events = vec![FaultEvent { time: 0.5, kind: EventKind::GridVoltageStep { magnitude: v_g } }];
    spec.solver.t_end = t_end;
    spec
}

/// Integrates with the public engine API and returns the final state.
pub fn march(spec: &ScenarioSpec) -> SystemState {
    let mut engine = Engine::new(spec).unwrap();
    let (mut st, _) = engine.initialize().unwrap();
    let mut events = spec.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let n = (spec.solver.t_end / spec.solver.dt).round() as usize;
    let mut next = 0;
    for k in 0..n {
        let t = k as f64 * spec.solver.dt;
        let mut fired = false;
        while next < events.len() && events[next].time <= t + 0.5 * spec.solver.dt {
            engine.apply_event(&events[next]).unwrap();
            next += 1;
            fired = true;
        }
        if fired {
            engine.supervise(&mut st).unwrap();
        }
        st = engine.step(&st).unwrap();
    }
    st
}

/// Wraps onto (−π, π].
pub fn wrap(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    if w == -std::f64::consts::PI { std::f64::consts::PI } else { w }
}
