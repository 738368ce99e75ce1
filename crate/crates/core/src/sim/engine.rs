//! Fixed-step integration of the converter-network system in the frame
//! rotating at `ω_0`.
//!
//! Each converter carries `[Re v̂, Im v̂, μ_f]`. Modes are frozen within a
//! step; events fire on step boundaries and the mode supervisor runs after
//! every step and after every event.

use serde::Serialize;
use std::f64::consts::PI;

use crate::control::{
    dos_filter_derivative, dvoc_derivative, mode_transition, saturation_informed_dvoc_derivative, ConverterConfig,
    ConverterState, FrameRates, Mode, Strategy,
};
use crate::error::{Error, Result};
use crate::network::{apply_event, solve_terminal, ConverterPort, FaultEvent, KronReducedNetwork, NetworkState, TerminalSolution};
use crate::phasor::Phasor;

use super::classify::{classify_log, ClassifyOptions, StabilityVerdict};
use super::log::{ConverterTrace, TimeSeriesLog};
use super::rk4::rk4_step;
use super::spec::ScenarioSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub converters: Vec<ConverterState>,
    /// Grid angle in the rotating frame (0 when islanded).
    pub theta_g: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    /// Newton solve of the unsaturated operating point.
    Equilibrium,
    /// Flat start followed by a settling pre-roll.
    FlatStart,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunInfo {
    pub init: InitMethod,
    pub init_residual: f64,
    pub steps: usize,
    /// Islanded steady frequency offset found at initialization (rad/s).
    pub init_frequency_offset: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: TimeSeriesLog,
    pub verdict: StabilityVerdict,
    pub info: RunInfo,
}

/// Derivative and network solution at one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub deriv: Vec<f64>,
    pub solution: TerminalSolution,
}

pub struct Engine<'a> {
    spec: &'a ScenarioSpec,
    network: NetworkState,
    reduced: KronReducedNetwork,
    /// Frame rate is zero: derivatives are taken in the rotating frame.
    rates: FrameRates,
    warm: Option<Vec<Phasor>>,
}

fn pack(states: &[ConverterState]) -> Vec<f64> {
    states.iter().flat_map(|s| [s.v_hat.re, s.v_hat.im, s.mu_f]).collect()
}

fn unpack_into(x: &[f64], states: &mut [ConverterState]) {
    for (k, s) in states.iter_mut().enumerate() {
        s.v_hat = Phasor::new(x[3 * k], x[3 * k + 1]);
        s.mu_f = x[3 * k + 2];
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl<'a> Engine<'a> {
    pub fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let network = spec.network_state();
        let reduced = Self::reduce(spec, &network)?;
        Ok(Self {
            spec,
            network,
            reduced,
            rates: FrameRates { omega_0: 0.0, omega_b: spec.base.frequency_base },
            warm: None,
        })
    }

    fn reduce(spec: &ScenarioSpec, network: &NetworkState) -> Result<KronReducedNetwork> {
        let nodes: Vec<&str> = spec.converters.iter().map(|c| c.node.as_str()).collect();
        KronReducedNetwork::from_model(&network.model, &nodes, spec.grid.as_ref().map(|g| g.node.as_str()))
    }

    pub fn network(&self) -> &NetworkState {
        &self.network
    }

    pub fn apply_event(&mut self, event: &FaultEvent) -> Result<()> {
        let next = apply_event(&self.network, event)?;
        if event.changes_topology() {
            self.reduced = Self::reduce(self.spec, &next)?;
        }
        self.network = next;
        self.warm = None;
        Ok(())
    }

    fn cfg(&self, k: usize) -> &ConverterConfig {
        &self.spec.converters[k].config
    }

    fn grid_at(&self, t: f64) -> Option<Phasor> {
        self.network.grid.map(|g| g.phasor_at(t))
    }

    /// Grid angle at `t`, zero when islanded.
    pub fn grid_angle(&self, t: f64) -> f64 {
        self.network.grid.map_or(0.0, |g| g.angle_at(t))
    }

    fn ports(&self, states: &[ConverterState]) -> Vec<ConverterPort> {
        states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let cfg = self.cfg(k);
                let eff = cfg.effective(s.mode);
                ConverterPort {
                    mode: s.mode,
                    v_hat: s.v_hat,
                    z_v: eff.z_v / cfg.rating,
                    i_lim: cfg.i_lim * cfg.rating,
                    mu_f: s.mu_f,
                    scale_feedback: cfg.strategy == Strategy::SaturationInformed,
                }
            })
            .collect()
    }

    /// Network solve and state derivative at `t` for the given states.
    pub fn evaluate(&mut self, t: f64, states: &[ConverterState]) -> Result<Evaluation> {
        let ports = self.ports(states);
        let solution = solve_terminal(
            &self.reduced,
            &ports,
            self.grid_at(t),
            self.spec.solver.mode,
            &self.spec.solver.fixed_point,
            self.warm.as_deref(),
        )?;
        self.warm = Some(solution.i_o.clone());
        let mut deriv = Vec::with_capacity(3 * states.len());
        for (k, s) in states.iter().enumerate() {
            let cfg = self.cfg(k);
            let eff = cfg.effective(s.mode);
            let i_own = solution.i_o[k] / cfg.rating;
            let dv = match cfg.strategy {
                Strategy::SaturationInformed => saturation_informed_dvoc_derivative(s, i_own, &eff, self.rates)?,
                _ => dvoc_derivative(s, i_own, &eff, self.rates),
            };
            let mu = if s.mode == Mode::Saturated { solution.mu[k] } else { 1.0 };
            deriv.extend([dv.re, dv.im, dos_filter_derivative(mu, s.mu_f, cfg.tau)]);
        }
        Ok(Evaluation { deriv, solution })
    }

    /// Applies mode transitions at the state's time until none fire and
    /// returns the evaluation for the final modes.
    pub fn supervise(&mut self, state: &mut SystemState) -> Result<Evaluation> {
        let t = state.time;
        for _ in 0..=2 * state.converters.len() {
            let ev = self.evaluate(t, &state.converters)?;
            let mut changed = false;
            for k in 0..state.converters.len() {
                let cfg = self.cfg(k);
                let s = &state.converters[k];
                let next = mode_transition(s, ev.solution.v[k], ev.solution.i_ref[k] / cfg.rating, cfg, t);
                if next != s.mode {
                    let s = &mut state.converters[k];
                    s.mode = next;
                    s.mode_entry_time = t;
                    changed = true;
                }
            }
            if !changed {
                return Ok(ev);
            }
        }
        self.evaluate(t, &state.converters)
    }

    /// RK4 over one step with modes frozen; `k1` is the derivative at the
    /// step start when known.
    pub fn advance(&mut self, state: &SystemState, k1: Option<Vec<f64>>) -> Result<SystemState> {
        let dt = self.spec.solver.dt;
        let x = pack(&state.converters);
        let mut scratch = state.converters.clone();
        let x1 = rk4_step(state.time, &x, dt, k1, |t, y| {
            unpack_into(y, &mut scratch);
            Ok(self.evaluate(t, &scratch)?.deriv)
        })?;
        let mut next = state.clone();
        unpack_into(&x1, &mut next.converters);
        next.time = state.time + dt;
        next.theta_g = self.grid_angle(next.time);
        for s in &next.converters {
            if !(s.mu_f > 0.0) || !s.v_hat.re.is_finite() || !s.v_hat.im.is_finite() {
                return Err(Error::Numeric(format!("state left the admissible set (mu_f = {})", s.mu_f)));
            }
        }
        Ok(next)
    }

    /// One full step: integrate, then supervise modes at the new time.
    pub fn step(&mut self, state: &SystemState) -> Result<SystemState> {
        let mut next = self.advance(state, None)?;
        self.supervise(&mut next)?;
        Ok(next)
    }

    /// Unknowns → states for the operating-point solve.
    fn init_states(&self, u: &[f64]) -> (Vec<ConverterState>, f64) {
        let n = self.spec.converters.len();
        let mut out = Vec::with_capacity(n);
        if self.network.grid.is_some() {
            for k in 0..n {
                out.push(ConverterState::new(Phasor::new(u[2 * k], u[2 * k + 1])));
            }
            (out, self.network.grid.map_or(0.0, |g| g.omega_delta()))
        } else {
            out.push(ConverterState::new(Phasor::new(u[0], 0.0)));
            for k in 1..n {
                out.push(ConverterState::new(Phasor::new(u[2 * k - 1], u[2 * k])));
            }
            // Steady rotation is e^{jω_s t}; grid convention uses −ω_Δ.
            (out, -u[2 * n - 1])
        }
    }

    fn init_residual(&mut self, u: &[f64]) -> Result<Vec<f64>> {
        let (states, omega_delta) = self.init_states(u);
        let ev = self.evaluate(0.0, &states)?;
        let mut r = Vec::with_capacity(u.len());
        for (k, s) in states.iter().enumerate() {
            // Steady state rotates as x·e^{−jω_Δ t}.
            let d = Phasor::new(ev.deriv[3 * k], ev.deriv[3 * k + 1]) + Phasor::new(0.0, omega_delta) * s.v_hat;
            r.extend([d.re, d.im]);
        }
        Ok(r)
    }

    /// Pre-fault state from the unsaturated operating point, falling back
    /// to a flat start with a settling pre-roll.
    pub fn initialize(&mut self) -> Result<(SystemState, RunInfo)> {
        let n = self.spec.converters.len();
        let theta = self.grid_angle(0.0);
        let mut u0 = Vec::with_capacity(2 * n);
        if self.network.grid.is_some() {
            for k in 0..n {
                let v = Phasor::from_polar(self.cfg(k).v_star, theta);
                u0.extend([v.re, v.im]);
            }
        } else {
            u0.push(self.cfg(0).v_star);
            for k in 1..n {
                u0.extend([self.cfg(k).v_star, 0.0]);
            }
            u0.push(0.0);
        }
        let solved = newton_fd(u0, |u| self.init_residual(u), 1e-11, 60);
        if let Ok((u, res)) = solved {
            let (states, omega_delta) = self.init_states(&u);
            let mut st = SystemState { converters: states, theta_g: theta, time: 0.0 };
            let ev = self.supervise(&mut st);
            if ev.is_ok() && st.converters.iter().all(|c| c.mode == Mode::Normal) {
                let info = RunInfo {
                    init: InitMethod::Equilibrium,
                    init_residual: res,
                    steps: 0,
                    init_frequency_offset: if self.network.grid.is_some() { 0.0 } else { -omega_delta },
                };
                return Ok((st, info));
            }
        }
        // Flat start and pre-roll to t = 0.
        let dt = self.spec.solver.dt;
        let pre = (self.spec.solver.settle_time / dt).round() as usize;
        let t0 = -(pre as f64) * dt;
        let mut st = SystemState {
            converters: (0..n)
                .map(|k| ConverterState::new(Phasor::from_polar(self.cfg(k).v_star, self.grid_angle(t0))))
                .collect(),
            theta_g: self.grid_angle(t0),
            time: t0,
        };
        for c in &mut st.converters {
            c.mode_entry_time = t0;
        }
        self.supervise(&mut st).map_err(|e| sim_err(t0, e))?;
        for _ in 0..pre {
            let t = st.time;
            st = self.step(&st).map_err(|e| sim_err(t, e))?;
        }
        st.time = 0.0;
        st.theta_g = self.grid_angle(0.0);
        let r = self.init_residual(&init_unknowns(&st, self.network.grid.is_some())).map(|r| max_abs(&r)).unwrap_or(f64::NAN);
        Ok((st, RunInfo { init: InitMethod::FlatStart, init_residual: r, steps: 0, init_frequency_offset: 0.0 }))
    }
}

fn init_unknowns(st: &SystemState, grid: bool) -> Vec<f64> {
    let mut u = Vec::new();
    for (k, c) in st.converters.iter().enumerate() {
        if grid || k > 0 {
            u.extend([c.v_hat.re, c.v_hat.im]);
        } else {
            u.push(c.v_hat.norm());
        }
    }
    if !grid {
        u.push(0.0);
    }
    u
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sim_err(time: f64, e: Error) -> Error {
    match e {
        e @ Error::Simulation { .. } => e,
        e => Error::Simulation { time, source: Box::new(e) },
    }
}

/// Newton with a forward-difference Jacobian and step halving.
fn newton_fd(mut u: Vec<f64>, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64)> {
    let mut r = f(&u)?;
    let dim = u.len();
    for _ in 0..max_iter {
        let norm = max_abs(&r);
        if norm < tol {
            return Ok((u, norm));
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(r.len(), dim);
        for c in 0..dim {
            let h = 1e-7 * u[c].abs().max(1.0);
            let mut up = u.clone();
            up[c] += h;
            let rp = f(&up)?;
            for i in 0..r.len() {
                jac[(i, c)] = (rp[i] - r[i]) / h;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(r.len(), r.iter().map(|x| -x));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("singular Jacobian in operating-point solve".into()))?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if let Ok(rt) = f(&trial) {
                if max_abs(&rt) < norm {
                    u = trial;
                    r = rt;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::NonConvergence { iterations: max_iter, residual: norm });
            }
        }
    }
    let norm = max_abs(&r);
    if norm < tol {
        Ok((u, norm))
    } else {
        Err(Error::NonConvergence { iterations: max_iter, residual: norm })
    }
}

struct Recorder {
    log: TimeSeriesLog,
    angle: Vec<f64>,
    last_raw: Vec<f64>,
}

impl Recorder {
    fn new(spec: &ScenarioSpec, st: &SystemState) -> Self {
        let raw: Vec<f64> = st.converters.iter().map(|c| c.v_hat.arg()).collect();
        Self {
            log: TimeSeriesLog {
                t: Vec::new(),
                converters: spec
                    .converters
                    .iter()
                    .map(|c| ConverterTrace { id: c.id.clone(), ..Default::default() })
                    .collect(),
                islanded: spec.is_islanded(),
            },
            angle: raw.clone(),
            last_raw: raw,
        }
    }

    /// Tracks the continuous angle of every `v̂`; called every step.
    fn track(&mut self, st: &SystemState) {
        for (k, c) in st.converters.iter().enumerate() {
            let raw = c.v_hat.arg();
            self.angle[k] += wrap(raw - self.last_raw[k]);
            self.last_raw[k] = raw;
        }
    }

    fn record(&mut self, spec: &ScenarioSpec, st: &SystemState, ev: &Evaluation, omega_0: f64) {
        self.log.t.push(st.time);
        let reference = if self.log.islanded { self.angle[0] } else { st.theta_g };
        for (k, c) in st.converters.iter().enumerate() {
            let tr = &mut self.log.converters[k];
            let rating = spec.converters[k].config.rating;
            let dx = Phasor::new(ev.deriv[3 * k], ev.deriv[3 * k + 1]);
            tr.vmag.push(ev.solution.v[k].norm());
            tr.imag.push(ev.solution.i_o[k].norm() / rating);
            tr.delta.push(self.angle[k] - reference);
            tr.mu_f.push(c.mu_f);
            tr.mode.push(c.mode);
            tr.freq.push(1.0 + (dx / c.v_hat).im / omega_0);
        }
    }
}

/// Classification settings matching a scenario.
pub fn classify_options(spec: &ScenarioSpec) -> ClassifyOptions {
    ClassifyOptions { reference_time: spec.first_event_time(), ..Default::default() }
}

pub fn run_detailed(spec: &ScenarioSpec) -> Result<RunOutput> {
    let mut engine = Engine::new(spec)?;
    let (mut st, mut info) = engine.initialize()?;
    let omega_0 = spec.base.frequency_base;
    let dt = spec.solver.dt;
    let n_steps = (spec.solver.t_end / dt).round() as usize;
    let decimation = ((1.0 / (spec.solver.log_rate * dt)).round() as usize).max(1);
    let mut events = spec.events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;
    let mut rec = Recorder::new(spec, &st);
    let mut cached: Option<Evaluation> = None;

    for k in 0..=n_steps {
        let t = k as f64 * dt;
        st.time = t;
        st.theta_g = engine.grid_angle(t);
        let mut fired = false;
        while next_event < events.len() && events[next_event].time <= t + 0.5 * dt {
            engine.apply_event(&events[next_event]).map_err(|e| sim_err(t, e))?;
            next_event += 1;
            fired = true;
        }
        let ev = match cached.take() {
            Some(ev) if !fired => ev,
            _ => engine.supervise(&mut st).map_err(|e| sim_err(t, e))?,
        };
        if k % decimation == 0 {
            rec.record(spec, &st, &ev, omega_0);
        }
        if k == n_steps {
            break;
        }
        st = engine.advance(&st, Some(ev.deriv)).map_err(|e| sim_err(t, e))?;
        rec.track(&st);
        cached = Some(engine.supervise(&mut st).map_err(|e| sim_err(t + dt, e))?);
    }
    info.steps = n_steps;
    let verdict = classify_log(&rec.log, &classify_options(spec))?;
    Ok(RunOutput { log: rec.log, verdict, info })
}

/// Runs the scenario and classifies the trajectory.
pub fn run(spec: &ScenarioSpec) -> Result<(TimeSeriesLog, StabilityVerdict)> {
    let out = run_detailed(spec)?;
    Ok((out.log, out.verdict))
}
