use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::control::{ConverterConfig, Strategy};
use crate::error::{Error, Result};
use crate::network::{apply_event, validate_schedule, FaultEvent, FixedPointOptions, NetworkModel, NetworkState, NodeRole, SolveMode};
use crate::phasor::{GridModel, PerUnitBase};

use super::Classification;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterSpec {
    pub id: String,
    /// Terminal node in the network.
    pub node: String,
    #[serde(flatten)]
    pub config: ConverterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub node: String,
    #[serde(flatten)]
    pub model: GridModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub dt: f64,
    pub t_end: f64,
    pub mode: SolveMode,
    /// Log sampling rate (Hz).
    pub log_rate: f64,
    /// Pre-roll used when the equilibrium initialization fails (s).
    pub settle_time: f64,
    pub fixed_point: FixedPointOptions,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_end: 6.0,
            mode: SolveMode::ExactLimiter,
            log_rate: 1000.0,
            settle_time: 1.0,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub base: PerUnitBase,
    /// `None` for an islanded network.
    pub grid: Option<GridSpec>,
    pub network: NetworkModel,
    pub converters: Vec<ConverterSpec>,
    pub events: Vec<FaultEvent>,
    pub solver: SolverSettings,
    pub outputs: Vec<String>,
    /// Regression verdicts keyed by strategy tag.
    pub expected: BTreeMap<String, Classification>,
    pub metadata: serde_json::Value,
}

pub const CHANNELS: [&str; 6] = ["vmag", "imag", "delta", "mu_f", "mode", "freq"];

impl ScenarioSpec {
    pub fn is_islanded(&self) -> bool {
        self.grid.is_none()
    }

    pub fn first_event_time(&self) -> Option<f64> {
        self.events.iter().map(|e| e.time).reduce(f64::min)
    }

    pub fn network_state(&self) -> NetworkState {
        NetworkState {
            model: self.network.clone(),
            grid: self.grid.as_ref().map(|g| g.model),
        }
    }

    /// Same scenario with every converter switched to `strategy`.
    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        let mut out = self.clone();
        for c in &mut out.converters {
            c.config.strategy = strategy;
        }
        out
    }

    /// Checks numeric ranges and that every reference resolves.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let s = &self.solver;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Input(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(Error::Input(format!("t_end must be positive, got {}", s.t_end)));
        }
        if let Some(last) = self.events.iter().map(|e| e.time).reduce(f64::max) {
            if !(s.t_end > last) {
                return Err(Error::Input(format!("t_end {} must exceed the last event time {last}", s.t_end)));
            }
        }
        if !(s.log_rate > 0.0) || s.log_rate * s.dt > 1.0 + 1e-9 {
            return Err(Error::Input("log_rate must be positive and at most 1/dt".into()));
        }
        if !(s.settle_time >= 0.0) {
            return Err(Error::Input("settle_time must be nonnegative".into()));
        }
        self.network.validate()?;
        if self.converters.is_empty() {
            return Err(Error::Input("at least one converter is required".into()));
        }
        for (k, c) in self.converters.iter().enumerate() {
            self.network
                .index_of(&c.node)
                .ok_or_else(|| Error::Reference(format!("converter '{}' refers to unknown node '{}'", c.id, c.node)))?;
            if self.converters[..k].iter().any(|o| o.id == c.id) {
                return Err(Error::Input(format!("duplicate converter id '{}'", c.id)));
            }
            if self.converters[..k].iter().any(|o| o.node == c.node) {
                return Err(Error::Input(format!("two converters share node '{}'", c.node)));
            }
            c.config
                .validate()
                .map_err(|e| Error::Input(format!("converter '{}': {e}", c.id)))?;
        }
        if let Some(g) = &self.grid {
            let idx = self
                .network
                .index_of(&g.node)
                .ok_or_else(|| Error::Reference(format!("grid refers to unknown node '{}'", g.node)))?;
            if self.network.nodes[idx].role != NodeRole::Grid {
                return Err(Error::Input(format!("grid node '{}' must have role grid", g.node)));
            }
            if self.converters.iter().any(|c| c.node == g.node) {
                return Err(Error::Input("a converter cannot sit on the grid node".into()));
            }
            g.model.validate()?;
            if (g.model.omega_0 - self.base.frequency_base).abs() > 1e-9 * self.base.frequency_base {
                return Err(Error::Input("grid omega_0 must equal the base frequency".into()));
            }
        }
        for o in &self.outputs {
            if !CHANNELS.contains(&o.as_str()) {
                return Err(Error::Input(format!("unknown output channel '{o}'")));
            }
        }
        validate_schedule(&self.events)?;
        let mut sorted = self.events.clone();
        sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut state = self.network_state();
        for ev in &sorted {
            state = apply_event(&state, ev)?;
        }
        Ok(())
    }
}
