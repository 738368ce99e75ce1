use serde::{Deserialize, Serialize};

use super::{NetworkModel, Shunt};
use crate::error::{Error, Result};
use crate::phasor::{GridModel, Phasor};

/// Near-bolted three-phase fault (p.u.).
pub const DEFAULT_FAULT_IMPEDANCE: Phasor = Phasor::new(1e-3, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    GridVoltageStep { magnitude: f64 },
    ShuntFaultApply { node: String, impedance: Phasor },
    ShuntFaultClear { node: String },
    LineTrip { branch: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl FaultEvent {
    /// Node or branch the event refers to.
    pub fn location(&self) -> Option<&str> {
        match &self.kind {
            EventKind::GridVoltageStep { .. } => None,
            EventKind::ShuntFaultApply { node, .. } | EventKind::ShuntFaultClear { node } => Some(node),
            EventKind::LineTrip { branch } => Some(branch),
        }
    }

    pub fn changes_topology(&self) -> bool {
        !matches!(self.kind, EventKind::GridVoltageStep { .. })
    }
}

/// Checks nonnegative times and that every clear has a matching apply.
pub fn validate_schedule(events: &[FaultEvent]) -> Result<()> {
    let mut sorted: Vec<&FaultEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut open: Vec<&str> = Vec::new();
    for ev in sorted {
        if !(ev.time >= 0.0) || !ev.time.is_finite() {
            return Err(Error::Event(format!("event time must be nonnegative, got {}", ev.time)));
        }
        match &ev.kind {
            EventKind::ShuntFaultApply { node, .. } => open.push(node),
            EventKind::ShuntFaultClear { node } => {
                let pos = open
                    .iter()
                    .position(|n| n == node)
                    .ok_or_else(|| Error::Event(format!("fault clear at '{node}' has no preceding apply")))?;
                open.remove(pos);
            }
            EventKind::GridVoltageStep { magnitude } if !(*magnitude >= 0.0) => {
                return Err(Error::Event(format!("grid voltage must be nonnegative, got {magnitude}")));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Network topology together with the grid source it feeds.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub model: NetworkModel,
    pub grid: Option<GridModel>,
}

fn fault_shunt_id(node: &str) -> String {
    format!("fault:{node}")
}

/// Returns the network after `event`; the input is left untouched.
pub fn apply_event(state: &NetworkState, event: &FaultEvent) -> Result<NetworkState> {
    let mut next = state.clone();
    match &event.kind {
        EventKind::GridVoltageStep { magnitude } => {
            let grid = next
                .grid
                .as_mut()
                .ok_or_else(|| Error::Event("grid voltage step on an islanded network".into()))?;
            if !(*magnitude >= 0.0) {
                return Err(Error::Event(format!("grid voltage must be nonnegative, got {magnitude}")));
            }
            grid.v_g = *magnitude;
        }
        EventKind::ShuntFaultApply { node, impedance } => {
            next.model
                .index_of(node)
                .ok_or_else(|| Error::Event(format!("unknown fault location '{node}'")))?;
            let id = fault_shunt_id(node);
            if next.model.shunts.iter().any(|s| s.id == id) {
                return Err(Error::Event(format!("fault already applied at '{node}'")));
            }
            if impedance.norm() == 0.0 {
                return Err(Error::Event("fault impedance must be nonzero".into()));
            }
            next.model.shunts.push(Shunt {
                id,
                node: node.clone(),
                y: impedance.inv(),
            });
        }
        EventKind::ShuntFaultClear { node } => {
            next.model
                .index_of(node)
                .ok_or_else(|| Error::Event(format!("unknown fault location '{node}'")))?;
            let id = fault_shunt_id(node);
            let pos = next
                .model
                .shunts
                .iter()
                .position(|s| s.id == id)
                .ok_or_else(|| Error::Event(format!("no active fault at '{node}'")))?;
            next.model.shunts.remove(pos);
        }
        EventKind::LineTrip { branch } => {
            let pos = next
                .model
                .branches
                .iter()
                .position(|b| &b.id == branch)
                .ok_or_else(|| Error::Event(format!("unknown branch '{branch}'")))?;
            next.model.branches.remove(pos);
            if !next.model.is_connected() {
                return Err(Error::Event(format!("tripping '{branch}' disconnects the network")));
            }
        }
    }
    Ok(next)
}
