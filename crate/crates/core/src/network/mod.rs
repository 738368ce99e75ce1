//! Nodal network models, Kron reduction, virtual-impedance augmentation,
//! fault events and the algebraic terminal solve.

mod events;
mod kron;
mod model;
mod terminal;

pub use events::{apply_event, validate_schedule, EventKind, FaultEvent, NetworkState, DEFAULT_FAULT_IMPEDANCE};
pub use kron::{
    augment_with_virtual_impedance, augment_with_virtual_impedances, kron_reduce, KronReducedNetwork,
};
pub use model::{build_admittance, Branch, NetworkModel, Node, NodeRole, Shunt};
pub use terminal::{solve_terminal, ConverterPort, FixedPointOptions, PortMode, SolveMode, TerminalSolution};

use nalgebra::{DMatrix, DVector};

use crate::phasor::Phasor;

pub type CMatrix = DMatrix<Phasor>;
pub type CVector = DVector<Phasor>;
