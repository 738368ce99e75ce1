use serde::{Deserialize, Serialize};

use super::CMatrix;
use crate::error::{Error, Result};
use crate::phasor::Phasor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    ConverterInternal,
    ConverterTerminal,
    Load,
    Grid,
    Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: NodeRole,
}

/// Series element between two nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Series impedance (p.u.).
    pub z: Phasor,
}

/// Admittance from a node to ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub id: String,
    pub node: String,
    /// Shunt admittance (p.u.).
    pub y: Phasor,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkModel {
    pub nodes: Vec<Node>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub shunts: Vec<Shunt>,
}

impl NetworkModel {
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index_of(id)
            .ok_or_else(|| Error::Model(format!("unknown node '{id}'")))
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    /// Checks references, impedances and connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Model("network has no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.id == n.id) {
                return Err(Error::Model(format!("duplicate node id '{}'", n.id)));
            }
        }
        for b in &self.branches {
            let (f, t) = (self.node_index(&b.from)?, self.node_index(&b.to)?);
            if f == t {
                return Err(Error::Model(format!("branch '{}' is a self-loop", b.id)));
            }
            if !(b.z.re.is_finite() && b.z.im.is_finite()) || b.z.norm() == 0.0 {
                return Err(Error::Model(format!("branch '{}' has zero or non-finite impedance", b.id)));
            }
        }
        for s in &self.shunts {
            self.node_index(&s.node)?;
            if !(s.y.re.is_finite() && s.y.im.is_finite()) {
                return Err(Error::Model(format!("shunt '{}' is not finite", s.id)));
            }
        }
        if !self.is_connected() {
            return Err(Error::Model("network graph is disconnected".into()));
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for b in &self.branches {
            if let (Some(f), Some(t)) = (self.index_of(&b.from), self.index_of(&b.to)) {
                let (rf, rt) = (find(&mut parent, f), find(&mut parent, t));
                parent[rf] = rt;
            }
        }
        let root = find(&mut parent, 0);
        (0..n).all(|i| find(&mut parent, i) == root)
    }

    /// Adds an internal node behind each listed terminal, joined through
    /// the virtual impedance. Returns the new model and the internal ids.
    pub fn with_virtual_impedance(&self, terminals: &[(&str, Phasor)]) -> Result<(NetworkModel, Vec<String>)> {
        let mut out = self.clone();
        let mut ids = Vec::with_capacity(terminals.len());
        for (terminal, z_v) in terminals {
            self.node_index(terminal)?;
            let id = format!("{terminal}#int");
            out.nodes.push(Node {
                id: id.clone(),
                role: NodeRole::ConverterInternal,
            });
            out.branches.push(Branch {
                id: format!("{terminal}#zv"),
                from: id.clone(),
                to: terminal.to_string(),
                z: *z_v,
            });
            ids.push(id);
        }
        Ok((out, ids))
    }
}

/// Full nodal admittance matrix in node order.
pub fn build_admittance(model: &NetworkModel) -> Result<CMatrix> {
    model.validate()?;
    let n = model.nodes.len();
    let mut y = CMatrix::zeros(n, n);
    for b in &model.branches {
        let (f, t) = (model.node_index(&b.from)?, model.node_index(&b.to)?);
        let yb = b.z.inv();
        y[(f, f)] += yb;
        y[(t, t)] += yb;
        y[(f, t)] -= yb;
        y[(t, f)] -= yb;
    }
    for s in &model.shunts {
        let k = model.node_index(&s.node)?;
        y[(k, k)] += s.y;
    }
    Ok(y)
}
