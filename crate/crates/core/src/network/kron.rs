use super::{build_admittance, CMatrix, CVector, NetworkModel};
use crate::error::{Error, Result};
use crate::phasor::Phasor;

/// Relative pivot floor below which a block is treated as singular.
const PIVOT_FLOOR: f64 = 1e-12;

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// LU solve that rejects numerically singular matrices.
/// Pivots are compared against `scale`, the magnitude of the matrix the
/// block was taken from.
pub(crate) fn solve_checked(a: CMatrix, b: &CMatrix, scale: f64) -> Option<CMatrix> {
    if !(scale > 0.0) {
        return None;
    }
    let lu = a.lu();
    let u = lu.u();
    if (0..u.nrows()).any(|i| u[(i, i)].norm() <= PIVOT_FLOOR * scale) {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.re.is_finite() && v.im.is_finite()).then_some(x)
}

/// `Y_rr − Y_re·Y_ee⁻¹·Y_er` over the `retained` indices, in that order.
pub fn kron_reduce(y: &CMatrix, retained: &[usize]) -> Result<CMatrix> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::Domain("admittance matrix must be square".into()));
    }
    if let Some(&bad) = retained.iter().find(|&&r| r >= n) {
        return Err(Error::Domain(format!("retained index {bad} out of range")));
    }
    let eliminated: Vec<usize> = (0..n).filter(|i| !retained.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| CMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])]);
    let y_rr = pick(retained, retained);
    if eliminated.is_empty() {
        return Ok(y_rr);
    }
    let y_re = pick(retained, &eliminated);
    let y_er = pick(&eliminated, retained);
    let y_ee = pick(&eliminated, &eliminated);
    let singular = || Error::SingularReduction {
        nodes: eliminated.iter().map(|i| i.to_string()).collect(),
    };
    let x = solve_checked(y_ee, &y_er, max_abs(y)).ok_or_else(singular)?;
    Ok(y_rr - y_re * x)
}

/// `(I + Y_c·diag(z_v))⁻¹·Y_c`, one virtual impedance per converter.
pub fn augment_with_virtual_impedances(y_c: &CMatrix, z_v: &[Phasor]) -> Result<CMatrix> {
    let n = y_c.nrows();
    if z_v.len() != n || y_c.ncols() != n {
        return Err(Error::Domain("virtual impedance count must match matrix size".into()));
    }
    let mut lhs = CMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] += y_c[(i, j)] * z_v[j];
        }
    }
    solve_checked(lhs.clone(), y_c, max_abs(&lhs)).ok_or(Error::SingularAugmentation)
}

/// `(I + Y_c·z_v)⁻¹·Y_c` for a uniform virtual impedance.
pub fn augment_with_virtual_impedance(y_c: &CMatrix, z_v: Phasor) -> Result<CMatrix> {
    augment_with_virtual_impedances(y_c, &vec![z_v; y_c.nrows()])
}

/// Network reduced onto converter nodes, followed by the grid node when
/// one exists.
#[derive(Debug, Clone, PartialEq)]
pub struct KronReducedNetwork {
    /// Reduced matrix over `[converters.., grid]` (or converters only).
    pub full: CMatrix,
    pub n_converters: usize,
    pub is_islanded: bool,
    /// Node ids in matrix order.
    pub retained: Vec<String>,
}

impl KronReducedNetwork {
    pub fn from_model(model: &NetworkModel, converter_nodes: &[&str], grid_node: Option<&str>) -> Result<Self> {
        let y = build_admittance(model)?;
        let mut idx = Vec::with_capacity(converter_nodes.len() + 1);
        let mut retained = Vec::with_capacity(converter_nodes.len() + 1);
        for id in converter_nodes.iter().copied().chain(grid_node) {
            let k = model.node_index(id)?;
            if idx.contains(&k) {
                return Err(Error::Model(format!("node '{id}' retained twice")));
            }
            idx.push(k);
            retained.push(id.to_string());
        }
        let full = kron_reduce(&y, &idx).map_err(|e| match e {
            Error::SingularReduction { nodes } => Error::SingularReduction {
                nodes: nodes
                    .iter()
                    .filter_map(|s| s.parse::<usize>().ok())
                    .map(|i| model.nodes[i].id.clone())
                    .collect(),
            },
            other => other,
        })?;
        Ok(Self {
            full,
            n_converters: converter_nodes.len(),
            is_islanded: grid_node.is_none(),
            retained,
        })
    }

    /// Converter block `Y_c` (grid node grounded).
    pub fn y_c(&self) -> CMatrix {
        let n = self.n_converters;
        self.full.view((0, 0), (n, n)).into_owned()
    }

    /// Grid coupling `y` with the block convention `[[Y_c, −y], [−yᵀ, y_g]]`.
    pub fn y_link(&self) -> Option<CVector> {
        if self.is_islanded {
            return None;
        }
        let n = self.n_converters;
        Some(CVector::from_fn(n, |i, _| -self.full[(i, n)]))
    }

    pub fn y_g(&self) -> Option<Phasor> {
        (!self.is_islanded).then(|| self.full[(self.n_converters, self.n_converters)])
    }

    /// Reassembles the block form from its parts.
    pub fn assemble(y_c: &CMatrix, y_link: &CVector, y_g: Phasor) -> CMatrix {
        let n = y_c.nrows();
        CMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
            (true, true) => y_c[(i, j)],
            (true, false) => -y_link[i],
            (false, true) => -y_link[j],
            (false, false) => y_g,
        })
    }
}
