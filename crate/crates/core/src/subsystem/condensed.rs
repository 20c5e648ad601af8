use nalgebra::{DMatrix, DVector};

use super::LocalSubsystem;
use crate::error::{check_dim, Error, Result};
use crate::network::{build_routing_matrix, NetworkTopology};

/// Closed-loop coupling maps of one subsystem under its control law.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMaps {
    /// `Phi_x + Phi_u K_x`
    pub x: DMatrix<f64>,
    /// `Phi_v + Phi_u K_v`
    pub v: DMatrix<f64>,
    /// `Phi_u K_r` (zero columns for uncontrolled subsystems)
    pub r: DMatrix<f64>,
}

/// Global linear update of one coordinator round:
/// `v_in_hat = M_v v_in + M_x x + M_r r`, with `x` stacked over all
/// subsystems and `r` over controlled ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedModel {
    pub m_v: DMatrix<f64>,
    pub m_x: DMatrix<f64>,
    pub m_r: DMatrix<f64>,
    pub psi: Vec<PsiMaps>,
}

impl CondensedModel {
    pub fn apply(&self, v_in: &DVector<f64>, x: &DVector<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("condensed: profile", self.m_v.ncols(), v_in.len())?;
        check_dim("condensed: state", self.m_x.ncols(), x.len())?;
        check_dim("condensed: set-point", self.m_r.ncols(), r.len())?;
        Ok(&self.m_v * v_in + &self.m_x * x + &self.m_r * r)
    }
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(*b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

/// Builds `M_v`, `M_x`, `M_r` from the linear models and local control laws.
/// Fails if any subsystem is a black box or a controlled one lacks a control law.
pub fn build_condensed(topology: &NetworkTopology, subsystems: &[LocalSubsystem]) -> Result<CondensedModel> {
    check_dim("condensed: subsystem count", topology.n_subsystems(), subsystems.len())?;
    let mut psi = Vec::with_capacity(subsystems.len());
    for (s, sub) in subsystems.iter().enumerate() {
        let lin = sub.as_linear().ok_or(Error::NotLinear(s))?;
        let (phi_x, phi_u, phi_v) = lin.phi();
        let maps = if lin.is_controlled() {
            let g = lin.gains().ok_or_else(|| {
                Error::Model(format!("controlled subsystem {s} has no control law"))
            })?;
            PsiMaps {
                x: phi_x + phi_u * &g.k_x,
                v: phi_v + phi_u * &g.k_v,
                r: phi_u * &g.k_r,
            }
        } else {
            PsiMaps {
                x: phi_x.clone(),
                v: phi_v.clone(),
                r: DMatrix::zeros(phi_x.nrows(), 0),
            }
        };
        psi.push(maps);
    }
    // Incoming stacking is already the concatenation of v_s^in in subsystem
    // order, so the selector is the identity.
    let routing = build_routing_matrix(topology);
    let route = |blocks: Vec<&DMatrix<f64>>| routing.apply_rows(&block_diag(&blocks));
    Ok(CondensedModel {
        m_v: route(psi.iter().map(|p| &p.v).collect()),
        m_x: route(psi.iter().map(|p| &p.x).collect()),
        m_r: route(psi.iter().map(|p| &p.r).collect()),
        psi,
    })
}
