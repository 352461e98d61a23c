//! Second-order cone programs in the standard form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A x + s = b,   s ∈ K
//! ```
//!
//! where `K` is a product of zero cones (equalities), nonnegative orthants and
//! second-order cones, listed in row order. The dual is
//! `maximize -bᵀz  subject to  Aᵀz + c = 0, z ∈ K*`.
//!
//! [`solve`] runs a homogeneous self-dual primal-dual interior-point method with
//! Nesterov–Todd scaling and Mehrotra predictor–corrector steps (see
//! [`ipm`]). Rows and columns are Ruiz-equilibrated before iterating.

mod builder;
mod cone;
mod equilibrate;
pub mod io;
mod ipm;
mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builder::{AffineExpr, ProgramBuilder};
pub use cone::{project_soc, Cone};
pub use sparse::CsrMatrix;

/// Weight of the minimum-norm terms that make otherwise non-unique
/// minimizers well defined.
pub const TIE_BREAK: f64 = 1e-9;

/// A conic program in the standard form described in the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProgram {
    pub c: Vec<f64>,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
    pub var_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleDetected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSolution {
    pub x: Vec<f64>,
    /// Dual variable, one entry per row.
    pub z: Vec<f64>,
    /// Primal slack `b - A x`, one entry per row.
    pub s: Vec<f64>,
    pub status: SolveStatus,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl ConeSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Converts a non-optimal solution into an error carrying its residuals.
    pub fn into_result(self) -> Result<ConeSolution> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                iterations: self.iterations,
                primal_res: self.primal_res,
                dual_res: self.dual_res,
                gap: self.gap,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Stopping tolerance applied to all three of [`residuals`].
    pub tol: f64,
    pub max_iters: usize,
    pub equilibrate: bool,
    /// Tolerance on normalized infeasibility certificates.
    pub infeas_tol: f64,
    /// A run that ends on the iteration cap or a stall still counts as
    /// optimal when all residuals are at or below this (0 disables).
    pub accept_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 200,
            equilibrate: true,
            infeas_tol: 1e-9,
            accept_tol: 0.0,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Aims for `tol` but settles for `accept` if the run stops short.
    pub fn with_accept(tol: f64, accept: f64) -> Self {
        Self {
            tol,
            accept_tol: accept,
            ..Self::default()
        }
    }
}

impl ConeProgram {
    pub fn new(c: Vec<f64>, a: CsrMatrix, b: Vec<f64>, cones: Vec<Cone>) -> Result<Self> {
        let p = Self {
            c,
            a,
            b,
            cones,
            var_names: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.ncols() != self.c.len() {
            return Err(Error::Dimension(format!(
                "A has {} columns but c has {} entries",
                self.a.ncols(),
                self.c.len()
            )));
        }
        if self.a.nrows() != self.b.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but b has {} entries",
                self.a.nrows(),
                self.b.len()
            )));
        }
        let total: usize = self.cones.iter().map(Cone::len).sum();
        if total != self.b.len() {
            return Err(Error::Dimension(format!(
                "cone lengths sum to {total}, expected {}",
                self.b.len()
            )));
        }
        if self.cones.iter().any(|k| matches!(k, Cone::Soc(0))) {
            return Err(Error::InvalidParameter("second-order cone of length 0".into()));
        }
        if let Some(names) = &self.var_names {
            if names.len() != self.c.len() {
                return Err(Error::Dimension("var_names length differs from c".into()));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        cone::dot(&self.c, x)
    }

    /// Row offsets of each cone block.
    pub(crate) fn blocks(&self) -> Vec<(Cone, usize)> {
        let mut off = 0;
        self.cones
            .iter()
            .map(|&k| {
                let b = (k, off);
                off += k.len();
                b
            })
            .collect()
    }
}

/// KKT residuals of a primal/dual pair:
///
/// * `primal_res = dist(b - A x, K) / (1 + ||b||)`
/// * `dual_res = (||Aᵀz + c|| + dist(z, K*)) / (1 + ||c||)`
/// * `gap = |cᵀx + bᵀz| / (1 + |cᵀx| + |bᵀz|)`
pub fn residuals(p: &ConeProgram, x: &[f64], z: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != p.num_vars() || z.len() != p.num_rows() {
        return Err(Error::Dimension(format!(
            "expected x of length {} and z of length {}, got {} and {}",
            p.num_vars(),
            p.num_rows(),
            x.len(),
            z.len()
        )));
    }
    let ax = p.a.mul_vec(x);
    let mut slack: Vec<f64> = p.b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut zproj = z.to_vec();
    for (k, off) in p.blocks() {
        let r = off..off + k.len();
        cone::project_onto(k, &mut slack[r.clone()]);
        cone::project_onto_dual(k, &mut zproj[r]);
    }
    let primal_dist = ax
        .iter()
        .zip(&p.b)
        .zip(&slack)
        .map(|((a, b), s)| (b - a - s).powi(2))
        .sum::<f64>()
        .sqrt();
    let atz = p.a.tr_mul_vec(z);
    let stationarity = atz
        .iter()
        .zip(&p.c)
        .map(|(a, c)| (a + c).powi(2))
        .sum::<f64>()
        .sqrt();
    let dual_dist = z
        .iter()
        .zip(&zproj)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let pobj = cone::dot(&p.c, x);
    let dobj = cone::dot(&p.b, z);
    let primal_res = primal_dist / (1.0 + cone::norm(&p.b));
    let dual_res = (stationarity + dual_dist) / (1.0 + cone::norm(&p.c));
    let gap = (pobj + dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    Ok((primal_res, dual_res, gap))
}

/// Solves with default settings and the given tolerance and iteration cap.
pub fn solve(p: &ConeProgram, tol: f64, max_iters: usize) -> Result<ConeSolution> {
    solve_with(
        p,
        &SolverSettings {
            tol,
            max_iters,
            ..SolverSettings::default()
        },
    )
}

pub fn solve_with(p: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution> {
    p.validate()?;
    let mut sol = ipm::solve(p, settings)?;
    if sol.status == SolveStatus::MaxIters && sol.primal_res.max(sol.dual_res).max(sol.gap) <= settings.accept_tol {
        sol.status = SolveStatus::Optimal;
    }
    Ok(sol)
}

#[cfg(test)]
mod tests;
