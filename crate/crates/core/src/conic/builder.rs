//! Incremental construction of [`ConeProgram`]s from affine expressions.

use super::{Cone, ConeProgram, CsrMatrix};
use crate::error::Result;

/// `constant + Σ coef · x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(j: usize) -> Self {
        Self { constant: 0.0, terms: vec![(j, 1.0)] }
    }

    pub fn term(mut self, j: usize, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((j, coef));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.constant *= k;
        self.terms.iter_mut().for_each(|t| t.1 *= k);
        self
    }

    pub fn add(mut self, other: &AffineExpr) -> Self {
        self.constant += other.constant;
        self.terms.extend_from_slice(&other.terms);
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }
}

/// Accumulates variables, costs and cone constraints on affine expressions.
/// Consecutive zero or nonnegative rows share one cone block.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    c: Vec<f64>,
    names: Vec<String>,
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.c.push(cost);
        self.names.push(name.into());
        self.c.len() - 1
    }

    pub fn add_cost(&mut self, j: usize, cost: f64) {
        self.c[j] += cost;
    }

    fn row(&mut self, e: &AffineExpr) {
        let i = self.b.len();
        self.b.push(e.constant);
        self.triplets.extend(e.terms.iter().map(|&(j, v)| (i, j, -v)));
    }

    /// Each expression equals zero.
    pub fn zero(&mut self, exprs: &[AffineExpr]) {
        if exprs.is_empty() {
            return;
        }
        exprs.iter().for_each(|e| self.row(e));
        match self.cones.last_mut() {
            Some(Cone::Zero(len)) => *len += exprs.len(),
            _ => self.cones.push(Cone::Zero(exprs.len())),
        }
    }

    /// Each expression is nonnegative.
    pub fn nonneg(&mut self, exprs: &[AffineExpr]) {
        if exprs.is_empty() {
            return;
        }
        exprs.iter().for_each(|e| self.row(e));
        match self.cones.last_mut() {
            Some(Cone::Nonneg(len)) => *len += exprs.len(),
            _ => self.cones.push(Cone::Nonneg(exprs.len())),
        }
    }

    /// `‖tail‖₂ ≤ head`.
    pub fn soc(&mut self, head: &AffineExpr, tail: &[AffineExpr]) {
        self.row(head);
        tail.iter().for_each(|e| self.row(e));
        self.cones.push(Cone::Soc(1 + tail.len()));
    }

    /// `‖tail‖₂² ≤ u·v` with `u, v ≥ 0`, written as
    /// `‖(u - v, 2·tail)‖ ≤ u + v`.
    pub fn rotated(&mut self, u: &AffineExpr, v: &AffineExpr, tail: &[AffineExpr]) {
        let head = u.clone().add(v);
        let mut rest = Vec::with_capacity(tail.len() + 1);
        rest.push(u.clone().add(&v.clone().scaled(-1.0)));
        rest.extend(tail.iter().map(|e| e.clone().scaled(2.0)));
        self.soc(&head, &rest);
    }

    pub fn build(self) -> Result<ConeProgram> {
        let a = CsrMatrix::from_triplets(self.b.len(), self.c.len(), &self.triplets);
        let mut p = ConeProgram::new(self.c, a, self.b, self.cones)?;
        p.var_names = Some(self.names);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::super::solve;
    use super::*;

    #[test]
    fn rotated_cone_epigraph_of_square() {
        // minimize t s.t. (x - 3)² ≤ t, x ≤ 1  ->  x = 1, t = 4
        let mut pb = ProgramBuilder::new();
        let t = pb.var("t", 1.0);
        let x = pb.var("x", 0.0);
        pb.rotated(&AffineExpr::var(t), &AffineExpr::constant(1.0), &[AffineExpr::var(x).plus(-3.0)]);
        pb.nonneg(&[AffineExpr::constant(1.0).term(x, -1.0)]);
        let p = pb.build().unwrap();
        assert_eq!(p.var_names.as_ref().unwrap()[1], "x");
        let sol = solve(&p, 1e-9, 100).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.x[x] - 1.0).abs() < 1e-6 && (sol.x[t] - 4.0).abs() < 1e-6, "{:?}", sol.x);
    }

    #[test]
    fn adjacent_linear_rows_share_a_block() {
        let mut pb = ProgramBuilder::new();
        let x = pb.var("x", 1.0);
        pb.nonneg(&[AffineExpr::var(x)]);
        pb.nonneg(&[AffineExpr::var(x).plus(1.0)]);
        pb.zero(&[AffineExpr::var(x)]);
        let p = pb.build().unwrap();
        assert_eq!(p.cones, vec![Cone::Nonneg(2), Cone::Zero(1)]);
    }
}
