//! Backward/forward sweep power flow for radial feeders.

use nalgebra::Complex;

use super::FeederModel;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile {
    /// Voltage magnitudes of buses 1..=N.
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest complex voltage change per iteration.
    pub changes: Vec<f64>,
}

impl VoltageProfile {
    /// `v - v0` per bus.
    pub fn deviations(&self, v0: f64) -> Vec<f64> {
        self.v.iter().map(|v| v - v0).collect()
    }
}

/// Solves the exact branch-flow equations for net injections `p`, `q`
/// (generation positive, loads constant-power) with the default tolerance.
pub fn ac_power_flow(f: &FeederModel, p: &[f64], q: &[f64]) -> Result<VoltageProfile> {
    ac_power_flow_with(f, p, q, DEFAULT_TOL, DEFAULT_MAX_ITERS)
}

/// Non-convergence is reported through `converged = false` with the last
/// iterate, not as an error.
pub fn ac_power_flow_with(f: &FeederModel, p: &[f64], q: &[f64], tol: f64, max_iters: usize) -> Result<VoltageProfile> {
    let n = f.n();
    if p.len() != n || q.len() != n {
        return Err(Error::Dimension(format!(
            "injections must have length {n}, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let nb = n + 1;
    let v0 = Complex::new(f.v0, 0.0);
    let mut v = vec![v0; nb];
    let mut current = vec![Complex::new(0.0, 0.0); nb];
    let mut changes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        // backward: branch current into each bus = its load current plus its subtree
        for &b in f.order().iter().skip(1).rev() {
            let s = Complex::new(p[b - 1], q[b - 1]);
            let mut i = -(s / v[b]).conj();
            for &c in f.children(b) {
                i += current[c];
            }
            current[b] = i;
        }
        let mut change = 0.0f64;
        for &b in f.order().iter().skip(1) {
            let l = f.feeding_line(b).unwrap();
            let z = Complex::new(l.r, l.x);
            let next = v[f.parent[b]] - z * current[b];
            change = change.max((next - v[b]).norm());
            v[b] = next;
        }
        changes.push(change);
        if !change.is_finite() {
            break;
        }
        if change <= tol {
            converged = true;
            break;
        }
    }
    Ok(VoltageProfile {
        v: v[1..].iter().map(|c| c.norm()).collect(),
        converged,
        iterations,
        changes,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build_sensitivities, Bus, FeederModel, Line};
    use super::*;

    fn two_bus() -> FeederModel {
        FeederModel::new(
            vec![
                Bus { bus: 0, p_nom: 0.0, q_nom: 0.0 },
                Bus { bus: 1, p_nom: 0.0, q_nom: 0.0 },
            ],
            vec![Line { from: 0, to: 1, r: 0.01, x: 0.02 }],
            1.0,
            1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let f = two_bus();
        let vp = ac_power_flow(&f, &[0.0], &[0.0]).unwrap();
        assert_eq!(vp.v, vec![1.0]);
        assert!(vp.converged);
        assert_eq!(vp.iterations, 1);
    }

    #[test]
    fn light_load_matches_linear_model() {
        let f = two_bus();
        let s = build_sensitivities(&f);
        let vp = ac_power_flow(&f, &[-0.01], &[0.0]).unwrap();
        assert!(vp.converged);
        assert!(vp.v[0] < 1.0);
        let ldf = s.voltages(&[-0.01], &[0.0]);
        assert!((vp.v[0] - ldf[0]).abs() <= 1e-4);
    }

    #[test]
    fn branch_flow_equations_hold() {
        // v1² = v0² - 2(rP + xQ) + |z|²(P² + Q²)/v0² with P, Q the sending-end flows
        let f = two_bus();
        let (p, q) = (-0.3, -0.1);
        let vp = ac_power_flow(&f, &[p], &[q]).unwrap();
        let v1 = vp.v[0];
        let (r, x) = (0.01, 0.02);
        let loss = (p * p + q * q) / (v1 * v1);
        let (pf, qf) = (-p + r * loss, -q + x * loss);
        let rhs = 1.0 - 2.0 * (r * pf + x * qf) + (r * r + x * x) * (pf * pf + qf * qf);
        assert!((v1 * v1 - rhs).abs() < 1e-9, "{} vs {rhs}", v1 * v1);
    }

    #[test]
    fn reports_nonconvergence() {
        let f = two_bus();
        let vp = ac_power_flow(&f, &[-40.0], &[-40.0]).unwrap();
        assert!(!vp.converged);
        assert!(vp.iterations <= DEFAULT_MAX_ITERS);
    }
}
