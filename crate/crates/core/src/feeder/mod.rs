//! Radial feeder model, linearized voltage sensitivities and AC evaluation.

mod io;
mod powerflow;

use std::collections::{HashSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_feeder, load_feeder_csv, load_feeder_json, parse_feeder_json, write_feeder_json};
pub use powerflow::{ac_power_flow, ac_power_flow_with, VoltageProfile};

/// A bus with its nominal load in per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub bus: usize,
    pub p_nom: f64,
    pub q_nom: f64,
}

/// A line between two buses with per-unit series impedance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "r_pu")]
    pub r: f64,
    #[serde(rename = "x_pu")]
    pub x: f64,
}

/// Radial single-phase feeder with bus 0 as the substation.
///
/// Construction validates the topology and orients every line away from the
/// substation, so `parent(n)` and `feeding_line(n)` are defined for `n >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub v0: f64,
    pub s_base: f64,
    pub v_base: f64,
    parent: Vec<usize>,
    feeding: Vec<usize>,
    order: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl FeederModel {
    pub fn new(mut buses: Vec<Bus>, lines: Vec<Line>, v0: f64, s_base: f64, v_base: f64) -> Result<Self> {
        if !(v0.is_finite() && v0 > 0.0) {
            return Err(Error::InvalidParameter(format!("substation voltage must be positive, got {v0}")));
        }
        buses.sort_by_key(|b| b.bus);
        let nb = buses.len();
        if nb < 2 {
            return Err(Error::Topology("a feeder needs at least two buses".into()));
        }
        for (i, b) in buses.iter().enumerate() {
            if b.bus != i {
                return Err(Error::Topology(format!(
                    "bus indices must be 0..{} without gaps or duplicates (found {})",
                    nb - 1,
                    b.bus
                )));
            }
            if !(b.p_nom.is_finite() && b.q_nom.is_finite()) {
                return Err(Error::InvalidParameter(format!("bus {i} has a non-finite nominal load")));
            }
        }
        if lines.len() != nb - 1 {
            return Err(Error::Topology(format!(
                "{} buses need exactly {} lines, found {}",
                nb,
                nb - 1,
                lines.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut adj = vec![Vec::new(); nb];
        for (k, l) in lines.iter().enumerate() {
            if l.from >= nb || l.to >= nb {
                return Err(Error::Topology(format!("line {}-{} references an unknown bus", l.from, l.to)));
            }
            if l.from == l.to {
                return Err(Error::Topology(format!("line {}-{} is a self loop", l.from, l.to)));
            }
            if !seen.insert((l.from.min(l.to), l.from.max(l.to))) {
                return Err(Error::Topology(format!("duplicate line {}-{}", l.from, l.to)));
            }
            if !(l.r.is_finite() && l.x.is_finite()) || l.r < 0.0 || l.x < 0.0 || l.r + l.x <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "line {}-{} needs r >= 0, x >= 0 and a positive impedance",
                    l.from, l.to
                )));
            }
            adj[l.from].push((l.to, k));
            adj[l.to].push((l.from, k));
        }

        let mut parent = vec![usize::MAX; nb];
        let mut feeding = vec![usize::MAX; nb];
        let mut children = vec![Vec::new(); nb];
        let mut order = Vec::with_capacity(nb);
        let mut queue = VecDeque::from([0usize]);
        parent[0] = 0;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, k) in &adj[u] {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    feeding[v] = k;
                    children[u].push(v);
                    queue.push_back(v);
                }
            }
        }
        if order.len() != nb {
            let missing: Vec<usize> = (0..nb).filter(|&b| parent[b] == usize::MAX).collect();
            return Err(Error::Topology(format!("buses {missing:?} are not connected to the substation")));
        }
        let lines = lines
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                if feeding[l.to] == k {
                    l
                } else {
                    Line { from: l.to, to: l.from, ..l }
                }
            })
            .collect();
        Ok(Self {
            buses,
            lines,
            v0,
            s_base,
            v_base,
            parent,
            feeding,
            order,
            children,
        })
    }

    /// Number of non-substation buses.
    pub fn n(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        (bus != 0).then(|| self.parent[bus])
    }

    /// The line whose receiving end is `bus`.
    pub fn feeding_line(&self, bus: usize) -> Option<&Line> {
        (bus != 0).then(|| &self.lines[self.feeding[bus]])
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// Buses in breadth-first order from the substation.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Buses on the path from `bus` up to (excluding) the substation.
    pub fn path_to_root(&self, bus: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut b = bus;
        while b != 0 {
            path.push(b);
            b = self.parent[b];
        }
        path
    }

    /// Whether `bus` lies in the subtree rooted at `root`.
    pub fn is_downstream(&self, bus: usize, root: usize) -> bool {
        root == 0 || self.path_to_root(bus).contains(&root)
    }

    /// Nominal active and reactive loads of buses 1..=N.
    pub fn nominal_loads(&self) -> (Vec<f64>, Vec<f64>) {
        self.buses[1..].iter().map(|b| (b.p_nom, b.q_nom)).unzip()
    }
}

/// The bundled 13-bus test feeder (12 lines, bus 0 is the substation).
pub fn bundled_13bus() -> FeederModel {
    parse_feeder_json(include_str!("../../fixtures/ieee13.json")).expect("bundled feeder is valid")
}

/// Linearized voltage model `v ≈ R p + X q + v0·1` about the flat profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivities {
    pub r: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub v0: f64,
}

impl Sensitivities {
    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// Linearized bus voltages for net injections `p`, `q` over buses 1..=N.
    pub fn voltages(&self, p: &[f64], q: &[f64]) -> Vec<f64> {
        let p = nalgebra::DVector::from_column_slice(p);
        let q = nalgebra::DVector::from_column_slice(q);
        (&self.r * p + &self.x * q).iter().map(|d| d + self.v0).collect()
    }
}

/// Common-path impedance sums divided by `v0`; row and column `i` refer to
/// bus `i + 1`.
pub fn build_sensitivities(f: &FeederModel) -> Sensitivities {
    let n = f.n();
    let mut r_cum = vec![0.0; n + 1];
    let mut x_cum = vec![0.0; n + 1];
    let mut depth = vec![0usize; n + 1];
    for &b in &f.order()[1..] {
        let p = f.parent[b];
        let l = f.feeding_line(b).unwrap();
        r_cum[b] = r_cum[p] + l.r;
        x_cum[b] = x_cum[p] + l.x;
        depth[b] = depth[p] + 1;
    }
    let lca = |mut a: usize, mut b: usize| {
        while depth[a] > depth[b] {
            a = f.parent[a];
        }
        while depth[b] > depth[a] {
            b = f.parent[b];
        }
        while a != b {
            a = f.parent[a];
            b = f.parent[b];
        }
        a
    };
    let mut r = DMatrix::zeros(n, n);
    let mut x = DMatrix::zeros(n, n);
    for i in 1..=n {
        for j in i..=n {
            let c = lca(i, j);
            r[(i - 1, j - 1)] = r_cum[c] / f.v0;
            x[(i - 1, j - 1)] = x_cum[c] / f.v0;
            r[(j - 1, i - 1)] = r[(i - 1, j - 1)];
            x[(j - 1, i - 1)] = x[(i - 1, j - 1)];
        }
    }
    Sensitivities { r, x, v0: f.v0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(i: usize) -> Bus {
        Bus { bus: i, p_nom: 0.0, q_nom: 0.0 }
    }

    fn line(from: usize, to: usize, r: f64, x: f64) -> Line {
        Line { from, to, r, x }
    }

    #[test]
    fn two_bus_sensitivities() {
        let f = FeederModel::new(vec![bus(0), bus(1)], vec![line(0, 1, 0.01, 0.02)], 1.0, 1.0, 1.0).unwrap();
        assert_eq!(f.n(), 1);
        let s = build_sensitivities(&f);
        assert_eq!(s.r[(0, 0)], 0.01);
        assert_eq!(s.x[(0, 0)], 0.02);
    }

    #[test]
    fn chain_path_sums() {
        let f = FeederModel::new(
            vec![bus(0), bus(1), bus(2)],
            vec![line(0, 1, 0.01, 0.02), line(1, 2, 0.01, 0.03)],
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        let s = build_sensitivities(&f);
        assert_eq!(s.r, DMatrix::from_row_slice(2, 2, &[0.01, 0.01, 0.01, 0.02]));
        assert_eq!(s.x, DMatrix::from_row_slice(2, 2, &[0.02, 0.02, 0.02, 0.05]));
    }

    #[test]
    fn reversed_lines_are_oriented() {
        let f = FeederModel::new(
            vec![bus(0), bus(1), bus(2)],
            vec![line(1, 0, 0.01, 0.0), line(2, 1, 0.02, 0.0)],
            1.0,
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(f.feeding_line(2).unwrap().from, 1);
        assert_eq!(f.parent(1), Some(0));
        assert!(f.is_downstream(2, 1));
        assert!(!f.is_downstream(1, 2));
    }

    #[test]
    fn topology_errors() {
        let buses = vec![bus(0), bus(1), bus(2)];
        let dup = FeederModel::new(buses.clone(), vec![line(0, 1, 0.01, 0.0), line(1, 0, 0.01, 0.0)], 1.0, 1.0, 1.0);
        assert!(matches!(dup, Err(Error::Topology(_))));
        let cyc = FeederModel::new(
            vec![bus(0), bus(1), bus(2), bus(3)],
            vec![line(1, 2, 0.01, 0.0), line(2, 3, 0.01, 0.0), line(3, 1, 0.01, 0.0)],
            1.0,
            1.0,
            1.0,
        );
        assert!(matches!(cyc, Err(Error::Topology(_))));
        let few = FeederModel::new(buses.clone(), vec![line(0, 1, 0.01, 0.0)], 1.0, 1.0, 1.0);
        assert!(matches!(few, Err(Error::Topology(_))));
        let neg = FeederModel::new(buses, vec![line(0, 1, -0.01, 0.0), line(1, 2, 0.01, 0.0)], 1.0, 1.0, 1.0);
        assert!(matches!(neg, Err(Error::InvalidParameter(_))));
    }
}
