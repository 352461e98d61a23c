//! Load/solar profiles and the training scenarios derived from them.

mod profiles;

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Sensitivities};

pub use profiles::{solar_buses, synthesize_profiles, GeneratorConfig, ProfileSet};
pub(crate) use profiles::q_limit;

/// Smallest standard deviation used when normalizing an input entry.
pub const STD_FLOOR: f64 = 1e-6;

/// Content of each inverter's input vector: the local triple
/// `[q̄, p_c - p_g, q_c]` and/or active flows on remote lines, each line
/// named by its receiving bus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputLayout {
    pub local: bool,
    pub remote_lines: Vec<usize>,
}

impl Default for InputLayout {
    fn default() -> Self {
        Self {
            local: true,
            remote_lines: Vec::new(),
        }
    }
}

impl InputLayout {
    pub fn len(&self) -> usize {
        3 * self.local as usize + self.remote_lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Human-readable name of each input entry.
    pub fn entry_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.local {
            names.extend(["q_bar", "p_net_load", "q_c"].map(String::from));
        }
        names.extend(self.remote_lines.iter().map(|l| format!("flow_{l}")));
        names
    }

    pub fn validate(&self, f: &FeederModel) -> Result<()> {
        if let Some(&l) = self.remote_lines.iter().find(|&&l| l == 0 || l > f.n()) {
            return Err(Error::InvalidParameter(format!(
                "remote input references line {l}, but lines are named by receiving bus 1..={}",
                f.n()
            )));
        }
        if self.is_empty() {
            return Err(Error::InvalidParameter("input layout has no entries".into()));
        }
        Ok(())
    }

    /// Raw (unnormalized) inputs of every bus at minute row `t`.
    pub fn raw_inputs(&self, f: &FeederModel, profiles: &ProfileSet, t: usize) -> Vec<Vec<f64>> {
        let q_bar = profiles.q_bar(t);
        let flows: Vec<f64> = self.remote_lines.iter().map(|&l| line_flow(f, profiles, t, l)).collect();
        (0..profiles.n())
            .map(|b| {
                let mut z = Vec::with_capacity(self.len());
                if self.local {
                    z.extend([q_bar[b], profiles.p_c[t][b] - profiles.p_g[t][b], profiles.q_c[t][b]]);
                }
                z.extend(&flows);
                z
            })
            .collect()
    }
}

/// Lossless active flow into `bus`: the net load of its downstream subtree.
pub fn line_flow(f: &FeederModel, profiles: &ProfileSet, t: usize, bus: usize) -> f64 {
    (1..=f.n())
        .filter(|&b| f.is_downstream(b, bus))
        .map(|b| profiles.p_c[t][b - 1] - profiles.p_g[t][b - 1])
        .sum()
}

/// Per-entry centering and scaling of an input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(len: usize) -> Self {
        Self {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    /// Window mean and population standard deviation (floored at [`STD_FLOOR`]).
    pub fn fit(samples: &[Vec<f64>]) -> Self {
        let len = samples.first().map_or(0, Vec::len);
        let s = samples.len() as f64;
        let mut mean = vec![0.0; len];
        for z in samples {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v / s;
            }
        }
        let mut std = vec![0.0; len];
        for z in samples {
            for ((sd, v), m) in std.iter_mut().zip(z).zip(&mean) {
                *sd += (v - m).powi(2) / s;
            }
        }
        let std = std.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Prepends a constant 1 so the intercept can be folded into the kernel
/// expansion.
pub fn augment_input(z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len() + 1);
    out.push(1.0);
    out.extend_from_slice(z);
    out
}

/// Training scenarios; matrices indexed `[s][bus - 1]`, inputs
/// `[bus - 1][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub y: Vec<Vec<f64>>,
    pub q_bar: Vec<Vec<f64>>,
    /// Inputs per bus and scenario, normalized with `norm_stats` when enabled.
    pub z: Vec<Vec<Vec<f64>>>,
    pub norm_stats: Vec<NormStats>,
    pub layout: InputLayout,
    pub s_bar: Vec<f64>,
    /// Profile rows the scenarios came from.
    pub window: Range<usize>,
    pub normalized: bool,
}

impl ScenarioSet {
    pub fn s(&self) -> usize {
        self.y.len()
    }

    pub fn n(&self) -> usize {
        self.s_bar.len()
    }

    /// Buses with a nonzero rating, i.e. those that carry an inverter.
    pub fn inverters(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s_bar[i] > 0.0).collect()
    }

    /// Scenarios at the given positions, keeping the original statistics.
    pub fn subset(&self, idx: &[usize]) -> ScenarioSet {
        ScenarioSet {
            y: idx.iter().map(|&s| self.y[s].clone()).collect(),
            q_bar: idx.iter().map(|&s| self.q_bar[s].clone()).collect(),
            z: self.z.iter().map(|zn| idx.iter().map(|&s| zn[s].clone()).collect()).collect(),
            norm_stats: self.norm_stats.clone(),
            layout: self.layout.clone(),
            s_bar: self.s_bar.clone(),
            window: self.window.clone(),
            normalized: self.normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, n) = (self.s(), self.n());
        if s == 0 {
            return Err(Error::InvalidParameter("scenario set is empty".into()));
        }
        let bad = self.q_bar.len() != s
            || self.y.iter().chain(&self.q_bar).any(|r| r.len() != n)
            || self.z.len() != n
            || self.z.iter().any(|zn| zn.len() != s)
            || self.norm_stats.len() != n;
        if bad {
            return Err(Error::Dimension(format!("scenario set must hold {s} scenarios over {n} buses")));
        }
        Ok(())
    }
}

/// Builds scenarios from the profile rows in `window`.
pub fn build_scenarios(
    f: &FeederModel,
    profiles: &ProfileSet,
    window: Range<usize>,
    sens: &Sensitivities,
    layout: &InputLayout,
    normalize: bool,
) -> Result<ScenarioSet> {
    if window.is_empty() {
        return Err(Error::InvalidParameter("empty scenario window".into()));
    }
    if window.end > profiles.len() {
        return Err(Error::InvalidParameter(format!(
            "window {window:?} exceeds the {}-minute horizon",
            profiles.len()
        )));
    }
    if sens.n() != profiles.n() || f.n() != profiles.n() {
        return Err(Error::Dimension("feeder, sensitivities and profiles disagree on N".into()));
    }
    layout.validate(f)?;
    let n = profiles.n();
    let mut y = Vec::with_capacity(window.len());
    let mut q_bar = Vec::with_capacity(window.len());
    let mut raw: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(window.len()); n];
    for t in window.clone() {
        let p = DVector::from_vec(profiles.net_p(t));
        let qc = DVector::from_column_slice(&profiles.q_c[t]);
        y.push((&sens.r * p - &sens.x * qc).iter().copied().collect());
        q_bar.push(profiles.q_bar(t));
        for (b, z) in layout.raw_inputs(f, profiles, t).into_iter().enumerate() {
            raw[b].push(z);
        }
    }
    let norm_stats: Vec<NormStats> = if normalize {
        raw.iter().map(|zn| NormStats::fit(zn)).collect()
    } else {
        vec![NormStats::identity(layout.len()); n]
    };
    let z = if normalize {
        raw.iter()
            .zip(&norm_stats)
            .map(|(zn, st)| zn.iter().map(|v| st.apply(v)).collect())
            .collect()
    } else {
        raw
    };
    Ok(ScenarioSet {
        y,
        q_bar,
        z,
        norm_stats,
        layout: layout.clone(),
        s_bar: profiles.s_bar.clone(),
        window,
        normalized: normalize,
    })
}
