//! Learned control rules and their JSON download format.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Objective;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::scenario::{augment_input, InputLayout, NormStats};

/// Rule of one inverter: `q(z) = Σ_s K(z, z_s) a_s + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterRule {
    /// Bus the inverter sits at (1-based).
    pub bus: usize,
    pub kernel: KernelSpec,
    pub a: Vec<f64>,
    /// Absent when the intercept is folded into augmented inputs.
    pub b: Option<f64>,
    /// Kernel inputs of the training scenarios, already normalized (and
    /// augmented when `b` is absent).
    pub z_train: Vec<Vec<f64>>,
    pub norm_stats: NormStats,
}

impl InverterRule {
    /// Maps a raw input vector to the kernel's input space.
    pub fn prepare(&self, z_raw: &[f64]) -> Result<Vec<f64>> {
        if z_raw.len() != self.norm_stats.mean.len() {
            return Err(Error::Dimension(format!(
                "inverter at bus {} expects {} inputs, got {}",
                self.bus,
                self.norm_stats.mean.len(),
                z_raw.len()
            )));
        }
        let z = self.norm_stats.apply(z_raw);
        Ok(if self.b.is_none() { augment_input(&z) } else { z })
    }

    /// Unclamped output for an input already in kernel space. The Gram
    /// jitter acts as a nugget: it is added only when `z` coincides with a
    /// stored training input, so training points reproduce `K a + b`.
    pub fn output_prepared(&self, z: &[f64]) -> f64 {
        let mut q = self.b.unwrap_or(0.0);
        for (zs, &a) in self.z_train.iter().zip(&self.a) {
            if a != 0.0 {
                let mut k = self.kernel.k(z, zs);
                if z == zs.as_slice() {
                    k += self.kernel.jitter;
                }
                q += k * a;
            }
        }
        q
    }

    /// Unclamped output for a raw input vector.
    pub fn output(&self, z_raw: &[f64]) -> Result<f64> {
        Ok(self.output_prepared(&self.prepare(z_raw)?))
    }

    pub fn nnz(&self) -> usize {
        self.a.iter().filter(|&&a| a != 0.0).count()
    }

    /// Values sent to the inverter: nonzero coefficients plus the intercept.
    pub fn comm_count(&self) -> usize {
        self.nnz() + self.b.is_some() as usize
    }
}

/// Training context recorded with a rule set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleMeta {
    pub objective: Objective,
    pub mu: f64,
    pub n_buses: usize,
    pub scenarios: usize,
    pub window: Range<usize>,
    pub layout: InputLayout,
    pub train_objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub iterations: usize,
    pub gram_factor: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<InverterRule>,
    pub meta: RuleMeta,
}

impl RuleSet {
    /// Copy with every coefficient of magnitude at most `zero_tol` set to zero.
    pub fn pruned(&self, zero_tol: f64) -> RuleSet {
        let mut out = self.clone();
        for r in &mut out.rules {
            for a in &mut r.a {
                if a.abs() <= zero_tol {
                    *a = 0.0;
                }
            }
        }
        out
    }

    pub fn rule_for_bus(&self, bus: usize) -> Option<&InverterRule> {
        self.rules.iter().find(|r| r.bus == bus)
    }

    pub fn comm_count(&self) -> usize {
        self.rules.iter().map(InverterRule::comm_count).sum()
    }

    pub fn to_json(&self) -> String {
        let doc = RuleSetDoc {
            meta: self.meta.clone(),
            inverters: self
                .rules
                .iter()
                .map(|r| RuleDoc {
                    bus: r.bus,
                    kernel: r.kernel,
                    s: r.a.len(),
                    a: r.a.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, &v)| (i, v)).collect(),
                    b: r.b,
                    z_train: r
                        .z_train
                        .iter()
                        .enumerate()
                        .map(|(scenario, z)| ScenarioInput { scenario, z: z.clone() })
                        .collect(),
                    norm_stats: r.norm_stats.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("rule set serializes")
    }

    pub fn from_json(text: &str) -> Result<RuleSet> {
        let doc: RuleSetDoc = serde_json::from_str(text).map_err(|e| Error::Parse(format!("rule set: {e}")))?;
        let rules = doc
            .inverters
            .into_iter()
            .map(|d| {
                let mut a = vec![0.0; d.s];
                for (i, v) in d.a {
                    *a.get_mut(i)
                        .ok_or_else(|| Error::Parse(format!("bus {}: coefficient index {i} >= {}", d.bus, d.s)))? = v;
                }
                let mut z_train = vec![Vec::new(); d.s];
                for si in d.z_train {
                    *z_train.get_mut(si.scenario).ok_or_else(|| {
                        Error::Parse(format!("bus {}: scenario {} out of range", d.bus, si.scenario))
                    })? = si.z;
                }
                Ok(InverterRule {
                    bus: d.bus,
                    kernel: d.kernel,
                    a,
                    b: d.b,
                    z_train,
                    norm_stats: d.norm_stats,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RuleSet { rules, meta: doc.meta })
    }
}

#[derive(Serialize, Deserialize)]
struct RuleSetDoc {
    meta: RuleMeta,
    inverters: Vec<RuleDoc>,
}

#[derive(Serialize, Deserialize)]
struct RuleDoc {
    bus: usize,
    kernel: KernelSpec,
    /// Number of training scenarios.
    s: usize,
    /// Nonzero coefficients as `[scenario, value]` pairs.
    a: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    b: Option<f64>,
    z_train: Vec<ScenarioInput>,
    norm_stats: NormStats,
}

#[derive(Serialize, Deserialize)]
struct ScenarioInput {
    scenario: usize,
    z: Vec<f64>,
}
