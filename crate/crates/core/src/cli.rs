//! Command-line front end: one TOML experiment file drives profile
//! generation, single-window training and rolling simulations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::write_dispatch_csv;
use crate::error::{Error, Result};
use crate::feeder::{build_sensitivities, bundled_13bus, load_feeder, FeederModel};
use crate::kernel::KernelSpec;
use crate::scenario::{build_scenarios, synthesize_profiles, GeneratorConfig, InputLayout, ProfileSet};
use crate::sim::{run_rolling_logged, sweep_tradeoff, write_tradeoff_csv, SimConfig, SweepParam};
use crate::trainer::{cross_validate, sparsity_report, train_detailed, Objective, TrainConfig};

/// Environment variable that replaces the configured output directory.
pub const OUT_ENV: &str = "VOLTKERNEL_OUT";

#[derive(Debug, Parser)]
#[command(name = "voltkernel", version, about = "Train and evaluate kernel-based inverter reactive power rules")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize load and solar profiles.
    Generate(CommonArgs),
    /// Train rules on one window of scenarios.
    Train(CommonArgs),
    /// Run the rolling-horizon simulation.
    Simulate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Overwrite outputs that already exist.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed_override: Option<u64>,
}

/// Experiment file. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Feeder file or directory; the bundled 13-bus feeder when absent.
    pub feeder: Option<PathBuf>,
    pub profiles: Option<ProfileSource>,
    pub generator: Option<GeneratorConfig>,
    pub train: TrainSection,
    pub simulate: SimConfig,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            feeder: None,
            profiles: None,
            generator: None,
            train: TrainSection::default(),
            simulate: SimConfig::default(),
            out: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSource {
    pub path: PathBuf,
    /// Inverter rating relative to each bus's peak generation.
    #[serde(default = "default_oversize")]
    pub oversize: f64,
}

fn default_oversize() -> f64 {
    1.1
}

/// The `[train]` block: one window plus a [`TrainConfig`] whose `mu` may be
/// left to cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub window_start: usize,
    pub window_len: usize,
    pub local_inputs: bool,
    pub remote_inputs: Vec<usize>,
    pub normalize: bool,
    pub objective: Objective,
    pub mu: Option<f64>,
    pub mu_grid: Vec<f64>,
    pub kernel: KernelSpec,
    pub bus_kernels: BTreeMap<String, KernelSpec>,
    pub drop_intercept: bool,
    pub cv_folds: usize,
    pub tol: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
    pub zero_tol: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            window_start: 0,
            window_len: 30,
            local_inputs: true,
            remote_inputs: Vec::new(),
            normalize: true,
            objective: t.objective,
            mu: None,
            mu_grid: vec![1e-4, 1e-3, 1e-2],
            kernel: t.kernel,
            bus_kernels: BTreeMap::new(),
            drop_intercept: t.drop_intercept,
            cv_folds: t.cv_folds,
            tol: t.tol,
            solver_tol: t.solver_tol,
            max_iters: t.max_iters,
            zero_tol: t.zero_tol,
        }
    }
}

impl TrainSection {
    pub fn config(&self, mu: f64) -> Result<TrainConfig> {
        let bus_kernels = self
            .bus_kernels
            .iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|b| (b, *v))
                    .map_err(|_| Error::Config(format!("bus_kernels key {k:?} is not a bus number")))
            })
            .collect::<Result<_>>()?;
        let cfg = TrainConfig {
            objective: self.objective,
            mu,
            kernel: self.kernel,
            bus_kernels,
            drop_intercept: self.drop_intercept,
            cv_folds: self.cv_folds,
            tol: self.tol,
            solver_tol: self.solver_tol,
            max_iters: self.max_iters,
            zero_tol: self.zero_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn layout(&self) -> InputLayout {
        InputLayout {
            local: self.local_inputs,
            remote_lines: self.remote_inputs.clone(),
        }
    }
}

impl ExperimentConfig {
    /// Reads and checks a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [cfg.feeder.as_mut(), cfg.profiles.as_mut().map(|s| &mut s.path), cfg.out.as_mut()]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.profiles, &self.generator) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [profiles] or [generator], not both".into())),
            (None, None) => return Err(Error::Config("one of [profiles] or [generator] is required".into())),
            _ => {}
        }
        if let Some(p) = &self.feeder {
            if !p.exists() {
                return Err(Error::Config(format!("feeder path {} does not exist", p.display())));
            }
        }
        if let Some(s) = &self.profiles {
            if !s.path.exists() {
                return Err(Error::Config(format!("profiles path {} does not exist", s.path.display())));
            }
        }
        Ok(())
    }

    pub fn feeder(&self) -> Result<FeederModel> {
        match &self.feeder {
            Some(p) => load_feeder(p),
            None => Ok(bundled_13bus()),
        }
    }

    pub fn generator(&self) -> Option<GeneratorConfig> {
        self.generator.clone().map(|g| GeneratorConfig { seed: self.seed, ..g })
    }

    pub fn profiles(&self, f: &FeederModel) -> Result<ProfileSet> {
        let p = match (&self.profiles, self.generator()) {
            (Some(s), _) => ProfileSet::read_csv(&s.path, s.oversize)?,
            (None, Some(g)) => synthesize_profiles(f, &g)?,
            (None, None) => return Err(Error::Config("no profile source".into())),
        };
        if p.n() != f.n() {
            return Err(Error::Dimension(format!(
                "profiles cover {} buses, feeder has {}",
                p.n(),
                f.n()
            )));
        }
        Ok(p)
    }
}

/// Output directory that refuses to overwrite unless forced.
struct OutDir {
    dir: PathBuf,
    force: bool,
}

impl OutDir {
    /// Checks every target before anything is written.
    fn prepare(&self, names: &[&str]) -> Result<()> {
        if !self.force {
            if let Some(n) = names.iter().find(|n| self.dir.join(n).exists()) {
                return Err(Error::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    self.dir.join(n).display()
                )));
            }
        }
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

pub const PROFILES_FILE: &str = "profiles.csv";
pub const RULES_FILE: &str = "rules.json";
pub const REPORT_FILE: &str = "report.json";
pub const BUS_FILE: &str = "bus_stats.csv";
pub const WINDOW_FILE: &str = "window_stats.csv";
pub const DISPATCH_FILE: &str = "dispatch.csv";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

/// Runs a parsed command and returns the JSON summary printed on success.
pub fn run(cli: Cli) -> Result<Value> {
    let (name, args) = match &cli.command {
        Command::Generate(a) => ("generate", a),
        Command::Train(a) => ("train", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.seed = seed;
    }
    let out = OutDir {
        dir: args
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        force: args.force,
    };
    let mut summary = match cli.command {
        Command::Generate(_) => cmd_generate(&cfg, &out)?,
        Command::Train(_) => cmd_train(&cfg, &out)?,
        Command::Simulate(_) => cmd_simulate(&cfg, &out)?,
    };
    summary["command"] = json!(name);
    summary["out"] = json!(out.dir);
    Ok(summary)
}

fn cmd_generate(cfg: &ExperimentConfig, out: &OutDir) -> Result<Value> {
    let gen = cfg
        .generator()
        .ok_or_else(|| Error::Config("generate needs a [generator] block".into()))?;
    let f = cfg.feeder()?;
    out.prepare(&[PROFILES_FILE])?;
    let p = synthesize_profiles(&f, &gen)?;
    let path = out.path(PROFILES_FILE);
    p.write_csv(&path)?;
    Ok(json!({
        "T": p.len(),
        "N": p.n(),
        "penetration": gen.penetration,
        "inverters": p.inverter_buses().len(),
        "seed": gen.seed,
        "files": [path],
    }))
}

fn cmd_train(cfg: &ExperimentConfig, out: &OutDir) -> Result<Value> {
    let t = &cfg.train;
    let f = cfg.feeder()?;
    let profiles = cfg.profiles(&f)?;
    let window = t.window_start..t.window_start + t.window_len;
    if window.end > profiles.len() {
        return Err(Error::Config(format!(
            "training window {window:?} exceeds the {} profile rows",
            profiles.len()
        )));
    }
    out.prepare(&[RULES_FILE])?;
    let sens = build_sensitivities(&f);
    let scen = build_scenarios(&f, &profiles, window.clone(), &sens, &t.layout(), t.normalize)?;
    let (tc, cv) = match t.mu {
        Some(mu) => (t.config(mu)?, false),
        None => {
            if t.mu_grid.is_empty() {
                return Err(Error::Config("mu is absent and mu_grid is empty".into()));
            }
            let grid = t.mu_grid.iter().map(|&m| t.config(m)).collect::<Result<Vec<_>>>()?;
            (cross_validate(&scen, &sens, &grid)?, true)
        }
    };
    let (rules, _, _) = train_detailed(&scen, &sens, &tc)?;
    let sp = sparsity_report(&rules, tc.zero_tol);
    let path = out.write(RULES_FILE, &rules.to_json())?;
    Ok(json!({
        "window": [window.start, window.end],
        "mu": tc.mu,
        "mu_from_cross_validation": cv,
        "objective": rules.meta.train_objective,
        "frac_nonzero": sp.frac_nonzero_overall,
        "inactive_inverters": sp.inactive_inverters,
        "comm_count": rules.comm_count(),
        "primal_res": rules.meta.primal_res,
        "dual_res": rules.meta.dual_res,
        "gap": rules.meta.gap,
        "iterations": rules.meta.iterations,
        "files": [path],
    }))
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &OutDir) -> Result<Value> {
    let sim = &cfg.simulate;
    let f = cfg.feeder()?;
    let profiles = cfg.profiles(&f)?;
    sim.validate()?;
    let sweeps: Vec<(SweepParam, &Vec<f64>)> = sim
        .sweep
        .iter()
        .flat_map(|s| [(SweepParam::Tau, &s.tau), (SweepParam::Eps, &s.eps), (SweepParam::Mu, &s.mu)])
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let mut names = vec![REPORT_FILE, BUS_FILE, WINDOW_FILE, DISPATCH_FILE];
    if !sweeps.is_empty() {
        names.push(TRADEOFF_FILE);
    }
    out.prepare(&names)?;

    let (report, log) = run_rolling_logged(&f, &profiles, sim)?;
    let mut rows = Vec::new();
    for (param, values) in &sweeps {
        rows.extend(sweep_tradeoff(&f, &profiles, sim, *param, values)?);
    }

    let mut files = vec![out.write(REPORT_FILE, &report.to_json())?];
    report.write_bus_csv(out.path(BUS_FILE))?;
    report.write_window_csv(out.path(WINDOW_FILE))?;
    write_dispatch_csv(out.path(DISPATCH_FILE), &log)?;
    files.extend([out.path(BUS_FILE), out.path(WINDOW_FILE), out.path(DISPATCH_FILE)]);
    if !sweeps.is_empty() {
        write_tradeoff_csv(out.path(TRADEOFF_FILE), &rows)?;
        files.push(out.path(TRADEOFF_FILE));
    }
    let controllers: Vec<Value> = report
        .controllers
        .iter()
        .map(|c| {
            json!({
                "controller": c.controller,
                "avg_dv": c.avg_dv,
                "max_dv": c.max_dv,
                "violations": c.violations,
                "minutes_missing": c.minutes_missing,
            })
        })
        .collect();
    Ok(json!({
        "windows": report.windows.len(),
        "controllers": controllers,
        "tradeoff_rows": rows.len(),
        "files": files,
    }))
}

/// Exit code and machine-readable description of a failure.
pub fn error_json(e: &Error) -> (u8, Value) {
    let (kind, code) = match e {
        Error::Config(_) => ("config", 2),
        Error::Io { .. } => ("io", 3),
        Error::Parse(_) => ("parse", 2),
        Error::Topology(_) => ("topology", 2),
        Error::Dimension(_) => ("dimension", 2),
        Error::InvalidParameter(_) => ("invalid_parameter", 2),
        Error::Factorization(_) => ("factorization", 4),
        Error::Solver { .. } => ("solver", 4),
        Error::Training(_) => ("training", 4),
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    if let Error::Solver {
        status,
        iterations,
        primal_res,
        dual_res,
        gap,
    } = e
    {
        v["status"] = json!(status);
        v["iterations"] = json!(iterations);
        v["primal_res"] = json!(primal_res);
        v["dual_res"] = json!(dual_res);
        v["gap"] = json!(gap);
    }
    (code, v)
}
