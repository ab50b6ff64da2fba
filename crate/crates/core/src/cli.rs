//! Experiment driver: flat key-value configs, the experiment pipelines,
//! Knudsen sweeps, CSV artifacts and run manifests.
//!
//! A config is a list of `key = value` lines; `#` starts a comment. Keys
//! left out take the defaults of the chosen experiment, which
//! `kinetic config <experiment>` prints in full. `norm` may repeat; the
//! first norm is the one fits, smallness checks and split errors use.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::collision::{AngularFn, KernelConfig};
use crate::error::{Error, Result};
use crate::evolve::{
    evolve_linear, evolve_nonlinear, evolve_split_system, fit_decay_rate, fmt, split_step_bound, transient_window,
    EvolveConfig, Mode, Model, Trajectory,
};
use crate::fields::{shell_fields, RandomField};
use crate::grid::{weighted_norm, DistributionField, Exponent, GridConfig, NormSpec, WeightKind};
use crate::hydro::{
    estimate_transport_coeffs, hydro_limit_error, make_well_prepared, moments, slow_initial_data, well_prepared,
    NsSolver,
};
use crate::interp::InterpKind;
use crate::linop::{measure_dissipativity, spectral_gap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Spectrum,
    LinearDecay,
    NonlinearDecay,
    SplitConsistency,
    HydroLimit,
    DissipativityScan,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Self::Spectrum,
        Self::LinearDecay,
        Self::NonlinearDecay,
        Self::SplitConsistency,
        Self::HydroLimit,
        Self::DissipativityScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::LinearDecay => "linear-decay",
            Self::NonlinearDecay => "nonlinear-decay",
            Self::SplitConsistency => "split-consistency",
            Self::HydroLimit => "hydro-limit",
            Self::DissipativityScan => "dissipativity-scan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s.trim())
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    /// Time-stepping template; epsilon, delta and the norms are filled in
    /// per run from the fields below.
    pub evolve: EvolveConfig,
    /// Knudsen numbers in (0, 1], strictly decreasing.
    pub sweep: Vec<f64>,
    pub delta: f64,
    pub norms: Vec<NormSpec>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Size of the initial data: first-norm size for nonlinear-decay and
    /// split-consistency, velocity and temperature amplitude for
    /// hydro-limit.
    pub amplitude: f64,
    pub diss_k: f64,
    pub diss_q: Exponent,
    pub diss_p: Exponent,
    pub diss_samples: usize,
    /// Number of step sizes dt₀, dt₀/2, ... in split-consistency.
    pub split_levels: usize,
    /// NS steps per kinetic step in hydro-limit.
    pub hydro_substeps: usize,
    /// Kinetic steps between compared snapshots in hydro-limit.
    pub hydro_stride: usize,
}

fn four_pi() -> f64 {
    4.0 * std::f64::consts::PI
}

impl ExperimentConfig {
    /// The defaults each experiment runs with when the config is silent.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            grid: GridConfig { dim: 2, n_x: 8, n_v: 16, v_max: 6.0, torus_period: four_pi() },
            kernel: KernelConfig::default(),
            evolve: EvolveConfig::default(),
            sweep: vec![1.0, 0.5, 0.25],
            delta: 0.25,
            norms: vec![NormSpec::l1(3.0)],
            output_dir: PathBuf::from(format!("out/{}", experiment.name())),
            seed: 1,
            amplitude: 0.01,
            diss_k: 4.0,
            diss_q: Exponent::One,
            diss_p: Exponent::One,
            diss_samples: 100,
            split_levels: 2,
            hydro_substeps: 4,
            hydro_stride: 1,
        };
        let energy_norm = NormSpec { beta: 1, ..NormSpec::l1(3.0) };
        match experiment {
            Experiment::Spectrum => {
                c.grid.n_x = 4;
                c.grid.n_v = 24;
                c.grid.torus_period = 2.0 * std::f64::consts::PI;
            }
            Experiment::LinearDecay => {
                c.evolve.t_end = 40.0;
                c.evolve.record_stride = 5;
            }
            Experiment::NonlinearDecay => {
                c.kernel.n_sigma = 8;
                c.sweep = vec![0.5, 0.25];
                c.norms = vec![energy_norm];
                c.evolve.t_end = 12.0;
                c.evolve.dt_ctrl = 4.0;
                c.evolve.record_stride = 5;
            }
            Experiment::SplitConsistency => {
                c.grid.n_x = 4;
                c.kernel.n_sigma = 8;
                c.sweep = vec![0.5];
                c.norms = vec![energy_norm];
                c.evolve.dt_ctrl = 1.0;
                c.evolve.record_stride = 1_000_000;
            }
            Experiment::HydroLimit => {
                c.kernel.n_sigma = 8;
                c.sweep = vec![0.5, 0.25, 0.125];
                c.norms = vec![energy_norm];
                c.amplitude = 0.1;
                c.evolve.dt_ctrl = 1.0;
                c.evolve.eta = 1e3;
                c.evolve.record_stride = 1_000_000;
            }
            Experiment::DissipativityScan => {
                c.grid.torus_period = 2.0 * std::f64::consts::PI;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.kernel.validate()?;
        crate::linop::build_mollifier(self.delta)?;
        check_sweep(&self.sweep)?;
        if self.norms.is_empty() {
            return Err(Error::Config("at least one norm is required".into()));
        }
        for n in &self.norms {
            n.validate()?;
        }
        self.run_config(self.sweep[0]).validate()?;
        if !(self.amplitude > 0.0) || !(self.diss_k >= 0.0) {
            return Err(Error::Config("amplitude must be positive and diss.k nonnegative".into()));
        }
        if self.diss_samples == 0 || self.split_levels < 2 || self.hydro_substeps == 0 || self.hydro_stride == 0 {
            return Err(Error::Config(
                "diss.samples, hydro.substeps and hydro.stride must be >= 1, split.levels >= 2".into(),
            ));
        }
        if self.experiment == Experiment::HydroLimit && self.grid.dim != 2 {
            return Err(Error::Config("hydro-limit runs in two dimensions".into()));
        }
        Ok(())
    }

    /// The evolution config of one sweep entry.
    pub fn run_config(&self, epsilon: f64) -> EvolveConfig {
        EvolveConfig { epsilon, delta: self.delta, record_norms: self.norms.clone(), ..self.evolve.clone() }
    }

    /// Canonical text form; parsing it reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.name().into());
        kv("output_dir", self.output_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("grid.dim", self.grid.dim.to_string());
        kv("grid.n_x", self.grid.n_x.to_string());
        kv("grid.n_v", self.grid.n_v.to_string());
        kv("grid.v_max", self.grid.v_max.to_string());
        kv("grid.torus_period", self.grid.torus_period.to_string());
        kv("kernel.gamma", self.kernel.gamma.to_string());
        kv("kernel.c_phi", self.kernel.c_phi.to_string());
        kv(
            "kernel.angular",
            match self.kernel.angular {
                AngularFn::Constant => "constant".into(),
                AngularFn::Bump { width } => format!("bump:{width}"),
            },
        );
        kv("kernel.n_sigma", self.kernel.n_sigma.to_string());
        kv("kernel.interp", self.kernel.interp.name().into());
        kv("kernel.conservative", self.kernel.conservative.to_string());
        kv("evolve.t_end", self.evolve.t_end.to_string());
        kv("evolve.dt_ctrl", self.evolve.dt_ctrl.to_string());
        kv("evolve.dt", self.evolve.dt.map_or("auto".into(), |d| d.to_string()));
        kv("evolve.record_stride", self.evolve.record_stride.to_string());
        kv("evolve.eta", self.evolve.eta.to_string());
        kv("epsilon", self.sweep.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", "));
        kv("delta", self.delta.to_string());
        for n in &self.norms {
            kv("norm", norm_text(n));
        }
        kv("amplitude", self.amplitude.to_string());
        kv("diss.k", self.diss_k.to_string());
        kv("diss.q", self.diss_q.to_string());
        kv("diss.p", self.diss_p.to_string());
        kv("diss.samples", self.diss_samples.to_string());
        kv("split.levels", self.split_levels.to_string());
        kv("hydro.substeps", self.hydro_substeps.to_string());
        kv("hydro.stride", self.hydro_stride.to_string());
        s
    }
}

fn norm_text(n: &NormSpec) -> String {
    let w = match n.weight {
        WeightKind::Polynomial => "poly",
        WeightKind::InverseMaxwellian => "invmu",
        WeightKind::NuScaled => "nu",
    };
    format!("q={} p={} k={} alpha={} beta={} weight={w}", n.q, n.p, n.k, n.alpha, n.beta)
}

fn parse_norm(s: &str) -> std::result::Result<NormSpec, String> {
    let mut n = NormSpec::l1(0.0);
    for tok in s.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| format!("norm field `{tok}` is not key=value"))?;
        match k {
            "q" => n.q = Exponent::parse(v).map_err(|e| e.to_string())?,
            "p" => n.p = Exponent::parse(v).map_err(|e| e.to_string())?,
            "k" => n.k = parse_num(v)?,
            "alpha" => n.alpha = v.parse().map_err(|_| format!("bad alpha `{v}`"))?,
            "beta" => n.beta = v.parse().map_err(|_| format!("bad beta `{v}`"))?,
            "weight" => {
                n.weight = match v {
                    "poly" => WeightKind::Polynomial,
                    "invmu" => WeightKind::InverseMaxwellian,
                    "nu" => WeightKind::NuScaled,
                    _ => return Err(format!("unknown weight `{v}` (poly, invmu, nu)")),
                }
            }
            _ => return Err(format!("unknown norm field `{k}`")),
        }
    }
    n.validate().map_err(|e| e.to_string())?;
    Ok(n)
}

/// A float, optionally written as a multiple of π: `4pi`, `pi`, `0.5pi`.
fn parse_num(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = match s.strip_suffix("pi") {
        Some("") => Some(std::f64::consts::PI),
        Some(m) => m.trim_end_matches('*').parse::<f64>().ok().map(|x| x * std::f64::consts::PI),
        None => s.parse::<f64>().ok(),
    };
    v.filter(|x| x.is_finite()).ok_or_else(|| format!("`{s}` is not a finite number"))
}

fn parse_int<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a nonnegative integer", s.trim()))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        o => Err(format!("`{o}` is not a boolean")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(parse_num).collect()
}

fn check_sweep(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Config("the epsilon sweep is empty".into()));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
        return Err(Error::Config(format!("epsilon = {e} outside (0, 1]")));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon values must be strictly decreasing".into()));
    }
    Ok(())
}

/// Parses a config for `experiment`. Errors name the offending line.
pub fn parse_config(text: &str, experiment: Experiment) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::defaults(experiment);
    let mut seen = HashSet::new();
    let mut norms = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Config(format!("config line {}: {msg}", i + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key != "norm" && !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        let r: std::result::Result<(), String> = (|| {
            match key {
                "experiment" => {
                    let e = Experiment::parse(value).ok_or_else(|| format!("unknown experiment `{value}`"))?;
                    if e != experiment {
                        return Err(format!("config is for `{value}` but `{}` was requested", experiment.name()));
                    }
                }
                "output_dir" => c.output_dir = PathBuf::from(value),
                "seed" => c.seed = parse_int(value)?,
                "grid.dim" => c.grid.dim = parse_int(value)?,
                "grid.n_x" => c.grid.n_x = parse_int(value)?,
                "grid.n_v" => c.grid.n_v = parse_int(value)?,
                "grid.v_max" => c.grid.v_max = parse_num(value)?,
                "grid.torus_period" => c.grid.torus_period = parse_num(value)?,
                "kernel.gamma" => c.kernel.gamma = parse_num(value)?,
                "kernel.c_phi" => c.kernel.c_phi = parse_num(value)?,
                "kernel.angular" => {
                    c.kernel.angular = match value.split_once(':') {
                        None if value == "constant" => AngularFn::Constant,
                        Some(("bump", w)) => AngularFn::Bump { width: parse_num(w)? },
                        _ => return Err(format!("angular factor `{value}` is not `constant` or `bump:<width>`")),
                    }
                }
                "kernel.n_sigma" => c.kernel.n_sigma = parse_int(value)?,
                "kernel.interp" => {
                    c.kernel.interp =
                        InterpKind::parse(value).ok_or_else(|| format!("unknown interpolation `{value}`"))?
                }
                "kernel.conservative" => c.kernel.conservative = parse_bool(value)?,
                "evolve.t_end" => c.evolve.t_end = parse_num(value)?,
                "evolve.dt_ctrl" => c.evolve.dt_ctrl = parse_num(value)?,
                "evolve.dt" => c.evolve.dt = if value == "auto" { None } else { Some(parse_num(value)?) },
                "evolve.record_stride" => c.evolve.record_stride = parse_int(value)?,
                "evolve.eta" => c.evolve.eta = parse_num(value)?,
                "epsilon" => c.sweep = parse_list(value)?,
                "delta" => c.delta = parse_num(value)?,
                "norm" => norms.push(parse_norm(value)?),
                "amplitude" => c.amplitude = parse_num(value)?,
                "diss.k" => c.diss_k = parse_num(value)?,
                "diss.q" => c.diss_q = Exponent::parse(value).map_err(|e| e.to_string())?,
                "diss.p" => c.diss_p = Exponent::parse(value).map_err(|e| e.to_string())?,
                "diss.samples" => c.diss_samples = parse_int(value)?,
                "split.levels" => c.split_levels = parse_int(value)?,
                "hydro.substeps" => c.hydro_substeps = parse_int(value)?,
                "hydro.stride" => c.hydro_stride = parse_int(value)?,
                _ => return Err(format!("unknown key `{key}`")),
            }
            Ok(())
        })();
        r.map_err(err)?;
    }
    if !norms.is_empty() {
        c.norms = norms;
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path, experiment: Experiment) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, experiment)
}

/// Command-line overrides applied after the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilon: Option<Vec<f64>>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = &self.epsilon {
            cfg.sweep = e.clone();
        }
        if self.threads == Some(0) {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        cfg.validate()
    }
}

/// Parses the value of `--epsilon-override`.
pub fn parse_epsilon_list(s: &str) -> Result<Vec<f64>> {
    let v = parse_list(s).map_err(Error::Config)?;
    check_sweep(&v)?;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    /// Canonical config text.
    pub config: String,
    pub wall_clock_s: f64,
    /// Files written by the run, relative to the output directory.
    pub artifacts: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub status: RunStatus,
    pub failure: Option<String>,
}

impl RunManifest {
    pub fn all_passed(&self) -> bool {
        self.status == RunStatus::Complete && self.checks.iter().all(|c| c.passed)
    }

    /// 0 when complete with every check passing, 1 on a failed check,
    /// 2 when the run itself failed.
    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Failed => 2,
            RunStatus::Complete if self.checks.iter().all(|c| c.passed) => 0,
            RunStatus::Complete => 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes through a temporary file and a rename, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Output directory plus the list of files written into it.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(name.into());
        Ok(())
    }

    fn with_file(&mut self, name: &str, f: impl FnOnce(std::fs::File) -> Result<()>) -> Result<()> {
        f(std::fs::File::create(self.dir.join(name))?)?;
        self.files.push(name.into());
        Ok(())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn eps_tag(e: f64) -> String {
    format!("eps{e}")
}

/// Per-ε results of a sweep. Fields an experiment does not produce are None.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub rate: Option<f64>,
    pub r2: Option<f64>,
    pub monotone: Option<bool>,
    pub ledger_drift: Option<f64>,
    pub err_rho: Option<f64>,
    pub err_u: Option<f64>,
    pub err_theta: Option<f64>,
    pub boussinesq_residual: Option<f64>,
    pub split_rel_diff: Option<f64>,
    pub split_ratio: Option<f64>,
    pub error: Option<String>,
}

/// Strict-decrease flags along the sweep (ε decreasing). Present only with
/// at least two successful rows carrying the quantity.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct SweepFlags {
    pub err_u_decreasing: Option<bool>,
    pub err_theta_decreasing: Option<bool>,
    pub boussinesq_decreasing: Option<bool>,
    /// max/min - 1 over the fitted rates.
    pub rate_spread: Option<f64>,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub flags: SweepFlags,
}

pub const SWEEP_HEADER: [&str; 12] = [
    "epsilon",
    "rate",
    "r2",
    "monotone",
    "ledger_drift",
    "err_rho",
    "err_u",
    "err_theta",
    "boussinesq_residual",
    "split_rel_diff",
    "split_ratio",
    "error",
];

impl SweepTable {
    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.epsilon.to_string(),
                    opt(r.rate),
                    opt(r.r2),
                    r.monotone.map(|m| m.to_string()).unwrap_or_default(),
                    opt(r.ledger_drift),
                    opt(r.err_rho),
                    opt(r.err_u),
                    opt(r.err_theta),
                    opt(r.boussinesq_residual),
                    opt(r.split_rel_diff),
                    opt(r.split_ratio),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect()
    }

    fn flag_rows(&self) -> Vec<Vec<String>> {
        let f = &self.flags;
        let mut out = Vec::new();
        for (name, v) in [
            ("err_u_decreasing", f.err_u_decreasing),
            ("err_theta_decreasing", f.err_theta_decreasing),
            ("boussinesq_decreasing", f.boussinesq_decreasing),
        ] {
            if let Some(v) = v {
                out.push(vec![name.to_string(), v.to_string()]);
            }
        }
        if let Some(s) = f.rate_spread {
            out.push(vec!["rate_spread".into(), fmt(s)]);
        }
        out
    }
}

fn strictly_decreasing(rows: &[SweepRow], get: impl Fn(&SweepRow) -> Option<f64>) -> Option<bool> {
    let v: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).filter_map(get).collect();
    (v.len() >= 2).then(|| v.windows(2).all(|w| w[1] < w[0]))
}

/// Runs `run` for every ε (strictly decreasing, in (0, 1]), on up to
/// `threads` threads. A failing entry is recorded in its row and the sweep
/// goes on.
pub fn knudsen_sweep<F>(epsilons: &[f64], threads: usize, run: F) -> Result<SweepTable>
where
    F: Fn(f64) -> Result<SweepRow> + Sync,
{
    check_sweep(epsilons)?;
    let one = |e: f64| match run(e) {
        Ok(mut r) => {
            r.epsilon = e;
            r
        }
        Err(err) => SweepRow { epsilon: e, error: Some(err.to_string()), ..Default::default() },
    };
    let rows: Vec<SweepRow> = if threads <= 1 || epsilons.len() == 1 {
        epsilons.iter().map(|&e| one(e)).collect()
    } else {
        let chunk = epsilons.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> =
                epsilons.chunks(chunk).map(|c| s.spawn(|| c.iter().map(|&e| one(e)).collect::<Vec<_>>())).collect();
            handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    };
    let rates: Vec<f64> = rows.iter().filter(|r| r.error.is_none()).filter_map(|r| r.rate).collect();
    let flags = SweepFlags {
        err_u_decreasing: strictly_decreasing(&rows, |r| r.err_u),
        err_theta_decreasing: strictly_decreasing(&rows, |r| r.err_theta),
        boussinesq_decreasing: strictly_decreasing(&rows, |r| r.boussinesq_residual),
        rate_spread: (rates.len() >= 2).then(|| {
            let mx = rates.iter().copied().fold(f64::MIN, f64::max);
            let mn = rates.iter().copied().fold(f64::MAX, f64::min);
            mx / mn - 1.0
        }),
    };
    Ok(SweepTable { rows, flags })
}

/// Tolerances of the built-in checks.
pub mod tol {
    pub const LINEAR_RATE_SPREAD: f64 = 0.20;
    pub const LINEAR_MIN_R2: f64 = 0.95;
    pub const NONLINEAR_RATE_SPREAD: f64 = 0.25;
    pub const LEDGER_DRIFT: f64 = 1e-4;
    pub const SPLIT_REL_DIFF: f64 = 1e-3;
    /// Accepted band for the error ratio when dt halves (second order: 4).
    pub const SPLIT_RATIO: (f64, f64) = (3.0, 5.0);
    pub const DISSIPATIVITY_SCALING: f64 = 0.10;
}

fn sweep_checks(table: &SweepTable) -> Vec<CheckResult> {
    table
        .rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| CheckResult::new(&format!("run_{}", eps_tag(r.epsilon)), false, e.clone()))
        })
        .collect()
}

fn all_ok(table: &SweepTable) -> impl Iterator<Item = &SweepRow> {
    table.rows.iter().filter(|r| r.error.is_none())
}

/// Data for the nonlinear experiments: a seeded random field made
/// well-prepared, stripped of its global kernel part and scaled to
/// `amplitude` in the first norm.
pub fn nonlinear_initial_data(model: &Model, cfg: &ExperimentConfig) -> Result<DistributionField> {
    let raw = RandomField::default().generate(&model.grid, cfg.seed);
    let mut h = model.remove_global_kernel(&make_well_prepared(&raw, &model.grid)?);
    let n = weighted_norm(&h, &cfg.norms[0], &model.grid)?;
    if n == 0.0 {
        return Err(Error::Config("random initial data vanished".into()));
    }
    h.scale(cfg.amplitude / n);
    Ok(h)
}

fn trajectory_row(tr: &Trajectory, eps: f64) -> Result<SweepRow> {
    let t_skip = transient_window(eps);
    let fit = fit_decay_rate(&tr.times, &tr.norms[0], t_skip)?;
    let monotone = tr.norms[0].windows(2).zip(&tr.times).filter(|(_, t)| **t >= t_skip).all(|(w, _)| w[1] <= w[0]);
    Ok(SweepRow {
        rate: Some(fit.rate),
        r2: Some(fit.r2),
        monotone: Some(monotone),
        ledger_drift: Some(tr.ledger_drift()),
        ..Default::default()
    })
}

fn run_spectrum(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts) -> Result<Vec<CheckResult>> {
    let r = spectral_gap(&model.l, &model.grid)?;
    let rows: Vec<Vec<String>> = r
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, (re, im))| vec![i.to_string(), fmt(*re), fmt(*im), (i < r.kernel_dim).to_string()])
        .collect();
    art.csv("eigenvalues.csv", &["index", "re", "im", "in_kernel"], &rows)?;
    let rows: Vec<Vec<String>> = r.plateau.iter().map(|(t, n)| vec![fmt(*t), n.to_string()]).collect();
    art.csv("spectrum_plateau.csv", &["tolerance", "kernel_dim"], &rows)?;
    art.csv(
        "spectrum_summary.csv",
        &["dim", "n_v", "kernel_dim", "lambda_0", "max_nonkernel_real", "kernel_basis_error", "operator_norm"],
        &[vec![
            cfg.grid.dim.to_string(),
            cfg.grid.n_v.to_string(),
            r.kernel_dim.to_string(),
            fmt(r.lambda_0),
            fmt(r.max_nonkernel_real),
            fmt(r.kernel_basis_error),
            fmt(r.operator_norm),
        ]],
    )?;
    let want = cfg.grid.dim + 2;
    Ok(vec![
        CheckResult::new("kernel_dim", r.kernel_dim == want, format!("{} (expected {want})", r.kernel_dim)),
        CheckResult::new(
            "kernel_plateau",
            r.plateau.iter().all(|(_, n)| *n == want),
            format!("{:?}", r.plateau.iter().map(|p| p.1).collect::<Vec<_>>()),
        ),
        CheckResult::new("dissipative", r.max_nonkernel_real < 0.0, format!("max Re = {:.3e}", r.max_nonkernel_real)),
    ])
}

fn run_linear(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts, threads: usize) -> Result<SweepTable> {
    let h = RandomField::default().generate(&model.grid, cfg.seed);
    let trajs = std::sync::Mutex::new(Vec::new());
    let table = knudsen_sweep(&cfg.sweep, threads, |eps| {
        let tr = evolve_linear(&h, &cfg.run_config(eps), model)?;
        let row = trajectory_row(&tr, eps)?;
        trajs.lock().expect("lock").push((eps, tr));
        Ok(row)
    })?;
    save_trajectories(art, "linear", trajs.into_inner().expect("lock"))?;
    Ok(table)
}

fn save_trajectories(art: &mut Artifacts, prefix: &str, mut trajs: Vec<(f64, Trajectory)>) -> Result<()> {
    trajs.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (eps, tr) in trajs {
        art.with_file(&format!("{prefix}_{}.csv", eps_tag(eps)), |f| tr.write_csv(f))?;
    }
    Ok(())
}

fn run_nonlinear(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts, threads: usize) -> Result<SweepTable> {
    let h = nonlinear_initial_data(model, cfg)?;
    let trajs = std::sync::Mutex::new(Vec::new());
    let table = knudsen_sweep(&cfg.sweep, threads, |eps| {
        let tr = evolve_nonlinear(&h, &EvolveConfig { mode: Mode::Nonlinear, ..cfg.run_config(eps) }, model)?;
        let row = trajectory_row(&tr, eps)?;
        trajs.lock().expect("lock").push((eps, tr));
        Ok(row)
    })?;
    save_trajectories(art, "nonlinear", trajs.into_inner().expect("lock"))?;
    Ok(table)
}

/// Relative first-norm gap between h⁰ + h¹ and the direct solution at
/// t_end, for dt₀ / 2^i, i < levels, where dt₀ is the split-system bound.
pub fn split_consistency(
    h: &DistributionField,
    cfg: &ExperimentConfig,
    model: &Model,
    epsilon: f64,
) -> Result<Vec<(f64, f64)>> {
    let base = EvolveConfig { mode: Mode::SplitSystem, ..cfg.run_config(epsilon) };
    let dt0 = split_step_bound(h, &base, model)?;
    let spec = &cfg.norms[0];
    let mut out = Vec::new();
    for i in 0..cfg.split_levels {
        let dt = dt0 / 2f64.powi(i as i32);
        let run = EvolveConfig { dt: Some(dt), ..base.clone() };
        let split = evolve_split_system(h, &run, model)?;
        let direct = evolve_nonlinear(h, &EvolveConfig { mode: Mode::Nonlinear, ..run }, model)?;
        let hd = direct.final_field.expect("final field");
        let mut diff = split.final_h0;
        diff.axpy(1.0, &split.final_h1);
        diff.axpy(-1.0, &hd);
        out.push((dt, weighted_norm(&diff, spec, &model.grid)? / weighted_norm(&hd, spec, &model.grid)?));
    }
    Ok(out)
}

fn run_split(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts, threads: usize) -> Result<SweepTable> {
    let h = nonlinear_initial_data(model, cfg)?;
    let levels = std::sync::Mutex::new(Vec::new());
    let table = knudsen_sweep(&cfg.sweep, threads, |eps| {
        let l = split_consistency(&h, cfg, model, eps)?;
        let ratio = l.windows(2).map(|w| w[0].1 / w[1].1).fold(f64::INFINITY, f64::min);
        let worst = l.iter().map(|x| x.1).fold(0.0, f64::max);
        levels.lock().expect("lock").push((eps, l));
        Ok(SweepRow { split_rel_diff: Some(worst), split_ratio: Some(ratio), ..Default::default() })
    })?;
    let mut levels = levels.into_inner().expect("lock");
    levels.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rows = Vec::new();
    for (eps, l) in levels {
        for (i, (dt, rel)) in l.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { fmt(l[i - 1].1 / rel) };
            rows.push(vec![eps.to_string(), fmt(*dt), fmt(*rel), ratio]);
        }
    }
    art.csv("split_levels.csv", &["epsilon", "dt", "rel_diff", "ratio"], &rows)?;
    Ok(table)
}

/// Taylor–Green vortex plus a heat mode on the lowest wavenumber.
pub fn hydro_limit_state(model: &Model, amplitude: f64) -> Result<crate::hydro::HydroState> {
    let g = &model.grid;
    let k = 2.0 * std::f64::consts::PI / g.cfg.torus_period;
    let pos: Vec<[f64; 3]> = (0..g.n_x_total).map(|x| g.position(x)).collect();
    let u = vec![
        pos.iter().map(|p| amplitude * (k * p[0]).sin() * (k * p[1]).cos()).collect::<Vec<f64>>(),
        pos.iter().map(|p| -amplitude * (k * p[0]).cos() * (k * p[1]).sin()).collect(),
    ];
    let theta: Vec<f64> = pos.iter().map(|p| amplitude * (k * p[0]).cos()).collect();
    moments(&well_prepared(&u, &theta, g)?, g)
}

fn run_hydro(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts, threads: usize) -> Result<SweepTable> {
    let coeffs = estimate_transport_coeffs(&model.l, &model.grid)?;
    art.csv(
        "transport_coeffs.csv",
        &["nu_visc", "kappa", "solve_residual", "factorization_gap"],
        &[vec![fmt(coeffs.nu_visc), fmt(coeffs.kappa), fmt(coeffs.solve_residual), fmt(coeffs.factorization_gap)]],
    )?;
    let mut limit = hydro_limit_state(model, cfg.amplitude)?;
    limit.nu_visc = coeffs.nu_visc;
    limit.kappa = coeffs.kappa;
    art.with_file("hydro_initial.csv", |f| limit.write_csv(&model.grid, f))?;
    let solver = NsSolver::new(&model.grid, coeffs.nu_visc, coeffs.kappa)?;
    let tables = std::sync::Mutex::new(Vec::new());
    let table = knudsen_sweep(&cfg.sweep, threads, |eps| {
        let h = slow_initial_data(&limit, eps, &model.l, Some(&model.collision), &model.grid)?;
        let run =
            EvolveConfig { mode: Mode::Nonlinear, snapshot_stride: Some(cfg.hydro_stride), ..cfg.run_config(eps) };
        let tr = evolve_nonlinear(&h, &run, model)?;
        let steps = (run.t_end / tr.dt).round() as usize;
        let ns = solver.solve(&limit, run.t_end, steps * cfg.hydro_substeps, cfg.hydro_substeps * cfg.hydro_stride)?;
        let t = hydro_limit_error(eps, &tr.snapshots, &ns, &model.grid)?;
        let row = SweepRow {
            err_rho: Some(t.max_err_rho()),
            err_u: Some(t.max_err_u()),
            err_theta: Some(t.max_err_theta()),
            boussinesq_residual: Some(t.max_boussinesq()),
            ledger_drift: Some(tr.ledger_drift()),
            ..Default::default()
        };
        tables.lock().expect("lock").push((eps, t));
        Ok(row)
    })?;
    let mut tables = tables.into_inner().expect("lock");
    tables.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (eps, t) in tables {
        art.with_file(&format!("hydro_{}.csv", eps_tag(eps)), |f| t.write_csv(f))?;
    }
    Ok(table)
}

fn run_dissipativity(cfg: &ExperimentConfig, model: &Model, art: &mut Artifacts, threads: usize) -> Result<SweepTable> {
    let split = model.split(cfg.delta)?;
    let mut samples: Vec<DistributionField> =
        (0..cfg.diss_samples as u64).map(|i| RandomField::default().generate(&model.grid, cfg.seed + i)).collect();
    samples.extend(shell_fields(&model.grid));
    let reports = std::sync::Mutex::new(Vec::new());
    let table = knudsen_sweep(&cfg.sweep, threads, |eps| {
        let r = measure_dissipativity(
            &split,
            &model.grid,
            cfg.diss_k,
            cfg.diss_q,
            cfg.diss_p,
            eps,
            cfg.kernel.gamma,
            &samples,
        )?;
        let worst = r.rates.iter().copied().fold(f64::INFINITY, f64::min);
        reports.lock().expect("lock").push((eps, r));
        Ok(SweepRow { rate: Some(worst), ..Default::default() })
    })?;
    let mut reports = reports.into_inner().expect("lock");
    reports.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rows = Vec::new();
    for (eps, r) in &reports {
        for (i, rate) in r.rates.iter().enumerate() {
            rows.push(vec![eps.to_string(), i.to_string(), fmt(*rate), fmt(rate * eps * eps)]);
        }
    }
    art.csv("dissipativity.csv", &["epsilon", "sample", "rate", "normalized_rate"], &rows)?;
    Ok(table)
}

fn experiment_checks(cfg: &ExperimentConfig, table: &SweepTable) -> Vec<CheckResult> {
    let mut checks = sweep_checks(table);
    let ok: Vec<&SweepRow> = all_ok(table).collect();
    let spread = |limit: f64| {
        table.flags.rate_spread.map(|s| CheckResult::new("rate_spread", s <= limit, format!("{s:.4} (limit {limit})")))
    };
    match cfg.experiment {
        Experiment::Spectrum => {}
        Experiment::LinearDecay => {
            checks.extend(spread(tol::LINEAR_RATE_SPREAD));
            let worst = ok.iter().filter_map(|r| r.r2).fold(1.0, f64::min);
            checks.push(CheckResult::new(
                "fit_r2",
                worst > tol::LINEAR_MIN_R2,
                format!("min r2 {worst:.5} (limit {})", tol::LINEAR_MIN_R2),
            ));
        }
        Experiment::NonlinearDecay => {
            checks.extend(spread(tol::NONLINEAR_RATE_SPREAD));
            let mono = ok.iter().all(|r| r.monotone == Some(true));
            checks.push(CheckResult::new("monotone_after_transient", mono, String::new()));
            let drift = ok.iter().filter_map(|r| r.ledger_drift).fold(0.0, f64::max);
            checks.push(CheckResult::new(
                "ledger_drift",
                drift < tol::LEDGER_DRIFT,
                format!("{drift:.3e} (limit {:e})", tol::LEDGER_DRIFT),
            ));
        }
        Experiment::SplitConsistency => {
            let rel = ok.iter().filter_map(|r| r.split_rel_diff).fold(0.0, f64::max);
            checks.push(CheckResult::new(
                "split_rel_diff",
                rel < tol::SPLIT_REL_DIFF,
                format!("{rel:.3e} (limit {:e})", tol::SPLIT_REL_DIFF),
            ));
            let (lo, hi) = tol::SPLIT_RATIO;
            let ratios: Vec<f64> = ok.iter().filter_map(|r| r.split_ratio).collect();
            checks.push(CheckResult::new(
                "split_second_order",
                !ratios.is_empty() && ratios.iter().all(|r| (lo..=hi).contains(r)),
                format!("ratios {ratios:.3?} (band {lo}..{hi})"),
            ));
        }
        Experiment::HydroLimit => {
            let f = &table.flags;
            for (name, v) in [
                ("err_u_decreasing", f.err_u_decreasing),
                ("err_theta_decreasing", f.err_theta_decreasing),
                ("boussinesq_decreasing", f.boussinesq_decreasing),
            ] {
                if let Some(v) = v {
                    checks.push(CheckResult::new(name, v, String::new()));
                }
            }
        }
        Experiment::DissipativityScan => {
            let positive = ok.iter().all(|r| r.rate.is_some_and(|x| x > 0.0));
            checks.push(CheckResult::new("rates_positive", positive, String::new()));
            if let (Some(a), Some(b)) = (ok.first(), ok.last()) {
                if ok.len() >= 2 {
                    let got = b.rate.unwrap_or(0.0) / a.rate.unwrap_or(f64::NAN);
                    let want = (a.epsilon / b.epsilon).powi(2);
                    checks.push(CheckResult::new(
                        "inverse_square_scaling",
                        (got / want - 1.0).abs() <= tol::DISSIPATIVITY_SCALING,
                        format!("ratio {got:.4}, expected {want:.4}"),
                    ));
                }
            }
        }
    }
    checks
}

/// Runs the configured experiment. CSVs, the report and the manifest go
/// to `cfg.output_dir`; the manifest is written last and atomically, also
/// when the run fails part-way.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<RunManifest> {
    run_detailed(cfg, threads).map(|r| r.0)
}

/// `run`, also returning the sweep table (None for the spectrum and for
/// failed runs).
pub fn run_detailed(cfg: &ExperimentConfig, threads: usize) -> Result<(RunManifest, Option<SweepTable>)> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let start = Instant::now();
    let mut art = Artifacts { dir: cfg.output_dir.clone(), files: Vec::new() };
    let threads = threads.max(1);
    let outcome = (|| -> Result<(Vec<CheckResult>, Option<SweepTable>)> {
        let model = Model::new(&cfg.grid, &cfg.kernel)?;
        if cfg.experiment == Experiment::Spectrum {
            return Ok((run_spectrum(cfg, &model, &mut art)?, None));
        }
        let table = match cfg.experiment {
            Experiment::LinearDecay => run_linear(cfg, &model, &mut art, threads)?,
            Experiment::NonlinearDecay => run_nonlinear(cfg, &model, &mut art, threads)?,
            Experiment::SplitConsistency => run_split(cfg, &model, &mut art, threads)?,
            Experiment::HydroLimit => run_hydro(cfg, &model, &mut art, threads)?,
            Experiment::DissipativityScan => run_dissipativity(cfg, &model, &mut art, threads)?,
            Experiment::Spectrum => unreachable!(),
        };
        art.csv("summary.csv", &SWEEP_HEADER, &table.csv_rows())?;
        art.csv("summary_flags.csv", &["flag", "value"], &table.flag_rows())?;
        Ok((experiment_checks(cfg, &table), Some(table)))
    })();
    let (checks, table, status, failure) = match outcome {
        Ok((c, t)) => (c, t, RunStatus::Complete, None),
        Err(e) => (Vec::new(), None, RunStatus::Failed, Some(e.to_string())),
    };
    let mut manifest = RunManifest {
        experiment: cfg.experiment.name().into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        threads,
        config: cfg.to_text(),
        wall_clock_s: 0.0,
        artifacts: art.files.clone(),
        checks,
        status,
        failure,
    };
    let report = emit_report(std::slice::from_ref(&manifest), &cfg.output_dir)?;
    manifest.artifacts.extend(report.files);
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    write_atomic(&cfg.output_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok((manifest, table))
}

#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub all_passed: bool,
    /// `experiment/check` for every failed check or failed run.
    pub failing: Vec<String>,
    pub files: Vec<String>,
}

impl ReportOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.all_passed {
            0
        } else {
            1
        }
    }
}

/// Writes `report.md` (pass/fail matrix) and `checks.csv` for a set of
/// manifests into `out_dir`.
pub fn emit_report(manifests: &[RunManifest], out_dir: &Path) -> Result<ReportOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut md = String::from("# Run report\n\n");
    let mut rows = Vec::new();
    let mut failing = Vec::new();
    for m in manifests {
        let _ = writeln!(md, "## {}\n", m.experiment);
        let _ = writeln!(md, "seed {}, version {}, status {:?}\n", m.seed, m.code_version, m.status);
        if let Some(f) = &m.failure {
            let _ = writeln!(md, "run failed: {f}\n");
            failing.push(format!("{}/run", m.experiment));
        }
        if m.checks.is_empty() {
            md.push_str("no checks run\n\n");
            continue;
        }
        md.push_str("| check | result | detail |\n|---|---|---|\n");
        for c in &m.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(md, "| {} | {verdict} | {} |", c.name, c.detail.replace('|', "/"));
            rows.push(vec![m.experiment.clone(), c.name.clone(), c.passed.to_string(), c.detail.clone()]);
            if !c.passed {
                failing.push(format!("{}/{}", m.experiment, c.name));
            }
        }
        md.push('\n');
    }
    if manifests.is_empty() {
        md.push_str("no checks run\n");
    }
    if !failing.is_empty() {
        let _ = writeln!(md, "failing: {}", failing.join(", "));
    }
    std::fs::write(out_dir.join("report.md"), md)?;
    let mut w = csv::Writer::from_path(out_dir.join("checks.csv"))?;
    w.write_record(["experiment", "check", "passed", "detail"])?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(ReportOutcome { all_passed: failing.is_empty(), failing, files: vec!["report.md".into(), "checks.csv".into()] })
}
