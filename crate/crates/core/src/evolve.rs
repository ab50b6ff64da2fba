//! Time integration in the diffusive scaling.
//!
//! Transport is exact: each velocity node's spatial slice is shifted by a
//! Fourier phase. The collision part of the linear operator is integrated
//! exactly by a precomputed matrix exponential of dt ε⁻² L, so the only
//! splitting error is the Strang commutator. Nonlinear terms enter through an
//! integrating-factor Heun scheme built on the same linear propagator.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::collision::{CollisionOperator, KernelConfig};
use crate::dense::{self, Matrix};
use crate::error::{Error, Result};
use crate::grid::{weighted_norm_with, DistributionField, GridConfig, NormSpec, PhaseGrid, SpatialFft};
use crate::linop::{assemble_l, split_operators, KernelProjector, LinearOperator, SplitOperators};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Linear,
    Nonlinear,
    SplitSystem,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EvolveConfig {
    pub epsilon: f64,
    pub t_end: f64,
    /// Safety factor in dt <= dt_ctrl ε² / (max ν + explicit rate). The
    /// collision propagator is exact, so values above 1 are usable; the
    /// factor then controls the transport/collision splitting error.
    pub dt_ctrl: f64,
    /// Fixed step; must respect the bound above.
    pub dt: Option<f64>,
    pub mode: Mode,
    pub delta: f64,
    pub record_norms: Vec<NormSpec>,
    pub record_stride: usize,
    /// Keep a copy of the field every this many steps.
    pub snapshot_stride: Option<usize>,
    /// Largest admissible nonlinear data in the first recorded norm.
    pub eta: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            t_end: 1.0,
            dt_ctrl: 2.0,
            dt: None,
            mode: Mode::Linear,
            delta: 0.25,
            record_norms: vec![NormSpec::l1(3.0)],
            record_stride: 1,
            snapshot_stride: None,
            eta: 0.1,
        }
    }
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon = {} must lie in (0, 1]", self.epsilon)));
        }
        if !(self.t_end > 0.0) || !(self.dt_ctrl > 0.0) {
            return Err(Error::Config("t_end and dt_ctrl must be positive".into()));
        }
        if self.record_stride == 0 || self.snapshot_stride == Some(0) {
            return Err(Error::Config("strides must be at least 1".into()));
        }
        if self.record_norms.is_empty() {
            return Err(Error::Config("at least one norm must be recorded".into()));
        }
        for n in &self.record_norms {
            n.validate()?;
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Config(format!("dt = {dt} must be positive")));
            }
        }
        if self.mode == Mode::SplitSystem {
            crate::linop::build_mollifier(self.delta)?;
        }
        Ok(())
    }
}

/// Grid, collision operator and assembled L, shared by every run on a grid.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: PhaseGrid,
    pub collision: CollisionOperator,
    pub l: LinearOperator,
    pub projector: KernelProjector,
}

impl Model {
    pub fn new(grid: &GridConfig, kernel: &KernelConfig) -> Result<Self> {
        let grid = PhaseGrid::new(grid)?;
        let collision = CollisionOperator::new(kernel, &grid)?;
        let l = assemble_l(&collision);
        let projector = KernelProjector::new(&grid)?;
        Ok(Self { grid, collision, l, projector })
    }

    pub fn split(&self, delta: f64) -> Result<SplitOperators> {
        split_operators(&self.collision, delta)
    }

    pub fn nu_max(&self) -> f64 {
        self.collision.nu().iter().copied().fold(0.0, f64::max)
    }

    /// h - Π_G h.
    pub fn remove_global_kernel(&self, h: &DistributionField) -> DistributionField {
        let mut out = h.clone();
        out.axpy(-1.0, &self.projector.pi_g(h));
        out
    }
}

/// Exact free transport over a fixed time τ: ĥ(k, v) ← e^{-iτ k·v/ε} ĥ(k, v).
#[derive(Debug)]
pub struct Transport {
    fft: SpatialFft,
    phases: Vec<Complex64>,
    n_x: usize,
}

impl Transport {
    /// `shift` is τ/ε, the transport time in units of the free flight.
    pub fn new(grid: &PhaseGrid, shift: f64) -> Self {
        let fft = SpatialFft::new(grid);
        let n_x = grid.n_x_total;
        let mut phases = Vec::with_capacity(n_x * grid.n_v_total);
        for v in 0..grid.n_v_total {
            let vel = grid.velocity(v);
            for m in 0..n_x {
                let k = fft.wavevector(m);
                let kv: f64 = (0..grid.dim).map(|a| k[a] * vel[a]).sum();
                phases.push(Complex64::from_polar(1.0, -shift * kv));
            }
        }
        Self { fft, phases, n_x }
    }

    pub fn apply(&self, h: &mut DistributionField) {
        let mut buf = vec![Complex64::default(); self.n_x];
        for v in 0..h.n_v {
            let slice = h.slice_mut(v);
            for (b, &r) in buf.iter_mut().zip(slice.iter()) {
                *b = Complex64::new(r, 0.0);
            }
            self.fft.forward(&mut buf);
            for (b, p) in buf.iter_mut().zip(&self.phases[v * self.n_x..(v + 1) * self.n_x]) {
                *b *= p;
            }
            self.fft.inverse(&mut buf);
            for (s, b) in slice.iter_mut().zip(&buf) {
                *s = b.re;
            }
        }
    }
}

/// Strang step T(dt/2) C(dt) T(dt/2) for ∂_t h = ε⁻² M h - ε⁻¹ v·∇_x h, with
/// C(dt) = exp(dt ε⁻² M).
#[derive(Debug)]
pub struct StrangPropagator {
    pub dt: f64,
    half: Transport,
    collide: Matrix,
}

impl StrangPropagator {
    pub fn new(grid: &PhaseGrid, velocity_op: &Matrix, dt: f64, epsilon: f64) -> Self {
        let s = dt / (epsilon * epsilon);
        let scaled = Matrix::from_fn(velocity_op.nrows(), velocity_op.ncols(), |i, j| s * velocity_op[(i, j)]);
        Self { dt, half: Transport::new(grid, 0.5 * dt / epsilon), collide: dense::expm(&scaled) }
    }

    pub fn apply(&self, h: &DistributionField) -> DistributionField {
        let mut a = h.clone();
        self.half.apply(&mut a);
        let mut b = dense::apply_velocity_op(&self.collide, &a);
        self.half.apply(&mut b);
        b
    }
}

/// Largest step allowed by the stiffness bound.
pub fn max_dt(dt_ctrl: f64, epsilon: f64, nu_max: f64, explicit_rate: f64) -> f64 {
    dt_ctrl * epsilon * epsilon / (nu_max + epsilon * epsilon * explicit_rate)
}

/// One linear step; rejects dt above the stiffness bound for the default
/// safety factor.
pub fn step_linear(h: &DistributionField, dt: f64, epsilon: f64, model: &Model) -> Result<DistributionField> {
    h.check(&model.grid)?;
    let bound = max_dt(EvolveConfig::default().dt_ctrl, epsilon, model.nu_max(), 0.0);
    if dt > bound {
        return Err(Error::TimeStep { dt, max_dt: bound });
    }
    Ok(StrangPropagator::new(&model.grid, &model.l.matrix, dt, epsilon).apply(h))
}

/// Time series of recorded norms plus the conservation ledger of
/// f = μ + εh.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub epsilon: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// norms[s][r]: norm spec s at record r.
    pub norms: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    pub momentum: Vec<[f64; 3]>,
    pub energy: Vec<f64>,
    pub min_f: Vec<f64>,
    /// ε ∬|h_in|(1 + |v| + |v|²): the scale for relative ledger drift.
    pub ledger_scale: f64,
    #[serde(skip)]
    pub snapshots: Vec<(f64, DistributionField)>,
    #[serde(skip)]
    pub final_field: Option<DistributionField>,
}

struct Recorder<'a> {
    grid: &'a PhaseGrid,
    specs: Vec<NormSpec>,
    fft: SpatialFft,
    nu: Vec<f64>,
    mu: Vec<f64>,
    offset: Option<DistributionField>,
    blowup_base: f64,
}

impl<'a> Recorder<'a> {
    fn new(model: &'a Model, specs: &[NormSpec], offset: Option<DistributionField>) -> Self {
        Self {
            grid: &model.grid,
            specs: specs.to_vec(),
            fft: SpatialFft::new(&model.grid),
            nu: model.collision.nu().to_vec(),
            mu: model.grid.maxwellian(),
            offset,
            blowup_base: 0.0,
        }
    }

    fn start(&mut self, traj: &mut Trajectory, h: &DistributionField, epsilon: f64, dt: f64) -> Result<()> {
        traj.dim = self.grid.dim;
        traj.epsilon = epsilon;
        traj.dt = dt;
        traj.labels = self.specs.iter().map(|s| s.label()).collect();
        traj.norms = vec![Vec::new(); self.specs.len()];
        let g = self.grid;
        let mut scale = 0.0;
        for v in 0..g.n_v_total {
            let w = 1.0 + g.speed_sq(v).sqrt() + g.speed_sq(v);
            scale += w * h.slice(v).iter().map(|x| x.abs()).sum::<f64>();
        }
        traj.ledger_scale = epsilon * scale * g.w_v * g.w_x;
        self.record(traj, 0.0, h, epsilon)?;
        self.blowup_base = traj.norms[0][0].max(f64::MIN_POSITIVE);
        Ok(())
    }

    fn record(&self, traj: &mut Trajectory, t: f64, h: &DistributionField, epsilon: f64) -> Result<()> {
        let g = self.grid;
        let diff;
        let target = match &self.offset {
            Some(o) => {
                let mut d = h.clone();
                d.axpy(-1.0, o);
                diff = d;
                &diff
            }
            None => h,
        };
        for (s, spec) in self.specs.iter().enumerate() {
            let n = weighted_norm_with(target, spec, g, Some(&self.nu), Some(&self.fft))?;
            if !n.is_finite() || (self.blowup_base > 0.0 && s == 0 && n > 1e6 * self.blowup_base) {
                return Err(Error::BlowUp(format!("norm {} reached {n:.3e} at t = {t:.4}", spec.label())));
            }
            traj.norms[s].push(n);
        }
        let vol = g.torus_volume();
        let (mut mass, mut mom, mut energy, mut min_f) = (0.0, [0.0; 3], 0.0, f64::INFINITY);
        for v in 0..g.n_v_total {
            let vel = g.velocity(v);
            let s = h.slice(v);
            let hx: f64 = s.iter().sum::<f64>() * g.w_x;
            let fx = self.mu[v] * vol + epsilon * hx;
            mass += fx;
            for a in 0..g.dim {
                mom[a] += vel[a] * fx;
            }
            energy += g.speed_sq(v) * fx;
            for &x in s {
                min_f = min_f.min(self.mu[v] + epsilon * x);
            }
        }
        traj.times.push(t);
        traj.mass.push(mass * g.w_v);
        traj.momentum.push(mom.map(|m| m * g.w_v));
        traj.energy.push(energy * g.w_v);
        traj.min_f.push(min_f);
        Ok(())
    }
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_norm(&self, spec: usize) -> f64 {
        *self.norms[spec].last().expect("empty trajectory")
    }

    /// Largest deviation of mass, momentum or energy from their initial
    /// values, relative to the size of the initial perturbation.
    pub fn ledger_drift(&self) -> f64 {
        if self.is_empty() || self.ledger_scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.len() {
            worst = worst.max((self.mass[r] - self.mass[0]).abs());
            worst = worst.max((self.energy[r] - self.energy[0]).abs());
            for a in 0..self.dim {
                worst = worst.max((self.momentum[r][a] - self.momentum[0][a]).abs());
            }
        }
        worst / self.ledger_scale
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["time".to_string()];
        h.extend(self.labels.iter().cloned());
        h.push("mass".into());
        for a in ["momentum_x", "momentum_y", "momentum_z"].iter().take(self.dim) {
            h.push(a.to_string());
        }
        h.push("energy".into());
        h.push("min_f".into());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header())?;
        for r in 0..self.len() {
            let mut row = vec![fmt(self.times[r])];
            row.extend(self.norms.iter().map(|n| fmt(n[r])));
            row.push(fmt(self.mass[r]));
            row.extend(self.momentum[r][..self.dim].iter().map(|&m| fmt(m)));
            row.push(fmt(self.energy[r]));
            row.push(fmt(self.min_f[r]));
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Full-precision, platform-independent float formatting for CSV output.
pub fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// Number of steps and the step size covering [0, t_end].
fn step_plan(cfg: &EvolveConfig, bound: f64) -> Result<(usize, f64)> {
    match cfg.dt {
        Some(dt) => {
            if dt > bound * (1.0 + 1e-12) {
                return Err(Error::TimeStep { dt, max_dt: bound });
            }
            let n = (cfg.t_end / dt - 1e-9).ceil().max(1.0) as usize;
            Ok((n, dt))
        }
        None => {
            let n = (cfg.t_end / bound).ceil().max(1.0) as usize;
            Ok((n, cfg.t_end / n as f64))
        }
    }
}

fn check_input(h: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<()> {
    cfg.validate()?;
    h.check(&model.grid)
}

/// Records ||S(t) h_in - Π_G h_in|| for every configured norm.
pub fn evolve_linear(h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<Trajectory> {
    check_input(h_in, cfg, model)?;
    let eps = cfg.epsilon;
    let (steps, dt) = step_plan(cfg, max_dt(cfg.dt_ctrl, eps, model.nu_max(), 0.0))?;
    let prop = StrangPropagator::new(&model.grid, &model.l.matrix, dt, eps);
    let stationary = model.projector.pi_g(h_in);
    let mut rec = Recorder::new(model, &cfg.record_norms, Some(stationary));
    let mut traj = Trajectory::default();
    rec.start(&mut traj, h_in, eps, dt)?;
    let mut h = h_in.clone();
    snapshot(&mut traj, cfg, 0, 0.0, &h);
    for s in 1..=steps {
        h = prop.apply(&h);
        let t = s as f64 * dt;
        if s % cfg.record_stride == 0 || s == steps {
            rec.record(&mut traj, t, &h, eps)?;
        }
        snapshot(&mut traj, cfg, s, t, &h);
    }
    traj.final_field = Some(h);
    Ok(traj)
}

fn snapshot(traj: &mut Trajectory, cfg: &EvolveConfig, step: usize, t: f64, h: &DistributionField) {
    if let Some(k) = cfg.snapshot_stride {
        if step.is_multiple_of(k) {
            traj.snapshots.push((t, h.clone()));
        }
    }
}

fn check_nonlinear_data(h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<()> {
    let fft = SpatialFft::new(&model.grid);
    let size = weighted_norm_with(h_in, &cfg.record_norms[0], &model.grid, Some(model.collision.nu()), Some(&fft))?;
    if size > cfg.eta {
        return Err(Error::Config(format!("initial data of size {size:.3e} exceeds the smallness bound {}", cfg.eta)));
    }
    let kern = model.projector.pi_g(h_in);
    if kern.max_abs() > 1e-10 * h_in.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Config("initial data has a nonzero projection onto the global kernel".into()));
    }
    Ok(())
}

/// ε⁻¹ ||Q(h, h)||_∞ / ||h||_∞ at the initial data: the explicit rate.
fn nonlinear_rate(model: &Model, h: &DistributionField, epsilon: f64) -> Result<f64> {
    let m = h.max_abs();
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * model.collision.eval_q(h, h)?.max_abs() / (m * epsilon))
}

/// ∂_t h = G_ε h + ε⁻¹ Q(h, h) by integrating-factor Heun:
/// u* = S(h + dt N(h)), h ← S(h + dt/2 N(h)) + dt/2 N(u*).
pub fn evolve_nonlinear(h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<Trajectory> {
    check_input(h_in, cfg, model)?;
    check_nonlinear_data(h_in, cfg, model)?;
    let eps = cfg.epsilon;
    let rate = nonlinear_rate(model, h_in, eps)?;
    let (steps, dt) = step_plan(cfg, max_dt(cfg.dt_ctrl, eps, model.nu_max(), rate))?;
    let prop = StrangPropagator::new(&model.grid, &model.l.matrix, dt, eps);
    let mut rec = Recorder::new(model, &cfg.record_norms, None);
    let mut traj = Trajectory::default();
    rec.start(&mut traj, h_in, eps, dt)?;
    let nl = |h: &DistributionField| -> Result<DistributionField> {
        let mut q = model.collision.eval_q(h, h)?;
        q.scale(1.0 / eps);
        Ok(q)
    };
    let mut h = h_in.clone();
    snapshot(&mut traj, cfg, 0, 0.0, &h);
    for s in 1..=steps {
        h = heun_step(&prop, &h, dt, &nl(&h)?, &nl)?;
        let t = s as f64 * dt;
        if s % cfg.record_stride == 0 || s == steps {
            rec.record(&mut traj, t, &h, eps)?;
        }
        snapshot(&mut traj, cfg, s, t, &h);
    }
    traj.final_field = Some(h);
    Ok(traj)
}

fn heun_step(
    prop: &StrangPropagator,
    h: &DistributionField,
    dt: f64,
    n0: &DistributionField,
    nl: &impl Fn(&DistributionField) -> Result<DistributionField>,
) -> Result<DistributionField> {
    let mut pred = h.clone();
    pred.axpy(dt, n0);
    let u = prop.apply(&pred);
    let mut half = h.clone();
    half.axpy(0.5 * dt, n0);
    let mut out = prop.apply(&half);
    out.axpy(0.5 * dt, &nl(&u)?);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SplitRun {
    pub h0: Trajectory,
    pub h1: Trajectory,
    pub sum: Trajectory,
    pub final_h0: DistributionField,
    pub final_h1: DistributionField,
}

fn split_bound(split: &SplitOperators, h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<f64> {
    let eps = cfg.epsilon;
    let rate = nonlinear_rate(model, h_in, eps)? + dense::norm_1(&split.a.matrix) / (eps * eps);
    Ok(max_dt(cfg.dt_ctrl, eps, model.nu_max(), rate))
}

/// Largest step the split system accepts for this data and configuration.
pub fn split_step_bound(h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<f64> {
    check_input(h_in, cfg, model)?;
    split_bound(&model.split(cfg.delta)?, h_in, cfg, model)
}

/// Co-evolves
/// ∂_t h⁰ = B h⁰ + ε⁻¹Q(h⁰,h⁰) + 2ε⁻¹Q(h⁰,h¹), h⁰(0) = h_in,
/// ∂_t h¹ = G h¹ + ε⁻¹Q(h¹,h¹) + ε⁻²A h⁰,      h¹(0) = 0,
/// each with its own linear propagator and integrating-factor Heun.
pub fn evolve_split_system(h_in: &DistributionField, cfg: &EvolveConfig, model: &Model) -> Result<SplitRun> {
    check_input(h_in, cfg, model)?;
    check_nonlinear_data(h_in, cfg, model)?;
    let eps = cfg.epsilon;
    let split = model.split(cfg.delta)?;
    let (steps, dt) = step_plan(cfg, split_bound(&split, h_in, cfg, model)?)?;
    let p0 = StrangPropagator::new(&model.grid, &split.b_velocity(), dt, eps);
    let p1 = StrangPropagator::new(&model.grid, &model.l.matrix, dt, eps);
    let q = &model.collision;
    let inv_e = 1.0 / eps;
    let inv_e2 = inv_e * inv_e;
    let rhs = |h0: &DistributionField, h1: &DistributionField| -> Result<(DistributionField, DistributionField)> {
        // Q(h⁰,h⁰) + 2Q(h⁰,h¹) = Q(h⁰, h⁰ + 2h¹) by symmetry.
        let mut w = h0.clone();
        w.axpy(2.0, h1);
        let mut n0 = q.eval_q(h0, &w)?;
        n0.scale(inv_e);
        let mut n1 = dense::apply_velocity_op(&split.a.matrix, h0);
        n1.scale(inv_e2);
        n1.axpy(inv_e, &q.eval_q(h1, h1)?);
        Ok((n0, n1))
    };
    let specs = &cfg.record_norms;
    let (mut r0, mut r1, mut rs) =
        (Recorder::new(model, specs, None), Recorder::new(model, specs, None), Recorder::new(model, specs, None));
    let (mut t0, mut t1, mut ts) = (Trajectory::default(), Trajectory::default(), Trajectory::default());
    let mut h0 = h_in.clone();
    let mut h1 = DistributionField::zeros(&model.grid);
    r0.start(&mut t0, &h0, eps, dt)?;
    r1.start(&mut t1, &h1, eps, dt)?;
    r1.blowup_base = t0.norms[0][0];
    rs.start(&mut ts, h_in, eps, dt)?;
    for s in 1..=steps {
        let (n0, n1) = rhs(&h0, &h1)?;
        let mut a0 = h0.clone();
        a0.axpy(dt, &n0);
        let mut a1 = h1.clone();
        a1.axpy(dt, &n1);
        let (u0, u1) = (p0.apply(&a0), p1.apply(&a1));
        let (m0, m1) = rhs(&u0, &u1)?;
        let mut b0 = h0.clone();
        b0.axpy(0.5 * dt, &n0);
        let mut b1 = h1.clone();
        b1.axpy(0.5 * dt, &n1);
        h0 = p0.apply(&b0);
        h0.axpy(0.5 * dt, &m0);
        h1 = p1.apply(&b1);
        h1.axpy(0.5 * dt, &m1);
        let t = s as f64 * dt;
        if s % cfg.record_stride == 0 || s == steps {
            let mut sum = h0.clone();
            sum.axpy(1.0, &h1);
            r0.record(&mut t0, t, &h0, eps)?;
            r1.record(&mut t1, t, &h1, eps)?;
            rs.record(&mut ts, t, &sum, eps)?;
        }
    }
    Ok(SplitRun { h0: t0, h1: t1, sum: ts, final_h0: h0, final_h1: h1 })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r2: f64,
    pub samples: usize,
    /// r² >= 0.9.
    pub reliable: bool,
}

pub const MIN_FIT_SAMPLES: usize = 10;

/// Least-squares line through (t, ln n) for t >= t_skip: n ≈ C e^{-rate t}.
pub fn fit_decay_rate(times: &[f64], norms: &[f64], t_skip: f64) -> Result<DecayFit> {
    if times.len() != norms.len() {
        return Err(Error::Fit("times and norms differ in length".into()));
    }
    let pts: Vec<(f64, f64)> = times.iter().zip(norms).filter(|(t, _)| **t >= t_skip).map(|(t, n)| (*t, *n)).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!("{} samples after the transient, need {MIN_FIT_SAMPLES}", pts.len())));
    }
    if let Some(&(t, n)) = pts.iter().find(|(_, n)| !(*n > 0.0)) {
        return Err(Error::Fit(format!("non-positive norm {n} at t = {t}")));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1.ln()).sum::<f64>() / m;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, n) in &pts {
        let (dt, dy) = (t - tm, n.ln() - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::Fit("all samples at one time".into()));
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit { rate: -slope, amplitude: (ym - slope * tm).exp(), r2, samples: pts.len(), reliable: r2 >= 0.9 })
}

/// Transient window excluded from rate fits.
pub fn transient_window(epsilon: f64) -> f64 {
    5.0 * epsilon * epsilon
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct T1Table {
    pub epsilon: f64,
    pub delta: f64,
    pub k: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

/// ||ε⁻² A S_B(t)|| as an operator on L¹_v(⟨v⟩^k) restricted to spatially
/// homogeneous fields, where transport drops out and the semigroup is the
/// matrix exponential of t ε⁻² (B₂ - ν). `times` must be increasing and
/// evenly spaced.
pub fn measure_t1(split: &SplitOperators, grid: &PhaseGrid, epsilon: f64, k: f64, times: &[f64]) -> Result<T1Table> {
    if times.is_empty() {
        return Err(Error::Config("empty time grid".into()));
    }
    let m: Vec<f64> = (0..grid.n_v_total).map(|i| grid.bracket(i).powf(k)).collect();
    let e2 = epsilon.powi(-2);
    let b = split.b_velocity();
    let mut semigroup = if times[0] == 0.0 {
        dense::identity(b.nrows())
    } else {
        dense::expm(&Matrix::from_fn(b.nrows(), b.ncols(), |i, j| times[0] * e2 * b[(i, j)]))
    };
    let step = if times.len() > 1 {
        let h = times[1] - times[0];
        if times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) || !(h > 0.0) {
            return Err(Error::Config("T1 time grid must be evenly spaced and increasing".into()));
        }
        Some(dense::expm(&Matrix::from_fn(b.nrows(), b.ncols(), |i, j| h * e2 * b[(i, j)])))
    } else {
        None
    };
    let mut norms = Vec::with_capacity(times.len());
    for s in 0..times.len() {
        if s > 0 {
            semigroup = dense::mul(step.as_ref().expect("step"), &semigroup);
        }
        let t1 = dense::mul(&split.a.matrix, &semigroup);
        norms.push(e2 * dense::weighted_l1_operator_norm(&t1, &m));
    }
    Ok(T1Table { epsilon, delta: split.mollifier.delta, k, times: times.to_vec(), norms })
}
