//! Hydrodynamic moments of kinetic fields, Chapman–Enskog transport
//! coefficients of L, and a pseudo-spectral solver for the limiting
//! incompressible Navier–Stokes–Fourier system
//!
//! ∂_t u + u·∇u + ∇p = ν Δu,  div u = 0,
//! ∂_t θ + u·∇θ = κ Δθ,       ∇(ρ + θ) = 0.

use std::io::Write;

use rustfft::num_complex::Complex64;

use crate::collision::CollisionOperator;
use crate::dense::{self, Matrix};
use crate::error::{Error, Result};
use crate::evolve::fmt;
use crate::grid::{maxwellian_at, DistributionField, PhaseGrid, SpatialFft};
use crate::linop::{add_transport, KernelProjector, LinearOperator};

/// Spatial fields on the periodic lattice, one value per spatial node.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct HydroState {
    pub rho: Vec<f64>,
    /// u[a][x].
    pub u: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub nu_visc: f64,
    pub kappa: f64,
    pub pressure: Vec<f64>,
}

impl HydroState {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self {
            rho: vec![0.0; n],
            u: vec![vec![0.0; n]; dim],
            theta: vec![0.0; n],
            pressure: vec![0.0; n],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// CSV grid export: x, y[, z], rho, u_x, u_y[, u_z], theta, pressure.
    pub fn write_csv<W: Write>(&self, grid: &PhaseGrid, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let axes = ["x", "y", "z"];
        let mut header: Vec<String> = axes[..grid.dim].iter().map(|s| s.to_string()).collect();
        header.push("rho".into());
        header.extend(axes[..grid.dim].iter().map(|a| format!("u_{a}")));
        header.extend(["theta".to_string(), "pressure".to_string()]);
        wr.write_record(&header)?;
        for x in 0..self.len() {
            let p = grid.position(x);
            let mut row: Vec<String> = p[..grid.dim].iter().map(|&c| fmt(c)).collect();
            row.push(fmt(self.rho[x]));
            row.extend(self.u.iter().map(|c| fmt(c[x])));
            row.push(fmt(self.theta[x]));
            row.push(fmt(self.pressure.get(x).copied().unwrap_or(0.0)));
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// ρ = ∫h, u = ∫v h, θ = (1/d)∫(|v|² - d) h at every spatial node.
pub fn moments(h: &DistributionField, grid: &PhaseGrid) -> Result<HydroState> {
    h.check(grid)?;
    let d = grid.dim;
    let n = grid.n_x_total;
    let mut st = HydroState::zeros(d, n);
    for v in 0..grid.n_v_total {
        let vel = grid.velocity(v);
        let e = (grid.speed_sq(v) - d as f64) / d as f64;
        for (x, &hx) in h.slice(v).iter().enumerate() {
            let w = grid.w_v * hx;
            st.rho[x] += w;
            for a in 0..d {
                st.u[a][x] += vel[a] * w;
            }
            st.theta[x] += e * w;
        }
    }
    Ok(st)
}

/// μ(ρ + u·v + θ(|v|² - d)/2): the kernel field with the given moments.
pub fn kernel_field(state: &HydroState, grid: &PhaseGrid) -> DistributionField {
    let d = grid.dim;
    let mut h = DistributionField::zeros(grid);
    for v in 0..grid.n_v_total {
        let vel = grid.velocity(v).to_vec();
        let s = grid.speed_sq(v);
        let mu = maxwellian_at(d, s);
        for (x, o) in h.slice_mut(v).iter_mut().enumerate() {
            let mut val = state.rho[x] + 0.5 * state.theta[x] * (s - d as f64);
            for a in 0..d {
                val += state.u[a][x] * vel[a];
            }
            *o = mu * val;
        }
    }
    h
}

/// Initial data on the incompressible and Boussinesq constraints: u is
/// Leray-projected, θ is kept and ρ = -θ.
pub fn well_prepared(u: &[Vec<f64>], theta: &[f64], grid: &PhaseGrid) -> Result<DistributionField> {
    let fft = SpatialFft::new(grid);
    let mut st = HydroState::zeros(grid.dim, grid.n_x_total);
    st.u = leray_project(u, &fft)?;
    st.theta = theta.to_vec();
    st.rho = theta.iter().map(|t| -t).collect();
    Ok(kernel_field(&st, grid))
}

/// Replaces the kernel component of h at every node by its well-prepared
/// counterpart (u Leray-projected, θ' = (θ - ρ)/2, ρ' = -θ'), keeping the
/// part of h orthogonal to the collision invariants.
pub fn make_well_prepared(h: &DistributionField, grid: &PhaseGrid) -> Result<DistributionField> {
    let m = moments(h, grid)?;
    let mut out = h.clone();
    out.axpy(-1.0, &kernel_field(&m, grid));
    let theta: Vec<f64> = m.theta.iter().zip(&m.rho).map(|(t, r)| 0.5 * (t - r)).collect();
    out.axpy(1.0, &well_prepared(&m.u, &theta, grid)?);
    Ok(out)
}

fn to_spectral(f: &[f64], fft: &SpatialFft) -> Vec<Complex64> {
    let mut b: Vec<Complex64> = f.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    fft.forward(&mut b);
    b
}

fn to_physical(mut b: Vec<Complex64>, fft: &SpatialFft) -> Vec<f64> {
    fft.inverse(&mut b);
    b.into_iter().map(|c| c.re).collect()
}

fn project_modes(uh: &mut [Vec<Complex64>], fft: &SpatialFft, dim: usize) {
    for m in 0..fft.len() {
        let k = fft.wavevector(m);
        let k2: f64 = k[..dim].iter().map(|c| c * c).sum();
        if k2 == 0.0 {
            continue;
        }
        let kdotu: Complex64 = (0..dim).map(|a| uh[a][m] * k[a]).sum();
        for a in 0..dim {
            uh[a][m] -= kdotu * (k[a] / k2);
        }
    }
}

/// Divergence-free part of a periodic vector field.
pub fn leray_project(u: &[Vec<f64>], fft: &SpatialFft) -> Result<Vec<Vec<f64>>> {
    let dim = u.len();
    if u.iter().any(|c| c.len() != fft.len()) {
        return Err(Error::Shape("velocity field does not match the spatial lattice".into()));
    }
    let mut uh: Vec<Vec<Complex64>> = u.iter().map(|c| to_spectral(c, fft)).collect();
    project_modes(&mut uh, fft, dim);
    Ok(uh.into_iter().map(|c| to_physical(c, fft)).collect())
}

/// Max-norm of the spectral divergence.
pub fn divergence_max(u: &[Vec<f64>], fft: &SpatialFft) -> f64 {
    let dim = u.len();
    let mut div = vec![0.0; fft.len()];
    for (a, c) in u.iter().enumerate() {
        let mut orders = vec![0; dim];
        orders[a] = 1;
        for (d, v) in div.iter_mut().zip(fft.derivative(c, &orders)) {
            *d += v;
        }
    }
    div.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TransportCoeffs {
    /// ν in ∂_t u = νΔu + ...
    pub nu_visc: f64,
    /// κ in ∂_t θ = κΔθ + ...
    pub kappa: f64,
    /// Max relative residual ||L X - Φ|| / ||Φ|| over all right-hand sides.
    pub solve_residual: f64,
    /// Relative difference between solutions from two differently
    /// regularized factorizations.
    pub factorization_gap: f64,
}

/// Chapman–Enskog coefficients. With A = v⊗v - |v|²I/d,
/// B = v(|v|² - (d+2))/2 and X, Y ∈ Ker(L)^⊥ solving L X = μA, L Y = μB:
///
/// ν = -1/((d-1)(d+2)) Σ_ij ∫ A_ij X_ij dv,
/// κ = -2/(d(d+2)) Σ_i ∫ B_i Y_i dv.
///
/// Both are normalized so that the relaxation operator L = -(I - π_L) gives
/// ν = κ = 1.
fn pi_l_matrix(kp: &KernelProjector, n: usize) -> Matrix {
    let mut pi = dense::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let c = kp.pi_l(&e);
        e[j] = 0.0;
        for i in 0..n {
            pi[(i, j)] = c[i];
        }
    }
    pi
}

/// First Chapman–Enskog corrector h¹ of kernel-valued data h⁰: the solution
/// in Ker^⊥ of L h¹ = v·∇_x h⁰ - Q(h⁰,h⁰). Adding εh¹ to well-prepared data
/// leaves its moments unchanged and removes the O(ε) acoustic initial layer.
pub fn first_order_corrector(
    h0: &DistributionField,
    l: &LinearOperator,
    collision: Option<&CollisionOperator>,
    grid: &PhaseGrid,
) -> Result<DistributionField> {
    h0.check(grid)?;
    let n = grid.n_v_total;
    let fft = SpatialFft::new(grid);
    let mut rhs = DistributionField::zeros(grid);
    add_transport(&mut rhs, h0, grid, 1.0, &fft);
    if let Some(op) = collision {
        rhs.axpy(-1.0, &op.eval_q(h0, h0)?);
    }
    let kp = KernelProjector::new(grid)?;
    let mut b = dense::zeros(n, grid.n_x_total);
    let mut col = vec![0.0; n];
    for x in 0..grid.n_x_total {
        for (v, c) in col.iter_mut().enumerate() {
            *c = rhs.slice(v)[x];
        }
        let k = kp.pi_l(&col);
        for v in 0..n {
            b[(v, x)] = col[v] - k[v];
        }
    }
    let pi = pi_l_matrix(&kp, n);
    let sol = dense::solve(&Matrix::from_fn(n, n, |i, j| l.matrix[(i, j)] - pi[(i, j)]), &b)?;
    let mut out = DistributionField::zeros(grid);
    for v in 0..n {
        for (x, o) in out.slice_mut(v).iter_mut().enumerate() {
            *o = sol[(v, x)];
        }
    }
    Ok(out)
}

pub fn estimate_transport_coeffs(l: &LinearOperator, grid: &PhaseGrid) -> Result<TransportCoeffs> {
    let d = grid.dim;
    if d < 2 {
        return Err(Error::Config("transport coefficients need d >= 2".into()));
    }
    let n = grid.n_v_total;
    let kp = KernelProjector::new(grid)?;
    let pi = pi_l_matrix(&kp, n);
    let mu = grid.maxwellian();
    let df = d as f64;
    let mut rhs_a = Vec::new();
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in 0..d {
            pairs.push((i, j));
            rhs_a.push(
                (0..n)
                    .map(|v| {
                        let vel = grid.velocity(v);
                        let delta = if i == j { grid.speed_sq(v) / df } else { 0.0 };
                        vel[i] * vel[j] - delta
                    })
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let rhs_b: Vec<Vec<f64>> =
        (0..d).map(|i| (0..n).map(|v| 0.5 * grid.velocity(v)[i] * (grid.speed_sq(v) - (df + 2.0))).collect()).collect();
    let all: Vec<&Vec<f64>> = rhs_a.iter().chain(rhs_b.iter()).collect();
    // Right-hand sides projected onto Ker^⊥ so the quadrature tail of their
    // moments does not leak into the solve.
    let mut b = dense::zeros(n, all.len());
    for (c, f) in all.iter().enumerate() {
        let raw: Vec<f64> = (0..n).map(|v| mu[v] * f[v]).collect();
        let k = kp.pi_l(&raw);
        for v in 0..n {
            b[(v, c)] = raw[v] - k[v];
        }
    }
    // On Ker^⊥, (L - s π_L) X = b has the same solution for every s != 0.
    let shifted = |s: f64| Matrix::from_fn(n, n, |i, j| l.matrix[(i, j)] - s * pi[(i, j)]);
    let x1 = dense::solve(&shifted(1.0), &b)?;
    let x2 = dense::solve(&shifted(3.7), &b)?;
    let lx = dense::mul(&l.matrix, &x1);
    let mut residual = 0.0f64;
    let mut gap = 0.0f64;
    for c in 0..all.len() {
        let bn = (0..n).map(|v| b[(v, c)].abs()).fold(0.0, f64::max);
        let xn = (0..n).map(|v| x1[(v, c)].abs()).fold(0.0, f64::max);
        for v in 0..n {
            residual = residual.max((lx[(v, c)] - b[(v, c)]).abs() / bn);
            gap = gap.max((x1[(v, c)] - x2[(v, c)]).abs() / xn);
        }
    }
    let visc: f64 =
        (0..pairs.len()).map(|c| (0..n).map(|v| rhs_a[c][v] * x1[(v, c)]).sum::<f64>()).sum::<f64>() * grid.w_v;
    let off = pairs.len();
    let heat: f64 = (0..d).map(|c| (0..n).map(|v| rhs_b[c][v] * x1[(v, off + c)]).sum::<f64>()).sum::<f64>() * grid.w_v;
    let nu_visc = -visc / ((df - 1.0) * (df + 2.0));
    let kappa = -2.0 / (df * (df + 2.0)) * heat;
    if !(nu_visc > 0.0 && kappa > 0.0) {
        return Err(Error::Linalg(format!("non-positive transport coefficients nu = {nu_visc}, kappa = {kappa}")));
    }
    Ok(TransportCoeffs { nu_visc, kappa, solve_residual: residual, factorization_gap: gap })
}

/// Pseudo-spectral solver on the 2D periodic box: exact integrating factor
/// for the diffusion, Leray projection, 2/3-rule dealiasing and classical
/// fourth-order Runge–Kutta on the nonlinear terms.
#[derive(Debug)]
pub struct NsSolver {
    fft: SpatialFft,
    dim: usize,
    pub nu_visc: f64,
    pub kappa: f64,
    k2: Vec<f64>,
    keep: Vec<bool>,
    dx: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct NsTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<HydroState>,
    /// Max |div u| at each recorded time.
    pub divergence: Vec<f64>,
    /// Whether the initial velocity had to be projected.
    pub projected_initial: bool,
}

#[derive(Clone)]
struct Spectral {
    u: Vec<Vec<Complex64>>,
    theta: Vec<Complex64>,
}

impl Spectral {
    fn combine(&self, a: f64, other: &Spectral) -> Spectral {
        let mut out = self.clone();
        for (c, o) in out.u.iter_mut().zip(&other.u) {
            for (x, y) in c.iter_mut().zip(o) {
                *x += a * y;
            }
        }
        for (x, y) in out.theta.iter_mut().zip(&other.theta) {
            *x += a * y;
        }
        out
    }
}

impl NsSolver {
    pub fn new(grid: &PhaseGrid, nu_visc: f64, kappa: f64) -> Result<Self> {
        if grid.dim != 2 {
            return Err(Error::Config("the Navier-Stokes solver is two-dimensional".into()));
        }
        if !(nu_visc > 0.0 && kappa > 0.0) {
            return Err(Error::Config("viscosity and diffusivity must be positive".into()));
        }
        let fft = SpatialFft::new(grid);
        let n = grid.n_x;
        let mut k2 = Vec::with_capacity(fft.len());
        let mut keep = Vec::with_capacity(fft.len());
        for m in 0..fft.len() {
            let k = fft.wavevector(m);
            k2.push(k[0] * k[0] + k[1] * k[1]);
            let idx = fft.mode_index(m);
            keep.push(idx[..2].iter().all(|&i| {
                let s = if i <= n / 2 { i } else { n - i };
                3 * s < n
            }));
        }
        Ok(Self { fft, dim: 2, nu_visc, kappa, k2, keep, dx: grid.dx })
    }

    fn forward(&self, st: &HydroState) -> Spectral {
        Spectral {
            u: st.u.iter().map(|c| to_spectral(c, &self.fft)).collect(),
            theta: to_spectral(&st.theta, &self.fft),
        }
    }

    fn grad(&self, fh: &[Complex64], axis: usize) -> Vec<f64> {
        let b: Vec<Complex64> =
            fh.iter().enumerate().map(|(m, c)| c * Complex64::new(0.0, self.fft.wavevector(m)[axis])).collect();
        to_physical(b, &self.fft)
    }

    /// Dealiased spectra of u·∇u (unprojected) and u·∇θ.
    fn advection(&self, s: &Spectral) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
        let mask = |v: &[Complex64]| -> Vec<Complex64> {
            v.iter().zip(&self.keep).map(|(c, &k)| if k { *c } else { Complex64::default() }).collect()
        };
        let uh: Vec<Vec<Complex64>> = s.u.iter().map(|c| mask(c)).collect();
        let th = mask(&s.theta);
        let u: Vec<Vec<f64>> = uh.iter().map(|c| to_physical(c.clone(), &self.fft)).collect();
        let n = self.fft.len();
        let mut fu = vec![vec![0.0; n]; self.dim];
        let mut ft = vec![0.0; n];
        for b in 0..self.dim {
            let dth = self.grad(&th, b);
            for x in 0..n {
                ft[x] += u[b][x] * dth[x];
            }
            for a in 0..self.dim {
                let dua = self.grad(&uh[a], b);
                for x in 0..n {
                    fu[a][x] += u[b][x] * dua[x];
                }
            }
        }
        let fin = |f: &[f64]| -> Vec<Complex64> {
            let mut c = mask(&to_spectral(f, &self.fft));
            // The mean of a divergence-free advection term vanishes exactly.
            c[0] = Complex64::default();
            c
        };
        (fu.iter().map(|f| fin(f)).collect(), fin(&ft))
    }

    fn rhs(&self, s: &Spectral) -> Spectral {
        let (mut fu, ft) = self.advection(s);
        project_modes(&mut fu, &self.fft, self.dim);
        Spectral {
            u: fu.into_iter().map(|c| c.into_iter().map(|z| -z).collect()).collect(),
            theta: ft.into_iter().map(|z| -z).collect(),
        }
    }

    fn decay(&self, s: &Spectral, tau: f64) -> Spectral {
        let mut out = s.clone();
        for c in out.u.iter_mut() {
            for (z, k2) in c.iter_mut().zip(&self.k2) {
                *z *= (-self.nu_visc * k2 * tau).exp();
            }
        }
        for (z, k2) in out.theta.iter_mut().zip(&self.k2) {
            *z *= (-self.kappa * k2 * tau).exp();
        }
        out
    }

    fn state(&self, s: &Spectral, rho_plus_theta: f64) -> HydroState {
        let u: Vec<Vec<f64>> = s.u.iter().map(|c| to_physical(c.clone(), &self.fft)).collect();
        let theta = to_physical(s.theta.clone(), &self.fft);
        let rho = theta.iter().map(|t| rho_plus_theta - t).collect();
        // p = -Δ⁻¹ div(u·∇u).
        let (fu, _) = self.advection(s);
        let ph: Vec<Complex64> = (0..self.fft.len())
            .map(|m| {
                if self.k2[m] == 0.0 {
                    return Complex64::default();
                }
                let k = self.fft.wavevector(m);
                let div: Complex64 = (0..self.dim).map(|a| fu[a][m] * Complex64::new(0.0, k[a])).sum();
                div / self.k2[m]
            })
            .collect();
        HydroState { rho, u, theta, nu_visc: self.nu_visc, kappa: self.kappa, pressure: to_physical(ph, &self.fft) }
    }

    /// Moments of the kinetic slow manifold to first order in ε: adds the
    /// compressible velocity ε∇Δ⁻¹∂_tθ and the pressure ρ + θ = εp, split
    /// so that the acoustically inert combination θ - 2ρ/d is unchanged.
    pub fn slow_moments(&self, limit: &HydroState, epsilon: f64) -> Result<HydroState> {
        if limit.u.len() != self.dim || limit.theta.len() != self.fft.len() {
            return Err(Error::Shape("hydrodynamic state does not match the lattice".into()));
        }
        let mut s = self.forward(limit);
        project_modes(&mut s.u, &self.fft, self.dim);
        let n = self.fft.len() as f64;
        let rpt = limit.rho.iter().zip(&limit.theta).map(|(r, t)| r + t).sum::<f64>() / n;
        let mut out = self.state(&s, rpt);
        let (_, adv) = self.advection(&s);
        let df = self.dim as f64;
        for a in 0..self.dim {
            let ch: Vec<Complex64> = (0..self.fft.len())
                .map(|m| {
                    if self.k2[m] == 0.0 {
                        return Complex64::default();
                    }
                    let dtheta = -self.kappa * self.k2[m] * s.theta[m] - adv[m];
                    Complex64::new(0.0, -epsilon * self.fft.wavevector(m)[a] / self.k2[m]) * dtheta
                })
                .collect();
            for (u, c) in out.u[a].iter_mut().zip(to_physical(ch, &self.fft)) {
                *u += c;
            }
        }
        for x in 0..self.fft.len() {
            let p = epsilon * out.pressure[x];
            out.rho[x] += p * df / (df + 2.0);
            out.theta[x] += p * 2.0 / (df + 2.0);
        }
        Ok(out)
    }

    /// Integrates to t_end with `steps` equal steps, recording every
    /// `record_every` steps.
    pub fn solve(&self, initial: &HydroState, t_end: f64, steps: usize, record_every: usize) -> Result<NsTrajectory> {
        if steps == 0 || record_every == 0 || !(t_end > 0.0) {
            return Err(Error::Config("solve_ns needs t_end > 0 and positive step counts".into()));
        }
        if initial.u.len() != self.dim || initial.theta.len() != self.fft.len() {
            return Err(Error::Shape("initial hydrodynamic state does not match the lattice".into()));
        }
        let dt = t_end / steps as f64;
        let mut traj = NsTrajectory::default();
        let scale = initial.u.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        traj.projected_initial = divergence_max(&initial.u, &self.fft) > 1e-10 * scale / self.dx;
        let mut s = self.forward(initial);
        project_modes(&mut s.u, &self.fft, self.dim);
        let n = self.fft.len() as f64;
        let rpt = initial.rho.iter().zip(&initial.theta).map(|(r, t)| r + t).sum::<f64>() / n;
        let record = |traj: &mut NsTrajectory, t: f64, s: &Spectral| {
            let st = self.state(s, rpt);
            traj.divergence.push(divergence_max(&st.u, &self.fft));
            traj.times.push(t);
            traj.states.push(st);
        };
        record(&mut traj, 0.0, &s);
        for step in 1..=steps {
            let umax =
                s.u.iter()
                    .map(|c| to_physical(c.clone(), &self.fft).into_iter().fold(0.0f64, |m, v| m.max(v.abs())))
                    .fold(0.0, f64::max);
            let cfl = dt * umax * 2.0 / self.dx;
            if cfl > 1.0 {
                return Err(Error::BlowUp(format!("CFL number {cfl:.3} exceeds 1 at step {step}")));
            }
            let a = self.rhs(&s);
            let half = self.decay(&s, 0.5 * dt);
            let s1 = self.decay(&s.combine(0.5 * dt, &a), 0.5 * dt);
            let b = self.rhs(&s1);
            let s2 = half.combine(0.5 * dt, &b);
            let c = self.rhs(&s2);
            let s3 = self.decay(&half, 0.5 * dt).combine(dt, &self.decay(&c, 0.5 * dt));
            let d = self.rhs(&s3);
            let mut next = self.decay(&s.combine(dt / 6.0, &a), dt);
            next = next.combine(dt / 3.0, &self.decay(&b.combine(1.0, &c), 0.5 * dt));
            next = next.combine(dt / 6.0, &d);
            s = next;
            if step % record_every == 0 || step == steps {
                record(&mut traj, step as f64 * dt, &s);
            }
        }
        Ok(traj)
    }
}

/// Well-prepared kinetic data for the limit state `limit` at Knudsen number
/// ε, free of an O(ε) initial layer: slow-manifold moments plus the first
/// Chapman–Enskog corrector.
pub fn slow_initial_data(
    limit: &HydroState,
    epsilon: f64,
    l: &LinearOperator,
    collision: Option<&CollisionOperator>,
    grid: &PhaseGrid,
) -> Result<DistributionField> {
    let solver = NsSolver::new(grid, limit.nu_visc, limit.kappa)?;
    let mut h = kernel_field(&solver.slow_moments(limit, epsilon)?, grid);
    let h1 = first_order_corrector(&kernel_field(limit, grid), l, collision, grid)?;
    h.axpy(epsilon, &h1);
    Ok(h)
}

/// Convenience wrapper: NS trajectory from a hydrodynamic state.
pub fn solve_ns(initial: &HydroState, t_end: f64, steps: usize, grid: &PhaseGrid) -> Result<NsTrajectory> {
    NsSolver::new(grid, initial.nu_visc, initial.kappa)?.solve(initial, t_end, steps, 1)
}

fn l2(f: &[f64], w: f64) -> f64 {
    (f.iter().map(|x| x * x).sum::<f64>() * w).sqrt()
}

/// ||∇(ρ + θ)||_{L²} / (||∇ρ||_{L²} + ||∇θ||_{L²}), zero when both vanish.
pub fn boussinesq_residual(state: &HydroState, grid: &PhaseGrid) -> f64 {
    let fft = SpatialFft::new(grid);
    let sum: Vec<f64> = state.rho.iter().zip(&state.theta).map(|(r, t)| r + t).collect();
    let grad_norm = |f: &[f64]| -> f64 {
        (0..grid.dim)
            .map(|a| {
                let mut o = vec![0; grid.dim];
                o[a] = 1;
                l2(&fft.derivative(f, &o), grid.w_x).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let denom = grad_norm(&state.rho) + grad_norm(&state.theta);
    if denom == 0.0 {
        return 0.0;
    }
    grad_norm(&sum) / denom
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct HydroErrorRow {
    pub epsilon: f64,
    pub t: f64,
    pub err_rho: f64,
    pub err_u: f64,
    pub err_theta: f64,
    pub boussinesq_residual: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct HydroErrorTable {
    pub rows: Vec<HydroErrorRow>,
    /// Set when the NS trajectory had to be interpolated in time.
    pub resampled: bool,
}

impl HydroErrorTable {
    pub fn max_err_u(&self) -> f64 {
        self.rows.iter().map(|r| r.err_u).fold(0.0, f64::max)
    }

    pub fn max_err_theta(&self) -> f64 {
        self.rows.iter().map(|r| r.err_theta).fold(0.0, f64::max)
    }

    pub fn max_err_rho(&self) -> f64 {
        self.rows.iter().map(|r| r.err_rho).fold(0.0, f64::max)
    }

    pub fn max_boussinesq(&self) -> f64 {
        self.rows.iter().map(|r| r.boussinesq_residual).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epsilon", "t", "err_rho", "err_u", "err_theta", "boussinesq_residual"])?;
        for r in &self.rows {
            wr.write_record([r.epsilon, r.t, r.err_rho, r.err_u, r.err_theta, r.boussinesq_residual].map(fmt))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn lerp_state(a: &HydroState, b: &HydroState, s: f64) -> HydroState {
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| (1.0 - s) * p + s * q).collect() };
    HydroState {
        rho: mix(&a.rho, &b.rho),
        u: a.u.iter().zip(&b.u).map(|(p, q)| mix(p, q)).collect(),
        theta: mix(&a.theta, &b.theta),
        nu_visc: a.nu_visc,
        kappa: a.kappa,
        pressure: mix(&a.pressure, &b.pressure),
    }
}

/// L²_x errors between kinetic moments and the NS fields at each kinetic
/// snapshot time; NS states are linearly interpolated when the time grids
/// differ.
pub fn hydro_limit_error(
    epsilon: f64,
    kinetic: &[(f64, DistributionField)],
    ns: &NsTrajectory,
    grid: &PhaseGrid,
) -> Result<HydroErrorTable> {
    if ns.times.is_empty() {
        return Err(Error::Config("empty Navier-Stokes trajectory".into()));
    }
    let mut table = HydroErrorTable::default();
    let tol = 1e-9 * ns.times.last().copied().unwrap_or(1.0).max(1.0);
    for (t, h) in kinetic {
        let pos = ns.times.partition_point(|&s| s < t - tol);
        let ref_state = if pos < ns.times.len() && (ns.times[pos] - t).abs() <= tol {
            ns.states[pos].clone()
        } else {
            if pos == 0 || pos >= ns.times.len() {
                return Err(Error::Config(format!("kinetic time {t} lies outside the NS trajectory")));
            }
            table.resampled = true;
            let (t0, t1) = (ns.times[pos - 1], ns.times[pos]);
            lerp_state(&ns.states[pos - 1], &ns.states[pos], (t - t0) / (t1 - t0))
        };
        let m = moments(h, grid)?;
        let diff = |a: &[f64], b: &[f64]| -> f64 {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            l2(&d, grid.w_x)
        };
        let err_u = m.u.iter().zip(&ref_state.u).map(|(a, b)| diff(a, b).powi(2)).sum::<f64>().sqrt();
        table.rows.push(HydroErrorRow {
            epsilon,
            t: *t,
            err_rho: diff(&m.rho, &ref_state.rho),
            err_u,
            err_theta: diff(&m.theta, &ref_state.theta),
            boussinesq_residual: boussinesq_residual(&m, grid),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{CollisionOperator, KernelConfig};
    use crate::grid::GridConfig;
    use crate::linop::assemble_l;
    use std::f64::consts::PI;

    fn grid(n_x: usize, n_v: usize) -> PhaseGrid {
        PhaseGrid::new(&GridConfig { dim: 2, n_x, n_v, v_max: 6.0, torus_period: 1.0 }).unwrap()
    }

    #[test]
    fn moments_of_kernel_fields() {
        let g = grid(4, 24);
        let z = moments(&DistributionField::zeros(&g), &g).unwrap();
        assert!(z.rho.iter().chain(&z.theta).all(|&v| v == 0.0));
        let h = DistributionField::from_fn(&g, |_, v| {
            (0.7 + 0.2 * v[0] - 0.4 * v[1]) * maxwellian_at(2, v[0] * v[0] + v[1] * v[1])
        });
        let m = moments(&h, &g).unwrap();
        for x in 0..g.n_x_total {
            assert!((m.rho[x] - 0.7).abs() < 1e-6);
            assert!((m.u[0][x] - 0.2).abs() < 1e-6 && (m.u[1][x] + 0.4).abs() < 1e-6);
            assert!(m.theta[x].abs() < 1e-6);
        }
        let c = 0.3;
        let h = DistributionField::from_fn(&g, |_, v| {
            let s = v[0] * v[0] + v[1] * v[1];
            c * (s - 2.0) / 2.0 * maxwellian_at(2, s)
        });
        let m = moments(&h, &g).unwrap();
        assert!((m.theta[0] - c).abs() < 1e-6);
        assert!(m.rho[0].abs() < 1e-6 && m.u[0][0].abs() < 1e-6);
    }

    #[test]
    fn relaxation_operator_coefficients() {
        // L = -(I - π_L) is the relaxation model: ν = κ = 1.
        let g = grid(4, 24);
        let kp = KernelProjector::new(&g).unwrap();
        let n = g.n_v_total;
        let mut m = dense::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let p = kp.pi_l(&e);
            e[j] = 0.0;
            for i in 0..n {
                m[(i, j)] = p[i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        let l = LinearOperator { matrix: m, kind: crate::linop::OperatorKind::L, delta: None, epsilon_scaling: -2 };
        let c = estimate_transport_coeffs(&l, &g).unwrap();
        // Agreement is limited by the Gaussian tail outside the box.
        assert!((c.nu_visc - 1.0).abs() < 1e-5, "{}", c.nu_visc);
        assert!((c.kappa - 1.0).abs() < 1e-5, "{}", c.kappa);
    }

    #[test]
    fn hard_sphere_coefficients_are_positive_and_consistent() {
        let g = grid(4, 16);
        let op = CollisionOperator::new(&KernelConfig::default(), &g).unwrap();
        let c = estimate_transport_coeffs(&assemble_l(&op), &g).unwrap();
        assert!(c.nu_visc > 0.0 && c.kappa > 0.0);
        assert!(c.solve_residual < 1e-8, "{}", c.solve_residual);
        assert!(c.factorization_gap < 1e-10, "{}", c.factorization_gap);
    }

    #[test]
    fn heat_mode_and_taylor_green_are_exact() {
        let g = PhaseGrid::new(&GridConfig { dim: 2, n_x: 16, n_v: 8, v_max: 6.0, torus_period: 1.0 }).unwrap();
        let (nu, kappa) = (0.05, 0.03);
        let solver = NsSolver::new(&g, nu, kappa).unwrap();
        let k = 2.0 * PI;
        let mut st = HydroState::zeros(2, g.n_x_total);
        for x in 0..g.n_x_total {
            let p = g.position(x);
            st.theta[x] = (k * p[0]).cos();
            st.rho[x] = -st.theta[x];
        }
        let t_end = 0.5;
        let tr = solver.solve(&st, t_end, 50, 10).unwrap();
        let last = tr.states.last().unwrap();
        let want = (-kappa * k * k * t_end).exp();
        let got = last.theta[0];
        assert!((got / want - 1.0).abs() < 1e-12);
        assert!(boussinesq_residual(last, &g) < 1e-12);

        let mut tg = HydroState::zeros(2, g.n_x_total);
        for x in 0..g.n_x_total {
            let p = g.position(x);
            tg.u[0][x] = (k * p[0]).sin() * (k * p[1]).cos();
            tg.u[1][x] = -(k * p[0]).cos() * (k * p[1]).sin();
        }
        let tr = solver.solve(&tg, t_end, 100, 10).unwrap();
        let energy = |s: &HydroState| s.u.iter().flatten().map(|v| v * v).sum::<f64>();
        let e0 = energy(&tr.states[0]);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let want = (-2.0 * nu * 2.0 * k * k * t).exp();
            assert!((energy(s) / e0 / want - 1.0).abs() < 1e-10);
        }
        assert!(tr.divergence.iter().all(|&d| d < 1e-12));
        assert!(!tr.projected_initial);
    }

    #[test]
    fn projection_and_boussinesq() {
        let g = grid(8, 8);
        let fft = SpatialFft::new(&g);
        let u: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                (0..g.n_x_total).map(|x| (2.0 * PI * g.position(x)[a]).sin() + g.position(x)[1 - a].cos()).collect()
            })
            .collect();
        let p = leray_project(&u, &fft).unwrap();
        assert!(divergence_max(&p, &fft) < 1e-12);
        let mut s = HydroState::zeros(2, g.n_x_total);
        s.theta = (0..g.n_x_total).map(|x| (2.0 * PI * g.position(x)[0]).cos()).collect();
        s.rho = s.theta.iter().map(|t| -t).collect();
        assert!(boussinesq_residual(&s, &g) < 1e-14);
        s.rho.fill(2.0);
        s.theta.fill(-0.5);
        assert_eq!(boussinesq_residual(&s, &g), 0.0);
    }

    #[test]
    fn zero_data_zero_error() {
        let g = grid(4, 8);
        let st = HydroState { nu_visc: 1.0, kappa: 1.0, ..HydroState::zeros(2, g.n_x_total) };
        let ns = solve_ns(&st, 0.1, 4, &g).unwrap();
        let snaps: Vec<(f64, DistributionField)> =
            ns.times.iter().map(|&t| (t, DistributionField::zeros(&g))).collect();
        let tab = hydro_limit_error(0.5, &snaps, &ns, &g).unwrap();
        assert_eq!(tab.max_err_u(), 0.0);
        assert!(!tab.resampled);
    }
}
