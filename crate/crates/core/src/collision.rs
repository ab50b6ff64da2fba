//! Bilinear Boltzmann collision operator by direct quadrature.
//!
//! Q(g,h)(v) = 1/2 ∫∫ B(|v - v_*|, cos θ) [g'h'_* + g'_*h' - g h_* - g_* h] dσ dv_*
//! with B = C_Φ |v - v_*|^γ b(cos θ). The sum over the velocity lattice runs over
//! unordered node pairs and half of the sphere: swapping v and v_* or σ and -σ
//! leaves the symmetrized gain integrand unchanged, so every post-collision
//! evaluation is shared by four terms of the full sum.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::dense::{self, Matrix};
use crate::error::{Error, Result};
use crate::grid::{DistributionField, PhaseGrid};
use crate::interp::{InterpKind, Interpolator, Stencil};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum AngularFn {
    /// b ≡ 1/|S^{d-1}|.
    Constant,
    /// b(z) = exp(-(z/width)^2)/|S^{d-1}|, an anisotropic alternative.
    Bump { width: f64 },
}

pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked by GridConfig"),
    }
}

impl AngularFn {
    pub fn eval(&self, z: f64, dim: usize) -> f64 {
        let s = 1.0 / sphere_area(dim);
        match *self {
            Self::Constant => s,
            Self::Bump { width } => s * (-(z / width).powi(2)).exp(),
        }
    }

    /// sup_z b(z).
    pub fn bound(&self, dim: usize) -> f64 {
        1.0 / sphere_area(dim)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelConfig {
    pub gamma: f64,
    pub c_phi: f64,
    pub angular: AngularFn,
    pub n_sigma: usize,
    pub interp: InterpKind,
    /// Remove the (d+2) conserved moments from the output of Q with the
    /// mu^{-1}-orthogonal projector.
    pub conservative: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            c_phi: 1.0,
            angular: AngularFn::Constant,
            n_sigma: 16,
            interp: InterpKind::MaxwellCubic,
            conservative: true,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Kernel(format!("gamma = {} outside [0, 1]", self.gamma)));
        }
        if !(self.c_phi > 0.0) {
            return Err(Error::Kernel(format!("c_phi = {} must be positive", self.c_phi)));
        }
        if self.n_sigma < 2 || !self.n_sigma.is_multiple_of(2) {
            return Err(Error::Kernel(format!("n_sigma = {} must be even and >= 2", self.n_sigma)));
        }
        if let AngularFn::Bump { width } = self.angular {
            if !(width > 0.0) {
                return Err(Error::Kernel(format!("bump width {width} must be positive")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn kinetic(&self, r: f64) -> f64 {
        if self.gamma == 0.0 {
            self.c_phi
        } else {
            self.c_phi * r.powf(self.gamma)
        }
    }
}

/// Directions on S^{d-1} and their weights.
#[derive(Clone, Debug)]
pub struct SigmaQuadrature {
    pub dim: usize,
    pub dirs: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Representatives of each antipodal pair {σ, -σ}.
    pub half: Vec<usize>,
}

impl SigmaQuadrature {
    /// Uniform angles in 2D; in 3D a midpoint rule in cos(polar) times uniform
    /// azimuth (area preserving, so all weights are equal).
    pub fn new(dim: usize, n_sigma: usize) -> Result<Self> {
        let mut dirs = Vec::new();
        match dim {
            2 => {
                for s in 0..n_sigma {
                    let th = 2.0 * PI * (s as f64 + 0.5) / n_sigma as f64;
                    dirs.push([th.cos(), th.sin(), 0.0]);
                }
            }
            3 => {
                let nz = (n_sigma / 2).max(1);
                let nphi = 2 * ((n_sigma / 2).max(1));
                for a in 0..nz {
                    let z = -1.0 + (a as f64 + 0.5) * 2.0 / nz as f64;
                    let r = (1.0 - z * z).sqrt();
                    for b in 0..nphi {
                        let ph = 2.0 * PI * (b as f64 + 0.5) / nphi as f64;
                        dirs.push([r * ph.cos(), r * ph.sin(), z]);
                    }
                }
            }
            _ => return Err(Error::Kernel(format!("collisions need dimension 2 or 3, got {dim}"))),
        }
        let w = sphere_area(dim) / dirs.len() as f64;
        let weights = vec![w; dirs.len()];
        let mut half = Vec::new();
        let mut seen = vec![false; dirs.len()];
        for s in 0..dirs.len() {
            if seen[s] {
                continue;
            }
            let anti = (0..dirs.len())
                .find(|&t| (0..3).all(|a| (dirs[t][a] + dirs[s][a]).abs() < 1e-12))
                .ok_or_else(|| Error::Kernel("sigma rule is not antipodally symmetric".into()))?;
            seen[s] = true;
            seen[anti] = true;
            half.push(s);
        }
        Ok(Self { dim, dirs, weights, half })
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// v' = (v+v_*)/2 + |v-v_*|σ/2, v'_* = (v+v_*)/2 - |v-v_*|σ/2.
pub fn post_collision_velocities(v: &[f64], v_star: &[f64], sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g = v.iter().zip(v_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let vp = (0..v.len()).map(|a| 0.5 * (v[a] + v_star[a]) + 0.5 * g * sigma[a]).collect();
    let vps = (0..v.len()).map(|a| 0.5 * (v[a] + v_star[a]) - 0.5 * g * sigma[a]).collect();
    (vp, vps)
}

/// One collision class of the reduced sum: unordered node pair `(i, j)` and a
/// representative σ of an antipodal pair.
pub struct PairCollision<'a> {
    pub i: usize,
    pub j: usize,
    /// |v_i - v_j|
    pub g: f64,
    /// σ · (v_i - v_j)/|v_i - v_j|
    pub z: f64,
    /// w_v Φ(g) w_σ (angular factor excluded)
    pub weight: f64,
    /// Stencils at v' and v'_*.
    pub st1: &'a Stencil,
    pub st2: &'a Stencil,
}

/// The (d+2)-dimensional kernel moments: mu^{-1}-orthogonal projector onto
/// span{mu, v_a mu, |v|^2 mu} and its complement.
#[derive(Clone, Debug)]
pub struct ConservationProjector {
    mu: Vec<f64>,
    phi: Vec<Vec<f64>>,
    w_v: f64,
    ginv: Matrix,
}

impl ConservationProjector {
    pub fn new(grid: &PhaseGrid) -> Result<Self> {
        let mu = grid.maxwellian();
        let n = grid.n_v_total;
        let mut phi = vec![vec![1.0; n]];
        for a in 0..grid.dim {
            phi.push((0..n).map(|i| grid.velocity(i)[a]).collect());
        }
        phi.push((0..n).map(|i| grid.speed_sq(i)).collect());
        let m = phi.len();
        let g = Matrix::from_fn(m, m, |k, l| (0..n).map(|i| grid.w_v * mu[i] * phi[k][i] * phi[l][i]).sum());
        let ginv = dense::solve(&g, &dense::identity(m))?;
        Ok(Self { mu, phi, w_v: grid.w_v, ginv })
    }

    /// Quadrature moments ∫ q (1, v, |v|^2) dv of a profile.
    pub fn moments(&self, q: &[f64]) -> Vec<f64> {
        self.phi.iter().map(|p| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() * self.w_v).collect()
    }

    /// Removes the conserved moments of a profile in place.
    pub fn apply(&self, q: &mut [f64]) {
        let mom = self.moments(q);
        let m = self.phi.len();
        let lam: Vec<f64> = (0..m).map(|k| (0..m).map(|l| self.ginv[(k, l)] * mom[l]).sum()).collect();
        for (i, qi) in q.iter_mut().enumerate() {
            let c: f64 = (0..m).map(|k| lam[k] * self.phi[k][i]).sum();
            *qi -= self.mu[i] * c;
        }
    }

    /// Same as `apply` at every spatial node of a field.
    pub fn apply_field(&self, h: &mut DistributionField) {
        let (nx, nv) = (h.n_x, h.n_v);
        let m = self.phi.len();
        let mut mom = vec![0.0; m * nx];
        for v in 0..nv {
            let s = h.slice(v);
            for k in 0..m {
                let pk = self.phi[k][v] * self.w_v;
                let dst = &mut mom[k * nx..(k + 1) * nx];
                for (d, x) in dst.iter_mut().zip(s) {
                    *d += pk * x;
                }
            }
        }
        let mut lam = vec![0.0; m * nx];
        for k in 0..m {
            for l in 0..m {
                let g = self.ginv[(k, l)];
                for x in 0..nx {
                    lam[k * nx + x] += g * mom[l * nx + x];
                }
            }
        }
        for v in 0..nv {
            let coefs: Vec<f64> = (0..m).map(|k| self.mu[v] * self.phi[k][v]).collect();
            let s = h.slice_mut(v);
            for k in 0..m {
                let c = coefs[k];
                let l = &lam[k * nx..(k + 1) * nx];
                for (d, x) in s.iter_mut().zip(l) {
                    *d -= c * x;
                }
            }
        }
    }

    /// P M for a velocity matrix M.
    pub fn apply_matrix(&self, m: &mut Matrix) {
        let n = m.nrows();
        let mut col = vec![0.0; n];
        for j in 0..m.ncols() {
            for i in 0..n {
                col[i] = m[(i, j)];
            }
            self.apply(&mut col);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
    }
}

/// Precomputed collision machinery for one kernel on one grid.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    pub grid: PhaseGrid,
    pub kernel: KernelConfig,
    pub quad: SigmaQuadrature,
    interp: Interpolator,
    /// K_ij = w_v Φ(|v_i - v_j|) Σ_σ w_σ b(σ · k_ij): the loss kernel.
    loss: Matrix,
    nu: Vec<f64>,
    mu: Vec<f64>,
    projector: ConservationProjector,
    table: OnceLock<Option<GainTable>>,
}

/// Upper bound on the memory spent caching post-collision stencils.
pub const GAIN_TABLE_BYTES: usize = 640 << 20;

/// Flattened collision classes with their stencils, built once so repeated
/// evaluations skip the interpolation setup.
#[derive(Clone, Debug, Default)]
struct GainTable {
    rows: Vec<(u32, u32)>,
    coef: Vec<f64>,
    /// Stencil k of class c spans entries start[2c + k]..start[2c + k + 1].
    start: Vec<u32>,
    idx: Vec<u32>,
    w: Vec<f64>,
}

impl GainTable {
    fn push_stencil(&mut self, st: &Stencil) {
        for a in 0..st.len {
            if st.w[a] != 0.0 {
                self.idx.push(st.idx[a]);
                self.w.push(st.w[a]);
            }
        }
        self.start.push(self.idx.len() as u32);
    }

    #[inline]
    fn eval(&self, s: usize, field: &[f64], nx: usize, out: &mut [f64]) {
        out.fill(0.0);
        for e in self.start[s] as usize..self.start[s + 1] as usize {
            let w = self.w[e];
            let base = self.idx[e] as usize * nx;
            for (o, v) in out.iter_mut().zip(&field[base..base + nx]) {
                *o += w * v;
            }
        }
    }
}

impl CollisionOperator {
    pub fn new(kernel: &KernelConfig, grid: &PhaseGrid) -> Result<Self> {
        kernel.validate()?;
        let quad = SigmaQuadrature::new(grid.dim, kernel.n_sigma)?;
        let n = grid.n_v_total;
        let mut loss = dense::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (g, khat) = relative(grid, i, j);
                let phi = kernel.kinetic(g);
                if phi == 0.0 {
                    continue;
                }
                let ang: f64 = quad
                    .dirs
                    .iter()
                    .zip(&quad.weights)
                    .map(|(s, w)| w * kernel.angular.eval(dot(s, &khat, grid.dim), grid.dim))
                    .sum();
                loss[(i, j)] = grid.w_v * phi * ang;
            }
        }
        let mu = grid.maxwellian();
        let nu = dense::mat_vec(&loss, &mu);
        Ok(Self {
            grid: grid.clone(),
            kernel: kernel.clone(),
            quad,
            interp: Interpolator::new(grid, kernel.interp),
            loss,
            nu,
            mu,
            projector: ConservationProjector::new(grid)?,
            table: OnceLock::new(),
        })
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn maxwellian(&self) -> &[f64] {
        &self.mu
    }

    pub fn loss_kernel(&self) -> &Matrix {
        &self.loss
    }

    pub fn projector(&self) -> &ConservationProjector {
        &self.projector
    }

    pub fn interpolator(&self) -> &Interpolator {
        &self.interp
    }

    /// Fitted constants with nu0 (1 + |v|^γ) <= ν(v) <= nu1 (1 + |v|^γ) on all nodes.
    pub fn nu_bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..self.grid.n_v_total {
            let r = self.nu[i] / (1.0 + self.grid.speed_sq(i).sqrt().powf(self.kernel.gamma));
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    fn gain_table(&self) -> Option<&GainTable> {
        self.table
            .get_or_init(|| {
                let n = self.grid.n_v_total;
                let width = match self.kernel.interp {
                    InterpKind::Multilinear => 2usize,
                    _ => 4,
                };
                let entries = n * (n + 1) / 2 * self.quad.half.len();
                let bytes = entries * (2 * width.pow(self.grid.dim as u32) * 12 + 24);
                if bytes > GAIN_TABLE_BYTES {
                    return None;
                }
                let mut t = GainTable { start: vec![0], ..Default::default() };
                let dim = self.grid.dim;
                let ang = self.kernel.angular;
                self.visit_pairs(|c| {
                    let coef = c.weight * (ang.eval(c.z, dim) + ang.eval(-c.z, dim));
                    if coef == 0.0 {
                        return;
                    }
                    t.rows.push((c.i as u32, c.j as u32));
                    t.coef.push(coef);
                    t.push_stencil(c.st1);
                    t.push_stencil(c.st2);
                });
                Some(t)
            })
            .as_ref()
    }

    /// Visits every collision class of the reduced sum.
    pub fn visit_pairs(&self, mut f: impl FnMut(&PairCollision)) {
        let grid = &self.grid;
        let d = grid.dim;
        let n = grid.n_v_total;
        let mut st1 = Stencil::default();
        let mut st2 = Stencil::default();
        let mut p1 = [0.0f64; 3];
        let mut p2 = [0.0f64; 3];
        for i in 0..n {
            let vi = grid.velocity(i);
            for j in i..n {
                let vj = grid.velocity(j);
                let (g, khat) = relative(grid, i, j);
                let phi = self.kernel.kinetic(g);
                if phi == 0.0 {
                    continue;
                }
                for &s in &self.quad.half {
                    let sig = &self.quad.dirs[s];
                    for a in 0..d {
                        let c = 0.5 * (vi[a] + vj[a]);
                        p1[a] = c + 0.5 * g * sig[a];
                        p2[a] = c - 0.5 * g * sig[a];
                    }
                    self.interp.stencil(&p1[..d], &mut st1);
                    self.interp.stencil(&p2[..d], &mut st2);
                    f(&PairCollision {
                        i,
                        j,
                        g,
                        z: dot(sig, &khat, d),
                        weight: grid.w_v * phi * self.quad.weights[s],
                        st1: &st1,
                        st2: &st2,
                    });
                }
            }
        }
    }

    /// Operands may have any number of spatial points, but must share it and
    /// live on this velocity lattice.
    fn check(&self, g: &DistributionField, h: &DistributionField) -> Result<()> {
        if g.n_v != self.grid.n_v_total || h.n_v != self.grid.n_v_total || g.n_x != h.n_x {
            return Err(Error::Shape(format!(
                "collision operands {}x{} and {}x{} on a lattice of {} velocities",
                g.n_v, g.n_x, h.n_v, h.n_x, self.grid.n_v_total
            )));
        }
        if g.values.len() != g.n_v * g.n_x || h.values.len() != h.n_v * h.n_x {
            return Err(Error::Shape("collision operand storage does not match its shape".into()));
        }
        Ok(())
    }

    /// Q(g, h) as specified by the kernel configuration.
    pub fn eval_q(&self, g: &DistributionField, h: &DistributionField) -> Result<DistributionField> {
        let mut out = self.eval_q_raw(g, h)?;
        if self.kernel.conservative {
            self.projector.apply_field(&mut out);
        }
        Ok(out)
    }

    /// Q(g, h) without the conservation projection.
    pub fn eval_q_raw(&self, g: &DistributionField, h: &DistributionField) -> Result<DistributionField> {
        self.check(g, h)?;
        let same = g.values == h.values;
        let nx = g.n_x;
        let dim = self.grid.dim;
        let mut out = DistributionField { values: vec![0.0; g.values.len()], n_x: nx, n_v: g.n_v };
        let mut g1 = vec![0.0; nx];
        let mut g2 = vec![0.0; nx];
        let mut h1 = vec![0.0; nx];
        let mut h2 = vec![0.0; nx];
        let mut t = vec![0.0; nx];
        let mut gain = |i: usize, j: usize, coef: f64, g1: &[f64], g2: &[f64], h1: &[f64], h2: &[f64]| {
            if same {
                for x in 0..nx {
                    t[x] = coef * g1[x] * g2[x];
                }
            } else {
                for x in 0..nx {
                    t[x] = 0.5 * coef * (g1[x] * h2[x] + g2[x] * h1[x]);
                }
            }
            for (o, v) in out.slice_mut(i).iter_mut().zip(&t) {
                *o += v;
            }
            if j != i {
                for (o, v) in out.slice_mut(j).iter_mut().zip(&t) {
                    *o += v;
                }
            }
        };
        if let Some(tab) = self.gain_table() {
            for (c, (&(i, j), &coef)) in tab.rows.iter().zip(&tab.coef).enumerate() {
                tab.eval(2 * c, &g.values, nx, &mut g1);
                tab.eval(2 * c + 1, &g.values, nx, &mut g2);
                if !same {
                    tab.eval(2 * c, &h.values, nx, &mut h1);
                    tab.eval(2 * c + 1, &h.values, nx, &mut h2);
                }
                gain(i as usize, j as usize, coef, &g1, &g2, &h1, &h2);
            }
        } else {
            let angular = self.kernel.angular;
            self.visit_pairs(|c| {
                let coef = c.weight * (angular.eval(c.z, dim) + angular.eval(-c.z, dim));
                if coef == 0.0 {
                    return;
                }
                c.st1.eval_slice(&g.values, nx, &mut g1);
                c.st2.eval_slice(&g.values, nx, &mut g2);
                if !same {
                    c.st1.eval_slice(&h.values, nx, &mut h1);
                    c.st2.eval_slice(&h.values, nx, &mut h2);
                }
                gain(c.i, c.j, coef, &g1, &g2, &h1, &h2);
            });
        }
        // Loss: 1/2 [h (K g) + g (K h)].
        let kg = dense::apply_velocity_op(&self.loss, g);
        let kh = if same { kg.clone() } else { dense::apply_velocity_op(&self.loss, h) };
        for k in 0..out.values.len() {
            out.values[k] -= 0.5 * (h.values[k] * kg.values[k] + g.values[k] * kh.values[k]);
        }
        Ok(out)
    }

    /// Single velocity profile version of `eval_q`.
    pub fn eval_q_profile(&self, g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let gf = DistributionField { values: g.to_vec(), n_x: 1, n_v: g.len() };
        let hf = DistributionField { values: h.to_vec(), n_x: 1, n_v: h.len() };
        self.eval_q(&gf, &hf).map(|f| f.values)
    }
}

#[inline]
fn dot(a: &[f64; 3], b: &[f64; 3], d: usize) -> f64 {
    (0..d).map(|k| a[k] * b[k]).sum()
}

/// |v_i - v_j| and the unit relative direction (e_1 when the nodes coincide).
fn relative(grid: &PhaseGrid, i: usize, j: usize) -> (f64, [f64; 3]) {
    let (vi, vj) = (grid.velocity(i), grid.velocity(j));
    let mut k = [0.0; 3];
    let mut g2 = 0.0;
    for a in 0..grid.dim {
        k[a] = vi[a] - vj[a];
        g2 += k[a] * k[a];
    }
    let g = g2.sqrt();
    if g == 0.0 {
        k = [1.0, 0.0, 0.0];
    } else {
        k.iter_mut().for_each(|c| *c /= g);
    }
    (g, k)
}
