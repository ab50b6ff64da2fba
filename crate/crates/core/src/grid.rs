//! Phase-space discretization of T^d x R^d.
//!
//! Velocities live on a uniform midpoint lattice over `[-v_max, v_max]^d`,
//! positions on a uniform periodic lattice. Fields are stored velocity-major:
//! `values[v * n_x_total + x]`, so each velocity node owns a contiguous spatial
//! slice. That is the layout the collision kernels and the transport FFTs want.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Largest admissible Gaussian mass outside the velocity box.
pub const MAX_TAIL_MASS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub n_x: usize,
    pub n_v: usize,
    pub v_max: f64,
    pub torus_period: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 2, n_x: 16, n_v: 16, v_max: 6.0, torus_period: 1.0 }
    }
}

/// Mass of the standard d-dimensional Gaussian outside `[-v_max, v_max]^d`.
pub fn gaussian_tail_mass(dim: usize, v_max: f64) -> f64 {
    1.0 - libm::erf(v_max / std::f64::consts::SQRT_2).powi(dim as i32)
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Grid(format!("dimension {} not in 1..=3", self.dim)));
        }
        if self.n_x < 4 || !self.n_x.is_multiple_of(2) {
            return Err(Error::Grid(format!("n_x = {} must be even and >= 4", self.n_x)));
        }
        if self.n_v < 8 {
            return Err(Error::Grid(format!("n_v = {} must be >= 8", self.n_v)));
        }
        if !(self.torus_period > 0.0) || !self.torus_period.is_finite() {
            return Err(Error::Grid(format!("torus period {} must be positive", self.torus_period)));
        }
        let tail = gaussian_tail_mass(self.dim, self.v_max);
        if !(tail <= MAX_TAIL_MASS) {
            return Err(Error::Grid(format!(
                "v_max = {} leaves Gaussian tail mass {tail:.3e} > {MAX_TAIL_MASS:e}",
                self.v_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PhaseGrid {
    pub cfg: GridConfig,
    pub dim: usize,
    /// Points per spatial axis.
    pub n_x: usize,
    /// Points per velocity axis.
    pub n_v: usize,
    pub n_x_total: usize,
    pub n_v_total: usize,
    pub dx: f64,
    pub dv: f64,
    /// Spatial quadrature weight (uniform).
    pub w_x: f64,
    /// Velocity quadrature weight (uniform midpoint rule).
    pub w_v: f64,
    pub x_axis: Vec<f64>,
    pub v_axis: Vec<f64>,
    v_nodes: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(cfg: &GridConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let dx = cfg.torus_period / cfg.n_x as f64;
        let dv = 2.0 * cfg.v_max / cfg.n_v as f64;
        let x_axis: Vec<f64> = (0..cfg.n_x).map(|i| i as f64 * dx).collect();
        let v_axis: Vec<f64> = (0..cfg.n_v).map(|i| -cfg.v_max + (i as f64 + 0.5) * dv).collect();
        let n_v_total = cfg.n_v.pow(d as u32);
        let n_x_total = cfg.n_x.pow(d as u32);
        let mut v_nodes = Vec::with_capacity(n_v_total * d);
        for i in 0..n_v_total {
            let mut rem = i;
            let mut c = [0usize; 3];
            for a in (0..d).rev() {
                c[a] = rem % cfg.n_v;
                rem /= cfg.n_v;
            }
            v_nodes.extend(c[..d].iter().map(|&k| v_axis[k]));
        }
        Ok(Self {
            cfg: cfg.clone(),
            dim: d,
            n_x: cfg.n_x,
            n_v: cfg.n_v,
            n_x_total,
            n_v_total,
            dx,
            dv,
            w_x: dx.powi(d as i32),
            w_v: dv.powi(d as i32),
            x_axis,
            v_axis,
            v_nodes,
        })
    }

    #[inline]
    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.v_nodes[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn speed_sq(&self, i: usize) -> f64 {
        self.velocity(i).iter().map(|c| c * c).sum()
    }

    /// Japanese bracket (1 + |v|^2)^{1/2}.
    #[inline]
    pub fn bracket(&self, i: usize) -> f64 {
        (1.0 + self.speed_sq(i)).sqrt()
    }

    /// Per-axis lattice coordinates of velocity node `i`.
    pub fn velocity_index(&self, i: usize) -> [usize; 3] {
        let mut rem = i;
        let mut c = [0usize; 3];
        for a in (0..self.dim).rev() {
            c[a] = rem % self.n_v;
            rem /= self.n_v;
        }
        c
    }

    pub fn velocity_flat(&self, c: &[usize]) -> usize {
        c.iter().take(self.dim).fold(0, |acc, &k| acc * self.n_v + k)
    }

    /// Position of spatial node `x`.
    pub fn position(&self, x: usize) -> [f64; 3] {
        let mut rem = x;
        let mut p = [0.0; 3];
        for a in (0..self.dim).rev() {
            p[a] = self.x_axis[rem % self.n_x];
            rem /= self.n_x;
        }
        p
    }

    pub fn maxwellian(&self) -> Vec<f64> {
        (0..self.n_v_total).map(|i| maxwellian_at(self.dim, self.speed_sq(i))).collect()
    }

    /// Velocity quadrature of a profile.
    pub fn integrate_v(&self, profile: &[f64]) -> f64 {
        profile.iter().sum::<f64>() * self.w_v
    }

    pub fn torus_volume(&self) -> f64 {
        self.cfg.torus_period.powi(self.dim as i32)
    }

    pub fn same_shape(&self, other: &PhaseGrid) -> bool {
        self.cfg == other.cfg
    }
}

#[inline]
pub fn maxwellian_at(dim: usize, speed_sq: f64) -> f64 {
    (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0) * (-0.5 * speed_sq).exp()
}

/// h(x, v) on a phase grid, velocity-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    pub values: Vec<f64>,
    pub n_x: usize,
    pub n_v: usize,
}

impl DistributionField {
    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self { values: vec![0.0; grid.n_x_total * grid.n_v_total], n_x: grid.n_x_total, n_v: grid.n_v_total }
    }

    pub fn from_fn(grid: &PhaseGrid, mut f: impl FnMut(&[f64], &[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for v in 0..grid.n_v_total {
            let vel = grid.velocity(v);
            for x in 0..grid.n_x_total {
                let p = grid.position(x);
                out.values[v * grid.n_x_total + x] = f(&p[..grid.dim], vel);
            }
        }
        out
    }

    /// Spatially constant field from a velocity profile.
    pub fn from_profile(grid: &PhaseGrid, profile: &[f64]) -> Self {
        let mut out = Self::zeros(grid);
        for (v, &p) in profile.iter().enumerate() {
            out.slice_mut(v).fill(p);
        }
        out
    }

    pub fn check(&self, grid: &PhaseGrid) -> Result<()> {
        if self.n_x != grid.n_x_total || self.n_v != grid.n_v_total || self.values.len() != self.n_x * self.n_v {
            return Err(Error::Shape(format!(
                "field is {}x{}, grid is {}x{}",
                self.n_v, self.n_x, grid.n_v_total, grid.n_x_total
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("field has non-finite entries".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn slice(&self, v: usize) -> &[f64] {
        &self.values[v * self.n_x..(v + 1) * self.n_x]
    }

    #[inline]
    pub fn slice_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.values[v * self.n_x..(v + 1) * self.n_x]
    }

    /// Spatial average, one value per velocity node.
    pub fn x_mean(&self) -> Vec<f64> {
        (0..self.n_v).map(|v| self.slice(v).iter().sum::<f64>() / self.n_x as f64).collect()
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn axpy(&mut self, a: f64, other: &DistributionField) {
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Multi-dimensional FFT on the periodic spatial lattice.
pub struct SpatialFft {
    dim: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Wavenumber per axis index, FFT ordering.
    pub k: Vec<f64>,
}

impl std::fmt::Debug for SpatialFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpatialFft").field("dim", &self.dim).field("n", &self.n).finish()
    }
}

impl SpatialFft {
    pub fn new(grid: &PhaseGrid) -> Self {
        Self::with_shape(grid.dim, grid.n_x, grid.cfg.torus_period)
    }

    pub fn with_shape(dim: usize, n: usize, period: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|m| {
                let m = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
                2.0 * std::f64::consts::PI * m / period
            })
            .collect();
        Self { dim, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), k }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_nyquist(&self, m: usize) -> bool {
        m == self.n / 2
    }

    fn apply(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let total = self.len();
        let mut line = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                for chunk in buf.chunks_exact_mut(n) {
                    plan.process_with_scratch(chunk, &mut scratch);
                }
                continue;
            }
            for start in 0..total {
                // Only visit the first element of each line along `axis`.
                if !(start / stride).is_multiple_of(n) {
                    continue;
                }
                for (j, l) in line.iter_mut().enumerate() {
                    *l = buf[start + j * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (j, l) in line.iter().enumerate() {
                    buf[start + j * stride] = *l;
                }
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.fwd);
    }

    /// Inverse transform, normalized.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.inv);
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    /// Per-axis FFT indices of flat mode `m`.
    pub fn mode_index(&self, m: usize) -> [usize; 3] {
        let mut rem = m;
        let mut c = [0usize; 3];
        for a in (0..self.dim).rev() {
            c[a] = rem % self.n;
            rem /= self.n;
        }
        c
    }

    /// Wavevector of flat mode `m`. The Nyquist index is mapped to zero so
    /// that odd derivatives and transport phases stay real and unitary.
    pub fn wavevector(&self, m: usize) -> [f64; 3] {
        let c = self.mode_index(m);
        let mut out = [0.0; 3];
        for a in 0..self.dim {
            out[a] = if self.is_nyquist(c[a]) { 0.0 } else { self.k[c[a]] };
        }
        out
    }

    /// Spectral partial derivative of a real periodic field; `orders[a]` is
    /// the derivative order along axis `a`.
    pub fn derivative(&self, field: &[f64], orders: &[usize]) -> Vec<f64> {
        if orders.iter().all(|&o| o == 0) {
            return field.to_vec();
        }
        let mut buf: Vec<Complex64> = field.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.forward(&mut buf);
        for (m, c) in buf.iter_mut().enumerate() {
            let idx = self.mode_index(m);
            let mut mult = Complex64::new(1.0, 0.0);
            for a in 0..self.dim {
                let o = orders[a];
                if o == 0 {
                    continue;
                }
                let k = if self.is_nyquist(idx[a]) {
                    if o % 2 == 1 {
                        0.0
                    } else {
                        self.k[idx[a]].abs()
                    }
                } else {
                    self.k[idx[a]]
                };
                mult *= Complex64::new(0.0, k).powi(o as i32);
            }
            *c *= mult;
        }
        self.inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Exponent {
    One,
    Two,
    Inf,
}

impl Exponent {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Self::One),
            "2" => Ok(Self::Two),
            "inf" | "Inf" | "INF" | "infinity" => Ok(Self::Inf),
            other => Err(Error::Norm(format!("unsupported Lebesgue exponent `{other}`"))),
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Two => 2.0,
            Self::Inf => f64::INFINITY,
        }
    }

    fn combine(self, terms: impl Iterator<Item = f64>, w: f64) -> f64 {
        match self {
            Self::One => terms.map(f64::abs).sum::<f64>() * w,
            Self::Two => (terms.map(|t| t * t).sum::<f64>() * w).sqrt(),
            Self::Inf => terms.fold(0.0, |m, t| m.max(t.abs())),
        }
    }
}

impl std::fmt::Display for Exponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::One => write!(f, "1"),
            Self::Two => write!(f, "2"),
            Self::Inf => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightKind {
    /// <v>^k
    Polynomial,
    /// mu^{-1/2} <v>^k
    InverseMaxwellian,
    /// <v>^k nu^{1/q}
    NuScaled,
}

/// A mixed norm ||.||_{W^{alpha,q}_v W^{beta,p}_x(m)}.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormSpec {
    pub p: Exponent,
    pub q: Exponent,
    pub k: f64,
    pub alpha: usize,
    pub beta: usize,
    pub weight: WeightKind,
}

impl NormSpec {
    pub fn l1(k: f64) -> Self {
        Self { p: Exponent::One, q: Exponent::One, k, alpha: 0, beta: 0, weight: WeightKind::Polynomial }
    }

    /// L^2_{x,v}(mu^{-1/2}).
    pub fn hilbert() -> Self {
        Self { p: Exponent::Two, q: Exponent::Two, k: 0.0, alpha: 0, beta: 0, weight: WeightKind::InverseMaxwellian }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha > 1 {
            return Err(Error::Norm(format!("velocity derivative order {} > 1", self.alpha)));
        }
        if self.alpha > self.beta {
            return Err(Error::Norm(format!("alpha = {} exceeds beta = {}", self.alpha, self.beta)));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::Norm(format!("weight exponent k = {} must be >= 0", self.k)));
        }
        Ok(())
    }

    /// Short column label, e.g. `W0_1W0_1_poly3`.
    pub fn label(&self) -> String {
        let w = match self.weight {
            WeightKind::Polynomial => "poly",
            WeightKind::InverseMaxwellian => "invmu",
            WeightKind::NuScaled => "nu",
        };
        format!("W{}_{}W{}_{}_{}{}", self.alpha, self.q, self.beta, self.p, w, self.k)
    }

    /// Weight m(v) at every velocity node.
    pub fn weight_profile(&self, grid: &PhaseGrid, nu: Option<&[f64]>) -> Result<Vec<f64>> {
        let poly = |i: usize| grid.bracket(i).powf(self.k);
        match self.weight {
            WeightKind::Polynomial => Ok((0..grid.n_v_total).map(poly).collect()),
            WeightKind::InverseMaxwellian => {
                Ok((0..grid.n_v_total).map(|i| poly(i) / maxwellian_at(grid.dim, grid.speed_sq(i)).sqrt()).collect())
            }
            WeightKind::NuScaled => {
                let nu = nu.ok_or_else(|| Error::Norm("nu-scaled weight needs a collision frequency".into()))?;
                let inv_q = 1.0 / self.q.value();
                Ok((0..grid.n_v_total).map(|i| poly(i) * nu[i].powf(inv_q)).collect())
            }
        }
    }
}

/// Velocity derivative along `axis` at every node by second-order centered
/// differences, one-sided second-order closure at the box faces.
pub fn velocity_derivative(h: &DistributionField, grid: &PhaseGrid, axis: usize) -> DistributionField {
    let mut out = DistributionField::zeros(grid);
    let n = grid.n_v;
    let stride = n.pow((grid.dim - 1 - axis) as u32);
    let nx = grid.n_x_total;
    let inv = 1.0 / (2.0 * grid.dv);
    for v in 0..grid.n_v_total {
        let c = grid.velocity_index(v)[axis];
        let dst = &mut out.values[v * nx..(v + 1) * nx];
        let (a, b, ca, cb, cc) = if c == 0 {
            // -3 f0 + 4 f1 - f2
            (v + stride, v + 2 * stride, 4.0, -1.0, -3.0)
        } else if c == n - 1 {
            // 3 f0 - 4 f-1 + f-2
            (v - stride, v - 2 * stride, -4.0, 1.0, 3.0)
        } else {
            (v + stride, v - stride, 1.0, -1.0, 0.0)
        };
        let (fa, fb, f0) = (h.slice(a), h.slice(b), h.slice(v));
        for x in 0..nx {
            dst[x] = inv * (ca * fa[x] + cb * fb[x] + cc * f0[x]);
        }
    }
    out
}

fn spatial_multi_indices(dim: usize, max_order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    let mut c = [0usize; 3];
    loop {
        if c[..dim].iter().sum::<usize>() <= max_order {
            out.push(c);
        }
        let mut a = 0;
        loop {
            if a == dim {
                return out;
            }
            c[a] += 1;
            if c[a] <= max_order {
                break;
            }
            c[a] = 0;
            a += 1;
        }
    }
}

/// Evaluates the mixed weighted norm. The spatial norm is taken first at each
/// velocity node, then the weighted velocity norm of the resulting profile.
pub fn weighted_norm(h: &DistributionField, spec: &NormSpec, grid: &PhaseGrid) -> Result<f64> {
    weighted_norm_with(h, spec, grid, None, None)
}

/// As [`weighted_norm`], with an optional collision frequency (for the
/// nu-scaled weight) and a reusable FFT plan.
pub fn weighted_norm_with(
    h: &DistributionField,
    spec: &NormSpec,
    grid: &PhaseGrid,
    nu: Option<&[f64]>,
    fft: Option<&SpatialFft>,
) -> Result<f64> {
    spec.validate()?;
    h.check(grid)?;
    let m = spec.weight_profile(grid, nu)?;
    let max_order = spec.alpha.max(spec.beta);
    let owned;
    let fft = match fft {
        Some(f) => f,
        None => {
            owned = SpatialFft::new(grid);
            &owned
        }
    };
    let mut total = 0.0;
    // Velocity multi-indices with |j| <= alpha <= 1.
    let mut v_parts: Vec<(usize, Option<DistributionField>)> = vec![(0, None)];
    if spec.alpha == 1 {
        for axis in 0..grid.dim {
            v_parts.push((1, Some(velocity_derivative(h, grid, axis))));
        }
    }
    for (j_order, vfield) in &v_parts {
        let base = vfield.as_ref().unwrap_or(h);
        for l in spatial_multi_indices(grid.dim, spec.beta) {
            let l_order: usize = l[..grid.dim].iter().sum();
            if l_order + j_order > max_order {
                continue;
            }
            let per_v = (0..grid.n_v_total).map(|v| {
                let slice = base.slice(v);
                let xn = if l_order == 0 {
                    spec.p.combine(slice.iter().copied(), grid.w_x)
                } else {
                    let d = fft.derivative(slice, &l[..grid.dim]);
                    spec.p.combine(d.into_iter(), grid.w_x)
                };
                xn * m[v]
            });
            total += spec.q.combine(per_v, grid.w_v);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_x: usize, n_v: usize, v_max: f64) -> PhaseGrid {
        PhaseGrid::new(&GridConfig { dim: 2, n_x, n_v, v_max, torus_period: 1.0 }).unwrap()
    }

    #[test]
    fn node_counts() {
        let g = grid(16, 16, 6.0);
        assert_eq!(g.n_x_total, 256);
        assert_eq!(g.n_v_total, 256);
        assert!((g.w_x * g.n_x_total as f64 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = GridConfig { n_x: 15, ..Default::default() };
        assert!(PhaseGrid::new(&c).is_err());
        c.n_x = 16;
        c.v_max = 3.0;
        assert!(PhaseGrid::new(&c).is_err());
        c.v_max = 4.0; // tail mass 1.27e-4 in 2D
        assert!(PhaseGrid::new(&c).is_err());
        c.v_max = 4.5;
        assert!(PhaseGrid::new(&c).is_ok());
    }

    #[test]
    fn maxwellian_moments_match_gaussian_integrals() {
        let g = grid(4, 32, 8.0);
        let mu = g.maxwellian();
        assert!((maxwellian_at(2, 0.0) - 0.159_154_943_091_895_35).abs() < 1e-15);
        let mass = g.integrate_v(&mu);
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        let second: Vec<f64> = (0..g.n_v_total).map(|i| (1.0 + g.speed_sq(i)) * mu[i]).collect();
        assert!((g.integrate_v(&second) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn norm_of_maxwellian() {
        let g = grid(8, 24, 6.0);
        let h = DistributionField::from_profile(&g, &g.maxwellian());
        let n0 = weighted_norm(&h, &NormSpec::l1(0.0), &g).unwrap();
        assert!((n0 - 1.0).abs() < 1e-6);
        let n2 = weighted_norm(&h, &NormSpec::l1(2.0), &g).unwrap();
        assert!((n2 - 3.0).abs() < 1e-5, "{n2}");
        assert_eq!(weighted_norm(&DistributionField::zeros(&g), &NormSpec::l1(3.0), &g).unwrap(), 0.0);
    }

    #[test]
    fn fourier_mode_derivative_scaling() {
        let g = grid(16, 8, 4.5);
        let n = [2.0, 0.0];
        let h = DistributionField::from_fn(&g, |x, v| {
            (2.0 * std::f64::consts::PI * (n[0] * x[0] + n[1] * x[1])).cos() * (-v[0] * v[0]).exp()
        });
        let kk = 2.0 * std::f64::consts::PI * 2.0;
        for p in [Exponent::One, Exponent::Two, Exponent::Inf] {
            let base = NormSpec { p, q: Exponent::One, k: 0.0, alpha: 0, beta: 0, weight: WeightKind::Polynomial };
            let n0 = weighted_norm(&h, &base, &g).unwrap();
            let fft = SpatialFft::new(&g);
            for beta in 1..=3usize {
                // Only the x1 derivative is non-zero for this mode.
                let per_v: f64 = (0..g.n_v_total)
                    .map(|v| {
                        let d = fft.derivative(h.slice(v), &[beta, 0]);
                        p.combine(d.into_iter(), g.w_x)
                    })
                    .sum::<f64>()
                    * g.w_v;
                let want = n0 * kk.powi(beta as i32);
                assert!((per_v - want).abs() <= 1e-10 * want, "{p} {beta}: {per_v} vs {want}");
            }
        }
    }

    #[test]
    fn alpha_exceeding_beta_is_rejected() {
        let g = grid(4, 8, 4.5);
        let h = DistributionField::zeros(&g);
        let spec = NormSpec { alpha: 1, beta: 0, ..NormSpec::l1(0.0) };
        assert!(weighted_norm(&h, &spec, &g).is_err());
    }

    #[test]
    fn velocity_derivative_is_exact_on_quadratics() {
        let g = grid(4, 12, 4.5);
        let h = DistributionField::from_fn(&g, |_, v| v[0] * v[0] + 3.0 * v[1]);
        let d0 = velocity_derivative(&h, &g, 0);
        let d1 = velocity_derivative(&h, &g, 1);
        for v in 0..g.n_v_total {
            let vel = g.velocity(v);
            assert!((d0.slice(v)[0] - 2.0 * vel[0]).abs() < 1e-12);
            assert!((d1.slice(v)[0] - 3.0).abs() < 1e-12);
        }
    }
}
