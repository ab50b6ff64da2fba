//! Linearized collision operator L = 2Q(μ, ·) as a velocity matrix, its
//! truncated splitting L = A + B₂ - ν, kernel projections, spectra and the
//! dissipativity measurements for the B part.

use crate::collision::{CollisionOperator, ConservationProjector};
use crate::dense::{self, Matrix};
use crate::error::{Error, Result};
use crate::grid::{DistributionField, Exponent, PhaseGrid, SpatialFft};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum OperatorKind {
    L,
    ADelta,
    B2Delta,
    NuMult,
}

/// A dense velocity matrix acting identically at every spatial node. The
/// physical operator is `matrix * ε^epsilon_scaling`; the matrix is stored
/// unscaled.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub matrix: Matrix,
    pub kind: OperatorKind,
    pub delta: Option<f64>,
    pub epsilon_scaling: i32,
}

impl LinearOperator {
    fn new(matrix: Matrix, kind: OperatorKind, delta: Option<f64>) -> Self {
        Self { matrix, kind, delta, epsilon_scaling: -2 }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, profile: &[f64]) -> Vec<f64> {
        dense::mat_vec(&self.matrix, profile)
    }

    pub fn apply_field(&self, h: &DistributionField) -> DistributionField {
        dense::apply_velocity_op(&self.matrix, h)
    }
}

/// C^∞ transition: 0 for t <= 0, 1 for t >= 1, built from e^{-1/t}.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Θ_δ(v, v_*, σ) as a product of three smooth transitions in |v|,
/// |v - v_*| and |cos θ|. Equal to 1 on
/// {|v| <= 1/δ, 2δ <= |v-v_*| <= 1/δ, |cos θ| <= 1-2δ} and supported in
/// {|v| <= 2/δ, δ <= |v-v_*| <= 2/δ, |cos θ| <= 1-δ}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub delta: f64,
}

pub fn build_mollifier(delta: f64) -> Result<Mollifier> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Delta(format!("delta = {delta} must lie in (0, 0.5]")));
    }
    Ok(Mollifier { delta })
}

impl Mollifier {
    pub fn speed_factor(&self, speed: f64) -> f64 {
        let d = self.delta;
        smooth_step((2.0 / d - speed) * d)
    }

    pub fn relative_factor(&self, g: f64) -> f64 {
        let d = self.delta;
        smooth_step((g - d) / d) * smooth_step((2.0 / d - g) * d)
    }

    pub fn angle_factor(&self, abs_cos: f64) -> f64 {
        let d = self.delta;
        smooth_step((1.0 - d - abs_cos) / d)
    }

    pub fn eval(&self, speed: f64, g: f64, cos: f64) -> f64 {
        self.speed_factor(speed) * self.relative_factor(g) * self.angle_factor(cos.abs())
    }

    /// Radius of the output support of A^δ.
    pub fn support_radius(&self) -> f64 {
        2.0 / self.delta
    }
}

/// Gain part plus the -μ h_* term of L, without the conservation projection.
/// Assembled through the loss kernel so that it matches 2Q(μ, ·) exactly.
pub fn assemble_l_raw(op: &CollisionOperator) -> Matrix {
    let grid = &op.grid;
    let n = grid.n_v_total;
    let dim = grid.dim;
    let mu = op.maxwellian();
    let ang = op.kernel.angular;
    let mut m = dense::zeros(n, n);
    op.visit_pairs(|c| {
        let coef = c.weight * (ang.eval(c.z, dim) + ang.eval(-c.z, dim));
        if coef == 0.0 {
            return;
        }
        let mu1 = c.st1.eval(mu);
        let mu2 = c.st2.eval(mu);
        for r in [c.i, c.j] {
            for a in 0..c.st2.len {
                m[(r, c.st2.idx[a] as usize)] += coef * mu1 * c.st2.w[a];
            }
            for a in 0..c.st1.len {
                m[(r, c.st1.idx[a] as usize)] += coef * mu2 * c.st1.w[a];
            }
            if c.i == c.j {
                break;
            }
        }
    });
    let k = op.loss_kernel();
    let nu = op.nu();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] -= mu[i] * k[(i, j)];
        }
        m[(i, i)] -= nu[i];
    }
    m
}

/// L = 2Q(μ, ·), conservative when the kernel is.
pub fn assemble_l(op: &CollisionOperator) -> LinearOperator {
    let mut m = assemble_l_raw(op);
    if op.kernel.conservative {
        op.projector().apply_matrix(&mut m);
    }
    LinearOperator::new(m, OperatorKind::L, None)
}

#[derive(Clone, Debug)]
pub struct SplitOperators {
    pub a: LinearOperator,
    pub b2: LinearOperator,
    pub nu: Vec<f64>,
    pub l: LinearOperator,
    /// ||A_raw + B₂_raw - ν - L_raw|| / ||L_raw||: the splitting identity for
    /// the independently assembled truncated parts, before any projection.
    pub raw_identity_residual: f64,
    /// True when the support ball {|v| <= 2/δ} contains the whole velocity box.
    pub support_exceeds_domain: bool,
    pub mollifier: Mollifier,
}

impl SplitOperators {
    /// ||A + B₂ - diag(ν) - L||_F / ||L||_F.
    pub fn identity_residual(&self) -> f64 {
        let n = self.l.dim();
        let mut r = dense::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                r[(i, j)] = self.a.matrix[(i, j)] + self.b2.matrix[(i, j)] - self.l.matrix[(i, j)];
            }
            r[(j, j)] -= self.nu[j];
        }
        dense::frobenius(&r) / dense::frobenius(&self.l.matrix)
    }

    /// B₂ - diag(ν): the velocity part of ε² B^δ_ε.
    pub fn b_velocity(&self) -> Matrix {
        let mut m = self.b2.matrix.clone();
        for i in 0..self.nu.len() {
            m[(i, i)] -= self.nu[i];
        }
        m
    }

    /// max_{ij} |A_ij| / w_v: the norm of A as a map L¹_v → L^∞_v.
    pub fn a_l1_to_linf(&self, grid: &PhaseGrid) -> f64 {
        let a = &self.a.matrix;
        let mut m = 0.0f64;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                m = m.max(a[(i, j)].abs());
            }
        }
        m / grid.w_v
    }
}

/// A^δ with Θ_δ inside the integrand, B₂^δ with (1 - Θ_δ), and ν. The
/// conservation correction of L, if any, is carried by B₂ so that A keeps its
/// compact support.
pub fn split_operators(op: &CollisionOperator, delta: f64) -> Result<SplitOperators> {
    let moll = build_mollifier(delta)?;
    let grid = &op.grid;
    let n = grid.n_v_total;
    let dim = grid.dim;
    let mu = op.maxwellian();
    let ang = op.kernel.angular;
    let speed: Vec<f64> = (0..n).map(|i| grid.speed_sq(i).sqrt()).collect();
    let mut a = dense::zeros(n, n);
    let mut b2 = dense::zeros(n, n);
    op.visit_pairs(|c| {
        let base = c.weight * (ang.eval(c.z, dim) + ang.eval(-c.z, dim));
        if base == 0.0 {
            return;
        }
        let mu1 = c.st1.eval(mu);
        let mu2 = c.st2.eval(mu);
        let shared = moll.relative_factor(c.g) * moll.angle_factor(c.z.abs());
        for (r, other) in [(c.i, c.j), (c.j, c.i)] {
            let theta = moll.speed_factor(speed[r]) * shared;
            for (target, factor) in [(&mut a, theta), (&mut b2, 1.0 - theta)] {
                let coef = base * factor;
                if coef == 0.0 {
                    continue;
                }
                for s in 0..c.st2.len {
                    target[(r, c.st2.idx[s] as usize)] += coef * mu1 * c.st2.w[s];
                }
                for s in 0..c.st1.len {
                    target[(r, c.st1.idx[s] as usize)] += coef * mu2 * c.st1.w[s];
                }
                target[(r, other)] -= coef * mu[r];
            }
            if c.i == c.j {
                break;
            }
        }
    });
    let l_raw = assemble_l_raw(op);
    let nu = op.nu().to_vec();
    let mut resid = dense::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            resid[(i, j)] = a[(i, j)] + b2[(i, j)] - l_raw[(i, j)];
        }
        resid[(j, j)] -= nu[j];
    }
    let raw_identity_residual = dense::frobenius(&resid) / dense::frobenius(&l_raw);
    let l = assemble_l(op);
    if op.kernel.conservative {
        for j in 0..n {
            for i in 0..n {
                b2[(i, j)] += l.matrix[(i, j)] - l_raw[(i, j)];
            }
        }
    }
    let corner = grid.cfg.v_max * (dim as f64).sqrt();
    Ok(SplitOperators {
        a: LinearOperator::new(a, OperatorKind::ADelta, Some(delta)),
        b2: LinearOperator::new(b2, OperatorKind::B2Delta, Some(delta)),
        nu,
        l,
        raw_identity_residual,
        support_exceeds_domain: moll.support_radius() >= corner,
        mollifier: moll,
    })
}

/// π_L and Π_G: μ^{-1}-orthogonal projections onto span{φ_i μ}. The basis is
/// orthonormalized in the discrete inner product, so both are idempotent to
/// rounding.
#[derive(Clone, Debug)]
pub struct KernelProjector {
    complement: ConservationProjector,
}

impl KernelProjector {
    pub fn new(grid: &PhaseGrid) -> Result<Self> {
        Ok(Self { complement: ConservationProjector::new(grid)? })
    }

    pub fn pi_l(&self, h: &[f64]) -> Vec<f64> {
        let mut r = h.to_vec();
        self.complement.apply(&mut r);
        h.iter().zip(&r).map(|(a, b)| a - b).collect()
    }

    /// Π_G h = π_L of the spatial mean, constant in x.
    pub fn pi_g(&self, h: &DistributionField) -> DistributionField {
        let mean = h.x_mean();
        let p = self.pi_l(&mean);
        let mut out = h.clone();
        for (v, pv) in p.iter().enumerate() {
            out.slice_mut(v).fill(*pv);
        }
        out
    }

    /// ∫ h (1, v, |v|^2) dv.
    pub fn moments(&self, h: &[f64]) -> Vec<f64> {
        self.complement.moments(h)
    }
}

pub fn project_pi_l(h: &[f64], grid: &PhaseGrid) -> Result<Vec<f64>> {
    Ok(KernelProjector::new(grid)?.pi_l(h))
}

pub fn project_pi_g(h: &DistributionField, grid: &PhaseGrid) -> Result<DistributionField> {
    h.check(grid)?;
    Ok(KernelProjector::new(grid)?.pi_g(h))
}

/// The orthonormal kernel functions φ_0 = 1, φ_a = v_a,
/// φ_{d+1} = (|v|^2 - d)/√(2d), times μ.
pub fn kernel_functions(grid: &PhaseGrid) -> Vec<Vec<f64>> {
    let mu = grid.maxwellian();
    let n = grid.n_v_total;
    let d = grid.dim as f64;
    let mut out = vec![mu.clone()];
    for a in 0..grid.dim {
        out.push((0..n).map(|i| grid.velocity(i)[a] * mu[i]).collect());
    }
    out.push((0..n).map(|i| (grid.speed_sq(i) - d) / (2.0 * d).sqrt() * mu[i]).collect());
    out
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SpectralReport {
    pub kernel_dim: usize,
    pub lambda_0: f64,
    pub kernel_basis_error: f64,
    /// (re, im), sorted by decreasing real part.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Kernel dimension at each relative tolerance of the plateau sweep.
    pub plateau: Vec<(f64, usize)>,
    /// Largest real part outside the kernel (negative when dissipative).
    pub max_nonkernel_real: f64,
    pub operator_norm: f64,
}

/// Relative kernel tolerance and the decade sweep around it.
pub const KERNEL_TOL: f64 = 1e-6;

/// Spectrum of L. L is similar to its μ^{-1/2} conjugate, so the eigenvalues
/// are computed on the matrix itself (the conjugate has entries spanning
/// e^{±|v|^2/2} and is numerically worse).
pub fn spectral_gap(l: &LinearOperator, grid: &PhaseGrid) -> Result<SpectralReport> {
    if l.kind != OperatorKind::L {
        return Err(Error::Spectrum("spectral_gap needs the L operator".into()));
    }
    let norm = dense::norm_1(&l.matrix);
    let mut ev = dense::eigenvalues(&l.matrix)?;
    ev.sort_by(|a, b| b.0.total_cmp(&a.0));
    let count = |tol: f64| ev.iter().filter(|(re, im)| re.hypot(*im) < tol * norm).count();
    let plateau: Vec<(f64, usize)> =
        [KERNEL_TOL / 10.0, KERNEL_TOL, KERNEL_TOL * 10.0].iter().map(|&t| (t, count(t))).collect();
    let kernel_dim = plateau[1].1;
    let expected = grid.dim + 2;
    if plateau.iter().any(|&(_, c)| c != expected) {
        return Err(Error::Spectrum(format!(
            "kernel dimension is not a stable {expected} across the tolerance sweep: {plateau:?}"
        )));
    }
    let rest: Vec<&(f64, f64)> = ev.iter().filter(|(re, im)| re.hypot(*im) >= KERNEL_TOL * norm).collect();
    let max_nonkernel_real = rest.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    if max_nonkernel_real >= 0.0 {
        return Err(Error::Spectrum(format!(
            "non-kernel eigenvalue with non-negative real part {max_nonkernel_real:.3e}"
        )));
    }
    let lambda_0 = -max_nonkernel_real;
    // Residual bound on the angle between span{φ_i μ} and the numerical
    // kernel in L²(μ^{-1/2}).
    let mu = grid.maxwellian();
    let wnorm = |f: &[f64]| f.iter().zip(&mu).map(|(a, m)| a * a / m).sum::<f64>().sqrt();
    let kernel_basis_error =
        kernel_functions(grid).iter().map(|f| wnorm(&l.apply(f)) / (lambda_0 * wnorm(f))).fold(0.0, f64::max);
    Ok(SpectralReport {
        kernel_dim,
        lambda_0,
        kernel_basis_error,
        eigenvalues: ev,
        plateau,
        max_nonkernel_real,
        operator_norm: norm,
    })
}

/// k*_q = (3 + √(49 - 48/q))/2 + γ(1 - 1/q), for q in [1, ∞].
pub fn k_star(q: f64, gamma: f64) -> f64 {
    let inv = if q.is_infinite() { 0.0 } else { 1.0 / q };
    (3.0 + (49.0 - 48.0 * inv).sqrt()) / 2.0 + gamma * (1.0 - inv)
}

/// φ_q(k) = (4/(k+2))^{1/q} (4/(k-1))^{1-1/q}, the large-δ limit of the
/// dissipativity constant.
pub fn phi_q(k: f64, q: f64) -> f64 {
    let inv = if q.is_infinite() { 0.0 } else { 1.0 / q };
    let a = 4.0 / (k + 2.0);
    let b = 4.0 / (k - 1.0);
    if inv == 1.0 {
        a
    } else {
        a.powf(inv) * b.powf(1.0 - inv)
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct DissipativityReport {
    /// -(d/dt ||h||)/||h|| per sample.
    pub rates: Vec<f64>,
    /// min over samples of rate · ε².
    pub worst_normalized: f64,
    pub all_positive: bool,
    /// Whether k > k*_q, the regime where positivity is guaranteed.
    pub guaranteed: bool,
}

/// Directional derivative of ||h||_{L^q_v L^p_x(⟨v⟩^k)} along `dh`.
pub fn norm_derivative(
    h: &DistributionField,
    dh: &DistributionField,
    grid: &PhaseGrid,
    k: f64,
    q: Exponent,
    p: Exponent,
) -> Result<(f64, f64)> {
    if q == Exponent::Inf || p == Exponent::Inf {
        return Err(Error::Norm("norm derivative needs finite exponents".into()));
    }
    let (pv, qv) = (p.value(), q.value());
    let mut total = 0.0;
    let mut dtotal = 0.0;
    for v in 0..grid.n_v_total {
        let (s, ds) = (h.slice(v), dh.slice(v));
        let (nv, dnv) = if pv == 1.0 {
            let n: f64 = s.iter().map(|x| x.abs()).sum::<f64>() * grid.w_x;
            let d: f64 = s.iter().zip(ds).map(|(x, dx)| x.signum() * dx).sum::<f64>() * grid.w_x;
            (n, d)
        } else {
            let n2: f64 = s.iter().map(|x| x * x).sum::<f64>() * grid.w_x;
            let n = n2.sqrt();
            let d = if n > 0.0 { s.iter().zip(ds).map(|(x, dx)| x * dx).sum::<f64>() * grid.w_x / n } else { 0.0 };
            (n, d)
        };
        let m = grid.bracket(v).powf(k);
        if qv == 1.0 {
            total += m * nv;
            dtotal += m * dnv;
        } else {
            total += (m * nv).powi(2);
            dtotal += m * m * nv * dnv;
        }
    }
    total *= grid.w_v;
    dtotal *= grid.w_v;
    if qv == 2.0 {
        let n = total.sqrt();
        return Ok((n, if n > 0.0 { dtotal / n } else { 0.0 }));
    }
    Ok((total, dtotal))
}

/// B^δ_ε h = ε⁻²(B₂ - ν)h - ε⁻¹ v·∇_x h.
pub fn apply_b(
    split: &SplitOperators,
    h: &DistributionField,
    grid: &PhaseGrid,
    epsilon: f64,
    fft: &SpatialFft,
) -> DistributionField {
    let bv = split.b_velocity();
    let mut out = dense::apply_velocity_op(&bv, h);
    out.scale(epsilon.powi(-2));
    add_transport(&mut out, h, grid, -1.0 / epsilon, fft);
    out
}

/// out += c · v·∇_x h, spectrally.
pub fn add_transport(out: &mut DistributionField, h: &DistributionField, grid: &PhaseGrid, c: f64, fft: &SpatialFft) {
    let mut orders = [0usize; 3];
    for a in 0..grid.dim {
        orders.iter_mut().for_each(|o| *o = 0);
        orders[a] = 1;
        for v in 0..grid.n_v_total {
            let va = grid.velocity(v)[a];
            if va == 0.0 {
                continue;
            }
            let d = fft.derivative(h.slice(v), &orders[..grid.dim]);
            for (o, dv) in out.slice_mut(v).iter_mut().zip(d) {
                *o += c * va * dv;
            }
        }
    }
}

/// Worst observed dissipation rate of B^δ_ε over sample fields.
#[allow(clippy::too_many_arguments)]
pub fn measure_dissipativity(
    split: &SplitOperators,
    grid: &PhaseGrid,
    k: f64,
    q: Exponent,
    p: Exponent,
    epsilon: f64,
    gamma: f64,
    samples: &[DistributionField],
) -> Result<DissipativityReport> {
    let fft = SpatialFft::new(grid);
    let mut rates = Vec::with_capacity(samples.len());
    for h in samples {
        let bh = apply_b(split, h, grid, epsilon, &fft);
        let (n, dn) = norm_derivative(h, &bh, grid, k, q, p)?;
        if n == 0.0 {
            continue;
        }
        rates.push(-dn / n);
    }
    let worst_normalized = rates.iter().map(|r| r * epsilon * epsilon).fold(f64::INFINITY, f64::min);
    let guaranteed = k > k_star(q.value(), gamma);
    let all_positive = rates.iter().all(|&r| r > 0.0);
    if guaranteed && !all_positive {
        return Err(Error::Spectrum(format!(
            "non-dissipative sample for k = {k} > k* (worst normalized rate {worst_normalized:.3e})"
        )));
    }
    Ok(DissipativityReport { rates, worst_normalized, all_positive, guaranteed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::KernelConfig;
    use crate::grid::GridConfig;

    fn op(n_v: usize) -> CollisionOperator {
        let grid = PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v, v_max: 6.0, torus_period: 1.0 }).unwrap();
        CollisionOperator::new(&KernelConfig::default(), &grid).unwrap()
    }

    /// Largest |⟨Lf, g⟩ - ⟨f, Lg⟩| in L²(μ^{-1}), relative to ||Lf|| ||g||,
    /// over f, g = (polynomial of degree 2 or 3) μ.
    fn asymmetry(n_v: usize) -> f64 {
        let c = op(n_v);
        let l = assemble_l(&c);
        let g = PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v, v_max: 6.0, torus_period: 1.0 }).unwrap();
        let mu = c.maxwellian();
        let polys: Vec<Vec<f64>> = [[2, 0], [1, 1], [1, 2], [0, 3], [2, 1], [3, 0]]
            .iter()
            .map(|e| {
                (0..g.n_v_total).map(|i| g.velocity(i)[0].powi(e[0]) * g.velocity(i)[1].powi(e[1]) * mu[i]).collect()
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(mu).map(|((x, y), m)| x * y / m).sum::<f64>();
        let mut worst = 0.0f64;
        for f in &polys {
            for h in &polys {
                let (lf, lh) = (l.apply(f), l.apply(h));
                let scale = (dot(&lf, &lf) * dot(h, h)).max(dot(f, f) * dot(&lh, &lh)).sqrt();
                worst = worst.max((dot(&lf, h) - dot(f, &lh)).abs() / scale);
            }
        }
        worst
    }

    #[test]
    fn l_is_nearly_self_adjoint() {
        let (coarse, fine) = (asymmetry(16), asymmetry(24));
        assert!(fine < 1e-2, "{fine}");
        assert!(fine < coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn thresholds() {
        assert_eq!(k_star(1.0, 0.0), 2.0);
        assert_eq!(k_star(1.0, 1.0), 2.0);
        assert!((k_star(2.0, 0.6) - 4.3).abs() < 1e-14);
        assert_eq!(phi_q(2.0, 1.0), 1.0);
        assert_eq!(phi_q(6.0, 1.0), 0.5);
    }

    #[test]
    fn mollifier_sets() {
        let m = build_mollifier(0.25).unwrap();
        assert_eq!(m.eval(0.0, 0.75, 0.0), 1.0);
        assert_eq!(m.eval(12.0, 1.0, 0.0), 0.0);
        assert_eq!(m.eval(1.0, 0.2, 0.0), 0.0);
        assert_eq!(m.eval(1.0, 1.0, 0.8), 0.0);
        let mid = m.eval(6.0, 1.0, 0.0);
        assert!(mid > 0.0 && mid < 1.0);
        let mut last = 1.0;
        for s in 0..=40 {
            let v = m.speed_factor(4.0 + 0.1 * s as f64);
            assert!(v <= last);
            last = v;
        }
        assert!(build_mollifier(0.6).is_err());
        assert!(build_mollifier(0.0).is_err());
    }

    #[test]
    fn kernel_of_l() {
        let c = op(16);
        let l = assemble_l(&c);
        let scale = dense::norm_1(&l.matrix);
        for f in kernel_functions(&c.grid) {
            let r = l.apply(&f);
            let rn = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let fnorm = f.iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(rn < 1e-12 * scale * fnorm, "{rn}");
        }
    }

    #[test]
    fn l_matches_twice_q_of_mu() {
        let c = op(12);
        let l = assemble_l(&c);
        let mu = c.maxwellian().to_vec();
        let h: Vec<f64> = mu.iter().enumerate().map(|(i, m)| m * ((i as f64) * 0.3).sin()).collect();
        let q = c.eval_q_profile(&mu, &h).unwrap();
        let lh = l.apply(&h);
        for (a, b) in lh.iter().zip(&q) {
            assert!((a - 2.0 * b).abs() < 1e-13);
        }
    }

    #[test]
    fn splitting_identity_and_support() {
        let c = op(12);
        for delta in [0.25, 0.5] {
            let s = split_operators(&c, delta).unwrap();
            assert!(s.identity_residual() < 1e-12);
            assert!(s.raw_identity_residual < 1e-12);
            for i in 0..c.grid.n_v_total {
                if c.grid.speed_sq(i).sqrt() > 2.0 / delta {
                    assert!((0..c.grid.n_v_total).all(|j| s.a.matrix[(i, j)] == 0.0));
                }
            }
        }
    }

    #[test]
    fn projections() {
        let grid = PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v: 16, v_max: 6.0, torus_period: 1.0 }).unwrap();
        let kp = KernelProjector::new(&grid).unwrap();
        let mu = grid.maxwellian();
        let p = kp.pi_l(&mu);
        for (a, b) in p.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-14);
        }
        let h: Vec<f64> = (0..grid.n_v_total)
            .map(|i| {
                let v = grid.velocity(i);
                (v[0] * v[0] - v[1] * v[1]) * mu[i]
            })
            .collect();
        assert!(kp.pi_l(&h).iter().all(|x| x.abs() < 1e-14));
        let r: Vec<f64> = (0..grid.n_v_total).map(|i| ((i * i) as f64 * 0.01).sin()).collect();
        let p1 = kp.pi_l(&r);
        let p2 = kp.pi_l(&p1);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn spectrum_has_kernel_and_gap() {
        let c = op(16);
        let l = assemble_l(&c);
        let r = spectral_gap(&l, &c.grid).unwrap();
        assert_eq!(r.kernel_dim, 4);
        assert!(r.lambda_0 > 0.1, "{}", r.lambda_0);
        assert!(r.kernel_basis_error < 1e-8, "{}", r.kernel_basis_error);
    }
}
