//! Off-lattice evaluation of velocity profiles.
//!
//! Post-collision velocities almost never land on the lattice, so every
//! collision sum needs point values of a field at arbitrary `v`. An
//! interpolation rule is a stencil: node indices and weights.

use crate::grid::PhaseGrid;

pub const MAX_STENCIL: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InterpKind {
    /// Tensor-product linear (2^d nodes).
    Multilinear,
    /// Tensor-product cubic Lagrange (4^d nodes).
    Cubic,
    /// Cubic Lagrange plus the minimum-norm weight correction that makes the
    /// rule exact on mu, v_a mu and |v|^2 mu. Equilibria are then annihilated
    /// to rounding.
    MaxwellCubic,
}

impl InterpKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "multilinear" | "linear" => Some(Self::Multilinear),
            "cubic" => Some(Self::Cubic),
            "maxwell-cubic" | "maxwell_cubic" => Some(Self::MaxwellCubic),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Multilinear => "multilinear",
            Self::Cubic => "cubic",
            Self::MaxwellCubic => "maxwell-cubic",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stencil {
    pub len: usize,
    pub idx: [u32; MAX_STENCIL],
    pub w: [f64; MAX_STENCIL],
}

impl Default for Stencil {
    fn default() -> Self {
        Self { len: 0, idx: [0; MAX_STENCIL], w: [0.0; MAX_STENCIL] }
    }
}

impl Stencil {
    #[inline]
    pub fn eval(&self, profile: &[f64]) -> f64 {
        (0..self.len).map(|a| self.w[a] * profile[self.idx[a] as usize]).sum()
    }

    /// out[x] = sum_a w_a field[idx_a * n_x + x].
    #[inline]
    pub fn eval_slice(&self, field: &[f64], n_x: usize, out: &mut [f64]) {
        out.fill(0.0);
        for a in 0..self.len {
            let w = self.w[a];
            if w == 0.0 {
                continue;
            }
            let base = self.idx[a] as usize * n_x;
            let src = &field[base..base + n_x];
            for (o, s) in out.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Interpolator {
    pub kind: InterpKind,
    dim: usize,
    n_v: usize,
    v_max: f64,
    dv: f64,
    v_axis: Vec<f64>,
}

fn lagrange4(t: f64) -> [f64; 4] {
    // Nodes at -1, 0, 1, 2.
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

impl Interpolator {
    pub fn new(grid: &PhaseGrid, kind: InterpKind) -> Self {
        Self { kind, dim: grid.dim, n_v: grid.n_v, v_max: grid.cfg.v_max, dv: grid.dv, v_axis: grid.v_axis.clone() }
    }

    fn width(&self) -> usize {
        match self.kind {
            InterpKind::Multilinear => 2,
            _ => 4,
        }
    }

    /// Fills `out` with the stencil for point `p`.
    pub fn stencil(&self, p: &[f64], out: &mut Stencil) {
        let d = self.dim;
        let k = self.width();
        let inside = p.iter().all(|c| c.abs() <= self.v_max);
        let mut base = [0usize; 3];
        let mut w1 = [[0.0f64; 4]; 3];
        for a in 0..d {
            let s = (p[a] + self.v_max) / self.dv - 0.5;
            let fl = s.floor();
            let lo = if k == 2 { fl } else { fl - 1.0 };
            let b = lo.clamp(0.0, (self.n_v - k) as f64) as usize;
            base[a] = b;
            match k {
                2 => {
                    let t = s - b as f64;
                    w1[a][0] = 1.0 - t;
                    w1[a][1] = t;
                }
                _ => {
                    let t = s - (b as f64 + 1.0);
                    w1[a] = lagrange4(t);
                }
            }
        }
        let len = k.pow(d as u32);
        out.len = len;
        for s in 0..len {
            let mut rem = s;
            let mut flat = 0usize;
            let mut w = 1.0;
            let mut offs = [0usize; 3];
            for a in (0..d).rev() {
                offs[a] = rem % k;
                rem /= k;
            }
            for a in 0..d {
                flat = flat * self.n_v + base[a] + offs[a];
                w *= w1[a][offs[a]];
            }
            out.idx[s] = flat as u32;
            out.w[s] = if inside { w } else { 0.0 };
        }
        if self.kind == InterpKind::MaxwellCubic {
            self.maxwell_correct(p, &base, out);
        }
    }

    /// Adds the minimum-norm correction C^T (C C^T)^{-1} (target - C w) so the
    /// weights reproduce mu * {1, v_a, |v|^2} at `p`. The constraint basis is
    /// recentred at `p` for conditioning; the affine constraint set and hence
    /// the minimum-norm solution are unchanged.
    fn maxwell_correct(&self, p: &[f64], base: &[usize; 3], st: &mut Stencil) {
        let d = self.dim;
        let m = d + 2;
        let k = 4;
        let p2: f64 = p.iter().map(|c| c * c).sum();
        let mut c = [[0.0f64; MAX_STENCIL]; 5];
        for s in 0..st.len {
            let mut rem = s;
            let mut offs = [0usize; 3];
            for a in (0..d).rev() {
                offs[a] = rem % k;
                rem /= k;
            }
            let mut va2 = 0.0;
            let mut rel = [0.0f64; 3];
            for a in 0..d {
                let va = self.v_axis[base[a] + offs[a]];
                va2 += va * va;
                rel[a] = va - p[a];
            }
            let r = (0.5 * (p2 - va2)).exp();
            c[0][s] = r;
            for a in 0..d {
                c[1 + a][s] = rel[a] * r;
            }
            c[d + 1][s] = rel[..d].iter().map(|x| x * x).sum::<f64>() * r;
        }
        let mut res = [0.0f64; 5];
        res[0] = 1.0;
        for (row, rv) in c.iter().zip(res.iter_mut()).take(m) {
            *rv -= (0..st.len).map(|s| row[s] * st.w[s]).sum::<f64>();
        }
        let mut g = [[0.0f64; 5]; 5];
        for i in 0..m {
            for j in 0..=i {
                let v: f64 = (0..st.len).map(|s| c[i][s] * c[j][s]).sum();
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        let lam = solve_small(&mut g, &mut res, m);
        for s in 0..st.len {
            st.w[s] += (0..m).map(|i| c[i][s] * lam[i]).sum::<f64>();
        }
    }
}

/// Gaussian elimination with partial pivoting on a tiny system.
fn solve_small(a: &mut [[f64; 5]; 5], b: &mut [f64; 5], n: usize) -> [f64; 5] {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for cc in col..n {
                a[r][cc] -= f * a[col][cc];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 5];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|cc| a[r][cc] * x[cc]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}
