//! Seeded random test fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{maxwellian_at, DistributionField, PhaseGrid};

/// Band-limited random perturbations: a few spatial Fourier modes, each
/// carrying a random cubic polynomial in v times a Gaussian envelope plus an
/// algebraic tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomField {
    /// Largest |n|_∞ of the spatial modes 2πn/L.
    pub max_mode: usize,
    /// Weight of the ⟨v⟩^{-tail_power} part of the velocity envelope.
    pub tail_amp: f64,
    pub tail_power: f64,
}

impl Default for RandomField {
    fn default() -> Self {
        Self { max_mode: 1, tail_amp: 0.05, tail_power: 6.0 }
    }
}

/// Integer mode vectors in [-m, m]^d with first nonzero entry positive, and 0.
fn half_modes(dim: usize, m: usize) -> Vec<[i64; 3]> {
    let m = m as i64;
    let mut out = Vec::new();
    let side = (2 * m + 1) as usize;
    for flat in 0..side.pow(dim as u32) {
        let mut rem = flat;
        let mut n = [0i64; 3];
        for c in n.iter_mut().take(dim) {
            *c = (rem % side) as i64 - m;
            rem /= side;
        }
        match n[..dim].iter().find(|&&c| c != 0) {
            None => out.push(n),
            Some(&c) if c > 0 => out.push(n),
            _ => {}
        }
    }
    out
}

fn monomials(dim: usize, degree: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..=degree {
        for b in 0..=degree {
            for c in 0..=degree {
                let e = [a, b, if dim == 3 { c } else { 0 }];
                if (dim == 2 && c > 0) || e.iter().sum::<usize>() > degree {
                    continue;
                }
                out.push(e);
            }
        }
    }
    out
}

impl RandomField {
    pub fn generate(&self, grid: &PhaseGrid, seed: u64) -> DistributionField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid.dim;
        let envelope: Vec<f64> = (0..grid.n_v_total)
            .map(|i| maxwellian_at(d, grid.speed_sq(i)) + self.tail_amp * grid.bracket(i).powf(-self.tail_power))
            .collect();
        let mono = monomials(d, 3);
        let profile = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let c: Vec<f64> =
                mono.iter().map(|e| rng.random_range(-1.0..1.0) / (1 + e.iter().sum::<usize>()) as f64).collect();
            (0..grid.n_v_total)
                .map(|i| {
                    let v = grid.velocity(i);
                    let p: f64 = mono
                        .iter()
                        .zip(&c)
                        .map(|(e, ci)| ci * (0..d).map(|a| v[a].powi(e[a] as i32)).product::<f64>())
                        .sum();
                    p * envelope[i]
                })
                .collect()
        };
        let mut h = DistributionField::zeros(grid);
        let two_pi_l = 2.0 * std::f64::consts::PI / grid.cfg.torus_period;
        for n in half_modes(d, self.max_mode) {
            let a = profile(&mut rng);
            let zero = n.iter().all(|&c| c == 0);
            let b = if zero { vec![0.0; grid.n_v_total] } else { profile(&mut rng) };
            let (cos, sin): (Vec<f64>, Vec<f64>) = (0..grid.n_x_total)
                .map(|x| {
                    let p = grid.position(x);
                    let ph: f64 = (0..d).map(|k| two_pi_l * n[k] as f64 * p[k]).sum();
                    (ph.cos(), ph.sin())
                })
                .unzip();
            for v in 0..grid.n_v_total {
                for (x, o) in h.slice_mut(v).iter_mut().enumerate() {
                    *o += a[v] * cos[x] + b[v] * sin[x];
                }
            }
        }
        h
    }
}

/// Deterministic profiles concentrated on velocity shells r <= |v| < r + 1,
/// modulated in x: the hardest cases for weighted-L¹ dissipativity.
pub fn shell_fields(grid: &PhaseGrid) -> Vec<DistributionField> {
    let two_pi_l = 2.0 * std::f64::consts::PI / grid.cfg.torus_period;
    let r_max = grid.cfg.v_max * (grid.dim as f64).sqrt();
    let mut out = Vec::new();
    let mut r = 0.0;
    while r < r_max {
        let f = DistributionField::from_fn(grid, |x, v| {
            let s = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if s >= r && s < r + 1.0 {
                1.0 + 0.5 * (two_pi_l * x[0]).cos()
            } else {
                0.0
            }
        });
        if f.max_abs() > 0.0 {
            out.push(f);
        }
        r += 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridConfig;

    #[test]
    fn seeded_fields_are_reproducible() {
        let g = PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v: 12, v_max: 6.0, torus_period: 1.0 }).unwrap();
        let r = RandomField::default();
        assert_eq!(r.generate(&g, 7).values, r.generate(&g, 7).values);
        assert_ne!(r.generate(&g, 7).values, r.generate(&g, 8).values);
        assert_eq!(half_modes(2, 1).len(), 5);
        assert_eq!(monomials(2, 3).len(), 10);
        assert_eq!(monomials(3, 2).len(), 10);
    }
}
