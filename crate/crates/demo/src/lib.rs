//! Browser bindings: collision frequency, spectrum of the linearized
//! operator, and Navier–Stokes decay curves, each on a grid small enough to
//! compute interactively.

use std::f64::consts::PI;

use kinetic::collision::{CollisionOperator, KernelConfig};
use kinetic::grid::{GridConfig, PhaseGrid};
use kinetic::hydro::{HydroState, NsSolver};
use kinetic::linop::{assemble_l, spectral_gap};
use kinetic::Result;
use wasm_bindgen::prelude::*;

fn js(e: kinetic::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn velocity_grid(n_v: usize) -> Result<PhaseGrid> {
    PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v, v_max: 6.0, torus_period: 2.0 * PI })
}

fn operator(grid: &PhaseGrid, gamma: f64, n_sigma: usize) -> Result<CollisionOperator> {
    CollisionOperator::new(&KernelConfig { gamma, n_sigma, ..Default::default() }, grid)
}

/// Pairs (|v|, ν(v)) over every velocity node, sorted by speed and
/// flattened.
fn collision_frequency_impl(n_v: usize, gamma: f64) -> Result<Vec<f64>> {
    let grid = velocity_grid(n_v)?;
    let op = operator(&grid, gamma, 16)?;
    let mut pts: Vec<(f64, f64)> = (0..grid.n_v_total).map(|i| (grid.speed_sq(i).sqrt(), op.nu()[i])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts.into_iter().flat_map(|(s, n)| [s, n]).collect())
}

/// `[gap, kernel_dim, re_0, im_0, re_1, im_1, ...]` for the linearized
/// operator on an n_v × n_v velocity grid.
fn spectrum_impl(n_v: usize) -> Result<Vec<f64>> {
    let grid = velocity_grid(n_v)?;
    let op = operator(&grid, 1.0, 8)?;
    let r = spectral_gap(&assemble_l(&op), &grid)?;
    let mut out = vec![r.lambda_0, r.kernel_dim as f64];
    out.extend(r.eigenvalues.iter().flat_map(|&(re, im)| [re, im]));
    Ok(out)
}

/// Kinetic energy and temperature variance of Taylor–Green flow over a heat
/// mode on the 2π torus: `[t, E(t), Θ(t), ...]`.
fn navier_stokes_decay_impl(nu_visc: f64, kappa: f64, amplitude: f64, t_end: f64) -> Result<Vec<f64>> {
    let grid = PhaseGrid::new(&GridConfig { dim: 2, n_x: 16, n_v: 8, v_max: 6.0, torus_period: 2.0 * PI })?;
    let n = grid.n_x_total;
    let mut st = HydroState::zeros(2, n);
    for x in 0..n {
        let p = grid.position(x);
        st.u[0][x] = amplitude * p[0].sin() * p[1].cos();
        st.u[1][x] = -amplitude * p[0].cos() * p[1].sin();
        st.theta[x] = amplitude * p[0].cos();
    }
    let traj = NsSolver::new(&grid, nu_visc, kappa)?.solve(&st, t_end, 200, 4)?;
    let mean_sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / n as f64;
    Ok(traj
        .times
        .iter()
        .zip(&traj.states)
        .flat_map(|(&t, s)| [t, 0.5 * (mean_sq(&s.u[0]) + mean_sq(&s.u[1])), mean_sq(&s.theta)])
        .collect())
}

#[wasm_bindgen]
pub fn collision_frequency(n_v: usize, gamma: f64) -> std::result::Result<Vec<f64>, JsError> {
    collision_frequency_impl(n_v, gamma).map_err(js)
}

#[wasm_bindgen]
pub fn spectrum(n_v: usize) -> std::result::Result<Vec<f64>, JsError> {
    spectrum_impl(n_v).map_err(js)
}

#[wasm_bindgen]
pub fn navier_stokes_decay(
    nu_visc: f64,
    kappa: f64,
    amplitude: f64,
    t_end: f64,
) -> std::result::Result<Vec<f64>, JsError> {
    navier_stokes_decay_impl(nu_visc, kappa, amplitude, t_end).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_grows_with_speed() {
        let nu = collision_frequency_impl(12, 1.0).unwrap();
        let first = nu[1];
        let last = nu[nu.len() - 1];
        assert!(last > first);
    }

    #[test]
    fn spectrum_has_four_dimensional_kernel() {
        let s = spectrum_impl(10).unwrap();
        assert_eq!(s[1], 4.0);
        assert!(s[0] > 0.0);
    }

    #[test]
    fn energy_decays_at_the_viscous_rate() {
        let c = navier_stokes_decay_impl(0.5, 0.5, 0.1, 1.0).unwrap();
        let (t, e) = (c[c.len() - 3], c[c.len() - 2]);
        let e0 = c[1];
        assert!(((e / e0).ln() / t + 4.0 * 0.5).abs() < 1e-3);
    }
}
