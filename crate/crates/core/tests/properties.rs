//! Property tests for the invariants the solver relies on.

use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;

use kinetic::cli::{parse_config, Experiment, ExperimentConfig};
use kinetic::collision::{post_collision_velocities, CollisionOperator, KernelConfig};
use kinetic::evolve::Transport;
use kinetic::fields::RandomField;
use kinetic::grid::{GridConfig, PhaseGrid, SpatialFft};
use kinetic::hydro::{divergence_max, leray_project, HydroState, NsSolver};
use kinetic::linop::{k_star, phi_q, smooth_step, split_operators, KernelProjector};

struct Setup {
    grid: PhaseGrid,
    op: CollisionOperator,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let grid = PhaseGrid::new(&GridConfig { dim: 2, n_x: 4, n_v: 12, v_max: 6.0, torus_period: 2.0 * PI }).unwrap();
        let op = CollisionOperator::new(&KernelConfig { n_sigma: 8, ..Default::default() }, &grid).unwrap();
        Setup { grid, op }
    })
}

fn profile(seed: u64) -> Vec<f64> {
    let s = setup();
    RandomField::default().generate(&s.grid, seed).x_mean()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn collisions_conserve_momentum_and_energy(
        v in prop::array::uniform2(-5.0..5.0f64),
        w in prop::array::uniform2(-5.0..5.0f64),
        angle in 0.0..(2.0 * PI),
    ) {
        let sigma = [angle.cos(), angle.sin()];
        let (vp, wp) = post_collision_velocities(&v, &w, &sigma);
        for a in 0..2 {
            prop_assert!((vp[a] + wp[a] - v[a] - w[a]).abs() < 1e-12);
        }
        let e = |x: &[f64]| x.iter().map(|c| c * c).sum::<f64>();
        prop_assert!((e(&vp) + e(&wp) - e(&v) - e(&w)).abs() < 1e-10);
    }

    #[test]
    fn smooth_step_is_a_monotone_symmetric_transition(t in -0.5..1.5f64, dt in 0.0..0.5f64) {
        let s = smooth_step(t);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(smooth_step(t + dt) >= s);
        prop_assert!((s + smooth_step(1.0 - t) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn phi_below_one_past_threshold(q in 1.0..50.0f64, extra in 1e-3..20.0f64) {
        prop_assert!(phi_q(k_star(q, 0.0) + extra, q) < 1.0);
        prop_assert!(phi_q(k_star(q, 0.0) + extra + 1.0, q) < phi_q(k_star(q, 0.0) + extra, q));
    }

    #[test]
    fn transport_is_unitary_and_reversible(seed in any::<u64>(), shift in -3.0..3.0f64) {
        let s = setup();
        let h = RandomField::default().generate(&s.grid, seed);
        let mut g = h.clone();
        Transport::new(&s.grid, shift).apply(&mut g);
        prop_assert!((l2(&g.values) - l2(&h.values)).abs() < 1e-10 * l2(&h.values));
        Transport::new(&s.grid, -shift).apply(&mut g);
        let err = g.values.iter().zip(&h.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10 * h.max_abs());
    }

    #[test]
    fn kernel_projection_is_idempotent(seed in any::<u64>()) {
        let kp = KernelProjector::new(&setup().grid).unwrap();
        let f = profile(seed);
        let p = kp.pi_l(&f);
        let pp = kp.pi_l(&p);
        let err = p.iter().zip(&pp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12 * l2(&f).max(1.0));
        let rest: Vec<f64> = f.iter().zip(&p).map(|(a, b)| a - b).collect();
        let m = kp.moments(&rest);
        prop_assert!(m.iter().all(|x| x.abs() < 1e-12 * l2(&f).max(1.0)), "{m:?}");
    }

    #[test]
    fn collision_is_bilinear_and_conservative(s1 in any::<u64>(), s2 in any::<u64>(), a in -2.0..2.0f64) {
        let s = setup();
        let (f, g) = (profile(s1), profile(s2));
        let q = |x: &[f64], y: &[f64]| s.op.eval_q_profile(x, y).unwrap();
        let comb: Vec<f64> = f.iter().zip(&g).map(|(x, y)| x + a * y).collect();
        let lhs = q(&comb, &f);
        let rhs: Vec<f64> = q(&f, &f).iter().zip(q(&g, &f)).map(|(x, y)| x + a * y).collect();
        let scale = l2(&lhs).max(l2(&rhs)).max(1e-12);
        let err = l2(&lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect::<Vec<_>>());
        prop_assert!(err < 1e-10 * scale);
        let kp = KernelProjector::new(&s.grid).unwrap();
        prop_assert!(kp.moments(&lhs).iter().all(|m| m.abs() < 1e-12 * scale.max(1.0)));
    }

    #[test]
    fn splitting_reassembles_l(delta in 0.05..=0.5f64) {
        let s = split_operators(&setup().op, delta).unwrap();
        prop_assert!(s.identity_residual() < 1e-10);
    }

    #[test]
    fn leray_projection_is_idempotent_and_divergence_free(seed in any::<u64>()) {
        let s = setup();
        let fft = SpatialFft::new(&s.grid);
        let h = RandomField { max_mode: 2, ..Default::default() }.generate(&s.grid, seed);
        let u: Vec<Vec<f64>> = (0..2).map(|v| h.slice(7 * v + 30).to_vec()).collect();
        let p = leray_project(&u, &fft).unwrap();
        let pp = leray_project(&p, &fft).unwrap();
        let scale = u.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        prop_assert!(divergence_max(&p, &fft) < 1e-10 * scale);
        for (a, b) in p.iter().flatten().zip(pp.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn navier_stokes_keeps_spatial_means(amp in 0.01..0.5f64, mean in -0.3..0.3f64) {
        let s = setup();
        let n = s.grid.n_x_total;
        let mut st = HydroState::zeros(2, n);
        for x in 0..n {
            let p = s.grid.position(x);
            st.u[0][x] = amp * p[0].sin() * p[1].cos();
            st.u[1][x] = -amp * p[0].cos() * p[1].sin();
            st.theta[x] = mean + amp * (p[0] + p[1]).cos();
        }
        let traj = NsSolver::new(&s.grid, 0.5, 0.7).unwrap().solve(&st, 0.5, 20, 20).unwrap();
        let last = traj.states.last().unwrap();
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((avg(&last.theta) - mean).abs() < 1e-12);
        prop_assert!(avg(&last.u[0]).abs() < 1e-12 && avg(&last.u[1]).abs() < 1e-12);
    }

    #[test]
    fn config_text_round_trips(
        exp in 0usize..6,
        seed in any::<u64>(),
        first in 0.2..1.0f64,
        ratio in 0.1..0.9f64,
        half_n in 2usize..7,
        t_end in 0.1..50.0f64,
    ) {
        let e = Experiment::ALL[exp];
        let mut cfg = ExperimentConfig::defaults(e);
        cfg.seed = seed;
        cfg.sweep = vec![first, first * ratio];
        cfg.grid.n_x = 2 * half_n;
        cfg.evolve.t_end = t_end;
        let text = cfg.to_text();
        let back = parse_config(&text, e).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back.seed, seed);
        prop_assert_eq!(back.sweep, cfg.sweep);
    }
}
