use std::sync::OnceLock;

use gaptail::gap::{free_solution, solve_gap, solve_z_mass, FreeSolutionParams, GapConfig, PotentialSource};
use gaptail::kpp::{solve_front, InitialData, PdeConfig};
use gaptail::wave::{solve_wave, WaveProfile, WaveSolverConfig};
use gaptail::{Error, Reaction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Bramson shift of the binary front measured by this crate (long runs); the
// checks below only depend on it through a common factor.
const XBAR0: f64 = -0.56;

fn wave() -> &'static WaveProfile {
    static W: OnceLock<WaveProfile> = OnceLock::new();
    W.get_or_init(|| solve_wave(&Reaction::binary(), &WaveSolverConfig::default()).unwrap())
}

#[test]
fn free_solution_solves_its_equation() {
    let r = Reaction::binary();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ht, hx) = (1e-3, 1e-2);
    let d1 = |f: &dyn Fn(f64) -> f64, z: f64, h: f64| {
        (f(z - 2.0 * h) - 8.0 * f(z - h) + 8.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h)
    };
    let d2 = |f: &dyn Fn(f64) -> f64, z: f64, h: f64| {
        (-f(z - 2.0 * h) + 16.0 * f(z - h) - 30.0 * f(z) + 16.0 * f(z + h) - f(z + 2.0 * h)) / (12.0 * h * h)
    };
    for _ in 0..100 {
        let a = rng.random_range(0.5..10.0);
        let p = FreeSolutionParams::new(a, &r).unwrap();
        let t = rng.random_range(0.5..5.0);
        let x = p.mu(t) + rng.random_range(-3.0..3.0) * (2.0 * t).sqrt();
        let b = 1.5 / (r.lambda_star * (t + 1.0));
        let in_t = |s: f64| free_solution(s, x, &p).unwrap();
        let in_x = |y: f64| free_solution(t, y, &p).unwrap();
        let val = in_x(x);
        let res = d1(&in_t, t, ht) - d2(&in_x, x, hx) + b * d1(&in_x, x, hx) + r.n_mean * val;
        assert!(res.abs() < 1e-5 * val + 1e-12, "a = {a}, t = {t}, x = {x}: residual {res} vs {val}");
    }
}

proptest! {
    #[test]
    fn factored_form_agrees(a in 0.5f64..40.0, t in 0.001f64..50.0, u in -4.0f64..4.0) {
        let r = Reaction::binary();
        let p = FreeSolutionParams::new(a, &r).unwrap();
        let x = p.mu(t) + u * (2.0 * t).sqrt();
        let direct = p.log_p(t, x);
        let factored = p.log_p_factored(t, x);
        // the factored terms cancel, so rounding scales with their size
        let scale = 1.0 + p.log_lambda_factor(t).abs() + (a * x / (2.0 * t)).abs();
        prop_assert!((direct - factored).abs() < 1e-12 * scale, "{} vs {}", direct, factored);
        let g = p.g(t, x);
        if g > 1e-300 {
            let linear = p.log_lambda_factor(t) - a * x / (2.0 * t) + g.ln();
            prop_assert!((direct - linear).abs() < 1e-12 * scale);
        }
        prop_assert!(free_solution(t, x, &p).is_ok());
    }

    #[test]
    fn xi_e_interval_is_nonempty(n in 1.05f64..6.0) {
        let lam = (n - 1.0).sqrt();
        let (lo, hi) = (0.5 / (2.0 * n.sqrt() - lam), 0.5 / n.sqrt());
        prop_assert!(lo < hi);
    }
}

#[test]
fn frozen_potential_reproduces_free_solution() {
    let r = Reaction::binary();
    let a = 5.0;
    let cfg = GapConfig { t_final: Some(5.0), run_until_flat: false, direct_mass: false, ..Default::default() };
    let s = solve_gap(a, &r, wave(), XBAR0, PotentialSource::Frozen(r.n_mean), &cfg).unwrap();
    let p = FreeSolutionParams::new(a, &r).unwrap();
    let exact: Vec<f64> = s.grid.xs().iter().map(|&x| free_solution(5.0, x, &p).unwrap()).collect();
    let sup = exact.iter().cloned().fold(0.0, f64::max);
    let err = s.r_final.iter().zip(&exact).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3 * sup, "relative error {}", err / sup);
}

#[test]
fn initial_moment_and_early_growth() {
    let r = Reaction::binary();
    for a in [2.0, 8.0] {
        let cfg = GapConfig { t_final: Some(3.0), run_until_flat: false, ..Default::default() };
        let s = solve_gap(a, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg).unwrap();
        let ratio = s.moments[0].i / s.psi_at_seed;
        assert!((ratio - 1.0).abs() < 0.01, "a = {a}: {ratio}");
        // the two estimates of dI/dt
        assert!(s.derivative_consistency(1.0, 3.0) < 0.01);
        // tilted and direct masses, both probabilities
        for m in &s.moments {
            assert!((m.mass_tilt / m.mass_direct - 1.0).abs() < 5e-3, "t = {}", m.t);
            assert!((0.0..=1.0).contains(&m.mass_direct));
        }
        assert!(s.min_relative_r >= -1e-12);
    }
}

#[test]
fn stored_and_lockstep_potentials_agree() {
    let r = Reaction::binary();
    let a = 3.0;
    let t_final = 20.0;
    let pde = PdeConfig { dx: 0.05, t_final, store_fields: true, l_left: Some(a + 50.0), ..Default::default() };
    let front = solve_front(&r, wave(), InitialData::Heaviside, &pde).unwrap();
    let cfg = GapConfig {
        t_final: Some(t_final),
        run_until_flat: false,
        l_right: Some(front.grid.x_max),
        ..Default::default()
    };
    let lock = solve_gap(a, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg).unwrap();
    let stored = solve_gap(a, &r, wave(), XBAR0, PotentialSource::Stored(&front), &cfg).unwrap();
    assert!((lock.i_final / stored.i_final - 1.0).abs() < 1e-2);
}

#[test]
fn z_mass_is_a_decreasing_probability() {
    let r = Reaction::binary();
    let m = solve_z_mass(1.0, &r, 6.0, &GapConfig::default()).unwrap();
    assert!(m.iter().all(|s| (0.0..=1.0).contains(&s.mass_direct)));
    let late: Vec<f64> = m.iter().filter(|s| s.t > 3.0).map(|s| s.mass_direct).collect();
    assert!(late.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
}

#[test]
fn rejects_bad_arguments() {
    let r = Reaction::binary();
    assert!(FreeSolutionParams::new(0.0, &r).is_err());
    let p = FreeSolutionParams::new(1.0, &r).unwrap();
    assert!(free_solution(-1.0, 0.0, &p).is_err());
    let cfg = GapConfig { t0: 5.0, t_final: Some(1.0), run_until_flat: false, ..Default::default() };
    assert!(matches!(
        solve_gap(1.0, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg),
        Err(Error::InvalidArgument(_))
    ));
    // flatness cannot be reached before the hard stop
    let cfg = GapConfig { dx: 0.1, t_final: Some(5.0), t_max: Some(10.0), ..Default::default() };
    assert!(matches!(
        solve_gap(1.0, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg),
        Err(Error::NotFlat { .. })
    ));
}

#[test]
fn corrector_crosses_over_near_transition_time() {
    let r = Reaction::binary();
    for a in [10.0, 20.0] {
        let p = FreeSolutionParams::new(a, &r).unwrap();
        let cfg = GapConfig {
            t_final: Some(p.t_star() + 3.0 * a.sqrt() + 5.0),
            run_until_flat: false,
            corrector: true,
            direct_mass: false,
            ..Default::default()
        };
        let s = solve_gap(a, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg).unwrap();
        let c = s.corrector.unwrap();
        assert!(c.crossover_in_band, "a = {a}: crossover {:?}, t* = {}", c.crossover, c.t_star);
        assert!(c.min_relative_q >= -1e-10);
        assert!(c.late_corrector_share > 0.9);
        assert!(c.max_i_early <= c.max_i);
    }
}

#[test]
fn tail_is_stable_under_refinement() {
    let r = Reaction::binary();
    let run = |dx: f64| {
        let cfg = GapConfig { dx, direct_mass: false, ..Default::default() };
        solve_gap(2.0, &r, wave(), XBAR0, PotentialSource::Lockstep, &cfg).unwrap()
    };
    let (coarse, fine) = (run(0.1), run(0.05));
    assert!((coarse.tail_prob / fine.tail_prob - 1.0).abs() < 0.01, "{} vs {}", coarse.tail_prob, fine.tail_prob);
    assert!(fine.late_flatness_slope().unwrap() <= -1.2);
    assert!(fine.flatness_residual <= 1e-4);
}
