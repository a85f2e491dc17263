use std::sync::OnceLock;

use gaptail::kpp::{
    build_potential, envelope_check, estimate_bramson_shift, m_shift, solve_front, FrontSolution, FrontStepper, Frame,
    InitialData, PdeConfig,
};
use gaptail::numerics::TimeSchedule;
use gaptail::wave::{solve_wave, AdjointProfile, WaveProfile, WaveSolverConfig};
use gaptail::{Grid1D, Reaction};

// Regression value of the binary Bramson shift: T = 400 gives -0.5597 at
// dx = 0.05 and -0.5578 at dx = 0.1; runs to T = 3000 settle near -0.56.
const XBAR0_BINARY: f64 = -0.56;

struct Ctx {
    wave: WaveProfile,
    front: FrontSolution,
}

fn ctx() -> &'static Ctx {
    static CTX: OnceLock<Ctx> = OnceLock::new();
    CTX.get_or_init(|| {
        let r = Reaction::binary();
        let wave = solve_wave(&r, &WaveSolverConfig::default()).unwrap();
        let cfg = PdeConfig { dx: 0.1, ..Default::default() };
        let front = solve_front(&r, &wave, InitialData::Heaviside, &cfg).unwrap();
        Ctx { wave, front }
    })
}

fn shift_at(fs: &FrontSolution, t: f64) -> f64 {
    fs.shifts.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())).unwrap().s
}

#[test]
fn front_stays_a_monotone_profile() {
    let fs = &ctx().front;
    for h in &fs.h {
        assert!(h.iter().all(|&u| (0.0..=1.0).contains(&u)));
    }
    let env = envelope_check(fs, 5.0);
    assert!(env.monotonicity_defect <= 1e-12, "defect {}", env.monotonicity_defect);
    let n = fs.reaction.n_mean;
    assert!(env.v_min >= 0.0 && env.v_max <= n);
    assert!(env.b_left.is_finite() && env.b_left < 10.0);
    assert!(env.b_right.is_finite() && env.b_right < 100.0);
    // potential at the edges
    let r = &fs.reaction;
    for (k, h) in fs.h.iter().enumerate() {
        if fs.times[k] >= 1.0 {
            assert!(r.dnonlin(h[h.len() - 1]) < 1e-6);
            assert!((r.dnonlin(h[0]) - n).abs() < 1e-6);
        }
    }
}

#[test]
fn front_matches_the_wave_and_settles() {
    let fs = &ctx().front;
    let at50 = fs.shifts.iter().find(|p| p.t >= 50.0).unwrap();
    assert!(at50.sup_error < 0.01);
    // the fitted shift first dips (t^{-1/2} term) and then increases
    let late: Vec<_> = fs.shifts.iter().filter(|p| p.t >= 50.0).collect();
    assert!(late.windows(2).all(|w| w[1].s >= w[0].s - 1e-9));
    let dip = fs.shifts.iter().filter(|p| p.t >= 5.0).min_by(|a, b| a.s.total_cmp(&b.s)).unwrap();
    assert!(dip.t > 20.0 && dip.t < 60.0, "minimum of s at t = {}", dip.t);
}

#[test]
#[ignore = "does not hold: s(t) decreases until t ~ 40 and |s(2t) - s(t)| grows until t ~ 150"]
fn shift_is_monotone_from_t_5() {
    let fs = &ctx().front;
    let late: Vec<_> = fs.shifts.iter().filter(|p| p.t >= 5.0).collect();
    assert!(late.windows(2).all(|w| w[1].s >= w[0].s - 1e-9));
    let steps: Vec<f64> = [6.0, 12.0, 25.0, 50.0, 100.0].iter().map(|&t| (shift_at(fs, 2.0 * t) - shift_at(fs, t)).abs()).collect();
    assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
}

#[test]
fn bramson_shift_regression_and_horizon() {
    let c = ctx();
    let est = estimate_bramson_shift(&c.front).unwrap();
    assert!((est.xbar0 - XBAR0_BINARY).abs() < est.error_bar + 0.005, "{est:?}");
    let r = Reaction::binary();
    let cfg = PdeConfig { dx: 0.1, t_final: 800.0, store_fields: false, ..Default::default() };
    let long_run = solve_front(&r, &c.wave, InitialData::Heaviside, &cfg).unwrap();
    let long = estimate_bramson_shift(&long_run).unwrap();
    assert!((long.xbar0 - est.xbar0).abs() < est.error_bar, "{est:?} vs {long:?}");
    let steps: Vec<f64> =
        [150.0, 200.0, 300.0, 400.0].iter().map(|&t| (shift_at(&long_run, 2.0 * t) - shift_at(&long_run, t)).abs()).collect();
    assert!(steps.windows(2).all(|w| w[1] < w[0]), "{steps:?}");
    // the bare t^{-1/2} fit is far off
    assert!(est.bare_xbar0 < est.xbar0 - 0.1);
}

#[test]
fn shift_fit_needs_a_long_horizon() {
    let r = Reaction::binary();
    let cfg = PdeConfig { dx: 0.1, t_final: 50.0, store_fields: false, ..Default::default() };
    let fs = solve_front(&r, &ctx().wave, InitialData::Heaviside, &cfg).unwrap();
    assert!(estimate_bramson_shift(&fs).is_err());
}

fn potential() -> gaptail::kpp::PotentialField {
    let c = ctx();
    let adj = AdjointProfile::on_grid(&c.wave, XBAR0_BINARY, &c.front.grid).unwrap();
    build_potential(&c.front, &adj).unwrap()
}

#[test]
fn potential_error_is_bounded_by_inverse_sqrt() {
    // sup|E| tracks |s(t) - xbar0|, which is non-monotone before t ~ 40
    let field = potential();
    let c = (0..field.times.len())
        .filter(|&k| field.times[k] >= 1.0)
        .map(|k| field.sup_error(k) * (field.times[k] + 1.0).sqrt())
        .fold(0.0, f64::max);
    assert!(c < 1.5, "C = {c}");
    let slope = field.decay_exponent(150.0, 400.0).unwrap();
    assert!((-0.65..=-0.2).contains(&slope), "slope {slope}");
}

#[test]
#[ignore = "does not hold: the log-log slope of sup|E| over [10, 200] is about 0"]
fn potential_error_decays_like_inverse_sqrt() {
    let slope = potential().decay_exponent(10.0, 200.0).unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn hole_of_zero_width_is_the_step() {
    let r = Reaction::binary();
    let cfg = PdeConfig { dx: 0.1, t_final: 5.0, ..Default::default() };
    let w = &ctx().wave;
    let a = solve_front(&r, w, InitialData::Heaviside, &cfg).unwrap();
    let b = solve_front(&r, w, InitialData::Perturbed { y: 0.0, a: 2.0 }, &cfg).unwrap();
    for (p, q) in a.h.iter().zip(&b.h) {
        assert!(p.iter().zip(q).all(|(u, v)| (u - v).abs() <= 1e-12));
    }
}

#[test]
fn ordered_data_stay_ordered() {
    let r = Reaction::binary();
    let cfg = PdeConfig { dx: 0.05, t_final: 10.0, l_left: Some(55.0), ..Default::default() };
    let w = &ctx().wave;
    let runs: Vec<FrontSolution> = [-0.4, -0.2, 0.0]
        .iter()
        .map(|&y| solve_front(&r, w, InitialData::Perturbed { y, a: 1.0 }, &cfg).unwrap())
        .collect();
    for k in 0..runs[0].times.len() {
        for pair in runs.windows(2) {
            assert!(pair[0].h[k].iter().zip(&pair[1].h[k]).all(|(lo, hi)| *lo <= hi + 1e-12));
        }
    }
}

#[test]
fn moving_and_lab_frames_agree() {
    let r = Reaction::binary();
    let dx = 0.05;
    let t_end = 2.0;
    let schedule = TimeSchedule::for_spacing(dx, TimeSchedule::default_dt_max(dx));
    let moving = Grid1D::snapped(-30.0, 30.0, dx).unwrap();
    let lab = Grid1D::snapped(-30.0, 40.0, dx).unwrap();
    let mut m = FrontStepper::new(&r, &moving, InitialData::Heaviside, schedule, Frame::Moving).unwrap();
    let mut l = FrontStepper::new(&r, &lab, InitialData::Heaviside, schedule, Frame::Lab).unwrap();
    m.advance_to(t_end).unwrap();
    l.advance_to(t_end).unwrap();
    let shift = m_shift(t_end, &r);
    let (hm, hl) = (m.state(), l.state());
    let mut worst = 0.0f64;
    for i in 0..moving.n {
        let x = moving.x(i) + shift;
        if !(-20.0..=20.0).contains(&moving.x(i)) {
            continue;
        }
        let s = (x - lab.x_min) / dx;
        let j = s.floor() as usize;
        let f = s - j as f64;
        let v = hl[j] * (1.0 - f) + hl[j + 1] * f;
        worst = worst.max((hm[i] - v).abs());
    }
    assert!(worst < 10.0 * dx * dx, "worst {worst}");
}
