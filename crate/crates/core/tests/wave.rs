use gaptail::wave::{build_adjoint, solve_wave, WaveSolverConfig};
use gaptail::{OffspringLaw, Reaction};

fn laws() -> Vec<Reaction> {
    vec![
        Reaction::binary(),
        Reaction::new(OffspringLaw::new(vec![(2, 0.5), (3, 0.5)]).unwrap()).unwrap(),
        Reaction::new(OffspringLaw::new(vec![(3, 1.0)]).unwrap()).unwrap(),
        Reaction::new(OffspringLaw::new(vec![(2, 0.9), (5, 0.1)]).unwrap()).unwrap(),
    ]
}

#[test]
fn waves_for_several_laws() {
    for r in laws() {
        let w = solve_wave(&r, &WaveSolverConfig::default()).unwrap();
        assert!(w.ode_residual() < 1e-8, "N = {}: residual {}", r.n_mean, w.ode_residual());
        assert!((w.right_coefficient() - 1.0).abs() < 5e-3);
        assert!((w.left_log_slope() / r.gamma_star - 1.0).abs() < 5e-3);
        assert!(w.u.windows(2).all(|p| p[1] <= p[0]));
        assert!(w.u.iter().all(|&u| (0.0..=1.0).contains(&u)));
    }
}

#[test]
fn refinement_leaves_constants_unchanged() {
    let r = Reaction::binary();
    let coarse = solve_wave(&r, &WaveSolverConfig { dx: 0.1, ..Default::default() }).unwrap();
    let fine = solve_wave(&r, &WaveSolverConfig::default()).unwrap();
    assert!((coarse.c_u / fine.c_u - 1.0).abs() < 1e-6);
    assert!((coarse.right_constant() - fine.right_constant()).abs() < 1e-5);
}

#[test]
fn wave_is_translation_normalized() {
    // U(x) e^{lambda x} - x tends to the right constant
    let r = Reaction::binary();
    let w = solve_wave(&r, &WaveSolverConfig::default()).unwrap();
    let b = w.right_constant();
    for x in [100.0, 150.0, 200.0] {
        let p = w.eval(x);
        let lhs = p.u * x.exp() - x;
        assert!((lhs - b).abs() < 1e-3, "x = {x}: {lhs} vs {b}");
    }
}

#[test]
fn adjoint_tails_for_several_laws() {
    for r in laws() {
        let w = solve_wave(&r, &WaveSolverConfig::default()).unwrap();
        let xbar0 = -0.5;
        let adj = build_adjoint(&w, xbar0).unwrap();
        assert!(adj.ode_residual() < 1e-6, "N = {}: {}", r.n_mean, adj.ode_residual());
        let g = &adj.grid;
        // psi(x) / x at 0.9 x_max
        let i = g.nearest(0.9 * g.x_max);
        let ratio = adj.psi[i] / g.x(i) / adj.right_slope();
        assert!((ratio - 1.0).abs() < 0.01, "N = {}: right ratio {ratio}", r.n_mean);
        // left log-slope of psi is sqrt(N)
        let (i0, i1) = (g.nearest(g.x_min + 10.0), g.nearest(g.x_min + 20.0));
        let slope = (adj.psi[i1].ln() - adj.psi[i0].ln()) / (g.x(i1) - g.x(i0));
        assert!((slope / r.sqrt_n() - 1.0).abs() < 0.01, "N = {}: left slope {slope}", r.n_mean);
        let c = adj.psi[i0] * (-r.sqrt_n() * g.x(i0)).exp() / adj.left_constant(w.c_u);
        assert!((c - 1.0).abs() < 0.01);
    }
}
