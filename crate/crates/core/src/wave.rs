//! Critical traveling wave and the adjoint profile built from it.
//!
//! The wave solves `U'' + c* U' + f(U) = 0` with `U(-inf) = 1`, `U(+inf) = 0`,
//! normalized so that `U(x) ~ x e^{-lambda* x}` on the right. It is obtained by
//! integrating along the unstable manifold of the saddle at `U = 1`: the
//! seed `1 - U = eps e^{gamma* x}` fixes the translate, and `eps` is updated
//! until the fitted coefficient of `x e^{-lambda* x}` is one.
//!
//! Near the left end `1 - U` is far below machine epsilon, so the solver
//! carries the complement `V = 1 - U` while `V < 1/2` and stores both.

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::numerics::{linear_fit, Dopri5, LinearFit, OdeOptions};
use crate::reaction::Reaction;

/// Required quality of the tail fits.
pub const TAIL_FIT_R2: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveSolverConfig {
    pub dx: f64,
    /// Left end; defaults to `-40 / gamma*`.
    pub x_min: Option<f64>,
    /// Right end; defaults to `300 / lambda*`.
    pub x_max: Option<f64>,
    /// Window for the right-tail normalization fit; defaults to
    /// `[x_max - 10/lambda*, x_max - 2/lambda*]`.
    pub right_window: Option<(f64, f64)>,
    /// Window for the left-tail constant; defaults to
    /// `[x_min + 2/gamma*, x_min + 10/gamma*]`.
    pub left_window: Option<(f64, f64)>,
    pub rtol: f64,
    /// Stop re-seeding once `|log alpha|` falls below this.
    pub normalization_tol: f64,
    pub max_iterations: usize,
}

impl Default for WaveSolverConfig {
    fn default() -> Self {
        Self {
            dx: 0.05,
            x_min: None,
            x_max: None,
            right_window: None,
            left_window: None,
            rtol: 1e-10,
            normalization_tol: 1e-9,
            max_iterations: 12,
        }
    }
}

/// Value and derivatives of the wave at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavePoint {
    pub u: f64,
    /// `1 - u`, accurate where `u` rounds to one.
    pub v: f64,
    pub du: f64,
    pub d2u: f64,
}

#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub grid: Grid1D,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub u_prime: Vec<f64>,
    /// Left-tail constant: `1 - U(x) ~ C_U e^{gamma* x}`.
    pub c_u: f64,
    /// Total translation applied to the initial seed by the normalization.
    pub applied_shift: f64,
    /// Fit of `U e^{lambda* x} = alpha x + beta` on the right window.
    pub right_fit: LinearFit,
    /// Fit of `log(1 - U)` against `x` on the left window.
    pub left_fit: LinearFit,
    pub reaction: Reaction,
}

/// Which variable the integrator is carrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Complement,
    Direct,
}

struct Trajectory {
    u: Vec<f64>,
    v: Vec<f64>,
    du: Vec<f64>,
}

fn default_x_min(r: &Reaction, dx: f64) -> f64 {
    let x = -40.0 / r.gamma_star;
    (x / dx).floor() * dx
}

fn default_x_max(r: &Reaction) -> f64 {
    300.0 / r.lambda_star
}

fn integrate(r: &Reaction, grid: &Grid1D, eps: f64, rtol: f64) -> Result<Trajectory> {
    let c = r.c_star;
    let g = r.gamma_star;
    let mut ode = Dopri5::<2>::new(OdeOptions { rtol, h_init: grid.dx, ..OdeOptions::default() });
    let mut rhs_v = |_x: f64, y: &[f64; 2]| [y[1], -c * y[1] + r.f_of_complement(y[0])];
    let mut out = Trajectory {
        u: Vec::with_capacity(grid.n),
        v: Vec::with_capacity(grid.n),
        du: Vec::with_capacity(grid.n),
    };
    let mut form = Form::Complement;
    let mut y = [eps, g * eps];
    let tol = 1e-9;
    for i in 0..grid.n {
        if i > 0 {
            let (x0, x1) = (grid.x(i - 1), grid.x(i));
            match form {
                Form::Complement => ode.integrate(&mut rhs_v, x0, x1, &mut y)?,
                Form::Direct => {
                    let mut rhs_u = |_x: f64, y: &[f64; 2]| {
                        [y[1], -c * y[1] - r.f(y[0].clamp(0.0, 1.0))]
                    };
                    ode.integrate(&mut rhs_u, x0, x1, &mut y)?
                }
            }
        }
        let (u, v, du) = match form {
            Form::Complement => (1.0 - y[0], y[0], -y[1]),
            Form::Direct => (y[0], 1.0 - y[0], y[1]),
        };
        let x = grid.x(i);
        if !(u > -tol && v > -tol) || !du.is_finite() {
            return Err(Error::ShootingDiverged { x, reason: format!("U = {u} left [0, 1]") });
        }
        if du > 0.0 {
            return Err(Error::ShootingDiverged { x, reason: format!("U increasing (U' = {du})") });
        }
        out.u.push(u);
        out.v.push(v);
        out.du.push(du);
        if form == Form::Complement && v >= 0.5 {
            form = Form::Direct;
            y = [u, du];
        }
    }
    Ok(out)
}

fn window_indices(grid: &Grid1D, lo: f64, hi: f64) -> Vec<usize> {
    (0..grid.n).filter(|&i| (lo..=hi).contains(&grid.x(i))).collect()
}

fn right_tail_fit(r: &Reaction, grid: &Grid1D, u: &[f64], window: (f64, f64)) -> Result<LinearFit> {
    let idx = window_indices(grid, window.0, window.1);
    let xs: Vec<f64> = idx.iter().map(|&i| grid.x(i)).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| u[i] * (r.lambda_star * grid.x(i)).exp()).collect();
    let fit = linear_fit(&xs, &ys)?;
    if fit.r2 < TAIL_FIT_R2 || !(fit.slope > 0.0) {
        return Err(Error::PoorFit { what: "right tail of the wave".into(), r2: fit.r2, required: TAIL_FIT_R2 });
    }
    Ok(fit)
}

fn left_tail_fit(grid: &Grid1D, v: &[f64], window: (f64, f64)) -> Result<LinearFit> {
    let idx = window_indices(grid, window.0, window.1);
    let xs: Vec<f64> = idx.iter().map(|&i| grid.x(i)).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| v[i].ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    if fit.r2 < TAIL_FIT_R2 {
        return Err(Error::PoorFit { what: "left tail of the wave".into(), r2: fit.r2, required: TAIL_FIT_R2 });
    }
    Ok(fit)
}

pub fn solve_wave(r: &Reaction, cfg: &WaveSolverConfig) -> Result<WaveProfile> {
    let dx = cfg.dx;
    if !(dx > 0.0 && dx <= 0.5) {
        return Err(Error::InvalidArgument(format!("wave dx = {dx} outside (0, 0.5]")));
    }
    let (lam, gam) = (r.lambda_star, r.gamma_star);
    let x_min = cfg.x_min.unwrap_or_else(|| default_x_min(r, dx));
    let x_max = cfg.x_max.unwrap_or_else(|| default_x_max(r));
    if x_max < 30.0 / lam - 1e-9 || x_min > -40.0 / gam + 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "wave grid [{x_min}, {x_max}] must cover [-40/gamma*, 30/lambda*] = [{}, {}]",
            -40.0 / gam,
            30.0 / lam
        )));
    }
    let grid = Grid1D::snapped(x_min, x_max, dx)?;
    let right = cfg.right_window.unwrap_or((grid.x_max - 10.0 / lam, grid.x_max - 2.0 / lam));
    let left = cfg.left_window.unwrap_or((grid.x_min + 2.0 / gam, grid.x_min + 10.0 / gam));

    // start from C_U = 1
    let mut eps = (gam * grid.x_min).exp();
    let mut applied_shift = 0.0;
    for _ in 0..cfg.max_iterations {
        let traj = integrate(r, &grid, eps, cfg.rtol)?;
        let fit = right_tail_fit(r, &grid, &traj.u, right)?;
        let s = fit.slope.ln() / lam;
        if s.abs() * lam < cfg.normalization_tol {
            let left_fit = left_tail_fit(&grid, &traj.v, left)?;
            // regression of log(1 - U) on gamma* x; slope one up to the fit
            let c_u = left_fit.intercept.exp();
            return Ok(WaveProfile {
                grid,
                u: traj.u,
                v: traj.v,
                u_prime: traj.du,
                c_u,
                applied_shift,
                right_fit: fit,
                left_fit,
                reaction: r.clone(),
            });
        }
        // U(x + s) has unit coefficient; its seed is eps e^{gamma s}
        eps *= (gam * s).exp();
        applied_shift += s;
    }
    Err(Error::NotConverged("wave normalization".into()))
}

/// Eighth-order centered first derivative at interior node `i`.
pub(crate) fn d1_order8(f: &[f64], i: usize, dx: f64) -> f64 {
    const W: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let mut s = 0.0;
    for (k, w) in W.iter().enumerate() {
        s += w * (f[i + k + 1] - f[i - k - 1]);
    }
    s / dx
}

// quintic Hermite on [0, 1] given values, first and second derivatives
// (derivatives already scaled by the interval length)
#[inline]
fn hermite5(t: f64, y0: f64, d0: f64, s0: f64, y1: f64, d1: f64, s1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    y0 * h00 + d0 * h10 + s0 * h20 + y1 * h01 + d1 * h11 + s1 * h21
}

impl WaveProfile {
    pub fn lambda(&self) -> f64 {
        self.reaction.lambda_star
    }

    pub fn gamma(&self) -> f64 {
        self.reaction.gamma_star
    }

    /// Right-tail coefficient of `x e^{-lambda* x}` after normalization.
    pub fn right_coefficient(&self) -> f64 {
        self.right_fit.slope
    }

    /// Constant term `B` in `U(x) ~ (x + B) e^{-lambda* x}`.
    pub fn right_constant(&self) -> f64 {
        self.right_fit.intercept / self.right_fit.slope
    }

    /// Fitted left-tail log-slope `d log(1 - U) / dx`.
    pub fn left_log_slope(&self) -> f64 {
        self.left_fit.slope
    }

    /// `U'' = -c* U' - f(U)` at a stored node, using the complement where it is small.
    fn d2u_node(&self, i: usize) -> f64 {
        self.second_derivative(self.u[i], self.v[i], self.u_prime[i])
    }

    #[inline]
    fn second_derivative(&self, u: f64, v: f64, du: f64) -> f64 {
        let r = &self.reaction;
        let f = if v < 0.5 { r.f_of_complement(v) } else { r.f(u) };
        -r.c_star * du - f
    }

    #[inline]
    fn third_derivative(&self, u: f64, du: f64, d2u: f64) -> f64 {
        -self.reaction.c_star * d2u - self.reaction.df(u) * du
    }

    /// Sup-norm of `U'' + c* U' + f(U)` over interior nodes, with `U''` from
    /// eighth-order differences of the stored `U'`.
    pub fn ode_residual(&self) -> f64 {
        let n = self.grid.n;
        let mut worst = 0.0f64;
        for i in 4..n - 4 {
            let d2 = d1_order8(&self.u_prime, i, self.grid.dx);
            let res = (d2 - self.d2u_node(i)).abs();
            worst = worst.max(res);
        }
        worst
    }

    /// Wave value and derivatives at an arbitrary point.
    pub fn eval(&self, x: f64) -> WavePoint {
        let g = &self.grid;
        let lam = self.lambda();
        if x <= g.x_min {
            let v = self.v[0] * (self.gamma() * (x - g.x_min)).exp();
            let gam = self.gamma();
            return WavePoint { u: 1.0 - v, v, du: -gam * v, d2u: -gam * gam * v };
        }
        if x >= g.x_max {
            // beyond the grid the nonlinear correction is below U(x_max) in relative size
            let (alpha, beta) = (self.right_fit.slope, self.right_fit.intercept);
            let e = (-lam * x).exp();
            let u = (alpha * x + beta) * e;
            let du = (alpha - lam * (alpha * x + beta)) * e;
            let d2u = (-2.0 * lam * alpha + lam * lam * (alpha * x + beta)) * e;
            return WavePoint { u, v: 1.0 - u, du, d2u };
        }
        let s = (x - g.x_min) / g.dx;
        let i = (s.floor() as usize).min(g.n - 2);
        let t = s - i as f64;
        let h = g.dx;
        let (du0, du1) = (self.u_prime[i], self.u_prime[i + 1]);
        let (dd0, dd1) = (self.d2u_node(i), self.d2u_node(i + 1));
        let (ddd0, ddd1) = (
            self.third_derivative(self.u[i], du0, dd0),
            self.third_derivative(self.u[i + 1], du1, dd1),
        );
        let du = hermite5(t, du0, h * dd0, h * h * ddd0, du1, h * dd1, h * h * ddd1);
        let (u, v) = if self.v[i + 1] < 0.5 {
            let v = hermite5(t, self.v[i], -h * du0, -h * h * dd0, self.v[i + 1], -h * du1, -h * h * dd1);
            (1.0 - v, v)
        } else {
            let u = hermite5(t, self.u[i], h * du0, h * h * dd0, self.u[i + 1], h * du1, h * h * dd1);
            (u, 1.0 - u)
        };
        WavePoint { u, v, du, d2u: self.second_derivative(u, v, du) }
    }
}

impl WaveProfile {
    /// `psi(x) = -U'(x - xbar0) e^{lambda* x}` at an arbitrary point.
    pub fn psi(&self, x: f64, xbar0: f64) -> f64 {
        -self.eval(x - xbar0).du * (self.lambda() * x).exp()
    }
}

/// `psi(x) = -U_0'(x) e^{lambda* x}` with `U_0(x) = U(x - xbar0)`, tabulated on a grid.
#[derive(Debug, Clone)]
pub struct AdjointProfile {
    pub grid: Grid1D,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    /// Limiting potential `F'(U_0(x))` on the same grid.
    pub v_inf: Vec<f64>,
    pub xbar0: f64,
    pub lambda: f64,
    pub sqrt_n: f64,
}

pub fn build_adjoint(w: &WaveProfile, xbar0: f64) -> Result<AdjointProfile> {
    AdjointProfile::on_grid(w, xbar0, &w.grid)
}

impl AdjointProfile {
    /// Tabulate the adjoint on an arbitrary grid.
    pub fn on_grid(w: &WaveProfile, xbar0: f64, grid: &Grid1D) -> Result<Self> {
        if !xbar0.is_finite() || xbar0 <= w.grid.x_min || xbar0 >= w.grid.x_max {
            return Err(Error::InvalidArgument(format!(
                "shift {xbar0} outside the wave grid [{}, {}]",
                w.grid.x_min, w.grid.x_max
            )));
        }
        let r = &w.reaction;
        let lam = r.lambda_star;
        let mut psi = Vec::with_capacity(grid.n);
        let mut psi_prime = Vec::with_capacity(grid.n);
        let mut v_inf = Vec::with_capacity(grid.n);
        for i in 0..grid.n {
            let x = grid.x(i);
            let p = w.eval(x - xbar0);
            let e = (lam * x).exp();
            psi.push(-p.du * e);
            psi_prime.push((-p.d2u - lam * p.du) * e);
            v_inf.push(if p.v < 0.5 {
                r.n_mean - r.n_minus_dnonlin_complement(p.v)
            } else {
                r.dnonlin(p.u)
            });
        }
        Ok(Self { grid: grid.clone(), psi, psi_prime, v_inf, xbar0, lambda: lam, sqrt_n: r.sqrt_n() })
    }

    /// Sup-norm of `psi'' - F'(U_0) psi` over interior nodes, with `psi''`
    /// from eighth-order differences of `psi'`.
    pub fn ode_residual(&self) -> f64 {
        let n = self.grid.n;
        (4..n - 4)
            .map(|i| (d1_order8(&self.psi_prime, i, self.grid.dx) - self.v_inf[i] * self.psi[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Predicted `psi(x) / x` as `x -> +inf`.
    pub fn right_slope(&self) -> f64 {
        self.lambda * (self.lambda * self.xbar0).exp()
    }

    /// Predicted `psi(x) e^{-sqrt(N) x}` as `x -> -inf`.
    pub fn left_constant(&self, c_u: f64) -> f64 {
        let gam = self.sqrt_n - self.lambda;
        c_u * gam * (-gam * self.xbar0).exp()
    }

    /// Linear interpolation of `psi` (for diagnostics between nodes).
    pub fn psi_at(&self, x: f64) -> f64 {
        let g = &self.grid;
        let s = ((x - g.x_min) / g.dx).clamp(0.0, (g.n - 1) as f64);
        let i = (s.floor() as usize).min(g.n - 2);
        let t = s - i as f64;
        self.psi[i] * (1.0 - t) + self.psi[i + 1] * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::OffspringLaw;

    #[test]
    fn hermite_reproduces_quintics() {
        let p = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x.powi(3) - 0.3 * x.powi(4) + 0.1 * x.powi(5);
        let dp = |x: f64| 2.0 - 2.0 * x + 1.5 * x * x - 1.2 * x.powi(3) + 0.5 * x.powi(4);
        let d2p = |x: f64| -2.0 + 3.0 * x - 3.6 * x * x + 2.0 * x.powi(3);
        for t in [0.0, 0.2, 0.5, 0.77, 1.0] {
            let y = hermite5(t, p(0.0), dp(0.0), d2p(0.0), p(1.0), dp(1.0), d2p(1.0));
            assert!((y - p(t)).abs() < 1e-13);
        }
    }

    #[test]
    fn binary_wave_is_normalized() {
        let w = solve_wave(&Reaction::binary(), &WaveSolverConfig::default()).unwrap();
        assert!(w.ode_residual() < 1e-8, "residual {}", w.ode_residual());
        assert!((w.right_coefficient() - 1.0).abs() < 1e-6);
        assert!((w.left_log_slope() / w.gamma() - 1.0).abs() < 1e-6);
        assert!(w.c_u > 0.0);
        for i in 1..w.grid.n {
            assert!(w.u[i] <= w.u[i - 1]);
            assert!(w.u_prime[i] < 0.0);
        }
    }

    #[test]
    fn eval_matches_nodes_and_interpolates() {
        let w = solve_wave(&Reaction::binary(), &WaveSolverConfig::default()).unwrap();
        let i = w.grid.nearest(1.0);
        let p = w.eval(w.grid.x(i));
        assert!((p.u - w.u[i]).abs() < 1e-14);
        // midpoint against the half-spacing solve
        let fine = solve_wave(&Reaction::binary(), &WaveSolverConfig { dx: 0.025, ..Default::default() }).unwrap();
        for x in [-30.0, -5.0, 0.0, 3.0, 25.0] {
            let x = x + 0.025;
            let a = w.eval(x);
            let j = fine.grid.nearest(x);
            assert!((fine.grid.x(j) - x).abs() < 1e-9);
            let scale = fine.u_prime[j].abs();
            assert!((a.du - fine.u_prime[j]).abs() < 1e-8 * scale, "x = {x}");
        }
    }

    #[test]
    fn adjoint_identities() {
        let w = solve_wave(&Reaction::binary(), &WaveSolverConfig::default()).unwrap();
        let adj = build_adjoint(&w, -1.3).unwrap();
        assert!(adj.ode_residual() < 1e-6);
        assert!(adj.psi.iter().all(|&p| p > 0.0));
        assert!(adj.psi_prime.iter().all(|&p| p > 0.0));
        assert!(build_adjoint(&w, 1e6).is_err());
    }

    #[test]
    fn rejects_narrow_grid() {
        let r = Reaction::binary();
        assert!(solve_wave(&r, &WaveSolverConfig { x_max: Some(10.0), ..Default::default() }).is_err());
        let law = OffspringLaw::new(vec![(2, 0.5), (3, 0.5)]).unwrap();
        assert!(solve_wave(&Reaction::new(law).unwrap(), &WaveSolverConfig::default()).is_ok());
    }
}
