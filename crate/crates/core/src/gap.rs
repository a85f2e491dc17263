//! Linearized gap density in the moving, tilted frame.
//!
//! For a threshold `a`, the density `r(t, x)` solves
//!
//! ```text
//! r_t = r_xx - b(t) r_x - V(t, x) r,   b(t) = 3 / (2 lambda* (t + 1)),   r(0, x) = delta(x + a),
//! ```
//!
//! where `V = F'(H(t, x + m(t)))` is the potential of the front. The adjoint
//! moment `I(t) = int psi r` converges, and
//!
//! ```text
//! P(d12 > a) = e^{-lambda* (a + 2 xbar0)} / (2 lambda*^2 sqrt(pi)) * lim I(t).
//! ```
//!
//! The untilted density `z` (whose mass is `P(x1 - x2 > a)` at finite `t`) is
//! recovered both by undoing the tilt and by a direct solve. The solve starts
//! at a small `t0` from the closed-form solution with `V = N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::kpp::{m_drift, sample_times, FrontSolution, FrontStepper, Frame, InitialData, PotentialField};
use crate::numerics::fit::least_squares;
use crate::numerics::{linear_fit, Absorption, CrankNicolson, Operator, TimeSchedule};
use crate::reaction::Reaction;
use crate::wave::{AdjointProfile, WaveProfile};

/// Symbols of the explicit solution with constant absorption `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeSolutionParams {
    pub a: f64,
    pub n_mean: f64,
    pub lambda: f64,
    pub sqrt_n: f64,
    pub xi_e: f64,
}

impl FreeSolutionParams {
    pub fn new(a: f64, r: &Reaction) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("threshold a = {a} must be positive")));
        }
        let mut p = Self { a, n_mean: r.n_mean, lambda: r.lambda_star, sqrt_n: r.sqrt_n(), xi_e: 0.0 };
        let (lo, hi) = p.xi_e_interval();
        p.xi_e = 0.5 * (lo + hi);
        Ok(p)
    }

    pub fn with_xi_e(mut self, xi_e: f64) -> Result<Self> {
        let (lo, hi) = self.xi_e_interval();
        if !(xi_e > lo && xi_e < hi) {
            return Err(Error::InvalidArgument(format!("xi_e = {xi_e} outside ({lo}, {hi})")));
        }
        self.xi_e = xi_e;
        Ok(self)
    }

    /// Open interval of admissible `xi_e`.
    pub fn xi_e_interval(&self) -> (f64, f64) {
        (0.5 / (2.0 * self.sqrt_n - self.lambda), 0.5 / self.sqrt_n)
    }

    pub fn xi_star(&self) -> f64 {
        0.5 / self.sqrt_n
    }

    /// Time at which mass transport from `-a` to the origin is cheapest.
    pub fn t_star(&self) -> f64 {
        self.a * self.xi_star()
    }

    pub fn t_e(&self) -> f64 {
        self.xi_e * self.a
    }

    /// Displacement `(3 / (2 lambda*)) log(t + 1)` caused by the drift `-b(t)`.
    pub fn drift_offset(&self, t: f64) -> f64 {
        1.5 / self.lambda * t.ln_1p()
    }

    /// Center of the free solution, `-a + (3 / (2 lambda*)) log(t + 1)`.
    pub fn mu(&self, t: f64) -> f64 {
        -self.a + self.drift_offset(t)
    }

    /// `mu(t) + 2 sqrt(N) t`.
    pub fn nu(&self, t: f64) -> f64 {
        self.mu(t) + 2.0 * self.sqrt_n * t
    }

    /// Rate function `theta(xi) = N xi + 1 / (4 xi)`.
    pub fn theta(&self, xi: f64) -> f64 {
        self.n_mean * xi + 0.25 / xi
    }

    pub fn theta_second(&self, xi: f64) -> f64 {
        0.5 / (xi * xi * xi)
    }

    pub fn log_lambda_factor(&self, t: f64) -> f64 {
        let a = self.a;
        0.75 * a / (self.lambda * t) * t.ln_1p()
            - 0.5 * (4.0 * std::f64::consts::PI * t).ln()
            - self.n_mean * t
            - a * a / (4.0 * t)
    }

    /// `Lambda(t; a) = (t + 1)^{3a / (4 lambda* t)} (4 pi t)^{-1/2} e^{-N t - a^2 / (4t)}`.
    pub fn lambda_factor(&self, t: f64) -> f64 {
        self.log_lambda_factor(t).exp()
    }

    /// `g(t, x) = exp(-[x - (3 / (2 lambda*)) log(t + 1)]^2 / (4t))`.
    pub fn g(&self, t: f64, x: f64) -> f64 {
        let y = x - self.drift_offset(t);
        (-y * y / (4.0 * t)).exp()
    }

    pub fn log_p(&self, t: f64, x: f64) -> f64 {
        let y = x - self.mu(t);
        -0.5 * (4.0 * std::f64::consts::PI * t).ln() - self.n_mean * t - y * y / (4.0 * t)
    }

    /// Log of the factored form `Lambda e^{-a x / (2t)} g`.
    pub fn log_p_factored(&self, t: f64, x: f64) -> f64 {
        let y = x - self.drift_offset(t);
        self.log_lambda_factor(t) - self.a * x / (2.0 * t) - y * y / (4.0 * t)
    }
}

/// The explicit solution `p(t, x)` of `p_t = p_xx - b(t) p_x - N p`, `p(0) = delta(x + a)`.
pub fn free_solution(t: f64, x: f64, params: &FreeSolutionParams) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("free solution needs t > 0, got {t}")));
    }
    let direct = params.log_p(t, x);
    let factored = params.log_p_factored(t, x);
    let y = x - params.drift_offset(t);
    let scale = 1.0 + (params.a * params.a + 2.0 * (params.a * x).abs() + y * y) / (4.0 * t) + params.n_mean * t;
    if (direct - factored).abs() > 1e-12 * scale {
        return Err(Error::NotConverged(format!(
            "factored free solution disagrees at (t, x) = ({t}, {x}): {direct} vs {factored}"
        )));
    }
    Ok(direct.exp())
}

/// Where the potential of the gap equation comes from.
#[derive(Debug, Clone, Copy)]
pub enum PotentialSource<'a> {
    /// Integrate the front on the gap grid alongside, with the same steps.
    Lockstep,
    /// Interpolate stored front samples linearly in time.
    Stored(&'a FrontSolution),
    /// Constant potential, e.g. `N` for the free dynamics.
    Frozen(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub dx: f64,
    pub dt_max: Option<f64>,
    /// Start time of the solve (initialized with the free solution).
    pub t0: f64,
    /// Earliest stopping time; defaults to `max(20 t*, 10 a)`.
    pub t_final: Option<f64>,
    /// Continue past `t_final` until `|d log I / dt| <= flatness_tol`.
    pub run_until_flat: bool,
    pub flatness_tol: f64,
    /// Hard stop; defaults to `1.5 max(t_final, 450)`.
    pub t_max: Option<f64>,
    /// Left edge at `-a - l_left_margin`.
    pub l_left_margin: f64,
    /// Right edge; defaults to `8 sqrt(t_max + 1) + 20`.
    pub l_right: Option<f64>,
    /// Also solve the untilted density directly.
    pub direct_mass: bool,
    /// Track the free part and the corrector split.
    pub corrector: bool,
    /// Store `r` at the standard sample instants.
    pub store_fields: bool,
    /// Tolerated negative values of `r`, relative to its maximum.
    pub negativity_tol: f64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dt_max: None,
            t0: 0.002,
            t_final: None,
            run_until_flat: true,
            flatness_tol: 1e-4,
            t_max: None,
            l_left_margin: 50.0,
            l_right: None,
            direct_mass: true,
            corrector: false,
            store_fields: false,
            negativity_tol: 1e-12,
        }
    }
}

impl GapConfig {
    pub fn default_t_final(params: &FreeSolutionParams) -> f64 {
        (20.0 * params.t_star()).max(10.0 * params.a)
    }

    fn resolved(&self, params: &FreeSolutionParams) -> (f64, f64) {
        let t_final = self.t_final.unwrap_or_else(|| Self::default_t_final(params));
        let t_max = if self.run_until_flat {
            self.t_max.unwrap_or(1.5 * t_final.max(450.0)).max(t_final)
        } else {
            t_final
        };
        (t_final, t_max)
    }

    pub fn grid(&self, a: f64, t_max: f64) -> Result<Grid1D> {
        let l_right = self.l_right.unwrap_or(8.0 * (t_max + 1.0).sqrt() + 20.0);
        Grid1D::snapped(-a - self.l_left_margin, l_right, self.dx)
    }

    pub fn schedule(&self) -> TimeSchedule {
        TimeSchedule::for_spacing(self.dx, self.dt_max.unwrap_or_else(|| TimeSchedule::default_dt_max(self.dx)))
    }
}

/// Moment bookkeeping at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSample {
    pub t: f64,
    /// `I(t) = int psi r`.
    pub i: f64,
    /// `dI/dt = b(t) int r psi' + int E r psi`.
    pub di: f64,
    /// `int z` from undoing the tilt.
    pub mass_tilt: f64,
    /// `int z` from the direct solve (NaN when not solved).
    pub mass_direct: f64,
}

/// Free/corrector split of the moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectorSample {
    pub t: f64,
    pub i_free: f64,
    pub i_corr: f64,
    pub i_early: f64,
}

/// Extrapolation `y(t) = y_inf + c1 t^{-1/2} + c2 / t` of a late-time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_residual: f64,
}

/// Fit `log y = log y_inf + c1 t^{-1/2} + c2 / t` over `t >= t_from`.
pub fn extrapolate_log(series: &[(f64, f64)], t_from: f64) -> Result<Extrapolation> {
    let pts: Vec<(f64, f64)> = series.iter().filter(|p| p.0 >= t_from && p.1 > 0.0).cloned().collect();
    if pts.len() < 5 {
        return Err(Error::InvalidArgument("too few samples to extrapolate".into()));
    }
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, 1.0 / p.0.sqrt(), 1.0 / p.0]).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let c = least_squares(&rows, &y)?;
    let max_residual = rows
        .iter()
        .zip(&y)
        .map(|(r, yi)| (yi - c[0] - c[1] * r[1] - c[2] * r[2]).abs())
        .fold(0.0, f64::max);
    Ok(Extrapolation { limit: c[0].exp(), c1: c[1], c2: c[2], max_residual })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSolution {
    pub a: f64,
    pub grid: Grid1D,
    pub params: FreeSolutionParams,
    pub xbar0: f64,
    pub t0: f64,
    /// Requested earliest stop.
    pub t_final: f64,
    /// Where the solve actually stopped.
    pub t_stop: f64,
    pub moments: Vec<MomentSample>,
    /// `psi(-a)` from the wave, the exact initial moment.
    pub psi_at_seed: f64,
    pub i_final: f64,
    pub i_limit: Option<Extrapolation>,
    /// Tail probability from the extrapolated moment (from `I(t_stop)` when
    /// the run was too short to extrapolate).
    pub tail_prob: f64,
    /// Tail probability from `I(t_stop)` directly.
    pub tail_prob_final: f64,
    pub mass_limit: Option<Extrapolation>,
    /// `|dI/dt| / I` at the stop.
    pub flatness_residual: f64,
    /// Most negative `r` seen, relative to the maximum at that time.
    pub min_relative_r: f64,
    pub r_final: Vec<f64>,
    pub fields: Vec<(f64, Vec<f64>)>,
    pub corrector: Option<CorrectorReport>,
}

/// Diagnostics of the free/corrector split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub t_star: f64,
    pub t_e: f64,
    /// First time at which `int psi q >= int psi p`.
    pub crossover: Option<f64>,
    /// Whether the crossover lies in `[t* - 3 sqrt(a), t* + 3 sqrt(a)]`.
    pub crossover_in_band: bool,
    /// Smallest share of `int psi p` in `I` for `t <= t* - 3 sqrt(a)` (1 when empty).
    pub early_free_share: f64,
    /// Smallest share of `int psi q` in `I` for `t >= t* + 3 sqrt(a)`.
    pub late_corrector_share: f64,
    /// Most negative `q = r - p`, relative to `max r`.
    pub min_relative_q: f64,
    pub max_i_early: f64,
    pub max_i: f64,
    pub samples: Vec<CorrectorSample>,
}

enum Provider {
    Lockstep(Box<FrontStepper>),
    Stored { field: PotentialField, offset: usize, buf: Vec<f64> },
    Frozen(f64),
}

impl Provider {
    fn fill(&mut self, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Provider::Lockstep(front) => {
                front.advance_to(t)?;
                front.potential(out);
            }
            Provider::Stored { field, offset, buf } => {
                field.interpolate(t, buf);
                out.copy_from_slice(&buf[*offset..*offset + out.len()]);
            }
            Provider::Frozen(v) => out.fill(*v),
        }
        Ok(())
    }
}

fn stored_provider(fs: &FrontSolution, grid: &Grid1D) -> Result<Provider> {
    if fs.h.len() != fs.times.len() {
        return Err(Error::InvalidArgument("front solved without stored fields".into()));
    }
    let offset = fs.grid.offset_of(grid)?;
    let r = &fs.reaction;
    let v = fs.h.iter().map(|h| h.iter().map(|&u| r.dnonlin(u)).collect()).collect();
    let field = PotentialField { grid: fs.grid.clone(), times: fs.times.clone(), v, v_inf: Vec::new() };
    Ok(Provider::Stored { buf: vec![0.0; fs.grid.n], field, offset })
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solve the gap equation for one threshold.
pub fn solve_gap(
    a: f64,
    r: &Reaction,
    wave: &WaveProfile,
    xbar0: f64,
    source: PotentialSource<'_>,
    cfg: &GapConfig,
) -> Result<GapSolution> {
    let params = FreeSolutionParams::new(a, r)?;
    let (t_final, t_max) = cfg.resolved(&params);
    let grid = cfg.grid(a, t_max)?;
    let adjoint = AdjointProfile::on_grid(wave, xbar0, &grid)?;
    let psi_at_seed = wave.psi(-a, xbar0);
    let mut sol = integrate(a, r, &params, &grid, Some(&adjoint), source, cfg, t_final, t_max)?;
    sol.psi_at_seed = psi_at_seed;
    sol.xbar0 = xbar0;
    let lam = r.lambda_star;
    let prefactor = (-lam * (a + 2.0 * xbar0)).exp() / (2.0 * lam * lam * std::f64::consts::PI.sqrt());
    sol.tail_prob_final = prefactor * sol.i_final;
    let series: Vec<(f64, f64)> = sol.moments.iter().map(|m| (m.t, m.i)).collect();
    let from = 0.25 * sol.t_stop;
    sol.i_limit = if sol.t_stop >= 100.0 { extrapolate_log(&series, from).ok() } else { None };
    sol.tail_prob = prefactor * sol.i_limit.map_or(sol.i_final, |e| e.limit);
    let mass: Vec<(f64, f64)> = sol
        .moments
        .iter()
        .map(|m| (m.t, if m.mass_direct.is_nan() { m.mass_tilt } else { m.mass_direct }))
        .collect();
    sol.mass_limit = if sol.t_stop >= 100.0 { extrapolate_log(&mass, from).ok() } else { None };
    Ok(sol)
}

/// Mass `int z(t, x; a) dx = P(x1(t) - x2(t) > a)` up to `t_end`, as a series.
pub fn solve_z_mass(a: f64, r: &Reaction, t_end: f64, cfg: &GapConfig) -> Result<Vec<MomentSample>> {
    let params = FreeSolutionParams::new(a, r)?;
    let cfg = GapConfig { run_until_flat: false, corrector: false, store_fields: false, ..cfg.clone() };
    let grid = cfg.grid(a, t_end)?;
    let sol = integrate(a, r, &params, &grid, None, PotentialSource::Lockstep, &cfg, t_end, t_end)?;
    Ok(sol.moments)
}

#[allow(clippy::too_many_arguments)]
fn integrate(
    a: f64,
    r: &Reaction,
    params: &FreeSolutionParams,
    grid: &Grid1D,
    adjoint: Option<&AdjointProfile>,
    source: PotentialSource<'_>,
    cfg: &GapConfig,
    t_final: f64,
    t_max: f64,
) -> Result<GapSolution> {
    let t0 = cfg.t0;
    if !(t0 > 0.0 && t0 < t_final) {
        return Err(Error::InvalidArgument(format!("need 0 < t0 < t_final (t0 = {t0}, t_final = {t_final})")));
    }
    let n = grid.n;
    let lam = r.lambda_star;
    let schedule = cfg.schedule();
    let xs = grid.xs();
    let b = |t: f64| 1.5 / (lam * (t + 1.0));

    let mut provider = match source {
        PotentialSource::Lockstep => Provider::Lockstep(Box::new(FrontStepper::new(
            r,
            grid,
            InitialData::Heaviside,
            schedule,
            Frame::Moving,
        )?)),
        PotentialSource::Stored(fs) => stored_provider(fs, grid)?,
        PotentialSource::Frozen(v) => Provider::Frozen(v),
    };

    let mut rr: Vec<f64> = xs.iter().map(|&x| free_solution(t0, x, params)).collect::<Result<_>>()?;
    // tilt weight e^{-lambda (x + a)}
    let tilt: Vec<f64> = xs.iter().map(|&x| (-lam * (x + a)).exp()).collect();
    let mut zeta: Vec<f64> = if cfg.direct_mass {
        let s = (1.0 + t0).powf(1.5);
        rr.iter().zip(&tilt).map(|(p, w)| s * p * w).collect()
    } else {
        Vec::new()
    };
    let mut ph: Vec<f64> = if cfg.corrector { rr.clone() } else { Vec::new() };
    let mut qe: Vec<f64> = if cfg.corrector { vec![0.0; n] } else { Vec::new() };

    let mut v_old = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    provider.fill(t0, &mut v_old)?;

    let mut cn_r = CrankNicolson::new(n, grid.dx);
    let mut cn_z = CrankNicolson::new(n, grid.dx);
    let mut cn_p = CrankNicolson::new(n, grid.dx);
    let mut rhs = vec![0.0; n];
    let mut w_old = vec![0.0; n];
    let mut w_new = vec![0.0; n];
    let mut src = vec![0.0; n];
    let mut src_old = vec![0.0; n];

    let moment = |t: f64, rr: &[f64], zeta: &[f64], v: &[f64]| -> MomentSample {
        let (i, di) = match adjoint {
            Some(adj) => {
                let i = grid.integrate_product(&adj.psi, rr);
                let bp = grid.integrate_product(&adj.psi_prime, rr);
                let mut e = 0.0;
                for k in 1..n - 1 {
                    e += (adj.v_inf[k] - v[k]) * adj.psi[k] * rr[k];
                }
                (i, b(t) * bp + e * grid.dx)
            }
            None => (f64::NAN, f64::NAN),
        };
        MomentSample {
            t,
            i,
            di,
            mass_tilt: (1.0 + t).powf(1.5) * grid.integrate_product(&tilt, rr),
            mass_direct: if zeta.is_empty() { f64::NAN } else { grid.integrate(zeta) },
        }
    };

    let mut moments = vec![moment(t0, &rr, &zeta, &v_old)];
    let field_times: Vec<f64> = if cfg.store_fields {
        sample_times(t_max).into_iter().filter(|&s| s > t0).collect()
    } else {
        Vec::new()
    };
    let mut next_field = 0;
    let mut fields = Vec::new();
    let mut corr_samples = Vec::new();
    let mut min_q_rel = 0.0f64;
    let t_e = params.t_e();
    let mut min_rel = 0.0f64;
    let mut t = t0;
    let mut stopped_flat = false;
    let n_mean = r.n_mean;

    if cfg.corrector {
        corr_samples.push(CorrectorSample {
            t,
            i_free: moments[0].i,
            i_corr: 0.0,
            i_early: 0.0,
        });
    }

    while t < t_max {
        let (_, t_new) = schedule.advance(t, t_max);
        let dt = t_new - t;
        provider.fill(t_new, &mut v_new)?;
        let stencil = schedule.stencil_for(t_new);

        // r (and the early corrector, which shares the operator)
        cn_r.stencil = stencil;
        let old = Operator::new(-b(t), Absorption::Field(&v_old));
        let new = Operator::new(-b(t_new), Absorption::Field(&v_new));
        cn_r.explicit_half(&rr, dt, &old, &mut rhs);
        cn_r.factor(dt, &new);
        cn_r.solve(&rhs, 0.0, 0.0, &mut rr);
        if cfg.corrector {
            // forcing (N - V) p gated to t <= t_e, averaged over the step
            for k in 0..n {
                src_old[k] = if t <= t_e { (n_mean - v_old[k]) * ph[k] } else { 0.0 };
            }
            // free part with the same scheme and V = N
            cn_p.stencil = stencil;
            let op_old = Operator::new(-b(t), Absorption::Const(n_mean));
            let op_new = Operator::new(-b(t_new), Absorption::Const(n_mean));
            cn_p.explicit_half(&ph, dt, &op_old, &mut rhs);
            cn_p.factor(dt, &op_new);
            cn_p.solve(&rhs, 0.0, 0.0, &mut ph);
            for k in 0..n {
                src[k] = if t_new <= t_e { (n_mean - v_new[k]) * ph[k] } else { 0.0 };
                src[k] = 0.5 * (src[k] + src_old[k]);
            }
            cn_r.explicit_half(&qe, dt, &old, &mut rhs);
            for k in 1..n - 1 {
                rhs[k] += dt * src[k];
            }
            cn_r.solve(&rhs, 0.0, 0.0, &mut qe);
        }
        if cfg.direct_mass {
            for k in 0..n {
                w_old[k] = v_old[k] - (n_mean - 1.0);
                w_new[k] = v_new[k] - (n_mean - 1.0);
            }
            cn_z.stencil = stencil;
            let zo = Operator::new(m_drift(t, r), Absorption::Field(&w_old));
            let zn = Operator::new(m_drift(t_new, r), Absorption::Field(&w_new));
            cn_z.explicit_half(&zeta, dt, &zo, &mut rhs);
            cn_z.factor(dt, &zn);
            cn_z.solve(&rhs, 0.0, 0.0, &mut zeta);
        }
        t = t_new;
        std::mem::swap(&mut v_old, &mut v_new);

        let sup = sup_abs(&rr);
        let low = rr.iter().cloned().fold(f64::INFINITY, f64::min);
        if sup > 0.0 {
            min_rel = min_rel.min(low / sup);
        }
        if low < -cfg.negativity_tol * sup || !sup.is_finite() {
            return Err(Error::Negative { t, value: low / sup });
        }
        let m = moment(t, &rr, &zeta, &v_old);
        moments.push(m);
        if cfg.corrector {
            let adj = adjoint.ok_or_else(|| Error::InvalidArgument("corrector needs the adjoint".into()))?;
            let i_free = grid.integrate_product(&adj.psi, &ph);
            let i_early = grid.integrate_product(&adj.psi, &qe);
            for k in 0..n {
                min_q_rel = min_q_rel.min((rr[k] - ph[k]) / sup);
            }
            corr_samples.push(CorrectorSample { t, i_free, i_corr: m.i - i_free, i_early });
        }
        if next_field < field_times.len() && t >= field_times[next_field] {
            fields.push((t, rr.clone()));
            next_field += 1;
        }
        if cfg.run_until_flat && t >= t_final && adjoint.is_some() && (m.di / m.i).abs() <= cfg.flatness_tol {
            stopped_flat = true;
            break;
        }
    }
    let last = *moments.last().expect("at least the initial moment");
    let flatness_residual = (last.di / last.i).abs();
    if cfg.run_until_flat && adjoint.is_some() && !stopped_flat {
        return Err(Error::NotFlat { t, rate: flatness_residual, tolerance: cfg.flatness_tol });
    }
    let corrector = if cfg.corrector {
        Some(corrector_report(params, &corr_samples, min_q_rel))
    } else {
        None
    };
    Ok(GapSolution {
        a,
        grid: grid.clone(),
        params: *params,
        xbar0: f64::NAN,
        t0,
        t_final,
        t_stop: t,
        i_final: last.i,
        moments,
        psi_at_seed: f64::NAN,
        i_limit: None,
        tail_prob: f64::NAN,
        tail_prob_final: f64::NAN,
        mass_limit: None,
        flatness_residual,
        min_relative_r: min_rel,
        r_final: rr,
        fields,
        corrector,
    })
}

fn corrector_report(params: &FreeSolutionParams, samples: &[CorrectorSample], min_q: f64) -> CorrectorReport {
    let t_star = params.t_star();
    let band = 3.0 * params.a.sqrt();
    let crossover = samples.iter().find(|s| s.i_corr >= s.i_free).map(|s| s.t);
    let mut early_free_share: f64 = 1.0;
    let mut late_corrector_share: f64 = 1.0;
    let mut max_i_early: f64 = 0.0;
    let mut max_i: f64 = 0.0;
    for s in samples {
        let i = s.i_free + s.i_corr;
        if s.t <= t_star - band {
            early_free_share = early_free_share.min(s.i_free / i);
        }
        if s.t >= t_star + band {
            late_corrector_share = late_corrector_share.min(s.i_corr / i);
        }
        max_i_early = max_i_early.max(s.i_early);
        max_i = max_i.max(i);
    }
    CorrectorReport {
        t_star,
        t_e: params.t_e(),
        crossover,
        crossover_in_band: crossover.is_some_and(|c| (c - t_star).abs() <= band),
        early_free_share,
        late_corrector_share,
        min_relative_q: min_q,
        max_i_early,
        max_i,
        samples: samples.to_vec(),
    }
}

impl GapSolution {
    /// `dI/dt` by centered differences of the stored `I(t)` (one-sided at the ends).
    pub fn di_finite_difference(&self) -> Vec<f64> {
        let m = &self.moments;
        let n = m.len();
        (0..n)
            .map(|k| {
                let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
                (m[hi].i - m[lo].i) / (m[hi].t - m[lo].t)
            })
            .collect()
    }

    /// RMS of the relative gap between analytic and differenced `dI/dt` over `[t_lo, t_hi]`.
    pub fn derivative_consistency(&self, t_lo: f64, t_hi: f64) -> f64 {
        let fd = self.di_finite_difference();
        let (mut s, mut c) = (0.0, 0);
        for (k, m) in self.moments.iter().enumerate() {
            if m.t >= t_lo && m.t <= t_hi && k > 0 && k + 1 < self.moments.len() {
                let rel = (fd[k] - m.di) / m.di.abs().max(1e-300);
                s += rel * rel;
                c += 1;
            }
        }
        if c == 0 {
            0.0
        } else {
            (s / c as f64).sqrt()
        }
    }

    /// Slope of `log |dI/dt / I|` against `log t` for `t >= max(a, 4 t*)`.
    pub fn late_flatness_slope(&self) -> Result<f64> {
        let from = self.a.max(4.0 * self.params.t_star());
        let (lt, lr): (Vec<f64>, Vec<f64>) = self
            .moments
            .iter()
            .filter(|m| m.t >= from && m.di != 0.0)
            .map(|m| (m.t.ln(), (m.di / m.i).abs().ln()))
            .unzip();
        Ok(linear_fit(&lt, &lr)?.slope)
    }

    /// Smallest constant `C` (over a few trial `c`) with
    /// `|dI/dt / I| <= (C / a) [(t - t* + 1)^{-1/2} + e^{-c (t - t*)^2 / a}]` on `[t*, a]`.
    pub fn middle_time_envelope(&self) -> Option<(f64, f64)> {
        let ts = self.params.t_star();
        let a = self.a;
        if a <= ts {
            return None;
        }
        [0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&c| {
                let big_c = self
                    .moments
                    .iter()
                    .filter(|m| m.t >= ts && m.t <= a)
                    .map(|m| {
                        let s = m.t - ts;
                        let env = (s + 1.0).powf(-0.5) + (-c * s * s / a).exp();
                        a * (m.di / m.i).abs() / env
                    })
                    .fold(0.0, f64::max);
                (big_c, c)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
    }

    /// `I` and `dI/dt` sampled at roughly `count` log-spaced instants.
    pub fn downsampled(&self, count: usize) -> Vec<MomentSample> {
        let m = &self.moments;
        if m.len() <= count {
            return m.clone();
        }
        let (l0, l1) = (m[0].t.ln(), m[m.len() - 1].t.ln());
        let mut out = Vec::with_capacity(count);
        let mut k = 0;
        for j in 0..count {
            let target = (l0 + (l1 - l0) * j as f64 / (count - 1) as f64).exp();
            while k + 1 < m.len() && m[k].t < target {
                k += 1;
            }
            if out.last().is_none_or(|p: &MomentSample| p.t < m[k].t) {
                out.push(m[k]);
            }
        }
        out
    }

    /// Moment sample closest to `t`.
    pub fn at(&self, t: f64) -> &MomentSample {
        let k = self.moments.partition_point(|m| m.t < t).min(self.moments.len() - 1);
        if k > 0 && (self.moments[k - 1].t - t).abs() < (self.moments[k].t - t).abs() {
            &self.moments[k - 1]
        } else {
            &self.moments[k]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_solution_mass_at_small_time() {
        let r = Reaction::binary();
        let p = FreeSolutionParams::new(2.0, &r).unwrap();
        let t = 1e-4;
        let g = Grid1D::snapped(-2.5, -1.5, 1e-4).unwrap();
        let vals: Vec<f64> = g.xs().iter().map(|&x| free_solution(t, x, &p).unwrap()).collect();
        let mass = g.integrate(&vals);
        assert!((mass - (-2e-4f64).exp()).abs() < 1e-6);
        assert!(free_solution(0.0, 0.0, &p).is_err());
    }

    #[test]
    fn lambda_at_t_star() {
        let r = Reaction::binary();
        let p = FreeSolutionParams::new(10.0, &r).unwrap();
        let ts = p.t_star();
        assert!((ts - 10.0 / (2.0 * 2f64.sqrt())).abs() < 1e-14);
        let expected = (ts + 1.0).powf(3.0 * 10.0 / (4.0 * ts)) / (4.0 * std::f64::consts::PI * ts).sqrt()
            * (-(2f64.sqrt()) * 10.0).exp();
        assert!((p.lambda_factor(ts) / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_function() {
        let r = Reaction::binary();
        let p = FreeSolutionParams::new(3.0, &r).unwrap();
        let xs = p.xi_star();
        assert!((p.theta(xs) - 2f64.sqrt()).abs() < 1e-14);
        assert!((p.theta_second(xs) - 4.0 * 2f64.powf(1.5)).abs() < 1e-12);
        for d in [-0.05, 0.05] {
            assert!(p.theta(xs + d) > p.theta(xs));
        }
        let (lo, hi) = p.xi_e_interval();
        assert!(lo < p.xi_e && p.xi_e < hi);
        assert!(p.with_xi_e(hi).is_err());
        assert!((p.nu(1.0) - p.mu(1.0) - 2.0 * 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn extrapolation_recovers_limit() {
        let series: Vec<(f64, f64)> =
            (1..200).map(|k| 5.0 * k as f64).map(|t| (t, 3.0 * (-1.7 / t.sqrt() + 0.4 / t).exp())).collect();
        let e = extrapolate_log(&series, 100.0).unwrap();
        assert!((e.limit - 3.0).abs() < 1e-10);
        assert!((e.c1 + 1.7).abs() < 1e-8);
    }
}
