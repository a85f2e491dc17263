//! Fisher–KPP front from step-like data, solved in the frame moving with
//!
//! ```text
//! m(t) = c* t - (3 / (2 lambda*)) log(t + 1).
//! ```
//!
//! In that frame `u(t, x) = H(t, x + m(t))` obeys `u_t = u_xx + m'(t) u_x + f(u)`.
//! The linear part is Crank–Nicolson, the reaction is Heun (explicit
//! trapezoidal) so both stages share one factorization.
//!
//! Besides the sampled front this module extracts the Bramson shift, builds
//! the potential `V = F'(H)` seen by the linearized gap equation, and checks
//! the derivative of the shift with respect to a hole in the initial data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::numerics::{fit_inverse_sqrt, linear_fit, Absorption, CrankNicolson, Operator, TimeSchedule};
use crate::reaction::Reaction;
use crate::wave::{AdjointProfile, WaveProfile};

/// Largest excursion outside `[0, 1]` tolerated before the solve is declared unstable.
pub const EXCURSION_TOL: f64 = 1e-6;

pub fn m_shift(t: f64, r: &Reaction) -> f64 {
    r.c_star * t - 1.5 / r.lambda_star * t.ln_1p()
}

/// `m'(t)`, the drift of the moving frame.
pub fn m_drift(t: f64, r: &Reaction) -> f64 {
    r.c_star - 1.5 / (r.lambda_star * (t + 1.0))
}

/// Initial data: the step `1_{(-inf, 0]}` or the step with a hole
/// `1_{(-inf, 0]} - 1_{(y - a, -a]}` for `y <= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitialData {
    Heaviside,
    Perturbed { y: f64, a: f64 },
}

impl InitialData {
    fn validate(&self) -> Result<()> {
        if let InitialData::Perturbed { y, a } = *self {
            if !(y <= 0.0 && a > 0.0) || !y.is_finite() || !a.is_finite() {
                return Err(Error::InvalidArgument(format!("perturbed data needs y <= 0 < a (y = {y}, a = {a})")));
            }
        }
        Ok(())
    }

    /// Cell averages on the grid: each node gets the mean of the data over
    /// `[x - dx/2, x + dx/2]`, so a jump on a node contributes one half.
    pub fn cell_averages(&self, grid: &Grid1D) -> Vec<f64> {
        let h = 0.5 * grid.dx;
        let cover = |lo: f64, hi: f64, x: f64| ((hi.min(x + h) - lo.max(x - h)).max(0.0)) / grid.dx;
        grid.xs()
            .iter()
            .map(|&x| {
                let step = cover(f64::NEG_INFINITY, 0.0, x);
                match *self {
                    InitialData::Heaviside => step,
                    InitialData::Perturbed { y, a } => {
                        if y == 0.0 {
                            step
                        } else {
                            step - cover(y - a, -a, x)
                        }
                    }
                }
            })
            .collect()
    }
}

/// Reference frame of the solve. The lab frame exists for consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Moving,
    Lab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub dx: f64,
    /// Cap on the time step; defaults to `min(dx/4, 0.01)`.
    pub dt_max: Option<f64>,
    pub t_final: f64,
    /// Distance from the origin to the left edge; defaults to 50.
    pub l_left: Option<f64>,
    /// Distance from the origin to the right edge; defaults to `8 sqrt(t_final + 1) + 20`.
    pub l_right: Option<f64>,
    /// Half width of the window used to fit the shift.
    pub fit_half_width: f64,
    pub store_fields: bool,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            dx: 0.05,
            dt_max: None,
            t_final: 400.0,
            l_left: None,
            l_right: None,
            fit_half_width: 5.0,
            store_fields: true,
        }
    }
}

impl PdeConfig {
    pub fn schedule(&self) -> TimeSchedule {
        TimeSchedule::for_spacing(self.dx, self.dt_max.unwrap_or_else(|| TimeSchedule::default_dt_max(self.dx)))
    }

    pub fn default_l_right(t: f64) -> f64 {
        8.0 * (t + 1.0).sqrt() + 20.0
    }

    pub fn grid(&self) -> Result<Grid1D> {
        if !(self.dx > 0.0 && self.dx <= 0.5) {
            return Err(Error::InvalidArgument(format!("dx = {} outside (0, 0.5]", self.dx)));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::InvalidArgument(format!("t_final = {} must be positive", self.t_final)));
        }
        let l_left = self.l_left.unwrap_or(50.0);
        let l_right = self.l_right.unwrap_or_else(|| Self::default_l_right(self.t_final));
        Grid1D::snapped(-l_left, l_right, self.dx)
    }
}

/// Sample instants: every 0.01 up to 0.1, every 0.1 up to 10, then
/// geometric with ratio 1.02; always ending at `t_final`.
pub fn sample_times(t_final: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (1..=10).map(|k| k as f64 * 0.01).collect();
    ts.extend((2..=100).map(|k| k as f64 * 0.1));
    let mut t = 10.0;
    loop {
        t *= 1.02;
        if t >= t_final {
            break;
        }
        ts.push(t);
    }
    ts.retain(|&s| s < t_final * (1.0 - 1e-9));
    ts.push(t_final);
    ts
}

/// Time stepper for the front on a fixed grid.
#[derive(Debug, Clone)]
pub struct FrontStepper {
    pub reaction: Reaction,
    pub grid: Grid1D,
    pub schedule: TimeSchedule,
    pub frame: Frame,
    u: Vec<f64>,
    t: f64,
    cn: CrankNicolson,
    f_old: Vec<f64>,
    half: Vec<f64>,
    rhs: Vec<f64>,
    pred: Vec<f64>,
}

impl FrontStepper {
    pub fn new(r: &Reaction, grid: &Grid1D, init: InitialData, schedule: TimeSchedule, frame: Frame) -> Result<Self> {
        init.validate()?;
        let u = init.cell_averages(grid);
        let n = grid.n;
        Ok(Self {
            reaction: r.clone(),
            grid: grid.clone(),
            schedule,
            frame,
            u,
            t: 0.0,
            cn: CrankNicolson::new(n, grid.dx),
            f_old: vec![0.0; n],
            half: vec![0.0; n],
            rhs: vec![0.0; n],
            pred: vec![0.0; n],
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    fn drift(&self, t: f64) -> f64 {
        match self.frame {
            Frame::Moving => m_drift(t, &self.reaction),
            Frame::Lab => 0.0,
        }
    }

    fn fill_reaction(r: &Reaction, u: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(u) {
            *o = r.f(v);
        }
    }

    /// One step to `t_new`.
    pub fn step_to(&mut self, t_new: f64) -> Result<()> {
        let dt = t_new - self.t;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("non-increasing step {} -> {t_new}", self.t)));
        }
        let old = Operator::new(self.drift(self.t), Absorption::Zero);
        let new = Operator::new(self.drift(t_new), Absorption::Zero);
        let n = self.grid.n;
        Self::fill_reaction(&self.reaction, &self.u, &mut self.f_old);
        self.cn.stencil = self.schedule.stencil_for(t_new);
        self.cn.explicit_half(&self.u, dt, &old, &mut self.half);
        self.cn.factor(dt, &new);
        // predictor
        for i in 1..n - 1 {
            self.rhs[i] = self.half[i] + dt * self.f_old[i];
        }
        self.cn.solve(&self.rhs, 1.0, 0.0, &mut self.pred);
        for v in self.pred.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        // corrector with the trapezoidal reaction
        for i in 1..n - 1 {
            self.rhs[i] = self.half[i] + 0.5 * dt * (self.f_old[i] + self.reaction.f(self.pred[i]));
        }
        self.cn.solve(&self.rhs, 1.0, 0.0, &mut self.u);
        let mut worst = 0.0f64;
        for v in self.u.iter_mut() {
            let e = (-*v).max(*v - 1.0);
            if e > 0.0 {
                worst = worst.max(e);
                *v = v.clamp(0.0, 1.0);
            }
        }
        if worst > EXCURSION_TOL || self.u.iter().any(|v| v.is_nan()) {
            return Err(Error::Stability { t: t_new, excursion: worst, tolerance: EXCURSION_TOL });
        }
        self.t = t_new;
        Ok(())
    }

    /// Step along the schedule until exactly `target`.
    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        while self.t < target {
            let (_, t_new) = self.schedule.advance(self.t, target);
            self.step_to(t_new)?;
        }
        Ok(())
    }

    /// `V = F'(u)` on the grid.
    pub fn potential(&self, out: &mut [f64]) {
        for (o, &u) in out.iter_mut().zip(&self.u) {
            *o = self.reaction.dnonlin(u);
        }
    }
}

/// Least-squares fit of a front profile against translates of the wave.
#[derive(Debug, Clone)]
pub struct ShiftFitter<'a> {
    wave: &'a WaveProfile,
    half_width: f64,
    half_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSample {
    pub t: f64,
    pub s: f64,
    /// `sup_x |H(t, x + m(t)) - U(x - s)|` over the whole grid.
    pub sup_error: f64,
}

impl<'a> ShiftFitter<'a> {
    pub fn new(wave: &'a WaveProfile, half_width: f64) -> Self {
        // position where the wave crosses 1/2
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if wave.eval(mid).u > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self { wave, half_width, half_level: 0.5 * (lo + hi) }
    }

    fn crossing(grid: &Grid1D, h: &[f64]) -> Option<f64> {
        (1..grid.n).find(|&i| h[i] <= 0.5 && h[i - 1] > 0.5).map(|i| {
            let (a, b) = (h[i - 1], h[i]);
            grid.x(i - 1) + grid.dx * (a - 0.5) / (a - b)
        })
    }

    /// Fit `s` minimizing `sum_{|x| <= w} (h(x) - U(x - s))^2`.
    pub fn fit(&self, grid: &Grid1D, h: &[f64], guess: Option<f64>) -> Result<(f64, f64)> {
        let mut s = guess
            .or_else(|| Self::crossing(grid, h).map(|x| x - self.half_level))
            .unwrap_or(0.0);
        let idx: Vec<usize> = (0..grid.n).filter(|&i| grid.x(i).abs() <= self.half_width + 1e-9).collect();
        let mut converged = false;
        for _ in 0..50 {
            let mut num = 0.0;
            let mut den = 0.0;
            for &i in &idx {
                let p = self.wave.eval(grid.x(i) - s);
                let j = -p.du;
                num += (h[i] - p.u) * j;
                den += j * j;
            }
            if !(den > 0.0) {
                break;
            }
            let step = (num / den).clamp(-2.0, 2.0);
            s += step;
            if step.abs() < 1e-13 {
                converged = true;
                break;
            }
        }
        if !converged || !s.is_finite() {
            return Err(Error::NotConverged("shift fit".into()));
        }
        let sup = (0..grid.n)
            .map(|i| (h[i] - self.wave.eval(grid.x(i) - s).u).abs())
            .fold(0.0, f64::max);
        Ok((s, sup))
    }
}

/// Sampled front in the moving frame.
#[derive(Debug, Clone)]
pub struct FrontSolution {
    pub grid: Grid1D,
    pub init: InitialData,
    pub reaction: Reaction,
    pub schedule: TimeSchedule,
    pub times: Vec<f64>,
    /// `H(t, x + m(t))` at each sample (empty unless fields are stored).
    pub h: Vec<Vec<f64>>,
    pub shifts: Vec<ShiftSample>,
    pub t_final: f64,
}

pub fn solve_front(r: &Reaction, wave: &WaveProfile, init: InitialData, cfg: &PdeConfig) -> Result<FrontSolution> {
    let grid = cfg.grid()?;
    solve_front_on(r, wave, init, cfg, &grid)
}

/// As [`solve_front`] on an explicit grid.
pub fn solve_front_on(
    r: &Reaction,
    wave: &WaveProfile,
    init: InitialData,
    cfg: &PdeConfig,
    grid: &Grid1D,
) -> Result<FrontSolution> {
    let schedule = cfg.schedule();
    let mut stepper = FrontStepper::new(r, grid, init, schedule, Frame::Moving)?;
    let fitter = ShiftFitter::new(wave, cfg.fit_half_width);
    let times = sample_times(cfg.t_final);
    let mut h = Vec::new();
    let mut shifts = Vec::with_capacity(times.len());
    let mut guess = None;
    for &t in &times {
        stepper.advance_to(t)?;
        let state = stepper.state();
        let (s, sup_error) = fitter.fit(grid, state, guess)?;
        guess = Some(s);
        shifts.push(ShiftSample { t, s, sup_error });
        if cfg.store_fields {
            h.push(state.to_vec());
        }
    }
    Ok(FrontSolution {
        grid: grid.clone(),
        init,
        reaction: r.clone(),
        schedule,
        times,
        h,
        shifts,
        t_final: cfg.t_final,
    })
}

/// Extrapolated Bramson shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    pub xbar0: f64,
    /// Larger of the largest fit residual and the change of the estimate when
    /// the window shrinks to the last half decade.
    pub error_bar: f64,
    /// Fitted coefficient of `1/t`.
    pub d: f64,
    pub r2: f64,
    /// Limit from the bare two-parameter fit `s = x + c t^{-1/2}`, for comparison.
    pub bare_xbar0: f64,
}

/// Shortest front run whose shift can be extrapolated.
pub const MIN_SHIFT_HORIZON: f64 = 100.0;

/// Minimum R^2 of the extrapolation fit.
pub const SHIFT_FIT_R2: f64 = 0.99;

/// Universal coefficient of `(log t) / t` in the front position for `lambda* = 1`.
pub fn log_correction_coefficient() -> f64 {
    9.0 / 8.0 * (5.0 - 6.0 * std::f64::consts::LN_2)
}

/// The universal part of the approach `s(t) -> xbar0`:
/// `-(3 sqrt(pi) / lambda^2) t^{-1/2} + (kappa / lambda^3) log(t) / t`.
pub fn universal_shift_correction(t: f64, lambda: f64) -> f64 {
    -3.0 * std::f64::consts::PI.sqrt() / (lambda * lambda * t.sqrt())
        + log_correction_coefficient() / lambda.powi(3) * t.ln() / t
}

fn fit_shift_window(series: &[(f64, f64)], lambda: f64, lo: f64) -> Result<(f64, f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = series.iter().filter(|p| p.0 >= lo * (1.0 - 1e-12)).cloned().collect();
    let x: Vec<f64> = pts.iter().map(|p| 1.0 / p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1 - universal_shift_correction(p.0, lambda)).collect();
    let fit = linear_fit(&x, &y)?;
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sst: f64 = pts.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - fit.intercept - fit.slope * a).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    Ok((fit.intercept, fit.slope, r2, fit.max_residual))
}

/// Extrapolate a shift series `(t, s(t))` to `t = infinity`.
///
/// The fixed universal terms of [`universal_shift_correction`] are removed
/// and `xbar0 + d / t` is fitted over the last decade `[T/10, T]`.
pub fn extrapolate_shift(series: &[(f64, f64)], lambda: f64) -> Result<ShiftEstimate> {
    let t_end = series.last().map(|p| p.0).unwrap_or(0.0);
    if t_end < MIN_SHIFT_HORIZON {
        return Err(Error::InvalidArgument(format!("shift extrapolation needs T >= {MIN_SHIFT_HORIZON}, got {t_end}")));
    }
    let (xbar0, d, r2, max_res) = fit_shift_window(series, lambda, 0.1 * t_end)?;
    if r2 < SHIFT_FIT_R2 {
        return Err(Error::PoorFit { what: "shift extrapolation".into(), r2, required: SHIFT_FIT_R2 });
    }
    let (late, _, _, _) = fit_shift_window(series, lambda, 0.2 * t_end)?;
    let (t, s): (Vec<f64>, Vec<f64>) = series.iter().filter(|p| p.0 >= 0.1 * t_end).cloned().unzip();
    let bare = fit_inverse_sqrt(&t, &s)?;
    Ok(ShiftEstimate { xbar0, error_bar: max_res.max((late - xbar0).abs()), d, r2, bare_xbar0: bare.intercept })
}

pub fn estimate_bramson_shift(fs: &FrontSolution) -> Result<ShiftEstimate> {
    let series: Vec<(f64, f64)> = fs.shifts.iter().map(|p| (p.t, p.s)).collect();
    extrapolate_shift(&series, fs.reaction.lambda_star)
}

/// `V(infinity, x) = F'(U(x - xbar0))` on a grid.
pub fn limiting_potential(wave: &WaveProfile, xbar0: f64, grid: &Grid1D) -> Vec<f64> {
    let r = &wave.reaction;
    grid.xs()
        .iter()
        .map(|&x| {
            let p = wave.eval(x - xbar0);
            if p.v < 0.5 {
                r.n_mean - r.n_minus_dnonlin_complement(p.v)
            } else {
                r.dnonlin(p.u)
            }
        })
        .collect()
}

/// Potential and error fields at the stored samples.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub v_inf: Vec<f64>,
}

pub fn build_potential(fs: &FrontSolution, adjoint: &AdjointProfile) -> Result<PotentialField> {
    if fs.h.len() != fs.times.len() {
        return Err(Error::InvalidArgument("front solved without stored fields".into()));
    }
    let off = adjoint.grid.offset_of(&fs.grid)?;
    let r = &fs.reaction;
    let v = fs.h.iter().map(|h| h.iter().map(|&u| r.dnonlin(u)).collect()).collect();
    Ok(PotentialField {
        grid: fs.grid.clone(),
        times: fs.times.clone(),
        v,
        v_inf: adjoint.v_inf[off..off + fs.grid.n].to_vec(),
    })
}

impl PotentialField {
    /// `E = V(infinity) - V(t)` at sample `k`.
    pub fn error_at(&self, k: usize) -> Vec<f64> {
        self.v_inf.iter().zip(&self.v[k]).map(|(a, b)| a - b).collect()
    }

    pub fn sup_error(&self, k: usize) -> f64 {
        self.v_inf.iter().zip(&self.v[k]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Slope of `log sup|E|` against `log t` over `[t0, t1]`.
    pub fn decay_exponent(&self, t0: f64, t1: f64) -> Result<f64> {
        let (lt, le): (Vec<f64>, Vec<f64>) = (0..self.times.len())
            .filter(|&k| self.times[k] >= t0 && self.times[k] <= t1)
            .map(|k| (self.times[k].ln(), self.sup_error(k).ln()))
            .unzip();
        Ok(linear_fit(&lt, &le)?.slope)
    }

    /// Piecewise-linear interpolation in `t` onto `out`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            out.copy_from_slice(&self.v[0]);
            return;
        }
        if k >= self.times.len() {
            out.copy_from_slice(&self.v[self.times.len() - 1]);
            return;
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        for ((o, a), b) in out.iter_mut().zip(&self.v[k - 1]).zip(&self.v[k]) {
            *o = a + w * (b - a);
        }
    }
}

/// Constants of the exponential envelopes `N - V <= B e^{gamma* x}` and
/// `V <= B e^{-c x}`, taken as the smallest `B` that works over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub b_left: f64,
    pub b_right: f64,
    pub c: f64,
    /// Smallest and largest `V` seen.
    pub v_min: f64,
    pub v_max: f64,
    /// Largest increase of `H` between neighbouring nodes.
    pub monotonicity_defect: f64,
}

pub fn envelope_check(fs: &FrontSolution, t_min: f64) -> EnvelopeReport {
    let r = &fs.reaction;
    let c = 0.5 * r.lambda_star;
    let mut rep = EnvelopeReport {
        b_left: 0.0,
        b_right: 0.0,
        c,
        v_min: f64::INFINITY,
        v_max: f64::NEG_INFINITY,
        monotonicity_defect: 0.0,
    };
    for (k, h) in fs.h.iter().enumerate() {
        for i in 0..fs.grid.n {
            let v = r.dnonlin(h[i]);
            rep.v_min = rep.v_min.min(v);
            rep.v_max = rep.v_max.max(v);
            if i > 0 {
                rep.monotonicity_defect = rep.monotonicity_defect.max(h[i] - h[i - 1]);
            }
            if fs.times[k] < t_min {
                continue;
            }
            let x = fs.grid.x(i);
            let gap = r.n_mean - v;
            rep.b_left = rep.b_left.max(gap * (-r.gamma_star * x).exp());
            rep.b_right = rep.b_right.max(v * (c * x).exp());
        }
    }
    rep
}

/// Finite-difference estimate of the derivative of the shift with respect
/// to the hole width `y` in the perturbed data, at `y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftDerivative {
    pub a: f64,
    pub y_steps: Vec<f64>,
    /// `(s(y, a) - s(0, a)) / y` for each step.
    pub slopes: Vec<f64>,
    /// Extrapolation of the slopes to `y = 0`.
    pub estimate: f64,
    /// Extrapolated `s(0, a)`.
    pub s0: f64,
}

pub fn shift_derivative_check(
    r: &Reaction,
    wave: &WaveProfile,
    a: f64,
    y_steps: &[f64],
    cfg: &PdeConfig,
) -> Result<ShiftDerivative> {
    if y_steps.len() < 2 || y_steps.iter().any(|&y| !(y < 0.0)) {
        return Err(Error::InvalidArgument("need at least two negative y steps".into()));
    }
    let cfg = PdeConfig {
        store_fields: false,
        l_left: Some(cfg.l_left.unwrap_or(50.0).max(a - y_steps.iter().cloned().fold(0.0, f64::min) + 50.0)),
        ..cfg.clone()
    };
    let grid = cfg.grid()?;
    let mut ys = vec![0.0];
    ys.extend_from_slice(y_steps);
    let runs: Vec<FrontSolution> = ys
        .par_iter()
        .map(|&y| {
            let init = if y == 0.0 { InitialData::Heaviside } else { InitialData::Perturbed { y, a } };
            solve_front_on(r, wave, init, &cfg, &grid)
        })
        .collect::<Result<_>>()?;
    let base: Vec<(f64, f64)> = runs[0].shifts.iter().map(|p| (p.t, p.s)).collect();
    let s0 = extrapolate_shift(&base, r.lambda_star)?.xbar0;
    let mut slopes = Vec::with_capacity(y_steps.len());
    for (run, &y) in runs[1..].iter().zip(y_steps) {
        let diff: Vec<(f64, f64)> = run.shifts.iter().zip(&base).map(|(p, q)| (p.t, p.s - q.1)).collect();
        // the universal terms cancel in the difference; what is left decays like 1/t
        let t_end = diff.last().map(|p| p.0).unwrap_or(0.0);
        let (t, d): (Vec<f64>, Vec<f64>) = diff.iter().filter(|p| p.0 >= 0.1 * t_end).map(|p| (1.0 / p.0, p.1)).unzip();
        let fit = linear_fit(&t, &d)?;
        slopes.push(fit.intercept / y);
    }
    let mut order: Vec<usize> = (0..y_steps.len()).collect();
    order.sort_by(|&i, &j| y_steps[j].total_cmp(&y_steps[i]));
    let sorted: Vec<f64> = order.iter().map(|&i| slopes[i]).collect();
    let increments: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
    if increments.windows(2).any(|w| w[0] * w[1] < 0.0) {
        return Err(Error::NotConverged(format!("shift slopes are not monotone in y: {sorted:?}")));
    }
    let fit = linear_fit(y_steps, &slopes)?;
    Ok(ShiftDerivative { a, y_steps: y_steps.to_vec(), slopes, estimate: fit.intercept, s0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::{solve_wave, WaveSolverConfig};

    #[test]
    fn shift_examples() {
        let r = Reaction::binary();
        assert_eq!(m_shift(0.0, &r), 0.0);
        let e = std::f64::consts::E;
        assert!((m_shift(e - 1.0, &r) - (2.0 * (e - 1.0) - 1.5)).abs() < 1e-14);
        assert!((m_shift(10.0, &r) - 16.403).abs() < 1e-3);
        assert!((m_drift(0.0, &r) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cell_averages() {
        let g = Grid1D::snapped(-2.0, 2.0, 0.5).unwrap();
        let h = InitialData::Heaviside.cell_averages(&g);
        let i0 = g.nearest(0.0);
        assert_eq!(h[i0], 0.5);
        assert_eq!(h[i0 - 1], 1.0);
        assert_eq!(h[i0 + 1], 0.0);
        let p = InitialData::Perturbed { y: -0.25, a: 1.0 }.cell_averages(&g);
        // hole (-1.25, -1] covers half of the cell around -1
        assert_eq!(p[g.nearest(-1.0)], 0.5);
        assert_eq!(p[g.nearest(-1.5)], 1.0);
        let z = InitialData::Perturbed { y: 0.0, a: 1.0 }.cell_averages(&g);
        assert_eq!(z, h);
    }

    #[test]
    fn samples_end_on_final_time() {
        let ts = sample_times(50.0);
        assert_eq!(*ts.last().unwrap(), 50.0);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fitter_recovers_translate() {
        let w = solve_wave(&Reaction::binary(), &WaveSolverConfig::default()).unwrap();
        let g = Grid1D::snapped(-20.0, 20.0, 0.05).unwrap();
        let fitter = ShiftFitter::new(&w, 5.0);
        for s in [0.0, 0.3127, -1.1] {
            let h: Vec<f64> = g.xs().iter().map(|&x| w.eval(x - s).u).collect();
            let (fit, sup) = fitter.fit(&g, &h, None).unwrap();
            assert!((fit - s).abs() < 1e-9, "{fit} vs {s}");
            assert!(sup < 1e-9);
        }
    }
}
