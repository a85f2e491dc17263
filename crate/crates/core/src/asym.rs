//! Large-gap asymptotic and comparison tables.
//!
//! As `a -> inf`,
//!
//! ```text
//! P(d12 > a) ~ C_U gamma* / (2 lambda*^2 sqrt(pi)) (a / (2 sqrt N))^pow e^{-(sqrt N + lambda*)(a + xbar0)}.
//! ```
//!
//! Two values of `pow` circulate for general `N`: `3 sqrt(N) / (2 lambda*)`,
//! which is what the moment computation produces, and `3 sqrt(N) / 2`. They
//! agree for `N = 2`. Both are available; reports print both when they differ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gap::GapSolution;
use crate::bbm::McEstimate;
use crate::numerics::{linear_fit, weighted_linear_fit};
use crate::reaction::Reaction;
use crate::wave::WaveProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ExponentMode {
    /// `3 sqrt(N) / (2 lambda*)`.
    #[default]
    Derivation,
    /// `3 sqrt(N) / 2`.
    Theorem,
}

impl ExponentMode {
    pub fn power(self, n_mean: f64, lambda: f64) -> f64 {
        match self {
            ExponentMode::Derivation => 1.5 * n_mean.sqrt() / lambda,
            ExponentMode::Theorem => 1.5 * n_mean.sqrt(),
        }
    }

    pub fn other(self) -> Self {
        match self {
            ExponentMode::Derivation => ExponentMode::Theorem,
            ExponentMode::Theorem => ExponentMode::Derivation,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExponentMode::Derivation => "derivation",
            ExponentMode::Theorem => "theorem",
        }
    }
}

impl std::str::FromStr for ExponentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivation" => Ok(ExponentMode::Derivation),
            "theorem" => Ok(ExponentMode::Theorem),
            _ => Err(Error::InvalidArgument(format!("unknown exponent mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub n_mean: f64,
    pub lambda_star: f64,
    pub gamma_star: f64,
    pub c_u: f64,
    pub xbar0: f64,
    pub exponent_mode: ExponentMode,
}

impl Constants {
    pub fn new(r: &Reaction, c_u: f64, xbar0: f64, exponent_mode: ExponentMode) -> Result<Self> {
        let c = Self {
            n_mean: r.n_mean,
            lambda_star: r.lambda_star,
            gamma_star: r.gamma_star,
            c_u,
            xbar0,
            exponent_mode,
        };
        if ![c.n_mean, c.lambda_star, c.gamma_star, c.c_u, c.xbar0].iter().all(|v| v.is_finite()) || !(c_u > 0.0) {
            return Err(Error::InvalidArgument(format!("constants must be finite with C_U > 0: {c:?}")));
        }
        Ok(c)
    }

    pub fn from_wave(w: &WaveProfile, xbar0: f64, exponent_mode: ExponentMode) -> Result<Self> {
        Self::new(&w.reaction, w.c_u, xbar0, exponent_mode)
    }

    pub fn power(&self) -> f64 {
        self.exponent_mode.power(self.n_mean, self.lambda_star)
    }

    /// `sqrt(N) + lambda*`.
    pub fn rate(&self) -> f64 {
        self.n_mean.sqrt() + self.lambda_star
    }

    /// Whether the two exponent modes give different predictions.
    pub fn modes_differ(&self) -> bool {
        ExponentMode::Derivation.power(self.n_mean, self.lambda_star)
            != ExponentMode::Theorem.power(self.n_mean, self.lambda_star)
    }

    pub fn with_mode(&self, exponent_mode: ExponentMode) -> Self {
        Self { exponent_mode, ..*self }
    }
}

/// Leading-order asymptotic of `P(d12 > a)`.
pub fn asymptotic_tail(a: f64, c: &Constants) -> f64 {
    log_asymptotic_tail(a, c).exp()
}

pub fn log_asymptotic_tail(a: f64, c: &Constants) -> f64 {
    let sqrt_n = c.n_mean.sqrt();
    let pre = c.c_u * c.gamma_star / (2.0 * c.lambda_star * c.lambda_star * std::f64::consts::PI.sqrt());
    pre.ln() + c.power() * (a / (2.0 * sqrt_n)).ln() - c.rate() * (a + c.xbar0)
}

/// Per-threshold output of the PDE route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeTail {
    pub a: f64,
    pub tail_prob: f64,
    pub i_final: f64,
    pub flatness_residual: f64,
}

impl From<&GapSolution> for PdeTail {
    fn from(s: &GapSolution) -> Self {
        Self { a: s.a, tail_prob: s.tail_prob, i_final: s.i_final, flatness_residual: s.flatness_residual }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub a: f64,
    pub pde: Option<f64>,
    pub mc: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub asymptotic: f64,
    /// Prediction with the other exponent mode, when it differs.
    pub asymptotic_other: Option<f64>,
    pub pde_over_asymptotic: Option<f64>,
    pub mc_over_pde: Option<f64>,
    pub mc_over_asymptotic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub constants: Constants,
    pub rows: Vec<ReportRow>,
    /// `-d log P / da` from a straight-line fit, per route.
    pub pde_rate: Option<f64>,
    pub mc_rate: Option<f64>,
    pub asymptotic_rate: Option<f64>,
    /// Slope of `log P + (sqrt N + lambda*) a` against `log a` for the PDE route.
    pub prefactor_exponent: Option<f64>,
    pub notes: Vec<String>,
}

/// Fitted `-d log P / da` over the points with `P > 0`.
pub fn exponential_rate(points: &[(f64, f64)]) -> Option<f64> {
    let (a, lp): (Vec<f64>, Vec<f64>) = points.iter().filter(|p| p.1 > 0.0).map(|p| (p.0, p.1.ln())).unzip();
    linear_fit(&a, &lp).ok().map(|f| -f.slope)
}

/// Weighted slope of `log P + rate a` against `log a`; weights `1 / residual^2`.
pub fn prefactor_exponent(tails: &[PdeTail], rate: f64) -> Option<f64> {
    let pts: Vec<&PdeTail> = tails.iter().filter(|t| t.tail_prob > 0.0 && t.a > 0.0).collect();
    let x: Vec<f64> = pts.iter().map(|t| t.a.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|t| t.tail_prob.ln() + rate * t.a).collect();
    let w: Vec<f64> = pts.iter().map(|t| 1.0 / t.flatness_residual.abs().max(1e-12).powi(2)).collect();
    weighted_linear_fit(&x, &y, &w).ok().map(|f| f.slope)
}

fn check_grid(a_list: &[f64], name: &str, given: impl Iterator<Item = f64>) -> Result<()> {
    let mut seen = Vec::new();
    for a in given {
        if !a_list.contains(&a) {
            return Err(Error::GridMismatch(format!("{name} result at a = {a} is not in the requested list")));
        }
        if seen.contains(&a) {
            return Err(Error::GridMismatch(format!("{name} result at a = {a} appears twice")));
        }
        seen.push(a);
    }
    Ok(())
}

/// Per-threshold comparison of the PDE, Monte Carlo and asymptotic values.
pub fn compare_report(a_list: &[f64], pde: &[PdeTail], mc: &[McEstimate], c: &Constants) -> Result<Report> {
    if pde.is_empty() && mc.is_empty() {
        return Err(Error::InvalidArgument("no PDE or Monte Carlo results to compare".into()));
    }
    check_grid(a_list, "PDE", pde.iter().map(|p| p.a))?;
    check_grid(a_list, "Monte Carlo", mc.iter().map(|m| m.a))?;
    let other = c.modes_differ().then(|| c.with_mode(c.exponent_mode.other()));
    let ratio = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) if y > 0.0 => Some(x / y),
        _ => None,
    };
    let rows: Vec<ReportRow> = a_list
        .iter()
        .map(|&a| {
            let p = pde.iter().find(|p| p.a == a).map(|p| p.tail_prob);
            let m = mc.iter().find(|m| m.a == a);
            let asymptotic = asymptotic_tail(a, c);
            ReportRow {
                a,
                pde: p,
                mc: m.map(|m| m.value),
                mc_stderr: m.map(|m| m.stderr),
                asymptotic,
                asymptotic_other: other.map(|o| asymptotic_tail(a, &o)),
                pde_over_asymptotic: ratio(p, Some(asymptotic)),
                mc_over_pde: ratio(m.map(|m| m.value), p),
                mc_over_asymptotic: ratio(m.map(|m| m.value), Some(asymptotic)),
            }
        })
        .collect();
    let mut notes = Vec::new();
    if let Some(o) = other {
        notes.push(format!(
            "exponent modes differ for N = {}: {} uses {:.6}, {} uses {:.6}",
            c.n_mean,
            c.exponent_mode.name(),
            c.power(),
            o.exponent_mode.name(),
            o.power()
        ));
    }
    let pde_pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.pde.map(|p| (r.a, p))).collect();
    let mc_pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.mc.map(|p| (r.a, p))).collect();
    let asym_pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.a, r.asymptotic)).collect();
    Ok(Report {
        constants: *c,
        pde_rate: exponential_rate(&pde_pts),
        mc_rate: exponential_rate(&mc_pts),
        asymptotic_rate: exponential_rate(&asym_pts),
        prefactor_exponent: prefactor_exponent(pde, c.rate()),
        rows,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reaction::OffspringLaw;

    fn binary_constants() -> Constants {
        Constants::new(&Reaction::binary(), 1.3941, -0.56, ExponentMode::Derivation).unwrap()
    }

    #[test]
    fn structure_of_the_asymptotic() {
        let c = binary_constants();
        let ratio = |a: f64| asymptotic_tail(a, &c) / ((a / (2.0 * 2f64.sqrt())).powf(c.power()) * (-c.rate() * a).exp());
        let r5 = ratio(5.0);
        for a in [10.0, 20.0] {
            assert!((ratio(a) / r5 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_tends_to_sqrt2_plus_1() {
        let c = binary_constants();
        let h = 1e-3;
        let a = 1e4;
        let d = -(log_asymptotic_tail(a + h, &c) - log_asymptotic_tail(a - h, &c)) / (2.0 * h);
        assert!((d - (2f64.sqrt() + 1.0)).abs() < 1e-3);
    }

    #[test]
    fn modes_coincide_for_binary() {
        let c = binary_constants();
        let t = c.with_mode(ExponentMode::Theorem);
        assert!(!c.modes_differ());
        for a in [1.0, 7.5, 30.0] {
            assert_eq!(asymptotic_tail(a, &c).to_bits(), asymptotic_tail(a, &t).to_bits());
        }
    }

    #[test]
    fn modes_flagged_for_other_laws() {
        let r = Reaction::new(OffspringLaw::new(vec![(2, 0.5), (3, 0.5)]).unwrap()).unwrap();
        let c = Constants::new(&r, 1.0, -0.5, ExponentMode::Derivation).unwrap();
        let rep = compare_report(&[2.0], &[], &[McEstimate { value: 0.1, stderr: 0.01, replicates: 1000, t_end: 4.0, a: 2.0 }], &c)
            .unwrap();
        assert_eq!(rep.notes.len(), 1);
        assert!(rep.rows[0].asymptotic_other.is_some());
    }

    #[test]
    fn report_without_mc() {
        let c = binary_constants();
        let pde: Vec<PdeTail> = [2.0, 3.0]
            .iter()
            .map(|&a| PdeTail { a, tail_prob: (-2.4 * a).exp(), i_final: 1.0, flatness_residual: 1e-4 })
            .collect();
        let rep = compare_report(&[2.0, 3.0], &pde, &[], &c).unwrap();
        assert!(rep.rows.iter().all(|r| r.mc.is_none() && r.mc_over_pde.is_none()));
        assert!((rep.pde_rate.unwrap() - 2.4).abs() < 1e-12);
        assert!(rep.mc_rate.is_none());
        assert!(compare_report(&[2.0], &pde, &[], &c).is_err());
        assert!(compare_report(&[2.0], &[], &[], &c).is_err());
    }

    #[test]
    fn exponent_mode_parses() {
        assert_eq!("theorem".parse::<ExponentMode>().unwrap(), ExponentMode::Theorem);
        assert!("other".parse::<ExponentMode>().is_err());
    }
}
