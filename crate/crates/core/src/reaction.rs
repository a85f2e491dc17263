//! Offspring law of the branching mechanism and the KPP nonlinearity it
//! induces,
//!
//! ```text
//! f(u) = 1 - u - sum_k p_k (1 - u)^k,      F(u) = (N - 1) u - f(u),
//! ```
//!
//! together with the derived front constants `N`, `c*`, `lambda*`, `gamma*`.
//!
//! Near `u = 1` every quantity is also available in terms of the complement
//! `v = 1 - u`, which keeps full relative precision in the left tail of the
//! front where `1 - u` drops far below machine epsilon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest excursion outside `[0, 1]` that is silently clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

/// Finite offspring distribution `{(k, p_k)}` with `k >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    probs: Vec<(u32, f64)>,
    /// Hölder exponent of the higher-moment condition; reported only.
    pub beta: f64,
}

impl OffspringLaw {
    pub fn new(probs: Vec<(u32, f64)>) -> Result<Self> {
        Self::with_beta(probs, 0.5)
    }

    pub fn with_beta(mut probs: Vec<(u32, f64)>, beta: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidLaw("empty offspring law".into()));
        }
        for &(k, p) in &probs {
            if k < 2 {
                return Err(Error::InvalidLaw(format!("offspring count {k} < 2")));
            }
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidLaw(format!("probability p_{k} = {p} outside [0, 1]")));
            }
        }
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}, not 1")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidLaw(format!("beta = {beta} outside (0, 1)")));
        }
        probs.sort_by_key(|&(k, _)| k);
        for w in probs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidLaw(format!("offspring count {} listed twice", w[0].0)));
            }
        }
        Ok(Self { probs, beta })
    }

    /// Binary branching, `p_2 = 1`.
    pub fn binary() -> Self {
        Self { probs: vec![(2, 1.0)], beta: 0.5 }
    }

    pub fn probs(&self) -> &[(u32, f64)] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().map(|&(k, p)| k as f64 * p).sum()
    }

    /// `sum k^(1+beta) p_k`, finite for every finite law.
    pub fn higher_moment(&self) -> f64 {
        self.probs.iter().map(|&(k, p)| (k as f64).powf(1.0 + self.beta) * p).sum()
    }

    /// Canonical text form used for hashing and the CLI (`2:0.5,3:0.5`).
    pub fn canonical(&self) -> String {
        self.probs
            .iter()
            .map(|(k, p)| format!("{k}:{p:?}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Which of the four nonlinear functions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    F,
    DF,
    Nonlin,
    DNonlin,
}

/// KPP reaction built from an offspring law. Immutable and `Sync`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    pub law: OffspringLaw,
    pub n_mean: f64,
    pub c_star: f64,
    pub lambda_star: f64,
    pub gamma_star: f64,
}

pub fn build_reaction(law: OffspringLaw) -> Result<Reaction> {
    Reaction::new(law)
}

impl Reaction {
    pub fn new(law: OffspringLaw) -> Result<Self> {
        let n_mean = law.mean();
        if !(n_mean > 1.0) {
            return Err(Error::InvalidLaw(format!("mean offspring N = {n_mean} must exceed 1")));
        }
        let lambda_star = (n_mean - 1.0).sqrt();
        Ok(Self {
            c_star: 2.0 * lambda_star,
            lambda_star,
            gamma_star: n_mean.sqrt() - lambda_star,
            n_mean,
            law,
        })
    }

    pub fn binary() -> Self {
        Self::new(OffspringLaw::binary()).expect("binary law is valid")
    }

    pub fn sqrt_n(&self) -> f64 {
        self.n_mean.sqrt()
    }

    /// Clamp solver overshoot back into `[0, 1]`; larger excursions and NaN are errors.
    pub fn clamp_unit(u: f64) -> Result<f64> {
        if u.is_nan() || u < -CLAMP_TOLERANCE || u > 1.0 + CLAMP_TOLERANCE {
            return Err(Error::OutOfRange { value: u });
        }
        Ok(u.clamp(0.0, 1.0))
    }

    pub fn eval(&self, u: f64, which: Nonlinearity) -> Result<f64> {
        let u = Self::clamp_unit(u)?;
        Ok(match which {
            Nonlinearity::F => self.f(u),
            Nonlinearity::DF => self.df(u),
            Nonlinearity::Nonlin => self.nonlin(u),
            Nonlinearity::DNonlin => self.dnonlin(u),
        })
    }

    /// `f(u)` for `u` in `[0, 1]` (no clamping).
    #[inline]
    pub fn f(&self, u: f64) -> f64 {
        let v = 1.0 - u;
        // for u near 0 use the expansion around 0 to avoid cancellation
        if u < 0.5 {
            self.f_small(u)
        } else {
            self.f_of_complement(v)
        }
    }

    /// `f(1 - v)`, accurate for tiny `v`.
    #[inline]
    pub fn f_of_complement(&self, v: f64) -> f64 {
        v - self.probs_pow_sum(v)
    }

    // f(u) = (N-1)u - F(u) with F(u) = sum p_k [(1-u)^k - 1 + k u]
    #[inline]
    fn f_small(&self, u: f64) -> f64 {
        (self.n_mean - 1.0) * u - self.nonlin(u)
    }

    #[inline]
    fn probs_pow_sum(&self, v: f64) -> f64 {
        self.law.probs.iter().map(|&(k, p)| p * v.powi(k as i32)).sum()
    }

    /// `f'(u) = -1 + sum k p_k (1 - u)^(k-1)`.
    #[inline]
    pub fn df(&self, u: f64) -> f64 {
        let v = 1.0 - u;
        -1.0 + self.law.probs.iter().map(|&(k, p)| k as f64 * p * v.powi(k as i32 - 1)).sum::<f64>()
    }

    /// `F(u) = (N - 1) u - f(u) = sum p_k [(1 - u)^k - 1 + k u]`.
    #[inline]
    pub fn nonlin(&self, u: f64) -> f64 {
        if u < 1e-4 {
            // (1-u)^k - 1 + k u = sum_{j>=2} C(k,j) (-u)^j; the first two terms suffice
            // until k u is large, otherwise fall through to direct evaluation
            let mut s = 0.0;
            for &(k, p) in &self.law.probs {
                let kf = k as f64;
                if kf * u < 1e-3 {
                    let c2 = kf * (kf - 1.0) / 2.0;
                    let c3 = c2 * (kf - 2.0) / 3.0;
                    let c4 = c3 * (kf - 3.0) / 4.0;
                    s += p * u * u * (c2 - c3 * u + c4 * u * u);
                } else {
                    s += p * ((1.0 - u).powi(k as i32) - 1.0 + kf * u);
                }
            }
            s
        } else {
            self.law
                .probs
                .iter()
                .map(|&(k, p)| p * ((1.0 - u).powi(k as i32) - 1.0 + k as f64 * u))
                .sum()
        }
    }

    /// `F'(u) = N - sum k p_k (1 - u)^(k-1)`; lies in `[0, N]` on `[0, 1]`.
    #[inline]
    pub fn dnonlin(&self, u: f64) -> f64 {
        if u > 0.5 {
            self.n_mean - self.n_minus_dnonlin_complement(1.0 - u)
        } else {
            // N - sum k p_k (1-u)^(k-1) = sum k p_k [1 - (1-u)^(k-1)], no cancellation near 0
            self.law
                .probs
                .iter()
                .map(|&(k, p)| {
                    let km1 = k as i32 - 1;
                    // 1 - (1-u)^m = -expm1(m * ln(1-u))
                    k as f64 * p * -(km1 as f64 * (-u).ln_1p()).exp_m1()
                })
                .sum()
        }
    }

    /// `N - F'(1 - v) = sum k p_k v^(k-1)`, accurate for tiny `v`.
    #[inline]
    pub fn n_minus_dnonlin_complement(&self, v: f64) -> f64 {
        self.law.probs.iter().map(|&(k, p)| k as f64 * p * v.powi(k as i32 - 1)).sum()
    }

    /// `f''(u) = -sum k (k-1) p_k (1 - u)^(k-2)`, nonpositive.
    pub fn d2f(&self, u: f64) -> f64 {
        let v = 1.0 - u;
        -self
            .law
            .probs
            .iter()
            .map(|&(k, p)| (k * (k - 1)) as f64 * p * v.powi(k as i32 - 2))
            .sum::<f64>()
    }
}
