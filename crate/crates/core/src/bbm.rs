//! Event-driven simulation of branching Brownian motion.
//!
//! Particles move as Brownian motions with variance `2t` and branch at rate 1
//! into `k` offspring with probability `p_k`. Since branching clocks are
//! memoryless, each lineage is followed depth first: a particle born at time
//! `s` lives an exponential time, its displacement is drawn in one Gaussian
//! step, and its children are pushed on a stack. Only final positions are kept.
//!
//! Replicate `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`,
//! so results do not depend on the number of workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reaction::OffspringLaw;

/// Longest horizon accepted (the population grows like `e^{(N-1) t}`).
pub const MAX_T_END: f64 = 15.0;
pub const DEFAULT_POPULATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: f64,
    pub birth_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub t_end: f64,
    pub a: f64,
}

impl McEstimate {
    fn from_count(hits: usize, replicates: usize, t_end: f64, a: f64) -> Self {
        let value = hits as f64 / replicates as f64;
        let stderr = (value * (1.0 - value) / replicates as f64).sqrt();
        Self { value, stderr, replicates, t_end, a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub population_cap: usize,
    /// Size of the worker pool; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { population_cap: DEFAULT_POPULATION_CAP, workers: None }
    }
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn draw_offspring(law: &OffspringLaw, rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let probs = law.probs();
    for &(k, p) in probs {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs[probs.len() - 1].0
}

/// Run one realization, feeding each final position to `sink`.
/// With `law = None` the particle never branches.
fn run<F: FnMut(f64)>(
    law: Option<&OffspringLaw>,
    t_end: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
    mut sink: F,
) -> Result<usize> {
    let mut stack = vec![Particle { position: 0.0, birth_time: 0.0 }];
    let mut finished = 0usize;
    while let Some(p) = stack.pop() {
        let life: f64 = match law {
            Some(_) => rng.sample(Exp1),
            None => f64::INFINITY,
        };
        let end = p.birth_time + life;
        let z: f64 = rng.sample(StandardNormal);
        if end >= t_end {
            sink(p.position + (2.0 * (t_end - p.birth_time)).sqrt() * z);
            finished += 1;
            continue;
        }
        let position = p.position + (2.0 * life).sqrt() * z;
        let k = draw_offspring(law.expect("branching requires a law"), rng);
        if finished + stack.len() + k as usize > cap {
            return Err(Error::PopulationCap { cap });
        }
        stack.extend((0..k).map(|_| Particle { position, birth_time: end }));
    }
    Ok(finished)
}

fn check_horizon(t_end: f64) -> Result<()> {
    if !(t_end > 0.0 && t_end <= MAX_T_END) {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} outside (0, {MAX_T_END}]")));
    }
    Ok(())
}

/// Final positions of one realization, sorted in decreasing order.
pub fn simulate_bbm(law: &OffspringLaw, t_end: f64, seed: u64) -> Result<Vec<f64>> {
    simulate_replicate(law, t_end, seed, 0, DEFAULT_POPULATION_CAP)
}

pub fn simulate_replicate(law: &OffspringLaw, t_end: f64, seed: u64, replicate: u64, cap: usize) -> Result<Vec<f64>> {
    check_horizon(t_end)?;
    let mut rng = replicate_rng(seed, replicate);
    let mut out = Vec::new();
    run(Some(law), t_end, cap, &mut rng, |x| out.push(x))?;
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

/// The two rightmost positions of one realization; `x2 = -inf` if no
/// branching happened, and the population size.
pub fn top_two(law: &OffspringLaw, t_end: f64, seed: u64, replicate: u64, cap: usize) -> Result<(f64, f64, usize)> {
    let mut rng = replicate_rng(seed, replicate);
    let (mut x1, mut x2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let n = run(Some(law), t_end, cap, &mut rng, |x| {
        if x > x1 {
            x2 = x1;
            x1 = x;
        } else if x > x2 {
            x2 = x;
        }
    })?;
    Ok((x1, x2, n))
}

fn in_pool<T: Send, F: FnOnce() -> T + Send>(workers: Option<usize>, job: F) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// `(x1, x2, population)` for each replicate, in replicate order.
pub fn sample_top_two(
    law: &OffspringLaw,
    t_end: f64,
    replicates: usize,
    seed: u64,
    cfg: &McConfig,
) -> Result<Vec<(f64, f64, usize)>> {
    check_horizon(t_end)?;
    in_pool(cfg.workers, || {
        (0..replicates as u64)
            .into_par_iter()
            .map(|i| top_two(law, t_end, seed, i, cfg.population_cap))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Gaps `x1 - x2` per replicate (`+inf` before the first branching).
pub fn sample_gaps(law: &OffspringLaw, t_end: f64, replicates: usize, seed: u64, cfg: &McConfig) -> Result<Vec<f64>> {
    Ok(sample_top_two(law, t_end, replicates, seed, cfg)?.into_iter().map(|(x1, x2, _)| x1 - x2).collect())
}

/// Fraction of gaps exceeding each threshold.
pub fn tail_estimates(gaps: &[f64], a_list: &[f64], t_end: f64) -> Vec<McEstimate> {
    a_list
        .iter()
        .map(|&a| McEstimate::from_count(gaps.iter().filter(|&&g| g > a).count(), gaps.len(), t_end, a))
        .collect()
}

/// Monte Carlo estimate of `P(x1(t_end) - x2(t_end) > a)`.
pub fn estimate_gap_tail_mc(
    law: &OffspringLaw,
    t_end: f64,
    a: f64,
    replicates: usize,
    seed: u64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    estimate_gap_tails_mc(law, t_end, &[a], replicates, seed, cfg).map(|v| v[0])
}

/// Estimates for several thresholds from one set of replicates.
pub fn estimate_gap_tails_mc(
    law: &OffspringLaw,
    t_end: f64,
    a_list: &[f64],
    replicates: usize,
    seed: u64,
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    if replicates < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 replicates, got {replicates}")));
    }
    if let Some(a) = a_list.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::InvalidArgument(format!("threshold {a} must be nonnegative")));
    }
    let gaps = sample_gaps(law, t_end, replicates, seed, cfg)?;
    Ok(tail_estimates(&gaps, a_list, t_end))
}

/// Positions of a particle that never branches, one per replicate.
pub fn sample_free_motion(t_end: f64, replicates: usize, seed: u64) -> Vec<f64> {
    (0..replicates as u64)
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let mut x = 0.0;
            run(None, t_end, 1, &mut rng, |y| x = y).expect("a single particle fits any cap");
            x
        })
        .collect()
}

/// Time of the first branching event, one per replicate.
pub fn sample_first_branching(replicates: usize, seed: u64) -> Vec<f64> {
    (0..replicates as u64)
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            rng.sample(Exp1)
        })
        .collect()
}

/// Kolmogorov-Smirnov distance between two samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample statistic `d` for sample size `n`.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    if lam < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lam * lam).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_output() {
        let law = OffspringLaw::binary();
        let a = simulate_bbm(&law, 3.0, 7).unwrap();
        let b = simulate_bbm(&law, 3.0, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] >= w[1]));
        let c = simulate_bbm(&law, 3.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn horizon_and_cap_are_enforced() {
        let law = OffspringLaw::binary();
        assert!(simulate_bbm(&law, 16.0, 1).is_err());
        assert!(matches!(simulate_replicate(&law, 10.0, 1, 0, 50), Err(Error::PopulationCap { cap: 50 })));
    }

    #[test]
    fn zero_threshold_is_certain() {
        let law = OffspringLaw::new(vec![(2, 0.5), (3, 0.5)]).unwrap();
        let est = estimate_gap_tail_mc(&law, 1.0, 0.0, 1000, 3, &McConfig::default()).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let law = OffspringLaw::binary();
        let one = sample_gaps(&law, 2.0, 200, 11, &McConfig { workers: Some(1), ..Default::default() }).unwrap();
        let three = sample_gaps(&law, 2.0, 200, 11, &McConfig { workers: Some(3), ..Default::default() }).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn ks_distance_of_shifted_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..100).map(|i| i as f64 + 50.0).collect();
        assert!((ks_distance(&a, &b) - 0.5).abs() < 1e-12);
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert!(ks_p_value(0.0, 100) == 1.0);
        assert!(ks_p_value(0.5, 100) < 1e-10);
    }
}
