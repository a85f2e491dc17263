//! Run configuration: one TOML file with a section per stage.
//!
//! Every field has a default, so an empty file is a valid configuration for
//! binary branching. Stage hashes cover only the sections a stage depends on,
//! which lets a downstream stage be rerun without invalidating upstream ones.

use std::path::Path;

use gaptail::bbm::MAX_T_END;
use gaptail::kpp::MIN_SHIFT_HORIZON;
use gaptail::{ExponentMode, OffspringLaw};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Offspring law as `k:p_k` pairs, e.g. `2:0.5,3:0.5`.
    pub offspring: String,
    pub wave: WaveSection,
    pub front: FrontSection,
    pub tail: TailSection,
    pub mc: McSection,
    pub compare: CompareSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveSection {
    /// Grid spacing of the tabulated wave.
    pub dx: f64,
    /// Shift used to normalize `psi` in `wave.csv`; 0 when unset. The
    /// measured value comes from the front stage.
    pub xbar0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontSection {
    pub dx: f64,
    /// Horizon of the Heaviside run; the shift fit needs a few hundred units.
    pub t_final: f64,
    /// Write every k-th stored front sample as its own CSV.
    pub field_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailSection {
    pub a_list: Vec<f64>,
    pub dx: f64,
    /// Earliest stop; defaults to `max(20 t*, 10 a)` per threshold.
    pub t_final: Option<f64>,
    /// Track the free/corrector split (gives the crossover column).
    pub corrector: bool,
    /// Write the stored densities `r(t, x)`.
    pub emit_fields: bool,
    /// Approximate number of rows per threshold in `tail_moments.csv`.
    pub series_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub t_end: f64,
    pub a_list: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; all available cores when unset. Results do not depend on it.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub exponent_mode: ExponentMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            offspring: "2:1".into(),
            wave: WaveSection::default(),
            front: FrontSection::default(),
            tail: TailSection::default(),
            mc: McSection::default(),
            compare: CompareSection::default(),
        }
    }
}

impl Default for WaveSection {
    fn default() -> Self {
        Self { dx: 0.05, xbar0: None }
    }
}

impl Default for FrontSection {
    fn default() -> Self {
        Self { dx: 0.05, t_final: 400.0, field_every: None }
    }
}

impl Default for TailSection {
    fn default() -> Self {
        Self {
            a_list: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            dx: 0.05,
            t_final: None,
            corrector: false,
            emit_fields: false,
            series_points: 400,
        }
    }
}

impl Default for McSection {
    fn default() -> Self {
        Self { t_end: 8.0, a_list: vec![0.5, 1.0, 2.0, 3.0], replicates: 100_000, seed: 1, workers: None }
    }
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { exponent_mode: ExponentMode::Derivation }
    }
}

/// Parse `2:0.5,3:0.5` into an offspring law.
pub fn parse_law(s: &str) -> Result<OffspringLaw> {
    let mut probs = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, p) = part
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("offspring entry {part:?} is not of the form k:p")))?;
        let k: u32 = k.trim().parse().map_err(|_| CliError::Config(format!("bad offspring count {k:?}")))?;
        let p: f64 = p.trim().parse().map_err(|_| CliError::Config(format!("bad probability {p:?}")))?;
        probs.push((k, p));
    }
    OffspringLaw::new(probs).map_err(|e| CliError::Config(e.to_string()))
}

/// Parse a comma-separated list of thresholds.
pub fn parse_a_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| CliError::Config(format!("bad threshold {p:?}"))))
        .collect()
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn check_a_list(name: &str, a: &[f64]) -> Result<()> {
    check(!a.is_empty(), || format!("{name}.a_list is empty"))?;
    check(a.iter().all(|&x| x.is_finite() && x > 0.0), || format!("{name}.a_list must be positive: {a:?}"))?;
    let mut sorted = a.to_vec();
    sorted.sort_by(f64::total_cmp);
    check(sorted.windows(2).all(|w| w[0] < w[1]), || format!("{name}.a_list has repeated values: {a:?}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn law(&self) -> Result<OffspringLaw> {
        parse_law(&self.offspring)
    }

    pub fn validate(&self) -> Result<()> {
        self.law()?;
        let spacing = |name: &str, dx: f64| check(dx > 0.0 && dx <= 0.5, || format!("{name}.dx = {dx} outside (0, 0.5]"));
        spacing("wave", self.wave.dx)?;
        spacing("front", self.front.dx)?;
        spacing("tail", self.tail.dx)?;
        if let Some(x) = self.wave.xbar0 {
            check(x.is_finite(), || "wave.xbar0 must be finite".into())?;
        }
        check(self.front.t_final >= MIN_SHIFT_HORIZON && self.front.t_final.is_finite(), || {
            format!("front.t_final = {} is below {MIN_SHIFT_HORIZON}, too short to extrapolate the shift", self.front.t_final)
        })?;
        check(self.front.field_every != Some(0), || "front.field_every must be at least 1".into())?;
        check_a_list("tail", &self.tail.a_list)?;
        if let Some(t) = self.tail.t_final {
            check(t > 0.0 && t.is_finite(), || "tail.t_final must be positive".into())?;
        }
        check(self.tail.series_points >= 2, || "tail.series_points must be at least 2".into())?;
        check_a_list("mc", &self.mc.a_list)?;
        check(self.mc.t_end > 0.0 && self.mc.t_end <= MAX_T_END, || {
            format!("mc.t_end = {} outside (0, {MAX_T_END}]", self.mc.t_end)
        })?;
        check(self.mc.replicates >= 1000, || "mc.replicates must be at least 1000".into())?;
        check(self.mc.workers != Some(0), || "mc.workers must be at least 1".into())
    }

    /// Hash of the sections a stage depends on.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let law = self.law().map(|l| l.canonical()).unwrap_or_else(|_| self.offspring.clone());
        let mut parts = vec![format!("law={law}")];
        match stage {
            Stage::Wave => parts.push(section(&self.wave)),
            Stage::Front => parts.extend([section(&self.wave), section(&self.front)]),
            Stage::Tail => parts.extend([section(&self.wave), section(&self.front), section(&self.tail)]),
            Stage::Mc => parts.push(section(&self.mc)),
            Stage::Compare => parts.push(self.to_toml()),
        }
        sha256_hex(parts.join("\n").as_bytes())
    }

    /// Hash of the whole configuration; names the default run directory.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

fn section<T: Serialize>(v: &T) -> String {
    toml::to_string(v).expect("section serializes")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Wave,
    Front,
    Tail,
    Mc,
    Compare,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Wave => "wave",
            Stage::Front => "front",
            Stage::Tail => "tail",
            Stage::Mc => "mc",
            Stage::Compare => "compare",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_binary_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.law().unwrap(), OffspringLaw::binary());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("offspring = \"2:0.5\"").is_err());
        assert!(RunConfig::from_toml("[tail]\na_list = []").is_err());
        assert!(RunConfig::from_toml("[mc]\nt_end = 40.0").is_err());
        assert!(RunConfig::from_toml("[mc]\nreplicates = 10").is_err());
        assert!(RunConfig::from_toml("[front]\ndx = -1.0").is_err());
        assert!(RunConfig::from_toml("[front]\nt_final = 50.0").is_err());
        assert!(RunConfig::from_toml("[front]\nbogus = 1").is_err());
        assert!(RunConfig::from_toml("[compare]\nexponent_mode = \"other\"").is_err());
    }

    #[test]
    fn stage_hashes_follow_dependencies() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.mc.seed = 2;
        assert_eq!(a.stage_hash(Stage::Tail), b.stage_hash(Stage::Tail));
        assert_ne!(a.stage_hash(Stage::Mc), b.stage_hash(Stage::Mc));
        let mut c = a.clone();
        c.front.t_final = 500.0;
        assert_eq!(a.stage_hash(Stage::Wave), c.stage_hash(Stage::Wave));
        assert_ne!(a.stage_hash(Stage::Tail), c.stage_hash(Stage::Tail));
    }

    #[test]
    fn law_strings() {
        assert_eq!(parse_law("2:0.5, 3:0.5").unwrap().probs(), &[(2, 0.5), (3, 0.5)]);
        assert!(parse_law("2-1").is_err());
        assert!(parse_law("1:1").is_err());
        assert_eq!(parse_a_list("1, 2.5").unwrap(), vec![1.0, 2.5]);
    }
}
