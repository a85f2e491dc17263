//! The five pipeline stages and their upstream checks.
//!
//! `wave` and `mc` have no upstream. `front` consumes the wave manifest,
//! `tail` the front manifest (for the measured shift), and `compare` the tail
//! and Monte Carlo manifests. A stage whose directory already holds a
//! manifest with the same configuration hash is reported and skipped.

use std::time::Instant;

use gaptail::bbm::estimate_gap_tails_mc;
use gaptail::kpp::{build_potential, estimate_bramson_shift, solve_front, InitialData, PdeConfig};
use gaptail::{
    compare_report, solve_gap, solve_wave, AdjointProfile, Constants, GapConfig, McConfig, McEstimate, OffspringLaw,
    PdeTail, PotentialSource, Reaction, WaveProfile, WaveSolverConfig,
};

use crate::artifacts::{fmt_f64, fmt_opt, json_bytes, Manifest, ManifestConstants, RunDir, Table, MANIFEST_SCHEMA};
use crate::config::{sha256_hex, RunConfig, Stage};
use crate::error::{CliError, Result};

pub const WAVE_CSV: &str = "wave.csv";
pub const FRONT_CSV: &str = "front.csv";
pub const TAIL_SUMMARY_CSV: &str = "tail_summary.csv";
pub const TAIL_MOMENTS_CSV: &str = "tail_moments.csv";
pub const MC_CSV: &str = "mc.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

pub struct Pipeline {
    pub cfg: RunConfig,
    pub run: RunDir,
    /// Progress lines go to stderr unless quiet.
    pub quiet: bool,
}

fn law_hash(law: &OffspringLaw) -> String {
    sha256_hex(law.canonical().as_bytes())
}

fn base_constants(r: &Reaction) -> ManifestConstants {
    ManifestConstants {
        n_mean: r.n_mean,
        c_star: r.c_star,
        lambda_star: r.lambda_star,
        gamma_star: r.gamma_star,
        c_u: None,
        xbar0: None,
    }
}

impl Pipeline {
    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn reaction(&self) -> Result<Reaction> {
        Ok(Reaction::new(self.cfg.law()?)?)
    }

    fn manifest(&self, stage: Stage, constants: ManifestConstants, upstream: Vec<&Manifest>, started: Instant) -> Result<Manifest> {
        let law = self.cfg.law()?;
        Ok(Manifest {
            schema: MANIFEST_SCHEMA.into(),
            stage,
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.cfg.stage_hash(stage),
            law: law.canonical(),
            law_hash: law_hash(&law),
            constants_hash: constants.hash(),
            constants,
            upstream: upstream.iter().map(|m| m.as_upstream()).collect(),
            artifacts: Default::default(),
            wall_time_s: started.elapsed().as_secs_f64(),
            config: self.cfg.to_toml(),
        })
    }

    /// `Some(manifest)` when the stage already ran with this configuration.
    fn completed(&self, stage: Stage) -> Result<Option<Manifest>> {
        match self.run.manifest(stage)? {
            None => Ok(None),
            Some(m) if m.config_hash == self.cfg.stage_hash(stage) => {
                self.note(&format!("{}: already complete in {}", stage.name(), self.run.stage_dir(stage).display()));
                Ok(Some(m))
            }
            Some(m) => Err(CliError::Artifact(format!(
                "{} was written with config hash {}, current config hash is {}; use another run directory",
                self.run.stage_dir(stage).display(),
                m.config_hash,
                self.cfg.stage_hash(stage)
            ))),
        }
    }

    /// Upstream manifest, which must come from the current configuration.
    fn upstream(&self, stage: Stage) -> Result<Manifest> {
        let m = self.run.require_manifest(stage)?;
        let expected = self.cfg.stage_hash(stage);
        if m.config_hash != expected {
            return Err(CliError::Artifact(format!(
                "upstream {} has config hash {}, current config gives {expected}",
                stage.name(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    /// Re-solve the wave and check it against the wave manifest.
    fn wave_matching(&self, r: &Reaction, c_u: Option<f64>) -> Result<WaveProfile> {
        let w = solve_wave(r, &WaveSolverConfig { dx: self.cfg.wave.dx, ..Default::default() })?;
        if c_u.map(f64::to_bits) != Some(w.c_u.to_bits()) {
            return Err(CliError::Artifact(format!("wave constant C_U = {} differs from the upstream manifest ({c_u:?})", w.c_u)));
        }
        Ok(w)
    }

    pub fn wave(&self) -> Result<Manifest> {
        if let Some(m) = self.completed(Stage::Wave)? {
            return Ok(m);
        }
        let started = Instant::now();
        let r = self.reaction()?;
        let w = solve_wave(&r, &WaveSolverConfig { dx: self.cfg.wave.dx, ..Default::default() })?;
        let xb = self.cfg.wave.xbar0.unwrap_or(0.0);
        let lam = r.lambda_star;
        let mut t = Table::new("wave", &["x", "U", "U_prime", "psi", "psi_prime"])
            .meta("N", fmt_f64(r.n_mean))
            .meta("c_star", fmt_f64(r.c_star))
            .meta("lambda_star", fmt_f64(lam))
            .meta("gamma_star", fmt_f64(r.gamma_star))
            .meta("C_U", fmt_f64(w.c_u))
            .meta("xbar0", fmt_f64(xb))
            .meta("xbar0_source", if self.cfg.wave.xbar0.is_some() { "config" } else { "unset" });
        for (i, &x) in w.grid.xs().iter().enumerate() {
            let p = w.eval(x - xb);
            let e = (lam * x).exp();
            t.push_f64(&[x, w.u[i], w.u_prime[i], -p.du * e, -(p.d2u + lam * p.du) * e]);
        }
        let constants = ManifestConstants { c_u: Some(w.c_u), ..base_constants(&r) };
        let m = self.manifest(Stage::Wave, constants, vec![], started)?;
        let m = self.run.write_stage(m, vec![(WAVE_CSV.into(), t.to_bytes())])?;
        self.note(&format!("wave: C_U = {:.6}", w.c_u));
        Ok(m)
    }

    pub fn front(&self) -> Result<Manifest> {
        if let Some(m) = self.completed(Stage::Front)? {
            return Ok(m);
        }
        let started = Instant::now();
        let wave_m = self.upstream(Stage::Wave)?;
        let r = self.reaction()?;
        let w = self.wave_matching(&r, wave_m.constants.c_u)?;
        let cfg = PdeConfig { dx: self.cfg.front.dx, t_final: self.cfg.front.t_final, store_fields: true, ..Default::default() };
        let fs = solve_front(&r, &w, InitialData::Heaviside, &cfg)?;
        let est = estimate_bramson_shift(&fs)?;
        let adj = AdjointProfile::on_grid(&w, est.xbar0, &fs.grid)?;
        let field = build_potential(&fs, &adj)?;
        let mut t = Table::new("front", &["t", "s_fit", "sup_error", "sup_E"])
            .meta("xbar0", fmt_f64(est.xbar0))
            .meta("xbar0_error", fmt_f64(est.error_bar))
            .meta("fit_r2", fmt_f64(est.r2))
            .meta("bare_xbar0", fmt_f64(est.bare_xbar0));
        for (k, s) in fs.shifts.iter().enumerate() {
            t.push_f64(&[s.t, s.s, s.sup_error, field.sup_error(k)]);
        }
        let mut files = vec![(FRONT_CSV.to_string(), t.to_bytes())];
        if let Some(every) = self.cfg.front.field_every {
            for k in (0..fs.times.len()).step_by(every) {
                let mut f = Table::new("front_field", &["x", "H", "V"]).meta("t", fmt_f64(fs.times[k]));
                for (i, &x) in fs.grid.xs().iter().enumerate() {
                    f.push_f64(&[x, fs.h[k][i], field.v[k][i]]);
                }
                files.push((format!("front_field_{k:04}.csv"), f.to_bytes()));
            }
        }
        let constants = ManifestConstants { xbar0: Some(est.xbar0), ..wave_m.constants };
        let m = self.manifest(Stage::Front, constants, vec![&wave_m], started)?;
        let m = self.run.write_stage(m, files)?;
        self.note(&format!("front: xbar0 = {:.5} +- {:.5}", est.xbar0, est.error_bar));
        Ok(m)
    }

    pub fn tail(&self) -> Result<Manifest> {
        if let Some(m) = self.completed(Stage::Tail)? {
            return Ok(m);
        }
        let started = Instant::now();
        let front_m = self.upstream(Stage::Front)?;
        let xbar0 = front_m
            .constants
            .xbar0
            .ok_or_else(|| CliError::Artifact("front manifest carries no xbar0".into()))?;
        let r = self.reaction()?;
        let w = self.wave_matching(&r, front_m.constants.c_u)?;
        let tc = &self.cfg.tail;
        let cfg = GapConfig {
            dx: tc.dx,
            t_final: tc.t_final,
            corrector: tc.corrector,
            store_fields: tc.emit_fields,
            direct_mass: false,
            ..Default::default()
        };
        let mut summary = Table::new(
            "tail_summary",
            &["a", "I_final", "tail_prob", "crossover", "flatness_residual", "tail_prob_final", "psi_at_seed", "t_stop"],
        )
        .meta("xbar0", fmt_f64(xbar0));
        let mut moments = Table::new("tail_moments", &["a", "t", "I", "dI_dt"]);
        let mut files = Vec::new();
        for &a in &tc.a_list {
            let s = solve_gap(a, &r, &w, xbar0, PotentialSource::Lockstep, &cfg)?;
            let crossover = s.corrector.as_ref().and_then(|c| c.crossover);
            summary.push(vec![
                fmt_f64(a),
                fmt_f64(s.i_final),
                fmt_f64(s.tail_prob),
                fmt_opt(crossover),
                fmt_f64(s.flatness_residual),
                fmt_f64(s.tail_prob_final),
                fmt_f64(s.psi_at_seed),
                fmt_f64(s.t_stop),
            ]);
            for m in s.downsampled(tc.series_points) {
                moments.push_f64(&[a, m.t, m.i, m.di]);
            }
            if tc.emit_fields {
                let mut f = Table::new("tail_field", &["t", "x", "r"]).meta("a", fmt_f64(a));
                for (t, r) in &s.fields {
                    for (x, v) in s.grid.xs().iter().zip(r) {
                        f.push_f64(&[*t, *x, *v]);
                    }
                }
                files.push((format!("tail_field_{:03}.csv", files.len()), f.to_bytes()));
            }
            self.note(&format!("tail: a = {a}: P = {:.6e} (stopped at t = {:.1})", s.tail_prob, s.t_stop));
        }
        files.insert(0, (TAIL_SUMMARY_CSV.into(), summary.to_bytes()));
        files.insert(1, (TAIL_MOMENTS_CSV.into(), moments.to_bytes()));
        let m = self.manifest(Stage::Tail, front_m.constants, vec![&front_m], started)?;
        self.run.write_stage(m, files)
    }

    pub fn mc(&self) -> Result<Manifest> {
        if let Some(m) = self.completed(Stage::Mc)? {
            return Ok(m);
        }
        let started = Instant::now();
        let r = self.reaction()?;
        let mc = &self.cfg.mc;
        let est = estimate_gap_tails_mc(
            &r.law,
            mc.t_end,
            &mc.a_list,
            mc.replicates,
            mc.seed,
            &McConfig { workers: mc.workers, ..Default::default() },
        )?;
        let mut t = Table::new("mc", &["a", "estimate", "stderr", "replicates"])
            .meta("t_end", fmt_f64(mc.t_end))
            .meta("seed", mc.seed.to_string());
        for e in &est {
            t.push(vec![fmt_f64(e.a), fmt_f64(e.value), fmt_f64(e.stderr), e.replicates.to_string()]);
        }
        let m = self.manifest(Stage::Mc, base_constants(&r), vec![], started)?;
        let m = self.run.write_stage(m, vec![(MC_CSV.into(), t.to_bytes())])?;
        self.note(&format!("mc: {} thresholds at t = {}", est.len(), mc.t_end));
        Ok(m)
    }

    pub fn compare(&self) -> Result<Manifest> {
        if let Some(m) = self.completed(Stage::Compare)? {
            return Ok(m);
        }
        let started = Instant::now();
        let law = self.cfg.law()?;
        let expected_law = law_hash(&law);
        let tail_m = self.run.manifest(Stage::Tail)?;
        let mc_m = self.run.manifest(Stage::Mc)?;
        if tail_m.is_none() && mc_m.is_none() {
            return Err(CliError::Artifact(format!("no tail or mc results in {}", self.run.root.display())));
        }
        for m in [&tail_m, &mc_m].into_iter().flatten() {
            if m.law_hash != expected_law {
                return Err(CliError::Artifact(format!(
                    "{} results are for offspring law {} (hash {}), the configuration gives {} (hash {expected_law})",
                    m.stage.name(),
                    m.law,
                    m.law_hash,
                    law.canonical()
                )));
            }
        }
        if let (Some(t), Some(m)) = (&tail_m, &mc_m) {
            if t.law_hash != m.law_hash {
                return Err(CliError::Artifact(format!("law hash mismatch: tail {} vs mc {}", t.law_hash, m.law_hash)));
            }
        }
        // the constants come from the front stage, through the tail manifest when present
        let front_m = self.run.manifest(Stage::Front)?;
        if let (Some(t), Some(f)) = (&tail_m, &front_m) {
            let used = t.upstream.iter().find(|u| u.stage == Stage::Front).map(|u| u.constants_hash.clone()).unwrap_or_default();
            if used != f.constants_hash {
                return Err(CliError::Artifact(format!(
                    "constants hash mismatch: tail used front constants {used}, front manifest has {}",
                    f.constants_hash
                )));
            }
        }
        let source = tail_m.as_ref().or(front_m.as_ref()).ok_or_else(|| {
            CliError::Artifact("Monte Carlo results alone carry no wave constants; run front first".into())
        })?;
        let (c_u, xbar0) = match (source.constants.c_u, source.constants.xbar0) {
            (Some(c), Some(x)) => (c, x),
            _ => return Err(CliError::Artifact(format!("{} manifest lacks C_U or xbar0", source.stage.name()))),
        };
        let r = Reaction::new(law)?;
        let constants = Constants::new(&r, c_u, xbar0, self.cfg.compare.exponent_mode)?;

        let mut pde = Vec::new();
        if let Some(m) = &tail_m {
            let t = self.run.read_table(m, TAIL_SUMMARY_CSV, "tail_summary")?;
            let (a, p, i, f) = (t.column("a")?, t.column("tail_prob")?, t.column("I_final")?, t.column("flatness_residual")?);
            for k in 0..a.len() {
                pde.push(PdeTail { a: a[k], tail_prob: p[k], i_final: i[k], flatness_residual: f[k] });
            }
        }
        let mut mc = Vec::new();
        if let Some(m) = &mc_m {
            let t = self.run.read_table(m, MC_CSV, "mc")?;
            let t_end: f64 = t
                .meta
                .iter()
                .find(|(k, _)| k == "t_end")
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| CliError::Artifact("mc.csv header lacks t_end".into()))?;
            let (a, v, s, n) = (t.column("a")?, t.column("estimate")?, t.column("stderr")?, t.column("replicates")?);
            for k in 0..a.len() {
                mc.push(McEstimate { value: v[k], stderr: s[k], replicates: n[k] as usize, t_end, a: a[k] });
            }
        }
        let mut a_list: Vec<f64> = pde.iter().map(|p| p.a).chain(mc.iter().map(|m| m.a)).collect();
        a_list.sort_by(f64::total_cmp);
        a_list.dedup();
        let report = compare_report(&a_list, &pde, &mc, &constants)?;

        let mut t = Table::new(
            "report",
            &[
                "a",
                "pde",
                "mc",
                "mc_stderr",
                "asymptotic",
                "asymptotic_other",
                "pde_over_asymptotic",
                "mc_over_pde",
                "mc_over_asymptotic",
            ],
        )
        .meta("exponent_mode", self.cfg.compare.exponent_mode.name())
        .meta("power", fmt_f64(constants.power()))
        .meta("rate", fmt_f64(constants.rate()));
        for row in &report.rows {
            t.push(vec![
                fmt_f64(row.a),
                fmt_opt(row.pde),
                fmt_opt(row.mc),
                fmt_opt(row.mc_stderr),
                fmt_f64(row.asymptotic),
                fmt_opt(row.asymptotic_other),
                fmt_opt(row.pde_over_asymptotic),
                fmt_opt(row.mc_over_pde),
                fmt_opt(row.mc_over_asymptotic),
            ]);
        }
        let upstream: Vec<&Manifest> = [&tail_m, &mc_m].into_iter().flatten().collect();
        let m = self.manifest(Stage::Compare, source.constants, upstream, started)?;
        let m = self.run.write_stage(m, vec![(REPORT_CSV.into(), t.to_bytes()), (REPORT_JSON.into(), json_bytes(&report))])?;
        for n in &report.notes {
            self.note(&format!("compare: {n}"));
        }
        Ok(m)
    }

    /// All stages in order.
    pub fn all(&self) -> Result<Manifest> {
        self.wave()?;
        self.front()?;
        self.tail()?;
        self.mc()?;
        self.compare()
    }
}
