//! `gaptail`: run the wave, front, tail, Monte Carlo and comparison stages.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 upstream-artifact error,
//! 4 numerical-quality error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gaptail::ExponentMode;
use gaptail_cli::config::{parse_a_list, sha256_hex};
use gaptail_cli::{CliError, Pipeline, Result, RunConfig, RunDir};

#[derive(Parser, Debug)]
#[command(name = "gaptail", version, about = "Tail of the gap between the two leading BBM particles")]
struct Cli {
    /// TOML configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run directory; defaults to <out-root>/run-<law hash prefix>.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    /// Root for default run directories.
    #[arg(long, global = true, env = "GAPTAIL_OUT", default_value = "gaptail-runs")]
    out_root: PathBuf,

    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct LawArg {
    /// Offspring law, e.g. `2:0.5,3:0.5`.
    #[arg(long)]
    offspring: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Traveling wave and adjoint table.
    Wave {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        dx: Option<f64>,
    },
    /// Heaviside front and its Bramson shift.
    Front {
        #[arg(long)]
        dx: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        /// Dump every k-th stored sample.
        #[arg(long)]
        field_every: Option<usize>,
    },
    /// PDE tail probabilities.
    Tail {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        a_list: Option<String>,
        #[arg(long)]
        dx: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        emit_fields: bool,
    },
    /// Monte Carlo gap tail at a finite time.
    Mc {
        #[command(flatten)]
        law: LawArg,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        a_list: Option<String>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Compare tail, Monte Carlo and asymptotic values.
    Compare {
        #[arg(long)]
        exponent_mode: Option<ExponentMode>,
    },
    /// Every stage in order.
    All {
        #[command(flatten)]
        law: LawArg,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn apply(cfg: &mut RunConfig, command: &Command) -> Result<()> {
    let set_law = |cfg: &mut RunConfig, law: &LawArg| {
        if let Some(o) = &law.offspring {
            cfg.offspring = o.clone();
        }
    };
    match command {
        Command::Wave { law, dx } => {
            set_law(cfg, law);
            if let Some(dx) = dx {
                cfg.wave.dx = *dx;
            }
        }
        Command::Front { dx, t_final, field_every } => {
            if let Some(dx) = dx {
                cfg.front.dx = *dx;
            }
            if let Some(t) = t_final {
                cfg.front.t_final = *t;
            }
            if field_every.is_some() {
                cfg.front.field_every = *field_every;
            }
        }
        Command::Tail { law, a_list, dx, t_final, emit_fields } => {
            set_law(cfg, law);
            if let Some(a) = a_list {
                cfg.tail.a_list = parse_a_list(a)?;
            }
            if let Some(dx) = dx {
                cfg.tail.dx = *dx;
            }
            if t_final.is_some() {
                cfg.tail.t_final = *t_final;
            }
            cfg.tail.emit_fields |= emit_fields;
        }
        Command::Mc { law, t_end, a_list, replicates, seed, workers } => {
            set_law(cfg, law);
            if let Some(a) = a_list {
                cfg.mc.a_list = parse_a_list(a)?;
            }
            if let Some(t) = t_end {
                cfg.mc.t_end = *t;
            }
            if let Some(n) = replicates {
                cfg.mc.replicates = *n;
            }
            if let Some(s) = seed {
                cfg.mc.seed = *s;
            }
            if workers.is_some() {
                cfg.mc.workers = *workers;
            }
        }
        Command::Compare { exponent_mode } => {
            if let Some(m) = exponent_mode {
                cfg.compare.exponent_mode = *m;
            }
        }
        Command::All { law } => set_law(cfg, law),
        Command::Config => {}
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply(&mut cfg, &cli.command)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let root = cli.run_dir.clone().unwrap_or_else(|| {
        let law = cfg.law().map(|l| l.canonical()).unwrap_or_default();
        cli.out_root.join(format!("run-{}", &sha256_hex(law.as_bytes())[..12]))
    });
    let p = Pipeline { cfg, run: RunDir::new(root), quiet: cli.quiet };
    let m = match cli.command {
        Command::Wave { .. } => p.wave()?,
        Command::Front { .. } => p.front()?,
        Command::Tail { .. } => p.tail()?,
        Command::Mc { .. } => p.mc()?,
        Command::Compare { .. } => p.compare()?,
        Command::All { .. } => p.all()?,
        Command::Config => unreachable!(),
    };
    println!("{}", p.run.stage_dir(m.stage).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gaptail: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
