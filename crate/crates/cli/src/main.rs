use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fractalp_core::config::{Config, MetricKind};
use fractalp_core::{ConfigError, RunError};

mod commands;
mod output;

#[derive(Parser)]
#[command(name = "fractalp", version, about = "p-energies and Besov functionals on self-similar fractals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Built-in configuration (`sg`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    p: Option<f64>,
    #[arg(long, global = true)]
    level: Option<usize>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    /// Monte Carlo pairs per radius.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, env = "FRACTALP_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    metric: Option<MetricArg>,
    /// Angular grid size for sampled eigenforms.
    #[arg(long, global = true)]
    grid: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MetricArg {
    Euclidean,
    Resistance,
}

#[derive(Subcommand)]
enum Command {
    /// Build and inspect vertex tables.
    Structure(Common),
    /// Harmonic extension or Dirichlet problem at --level.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Boundary values for the harmonic extension, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        boundary: Option<Vec<f64>>,
        /// Dirichlet constraints `id=value`, comma separated.
        #[arg(long, value_delimiter = ',')]
        fix: Option<Vec<String>>,
    },
    /// Renormalization eigenform for --p.
    Eigenform(Common),
    /// Exponent sheet for --p.
    Exponents(Common),
    /// Monte Carlo Besov functionals.
    Besov {
        #[arg(value_enum)]
        action: BesovAction,
        #[command(flatten)]
        common: Common,
        /// Smoothness exponent (default: the critical exponent).
        #[arg(long)]
        s: Option<f64>,
        /// Radius for `eval`.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Energy measures on cells.
    Measures {
        #[arg(value_enum)]
        action: MeasuresAction,
        #[command(flatten)]
        common: Common,
    },
    /// Resistance geometry.
    Metric {
        #[arg(value_enum)]
        action: MetricAction,
        #[command(flatten)]
        common: Common,
    },
    /// Generalized p-contraction battery on graph forms.
    Gc(Common),
    /// Full acceptance run.
    Suite(Common),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum BesovAction {
    Eval,
    Wm,
    Scan,
    Compare,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MeasuresAction {
    Cells,
    Chain,
    Locality,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MetricAction {
    Resistance,
    Fits,
    Poincare,
}

/// Outcome of a subcommand that ran to completion.
pub enum Status {
    Ok,
    ChecksFailed,
}

fn load_config(c: &Common) -> Result<Config, ConfigError> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Invalid {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            let mut cfg = Config::from_toml(&text)?;
            if let Some(name) = &c.preset {
                if *name != cfg.preset {
                    return Err(ConfigError::Invalid {
                        path: "preset".into(),
                        message: format!("--preset {name} conflicts with the config file"),
                    });
                }
                cfg.preset = name.clone();
            }
            cfg
        }
        (None, Some(name)) => Config::preset(name).ok_or_else(|| ConfigError::Invalid {
            path: "preset".into(),
            message: format!("unknown preset `{name}`"),
        })?,
        (None, None) => {
            return Err(ConfigError::Invalid {
                path: "--config".into(),
                message: "give --config FILE or --preset NAME".into(),
            })
        }
    };
    if let Some(p) = c.p {
        cfg.p = p;
    }
    if let Some(l) = c.level {
        cfg.level = l;
        cfg.depth = cfg.depth.max(l + 2);
    }
    if let Some(d) = c.depth {
        cfg.depth = d;
    }
    if let Some(s) = c.samples {
        cfg.besov.samples = s;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.metric {
        cfg.besov.metric = match m {
            MetricArg::Euclidean => MetricKind::Euclidean,
            MetricArg::Resistance => MetricKind::Resistance,
        };
    }
    if let Some(g) = c.grid {
        cfg.eigenform.grid = g;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Structure(c) => ("structure", c),
        Command::Solve { common, .. } => ("solve", common),
        Command::Eigenform(c) => ("eigenform", c),
        Command::Exponents(c) => ("exponents", c),
        Command::Besov { common, .. } => ("besov", common),
        Command::Measures { common, .. } => ("measures", common),
        Command::Metric { common, .. } => ("metric", common),
        Command::Gc(c) => ("gc", c),
        Command::Suite(c) => ("suite", c),
    };
    let cfg = match load_config(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}\n");
            eprintln!("usage: fractalp <COMMAND> (--preset NAME | --config FILE) [OPTIONS]; see --help");
            return ExitCode::from(2);
        }
    };
    let mut sink = output::Sink::new(&common.out, name, &cfg);
    let result = match &cli.command {
        Command::Structure(_) => commands::structure(&cfg, &mut sink),
        Command::Solve { boundary, fix, .. } => commands::solve(&cfg, boundary.as_deref(), fix.as_deref(), &mut sink),
        Command::Eigenform(_) => commands::eigenform(&cfg, &mut sink),
        Command::Exponents(_) => commands::exponents(&cfg, &mut sink),
        Command::Besov { action, s, r, .. } => commands::besov(&cfg, *action, *s, *r, &mut sink),
        Command::Measures { action, .. } => commands::measures(&cfg, *action, &mut sink),
        Command::Metric { action, .. } => commands::metric(&cfg, *action, &mut sink),
        Command::Gc(_) => commands::gc(&cfg, &mut sink),
        Command::Suite(_) => commands::suite(&cfg, &mut sink),
    };
    let status = match result {
        Ok(s) => s,
        Err(RunError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("solver failure: {e}");
            return ExitCode::from(3);
        }
    };
    if let Err(e) = sink.finish() {
        eprintln!("error writing outputs: {e}");
        return ExitCode::from(2);
    }
    match status {
        Status::Ok => ExitCode::SUCCESS,
        Status::ChecksFailed => ExitCode::from(1),
    }
}
