//! `restart`: synthetic-data experiments for Restart and baseline samplers.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Parser, Subcommand};
use restart_core::Execution;

use crate::commands::Context;
use crate::config::{apply_override, from_table, read_table, CommandName};

#[derive(Parser)]
#[command(name = "restart", version, about = "Restart / ODE / SDE samplers on synthetic data")]
struct Cli {
    /// TOML config with one table per subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Existing directory receiving all outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads (1 runs sequentially). Outputs do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Override a config key, e.g. `-s sample.n=500`.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Change a fixed constant (`rho=…`). Recorded in the resolved config.
    #[arg(long = "unsafe-override", global = true, value_name = "KEY=VALUE")]
    unsafe_override: Vec<String>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset CSV.
    Dataset,
    /// Train an MLP score network on a dataset.
    Train,
    /// Draw samples with one sampler.
    Sample,
    /// Split the W1 error of a window sampler into contracted and additional parts.
    Decompose,
    /// Decompose errors over a grid of sampler settings.
    Sweep,
    /// Pareto frontier (CSV and SVG) of a sweep CSV.
    Pareto,
    /// Re-run a command from its resolved `<command>.config.toml`.
    Rerun {
        #[arg(id = "resolved", value_name = "RESOLVED_CONFIG")]
        resolved: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let (command, table_path) = match &cli.command {
        Cmd::Dataset => (Some(CommandName::Dataset), cli.config.clone()),
        Cmd::Train => (Some(CommandName::Train), cli.config.clone()),
        Cmd::Sample => (Some(CommandName::Sample), cli.config.clone()),
        Cmd::Decompose => (Some(CommandName::Decompose), cli.config.clone()),
        Cmd::Sweep => (Some(CommandName::Sweep), cli.config.clone()),
        Cmd::Pareto => (Some(CommandName::Pareto), cli.config.clone()),
        Cmd::Rerun { resolved } => {
            if cli.config.is_some() {
                bail!("`rerun` takes its config as the positional argument");
            }
            (None, Some(resolved.clone()))
        }
    };
    let mut table = match &table_path {
        Some(path) => read_table(path)?,
        None => toml::Table::new(),
    };
    for s in &cli.set {
        apply_override(&mut table, s)?;
    }
    for s in &cli.unsafe_override {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| anyhow!("--unsafe-override `{s}` is not of the form key=value"))?;
        let section = table
            .entry("unsafe_override")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let parsed: toml::Table = format!("{} = {}", key.trim(), value.trim())
            .parse()
            .with_context(|| format!("--unsafe-override `{s}`"))?;
        section
            .as_table_mut()
            .context("`unsafe_override` must be a table")?
            .extend(parsed);
    }
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).context("seed must be below 2^63")?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    let cfg = from_table(table).with_context(|| match &table_path {
        Some(p) => format!("invalid configuration ({})", p.display()),
        None => "invalid configuration".to_string(),
    })?;
    let command = match (command, cfg.command) {
        (Some(c), Some(file)) if c != file => bail!("config is for `{file}`, not `{c}`"),
        (Some(c), _) | (None, Some(c)) => c,
        (None, None) => bail!("config has no `command` key; it is not a resolved config"),
    };

    let exec = match cli.threads {
        Some(0) => bail!("--threads must be positive"),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
            Execution::default()
        }
        None => Execution::default(),
    };
    let ctx = Context { out: cli.out, exec };
    commands::run(&cfg, command, &ctx)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
