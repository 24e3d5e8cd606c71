//! Command-line front end: each subcommand renders a report as text.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{
    convergence_csv, noise_check, noise_check_csv, probe_csv, probe_t4, simulate, strong_error,
};
use crate::trees::{listing, Order};

#[derive(Debug, Parser)]
#[command(name = "resonance-spde", version, about = "Resonance-based integrators for stochastic NLS and Manakov")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key=value`, applied after the config file.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One trajectory with exactly sampled noise: per-step Sobolev norms.
    Simulate,
    /// Strong and pathwise convergence study against a coupled fine reference.
    Converge,
    /// List decorated trees up to order `r` with order, symmetry factor and elementary differential.
    Trees {
        /// Maximal order, e.g. `1/2`, `1` or `3/2`; defaults to the `r` key.
        r: Option<String>,
    },
    /// Discretisation error of the T4 iterated integral across step sizes and a k3 ladder.
    ProbeT4,
    /// Moment and pathwise identity checks of the noise objects.
    NoiseCheck,
}

pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::parse(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn echo(cfg: &RunConfig, command: &str) -> Vec<String> {
    let mut lines = vec![format!("command = {command}")];
    lines.extend(cfg.canonical());
    lines
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<String> {
    let exp = cfg.experiment()?;
    let norms: Vec<f64> = cfg.list("sim_norms")?;
    let steps: usize = cfg.get("sim_steps")?;
    let rows = simulate(&exp, steps, &norms)?;
    let mut out = String::new();
    for line in echo(cfg, "simulate") {
        let _ = writeln!(out, "# {line}");
    }
    let cols: Vec<String> = norms.iter().map(|s| format!("norm_h{s}")).collect();
    let _ = writeln!(out, "step,t,{}", cols.join(","));
    for (l, (t, ns)) in rows.iter().enumerate() {
        let vals: Vec<String> = ns.iter().map(|x| format!("{x:.12e}")).collect();
        let _ = writeln!(out, "{l},{t:.9e},{}", vals.join(","));
    }
    Ok(out)
}

pub fn cmd_converge(cfg: &RunConfig) -> Result<String> {
    let exp = cfg.experiment()?;
    let report = strong_error(&exp)?;
    Ok(convergence_csv(&exp, &report, &echo(cfg, "converge")))
}

/// Tree listing for order `r`: one line per tree with label, order, `S(T)`, `Υ(T)`
/// and the bracket expression.
pub fn cmd_trees(r: Order) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# r = {r}");
    let _ = writeln!(out, "# label\torder\tS\tUpsilon\ttree");
    for (label, tree) in listing(r)? {
        if tree.is_leaf() {
            let _ = writeln!(out, "{label}\t{}\t-\tv_k\tI_{{(t1,0)}}(λ_k)", tree.order());
        } else {
            let inner = &tree.children[0];
            let _ = writeln!(
                out,
                "{label}\t{}\t{}\t{}\tI_{{(t1,0)}}(λ_k {})",
                tree.order(),
                tree.symmetry(),
                inner.upsilon_pattern()?,
                inner.bracket()
            );
        }
    }
    Ok(out)
}

pub fn cmd_probe_t4(cfg: &RunConfig) -> Result<String> {
    let report = probe_t4(&cfg.probe()?)?;
    Ok(probe_csv(&report, &echo(cfg, "probe-t4")))
}

pub fn cmd_noise_check(cfg: &RunConfig) -> Result<String> {
    let report = noise_check(&cfg.noise_check()?)?;
    Ok(noise_check_csv(&report, &echo(cfg, "noise-check")))
}

fn execute(cli: &Cli) -> Result<String> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Converge => cmd_converge(&cfg),
        Command::Trees { r } => {
            let order = match r {
                Some(s) => s.parse()?,
                None => cfg.order()?,
            };
            cmd_trees(order)
        }
        Command::ProbeT4 => cmd_probe_t4(&cfg),
        Command::NoiseCheck => cmd_noise_check(&cfg),
    }
}

/// Parse arguments, run, write the output; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let text = match execute(&cli) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return match e {
                Error::Config(_) | Error::UnsupportedOrder(_) | Error::NotDivisible { .. } => 2,
                _ => 1,
            };
        }
    };
    let written = match &cli.out {
        Some(p) => std::fs::write(p, &text),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes())
        }
    };
    match written {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
