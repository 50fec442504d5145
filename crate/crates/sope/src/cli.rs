//! Command-line front end.
//!
//! Four subcommands bind the library into reproducible runs:
//!
//! - `sweep`: run the experiment described by a config file and write
//!   `raw.csv`, `aggregates.csv`, `sweep.svg`, and `metadata.toml` into the
//!   output directory.
//! - `oracle`: dump the exact occupancy tables, correction ratios,
//!   q-values, and policy values for both policies as flat CSV tables.
//! - `check`: run the built-in verification suite and print one pass/fail
//!   line per item.
//! - `demo`: the built-in fast preset through the full sweep pipeline.
//!
//! Flags: `--config <path>`, repeatable `--set key=value` overrides,
//! `--out <dir>`, `--seed <n>` (overrides the config's base seed), and
//! `--quiet`. Diagnostics go to standard error; data goes to files or
//! standard output. Exit status is 0 iff no errors. The `SOPE_THREADS`
//! environment variable caps worker parallelism (0 = auto).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, render_config};
use crate::envs::make_static_policy;
use crate::error::Result;
use crate::harness::{run_sweep, ExperimentConfig, SweepReport};
use crate::occupancy::{
    bellman_flow_residual, exact_j, occupancy_avg, occupancy_t, stationary_occupancy,
};
use crate::qvalue::{exact_q, HorizonMode};
use crate::ratio::{oracle_ratio, RatioKind};
use crate::report::{
    aggregate_csv, raw_csv, render_svg, sa_table_csv, state_vector_csv, time_table_csv,
    write_text,
};

#[derive(Parser)]
#[command(
    name = "sope",
    version,
    about = "Off-policy evaluation estimator spectrum on tabular benchmark environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set pi_b_p=0.7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep from a config file and write CSV/SVG reports.
    Sweep(RunArgs),
    /// Dump exact DP tables for the configured environment and policies.
    Oracle(RunArgs),
    /// Run the built-in verification suite.
    Check {
        /// Only print failures.
        #[arg(long)]
        quiet: bool,
    },
    /// Run the fast built-in preset through the full pipeline.
    Demo {
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the preset's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
}

/// Entry point used by the binary: parses `args` (including the program
/// name) and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Check { quiet } => return cmd_check(quiet),
        Command::Demo { out, seed, quiet } => cmd_demo(&out, seed, quiet),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn loaded_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = load_config(&args.config, &args.set)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    Ok(config)
}

fn write_sweep_outputs(report: &SweepReport, out: &Path, quiet: bool) -> Result<()> {
    write_text(&out.join("raw.csv"), &raw_csv(report))?;
    write_text(&out.join("aggregates.csv"), &aggregate_csv(report))?;
    write_text(&out.join("sweep.svg"), &render_svg(report))?;
    write_text(&out.join("metadata.toml"), &metadata_toml(report))?;
    if !quiet {
        eprintln!(
            "wrote raw.csv, aggregates.csv, sweep.svg, metadata.toml to {} ({} rows, J = {:.6}, {:.2}s)",
            out.display(),
            report.rows.len(),
            report.true_j,
            report.metadata.wall_clock_secs,
        );
    }
    Ok(())
}

fn metadata_toml(report: &SweepReport) -> String {
    let m = &report.metadata;
    let mut out = String::from("[run]\n");
    out.push_str(&format!("version = {:?}\n", m.version));
    out.push_str(&format!("rng_algorithm = {:?}\n", m.rng_algorithm));
    out.push_str(&format!("seed_derivation = {:?}\n", m.seed_derivation));
    out.push_str(&format!("ratio_method = {:?}\n", m.ratio_method));
    out.push_str(&format!("bootstrap = {:?}\n", m.bootstrap));
    out.push_str(&format!("wall_clock_secs = {}\n", m.wall_clock_secs));
    out.push_str(&format!("true_j = {}\n", report.true_j));
    out.push_str("\n# The [config] table, with its prefix stripped, is a config file that\n");
    out.push_str("# reproduces this run exactly.\n[config]\n");
    for line in render_config(&report.config).lines() {
        if let Some(rest) = line.strip_prefix('[') {
            out.push_str(&format!("[config.{rest}\n"));
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let config = loaded_config(args)?;
    if !args.quiet {
        eprintln!(
            "sweep: {} environment, {} families, batches {:?}, {} trials",
            config.env.name(),
            config.families.len(),
            config.batch_sizes,
            config.trials
        );
    }
    let report = run_sweep(&config)?;
    write_sweep_outputs(&report, &args.out, args.quiet)
}

fn cmd_demo(out: &Path, seed: Option<u64>, quiet: bool) -> Result<()> {
    let mut config = ExperimentConfig::demo();
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    if !quiet {
        eprintln!("demo preset: graph chain of 6, batches {:?}, 8 trials", config.batch_sizes);
    }
    let report = run_sweep(&config)?;
    write_sweep_outputs(&report, out, quiet)
}

fn cmd_oracle(args: &RunArgs) -> Result<()> {
    let config = loaded_config(args)?;
    let mdp = config.env.build()?;
    let pi_e = make_static_policy(mdp.n_states(), config.pi_e_p)?;
    let pi_b = make_static_policy(mdp.n_states(), config.pi_b_p)?;
    let out = &args.out;

    let mut summary = String::from("[oracle]\n");
    for (label, policy) in [("pi_e", &pi_e), ("pi_b", &pi_b)] {
        let d_t = occupancy_t(&mdp, policy)?;
        write_text(&out.join(format!("occupancy_t_{label}.csv")), &time_table_csv(&d_t))?;
        let d_avg = occupancy_avg(&mdp, policy)?;
        write_text(&out.join(format!("occupancy_avg_{label}.csv")), &sa_table_csv(&d_avg))?;
        let j = exact_j(&mdp, policy)?;
        summary.push_str(&format!("j_{label} = {j}\n"));
        if mdp.gamma() < 1.0 {
            let q = exact_q(&mdp, policy, HorizonMode::Infinite)?;
            write_text(&out.join(format!("q_{label}.csv")), &sa_table_csv(&q.q))?;
            write_text(&out.join(format!("v_{label}.csv")), &state_vector_csv(&q.v))?;
            let fixed = stationary_occupancy(&mdp, policy)?;
            let residual = bellman_flow_residual(&mdp, policy, &fixed)?;
            summary.push_str(&format!("stationary_flow_residual_{label} = {residual:e}\n"));
        }
    }
    let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage)?;
    write_text(&out.join("ratio_avg.csv"), &sa_table_csv(ratio.table()))?;
    let support = crate::tables::SaTable::from_fn(ratio.n_states(), ratio.n_actions(), |s, a| {
        if ratio.on_support(s, a) {
            1.0
        } else {
            0.0
        }
    });
    write_text(&out.join("ratio_support.csv"), &sa_table_csv(&support))?;
    write_text(&out.join("oracle_summary.toml"), &summary)?;
    if !args.quiet {
        eprintln!("wrote oracle tables to {}", out.display());
    }
    Ok(())
}

fn cmd_check(quiet: bool) -> i32 {
    let outcomes = crate::checks::run_builtin_checks();
    let mut failures = 0;
    for outcome in &outcomes {
        if outcome.passed {
            if !quiet {
                println!("PASS {} ({})", outcome.name, outcome.detail);
            }
        } else {
            failures += 1;
            println!("FAIL {} ({})", outcome.name, outcome.detail);
        }
    }
    if failures == 0 {
        if !quiet {
            println!("all {} checks passed", outcomes.len());
        }
        0
    } else {
        println!("{failures} of {} checks failed", outcomes.len());
        1
    }
}
