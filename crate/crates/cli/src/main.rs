use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use byzalloc::aggregation::AggregationRule;
use byzalloc_cli::commands::{self, Overrides, SweepParam};
use byzalloc_cli::scenario::load_scenario;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "byzalloc",
    version,
    about = "Byzantine-resilient decentralized resource allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write trace.csv.
    Run(Common),
    /// Run once per value of a parameter and write a summary.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of B, b, tau, seed, iters.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Solve the honest subproblem exactly.
    Oracle(Common),
    /// Theoretical constants, radii and step-size checks.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Contraction constant; estimated empirically when omitted.
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Empirical contraction constant and graph constants.
    Estimate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario_flag")]
    scenario: Option<PathBuf>,
    #[arg(long = "scenario", value_name = "PATH", conflicts_with = "scenario")]
    scenario_flag: Option<PathBuf>,
    #[arg(long)]
    rule: Option<AggregationRule>,
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(byzalloc_cli::scenario::LoadedScenario, PathBuf)> {
        let Some(path) = self.scenario.as_ref().or(self.scenario_flag.as_ref()) else {
            bail!("no scenario given");
        };
        let overrides = Overrides {
            rule: self.rule,
            attack: self.attack.clone(),
            b: self.b,
            tau: self.tau,
            iters: self.iters,
            seed: self.seed,
        };
        let loaded = overrides.apply(&load_scenario(path)?)?;
        let out = commands::output_dir(&loaded, self.out.as_deref());
        Ok((loaded, out))
    }
}

fn dispatch(cli: Cli) -> Result<Vec<PathBuf>> {
    Ok(match cli.command {
        Command::Run(c) => {
            let (s, out) = c.load()?;
            commands::run(&s, &out)?
        }
        Command::Sweep { common, param, values } => {
            let (s, out) = common.load()?;
            commands::sweep(&s, param, &values, &out)?
        }
        Command::Oracle(c) => {
            let (s, out) = c.load()?;
            vec![commands::oracle(&s, &out)?]
        }
        Command::Bounds { common, rho } => {
            let (s, out) = common.load()?;
            vec![commands::bounds(&s, rho, &out)?]
        }
        Command::Estimate(c) => {
            let (s, out) = c.load()?;
            vec![commands::estimate(&s, &out)?]
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
