//! Subcommand implementations.
//!
//! Each command takes a loaded scenario plus command-line overrides and writes its
//! artifacts into an output directory, returning the paths it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use byzalloc::aggregation::{estimate_contraction, AggregationRule, ContractionEstimate, EstimatorOptions};
use byzalloc::engine::{byzantine_neighbor_counts, run_attack_free, run_resilient, Trace};
use byzalloc::graph::{chi_squared, honest_subgraph, kappa, KappaVariant};
use byzalloc::oracle::{check_kkt, solve_reference, KktReport, ReferenceSolution, Subset};
use byzalloc::theory::{delta_bound, honest_restricted_weights, theory_report, DeltaMode, ReportInputs};
use rayon::prelude::*;
use serde::Serialize;

use crate::scenario::{Algorithm, Built, ByzantineSelection, LoadedScenario, Setting};

/// Command-line values that replace scenario fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rule: Option<AggregationRule>,
    pub attack: Option<String>,
    pub b: Option<usize>,
    pub tau: Option<f64>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, loaded: &LoadedScenario) -> Result<LoadedScenario> {
        let mut out = loaded.clone();
        let s = &mut out.scenario;
        if let Some(rule) = self.rule {
            s.aggregator.rule = rule;
        }
        if let Some(attack) = &self.attack {
            s.attack = Some(attack.clone());
        }
        if let Some(b) = self.b {
            s.aggregator.b = Some(Setting::Number(b as f64));
        }
        if let Some(tau) = self.tau {
            s.aggregator.tau = Some(Setting::Number(tau));
        }
        if let Some(k) = self.iters {
            s.iterations = k;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.validate()?;
        Ok(out)
    }
}

/// Parameters `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Number of Byzantine agents.
    ByzantineCount,
    Trim,
    Tau,
    Seed,
    Iterations,
}

impl std::str::FromStr for SweepParam {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "B" => SweepParam::ByzantineCount,
            "b" => SweepParam::Trim,
            "tau" => SweepParam::Tau,
            "seed" => SweepParam::Seed,
            "iters" => SweepParam::Iterations,
            other => bail!("--param: unknown parameter `{other}`, expected one of B, b, tau, seed, iters"),
        })
    }
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::ByzantineCount => "B",
            SweepParam::Trim => "b",
            SweepParam::Tau => "tau",
            SweepParam::Seed => "seed",
            SweepParam::Iterations => "iters",
        }
    }

    fn apply(self, loaded: &LoadedScenario, value: &str) -> Result<LoadedScenario> {
        let mut out = loaded.clone();
        let s = &mut out.scenario;
        let int = || -> Result<u64> {
            value
                .parse::<u64>()
                .map_err(|_| anyhow!("--values: `{value}` is not a nonnegative integer"))
        };
        match self {
            SweepParam::ByzantineCount => {
                let count = int()? as usize;
                s.byzantine = match &s.byzantine {
                    ByzantineSelection::Random { max_per_node, .. } => ByzantineSelection::Random {
                        count,
                        max_per_node: *max_per_node,
                    },
                    ByzantineSelection::None => ByzantineSelection::Random {
                        count,
                        max_per_node: None,
                    },
                    ByzantineSelection::Ids(_) => bail!("--param B: scenario lists Byzantine ids explicitly"),
                };
            }
            SweepParam::Trim => s.aggregator.b = Some(Setting::Number(int()? as f64)),
            SweepParam::Tau => {
                let tau: f64 = value
                    .parse()
                    .map_err(|_| anyhow!("--values: `{value}` is not a number"))?;
                s.aggregator.tau = Some(Setting::Number(tau));
            }
            SweepParam::Seed => s.seed = int()?,
            SweepParam::Iterations => s.iterations = int()? as usize,
        }
        s.validate()?;
        Ok(out)
    }
}

pub fn execute(built: &Built) -> Result<Trace> {
    Ok(match built.algorithm {
        Algorithm::AttackFree => run_attack_free(&built.config)?,
        Algorithm::Resilient => run_resilient(&built.config)?,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Output directory: the command-line value, else the scenario's, else `out`.
pub fn output_dir(loaded: &LoadedScenario, cli: Option<&Path>) -> PathBuf {
    match (cli, &loaded.scenario.output.dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => loaded.resolve(dir),
        (None, None) => PathBuf::from("out"),
    }
}

/// `run`: one trace CSV, plus the JSON trace when the scenario asks for it.
pub fn run(loaded: &LoadedScenario, out: &Path) -> Result<Vec<PathBuf>> {
    let trace = execute(&loaded.build()?)?;
    create_dir(out)?;
    let csv = out.join("trace.csv");
    trace
        .write_csv(&csv)
        .with_context(|| format!("writing {}", csv.display()))?;
    let mut written = vec![csv];
    if loaded.scenario.output.trace_json {
        let json = out.join("trace.json");
        trace
            .write_json(&json)
            .with_context(|| format!("writing {}", json.display()))?;
        written.push(json);
    }
    Ok(written)
}

pub const SUMMARY_HEADER: &str = "param,value,primal_opt,dual_opt,cost_opt,constraint_violation,dual_consensus";

/// `sweep`: one trace per value, run concurrently, then `summary.csv` in input order.
pub fn sweep(loaded: &LoadedScenario, param: SweepParam, values: &[String], out: &Path) -> Result<Vec<PathBuf>> {
    if values.is_empty() {
        bail!("--values: need at least one value");
    }
    let variants = values
        .iter()
        .map(|v| param.apply(loaded, v))
        .collect::<Result<Vec<_>>>()?;
    let traces = variants
        .par_iter()
        .zip(values)
        .map(|(variant, v)| {
            variant
                .build()
                .and_then(|b| execute(&b))
                .with_context(|| format!("{}={v}", param.name()))
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out)?;
    let mut written = Vec::with_capacity(values.len() + 1);
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for (trace, v) in traces.iter().zip(values) {
        let path = out.join(format!("trace_{}_{v}.csv", param.name()));
        trace
            .write_csv(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        let m = &trace.last().metrics;
        let _ = writeln!(
            summary,
            "{},{v},{:?},{:?},{:?},{:?},{:?}",
            param.name(),
            m.primal_opt,
            m.dual_opt,
            m.cost_opt,
            m.constraint_violation,
            m.dual_consensus
        );
    }
    let path = out.join("summary.csv");
    std::fs::write(&path, summary).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    pub solution: ReferenceSolution,
    pub kkt: KktReport,
}

pub fn oracle(loaded: &LoadedScenario, out: &Path) -> Result<PathBuf> {
    let built = loaded.build()?;
    let solution = solve_reference(&built.config.problem, Subset::Honest, 1e-12)?;
    let kkt = check_kkt(&built.config.problem, &solution)?;
    create_dir(out)?;
    let path = out.join("oracle.json");
    write_json(&path, &OracleOutput { solution, kkt })?;
    Ok(path)
}

fn contraction(built: &Built, options: &EstimatorOptions) -> Result<ContractionEstimate> {
    let cfg = &built.config;
    let byz = cfg.problem.byzantine();
    let e = honest_restricted_weights(&cfg.weights, byz)?;
    let sub = honest_subgraph(&cfg.topology, byz)?;
    let counts = byzantine_neighbor_counts(&cfg.topology, byz);
    let per_node: Vec<usize> = sub.original_ids.iter().map(|&i| counts[i]).collect();
    Ok(estimate_contraction(
        &cfg.aggregator,
        &e,
        &sub.topology,
        &per_node,
        options,
    )?)
}

fn estimator_options(loaded: &LoadedScenario, built: &Built) -> EstimatorOptions {
    EstimatorOptions {
        seed: byzalloc::rng::mix_seed(&[loaded.scenario.seed, 5]),
        dim: built.config.problem.dim(),
        ..EstimatorOptions::default()
    }
}

/// `bounds`: theory report for the scenario. Without `rho` the empirical estimate is used.
pub fn bounds(loaded: &LoadedScenario, rho: Option<f64>, out: &Path) -> Result<PathBuf> {
    let built = loaded.build()?;
    let rho = match rho {
        Some(r) => r,
        None => contraction(&built, &estimator_options(loaded, &built))?.rho_hat,
    };
    let cfg = &built.config;
    let report = theory_report(
        &cfg.problem,
        &ReportInputs {
            topology: &cfg.topology,
            weights: &cfg.weights,
            virtual_weights: None,
            rho,
            delta_mode: DeltaMode::Analytic,
            schedule: cfg.schedule,
            iterations: cfg.iterations,
        },
    )?;
    create_dir(out)?;
    let path = out.join("bounds.json");
    write_json(&path, &report)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub rule: AggregationRule,
    pub rho_hat: f64,
    pub trials_used: usize,
    pub trials_skipped: usize,
    pub kappa: f64,
    pub chi_sq: f64,
    pub delta: f64,
}

pub fn estimate(loaded: &LoadedScenario, out: &Path) -> Result<PathBuf> {
    let built = loaded.build()?;
    let est = contraction(&built, &estimator_options(loaded, &built))?;
    let cfg = &built.config;
    let e = honest_restricted_weights(&cfg.weights, cfg.problem.byzantine())?;
    let output = EstimateOutput {
        rule: cfg.aggregator.rule,
        rho_hat: est.rho_hat,
        trials_used: est.trials_used,
        trials_skipped: est.trials_skipped,
        kappa: kappa(&e, KappaVariant::Honest)?,
        chi_sq: chi_squared(&e),
        delta: delta_bound(&cfg.problem, DeltaMode::Analytic),
    };
    create_dir(out)?;
    let path = out.join("estimate.json");
    write_json(&path, &output)?;
    Ok(path)
}
