//! Scenario files: a versioned JSON description of one experiment.
//!
//! Relative paths inside a scenario resolve against the directory of the scenario file.
//! A single `seed` drives every random choice; the problem, graph, Byzantine placement
//! and attack noise each draw from their own derived stream.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use byzalloc::aggregation::{AggregationRule, AggregatorConfig, ClipRadius, TrimCount};
use byzalloc::attacks::{preset, AttackSpec};
use byzalloc::engine::{RunConfig, StepSchedule};
use byzalloc::graph::{equal_weights, metropolis_weights, random_regular, Topology, WeightMatrix};
use byzalloc::problem::{AgentSpec, BoxConstraint, ProblemInstance, QuadraticCost};
use byzalloc::rng::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::generators::load_generators;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub seed: u64,
    pub problem: ProblemSource,
    pub topology: TopologySource,
    pub weights: WeightRule,
    #[serde(default)]
    pub byzantine: ByzantineSelection,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub aggregator: AggregatorSpec,
    /// Preset applied to every Byzantine agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<String>,
    /// Per-agent presets that replace `attack`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attack_overrides: BTreeMap<usize, String>,
    pub schedule: StepSchedule,
    pub iterations: usize,
    /// Defaults to the zero vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    #[serde(default)]
    pub nonneg_dual: bool,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    /// Scalar-per-dimension quadratics `a (θ − b)²` with `a ~ U(lo, hi)` and `b ~ N(mean, std²)`.
    Synthetic {
        agents: usize,
        #[serde(default = "one")]
        dim: usize,
        curvature_range: [f64; 2],
        center_mean: f64,
        center_std: f64,
        bounds: [f64; 2],
        target: f64,
    },
    Inline {
        agents: Vec<InlineAgent>,
        target: Vec<f64>,
    },
    /// Generator table; the demand is split evenly, `s = total_demand / count`.
    Generators {
        path: PathBuf,
        total_demand: f64,
        #[serde(default)]
        strict_ranges: bool,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineAgent {
    pub curvature: Vec<f64>,
    pub center: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    RandomRegular { degree: usize },
    EdgeList { path: PathBuf },
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    Equal,
    Metropolis,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ByzantineSelection {
    #[default]
    None,
    /// Uniformly random agents, redrawn until no agent has more than
    /// `max_per_node` Byzantine neighbors.
    Random {
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_per_node: Option<usize>,
    },
    Ids(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    AttackFree,
    Resilient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorSpec {
    pub rule: AggregationRule,
    /// A count, or `"byzantine_neighbors"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Setting>,
    /// A radius, or `"adaptive"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Setting>,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self {
            rule: AggregationRule::Mean,
            b: None,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Number(f64),
    Named(String),
}

impl AggregatorSpec {
    pub fn to_config(&self) -> Result<AggregatorConfig> {
        let trim = match &self.b {
            None => TrimCount::ByzantineNeighbors,
            Some(Setting::Named(s)) if s == "byzantine_neighbors" => TrimCount::ByzantineNeighbors,
            Some(Setting::Named(s)) => bail!("aggregator.b: expected a count or \"byzantine_neighbors\", got \"{s}\""),
            Some(Setting::Number(v)) => {
                if !(v.is_finite() && *v >= 0.0 && v.fract() == 0.0) {
                    bail!("aggregator.b: must be an integer ≥ 0, got {v}");
                }
                TrimCount::Fixed(*v as usize)
            }
        };
        let clip = match &self.tau {
            None => ClipRadius::Adaptive,
            Some(Setting::Named(s)) if s == "adaptive" => ClipRadius::Adaptive,
            Some(Setting::Named(s)) => bail!("aggregator.tau: expected a radius or \"adaptive\", got \"{s}\""),
            Some(Setting::Number(v)) => {
                if v.is_nan() || *v < 0.0 {
                    bail!("aggregator.tau: must be ≥ 0, got {v}");
                }
                ClipRadius::Fixed(*v)
            }
        };
        Ok(AggregatorConfig {
            rule: self.rule,
            trim,
            clip,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also dump the full trace, states included, as JSON.
    #[serde(default)]
    pub trace_json: bool,
}

/// A scenario together with the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = parse_scenario(&text).with_context(|| format!("in {}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedScenario { scenario, base_dir };
    loaded.check_files()?;
    Ok(loaded)
}

/// Parses and range-checks a scenario; file references are not touched.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("schema error at `{path}`: {}", e.into_inner())
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version);
        }
        if self.iterations == 0 {
            bail!("iterations: must be ≥ 1");
        }
        match &self.problem {
            ProblemSource::Synthetic {
                agents,
                dim,
                curvature_range,
                center_std,
                bounds,
                ..
            } => {
                if *agents == 0 {
                    bail!("problem.agents: must be ≥ 1");
                }
                if *dim == 0 {
                    bail!("problem.dim: must be ≥ 1");
                }
                if !(curvature_range[0] > 0.0 && curvature_range[0] < curvature_range[1]) {
                    bail!("problem.curvature_range: need 0 < lo < hi, got {curvature_range:?}");
                }
                if !(center_std.is_finite() && *center_std >= 0.0) {
                    bail!("problem.center_std: must be ≥ 0, got {center_std}");
                }
                if bounds.iter().any(|x| x.is_nan()) || bounds[0] > bounds[1] {
                    bail!("problem.bounds: need lo ≤ hi, got {bounds:?}");
                }
            }
            ProblemSource::Inline { agents, .. } if agents.is_empty() => bail!("problem.agents: must not be empty"),
            ProblemSource::Generators { total_demand, .. } if !total_demand.is_finite() => {
                bail!("problem.total_demand: must be finite")
            }
            _ => {}
        }
        if let TopologySource::RandomRegular { degree } = self.topology {
            if degree == 0 {
                bail!("topology.degree: must be ≥ 1");
            }
        }
        self.aggregator.to_config()?;
        self.schedule.validate().map_err(|e| anyhow!("schedule: {e}"))?;
        if let Some(name) = &self.attack {
            preset(name, 1, 0).map_err(|e| anyhow!("attack: {e}"))?;
        }
        for (id, name) in &self.attack_overrides {
            preset(name, 1, 0).map_err(|e| anyhow!("attack_overrides.{id}: {e}"))?;
        }
        if self.algorithm == Algorithm::AttackFree && self.byzantine != ByzantineSelection::None {
            let none = matches!(self.byzantine, ByzantineSelection::Random { count: 0, .. })
                || matches!(&self.byzantine, ByzantineSelection::Ids(ids) if ids.is_empty());
            if !none {
                bail!("byzantine: the attack-free algorithm allows no Byzantine agents");
            }
        }
        Ok(())
    }

    pub fn problem_seed(&self) -> u64 {
        mix_seed(&[self.seed, 1])
    }

    pub fn graph_seed(&self) -> u64 {
        mix_seed(&[self.seed, 2])
    }

    pub fn byzantine_seed(&self) -> u64 {
        mix_seed(&[self.seed, 3])
    }

    pub fn attack_seed(&self) -> u64 {
        mix_seed(&[self.seed, 4])
    }
}

/// Everything needed to run a scenario.
#[derive(Debug, Clone)]
pub struct Built {
    pub config: RunConfig,
    pub algorithm: Algorithm,
}

impl LoadedScenario {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn check_files(&self) -> Result<()> {
        let mut files = Vec::new();
        if let ProblemSource::Generators { path, .. } = &self.scenario.problem {
            files.push(("problem.path", path));
        }
        if let TopologySource::EdgeList { path } = &self.scenario.topology {
            files.push(("topology.path", path));
        }
        for (field, path) in files {
            let full = self.resolve(path);
            if !full.is_file() {
                bail!("{field}: file {} does not exist", full.display());
            }
        }
        Ok(())
    }

    fn agents(&self) -> Result<(Vec<AgentSpec>, Vec<f64>)> {
        let s = &self.scenario;
        Ok(match &s.problem {
            ProblemSource::Synthetic {
                agents,
                dim,
                curvature_range,
                center_mean,
                center_std,
                bounds,
                target,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(s.problem_seed());
                let normal = Normal::new(*center_mean, *center_std).context("problem.center_std")?;
                let list = (0..*agents)
                    .map(|i| {
                        let a: Vec<f64> = (0..*dim)
                            .map(|_| rng.random_range(curvature_range[0]..curvature_range[1]))
                            .collect();
                        let b: Vec<f64> = (0..*dim).map(|_| normal.sample(&mut rng)).collect();
                        AgentSpec::new(
                            i,
                            QuadraticCost::new(a, b, 0.0)?,
                            BoxConstraint::new(vec![bounds[0]; *dim], vec![bounds[1]; *dim])?,
                        )
                    })
                    .collect::<byzalloc::Result<Vec<_>>>()?;
                (list, vec![*target; *dim])
            }
            ProblemSource::Inline { agents, target } => {
                let list = agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        AgentSpec::new(
                            i,
                            QuadraticCost::new(a.curvature.clone(), a.center.clone(), a.offset)?,
                            BoxConstraint::new(a.lo.clone(), a.hi.clone())?,
                        )
                    })
                    .collect::<byzalloc::Result<Vec<_>>>()
                    .map_err(|e| anyhow!("problem.agents: {e}"))?;
                (list, target.clone())
            }
            ProblemSource::Generators {
                path,
                total_demand,
                strict_ranges,
            } => {
                let records = load_generators(&self.resolve(path), *strict_ranges)?;
                let list = records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| r.to_agent(i))
                    .collect::<byzalloc::Result<Vec<_>>>()?;
                let n = list.len() as f64;
                (list, vec![total_demand / n])
            }
        })
    }

    fn topology(&self, n: usize) -> Result<Topology> {
        let s = &self.scenario;
        Ok(match &s.topology {
            TopologySource::RandomRegular { degree } => {
                random_regular(n, *degree, s.graph_seed()).map_err(|e| anyhow!("topology: {e}"))?
            }
            TopologySource::EdgeList { path } => {
                let full = self.resolve(path);
                let text = std::fs::read_to_string(&full).with_context(|| format!("reading {}", full.display()))?;
                Topology::parse_edge_list(&text, Some(n)).with_context(|| format!("in {}", full.display()))?
            }
            TopologySource::Complete => Topology::complete(n),
        })
    }

    fn byzantine(&self, topology: &Topology) -> Result<BTreeSet<usize>> {
        let n = topology.num_nodes();
        match &self.scenario.byzantine {
            ByzantineSelection::None => Ok(BTreeSet::new()),
            ByzantineSelection::Ids(ids) => {
                if let Some(id) = ids.iter().find(|&&id| id >= n) {
                    bail!("byzantine.ids: agent {id} does not exist ({n} agents)");
                }
                Ok(ids.iter().copied().collect())
            }
            ByzantineSelection::Random { count, max_per_node } => {
                if *count >= n {
                    bail!("byzantine.count: {count} leaves no honest agent among {n}");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.byzantine_seed());
                for _ in 0..100_000 {
                    let picked: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, *count).into_iter().collect();
                    let ok = max_per_node.is_none_or(|cap| {
                        (0..n).all(|i| topology.neighbors(i).iter().filter(|j| picked.contains(j)).count() <= cap)
                    });
                    if ok {
                        return Ok(picked);
                    }
                }
                bail!("byzantine: no placement of {count} agents respects max_per_node {max_per_node:?}")
            }
        }
    }

    pub fn build(&self) -> Result<Built> {
        let s = &self.scenario;
        let (agents, target) = self.agents()?;
        let n = agents.len();
        let topology = self.topology(n)?;
        let byzantine = self.byzantine(&topology)?;
        let problem = ProblemInstance::new(agents, target, byzantine.clone()).context("problem")?;
        let weights: WeightMatrix = match s.weights {
            WeightRule::Equal => equal_weights(&topology)?,
            WeightRule::Metropolis => metropolis_weights(&topology)?,
        };
        let dim = problem.dim();
        let mut attacks = BTreeMap::new();
        for &b in &byzantine {
            let name = s
                .attack_overrides
                .get(&b)
                .or(s.attack.as_ref())
                .ok_or_else(|| anyhow!("attack: Byzantine agent {b} has no attack preset"))?;
            let attack: AttackSpec = preset(name, dim, mix_seed(&[s.attack_seed(), b as u64]))?;
            attacks.insert(b, attack);
        }
        if let Some(id) = s.attack_overrides.keys().find(|id| !byzantine.contains(id)) {
            bail!("attack_overrides.{id}: agent {id} is not Byzantine");
        }
        let lambda0 = s.lambda0.clone().unwrap_or_else(|| vec![0.0; dim]);
        if lambda0.len() != dim {
            bail!("lambda0: expected {dim} entries, got {}", lambda0.len());
        }
        Ok(Built {
            config: RunConfig {
                problem,
                topology,
                weights,
                aggregator: s.aggregator.to_config()?,
                attacks,
                schedule: s.schedule,
                iterations: s.iterations,
                lambda0,
                nonneg_dual: s.nonneg_dual,
                seed: s.seed,
            },
            algorithm: s.algorithm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "schema_version": 1,
        "seed": 3,
        "problem": {"source": "synthetic", "agents": 12, "curvature_range": [1, 2],
                    "center_mean": 2, "center_std": 0.6, "bounds": [0, 100], "target": 50},
        "topology": {"source": "random_regular", "degree": 5},
        "weights": "equal",
        "byzantine": {"random": {"count": 2, "max_per_node": 1}},
        "algorithm": "resilient",
        "aggregator": {"rule": "ctm", "b": "byzantine_neighbors"},
        "attack": "small_value_c1",
        "schedule": {"kind": "power", "exponent": 0.1},
        "iterations": 20
    }"#;

    #[test]
    fn minimal_builds() {
        let s = parse_scenario(MINIMAL).unwrap();
        let loaded = LoadedScenario {
            scenario: s,
            base_dir: PathBuf::new(),
        };
        let built = loaded.build().unwrap();
        assert_eq!(built.config.problem.num_agents(), 12);
        assert_eq!(built.config.problem.num_byzantine(), 2);
        let counts =
            byzalloc::engine::byzantine_neighbor_counts(&built.config.topology, built.config.problem.byzantine());
        assert!(counts.iter().all(|&c| c <= 1));
        // same scenario, same instance
        let again = loaded.build().unwrap();
        assert_eq!(again.config.digest(), built.config.digest());
    }

    #[test]
    fn unknown_keys_and_paths() {
        let bad = MINIMAL.replace("\"iterations\": 20", "\"iterations\": 20, \"colour\": 1");
        let err = format!("{:#}", parse_scenario(&bad).unwrap_err());
        assert!(err.contains("colour"), "{err}");
        let bad = MINIMAL.replace("\"degree\": 5", "\"degree\": 5, \"extra\": true");
        assert!(parse_scenario(&bad).is_err());
        let bad = MINIMAL.replace("\"iterations\": 20", "\"iterations\": \"many\"");
        let err = format!("{:#}", parse_scenario(&bad).unwrap_err());
        assert!(err.contains("iterations"), "{err}");
    }

    #[test]
    fn range_errors_name_the_field() {
        let bad = MINIMAL.replace("\"b\": \"byzantine_neighbors\"", "\"b\": -1");
        let err = format!("{:#}", parse_scenario(&bad).unwrap_err());
        assert!(err.contains("aggregator.b"), "{err}");
        let bad = MINIMAL.replace("\"b\": \"byzantine_neighbors\"", "\"tau\": -0.5");
        let err = format!("{:#}", parse_scenario(&bad).unwrap_err());
        assert!(err.contains("aggregator.tau"), "{err}");
        let bad = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(format!("{:#}", parse_scenario(&bad).unwrap_err()).contains("schema_version"));
        let bad = MINIMAL.replace("small_value_c1", "whisper");
        assert!(format!("{:#}", parse_scenario(&bad).unwrap_err()).contains("attack"));
    }

    #[test]
    fn round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(parse_scenario(&text).unwrap(), s);
    }

    #[test]
    fn max_per_node_is_enforced_or_reported() {
        let bad = MINIMAL.replace(
            "\"count\": 2, \"max_per_node\": 1",
            "\"count\": 11, \"max_per_node\": 0",
        );
        let loaded = LoadedScenario {
            scenario: parse_scenario(&bad).unwrap(),
            base_dir: PathBuf::new(),
        };
        assert!(loaded.build().is_err());
    }
}
