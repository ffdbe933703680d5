//! Synchronous simulation of the attack-free and the Byzantine-resilient dual
//! decomposition methods.
//!
//! Every iteration `k` each agent (i) computes `θ_i = argmin_{C_i} θᵀλ_i + f_i(θ)`,
//! (ii) takes the half step `λ_i − (γ_k/J)(s − θ_i)` and (iii) combines its half step
//! with what its neighbors sent. All three stages read iteration-`k` values only.
//!
//! Byzantine agents keep a shadow state that follows the honest protocol; it is never
//! seen by honest agents and only feeds [`AttackContext::half_steps`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{adaptive_clip_radius, aggregate, AggregationInput, AggregatorConfig, Message, ResolvedRule};
use crate::attacks::{AttackContext, AttackSpec};
use crate::error::{check_dim, Error, Result};
use crate::graph::{honest_subgraph, Topology, WeightMatrix};
use crate::oracle::{solve_reference, ReferenceSolution, Subset};
use crate::problem::{primal_argmin, LocalCost, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `γ_k = (k + 1)^(−exponent)`.
    Power {
        exponent: f64,
    },
    /// `γ_k = scale / (offset + k)`.
    Theorem {
        scale: f64,
        offset: f64,
    },
    Constant {
        gamma: f64,
    },
}

impl StepSchedule {
    pub fn power(exponent: f64) -> Self {
        StepSchedule::Power { exponent }
    }

    /// `2 / (β̃ (k₀ + k))`.
    pub fn theorem1(beta_tilde: f64, k0: f64) -> Self {
        StepSchedule::Theorem {
            scale: 2.0 / beta_tilde,
            offset: k0,
        }
    }

    /// `4J / (β H (k₀ + k))`.
    pub fn theorem2(beta: f64, honest: usize, total: usize, k0: f64) -> Self {
        StepSchedule::Theorem {
            scale: 4.0 * total as f64 / (beta * honest as f64),
            offset: k0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            StepSchedule::Power { exponent } if !ok(exponent) => {
                Err(Error::param("exponent", format!("must be > 0, got {exponent}")))
            }
            StepSchedule::Theorem { scale, .. } if !ok(scale) => {
                Err(Error::param("scale", format!("must be > 0, got {scale}")))
            }
            StepSchedule::Theorem { offset, .. } if !(offset.is_finite() && offset >= 2.0) => {
                Err(Error::param("offset", format!("must be ≥ 2, got {offset}")))
            }
            StepSchedule::Constant { gamma } if !ok(gamma) => {
                Err(Error::param("gamma", format!("must be > 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    pub fn step_size(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Power { exponent } => ((k + 1) as f64).powf(-exponent),
            StepSchedule::Theorem { scale, offset } => scale / (offset + k as f64),
            StepSchedule::Constant { gamma } => gamma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemInstance,
    pub topology: Topology,
    pub weights: WeightMatrix,
    /// Ignored by [`run_attack_free`], which always averages.
    pub aggregator: AggregatorConfig,
    /// One entry per Byzantine agent.
    pub attacks: BTreeMap<usize, AttackSpec>,
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub lambda0: Vec<f64>,
    /// Project honest duals onto the nonnegative orthant after aggregation.
    pub nonneg_dual: bool,
    /// Scenario seed; recorded in the digest.
    pub seed: u64,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let j = self.problem.num_agents();
        if self.topology.num_nodes() != j {
            return Err(Error::param(
                "topology",
                format!("has {} nodes for {j} agents", self.topology.num_nodes()),
            ));
        }
        if self.weights.size() != j {
            return Err(Error::param(
                "weights",
                format!("matrix is {0}×{0} for {j} agents", self.weights.size()),
            ));
        }
        if !self.weights.respects(&self.topology) {
            return Err(Error::param("weights", "nonzero weight on a pair that is not an edge"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be ≥ 1"));
        }
        check_dim(self.problem.dim(), self.lambda0.len())?;
        if self.lambda0.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("lambda0", "entries must be finite"));
        }
        self.schedule.validate()?;
        self.aggregator.validate()?;
        let byz = self.problem.byzantine();
        for id in byz {
            match self.attacks.get(id) {
                Some(a) => a.validate(self.problem.dim())?,
                None => return Err(Error::param("attacks", format!("Byzantine agent {id} has no attack"))),
            }
        }
        if let Some(id) = self.attacks.keys().find(|id| !byz.contains(id)) {
            return Err(Error::param(
                "attacks",
                format!("agent {id} is honest but has an attack"),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let attacks: BTreeMap<usize, serde_json::Value> = self
            .attacks
            .iter()
            .map(|(id, a)| {
                let v = match a {
                    AttackSpec::Custom(_) => serde_json::Value::String("custom".into()),
                    other => serde_json::to_value(other).expect("data attacks serialize"),
                };
                (*id, v)
            })
            .collect();
        let view = serde_json::json!({
            "problem": self.problem,
            "topology": self.topology,
            "weights": self.weights,
            "aggregator": self.aggregator,
            "attacks": attacks,
            "schedule": self.schedule,
            "iterations": self.iterations,
            "lambda0": self.lambda0,
            "nonneg_dual": self.nonneg_dual,
            "seed": self.seed,
        });
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `‖Θ − Θ*‖` over honest agents.
    pub primal_opt: f64,
    /// `Σ_i ‖λ_i − λ*‖`.
    pub dual_opt: f64,
    /// `|f(Θ) − f(Θ*)|` with `f = (1/H) Σ f_i`.
    pub cost_opt: f64,
    /// `‖(1/H) Σ θ_i − s‖`.
    pub constraint_violation: f64,
    /// `Σ_i ‖λ_i − λ̄‖²`.
    pub dual_consensus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub gamma: f64,
    /// Honest allocations, ordered as [`Trace::honest_ids`].
    pub theta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config_digest: String,
    pub reference: ReferenceSolution,
    pub honest_ids: Vec<usize>,
    pub warnings: Vec<String>,
    pub records: Vec<IterationRecord>,
}

pub const CSV_HEADER: &str = "k,gamma,primal_opt,dual_opt,cost_opt,constraint_violation,dual_consensus";

impl Trace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("a trace always holds the k = 0 record")
    }

    /// One row per iteration; floats use the shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.k, r.gamma, m.primal_opt, m.dual_opt, m.cost_opt, m.constraint_violation, m.dual_consensus
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self).map_err(std::io::Error::other)
    }
}

/// Runs the plain averaging method. Requires no Byzantine agents and a doubly
/// stochastic weight matrix.
pub fn run_attack_free(config: &RunConfig) -> Result<Trace> {
    if config.problem.num_byzantine() > 0 {
        return Err(Error::param(
            "byzantine",
            format!(
                "attack-free run given {} Byzantine agents",
                config.problem.num_byzantine()
            ),
        ));
    }
    if !config.weights.is_doubly_stochastic() {
        return Err(Error::param(
            "weights",
            "attack-free run needs a doubly stochastic matrix",
        ));
    }
    simulate(config, &AggregatorConfig::mean())
}

/// Runs the resilient method with `config.aggregator` at every honest agent.
pub fn run_resilient(config: &RunConfig) -> Result<Trace> {
    simulate(config, &config.aggregator)
}

fn simulate(config: &RunConfig, aggregator: &AggregatorConfig) -> Result<Trace> {
    config.validate()?;
    let problem = &config.problem;
    let topo = &config.topology;
    let w = &config.weights;
    let j_total = problem.num_agents();
    let byz = problem.byzantine();
    let honest = problem.honest_ids();
    let reference = solve_reference(problem, Subset::Honest, 1e-15)?;

    let mut warnings = Vec::new();
    let sub = honest_subgraph(topo, byz)?;
    if !sub.topology.is_connected() {
        warnings.push("honest subgraph is disconnected".to_string());
    }

    // per-agent fixed data: rule parameters, local weights, Byzantine weight mass
    let byz_neighbors: Vec<usize> = (0..j_total)
        .map(|i| topo.neighbors(i).iter().filter(|n| byz.contains(n)).count())
        .collect();
    let local_weights: Vec<Vec<f64>> = (0..j_total)
        .map(|i| {
            std::iter::once(w.get(i, i))
                .chain(topo.neighbors(i).iter().map(|&n| w.get(i, n)))
                .collect()
        })
        .collect();
    for &i in &honest {
        let rule = aggregator.resolve(byz_neighbors[i], || 0.0);
        let need = rule.min_received();
        if topo.degree(i) < need {
            return Err(Error::Aggregation(format!(
                "agent {i} has {} neighbors but {} needs at least {need}",
                topo.degree(i),
                aggregator.rule
            )));
        }
    }

    let inv_j = 1.0 / j_total as f64;
    let target = problem.target();
    let mut lambda: Vec<Vec<f64>> = vec![config.lambda0.clone(); j_total];
    let mut records = Vec::with_capacity(config.iterations + 1);
    for k in 0..=config.iterations {
        let gamma = config.schedule.step_size(k);
        let theta = lambda
            .iter()
            .enumerate()
            .map(|(i, l)| primal_argmin(problem.agent(i), l))
            .collect::<Result<Vec<_>>>()?;
        records.push(record(k, gamma, problem, &honest, &reference, &theta, &lambda)?);
        if k == config.iterations {
            break;
        }

        let half: Vec<Vec<f64>> = lambda
            .iter()
            .zip(&theta)
            .map(|(l, t)| {
                l.iter()
                    .zip(target.iter().zip(t))
                    .map(|(l, (s, t))| l - gamma * (inv_j * s - inv_j * t))
                    .collect()
            })
            .collect();

        let mut next = Vec::with_capacity(j_total);
        for i in 0..j_total {
            let nbrs = topo.neighbors(i);
            let honest_recipient = !byz.contains(&i);
            let received: Vec<Message> = nbrs
                .iter()
                .map(|&n| {
                    let value = match config.attacks.get(&n) {
                        Some(attack) if honest_recipient => {
                            let forged = attack.forge(&AttackContext {
                                iteration: k,
                                recipient: i,
                                sender: n,
                                half_steps: &half,
                                byzantine: byz,
                            });
                            check_dim(problem.dim(), forged.len())?;
                            forged
                        }
                        _ => half[n].clone(),
                    };
                    Ok(Message::new(n, value))
                })
                .collect::<Result<_>>()?;
            let input = AggregationInput::new(&half[i], &received);
            let weights = &local_weights[i];
            let rule = if honest_recipient {
                aggregator.resolve(byz_neighbors[i], || {
                    let byz_mass: f64 = nbrs
                        .iter()
                        .zip(&weights[1..])
                        .filter(|(n, _)| byz.contains(n))
                        .map(|(_, w)| w)
                        .sum();
                    adaptive_clip_radius(
                        &half[i],
                        nbrs.iter()
                            .zip(&weights[1..])
                            .filter(|(n, _)| !byz.contains(n))
                            .map(|(&n, &w)| (half[n].as_slice(), w)),
                        byz_mass,
                    )
                })
            } else {
                ResolvedRule::Mean
            };
            let mut out = aggregate(rule, &input, weights)?;
            if config.nonneg_dual && honest_recipient {
                out.iter_mut().for_each(|x| *x = x.max(0.0));
            }
            next.push(out);
        }
        lambda = next;
    }

    Ok(Trace {
        config_digest: config.digest(),
        reference,
        honest_ids: honest,
        warnings,
        records,
    })
}

fn record(
    k: usize,
    gamma: f64,
    problem: &ProblemInstance,
    honest: &[usize],
    reference: &ReferenceSolution,
    theta: &[Vec<f64>],
    lambda: &[Vec<f64>],
) -> Result<IterationRecord> {
    let dim = problem.dim();
    let h = honest.len() as f64;
    let mut primal_sq = 0.0;
    let mut dual_opt = 0.0;
    let mut cost = 0.0;
    let mut sums = vec![0.0; dim];
    let mut mean_lambda = vec![0.0; dim];
    for (slot, &i) in honest.iter().enumerate() {
        primal_sq += dist_sq(&theta[i], &reference.theta_star[slot]);
        dual_opt += dist_sq(&lambda[i], &reference.lambda_star).sqrt();
        cost += problem.agent(i).cost.value(&theta[i])?;
        for d in 0..dim {
            sums[d] += theta[i][d];
            mean_lambda[d] += lambda[i][d];
        }
    }
    mean_lambda.iter_mut().for_each(|x| *x /= h);
    let constraint_violation = sums
        .iter()
        .zip(problem.target())
        .map(|(s, t)| (s / h - t).powi(2))
        .sum::<f64>()
        .sqrt();
    let dual_consensus = honest.iter().map(|&i| dist_sq(&lambda[i], &mean_lambda)).sum();
    let metrics = Metrics {
        primal_opt: primal_sq.sqrt(),
        dual_opt,
        cost_opt: (cost / h - reference.mean_cost(problem)?).abs(),
        constraint_violation,
        dual_consensus,
    };
    Ok(IterationRecord {
        k,
        gamma,
        theta: honest.iter().map(|&i| theta[i].clone()).collect(),
        lambda: honest.iter().map(|&i| lambda[i].clone()).collect(),
        metrics,
    })
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Byzantine neighbor count of every agent.
pub fn byzantine_neighbor_counts(topology: &Topology, byzantine: &BTreeSet<usize>) -> Vec<usize> {
    (0..topology.num_nodes())
        .map(|i| topology.neighbors(i).iter().filter(|n| byzantine.contains(n)).count())
        .collect()
}
