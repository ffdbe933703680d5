//! Agent cost functions, local constraint sets and the resource-sharing problem.
//!
//! Every agent holds a separable quadratic cost over a box. The only two maps the
//! algorithms need from an agent are the minimizer of `θᵀλ + f(θ)` over its box and
//! the local dual gradient built from it; both are closed form here.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A strongly convex local cost restricted to a box.
///
/// Only [`QuadraticCost`] implements this today.
pub trait LocalCost {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    /// Minimizer of `θᵀλ + f(θ)` over `bounds`.
    fn linear_argmin(&self, lambda: &[f64], bounds: &BoxConstraint) -> Result<Vec<f64>>;
}

/// `f(θ) = Σ_d a_d (θ_d − b_d)² + c0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    curvature: Vec<f64>,
    center: Vec<f64>,
    offset: f64,
}

impl QuadraticCost {
    pub fn new(curvature: Vec<f64>, center: Vec<f64>, offset: f64) -> Result<Self> {
        check_dim(curvature.len(), center.len())?;
        if curvature.is_empty() {
            return Err(Error::param("curvature", "cost must have at least one dimension"));
        }
        if let Some(a) = curvature.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::param(
                "curvature",
                format!("every coefficient must be finite and > 0, got {a}"),
            ));
        }
        if center.iter().any(|b| !b.is_finite()) || !offset.is_finite() {
            return Err(Error::param("center", "coefficients must be finite"));
        }
        Ok(Self {
            curvature,
            center,
            offset,
        })
    }

    /// Builds the cost `Σ_d η_d θ_d² + ζ_d θ_d + ξ` by completing the square.
    pub fn from_polynomial(eta: &[f64], zeta: &[f64], xi: f64) -> Result<Self> {
        check_dim(eta.len(), zeta.len())?;
        if let Some(e) = eta.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(Error::param("eta", format!("must be finite and > 0, got {e}")));
        }
        let center = eta.iter().zip(zeta).map(|(e, z)| -z / (2.0 * e)).collect();
        let offset = xi - eta.iter().zip(zeta).map(|(e, z)| z * z / (4.0 * e)).sum::<f64>();
        Self::new(eta.to_vec(), center, offset)
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

impl LocalCost for QuadraticCost {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let quad: f64 = self
            .curvature
            .iter()
            .zip(&self.center)
            .zip(theta)
            .map(|((a, b), t)| a * (t - b) * (t - b))
            .sum();
        Ok(quad + self.offset)
    }

    fn linear_argmin(&self, lambda: &[f64], bounds: &BoxConstraint) -> Result<Vec<f64>> {
        check_dim(self.dim(), lambda.len())?;
        check_dim(self.dim(), bounds.dim())?;
        Ok((0..self.dim())
            .map(|d| {
                let free = self.center[d] - lambda[d] / (2.0 * self.curvature[d]);
                free.clamp(bounds.lo[d], bounds.hi[d])
            })
            .collect())
    }
}

/// Per-dimension interval constraint `lo ≤ θ ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len(), hi.len())?;
        for (d, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::param("box", format!("bounds must be finite in dimension {d}")));
            }
            if l > h {
                return Err(Error::param("box", format!("lo {l} > hi {h} in dimension {d}")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| l <= t && t <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub cost: QuadraticCost,
    pub bounds: BoxConstraint,
}

impl AgentSpec {
    pub fn new(id: usize, cost: QuadraticCost, bounds: BoxConstraint) -> Result<Self> {
        check_dim(cost.dim(), bounds.dim())?;
        Ok(Self { id, cost, bounds })
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }
}

/// Agents, the shared per-agent resource target `s` and the Byzantine partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance {
    agents: Vec<AgentSpec>,
    target: Vec<f64>,
    byzantine: BTreeSet<usize>,
}

impl ProblemInstance {
    /// Validates ids, dimensions, the honest count and the honest Slater condition.
    pub fn new(agents: Vec<AgentSpec>, target: Vec<f64>, byzantine: BTreeSet<usize>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::param("agents", "at least one agent is required"));
        }
        for (i, agent) in agents.iter().enumerate() {
            if agent.id != i {
                return Err(Error::param(
                    "agents",
                    format!("agent at position {i} has id {}", agent.id),
                ));
            }
            check_dim(target.len(), agent.dim())?;
        }
        if target.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("target", "must be finite"));
        }
        if let Some(b) = byzantine.iter().find(|&&b| b >= agents.len()) {
            return Err(Error::param(
                "byzantine",
                format!("id {b} out of range 0..{}", agents.len()),
            ));
        }
        if byzantine.len() >= agents.len() {
            return Err(Error::param("byzantine", "at least one honest agent is required"));
        }
        let instance = Self {
            agents,
            target,
            byzantine,
        };
        instance.check_slater(&instance.honest_ids())?;
        Ok(instance)
    }

    /// Same agents and target with a different Byzantine set.
    pub fn with_byzantine(&self, byzantine: BTreeSet<usize>) -> Result<Self> {
        Self::new(self.agents.clone(), self.target.clone(), byzantine)
    }

    /// Per dimension, mean lower bound ≤ s_d ≤ mean upper bound over `ids`.
    pub fn check_slater(&self, ids: &[usize]) -> Result<()> {
        let n = ids.len() as f64;
        for d in 0..self.dim() {
            let lo = ids.iter().map(|&i| self.agents[i].bounds.lo[d]).sum::<f64>() / n;
            let hi = ids.iter().map(|&i| self.agents[i].bounds.hi[d]).sum::<f64>() / n;
            let s = self.target[d];
            if s < lo || s > hi {
                return Err(Error::Infeasible(format!(
                    "target {s} outside [{lo}, {hi}] attainable by the average allocation in dimension {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, id: usize) -> &AgentSpec {
        &self.agents[id]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn byzantine(&self) -> &BTreeSet<usize> {
        &self.byzantine
    }

    pub fn is_byzantine(&self, id: usize) -> bool {
        self.byzantine.contains(&id)
    }

    pub fn honest_ids(&self) -> Vec<usize> {
        (0..self.agents.len()).filter(|i| !self.byzantine.contains(i)).collect()
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_honest(&self) -> usize {
        self.agents.len() - self.byzantine.len()
    }

    pub fn num_byzantine(&self) -> usize {
        self.byzantine.len()
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }
}

pub fn eval_cost(agent: &AgentSpec, theta: &[f64]) -> Result<f64> {
    agent.cost.value(theta)
}

/// `argmin_{θ ∈ C_i} θᵀλ + f_i(θ)`, i.e. `clip(b_d − λ_d / 2a_d)` per dimension.
pub fn primal_argmin(agent: &AgentSpec, lambda: &[f64]) -> Result<Vec<f64>> {
    agent.cost.linear_argmin(lambda, &agent.bounds)
}

/// Local dual gradient `(s − argmin_i(λ)) / divisor`.
///
/// The algorithms use `divisor = J`; the honest-population dual uses `divisor = H`.
pub fn dual_gradient(agent: &AgentSpec, lambda: &[f64], target: &[f64], divisor: usize) -> Result<Vec<f64>> {
    check_dim(agent.dim(), target.len())?;
    if divisor == 0 {
        return Err(Error::param("divisor", "must be ≥ 1"));
    }
    let theta = primal_argmin(agent, lambda)?;
    let n = divisor as f64;
    Ok(target.iter().zip(&theta).map(|(s, t)| (s - t) / n).collect())
}

/// Local dual function `(F*_i(−λ) + λᵀs) / divisor`, with the conjugate evaluated at the argmin.
pub fn local_dual_value(agent: &AgentSpec, lambda: &[f64], target: &[f64], divisor: usize) -> Result<f64> {
    check_dim(agent.dim(), target.len())?;
    let theta = primal_argmin(agent, lambda)?;
    let inner = dot(lambda, &theta) + agent.cost.value(&theta)?;
    Ok((-inner + dot(lambda, target)) / divisor as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strong convexity and smoothness moduli shared by all costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityConstants {
    pub strong_convexity: f64,
    pub smoothness: f64,
}

/// `u_f = 2 min a`, `L_f = 2 max a` over every agent and dimension.
pub fn convexity_constants(instance: &ProblemInstance) -> ConvexityConstants {
    let (lo, hi) = instance
        .agents
        .iter()
        .flat_map(|a| a.cost.curvature.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(a), hi.max(a)));
    ConvexityConstants {
        strong_convexity: 2.0 * lo,
        smoothness: 2.0 * hi,
    }
}
