//! Exact reference solutions.
//!
//! With separable quadratic costs and box constraints the optimal price solves, in every
//! dimension independently, `Σ_i clip(b_i − λ/2a_i) = |S| s`. The left side is
//! continuous and nonincreasing in `λ`, so bisection finds the root to machine
//! precision without any iterative optimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{primal_argmin, AgentSpec, LocalCost, ProblemInstance};

/// Which agents the reference problem is posed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Honest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub agent_ids: Vec<usize>,
    /// One allocation per entry of `agent_ids`.
    pub theta_star: Vec<Vec<f64>>,
    pub lambda_star: Vec<f64>,
    /// `‖(1/|S|) Σ θ*_i − s‖`.
    pub residual: f64,
    pub iterations: usize,
    /// Set when some dimension has a whole interval of optimal prices; the midpoint
    /// is reported.
    pub non_unique: bool,
}

impl ReferenceSolution {
    /// `(1/|S|) Σ f_i(θ*_i)`.
    pub fn mean_cost(&self, instance: &ProblemInstance) -> Result<f64> {
        let mut total = 0.0;
        for (id, theta) in self.agent_ids.iter().zip(&self.theta_star) {
            total += instance.agent(*id).cost.value(theta)?;
        }
        Ok(total / self.agent_ids.len() as f64)
    }
}

const MAX_BISECTIONS: usize = 400;
const MAX_DOUBLINGS: usize = 60;

/// Solves the allocation problem over `subset` by bisection on each price coordinate.
///
/// `tol` is the relative bracket width at which bisection stops.
pub fn solve_reference(instance: &ProblemInstance, subset: Subset, tol: f64) -> Result<ReferenceSolution> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::param("tol", format!("must be finite and > 0, got {tol}")));
    }
    let ids: Vec<usize> = match subset {
        Subset::All => (0..instance.num_agents()).collect(),
        Subset::Honest => instance.honest_ids(),
    };
    let agents: Vec<&AgentSpec> = ids.iter().map(|&i| instance.agent(i)).collect();
    let dim = instance.dim();
    let target = instance.target();
    let n = agents.len() as f64;

    let mut lambda_star = Vec::with_capacity(dim);
    let mut iterations = 0;
    let mut non_unique = false;
    for d in 0..dim {
        let lo_sum: f64 = agents.iter().map(|a| a.bounds.lo()[d]).sum();
        let hi_sum: f64 = agents.iter().map(|a| a.bounds.hi()[d]).sum();
        let need = n * target[d];
        if need < lo_sum || need > hi_sum {
            return Err(Error::Infeasible(format!(
                "dimension {d}: total demand {need} outside [{lo_sum}, {hi_sum}]"
            )));
        }
        let alloc = |lam: f64| -> f64 {
            agents
                .iter()
                .map(|a| {
                    let free = a.cost.center()[d] - lam / (2.0 * a.cost.curvature()[d]);
                    free.clamp(a.bounds.lo()[d], a.bounds.hi()[d])
                })
                .sum::<f64>()
        };
        let slack = 1e-13 * (lo_sum.abs() + hi_sum.abs() + need.abs()).max(1.0);
        let excess = |lam: f64| -> f64 {
            let g = alloc(lam) - need;
            if g.abs() <= slack {
                0.0
            } else {
                g
            }
        };

        let mut radius = agents
            .iter()
            .map(|a| {
                2.0 * a.cost.curvature()[d]
                    * (a.cost.center()[d].abs() + a.bounds.hi()[d].abs() + a.bounds.lo()[d].abs() + target[d].abs())
            })
            .fold(1.0, f64::max);
        let mut doublings = 0;
        while !(excess(-radius) >= 0.0 && excess(radius) <= 0.0) {
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::Solver(format!("dimension {d}: could not bracket the price")));
            }
            radius *= 2.0;
        }

        // left end: last price with positive excess; right end: first with negative
        let (left, it_l) = bisect(-radius, radius, |x| excess(x) > 0.0, tol);
        let (right, it_r) = bisect(-radius, radius, |x| excess(x) >= 0.0, tol);
        iterations += it_l + it_r + doublings;
        let mid = 0.5 * (left + right);
        // a flat stretch of optimal prices exists only where no agent is interior
        let flat = agents.iter().all(|a| {
            let free = a.cost.center()[d] - mid / (2.0 * a.cost.curvature()[d]);
            free < a.bounds.lo()[d] || free > a.bounds.hi()[d]
        });
        if flat && right > left {
            non_unique = true;
        }
        lambda_star.push(mid);
    }

    let theta_star = agents
        .iter()
        .map(|a| primal_argmin(a, &lambda_star))
        .collect::<Result<Vec<_>>>()?;
    let residual = (0..dim)
        .map(|d| {
            let mean = theta_star.iter().map(|t| t[d]).sum::<f64>() / n;
            (mean - target[d]).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    Ok(ReferenceSolution {
        agent_ids: ids,
        theta_star,
        lambda_star,
        residual,
        iterations,
        non_unique,
    })
}

/// Boundary of a monotone predicate that is true on the left and false on the right.
fn bisect(mut lo: f64, mut hi: f64, left_side: impl Fn(f64) -> bool, tol: f64) -> (f64, usize) {
    let mut it = 0;
    while it < MAX_BISECTIONS && hi - lo > tol * lo.abs().max(hi.abs()).max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if left_side(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    (0.5 * (lo + hi), it)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `‖(1/|S|) Σ θ_i − s‖`.
    pub feasibility: f64,
    /// Largest `‖θ_i − argmin_i(λ)‖`.
    pub argmin_gap: f64,
    /// Largest violation of the box-constrained first-order conditions.
    pub stationarity: f64,
    /// Largest distance outside a box.
    pub box_violation: f64,
}

impl KktReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.feasibility <= tol && self.argmin_gap <= tol && self.stationarity <= tol && self.box_violation <= tol
    }
}

/// Optimality residuals of `solution` against `instance`.
pub fn check_kkt(instance: &ProblemInstance, solution: &ReferenceSolution) -> Result<KktReport> {
    let dim = instance.dim();
    let n = solution.agent_ids.len() as f64;
    let lambda = &solution.lambda_star;
    let mut sums = vec![0.0; dim];
    let mut argmin_gap: f64 = 0.0;
    let mut stationarity: f64 = 0.0;
    let mut box_violation: f64 = 0.0;
    for (&id, theta) in solution.agent_ids.iter().zip(&solution.theta_star) {
        let agent = instance.agent(id);
        let best = primal_argmin(agent, lambda)?;
        let gap = best.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        argmin_gap = argmin_gap.max(gap);
        for d in 0..dim {
            let (lo, hi) = (agent.bounds.lo()[d], agent.bounds.hi()[d]);
            let t = theta[d];
            sums[d] += t;
            box_violation = box_violation.max(lo - t).max(t - hi);
            let grad = 2.0 * agent.cost.curvature()[d] * (t - agent.cost.center()[d]) + lambda[d];
            let scale = 1.0 + lambda[d].abs();
            let v = if t <= lo {
                (-grad).max(0.0)
            } else if t >= hi {
                grad.max(0.0)
            } else {
                grad.abs()
            };
            stationarity = stationarity.max(v / scale);
        }
    }
    let feasibility = sums
        .iter()
        .zip(instance.target())
        .map(|(s, t)| (s / n - t).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(KktReport {
        feasibility,
        argmin_gap,
        stationarity,
        box_violation,
    })
}
