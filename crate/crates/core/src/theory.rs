//! Constants, asymptotic error radii and step-size admissibility checks from the
//! convergence analysis, so that simulated traces can be compared against theory.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::StepSchedule;
use crate::error::{Error, Result};
use crate::graph::{chi_squared, kappa, KappaVariant, Topology, WeightMatrix};
use crate::problem::{convexity_constants, primal_argmin, ProblemInstance};
use crate::rng::mix_seed;

/// `H u L / (u + L)`.
pub fn alpha(honest: usize, u_f: f64, l_f: f64) -> f64 {
    honest as f64 * u_f * l_f / (u_f + l_f)
}

/// `1 / (H (u + L))`.
pub fn beta(honest: usize, u_f: f64, l_f: f64) -> f64 {
    1.0 / (honest as f64 * (u_f + l_f))
}

/// `1 − κ − 8ρ√H`.
pub fn epsilon(kappa: f64, rho: f64, honest: usize) -> f64 {
    1.0 - kappa - 8.0 * rho * (honest as f64).sqrt()
}

/// `(1 − κ) / (8√H)`: the contraction constant must stay strictly below this.
pub fn rho_threshold(kappa: f64, honest: usize) -> f64 {
    (1.0 - kappa) / (8.0 * (honest as f64).sqrt())
}

fn radius_tail(eps: f64, rho: f64, honest: usize, chi_sq: f64) -> f64 {
    (1.0 + 9.0 / eps.powi(3)).sqrt() * (4.0 * rho * rho * honest as f64 + chi_sq).sqrt()
}

/// `sqrt(192 δ² H² / β²) · sqrt(1 + 9/ε³) · sqrt(4ρ²H + χ²)`; `+∞` when `ε ≤ 0`.
pub fn theorem2_dual_radius(delta: f64, honest: usize, beta: f64, eps: f64, rho: f64, chi_sq: f64) -> f64 {
    if eps <= 0.0 {
        return f64::INFINITY;
    }
    let h = honest as f64;
    (192.0 * delta * delta * h * h / (beta * beta)).sqrt() * radius_tail(eps, rho, honest, chi_sq)
}

/// `(1/u) · sqrt(192 δ² / β²) · sqrt(1 + 9/ε³) · sqrt(4ρ²H + χ²)`; `+∞` when `ε ≤ 0`.
pub fn theorem2_primal_radius(delta: f64, u_f: f64, honest: usize, beta: f64, eps: f64, rho: f64, chi_sq: f64) -> f64 {
    if eps <= 0.0 {
        return f64::INFINITY;
    }
    (192.0 * delta * delta / (beta * beta)).sqrt() * radius_tail(eps, rho, honest, chi_sq) / u_f
}

/// The primal radius as it comes out at the end of the derivation:
/// `(1/u) · sqrt(192 δ²/β · (1 + 3/ε³) · (4ρ²H + χ²))`.
pub fn derivation_primal_radius(
    delta: f64,
    u_f: f64,
    honest: usize,
    beta: f64,
    eps: f64,
    rho: f64,
    chi_sq: f64,
) -> f64 {
    if eps <= 0.0 {
        return f64::INFINITY;
    }
    let spread = 4.0 * rho * rho * honest as f64 + chi_sq;
    (192.0 * delta * delta / beta * (1.0 + 3.0 / eps.powi(3)) * spread).sqrt() / u_f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeltaMode {
    /// Worst case over box corners; a valid upper bound.
    Analytic,
    /// Largest gradient deviation seen at random prices; a lower estimate.
    Sampled { samples: usize, seed: u64 },
}

/// Bound on `max_i ‖∇g_i(λ) − (1/H) Σ_j ∇g_j(λ)‖` over honest agents, with `∇g_i = (s − θ_i(λ))/H`.
pub fn delta_bound(instance: &ProblemInstance, mode: DeltaMode) -> f64 {
    let honest = instance.honest_ids();
    let h = honest.len() as f64;
    let dim = instance.dim();
    match mode {
        DeltaMode::Analytic => {
            let mut worst: f64 = 0.0;
            for (n, &i) in honest.iter().enumerate() {
                for &j in &honest[n + 1..] {
                    let (a, b) = (&instance.agent(i).bounds, &instance.agent(j).bounds);
                    let d2: f64 = (0..dim)
                        .map(|d| {
                            let far = (a.hi()[d] - b.lo()[d]).abs().max((b.hi()[d] - a.lo()[d]).abs());
                            far * far
                        })
                        .sum();
                    worst = worst.max(d2.sqrt());
                }
            }
            worst / h
        }
        DeltaMode::Sampled { samples, seed } => {
            // prices spanning every agent's breakpoints, with a margin on each side
            let (lo, hi): (Vec<f64>, Vec<f64>) = (0..dim)
                .map(|d| {
                    honest.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let a = instance.agent(i);
                        let c = 2.0 * a.cost.curvature()[d];
                        let b = a.cost.center()[d];
                        (lo.min(c * (b - a.bounds.hi()[d])), hi.max(c * (b - a.bounds.lo()[d])))
                    })
                })
                .map(|(lo, hi)| {
                    let pad = 0.1 * (hi - lo) + 1.0;
                    (lo - pad, hi + pad)
                })
                .unzip();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5eed]));
            let mut worst: f64 = 0.0;
            for _ in 0..samples {
                let lambda: Vec<f64> = (0..dim).map(|d| rng.random_range(lo[d]..=hi[d])).collect();
                let thetas: Vec<Vec<f64>> = honest
                    .iter()
                    .map(|&i| primal_argmin(instance.agent(i), &lambda).expect("dimensions validated"))
                    .collect();
                let mean: Vec<f64> = (0..dim).map(|d| thetas.iter().map(|t| t[d]).sum::<f64>() / h).collect();
                for t in &thetas {
                    let dev = t.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>().sqrt() / h;
                    worst = worst.max(dev);
                }
            }
            worst
        }
    }
}

/// Which convergence result a step-size check refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    /// Attack-free method, constants over all `J` agents.
    Theorem1,
    /// Resilient method, constants over the `H` honest agents.
    Theorem2,
}

/// Problem and graph constants the step-size conditions depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub u_f: f64,
    pub l_f: f64,
    pub honest: usize,
    pub total: usize,
    /// `κ` for the resilient method, `κ̃` for the attack-free one.
    pub kappa: f64,
    /// Needed by the resilient method only.
    pub rho: f64,
}

impl StepConstants {
    /// `ε` for the resilient method, `σ = 1 − κ̃` for the attack-free one.
    pub fn margin(&self, which: Which) -> f64 {
        match which {
            Which::Theorem1 => 1.0 - self.kappa,
            Which::Theorem2 => epsilon(self.kappa, self.rho, self.honest),
        }
    }

    fn alpha_beta(&self, which: Which) -> (f64, f64) {
        match which {
            Which::Theorem1 => (
                alpha(self.total, self.u_f, self.l_f),
                beta(self.total, self.u_f, self.l_f),
            ),
            Which::Theorem2 => (
                alpha(self.honest, self.u_f, self.l_f),
                beta(self.honest, self.u_f, self.l_f),
            ),
        }
    }

    /// Stated lower bound on `k₀` for the theorem schedule.
    pub fn k0_floor(&self, which: Which) -> f64 {
        let (a, b) = self.alpha_beta(which);
        let m = self.margin(which);
        let u = self.u_f;
        let ratio = 1.0 / ((2.0 / (1.0 + (1.0 - m * m))).sqrt() - 1.0);
        match which {
            Which::Theorem1 => {
                let j = self.total as f64;
                let second = (72.0 * (3.0 - m) / ((2.0 - m) * m * m * u * u * j * j * b * b)).sqrt();
                (1.0 / (a * b)).max(second).max(ratio)
            }
            Which::Theorem2 => {
                let h = self.honest as f64;
                let second = (216.0 * (3.0 - m) / ((2.0 - m) * m * u * u * h * h * b * b)).sqrt();
                let fourth = 8.0 * 3f64.sqrt() / (u * h * b);
                (2.0 / (a * b)).max(second).max(ratio).max(fourth)
            }
        }
    }

    /// Theorem schedule with the given offset.
    pub fn schedule(&self, which: Which, k0: f64) -> StepSchedule {
        let (_, b) = self.alpha_beta(which);
        match which {
            Which::Theorem1 => StepSchedule::theorem1(b, k0),
            Which::Theorem2 => StepSchedule::theorem2(b, self.honest, self.total, k0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVerdict {
    pub name: String,
    pub passed: bool,
    pub first_violation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub which: Which,
    pub margin: f64,
    pub k0_floor: f64,
    /// `Some` for theorem schedules: whether the offset meets [`StepConstants::k0_floor`].
    pub k0_meets_floor: Option<bool>,
    pub conditions: Vec<ConditionVerdict>,
}

impl Admissibility {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionVerdict> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Checks every step-size condition for `k = 0..=iterations`.
///
/// A nonpositive margin fails every margin-dependent condition at `k = 0`.
pub fn stepsize_admissible(
    schedule: &StepSchedule,
    constants: &StepConstants,
    which: Which,
    iterations: usize,
) -> Admissibility {
    let (a, _) = constants.alpha_beta(which);
    let m = constants.margin(which);
    let u = constants.u_f;
    let j = constants.total as f64;
    let h = constants.honest as f64;
    let ratio_cap = 2.0 / (1.0 + (1.0 - m * m));
    let gamma = |k: usize| schedule.step_size(k);
    // equality cases must survive rounding
    let le = |lhs: f64, rhs: f64| lhs <= rhs + 1e-12 * rhs.abs();

    type Check<'a> = Box<dyn Fn(usize) -> bool + 'a>;
    let mut checks: Vec<(&str, Check)> = Vec::new();
    match which {
        Which::Theorem1 => {
            checks.push(("descent", Box::new(move |k| le(gamma(k), 2.0 * a))));
            checks.push((
                "consensus",
                Box::new(move |k| {
                    m > 0.0
                        && le(
                            6.0 * gamma(k).powi(2) / (u * u * j * j),
                            (2.0 - m) * m * m / (3.0 * (3.0 - m)),
                        )
                }),
            ));
        }
        Which::Theorem2 => {
            checks.push(("descent", Box::new(move |k| le(gamma(k) * h / j, 2.0 * a))));
            checks.push((
                "consensus",
                Box::new(move |k| {
                    m > 0.0
                        && le(
                            18.0 * gamma(k).powi(2) / (m * u * u * j * j),
                            (2.0 - m) * m * m / (3.0 * (3.0 - m)),
                        )
                }),
            ));
        }
    }
    checks.push((
        "ratio",
        Box::new(move |k| {
            let r = (gamma(k) / gamma(k + 1)).powi(2);
            m > 0.0 && le(1.0, r) && le(r, ratio_cap)
        }),
    ));
    if which == Which::Theorem2 {
        checks.push((
            "magnitude",
            Box::new(move |k| le(gamma(k), u * j / (2.0 * 3f64.sqrt()))),
        ));
    }

    let conditions = checks
        .into_iter()
        .map(|(name, check)| {
            let first_violation = (0..=iterations).find(|&k| !check(k));
            ConditionVerdict {
                name: name.to_string(),
                passed: first_violation.is_none(),
                first_violation,
            }
        })
        .collect();
    let k0_floor = constants.k0_floor(which);
    Admissibility {
        which,
        margin: m,
        k0_floor,
        k0_meets_floor: match schedule {
            StepSchedule::Theorem { offset, .. } => Some(le(k0_floor, *offset)),
            _ => None,
        },
        conditions,
    }
}

/// Honest rows of `w` restricted to honest columns and renormalized: the mixing matrix
/// of plain averaging over honest senders only.
pub fn honest_restricted_weights(w: &WeightMatrix, byzantine: &BTreeSet<usize>) -> Result<WeightMatrix> {
    let honest: Vec<usize> = (0..w.size()).filter(|i| !byzantine.contains(i)).collect();
    let rows = honest
        .iter()
        .map(|&i| {
            let row: Vec<f64> = honest.iter().map(|&j| w.get(i, j)).collect();
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Graph(format!("agent {i} puts no weight on honest agents")));
            }
            Ok(row.into_iter().map(|x| x / sum).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    WeightMatrix::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub u_f: f64,
    pub l_f: f64,
    pub honest: usize,
    pub total: usize,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// `None` when the full weight matrix is not doubly stochastic.
    pub kappa_tilde: Option<f64>,
    pub chi_sq: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub rho_threshold: f64,
    pub rho_condition_ok: bool,
    pub dual_radius: f64,
    pub primal_radius: f64,
    pub primal_radius_derivation: f64,
    pub stepsize_theorem2: Admissibility,
    pub stepsize_theorem1: Option<Admissibility>,
}

/// Inputs for [`theory_report`] beyond the problem itself.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub topology: &'a Topology,
    pub weights: &'a WeightMatrix,
    /// Virtual weights over honest agents; defaults to [`honest_restricted_weights`].
    pub virtual_weights: Option<&'a WeightMatrix>,
    pub rho: f64,
    pub delta_mode: DeltaMode,
    pub schedule: StepSchedule,
    pub iterations: usize,
}

pub fn theory_report(instance: &ProblemInstance, inputs: &ReportInputs) -> Result<TheoryReport> {
    if !(inputs.rho.is_finite() && inputs.rho >= 0.0) {
        return Err(Error::param(
            "rho",
            format!("must be finite and ≥ 0, got {}", inputs.rho),
        ));
    }
    if inputs.topology.num_nodes() != instance.num_agents() || inputs.weights.size() != instance.num_agents() {
        return Err(Error::param("weights", "size differs from the number of agents"));
    }
    let owned;
    let e = match inputs.virtual_weights {
        Some(e) => e,
        None => {
            owned = honest_restricted_weights(inputs.weights, instance.byzantine())?;
            &owned
        }
    };
    let h = instance.num_honest();
    if e.size() != h {
        return Err(Error::param(
            "virtual weights",
            format!("expected {h}×{h}, got {0}×{0}", e.size()),
        ));
    }
    let c = convexity_constants(instance);
    let (u, l) = (c.strong_convexity, c.smoothness);
    let kappa_h = kappa(e, KappaVariant::Honest)?;
    let kappa_tilde = if inputs.weights.is_doubly_stochastic() {
        Some(kappa(inputs.weights, KappaVariant::Full)?)
    } else {
        None
    };
    let chi_sq = chi_squared(e);
    let rho = inputs.rho;
    let eps = epsilon(kappa_h, rho, h);
    let b = beta(h, u, l);
    let delta = delta_bound(instance, inputs.delta_mode);
    let constants = StepConstants {
        u_f: u,
        l_f: l,
        honest: h,
        total: instance.num_agents(),
        kappa: kappa_h,
        rho,
    };
    let stepsize_theorem1 = kappa_tilde.map(|kt| {
        stepsize_admissible(
            &inputs.schedule,
            &StepConstants { kappa: kt, ..constants },
            Which::Theorem1,
            inputs.iterations,
        )
    });
    Ok(TheoryReport {
        u_f: u,
        l_f: l,
        honest: h,
        total: instance.num_agents(),
        alpha: alpha(h, u, l),
        beta: b,
        kappa: kappa_h,
        kappa_tilde,
        chi_sq,
        rho,
        epsilon: eps,
        delta,
        rho_threshold: rho_threshold(kappa_h, h),
        rho_condition_ok: eps > 0.0,
        dual_radius: theorem2_dual_radius(delta, h, b, eps, rho, chi_sq),
        primal_radius: theorem2_primal_radius(delta, u, h, b, eps, rho, chi_sq),
        primal_radius_derivation: derivation_primal_radius(delta, u, h, b, eps, rho, chi_sq),
        stepsize_theorem2: stepsize_admissible(&inputs.schedule, &constants, Which::Theorem2, inputs.iterations),
        stepsize_theorem1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{metropolis_weights, random_regular};
    use crate::problem::{AgentSpec, BoxConstraint, QuadraticCost};
    use proptest::prelude::*;

    fn agent(id: usize, a: f64, b: f64, lo: f64, hi: f64) -> AgentSpec {
        AgentSpec::new(
            id,
            QuadraticCost::new(vec![a], vec![b], 0.0).unwrap(),
            BoxConstraint::new(vec![lo], vec![hi]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn radius_examples() {
        assert_eq!(theorem2_dual_radius(3.0, 10, 0.1, 0.5, 0.0, 0.0), 0.0);
        let r = theorem2_dual_radius(1.0, 1, 1.0, 1.0, 0.0, 1.0);
        assert!((r - 1920f64.sqrt()).abs() < 1e-12);
        let p = theorem2_primal_radius(1.0, 2.0, 1, 1.0, 1.0, 0.0, 1.0);
        assert!((p - 0.5 * 1920f64.sqrt()).abs() < 1e-12);
        assert_eq!(theorem2_dual_radius(1.0, 1, 1.0, 0.0, 0.0, 1.0), f64::INFINITY);
        assert_eq!(theorem2_primal_radius(1.0, 1.0, 1, 1.0, -0.2, 0.0, 1.0), f64::INFINITY);
    }

    #[test]
    fn rho_condition_matches_epsilon_sign() {
        let (kappa, h) = (0.3, 16);
        let t = rho_threshold(kappa, h);
        assert!(epsilon(kappa, 0.99 * t, h) > 0.0);
        assert!(epsilon(kappa, 1.01 * t, h) < 0.0);
    }

    #[test]
    fn delta_examples() {
        let two = ProblemInstance::new(
            vec![agent(0, 1.0, 0.0, 0.0, 100.0), agent(1, 2.0, 5.0, 0.0, 100.0)],
            vec![50.0],
            BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(delta_bound(&two, DeltaMode::Analytic), 50.0);
        let point = ProblemInstance::new(
            vec![agent(0, 1.0, 0.0, 3.0, 3.0), agent(1, 2.0, 9.0, 3.0, 3.0)],
            vec![3.0],
            BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(delta_bound(&point, DeltaMode::Analytic), 0.0);
        assert_eq!(delta_bound(&point, DeltaMode::Sampled { samples: 100, seed: 1 }), 0.0);
        let single = ProblemInstance::new(vec![agent(0, 1.0, 0.0, 0.0, 1.0)], vec![0.5], BTreeSet::new()).unwrap();
        assert_eq!(delta_bound(&single, DeltaMode::Analytic), 0.0);
    }

    fn constants() -> StepConstants {
        StepConstants {
            u_f: 2.0,
            l_f: 4.0,
            honest: 94,
            total: 100,
            kappa: 0.4,
            rho: 0.0005,
        }
    }

    #[test]
    fn theorem2_floor_satisfies_its_own_side_conditions() {
        let c = constants();
        let k0 = c.k0_floor(Which::Theorem2);
        let report = stepsize_admissible(&c.schedule(Which::Theorem2, k0), &c, Which::Theorem2, 5000);
        assert_eq!(report.k0_meets_floor, Some(true));
        for name in ["descent", "ratio", "magnitude"] {
            assert!(report.condition(name).unwrap().passed, "{name}: {report:?}");
        }
        // the consensus condition needs k₀² ≥ 864(3−ε)/((2−ε)ε³u²H²β²), which the floor does not ensure
        let m = c.margin(Which::Theorem2);
        let b = beta(c.honest, c.u_f, c.l_f);
        let h = c.honest as f64;
        let needed = (864.0 * (3.0 - m) / ((2.0 - m) * m.powi(3) * c.u_f.powi(2) * h * h * b * b)).sqrt();
        let ok = stepsize_admissible(&c.schedule(Which::Theorem2, needed.max(k0)), &c, Which::Theorem2, 5000);
        assert!(ok.all_passed(), "{ok:?}");
    }

    #[test]
    fn theorem1_floor_passes_everything() {
        let c = StepConstants {
            honest: 100,
            ..constants()
        };
        let k0 = c.k0_floor(Which::Theorem1);
        let report = stepsize_admissible(&c.schedule(Which::Theorem1, k0), &c, Which::Theorem1, 5000);
        assert!(report.all_passed(), "{report:?}");
        let early = stepsize_admissible(&c.schedule(Which::Theorem1, 0.5 * k0), &c, Which::Theorem1, 10);
        assert!(!early.all_passed());
        assert_eq!(early.k0_meets_floor, Some(false));
    }

    #[test]
    fn power_and_constant_ratio_condition() {
        let c = constants();
        let p = stepsize_admissible(&StepSchedule::power(0.1), &c, Which::Theorem2, 100);
        let ratio = p.condition("ratio").unwrap();
        // (k+2)/(k+1) to the power 0.2 exceeds the cap only for the first few k
        assert!(ratio.first_violation.is_none_or(|k| k < 100));
        for k in 0..100 {
            let g = StepSchedule::power(0.1);
            assert!((g.step_size(k) / g.step_size(k + 1)).powi(2) >= 1.0);
        }
        let flat = stepsize_admissible(&StepSchedule::Constant { gamma: 0.01 }, &c, Which::Theorem2, 100);
        assert!(flat.condition("ratio").unwrap().passed);
        assert_eq!(flat.k0_meets_floor, None);
        let big = stepsize_admissible(&StepSchedule::Constant { gamma: 1e6 }, &c, Which::Theorem2, 10);
        assert_eq!(big.condition("descent").unwrap().first_violation, Some(0));
    }

    #[test]
    fn negative_margin_fails_margin_conditions() {
        let c = StepConstants {
            rho: 1.0,
            ..constants()
        };
        let r = stepsize_admissible(&StepSchedule::Constant { gamma: 1e-6 }, &c, Which::Theorem2, 3);
        assert_eq!(r.condition("consensus").unwrap().first_violation, Some(0));
        assert!(r.margin < 0.0);
    }

    #[test]
    fn report_on_regular_graph() {
        let agents = (0..20)
            .map(|i| agent(i, 1.0 + 0.04 * i as f64, 2.0, 0.0, 100.0))
            .collect();
        let problem = ProblemInstance::new(agents, vec![50.0], BTreeSet::from([3])).unwrap();
        let topology = random_regular(20, 6, 2).unwrap();
        let weights = metropolis_weights(&topology).unwrap();
        let report = theory_report(
            &problem,
            &ReportInputs {
                topology: &topology,
                weights: &weights,
                virtual_weights: None,
                rho: 0.001,
                delta_mode: DeltaMode::Analytic,
                schedule: StepSchedule::power(0.1),
                iterations: 100,
            },
        )
        .unwrap();
        assert!(report.alpha * report.beta <= 0.25);
        assert!(report.kappa_tilde.unwrap() < 1.0);
        assert_eq!(report.rho_condition_ok, report.rho < report.rho_threshold);
        assert!(report.dual_radius.is_finite());
        let ratio = report.dual_radius / (report.primal_radius * report.u_f * report.honest as f64);
        assert!((ratio - 1.0).abs() < 1e-12);
        serde_json::to_string(&report).unwrap();
    }

    proptest! {
        #[test]
        fn alpha_beta_product_bounded(u in 1e-3f64..10.0, extra in 0.0f64..100.0, h in 1usize..200) {
            let l = u + extra;
            prop_assert!(alpha(h, u, l) * beta(h, u, l) <= 0.25 + 1e-15);
        }

        #[test]
        fn dual_radius_monotone(
            delta in 0.01f64..10.0, h in 1usize..50, b in 1e-3f64..1.0, eps in 0.05f64..1.0,
            rho in 0.0f64..0.1, chi in 0.0f64..1.0, bump in 1e-3f64..0.5,
        ) {
            let base = theorem2_dual_radius(delta, h, b, eps, rho, chi);
            prop_assert!(theorem2_dual_radius(delta * (1.0 + bump), h, b, eps, rho, chi) >= base);
            prop_assert!(theorem2_dual_radius(delta, h, b, eps, rho + bump, chi) >= base);
            prop_assert!(theorem2_dual_radius(delta, h, b, eps, rho, chi + bump) >= base);
            prop_assert!(theorem2_dual_radius(delta, h, b, (eps + bump).min(1.0), rho, chi) <= base);
        }

        #[test]
        fn primal_is_dual_over_u_h(
            delta in 0.01f64..10.0, h in 1usize..50, b in 1e-3f64..1.0, eps in 0.05f64..1.0,
            rho in 0.0f64..0.1, chi in 1e-3f64..1.0, u in 0.1f64..5.0,
        ) {
            let d = theorem2_dual_radius(delta, h, b, eps, rho, chi);
            let p = theorem2_primal_radius(delta, u, h, b, eps, rho, chi);
            prop_assert!((d / (u * h as f64) - p).abs() <= 1e-10 * p);
        }

        #[test]
        fn sampled_delta_below_analytic(
            specs in proptest::collection::vec((1.0f64..2.0, -10.0f64..110.0, 0.0f64..40.0, 60.0f64..100.0), 2..6),
            seed in any::<u64>(),
        ) {
            let agents = specs.iter().enumerate().map(|(i, &(a, b, lo, hi))| agent(i, a, b, lo, hi)).collect();
            let inst = ProblemInstance::new(agents, vec![50.0], BTreeSet::new()).unwrap();
            let analytic = delta_bound(&inst, DeltaMode::Analytic);
            let sampled = delta_bound(&inst, DeltaMode::Sampled { samples: 200, seed });
            prop_assert!(sampled <= analytic + 1e-12);
        }
    }
}
