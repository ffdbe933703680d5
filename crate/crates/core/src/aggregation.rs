//! Aggregation rules applied by an honest agent to its own half-step dual and the
//! messages received from its neighbors.
//!
//! Local weight vectors are indexed with the recipient first: `weights[0]` is the
//! self weight and `weights[1 + m]` belongs to `received[m]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Topology, WeightMatrix};
use crate::rng::mix_seed;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: usize,
    pub value: Vec<f64>,
}

impl Message {
    pub fn new(sender: usize, value: Vec<f64>) -> Self {
        Self { sender, value }
    }
}

/// What a recipient sees: its own half-step value and the (possibly forged) messages.
#[derive(Debug, Clone, Copy)]
pub struct AggregationInput<'a> {
    pub own: &'a [f64],
    pub received: &'a [Message],
}

impl<'a> AggregationInput<'a> {
    pub fn new(own: &'a [f64], received: &'a [Message]) -> Self {
        Self { own, received }
    }

    fn check_dims(&self) -> Result<()> {
        let d = self.own.len();
        for m in self.received {
            if m.value.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.value.len(),
                });
            }
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[f64], normalized: bool) -> Result<()> {
        if weights.len() != self.received.len() + 1 {
            return Err(Error::Aggregation(format!(
                "{} weights for self plus {} senders",
                weights.len(),
                self.received.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Aggregation("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if normalized && (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Aggregation(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    Mean,
    Ctm,
    Ios,
    Scc,
}

impl std::fmt::Display for AggregationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AggregationRule::Mean => "mean",
            AggregationRule::Ctm => "ctm",
            AggregationRule::Ios => "ios",
            AggregationRule::Scc => "scc",
        })
    }
}

impl std::str::FromStr for AggregationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(AggregationRule::Mean),
            "ctm" => Ok(AggregationRule::Ctm),
            "ios" => Ok(AggregationRule::Ios),
            "scc" => Ok(AggregationRule::Scc),
            other => Err(Error::param("rule", format!("unknown rule `{other}`"))),
        }
    }
}

/// Number of messages discarded per side (CTM) or in total (IOS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimCount {
    Fixed(usize),
    /// Each recipient uses its own number of Byzantine neighbors.
    ByzantineNeighbors,
}

/// Clipping radius for SCC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRadius {
    Fixed(f64),
    /// Per recipient and iteration, `τ_i = sqrt(Σ_{j honest} w_ij ‖λ_i − λ_j‖² / Σ_{j Byzantine} w_ij)`.
    /// Uses knowledge of which neighbors are honest, so it is only available to simulations.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub rule: AggregationRule,
    pub trim: TrimCount,
    pub clip: ClipRadius,
}

impl AggregatorConfig {
    pub fn mean() -> Self {
        Self {
            rule: AggregationRule::Mean,
            trim: TrimCount::Fixed(0),
            clip: ClipRadius::Fixed(f64::INFINITY),
        }
    }

    pub fn ctm(trim: TrimCount) -> Self {
        Self {
            rule: AggregationRule::Ctm,
            ..Self::mean()
        }
        .with_trim(trim)
    }

    pub fn ios(trim: TrimCount) -> Self {
        Self {
            rule: AggregationRule::Ios,
            ..Self::mean()
        }
        .with_trim(trim)
    }

    pub fn scc(clip: ClipRadius) -> Self {
        Self {
            rule: AggregationRule::Scc,
            clip,
            ..Self::mean()
        }
    }

    fn with_trim(mut self, trim: TrimCount) -> Self {
        self.trim = trim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let ClipRadius::Fixed(tau) = self.clip {
            if tau.is_nan() || tau < 0.0 {
                return Err(Error::param("tau", format!("must be ≥ 0, got {tau}")));
            }
        }
        Ok(())
    }

    /// Fixes the per-recipient parameters.
    pub fn resolve(&self, byzantine_neighbors: usize, adaptive_tau: impl FnOnce() -> f64) -> ResolvedRule {
        let b = match self.trim {
            TrimCount::Fixed(b) => b,
            TrimCount::ByzantineNeighbors => byzantine_neighbors,
        };
        match self.rule {
            AggregationRule::Mean => ResolvedRule::Mean,
            AggregationRule::Ctm => ResolvedRule::Ctm { b },
            AggregationRule::Ios => ResolvedRule::Ios { b },
            AggregationRule::Scc => ResolvedRule::Scc {
                tau: match self.clip {
                    ClipRadius::Fixed(tau) => tau,
                    ClipRadius::Adaptive => adaptive_tau(),
                },
            },
        }
    }
}

/// A rule with its parameters fixed for one recipient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedRule {
    Mean,
    Ctm { b: usize },
    Ios { b: usize },
    Scc { tau: f64 },
}

impl ResolvedRule {
    /// Fewest received messages the rule is defined for.
    pub fn min_received(&self) -> usize {
        match *self {
            ResolvedRule::Ctm { b } => 2 * b + 1,
            ResolvedRule::Ios { b } => b + 1,
            _ => 0,
        }
    }
}

pub fn aggregate(rule: ResolvedRule, input: &AggregationInput, weights: &[f64]) -> Result<Vec<f64>> {
    match rule {
        ResolvedRule::Mean => aggregate_mean(input, weights),
        ResolvedRule::Ctm { b } => aggregate_ctm(input, b),
        ResolvedRule::Ios { b } => aggregate_ios(input, b, weights),
        ResolvedRule::Scc { tau } => aggregate_scc(input, tau, weights),
    }
}

/// `w_0 · own + Σ_m w_{m+1} · received[m]`.
pub fn aggregate_mean(input: &AggregationInput, weights: &[f64]) -> Result<Vec<f64>> {
    input.check_dims()?;
    input.check_weights(weights, true)?;
    Ok(weighted_sum(input, weights, |_| true))
}

fn weighted_sum(input: &AggregationInput, weights: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut out: Vec<f64> = input.own.iter().map(|x| weights[0] * x).collect();
    for (m, msg) in input.received.iter().enumerate() {
        if keep(m) {
            let w = weights[m + 1];
            out.iter_mut().zip(&msg.value).for_each(|(o, x)| *o += w * x);
        }
    }
    out
}

/// Coordinate-wise trimmed mean.
///
/// Per dimension the received values are sorted, the `b` smallest and `b` largest are
/// dropped and the survivors are averaged together with the own value, unweighted.
/// The sum runs own value first, then survivors in ascending order.
pub fn aggregate_ctm(input: &AggregationInput, b: usize) -> Result<Vec<f64>> {
    input.check_dims()?;
    let n = input.received.len();
    if n <= 2 * b {
        return Err(Error::Aggregation(format!(
            "trimmed mean with b = {b} needs more than {} received messages, got {n}",
            2 * b
        )));
    }
    let count = (n - 2 * b + 1) as f64;
    let mut column = Vec::with_capacity(n);
    Ok((0..input.own.len())
        .map(|d| {
            column.clear();
            column.extend(input.received.iter().map(|m| m.value[d]));
            column.sort_unstable_by(f64::total_cmp);
            let sum = column[b..n - b].iter().fold(input.own[d], |acc, x| acc + x);
            sum / count
        })
        .collect())
}

/// Iterative outlier scissor.
///
/// Starting from self plus every received message, `b` times: take the
/// weight-renormalized average of the current set and discard the received message
/// farthest from it (ties go to the lowest sender id). The own value is never
/// discarded. Returns the renormalized average of what is left; `b = 0` is exactly
/// [`aggregate_mean`].
pub fn aggregate_ios(input: &AggregationInput, b: usize, weights: &[f64]) -> Result<Vec<f64>> {
    if b == 0 {
        return aggregate_mean(input, weights);
    }
    input.check_dims()?;
    input.check_weights(weights, false)?;
    let n = input.received.len();
    if n <= b {
        return Err(Error::Aggregation(format!(
            "outlier scissor with b = {b} needs more than {b} received messages, got {n}"
        )));
    }
    let mut active = vec![true; n];
    for _ in 0..b {
        let center = renormalized_average(input, weights, &active)?;
        let mut worst: Option<(usize, f64)> = None;
        for (m, msg) in input.received.iter().enumerate() {
            if !active[m] {
                continue;
            }
            let dist = squared_distance(&msg.value, &center);
            let replace = match worst {
                None => true,
                Some((w, best)) => dist > best || (dist == best && msg.sender < input.received[w].sender),
            };
            if replace {
                worst = Some((m, dist));
            }
        }
        let (m, _) = worst.expect("at least one active message");
        active[m] = false;
    }
    renormalized_average(input, weights, &active)
}

fn renormalized_average(input: &AggregationInput, weights: &[f64], active: &[bool]) -> Result<Vec<f64>> {
    let total = weights[0]
        + active
            .iter()
            .zip(&weights[1..])
            .filter(|(a, _)| **a)
            .map(|(_, w)| w)
            .sum::<f64>();
    if total <= 0.0 {
        return Err(Error::Aggregation("surviving messages carry zero total weight".into()));
    }
    let mut out = weighted_sum(input, weights, |m| active[m]);
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Self-centered clipping: every message is pulled into the radius-`tau` ball around
/// the own value, then the clipped values are averaged with `weights`.
/// Messages already inside the ball are used unchanged.
pub fn aggregate_scc(input: &AggregationInput, tau: f64, weights: &[f64]) -> Result<Vec<f64>> {
    input.check_dims()?;
    input.check_weights(weights, true)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::param("tau", format!("must be ≥ 0, got {tau}")));
    }
    let own = input.own;
    let mut out: Vec<f64> = own.iter().map(|x| weights[0] * x).collect();
    for (m, msg) in input.received.iter().enumerate() {
        let w = weights[m + 1];
        let dist = squared_distance(&msg.value, own).sqrt();
        if dist <= tau {
            out.iter_mut().zip(&msg.value).for_each(|(o, x)| *o += w * x);
        } else {
            let factor = tau / dist;
            out.iter_mut()
                .zip(msg.value.iter().zip(own))
                .for_each(|(o, (x, c))| *o += w * (c + (x - c) * factor));
        }
    }
    Ok(out)
}

/// Adaptive clipping radius from honest-neighbor spread and Byzantine weight mass.
///
/// Returns `+∞` when no weight sits on Byzantine neighbors.
pub fn adaptive_clip_radius<'a>(
    own: &[f64],
    honest: impl IntoIterator<Item = (&'a [f64], f64)>,
    byzantine_weight: f64,
) -> f64 {
    if byzantine_weight <= 0.0 {
        return f64::INFINITY;
    }
    let spread: f64 = honest.into_iter().map(|(x, w)| w * squared_distance(x, own)).sum();
    (spread / byzantine_weight).sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Options for [`estimate_contraction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub trials: usize,
    pub seed: u64,
    /// Standard deviation of the honest messages around zero, per coordinate.
    pub spread: f64,
    pub dim: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 0,
            spread: 1.0,
            dim: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// Largest observed ratio; a lower bound on the rule's true contraction constant.
    pub rho_hat: f64,
    pub trials_used: usize,
    pub trials_skipped: usize,
}

/// Empirical contraction constant of `config` against the virtual weights `e`.
///
/// Trial `t` visits honest node `t mod H`, draws Gaussian honest messages for the node
/// and its honest neighbors, and places that node's `byzantine_per_node[i]` forged
/// messages at the worst of three heuristic positions: a far outlier, a mimic of the
/// farthest honest message, and the reflection of the honest average through the
/// recipient's own value. Each trial records
/// `‖AGG_i − λ̄_i‖ / max_j ‖λ_j − λ̄_i‖` with `λ̄_i = Σ_j e_ij λ_j`.
///
/// Byzantine senders get weight `1 / (1 + |N_i| + B_i)` each and the honest row of `e`
/// is scaled down to make room, so with no Byzantine neighbors the local weights are
/// exactly the row of `e`.
pub fn estimate_contraction(
    config: &AggregatorConfig,
    e: &WeightMatrix,
    honest_topology: &Topology,
    byzantine_per_node: &[usize],
    options: &EstimatorOptions,
) -> Result<ContractionEstimate> {
    config.validate()?;
    let h = honest_topology.num_nodes();
    if e.size() != h || byzantine_per_node.len() != h {
        return Err(Error::param(
            "virtual weights",
            format!(
                "sizes disagree: E is {}×{}, topology has {h} nodes, {} Byzantine counts",
                e.size(),
                e.size(),
                byzantine_per_node.len()
            ),
        ));
    }
    if options.trials == 0 {
        return Err(Error::param("trials", "must be ≥ 1"));
    }
    if options.dim == 0 {
        return Err(Error::param("dim", "must be ≥ 1"));
    }
    let dim = options.dim;
    let mut rho_hat: f64 = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for t in 0..options.trials {
        let i = t % h;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[options.seed, t as u64]));
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim)
                .map(|_| options.spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        };
        let nbrs = honest_topology.neighbors(i);
        let own = draw(&mut rng);
        let honest: Vec<Vec<f64>> = nbrs.iter().map(|_| draw(&mut rng)).collect();

        let mut center: Vec<f64> = own.iter().map(|x| e.get(i, i) * x).collect();
        for (&j, x) in nbrs.iter().zip(&honest) {
            center.iter_mut().zip(x).for_each(|(c, v)| *c += e.get(i, j) * v);
        }
        let spread = std::iter::once(&own)
            .chain(&honest)
            .map(|x| squared_distance(x, &center).sqrt())
            .fold(0.0, f64::max);
        if spread == 0.0 {
            skipped += 1;
            continue;
        }
        let far_honest = std::iter::once(&own)
            .chain(&honest)
            .max_by(|a, b| squared_distance(a, &center).total_cmp(&squared_distance(b, &center)))
            .expect("own is present")
            .clone();

        let byz = byzantine_per_node[i];
        let byz_weight = 1.0 / (1 + nbrs.len() + byz) as f64;
        let honest_scale = 1.0 - byz as f64 * byz_weight;
        let mut weights = Vec::with_capacity(1 + nbrs.len() + byz);
        weights.push(e.get(i, i) * honest_scale);
        weights.extend(nbrs.iter().map(|&j| e.get(i, j) * honest_scale));
        weights.extend(std::iter::repeat_n(byz_weight, byz));

        let direction = {
            let mut u = draw(&mut rng);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            u.iter_mut().for_each(|x| *x /= norm);
            u
        };
        let magnitude = 1e3 * options.spread.max(spread) * (1.0 + rng.random::<f64>());
        let candidates: [Vec<f64>; 3] = [
            center.iter().zip(&direction).map(|(c, u)| c + magnitude * u).collect(),
            far_honest,
            own.iter().zip(&center).map(|(o, c)| 2.0 * o - c).collect(),
        ];

        let resolved = config.resolve(byz, || {
            adaptive_clip_radius(
                &own,
                nbrs.iter()
                    .zip(&honest)
                    .map(|(&j, x)| (x.as_slice(), honest_scale * e.get(i, j))),
                byz as f64 * byz_weight,
            )
        });
        let mut worst: f64 = 0.0;
        for forged in &candidates {
            let mut received: Vec<Message> = nbrs
                .iter()
                .zip(&honest)
                .map(|(&j, x)| Message::new(j, x.clone()))
                .collect();
            received.extend((0..byz).map(|m| Message::new(h + m, forged.clone())));
            let input = AggregationInput::new(&own, &received);
            let out = aggregate(resolved, &input, &weights)?;
            worst = worst.max(squared_distance(&out, &center).sqrt() / spread);
            if byz == 0 {
                break;
            }
        }
        rho_hat = rho_hat.max(worst);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Aggregation(format!(
            "all {} contraction trials had zero honest spread",
            options.trials
        )));
    }
    Ok(ContractionEstimate {
        rho_hat,
        trials_used: used,
        trials_skipped: skipped,
    })
}
