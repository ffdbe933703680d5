//! Messages forged by Byzantine agents.
//!
//! An attack is queried once per Byzantine sender, honest recipient and iteration,
//! so a Byzantine agent may tell different neighbors different things.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix_seed;

/// Everything a forging strategy may look at.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub iteration: usize,
    pub recipient: usize,
    pub sender: usize,
    /// Half-step duals of every agent at this iteration, indexed by agent id.
    /// Byzantine entries hold the value the sender would have broadcast if honest.
    pub half_steps: &'a [Vec<f64>],
    pub byzantine: &'a BTreeSet<usize>,
}

impl AttackContext<'_> {
    pub fn dim(&self) -> usize {
        self.half_steps.first().map_or(0, Vec::len)
    }
}

pub type CustomAttack = Arc<dyn Fn(&AttackContext) -> Vec<f64> + Send + Sync>;

#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Constant {
        value: Vec<f64>,
    },
    /// Independent `N(mean_d, std²)` per coordinate, drawn from a stream keyed by
    /// `(seed, iteration, recipient, sender)`.
    Gaussian {
        mean: Vec<f64>,
        std: f64,
        seed: u64,
    },
    #[serde(skip)]
    Custom(CustomAttack),
}

impl fmt::Debug for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            AttackSpec::Gaussian { mean, std, seed } => f
                .debug_struct("Gaussian")
                .field("mean", mean)
                .field("std", std)
                .field("seed", seed)
                .finish(),
            AttackSpec::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl AttackSpec {
    pub fn constant(value: Vec<f64>) -> Self {
        AttackSpec::Constant { value }
    }

    pub fn gaussian(mean: Vec<f64>, std: f64, seed: u64) -> Self {
        AttackSpec::Gaussian { mean, std, seed }
    }

    pub fn custom(f: impl Fn(&AttackContext) -> Vec<f64> + Send + Sync + 'static) -> Self {
        AttackSpec::Custom(Arc::new(f))
    }

    /// Checks the attack against the problem dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            AttackSpec::Constant { value } => check_finite_dim("attack value", value, dim),
            AttackSpec::Gaussian { mean, std, .. } => {
                check_finite_dim("attack mean", mean, dim)?;
                if !(std.is_finite() && *std >= 0.0) {
                    return Err(Error::param("attack std", format!("must be finite and ≥ 0, got {std}")));
                }
                Ok(())
            }
            AttackSpec::Custom(_) => Ok(()),
        }
    }

    pub fn forge(&self, ctx: &AttackContext) -> Vec<f64> {
        match self {
            AttackSpec::Constant { value } => value.clone(),
            AttackSpec::Gaussian { mean, std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    *seed,
                    ctx.iteration as u64,
                    ctx.recipient as u64,
                    ctx.sender as u64,
                ]));
                mean.iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + std * z
                    })
                    .collect()
            }
            AttackSpec::Custom(f) => f(ctx),
        }
    }
}

fn check_finite_dim(name: &'static str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(name, "entries must be finite"));
    }
    Ok(())
}

pub const PRESET_NAMES: [&str; 8] = [
    "large_value_c1",
    "small_value_c1",
    "gauss_large_c1",
    "gauss_small_c1",
    "large_value_c2",
    "small_value_c2",
    "gauss_large_c2",
    "gauss_small_c2",
];

/// Named attacks used by the bundled scenarios. Every coordinate gets the same law.
pub fn preset(name: &str, dim: usize, seed: u64) -> Result<AttackSpec> {
    let constant = |v: f64| AttackSpec::constant(vec![v; dim]);
    let gaussian = |m: f64, s: f64| AttackSpec::gaussian(vec![m; dim], s, seed);
    Ok(match name {
        "large_value_c1" => constant(-0.01),
        "small_value_c1" => constant(-600.0),
        "gauss_large_c1" => gaussian(-30.0, 5.0),
        "gauss_small_c1" => gaussian(-300.0, 40.0),
        "large_value_c2" => constant(-0.01),
        "small_value_c2" => constant(-100.0),
        "gauss_large_c2" => gaussian(-10.0, 5.0),
        "gauss_small_c2" => gaussian(-50.0, 10.0),
        other => {
            return Err(Error::param(
                "attack",
                format!("unknown preset `{other}`, expected one of {}", PRESET_NAMES.join(", ")),
            ))
        }
    })
}
