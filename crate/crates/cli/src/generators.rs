//! Generator cost and capacity tables for economic dispatch scenarios.
//!
//! CSV layout: header `id,eta,zeta,xi,theta_min,theta_max`, one generator per row,
//! with cost `η θ² + ζ θ + ξ` on the capacity interval `[θ_min, θ_max]`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use byzalloc::problem::{AgentSpec, BoxConstraint, QuadraticCost};
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 6] = ["id", "eta", "zeta", "xi", "theta_min", "theta_max"];

/// Coefficient ranges of the reference 54-unit system.
pub const ETA_RANGE: (f64, f64) = (0.0024, 0.0697);
pub const ZETA_RANGE: (f64, f64) = (8.3391, 37.6968);
pub const XI_RANGE: (f64, f64) = (6.78, 74.33);
pub const THETA_MIN_RANGE: (f64, f64) = (5.0, 150.0);
pub const THETA_MAX_RANGE: (f64, f64) = (30.0, 420.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub id: usize,
    pub eta: f64,
    pub zeta: f64,
    pub xi: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl GeneratorRecord {
    pub fn to_agent(&self, id: usize) -> byzalloc::Result<AgentSpec> {
        AgentSpec::new(
            id,
            QuadraticCost::from_polynomial(&[self.eta], &[self.zeta], self.xi)?,
            BoxConstraint::new(vec![self.theta_min], vec![self.theta_max])?,
        )
    }
}

pub fn load_generators(path: &Path, strict_ranges: bool) -> Result<Vec<GeneratorRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_generators(&text, strict_ranges).with_context(|| format!("in {}", path.display()))
}

pub fn parse_generators(text: &str, strict_ranges: bool) -> Result<Vec<GeneratorRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().context("reading header")?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        bail!(
            "expected header `{}`, found `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        );
    }
    let mut out = Vec::new();
    for (n, row) in reader.deserialize::<GeneratorRecord>().enumerate() {
        // line 1 is the header
        let line = n + 2;
        let rec = row.with_context(|| format!("line {line}: malformed row"))?;
        check_record(&rec, strict_ranges).with_context(|| format!("line {line}"))?;
        out.push(rec);
    }
    if out.is_empty() {
        bail!("no generator rows");
    }
    Ok(out)
}

fn check_record(rec: &GeneratorRecord, strict: bool) -> Result<()> {
    let values = [rec.eta, rec.zeta, rec.xi, rec.theta_min, rec.theta_max];
    if values.iter().any(|v| !v.is_finite()) {
        bail!("generator {}: values must be finite", rec.id);
    }
    if rec.eta <= 0.0 {
        bail!("generator {}: eta must be > 0, got {}", rec.id, rec.eta);
    }
    if rec.theta_min > rec.theta_max {
        bail!(
            "generator {}: theta_min {} exceeds theta_max {}",
            rec.id,
            rec.theta_min,
            rec.theta_max
        );
    }
    if strict {
        let checks = [
            ("eta", rec.eta, ETA_RANGE),
            ("zeta", rec.zeta, ZETA_RANGE),
            ("xi", rec.xi, XI_RANGE),
            ("theta_min", rec.theta_min, THETA_MIN_RANGE),
            ("theta_max", rec.theta_max, THETA_MAX_RANGE),
        ];
        for (name, v, (lo, hi)) in checks {
            if !(lo..=hi).contains(&v) {
                bail!("generator {}: {name} = {v} outside [{lo}, {hi}]", rec.id);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "id,eta,zeta,xi,theta_min,theta_max\n0,0.01,10,20,5,100\n1,0.05,30,40,10,200\n";

    #[test]
    fn parses_rows() {
        let recs = parse_generators(GOOD, true).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].theta_max, 200.0);
        let agent = recs[0].to_agent(0).unwrap();
        assert_eq!(agent.cost.curvature(), &[0.01]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_generators("", false).is_err());
        assert!(parse_generators("id,eta,zeta,xi,theta_min,theta_max\n", false).is_err());
        let zero_eta = "id,eta,zeta,xi,theta_min,theta_max\n0,0,10,20,5,100\n";
        assert!(format!("{:#}", parse_generators(zero_eta, false).unwrap_err()).contains("eta"));
        let malformed = "id,eta,zeta,xi,theta_min,theta_max\n0,0.01,10,20,5,100\n1,0.01,x,20,5,100\n";
        assert!(format!("{:#}", parse_generators(malformed, false).unwrap_err()).contains("line 3"));
        let wide = "id,eta,zeta,xi,theta_min,theta_max\n0,0.5,10,20,5,100\n";
        assert!(parse_generators(wide, false).is_ok());
        assert!(parse_generators(wide, true).is_err());
        let swapped = "id,eta,zeta,xi,theta_min,theta_max\n0,0.01,10,20,100,5\n";
        assert!(parse_generators(swapped, false).is_err());
    }
}
