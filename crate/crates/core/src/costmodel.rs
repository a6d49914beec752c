//! Activity costs and the random failure cost `C_fail`.
//!
//! `C_fail` is a two-component mixture: a zero-truncated normal for minor
//! failures and a shape/scale gamma for major ones, with mixture weights drawn
//! from a two-dimensional Dirichlet on every draw.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// The cost file shipped with the crate.
pub const DEFAULT_COSTS_TOML: &str = include_str!("../data/costs.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub location: f64,
    pub scale: f64,
}

impl TruncatedNormal {
    fn standardised_lower(&self) -> f64 {
        -self.location / self.scale
    }

    /// Mean of N(location, scale²) conditioned on being ≥ 0.
    pub fn mean(&self) -> f64 {
        let std = StatNormal::standard();
        let a = self.standardised_lower();
        self.location + self.scale * std.pdf(a) / std.sf(a)
    }

    pub fn variance(&self) -> f64 {
        let std = StatNormal::standard();
        let a = self.standardised_lower();
        let lambda = std.pdf(a) / std.sf(a);
        self.scale * self.scale * (1.0 + a * lambda - lambda * lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaShapeScale {
    pub shape: f64,
    pub scale: f64,
}

impl GammaShapeScale {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureCostMixture {
    pub dirichlet_weights: [f64; 2],
    pub minor: TruncatedNormal,
    pub major: GammaShapeScale,
}

impl Default for FailureCostMixture {
    fn default() -> Self {
        Self {
            dirichlet_weights: [9.0, 3.0],
            minor: TruncatedNormal {
                location: 50_000.0,
                scale: 3_000.0,
            },
            major: GammaShapeScale {
                shape: 6.0,
                scale: 40_000.0,
            },
        }
    }
}

impl FailureCostMixture {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("failure cost mixture", m.to_string()));
        if !self.dirichlet_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return bad("dirichlet_weights must be positive");
        }
        if !(self.minor.scale > 0.0 && self.minor.location.is_finite() && self.minor.scale.is_finite()) {
            return bad("minor.scale must be positive");
        }
        if !(self.major.shape > 0.0 && self.major.scale > 0.0 && self.major.shape.is_finite() && self.major.scale.is_finite()) {
            return bad("major.shape and major.scale must be positive");
        }
        Ok(())
    }

    /// Expected weight of the minor-failure component.
    pub fn minor_weight(&self) -> f64 {
        self.dirichlet_weights[0] / (self.dirichlet_weights[0] + self.dirichlet_weights[1])
    }

    pub fn sampler(&self) -> FailureCostSampler {
        FailureCostSampler::new(self)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dirichlet_weights: self.dirichlet_weights,
            minor: TruncatedNormal {
                location: self.minor.location * factor,
                scale: self.minor.scale * factor,
            },
            major: GammaShapeScale {
                shape: self.major.shape,
                scale: self.major.scale * factor,
            },
        }
    }
}

/// Closed-form `E[C_fail]`.
pub fn expected_failure_cost(mix: &FailureCostMixture) -> f64 {
    let w = mix.minor_weight();
    w * mix.minor.mean() + (1.0 - w) * mix.major.mean()
}

enum MinorDraw {
    Rejection(Normal<f64>),
    /// Inverse-CDF on the truncated range, for locations far below zero.
    Inversion { dist: StatNormal, lower_cdf: f64 },
}

pub struct FailureCostSampler {
    weight_a: Gamma<f64>,
    weight_b: Gamma<f64>,
    minor: MinorDraw,
    major: Gamma<f64>,
}

impl FailureCostSampler {
    pub fn new(mix: &FailureCostMixture) -> Self {
        let std = StatNormal::standard();
        let accept = std.sf(mix.minor.standardised_lower());
        let minor = if accept > 0.05 {
            MinorDraw::Rejection(Normal::new(mix.minor.location, mix.minor.scale).expect("valid normal"))
        } else {
            let dist = StatNormal::new(mix.minor.location, mix.minor.scale).expect("valid normal");
            MinorDraw::Inversion {
                lower_cdf: dist.cdf(0.0),
                dist,
            }
        };
        Self {
            weight_a: Gamma::new(mix.dirichlet_weights[0], 1.0).expect("valid weight"),
            weight_b: Gamma::new(mix.dirichlet_weights[1], 1.0).expect("valid weight"),
            minor,
            major: Gamma::new(mix.major.shape, mix.major.scale).expect("valid gamma"),
        }
    }

    fn minor_weight<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = self.weight_a.sample(rng);
        let b = self.weight_b.sample(rng);
        if a + b > 0.0 {
            a / (a + b)
        } else {
            0.5
        }
    }

    fn minor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.minor {
            MinorDraw::Rejection(normal) => loop {
                let x = normal.sample(rng);
                if x >= 0.0 {
                    return x;
                }
            },
            MinorDraw::Inversion { dist, lower_cdf } => {
                let u: f64 = rng.random();
                dist.inverse_cdf(lower_cdf + u * (1.0 - lower_cdf)).max(0.0)
            }
        }
    }

    /// One draw, returning the sampled minor-component weight alongside it.
    pub fn sample_with_weight<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let pi1 = self.minor_weight(rng);
        let u: f64 = rng.random();
        let c = if u < pi1 {
            self.minor(rng)
        } else {
            self.major.sample(rng)
        };
        (pi1, c)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_with_weight(rng).1
    }
}

/// `n` seeded draws of `C_fail`.
pub fn sample_failure_cost(mix: &FailureCostMixture, n: usize, seed: u64) -> Vec<f64> {
    let sampler = mix.sampler();
    rng::par_chunks(seed, Domain::FailureCost, 0, n, |rng, len| {
        (0..len).map(|_| sampler.sample(rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Activity costs, failure multipliers and the `C_fail` model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(default = "default_no_anomaly")]
    pub no_anomaly: String,
    pub manual_evaluation_cost: f64,
    pub repair_cost: BTreeMap<String, f64>,
    pub failure_multiplier: BTreeMap<String, f64>,
    pub failure_cost: FailureCostMixture,
}

fn default_no_anomaly() -> String {
    "none".to_string()
}

impl Default for CostConfig {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_COSTS_TOML, Path::new("<builtin costs.toml>")).expect("builtin config parses")
    }
}

/// Costs resolved against a concrete class ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCosts {
    pub classes: Vec<String>,
    pub no_anomaly: usize,
    pub manual_evaluation_cost: f64,
    /// Zero for the no-anomaly class.
    pub repair: Vec<f64>,
    /// Zero for the no-anomaly class.
    pub multiplier: Vec<f64>,
}

impl CostConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: CostConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|span| line_col(text, span.start))
                .unwrap_or((1, 1));
            Error::Parse {
                path: origin.to_path_buf(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: 1,
            column: 1,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |what: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid("cost config", format!("{what} must be a non-negative number, got {v}")))
            }
        };
        nonneg("manual_evaluation_cost", self.manual_evaluation_cost)?;
        for (k, v) in &self.repair_cost {
            nonneg(&format!("repair_cost.{k}"), *v)?;
        }
        for (k, v) in &self.failure_multiplier {
            nonneg(&format!("failure_multiplier.{k}"), *v)?;
        }
        if self.repair_cost.contains_key(&self.no_anomaly) || self.failure_multiplier.contains_key(&self.no_anomaly) {
            return Err(Error::invalid(
                "cost config",
                format!("no-anomaly class `{}` cannot carry repair or failure costs", self.no_anomaly),
            ));
        }
        self.failure_cost.validate()
    }

    /// Maps costs onto `classes`, checking every anomaly class is priced.
    pub fn resolve(&self, classes: &[String]) -> Result<ResolvedCosts> {
        self.validate()?;
        let no_anomaly = classes
            .iter()
            .position(|c| *c == self.no_anomaly)
            .ok_or_else(|| Error::UnknownLabel(self.no_anomaly.clone()))?;
        let mut repair = vec![0.0; classes.len()];
        let mut multiplier = vec![0.0; classes.len()];
        for (i, label) in classes.iter().enumerate() {
            if i == no_anomaly {
                continue;
            }
            repair[i] = *self
                .repair_cost
                .get(label)
                .ok_or_else(|| Error::invalid("cost config", format!("no repair_cost for `{label}`")))?;
            multiplier[i] = *self
                .failure_multiplier
                .get(label)
                .ok_or_else(|| Error::invalid("cost config", format!("no failure_multiplier for `{label}`")))?;
        }
        for label in self.repair_cost.keys().chain(self.failure_multiplier.keys()) {
            if !classes.contains(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        Ok(ResolvedCosts {
            classes: classes.to_vec(),
            no_anomaly,
            manual_evaluation_cost: self.manual_evaluation_cost,
            repair,
            multiplier,
        })
    }

    /// Every currency amount multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            no_anomaly: self.no_anomaly.clone(),
            manual_evaluation_cost: self.manual_evaluation_cost * factor,
            repair_cost: self.repair_cost.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            failure_multiplier: self.failure_multiplier.clone(),
            failure_cost: self.failure_cost.scaled(factor),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}

/// Failure cost of leaving an anomaly of class `s` unrepaired, given a
/// `C_fail` draw.
pub fn failure_cost_for(s: &str, c_fail: f64, cfg: &CostConfig) -> Result<f64> {
    if s == cfg.no_anomaly {
        return Err(Error::NoFailureForNoAnomaly(s.to_string()));
    }
    cfg.failure_multiplier
        .get(s)
        .map(|m| m * c_fail)
        .ok_or_else(|| Error::UnknownLabel(s.to_string()))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;

    #[test]
    fn default_file_matches_table() {
        let cfg = CostConfig::default();
        assert_eq!(cfg.manual_evaluation_cost, 350.0);
        assert_eq!(cfg.repair_cost["cracking"], 1000.0);
        assert_eq!(cfg.repair_cost["lack_of_penetration"], 3000.0);
        assert_eq!(cfg.repair_cost["porosity"], 500.0);
        assert_eq!(cfg.failure_multiplier["lack_of_penetration"], 1.0);
        assert_eq!(cfg.failure_multiplier["cracking"], 0.5);
        assert_eq!(cfg.failure_multiplier["porosity"], 0.1);
        assert_eq!(cfg.failure_cost, FailureCostMixture::default());
    }

    #[test]
    fn failure_cost_multipliers() {
        let cfg = CostConfig::default();
        assert_eq!(failure_cost_for("porosity", 100_000.0, &cfg).unwrap(), 10_000.0);
        assert_eq!(failure_cost_for("cracking", 100_000.0, &cfg).unwrap(), 50_000.0);
        assert_eq!(failure_cost_for("lack_of_penetration", 1234.5, &cfg).unwrap(), 1234.5);
        assert!(matches!(
            failure_cost_for("none", 1.0, &cfg),
            Err(Error::NoFailureForNoAnomaly(_))
        ));
        assert!(matches!(failure_cost_for("slag", 1.0, &cfg), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn closed_form_expectations() {
        let mix = FailureCostMixture::default();
        let e = expected_failure_cost(&mix);
        // Truncation at zero is ~16.7 standard deviations away.
        assert!((e - 97_500.0).abs() < 1.0, "{e}");
        assert_eq!(mix.major.mean(), 240_000.0);
        let same = FailureCostMixture {
            dirichlet_weights: [1.0, 1.0],
            minor: TruncatedNormal {
                location: 10.0,
                scale: 1.0,
            },
            major: GammaShapeScale {
                shape: 10.0,
                scale: 1.0,
            },
        };
        assert!((expected_failure_cost(&same) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_normal_mean_at_zero_location() {
        // Half-normal: mean σ·√(2/π), variance σ²(1 − 2/π).
        let tn = TruncatedNormal {
            location: 0.0,
            scale: 2.0,
        };
        let pi = std::f64::consts::PI;
        assert!((tn.mean() - 2.0 * (2.0 / pi).sqrt()).abs() < 1e-12);
        assert!((tn.variance() - 4.0 * (1.0 - 2.0 / pi)).abs() < 1e-12);
    }

    #[test]
    fn samples_nonnegative_even_with_heavy_truncation() {
        let mix = FailureCostMixture {
            dirichlet_weights: [1e6, 1.0],
            minor: TruncatedNormal {
                location: -5.0,
                scale: 1.0,
            },
            major: GammaShapeScale {
                shape: 1.0,
                scale: 1.0,
            },
        };
        let xs = sample_failure_cost(&mix, 20_000, 4);
        assert!(xs.iter().all(|&x| x >= 0.0));
        let m: Moments = xs.iter().copied().collect();
        let tn = mix.minor.mean();
        assert!((m.mean - tn).abs() < 4.0 * m.std_error() + 1e-3, "{} vs {tn}", m.mean);
    }

    #[test]
    fn single_component_limit() {
        let mix = FailureCostMixture {
            dirichlet_weights: [1e9, 1.0],
            ..FailureCostMixture::default()
        };
        let m: Moments = sample_failure_cost(&mix, 100_000, 8).into_iter().collect();
        assert!((m.mean - 50_000.0).abs() < 100.0, "{}", m.mean);
    }

    #[test]
    fn deterministic_under_seed() {
        let mix = FailureCostMixture::default();
        assert_eq!(sample_failure_cost(&mix, 10_000, 3), sample_failure_cost(&mix, 10_000, 3));
        assert_ne!(sample_failure_cost(&mix, 10, 3), sample_failure_cost(&mix, 10, 4));
    }

    #[test]
    fn resolve_orders_by_class_labels() {
        let cfg = CostConfig::default();
        let classes: Vec<String> = ["porosity", "none", "lack_of_penetration", "cracking"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let r = cfg.resolve(&classes).unwrap();
        assert_eq!(r.no_anomaly, 1);
        assert_eq!(r.repair, vec![500.0, 0.0, 3000.0, 1000.0]);
        assert_eq!(r.multiplier, vec![0.1, 0.0, 1.0, 0.5]);
        let missing: Vec<String> = vec!["none".into(), "slag".into()];
        assert!(cfg.resolve(&missing).is_err());
    }

    #[test]
    fn parse_errors_report_location() {
        let text = "manual_evaluation_cost = 350.0\nrepair_cost = { cracking = \"lots\" }\n";
        match CostConfig::from_toml_str(text, Path::new("c.toml")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = DEFAULT_COSTS_TOML.replace("manual_evaluation_cost", "manual_cost");
        assert!(matches!(
            CostConfig::from_toml_str(&unknown, Path::new("c.toml")),
            Err(Error::Parse { .. })
        ));
        let negative = DEFAULT_COSTS_TOML.replace("cracking = 1000.0", "cracking = -1000.0");
        assert!(CostConfig::from_toml_str(&negative, Path::new("c.toml")).is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let cfg = CostConfig::default();
        let again = CostConfig::from_toml_str(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_ne!(cfg.hash(), cfg.scaled(2.0).hash());
    }
}
