//! Scenario risk of evaluation strategies, ranking, and break-even prevalence.
//!
//! For a true state `s` the risk of a strategy is `Σ_o C[d(o), s] · Pr(o | s)`,
//! averaged over the reliability posterior and the failure-cost model. Every
//! outcome cost is affine in `C_fail`, which lets the simulation carry a
//! `(fixed, per-C_fail)` pair per model output.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmodel::{expected_failure_cost, CostConfig, FailureCostSampler, ResolvedCosts};
use crate::error::{Error, Result};
use crate::reliability::{DirichletSampler, ReliabilityPosterior};
use crate::rng::{self, Domain};
use crate::stats::{merge_all, Moments};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Perfect manual evaluation of every radiograph.
    Manual,
    /// Act on the model output: repair what is predicted, nothing otherwise.
    Automated,
    /// Automated, except outputs in `escalation_set` go to perfect manual review.
    Hybrid { escalation_set: BTreeSet<String> },
}

impl Strategy {
    pub fn hybrid<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Strategy::Hybrid {
            escalation_set: labels.into_iter().map(Into::into).collect(),
        }
    }

    /// Hybrid strategy escalating cracking and lack-of-penetration outputs.
    pub fn default_hybrid() -> Self {
        Strategy::hybrid(["cracking", "lack_of_penetration"])
    }

    /// Manual, automated and default hybrid, in that order.
    pub fn default_set() -> Vec<Strategy> {
        vec![Strategy::Manual, Strategy::Automated, Strategy::default_hybrid()]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Manual => "manual",
            Strategy::Automated => "automated",
            Strategy::Hybrid { .. } => "hybrid",
        }
    }

    pub fn validate(&self, classes: &[String]) -> Result<()> {
        if let Strategy::Hybrid { escalation_set } = self {
            if escalation_set.is_empty() {
                return Err(Error::invalid("strategy", "hybrid escalation set is empty"));
            }
            for label in escalation_set {
                if !classes.contains(label) {
                    return Err(Error::UnknownLabel(label.clone()));
                }
            }
        }
        Ok(())
    }
}

/// An outcome cost `fixed + per_fail · C_fail`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostLine {
    pub fixed: f64,
    pub per_fail: f64,
}

impl CostLine {
    fn fixed(fixed: f64) -> Self {
        Self { fixed, per_fail: 0.0 }
    }

    pub fn at(&self, c_fail: f64) -> f64 {
        self.fixed + self.per_fail * c_fail
    }
}

/// Decision rule applied to model output `o` under true state `s`.
pub fn outcome_line(s: usize, o: usize, strategy: &Strategy, costs: &ResolvedCosts) -> CostLine {
    let none = costs.no_anomaly;
    let manual = CostLine::fixed(costs.manual_evaluation_cost + costs.repair[s]);
    let automated = || {
        if o == none {
            if s == none {
                CostLine::default()
            } else {
                CostLine {
                    fixed: 0.0,
                    per_fail: costs.multiplier[s],
                }
            }
        } else if o == s || s == none {
            CostLine::fixed(costs.repair[o])
        } else {
            // The repair uncovers a different anomaly; both repairs are paid.
            CostLine::fixed(costs.repair[o] + costs.repair[s])
        }
    };
    match strategy {
        Strategy::Manual => manual,
        Strategy::Automated => automated(),
        Strategy::Hybrid { escalation_set } => {
            if escalation_set.contains(&costs.classes[o]) {
                manual
            } else {
                automated()
            }
        }
    }
}

/// Cost incurred for true state `s` and model output `m_o` under `strategy`,
/// given a draw of `C_fail`.
pub fn outcome_cost(s: &str, m_o: &str, strategy: &Strategy, cfg: &CostConfig, c_fail_draw: f64) -> Result<f64> {
    let mut classes = vec![cfg.no_anomaly.clone()];
    classes.extend(cfg.repair_cost.keys().filter(|k| **k != cfg.no_anomaly).cloned());
    let costs = cfg.resolve(&classes)?;
    let index = |l: &str| {
        classes
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| Error::UnknownLabel(l.to_string()))
    };
    let (si, oi) = (index(s)?, index(m_o)?);
    strategy.validate(&classes)?;
    Ok(outcome_line(si, oi, strategy, &costs).at(c_fail_draw))
}

/// Mean cost with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Zero when the value is exact (closed form).
    pub samples: u64,
}

impl RiskEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            samples: 0,
        }
    }

    fn from_moments(m: &Moments) -> Self {
        Self {
            mean: m.mean,
            std_error: m.std_error(),
            samples: m.n,
        }
    }
}

/// How `C_fail` enters a per-θ risk evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FailureCostTreatment {
    /// Draw `C_fail` jointly with θ.
    #[default]
    Sampled,
    /// Substitute `E[C_fail]`.
    Expected,
}

/// Everything needed to simulate one scenario for a set of strategies.
pub(crate) struct ScenarioPlan {
    pub scenario: usize,
    /// `lines[k][o]`: cost line of strategy `k` for model output `o`.
    pub lines: Vec<Vec<CostLine>>,
    /// Strategies whose cost does not depend on θ or `C_fail`.
    pub constant: Vec<Option<f64>>,
    theta: DirichletSampler,
    failure: FailureCostSampler,
    expected_failure: f64,
}

impl ScenarioPlan {
    pub fn new(
        scenario: usize,
        strategies: &[Strategy],
        rel: &ReliabilityPosterior,
        cfg: &CostConfig,
        costs: &ResolvedCosts,
    ) -> Self {
        let k = rel.len();
        let lines: Vec<Vec<CostLine>> = strategies
            .iter()
            .map(|st| (0..k).map(|o| outcome_line(scenario, o, st, costs)).collect())
            .collect();
        let constant = lines
            .iter()
            .map(|ls| {
                let first = ls[0];
                (first.per_fail == 0.0 && ls.iter().all(|l| *l == first)).then_some(first.fixed)
            })
            .collect();
        Self {
            scenario,
            lines,
            constant,
            theta: rel.row_sampler(scenario),
            failure: cfg.failure_cost.sampler(),
            expected_failure: expected_failure_cost(&cfg.failure_cost),
        }
    }

    pub fn strategies(&self) -> usize {
        self.lines.len()
    }

    /// Draws one `(θ, C_fail)` pair and writes each strategy's risk into `out`.
    pub fn draw<R: Rng>(&self, rng: &mut R, treatment: FailureCostTreatment, theta: &mut [f64], out: &mut [f64]) {
        self.theta.sample_into(rng, theta);
        let c_fail = match treatment {
            FailureCostTreatment::Sampled => self.failure.sample(rng),
            FailureCostTreatment::Expected => self.expected_failure,
        };
        for ((o, ls), c) in out.iter_mut().zip(&self.lines).zip(&self.constant) {
            *o = match c {
                Some(v) => *v,
                None => ls.iter().zip(theta.iter()).map(|(l, t)| t * l.at(c_fail)).sum(),
            };
        }
    }

    /// Runs `n` draws in seeded chunks and hands each chunk's per-draw risks
    /// (row-major, one row per draw) to `reduce`.
    pub fn simulate<T, F>(&self, n: usize, seed: u64, treatment: FailureCostTreatment, reduce: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync + Send,
    {
        let s = self.strategies();
        let k = self.theta.dim();
        rng::par_chunks(seed, Domain::ScenarioRisk, self.scenario as u32, n, |rng, len| {
            let mut theta = vec![0.0; k];
            let mut risks = vec![0.0; len * s];
            for row in risks.chunks_mut(s) {
                self.draw(rng, treatment, &mut theta, row);
            }
            reduce(&risks)
        })
    }
}

/// Per-scenario, per-strategy expected cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRiskTable {
    pub scenarios: Vec<String>,
    pub no_anomaly: String,
    pub strategies: Vec<Strategy>,
    /// `cells[s][k]`: scenario `s`, strategy `k`.
    pub cells: Vec<Vec<RiskEstimate>>,
    pub n: u64,
    pub seed: u64,
    pub config_hash: String,
    /// Raw per-draw costs, `samples[s][k]`, when requested.
    #[serde(skip)]
    pub samples: Option<Vec<Vec<Vec<f64>>>>,
}

impl StrategyRiskTable {
    pub fn scenario_index(&self, label: &str) -> Result<usize> {
        self.scenarios
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn strategy_index(&self, name: &str) -> Result<usize> {
        self.strategies
            .iter()
            .position(|s| s.name() == name)
            .ok_or_else(|| Error::invalid("strategy", format!("`{name}` is not in the table")))
    }

    pub fn cell(&self, scenario: &str, strategy: &str) -> Result<RiskEstimate> {
        Ok(self.cells[self.scenario_index(scenario)?][self.strategy_index(strategy)?])
    }
}

fn check_n(strategies: &[Strategy], n: usize) -> Result<()> {
    if n == 0 && strategies.iter().any(|s| *s != Strategy::Manual) {
        return Err(Error::invalid("sample count", "n must be at least 1"));
    }
    Ok(())
}

struct CellResult {
    estimates: Vec<RiskEstimate>,
    samples: Option<Vec<Vec<f64>>>,
}

fn simulate_cell(plan: &ScenarioPlan, n: usize, seed: u64, keep_samples: bool) -> CellResult {
    let s = plan.strategies();
    if plan.constant.iter().all(Option::is_some) {
        return CellResult {
            estimates: plan.constant.iter().map(|c| RiskEstimate::exact(c.unwrap())).collect(),
            samples: keep_samples.then(|| plan.constant.iter().map(|c| vec![c.unwrap(); n]).collect()),
        };
    }
    let chunks = plan.simulate(n, seed, FailureCostTreatment::Sampled, |risks| {
        let mut moments = vec![Moments::default(); s];
        for row in risks.chunks(s) {
            for (m, &r) in moments.iter_mut().zip(row) {
                m.push(r);
            }
        }
        (moments, keep_samples.then(|| risks.to_vec()))
    });
    let estimates = (0..s)
        .map(|k| match plan.constant[k] {
            Some(v) => RiskEstimate::exact(v),
            None => RiskEstimate::from_moments(&merge_all(chunks.iter().map(|c| &c.0[k]))),
        })
        .collect();
    let samples = keep_samples.then(|| {
        let mut per = vec![Vec::with_capacity(n); s];
        for (_, raw) in &chunks {
            for row in raw.as_ref().unwrap().chunks(s) {
                for (v, &r) in per.iter_mut().zip(row) {
                    v.push(r);
                }
            }
        }
        per
    });
    CellResult { estimates, samples }
}

/// Risk of one strategy in scenario `s`.
///
/// Automated and hybrid risks are Monte Carlo estimates over θ and `C_fail`;
/// manual risk is exact. Draws depend only on `(seed, s)`, so estimates for
/// different strategies share random numbers.
pub fn scenario_risk(
    s: &str,
    strategy: &Strategy,
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    n: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let costs = cfg.resolve(&rel.classes)?;
    strategy.validate(&rel.classes)?;
    check_n(std::slice::from_ref(strategy), n)?;
    let si = rel.index_of(s)?;
    let plan = ScenarioPlan::new(si, std::slice::from_ref(strategy), rel, cfg, &costs);
    Ok(simulate_cell(&plan, n, seed, false).estimates[0])
}

/// Risk of every strategy in every scenario.
pub fn risk_table(
    strategies: &[Strategy],
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    n: usize,
    seed: u64,
    keep_samples: bool,
) -> Result<StrategyRiskTable> {
    if strategies.is_empty() {
        return Err(Error::invalid("strategy", "no strategies given"));
    }
    let costs = cfg.resolve(&rel.classes)?;
    for st in strategies {
        st.validate(&rel.classes)?;
    }
    check_n(strategies, n)?;
    let results: Vec<CellResult> = (0..rel.len())
        .into_par_iter()
        .map(|s| {
            let plan = ScenarioPlan::new(s, strategies, rel, cfg, &costs);
            simulate_cell(&plan, n, seed, keep_samples)
        })
        .collect();
    let (cells, samples): (Vec<_>, Vec<_>) = results.into_iter().map(|r| (r.estimates, r.samples)).unzip();
    Ok(StrategyRiskTable {
        scenarios: rel.classes.clone(),
        no_anomaly: cfg.no_anomaly.clone(),
        strategies: strategies.to_vec(),
        cells,
        n: n as u64,
        seed,
        config_hash: cfg.hash(),
        samples: samples.into_iter().collect(),
    })
}

/// Prevalence `Pr(s)` of each true state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMix {
    pub prevalence: BTreeMap<String, f64>,
}

impl ScenarioMix {
    pub fn new(prevalence: BTreeMap<String, f64>) -> Result<Self> {
        if prevalence.values().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("scenario mix", "probabilities must be non-negative"));
        }
        let total: f64 = prevalence.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("scenario mix", format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { prevalence })
    }

    /// All mass on one scenario.
    pub fn certain(label: &str) -> Self {
        Self {
            prevalence: BTreeMap::from([(label.to_string(), 1.0)]),
        }
    }

    /// Weights aligned with `scenarios`; labels absent from the mix get zero,
    /// labels unknown to `scenarios` are an error.
    pub fn weights_for(&self, scenarios: &[String]) -> Result<Vec<f64>> {
        for label in self.prevalence.keys() {
            if !scenarios.contains(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        Ok(scenarios
            .iter()
            .map(|s| self.prevalence.get(s).copied().unwrap_or(0.0))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub strategy: Strategy,
    pub mixed_cost: f64,
    /// Standard error assuming independent scenario estimates.
    pub std_error: f64,
    /// Same mixed cost as the entry ranked just above it.
    pub tied_with_previous: bool,
}

/// Strategies ordered by prevalence-weighted expected cost, cheapest first.
/// Equal costs keep declaration order and are flagged as ties.
pub fn rank_strategies(table: &StrategyRiskTable, mix: &ScenarioMix) -> Result<Vec<RankedStrategy>> {
    let w = mix.weights_for(&table.scenarios)?;
    let mut ranked: Vec<RankedStrategy> = table
        .strategies
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let mixed_cost = w.iter().zip(&table.cells).map(|(p, row)| p * row[k].mean).sum();
            let var: f64 = w
                .iter()
                .zip(&table.cells)
                .map(|(p, row)| (p * row[k].std_error).powi(2))
                .sum();
            RankedStrategy {
                strategy: st.clone(),
                mixed_cost,
                std_error: var.sqrt(),
                tied_with_previous: false,
            }
        })
        .collect();
    ranked.sort_by(|a, b| a.mixed_cost.total_cmp(&b.mixed_cost));
    for i in 1..ranked.len() {
        let (a, b) = (ranked[i - 1].mixed_cost, ranked[i].mixed_cost);
        ranked[i].tied_with_previous = (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    }
    Ok(ranked)
}

/// Where the challenger strategy beats the baseline as a function of the
/// no-anomaly prevalence `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakEvenRegime {
    /// Challenger is cheaper for `p` above the threshold.
    ChallengerAbove,
    /// Challenger is cheaper for `p` below the threshold.
    ChallengerBelow,
    /// Challenger is never more expensive; threshold 0.
    ChallengerAlways,
    /// Challenger is never cheaper; threshold 1.
    BaselineAlways,
    /// The two mixed-cost lines coincide.
    Identical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakEven {
    pub challenger: String,
    pub baseline: String,
    /// `None` when the lines coincide.
    pub threshold: Option<f64>,
    pub regime: BreakEvenRegime,
}

/// No-anomaly prevalence at which `challenger` and `baseline` cost the same,
/// with anomalies split according to `anomaly_profile`.
pub fn break_even_between(
    table: &StrategyRiskTable,
    challenger: &str,
    baseline: &str,
    anomaly_profile: &BTreeMap<String, f64>,
) -> Result<BreakEven> {
    let c = table.strategy_index(challenger)?;
    let b = table.strategy_index(baseline)?;
    let none = table.scenario_index(&table.no_anomaly)?;
    if anomaly_profile.contains_key(&table.no_anomaly) {
        return Err(Error::invalid("anomaly profile", "must list anomaly classes only"));
    }
    let mix = ScenarioMix::new(anomaly_profile.clone())?;
    let w = mix.weights_for(&table.scenarios)?;

    let gap = |s: usize| table.cells[s][c].mean - table.cells[s][b].mean;
    let d_none = gap(none);
    let d_anomaly: f64 = w.iter().enumerate().map(|(s, p)| p * gap(s)).sum();

    // Mixed gap is D(p) = p·d_none + (1 − p)·d_anomaly.
    let scale = table
        .cells
        .iter()
        .flat_map(|r| [r[c].mean.abs(), r[b].mean.abs()])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let eps = 1e-12 * scale;
    let zero = |x: f64| x.abs() <= eps;
    let (threshold, regime) = if zero(d_none) && zero(d_anomaly) {
        (None, BreakEvenRegime::Identical)
    } else if d_none < -eps && d_anomaly > eps {
        (Some(d_anomaly / (d_anomaly - d_none)), BreakEvenRegime::ChallengerAbove)
    } else if d_none > eps && d_anomaly < -eps {
        (Some(d_anomaly / (d_anomaly - d_none)), BreakEvenRegime::ChallengerBelow)
    } else if d_none <= eps && d_anomaly <= eps {
        (Some(0.0), BreakEvenRegime::ChallengerAlways)
    } else {
        (Some(1.0), BreakEvenRegime::BaselineAlways)
    };
    Ok(BreakEven {
        challenger: challenger.to_string(),
        baseline: baseline.to_string(),
        threshold,
        regime,
    })
}

/// Hybrid-versus-manual break-even no-anomaly prevalence.
pub fn break_even_prevalence(table: &StrategyRiskTable, anomaly_profile: &BTreeMap<String, f64>) -> Result<BreakEven> {
    break_even_between(table, "hybrid", "manual", anomaly_profile)
}

/// Equal weight on every anomaly class of `table`.
pub fn uniform_anomaly_profile(table: &StrategyRiskTable) -> BTreeMap<String, f64> {
    let anomalies: Vec<&String> = table.scenarios.iter().filter(|s| **s != table.no_anomaly).collect();
    let w = 1.0 / anomalies.len() as f64;
    anomalies.into_iter().map(|s| (s.clone(), w)).collect()
}

/// Parses `label=weight,...`.
pub fn parse_weights(text: &str) -> Result<BTreeMap<String, f64>> {
    text.split(',')
        .map(|item| {
            let (label, w) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid("weights", format!("expected `label=weight`, got `{item}`")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::invalid("weights", format!("`{w}` is not a number")))?;
            Ok((label.trim().to_string(), w))
        })
        .collect()
}

/// Anomaly mix from `uniform`, a single anomaly label, or `label=weight,...`;
/// weight lists are relative and get normalised.
pub fn parse_anomaly_profile(text: &str, table: &StrategyRiskTable) -> Result<BTreeMap<String, f64>> {
    if text == "uniform" {
        return Ok(uniform_anomaly_profile(table));
    }
    if !text.contains('=') {
        table.scenario_index(text)?;
        return Ok(BTreeMap::from([(text.to_string(), 1.0)]));
    }
    let mut weights = parse_weights(text)?;
    let total: f64 = weights.values().sum();
    if !(total.is_finite() && total > 0.0) || weights.values().any(|w| *w < 0.0) {
        return Err(Error::invalid("profile", "weights must be non-negative with a positive sum"));
    }
    weights.values_mut().for_each(|w| *w /= total);
    Ok(weights)
}
