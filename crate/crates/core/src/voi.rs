//! Value of perfect information about classifier reliability.
//!
//! For each true state the prior cost is the best strategy's expected risk
//! under current uncertainty; the pre-posterior cost is the expected risk of
//! the best strategy chosen after θ is revealed. Their difference is what
//! resolving reliability uncertainty (for instance by further verification
//! testing) is worth at most.

use serde::{Deserialize, Serialize};

use crate::costmodel::CostConfig;
use crate::decision::{scenario_risk, FailureCostTreatment, RiskEstimate, ScenarioMix, ScenarioPlan, Strategy};
use crate::error::{Error, Result};
use crate::reliability::ReliabilityPosterior;
use crate::stats::{merge_all, Moments};

/// Settings shared by every VoPI evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VopiSettings {
    pub n: usize,
    pub seed: u64,
    pub treatment: FailureCostTreatment,
    /// Retain per-draw risks for plotting.
    #[serde(skip)]
    pub keep_samples: bool,
}

impl VopiSettings {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            treatment: FailureCostTreatment::Sampled,
            keep_samples: false,
        }
    }
}

/// Per-draw pair: risk of the prior-optimal strategy and the best risk once θ
/// is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerMinSample {
    pub prior_optimal: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VopiEntry {
    pub scenario: String,
    pub prior_optimal: Strategy,
    pub prior_cost: RiskEstimate,
    pub preposterior_cost: RiskEstimate,
    /// Always ≥ 0: it is the mean of per-draw non-negative regrets.
    pub vopi: RiskEstimate,
    #[serde(skip)]
    pub samples: Option<Vec<InnerMinSample>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedVopi {
    pub prevalence: ScenarioMix,
    pub prior_cost: f64,
    pub preposterior_cost: f64,
    pub vopi: f64,
    pub vopi_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VopiResult {
    pub settings: VopiSettings,
    pub strategies: Vec<Strategy>,
    pub scenarios: Vec<VopiEntry>,
    pub aggregate: Option<MixedVopi>,
}

#[derive(Clone, Default)]
struct ChunkStats {
    risk: Vec<Moments>,
    best: Moments,
    /// `regret[k]`: moments of `risk_k − best`.
    regret: Vec<Moments>,
    samples: Option<Vec<Vec<f64>>>,
}

/// Expected risk of the best strategy under current uncertainty.
pub fn prior_cost(
    s: &str,
    strategies: &[Strategy],
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    n: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let mut best: Option<RiskEstimate> = None;
    for st in strategies {
        let r = scenario_risk(s, st, rel, cfg, n, seed)?;
        if best.is_none_or(|b| r.mean < b.mean) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("strategy", "no strategies given"))
}

/// Expected risk of the best strategy once θ is known.
pub fn preposterior_cost(
    s: &str,
    strategies: &[Strategy],
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    settings: &VopiSettings,
) -> Result<RiskEstimate> {
    Ok(vopi(s, strategies, rel, cfg, settings)?.preposterior_cost)
}

/// Prior cost, pre-posterior cost and their difference for scenario `s`.
pub fn vopi(
    s: &str,
    strategies: &[Strategy],
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    settings: &VopiSettings,
) -> Result<VopiEntry> {
    if strategies.is_empty() {
        return Err(Error::invalid("strategy", "no strategies given"));
    }
    if settings.n == 0 {
        return Err(Error::invalid("sample count", "n must be at least 1"));
    }
    let costs = cfg.resolve(&rel.classes)?;
    for st in strategies {
        st.validate(&rel.classes)?;
    }
    let si = rel.index_of(s)?;
    let plan = ScenarioPlan::new(si, strategies, rel, cfg, &costs);
    let k = strategies.len();
    let keep = settings.keep_samples;

    let chunks = plan.simulate(settings.n, settings.seed, settings.treatment, |risks| {
        let mut st = ChunkStats {
            risk: vec![Moments::default(); k],
            regret: vec![Moments::default(); k],
            ..Default::default()
        };
        for row in risks.chunks(k) {
            let best = row.iter().copied().fold(f64::INFINITY, f64::min);
            st.best.push(best);
            for (j, &r) in row.iter().enumerate() {
                st.risk[j].push(r);
                st.regret[j].push(r - best);
            }
        }
        if keep {
            st.samples = Some(risks.chunks(k).map(<[f64]>::to_vec).collect());
        }
        st
    });

    let risk: Vec<Moments> = (0..k).map(|j| merge_all(chunks.iter().map(|c| &c.risk[j]))).collect();
    // First strictly smallest mean wins, so ties keep declaration order.
    let opt = (0..k).fold(0, |b, j| if risk[j].mean < risk[b].mean { j } else { b });
    let best = merge_all(chunks.iter().map(|c| &c.best));
    let regret = merge_all(chunks.iter().map(|c| &c.regret[opt]));

    let estimate = |m: &Moments, constant: Option<f64>| match constant {
        Some(v) => RiskEstimate::exact(v),
        None => RiskEstimate {
            mean: m.mean,
            std_error: m.std_error(),
            samples: m.n,
        },
    };
    let all_constant = plan.constant.iter().all(Option::is_some);
    let samples = keep.then(|| {
        chunks
            .iter()
            .flat_map(|c| c.samples.iter().flatten())
            .map(|row| InnerMinSample {
                prior_optimal: row[opt],
                best: row.iter().copied().fold(f64::INFINITY, f64::min),
            })
            .collect()
    });
    Ok(VopiEntry {
        scenario: s.to_string(),
        prior_optimal: strategies[opt].clone(),
        prior_cost: estimate(&risk[opt], plan.constant[opt]),
        preposterior_cost: estimate(&best, all_constant.then_some(best.mean)),
        vopi: estimate(&regret, all_constant.then_some(0.0)),
        samples,
    })
}

/// VoPI for every scenario, plus the prevalence-weighted aggregate when a mix
/// is supplied.
pub fn vopi_report(
    mix: Option<&ScenarioMix>,
    strategies: &[Strategy],
    rel: &ReliabilityPosterior,
    cfg: &CostConfig,
    settings: &VopiSettings,
) -> Result<VopiResult> {
    use rayon::prelude::*;
    let entries = rel
        .classes
        .par_iter()
        .map(|s| vopi(s, strategies, rel, cfg, settings))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = mix
        .map(|mix| -> Result<MixedVopi> {
            let w = mix.weights_for(&rel.classes)?;
            let dot = |f: &dyn Fn(&VopiEntry) -> f64| w.iter().zip(&entries).map(|(p, e)| p * f(e)).sum::<f64>();
            Ok(MixedVopi {
                prevalence: mix.clone(),
                prior_cost: dot(&|e| e.prior_cost.mean),
                preposterior_cost: dot(&|e| e.preposterior_cost.mean),
                vopi: dot(&|e| e.vopi.mean),
                vopi_std_error: w
                    .iter()
                    .zip(&entries)
                    .map(|(p, e)| (p * e.vopi.std_error).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            })
        })
        .transpose()?;
    Ok(VopiResult {
        settings: settings.clone(),
        strategies: strategies.to_vec(),
        scenarios: entries,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reliability::{fit_posterior, uniform_prior, ConfusionMatrix};

    fn labels() -> Vec<String> {
        ["none", "cracking", "porosity", "lack_of_penetration"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn weld() -> ReliabilityPosterior {
        let cm = ConfusionMatrix::new(
            labels(),
            vec![vec![72, 1, 4, 0], vec![2, 62, 0, 0], vec![7, 0, 37, 1], vec![0, 0, 0, 60]],
        )
        .unwrap();
        fit_posterior(&cm, &uniform_prior(4)).unwrap()
    }

    #[test]
    fn prior_cost_reuses_scenario_risk() {
        let rel = weld();
        let cfg = CostConfig::default();
        let strategies = Strategy::default_set();
        let settings = VopiSettings::new(20_000, 5);
        for s in &rel.classes {
            let e = vopi(s, &strategies, &rel, &cfg, &settings).unwrap();
            let p = prior_cost(s, &strategies, &rel, &cfg, 20_000, 5).unwrap();
            assert_eq!(e.prior_cost, p, "{s}");
            assert!(e.preposterior_cost.mean <= e.prior_cost.mean);
            assert!(e.vopi.mean >= 0.0);
        }
    }

    #[test]
    fn singleton_strategy_has_no_value() {
        let rel = weld();
        let cfg = CostConfig::default();
        let settings = VopiSettings::new(5_000, 1);
        let e = vopi("cracking", &[Strategy::Automated], &rel, &cfg, &settings).unwrap();
        assert_eq!(e.vopi.mean, 0.0);
        let r = scenario_risk("cracking", &Strategy::Automated, &rel, &cfg, 5_000, 1).unwrap();
        assert_eq!(e.prior_cost, r);
    }

    #[test]
    fn manual_only_is_exact_zero() {
        let rel = weld();
        let cfg = CostConfig::default();
        let e = vopi("porosity", &[Strategy::Manual], &rel, &cfg, &VopiSettings::new(10, 1)).unwrap();
        assert_eq!(e.prior_cost, RiskEstimate::exact(850.0));
        assert_eq!(e.vopi, RiskEstimate::exact(0.0));
    }

    #[test]
    fn samples_retained_on_request() {
        let rel = weld();
        let cfg = CostConfig::default();
        let mut settings = VopiSettings::new(1000, 2);
        settings.keep_samples = true;
        let e = vopi("lack_of_penetration", &Strategy::default_set(), &rel, &cfg, &settings).unwrap();
        let xs = e.samples.unwrap();
        assert_eq!(xs.len(), 1000);
        assert!(xs.iter().all(|x| x.best <= x.prior_optimal));
    }

    #[test]
    fn report_aggregates_with_prevalence() {
        let rel = weld();
        let cfg = CostConfig::default();
        let mix = ScenarioMix::certain("lack_of_penetration");
        let settings = VopiSettings::new(4_000, 8);
        let r = vopi_report(Some(&mix), &Strategy::default_set(), &rel, &cfg, &settings).unwrap();
        let agg = r.aggregate.unwrap();
        assert_eq!(agg.vopi, r.scenarios[3].vopi.mean);
        assert_eq!(agg.vopi_std_error, r.scenarios[3].vopi.std_error);
    }
}
