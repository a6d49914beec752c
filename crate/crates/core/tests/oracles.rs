//! Closed-form and brute-force oracles checked against the Monte Carlo engine.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use modelrisk::costmodel::{expected_failure_cost, failure_cost_for, sample_failure_cost, FailureCostMixture};
use modelrisk::decision::{outcome_cost, outcome_line, rank_strategies, risk_table, scenario_risk};
use modelrisk::reliability::{fit_posterior, posterior_mean, uniform_prior};
use modelrisk::stats::Moments;
use modelrisk::voi::{prior_cost, vopi, VopiSettings};
use modelrisk::{ConfusionMatrix, CostConfig, ReliabilityPosterior, ScenarioMix, Strategy};

const LABELS: [&str; 4] = ["none", "cracking", "porosity", "lack_of_penetration"];

fn weld() -> (ReliabilityPosterior, CostConfig) {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/confusion_weld.csv")).unwrap();
    let cm = ConfusionMatrix::from_csv_str(&text, Path::new("weld")).unwrap();
    (fit_posterior(&cm, &uniform_prior(4)).unwrap(), CostConfig::default())
}

/// Risk with posterior-mean θ and `E[C_fail]` substituted; exact because the
/// cost of each outcome is affine in both.
fn linear_oracle(s: usize, strategy: &Strategy, rel: &ReliabilityPosterior, cfg: &CostConfig) -> f64 {
    let costs = cfg.resolve(&rel.classes).unwrap();
    let mean = posterior_mean(rel);
    let c = expected_failure_cost(&cfg.failure_cost);
    (0..rel.len()).map(|o| mean[s][o] * outcome_line(s, o, strategy, &costs).at(c)).sum()
}

#[test]
fn every_cell_matches_linear_oracle() {
    let (rel, cfg) = weld();
    let table = risk_table(&Strategy::default_set(), &rel, &cfg, 200_000, 11, false).unwrap();
    for (s, row) in table.cells.iter().enumerate() {
        for (k, est) in row.iter().enumerate() {
            let oracle = linear_oracle(s, &table.strategies[k], &rel, &cfg);
            let tol = 3.0 * est.std_error + 1e-9 * oracle.abs();
            assert!(
                (est.mean - oracle).abs() <= tol,
                "{}/{}: {} vs oracle {oracle} (se {})",
                table.scenarios[s],
                table.strategies[k].name(),
                est.mean,
                est.std_error
            );
        }
    }
}

#[test]
fn named_oracle_values() {
    let (rel, cfg) = weld();
    assert!((linear_oracle(0, &Strategy::Automated, &rel, &cfg) - 7_500.0 / 81.0).abs() < 1e-9);
    assert!((linear_oracle(3, &Strategy::Automated, &rel, &cfg) - 4_500.0).abs() < 1e-9);
    for (s, manual) in [350.0, 1_350.0, 850.0, 3_350.0].into_iter().enumerate() {
        let r = scenario_risk(LABELS[s], &Strategy::Manual, &rel, &cfg, 10, 0).unwrap();
        assert_eq!((r.mean, r.std_error), (manual, 0.0));
    }
}

#[test]
fn outcome_rule_examples() {
    let cfg = CostConfig::default();
    let auto = Strategy::Automated;
    let hybrid = Strategy::default_hybrid();
    assert_eq!(outcome_cost("none", "porosity", &auto, &cfg, 1e5).unwrap(), 500.0);
    assert_eq!(outcome_cost("cracking", "porosity", &auto, &cfg, 1e5).unwrap(), 1_500.0);
    assert_eq!(outcome_cost("none", "cracking", &hybrid, &cfg, 1e5).unwrap(), 350.0);
    assert_eq!(outcome_cost("cracking", "cracking", &Strategy::Manual, &cfg, 1e5).unwrap(), 1_350.0);
    assert_eq!(outcome_cost("cracking", "none", &auto, &cfg, 1e5).unwrap(), 50_000.0);
    assert_eq!(outcome_cost("none", "none", &auto, &cfg, 1e5).unwrap(), 0.0);
    assert_eq!(failure_cost_for("porosity", 100_000.0, &cfg).unwrap(), 10_000.0);
    assert_eq!(failure_cost_for("cracking", 100_000.0, &cfg).unwrap(), 50_000.0);
    assert_eq!(failure_cost_for("lack_of_penetration", 1234.5, &cfg).unwrap(), 1234.5);
    assert!(failure_cost_for("none", 1.0, &cfg).is_err());
}

#[test]
fn identity_posterior_approaches_repair_cost() {
    let n = 1_000_000;
    let counts = (0..4).map(|i| (0..4).map(|j| if i == j { n } else { 0 }).collect()).collect();
    let cm = ConfusionMatrix::new(LABELS.iter().map(|s| s.to_string()).collect(), counts).unwrap();
    let rel = fit_posterior(&cm, &uniform_prior(4)).unwrap();
    let cfg = CostConfig::default();
    let table = risk_table(&[Strategy::Automated], &rel, &cfg, 20_000, 5, false).unwrap();
    for (s, repair) in [0.0, 1_000.0, 500.0, 3_000.0].into_iter().enumerate() {
        // Off-diagonal mass is ~3e-6, each worth at most ~2.4e5 in expectation.
        assert!((table.cells[s][0].mean - repair).abs() < 2.0, "{s}: {}", table.cells[s][0].mean);
    }
}

#[test]
fn ranking_follows_table_ordering() {
    let (rel, cfg) = weld();
    let table = risk_table(&Strategy::default_set(), &rel, &cfg, 50_000, 2, false).unwrap();
    let first = |label: &str| rank_strategies(&table, &ScenarioMix::certain(label)).unwrap()[0].strategy.name();
    assert_eq!(first("none"), "hybrid");
    assert_eq!(first("cracking"), "manual");
    assert_eq!(first("lack_of_penetration"), "manual");
}

#[test]
fn failure_cost_mixture_moments() {
    let mix = FailureCostMixture::default();
    let draws = sample_failure_cost(&mix, 1_000_000, 3);
    let m: Moments = draws.iter().copied().collect();
    assert!((m.mean - 97_500.0).abs() < 500.0, "{}", m.mean);
    assert!((m.mean - expected_failure_cost(&mix)).abs() < 3.0 * m.std_error());
    assert!(draws.iter().all(|&c| c >= 0.0));
    let below = draws.iter().filter(|&&c| c < 60_000.0).count() as f64 / draws.len() as f64;
    assert!((below - 0.75).abs() < 0.01, "{below}");

    let sampler = mix.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w: Moments = (0..1_000_000).map(|_| sampler.sample_with_weight(&mut rng).0).collect();
    assert!((w.mean - 0.75).abs() < 0.005, "{}", w.mean);
}

#[test]
fn degenerate_and_identical_mixtures() {
    let mix = FailureCostMixture {
        dirichlet_weights: [1e9, 1.0],
        ..Default::default()
    };
    let m: Moments = sample_failure_cost(&mix, 100_000, 1).into_iter().collect();
    assert!((m.mean - 50_000.0).abs() < 100.0, "{}", m.mean);

    assert_eq!(mix.major.mean(), 240_000.0);
    let mut same = FailureCostMixture {
        dirichlet_weights: [1.0, 1.0],
        ..Default::default()
    };
    same.minor.location = 10.0;
    same.minor.scale = 1e-6;
    same.major.shape = 1e12;
    same.major.scale = 1e-11;
    assert!((expected_failure_cost(&same) - 10.0).abs() < 1e-6);
}

/// Independent VoPI estimate: θ from raw Gamma draws, costs through the
/// label-level outcome rule, `C_fail` through the mixture sampler.
fn brute_force_vopi(s: &str, rel: &ReliabilityPosterior, cfg: &CostConfig, n: usize, seed: u64) -> (f64, f64, f64) {
    let strategies = Strategy::default_set();
    let si = rel.index_of(s).unwrap();
    let gammas: Vec<Gamma<f64>> = rel.posterior_alpha[si].iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let cf = cfg.failure_cost.sampler();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut risks = vec![Moments::default(); strategies.len()];
    let mut per_draw = Vec::with_capacity(n);
    for _ in 0..n {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
        let total: f64 = g.iter().sum();
        let c = cf.sample(&mut rng);
        let r: Vec<f64> = strategies
            .iter()
            .map(|st| {
                rel.classes
                    .iter()
                    .zip(&g)
                    .map(|(o, gi)| gi / total * outcome_cost(s, o, st, cfg, c).unwrap())
                    .sum()
            })
            .collect();
        for (m, v) in risks.iter_mut().zip(&r) {
            m.push(*v);
        }
        per_draw.push(r);
    }
    let best_k = (0..strategies.len())
        .min_by(|&a, &b| risks[a].mean.total_cmp(&risks[b].mean))
        .unwrap();
    let regret: Moments = per_draw
        .iter()
        .map(|r| r[best_k] - r.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    (risks[best_k].mean, regret.mean, regret.std_error())
}

#[test]
fn vopi_matches_brute_force_reimplementation() {
    let (rel, cfg) = weld();
    let n = 100_000;
    let mut values = Vec::new();
    for s in LABELS {
        let e = vopi(s, &Strategy::default_set(), &rel, &cfg, &VopiSettings::new(n, 21)).unwrap();
        let (prior, v, se) = brute_force_vopi(s, &rel, &cfg, n, 77);
        let tol = 3.0 * (se * se + e.vopi.std_error * e.vopi.std_error).sqrt() + 1e-9;
        assert!((e.vopi.mean - v).abs() <= tol, "{s}: {} vs brute force {v} (tol {tol})", e.vopi.mean);
        let prior_tol = 3.0 * e.prior_cost.std_error.max(1e-9) + 0.01 * prior.abs();
        assert!((e.prior_cost.mean - prior).abs() <= prior_tol, "{s}: prior {} vs {prior}", e.prior_cost.mean);
        values.push(e.vopi.mean);
    }
    assert_eq!(values[0], 0.0);
    for v in &values[1..3] {
        assert!(*v > values[0] && *v < values[3], "{values:?}");
    }
}

#[test]
fn prior_cost_examples() {
    let (rel, cfg) = weld();
    let set = Strategy::default_set();
    assert_eq!(prior_cost("lack_of_penetration", &set, &rel, &cfg, 20_000, 1).unwrap().mean, 3_350.0);
    let none = prior_cost("none", &set, &rel, &cfg, 200_000, 1).unwrap().mean;
    assert!((none - 43.82).abs() < 1.0, "{none}");
    let single = prior_cost("cracking", &[Strategy::Automated], &rel, &cfg, 20_000, 4).unwrap();
    let direct = scenario_risk("cracking", &Strategy::Automated, &rel, &cfg, 20_000, 4).unwrap();
    assert_eq!(single, direct);
}
