//! The `modelrisk` command-line tool.
//!
//! Exit status: 0 on success, 1 for bad input (files, flags, labels), 2 for a
//! numerical warning such as a counterfactual search that did not converge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::costmodel::{expected_failure_cost, sample_failure_cost};
use crate::decision::{
    break_even_between, parse_anomaly_profile, parse_weights, rank_strategies, risk_table, BreakEven,
    FailureCostTreatment, RankedStrategy,
};
use crate::explain::{
    class_activation_map, counterfactual, generate_dataset, generate_image, mask_overlap, saliency, train,
    CounterfactualOptions, DefectClass, NetworkShape, SaliencyMap, ToyClassifier, TrainOptions, IMAGE_SIZE,
};
use crate::io::{grid_from_csv, grid_from_pgm, grid_to_csv, grid_to_pgm, read_to_string, write_bytes, write_json};
use crate::manifest::{Report, RunManifest};
use crate::reliability::{fit_posterior, marginal_beta, marginal_density, marginal_density_summary, posterior_mean};
use crate::rng::{substream, Domain, StreamId};
use crate::stats::Histogram;
use crate::voi::{vopi_report, VopiResult, VopiSettings};
use crate::{ConfusionMatrix, CostConfig, ReliabilityPosterior, ScenarioMix, Strategy, StrategyRiskTable};

/// Quantify the decision risk of an automated inspection classifier.
#[derive(Debug, Parser)]
#[command(name = "modelrisk", version, about)]
struct Cli {
    /// Worker threads for Monte Carlo work (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the Dirichlet posterior over a confusion matrix.
    Fit(FitArgs),
    /// Expected cost of each inspection strategy in each true state.
    Risk(RiskArgs),
    /// Break-even no-anomaly prevalence from a risk report.
    Threshold(ThresholdArgs),
    /// Value of perfect information about classifier reliability.
    Vopi(VopiArgs),
    /// Toy classifier and explainability experiments on synthetic images.
    #[command(subcommand)]
    Toy(ToyCommand),
}

#[derive(Debug, Args)]
struct PriorArg {
    /// Dirichlet prior: one concentration for every cell, or a comma list
    /// with one value per predicted class.
    #[arg(long, default_value = "1")]
    prior: String,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Confusion matrix CSV (header: true_class,<predicted labels...>).
    confusion: PathBuf,
    #[command(flatten)]
    prior: PriorArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Grid points per Beta marginal curve.
    #[arg(long, default_value_t = 999)]
    grid: usize,
}

#[derive(Debug, Args)]
struct CostArgs {
    /// Cost file. Falls back to ./costs.toml, then to the built-in defaults.
    #[arg(long)]
    costs: Option<PathBuf>,
    /// Comma-separated model outputs that the hybrid strategy escalates to
    /// manual evaluation.
    #[arg(long, value_delimiter = ',')]
    escalate: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct RiskArgs {
    confusion: PathBuf,
    #[command(flatten)]
    costs: CostArgs,
    #[command(flatten)]
    prior: PriorArg,
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// `risk.json` written by `modelrisk risk`.
    risk: PathBuf,
    /// Anomaly mix: `uniform`, a single label, or `label=weight,...`.
    #[arg(long, default_value = "uniform")]
    profile: String,
    #[arg(long, default_value = "hybrid")]
    challenger: String,
    #[arg(long, default_value = "manual")]
    baseline: String,
    /// Output directory; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CfailArg {
    Sampled,
    Expected,
}

#[derive(Debug, Args)]
struct VopiArgs {
    confusion: PathBuf,
    #[command(flatten)]
    costs: CostArgs,
    #[command(flatten)]
    prior: PriorArg,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report values per this many inspected items.
    #[arg(long, default_value_t = 100.0)]
    per: f64,
    /// Failure cost inside each draw: sampled jointly or fixed at its mean.
    #[arg(long, value_enum, default_value = "sampled")]
    cfail: CfailArg,
    /// Optional true-state prevalence `label=weight,...` for an aggregate.
    #[arg(long)]
    prevalence: Option<String>,
    /// Also write every per-draw risk pair.
    #[arg(long)]
    samples: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ToyCommand {
    /// Generate synthetic radiographs and train the toy classifier.
    Train(ToyTrainArgs),
    /// Push an image towards a target class by gradient descent.
    Counterfactual(ToyCounterfactualArgs),
    /// Input-gradient saliency map.
    Saliency(ToyMapArgs),
    /// Class-activation map from the convolution layer.
    Cam(ToyMapArgs),
}

#[derive(Debug, Args)]
struct ToyTrainArgs {
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 50)]
    holdout: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    filters: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ImageSource {
    /// Trained model file from `toy train`.
    #[arg(long)]
    model: PathBuf,
    /// Input image: `.pgm`, otherwise a CSV grid.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    image: Option<PathBuf>,
    /// Generate a synthetic image of this class instead of reading one.
    #[arg(long)]
    generate: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ToyCounterfactualArgs {
    #[command(flatten)]
    source: ImageSource,
    #[arg(long, default_value = "none")]
    target: String,
    #[arg(long, default_value_t = CounterfactualOptions::default().learning_rate)]
    eta: f64,
    #[arg(long, default_value_t = CounterfactualOptions::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = CounterfactualOptions::default().tolerance)]
    tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ToyMapArgs {
    #[command(flatten)]
    source: ImageSource,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    class: Option<String>,
    /// Fraction of highest-valued pixels used for mask overlap.
    #[arg(long, default_value_t = 0.05)]
    top: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Raised for results that were produced but should not be trusted blindly.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct NumericalWarning(String);

/// Runs the tool on the process arguments.
pub fn main() -> ExitCode {
    main_from(std::env::args_os())
}

/// Runs the tool on `args`, the first being the program name.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their cause; skip repeated text.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            if is_numerical(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<NumericalWarning>() || c.downcast_ref::<crate::Error>().is_some_and(|m| !m.is_input_error())
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring thread pool")?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Vopi(a) => cmd_vopi(a),
        Command::Toy(ToyCommand::Train(a)) => cmd_toy_train(a),
        Command::Toy(ToyCommand::Counterfactual(a)) => cmd_toy_counterfactual(a),
        Command::Toy(ToyCommand::Saliency(a)) => cmd_toy_map(a, false),
        Command::Toy(ToyCommand::Cam(a)) => cmd_toy_map(a, true),
    }
}

// ---------------------------------------------------------------- inputs

fn load_posterior(confusion: &Path, prior: &PriorArg) -> anyhow::Result<(ConfusionMatrix, ReliabilityPosterior)> {
    let cm = ConfusionMatrix::from_csv_path(confusion)?;
    let values = prior
        .prior
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("--prior: `{v}` is not a number")))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    let alpha = match values.as_slice() {
        [single] => vec![*single; cm.len()],
        _ => values,
    };
    let post = fit_posterior(&cm, &alpha)?;
    Ok((cm, post))
}

/// Explicit flag, then `./costs.toml`, then the built-in defaults.
fn load_costs(args: &CostArgs) -> anyhow::Result<(CostConfig, String)> {
    if let Some(p) = &args.costs {
        return Ok((CostConfig::from_path(p)?, p.display().to_string()));
    }
    let local = Path::new("costs.toml");
    if local.is_file() {
        return Ok((CostConfig::from_path(local)?, "costs.toml".to_string()));
    }
    Ok((CostConfig::default(), "built-in".to_string()))
}

fn strategies(args: &CostArgs) -> Vec<Strategy> {
    let hybrid = match &args.escalate {
        Some(labels) => Strategy::hybrid(labels.iter().filter(|l| !l.is_empty())),
        None => Strategy::default_hybrid(),
    };
    vec![Strategy::Manual, Strategy::Automated, hybrid]
}

fn strategy_params(m: RunManifest, strategies: &[Strategy]) -> RunManifest {
    let escalate = strategies
        .iter()
        .find_map(|s| match s {
            Strategy::Hybrid { escalation_set } => Some(escalation_set.iter().cloned().collect::<Vec<_>>().join(",")),
            _ => None,
        })
        .unwrap_or_default();
    m.param("escalate", escalate)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Serialize)]
struct MarginalSummary {
    true_class: String,
    predicted: String,
    alpha: f64,
    beta: f64,
    mean: f64,
    q025: f64,
    median: f64,
    q975: f64,
}

#[derive(Debug, Serialize)]
struct FitBody {
    posterior: ReliabilityPosterior,
    posterior_mean: Vec<Vec<f64>>,
    marginals: Vec<MarginalSummary>,
}

fn cmd_fit(a: FitArgs) -> anyhow::Result<()> {
    let (cm, post) = load_posterior(&a.confusion, &a.prior)?;
    let k = post.len();
    let mut marginals = Vec::with_capacity(k * k);
    let mut curves = String::from("true_class,predicted,x,density\n");
    let grid = a.grid.max(2);
    for i in 0..k {
        for j in 0..k {
            let (alpha, beta) = marginal_beta(&post, i, j);
            let q = marginal_density_summary(&post, i, j, &[0.025, 0.5, 0.975])?;
            marginals.push(MarginalSummary {
                true_class: post.classes[i].clone(),
                predicted: post.classes[j].clone(),
                alpha,
                beta,
                mean: alpha / (alpha + beta),
                q025: q[0],
                median: q[1],
                q975: q[2],
            });
            for g in 1..=grid {
                let x = g as f64 / (grid + 1) as f64;
                let d = marginal_density(&post, i, j, x);
                curves.push_str(&format!("{},{},{x},{}\n", post.classes[i], post.classes[j], num(d)));
            }
        }
    }
    let manifest = RunManifest::new("fit")
        .classes(&post.classes)
        .samples("observations", cm.total())
        .param("prior", &a.prior.prior)
        .param("grid", grid);
    let body = FitBody {
        posterior_mean: posterior_mean(&post),
        posterior: post,
        marginals,
    };
    write_json(&a.out.join("posterior.json"), &Report { manifest, body })?;
    write_bytes(&a.out.join("marginals.csv"), curves.as_bytes())?;
    Ok(())
}

/// Plain notation for ordinary magnitudes, exponent form for extreme ones.
fn num(x: f64) -> String {
    if x == 0.0 || (1e-4..1e15).contains(&x.abs()) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

// ---------------------------------------------------------------- risk

#[derive(Debug, Serialize, Deserialize)]
struct RiskBody {
    expected_failure_cost: f64,
    table: StrategyRiskTable,
}

fn cmd_risk(a: RiskArgs) -> anyhow::Result<()> {
    let (_, post) = load_posterior(&a.confusion, &a.prior)?;
    let (cfg, source) = load_costs(&a.costs)?;
    let strategies = strategies(&a.costs);
    let table = risk_table(&strategies, &post, &cfg, a.n, a.seed, true)?;

    let mut hist = String::from("scenario,strategy,bin_lo,bin_hi,count\n");
    if let Some(samples) = &table.samples {
        for (s, per_strategy) in samples.iter().enumerate() {
            for (k, draws) in per_strategy.iter().enumerate() {
                let h = Histogram::from_samples(draws, a.bins);
                push_histogram(&mut hist, &format!("{},{}", table.scenarios[s], table.strategies[k].name()), &h);
            }
        }
    }
    let c_fail = sample_failure_cost(&cfg.failure_cost, a.n, a.seed);
    let mut fail_hist = String::from("bin_lo,bin_hi,count\n");
    let h = Histogram::from_samples(&c_fail, a.bins);
    for (b, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(b);
        fail_hist.push_str(&format!("{lo},{hi},{c}\n"));
    }

    let manifest = strategy_params(
        RunManifest::new("risk")
            .seed(a.seed)
            .samples("posterior_draws", a.n as u64)
            .samples("failure_cost_draws", a.n as u64)
            .config_hash(cfg.hash())
            .classes(&post.classes)
            .param("prior", &a.prior.prior)
            .param("costs", source)
            .param("bins", a.bins),
        &strategies,
    );
    let body = RiskBody {
        expected_failure_cost: expected_failure_cost(&cfg.failure_cost),
        table,
    };
    write_json(&a.out.join("risk.json"), &Report { manifest, body })?;
    write_bytes(&a.out.join("cost_histograms.csv"), hist.as_bytes())?;
    write_bytes(&a.out.join("failure_cost_histogram.csv"), fail_hist.as_bytes())?;
    Ok(())
}

fn push_histogram(out: &mut String, prefix: &str, h: &Histogram) {
    for (b, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(b);
        out.push_str(&format!("{prefix},{lo},{hi},{c}\n"));
    }
}

// ---------------------------------------------------------------- threshold

#[derive(Debug, Serialize)]
struct ThresholdBody {
    source_seed: u64,
    source_samples: u64,
    profile: BTreeMap<String, f64>,
    break_even: BreakEven,
}

fn cmd_threshold(a: ThresholdArgs) -> anyhow::Result<()> {
    let text = read_to_string(&a.risk)?;
    let report: Report<RiskBody> = serde_json::from_str(&text).map_err(|e| crate::Error::Parse {
        path: a.risk.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let table = report.body.table;
    let profile = parse_anomaly_profile(&a.profile, &table)?;
    let be = break_even_between(&table, &a.challenger, &a.baseline, &profile)?;

    let mut manifest = RunManifest::new("threshold")
        .classes(&table.scenarios)
        .config_hash(table.config_hash.clone())
        .param("profile", &a.profile)
        .param("challenger", &a.challenger)
        .param("baseline", &a.baseline);
    manifest.seed = report.manifest.seed;
    manifest.samples = report.manifest.samples.clone();
    let body = ThresholdBody {
        source_seed: table.seed,
        source_samples: table.n,
        profile: profile.clone(),
        break_even: be,
    };
    let out = Report { manifest, body };
    match &a.out {
        None => print!("{}", crate::io::to_json(&out)),
        Some(dir) => {
            write_json(&dir.join("threshold.json"), &out)?;
            write_bytes(&dir.join("threshold_curve.csv"), threshold_curve(&table, &a, &profile)?.as_bytes())?;
        }
    }
    Ok(())
}

/// Mixed cost of both strategies over a grid of no-anomaly prevalences.
fn threshold_curve(table: &StrategyRiskTable, a: &ThresholdArgs, profile: &BTreeMap<String, f64>) -> anyhow::Result<String> {
    let mut out = format!("p_no_anomaly,{},{}\n", a.challenger, a.baseline);
    for step in 0..=100 {
        let p = step as f64 / 100.0;
        let mut prevalence: BTreeMap<String, f64> = profile.iter().map(|(k, w)| (k.clone(), (1.0 - p) * w)).collect();
        *prevalence.entry(table.no_anomaly.clone()).or_default() += p;
        let ranked = rank_strategies(table, &ScenarioMix::new(prevalence)?)?;
        let cost = |name: &str| -> anyhow::Result<f64> {
            ranked
                .iter()
                .find(|r: &&RankedStrategy| r.strategy.name() == name)
                .map(|r| r.mixed_cost)
                .ok_or_else(|| anyhow!("strategy `{name}` not in table"))
        };
        out.push_str(&format!("{p},{},{}\n", cost(&a.challenger)?, cost(&a.baseline)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------- vopi

fn cmd_vopi(a: VopiArgs) -> anyhow::Result<()> {
    let (_, post) = load_posterior(&a.confusion, &a.prior)?;
    let (cfg, source) = load_costs(&a.costs)?;
    let strategies = strategies(&a.costs);
    if !(a.per > 0.0 && a.per.is_finite()) {
        bail!("--per must be positive");
    }
    let mix = a.prevalence.as_deref().map(parse_weights).transpose()?.map(ScenarioMix::new).transpose()?;
    let settings = VopiSettings {
        treatment: match a.cfail {
            CfailArg::Sampled => FailureCostTreatment::Sampled,
            CfailArg::Expected => FailureCostTreatment::Expected,
        },
        keep_samples: a.samples,
        ..VopiSettings::new(a.n, a.seed)
    };
    let result: VopiResult = vopi_report(mix.as_ref(), &strategies, &post, &cfg, &settings)?;

    let mut bars = String::from("scenario,prior_optimal,prior_cost,preposterior_cost,vopi,vopi_std_error,per\n");
    for e in &result.scenarios {
        bars.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.scenario,
            e.prior_optimal.name(),
            e.prior_cost.mean * a.per,
            e.preposterior_cost.mean * a.per,
            e.vopi.mean * a.per,
            e.vopi.std_error * a.per,
            a.per
        ));
    }
    let manifest = strategy_params(
        RunManifest::new("vopi")
            .seed(a.seed)
            .samples("outer_draws", a.n as u64)
            .config_hash(cfg.hash())
            .classes(&post.classes)
            .param("prior", &a.prior.prior)
            .param("costs", source)
            .param("per", a.per)
            .param("prevalence", a.prevalence.as_deref().unwrap_or("")),
        &strategies,
    );
    write_json(&a.out.join("vopi.json"), &Report { manifest, body: &result })?;
    write_bytes(&a.out.join("vopi_bars.csv"), bars.as_bytes())?;
    if a.samples {
        let mut out = String::from("scenario,draw,prior_optimal_risk,best_risk\n");
        for e in &result.scenarios {
            for (i, s) in e.samples.iter().flatten().enumerate() {
                out.push_str(&format!("{},{i},{},{}\n", e.scenario, s.prior_optimal, s.best));
            }
        }
        write_bytes(&a.out.join("vopi_samples.csv"), out.as_bytes())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- toy

#[derive(Debug, Serialize)]
struct TrainBody {
    options: TrainOptions,
    shape: NetworkShape,
    train_examples: usize,
    holdout_examples: usize,
    holdout_accuracy: Option<f64>,
    /// `confusion[true][predicted]` on the holdout set.
    holdout_confusion: Vec<Vec<u64>>,
    classes: Vec<&'static str>,
}

fn cmd_toy_train(a: ToyTrainArgs) -> anyhow::Result<()> {
    let train_set = generate_dataset(a.per_class, a.seed);
    let holdout = generate_dataset(a.holdout, a.seed.wrapping_add(1));
    let shape = NetworkShape {
        filters: a.filters,
        hidden: a.hidden,
        ..NetworkShape::default()
    };
    let mut rng = substream(a.seed, StreamId::new(Domain::Training, 0, 0));
    let net = ToyClassifier::new(shape, &mut rng)?;
    let options = TrainOptions {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch,
        seed: a.seed,
    };
    let run = train(net, &train_set, (!holdout.is_empty()).then_some(holdout.as_slice()), &options)?;

    let mut confusion = vec![vec![0u64; DefectClass::ALL.len()]; DefectClass::ALL.len()];
    for img in &holdout {
        confusion[img.label.index()][run.classifier.predict(&img.pixels)] += 1;
    }
    let manifest = RunManifest::new("toy train")
        .seed(a.seed)
        .samples("train_images", train_set.len() as u64)
        .samples("holdout_images", holdout.len() as u64)
        .classes(&DefectClass::ALL.map(|c| c.label().to_string()));
    let body = TrainBody {
        options,
        shape,
        train_examples: train_set.len(),
        holdout_examples: holdout.len(),
        holdout_accuracy: run.curve.last().and_then(|e| e.holdout_accuracy),
        holdout_confusion: confusion,
        classes: DefectClass::ALL.map(|c| c.label()).to_vec(),
    };
    write_bytes(&a.out.join("model.txt"), run.classifier.to_text().as_bytes())?;
    write_bytes(&a.out.join("training_curve.csv"), run.curve_csv().as_bytes())?;
    write_json(&a.out.join("train.json"), &Report { manifest, body })?;
    Ok(())
}

struct LoadedImage {
    pixels: Vec<f64>,
    mask: Option<Vec<bool>>,
    label: Option<DefectClass>,
}

fn class_arg(label: &str) -> anyhow::Result<DefectClass> {
    DefectClass::from_label(label).ok_or_else(|| crate::Error::UnknownLabel(label.to_string()).into())
}

fn load_image(src: &ImageSource) -> anyhow::Result<LoadedImage> {
    if let Some(label) = &src.generate {
        let class = class_arg(label)?;
        let mut rng = substream(src.seed, StreamId::new(Domain::Dataset, 1000 + class.index() as u32, 0));
        let img = generate_image(&mut rng, class);
        return Ok(LoadedImage {
            pixels: img.pixels,
            mask: Some(img.anomaly_mask),
            label: Some(class),
        });
    }
    let path = src.image.as_ref().expect("clap enforces --image or --generate");
    let (pixels, rows, cols) = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        let bytes = std::fs::read(path).map_err(|source| crate::Error::Io {
            path: path.clone(),
            source,
        })?;
        grid_from_pgm(&bytes, path)?
    } else {
        grid_from_csv(&read_to_string(path)?, path)?
    };
    if rows != IMAGE_SIZE || cols != IMAGE_SIZE {
        return Err(crate::Error::Invalid {
            what: "image",
            message: format!("{}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {rows}x{cols}", path.display()),
        }
        .into());
    }
    Ok(LoadedImage {
        pixels,
        mask: None,
        label: None,
    })
}

fn load_model(path: &Path) -> anyhow::Result<ToyClassifier> {
    Ok(ToyClassifier::from_text(&read_to_string(path)?, path)?)
}

fn image_manifest(command: &str, src: &ImageSource) -> RunManifest {
    let m = RunManifest::new(command).classes(&DefectClass::ALL.map(|c| c.label().to_string()));
    match &src.generate {
        Some(label) => m.seed(src.seed).param("generate", label),
        None => m,
    }
}

fn write_grid(dir: &Path, stem: &str, values: &[f64], normalise: bool) -> anyhow::Result<()> {
    write_bytes(&dir.join(format!("{stem}.csv")), grid_to_csv(values, IMAGE_SIZE).as_bytes())?;
    let scaled = if normalise { normalised(values) } else { values.to_vec() };
    write_bytes(&dir.join(format!("{stem}.pgm")), &grid_to_pgm(&scaled, IMAGE_SIZE, IMAGE_SIZE))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct CounterfactualBody {
    true_class: Option<&'static str>,
    initial_class: &'static str,
    target: &'static str,
    final_class: &'static str,
    learning_rate: f64,
    iterations: usize,
    converged: bool,
    flipped: bool,
    initial_loss: f64,
    final_loss: f64,
    /// Euclidean size of the pixel edit.
    perturbation_l2: f64,
}

fn cmd_toy_counterfactual(a: ToyCounterfactualArgs) -> anyhow::Result<()> {
    let net = load_model(&a.source.model)?;
    let img = load_image(&a.source)?;
    let target = class_arg(&a.target)?;
    let opts = CounterfactualOptions {
        learning_rate: a.eta,
        max_iters: a.max_iters,
        tolerance: a.tolerance,
    };
    let trace = counterfactual(&net, &img.pixels, target.index(), &opts)?;
    let delta: Vec<f64> = trace.final_image.iter().zip(&trace.initial).map(|(f, i)| f - i).collect();
    let name = |i: usize| DefectClass::from_index(i).map_or("?", |c| c.label());
    let body = CounterfactualBody {
        true_class: img.label.map(|c| c.label()),
        initial_class: name(trace.initial_class),
        target: target.label(),
        final_class: name(trace.final_class),
        learning_rate: trace.learning_rate,
        iterations: trace.iterations(),
        converged: trace.converged,
        flipped: trace.flipped(),
        initial_loss: trace.losses[0],
        final_loss: *trace.losses.last().unwrap(),
        perturbation_l2: delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
    };
    let manifest = image_manifest("toy counterfactual", &a.source)
        .samples("max_iters", a.max_iters as u64)
        .param("target", target.label())
        .param("eta", a.eta)
        .param("tolerance", a.tolerance);
    write_json(&a.out.join("counterfactual.json"), &Report { manifest, body })?;
    write_bytes(&a.out.join("counterfactual_loss.csv"), trace.loss_csv().as_bytes())?;
    write_grid(&a.out, "input", &trace.initial, false)?;
    write_grid(&a.out, "counterfactual", &trace.final_image, false)?;
    let abs_delta: Vec<f64> = delta.iter().map(|d| d.abs()).collect();
    write_bytes(&a.out.join("delta.csv"), grid_to_csv(&delta, IMAGE_SIZE).as_bytes())?;
    write_bytes(&a.out.join("delta.pgm"), &grid_to_pgm(&normalised(&abs_delta), IMAGE_SIZE, IMAGE_SIZE))?;
    if !trace.converged {
        return Err(NumericalWarning(format!(
            "counterfactual did not reach `{}` within {} iterations (final class `{}`)",
            target.label(),
            a.max_iters,
            name(trace.final_class)
        ))
        .into());
    }
    Ok(())
}

fn normalised(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    values.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
}

#[derive(Debug, Serialize)]
struct MapBody {
    method: &'static str,
    class: &'static str,
    predicted: &'static str,
    probabilities: BTreeMap<&'static str, f64>,
    /// Share of top-fraction map mass inside the ground-truth anomaly mask,
    /// when the image was generated.
    mask_overlap: Option<f64>,
    top_fraction: f64,
}

fn cmd_toy_map(a: ToyMapArgs, cam: bool) -> anyhow::Result<()> {
    let net = load_model(&a.source.model)?;
    let img = load_image(&a.source)?;
    if !(a.top > 0.0 && a.top <= 1.0) {
        bail!("--top must be in (0, 1]");
    }
    let probs = net.probs(&img.pixels);
    let predicted = net.predict(&img.pixels);
    let class = match &a.class {
        Some(label) => class_arg(label)?,
        None => DefectClass::from_index(predicted).expect("prediction within class range"),
    };
    let map: SaliencyMap = if cam {
        class_activation_map(&net, &img.pixels, class.index())?
    } else {
        saliency(&net, &img.pixels, class.index())?
    };
    let method = if cam { "cam" } else { "saliency" };
    let body = MapBody {
        method,
        class: class.label(),
        predicted: DefectClass::from_index(predicted).map_or("?", |c| c.label()),
        probabilities: DefectClass::ALL.iter().map(|c| (c.label(), probs[c.index()])).collect(),
        mask_overlap: img.mask.as_ref().map(|m| mask_overlap(&map, m, a.top)),
        top_fraction: a.top,
    };
    let manifest = image_manifest(&format!("toy {}", if cam { "cam" } else { "saliency" }), &a.source)
        .param("class", class.label())
        .param("top", a.top);
    write_json(&a.out.join(format!("{method}.json")), &Report { manifest, body })?;
    write_grid(&a.out, "input", &img.pixels, false)?;
    write_grid(&a.out, method, &map.values, true)?;
    if let Some(mask) = &img.mask {
        let m: Vec<f64> = mask.iter().map(|&b| f64::from(u8::from(b))).collect();
        write_bytes(&a.out.join("mask.csv"), grid_to_csv(&m, IMAGE_SIZE).as_bytes())?;
    }
    Ok(())
}
