//! Conjugate Dirichlet-multinomial model of classifier reliability.
//!
//! Row `i` of a confusion matrix is treated as a multinomial draw with
//! probability vector `θᵢ = Pr(output | true class i)`. A Dirichlet(α) prior on
//! each row updates in closed form to Dirichlet(α + Cᵢ).

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Test-set counts: rows are true classes, columns are model outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = classes.len();
        if k == 0 {
            return Err(Error::invalid("confusion matrix", "no classes"));
        }
        for (i, a) in classes.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::invalid("confusion matrix", "empty class label"));
            }
            if classes[..i].contains(a) {
                return Err(Error::invalid("confusion matrix", format!("duplicate label `{a}`")));
            }
        }
        if counts.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: counts.len(),
            });
        }
        for row in &counts {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    actual: row.len(),
                });
            }
        }
        if counts.iter().all(|r| r.iter().all(|&c| c == 0)) {
            return Err(Error::invalid("confusion matrix", "all rows are empty"));
        }
        Ok(Self { classes, counts })
    }

    /// Parses the `true_class,<label1>,...,<labelK>` CSV layout.
    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, column: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            column,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());

        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<(String, Vec<u64>, usize)> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, 1, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            match &header {
                None => {
                    if record.get(0) != Some("true_class") {
                        return Err(parse_err(line, 1, "header must start with `true_class`".into()));
                    }
                    let labels: Vec<String> = record.iter().skip(1).map(str::to_string).collect();
                    if labels.is_empty() {
                        return Err(parse_err(line, 2, "header lists no class labels".into()));
                    }
                    header = Some(labels);
                }
                Some(labels) => {
                    if record.len() != labels.len() + 1 {
                        return Err(parse_err(
                            line,
                            record.len().min(labels.len() + 1) + 1,
                            format!("expected {} fields, found {}", labels.len() + 1, record.len()),
                        ));
                    }
                    let label = record[0].to_string();
                    let mut counts = Vec::with_capacity(labels.len());
                    for (j, field) in record.iter().enumerate().skip(1) {
                        let c: u64 = field.parse().map_err(|_| {
                            parse_err(line, j + 1, format!("`{field}` is not a non-negative integer count"))
                        })?;
                        counts.push(c);
                    }
                    rows.push((label, counts, line));
                }
            }
        }
        let labels = header.ok_or_else(|| parse_err(1, 1, "empty file".into()))?;
        if rows.len() != labels.len() {
            return Err(parse_err(
                rows.last().map_or(1, |r| r.2),
                1,
                format!("expected {} class rows, found {}", labels.len(), rows.len()),
            ));
        }
        // Rows may come in any order but must cover exactly the header labels.
        let mut counts = vec![Vec::new(); labels.len()];
        for (label, row, line) in rows {
            let i = labels
                .iter()
                .position(|l| *l == label)
                .ok_or_else(|| parse_err(line, 1, format!("row label `{label}` is not in the header")))?;
            if !counts[i].is_empty() {
                return Err(parse_err(line, 1, format!("duplicate row `{label}`")));
            }
            counts[i] = row;
        }
        Self::new(labels, counts).map_err(|e| parse_err(1, 1, e.to_string()))
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        Self::from_csv_str(&text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true_class");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(label);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.len()).map(|i| self.row_total(i)).sum()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Elementwise sum of two matrices over the same labels.
    pub fn combined(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.classes != other.classes {
            return Err(Error::invalid("confusion matrix", "class labels differ"));
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            classes: self.classes.clone(),
            counts,
        })
    }
}

/// Per-true-class Dirichlet posterior over model-output probabilities.
///
/// Concentrations are stored as `f64`; with an integral prior every entry is an
/// integer below 2^53 and therefore exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityPosterior {
    pub classes: Vec<String>,
    pub prior_alpha: Vec<f64>,
    pub posterior_alpha: Vec<Vec<f64>>,
}

/// Uniform Dirichlet prior of dimension `k`.
pub fn uniform_prior(k: usize) -> Vec<f64> {
    vec![1.0; k]
}

pub fn fit_posterior(cm: &ConfusionMatrix, prior_alpha: &[f64]) -> Result<ReliabilityPosterior> {
    if prior_alpha.len() != cm.len() {
        return Err(Error::DimensionMismatch {
            expected: cm.len(),
            actual: prior_alpha.len(),
        });
    }
    for (index, &value) in prior_alpha.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositivePrior { index, value });
        }
    }
    let posterior_alpha = cm
        .counts()
        .iter()
        .map(|row| row.iter().zip(prior_alpha).map(|(&c, &a)| a + c as f64).collect())
        .collect();
    Ok(ReliabilityPosterior {
        classes: cm.classes().to_vec(),
        prior_alpha: prior_alpha.to_vec(),
        posterior_alpha,
    })
}

impl ReliabilityPosterior {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.posterior_alpha[i].iter().sum()
    }

    /// Conditions on further test-set evidence.
    pub fn updated(&self, more: &ConfusionMatrix) -> Result<ReliabilityPosterior> {
        if more.classes() != self.classes.as_slice() {
            return Err(Error::invalid("confusion matrix", "class labels differ from posterior"));
        }
        let posterior_alpha = self
            .posterior_alpha
            .iter()
            .zip(more.counts())
            .map(|(row, counts)| row.iter().zip(counts).map(|(&a, &c)| a + c as f64).collect())
            .collect();
        Ok(ReliabilityPosterior {
            classes: self.classes.clone(),
            prior_alpha: self.prior_alpha.clone(),
            posterior_alpha,
        })
    }

    /// Whether every concentration is a whole number.
    pub fn is_integral(&self) -> bool {
        self.posterior_alpha.iter().flatten().all(|a| a.fract() == 0.0)
    }

    pub fn row_sampler(&self, i: usize) -> DirichletSampler {
        DirichletSampler::new(&self.posterior_alpha[i])
    }
}

/// Analytic Dirichlet mean of each row.
pub fn posterior_mean(p: &ReliabilityPosterior) -> Vec<Vec<f64>> {
    p.posterior_alpha
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            row.iter().map(|a| a / total).collect()
        })
        .collect()
}

/// Draws from Dirichlet(α) by normalising independent Gamma(αⱼ, 1) variates.
#[derive(Debug, Clone)]
pub struct DirichletSampler {
    gammas: Vec<Gamma<f64>>,
}

impl DirichletSampler {
    /// `alpha` must be strictly positive and finite.
    pub fn new(alpha: &[f64]) -> Self {
        let gammas = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive concentration"))
            .collect();
        Self { gammas }
    }

    pub fn dim(&self) -> usize {
        self.gammas.len()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut total = 0.0;
        for (o, g) in out.iter_mut().zip(&self.gammas) {
            *o = g.sample(rng);
            total += *o;
        }
        if total > 0.0 {
            for o in out.iter_mut() {
                *o /= total;
            }
        } else {
            // All gammas underflowed (tiny α); fall back to the largest-α vertex.
            out.fill(0.0);
            out[0] = 1.0;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One joint draw of all reliability rows, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilitySample {
    k: usize,
    theta: Vec<f64>,
}

impl ReliabilitySample {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.theta[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.k + j]
    }
}

/// Seeded source of joint reliability draws.
///
/// Draws are produced in chunks of [`rng::CHUNK`]; chunk `k` uses its own
/// substream, so [`ReliabilitySampler::sample`] (parallel) and
/// [`ReliabilitySampler::iter`] (sequential) yield the same sequence.
#[derive(Debug, Clone)]
pub struct ReliabilitySampler {
    rows: Vec<DirichletSampler>,
    seed: u64,
}

impl ReliabilitySampler {
    pub fn new(p: &ReliabilityPosterior, seed: u64) -> Self {
        Self {
            rows: (0..p.len()).map(|i| p.row_sampler(i)).collect(),
            seed,
        }
    }

    fn chunk(&self, index: usize, len: usize) -> Vec<ReliabilitySample> {
        let mut rng = rng::substream(self.seed, rng::StreamId::new(Domain::Reliability, 0, index as u32));
        self.draw(&mut rng, len)
    }

    fn draw<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<ReliabilitySample> {
        let k = self.rows.len();
        (0..len)
            .map(|_| {
                let mut theta = vec![0.0; k * k];
                for (i, row) in self.rows.iter().enumerate() {
                    row.sample_into(rng, &mut theta[i * k..(i + 1) * k]);
                }
                ReliabilitySample { k, theta }
            })
            .collect()
    }

    /// First `n` draws, generated in parallel.
    pub fn sample(&self, n: usize) -> Vec<ReliabilitySample> {
        rng::par_chunks(self.seed, Domain::Reliability, 0, n, |rng, len| self.draw(rng, len))
            .into_iter()
            .flatten()
            .collect()
    }

    /// First `n` draws, generated lazily one chunk at a time.
    pub fn iter(&self, n: usize) -> impl Iterator<Item = ReliabilitySample> + '_ {
        rng::chunk_lengths(n)
            .enumerate()
            .flat_map(move |(k, len)| self.chunk(k, len))
    }
}

/// `n` i.i.d. joint draws from the posterior.
pub fn sample_reliability(p: &ReliabilityPosterior, n: usize, seed: u64) -> Vec<ReliabilitySample> {
    ReliabilitySampler::new(p, seed).sample(n)
}

/// Marginal of cell `(i, j)`: Beta(αᵢⱼ, Σⱼ αᵢⱼ − αᵢⱼ).
pub fn marginal_beta(p: &ReliabilityPosterior, i: usize, j: usize) -> (f64, f64) {
    let a = p.posterior_alpha[i][j];
    (a, p.row_sum(i) - a)
}

/// Quantiles of the Beta marginal of cell `(i, j)`.
pub fn marginal_density_summary(
    p: &ReliabilityPosterior,
    i: usize,
    j: usize,
    quantiles: &[f64],
) -> Result<Vec<f64>> {
    if i >= p.len() || j >= p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: i.max(j) + 1,
        });
    }
    let (a, b) = marginal_beta(p, i, j);
    let beta = Beta::new(a, b).map_err(|e| Error::Numerical(e.to_string()))?;
    quantiles
        .iter()
        .map(|&q| {
            if q > 0.0 && q < 1.0 {
                Ok(beta.inverse_cdf(q))
            } else {
                Err(Error::InvalidQuantile(q))
            }
        })
        .collect()
}

/// Beta marginal density of cell `(i, j)` at `x`.
pub fn marginal_density(p: &ReliabilityPosterior, i: usize, j: usize, x: f64) -> f64 {
    use statrs::distribution::Continuous;
    let (a, b) = marginal_beta(p, i, j);
    Beta::new(a, b).map(|d| d.pdf(x)).unwrap_or(f64::NAN)
}
