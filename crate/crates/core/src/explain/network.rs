//! Convolution → softplus → average pool → dense → softplus → dense → softmax.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_TAG: &str = "modelrisk-toy-classifier";
const FORMAT_VERSION: u32 = 1;

/// Inputs in `[0, 1]` are centred before the convolution.
const INPUT_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            input: 32,
            filters: 8,
            kernel: 5,
            pool: 4,
            hidden: 32,
            classes: 4,
        }
    }
}

impl NetworkShape {
    /// Side length of the convolution output (valid padding).
    pub fn conv_side(&self) -> usize {
        self.input - self.kernel + 1
    }

    pub fn pooled_side(&self) -> usize {
        self.conv_side() / self.pool
    }

    pub fn pooled_len(&self) -> usize {
        self.filters * self.pooled_side() * self.pooled_side()
    }

    pub fn activation_len(&self) -> usize {
        self.filters * self.conv_side() * self.conv_side()
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel > self.input || self.pool == 0 || self.pooled_side() == 0 {
            return Err(Error::invalid("network shape", format!("{self:?}")));
        }
        if self.filters == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::invalid("network shape", format!("{self:?}")));
        }
        Ok(())
    }
}

/// All trainable arrays. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `[filter][ky][kx]`
    pub conv_w: Vec<f64>,
    pub conv_b: Vec<f64>,
    /// `[hidden][pooled]`, pooled index `[filter][py][px]`
    pub dense1_w: Vec<f64>,
    pub dense1_b: Vec<f64>,
    /// `[class][hidden]`
    pub dense2_w: Vec<f64>,
    pub dense2_b: Vec<f64>,
}

impl Params {
    pub const NAMES: [&'static str; 6] = ["conv_w", "conv_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b"];

    pub fn zeros(shape: &NetworkShape) -> Self {
        Self {
            conv_w: vec![0.0; shape.filters * shape.kernel * shape.kernel],
            conv_b: vec![0.0; shape.filters],
            dense1_w: vec![0.0; shape.hidden * shape.pooled_len()],
            dense1_b: vec![0.0; shape.hidden],
            dense2_w: vec![0.0; shape.classes * shape.hidden],
            dense2_b: vec![0.0; shape.classes],
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    pub fn add_scaled(&mut self, other: &Params, k: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub conv_pre: Vec<f64>,
    /// Final convolution activations, `[filter][y][x]`.
    pub activations: Vec<f64>,
    pub pooled: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Forward {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }

    /// Cross-entropy against class `target`.
    pub fn loss(&self, target: usize) -> f64 {
        // log-sum-exp around the top logit, with ln_1p so confident
        // predictions keep full relative precision in tiny losses.
        let top = argmax(&self.logits);
        let m = self.logits[top];
        let rest: f64 = self
            .logits
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, l)| (l - m).exp())
            .sum();
        ((m - self.logits[target]) + rest.ln_1p()).max(0.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |b, (i, x)| if *x > v[b] { i } else { b })
}

/// Outputs of a backward pass.
pub struct Backward {
    pub params: Option<Params>,
    pub input: Option<Vec<f64>>,
    /// Gradient with respect to the final convolution activations.
    pub activations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    pub shape: NetworkShape,
    pub params: Params,
}

impl ToyClassifier {
    /// He-style random initialisation.
    pub fn new<R: Rng>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = Params::zeros(&shape);
        let mut fill = |v: &mut Vec<f64>, fan_in: usize| {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            v.iter_mut().for_each(|x| *x = d.sample(rng));
        };
        fill(&mut params.conv_w, shape.kernel * shape.kernel);
        fill(&mut params.dense1_w, shape.pooled_len());
        fill(&mut params.dense2_w, shape.hidden);
        Ok(Self { shape, params })
    }

    /// Every parameter zero: uniform class scores for any input.
    pub fn zeroed(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            params: Params::zeros(&shape),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let s = &self.shape;
        assert_eq!(x.len(), s.input * s.input, "input size");
        let (n, k, cs) = (s.input, s.kernel, s.conv_side());
        let p = &self.params;

        let mut conv_pre = vec![0.0; s.activation_len()];
        for f in 0..s.filters {
            let w = &p.conv_w[f * k * k..(f + 1) * k * k];
            for y in 0..cs {
                for xx in 0..cs {
                    let mut acc = p.conv_b[f];
                    for u in 0..k {
                        let row = &x[(y + u) * n + xx..(y + u) * n + xx + k];
                        let wr = &w[u * k..(u + 1) * k];
                        acc += row.iter().zip(wr).map(|(a, b)| (a - INPUT_OFFSET) * b).sum::<f64>();
                    }
                    conv_pre[(f * cs + y) * cs + xx] = acc;
                }
            }
        }
        let activations: Vec<f64> = conv_pre.iter().map(|&v| softplus(v)).collect();
        self.head(conv_pre, activations)
    }

    /// Runs the layers after the convolution on given activations.
    pub fn forward_from_activations(&self, activations: &[f64]) -> Forward {
        self.head(vec![f64::NAN; activations.len()], activations.to_vec())
    }

    fn head(&self, conv_pre: Vec<f64>, activations: Vec<f64>) -> Forward {
        let s = &self.shape;
        let p = &self.params;
        let (cs, ps, pool) = (s.conv_side(), s.pooled_side(), s.pool);
        let norm = 1.0 / (pool * pool) as f64;
        let mut pooled = vec![0.0; s.pooled_len()];
        for f in 0..s.filters {
            for py in 0..ps {
                for px in 0..ps {
                    let mut acc = 0.0;
                    for dy in 0..pool {
                        let base = (f * cs + py * pool + dy) * cs + px * pool;
                        acc += activations[base..base + pool].iter().sum::<f64>();
                    }
                    pooled[(f * ps + py) * ps + px] = acc * norm;
                }
            }
        }
        let m = pooled.len();
        let hidden_pre: Vec<f64> = (0..s.hidden)
            .map(|h| p.dense1_b[h] + dot(&p.dense1_w[h * m..(h + 1) * m], &pooled))
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| softplus(v)).collect();
        let logits: Vec<f64> = (0..s.classes)
            .map(|c| p.dense2_b[c] + dot(&p.dense2_w[c * s.hidden..(c + 1) * s.hidden], &hidden))
            .collect();
        let probs = softmax(&logits);
        Forward {
            conv_pre,
            activations,
            pooled,
            hidden_pre,
            hidden,
            logits,
            probs,
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        self.forward(x).predicted()
    }

    /// Back-propagates `d_logits` through a cached forward pass of `x`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, x: &[f64], fwd: &Forward, d_logits: &[f64], want_params: bool, want_input: bool) -> Backward {
        let s = &self.shape;
        let p = &self.params;
        let (n, k, cs, ps, pool) = (s.input, s.kernel, s.conv_side(), s.pooled_side(), s.pool);
        let m = fwd.pooled.len();
        let mut g = want_params.then(|| Params::zeros(s));

        let mut d_hidden = vec![0.0; s.hidden];
        for c in 0..s.classes {
            let w = &p.dense2_w[c * s.hidden..(c + 1) * s.hidden];
            for h in 0..s.hidden {
                d_hidden[h] += w[h] * d_logits[c];
            }
            if let Some(g) = g.as_mut() {
                g.dense2_b[c] = d_logits[c];
                for h in 0..s.hidden {
                    g.dense2_w[c * s.hidden + h] = d_logits[c] * fwd.hidden[h];
                }
            }
        }
        let d_hidden_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&fwd.hidden_pre)
            .map(|(d, &z)| d * sigmoid(z))
            .collect();
        let mut d_pooled = vec![0.0; m];
        for h in 0..s.hidden {
            let dh = d_hidden_pre[h];
            let w = &p.dense1_w[h * m..(h + 1) * m];
            for (dp, wi) in d_pooled.iter_mut().zip(w) {
                *dp += wi * dh;
            }
            if let Some(g) = g.as_mut() {
                g.dense1_b[h] = dh;
                for (gw, pv) in g.dense1_w[h * m..(h + 1) * m].iter_mut().zip(&fwd.pooled) {
                    *gw = dh * pv;
                }
            }
        }
        let norm = 1.0 / (pool * pool) as f64;
        let mut d_act = vec![0.0; s.activation_len()];
        for f in 0..s.filters {
            for y in 0..ps * pool {
                for xx in 0..ps * pool {
                    d_act[(f * cs + y) * cs + xx] = d_pooled[(f * ps + y / pool) * ps + xx / pool] * norm;
                }
            }
        }

        let mut d_input = want_input.then(|| vec![0.0; n * n]);
        if want_params || want_input {
            for f in 0..s.filters {
                let w = &p.conv_w[f * k * k..(f + 1) * k * k];
                for y in 0..cs {
                    for xx in 0..cs {
                        let i = (f * cs + y) * cs + xx;
                        let d = d_act[i] * sigmoid(fwd.conv_pre[i]);
                        if d == 0.0 {
                            continue;
                        }
                        if let Some(g) = g.as_mut() {
                            g.conv_b[f] += d;
                            for u in 0..k {
                                for v in 0..k {
                                    g.conv_w[(f * k + u) * k + v] += d * (x[(y + u) * n + xx + v] - INPUT_OFFSET);
                                }
                            }
                        }
                        if let Some(dx) = d_input.as_mut() {
                            for u in 0..k {
                                for v in 0..k {
                                    dx[(y + u) * n + xx + v] += d * w[u * k + v];
                                }
                            }
                        }
                    }
                }
            }
        }
        Backward {
            params: g,
            input: d_input,
            activations: d_act,
        }
    }

    /// Writes the versioned text format: a header, a shape manifest, then one
    /// `array <name> <len>` line followed by its values per parameter array.
    pub fn to_text(&self) -> String {
        let s = &self.shape;
        let mut out = format!("{FORMAT_TAG} {FORMAT_VERSION}\n");
        writeln!(
            out,
            "shape input={} filters={} kernel={} pool={} hidden={} classes={}",
            s.input, s.filters, s.kernel, s.pool, s.hidden, s.classes
        )
        .unwrap();
        for (name, values) in Params::NAMES.iter().zip(self.params.slices()) {
            writeln!(out, "array {name} {}", values.len()).unwrap();
            let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            column: 1,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        if header != format!("{FORMAT_TAG} {FORMAT_VERSION}") {
            return Err(err(ln, format!("unsupported header `{header}`")));
        }
        let (ln, shape_line) = lines.next().ok_or_else(|| err(2, "missing shape line".into()))?;
        let mut dims = [0usize; 6];
        let keys = ["input", "filters", "kernel", "pool", "hidden", "classes"];
        let fields: Vec<&str> = shape_line.split_whitespace().collect();
        if fields.first() != Some(&"shape") || fields.len() != 7 {
            return Err(err(ln, "malformed shape line".into()));
        }
        for (slot, (field, key)) in dims.iter_mut().zip(fields[1..].iter().zip(keys)) {
            let value = field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(ln, format!("expected `{key}=<n>`, found `{field}`")))?;
            *slot = value;
        }
        let shape = NetworkShape {
            input: dims[0],
            filters: dims[1],
            kernel: dims[2],
            pool: dims[3],
            hidden: dims[4],
            classes: dims[5],
        };
        shape.validate().map_err(|e| err(ln, e.to_string()))?;
        let mut params = Params::zeros(&shape);
        for (name, target) in Params::NAMES.iter().zip(params.slices_mut()) {
            let (ln, decl) = lines.next().ok_or_else(|| err(0, format!("missing array {name}")))?;
            if decl != format!("array {name} {}", target.len()) {
                return Err(err(ln, format!("expected `array {name} {}`", target.len())));
            }
            let (ln, data) = lines.next().ok_or_else(|| err(ln + 1, format!("missing data for {name}")))?;
            let values: Vec<f64> = data
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(ln, e.to_string()))?;
            if values.len() != target.len() {
                return Err(err(ln, format!("{name}: expected {} values, found {}", target.len(), values.len())));
            }
            *target = values;
        }
        Ok(Self { shape, params })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `∂p_c/∂logits` for softmax probabilities `probs`.
pub(crate) fn prob_grad(probs: &[f64], c: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| probs[c] * (if k == c { 1.0 } else { 0.0 } - pk))
        .collect()
}

/// `∂(−ln p_t)/∂logits`.
pub(crate) fn cross_entropy_grad(probs: &[f64], t: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &pk)| pk - if k == t { 1.0 } else { 0.0 })
        .collect()
}
