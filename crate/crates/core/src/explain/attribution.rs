use serde::{Deserialize, Serialize};

use super::network::{argmax, cross_entropy_grad, prob_grad, ToyClassifier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    /// Absolute input gradient of the class probability.
    Plain,
    /// Gradient-weighted activation map of the final convolution.
    Cam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub size: usize,
    pub values: Vec<f64>,
    pub method: SaliencyMethod,
}

fn check_class(classifier: &ToyClassifier, c: usize) -> Result<()> {
    if c >= classifier.shape.classes {
        return Err(Error::invalid("class", format!("{c} is out of range")));
    }
    Ok(())
}

/// `|∂p_c / ∂z|` for every pixel of `z`.
pub fn saliency(classifier: &ToyClassifier, z: &[f64], c: usize) -> Result<SaliencyMap> {
    check_class(classifier, c)?;
    let fwd = classifier.forward(z);
    let grad = classifier
        .backward(z, &fwd, &prob_grad(&fwd.probs, c), false, true)
        .input
        .unwrap();
    Ok(SaliencyMap {
        size: classifier.shape.input,
        values: grad.into_iter().map(f64::abs).collect(),
        method: SaliencyMethod::Plain,
    })
}

/// Gradient-weighted class activation map.
///
/// Channel weights are spatial means of `∂p_c/∂A` over the final convolution
/// activations `A`; the rectified weighted sum of channels is upsampled to the
/// input size by nearest neighbour and min-max scaled to `[0, 1]` (all zeros
/// when flat).
pub fn class_activation_map(classifier: &ToyClassifier, z: &[f64], c: usize) -> Result<SaliencyMap> {
    check_class(classifier, c)?;
    let s = &classifier.shape;
    let fwd = classifier.forward(z);
    let d_act = classifier
        .backward(z, &fwd, &prob_grad(&fwd.probs, c), false, false)
        .activations;
    let cs = s.conv_side();
    let area = cs * cs;
    let weights: Vec<f64> = d_act.chunks(area).map(|ch| ch.iter().sum::<f64>() / area as f64).collect();
    let mut coarse = vec![0.0; area];
    for (w, act) in weights.iter().zip(fwd.activations.chunks(area)) {
        for (m, a) in coarse.iter_mut().zip(act) {
            *m += w * a;
        }
    }
    for m in &mut coarse {
        *m = m.max(0.0);
    }
    let n = s.input;
    let mut values = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            values[y * n + x] = coarse[(y * cs / n) * cs + x * cs / n];
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in &mut values {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        values.fill(0.0);
    }
    Ok(SaliencyMap {
        size: n,
        values,
        method: SaliencyMethod::Cam,
    })
}

/// Share of the saliency mass of the top `fraction` of pixels that falls
/// inside `mask`.
pub fn mask_overlap(map: &SaliencyMap, mask: &[bool], fraction: f64) -> f64 {
    let top = ((map.values.len() as f64 * fraction).round() as usize).max(1);
    let mut idx: Vec<usize> = (0..map.values.len()).collect();
    idx.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    let total: f64 = idx[..top].iter().map(|&i| map.values[i]).sum();
    if total <= 0.0 {
        return 0.0;
    }
    idx[..top].iter().filter(|&&i| mask[i]).map(|&i| map.values[i]).sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualOptions {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the target is predicted and its cross-entropy is below this.
    pub tolerance: f64,
}

impl Default for CounterfactualOptions {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            max_iters: 2000,
            tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualTrace {
    pub initial: Vec<f64>,
    pub initial_class: usize,
    pub target: usize,
    pub learning_rate: f64,
    /// Loss at every iterate, starting with the unmodified input.
    pub losses: Vec<f64>,
    pub final_image: Vec<f64>,
    pub final_class: usize,
    pub converged: bool,
}

impl CounterfactualTrace {
    pub fn iterations(&self) -> usize {
        self.losses.len() - 1
    }

    pub fn flipped(&self) -> bool {
        self.final_class == self.target
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Gradient descent on the input towards class `target`.
///
/// Each step is `z ← clamp(z − η·∂L/∂z, 0, 1)` with `L` the cross-entropy of
/// the target class. Starting from an input already predicted as `target`
/// performs no iterations.
pub fn counterfactual(
    classifier: &ToyClassifier,
    z: &[f64],
    target: usize,
    opts: &CounterfactualOptions,
) -> Result<CounterfactualTrace> {
    check_class(classifier, target)?;
    let mut image = z.to_vec();
    let mut fwd = classifier.forward(&image);
    let initial_class = fwd.predicted();
    let mut losses = vec![fwd.loss(target)];
    let done = |fwd: &super::Forward, loss: f64| argmax(&fwd.probs) == target && loss < opts.tolerance;
    let mut converged = initial_class == target;
    if !converged {
        for _ in 0..opts.max_iters {
            let grad = classifier
                .backward(&image, &fwd, &cross_entropy_grad(&fwd.probs, target), false, true)
                .input
                .unwrap();
            for (p, g) in image.iter_mut().zip(&grad) {
                *p = (*p - opts.learning_rate * g).clamp(0.0, 1.0);
            }
            fwd = classifier.forward(&image);
            let loss = fwd.loss(target);
            if !loss.is_finite() {
                return Err(Error::Numerical("counterfactual loss is not finite".into()));
            }
            losses.push(loss);
            if done(&fwd, loss) {
                converged = true;
                break;
            }
        }
    }
    Ok(CounterfactualTrace {
        initial: z.to_vec(),
        initial_class,
        target,
        learning_rate: opts.learning_rate,
        losses,
        final_class: fwd.predicted(),
        final_image: image,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::NetworkShape;
    use crate::rng::{substream, Domain, StreamId};
    use rand::Rng;

    fn net() -> ToyClassifier {
        let mut rng = substream(12, StreamId::new(Domain::Training, 0, 0));
        ToyClassifier::new(NetworkShape::default(), &mut rng).unwrap()
    }

    fn input(seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, StreamId::new(Domain::Dataset, 7, 0));
        (0..32 * 32).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn saliency_matches_finite_differences() {
        let n = net();
        let x = input(1);
        let c = 3;
        let map = saliency(&n, &x, c).unwrap();
        let h = 1e-4;
        let mut rng = substream(2, StreamId::new(Domain::Dataset, 8, 0));
        for _ in 0..25 {
            let i = rng.random_range(0..x.len());
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            let fd = (n.probs(&plus)[c] - n.probs(&minus)[c]) / (2.0 * h);
            assert!(
                (map.values[i] - fd.abs()).abs() / (fd.abs() + 1e-8) < 1e-4,
                "pixel {i}: {} vs {}",
                map.values[i],
                fd.abs()
            );
        }
        assert!(map.values.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn activation_gradient_matches_finite_differences() {
        let n = net();
        let x = input(3);
        let c = 1;
        let fwd = n.forward(&x);
        let d_act = n.backward(&x, &fwd, &prob_grad(&fwd.probs, c), false, false).activations;
        let h = 1e-4;
        let mut rng = substream(4, StreamId::new(Domain::Dataset, 8, 1));
        for _ in 0..25 {
            let i = rng.random_range(0..fwd.activations.len());
            let mut plus = fwd.activations.clone();
            plus[i] += h;
            let mut minus = fwd.activations.clone();
            minus[i] -= h;
            let fd = (n.forward_from_activations(&plus).probs[c] - n.forward_from_activations(&minus).probs[c]) / (2.0 * h);
            assert!((d_act[i] - fd).abs() / (fd.abs() + 1e-8) < 1e-4, "{i}: {} vs {fd}", d_act[i]);
        }
    }

    #[test]
    fn zero_network_has_flat_scores_and_no_saliency() {
        let z = ToyClassifier::zeroed(NetworkShape::default()).unwrap();
        let map = saliency(&z, &input(5), 0).unwrap();
        assert!(map.values.iter().all(|&v| v == 0.0));
        let cam = class_activation_map(&z, &input(5), 0).unwrap();
        assert!(cam.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disconnected_pixels_have_zero_saliency() {
        // Only the centre tap of each filter is non-zero, so the two-pixel
        // border never reaches the convolution output.
        let mut n = net();
        let k = n.shape.kernel;
        for f in 0..n.shape.filters {
            for t in 0..k * k {
                if t != (k / 2) * k + k / 2 {
                    n.params.conv_w[f * k * k + t] = 0.0;
                }
            }
        }
        let map = saliency(&n, &input(6), 2).unwrap();
        let size = n.shape.input;
        for y in 0..size {
            for x in 0..size {
                let border = y < 2 || x < 2 || y >= size - 2 || x >= size - 2;
                if border {
                    assert_eq!(map.values[y * size + x], 0.0);
                }
            }
        }
        assert!(map.values.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn cam_rectifies_negative_evidence() {
        // Make class 0 depend negatively on every (positive) activation.
        let mut n = ToyClassifier::zeroed(NetworkShape::default()).unwrap();
        n.params.conv_b.fill(0.5);
        n.params.dense1_w.fill(1.0);
        for h in 0..n.shape.hidden {
            n.params.dense2_w[h] = -1.0;
        }
        let cam = class_activation_map(&n, &input(7), 0).unwrap();
        assert!(cam.values.iter().all(|&v| v == 0.0));
        let cam = class_activation_map(&n, &input(7), 1).unwrap();
        assert!(cam.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn counterfactual_edge_cases() {
        let n = net();
        let x = input(8);
        let current = n.predict(&x);
        let t = counterfactual(&n, &x, current, &CounterfactualOptions::default()).unwrap();
        assert_eq!(t.iterations(), 0);
        assert_eq!(t.final_image, x);

        let other = (current + 1) % 4;
        let frozen = CounterfactualOptions {
            learning_rate: 0.0,
            max_iters: 5,
            tolerance: 0.1,
        };
        let t = counterfactual(&n, &x, other, &frozen).unwrap();
        assert_eq!(t.iterations(), 5);
        assert!(t.losses.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(t.final_image, x);
        assert!(!t.converged);
    }

    #[test]
    fn counterfactual_first_step_descends() {
        let n = net();
        let x: Vec<f64> = input(9).iter().map(|v| 0.25 + 0.5 * v).collect();
        let target = (n.predict(&x) + 2) % 4;
        let opts = CounterfactualOptions {
            learning_rate: 1e-3,
            max_iters: 1,
            tolerance: 0.0,
        };
        let t = counterfactual(&n, &x, target, &opts).unwrap();
        assert!(t.losses[1] < t.losses[0]);
    }

    #[test]
    fn overlap_counts_top_mass() {
        let map = SaliencyMap {
            size: 2,
            values: vec![4.0, 1.0, 3.0, 0.0],
            method: SaliencyMethod::Plain,
        };
        assert_eq!(mask_overlap(&map, &[true, false, false, false], 0.5), 4.0 / 7.0);
        assert_eq!(mask_overlap(&map, &[false, true, false, true], 0.5), 0.0);
    }
}
