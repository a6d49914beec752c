use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::image::SyntheticRadiograph;
use super::network::{cross_entropy_grad, Params, ToyClassifier};
use crate::error::{Error, Result};
use crate::rng::{self, Domain, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's mini-batches.
    pub loss: f64,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub classifier: ToyClassifier,
    pub curve: Vec<EpochStats>,
}

impl TrainingRun {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_accuracy,holdout_accuracy\n");
        for e in &self.curve {
            let h = e.holdout_accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.train_accuracy, h));
        }
        out
    }
}

pub fn accuracy(classifier: &ToyClassifier, data: &[SyntheticRadiograph]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .iter()
        .filter(|img| classifier.predict(&img.pixels) == img.label.index())
        .count();
    hits as f64 / data.len() as f64
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut Params, grad: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let targets = params.slices_mut();
        let ms = self.m.slices_mut();
        let vs = self.v.slices_mut();
        for (((p, g), m), v) in targets.into_iter().zip(grad.slices()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mini-batch Adam on cross-entropy. Batch order is drawn from `opts.seed`,
/// so runs are reproducible.
pub fn train(
    mut classifier: ToyClassifier,
    data: &[SyntheticRadiograph],
    holdout: Option<&[SyntheticRadiograph]>,
    opts: &TrainOptions,
) -> Result<TrainingRun> {
    if data.is_empty() {
        return Err(Error::invalid("training set", "no examples"));
    }
    let batch = opts.batch_size.max(1);
    let mut adam = Adam {
        m: Params::zeros(&classifier.shape),
        v: Params::zeros(&classifier.shape),
        t: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut rng = rng::substream(opts.seed, StreamId::new(Domain::Training, 1, epoch as u32));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0;
        for idx in order.chunks(batch) {
            let mut grad = Params::zeros(&classifier.shape);
            for &i in idx {
                let img = &data[i];
                let target = img.label.index();
                let fwd = classifier.forward(&img.pixels);
                loss_sum += fwd.loss(target);
                hits += usize::from(fwd.predicted() == target);
                let g = classifier
                    .backward(&img.pixels, &fwd, &cross_entropy_grad(&fwd.probs, target), true, false)
                    .params
                    .unwrap();
                grad.add_scaled(&g, 1.0 / idx.len() as f64);
            }
            adam.step(&mut classifier.params, &grad, opts.learning_rate);
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training diverged at epoch {epoch}")));
        }
        curve.push(EpochStats {
            epoch: epoch + 1,
            loss,
            train_accuracy: hits as f64 / data.len() as f64,
            holdout_accuracy: holdout.map(|h| accuracy(&classifier, h)),
        });
    }
    Ok(TrainingRun { classifier, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{generate_dataset, NetworkShape};

    fn fresh(seed: u64) -> ToyClassifier {
        let mut rng = rng::substream(seed, StreamId::new(Domain::Training, 0, 0));
        ToyClassifier::new(NetworkShape::default(), &mut rng).unwrap()
    }

    #[test]
    fn memorises_single_example() {
        let data = generate_dataset(1, 4);
        let one = &data[..1];
        let opts = TrainOptions {
            epochs: 60,
            learning_rate: 1e-2,
            batch_size: 1,
            seed: 1,
        };
        let run = train(fresh(1), one, None, &opts).unwrap();
        assert!(run.curve.last().unwrap().loss < 1e-2, "{:?}", run.curve.last());
    }

    #[test]
    fn zero_epochs_is_untrained() {
        let data = generate_dataset(2, 4);
        let run = train(fresh(2), &data, None, &TrainOptions { epochs: 0, ..Default::default() }).unwrap();
        assert!(run.curve.is_empty());
        assert_eq!(run.classifier, fresh(2));
        assert!(train(fresh(2), &[], None, &TrainOptions::default()).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let data = generate_dataset(3, 5);
        let opts = TrainOptions {
            epochs: 2,
            ..Default::default()
        };
        let a = train(fresh(3), &data, None, &opts).unwrap();
        let b = train(fresh(3), &data, None, &opts).unwrap();
        assert_eq!(a.classifier, b.classifier);
        assert_eq!(a.curve, b.curve);
    }
}
