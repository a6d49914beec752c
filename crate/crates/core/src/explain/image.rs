use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain, StreamId};

/// Side length of generated images.
pub const IMAGE_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    None,
    Cracking,
    Porosity,
    LackOfPenetration,
}

impl DefectClass {
    pub const ALL: [DefectClass; 4] = [
        DefectClass::None,
        DefectClass::Cracking,
        DefectClass::Porosity,
        DefectClass::LackOfPenetration,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            DefectClass::None => "none",
            DefectClass::Cracking => "cracking",
            DefectClass::Porosity => "porosity",
            DefectClass::LackOfPenetration => "lack_of_penetration",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == label)
    }
}

/// A weld-like greyscale image, row-major, with the painted anomaly pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRadiograph {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub label: DefectClass,
    pub anomaly_mask: Vec<bool>,
}

impl SyntheticRadiograph {
    pub fn mask_len(&self) -> usize {
        self.anomaly_mask.iter().filter(|&&m| m).count()
    }
}

const DARKEN: f64 = 0.35;

struct Canvas {
    n: usize,
    px: Vec<f64>,
    mask: Vec<bool>,
}

impl Canvas {
    fn darken(&mut self, r: isize, c: isize, amount: f64) {
        let n = self.n as isize;
        if (0..n).contains(&r) && (0..n).contains(&c) {
            let i = (r * n + c) as usize;
            if !self.mask[i] {
                self.px[i] -= amount;
                self.mask[i] = true;
            }
        }
    }
}

/// Draws one image of class `label`.
///
/// Background is a bright horizontal weld bead with low-frequency texture and
/// pixel noise. Lack of penetration is a dark full-width band along the bead,
/// cracking a thin meandering dark line of partial length, porosity a handful
/// of small dark discs.
pub fn generate_image<R: Rng>(rng: &mut R, label: DefectClass) -> SyntheticRadiograph {
    let n = IMAGE_SIZE;
    let noise = Normal::new(0.0, 0.03).unwrap();
    let centre = 14 + rng.random_range(0i32..4) as isize;
    let half_width = 6.0 + rng.random_range(0.0..1.5);
    let (fx, fy, phase, amp) = (
        rng.random_range(0.1..0.4),
        rng.random_range(0.1..0.4),
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.01..0.04),
    );
    let mut px = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let d = (r as f64 - centre as f64).abs();
            let bead = if d <= half_width { 0.62 } else { 0.62 - 0.25 * ((d - half_width) / 3.0).min(1.0) };
            let texture = amp * (fx * c as f64 + fy * r as f64 + phase).sin();
            px[r * n + c] = bead + texture + noise.sample(rng);
        }
    }
    let mut canvas = Canvas {
        n,
        px,
        mask: vec![false; n * n],
    };
    let depth = DARKEN + rng.random_range(-0.05..0.05);
    match label {
        DefectClass::None => {}
        DefectClass::LackOfPenetration => {
            let thickness = rng.random_range(2i32..4) as isize;
            let top = centre + rng.random_range(-2i32..=1) as isize;
            for r in top..top + thickness {
                for c in 0..n as isize {
                    canvas.darken(r, c, depth);
                }
            }
        }
        DefectClass::Cracking => {
            let len = rng.random_range(22i32..29) as isize;
            let start = rng.random_range(2..(n as i32 - len as i32 - 1)) as isize;
            let mut r = centre + rng.random_range(-2i32..=2) as isize;
            for c in start..start + len {
                canvas.darken(r, c, depth);
                let step: f64 = rng.random();
                let dr = if step < 0.15 { -1 } else if step > 0.85 { 1 } else { 0 };
                if dr != 0 && (r + dr - centre).abs() <= 4 {
                    // Keep the line 8-connected when stepping vertically.
                    r += dr;
                    canvas.darken(r, c, depth);
                }
            }
        }
        DefectClass::Porosity => {
            let count = rng.random_range(2..5);
            for _ in 0..count {
                let cr = centre as f64 + rng.random_range(-4.0..4.0);
                let cc = rng.random_range(3.0..(n as f64 - 3.0));
                let radius: f64 = rng.random_range(1.6..2.4);
                let reach = radius.ceil() as isize;
                for r in (cr.round() as isize - reach)..=(cr.round() as isize + reach) {
                    for c in (cc.round() as isize - reach)..=(cc.round() as isize + reach) {
                        let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                        if d2 <= radius * radius {
                            canvas.darken(r, c, depth);
                        }
                    }
                }
            }
        }
    }
    for p in &mut canvas.px {
        *p = p.clamp(0.0, 1.0);
    }
    SyntheticRadiograph {
        size: n,
        pixels: canvas.px,
        label,
        anomaly_mask: canvas.mask,
    }
}

/// Balanced dataset of `n_per_class` images per class in shuffled order.
pub fn generate_dataset(n_per_class: usize, seed: u64) -> Vec<SyntheticRadiograph> {
    let mut out = Vec::with_capacity(4 * n_per_class);
    for class in DefectClass::ALL {
        let mut rng = rng::substream(seed, StreamId::new(Domain::Dataset, class.index() as u32, 0));
        out.extend((0..n_per_class).map(|_| generate_image(&mut rng, class)));
    }
    let mut rng = rng::substream(seed, StreamId::new(Domain::Dataset, 99, 0));
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_match_labels() {
        let data = generate_dataset(20, 3);
        assert_eq!(data.len(), 80);
        for img in &data {
            assert!(img.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(img.mask_len() == 0, img.label == DefectClass::None);
        }
        for c in DefectClass::ALL {
            assert_eq!(data.iter().filter(|i| i.label == c).count(), 20);
        }
    }

    #[test]
    fn lack_of_penetration_band_spans_width() {
        for img in generate_dataset(10, 8).iter().filter(|i| i.label == DefectClass::LackOfPenetration) {
            let full_rows = (0..IMAGE_SIZE)
                .filter(|r| (0..IMAGE_SIZE).all(|c| img.anomaly_mask[r * IMAGE_SIZE + c]))
                .count();
            assert!(full_rows >= 2);
            assert_eq!(img.mask_len(), full_rows * IMAGE_SIZE);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_dataset(5, 1), generate_dataset(5, 1));
        assert_ne!(generate_dataset(5, 1), generate_dataset(5, 2));
    }

    #[test]
    fn labels_round_trip() {
        for c in DefectClass::ALL {
            assert_eq!(DefectClass::from_label(c.label()), Some(c));
            assert_eq!(DefectClass::from_index(c.index()), Some(c));
        }
        assert_eq!(DefectClass::from_label("slag"), None);
    }
}
