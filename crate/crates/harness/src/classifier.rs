//! Shape classifier used to score concept detection.
//!
//! Features come from the mask of pixels above half the image maximum:
//! fill ratio of the bounding box, two fourth-moment ratios, normalized
//! second moment, mean |dx dy|, bounding-box aspect ratio and area. They are
//! standardized and fed to a softmax regression trained by gradient descent.

use seedmem_core::RngStream;
use seedmem_toyldm::{ConceptDetector, ConceptLabel, ToyImage, IMAGE_SIDE};
use thiserror::Error;

pub const NUM_FEATURES: usize = 7;
pub const ACCURACY_GATE: f64 = 0.95;
const TRAIN_STEPS: usize = 3000;
const TRAIN_LR: f64 = 0.5;
const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training failure: held-out accuracy {accuracy:.3} below {gate}")]
    TrainingFailure { accuracy: f64, gate: f64 },
}

/// Shape descriptors of the thresholded image.
pub fn features(image: &ToyImage) -> [f64; NUM_FEATURES] {
    let px = image.data();
    let n = IMAGE_SIDE;
    let peak = px.iter().copied().fold(0f32, f32::max) as f64 + 1e-6;
    let mask: Vec<bool> = px.iter().map(|&v| v as f64 > 0.5 * peak).collect();
    let area = mask.iter().filter(|&&b| b).count() as f64;
    if area == 0.0 {
        return [0.0; NUM_FEATURES];
    }
    let coords = || (0..n * n).filter(|&i| mask[i]).map(|i| ((i / n) as f64 + 0.5, (i % n) as f64 + 0.5));
    let (sy, sx) = coords().fold((0.0, 0.0), |(a, b), (y, x)| (a + y, b + x));
    let (cy, cx) = (sy / area, sx / area);
    let (mut r2, mut m4, mut mx, mut diag) = (0.0, 0.0, 0.0, 0.0);
    for (y, x) in coords() {
        let (dy, dx) = (y - cy, x - cx);
        r2 += dx * dx + dy * dy;
        m4 += dx.powi(4) + dy.powi(4);
        mx += dx * dx * dy * dy;
        diag += (dx * dy).abs();
    }
    let mrr = r2 / area;
    let rows: Vec<usize> = (0..n).filter(|&r| (0..n).any(|c| mask[r * n + c])).collect();
    let cols: Vec<usize> = (0..n).filter(|&c| (0..n).any(|r| mask[r * n + c])).collect();
    let h = (rows[rows.len() - 1] - rows[0] + 1) as f64;
    let w = (cols[cols.len() - 1] - cols[0] + 1) as f64;
    let denom = mrr * mrr + 1e-6;
    [
        area / (h * w),
        m4 / area / denom,
        mx / area / denom,
        mrr / area,
        diag / area / (mrr + 1e-6),
        h / (w + 1e-6),
        area / (n * n) as f64,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    mean: [f64; NUM_FEATURES],
    std: [f64; NUM_FEATURES],
    num_classes: usize,
    /// `NUM_FEATURES x num_classes`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    held_out_accuracy: f64,
}

/// Trains on a random 80% of `data` and checks accuracy on the rest.
pub fn train_toy_classifier(data: &[ToyImage], rng: &mut RngStream) -> Result<ToyClassifier, ClassifierError> {
    let num_classes = data.iter().map(|i| i.label.index()).max().unwrap_or(0) + 1;
    for c in 1..num_classes {
        let count = data.iter().filter(|i| i.label.index() == c).count();
        if count < 50 {
            return Err(ClassifierError::InvalidArgument(format!("class {c} has {count} images, need 50")));
        }
    }
    if data.is_empty() {
        return Err(ClassifierError::InvalidArgument("no images".into()));
    }
    let perm = rng.permutation(data.len());
    let n_test = ((data.len() as f64 * HELD_OUT_FRACTION) as usize).max(1);
    let (test_idx, train_idx) = perm.split_at(n_test);
    let feats: Vec<[f64; NUM_FEATURES]> = data.iter().map(features).collect();

    let mut mean = [0.0; NUM_FEATURES];
    let mut std = [0.0; NUM_FEATURES];
    for &i in train_idx {
        for f in 0..NUM_FEATURES {
            mean[f] += feats[i][f];
        }
    }
    mean.iter_mut().for_each(|m| *m /= train_idx.len() as f64);
    for &i in train_idx {
        for f in 0..NUM_FEATURES {
            std[f] += (feats[i][f] - mean[f]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / train_idx.len() as f64).sqrt() + 1e-6);

    let mut clf = ToyClassifier {
        mean,
        std,
        num_classes,
        weights: vec![0.0; NUM_FEATURES * num_classes],
        bias: vec![0.0; num_classes],
        held_out_accuracy: 0.0,
    };
    let x: Vec<[f64; NUM_FEATURES]> = train_idx.iter().map(|&i| clf.standardize(&feats[i])).collect();
    let y: Vec<usize> = train_idx.iter().map(|&i| data[i].label.index()).collect();
    let m = x.len() as f64;
    for _ in 0..TRAIN_STEPS {
        let mut gw = vec![0.0; NUM_FEATURES * num_classes];
        let mut gb = vec![0.0; num_classes];
        for (xi, &yi) in x.iter().zip(&y) {
            let mut p = clf.probabilities_std(xi);
            p[yi] -= 1.0;
            for c in 0..num_classes {
                let g = p[c] / m;
                gb[c] += g;
                for f in 0..NUM_FEATURES {
                    gw[f * num_classes + c] += xi[f] * g;
                }
            }
        }
        for (w, g) in clf.weights.iter_mut().zip(&gw) {
            *w -= TRAIN_LR * g;
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= TRAIN_LR * g;
        }
    }
    let correct = test_idx.iter().filter(|&&i| clf.classify_features(&feats[i]) == data[i].label).count();
    clf.held_out_accuracy = correct as f64 / test_idx.len() as f64;
    if clf.held_out_accuracy < ACCURACY_GATE {
        return Err(ClassifierError::TrainingFailure { accuracy: clf.held_out_accuracy, gate: ACCURACY_GATE });
    }
    Ok(clf)
}

impl ToyClassifier {
    pub fn held_out_accuracy(&self) -> f64 {
        self.held_out_accuracy
    }

    fn standardize(&self, f: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for i in 0..NUM_FEATURES {
            out[i] = (f[i] - self.mean[i]) / self.std[i];
        }
        out
    }

    fn probabilities_std(&self, x: &[f64; NUM_FEATURES]) -> Vec<f64> {
        let nc = self.num_classes;
        let mut logits: Vec<f64> =
            (0..nc).map(|c| self.bias[c] + (0..NUM_FEATURES).map(|f| x[f] * self.weights[f * nc + c]).sum::<f64>()).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logits.iter_mut().for_each(|l| *l = (*l - top).exp());
        let total: f64 = logits.iter().sum();
        logits.iter_mut().for_each(|l| *l /= total);
        logits
    }

    /// Class probabilities, index = label id.
    pub fn probabilities(&self, image: &ToyImage) -> Vec<f64> {
        self.probabilities_std(&self.standardize(&features(image)))
    }

    fn classify_features(&self, f: &[f64; NUM_FEATURES]) -> ConceptLabel {
        let p = self.probabilities_std(&self.standardize(f));
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap_or(0);
        ConceptLabel(best as u32)
    }

    pub fn classify(&self, image: &ToyImage) -> ConceptLabel {
        self.classify_features(&features(image))
    }
}

impl ConceptDetector for ToyClassifier {
    fn detect(&self, image: &ToyImage) -> ConceptLabel {
        self.classify(image)
    }
}
