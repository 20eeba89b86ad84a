//! Linear softmax certainty classifier and its trainer.
//!
//! Three classes — reliable, misleading, uncertain — over the generator's
//! final hidden state. Training is mini-batch gradient descent on
//! cross-entropy with decoupled weight decay and a cosine learning-rate
//! schedule decaying to zero; fully deterministic under a fixed seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertaintyLabel {
    Reliable,
    Misleading,
    Uncertain,
}

impl CertaintyLabel {
    pub fn index(self) -> usize {
        match self {
            CertaintyLabel::Reliable => 0,
            CertaintyLabel::Misleading => 1,
            CertaintyLabel::Uncertain => 2,
        }
    }

    pub fn from_index(i: usize) -> CertaintyLabel {
        match i {
            0 => CertaintyLabel::Reliable,
            1 => CertaintyLabel::Misleading,
            _ => CertaintyLabel::Uncertain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertaintyProbs {
    pub reliable: f64,
    pub misleading: f64,
    pub uncertain: f64,
}

impl CertaintyProbs {
    pub fn from_logits(logits: [f64; NUM_CLASSES]) -> CertaintyProbs {
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        CertaintyProbs {
            reliable: exps[0] / sum,
            misleading: exps[1] / sum,
            uncertain: exps[2] / sum,
        }
    }

    pub fn as_array(&self) -> [f64; NUM_CLASSES] {
        [self.reliable, self.misleading, self.uncertain]
    }

    pub fn argmax(&self) -> CertaintyLabel {
        let arr = self.as_array();
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if arr[i] > arr[best] {
                best = i;
            }
        }
        CertaintyLabel::from_index(best)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingExample {
    pub feature: Vec<f64>,
    pub label: CertaintyLabel,
}

/// H x 3 weight matrix plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub matrix: Vec<[f64; NUM_CLASSES]>,
    pub bias: [f64; NUM_CLASSES],
    pub feature_dim: usize,
    pub task_tag: String,
    pub seed: u64,
}

impl ClassifierWeights {
    pub fn zeros(feature_dim: usize, task_tag: &str, seed: u64) -> ClassifierWeights {
        ClassifierWeights {
            matrix: vec![[0.0; NUM_CLASSES]; feature_dim],
            bias: [0.0; NUM_CLASSES],
            feature_dim,
            task_tag: task_tag.to_string(),
            seed,
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Result<[f64; NUM_CLASSES]> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature dim {} vs classifier dim {}",
                feature.len(),
                self.feature_dim
            )));
        }
        let mut logits = self.bias;
        for (f, row) in feature.iter().zip(&self.matrix) {
            for (l, w) in logits.iter_mut().zip(row) {
                *l += f * w;
            }
        }
        Ok(logits)
    }

    pub fn classify(&self, feature: &[f64]) -> Result<CertaintyProbs> {
        Ok(CertaintyProbs::from_logits(self.logits(feature)?))
    }

    /// Binary format: header `(H, 3, task tag, seed)` then the matrix and
    /// bias as little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_u64::<LittleEndian>(self.feature_dim as u64)
            .map_err(io_err)?;
        w.write_u64::<LittleEndian>(NUM_CLASSES as u64).map_err(io_err)?;
        let tag = self.task_tag.as_bytes();
        w.write_u64::<LittleEndian>(tag.len() as u64).map_err(io_err)?;
        w.write_all(tag).map_err(io_err)?;
        w.write_u64::<LittleEndian>(self.seed).map_err(io_err)?;
        for row in &self.matrix {
            for &v in row {
                w.write_f64::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        for &b in &self.bias {
            w.write_f64::<LittleEndian>(b).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<ClassifierWeights> {
        let io_err = |e: std::io::Error| Error::IndexFormat(format!("weights file: {e}"));
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?);
        let feature_dim = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let classes = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        if classes != NUM_CLASSES {
            return Err(Error::IndexFormat(format!(
                "weights file declares {classes} classes, expected {NUM_CLASSES}"
            )));
        }
        let tag_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag).map_err(io_err)?;
        let task_tag = String::from_utf8(tag)
            .map_err(|e| Error::IndexFormat(format!("bad task tag: {e}")))?;
        let seed = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let mut matrix = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            let mut row = [0.0; NUM_CLASSES];
            r.read_f64_into::<LittleEndian>(&mut row).map_err(io_err)?;
            matrix.push(row);
        }
        let mut bias = [0.0; NUM_CLASSES];
        r.read_f64_into::<LittleEndian>(&mut bias).map_err(io_err)?;
        Ok(ClassifierWeights {
            matrix,
            bias,
            feature_dim,
            task_tag,
            seed,
        })
    }
}

/// Anything that can score a feature vector; lets tests script the
/// classifier.
pub trait CertaintyScorer: Send + Sync {
    fn classify(&self, feature: &[f64]) -> Result<CertaintyProbs>;
}

impl CertaintyScorer for ClassifierWeights {
    fn classify(&self, feature: &[f64]) -> Result<CertaintyProbs> {
        ClassifierWeights::classify(self, feature)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-4,
            weight_decay: 1e-7,
            epochs: 10,
            batch: 32,
            seed: 0,
        }
    }
}

/// Mean cross-entropy of a batch.
pub fn batch_loss(weights: &ClassifierWeights, batch: &[&TrainingExample]) -> Result<f64> {
    let mut loss = 0.0;
    for ex in batch {
        let probs = weights.classify(&ex.feature)?.as_array();
        loss -= probs[ex.label.index()].max(1e-300).ln();
    }
    Ok(loss / batch.len() as f64)
}

/// Analytic gradient of the mean cross-entropy, matching [`batch_loss`].
pub fn batch_gradient(
    weights: &ClassifierWeights,
    batch: &[&TrainingExample],
) -> Result<(Vec<[f64; NUM_CLASSES]>, [f64; NUM_CLASSES])> {
    let mut grad_m = vec![[0.0; NUM_CLASSES]; weights.feature_dim];
    let mut grad_b = [0.0; NUM_CLASSES];
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let probs = weights.classify(&ex.feature)?.as_array();
        for c in 0..NUM_CLASSES {
            let delta = (probs[c] - f64::from(ex.label.index() == c)) * scale;
            grad_b[c] += delta;
            for (g, f) in grad_m.iter_mut().zip(&ex.feature) {
                g[c] += delta * f;
            }
        }
    }
    Ok((grad_m, grad_b))
}

/// Train the classifier. Initial weights are small seeded Gaussians; the
/// learning rate follows a cosine decay from `lr` to 0 over all steps.
pub fn train_classifier(
    examples: &[TrainingExample],
    feature_dim: usize,
    task_tag: &str,
    hyper: TrainHyper,
) -> Result<ClassifierWeights> {
    if examples.is_empty() {
        return Err(Error::Parameter("training requires examples".into()));
    }
    for ex in examples {
        if ex.feature.len() != feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "example feature dim {} vs {}",
                ex.feature.len(),
                feature_dim
            )));
        }
    }
    let mut present = [false; NUM_CLASSES];
    for ex in examples {
        present[ex.label.index()] = true;
    }
    if present.iter().any(|&p| !p) {
        eprintln!("warning: training set is missing at least one class label");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut weights = ClassifierWeights::zeros(feature_dim, task_tag, hyper.seed);
    for row in &mut weights.matrix {
        for w in row.iter_mut() {
            *w = (rng.gen::<f64>() - 0.5) * 0.02;
        }
    }

    let batch_size = hyper.batch.max(1);
    let steps_per_epoch = examples.len().div_ceil(batch_size);
    let total_steps = (steps_per_epoch * hyper.epochs).max(1);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let lr_t = hyper.lr
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (grad_m, grad_b) = batch_gradient(&weights, &batch)?;
            for (row, grad) in weights.matrix.iter_mut().zip(&grad_m) {
                for c in 0..NUM_CLASSES {
                    // Decoupled weight decay: shrink, then gradient step.
                    row[c] -= lr_t * (grad[c] + hyper.weight_decay * row[c]);
                }
            }
            for c in 0..NUM_CLASSES {
                weights.bias[c] -= lr_t * grad_b[c];
            }
            step += 1;
        }
    }
    Ok(weights)
}
