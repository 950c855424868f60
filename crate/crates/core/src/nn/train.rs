//! Mini-batch training and image / sequence evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::network::{Example, Network, NetworkConfig, NUM_CLASSES};
use super::optim::Sgd;
use super::NnError;
use crate::reprojection::SparseDepthMap;

/// Frames of one vehicle pass with their depth targets, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence_id: u64,
    pub label: usize,
    /// Normalized grayscale frames, row-major.
    pub images: Vec<Vec<f64>>,
    /// One target per frame; `None` trains the frame without the depth loss.
    pub targets: Vec<Option<SparseDepthMap>>,
}

impl LabeledSequence {
    fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        self.images
            .iter()
            .zip(&self.targets)
            .map(|(img, t)| Example {
                image: img,
                label: self.label,
                target: t.as_ref(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop when the epoch loss improved by less than `plateau_tolerance` over
    /// this many epochs.
    pub plateau_epochs: usize,
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            max_epochs: 30,
            seed: 0,
            plateau_epochs: 5,
            plateau_tolerance: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub class_loss: f64,
    pub aux_loss: f64,
    pub train_acc: f64,
    pub test_img_acc: Option<f64>,
    pub test_seq_acc: Option<f64>,
}

/// Metrics as CSV with header
/// `epoch,loss,class_loss,aux_loss,train_acc,test_img_acc,test_seq_acc`.
/// Missing test metrics are empty fields.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out =
        String::from("epoch,loss,class_loss,aux_loss,train_acc,test_img_acc,test_seq_acc\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            m.loss,
            m.class_loss,
            m.aux_loss,
            m.train_acc,
            opt(m.test_img_acc),
            opt(m.test_seq_acc)
        );
    }
    out
}

/// Trains a freshly initialized network (seeded by `train_cfg.seed`) on the
/// frames of `train_set`. The data order is reshuffled every epoch from the
/// same seed, and everything runs on the calling thread, so a fixed
/// configuration always yields bit-identical parameters.
pub fn train(
    net_cfg: &NetworkConfig,
    train_set: &[LabeledSequence],
    test_set: Option<&[LabeledSequence]>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochMetrics>), NnError> {
    let net = Network::new(net_cfg.clone(), train_cfg.seed)?;
    train_from(net, train_set, test_set, loss_cfg, train_cfg)
}

/// [`train`] starting from given parameters.
pub fn train_from(
    mut net: Network,
    train_set: &[LabeledSequence],
    test_set: Option<&[LabeledSequence]>,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochMetrics>), NnError> {
    loss_cfg.validate()?;
    train_cfg.validate()?;
    let examples: Vec<Example<'_>> = train_set.iter().flat_map(|s| s.examples()).collect();
    if examples.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut opt = Sgd::new(net.params(), train_cfg.learning_rate, train_cfg.momentum);
    let mut metrics: Vec<EpochMetrics> = Vec::new();
    let mut batch = Vec::with_capacity(train_cfg.batch_size);

    for epoch in 0..train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut class_loss, mut aux_loss, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(train_cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let (grads, losses) = net.backward(&batch, loss_cfg)?;
            opt.step(net.params_mut(), &grads)?;
            for l in losses {
                loss += l.total;
                class_loss += l.class_loss;
                aux_loss += l.aux_loss;
                correct += usize::from(l.correct);
            }
        }
        let n = examples.len() as f64;
        let (test_img_acc, test_seq_acc) = match test_set {
            Some(t) if !t.is_empty() => {
                let e = evaluate(&net, t)?;
                (Some(e.image_accuracy), Some(e.sequence_accuracy))
            }
            _ => (None, None),
        };
        metrics.push(EpochMetrics {
            epoch,
            loss: loss / n,
            class_loss: class_loss / n,
            aux_loss: aux_loss / n,
            train_acc: correct as f64 / n,
            test_img_acc,
            test_seq_acc,
        });
        if !net.params().iter().all(|p| p.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
        let k = train_cfg.plateau_epochs;
        if k > 0 && metrics.len() > k {
            let then = metrics[metrics.len() - 1 - k].loss;
            let now = metrics[metrics.len() - 1].loss;
            if then - now < train_cfg.plateau_tolerance {
                break;
            }
        }
    }
    Ok((net, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub image_accuracy: f64,
    pub sequence_accuracy: f64,
    /// `confusion[true][predicted]` image counts.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub images: usize,
    pub sequences: usize,
}

/// A sequence is correct iff strictly more than half of its frames are.
pub fn sequence_correct(correct_frames: usize, frames: usize) -> bool {
    2 * correct_frames > frames
}

/// Accuracy from per-sequence lists of (true, predicted) labels.
pub fn accuracy_from_predictions(
    predictions: &[Vec<(usize, usize)>],
) -> Result<Evaluation, NnError> {
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let (mut images, mut correct_images, mut correct_seqs) = (0usize, 0usize, 0usize);
    for seq in predictions {
        let mut correct = 0;
        for &(truth, pred) in seq {
            confusion[truth][pred] += 1;
            correct += usize::from(truth == pred);
        }
        images += seq.len();
        correct_images += correct;
        correct_seqs += usize::from(sequence_correct(correct, seq.len()));
    }
    if images == 0 {
        return Err(NnError::EmptyDataset);
    }
    Ok(Evaluation {
        image_accuracy: correct_images as f64 / images as f64,
        sequence_accuracy: correct_seqs as f64 / predictions.len() as f64,
        confusion,
        images,
        sequences: predictions.len(),
    })
}

/// Image-wise and sequence-wise accuracy of `net` on `samples`.
pub fn evaluate(net: &Network, samples: &[LabeledSequence]) -> Result<Evaluation, NnError> {
    let predict_all = |seqs: &[LabeledSequence]| -> Result<Vec<Vec<(usize, usize)>>, NnError> {
        seqs.iter()
            .map(|s| {
                s.images
                    .iter()
                    .map(|img| Ok((s.label, net.predict(img)?)))
                    .collect()
            })
            .collect()
    };
    let chunks = crate::parallel_chunks(samples, |c| predict_all(c));
    let mut predictions = Vec::with_capacity(samples.len());
    for c in chunks {
        predictions.extend(c?);
    }
    accuracy_from_predictions(&predictions)
}
