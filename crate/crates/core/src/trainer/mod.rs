//! Training of the classifier head on soft hybrid targets.
//!
//! The parameters form two groups: the linear adapter in front of the head stands in for
//! the fine-tuned backbone and gets a much smaller learning rate than the head.

mod checkpoint;
mod mlp;
mod sampler;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use mlp::{backward, forward, soft_ce_loss, softmax, Dense, Group, MlpParams, LOG_EPS};
pub use sampler::{weighted_sampler, WeightedSampler};

use crate::data::{build_soft_target, stratified_split, DatasetSplit, HybridLabel, SampleRecord, Source, SoftTarget, Taxonomy};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::metrics::auc_from_pairs;
use crate::scorer::{anomaly_score, top2, ScorerConfig};
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    /// Keep the epoch with the highest validation hybrid AUC; ties go to the lower validation loss.
    BestValAuc,
    LastEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_head: f64,
    pub lr_adapter: f64,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub use_adapter: bool,
    pub val_fraction: f64,
    /// Probability-filtering threshold used to score the validation split.
    pub val_threshold: f64,
    pub selection: CheckpointSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr_head: 3e-4,
            lr_adapter: 3e-6,
            h1: 256,
            h2: 256,
            seed: 0,
            weight_decay: 0.0,
            momentum: 0.0,
            use_adapter: true,
            val_fraction: 0.2,
            val_threshold: 0.75,
            selection: CheckpointSelection::BestValAuc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.h1 == 0 || self.h2 == 0 {
            return Err(Error::invalid("batch_size, h1 and h2 must be positive"));
        }
        if !(self.lr_head.is_finite() && self.lr_head > 0.0) {
            return Err(Error::invalid(format!("lr_head must be positive, got {}", self.lr_head)));
        }
        if !(self.lr_adapter.is_finite() && self.lr_adapter >= 0.0 && self.lr_adapter <= self.lr_head) {
            return Err(Error::invalid(format!(
                "lr_adapter must be in [0, lr_head], got {}",
                self.lr_adapter
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        if !(0.0..=0.99).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 0.99], got {}", self.momentum)));
        }
        ScorerConfig::new(self.val_threshold)?;
        Ok(())
    }

    fn lr(&self, group: Group) -> f64 {
        match group {
            Group::Adapter => self.lr_adapter,
            Group::Head => self.lr_head,
        }
    }
}

/// One plain SGD step: `p <- p - lr_group * (g + weight_decay * p)`.
pub fn sgd_step(params: &MlpParams, grads: &MlpParams, cfg: &TrainConfig) -> MlpParams {
    let mut next = params.clone();
    for ((group, p), (_, _, g)) in next.tensors_mut().into_iter().zip(grads.tensors()) {
        let lr = cfg.lr(group);
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * (g + cfg.weight_decay * *p);
        }
    }
    next
}

/// SGD with optional heavy-ball momentum, per-group learning rates.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: MlpParams,
}

impl Sgd {
    pub fn new(params: &MlpParams) -> Self {
        Sgd {
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, cfg: &TrainConfig) {
        let tensors = params.tensors_mut().into_iter().zip(self.velocity.tensors_mut()).zip(grads.tensors());
        for (((group, p), (_, v)), (_, _, g)) in tensors {
            let lr = cfg.lr(group);
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                let step = g + cfg.weight_decay * *p;
                *v = if cfg.momentum == 0.0 { step } else { cfg.momentum * *v + step };
                *p -= lr * *v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when the validation split lacks one of the two classes.
    pub val_hybrid_auc: Option<f64>,
    pub val_accuracy: f64,
    /// Mean soft cross-entropy on the validation split.
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch of the returned parameters; 0 means the initialization.
    pub selected_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: TrainHistory,
    pub split: DatasetSplit,
}

struct Example<'a> {
    x: Vec<f64>,
    target: SoftTarget,
    label: &'a HybridLabel,
}

fn examples<'a>(
    ids: &[String],
    by_id: &HashMap<&str, &'a SampleRecord>,
    embeddings: &EmbeddingMatrix,
    taxonomy: &Taxonomy,
) -> Result<Vec<Example<'a>>> {
    ids.iter()
        .map(|id| {
            let r = by_id[id.as_str()];
            let row = match r.source {
                Source::Row(i) if i < embeddings.rows() => i,
                Source::Row(i) => {
                    return Err(Error::invalid(format!(
                        "record `{id}` points at row {i}, embeddings have {}",
                        embeddings.rows()
                    )))
                }
                Source::Image(_) => {
                    return Err(Error::invalid(format!(
                        "record `{id}` has an image source; extract embeddings first"
                    )))
                }
            };
            Ok(Example {
                x: embeddings.row_f64(row),
                target: build_soft_target(&r.label, taxonomy)?,
                label: &r.label,
            })
        })
        .collect()
}

/// Whether the model's prediction matches the label: the argmax class for non-hybrids,
/// the top-two classes for hybrids.
fn prediction_correct(probs: &[f64], label: &HybridLabel) -> bool {
    let Ok((_, _, i1, i2)) = top2(probs) else { return false };
    match *label {
        HybridLabel::NonHybrid(c) => i1 == c,
        HybridLabel::Hybrid(a, b) => (i1.min(i2), i1.max(i2)) == (a, b),
        HybridLabel::Unlabeled => false,
    }
}

struct ValStats {
    auc: Option<f64>,
    accuracy: f64,
    loss: f64,
}

fn evaluate(params: &MlpParams, val: &[Example<'_>], scorer: &ScorerConfig) -> Result<ValStats> {
    if val.is_empty() {
        return Ok(ValStats { auc: None, accuracy: 0.0, loss: 0.0 });
    }
    let mut pairs = Vec::with_capacity(val.len());
    let mut correct = 0usize;
    let mut loss = 0.0;
    for ex in val {
        let (_, probs) = forward(params, &ex.x)?;
        pairs.push((anomaly_score(&probs, scorer), ex.label.is_hybrid() == Some(true)));
        correct += usize::from(prediction_correct(&probs, ex.label));
        loss += soft_ce_loss(&probs, &ex.target);
    }
    let n = val.len() as f64;
    Ok(ValStats {
        auc: auc_from_pairs(&pairs).ok(),
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Trains the head on the labeled records.
///
/// The records are split into train and validation (stratified by hybrid status); each
/// epoch draws `n_train` samples from the weighted sampler in batches of `batch_size`.
pub fn train(
    records: &[SampleRecord],
    embeddings: &EmbeddingMatrix,
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(r) = records.iter().find(|r| r.label == HybridLabel::Unlabeled) {
        return Err(Error::invalid(format!("unlabeled sample in training set: `{}`", r.id)));
    }
    let scorer = ScorerConfig::new(cfg.val_threshold)?;
    let split = stratified_split(records, cfg.val_fraction, derive_seed(cfg.seed, "split"))?;
    let by_id: HashMap<&str, &SampleRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let train_set = examples(&split.train, &by_id, embeddings, taxonomy)?;
    let val_set = examples(&split.val, &by_id, embeddings, taxonomy)?;

    let mut params = MlpParams::init(
        embeddings.dim(),
        cfg.h1,
        cfg.h2,
        taxonomy.k(),
        cfg.use_adapter,
        &mut rng_for(cfg.seed, "init"),
    );
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { params, history, split });
    }

    let labels: Vec<HybridLabel> = train_set.iter().map(|e| *e.label).collect();
    let sampler = WeightedSampler::new(&labels)?;
    let mut sample_rng = rng_for(cfg.seed, "sampler");
    let mut opt = Sgd::new(&params);
    let mut best: Option<(f64, f64, MlpParams)> = None;
    let n = train_set.len();

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut drawn = 0;
        while drawn < n {
            let size = cfg.batch_size.min(n - drawn);
            let idx: Vec<usize> = (0..size).map(|_| sampler.draw(&mut sample_rng)).collect();
            let xs: Vec<&[f64]> = idx.iter().map(|&i| train_set[i].x.as_slice()).collect();
            let ts: Vec<&SoftTarget> = idx.iter().map(|&i| &train_set[i].target).collect();
            let (grads, loss) = backward(&params, &xs, &ts)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, after {drawn} samples; try a lower lr_head"
                )));
            }
            opt.step(&mut params, &grads, cfg);
            loss_sum += loss * size as f64;
            drawn += size;
        }
        let val = evaluate(&params, &val_set, &scorer)?;
        history.epochs.push(EpochStats {
            epoch,
            loss: loss_sum / n as f64,
            val_hybrid_auc: val.auc,
            val_accuracy: val.accuracy,
            val_loss: val.loss,
        });
        if cfg.selection == CheckpointSelection::BestValAuc {
            let auc = val.auc.unwrap_or(f64::NEG_INFINITY);
            let better = best
                .as_ref()
                .is_none_or(|(b, l, _)| auc > *b || (auc == *b && val.loss < *l));
            if better {
                best = Some((auc, val.loss, params.clone()));
                history.selected_epoch = epoch;
            }
        }
    }
    let params = match (cfg.selection, best) {
        (CheckpointSelection::BestValAuc, Some((_, _, p))) => p,
        _ => {
            history.selected_epoch = cfg.epochs;
            params
        }
    };
    Ok(TrainOutcome { params, history, split })
}
