//! SGD training on synthetic motion clips and multi-view evaluation.

pub mod data;
pub mod eval;

pub use data::{gen_clip, gen_dataset, gen_paired_dataset, gen_video, item_rng, Dataset, Direction, SyntheticTask, TaskKind};
pub use eval::{argmax, clip_consensus, crop_views, evaluate, sample_clips, score, CropMode, EvalProtocol, EvalReport};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{build_network, Network, NetworkSpec};
use crate::ops::{softmax_xent, NormMode};
use crate::params::{ParamKind, Parameterized};
use crate::tensor::{Float, VideoTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Learning rate for a batch of 8; scaled linearly with `batch_per_worker`.
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_per_worker: usize,
    pub train_clips: usize,
    pub val_clips: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 50,
            decay_epochs: vec![30, 40, 45],
            decay_factor: 10.0,
            batch_per_worker: 8,
            train_clips: 2000,
            val_clips: 400,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0");
        }
        if self.decay_factor <= 0.0 {
            return bad("decay_factor must be positive");
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) || self.decay_epochs.contains(&0) {
            return bad("decay_epochs must be positive and strictly increasing");
        }
        if self.batch_per_worker == 0 || self.train_clips == 0 {
            return bad("batch_per_worker and train_clips must be >= 1");
        }
        Ok(())
    }

    /// Initial learning rate after linear scaling by the batch size.
    pub fn scaled_lr(&self) -> f64 {
        self.base_lr * self.batch_per_worker as f64 / 8.0
    }
}

/// Step schedule: the scaled rate divided by `decay_factor` once per milestone reached.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let decays = cfg.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    cfg.scaled_lr() / cfg.decay_factor.powi(decays as i32)
}

/// Momentum buffer for every learnable value, in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<T>,
}

impl<T: Float> SgdState<T> {
    pub fn new(params: &impl Parameterized<T>) -> Self {
        SgdState { velocity: vec![T::zero(); params.param_count()] }
    }
}

/// `v <- m v + g + wd w` (decay only on [`ParamKind::Weight`]), then `w <- w - lr v`.
pub fn sgd_step<T: Float, P: Parameterized<T>>(params: &mut P, grads: &P, state: &mut SgdState<T>, momentum: f64, weight_decay: f64, lr: f64) {
    let g = grads.flat_params();
    assert_eq!(g.len(), state.velocity.len(), "gradient does not match the parameters");
    let (m, wd, lr) = (T::lit(momentum), T::lit(weight_decay), T::lit(lr));
    let mut offset = 0;
    params.visit_mut("", &mut |p| {
        if p.kind == ParamKind::Buffer {
            return;
        }
        let decay = p.kind == ParamKind::Weight;
        for (i, w) in p.data.iter_mut().enumerate() {
            let v = &mut state.velocity[offset + i];
            let mut step = m * *v + g[offset + i];
            if decay {
                step += wd * *w;
            }
            *v = step;
            *w -= lr * step;
        }
        offset += p.data.len();
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_pair_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.epochs.iter().map(|e| serde_json::to_string(e).expect("serializable") + "\n").collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Eval-mode accuracy and reversed-pair accuracy on a labelled set.
pub fn validate<T: Float>(net: &Network<T>, task: &SyntheticTask, data: &Dataset<T>, batch: usize) -> Result<(f64, Option<f64>)> {
    let mut rows = Vec::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = data.batch(chunk)?;
        rows.extend(net.logits(&x)?.data);
    }
    let logits = crate::ops::Features::new(data.len(), task.classes(), rows)?;
    Ok(score(task, &logits, &data.labels))
}

/// Train `spec` on `task` with SGD. Deterministic for a given `cfg.seed`.
///
/// `on_epoch` sees each record as it is produced (progress output).
pub fn train<T: Float>(
    spec: &NetworkSpec,
    task: &SyntheticTask,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Network<T>, History)> {
    cfg.validate()?;
    task.validate()?;
    if spec.classes != task.classes() || spec.frames != task.frames || spec.input_resolution != task.resolution {
        return Err(Error::Config(format!(
            "network expects {} classes, {} frames at {}px but the task has {}, {} at {}px",
            spec.classes,
            spec.frames,
            spec.input_resolution,
            task.classes(),
            task.frames,
            task.resolution
        )));
    }
    let mut net = build_network::<T>(spec, cfg.seed)?;
    let train_set = gen_dataset::<T>(task, cfg.train_clips, cfg.seed.wrapping_add(1))?;
    let val_set = gen_paired_dataset::<T>(task, cfg.val_clips, cfg.seed.wrapping_add(2))?;
    let mut state = SgdState::new(&net);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut item_rng(cfg.seed.wrapping_add(3), epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_per_worker) {
            let (x, labels) = train_set.batch(chunk)?;
            let (logits, cache) = net.forward(&x, NormMode::Train)?;
            let (loss, d_logits) = softmax_xent(&logits, &labels)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += labels.iter().enumerate().filter(|&(r, &l)| argmax(logits.row(r)) == l).count();
            let (_, grads) = net.backward(&cache, &d_logits)?;
            net.update_running(&cache);
            sgd_step(&mut net, &grads, &mut state, cfg.momentum, cfg.weight_decay, lr);
        }
        let (val_acc, val_pair_acc) = if val_set.is_empty() { (0.0, None) } else { validate(&net, task, &val_set, 32)? };
        let n = train_set.len() as f64;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / n, train_acc: correct as f64 / n, val_acc, val_pair_acc };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((net, history))
}

/// Convenience for tests and tools: a single clip as a batch of one.
pub fn as_batch<T: Float>(clip: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    VideoTensor::stack(std::slice::from_ref(clip))
}
