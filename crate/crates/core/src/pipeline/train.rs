//! SGD training over a tri-spectral image set.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{evaluate, hard_vote, soft_vote};
use crate::autodiff::{poly_lr, sgd_step, SgdConfig, Tape, Tensor};
use crate::error::{contract, Error, Result};
use crate::io::LabelMap;
use crate::model::{loss, DcntModel};
use crate::trispec::TriSpectralSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub head_lr_mult: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 1,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            poly_power: 0.9,
            head_lr_mult: 10.0,
            seed: 0,
            val_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("train.epochs and train.batch must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.head_lr_mult > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("train.val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// `(train, validation)` image counts for a set of `m` images.
    pub fn split(&self, m: usize) -> (usize, usize) {
        let val = (self.val_fraction * m as f64).floor() as usize;
        if val == 0 || val >= m {
            (m, 0)
        } else {
            (m - val, val)
        }
    }

    pub fn iterations(&self, m: usize) -> usize {
        self.epochs * self.split(m).0.div_ceil(self.batch)
    }
}

/// Loss curve and CSV logs of one run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub train_images: Vec<usize>,
    pub val_images: Vec<usize>,
    /// `iter,lr,loss`
    pub train_log: String,
    /// `epoch,oa_hard,oa_soft`
    pub val_log: String,
}

fn check_inputs(set: &TriSpectralSet, labels: &LabelMap, model: &DcntModel) -> Result<()> {
    if set.is_empty() {
        return Err(contract!("train: empty image set"));
    }
    if labels.labeled_count() == 0 {
        return Err(contract!("train: no labeled pixels"));
    }
    if let Some(img) = set.images.iter().find(|i| (i.height, i.width) != (labels.height, labels.width)) {
        return Err(contract!(
            "train: image {}x{} does not match labels {}x{}",
            img.height,
            img.width,
            labels.height,
            labels.width
        ));
    }
    if labels.num_classes() > model.config.classes {
        return Err(contract!("train: labels use {} classes, model has {}", labels.num_classes(), model.config.classes));
    }
    Ok(())
}

/// Trains `model` in place.
///
/// Validation images (if any) are drawn once from a seeded shuffle; the
/// remaining images are reshuffled every epoch.
pub fn train(set: &TriSpectralSet, labels: &LabelMap, model: &mut DcntModel, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_inputs(set, labels, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..set.capacity()).collect();
    let (n_train, n_val) = cfg.split(order.len());
    if n_val > 0 {
        order.shuffle(&mut rng);
    }
    let val_images = order[n_train..].to_vec();
    let mut train_images = order[..n_train].to_vec();
    train_images.sort_unstable();
    let mut report = TrainReport { val_images: val_images.clone(), train_images: train_images.clone(), ..Default::default() };
    report.train_log.push_str("iter,lr,loss\n");
    report.val_log.push_str("epoch,oa_hard,oa_soft\n");

    let max_iter = cfg.iterations(set.capacity());
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        train_images.shuffle(&mut rng);
        for batch in train_images.chunks(cfg.batch) {
            let lr = poly_lr(cfg.lr, iter, max_iter, cfg.poly_power)?;
            let mut total = 0.0;
            for &i in batch {
                let tape = Tape::new();
                let p = model.store.bind(&tape);
                let out = model.forward_image(&p, &set.images[i])?;
                let l = loss(out.main, out.aux, &labels.labels)?.scale(1.0 / batch.len() as f64);
                let value = l.value().item();
                if !value.is_finite() {
                    return Err(Error::Data(format!("train: non-finite loss at iteration {iter}")));
                }
                total += value;
                tape.backward(l)?;
                model.store.accumulate_grads(&p);
            }
            for param in model.store.iter_mut() {
                if param.grad.is_none() {
                    param.grad = Some(Tensor::zeros(param.value.shape()));
                }
            }
            let sgd = SgdConfig {
                lr_backbone: lr,
                lr_head: lr * cfg.head_lr_mult,
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            };
            sgd_step(&mut model.store, &sgd)?;
            model.store.zero_grad();
            let _ = writeln!(report.train_log, "{iter},{lr:e},{total:e}");
            report.losses.push(total);
            iter += 1;
        }
        if !val_images.is_empty() {
            let probs = val_images.iter().map(|&i| model.predict(&set.images[i])).collect::<Result<Vec<_>>>()?;
            let classes: Vec<_> = probs.iter().map(|p| p.argmax()).collect();
            let hard = evaluate(&hard_vote(&classes)?, labels)?;
            let soft = evaluate(&soft_vote(&probs)?, labels)?;
            let _ = writeln!(report.val_log, "{},{:.6},{:.6}", epoch + 1, hard.oa, soft.oa);
        }
    }
    Ok(report)
}
