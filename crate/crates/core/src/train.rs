//! Mini-batch training with per-epoch cosine decay, best-validation model
//! selection and evaluation.

use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::model::{argmax, Model};
use crate::optim::{adam_step, cosine_lr, cross_entropy, AdamState, LrSchedule};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const METRICS_CSV_HEADER: &str = "# spikehar metrics v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER}\nepoch,lr,train_loss,train_acc,val_acc\n");
    for m in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.val_acc
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: Model<f32>,
    pub best_val_acc: f64,
    /// 0 when no epoch beat the initialization.
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    pub fn confusion_csv(&self) -> String {
        let k = self.confusion.len();
        let mut s = String::from("# spikehar confusion v1\ntrue");
        for j in 0..k {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for c in row {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

pub const EVAL_BATCH: usize = 256;

/// Top-1 accuracy and confusion matrix.
pub fn evaluate(model: &mut Model<f32>, dataset: &WindowDataset, batch_size: usize) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let k = model.spec().class_count;
    if dataset.class_count > k {
        return Err(Error::Argument(format!(
            "dataset has {} classes, model predicts {k}",
            dataset.class_count
        )));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut confusion = vec![vec![0u64; k]; k];
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = dataset.batch(chunk);
        for (p, y) in model.predict(&batch)?.into_iter().zip(labels) {
            confusion[y][p] += 1;
            correct += usize::from(p == y);
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / dataset.len() as f64,
        confusion,
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(_) => Error::Divergence { epoch },
        other => other,
    }
}

/// Train for `cfg.epochs` epochs and keep the parameters of the epoch with
/// the strictly highest validation accuracy (initialization counts as
/// epoch 0). `on_epoch` sees every row as it is produced.
pub fn train(
    mut model: Model<f32>,
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let k = model.spec().class_count;
    let schedule = LrSchedule::new(cfg.lr, cfg.epochs);
    let mut adam = AdamState::new(model.params());
    let mut rng = SeededRng::new(cfg.seed).fork(0x5348_5546);

    let mut best_val_acc = evaluate(&mut model, val_set, EVAL_BATCH)?.accuracy;
    let mut best_epoch = 0;
    let mut best_params: Vec<Tensor<f32>> = model.params().into_iter().cloned().collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let lr = cosine_lr(e, &schedule)?;
        let order = rng.permutation(train_set.len());
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, labels) = train_set.batch(chunk);
            let logits = model.forward(&batch).map_err(|e| diverged(e, epoch))?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            model.backward(&grad).map_err(|e| diverged(e, epoch))?;
            adam_step(&mut model.params_and_grads(), &mut adam, lr).map_err(|e| diverged(e, epoch))?;
        }
        let val_acc = evaluate(&mut model, val_set, EVAL_BATCH)?.accuracy;
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        };
        on_epoch(&m);
        history.push(m);
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_params = model.params().into_iter().cloned().collect();
        }
    }
    for (dst, src) in model.params_mut().into_iter().zip(best_params) {
        *dst = src;
    }
    Ok(TrainOutcome {
        model,
        best_val_acc,
        best_epoch,
        history,
    })
}

/// One training run per learning rate from the same initialization; the
/// first rate reaching the highest validation accuracy wins. Returns the
/// winning index and every outcome.
pub fn train_lr_grid(
    init: &Model<f32>,
    train_set: &WindowDataset,
    val_set: &WindowDataset,
    cfg: &TrainConfig,
    lrs: &[f64],
    mut on_epoch: impl FnMut(f64, &EpochMetrics),
) -> Result<(usize, Vec<TrainOutcome>)> {
    if lrs.is_empty() {
        return Err(Error::Argument("learning-rate grid is empty".into()));
    }
    let mut outcomes = Vec::with_capacity(lrs.len());
    for &lr in lrs {
        let c = TrainConfig { lr, ..*cfg };
        outcomes.push(train(init.clone(), train_set, val_set, &c, |m| on_epoch(lr, m))?);
    }
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.best_val_acc > outcomes[best].best_val_acc {
            best = i;
        }
    }
    Ok((best, outcomes))
}
