//! Optimisation loops, accuracy evaluation and the ID/AID grid searches.

mod optim;
pub mod parallel;
pub mod search;

use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::compression::codebook::nearest;
use crate::error::{dim_err, Error, Result};
use crate::linalg::network::{forward_backward, BatchStats};
use crate::linalg::rng::RngStream;
use crate::model::{ModeKind, SubspaceModel};
use crate::scalar::Scalar;
use crate::tasks::Dataset;

pub use optim::{default_weight_decay, Optimizer, LR_GRID};
pub use search::{
    aid_search, baseline_accuracy, id_search, read_trace, Baseline, DimensionSearchResult, SearchConfig, SearchKind,
    SearchPoint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Seed of the minibatch order.
    #[serde(default)]
    pub seed: u64,
    /// Evaluate on the held-out sets every this many epochs (0: never).
    #[serde(default)]
    pub eval_every: usize,
}

fn default_epochs() -> usize {
    400
}

fn default_optimizer() -> Optimizer {
    Optimizer::adam(0.01)
}

fn default_batch_size() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            optimizer: default_optimizer(),
            batch_size: default_batch_size(),
            seed: 0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(lr: f64, epochs: usize) -> Self {
        Self {
            epochs,
            optimizer: Optimizer::adam(lr),
            ..Self::default()
        }
    }

    /// Quantization-aware fine-tuning recipe: 30 epochs of SGD at 1e-4.
    pub fn finetune() -> Self {
        Self {
            epochs: 30,
            optimizer: Optimizer::Sgd { lr: 1e-4 },
            ..Self::default()
        }
    }

    pub fn with_lr(&self, lr: f64) -> Self {
        let mut c = self.clone();
        c.optimizer = match c.optimizer {
            Optimizer::Adam { weight_decay, .. } => Optimizer::Adam { lr, weight_decay },
            Optimizer::Sgd { .. } => Optimizer::Sgd { lr },
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        match self.optimizer {
            Optimizer::Adam { lr, weight_decay } => {
                if !LR_GRID.iter().any(|&g| (lr - g).abs() <= 1e-12 * g) {
                    return Err(Error::Config(format!("learning rate {lr} is not one of {LR_GRID:?}")));
                }
                if !(weight_decay.is_finite() && weight_decay >= 0.0) {
                    return Err(Error::Config(format!("weight decay {weight_decay} must be finite and >= 0")));
                }
            }
            Optimizer::Sgd { lr } => {
                if !(lr.is_finite() && lr > 0.0) {
                    return Err(Error::Config(format!("SGD learning rate {lr} must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's minibatches.
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Restrictions on the flat trainable vector during training.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    /// Coordinates that never change.
    pub frozen: Vec<Range<usize>>,
    /// Coordinates whose forward value is snapped to the nearest of the
    /// given sorted centers; updates go to a latent copy (straight-through).
    pub snapped: Vec<(Range<usize>, Vec<f64>)>,
}

impl Constraints {
    fn mask(&self, len: usize) -> Option<Vec<bool>> {
        if self.frozen.is_empty() {
            return None;
        }
        let mut m = vec![false; len];
        for r in &self.frozen {
            m[r.clone()].iter_mut().for_each(|b| *b = true);
        }
        Some(m)
    }

    pub fn effective(&self, latent: &[f64]) -> Vec<f64> {
        let mut out = latent.to_vec();
        for (range, centers) in &self.snapped {
            for v in &mut out[range.clone()] {
                *v = centers[nearest(centers, *v)];
            }
        }
        out
    }

    fn check(&self, len: usize) -> Result<()> {
        let ranges = self.frozen.iter().chain(self.snapped.iter().map(|(r, _)| r));
        for r in ranges {
            if r.end > len || r.start > r.end {
                return Err(Error::InvalidArgument(format!("constraint range {r:?} outside {len} trainables")));
            }
        }
        if self.snapped.iter().any(|(_, c)| c.is_empty() || c.windows(2).any(|w| w[0] >= w[1])) {
            return Err(Error::InvalidArgument("snap centers must be nonempty and increasing".into()));
        }
        Ok(())
    }
}

fn check_data<T: Scalar>(model: &SubspaceModel<T>, data: &[&Dataset<T>]) -> Result<()> {
    let expected = if model.kind() == ModeKind::Shared {
        model.task_count()
    } else {
        1
    };
    if data.len() != expected {
        return Err(dim_err("number of task datasets", expected, data.len()));
    }
    let spec = model.spec();
    for d in data {
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if d.dim() != spec.input_dim {
            return Err(dim_err("dataset input dimension", spec.input_dim, d.dim()));
        }
        if d.classes() > spec.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, network outputs {}",
                d.classes(),
                spec.output_dim()
            )));
        }
    }
    Ok(())
}

pub fn train<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    eval: Option<&[&Dataset<T>]>,
    config: &TrainConfig,
) -> Result<History> {
    train_constrained(model, train, eval, config, &Constraints::default())
}

/// Minimise the mean cross-entropy, averaged uniformly over tasks.
///
/// Each step draws one minibatch per task; an epoch is enough steps to
/// visit the largest task once (smaller tasks wrap around).
pub fn train_constrained<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    eval: Option<&[&Dataset<T>]>,
    config: &TrainConfig,
    constraints: &Constraints,
) -> Result<History> {
    train_observed(model, train, eval, config, constraints, &mut |_, _| Ok(()))
}

/// [`train_constrained`] with a callback after every epoch; the model then
/// holds the constrained (snapped) coefficients.
pub fn train_observed<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    eval: Option<&[&Dataset<T>]>,
    config: &TrainConfig,
    constraints: &Constraints,
    observer: &mut dyn FnMut(usize, &SubspaceModel<T>) -> Result<()>,
) -> Result<History> {
    config.validate()?;
    check_data(model, train)?;
    if let Some(e) = eval {
        check_data(model, e)?;
    }
    let len = model.trainable_len();
    constraints.check(len)?;
    let mask = constraints.mask(len);
    let mut latent: Vec<f64> = model.trainables().iter().map(|v| v.f64()).collect();
    let mut opt = config.optimizer.state(len);
    let shared = model.kind() == ModeKind::Shared;
    let n = train.len();
    let inv_n = 1.0 / n as f64;
    let batch = config.batch_size;
    let steps = train.iter().map(|d| d.len()).max().expect("nonempty").div_ceil(batch);
    let mut orders: Vec<Vec<usize>> = train.iter().map(|d| (0..d.len()).collect()).collect();
    let order_stream = RngStream::new(config.seed).derive("minibatch-order");
    let mut history = History::default();
    let (mut xb, mut yb, mut idx) = (Vec::new(), Vec::new(), Vec::new());
    let ambient = model.ambient_dim();

    for epoch in 0..config.epochs {
        let mut rng = order_stream.derive_index("epoch", epoch as u64).rng();
        for o in &mut orders {
            o.shuffle(&mut rng);
        }
        let mut epoch_stats = BatchStats::default();
        for step in 0..steps {
            let eff = constraints.effective(&latent);
            set_f64(model, &eff)?;
            let mut grad = vec![0.0; len];
            let mut step_loss = 0.0;
            for (j, data) in train.iter().enumerate() {
                let m = data.len();
                let take = batch.min(m);
                idx.clear();
                idx.extend((0..take).map(|i| orders[j][(step * batch + i) % m]));
                data.gather_into(&idx, &mut xb, &mut yb);
                let task = if shared { j } else { 0 };
                let theta = model.realize_unchecked(task);
                let mut g = vec![0.0; ambient];
                let stats = forward_backward(model.spec(), &theta, &xb, &yb, Some(&mut g));
                step_loss += stats.loss_sum / stats.rows as f64 * inv_n;
                epoch_stats.loss_sum += stats.loss_sum;
                epoch_stats.correct += stats.correct;
                epoch_stats.rows += stats.rows;
                let cg = model.coefficient_grad_unchecked(task, &g).flatten();
                for (a, b) in grad.iter_mut().zip(&cg) {
                    *a += b * inv_n;
                }
            }
            if !step_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: step_loss,
                });
            }
            opt.step(&mut latent, &grad, mask.as_deref());
        }
        if latent.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                step: steps,
                loss: f64::NAN,
            });
        }
        set_f64(model, &constraints.effective(&latent))?;
        observer(epoch, model)?;
        let eval_acc = match eval {
            Some(e) if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 => {
                Some(mean(&task_accuracies(model, e)?))
            }
            _ => None,
        };
        let rows = epoch_stats.rows as f64;
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.4}",
            epoch_stats.loss_sum / rows,
            epoch_stats.correct as f64 / rows
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_stats.loss_sum / rows,
            train_acc: epoch_stats.correct as f64 / rows,
            eval_acc,
        });
    }
    set_f64(model, &constraints.effective(&latent))?;
    Ok(history)
}

fn set_f64<T: Scalar>(model: &mut SubspaceModel<T>, values: &[f64]) -> Result<()> {
    let v: Vec<T> = values.iter().map(|&x| T::of(x)).collect();
    model.set_trainables(&v)
}

const EVAL_CHUNK: usize = 256;

/// Loss sum and correct count of one task's model over a dataset.
pub fn evaluate_stats<T: Scalar>(model: &SubspaceModel<T>, data: &Dataset<T>, task: Option<usize>) -> Result<BatchStats> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.spec().input_dim {
        return Err(dim_err("dataset input dimension", model.spec().input_dim, data.dim()));
    }
    let out = model.spec().output_dim();
    if let Some(&bad) = data.labels().iter().find(|&&y| y >= out) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {out} outputs")));
    }
    let theta = model.realize(task)?;
    let mut total = BatchStats::default();
    let dim = data.dim();
    for (xs, ys) in data.inputs().chunks(EVAL_CHUNK * dim).zip(data.labels().chunks(EVAL_CHUNK)) {
        let s = forward_backward(model.spec(), &theta, xs, ys, None);
        total.loss_sum += s.loss_sum;
        total.correct += s.correct;
        total.rows += s.rows;
    }
    Ok(total)
}

/// Fraction of correctly classified examples (argmax, ties to the lowest class).
pub fn evaluate<T: Scalar>(model: &SubspaceModel<T>, data: &Dataset<T>, task: Option<usize>) -> Result<f64> {
    let s = evaluate_stats(model, data, task)?;
    Ok(s.correct as f64 / s.rows as f64)
}

/// Accuracy per task; shared models use task `j` for dataset `j`.
pub fn task_accuracies<T: Scalar>(model: &SubspaceModel<T>, data: &[&Dataset<T>]) -> Result<Vec<f64>> {
    check_data(model, data)?;
    let shared = model.kind() == ModeKind::Shared;
    data.iter()
        .enumerate()
        .map(|(j, d)| evaluate(model, d, shared.then_some(j)))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
