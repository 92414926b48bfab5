//! Quantization-aware fine-tuning with straight-through gradients.
//!
//! Forward passes use coefficients snapped to their codebook; updates go to
//! latent continuous copies. The epoch snapshot (including the starting
//! point) with the highest mean training accuracy is kept, so fine-tuning
//! never lowers the quantized training accuracy.

use super::codebook::{kmeans_1d, quantize, Codebook, CodebookKind};
use crate::error::{Error, Result};
use crate::linalg::rng::RngStream;
use crate::model::{Mode, SubspaceModel};
use crate::scalar::Scalar;
use crate::tasks::Dataset;
use crate::training::{mean, task_accuracies, train_observed, Constraints, History, TrainConfig};

#[derive(Debug, Clone)]
pub struct FinetuneReport {
    pub history: History,
    /// Mean training accuracy right after snapping.
    pub quantized_acc: f64,
    /// Mean training accuracy of the kept snapshot.
    pub final_acc: f64,
}

/// Fine-tune under `constraints`, starting from the snapped coefficients.
pub fn finetune_quantized<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    constraints: &Constraints,
    config: &TrainConfig,
) -> Result<FinetuneReport> {
    let start: Vec<f64> = model.trainables().iter().map(|v| v.f64()).collect();
    let snapped: Vec<T> = constraints.effective(&start).into_iter().map(T::of).collect();
    model.set_trainables(&snapped)?;
    let quantized_acc = mean(&task_accuracies(model, train)?);
    let mut best = (quantized_acc, snapped);
    let history = train_observed(model, train, None, config, constraints, &mut |_, m| {
        let acc = mean(&task_accuracies(m, train)?);
        if acc > best.0 {
            best = (acc, m.trainables());
        }
        Ok(())
    })?;
    model.set_trainables(&best.1)?;
    Ok(FinetuneReport {
        history,
        quantized_acc,
        final_acc: best.0,
    })
}

fn fit(values: &[f64], r: usize, stream: &RngStream, kind: CodebookKind) -> Result<Codebook> {
    kmeans_1d(values, r, 5, stream, kind)?.padded_to(r)
}

/// Shared model: quantize v (α stays continuous) and fine-tune, then freeze
/// v, quantize α and fine-tune again. Returns (global, local) codebooks.
pub fn quantize_shared<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    r_global: usize,
    r_local: usize,
    config: &TrainConfig,
    stream: &RngStream,
) -> Result<(Codebook, Codebook, FinetuneReport, FinetuneReport)> {
    let (global, first) = quantize_shared_global(model, train, r_global, config, stream)?;
    let (local, second) = quantize_shared_local(model, train, &global, r_local, config, stream)?;
    Ok((global, local, first, second))
}

fn shared_kl<T>(model: &SubspaceModel<T>) -> Result<usize> {
    match &model.mode {
        Mode::Shared { basis, .. } => Ok(basis.v.len()),
        _ => Err(Error::InvalidArgument("shared quantization needs a shared-mode model".into())),
    }
}

/// First stage: snap the basis coefficients v to an `r_global` codebook.
pub fn quantize_shared_global<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    r_global: usize,
    config: &TrainConfig,
    stream: &RngStream,
) -> Result<(Codebook, FinetuneReport)> {
    let kl = shared_kl(model)?;
    let all: Vec<f64> = model.trainables().iter().map(|v| v.f64()).collect();
    let global = fit(&all[..kl], r_global, &stream.derive("global-codebook"), CodebookKind::Global)?;
    let c = Constraints {
        frozen: vec![],
        snapped: vec![(0..kl, global.centers_f64())],
    };
    let report = finetune_quantized(model, train, &c, config)?;
    Ok((global, report))
}

/// Second stage: v frozen on `global`, α snapped to an `r_local` codebook.
pub fn quantize_shared_local<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    global: &Codebook,
    r_local: usize,
    config: &TrainConfig,
    stream: &RngStream,
) -> Result<(Codebook, FinetuneReport)> {
    let kl = shared_kl(model)?;
    let all: Vec<f64> = model.trainables().iter().map(|v| v.f64()).collect();
    let local = fit(&all[kl..], r_local, &stream.derive("local-codebook"), CodebookKind::Local)?;
    let c = Constraints {
        frozen: vec![0..kl],
        snapped: vec![(0..kl, global.centers_f64()), (kl..all.len(), local.centers_f64())],
    };
    let report = finetune_quantized(model, train, &c, config)?;
    Ok((local, report))
}

/// Single or transfer model: quantize all trainables with `codebook` (or a
/// fresh `r`-center codebook when `None`) and fine-tune.
pub fn quantize_own<T: Scalar>(
    model: &mut SubspaceModel<T>,
    train: &[&Dataset<T>],
    codebook: Option<Codebook>,
    r: usize,
    config: &TrainConfig,
    stream: &RngStream,
) -> Result<(Codebook, FinetuneReport)> {
    if !matches!(model.mode, Mode::Single { .. } | Mode::Transfer { .. }) {
        return Err(Error::InvalidArgument("quantize_own needs a single or transfer model".into()));
    }
    let all: Vec<f64> = model.trainables().iter().map(|v| v.f64()).collect();
    let codebook = match codebook {
        Some(c) => c,
        None => fit(&all, r, &stream.derive("task-codebook"), CodebookKind::Task)?,
    };
    let c = Constraints {
        frozen: vec![],
        snapped: vec![(0..all.len(), codebook.centers_f64())],
    };
    let report = finetune_quantized(model, train, &c, config)?;
    Ok((codebook, report))
}

/// Whether every trainable equals a center of the matching codebook.
pub fn is_quantized<T: Scalar>(values: &[T], codebook: &Codebook) -> bool {
    let v: Vec<f64> = values.iter().map(|x| x.f64()).collect();
    quantize(&v, codebook).values == v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::network::{Activation, NetworkSpec};
    use crate::tasks::{gen_teacher_tasks, SplitPolicy, TaskSet};
    use crate::training::train;

    fn setup() -> (TaskSet<f64>, SubspaceModel<f64>) {
        let ts: TaskSet<f64> = gen_teacher_tasks(6, 3, 120, 2, 0.0, 4, SplitPolicy::default()).unwrap();
        let spec = NetworkSpec::mlp(6, &[10], 2, Activation::Relu);
        let mut m =
            SubspaceModel::<f64>::shared(spec, RngStream::new(1), 3, 2, 12, RngStream::new(2), RngStream::new(3)).unwrap();
        train(&mut m, &ts.train_sets(), None, &TrainConfig::adam(0.01, 30)).unwrap();
        (ts, m)
    }

    #[test]
    fn shared_pipeline_ends_on_codebooks() {
        let (ts, mut m) = setup();
        let cfg = TrainConfig::finetune();
        let (g, l, first, second) =
            quantize_shared(&mut m, &ts.train_sets(), 10, 3, &cfg, &RngStream::new(7)).unwrap();
        assert_eq!((g.len(), l.len()), (10, 3));
        let t = m.trainables();
        assert!(is_quantized(&t[..24], &g));
        assert!(is_quantized(&t[24..], &l));
        assert!(first.final_acc >= first.quantized_acc);
        assert!(second.final_acc >= second.quantized_acc);
    }

    #[test]
    fn lossless_codebook_changes_nothing() {
        // Codebook containing every coefficient exactly: snapping is the identity.
        let spec = NetworkSpec::mlp(6, &[10], 2, Activation::Relu);
        let ts: TaskSet<f64> = gen_teacher_tasks(6, 1, 120, 1, 0.0, 4, SplitPolicy::default()).unwrap();
        let mut m = SubspaceModel::<f64>::single(spec, RngStream::new(1), 4, RngStream::new(2)).unwrap();
        let vals = [-0.5, 0.25, 0.75, 1.5];
        m.set_trainables(&vals).unwrap();
        let cb = Codebook::new(vals.iter().map(|&v| half::f16::from_f64(v)).collect(), CodebookKind::Task).unwrap();
        let before = crate::training::evaluate_stats(&m, &ts.tasks[0].train, None).unwrap();
        let cfg = TrainConfig::finetune();
        let (_, rep) = quantize_own(&mut m, &[&ts.tasks[0].train], Some(cb.clone()), 4, &cfg, &RngStream::new(0)).unwrap();
        let after = crate::training::evaluate_stats(&m, &ts.tasks[0].train, None).unwrap();
        assert!(is_quantized(&m.trainables(), &cb));
        assert!((after.loss_sum - before.loss_sum).abs() / after.rows as f64 <= 1e-6);
        assert!(rep.final_acc >= rep.quantized_acc);
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let (ts, mut m) = setup();
        let cfg = TrainConfig::finetune();
        assert!(quantize_own(&mut m, &ts.train_sets(), None, 3, &cfg, &RngStream::new(0)).is_err());
    }
}
