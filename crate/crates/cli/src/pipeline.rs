//! Train → quantize → fine-tune → encode → certify, for shared, single-task
//! and transfer models.

use aidim::certificates::{single_task_bound, single_task_kl_bound, transfer_bound, BoundCertificate, BoundInputs};
use aidim::compression::codes::SingleTaskHyper;
use aidim::compression::{
    decode_single_task, encode_bundle, encode_single_task, encode_transfer, part_bits, quantize_own,
    quantize_shared_global, quantize_shared_local, BitString, Codebook, EncodedBundle, HyperGrids,
    TransferCodebook,
};
use aidim::linalg::{NetworkSpec, RngStream};
use aidim::model::SubspaceModel;
use aidim::tasks::{Dataset, Task, TaskSet};
use aidim::training::search::run_single;
use aidim::training::parallel::parallel_map;
use aidim::training::{evaluate, mean, task_accuracies, train, SearchConfig, TrainConfig};
use aidim::{Error, Result};
use serde::{Deserialize, Serialize};

pub type Real = f32;

fn values(model: &SubspaceModel<Real>) -> Vec<f64> {
    model.trainables().iter().map(|&v| v as f64).collect()
}

/// Mean zero-one training error over tasks.
pub fn shared_train_error(model: &SubspaceModel<Real>, tasks: &TaskSet<Real>) -> Result<f64> {
    Ok(1.0 - mean(&task_accuracies(model, &tasks.train_sets())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedCandidate {
    pub r_global: usize,
    pub r_local: usize,
    pub emp_risk: f64,
    pub bits_meta: usize,
    pub bits_multitask: usize,
    pub fast_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SharedCompression {
    pub bundle: EncodedBundle,
    pub model: SubspaceModel<Real>,
    pub global: Codebook,
    pub local: Codebook,
    pub certificate: BoundCertificate,
    pub candidates: Vec<SharedCandidate>,
}

/// Settings shared by every compression run.
#[derive(Debug, Clone)]
pub struct CompressionSettings {
    pub finetune: TrainConfig,
    pub delta: f64,
    pub stream: RngStream,
}

/// Quantize and fine-tune a trained shared model for every `(r_g, r_l)`
/// pair and keep the encoding with the smallest fast-rate certificate.
/// Codebook sizes are encoded in the bundle, so choosing them on the data
/// is paid for in bits.
pub fn compress_shared(
    model: &SubspaceModel<Real>,
    tasks: &TaskSet<Real>,
    grids: &HyperGrids,
    lr_index: usize,
    global_r: &[usize],
    local_r: &[usize],
    settings: &CompressionSettings,
) -> Result<SharedCompression> {
    let train_sets = tasks.train_sets();
    let m = tasks.min_train() as u64;
    let mut best: Option<SharedCompression> = None;
    let mut candidates = Vec::new();
    for &rg in global_r {
        let mut stage1 = model.clone();
        let (global, _) = quantize_shared_global(&mut stage1, &train_sets, rg, &settings.finetune, &settings.stream)?;
        for &rl in local_r {
            let mut q = stage1.clone();
            let (local, _) =
                quantize_shared_local(&mut q, &train_sets, &global, rl, &settings.finetune, &settings.stream)?;
            let bundle = encode_bundle(&q, &global, &local, grids, lr_index)?;
            let inputs = BoundInputs {
                n: tasks.n() as u64,
                m,
                delta: settings.delta,
                emp_risk: shared_train_error(&q, tasks)?,
                bits_meta: bundle.meta_bits() as f64,
                bits_multitask: bundle.multitask_bits() as f64,
            };
            let certificate = inputs.certify()?;
            log::info!(
                "r_g={rg} r_l={rl}: error {:.4}, l(E)={} l_E={} fast {:.4}",
                inputs.emp_risk,
                bundle.meta_bits(),
                bundle.multitask_bits(),
                certificate.fast_rate.value
            );
            candidates.push(SharedCandidate {
                r_global: rg,
                r_local: rl,
                emp_risk: inputs.emp_risk,
                bits_meta: bundle.meta_bits(),
                bits_multitask: bundle.multitask_bits(),
                fast_rate: certificate.fast_rate.value,
            });
            if best.as_ref().map_or(true, |b| certificate.fast_rate.value < b.certificate.fast_rate.value) {
                best = Some(SharedCompression {
                    bundle,
                    model: q,
                    global: global.clone(),
                    local,
                    certificate,
                    candidates: Vec::new(),
                });
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::Config("empty codebook-size grids".into()))?;
    best.candidates = candidates;
    Ok(best)
}

/// One task's single-subspace code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTaskCode {
    pub task: usize,
    pub d: usize,
    pub r: usize,
    pub emp_risk: f64,
    /// Content bits plus the length prefix.
    pub bits: usize,
    pub kl_bound: f64,
    pub occam_bound: f64,
    pub code: BitString,
}

/// Which single-task certificate drives codebook selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundForm {
    Kl,
    Occam,
}

impl SingleTaskCode {
    pub fn bound(&self, form: BoundForm) -> f64 {
        match form {
            BoundForm::Kl => self.kl_bound,
            BoundForm::Occam => self.occam_bound,
        }
    }
}

/// Quantize a trained single-mode model over the task codebook grid and
/// keep the code with the smallest certificate of the given form.
pub fn compress_single(
    model: &SubspaceModel<Real>,
    task: usize,
    train_set: &Dataset<Real>,
    d_grid: &[usize],
    lr_index: usize,
    lr_grid_len: usize,
    task_r: &[usize],
    form: BoundForm,
    settings: &CompressionSettings,
) -> Result<(SingleTaskCode, SubspaceModel<Real>)> {
    let d = model.trainable_len();
    let d_index = d_grid
        .iter()
        .position(|&g| g == d)
        .ok_or_else(|| Error::Config(format!("d={d} is not in the d grid {d_grid:?}")))?;
    let hyper = SingleTaskHyper {
        d_index,
        d_grid_len: d_grid.len(),
        lr_index,
        lr_grid_len,
    };
    let m = train_set.len() as f64;
    let mut best: Option<(SingleTaskCode, SubspaceModel<Real>)> = None;
    for &r in task_r {
        let mut q = model.clone();
        let stream = settings.stream.derive_index("task", task as u64);
        let (codebook, _) = quantize_own(&mut q, &[train_set], None, r, &settings.finetune, &stream)?;
        let code = encode_single_task(&values(&q), &codebook, &hyper)?;
        let bits = part_bits(&code);
        let emp_risk = 1.0 - evaluate(&q, train_set, None)?;
        let entry = SingleTaskCode {
            task,
            d,
            r: codebook.len(),
            emp_risk,
            bits,
            kl_bound: single_task_kl_bound(m, settings.delta, emp_risk, bits as f64),
            occam_bound: single_task_bound(m, settings.delta, emp_risk, bits as f64),
            code,
        };
        if best.as_ref().map_or(true, |b| entry.bound(form) < b.0.bound(form)) {
            best = Some((entry, q));
        }
    }
    best.ok_or_else(|| Error::Config("empty task codebook grid".into()))
}

/// Rebuild a single-mode model from its code.
pub fn decode_single(
    spec: &NetworkSpec,
    code: &BitString,
    d_grid: &[usize],
    lr_grid_len: usize,
    search: &SearchConfig,
) -> Result<SubspaceModel<Real>> {
    let decoded = decode_single_task(code, d_grid, lr_grid_len)?;
    let mut model = SubspaceModel::single(
        spec.clone(),
        search.theta0_stream(),
        decoded.d,
        search.single_projector_stream(decoded.d),
    )?;
    let w: Vec<Real> = decoded.values.iter().map(|&v| v as Real).collect();
    model.set_trainables(&w)?;
    Ok(model)
}

/// Per-task single-subspace training over `d_grid`; every task keeps the
/// `(d, r)` with the smallest kl-form certificate. The chosen `d` is part
/// of each code.
pub fn single_task_codes(
    spec: &NetworkSpec,
    tasks: &TaskSet<Real>,
    d_grid: &[usize],
    task_r: &[usize],
    search: &SearchConfig,
    lr_index: usize,
    settings: &CompressionSettings,
) -> Result<Vec<SingleTaskCode>> {
    let lr = search.lrs[lr_index];
    let indexed: Vec<(usize, &Task<Real>)> = tasks.tasks.iter().enumerate().collect();
    let per_task = parallel_map(search.jobs, &indexed, |&(j, t)| -> Result<SingleTaskCode> {
        let mut best: Option<SingleTaskCode> = None;
        for &d in d_grid {
            let (model, _, _) = run_single(spec, &t.train, &t.val, d, lr, search)?;
            let (code, _) =
                compress_single(&model, j, &t.train, d_grid, lr_index, search.lrs.len(), task_r, BoundForm::Kl, settings)?;
            if best.as_ref().map_or(true, |b| code.kl_bound < b.kl_bound) {
                best = Some(code);
            }
        }
        best.ok_or_else(|| Error::Config("empty d grid".into()))
    });
    per_task.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCertificate {
    /// `"reused"`, `"new"` or `"scratch"`.
    pub codebook: String,
    pub r: usize,
    pub emp_risk: f64,
    pub bits: usize,
    pub bound: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub transfer: TaskCertificate,
    pub transfer_model: SubspaceModel<Real>,
    pub scratch: TaskCertificate,
    pub scratch_model: SubspaceModel<Real>,
}

/// Learn a new task over a frozen shared basis plus `k_prime` fresh random
/// directions, and the same task from scratch in a `k + k_prime`
/// dimensional random subspace. Both are quantized, encoded and certified
/// with the same single-task bound.
pub fn transfer_vs_scratch(
    shared: &SubspaceModel<Real>,
    global: &Codebook,
    task: &Task<Real>,
    k_prime: usize,
    train_cfg: &TrainConfig,
    task_r: &[usize],
    settings: &CompressionSettings,
) -> Result<TransferOutcome> {
    let basis = shared
        .basis()
        .ok_or_else(|| Error::InvalidArgument("transfer needs a shared-mode model".into()))?
        .clone();
    let spec = shared.spec().clone();
    if task.train.dim() != spec.input_dim {
        return Err(Error::Dimension {
            context: "new-task input dimension",
            expected: spec.input_dim.to_string(),
            got: task.train.dim().to_string(),
        });
    }
    let k = basis.k();
    let root = settings.stream.derive("transfer");
    let m = task.train.len() as f64;
    let mut model = SubspaceModel::transfer(spec.clone(), shared.theta0_stream(), basis, k_prime, root.derive("projector"))?;
    train(&mut model, &[&task.train], None, train_cfg)?;

    let mut best: Option<(TaskCertificate, SubspaceModel<Real>)> = None;
    for r in std::iter::once(None).chain(task_r.iter().map(|&r| Some(r))) {
        let mut q = model.clone();
        let reuse = r.is_none();
        let given = if reuse { Some(global.clone()) } else { None };
        let (codebook, _) = quantize_own(&mut q, &[&task.train], given, r.unwrap_or(0), &settings.finetune, &root)?;
        let choice = if reuse { TransferCodebook::Reused } else { TransferCodebook::New(codebook.clone()) };
        let code = encode_transfer(&values(&q), &choice, global)?;
        let bits = part_bits(&code);
        let emp_risk = 1.0 - evaluate(&q, &task.train, None)?;
        let bound = transfer_bound(m, settings.delta, emp_risk, bits as f64);
        if best.as_ref().map_or(true, |b| bound < b.0.bound) {
            let cert = TaskCertificate {
                codebook: if reuse { "reused".into() } else { "new".into() },
                r: codebook.len(),
                emp_risk,
                bits,
                bound,
                test_error: 1.0 - evaluate(&q, &task.test, None)?,
            };
            best = Some((cert, q));
        }
    }
    let (transfer, transfer_model) = best.expect("reuse choice always present");

    let d = k + k_prime;
    let search = SearchConfig {
        train: train_cfg.clone(),
        lrs: vec![train_cfg.optimizer.lr()],
        fraction: 0.9,
        seed: root.derive("scratch").seed,
        jobs: 1,
    };
    let mut scratch = SubspaceModel::single(spec, shared.theta0_stream(), d, search.single_projector_stream(d))?;
    train(&mut scratch, &[&task.train], None, train_cfg)?;
    let (code, scratch_model) = compress_single(&scratch, 0, &task.train, &[d], 0, 1, task_r, BoundForm::Occam, settings)?;
    let scratch_cert = TaskCertificate {
        codebook: "scratch".into(),
        r: code.r,
        emp_risk: code.emp_risk,
        bits: code.bits,
        bound: code.occam_bound,
        test_error: 1.0 - evaluate(&scratch_model, &task.test, None)?,
    };
    Ok(TransferOutcome {
        transfer,
        transfer_model,
        scratch: scratch_cert,
        scratch_model,
    })
}
