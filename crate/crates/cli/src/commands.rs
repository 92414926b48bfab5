//! Subcommand implementations. Each takes a validated configuration and an
//! output directory and returns a serializable summary that is also
//! written to disk.

use std::path::{Path, PathBuf};

use aidim::certificates::{single_task_bound, single_task_kl_bound, BoundCertificate, BoundInputs, SingleTaskCertificate};
use aidim::compression::{decode_bundle, encode_bundle, is_quantized, Codebook, DecodedBundle, EncodedBundle};
use aidim::linalg::NetworkSpec;
use aidim::model::{CheckpointHeader, ModeKind, SubspaceModel};
use aidim::tasks::TaskSet;
use aidim::training::parallel::parallel_map;
use aidim::training::{
    aid_search, baseline_accuracy, evaluate, id_search, mean, train, Baseline,
    DimensionSearchResult, History, SearchKind,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ModeBlock};
use crate::error::{CliError, CliResult};
use crate::io::{read_json, write_atomic, write_csv, write_json, write_records};
use crate::pipeline::{
    compress_shared, compress_single, decode_single, shared_train_error, transfer_vs_scratch, BoundForm,
    CompressionSettings, Real, SharedCandidate, SingleTaskCode, TaskCertificate,
};

pub fn load_tasks(cfg: &ExperimentConfig) -> CliResult<TaskSet<Real>> {
    Ok(TaskSet::generate(&cfg.dataset, cfg.split)?)
}

pub fn network(cfg: &ExperimentConfig, tasks: &TaskSet<Real>) -> NetworkSpec {
    cfg.model.spec(tasks.input_dim, tasks.classes)
}

pub fn compression_settings(cfg: &ExperimentConfig) -> CompressionSettings {
    CompressionSettings {
        finetune: cfg.finetune_config(),
        delta: cfg.certificate.delta,
        stream: cfg.root_stream().derive("quantize"),
    }
}

fn echo_config(cfg: &ExperimentConfig, out: &Path) -> CliResult<()> {
    write_json(&out.join("config.json"), cfg)
}

pub fn write_checkpoint(path: &Path, model: &SubspaceModel<Real>, extra: serde_json::Value) -> CliResult<()> {
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf, Some(extra))?;
    write_atomic(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> CliResult<(SubspaceModel<Real>, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(SubspaceModel::read_checkpoint(bytes.as_slice())?)
}

pub fn read_bundle(path: &Path) -> CliResult<EncodedBundle> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(EncodedBundle::from_bytes(&bytes)?)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub mode: ModeKind,
    pub ambient_dim: usize,
    pub trainable_len: usize,
    pub per_task: Vec<TaskMetrics>,
    pub mean_train_acc: f64,
    pub mean_val_acc: f64,
    pub mean_test_acc: f64,
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Serialize)]
struct HistoryRow {
    task: String,
    epoch: usize,
    train_loss: f64,
    train_acc: f64,
    eval_acc: Option<f64>,
}

fn history_rows(task: String, h: &History, rows: &mut Vec<HistoryRow>) {
    rows.extend(h.epochs.iter().map(|e| HistoryRow {
        task: task.clone(),
        epoch: e.epoch,
        train_loss: e.train_loss,
        train_acc: e.train_acc,
        eval_acc: e.eval_acc,
    }));
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> CliResult<TrainMetrics> {
    echo_config(cfg, out)?;
    let tasks = load_tasks(cfg)?;
    let spec = network(cfg, &tasks);
    let search = cfg.search_config();
    let train_cfg = cfg.train_config();
    let extra = |task: Option<usize>| json!({ "task": task, "lr": cfg.training.lr });
    let mut rows = Vec::new();
    let (models, checkpoints): (Vec<(SubspaceModel<Real>, Option<usize>)>, Vec<PathBuf>) = match cfg.mode {
        ModeBlock::Direct | ModeBlock::Single { .. } => {
            let indexed: Vec<usize> = (0..tasks.n()).collect();
            let runs = parallel_map(cfg.jobs, &indexed, |&j| -> aidim::Result<_> {
                let t = &tasks.tasks[j];
                let mut model = match cfg.mode {
                    ModeBlock::Single { d } => {
                        SubspaceModel::single(spec.clone(), search.theta0_stream(), d, search.single_projector_stream(d))?
                    }
                    _ => SubspaceModel::direct(spec.clone(), search.theta0_stream())?,
                };
                let history = train(&mut model, &[&t.train], Some(&[&t.val]), &train_cfg)?;
                Ok((model, history))
            });
            let mut models = Vec::new();
            let mut paths = Vec::new();
            for (j, run) in runs.into_iter().enumerate() {
                let (model, history) = run?;
                history_rows(j.to_string(), &history, &mut rows);
                let path = out.join(format!("task-{j:03}.ckpt"));
                write_checkpoint(&path, &model, extra(Some(j)))?;
                paths.push(path);
                models.push((model, Some(j)));
            }
            (models, paths)
        }
        ModeBlock::Shared { l, k } => {
            let (p, init) = search.shared_streams(l, k);
            let mut model = SubspaceModel::shared(spec.clone(), search.theta0_stream(), tasks.n(), k, l, p, init)?;
            let history = train(&mut model, &tasks.train_sets(), Some(&tasks.val_sets()), &train_cfg)?;
            history_rows("all".into(), &history, &mut rows);
            let path = out.join("model.ckpt");
            write_checkpoint(&path, &model, extra(None))?;
            (vec![(model, None)], vec![path])
        }
        ModeBlock::Transfer { .. } => {
            return Err(CliError::Config("mode.kind=transfer is run with the `transfer` subcommand".into()))
        }
    };
    write_csv(&out.join("history.csv"), &rows)?;
    let mut per_task = Vec::new();
    for (j, t) in tasks.tasks.iter().enumerate() {
        let (model, task) = match models.len() {
            1 if models[0].1.is_none() => (&models[0].0, Some(j)),
            _ => (&models[j].0, None),
        };
        per_task.push(TaskMetrics {
            task: j,
            train_acc: evaluate(model, &t.train, task)?,
            val_acc: evaluate(model, &t.val, task)?,
            test_acc: evaluate(model, &t.test, task)?,
        });
    }
    let avg = |f: fn(&TaskMetrics) -> f64| mean(&per_task.iter().map(f).collect::<Vec<_>>());
    let metrics = TrainMetrics {
        mode: models[0].0.kind(),
        ambient_dim: spec.param_count(),
        trainable_len: models[0].0.trainable_len(),
        mean_train_acc: avg(|m| m.train_acc),
        mean_val_acc: avg(|m| m.val_acc),
        mean_test_acc: avg(|m| m.test_acc),
        per_task,
        checkpoints,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(&out.join("manifest.json"), &tasks.manifest())?;
    Ok(metrics)
}

// ---------------------------------------------------------------------------
// search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub n: usize,
    pub baseline: Baseline,
    pub result: DimensionSearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: usize,
    pub kind: SearchKind,
    pub reached: bool,
    pub dimension: Option<f64>,
    pub baseline: f64,
    pub target: f64,
    pub best_attained: f64,
}

impl CurveRow {
    fn of(r: &SearchReport) -> Self {
        Self {
            n: r.n,
            kind: r.result.kind,
            reached: r.result.reached(),
            dimension: r.result.best_amortized.map(|a| *a.numer() as f64 / *a.denom() as f64),
            baseline: r.baseline.mean,
            target: r.result.target,
            best_attained: r.result.best_attained,
        }
    }
}

/// ID or AID search, once per task count in `n_sweep` (all tasks when
/// empty). Baselines and traces are cached in `out`, so an interrupted run
/// resumes where it stopped.
pub fn cmd_search(cfg: &ExperimentConfig, kind: SearchKind, n_sweep: &[usize], out: &Path) -> CliResult<Vec<SearchReport>> {
    echo_config(cfg, out)?;
    let all = load_tasks(cfg)?;
    let spec = network(cfg, &all);
    let search = cfg.search_config();
    let sweep: Vec<usize> = if n_sweep.is_empty() { vec![all.n()] } else { n_sweep.to_vec() };
    let mut reports = Vec::new();
    for &n in &sweep {
        if n == 0 || n > all.n() {
            return Err(CliError::Config(format!("n={n} outside 1..={} tasks", all.n())));
        }
        let tasks = all.truncated(n);
        let suffix = if n_sweep.is_empty() { String::new() } else { format!("-n{n}") };
        let baseline_path = out.join(format!("baseline{suffix}.json"));
        let baseline: Baseline = if baseline_path.exists() {
            read_json(&baseline_path)?
        } else {
            let b = baseline_accuracy(&spec, &tasks, &search)?;
            write_json(&baseline_path, &b)?;
            b
        };
        let tag = match kind {
            SearchKind::Id => "id",
            SearchKind::Aid => "aid",
            SearchKind::Direct => return Err(CliError::Config("search kind must be id or aid".into())),
        };
        let trace = out.join(format!("trace-{tag}{suffix}.csv"));
        let result = match kind {
            SearchKind::Id => id_search(&spec, &tasks, &cfg.search.d_grid, baseline.mean, &search, Some(&trace))?,
            _ => aid_search(&spec, &tasks, &cfg.search.l_grid, &cfg.search.k_grid, baseline.mean, &search, Some(&trace))?,
        };
        if !result.reached() {
            log::warn!(
                "{tag} target {:.4} not reached on the grid (best {:.4}) for n={n}",
                result.target,
                result.best_attained
            );
        }
        let report = SearchReport { n, baseline, result };
        write_json(&out.join(format!("search-{tag}{suffix}.json")), &report)?;
        reports.push(report);
    }
    if !n_sweep.is_empty() {
        let rows: Vec<CurveRow> = reports.iter().map(CurveRow::of).collect();
        write_csv(&out.join("curve.csv"), &rows)?;
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// encode / decode

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedEncodeReport {
    pub bits_meta: usize,
    pub bits_multitask: usize,
    pub bits_per_task: f64,
    pub r_global: usize,
    pub r_local: usize,
    pub emp_risk: f64,
    pub certificate: BoundCertificate,
    pub candidates: Vec<SharedCandidate>,
    pub bundle: PathBuf,
    pub checkpoint: PathBuf,
}

/// Per-task single-subspace codes plus what is needed to decode them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleCodes {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub d_grid: Vec<usize>,
    pub lrs: Vec<f64>,
    pub codes: Vec<SingleTaskCode>,
    pub certificate: SingleTaskCertificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EncodeReport {
    Shared(SharedEncodeReport),
    Single(SingleCodes),
}

fn attached_codebooks(h: &CheckpointHeader) -> Option<(Codebook, Codebook, usize)> {
    let extra = h.extra.as_ref()?;
    let global = serde_json::from_value(extra.get("global")?.clone()).ok()?;
    let local = serde_json::from_value(extra.get("local")?.clone()).ok()?;
    let lr_index = extra.get("lr_index")?.as_u64()? as usize;
    Some((global, local, lr_index))
}

/// Write the bundle and report for an already quantized shared model.
fn finish_shared(
    cfg: &ExperimentConfig,
    tasks: &TaskSet<Real>,
    bundle: &EncodedBundle,
    model: &SubspaceModel<Real>,
    global: &Codebook,
    local: &Codebook,
    candidates: Vec<SharedCandidate>,
    out: &Path,
) -> CliResult<SharedEncodeReport> {
    let bundle_path = out.join("bundle.aidb");
    write_atomic(&bundle_path, &bundle.to_bytes()?)?;
    let lr_index = cfg.lr_index();
    let ckpt = out.join("quantized.ckpt");
    write_checkpoint(&ckpt, model, json!({ "global": global, "local": local, "lr_index": lr_index }))?;
    let inputs = BoundInputs {
        n: tasks.n() as u64,
        m: tasks.min_train() as u64,
        delta: cfg.certificate.delta,
        emp_risk: shared_train_error(model, tasks)?,
        bits_meta: bundle.meta_bits() as f64,
        bits_multitask: bundle.multitask_bits() as f64,
    };
    let report = SharedEncodeReport {
        bits_meta: bundle.meta_bits(),
        bits_multitask: bundle.multitask_bits(),
        bits_per_task: (bundle.meta_bits() + bundle.multitask_bits()) as f64 / tasks.n() as f64,
        r_global: global.len(),
        r_local: local.len(),
        emp_risk: inputs.emp_risk,
        certificate: inputs.certify()?,
        candidates,
        bundle: bundle_path,
        checkpoint: ckpt,
    };
    write_json(&out.join("encode.json"), &report)?;
    Ok(report)
}

/// Encode checkpoints. A shared checkpoint that already carries its
/// codebooks (as written by `decode`) is encoded as is; otherwise it is
/// quantized and fine-tuned over the configured codebook sizes. Single-mode
/// checkpoints become per-task codes.
pub fn cmd_encode(cfg: &ExperimentConfig, checkpoints: &[PathBuf], out: &Path) -> CliResult<EncodeReport> {
    echo_config(cfg, out)?;
    if checkpoints.is_empty() {
        return Err(CliError::Config("no checkpoint given".into()));
    }
    let tasks = load_tasks(cfg)?;
    let settings = compression_settings(cfg);
    let (first, header) = read_checkpoint(&checkpoints[0])?;
    match header.mode {
        ModeKind::Shared => {
            if checkpoints.len() != 1 {
                return Err(CliError::Config("a shared model is encoded from one checkpoint".into()));
            }
            if first.task_count() != tasks.n() {
                return Err(CliError::Data(format!(
                    "checkpoint holds {} tasks, dataset has {}",
                    first.task_count(),
                    tasks.n()
                )));
            }
            let grids = cfg.hyper_grids();
            if let Some((global, local, lr_index)) = attached_codebooks(&header) {
                let t = first.trainables();
                let kl = first.basis().map_or(0, |b| b.v.len());
                if is_quantized(&t[..kl], &global) && is_quantized(&t[kl..], &local) {
                    let bundle = encode_bundle(&first, &global, &local, &grids, lr_index)?;
                    return Ok(EncodeReport::Shared(finish_shared(
                        cfg,
                        &tasks,
                        &bundle,
                        &first,
                        &global,
                        &local,
                        Vec::new(),
                        out,
                    )?));
                }
            }
            let c = compress_shared(
                &first,
                &tasks,
                &grids,
                cfg.lr_index(),
                &cfg.compression.global_r,
                &cfg.compression.local_r,
                &settings,
            )?;
            Ok(EncodeReport::Shared(finish_shared(
                cfg,
                &tasks,
                &c.bundle,
                &c.model,
                &c.global,
                &c.local,
                c.candidates,
                out,
            )?))
        }
        ModeKind::Single => {
            let search = cfg.search_config();
            let mut codes = Vec::new();
            for path in checkpoints {
                let (model, h) = read_checkpoint(path)?;
                let task = h
                    .extra
                    .as_ref()
                    .and_then(|e| e.get("task"))
                    .and_then(|t| t.as_u64())
                    .ok_or_else(|| CliError::Data(format!("{}: no task index in checkpoint", path.display())))?
                    as usize;
                let t = tasks
                    .tasks
                    .get(task)
                    .ok_or_else(|| CliError::Data(format!("task {task} not in dataset")))?;
                let (code, _) = compress_single(
                    &model,
                    task,
                    &t.train,
                    &cfg.search.d_grid,
                    cfg.lr_index(),
                    search.lrs.len(),
                    &cfg.compression.task_r,
                    BoundForm::Kl,
                    &settings,
                )?;
                codes.push(code);
            }
            let per_task: Vec<(f64, f64)> = codes.iter().map(|c| (c.emp_risk, c.bits as f64)).collect();
            let certificate =
                SingleTaskCertificate::from_tasks(tasks.min_train() as u64, cfg.certificate.delta, &per_task)?;
            let report = SingleCodes {
                spec: first.spec().clone(),
                seed: cfg.seed,
                d_grid: cfg.search.d_grid.clone(),
                lrs: cfg.search.lrs.clone(),
                codes,
                certificate,
            };
            write_json(&out.join("single.json"), &report)?;
            Ok(EncodeReport::Single(report))
        }
        other => Err(CliError::Config(format!("cannot encode a {other:?} checkpoint"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub tasks: usize,
    pub k: usize,
    pub l: usize,
    pub bits_meta: usize,
    pub bits_multitask: usize,
    pub bits_per_task: f64,
    pub checkpoint: PathBuf,
}

pub fn decode_bundle_file(path: &Path) -> CliResult<(EncodedBundle, DecodedBundle<Real>)> {
    let bundle = read_bundle(path)?;
    let decoded = decode_bundle::<Real>(&bundle)?;
    Ok((bundle, decoded))
}

/// Decode a bundle into a checkpoint carrying its codebooks.
pub fn cmd_decode(bundle_path: &Path, checkpoint: &Path) -> CliResult<DecodeReport> {
    let (bundle, d) = decode_bundle_file(bundle_path)?;
    write_checkpoint(
        checkpoint,
        &d.model,
        json!({ "global": d.global, "local": d.local, "lr_index": d.lr_index }),
    )?;
    let h = &bundle.header;
    Ok(DecodeReport {
        tasks: h.tasks,
        k: h.k,
        l: h.l,
        bits_meta: bundle.meta_bits(),
        bits_multitask: bundle.multitask_bits(),
        bits_per_task: (bundle.meta_bits() + bundle.multitask_bits()) as f64 / h.tasks as f64,
        checkpoint: checkpoint.to_path_buf(),
    })
}

// ---------------------------------------------------------------------------
// certify

/// Average single-task training error and code length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleInputs {
    pub emp_risk: f64,
    pub bits: f64,
}

/// One column of a certificate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyEntry {
    #[serde(default)]
    pub name: String,
    #[serde(flatten)]
    pub inputs: BoundInputs,
    #[serde(default)]
    pub single: Option<SingleInputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleResult {
    pub m: u64,
    pub emp_risk: f64,
    pub bits: f64,
    /// kl-form bound, the single-task counterpart of the fast rate.
    pub kl: f64,
    pub occam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyResult {
    pub name: String,
    pub certificate: BoundCertificate,
    pub single: Option<SingleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CertifyInput {
    Many(Vec<CertifyEntry>),
    One(CertifyEntry),
}

/// Pure arithmetic: bounds from published or previously measured inputs.
pub fn certify_entries(entries: &[CertifyEntry], delta: Option<f64>) -> CliResult<Vec<CertifyResult>> {
    entries
        .iter()
        .map(|e| {
            let mut inputs = e.inputs;
            if let Some(d) = delta {
                inputs.delta = d;
            }
            let certificate = inputs.certify()?;
            let single = e.single.map(|s| {
                let m = inputs.m as f64;
                SingleResult {
                    m: inputs.m,
                    emp_risk: s.emp_risk,
                    bits: s.bits,
                    kl: single_task_kl_bound(m, inputs.delta, s.emp_risk, s.bits),
                    occam: single_task_bound(m, inputs.delta, s.emp_risk, s.bits),
                }
            });
            Ok(CertifyResult {
                name: e.name.clone(),
                certificate,
                single,
            })
        })
        .collect()
}

pub fn read_certify_inputs(path: &Path) -> CliResult<Vec<CertifyEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let parsed: CertifyInput =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(match parsed {
        CertifyInput::Many(v) => v,
        CertifyInput::One(e) => vec![e],
    })
}

/// Rows: single task, slow rate, fast rate, Pinsker; one column per entry.
pub fn certificate_table(results: &[CertifyResult]) -> Vec<Vec<String>> {
    let fmt = |v: f64| format!("{v:.4}");
    let mut header = vec!["bound".to_string()];
    header.extend(results.iter().map(|r| r.name.clone()));
    let row = |label: &str, f: &dyn Fn(&CertifyResult) -> String| {
        let mut r = vec![label.to_string()];
        r.extend(results.iter().map(f));
        r
    };
    vec![
        header,
        row("single task", &|r| r.single.as_ref().map_or(String::new(), |s| fmt(s.kl))),
        row("mtl slow rate", &|r| fmt(r.certificate.slow_rate.value)),
        row("mtl fast rate", &|r| fmt(r.certificate.fast_rate.value)),
        row("mtl pinsker", &|r| fmt(r.certificate.pinsker.value)),
    ]
}

fn write_certificates(results: &[CertifyResult], out: &Path) -> CliResult<()> {
    write_json(&out.join("certificate.json"), &results)?;
    write_records(&out.join("certificate.csv"), &certificate_table(results))
}

pub fn cmd_certify_raw(inputs: &Path, delta: Option<f64>, out: &Path) -> CliResult<Vec<CertifyResult>> {
    let entries = read_certify_inputs(inputs)?;
    let results = certify_entries(&entries, delta)?;
    write_certificates(&results, out)?;
    Ok(results)
}

/// Decode the bundle, measure the training error on the configured data and
/// certify. With `single`, per-task codes are decoded and certified too.
pub fn cmd_certify_bundle(
    cfg: &ExperimentConfig,
    bundle_path: &Path,
    single: Option<&Path>,
    out: &Path,
) -> CliResult<Vec<CertifyResult>> {
    echo_config(cfg, out)?;
    let tasks = load_tasks(cfg)?;
    let (bundle, decoded) = decode_bundle_file(bundle_path)?;
    if bundle.header.tasks != tasks.n() {
        return Err(CliError::Data(format!(
            "bundle encodes {} tasks, dataset has {}",
            bundle.header.tasks,
            tasks.n()
        )));
    }
    if bundle.header.spec.input_dim != tasks.input_dim {
        return Err(CliError::Data(format!(
            "bundle network expects input dimension {}, dataset has {}",
            bundle.header.spec.input_dim, tasks.input_dim
        )));
    }
    let inputs = BoundInputs {
        n: tasks.n() as u64,
        m: tasks.min_train() as u64,
        delta: cfg.certificate.delta,
        emp_risk: shared_train_error(&decoded.model, &tasks)?,
        bits_meta: bundle.meta_bits() as f64,
        bits_multitask: bundle.multitask_bits() as f64,
    };
    let certificate = inputs.certify()?;
    let single = match single {
        None => None,
        Some(path) => {
            let codes: SingleCodes = read_json(path)?;
            let search = aidim::training::SearchConfig {
                seed: codes.seed,
                ..cfg.search_config()
            };
            let mut per_task = Vec::new();
            for c in &codes.codes {
                let model = decode_single(&codes.spec, &c.code, &codes.d_grid, codes.lrs.len(), &search)?;
                let t = tasks
                    .tasks
                    .get(c.task)
                    .ok_or_else(|| CliError::Data(format!("task {} not in dataset", c.task)))?;
                per_task.push((1.0 - evaluate(&model, &t.train, None)?, c.bits as f64));
            }
            let s = SingleTaskCertificate::from_tasks(inputs.m, inputs.delta, &per_task)?;
            Some(SingleResult {
                m: s.m,
                emp_risk: s.emp_risk,
                bits: s.mean_bits,
                kl: s.kl.value,
                occam: s.occam.value,
            })
        }
    };
    let results = vec![CertifyResult {
        name: bundle_path.file_stem().map_or("bundle".into(), |s| s.to_string_lossy().into_owned()),
        certificate,
        single,
    }];
    write_certificates(&results, out)?;
    Ok(results)
}

// ---------------------------------------------------------------------------
// transfer

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub task: usize,
    pub k: usize,
    pub k_prime: usize,
    pub transfer: TaskCertificate,
    pub scratch: TaskCertificate,
}

/// Learn task `task` of the configured dataset on top of a multi-task
/// bundle (θ = θ₀ + Qα + Pw) and from scratch; certify both. Without a
/// bundle (k = 0) only the from-scratch single-subspace model is learned.
pub fn cmd_transfer(
    cfg: &ExperimentConfig,
    bundle_path: Option<&Path>,
    task: usize,
    k_prime: usize,
    out: &Path,
) -> CliResult<TransferReport> {
    echo_config(cfg, out)?;
    let tasks = load_tasks(cfg)?;
    let t = tasks
        .tasks
        .get(task)
        .ok_or_else(|| CliError::Config(format!("task {task} not in dataset of {} tasks", tasks.n())))?;
    let settings = compression_settings(cfg);
    let train_cfg = cfg.train_config();
    let report = match bundle_path {
        Some(path) => {
            let (_, decoded) = decode_bundle_file(path)?;
            let outcome = transfer_vs_scratch(
                &decoded.model,
                &decoded.global,
                t,
                k_prime,
                &train_cfg,
                &cfg.compression.task_r,
                &settings,
            )?;
            write_checkpoint(&out.join("transfer.ckpt"), &outcome.transfer_model, json!({ "task": task }))?;
            write_checkpoint(&out.join("scratch.ckpt"), &outcome.scratch_model, json!({ "task": task }))?;
            TransferReport {
                task,
                k: decoded.model.basis().map_or(0, |b| b.k()),
                k_prime,
                transfer: outcome.transfer,
                scratch: outcome.scratch,
            }
        }
        None => {
            if k_prime == 0 {
                return Err(CliError::Config("k_prime must be >= 1 without a bundle".into()));
            }
            let spec = network(cfg, &tasks);
            let search = cfg.search_config();
            let mut model = SubspaceModel::single(spec, search.theta0_stream(), k_prime, search.single_projector_stream(k_prime))?;
            train(&mut model, &[&t.train], None, &train_cfg)?;
            let (code, q) = compress_single(&model, task, &t.train, &[k_prime], 0, 1, &cfg.compression.task_r, BoundForm::Occam, &settings)?;
            write_checkpoint(&out.join("scratch.ckpt"), &q, json!({ "task": task }))?;
            let cert = TaskCertificate {
                codebook: "scratch".into(),
                r: code.r,
                emp_risk: code.emp_risk,
                bits: code.bits,
                bound: code.occam_bound,
                test_error: 1.0 - evaluate(&q, &t.test, None)?,
            };
            TransferReport {
                task,
                k: 0,
                k_prime,
                transfer: cert.clone(),
                scratch: cert,
            }
        }
    };
    write_json(&out.join("transfer.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// gen-data

/// Materialize the configured task set: manifest plus one CSV row per
/// example (`task, split, label, x0, x1, …`).
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> CliResult<aidim::tasks::TaskSetManifest> {
    echo_config(cfg, out)?;
    let tasks = load_tasks(cfg)?;
    let mut records = Vec::new();
    let mut header = vec!["task".to_string(), "split".into(), "label".into()];
    header.extend((0..tasks.input_dim).map(|i| format!("x{i}")));
    records.push(header);
    for (j, t) in tasks.tasks.iter().enumerate() {
        for (split, data) in [("train", &t.train), ("val", &t.val), ("test", &t.test)] {
            for (i, &y) in data.labels().iter().enumerate() {
                let mut r = vec![j.to_string(), split.to_string(), y.to_string()];
                r.extend(data.row(i).iter().map(|v| v.to_string()));
                records.push(r);
            }
        }
    }
    write_records(&out.join("tasks.csv"), &records)?;
    let manifest = tasks.manifest();
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
