//! Desk-scale experiments: ID versus AID on related and unrelated teacher
//! tasks, AID as the task count grows on permuted-label tasks, and the full
//! train → compress → certify pipeline with transfer to a new task.
//!
//! Every runner builds an [`ExperimentConfig`] and drives the same command
//! functions as the CLI, writing all artifacts under `out`.

use std::path::Path;

use aidim::certificates::SingleTaskCertificate;
use aidim::training::SearchKind;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{
    cmd_certify_bundle, cmd_decode, cmd_encode, cmd_search, cmd_train, cmd_transfer, load_tasks, network,
    compression_settings, CertifyResult, EncodeReport, SearchReport, SharedEncodeReport, SingleCodes, TransferReport,
};
use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::io::write_json;
use crate::pipeline::single_task_codes;

fn ratio(r: &SearchReport) -> Option<f64> {
    r.result.best_amortized.map(|a| *a.numer() as f64 / *a.denom() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSetup {
    pub input_dim: usize,
    pub n: usize,
    pub m: usize,
    pub noise: f64,
    pub data_seed: u64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TeacherSetup {
    fn default() -> Self {
        Self {
            input_dim: 24,
            n: 20,
            m: 600,
            noise: 0.0,
            data_seed: 11,
            hidden: vec![96, 64, 32],
            epochs: 100,
            seed: 3,
            jobs: 1,
        }
    }
}

impl TeacherSetup {
    fn config(&self, rank: usize, n: usize) -> serde_json::Value {
        json!({
            "seed": self.seed,
            "dataset": {
                "generator": "teacher", "input_dim": self.input_dim, "n": n, "m": self.m,
                "rank": rank, "noise": self.noise, "seed": self.data_seed
            },
            "model": { "hidden": self.hidden },
            "training": { "epochs": self.epochs },
            "jobs": self.jobs,
        })
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSetup {
    pub teacher: TeacherSetup,
    pub related_rank: usize,
    /// Used for d, l and k alike.
    pub grid: Vec<usize>,
}

impl Default for HypothesisSetup {
    fn default() -> Self {
        Self {
            teacher: TeacherSetup::default(),
            related_rank: 3,
            grid: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisArm {
    pub rank: usize,
    pub id: SearchReport,
    pub aid: SearchReport,
    /// AID / ID when both searches reached the target.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub setup: HypothesisSetup,
    pub related: HypothesisArm,
    pub unrelated: HypothesisArm,
}

/// ID and AID searches on the same grid, for teachers spanning
/// `related_rank` dimensions and for mutually orthogonal teachers (rank n).
pub fn run_hypothesis(setup: &HypothesisSetup, out: &Path) -> CliResult<HypothesisReport> {
    let t = &setup.teacher;
    let arm = |rank: usize, dir: &str| -> CliResult<HypothesisArm> {
        let mut doc = t.config(rank, t.n);
        doc["search"] = json!({ "d_grid": setup.grid, "l_grid": setup.grid, "k_grid": setup.grid });
        let cfg = ExperimentConfig::from_value(doc)?;
        let out = out.join(dir);
        let id = cmd_search(&cfg, SearchKind::Id, &[], &out)?.remove(0);
        let aid = cmd_search(&cfg, SearchKind::Aid, &[], &out)?.remove(0);
        let ratio = match (ratio(&aid), ratio(&id)) {
            (Some(a), Some(i)) => Some(a / i),
            _ => None,
        };
        Ok(HypothesisArm { rank, id, aid, ratio })
    };
    let report = HypothesisReport {
        setup: setup.clone(),
        related: arm(setup.related_rank, "related")?,
        unrelated: arm(t.n, "unrelated")?,
    };
    write_json(&out.join("hypothesis.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSetup {
    pub classes: usize,
    pub dim: usize,
    pub base_count: usize,
    pub modes: usize,
    pub noise: f64,
    pub m: usize,
    pub n_sweep: Vec<usize>,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub l_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    pub data_seed: u64,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TrendSetup {
    fn default() -> Self {
        Self {
            classes: 4,
            dim: 32,
            base_count: 8000,
            modes: 3,
            noise: 0.35,
            m: 300,
            n_sweep: vec![5, 10, 20],
            hidden: vec![64, 32],
            epochs: 60,
            l_grid: vec![1, 2, 4, 8, 16, 32, 64, 128],
            k_grid: vec![1, 2, 3, 4, 6, 8, 12, 16, 24],
            data_seed: 5,
            seed: 9,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub setup: TrendSetup,
    pub points: Vec<SearchReport>,
    /// AID per entry of `n_sweep` (`None` when the target was not reached).
    pub aid: Vec<Option<f64>>,
    pub nonincreasing: bool,
}

/// AID on permuted-label tasks for each task count in `n_sweep`; the first
/// `n` tasks of one task set are used throughout.
pub fn run_trend(setup: &TrendSetup, out: &Path) -> CliResult<TrendReport> {
    let n_max = setup.n_sweep.iter().copied().max().unwrap_or(0);
    let cfg = ExperimentConfig::from_value(json!({
        "seed": setup.seed,
        "dataset": {
            "generator": "permuted-labels", "n": n_max, "m": setup.m, "seed": setup.data_seed,
            "base": {
                "kind": "prototypes", "classes": setup.classes, "dim": setup.dim, "count": setup.base_count,
                "modes": setup.modes, "noise": setup.noise, "seed": setup.data_seed
            }
        },
        "model": { "hidden": setup.hidden },
        "training": { "epochs": setup.epochs },
        "search": { "l_grid": setup.l_grid, "k_grid": setup.k_grid, "n_sweep": setup.n_sweep },
        "jobs": setup.jobs,
    }))?;
    let points = cmd_search(&cfg, SearchKind::Aid, &setup.n_sweep, out)?;
    let aid: Vec<Option<f64>> = points.iter().map(ratio).collect();
    let nonincreasing = aid.iter().all(Option::is_some)
        && aid.windows(2).all(|w| w[1].unwrap_or(f64::INFINITY) <= w[0].unwrap_or(f64::INFINITY));
    let report = TrendReport {
        setup: setup.clone(),
        points,
        aid,
        nonincreasing,
    };
    write_json(&out.join("trend.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndSetup {
    pub teacher: TeacherSetup,
    pub rank: usize,
    pub l: usize,
    pub k: usize,
    /// Shared-model training epochs.
    pub epochs: usize,
    /// d grid of the single-task comparison.
    pub d_grid: Vec<usize>,
    pub k_prime: usize,
}

impl Default for EndToEndSetup {
    fn default() -> Self {
        Self {
            teacher: TeacherSetup::default(),
            rank: 3,
            l: 128,
            k: 4,
            epochs: 100,
            d_grid: vec![16, 32, 64, 128],
            k_prime: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub setup: EndToEndSetup,
    pub encode: SharedEncodeReport,
    /// Recomputed from the decoded bundle and the training data.
    pub certificate: CertifyResult,
    pub single: SingleTaskCertificate,
    pub transfer: TransferReport,
}

/// Shared model on `n` teacher tasks → quantize, fine-tune, encode, decode,
/// certify; per-task single-subspace codes for comparison; transfer to task
/// `n`, whose teacher lies in the span of the others.
pub fn run_end_to_end(setup: &EndToEndSetup, out: &Path) -> CliResult<EndToEndReport> {
    let t = &setup.teacher;
    let mut doc = t.config(setup.rank, t.n);
    doc["mode"] = json!({ "kind": "shared", "l": setup.l, "k": setup.k });
    doc["training"] = json!({ "epochs": setup.epochs });
    doc["search"] = json!({ "l_grid": [setup.l], "k_grid": [setup.k], "d_grid": setup.d_grid });
    let cfg = ExperimentConfig::from_value(doc)?;

    let mtl = out.join("mtl");
    let trained = cmd_train(&cfg, &mtl)?;
    let EncodeReport::Shared(encode) = cmd_encode(&cfg, &trained.checkpoints, &mtl)? else {
        unreachable!("shared checkpoint encodes to a bundle")
    };
    cmd_decode(&encode.bundle, &mtl.join("decoded.ckpt"))?;

    let tasks = load_tasks(&cfg)?;
    let spec = network(&cfg, &tasks);
    let codes = single_task_codes(
        &spec,
        &tasks,
        &setup.d_grid,
        &cfg.compression.task_r,
        &cfg.search_config(),
        cfg.lr_index(),
        &compression_settings(&cfg),
    )?;
    let per_task: Vec<(f64, f64)> = codes.iter().map(|c| (c.emp_risk, c.bits as f64)).collect();
    let single = SingleTaskCertificate::from_tasks(tasks.min_train() as u64, cfg.certificate.delta, &per_task)?;
    let single_path = mtl.join("single.json");
    write_json(
        &single_path,
        &SingleCodes {
            spec,
            seed: cfg.seed,
            d_grid: setup.d_grid.clone(),
            lrs: cfg.search.lrs.clone(),
            codes,
            certificate: single.clone(),
        },
    )?;
    let certificate = cmd_certify_bundle(&cfg, &encode.bundle, Some(&single_path), &mtl)?.remove(0);

    let mut doc = t.config(setup.rank, t.n + 1);
    doc["mode"] = json!({ "kind": "transfer", "k_prime": setup.k_prime });
    let transfer_cfg = ExperimentConfig::from_value(doc)?;
    let transfer = cmd_transfer(&transfer_cfg, Some(&encode.bundle), t.n, setup.k_prime, &out.join("transfer"))?;

    let report = EndToEndReport {
        setup: setup.clone(),
        encode,
        certificate,
        single,
        transfer,
    };
    write_json(&out.join("end_to_end.json"), &report)?;
    Ok(report)
}
