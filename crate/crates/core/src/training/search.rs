//! Baseline accuracy and the ID / AID grid searches.
//!
//! The target is a fraction (default 0.9) of the baseline accuracy `A`,
//! measured as the mean held-out accuracy across tasks. ID is the smallest
//! `d` whose single-subspace models reach the target; AID is the smallest
//! `lk/n + k` over `(l, k)` whose shared-basis model reaches it, ties going
//! to smaller `k`, then smaller `l`. Grid points are tried in ascending cost
//! and the search stops at the first success.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::parallel::parallel_map;
use super::{mean, task_accuracies, train, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::network::NetworkSpec;
use crate::linalg::rng::RngStream;
use crate::model::{amortized_count, SubspaceModel};
use crate::scalar::Scalar;
use crate::tasks::{Dataset, TaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchKind {
    Id,
    Aid,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub train: TrainConfig,
    /// Learning rates tried at every grid point; the best held-out accuracy counts.
    #[serde(default = "default_lrs")]
    pub lrs: Vec<f64>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Root of θ₀ and projector seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_lrs() -> Vec<f64> {
    vec![0.01]
}

fn default_fraction() -> f64 {
    0.9
}

fn default_jobs() -> usize {
    1
}

impl SearchConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            lrs: vec![train.optimizer.lr()],
            train,
            fraction: default_fraction(),
            seed: 0,
            jobs: default_jobs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lrs.is_empty() {
            return Err(Error::Config("at least one learning rate is required".into()));
        }
        for &lr in &self.lrs {
            self.train.with_lr(lr).validate()?;
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config(format!("target fraction {} outside [0, 1]", self.fraction)));
        }
        Ok(())
    }

    pub fn theta0_stream(&self) -> RngStream {
        RngStream::new(self.seed).derive("theta0")
    }

    pub fn single_projector_stream(&self, d: usize) -> RngStream {
        RngStream::new(self.seed).derive_index("single-projector", d as u64)
    }

    pub fn shared_streams(&self, l: usize, k: usize) -> (RngStream, RngStream) {
        let key = (l as u64) << 32 | k as u64;
        let root = RngStream::new(self.seed);
        (root.derive_index("shared-projector", key), root.derive_index("shared-init", key))
    }
}

/// One trained configuration in a search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub mode: SearchKind,
    pub d_or_l: usize,
    pub k: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub amortized_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub per_task: Vec<f64>,
    pub mean: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSearchResult {
    pub kind: SearchKind,
    pub tasks: usize,
    pub baseline: f64,
    pub target: f64,
    /// Best-learning-rate row of the winning grid point; `None` if no point
    /// reached the target.
    pub best: Option<SearchPoint>,
    pub best_amortized: Option<Ratio<u64>>,
    /// Highest held-out accuracy seen anywhere in the search.
    pub best_attained: f64,
    pub trace: Vec<SearchPoint>,
}

impl DimensionSearchResult {
    pub fn reached(&self) -> bool {
        self.best.is_some()
    }
}

pub fn read_trace(path: &Path) -> Result<Vec<SearchPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Previously finished rows plus an appender for new ones.
struct Trace {
    done: HashMap<(SearchKind, usize, Option<usize>, u64, u64), SearchPoint>,
    writer: Option<csv::Writer<std::fs::File>>,
}

impl Trace {
    fn open(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                done: HashMap::new(),
                writer: None,
            });
        };
        let existing = if path.exists() { read_trace(path)? } else { Vec::new() };
        let done = existing.into_iter().map(|p| (Self::key(&p), p)).collect();
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(Self {
            done,
            writer: Some(writer),
        })
    }

    fn key(p: &SearchPoint) -> (SearchKind, usize, Option<usize>, u64, u64) {
        (p.mode, p.d_or_l, p.k, p.lr.to_bits(), p.seed)
    }

    fn lookup(&self, mode: SearchKind, d_or_l: usize, k: Option<usize>, lr: f64, seed: u64) -> Option<SearchPoint> {
        self.done.get(&(mode, d_or_l, k, lr.to_bits(), seed)).cloned()
    }

    fn record(&mut self, p: &SearchPoint) -> Result<()> {
        if self.done.contains_key(&Self::key(p)) {
            return Ok(());
        }
        if let Some(w) = &mut self.writer {
            w.serialize(p).map_err(|e| Error::Parse(e.to_string()))?;
            w.flush()?;
        }
        self.done.insert(Self::key(p), p.clone());
        Ok(())
    }
}

/// Train one task in direct mode; returns (model, train accuracy, held-out accuracy).
pub fn run_direct<T: Scalar>(
    spec: &NetworkSpec,
    train_set: &Dataset<T>,
    eval_set: &Dataset<T>,
    lr: f64,
    cfg: &SearchConfig,
) -> Result<(SubspaceModel<T>, f64, f64)> {
    let mut model = SubspaceModel::direct(spec.clone(), cfg.theta0_stream())?;
    train(&mut model, &[train_set], None, &cfg.train.with_lr(lr))?;
    let tr = super::evaluate(&model, train_set, None)?;
    let ev = super::evaluate(&model, eval_set, None)?;
    Ok((model, tr, ev))
}

/// Train one task in a `d`-dimensional random subspace.
pub fn run_single<T: Scalar>(
    spec: &NetworkSpec,
    train_set: &Dataset<T>,
    eval_set: &Dataset<T>,
    d: usize,
    lr: f64,
    cfg: &SearchConfig,
) -> Result<(SubspaceModel<T>, f64, f64)> {
    let mut model = SubspaceModel::single(spec.clone(), cfg.theta0_stream(), d, cfg.single_projector_stream(d))?;
    train(&mut model, &[train_set], None, &cfg.train.with_lr(lr))?;
    let tr = super::evaluate(&model, train_set, None)?;
    let ev = super::evaluate(&model, eval_set, None)?;
    Ok((model, tr, ev))
}

/// Train all tasks jointly over a shared `(l, k)` basis; accuracies are
/// task means.
pub fn run_shared<T: Scalar>(
    spec: &NetworkSpec,
    tasks: &TaskSet<T>,
    l: usize,
    k: usize,
    lr: f64,
    cfg: &SearchConfig,
) -> Result<(SubspaceModel<T>, f64, f64)> {
    let (p, init) = cfg.shared_streams(l, k);
    let mut model = SubspaceModel::shared(spec.clone(), cfg.theta0_stream(), tasks.n(), k, l, p, init)?;
    let train_sets = tasks.train_sets();
    train(&mut model, &train_sets, None, &cfg.train.with_lr(lr))?;
    let tr = mean(&task_accuracies(&model, &train_sets)?);
    let ev = mean(&task_accuracies(&model, &tasks.val_sets())?);
    Ok((model, tr, ev))
}

/// Per-task direct training; `A` is the best task-mean held-out accuracy over
/// the configured learning rates.
pub fn baseline_accuracy<T: Scalar>(spec: &NetworkSpec, tasks: &TaskSet<T>, cfg: &SearchConfig) -> Result<Baseline> {
    cfg.validate()?;
    let mut best: Option<Baseline> = None;
    for &lr in &cfg.lrs {
        let runs = parallel_map(cfg.jobs, &tasks.tasks, |t| run_direct(spec, &t.train, &t.val, lr, cfg));
        let per_task = runs.into_iter().map(|r| r.map(|(_, _, ev)| ev)).collect::<Result<Vec<_>>>()?;
        let m = mean(&per_task);
        log::info!("baseline lr {lr}: mean held-out accuracy {m:.4}");
        if best.as_ref().map_or(true, |b| m > b.mean) {
            best = Some(Baseline { per_task, mean: m, lr });
        }
    }
    Ok(best.expect("at least one learning rate"))
}

fn finish(
    kind: SearchKind,
    tasks: usize,
    baseline: f64,
    target: f64,
    best: Option<(SearchPoint, Ratio<u64>)>,
    trace: Vec<SearchPoint>,
) -> DimensionSearchResult {
    let best_attained = trace.iter().map(|p| p.eval_acc).fold(0.0, f64::max);
    let (best, best_amortized) = match best {
        Some((p, r)) => (Some(p), Some(r)),
        None => (None, None),
    };
    DimensionSearchResult {
        kind,
        tasks,
        baseline,
        target,
        best,
        best_amortized,
        best_attained,
        trace,
    }
}

fn pick_best(rows: &[SearchPoint]) -> SearchPoint {
    rows.iter()
        .max_by(|a, b| a.eval_acc.total_cmp(&b.eval_acc).then(b.lr.total_cmp(&a.lr)))
        .expect("one row per learning rate")
        .clone()
}

/// Smallest `d` in the grid whose per-task single-subspace models reach
/// `fraction · baseline` on average.
pub fn id_search<T: Scalar>(
    spec: &NetworkSpec,
    tasks: &TaskSet<T>,
    d_grid: &[usize],
    baseline: f64,
    cfg: &SearchConfig,
    trace_path: Option<&Path>,
) -> Result<DimensionSearchResult> {
    cfg.validate()?;
    let mut grid = d_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(Error::Config("d grid must be nonempty and positive".into()));
    }
    let target = cfg.fraction * baseline;
    let mut trace = Trace::open(trace_path)?;
    let mut rows = Vec::new();
    for &d in &grid {
        let mut point_rows = Vec::new();
        for &lr in &cfg.lrs {
            let row = match trace.lookup(SearchKind::Id, d, None, lr, cfg.seed) {
                Some(p) => p,
                None => {
                    let runs = parallel_map(cfg.jobs, &tasks.tasks, |t| run_single(spec, &t.train, &t.val, d, lr, cfg));
                    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
                    SearchPoint {
                        mode: SearchKind::Id,
                        d_or_l: d,
                        k: None,
                        lr,
                        seed: cfg.seed,
                        train_acc: mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>()),
                        eval_acc: mean(&runs.iter().map(|r| r.2).collect::<Vec<_>>()),
                        amortized_count: d as f64,
                    }
                }
            };
            trace.record(&row)?;
            log::info!("id d={d} lr={lr}: eval {:.4} (target {target:.4})", row.eval_acc);
            point_rows.push(row);
        }
        let best = pick_best(&point_rows);
        rows.extend(point_rows);
        if best.eval_acc >= target {
            return Ok(finish(SearchKind::Id, tasks.n(), baseline, target, Some((best, Ratio::from_integer(d as u64))), rows));
        }
    }
    Ok(finish(SearchKind::Id, tasks.n(), baseline, target, None, rows))
}

/// Grid points ordered by amortized count, then `k`, then `l`.
pub fn aid_order(l_grid: &[usize], k_grid: &[usize], n: usize) -> Vec<(usize, usize, Ratio<u64>)> {
    let mut pts: Vec<(usize, usize, Ratio<u64>)> = l_grid
        .iter()
        .flat_map(|&l| k_grid.iter().map(move |&k| (l, k, amortized_count(l as u64, k as u64, n as u64))))
        .collect();
    pts.sort_by(|a, b| a.2.cmp(&b.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    pts.dedup();
    pts
}

/// Smallest amortized count `lk/n + k` over the `(l, k)` grid reaching
/// `fraction · baseline`. Up to `jobs` points train concurrently; the
/// reported minimum does not depend on `jobs`.
pub fn aid_search<T: Scalar>(
    spec: &NetworkSpec,
    tasks: &TaskSet<T>,
    l_grid: &[usize],
    k_grid: &[usize],
    baseline: f64,
    cfg: &SearchConfig,
    trace_path: Option<&Path>,
) -> Result<DimensionSearchResult> {
    cfg.validate()?;
    if l_grid.is_empty() || k_grid.is_empty() || l_grid.contains(&0) || k_grid.contains(&0) {
        return Err(Error::Config("l and k grids must be nonempty and positive".into()));
    }
    let n = tasks.n();
    let target = cfg.fraction * baseline;
    let order = aid_order(l_grid, k_grid, n);
    let mut trace = Trace::open(trace_path)?;
    let mut rows = Vec::new();
    for chunk in order.chunks(cfg.jobs.max(1)) {
        let work: Vec<(usize, usize, Ratio<u64>, f64)> = chunk
            .iter()
            .flat_map(|&(l, k, a)| cfg.lrs.iter().map(move |&lr| (l, k, a, lr)))
            .collect();
        let pending: Vec<_> = work
            .iter()
            .filter(|(l, k, _, lr)| trace.lookup(SearchKind::Aid, *l, Some(*k), *lr, cfg.seed).is_none())
            .cloned()
            .collect();
        let results = parallel_map(cfg.jobs, &pending, |&(l, k, a, lr)| {
            run_shared(spec, tasks, l, k, lr, cfg).map(|(_, tr, ev)| SearchPoint {
                mode: SearchKind::Aid,
                d_or_l: l,
                k: Some(k),
                lr,
                seed: cfg.seed,
                train_acc: tr,
                eval_acc: ev,
                amortized_count: *a.numer() as f64 / *a.denom() as f64,
            })
        });
        for r in results {
            trace.record(&r?)?;
        }
        for &(l, k, a) in chunk {
            let point_rows: Vec<SearchPoint> = cfg
                .lrs
                .iter()
                .map(|&lr| trace.lookup(SearchKind::Aid, l, Some(k), lr, cfg.seed).expect("recorded above"))
                .collect();
            let best = pick_best(&point_rows);
            log::info!("aid l={l} k={k} ({a}): eval {:.4} (target {target:.4})", best.eval_acc);
            rows.extend(point_rows);
            if best.eval_acc >= target {
                return Ok(finish(SearchKind::Aid, n, baseline, target, Some((best, a)), rows));
            }
        }
    }
    Ok(finish(SearchKind::Aid, n, baseline, target, None, rows))
}
