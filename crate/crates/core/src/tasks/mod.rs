//! Multi-task datasets: containers, seeded splits, synthetic generators and
//! on-disk formats.

pub mod csv;
pub mod idx;
pub mod synthetic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::rng::RngStream;
use crate::linalg::tensor::Tensor;
use crate::scalar::Scalar;

pub use synthetic::{gen_permuted_labels, gen_prototype_base, gen_shuffled_pixels, gen_teacher_tasks};

/// Row-major examples with integer labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    x: Vec<T>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Vec<T>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dataset input dimension must be >= 1".into()));
        }
        if x.len() != dim * labels.len() {
            return Err(dim_err("dataset inputs (rows × dim)", dim * labels.len(), x.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {classes} classes")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        Ok(Self { x, dim, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[T] {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs_tensor(&self) -> Result<Tensor<T>> {
        Tensor::matrix(self.len(), self.dim, self.x.clone())
    }

    /// Copy of the rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            x,
            dim: self.dim,
            labels,
            classes: self.classes,
        }
    }

    pub(crate) fn gather_into(&self, indices: &[usize], x: &mut Vec<T>, y: &mut Vec<usize>) {
        x.clear();
        y.clear();
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
    }

    /// Label histogram.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

/// Train/validation/test fractions; the test share is the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        Self { train: 0.7, val: 0.2 }
    }
}

impl SplitPolicy {
    pub fn sizes(&self, m: usize) -> (usize, usize, usize) {
        let train = ((m as f64) * self.train).round() as usize;
        let val = (((m as f64) * self.val).round() as usize).min(m - train.min(m));
        let train = train.min(m);
        (train, val, m - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Task<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
    /// Positions of each split inside the task's full sample.
    pub indices: SplitIndices,
}

impl<T: Scalar> Task<T> {
    /// Seeded disjoint split of one task's `m` examples.
    pub fn split(all: &Dataset<T>, policy: SplitPolicy, stream: &RngStream) -> Self {
        let m = all.len();
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut stream.rng());
        let (ntr, nva, _) = policy.sizes(m);
        let indices = SplitIndices {
            train: order[..ntr].to_vec(),
            val: order[ntr..ntr + nva].to_vec(),
            test: order[ntr + nva..].to_vec(),
        };
        Self {
            train: all.subset(&indices.train),
            val: all.subset(&indices.val),
            test: all.subset(&indices.test),
            indices,
        }
    }

    pub fn m(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// Where a base (single-task) dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseSource {
    /// Synthetic noisy prototypes, see [`gen_prototype_base`].
    Prototypes {
        classes: usize,
        dim: usize,
        count: usize,
        #[serde(default = "default_modes")]
        modes: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: u64,
    },
    /// MNIST-style IDX image and label files.
    Idx { images: String, labels: String },
}

fn default_modes() -> usize {
    3
}

fn default_noise() -> f64 {
    0.35
}

/// Recipe that regenerates a [`TaskSet`] bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum Provenance {
    Teacher {
        input_dim: usize,
        n: usize,
        m: usize,
        rank: usize,
        noise: f64,
        seed: u64,
    },
    PermutedLabels {
        base: BaseSource,
        n: usize,
        m: usize,
        seed: u64,
    },
    ShuffledPixels {
        base: BaseSource,
        n: usize,
        m: usize,
        pixels: usize,
        seed: u64,
    },
    Csv {
        path: String,
        schema: csv::CsvSchema,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct TaskSet<T> {
    pub tasks: Vec<Task<T>>,
    pub input_dim: usize,
    pub classes: usize,
    pub provenance: Provenance,
    pub split: SplitPolicy,
}

/// JSON manifest describing a task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetManifest {
    pub provenance: Provenance,
    pub split: SplitPolicy,
    pub n: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub m_per_task: Vec<usize>,
    pub train_per_task: Vec<usize>,
}

impl<T: Scalar> TaskSet<T> {
    /// Split each task's full sample with a per-task seeded permutation.
    pub fn from_full(
        full: Vec<Dataset<T>>,
        provenance: Provenance,
        split: SplitPolicy,
        split_stream: &RngStream,
    ) -> Result<Self> {
        let first = full.first().ok_or(Error::EmptyDataset)?;
        let (input_dim, classes) = (first.dim(), first.classes());
        let tasks = full
            .iter()
            .enumerate()
            .map(|(j, d)| Task::split(d, split, &split_stream.derive_index("split", j as u64)))
            .collect();
        Ok(Self {
            tasks,
            input_dim,
            classes,
            provenance,
            split,
        })
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    /// Smallest per-task training-set size (the `m` used by certificates).
    pub fn min_train(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).min().unwrap_or(0)
    }

    pub fn train_sets(&self) -> Vec<&Dataset<T>> {
        self.tasks.iter().map(|t| &t.train).collect()
    }

    pub fn val_sets(&self) -> Vec<&Dataset<T>> {
        self.tasks.iter().map(|t| &t.val).collect()
    }

    /// First `n` tasks.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            tasks: self.tasks[..n.min(self.tasks.len())].to_vec(),
            input_dim: self.input_dim,
            classes: self.classes,
            provenance: self.provenance.clone(),
            split: self.split,
        }
    }

    pub fn manifest(&self) -> TaskSetManifest {
        TaskSetManifest {
            provenance: self.provenance.clone(),
            split: self.split,
            n: self.n(),
            input_dim: self.input_dim,
            classes: self.classes,
            m_per_task: self.tasks.iter().map(Task::m).collect(),
            train_per_task: self.tasks.iter().map(|t| t.train.len()).collect(),
        }
    }

    /// Rebuild a task set from its recipe.
    pub fn generate(provenance: &Provenance, split: SplitPolicy) -> Result<Self> {
        match provenance {
            Provenance::Teacher {
                input_dim,
                n,
                m,
                rank,
                noise,
                seed,
            } => gen_teacher_tasks(*input_dim, *n, *m, *rank, *noise, *seed, split),
            Provenance::PermutedLabels { base, n, m, seed } => {
                let base = load_base(base)?;
                gen_permuted_labels(&base, base_source(provenance), *n, *m, *seed, split)
            }
            Provenance::ShuffledPixels {
                base,
                n,
                m,
                pixels,
                seed,
            } => {
                let base = load_base(base)?;
                gen_shuffled_pixels(&base, base_source(provenance), *n, *m, *pixels, *seed, split)
            }
            Provenance::Csv { path, schema, seed } => {
                let per_task = csv::load_csv_tasks::<T>(std::path::Path::new(path), schema)?;
                Self::from_full(per_task, provenance.clone(), split, &RngStream::new(*seed))
            }
        }
    }
}

fn base_source(p: &Provenance) -> BaseSource {
    match p {
        Provenance::PermutedLabels { base, .. } | Provenance::ShuffledPixels { base, .. } => base.clone(),
        _ => unreachable!("only label/pixel generators carry a base"),
    }
}

pub fn load_base<T: Scalar>(source: &BaseSource) -> Result<Dataset<T>> {
    match source {
        BaseSource::Prototypes {
            classes,
            dim,
            count,
            modes,
            noise,
            seed,
        } => gen_prototype_base(*classes, *dim, *count, *modes, *noise, *seed),
        BaseSource::Idx { images, labels } => {
            idx::load_idx_dataset(std::path::Path::new(images), std::path::Path::new(labels))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn split_sizes_follow_policy() {
        assert_eq!(SplitPolicy::default().sizes(600), (420, 120, 60));
        assert_eq!(SplitPolicy::default().sizes(10), (7, 2, 1));
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let ts: TaskSet<f64> = gen_teacher_tasks(6, 3, 50, 2, 0.0, 4, SplitPolicy::default()).unwrap();
        for t in &ts.tasks {
            let a: HashSet<_> = t.indices.train.iter().collect();
            let b: HashSet<_> = t.indices.val.iter().collect();
            let c: HashSet<_> = t.indices.test.iter().collect();
            assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            assert_eq!(a.len() + b.len() + c.len(), 50);
        }
    }

    #[test]
    fn regeneration_from_manifest_is_identical() {
        let ts: TaskSet<f64> = gen_teacher_tasks(5, 4, 40, 2, 0.1, 9, SplitPolicy::default()).unwrap();
        let manifest = ts.manifest();
        let json = serde_json::to_string(&manifest).unwrap();
        let back: TaskSetManifest = serde_json::from_str(&json).unwrap();
        let again: TaskSet<f64> = TaskSet::generate(&back.provenance, back.split).unwrap();
        for (a, b) in ts.tasks.iter().zip(&again.tasks) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.val, b.val);
            assert_eq!(a.test, b.test);
        }
    }
}
