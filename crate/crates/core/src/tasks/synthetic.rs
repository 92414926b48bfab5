use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BaseSource, Dataset, Provenance, SplitPolicy, TaskSet};
use crate::error::{Error, Result};
use crate::linalg::rng::RngStream;
use crate::scalar::Scalar;

/// Binary tasks labelled by linear teachers `w_j = U c_j` with `U` an
/// orthonormal `input_dim × rank` frame.
///
/// `rank == n` gives mutually orthogonal teachers, `rank == 1` identical ones.
/// Otherwise the first `rank` tasks use the frame axes and the rest random
/// unit combinations, so the teachers span exactly `rank` dimensions.
/// Labels are `1[w_j·x > 0]`, flipped with probability `noise`.
pub fn gen_teacher_tasks<T: Scalar>(
    input_dim: usize,
    n: usize,
    m: usize,
    rank: usize,
    noise: f64,
    seed: u64,
    split: SplitPolicy,
) -> Result<TaskSet<T>> {
    if n == 0 || m == 0 {
        return Err(Error::EmptyDataset);
    }
    if rank == 0 || rank > n || rank > input_dim {
        return Err(Error::InvalidArgument(format!(
            "teacher rank {rank} must lie in [1, min(n={n}, input_dim={input_dim})]"
        )));
    }
    if !(0.0..=0.5).contains(&noise) {
        return Err(Error::InvalidArgument(format!("label noise {noise} outside [0, 0.5]")));
    }
    let root = RngStream::new(seed);
    let frame = orthonormal_frame(input_dim, rank, &root.derive("teacher-frame"));
    let mut coef_rng = root.derive("teacher-coef").rng();
    let mut full = Vec::with_capacity(n);
    for j in 0..n {
        let c: Vec<f64> = if rank == 1 {
            vec![1.0]
        } else if j < rank {
            (0..rank).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
        } else {
            let g: Vec<f64> = (0..rank).map(|_| coef_rng.sample(StandardNormal)).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.into_iter().map(|v| v / norm).collect()
        };
        let w: Vec<f64> = (0..input_dim)
            .map(|p| (0..rank).map(|i| frame[i][p] * c[i]).sum())
            .collect();
        let mut rng = root.derive_index("teacher-x", j as u64).rng();
        let mut x = Vec::with_capacity(m * input_dim);
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            let row: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let score: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut y = usize::from(score > 0.0);
            if rng.gen::<f64>() < noise {
                y = 1 - y;
            }
            x.extend(row.into_iter().map(T::of));
            labels.push(y);
        }
        full.push(Dataset::new(x, input_dim, labels, 2)?);
    }
    let provenance = Provenance::Teacher {
        input_dim,
        n,
        m,
        rank,
        noise,
        seed,
    };
    TaskSet::from_full(full, provenance, split, &root.derive("split"))
}

fn orthonormal_frame(dim: usize, rank: usize, stream: &RngStream) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while frame.len() < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in &frame {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            frame.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    frame
}

/// Class-balanced synthetic images in `[0, 1]^dim`.
///
/// Each class owns `modes` uniform random prototypes; an example is a random
/// prototype of its class plus Gaussian noise of scale `noise`, clipped.
pub fn gen_prototype_base<T: Scalar>(
    classes: usize,
    dim: usize,
    count: usize,
    modes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes < 2 || dim == 0 || modes == 0 || count < classes {
        return Err(Error::InvalidArgument(format!(
            "prototype base needs classes >= 2, dim >= 1, modes >= 1, count >= classes (got {classes}, {dim}, {modes}, {count})"
        )));
    }
    let root = RngStream::new(seed);
    let mut prng = root.derive("prototypes").rng();
    let protos: Vec<Vec<f64>> = (0..classes * modes)
        .map(|_| (0..dim).map(|_| prng.gen::<f64>()).collect())
        .collect();
    let mut rng = root.derive("samples").rng();
    let mut x = Vec::with_capacity(count * dim);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let c = i % classes;
        let p = &protos[c * modes + rng.gen_range(0..modes)];
        for &mu in p {
            let z: f64 = rng.sample(StandardNormal);
            x.push(T::of((mu + noise * z).clamp(0.0, 1.0)));
        }
        labels.push(c);
    }
    Dataset::new(x, dim, labels, classes)
}

/// Draw `m` examples without replacement, as evenly across classes as possible.
fn stratified_sample<T: Scalar, R: Rng>(base: &Dataset<T>, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let classes = base.classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in base.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut picked = Vec::with_capacity(m);
    for (c, pool) in by_class.iter_mut().enumerate() {
        let want = m / classes + usize::from(c < m % classes);
        if pool.len() < want {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} examples, {want} needed for a stratified sample of {m}",
                pool.len()
            )));
        }
        pool.shuffle(rng);
        picked.extend_from_slice(&pool[..want]);
    }
    picked.shuffle(rng);
    Ok(picked)
}

/// Each task relabels a stratified sample of `base` through its own random
/// class permutation.
pub fn gen_permuted_labels<T: Scalar>(
    base: &Dataset<T>,
    source: BaseSource,
    n: usize,
    m: usize,
    seed: u64,
    split: SplitPolicy,
) -> Result<TaskSet<T>> {
    if n == 0 || m == 0 {
        return Err(Error::EmptyDataset);
    }
    let root = RngStream::new(seed);
    let mut full = Vec::with_capacity(n);
    for j in 0..n {
        let mut rng = root.derive_index("permuted-labels", j as u64).rng();
        let mut perm: Vec<usize> = (0..base.classes()).collect();
        perm.shuffle(&mut rng);
        let sample = base.subset(&stratified_sample(base, m, &mut rng)?);
        let labels = sample.labels().iter().map(|&y| perm[y]).collect();
        full.push(Dataset::new(sample.inputs().to_vec(), base.dim(), labels, base.classes())?);
    }
    let provenance = Provenance::PermutedLabels {
        base: source,
        n,
        m,
        seed,
    };
    TaskSet::from_full(full, provenance, split, &root.derive("split"))
}

/// Each task permutes a random subset of `pixels` input coordinates.
pub fn gen_shuffled_pixels<T: Scalar>(
    base: &Dataset<T>,
    source: BaseSource,
    n: usize,
    m: usize,
    pixels: usize,
    seed: u64,
    split: SplitPolicy,
) -> Result<TaskSet<T>> {
    if n == 0 || m == 0 {
        return Err(Error::EmptyDataset);
    }
    if pixels > base.dim() {
        return Err(Error::InvalidArgument(format!(
            "input dimension {} too small to shuffle {pixels} pixels",
            base.dim()
        )));
    }
    let dim = base.dim();
    let root = RngStream::new(seed);
    let mut full = Vec::with_capacity(n);
    for j in 0..n {
        let mut rng = root.derive_index("shuffled-pixels", j as u64).rng();
        let mut positions: Vec<usize> = (0..dim).collect();
        positions.shuffle(&mut rng);
        positions.truncate(pixels);
        let mut targets = positions.clone();
        targets.shuffle(&mut rng);
        let sample = base.subset(&stratified_sample(base, m, &mut rng)?);
        let mut x = sample.inputs().to_vec();
        for (r, row) in x.chunks_mut(dim).enumerate() {
            let src = sample.row(r);
            for (&to, &from) in targets.iter().zip(&positions) {
                row[to] = src[from];
            }
        }
        full.push(Dataset::new(x, dim, sample.labels().to_vec(), base.classes())?);
    }
    let provenance = Provenance::ShuffledPixels {
        base: source,
        n,
        m,
        pixels,
        seed,
    };
    TaskSet::from_full(full, provenance, split, &root.derive("split"))
}
