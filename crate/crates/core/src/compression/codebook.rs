use half::f16;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::linalg::rng::RngStream;

pub const MAX_CODEBOOK: usize = 256;
const LLOYD_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    /// Shared-basis coefficients v.
    Global,
    /// Task coefficients α.
    Local,
    /// A single model's own coefficients (single-task or transfer).
    Task,
}

/// Strictly increasing half-precision cluster centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    #[serde(with = "f16_bits")]
    centers: Vec<f16>,
    kind: CodebookKind,
}

mod f16_bits {
    use half::f16;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f16], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|c| c.to_bits()).collect::<Vec<u16>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f16>, D::Error> {
        Ok(Vec::<u16>::deserialize(d)?.into_iter().map(f16::from_bits).collect())
    }
}

impl Codebook {
    pub fn new(centers: Vec<f16>, kind: CodebookKind) -> Result<Self> {
        if centers.is_empty() || centers.len() > MAX_CODEBOOK {
            return Err(Error::InvalidArgument(format!(
                "codebook size {} outside [1, {MAX_CODEBOOK}]",
                centers.len()
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("codebook center"));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("codebook centers must be strictly increasing".into()));
        }
        Ok(Self { centers, kind })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn centers(&self) -> &[f16] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> f64 {
        self.centers[i].to_f64()
    }

    pub fn centers_f64(&self) -> Vec<f64> {
        self.centers.iter().map(|c| c.to_f64()).collect()
    }

    /// Payload size: 16 bits per center.
    pub fn payload_bits(&self) -> usize {
        16 * self.len()
    }

    /// Extend with the next representable values above the largest center
    /// until `r` entries exist. Extra entries are never nearest to anything
    /// already quantized.
    pub fn padded_to(mut self, r: usize) -> Result<Self> {
        if r > MAX_CODEBOOK {
            return Err(Error::InvalidArgument(format!("codebook size {r} exceeds {MAX_CODEBOOK}")));
        }
        while self.centers.len() < r {
            let next = next_up(*self.centers.last().expect("nonempty"));
            if !next.is_finite() {
                return Err(Error::InvalidArgument("cannot pad codebook past the largest half".into()));
            }
            self.centers.push(next);
        }
        Ok(self)
    }

    pub fn write(&self, w: &mut BitWriter) {
        for c in &self.centers {
            w.push_bits(u64::from(c.to_bits()), 16);
        }
    }

    pub fn read(r: &mut BitReader<'_>, size: usize, kind: CodebookKind) -> Result<Self> {
        let centers = (0..size)
            .map(|_| r.read_bits(16).map(|b| f16::from_bits(b as u16)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(centers, kind).map_err(|e| Error::Corrupt(format!("decoded codebook invalid: {e}")))
    }
}

fn next_up(x: f16) -> f16 {
    let b = x.to_bits();
    if b == 0x8000 || b == 0 {
        f16::from_bits(1)
    } else if x.is_sign_negative() {
        f16::from_bits(b - 1)
    } else {
        f16::from_bits(b + 1)
    }
}

/// Index of the nearest center; a value exactly between two centers goes to
/// the lower one.
pub fn nearest(centers: &[f64], x: f64) -> usize {
    let hi = centers.partition_point(|&c| c < x);
    if hi == 0 {
        return 0;
    }
    if hi == centers.len() {
        return hi - 1;
    }
    if x - centers[hi - 1] <= centers[hi] - x {
        hi - 1
    } else {
        hi
    }
}

/// Index stream and the exact quantized values.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn quantize(values: &[f64], codebook: &Codebook) -> Quantized {
    let centers = codebook.centers_f64();
    let indices: Vec<usize> = values.iter().map(|&x| nearest(&centers, x)).collect();
    let values = indices.iter().map(|&i| centers[i]).collect();
    Quantized { indices, values }
}

pub fn dequantize(indices: &[usize], codebook: &Codebook) -> Vec<f64> {
    indices.iter().map(|&i| codebook.center(i)).collect()
}

/// One-dimensional k-means.
///
/// Runs Lloyd's algorithm from `restarts` k-means++ seedings, keeps the
/// lowest within-cluster sum of squares and rounds the centers to half
/// precision. `r` is reduced to the number of distinct values when larger.
pub fn kmeans_1d(
    values: &[f64],
    r: usize,
    restarts: usize,
    stream: &RngStream,
    kind: CodebookKind,
) -> Result<Codebook> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    if r == 0 || r > MAX_CODEBOOK {
        return Err(Error::InvalidArgument(format!("codebook size {r} outside [1, {MAX_CODEBOOK}]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let r_eff = r.min(distinct.len());
    if r_eff < r {
        log::warn!("k-means: {} distinct values, codebook reduced from {r} to {r_eff}", distinct.len());
    }
    let (centers, _) = fit_centers(&sorted, r_eff, restarts.max(1), stream);
    let mut half: Vec<f16> = centers.iter().map(|&c| f16::from_f64(c)).collect();
    half.dedup();
    if half.len() < r_eff {
        log::warn!("k-means: centers merged by half-precision rounding ({} -> {})", r_eff, half.len());
    }
    Codebook::new(half, kind)
}

/// Best Lloyd solution over restarts on sorted input: (sorted centers, SSE).
fn fit_centers(sorted: &[f64], r: usize, restarts: usize, stream: &RngStream) -> (Vec<f64>, f64) {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in 0..restarts {
        let mut rng = stream.derive_index("kmeans", s as u64).rng();
        let mut centers = seed_plus_plus(sorted, r, &mut rng);
        let mut assign = vec![usize::MAX; sorted.len()];
        for _ in 0..LLOYD_ITERS {
            centers.sort_by(f64::total_cmp);
            let mut changed = false;
            for (a, &x) in assign.iter_mut().zip(sorted) {
                let c = nearest(&centers, x);
                changed |= *a != c;
                *a = c;
            }
            if !changed {
                break;
            }
            let mut sum = vec![0.0; r];
            let mut cnt = vec![0usize; r];
            for (&a, &x) in assign.iter().zip(sorted) {
                sum[a] += x;
                cnt[a] += 1;
            }
            for j in 0..r {
                if cnt[j] > 0 {
                    centers[j] = sum[j] / cnt[j] as f64;
                } else {
                    // Re-seed an empty cluster at the worst-served point.
                    let far = (0..sorted.len())
                        .max_by(|&a, &b| {
                            let da = (sorted[a] - centers[assign[a]]).abs();
                            let db = (sorted[b] - centers[assign[b]]).abs();
                            da.total_cmp(&db)
                        })
                        .expect("nonempty");
                    centers[j] = sorted[far];
                }
            }
        }
        centers.sort_by(f64::total_cmp);
        let sse: f64 = sorted
            .iter()
            .map(|&x| (x - centers[nearest(&centers, x)]).powi(2))
            .sum();
        if best.as_ref().map_or(true, |b| sse < b.1) {
            best = Some((centers, sse));
        }
    }
    best.expect("at least one restart")
}

fn seed_plus_plus<R: Rng>(sorted: &[f64], r: usize, rng: &mut R) -> Vec<f64> {
    let mut centers = vec![sorted[rng.gen_range(0..sorted.len())]];
    while centers.len() < r {
        let d2: Vec<f64> = sorted
            .iter()
            .map(|&x| centers.iter().map(|c| (x - c).powi(2)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut t = rng.gen::<f64>() * total;
        let mut pick = sorted.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if t < d {
                pick = i;
                break;
            }
            t -= d;
        }
        centers.push(sorted[pick]);
    }
    // Fewer distinct seeds than r only when the data has fewer distinct values.
    while centers.len() < r {
        centers.push(centers[0]);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    /// Optimal 1-D clustering is a contiguous partition of the sorted data.
    fn exhaustive_sse(sorted: &[f64], r: usize) -> f64 {
        fn rec(xs: &[f64], r: usize) -> f64 {
            let cost = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            };
            if r == 1 {
                return cost(xs);
            }
            (1..=xs.len() - (r - 1))
                .map(|cut| cost(&xs[..cut]) + rec(&xs[cut..], r - 1))
                .fold(f64::INFINITY, f64::min)
        }
        rec(sorted, r)
    }

    #[test]
    fn three_point_example() {
        let cb = kmeans_1d(&[0.1, 0.11, 0.9], 2, 5, &RngStream::new(0), CodebookKind::Local).unwrap();
        assert_eq!(cb.centers(), &[f16::from_f64(0.105), f16::from_f64(0.9)]);
    }

    #[test]
    fn matches_exhaustive_partition() {
        let mut rng = RngStream::new(11).rng();
        for trial in 0..60 {
            let n = rng.gen_range(3..9);
            let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            xs.sort_by(f64::total_cmp);
            let r = rng.gen_range(1..=3.min(n));
            let (_, sse) = fit_centers(&xs, r, 20, &RngStream::new(trial));
            let opt = exhaustive_sse(&xs, r);
            assert!(sse <= opt + 1e-12, "trial {trial}: {sse} vs {opt}");
        }
    }

    #[test]
    fn distinct_count_limits_size() {
        let cb = kmeans_1d(&[0.5, -0.25, 0.5, 1.0], 10, 3, &RngStream::new(1), CodebookKind::Global).unwrap();
        assert_eq!(cb.len(), 3);
        let q = quantize(&[0.5, -0.25, 1.0], &cb);
        assert_eq!(q.values, vec![0.5, -0.25, 1.0]);
        let same = kmeans_1d(&[0.3; 7], 4, 2, &RngStream::new(2), CodebookKind::Global).unwrap();
        assert_eq!(same.len(), 1);
    }

    #[test]
    fn errors() {
        assert!(kmeans_1d(&[], 2, 1, &RngStream::new(0), CodebookKind::Local).is_err());
        assert!(kmeans_1d(&[f64::NAN], 2, 1, &RngStream::new(0), CodebookKind::Local).is_err());
        assert!(Codebook::new(vec![f16::from_f32(1.0), f16::from_f32(1.0)], CodebookKind::Local).is_err());
    }

    #[test]
    fn ties_go_low() {
        let cb = Codebook::new(vec![f16::from_f32(0.0), f16::from_f32(1.0)], CodebookKind::Local).unwrap();
        assert_eq!(quantize(&[0.5], &cb).indices, vec![0]);
        assert_eq!(quantize(&[0.5000001, 1.0, 0.0, -3.0, 7.0], &cb).indices, vec![1, 1, 0, 0, 1]);
    }

    #[test]
    fn padding_keeps_order() {
        let cb = Codebook::new(vec![f16::from_f32(-1.0), f16::from_f32(-0.0)], CodebookKind::Local)
            .unwrap()
            .padded_to(5)
            .unwrap();
        assert_eq!(cb.len(), 5);
        let neg = Codebook::new(vec![f16::from_f32(-2.0)], CodebookKind::Local).unwrap().padded_to(3).unwrap();
        assert!(neg.center(1) > -2.0 && neg.center(2) > neg.center(1));
    }

    #[test]
    fn serde_round_trip() {
        let cb = Codebook::new(vec![f16::from_f32(-0.5), f16::from_f32(0.25)], CodebookKind::Global).unwrap();
        let s = serde_json::to_string(&cb).unwrap();
        assert_eq!(serde_json::from_str::<Codebook>(&s).unwrap(), cb);
    }

    proptest! {
        #[test]
        fn quantization_error_within_half_gap(xs in proptest::collection::vec(-3.0..3.0f64, 4..60), r in 2usize..8) {
            let cb = kmeans_1d(&xs, r, 2, &RngStream::new(5), CodebookKind::Local).unwrap();
            let c = cb.centers_f64();
            let q = quantize(&xs, &cb);
            let max_gap = c.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            for (&x, &v) in xs.iter().zip(&q.values) {
                prop_assert!(c.contains(&v));
                let inside = x >= c[0] && x <= c[c.len() - 1];
                if inside {
                    prop_assert!((x - v).abs() <= max_gap / 2.0 + 1e-15);
                }
                // Exhaustive nearest check.
                let best = c.iter().map(|cc| (x - cc).abs()).fold(f64::INFINITY, f64::min);
                prop_assert!((x - v).abs() <= best);
            }
        }
    }
}
