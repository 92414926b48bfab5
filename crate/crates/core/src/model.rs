//! Trainable views over a frozen random initialization θ₀.
//!
//! | mode     | trainables      | realized weights            |
//! |----------|-----------------|-----------------------------|
//! | direct   | θ (D values)    | θ                           |
//! | single   | w (d)           | θ₀ + P w                    |
//! | shared   | v₁..v_k, α₁..α_n| θⱼ = θ₀ + Q αⱼ              |
//! | transfer | α (k), w (k′)   | θ₀ + Q α + P w, Q frozen    |
//!
//! Trainables are exposed as one flat vector in the order of the table
//! (shared: all of `v` then `α₁, …, α_n`; transfer: `α` then `w`).

use std::io::{Read, Write};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::network::NetworkSpec;
use crate::linalg::rng::RngStream;
use crate::projector::{KroneckerProjector, SharedBasis};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum Mode<T> {
    Direct {
        theta: Vec<T>,
    },
    Single {
        projector: KroneckerProjector<T>,
        w: Vec<T>,
    },
    Shared {
        basis: SharedBasis<T>,
        /// `n × k`, row `j` is `αⱼ`.
        alphas: Vec<T>,
        tasks: usize,
    },
    Transfer {
        basis: SharedBasis<T>,
        alpha: Vec<T>,
        /// `None` when k′ = 0.
        projector: Option<KroneckerProjector<T>>,
        w: Vec<T>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Direct,
    Single,
    Shared,
    Transfer,
}

/// Gradient of a loss w.r.t. the trainable coefficients, per mode.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientGrad {
    Direct(Vec<f64>),
    Single(Vec<f64>),
    Shared { dv: Vec<f64>, dalpha: Vec<f64> },
    Transfer { dalpha: Vec<f64>, dw: Vec<f64> },
}

impl CoefficientGrad {
    /// Same order as [`SubspaceModel::trainables`].
    pub fn flatten(self) -> Vec<f64> {
        match self {
            CoefficientGrad::Direct(g) | CoefficientGrad::Single(g) => g,
            CoefficientGrad::Shared { mut dv, dalpha } => {
                dv.extend(dalpha);
                dv
            }
            CoefficientGrad::Transfer { mut dalpha, dw } => {
                dalpha.extend(dw);
                dalpha
            }
        }
    }
}

/// Exact trainable count and its per-task amortization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainableCount {
    pub total: u64,
    pub amortized: Ratio<u64>,
}

/// `lk/n + k` as an exact rational.
pub fn amortized_count(l: u64, k: u64, n: u64) -> Ratio<u64> {
    Ratio::new(l * k + n * k, n)
}

#[derive(Debug, Clone)]
pub struct SubspaceModel<T> {
    spec: NetworkSpec,
    theta0_stream: RngStream,
    theta0: Vec<T>,
    pub mode: Mode<T>,
}

impl<T: Scalar> SubspaceModel<T> {
    fn base(spec: NetworkSpec, theta0_stream: RngStream) -> Result<(NetworkSpec, Vec<T>)> {
        spec.validate()?;
        let theta0 = spec.init_params(&theta0_stream);
        Ok((spec, theta0))
    }

    /// Full-parameter training, starting from θ₀.
    pub fn direct(spec: NetworkSpec, theta0_stream: RngStream) -> Result<Self> {
        let (spec, theta0) = Self::base(spec, theta0_stream)?;
        Ok(Self {
            mode: Mode::Direct { theta: theta0.clone() },
            spec,
            theta0_stream,
            theta0,
        })
    }

    pub fn single(spec: NetworkSpec, theta0_stream: RngStream, d: usize, projector_stream: RngStream) -> Result<Self> {
        let (spec, theta0) = Self::base(spec, theta0_stream)?;
        let projector = KroneckerProjector::new(theta0.len(), d, projector_stream)?;
        Ok(Self {
            mode: Mode::Single {
                projector,
                w: vec![T::zero(); d],
            },
            spec,
            theta0_stream,
            theta0,
        })
    }

    /// Shared basis with `vᵢ ~ N(0, 1/l)` and all `αⱼ = 0`.
    pub fn shared(
        spec: NetworkSpec,
        theta0_stream: RngStream,
        tasks: usize,
        k: usize,
        l: usize,
        projector_stream: RngStream,
        init_stream: RngStream,
    ) -> Result<Self> {
        if tasks == 0 {
            return Err(Error::InvalidArgument("shared mode needs at least one task".into()));
        }
        let (spec, theta0) = Self::base(spec, theta0_stream)?;
        let basis = SharedBasis::random(theta0.len(), k, l, projector_stream, &init_stream)?;
        Ok(Self {
            mode: Mode::Shared {
                basis,
                alphas: vec![T::zero(); tasks * k],
                tasks,
            },
            spec,
            theta0_stream,
            theta0,
        })
    }

    /// New-task model over a frozen basis plus `k_prime` fresh random directions.
    pub fn transfer(
        spec: NetworkSpec,
        theta0_stream: RngStream,
        basis: SharedBasis<T>,
        k_prime: usize,
        projector_stream: RngStream,
    ) -> Result<Self> {
        let (spec, theta0) = Self::base(spec, theta0_stream)?;
        if basis.projector().ambient_dim() != theta0.len() {
            return Err(dim_err("transfer basis ambient dimension", theta0.len(), basis.projector().ambient_dim()));
        }
        let projector = if k_prime > 0 {
            Some(KroneckerProjector::new(theta0.len(), k_prime, projector_stream)?)
        } else {
            None
        };
        let k = basis.k();
        Ok(Self {
            mode: Mode::Transfer {
                basis,
                alpha: vec![T::zero(); k],
                projector,
                w: vec![T::zero(); k_prime],
            },
            spec,
            theta0_stream,
            theta0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn theta0(&self) -> &[T] {
        &self.theta0
    }

    pub fn theta0_stream(&self) -> RngStream {
        self.theta0_stream
    }

    pub fn ambient_dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn kind(&self) -> ModeKind {
        match self.mode {
            Mode::Direct { .. } => ModeKind::Direct,
            Mode::Single { .. } => ModeKind::Single,
            Mode::Shared { .. } => ModeKind::Shared,
            Mode::Transfer { .. } => ModeKind::Transfer,
        }
    }

    /// Number of tasks served (n for shared mode, 1 otherwise).
    pub fn task_count(&self) -> usize {
        match self.mode {
            Mode::Shared { tasks, .. } => tasks,
            _ => 1,
        }
    }

    fn check_task(&self, task: Option<usize>) -> Result<()> {
        match (&self.mode, task) {
            (Mode::Shared { tasks, .. }, Some(j)) if j < *tasks => Ok(()),
            (Mode::Shared { tasks, .. }, Some(j)) => Err(Error::InvalidArgument(format!(
                "task index {j} out of range for {tasks} tasks"
            ))),
            (Mode::Shared { .. }, None) => Err(Error::InvalidArgument("shared mode requires a task index".into())),
            (_, Some(_)) => Err(Error::InvalidArgument(
                "task index given for a single-task parametrization".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    /// Ambient weights for `task` (required iff the mode is shared).
    pub fn realize(&self, task: Option<usize>) -> Result<Vec<T>> {
        self.check_task(task)?;
        Ok(self.realize_unchecked(task.unwrap_or(0)))
    }

    pub(crate) fn realize_unchecked(&self, task: usize) -> Vec<T> {
        let offset: Option<Vec<f64>> = match &self.mode {
            Mode::Direct { theta } => return theta.clone(),
            Mode::Single { projector, w } => Some(projector.apply_f64(&to_f64(w))),
            Mode::Shared { basis, alphas, .. } => {
                let k = basis.k();
                let a = to_f64(&alphas[task * k..(task + 1) * k]);
                (a.iter().any(|&x| x != 0.0)).then(|| basis.combine_f64(&a))
            }
            Mode::Transfer {
                basis,
                alpha,
                projector,
                w,
            } => {
                let mut off = basis.combine_f64(&to_f64(alpha));
                if let Some(p) = projector {
                    for (o, v) in off.iter_mut().zip(p.apply_f64(&to_f64(w))) {
                        *o += v;
                    }
                }
                Some(off)
            }
        };
        match offset {
            None => self.theta0.clone(),
            Some(off) => self
                .theta0
                .iter()
                .zip(off)
                .map(|(t, o)| T::of(t.f64() + o))
                .collect(),
        }
    }

    /// Pull an ambient gradient back onto the trainable coefficients of `task`.
    pub fn coefficient_grad(&self, task: Option<usize>, ambient_grad: &[f64]) -> Result<CoefficientGrad> {
        self.check_task(task)?;
        if ambient_grad.len() != self.ambient_dim() {
            return Err(dim_err("ambient gradient (D)", self.ambient_dim(), ambient_grad.len()));
        }
        Ok(self.coefficient_grad_unchecked(task.unwrap_or(0), ambient_grad))
    }

    pub(crate) fn coefficient_grad_unchecked(&self, task: usize, g: &[f64]) -> CoefficientGrad {
        match &self.mode {
            Mode::Direct { .. } => CoefficientGrad::Direct(g.to_vec()),
            Mode::Single { projector, .. } => CoefficientGrad::Single(projector.adjoint_f64(g)),
            Mode::Shared { basis, alphas, tasks } => {
                let k = basis.k();
                let a = to_f64(&alphas[task * k..(task + 1) * k]);
                let (dv, da) = basis.gradients_f64(&a, g);
                let mut dalpha = vec![0.0; tasks * k];
                dalpha[task * k..(task + 1) * k].copy_from_slice(&da);
                CoefficientGrad::Shared { dv, dalpha }
            }
            Mode::Transfer {
                basis,
                alpha,
                projector,
                ..
            } => {
                let (_, dalpha) = basis.gradients_f64(&to_f64(alpha), g);
                let dw = projector.as_ref().map_or_else(Vec::new, |p| p.adjoint_f64(g));
                CoefficientGrad::Transfer { dalpha, dw }
            }
        }
    }

    pub fn trainables(&self) -> Vec<T> {
        match &self.mode {
            Mode::Direct { theta } => theta.clone(),
            Mode::Single { w, .. } => w.clone(),
            Mode::Shared { basis, alphas, .. } => basis.v.iter().chain(alphas).copied().collect(),
            Mode::Transfer { alpha, w, .. } => alpha.iter().chain(w).copied().collect(),
        }
    }

    pub fn trainable_len(&self) -> usize {
        match &self.mode {
            Mode::Direct { theta } => theta.len(),
            Mode::Single { w, .. } => w.len(),
            Mode::Shared { basis, alphas, .. } => basis.v.len() + alphas.len(),
            Mode::Transfer { alpha, w, .. } => alpha.len() + w.len(),
        }
    }

    pub fn set_trainables(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.trainable_len() {
            return Err(dim_err("trainable coefficients", self.trainable_len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trainable coefficients"));
        }
        match &mut self.mode {
            Mode::Direct { theta } => theta.copy_from_slice(values),
            Mode::Single { w, .. } => w.copy_from_slice(values),
            Mode::Shared { basis, alphas, .. } => {
                let kl = basis.v.len();
                basis.v.copy_from_slice(&values[..kl]);
                alphas.copy_from_slice(&values[kl..]);
            }
            Mode::Transfer { alpha, w, .. } => {
                let k = alpha.len();
                alpha.copy_from_slice(&values[..k]);
                w.copy_from_slice(&values[k..]);
            }
        }
        Ok(())
    }

    pub fn trainable_count(&self) -> TrainableCount {
        match &self.mode {
            Mode::Shared { basis, tasks, .. } => {
                let (l, k, n) = (basis.l() as u64, basis.k() as u64, *tasks as u64);
                TrainableCount {
                    total: l * k + n * k,
                    amortized: amortized_count(l, k, n),
                }
            }
            _ => {
                let total = self.trainable_len() as u64;
                TrainableCount {
                    total,
                    amortized: Ratio::from_integer(total),
                }
            }
        }
    }

    /// Shared-mode basis, if any.
    pub fn basis(&self) -> Option<&SharedBasis<T>> {
        match &self.mode {
            Mode::Shared { basis, .. } | Mode::Transfer { basis, .. } => Some(basis),
            _ => None,
        }
    }

    /// Shared-mode per-task coefficients `αⱼ`.
    pub fn task_alpha(&self, task: usize) -> Option<&[T]> {
        match &self.mode {
            Mode::Shared { basis, alphas, tasks } if task < *tasks => {
                let k = basis.k();
                Some(&alphas[task * k..(task + 1) * k])
            }
            _ => None,
        }
    }
}

fn to_f64<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.f64()).collect()
}

// ---------------------------------------------------------------------------
// Checkpoint file
//
//   bytes 0..4   magic "AIDC"
//   byte  4      format version (1)
//   bytes 5..9   u32 big-endian length H of the JSON header
//   next H bytes UTF-8 JSON `CheckpointHeader`
//   then         `trainable_len` values, big-endian, in `dtype`
//   then         `frozen_len` values (transfer mode: the frozen basis v)
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"AIDC";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub spec: NetworkSpec,
    pub theta0_seed: u64,
    pub mode: ModeKind,
    /// Coefficient dimension d (single mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prime: Option<usize>,
    /// Seed of the single-mode projector or of the shared projector Q′.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector_seed: Option<u64>,
    /// Seed of the transfer-mode random projector P.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_projector_seed: Option<u64>,
    pub trainable_len: usize,
    pub frozen_len: usize,
    /// Free-form annotations (e.g. codebooks attached by a decoder).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

impl<T: Scalar> SubspaceModel<T> {
    pub fn checkpoint_header(&self) -> CheckpointHeader {
        let mut h = CheckpointHeader {
            dtype: T::DTYPE.to_string(),
            spec: self.spec.clone(),
            theta0_seed: self.theta0_stream.seed,
            mode: self.kind(),
            d: None,
            k: None,
            l: None,
            tasks: None,
            k_prime: None,
            projector_seed: None,
            transfer_projector_seed: None,
            trainable_len: self.trainable_len(),
            frozen_len: 0,
            extra: None,
        };
        match &self.mode {
            Mode::Direct { .. } => {}
            Mode::Single { projector, w } => {
                h.d = Some(w.len());
                h.projector_seed = Some(projector.stream().seed);
            }
            Mode::Shared { basis, tasks, .. } => {
                h.k = Some(basis.k());
                h.l = Some(basis.l());
                h.tasks = Some(*tasks);
                h.projector_seed = Some(basis.projector().stream().seed);
            }
            Mode::Transfer {
                basis, projector, w, ..
            } => {
                h.k = Some(basis.k());
                h.l = Some(basis.l());
                h.k_prime = Some(w.len());
                h.projector_seed = Some(basis.projector().stream().seed);
                h.transfer_projector_seed = projector.as_ref().map(|p| p.stream().seed);
                h.frozen_len = basis.v.len();
            }
        }
        h
    }

    pub fn write_checkpoint<W: Write>(&self, out: W, extra: Option<serde_json::Value>) -> Result<()> {
        let mut header = self.checkpoint_header();
        header.extra = extra;
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(9 + json.len() + (header.trainable_len + header.frozen_len) * T::BYTES);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(CHECKPOINT_VERSION);
        buf.extend_from_slice(&(json.len() as u32).to_be_bytes());
        buf.extend_from_slice(&json);
        for v in self.trainables() {
            v.write_be(&mut buf);
        }
        if let Mode::Transfer { basis, .. } = &self.mode {
            for v in &basis.v {
                v.write_be(&mut buf);
            }
        }
        let mut out = out;
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Self, CheckpointHeader)> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: bytes[4],
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u32::from_be_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(9..9 + hlen)
            .ok_or_else(|| Error::Parse("checkpoint header truncated".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Parse(format!(
                "checkpoint stores {} values, reader expects {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let block = &bytes[9 + hlen..];
        let expected = (header.trainable_len + header.frozen_len) * T::BYTES;
        if block.len() != expected {
            return Err(dim_err("checkpoint coefficient block (bytes)", expected, block.len()));
        }
        let values: Vec<T> = block.chunks_exact(T::BYTES).map(T::read_be).collect();
        let (trainables, frozen) = values.split_at(header.trainable_len);

        let missing = |field: &str| Error::Parse(format!("checkpoint header lacks `{field}`"));
        let theta0_stream = RngStream::new(header.theta0_seed);
        let spec = header.spec.clone();
        let mut model = match header.mode {
            ModeKind::Direct => Self::direct(spec, theta0_stream)?,
            ModeKind::Single => Self::single(
                spec,
                theta0_stream,
                header.d.ok_or_else(|| missing("d"))?,
                RngStream::new(header.projector_seed.ok_or_else(|| missing("projector_seed"))?),
            )?,
            ModeKind::Shared => {
                let k = header.k.ok_or_else(|| missing("k"))?;
                let l = header.l.ok_or_else(|| missing("l"))?;
                let tasks = header.tasks.ok_or_else(|| missing("tasks"))?;
                let seed = header.projector_seed.ok_or_else(|| missing("projector_seed"))?;
                let (spec, theta0) = Self::base(spec, theta0_stream)?;
                let basis = SharedBasis::new(theta0.len(), k, l, RngStream::new(seed), vec![T::zero(); k * l])?;
                Self {
                    mode: Mode::Shared {
                        basis,
                        alphas: vec![T::zero(); tasks * k],
                        tasks,
                    },
                    spec,
                    theta0_stream,
                    theta0,
                }
            }
            ModeKind::Transfer => {
                let k = header.k.ok_or_else(|| missing("k"))?;
                let l = header.l.ok_or_else(|| missing("l"))?;
                let kp = header.k_prime.ok_or_else(|| missing("k_prime"))?;
                let seed = header.projector_seed.ok_or_else(|| missing("projector_seed"))?;
                if frozen.len() != k * l {
                    return Err(dim_err("transfer frozen basis", k * l, frozen.len()));
                }
                let ambient = header.spec.param_count();
                let basis = SharedBasis::new(ambient, k, l, RngStream::new(seed), frozen.to_vec())?;
                let pseed = header.transfer_projector_seed.unwrap_or(0);
                Self::transfer(spec, theta0_stream, basis, kp, RngStream::new(pseed))?
            }
        };
        model.set_trainables(trainables)?;
        Ok((model, header))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::network::{forward_backward, Activation};
    use crate::linalg::rng::gaussian_vec;

    fn spec() -> NetworkSpec {
        NetworkSpec::mlp(4, &[5], 3, Activation::Elu)
    }

    fn shared_model(tasks: usize, k: usize, l: usize) -> SubspaceModel<f64> {
        SubspaceModel::shared(spec(), RngStream::new(1), tasks, k, l, RngStream::new(2), RngStream::new(3)).unwrap()
    }

    #[test]
    fn zero_coefficients_realize_theta0() {
        let single = SubspaceModel::<f64>::single(spec(), RngStream::new(1), 6, RngStream::new(2)).unwrap();
        assert_eq!(single.realize(None).unwrap(), single.theta0());
        let shared = shared_model(3, 2, 4);
        assert_eq!(shared.realize(Some(1)).unwrap(), shared.theta0());
    }

    #[test]
    fn single_mode_matches_dense_projection() {
        let mut m = SubspaceModel::<f64>::single(spec(), RngStream::new(1), 5, RngStream::new(2)).unwrap();
        let w: Vec<f64> = gaussian_vec(&RngStream::new(9), 5);
        m.set_trainables(&w).unwrap();
        let Mode::Single { projector, .. } = &m.mode else { unreachable!() };
        let ((_, c1), (r2, c2)) = projector.factor_shapes();
        let (q1, q2) = projector.factors();
        let big_d = m.ambient_dim();
        let theta = m.realize(None).unwrap();
        for row in 0..big_d {
            let (i1, i2) = (row / r2, row % r2);
            let mut s = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let (j1, j2) = (j / c2, j % c2);
                s += q1[i1 * c1 + j1] * q2[i2 * c2 + j2] * wj;
            }
            let expect = m.theta0()[row] + s / (big_d as f64).sqrt();
            assert!((theta[row] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_alphas_give_identical_models() {
        let mut m = shared_model(3, 2, 4);
        let mut t = m.trainables();
        for j in 0..3 {
            t[8 + 2 * j] = 0.4;
            t[8 + 2 * j + 1] = -1.1;
        }
        m.set_trainables(&t).unwrap();
        let a = m.realize(Some(0)).unwrap();
        assert_eq!(a, m.realize(Some(1)).unwrap());
        assert_eq!(a, m.realize(Some(2)).unwrap());
    }

    #[test]
    fn task_index_rules() {
        let m = shared_model(2, 1, 3);
        assert!(m.realize(None).is_err());
        assert!(m.realize(Some(2)).is_err());
        let s = SubspaceModel::<f64>::single(spec(), RngStream::new(1), 3, RngStream::new(2)).unwrap();
        assert!(s.realize(Some(0)).is_err());
    }

    fn task_loss(m: &SubspaceModel<f64>, task: Option<usize>, x: &[f64], y: &[usize]) -> f64 {
        let theta = m.realize(task).unwrap();
        forward_backward(m.spec(), &theta, x, y, None).loss_sum / y.len() as f64
    }

    fn check_fd(m: &mut SubspaceModel<f64>, task: Option<usize>) {
        let x: Vec<f64> = gaussian_vec(&RngStream::new(21), 6 * 4);
        let y = [0, 1, 2, 2, 1, 0];
        let theta = m.realize(task).unwrap();
        let mut g = vec![0.0; theta.len()];
        forward_backward(m.spec(), &theta, &x, &y, Some(&mut g));
        let analytic = m.coefficient_grad(task, &g).unwrap().flatten();
        let base = m.trainables();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            m.set_trainables(&p).unwrap();
            let lp = task_loss(m, task, &x, &y);
            p[i] -= 2.0 * h;
            m.set_trainables(&p).unwrap();
            let lm = task_loss(m, task, &x, &y);
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - analytic[i]).abs();
            assert!(err <= 1e-4 * fd.abs().max(analytic[i].abs()) || err < 1e-8, "coef {i}: fd {fd} vs {}", analytic[i]);
        }
        m.set_trainables(&base).unwrap();
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let mut single = SubspaceModel::<f64>::single(spec(), RngStream::new(1), 7, RngStream::new(2)).unwrap();
        let w: Vec<f64> = gaussian_vec(&RngStream::new(4), 7);
        single.set_trainables(&w).unwrap();
        check_fd(&mut single, None);

        let mut shared = shared_model(3, 2, 4);
        let t: Vec<f64> = gaussian_vec(&RngStream::new(5), shared.trainable_len());
        shared.set_trainables(&t).unwrap();
        check_fd(&mut shared, Some(1));

        let basis = shared.basis().unwrap().clone();
        let mut transfer = SubspaceModel::transfer(spec(), RngStream::new(1), basis, 3, RngStream::new(8)).unwrap();
        let t: Vec<f64> = gaussian_vec(&RngStream::new(6), transfer.trainable_len());
        transfer.set_trainables(&t).unwrap();
        check_fd(&mut transfer, None);
    }

    #[test]
    fn zero_ambient_gradient_gives_zero_bundle() {
        let mut m = shared_model(2, 2, 3);
        let t: Vec<f64> = gaussian_vec(&RngStream::new(5), m.trainable_len());
        m.set_trainables(&t).unwrap();
        let g = vec![0.0; m.ambient_dim()];
        assert!(m.coefficient_grad(Some(0), &g).unwrap().flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn other_tasks_receive_no_alpha_gradient() {
        let mut m = shared_model(3, 2, 3);
        let t: Vec<f64> = gaussian_vec(&RngStream::new(5), m.trainable_len());
        m.set_trainables(&t).unwrap();
        let g: Vec<f64> = gaussian_vec(&RngStream::new(6), m.ambient_dim());
        let CoefficientGrad::Shared { dalpha, .. } = m.coefficient_grad(Some(1), &g).unwrap() else {
            unreachable!()
        };
        assert!(dalpha[..2].iter().chain(&dalpha[4..]).all(|&x| x == 0.0));
        assert!(dalpha[2..4].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn unit_alphas_give_independent_models() {
        // k = n with αⱼ = eⱼ: task j only sees vⱼ.
        let (n, l) = (3, 4);
        let mut m = shared_model(n, n, l);
        let mut t = m.trainables();
        for j in 0..n {
            t[n * l + j * n + j] = 1.0;
        }
        m.set_trainables(&t).unwrap();
        let before: Vec<Vec<f64>> = (0..n).map(|j| m.realize(Some(j)).unwrap()).collect();
        t[0] += 0.5; // perturb v₀
        m.set_trainables(&t).unwrap();
        assert_ne!(m.realize(Some(0)).unwrap(), before[0]);
        assert_eq!(m.realize(Some(1)).unwrap(), before[1]);
        assert_eq!(m.realize(Some(2)).unwrap(), before[2]);
    }

    #[test]
    fn trainable_counts() {
        assert_eq!(amortized_count(65, 10, 30), Ratio::new(950, 30));
        assert_eq!(amortized_count(60, 5, 60), Ratio::from_integer(10));
        let m = shared_model(30, 10, 65);
        assert_eq!(m.trainable_count().total, 950);
        assert!((*m.trainable_count().amortized.numer() as f64 / *m.trainable_count().amortized.denom() as f64 - 31.6667).abs() < 1e-3);
        let one = shared_model(1, 1, 7);
        assert_eq!(one.trainable_count().total, 8);
        assert!(SubspaceModel::<f64>::shared(spec(), RngStream::new(1), 3, 0, 4, RngStream::new(2), RngStream::new(3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = shared_model(3, 2, 4);
        let t: Vec<f64> = gaussian_vec(&RngStream::new(5), m.trainable_len());
        m.set_trainables(&t).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf, None).unwrap();
        let (back, header) = SubspaceModel::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(header.mode, ModeKind::Shared);
        assert_eq!(back.trainables(), m.trainables());
        for j in 0..3 {
            assert_eq!(back.realize(Some(j)).unwrap(), m.realize(Some(j)).unwrap());
        }
        let basis = m.basis().unwrap().clone();
        let mut tr = SubspaceModel::transfer(spec(), RngStream::new(1), basis, 2, RngStream::new(7)).unwrap();
        tr.set_trainables(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut buf = Vec::new();
        tr.write_checkpoint(&mut buf, None).unwrap();
        let (back, _) = SubspaceModel::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.realize(None).unwrap(), tr.realize(None).unwrap());
        let f32_read = SubspaceModel::<f32>::read_checkpoint(&buf[..]);
        assert!(f32_read.is_err());
    }
}
