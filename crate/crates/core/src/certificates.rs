//! Compression-based generalization certificates for zero-one risk.
//!
//! All arithmetic is plain `f64`; bit lengths enter as real numbers so that
//! averaged per-task lengths can be used directly.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bernoulli divergence `kl(q | p)` in nats.
pub fn kl(q: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// Largest `p ∈ [q, 1]` with `kl(q | p) ≤ b`, found by bisection.
///
/// The bracket is halved until it stops shrinking, which is far below the
/// 1e-9 tolerance; the upper end is returned so the result never undershoots.
pub fn kl_inv(q: f64, b: f64) -> f64 {
    let q = q.clamp(0.0, 1.0);
    if b <= 0.0 || q >= 1.0 {
        return q;
    }
    if b.is_infinite() {
        return 1.0;
    }
    if q == 0.0 {
        return -(-b).exp_m1();
    }
    let (mut lo, mut hi) = (q, 1.0);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kl(q, mid) > b {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if kl(q, lo) >= b {
        lo
    } else {
        hi
    }
}

/// Occam bound for one task encoded with `bits` bits and `m` samples.
pub fn single_task_bound(m: f64, delta: f64, emp_risk: f64, bits: f64) -> f64 {
    (emp_risk + ((bits * LN_2 + (1.0 / delta).ln()) / (2.0 * m)).sqrt()).min(1.0)
}

/// kl form of the single-task bound (the `n = 1` case of [`mtl_fast_bound`]).
pub fn single_task_kl_bound(m: f64, delta: f64, emp_risk: f64, bits: f64) -> f64 {
    kl_inv(emp_risk, (bits * LN_2 + (2.0 * m.sqrt() / delta).ln()) / m)
}

/// Certificate for a task fitted on top of a frozen shared basis; `bits`
/// covers only the transfer coefficients and the codebook flag.
pub fn transfer_bound(m: f64, delta: f64, emp_risk: f64, bits: f64) -> f64 {
    single_task_bound(m, delta, emp_risk, bits)
}

pub fn mtl_slow_bound(i: &BoundInputs) -> f64 {
    let mn = i.mn();
    (i.emp_risk + ((i.total_bits() * LN_2 + (1.0 / i.delta).ln()) / (2.0 * mn)).sqrt()).min(1.0)
}

pub fn mtl_fast_bound(i: &BoundInputs) -> f64 {
    kl_inv(i.emp_risk, i.fast_budget())
}

pub fn pinsker_bound(i: &BoundInputs) -> f64 {
    (i.emp_risk + (i.fast_budget() / 2.0).sqrt()).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: u64,
    /// Samples per task; the minimum over tasks when they differ.
    pub m: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Average zero-one training error over all tasks.
    pub emp_risk: f64,
    /// Length of the shared (meta) code, `l(E)`.
    pub bits_meta: f64,
    /// Length of the per-task code, `l_E`.
    pub bits_multitask: f64,
}

pub fn default_delta() -> f64 {
    0.05
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.m == 0 {
            return bad(format!("n and m must be >= 1 (got n={}, m={})", self.n, self.m));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if !(0.0..=1.0).contains(&self.emp_risk) {
            return bad(format!("empirical risk {} outside [0, 1]", self.emp_risk));
        }
        for (name, b) in [("bits_meta", self.bits_meta), ("bits_multitask", self.bits_multitask)] {
            if !(b.is_finite() && b >= 0.0) {
                return bad(format!("{name} must be finite and >= 0 (got {b})"));
            }
        }
        Ok(())
    }

    fn mn(&self) -> f64 {
        self.m as f64 * self.n as f64
    }

    pub fn total_bits(&self) -> f64 {
        self.bits_meta + self.bits_multitask
    }

    fn fast_budget(&self) -> f64 {
        let mn = self.mn();
        (self.total_bits() * LN_2 + (2.0 * mn.sqrt() / self.delta).ln()) / mn
    }

    pub fn certify(&self) -> Result<BoundCertificate> {
        self.validate()?;
        Ok(BoundCertificate {
            inputs: *self,
            slow_rate: BoundValue::new(mtl_slow_bound(self)),
            fast_rate: BoundValue::new(mtl_fast_bound(self)),
            pinsker: BoundValue::new(pinsker_bound(self)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub non_vacuous: bool,
}

impl BoundValue {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            non_vacuous: value < 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub inputs: BoundInputs,
    pub slow_rate: BoundValue,
    pub fast_rate: BoundValue,
    pub pinsker: BoundValue,
}

/// Single-task certificates computed from per-task encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTaskCertificate {
    pub m: u64,
    pub delta: f64,
    pub emp_risk: f64,
    pub mean_bits: f64,
    /// Each task's bound at confidence `delta`, averaged.
    pub occam: BoundValue,
    pub kl: BoundValue,
    /// Same with `delta / n` per task, so all tasks hold simultaneously.
    pub occam_union: BoundValue,
    pub kl_union: BoundValue,
}

impl SingleTaskCertificate {
    /// `per_task` holds `(training error, code length in bits)` per task.
    pub fn from_tasks(m: u64, delta: f64, per_task: &[(f64, f64)]) -> Result<Self> {
        if per_task.is_empty() || m == 0 || !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(
                "single-task certificate needs tasks, m >= 1 and delta in (0, 1]".into(),
            ));
        }
        let n = per_task.len() as f64;
        let mf = m as f64;
        let mean = |f: &dyn Fn(f64, f64) -> f64| per_task.iter().map(|&(e, b)| f(e, b)).sum::<f64>() / n;
        Ok(Self {
            m,
            delta,
            emp_risk: mean(&|e, _| e),
            mean_bits: mean(&|_, b| b),
            occam: BoundValue::new(mean(&|e, b| single_task_bound(mf, delta, e, b))),
            kl: BoundValue::new(mean(&|e, b| single_task_kl_bound(mf, delta, e, b))),
            occam_union: BoundValue::new(mean(&|e, b| single_task_bound(mf, delta / n, e, b))),
            kl_union: BoundValue::new(mean(&|e, b| single_task_kl_bound(mf, delta / n, e, b))),
        })
    }
}
