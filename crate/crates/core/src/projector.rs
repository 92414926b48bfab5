//! Matrix-free Kronecker random projections.
//!
//! `P = (Q₁ ⊗ Q₂) / √D` with Gaussian factors. For ambient size `D` and
//! coefficient size `d` the factors are `D₁ × d₁` and `D₂ × d₂` with
//! `D₁ = ⌈√D⌉, D₂ = ⌈D / D₁⌉` (likewise for `d`); the padded product is
//! truncated to the first `D` rows and `d` columns. Row `i₁·D₂ + i₂`,
//! column `j₁·d₂ + j₂` of the Kronecker product is `Q₁[i₁,j₁]·Q₂[i₂,j₂]`.
//!
//! The factors are a pure function of the seed, so a projector never needs
//! to be stored: `(seed, D, d)` rebuilds it bit for bit.

use crate::error::{dim_err, Error, Result};
use crate::linalg::rng::{gaussian_vec, RngStream};
use crate::scalar::Scalar;

fn split_dim(n: usize) -> (usize, usize) {
    let mut a = (n as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding for large perfect squares
    while a > 1 && (a - 1) * (a - 1) >= n {
        a -= 1;
    }
    while a * a < n {
        a += 1;
    }
    (a, n.div_ceil(a))
}

#[derive(Debug, Clone)]
pub struct KroneckerProjector<T> {
    ambient: usize,
    coeff: usize,
    rows1: usize,
    cols1: usize,
    rows2: usize,
    cols2: usize,
    stream: RngStream,
    q1: Vec<T>,
    q2: Vec<T>,
    scale: f64,
}

impl<T: Scalar> KroneckerProjector<T> {
    pub fn new(ambient: usize, coeff: usize, stream: RngStream) -> Result<Self> {
        if ambient == 0 || coeff == 0 {
            return Err(Error::InvalidArgument(format!(
                "projector dimensions must be positive (D = {ambient}, d = {coeff})"
            )));
        }
        let (rows1, rows2) = split_dim(ambient);
        let (cols1, cols2) = split_dim(coeff);
        let q1 = gaussian_vec(&stream.derive("kron-q1"), rows1 * cols1);
        let q2 = gaussian_vec(&stream.derive("kron-q2"), rows2 * cols2);
        Ok(Self {
            ambient,
            coeff,
            rows1,
            cols1,
            rows2,
            cols2,
            stream,
            q1,
            q2,
            scale: 1.0 / (ambient as f64).sqrt(),
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn coeff_dim(&self) -> usize {
        self.coeff
    }

    pub fn stream(&self) -> RngStream {
        self.stream
    }

    /// `((D₁, d₁), (D₂, d₂))`.
    pub fn factor_shapes(&self) -> ((usize, usize), (usize, usize)) {
        ((self.rows1, self.cols1), (self.rows2, self.cols2))
    }

    /// Row-major factors `Q₁` and `Q₂` (unscaled).
    pub fn factors(&self) -> (&[T], &[T]) {
        (&self.q1, &self.q2)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `P w`, computed as `Q₁ · W · Q₂ᵀ` on the `d₁ × d₂` reshape of `w`.
    pub fn apply(&self, w: &[T]) -> Result<Vec<T>> {
        if w.len() != self.coeff {
            return Err(dim_err("projector apply (coefficient length d)", self.coeff, w.len()));
        }
        let w: Vec<f64> = w.iter().map(|v| v.f64()).collect();
        Ok(self.apply_f64(&w).into_iter().map(T::of).collect())
    }

    /// Unchecked `P w` in `f64`; `w.len()` must equal `d`.
    pub fn apply_f64(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.coeff);
        let (c1, c2) = (self.cols1, self.cols2);
        // t = Q₁ · W   (D₁ × d₂)
        let mut t = vec![0.0; self.rows1 * c2];
        for i1 in 0..self.rows1 {
            let q1_row = &self.q1[i1 * c1..(i1 + 1) * c1];
            let t_row = &mut t[i1 * c2..(i1 + 1) * c2];
            for (j1, q) in q1_row.iter().enumerate() {
                let start = j1 * c2;
                if start >= w.len() {
                    break;
                }
                let q = q.f64();
                let end = (start + c2).min(w.len());
                for (tv, &wv) in t_row.iter_mut().zip(&w[start..end]) {
                    *tv += q * wv;
                }
            }
        }
        // y = t · Q₂ᵀ, truncated to D entries
        let mut y = vec![0.0; self.ambient];
        for (idx, out) in y.iter_mut().enumerate() {
            let (i1, i2) = (idx / self.rows2, idx % self.rows2);
            let t_row = &t[i1 * c2..(i1 + 1) * c2];
            let q2_row = &self.q2[i2 * c2..(i2 + 1) * c2];
            let mut s = 0.0;
            for (a, b) in t_row.iter().zip(q2_row) {
                s += a * b.f64();
            }
            *out = s * self.scale;
        }
        y
    }

    /// `Pᵀ g`, the exact transpose of [`apply`](Self::apply).
    pub fn adjoint_apply(&self, g: &[T]) -> Result<Vec<T>> {
        if g.len() != self.ambient {
            return Err(dim_err("projector adjoint (ambient length D)", self.ambient, g.len()));
        }
        let g: Vec<f64> = g.iter().map(|v| v.f64()).collect();
        Ok(self.adjoint_f64(&g).into_iter().map(T::of).collect())
    }

    /// Unchecked `Pᵀ g` in `f64`; `g.len()` must equal `D`.
    pub fn adjoint_f64(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.ambient);
        let (c1, c2) = (self.cols1, self.cols2);
        // h = G · Q₂   (D₁ × d₂), G the zero-padded D₁ × D₂ reshape of g
        let mut h = vec![0.0; self.rows1 * c2];
        for (i1, g_row) in g.chunks(self.rows2).enumerate() {
            let h_row = &mut h[i1 * c2..(i1 + 1) * c2];
            for (i2, &gv) in g_row.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                for (hv, q) in h_row.iter_mut().zip(&self.q2[i2 * c2..(i2 + 1) * c2]) {
                    *hv += gv * q.f64();
                }
            }
        }
        // W = Q₁ᵀ · h   (d₁ × d₂), truncated to d entries
        let mut wfull = vec![0.0; c1 * c2];
        for i1 in 0..self.rows1 {
            let h_row = &h[i1 * c2..(i1 + 1) * c2];
            for j1 in 0..c1 {
                let q = self.q1[i1 * c1 + j1].f64();
                for (wv, hv) in wfull[j1 * c2..(j1 + 1) * c2].iter_mut().zip(h_row) {
                    *wv += q * hv;
                }
            }
        }
        wfull.truncate(self.coeff);
        for v in &mut wfull {
            *v *= self.scale;
        }
        wfull
    }
}

/// Learned basis `Q = [P₁v₁, …, P_k v_k]` built from one projector
/// `Q′ = [P₁, …, P_k]` with `k·l` columns.
#[derive(Debug, Clone)]
pub struct SharedBasis<T> {
    projector: KroneckerProjector<T>,
    k: usize,
    l: usize,
    /// `k` blocks of `l` coefficients, block `i` is `vᵢ`.
    pub v: Vec<T>,
}

impl<T: Scalar> SharedBasis<T> {
    pub fn new(ambient: usize, k: usize, l: usize, stream: RngStream, v: Vec<T>) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(Error::InvalidArgument(format!(
                "shared basis needs k >= 1 and l >= 1 (k = {k}, l = {l})"
            )));
        }
        if v.len() != k * l {
            return Err(dim_err("shared basis coefficients (k·l)", k * l, v.len()));
        }
        let projector = KroneckerProjector::new(ambient, k * l, stream)?;
        Ok(Self { projector, k, l, v })
    }

    /// Basis with `vᵢ ~ N(0, 1/l)` drawn from `init`.
    pub fn random(ambient: usize, k: usize, l: usize, stream: RngStream, init: &RngStream) -> Result<Self> {
        let s = 1.0 / (l.max(1) as f64).sqrt();
        let v: Vec<T> = gaussian_vec::<f64>(init, k * l)
            .into_iter()
            .map(|z| T::of(z * s))
            .collect();
        Self::new(ambient, k, l, stream, v)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn projector(&self) -> &KroneckerProjector<T> {
        &self.projector
    }

    /// `Q α = Σᵢ αᵢ Pᵢ vᵢ`.
    pub fn basis_combine(&self, alpha: &[T]) -> Result<Vec<T>> {
        if alpha.len() != self.k {
            return Err(dim_err("basis combine (alpha length k)", self.k, alpha.len()));
        }
        let a: Vec<f64> = alpha.iter().map(|v| v.f64()).collect();
        Ok(self.combine_f64(&a).into_iter().map(T::of).collect())
    }

    pub(crate) fn combine_f64(&self, alpha: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.k * self.l];
        for (i, &a) in alpha.iter().enumerate() {
            for (cv, vv) in c[i * self.l..(i + 1) * self.l]
                .iter_mut()
                .zip(&self.v[i * self.l..(i + 1) * self.l])
            {
                *cv = a * vv.f64();
            }
        }
        self.projector.apply_f64(&c)
    }

    /// Gradients of a loss w.r.t. `v` and `α`, given its ambient gradient `g`
    /// at `Q α`: with `u = Q′ᵀ g` split into blocks, `dvᵢ = αᵢ uᵢ` and
    /// `dαᵢ = ⟨vᵢ, uᵢ⟩`.
    pub fn basis_gradients(&self, alpha: &[T], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if alpha.len() != self.k {
            return Err(dim_err("basis gradients (alpha length k)", self.k, alpha.len()));
        }
        if g.len() != self.projector.ambient_dim() {
            return Err(dim_err("basis gradients (ambient length D)", self.projector.ambient_dim(), g.len()));
        }
        let a: Vec<f64> = alpha.iter().map(|v| v.f64()).collect();
        Ok(self.gradients_f64(&a, g))
    }

    pub(crate) fn gradients_f64(&self, alpha: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.projector.adjoint_f64(g);
        let mut dv = vec![0.0; self.k * self.l];
        let mut dalpha = vec![0.0; self.k];
        for i in 0..self.k {
            let ui = &u[i * self.l..(i + 1) * self.l];
            let vi = &self.v[i * self.l..(i + 1) * self.l];
            let mut s = 0.0;
            for ((d, &uv), vv) in dv[i * self.l..(i + 1) * self.l].iter_mut().zip(ui).zip(vi) {
                *d = alpha[i] * uv;
                s += vv.f64() * uv;
            }
            dalpha[i] = s;
        }
        (dv, dalpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Explicit `(Q₁ ⊗ Q₂)/√D`, first D rows and d columns, row-major.
    fn dense(p: &KroneckerProjector<f64>) -> Vec<f64> {
        let ((r1, c1), (r2, c2)) = p.factor_shapes();
        let (q1, q2) = p.factors();
        let (big_rows, big_cols) = (r1 * r2, c1 * c2);
        let mut full = vec![0.0; big_rows * big_cols];
        for i1 in 0..r1 {
            for j1 in 0..c1 {
                for i2 in 0..r2 {
                    for j2 in 0..c2 {
                        full[(i1 * r2 + i2) * big_cols + j1 * c2 + j2] = q1[i1 * c1 + j1] * q2[i2 * c2 + j2];
                    }
                }
            }
        }
        let (d_amb, d_co) = (p.ambient_dim(), p.coeff_dim());
        let s = 1.0 / (d_amb as f64).sqrt();
        let mut out = vec![0.0; d_amb * d_co];
        for i in 0..d_amb {
            for j in 0..d_co {
                out[i * d_co + j] = full[i * big_cols + j] * s;
            }
        }
        out
    }

    #[test]
    fn factor_split_rule() {
        assert_eq!(split_dim(4), (2, 2));
        assert_eq!(split_dim(10), (4, 3));
        assert_eq!(split_dim(1), (1, 1));
        assert_eq!(split_dim(10_000), (100, 100));
        assert_eq!(split_dim(10_001), (101, 100));
    }

    #[test]
    fn zero_coefficients_map_to_zero() {
        let p = KroneckerProjector::<f64>::new(37, 5, RngStream::new(1)).unwrap();
        assert_eq!(p.apply(&[0.0; 5]).unwrap(), vec![0.0; 37]);
        assert_eq!(p.adjoint_apply(&[0.0; 37]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn toy_size_matches_dense_kronecker() {
        let p = KroneckerProjector::<f64>::new(4, 2, RngStream::new(3)).unwrap();
        let m = dense(&p);
        let w = [0.7, -1.3];
        let y = p.apply(&w).unwrap();
        for i in 0..4 {
            let e = m[i * 2] * w[0] + m[i * 2 + 1] * w[1];
            assert!((y[i] - e).abs() < 1e-12);
        }
        let g = [0.1, 0.2, -0.3, 0.4];
        let a = p.adjoint_apply(&g).unwrap();
        for j in 0..2 {
            let e: f64 = (0..4).map(|i| m[i * 2 + j] * g[i]).sum();
            assert!((a[j] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rebuilding_from_seed_is_bit_identical() {
        let a = KroneckerProjector::<f64>::new(300, 17, RngStream::new(8)).unwrap();
        let b = KroneckerProjector::<f64>::new(300, 17, RngStream::new(8)).unwrap();
        let w: Vec<f64> = (0..17).map(|i| i as f64 * 0.1 - 0.5).collect();
        let ya: Vec<u64> = a.apply(&w).unwrap().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = b.apply(&w).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ya, yb);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = KroneckerProjector::<f64>::new(10, 3, RngStream::new(0)).unwrap();
        assert!(p.apply(&[1.0; 4]).is_err());
        assert!(p.adjoint_apply(&[1.0; 9]).is_err());
    }

    #[test]
    fn single_element_basis_is_plain_projection() {
        let b = SharedBasis::<f64>::random(50, 1, 6, RngStream::new(4), &RngStream::new(5)).unwrap();
        let direct = b.projector().apply(&b.v).unwrap();
        let combined = b.basis_combine(&[1.0]).unwrap();
        for (x, y) in direct.iter().zip(&combined) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(b.basis_combine(&[0.0]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn basis_combine_matches_dense_q() {
        let (d_amb, k, l) = (30, 3, 4);
        let b = SharedBasis::<f64>::random(d_amb, k, l, RngStream::new(6), &RngStream::new(7)).unwrap();
        let m = dense(b.projector());
        // Q[:, i] = P_i v_i with P_i the i-th block of l columns
        let mut q = vec![0.0; d_amb * k];
        for r in 0..d_amb {
            for i in 0..k {
                q[r * k + i] = (0..l).map(|j| m[r * k * l + i * l + j] * b.v[i * l + j]).sum();
            }
        }
        let alpha = [0.5, -2.0, 1.25];
        let y = b.basis_combine(&alpha).unwrap();
        for r in 0..d_amb {
            let e: f64 = (0..k).map(|i| q[r * k + i] * alpha[i]).sum();
            assert!((y[r] - e).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_gradients_match_finite_differences() {
        let (d_amb, k, l) = (40, 3, 5);
        let mut b = SharedBasis::<f64>::random(d_amb, k, l, RngStream::new(9), &RngStream::new(10)).unwrap();
        let target: Vec<f64> = gaussian_vec(&RngStream::new(11), d_amb);
        let alpha = vec![0.3, -0.8, 1.1];
        // toy loss: 0.5‖Qα − target‖², gradient g = Qα − target
        let loss = |b: &SharedBasis<f64>, a: &[f64]| -> f64 {
            let y = b.basis_combine(a).unwrap();
            0.5 * y.iter().zip(&target).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
        };
        let y = b.basis_combine(&alpha).unwrap();
        let g: Vec<f64> = y.iter().zip(&target).map(|(p, t)| p - t).collect();
        let (dv, da) = b.basis_gradients(&alpha, &g).unwrap();
        let h = 1e-6;
        for i in 0..k {
            let mut ap = alpha.clone();
            let mut am = alpha.clone();
            ap[i] += h;
            am[i] -= h;
            let fd = (loss(&b, &ap) - loss(&b, &am)) / (2.0 * h);
            assert!((fd - da[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "alpha {i}: {fd} vs {}", da[i]);
        }
        for j in 0..k * l {
            let orig = b.v[j];
            b.v[j] = orig + h;
            let lp = loss(&b, &alpha);
            b.v[j] = orig - h;
            let lm = loss(&b, &alpha);
            b.v[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dv[j]).abs() <= 1e-4 * fd.abs().max(1e-3), "v {j}: {fd} vs {}", dv[j]);
        }
    }

    #[test]
    fn degenerate_gradients() {
        let mut b = SharedBasis::<f64>::random(25, 2, 3, RngStream::new(1), &RngStream::new(2)).unwrap();
        let g: Vec<f64> = gaussian_vec(&RngStream::new(3), 25);
        let (dv, da) = b.basis_gradients(&[0.0, 0.0], &g).unwrap();
        assert!(dv.iter().all(|&x| x == 0.0));
        assert!(da.iter().any(|&x| x != 0.0));
        b.v = vec![0.0; 6];
        let (_, da) = b.basis_gradients(&[1.0, -1.0], &g).unwrap();
        assert!(da.iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn adjoint_identity(d_amb in 1usize..200, d_co in 1usize..40, seed in any::<u64>()) {
            let p = KroneckerProjector::<f64>::new(d_amb, d_co, RngStream::new(seed)).unwrap();
            let w: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 1), d_co);
            let g: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 2), d_amb);
            let pw = p.apply(&w).unwrap();
            let ptg = p.adjoint_apply(&g).unwrap();
            let lhs: f64 = pw.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = w.iter().zip(&ptg).map(|(a, b)| a * b).sum();
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * nw * ng);
        }

        #[test]
        fn apply_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let p = KroneckerProjector::<f64>::new(90, 11, RngStream::new(seed)).unwrap();
            let w1: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 3), 11);
            let w2: Vec<f64> = gaussian_vec(&RngStream::new(seed ^ 4), 11);
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = p.apply(&mix).unwrap();
            let y1 = p.apply(&w1).unwrap();
            let y2 = p.apply(&w2).unwrap();
            for i in 0..90 {
                prop_assert!((lhs[i] - (a * y1[i] + b * y2[i])).abs() < 1e-10);
            }
        }
    }
}
