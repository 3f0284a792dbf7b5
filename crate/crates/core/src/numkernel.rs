//! Dense linear algebra with hand-written backward passes, Adam, and seeded
//! initialization.
//!
//! Parameters are stored as `f32`; every reduction accumulates in `f64`, and
//! activations flowing through the model are `f64` vectors.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "matrix data length",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {x}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Matrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (rows + cols)).
    pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt() as f32;
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: f32) {
        self.data[i * self.cols + j] = x;
    }

    /// `x · self` for a row vector `x` of length `rows`.
    pub fn vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Dimension {
                context: "vector-matrix product",
                left: (1, x.len()),
                right: self.shape(),
            });
        }
        let mut out = vec![0.0f64; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(i)) {
                *o += xi * w as f64;
            }
        }
        Ok(out)
    }

    /// `self · y` for a column vector `y` of length `cols`.
    pub fn mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.cols {
            return Err(Error::Dimension {
                context: "matrix-vector product",
                left: self.shape(),
                right: (y.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(y)
                    .map(|(&w, &v)| w as f64 * v)
                    .sum()
            })
            .collect())
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            context: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    let mut acc = vec![0.0f64; b.cols];
    for i in 0..a.rows {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..a.cols {
            let aik = a.get(i, k) as f64;
            for (c, &bkj) in acc.iter_mut().zip(b.row(k)) {
                *c += aik * bkj as f64;
            }
        }
        for (o, &c) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = c as f32;
        }
    }
    Ok(out)
}

/// Gradients of `C = A·B` given `dC`: returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, d_out: &Matrix) -> Result<(Matrix, Matrix)> {
    if d_out.shape() != (a.rows, b.cols) || a.cols != b.rows {
        return Err(Error::Dimension {
            context: "matmul backward",
            left: d_out.shape(),
            right: (a.rows, b.cols),
        });
    }
    let mut da = Matrix::zeros(a.rows, a.cols);
    let mut db = Matrix::zeros(b.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let mut s = 0.0f64;
            for j in 0..b.cols {
                s += d_out.get(i, j) as f64 * b.get(k, j) as f64;
            }
            da.set(i, k, s as f32);
        }
    }
    for k in 0..b.rows {
        for j in 0..b.cols {
            let mut s = 0.0f64;
            for i in 0..a.rows {
                s += a.get(i, k) as f64 * d_out.get(i, j) as f64;
            }
            db.set(k, j, s as f32);
        }
    }
    Ok((da, db))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let na = dot_f32(a, a).sqrt();
    let nb = dot_f32(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot_f32(a, b) / (na * nb)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `dx_i = p_i (dp_i - Σ_j p_j dp_j)`.
pub fn softmax_backward(p: &[f64], d_p: &[f64]) -> Vec<f64> {
    let inner = dot(p, d_p);
    p.iter().zip(d_p).map(|(pi, dpi)| pi * (dpi - inner)).collect()
}

pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Backward of `y = x / ‖x‖`: `dx = (dy - y (y·dy)) / ‖x‖`.
pub fn l2_normalize_backward(x: &[f64], d_y: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let y: Vec<f64> = x.iter().map(|v| v / n).collect();
    let proj = dot(&y, d_y);
    Ok(y.iter().zip(d_y).map(|(yi, dyi)| (dyi - yi * proj) / n).collect())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, element-wise.
pub fn adam_step(param: &mut [f32], grad: &[f32], state: &mut AdamState, lr: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != state.m.len() || param.len() != state.v.len() {
        return Err(Error::Dimension {
            context: "adam step",
            left: (param.len(), 1),
            right: (grad.len(), 1),
        });
    }
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g as f64;
        let m_new = ADAM_BETA1 * *m as f64 + (1.0 - ADAM_BETA1) * g;
        let v_new = ADAM_BETA2 * *v as f64 + (1.0 - ADAM_BETA2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        if lr > 0.0 && m_new != 0.0 {
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
        }
    }
    Ok(())
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("f evaluated near coordinate {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Relative error used by all gradient checks: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Rng};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest};
    use rand::SeedableRng;

    #[test]
    fn identity_matmul() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.25, 4.0, -1.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &x).unwrap(), x);
    }

    #[test]
    fn small_matmul() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        match matmul(&a, &b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 2));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-12);
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normalize_cases() {
        let y = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-12 && (y[1] - 0.8).abs() < 1e-12);
        let u = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(l2_normalize(&u).unwrap(), u);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn adam_zero_gradient_only_ticks() {
        let mut p = vec![1.0f32, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
        let mut p = vec![0.5f32];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1).unwrap();
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut r = rng::stream(3, "t");
            let mut p = Matrix::xavier_uniform(4, 5, &mut r);
            let mut s = AdamState::new(20);
            for _ in 0..10 {
                let g: Vec<f32> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
                adam_step(p.data_mut(), &g, &mut s, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|x| dot(x, x), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-3 && (g[1] - 4.0).abs() < 1e-3);
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let g = finite_diff_grad(|x| x[0] * x[1], &[3.0, 5.0], 1e-4).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-3 && (g[1] - 3.0).abs() < 1e-3);
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[1e-4], 1e-4).is_err());
    }

    fn random_vec(r: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn kernel_backward_passes_match_finite_differences() {
        let mut r = Rng::seed_from_u64(11);
        for trial in 0..100 {
            let n = r.gen_range(2..=8);
            let x = random_vec(&mut r, n);
            let w = random_vec(&mut r, n);

            // softmax: f(x) = w · softmax(x)
            let analytic = softmax_backward(&softmax(&x), &w);
            let numeric = finite_diff_grad(|z| dot(&w, &softmax(z)), &x, 1e-5).unwrap();
            for (a, b) in analytic.iter().zip(&numeric) {
                assert!(relative_error(*a, *b, 1e-3) < 1e-3, "softmax trial {trial}");
            }

            // normalize: f(x) = w · x/‖x‖
            let analytic = l2_normalize_backward(&x, &w).unwrap();
            let numeric =
                finite_diff_grad(|z| dot(&w, &l2_normalize(z).unwrap()), &x, 1e-5).unwrap();
            for (a, b) in analytic.iter().zip(&numeric) {
                assert!(relative_error(*a, *b, 1e-3) < 1e-3, "normalize trial {trial}");
            }

            // matmul: f(A) = Σ dC ⊙ (A·B)
            let (rows, inner, cols) = (r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4));
            let a_vals = random_vec(&mut r, rows * inner);
            let b = Matrix::xavier_uniform(inner, cols, &mut r);
            let d_c = Matrix::xavier_uniform(rows, cols, &mut r);
            let a = Matrix::from_vec(rows, inner, a_vals.iter().map(|&v| v as f32).collect()).unwrap();
            let (da, _) = matmul_backward(&a, &b, &d_c).unwrap();
            let f = |z: &[f64]| {
                let mut s = 0.0;
                for i in 0..rows {
                    for j in 0..cols {
                        let c: f64 = (0..inner).map(|k| z[i * inner + k] * b.get(k, j) as f64).sum();
                        s += c * d_c.get(i, j) as f64;
                    }
                }
                s
            };
            let a_exact: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
            let numeric = finite_diff_grad(f, &a_exact, 1e-4).unwrap();
            for (x, y) in da.data().iter().zip(&numeric) {
                assert!(relative_error(*x as f64, *y, 1e-3) < 1e-3, "matmul trial {trial}");
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(x in proptest::collection::vec(-1e4f64..1e4, 1..50)) {
            let p = softmax(&x);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn adam_with_zero_lr_is_identity(
            p in proptest::collection::vec(-5f32..5.0, 1..20),
            seed in any::<u64>(),
        ) {
            let mut r = Rng::seed_from_u64(seed);
            let g: Vec<f32> = (0..p.len()).map(|_| r.gen_range(-3.0..3.0)).collect();
            let mut q = p.clone();
            let mut s = AdamState::new(p.len());
            adam_step(&mut q, &g, &mut s, 0.0).unwrap();
            prop_assert_eq!(q, p);
        }

        #[test]
        fn normalize_gives_unit_norm(x in proptest::collection::vec(-100f64..100.0, 1..30)) {
            prop_assume!(norm(&x) > 1e-6);
            let y = l2_normalize(&x).unwrap();
            prop_assert!((norm(&y) - 1.0).abs() < 1e-6);
        }
    }
}
