//! Dense numerical core for the model's forward and backward passes.
//!
//! Everything here operates on caller-owned row-major `f64` buffers. There is
//! no autodiff: each forward op has a hand-written backward counterpart, and
//! [`finite_diff_check`] is the oracle used to validate them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} elements ({rows}x{cols})", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · x` for every row, i.e. one inner product per row.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x + b`.
pub fn affine_forward(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols || b.len() != w.rows {
        return Err(Error::shape(
            "affine_forward",
            format!("W {}x{}, b {}, x {}", w.rows, w.cols, w.rows, w.cols),
            format!("W {}x{}, b {}, x {}", w.rows, w.cols, b.len(), x.len()),
        ));
    }
    Ok((0..w.rows).map(|i| dot(w.row(i), x) + b[i]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dw: Matrix,
    pub db: Vec<f64>,
    pub dx: Vec<f64>,
}

/// Gradients of `y = W x + b` given `dy`: `dW = dy xᵀ`, `db = dy`, `dx = Wᵀ dy`.
pub fn affine_backward(w: &Matrix, x: &[f64], dy: &[f64]) -> Result<AffineGrads> {
    let mut dw = Matrix::zeros(w.rows, w.cols);
    let mut db = vec![0.0; w.rows];
    let dx = affine_backward_accumulate(w, x, dy, dw.data_mut(), &mut db)?;
    Ok(AffineGrads { dw, db, dx })
}

/// Same as [`affine_backward`] but adds into existing gradient buffers.
pub fn affine_backward_accumulate(
    w: &Matrix,
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Result<Vec<f64>> {
    if x.len() != w.cols || dy.len() != w.rows || dw.len() != w.len() || db.len() != w.rows {
        return Err(Error::shape(
            "affine_backward",
            format!("x {}, dy {}", w.cols, w.rows),
            format!("x {}, dy {}", x.len(), dy.len()),
        ));
    }
    let mut dx = vec![0.0; w.cols];
    for (i, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        axpy(g, x, &mut dw[i * w.cols..(i + 1) * w.cols]);
        axpy(g, w.row(i), &mut dx);
    }
    Ok(dx)
}

/// Row-vector times matrix: `y = cᵀ W`, with `W` of shape `len(c) × m`.
pub fn project_forward(w: &Matrix, c: &[f64]) -> Result<Vec<f64>> {
    if c.len() != w.rows {
        return Err(Error::shape("project_forward", w.rows, c.len()));
    }
    let mut y = vec![0.0; w.cols];
    for (i, &ci) in c.iter().enumerate() {
        if ci != 0.0 {
            axpy(ci, w.row(i), &mut y);
        }
    }
    Ok(y)
}

/// Backward of [`project_forward`]: accumulates `dW += c dyᵀ`, returns `dc = W dy`.
pub fn project_backward_accumulate(
    w: &Matrix,
    c: &[f64],
    dy: &[f64],
    dw: &mut [f64],
) -> Result<Vec<f64>> {
    if c.len() != w.rows || dy.len() != w.cols || dw.len() != w.len() {
        return Err(Error::shape(
            "project_backward",
            format!("c {}, dy {}", w.rows, w.cols),
            format!("c {}, dy {}", c.len(), dy.len()),
        ));
    }
    let mut dc = vec![0.0; w.rows];
    for (i, &ci) in c.iter().enumerate() {
        dc[i] = dot(w.row(i), dy);
        if ci != 0.0 {
            axpy(ci, dy, &mut dw[i * w.cols..(i + 1) * w.cols]);
        }
    }
    Ok(dc)
}

/// Elementwise nonlinearity applied wherever the model uses `f(·)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative evaluated at the pre-activation `z`. ReLU uses subgradient 0 at 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn forward(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    pub fn backward(self, z: &[f64], dy: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(dy)
            .map(|(&v, &g)| g * self.derivative(v))
            .collect()
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    Activation::Relu.forward(x)
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    Activation::Relu.backward(x, dy)
}

/// Logistic function, evaluated branch-wise so large `|x|` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Keep flags from one dropout application.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    pub fn all_keep(len: usize) -> Self {
        DropoutMask {
            keep: vec![true; len],
            scale: 1.0,
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_all_keep(&self) -> bool {
        self.scale == 1.0 && self.keep.iter().all(|&k| k)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.keep)
            .map(|(&v, &k)| if k { v * self.scale } else { 0.0 })
            .collect()
    }

    pub fn backward(&self, dy: &[f64]) -> Vec<f64> {
        self.apply(dy)
    }
}

pub fn check_rate(field: &str, p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(field, format!("rate {p} must lie in [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. In training mode every element survives with probability
/// `1 - p` and is scaled by `1 / (1 - p)`; in inference mode it is the identity.
pub fn dropout<R: Rng + ?Sized>(
    x: &[f64],
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<(Vec<f64>, DropoutMask)> {
    check_rate("dropout", p)?;
    if !training || p == 0.0 {
        return Ok((x.to_vec(), DropoutMask::all_keep(x.len())));
    }
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= p).collect();
    let mask = DropoutMask {
        keep,
        scale: 1.0 / (1.0 - p),
    };
    Ok((mask.apply(x), mask))
}

/// Mean binary cross-entropy over logits, with its gradient.
///
/// Uses `max(z, 0) - z·y + ln(1 + e^{-|z|})` per element; `dlogits = (σ(z) - y) / N`.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::shape("bce_with_logits", logits.len(), targets.len()));
    }
    if logits.is_empty() {
        return Err(Error::Empty("bce_with_logits logits"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}

/// Central-difference gradient check.
///
/// Returns the maximum over coordinates of `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match input");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
