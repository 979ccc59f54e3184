//! Affinity matrices and the self-supervised objectives, with analytic
//! gradients with respect to the embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mat::Mat;

pub const DEFAULT_TEMPERATURE: f64 = 0.05;
/// Floor applied to return probabilities before the log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Cycle-consistent walk left -> right -> left.
    #[default]
    Crw,
    /// Direct left -> right transition, positives on the diagonal.
    Zero,
    /// Instance discrimination between a mono clip and an augmented view.
    Monoclr,
}

impl LossKind {
    pub fn id(self) -> &'static str {
        match self {
            LossKind::Crw => "crw",
            LossKind::Zero => "zero",
            LossKind::Monoclr => "monoclr",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "crw" => Some(LossKind::Crw),
            "zero" => Some(LossKind::Zero),
            "monoclr" => Some(LossKind::Monoclr),
            _ => None,
        }
    }
}

/// Row-stochastic transition matrix between two embedding sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: Mat,
    pub temperature: f64,
}

/// Loss value and gradients with respect to both embedding sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad_a: Mat,
    pub grad_b: Mat,
}

fn check_pair(h1: &Mat, h2: &Mat, c: f64) -> Result<()> {
    ensure!(
        h1.shape() == h2.shape(),
        ShapeMismatch,
        "embedding sets differ in shape: {:?} vs {:?}",
        h1.shape(),
        h2.shape()
    );
    ensure!(h1.rows() > 0, InvalidArgument, "empty embedding sequence");
    ensure!(c > 0.0 && c.is_finite(), InvalidArgument, "temperature must be positive, got {c}");
    Ok(())
}

fn softmax_rows(mut s: Mat) -> Mat {
    for r in 0..s.rows() {
        let row = s.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    s
}

fn logits(h1: &Mat, h2: &Mat, c: f64) -> Mat {
    let mut s = h1.matmul_t(h2).expect("checked shapes");
    s.scale(1.0 / c);
    s
}

/// `A(s, t) = softmax_t(h1(s) . h2(t) / c)`.
pub fn affinity(h1: &Mat, h2: &Mat, c: f64) -> Result<AffinityMatrix> {
    ensure!(h1.cols() == h2.cols(), ShapeMismatch, "embedding dims differ: {} vs {}", h1.cols(), h2.cols());
    ensure!(c > 0.0 && c.is_finite(), InvalidArgument, "temperature must be positive, got {c}");
    Ok(AffinityMatrix {
        values: softmax_rows(logits(h1, h2, c)),
        temperature: c,
    })
}

/// Gradient with respect to the logits of a row softmax.
fn softmax_backward(a: &Mat, da: &Mat) -> Mat {
    Mat::from_fn(a.rows(), a.cols(), |i, j| {
        let dot: f64 = a.row(i).iter().zip(da.row(i)).map(|(p, g)| p * g).sum();
        a.get(i, j) * (da.get(i, j) - dot)
    })
}

/// Accumulates `S = h1 h2^T / c` backward into both gradients.
fn logits_backward(ds: &Mat, h1: &Mat, h2: &Mat, c: f64, g1: &mut Mat, g2: &mut Mat) {
    let mut a = ds.matmul(h2).expect("shapes");
    a.scale(1.0 / c);
    g1.add_assign(&a);
    let mut b = ds.t_matmul(h1).expect("shapes");
    b.scale(1.0 / c);
    g2.add_assign(&b);
}

fn neg_mean_log_diag(diag: impl Iterator<Item = f64>, n: usize) -> f64 {
    -diag.map(|p| p.max(LOG_FLOOR).ln()).sum::<f64>() / n as f64
}

/// `-(1/n) tr log(A12 A21)` for given transition matrices.
pub fn crw_value(a12: &Mat, a21: &Mat) -> Result<f64> {
    let p = a12.matmul(a21)?;
    ensure!(p.rows() == p.cols(), ShapeMismatch, "walk must return to its start");
    Ok(neg_mean_log_diag((0..p.rows()).map(|i| p.get(i, i)), p.rows()))
}

/// `-(1/n) tr log A12`.
pub fn zero_value(a12: &Mat) -> Result<f64> {
    ensure!(a12.rows() == a12.cols(), ShapeMismatch, "affinity must be square");
    Ok(neg_mean_log_diag((0..a12.rows()).map(|i| a12.get(i, i)), a12.rows()))
}

/// Cycle walk from `h1` to `h2` and back; returns gradients for `(h1, h2)`.
pub fn crw_loss(h1: &Mat, h2: &Mat, c: f64) -> Result<LossGrad> {
    check_pair(h1, h2, c)?;
    let n = h1.rows();
    let a12 = softmax_rows(logits(h1, h2, c));
    let a21 = softmax_rows(logits(h2, h1, c));
    // Only the diagonal of the product is needed.
    let diag: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|k| a12.get(i, k) * a21.get(k, i)).sum())
        .collect();
    let value = neg_mean_log_diag(diag.iter().copied(), n);
    let dp: Vec<f64> = diag
        .iter()
        .map(|&p| if p > LOG_FLOOR { -1.0 / (n as f64 * p) } else { 0.0 })
        .collect();
    let da12 = Mat::from_fn(n, n, |i, k| dp[i] * a21.get(k, i));
    let da21 = Mat::from_fn(n, n, |k, i| dp[i] * a12.get(i, k));
    let mut g1 = Mat::zeros(n, h1.cols());
    let mut g2 = Mat::zeros(n, h1.cols());
    logits_backward(&softmax_backward(&a12, &da12), h1, h2, c, &mut g1, &mut g2);
    logits_backward(&softmax_backward(&a21, &da21), h2, h1, c, &mut g2, &mut g1);
    Ok(LossGrad {
        value,
        grad_a: g1,
        grad_b: g2,
    })
}

/// Temporally co-occurring windows as positives; returns gradients for `(h1, h2)`.
pub fn zero_loss(h1: &Mat, h2: &Mat, c: f64) -> Result<LossGrad> {
    check_pair(h1, h2, c)?;
    let n = h1.rows();
    let a12 = softmax_rows(logits(h1, h2, c));
    let value = neg_mean_log_diag((0..n).map(|i| a12.get(i, i)), n);
    let da = Mat::from_fn(n, n, |i, j| {
        let p = a12.get(i, i);
        if i == j && p > LOG_FLOOR {
            -1.0 / (n as f64 * p)
        } else {
            0.0
        }
    });
    let mut g1 = Mat::zeros(n, h1.cols());
    let mut g2 = Mat::zeros(n, h1.cols());
    logits_backward(&softmax_backward(&a12, &da), h1, h2, c, &mut g1, &mut g2);
    Ok(LossGrad {
        value,
        grad_a: g1,
        grad_b: g2,
    })
}

/// Instance discrimination: row `t` of `h` must pick out the augmented row
/// at the same audio position, `t + shift / step`, among all rows of `h_aug`.
/// Rows whose partner falls off the end are dropped.
pub fn monoclr_loss(h: &Mat, h_aug: &Mat, shift: i64, step: usize, c: f64) -> Result<LossGrad> {
    check_pair(h, h_aug, c)?;
    ensure!(step >= 1, InvalidArgument, "window step must be at least 1");
    ensure!(
        shift % step as i64 == 0,
        InvalidArgument,
        "shift of {shift} samples is not a multiple of the {step}-sample window step"
    );
    let n = h.rows() as i64;
    let offset = shift / step as i64;
    let pairs: Vec<(usize, usize)> = (0..n)
        .filter_map(|t| {
            let j = t + offset;
            (0..n).contains(&j).then_some((t as usize, j as usize))
        })
        .collect();
    ensure!(
        pairs.len() >= 2,
        InvalidArgument,
        "shift of {shift} samples leaves {} aligned windows out of {n}",
        pairs.len()
    );
    let m = pairs.len() as f64;
    let a = softmax_rows(logits(h, h_aug, c));
    let s = logits(h, h_aug, c);
    let mut value = 0.0;
    let mut ds = Mat::zeros(a.rows(), a.cols());
    for &(t, j) in &pairs {
        let row = s.row(t);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        value += (lse - row[j]) / m;
        for k in 0..a.cols() {
            let target = if k == j { 1.0 } else { 0.0 };
            ds.set(t, k, (a.get(t, k) - target) / m);
        }
    }
    let mut g1 = Mat::zeros(h.rows(), h.cols());
    let mut g2 = Mat::zeros(h.rows(), h.cols());
    logits_backward(&ds, h, h_aug, c, &mut g1, &mut g2);
    Ok(LossGrad {
        value,
        grad_a: g1,
        grad_b: g2,
    })
}
