//! Loss terms of the composite objective.
//!
//! Every loss comes in two flavours: a plain evaluation on tensors and a
//! `*_with_grad` variant that also returns the gradient with respect to the
//! network output it consumes, which the autodiff graph splices in as a
//! terminal node.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::{Scalar, Tensor};

/// Probability clamp applied before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Sum over batch and pixels.
    Sum,
    /// Mean over batch and pixels.
    #[default]
    Mean,
}

/// The four loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub pseu: f64,
    pub covid: f64,
    pub fool: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Parts with `total` filled in from `weights`.
    pub fn new(rec: f64, pseu: f64, covid: f64, fool: f64, weights: &LossWeights) -> Result<Self> {
        let mut parts = Self {
            rec,
            pseu,
            covid,
            fool,
            total: 0.0,
        };
        parts.total = loss_total(&parts, weights)?;
        Ok(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_pseu: f64,
    pub w_covid: f64,
    pub w_fool: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_rec: 1.0,
            w_pseu: 1.0,
            w_covid: 1.0,
            w_fool: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_rec", self.w_rec),
            ("w_pseu", self.w_pseu),
            ("w_covid", self.w_covid),
            ("w_fool", self.w_fool),
        ] {
            ensure!(w.is_finite() && w >= 0.0, "loss weight {name} must be finite and nonnegative, got {w}");
        }
        Ok(())
    }
}

/// `w_rec·rec + w_pseu·pseu + w_covid·covid + w_fool·fool`, summed in that order.
pub fn loss_total(parts: &LossBreakdown, weights: &LossWeights) -> Result<f64> {
    for (name, v) in [
        ("rec", parts.rec),
        ("pseu", parts.pseu),
        ("covid", parts.covid),
        ("fool", parts.fool),
    ] {
        ensure!(v.is_finite(), "loss part {name} is not finite ({v})");
    }
    weights.validate()?;
    let mut total = weights.w_rec * parts.rec;
    total += weights.w_pseu * parts.pseu;
    total += weights.w_covid * parts.covid;
    total += weights.w_fool * parts.fool;
    Ok(total)
}

/// Squared reconstruction error and its gradient with respect to `x_hat`.
pub fn loss_rec_with_grad<T: Scalar>(
    x: &Tensor<T>,
    x_hat: &Tensor<T>,
    reduction: Reduction,
) -> Result<(T, Tensor<T>)> {
    ensure!(
        x.shape() == x_hat.shape(),
        "reconstruction shape {:?} does not match input shape {:?}",
        x_hat.shape(),
        x.shape()
    );
    let scale = match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean => T::one() / T::from_usize(x.len().max(1)).unwrap(),
    };
    let two = T::from_f64_lossy(2.0);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(x.len());
    for (&a, &b) in x.data().iter().zip(x_hat.data()) {
        let d = b - a;
        total = total + d * d;
        grad.push(two * d * scale);
    }
    Ok((total * scale, Tensor::from_vec(x.shape(), grad)))
}

pub fn loss_rec<T: Scalar>(x: &Tensor<T>, x_hat: &Tensor<T>, reduction: Reduction) -> Result<f64> {
    Ok(loss_rec_with_grad(x, x_hat, reduction)?.0.to_f64_lossy())
}

/// Mean binary cross-entropy of probabilities `y_hat` against labels `y`.
pub fn loss_covid_with_grad<T: Scalar>(y: &[u8], y_hat: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    ensure!(
        y.len() == y_hat.len(),
        "{} labels for {} predictions",
        y.len(),
        y_hat.len()
    );
    ensure!(!y.is_empty(), "empty batch");
    if let Some(bad) = y.iter().find(|&&l| l > 1) {
        return Err(Error::Validation(format!("task label {bad} is not binary")));
    }
    let eps = T::from_f64_lossy(PROB_EPS);
    let lo = eps;
    let hi = T::one() - eps;
    let inv_n = T::one() / T::from_usize(y.len()).unwrap();
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(y.len());
    for (&label, &p) in y.iter().zip(y_hat.data()) {
        let clamped = p.max(lo).min(hi);
        let inside = p > lo && p < hi;
        if label == 1 {
            total = total - clamped.ln();
            grad.push(if inside { -inv_n / clamped } else { T::zero() });
        } else {
            total = total - (T::one() - clamped).ln();
            grad.push(if inside { inv_n / (T::one() - clamped) } else { T::zero() });
        }
    }
    Ok((total * inv_n, Tensor::from_vec(y_hat.shape(), grad)))
}

pub fn loss_covid<T: Scalar>(y: &[u8], y_hat: &Tensor<T>) -> Result<f64> {
    Ok(loss_covid_with_grad(y, y_hat)?.0.to_f64_lossy())
}

fn check_logits<T: Scalar>(logits: &Tensor<T>) -> Result<(usize, usize)> {
    ensure!(
        logits.shape().len() == 2,
        "logits must be (batch, classes), got {:?}",
        logits.shape()
    );
    let (n, k) = (logits.dim(0), logits.dim(1));
    ensure!(n > 0, "empty batch");
    ensure!(k >= 2, "need at least two classes, got {k}");
    Ok((n, k))
}

/// Row-wise log-softmax.
pub fn log_softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Mean categorical cross-entropy of `logits` against dataset labels `p`.
pub fn loss_pseu_with_grad<T: Scalar>(p: &[usize], logits: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, k) = check_logits(logits)?;
    ensure!(p.len() == n, "{} labels for {n} logit rows", p.len());
    if let Some(bad) = p.iter().find(|&&l| l >= k) {
        return Err(Error::Validation(format!(
            "dataset label {bad} out of range for {k} classes"
        )));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(p) {
        let ls = log_softmax(row);
        total = total - ls[label];
        for (j, &l) in ls.iter().enumerate() {
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((l.exp() - target) * inv_n);
        }
    }
    Ok((total * inv_n, Tensor::from_vec(logits.shape(), grad)))
}

pub fn loss_pseu<T: Scalar>(p: &[usize], logits: &Tensor<T>) -> Result<f64> {
    Ok(loss_pseu_with_grad(p, logits)?.0.to_f64_lossy())
}

/// Cross-entropy from the uniform distribution to `softmax(logits)`,
/// `-(1/K)·Σ log q_k` averaged over the batch.
///
/// Bounded below by `ln K`, reached exactly at uniform predictions.
pub fn loss_fool_with_grad<T: Scalar>(logits: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let (n, k) = check_logits(logits)?;
    let log_eps = T::from_f64_lossy(PROB_EPS.ln());
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let inv_k = T::one() / T::from_usize(k).unwrap();
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(n * k);
    for row in logits.data().chunks(k) {
        let ls = log_softmax(row);
        let mut unclamped = 0usize;
        let mut row_sum = T::zero();
        for &l in &ls {
            if l > log_eps {
                unclamped += 1;
                row_sum = row_sum + l;
            } else {
                row_sum = row_sum + log_eps;
            }
        }
        total = total - row_sum * inv_k;
        let u = T::from_usize(unclamped).unwrap();
        for &l in &ls {
            let own = if l > log_eps { T::one() } else { T::zero() };
            grad.push((l.exp() * u - own) * inv_k * inv_n);
        }
    }
    Ok((total * inv_n, Tensor::from_vec(logits.shape(), grad)))
}

pub fn loss_fool<T: Scalar>(logits: &Tensor<T>) -> Result<f64> {
    Ok(loss_fool_with_grad(logits)?.0.to_f64_lossy())
}
