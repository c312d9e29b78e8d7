//! Scalar losses and their gradients with respect to the prediction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Tensor,
}

/// Reconstruction / regression losses selectable by the trainers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reconstruction {
    /// Squared Frobenius norm of the residual, summed over every entry.
    Frobenius,
    /// Squared error summed over features, averaged over rows.
    PerSample,
    /// Squared error averaged over every entry.
    Mse,
}

impl Reconstruction {
    pub fn eval(&self, pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
        match self {
            Reconstruction::Frobenius => loss_frobenius(pred, target),
            Reconstruction::Mse => loss_mse(pred, target),
            Reconstruction::PerSample => {
                let mut out = loss_frobenius(pred, target)?;
                let scale = 1.0 / pred.rows().max(1) as f64;
                out.value *= scale;
                out.grad.scale_inplace(scale);
                Ok(out)
            }
        }
    }
}

pub fn loss_frobenius(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    pred.check_same_shape(target, "loss_frobenius")?;
    let grad = pred.zip_map(target, |p, t| 2.0 * (p - t))?;
    let value = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(LossOutput { value, grad })
}

pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    let mut out = loss_frobenius(pred, target)?;
    let scale = 1.0 / pred.len().max(1) as f64;
    out.value *= scale;
    out.grad.scale_inplace(scale);
    Ok(out)
}

/// Mean binary cross-entropy. Predictions must lie strictly inside (0, 1).
pub fn loss_bce(pred: &Tensor, target: &Tensor) -> Result<LossOutput> {
    pred.check_same_shape(target, "loss_bce")?;
    if let Some(bad) = pred.data().iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Domain(format!(
            "binary cross-entropy needs predictions in (0, 1), got {bad}"
        )));
    }
    let n = pred.len().max(1) as f64;
    let value = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()))
        .sum::<f64>()
        / n;
    let grad = pred.zip_map(target, |p, t| (p - t) / (p * (1.0 - p)) / n)?;
    Ok(LossOutput { value, grad })
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean softmax cross-entropy over rows; `labels[i]` is the class of row `i`.
pub fn loss_softmax_ce(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension {
            op: "loss_softmax_ce",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = softmax(logits);
    let mut value = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        value -= row[label].max(f64::MIN_POSITIVE).ln();
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    Ok(LossOutput {
        value: value / n,
        grad,
    })
}

/// Indices of the row-wise maxima.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
