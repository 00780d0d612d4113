use serde::{Deserialize, Serialize};

use crate::domain::{ConstraintSet, Dataset, LinearIneq, Matrix, Vector};
use crate::error::{Error, Result};
use crate::serde_util;

/// Multinomial logistic regression: `h(x) = argmax_k (W·x + b)_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    #[serde(with = "serde_util::matrix")]
    pub weights: Matrix,
    #[serde(with = "serde_util::vector")]
    pub bias: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxParams {
    pub epochs: usize,
    /// Initial step size of the backtracking line search.
    pub lr: f64,
    pub l2: f64,
}

impl Default for SoftmaxParams {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 1.0,
            l2: 1e-3,
        }
    }
}

impl SoftmaxModel {
    pub fn logits(&self, x: &Vector) -> Vector {
        &self.weights * x + &self.bias
    }

    pub fn predict(&self, x: &Vector) -> usize {
        self.logits(x).argmax().0
    }

    pub fn probabilities(&self, x: &Vector) -> Vector {
        let z = self.logits(x);
        let m = z.max();
        let e = z.map(|v| (v - m).exp());
        let s = e.sum();
        e / s
    }

    /// `(W_j − W_t)ᵀx ≤ b_t − b_j` for every class `j ≠ t`.
    pub(crate) fn region(&self, target: usize) -> ConstraintSet {
        let d = self.weights.ncols();
        let wt = self.weights.row(target);
        let ineqs = (0..self.weights.nrows())
            .filter(|&j| j != target)
            .map(|j| {
                LinearIneq::new(
                    (self.weights.row(j) - wt).transpose(),
                    self.bias[target] - self.bias[j],
                )
            })
            .collect();
        ConstraintSet::with_linear(d, ineqs).expect("region shares model dimension")
    }
}

/// Mean cross-entropy plus `l2/2·‖W‖²`, and its gradient.
fn loss_and_grad(
    x: &Matrix,
    labels: &[usize],
    w: &Matrix,
    b: &Vector,
    l2: f64,
) -> (f64, Matrix, Vector) {
    let n = x.nrows() as f64;
    let mut logits = x * w.transpose();
    let mut loss = 0.0;
    for (i, mut row) in logits.row_iter_mut().enumerate() {
        row += b.transpose();
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
        loss -= row[labels[i]].max(1e-300).ln();
        row[labels[i]] -= 1.0;
    }
    // logits now holds P − Y.
    let grad_w = logits.transpose() * x / n + w * l2;
    let grad_b = logits.row_sum().transpose() / n;
    (loss / n + 0.5 * l2 * w.norm_squared(), grad_w, grad_b)
}

/// Full-batch gradient descent with Armijo backtracking, so the training
/// loss never increases between epochs.
pub fn fit_softmax(data: &Dataset, params: &SoftmaxParams) -> Result<SoftmaxModel> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let present = data.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Training(
            "softmax regression needs at least two classes".into(),
        ));
    }
    if !(params.lr > 0.0) || params.l2 < 0.0 {
        return Err(Error::InvalidArgument("lr must be positive, l2 nonnegative".into()));
    }
    let x = data.features();
    let labels = data.labels();
    let (k, d) = (data.n_classes, data.dim());
    let mut w = Matrix::zeros(k, d);
    let mut b = Vector::zeros(k);
    let (mut loss, mut gw, mut gb) = loss_and_grad(&x, &labels, &w, &b, params.l2);
    let mut step = params.lr;
    for _ in 0..params.epochs {
        let gnorm = gw.norm_squared() + gb.norm_squared();
        if gnorm < 1e-20 {
            break;
        }
        let mut accepted = false;
        while step > 1e-12 {
            let w_new = &w - &gw * step;
            let b_new = &b - &gb * step;
            let (l_new, gw_new, gb_new) = loss_and_grad(&x, &labels, &w_new, &b_new, params.l2);
            if l_new <= loss - 1e-4 * step * gnorm {
                w = w_new;
                b = b_new;
                loss = l_new;
                gw = gw_new;
                gb = gb_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step *= 1.5;
    }
    Ok(SoftmaxModel { weights: w, bias: b })
}

/// Training loss of a fitted model; exposed for monotonicity checks.
pub fn softmax_loss(model: &SoftmaxModel, data: &Dataset, l2: f64) -> f64 {
    loss_and_grad(&data.features(), &data.labels(), &model.weights, &model.bias, l2).0
}
