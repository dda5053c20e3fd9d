//! Root-mean-squared error restricted to supervised pixels.
//!
//! Only pixels with `mask == true` are read; everything else contributes exactly nothing
//! to the value and receives an exactly-zero gradient, whatever it contains.

use crate::error::{Error, Result};

fn check(pred: usize, target: usize, mask: usize) -> Result<()> {
    if pred != target || pred != mask {
        return Err(Error::ShapeMismatch(format!(
            "pred {pred}, target {target}, mask {mask} elements"
        )));
    }
    Ok(())
}

/// `sqrt(sum_mask (pred - target)^2 / |mask|)`.
pub fn masked_rmse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    check(pred.len(), target.len(), mask.len())?;
    let mut sse = 0.0;
    let mut n = 0usize;
    for ((p, t), m) in pred.iter().zip(target).zip(mask) {
        if *m {
            sse += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sse / n as f64).sqrt())
}

/// Loss value and its gradient with respect to `pred`.
///
/// At a perfect fit the RMSE is not differentiable; the zero subgradient is returned.
pub fn masked_rmse_grad(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let loss = masked_rmse(pred, target, mask)?;
    let n = mask.iter().filter(|m| **m).count() as f64;
    let mut grad = vec![0.0; pred.len()];
    if loss > 0.0 {
        let scale = 1.0 / (n * loss);
        for (i, m) in mask.iter().enumerate() {
            if *m {
                grad[i] = (pred[i] - target[i]) * scale;
            }
        }
    }
    Ok((loss, grad))
}
