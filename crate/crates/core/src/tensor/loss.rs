use super::Tensor;
use crate::error::{Error, Result};

/// Probability clamp used by [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// A scalar loss together with its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub grad: Tensor,
    /// Batch elements that contributed nothing (fully masked samples).
    pub skipped: usize,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape().len() != b.shape().len() {
        return Err(Error::dim(op, "rank", a.shape().len(), b.shape().len()));
    }
    for (axis, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(Error::dim(op, format!("axis {axis}"), x, y));
        }
    }
    Ok(())
}

/// Mean of squared differences over every element.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Loss> {
    same_shape("mse_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(Loss {
        value: sum / n,
        grad: Tensor::new(pred.shape(), grad)?,
        skipped: 0,
    })
}

/// Binary cross-entropy on probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<Loss> {
    same_shape("bce_loss", pred, target)?;
    let n = pred.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        let g = if p > BCE_EPS && p < 1.0 - BCE_EPS {
            (-t / pc + (1.0 - t) / (1.0 - pc)) / n
        } else {
            0.0
        };
        grad.push(g);
    }
    Ok(Loss {
        value: sum / n,
        grad: Tensor::new(pred.shape(), grad)?,
        skipped: 0,
    })
}

/// MSE that ignores voxels where `mask` is 1.
///
/// Each batch element is averaged over its unmasked voxels and the batch
/// loss is the mean over elements that have any. Elements whose mask covers
/// every voxel are skipped and counted in [`Loss::skipped`].
pub fn masked_mse_loss(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Loss> {
    same_shape("masked_mse_loss", pred, target)?;
    same_shape("masked_mse_loss", pred, mask)?;
    let batch = pred.shape()[0];
    let per = pred.len() / batch;
    let mut grad = vec![0.0; pred.len()];
    let mut per_sample = Vec::with_capacity(batch);
    let mut skipped = 0;
    for b in 0..batch {
        let range = b * per..(b + 1) * per;
        let m = &mask.data()[range.clone()];
        let free = m.iter().filter(|&&v| v == 0.0).count();
        if free == 0 {
            skipped += 1;
            continue;
        }
        let mut sum = 0.0;
        for i in range {
            if mask.data()[i] == 0.0 {
                let d = pred.data()[i] - target.data()[i];
                sum += d * d;
                grad[i] = 2.0 * d / free as f64;
            }
        }
        per_sample.push((b, sum / free as f64));
    }
    let used = per_sample.len();
    if used == 0 {
        return Ok(Loss {
            value: 0.0,
            grad: Tensor::zeros(pred.shape()),
            skipped,
        });
    }
    let scale = 1.0 / used as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(Loss {
        value: per_sample.iter().map(|(_, v)| v).sum::<f64>() * scale,
        grad: Tensor::new(pred.shape(), grad)?,
        skipped,
    })
}
