use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Mean absolute error.
pub fn l1_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    pred.expect_same_shape(target)?;
    let sum: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).abs())
        .sum();
    Ok(sum / T::c(pred.numel() as f64))
}

/// `sign(pred - target) / numel`, with a zero subgradient at exact ties.
pub fn l1_loss_backward<T: Float>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let inv = T::one() / T::c(pred.numel() as f64);
    pred.zip_map(target, |p, t| {
        if p > t {
            inv
        } else if p < t {
            -inv
        } else {
            T::zero()
        }
    })
}
