use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Per-sample `-log softmax(logits)[label]`, computed with the max-shift trick.
pub fn cross_entropy_per_sample<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>> {
    check_labels(logits, labels)?;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let lse = log_sum_exp(row);
            lse - row[labels[i]]
        })
        .collect())
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let per = cross_entropy_per_sample(logits, labels)?;
    let n = T::from_usize(per.len()).expect("batch size");
    Ok(per.into_iter().sum::<T>() / n)
}

/// Mean cross-entropy plus its gradient w.r.t. the logits, `(softmax - onehot) / N`.
pub fn cross_entropy_with_grad<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(Vec<T>, Tensor<T>)> {
    let per = cross_entropy_per_sample(logits, labels)?;
    let n = logits.rows();
    let inv_n = T::one() / T::from_usize(n).expect("batch size");
    let mut grad = Vec::with_capacity(logits.len());
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        for (c, &z) in row.iter().enumerate() {
            let p = (z - lse).exp();
            let target = if c == label { T::one() } else { T::zero() };
            grad.push((p - target) * inv_n);
        }
    }
    Ok((per, Tensor::new(logits.shape().to_vec(), grad)?))
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    m + row.iter().map(|&z| (z - m).exp()).sum::<T>().ln()
}

fn check_labels<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<()> {
    if logits.shape().len() != 2 {
        return Err(Error::input(format!("logits must be [N, C], got {:?}", logits.shape())));
    }
    if logits.rows() != labels.len() {
        return Err(Error::input(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::input("empty batch"));
    }
    let c = logits.row_len();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::input(format!("label {bad} out of range for {c} classes")));
    }
    Ok(())
}

/// Mean squared elementwise difference.
pub fn mse_loss<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_same_shape(output, target)?;
    let n = T::from_usize(output.len().max(1)).expect("len");
    Ok(output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| (o - t) * (o - t))
        .sum::<T>()
        / n)
}

/// MSE and its gradient w.r.t. `output`, `2 (output - target) / numel`.
pub fn mse_with_grad<T: Scalar>(output: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let loss = mse_loss(output, target)?;
    let scale = T::from_f64_lossy(2.0) / T::from_usize(output.len().max(1)).expect("len");
    let grad = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| (o - t) * scale)
        .collect();
    Ok((loss, Tensor::new(output.shape().to_vec(), grad)?))
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::input(format!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}
