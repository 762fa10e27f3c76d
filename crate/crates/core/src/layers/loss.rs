use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of an `N×C` logit matrix.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, classes) = logits.matrix_dims()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits,
/// `(softmax(z) − onehot(y)) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, classes) = logits.matrix_dims()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {n} logits",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for ((row, z), &y) in grad
        .data_mut()
        .chunks_exact_mut(classes)
        .zip(logits.data().chunks_exact(classes))
        .zip(labels)
    {
        // log-sum-exp form stays finite for confident wrong predictions
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_total = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_total - (z[y] - max);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let (loss, grad) = softmax_cross_entropy(&Tensor::zeros(&[3, 10]), &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        for row in grad.data().chunks(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::randn(&[5, 7], 3).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[0, 1, 2, 3, 6]).unwrap();
        for row in grad.data().chunks(7) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(&[1, 3]), &[3]),
            Err(Error::Data(_))
        ));
    }
}
