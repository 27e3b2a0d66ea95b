use super::{Float, Tensor};
use crate::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy<T: Float>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let total: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_total = total.ln();
    let loss = log_total - (logits[label] - max);
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - max - log_total).exp()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

/// Mean cross-entropy over a `[batch, classes]` logit tensor. The gradient is
/// w.r.t. the logits of the mean loss.
pub fn softmax_cross_entropy_batch<T: Float>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    let (batch, classes) = match *logits.shape() {
        [b, c] => (b, c),
        ref s => return Err(Error::shape(format!("logits must be [batch, classes], got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(Error::shape(format!("{batch} logit rows but {} labels", labels.len())));
    }
    if batch == 0 {
        return Err(Error::shape("empty batch"));
    }
    let scale = T::one() / T::from_f64_lossy(batch as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let (l, g) = softmax_cross_entropy(row, label as usize)?;
        loss += l;
        grad.extend(g.into_iter().map(|v| v * scale));
    }
    Ok((loss * scale, Tensor::new(vec![batch, classes], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let (loss, grad) = softmax_cross_entropy(&[0.3f64; 8], 2).unwrap();
        assert!((loss - 8f64.ln()).abs() < 1e-12);
        assert!((grad[2] - (1.0 / 8.0 - 1.0)).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class_has_tiny_loss() {
        let (loss, _) = softmax_cross_entropy(&[100.0f64, 0.0, 0.0], 0).unwrap();
        assert!(loss <= 1e-9);
        let (loss, _) = softmax_cross_entropy(&[1000.0f32, 0.0, -1000.0], 2).unwrap();
        assert!(loss.is_finite() && (loss - 2000.0).abs() < 1e-2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Vec<f64> = (0..7).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.4).collect();
        let (_, grad) = softmax_cross_entropy(&logits, 4).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += h;
            let mut down = logits.clone();
            down[i] -= h;
            let numeric =
                (softmax_cross_entropy(&up, 4).unwrap().0 - softmax_cross_entropy(&down, 4).unwrap().0) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / (1e-8f64).max(numeric.abs() + grad[i].abs());
            assert!(rel < 1e-6, "component {i}: {numeric} vs {}", grad[i]);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0f32, 2.0, 3.0, -50.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_out_of_range_label() {
        assert!(softmax_cross_entropy(&[0.0f64, 1.0], 2).is_err());
    }
}
