//! Loss heads: softmax cross-entropy for classification, sigmoid binary
//! cross-entropy for the membership attack models.

use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction. Rows sum to 1 within 1e-5.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2, "softmax expects [n, classes]");
    let (n, c) = (shape[0], shape[1]);
    let mut out = vec![0.0f32; n * c];
    for s in 0..n {
        let row = &logits.values()[s * c..(s + 1) * c];
        let orow = &mut out[s * c..(s + 1) * c];
        let max = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
        let mut sum = 0.0f32;
        for (o, &z) in orow.iter_mut().zip(row) {
            let e = (z - max).exp();
            *o = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    Tensor::from_vec(vec![n, c], out).expect("softmax output finite")
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
/// Probabilities are clamped away from zero for the loss value only; the
/// gradient uses the exact softmax.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2);
    let (n, c) = (shape[0], shape[1]);
    assert_eq!(labels.len(), n);
    let probs = softmax_rows(logits);
    let inv_n = 1.0 / n as f32;
    let mut dlogits = probs.values().to_vec();
    let mut loss = 0.0f64;
    for (s, &label) in labels.iter().enumerate() {
        let p = probs.values()[s * c + label].max(f32::MIN_POSITIVE);
        loss -= (p as f64).ln();
        dlogits[s * c + label] -= 1.0;
    }
    for d in dlogits.iter_mut() {
        *d *= inv_n;
    }
    (
        (loss / n as f64) as f32,
        Tensor::from_vec(vec![n, c], dlogits).expect("gradient finite"),
    )
}

pub fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean binary cross-entropy for a single-logit head (numerically stable
/// log-sum-exp form) and its gradient w.r.t. the logits.
pub fn binary_ce_grad(logits: &Tensor, targets: &[f32]) -> (f32, Tensor) {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2);
    assert_eq!(shape[1], 1, "binary head expects [n, 1] logits");
    let n = shape[0];
    assert_eq!(targets.len(), n);
    let inv_n = 1.0 / n as f32;
    let mut dlogits = vec![0.0f32; n];
    let mut loss = 0.0f64;
    for s in 0..n {
        let z = logits.values()[s];
        let y = targets[s];
        loss += (z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()) as f64;
        dlogits[s] = (sigmoid(z) - y) * inv_n;
    }
    (
        (loss / n as f64) as f32,
        Tensor::from_vec(vec![n, 1], dlogits).expect("gradient finite"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap();
        let p = softmax_rows(&logits);
        for s in 0..2 {
            let sum: f32 = p.values()[s * 3..(s + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn uniform_logits_loss_is_ln_class_count() {
        // 10 equal logits -> loss = ln 10.
        let logits = Tensor::from_vec(vec![1, 10], vec![0.3; 10]).unwrap();
        let (loss, _) = cross_entropy_grad(&logits, &[4]);
        assert!((loss - 10.0f32.ln()).abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn binary_ce_gradient_sign() {
        let logits = Tensor::from_vec(vec![2, 1], vec![2.0, -2.0]).unwrap();
        let (_, d) = binary_ce_grad(&logits, &[1.0, 0.0]);
        // Correctly-signed predictions: gradients small and pointing inward.
        assert!(d.values()[0] < 0.0 && d.values()[0].abs() < 0.1);
        assert!(d.values()[1] > 0.0 && d.values()[1].abs() < 0.1);
    }
}
