//! Numerically stable softmax and cross-entropy.

use ndarray::Array1;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Softmax over a logit vector; entries are nonnegative and sum to 1.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.as_slice().expect("contiguous"));
    logits.mapv(|s| (s - lse).exp())
}

/// Cross-entropy of a one-hot target against `softmax(logits)`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `softmax(logits) - onehot(target)`.
pub fn softmax_ce(logits: &Array1<f64>, target: usize) -> (f64, Array1<f64>) {
    assert!(target < logits.len(), "target class out of range");
    let lse = log_sum_exp(logits.as_slice().expect("contiguous"));
    let loss = lse - logits[target];
    let mut grad = logits.mapv(|s| (s - lse).exp());
    grad[target] -= 1.0;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::central_diff_matches;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_loss_is_log_c() {
        let logits = Array1::zeros(8);
        let (loss, _) = softmax_ce(&logits, 3);
        assert!((loss - (8.0f64).ln()).abs() < 1e-12);
        assert!((loss - 2.0794).abs() < 1e-3);
    }

    #[test]
    fn saturated_logit_loss_near_zero() {
        let mut logits = Array1::zeros(8);
        logits[2] = 1000.0;
        let (loss, _) = softmax_ce(&logits, 2);
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn softmax_sums_to_one() {
        let logits = array![3.0, -2.0, 700.0, 0.5];
        let p = softmax(&logits);
        assert!(p.iter().all(|v| *v >= 0.0));
        assert!((p.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = rng.gen_range(2..10);
            let target = rng.gen_range(0..c);
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let f = |x: &[f64]| softmax_ce(&Array1::from(x.to_vec()), target).0;
            let analytic = softmax_ce(&Array1::from(logits.clone()), target).1;
            assert!(central_diff_matches(
                f,
                &logits,
                analytic.as_slice().unwrap(),
                1e-6,
                1e-8,
            ));
        }
    }
}
