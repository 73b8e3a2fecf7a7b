//! Standalone numeric ops shared by the tape and by callers that only need
//! forward values.

use crate::error::{Error, Result};

pub use super::tape::softmax;

/// Stable cross-entropy: returns (-log softmax(logits)[target], grad).
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::shape("softmax_xent", "need at least 2 logits"));
    }
    if target >= logits.len() {
        return Err(Error::Invalid(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
    let mut grad = probs;
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// z = mu + exp(0.5 * log_var) * eps, elementwise.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var.iter())
        .zip(eps.iter())
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_v() {
        let (loss, _) = softmax_xent(&[0.7; 4], 2).unwrap();
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let (loss, grad) = softmax_xent(&[1000.0, 0.0], 0).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn grad_sums_to_zero() {
        let (_, grad) = softmax_xent(&[0.3, -1.2, 2.0, 0.0, 0.4], 3).unwrap();
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn target_out_of_range_is_error() {
        assert!(softmax_xent(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn reparameterize_substitutes() {
        assert_eq!(reparameterize(&[2.0], &[0.0], &[0.5]), vec![2.5]);
        assert_eq!(reparameterize(&[1.0, -1.0], &[0.0, 2.0], &[0.0, 0.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn softmax_is_a_distribution() {
        // every teacher-forced output distribution goes through this path
        for logits in [
            vec![0.0, 0.0, 0.0],
            vec![5.0, -3.0, 1.5, 0.2, -0.9],
            vec![1e4, -1e4, 0.0],
        ] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
