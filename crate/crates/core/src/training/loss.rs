use cxrfuse_nn::{Parameters, Scalar};

use crate::error::{Error, Result};

use super::LOSS_EPSILON;

/// Mean categorical cross-entropy of probability rows against one-hot rows,
/// plus a precomputed penalty (see [`l2_penalty`]).
pub fn cross_entropy_loss(probs: &[Vec<f64>], one_hot: &[Vec<f64>], penalty: f64) -> Result<f64> {
    if probs.len() != one_hot.len() || probs.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows against {} label rows",
            probs.len(),
            one_hot.len()
        )));
    }
    let mut total = 0.0;
    for (i, (p, y)) in probs.iter().zip(one_hot).enumerate() {
        if p.len() != y.len() {
            return Err(Error::Shape(format!("row {i}: {} probabilities, {} labels", p.len(), y.len())));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("row {i}: probabilities sum to {sum}")));
        }
        total -= p.iter().zip(y).map(|(&p, &y)| y * (p + LOSS_EPSILON).ln()).sum::<f64>();
    }
    Ok(total / probs.len() as f64 + penalty)
}

/// `coefficient * sum of squared kernel weights`. Biases and normalization
/// parameters are not penalized.
pub fn l2_penalty<T: Scalar, M: Parameters<T> + ?Sized>(model: &M, coefficient: f64) -> f64 {
    let mut s = 0.0;
    model.visit(&mut |p| {
        if p.kind.is_decayed() {
            s += p.value.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2)).sum::<f64>();
        }
    });
    coefficient * s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let uniform = vec![vec![0.25; 4]; 3];
        let labels = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let l = cross_entropy_loss(&uniform, &labels, 0.0).unwrap();
        assert!((l + (0.25 + LOSS_EPSILON).ln()).abs() < 1e-15);
        assert!((l - 4f64.ln()).abs() < 1e-11);

        let exact = cross_entropy_loss(&labels, &labels, 0.0).unwrap();
        assert!(exact.abs() <= 1e-11);

        let l = cross_entropy_loss(&[vec![0.7, 0.3]], &[vec![1.0, 0.0]], 0.0).unwrap();
        assert!((l - 0.356675).abs() < 1e-6);
        assert!((cross_entropy_loss(&[vec![0.7, 0.3]], &[vec![1.0, 0.0]], 0.5).unwrap() - l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        assert!(matches!(
            cross_entropy_loss(&[vec![0.5, 0.5]], &[vec![1.0, 0.0], vec![0.0, 1.0]], 0.0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            cross_entropy_loss(&[vec![0.5, 0.5]], &[vec![1.0, 0.0, 0.0]], 0.0),
            Err(Error::Shape(_))
        ));
    }
}
