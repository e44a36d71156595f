//! Counting metrics. A count is the sum of a density map; images are scored
//! by the mean absolute error and the root-mean-square error of their counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum of all pixels, with negative pixels clamped to zero.
pub fn count_from_map(values: &[f32]) -> Result<f64> {
    let mut total = 0.0f64;
    for &v in values {
        if v.is_nan() {
            return Err(Error::NaN("density map"));
        }
        total += f64::from(v.max(0.0));
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `(predicted, ground truth)` count per image.
    pub counts: Vec<(f64, f64)>,
    pub mae: f64,
    /// Root of the mean squared count error.
    pub mse: f64,
}

impl EvalReport {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn evaluate(predicted: &[f64], ground_truth: &[f64]) -> Result<EvalReport> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::ShapeMismatch {
            dimension: "count list length",
            expected: ground_truth.len(),
            actual: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("count list"));
    }
    let n = predicted.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, g) in predicted.iter().zip(ground_truth) {
        let e = (p - g).abs();
        abs += e;
        sq += e * e;
    }
    Ok(EvalReport {
        counts: predicted.iter().copied().zip(ground_truth.iter().copied()).collect(),
        mae: abs / n,
        mse: (sq / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn count_clamps_negatives() {
        assert_eq!(count_from_map(&[0.0; 16]).unwrap(), 0.0);
        assert_eq!(count_from_map(&[-0.5, 1.0, 2.0]).unwrap(), 3.0);
        assert!(count_from_map(&[1.0, f32::NAN]).is_err());
    }

    #[test]
    fn worked_example() {
        let r = evaluate(&[10.0, 20.0], &[12.0, 16.0]).unwrap();
        assert_eq!(r.mae, 3.0);
        assert!((r.mse - 10f64.sqrt()).abs() < 1e-12);
        let r = evaluate(&[4.0, 5.0], &[4.0, 5.0]).unwrap();
        assert_eq!((r.mae, r.mse), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(evaluate(&[1.0], &[1.0, 2.0]).is_err());
        assert!(matches!(evaluate(&[], &[]), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn rms_dominates_mean_and_scales(pairs in prop::collection::vec((0.0f64..500.0, 0.0f64..500.0), 1..50), c in 0.1f64..10.0) {
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = evaluate(&p, &g).unwrap();
            prop_assert!(r.mae >= 0.0);
            prop_assert!(r.mse >= r.mae - 1e-12 * r.mae.max(1.0));
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
            let s = evaluate(&ps, &gs).unwrap();
            prop_assert!((s.mae - c * r.mae).abs() <= 1e-9 * (1.0 + c * r.mae));
            prop_assert!((s.mse - c * r.mse).abs() <= 1e-9 * (1.0 + c * r.mse));
        }

        #[test]
        fn order_does_not_matter(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..30)) {
            let (p, g): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let (pr, gr): (Vec<f64>, Vec<f64>) = pairs.iter().rev().copied().unzip();
            let a = evaluate(&p, &g).unwrap();
            let b = evaluate(&pr, &gr).unwrap();
            prop_assert!((a.mae - b.mae).abs() < 1e-9 && (a.mse - b.mse).abs() < 1e-9);
        }
    }
}
