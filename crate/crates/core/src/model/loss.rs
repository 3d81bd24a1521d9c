use ndarray::Array2;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the logits, same layout as the probabilities.
    pub d_logits: Array2<f64>,
    /// Set when some target probability fell below [`PROB_FLOOR`].
    pub clamped: bool,
}

/// Class-weighted cross-entropy averaged over all rows.
///
/// `labels` are 0-based class indices, one per row of `probs`.
pub fn weighted_ce_loss(probs: &Array2<f64>, labels: &[usize], weights: &[f64]) -> LossOutput {
    assert_eq!(probs.nrows(), labels.len(), "one label per row");
    let rows = labels.len().max(1) as f64;
    let mut loss = 0.0;
    let mut clamped = false;
    let mut d = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        let w = weights[y];
        let p = probs[[r, y]];
        if p < PROB_FLOOR {
            clamped = true;
        }
        loss -= w * p.max(PROB_FLOOR).ln();
        let mut row = d.row_mut(r);
        row[y] -= 1.0;
        row *= w / rows;
    }
    LossOutput {
        loss: loss / rows,
        d_logits: d,
        clamped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let p = softmax_rows(&array![[0.0, 0.0, 0.0]]);
        let out = weighted_ce_loss(&p, &[1], &[1.0, 2.0, 1.0]);
        assert!((out.loss - 2.0 * 3f64.ln()).abs() < 1e-12);
        assert!((out.d_logits[[0, 1]] - 2.0 * (1.0 / 3.0 - 1.0)).abs() < 1e-12);
        assert!(!out.clamped);
    }

    #[test]
    fn clamps_tiny_probability() {
        let p = softmax_rows(&array![[0.0, 1000.0]]);
        let out = weighted_ce_loss(&p, &[0], &[1.0, 1.0]);
        assert!(out.clamped);
        assert!((out.loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..8)) {
            let n = v.len();
            let p = softmax_rows(&Array2::from_shape_vec((1, n), v).unwrap());
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
