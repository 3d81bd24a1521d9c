use ndarray::Array2;

use crate::dataset::{EngagementLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// One label per window of `per_second` consecutive segments. The most
/// frequent class wins; ties go to the larger summed probability, then to the
/// lower class. A trailing partial window votes over what it has.
pub fn majority_vote_1s(
    predictions: &[EngagementLabel],
    probs: &Array2<f64>,
    per_second: usize,
) -> Result<Vec<EngagementLabel>> {
    if per_second == 0 {
        return Err(Error::Config("window size must be positive".into()));
    }
    if probs.nrows() != predictions.len() || probs.ncols() != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "{} predictions with a {:?} probability matrix",
            predictions.len(),
            probs.dim()
        )));
    }
    let out = predictions
        .chunks(per_second)
        .enumerate()
        .map(|(w, window)| {
            let mut votes = [0usize; NUM_CLASSES];
            let mut mass = [0.0; NUM_CLASSES];
            for (k, p) in window.iter().enumerate() {
                votes[p.index()] += 1;
                let row = probs.row(w * per_second + k);
                for c in 0..NUM_CLASSES {
                    mass[c] += row[c];
                }
            }
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
                    best = c;
                }
            }
            EngagementLabel::from_index(best)
        })
        .collect();
    Ok(out)
}

/// The label of each window, taken from its first segment.
pub fn window_labels(labels: &[EngagementLabel], per_second: usize) -> Vec<EngagementLabel> {
    labels.chunks(per_second.max(1)).map(|w| w[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use EngagementLabel::*;

    fn labels(ids: &[u8]) -> Vec<EngagementLabel> {
        ids.iter().map(|&i| EngagementLabel::from_id(i).unwrap()).collect()
    }

    fn onehot(l: &[EngagementLabel]) -> Array2<f64> {
        Array2::from_shape_fn((l.len(), 3), |(i, c)| if l[i].index() == c { 1.0 } else { 0.0 })
    }

    #[test]
    fn plurality() {
        let p = labels(&[2, 2, 3, 2, 1, 2]);
        assert_eq!(majority_vote_1s(&p, &onehot(&p), 6).unwrap(), vec![Attentive]);
    }

    #[test]
    fn tie_broken_by_probability_mass() {
        let p = labels(&[3, 3, 2, 2, 1, 1]);
        let probs = ndarray::array![
            [0.0, 0.05, 0.95],
            [0.0, 0.05, 0.95],
            [0.0, 0.6, 0.4],
            [0.0, 0.6, 0.4],
            [0.5, 0.1, 0.4],
            [0.5, 0.1, 0.4],
        ];
        // class 3 mass 3.9 over class 2 mass 1.5
        assert_eq!(majority_vote_1s(&p, &probs, 6).unwrap(), vec![Cooperating]);
        let flat = Array2::from_elem((6, 3), 1.0 / 3.0);
        assert_eq!(majority_vote_1s(&p, &flat, 6).unwrap(), vec![Disengaged]);
    }

    #[test]
    fn partial_window() {
        let p = labels(&[2, 2, 2, 2, 2, 2, 1]);
        assert_eq!(majority_vote_1s(&p, &onehot(&p), 6).unwrap(), vec![Attentive, Disengaged]);
        assert_eq!(window_labels(&p, 6), vec![Attentive, Disengaged]);
    }
}
