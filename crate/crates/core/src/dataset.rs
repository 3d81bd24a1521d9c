//! Labels, training sequences, augmentation, class weights and folds.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SegmentFeatures, FEATURE_DIM, FRAME_DIM, SEGMENT_FRAMES};

pub const NUM_CLASSES: usize = 3;

/// Class weights used for the weighted loss by default.
pub const DEFAULT_CLASS_WEIGHTS: [f64; NUM_CLASSES] = [9.16, 1.00, 3.42];

/// Features with a training spread below this are left unscaled.
const MIN_FEATURE_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum EngagementLabel {
    /// Limited or no attention to the robot.
    Disengaged = 1,
    /// Attentive but not cooperating.
    Attentive = 2,
    /// Actively cooperating with the robot.
    Cooperating = 3,
}

impl EngagementLabel {
    pub const ALL: [EngagementLabel; NUM_CLASSES] = [
        EngagementLabel::Disengaged,
        EngagementLabel::Attentive,
        EngagementLabel::Cooperating,
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(EngagementLabel::Disengaged),
            2 => Ok(EngagementLabel::Attentive),
            3 => Ok(EngagementLabel::Cooperating),
            other => Err(Error::InvalidInput(format!(
                "class id must be 1, 2 or 3, got {other}"
            ))),
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Zero-based index (class 1 -> 0).
    pub fn index(self) -> usize {
        self as usize - 1
    }
}

impl TryFrom<u8> for EngagementLabel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_id(v)
    }
}

impl From<EngagementLabel> for u8 {
    fn from(l: EngagementLabel) -> u8 {
        l.id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub segment_idx: usize,
    pub features: Vec<f64>,
    pub label: EngagementLabel,
}

/// All labelled segments of one session, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub session_id: String,
    pub segments: Vec<LabeledSegment>,
}

impl SessionData {
    pub fn labels(&self) -> Vec<EngagementLabel> {
        self.segments.iter().map(|s| s.label).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub session_id: String,
    pub start_segment: usize,
    /// `L x 116`.
    pub features: Array2<f64>,
    pub labels: Vec<EngagementLabel>,
}

impl LabeledSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub test_session: String,
    pub train_sessions: Vec<String>,
}

/// Segments per annotated second at `fps` with 5-frame segments.
pub fn segments_per_second(fps: f64) -> Result<usize> {
    let per = fps / SEGMENT_FRAMES as f64;
    if !(per >= 1.0) || (per - per.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "fps {fps} is not a positive multiple of {SEGMENT_FRAMES}"
        )));
    }
    Ok(per.round() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedLabels {
    pub segments: Vec<LabeledSegment>,
    /// Segments past the end of the annotation that were dropped.
    pub dropped: usize,
}

/// Gives each segment the class of the annotated second that contains it.
pub fn align_labels(
    annotations: &[EngagementLabel],
    segments: &[SegmentFeatures],
    segments_per_second: usize,
) -> AlignedLabels {
    let covered = annotations.len() * segments_per_second;
    let keep = segments.len().min(covered);
    let dropped = segments.len() - keep;
    if dropped > 0 {
        tracing::warn!(
            dropped,
            annotated_seconds = annotations.len(),
            "annotation shorter than video; truncating to annotated span"
        );
    }
    let segments = segments[..keep]
        .iter()
        .enumerate()
        .map(|(i, s)| LabeledSegment {
            segment_idx: s.segment_idx,
            features: s.values.clone(),
            label: annotations[i / segments_per_second],
        })
        .collect();
    AlignedLabels { segments, dropped }
}

fn sequence_from(
    session_id: &str,
    segments: &[LabeledSegment],
    start: usize,
    len: usize,
) -> LabeledSequence {
    let dim = segments.first().map_or(FEATURE_DIM, |s| s.features.len());
    let mut features = Array2::zeros((len, dim));
    let mut labels = Vec::with_capacity(len);
    for (t, seg) in segments[start..start + len].iter().enumerate() {
        features
            .row_mut(t)
            .assign(&ndarray::ArrayView1::from(&seg.features[..]));
        labels.push(seg.label);
    }
    LabeledSequence {
        session_id: session_id.to_string(),
        start_segment: start,
        features,
        labels,
    }
}

/// Non-overlapping windows of `len` segments starting at `offset`; any
/// remainder is dropped.
pub fn make_sequences(
    session_id: &str,
    segments: &[LabeledSegment],
    len: usize,
    offset: usize,
) -> Result<Vec<LabeledSequence>> {
    if len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    if offset >= len {
        return Err(Error::Config(format!(
            "sequence offset {offset} must be smaller than the length {len}"
        )));
    }
    let available = segments.len().saturating_sub(offset);
    let count = available / len;
    if count == 0 {
        tracing::warn!(
            session = session_id,
            segments = segments.len(),
            len,
            offset,
            "session too short for a single sequence"
        );
    }
    Ok((0..count)
        .map(|k| sequence_from(session_id, segments, offset + k * len, len))
        .collect())
}

/// Adds Gaussian noise with standard deviation `sigma * scale[i]` to each of
/// the 58 segment-mean features; the standard-deviation features are kept.
pub fn augment<R: Rng + ?Sized>(
    seq: &LabeledSequence,
    sigma: f64,
    scale: &[f64],
    rng: &mut R,
) -> LabeledSequence {
    let mut out = seq.clone();
    if sigma <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n_mean = FRAME_DIM.min(out.features.ncols());
    for mut row in out.features.rows_mut() {
        for i in 0..n_mean {
            let s = scale.get(i).copied().unwrap_or(1.0);
            row[i] += sigma * s * normal.sample(rng);
        }
    }
    out
}

pub fn class_counts<'a>(segments: impl IntoIterator<Item = &'a LabeledSegment>) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for s in segments {
        counts[s.label.index()] += 1;
    }
    counts
}

/// `w_c = count(majority) / count(c)`; the majority class gets exactly 1.
pub fn class_weights(counts: [usize; NUM_CLASSES]) -> Result<[f64; NUM_CLASSES]> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c as u8 + 1));
    }
    let majority = *counts.iter().max().expect("non-empty");
    Ok(counts.map(|n| majority as f64 / n as f64))
}

/// One fold per session, holding that session out.
pub fn loocv_folds(session_ids: &[String]) -> Result<Vec<FoldSplit>> {
    if session_ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "leave-one-out needs at least 2 sessions, got {}",
            session_ids.len()
        )));
    }
    Ok(session_ids
        .iter()
        .map(|test| FoldSplit {
            test_session: test.clone(),
            train_sessions: session_ids.iter().filter(|s| *s != test).cloned().collect(),
        })
        .collect())
}

/// Per-feature z-scoring fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for row in rows.clone() {
            if n == 0 {
                mean = vec![0.0; row.len()];
            } else if row.len() != mean.len() {
                return Err(Error::Shape(format!(
                    "normalizer rows of width {} and {}",
                    mean.len(),
                    row.len()
                )));
            }
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidInput(
                "cannot normalize with an empty training set".into(),
            ));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; mean.len()];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Normalizer { mean, std })
    }

    pub fn fit_segments<'a>(segments: impl IntoIterator<Item = &'a LabeledSegment>) -> Result<Self> {
        let rows: Vec<&[f64]> = segments.into_iter().map(|s| &s.features[..]).collect();
        Self::fit(rows.iter().copied())
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (i, v) in row.iter_mut().enumerate() {
            let s = self.std[i];
            if s >= MIN_FEATURE_STD {
                *v = (*v - self.mean[i]) / s;
            }
        }
    }

    pub fn apply_session(&self, session: &SessionData) -> SessionData {
        let mut out = session.clone();
        for seg in &mut out.segments {
            self.apply(&mut seg.features);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seg(i: usize, label: EngagementLabel) -> LabeledSegment {
        LabeledSegment {
            segment_idx: i,
            features: vec![i as f64; FEATURE_DIM],
            label,
        }
    }

    fn raw_segments(n: usize) -> Vec<SegmentFeatures> {
        (0..n)
            .map(|i| SegmentFeatures {
                segment_idx: i,
                n_frames: 5,
                values: vec![0.0; FEATURE_DIM],
            })
            .collect()
    }

    #[test]
    fn label_alignment() {
        let ann: Vec<_> = (0..60).map(|s| EngagementLabel::from_index(s % 3)).collect();
        let out = align_labels(&ann, &raw_segments(360), 6);
        assert_eq!(out.segments.len(), 360);
        assert_eq!(out.dropped, 0);
        assert!(out.segments[12..18].iter().all(|s| s.label == EngagementLabel::Cooperating));

        let half = align_labels(&ann, &raw_segments(357), 6);
        assert_eq!(half.segments.len(), 357);

        let long = align_labels(&ann[..10], &raw_segments(100), 6);
        assert_eq!((long.segments.len(), long.dropped), (60, 40));
    }

    #[test]
    fn sequence_counts() {
        let segs: Vec<_> = (0..90).map(|i| seg(i, EngagementLabel::Attentive)).collect();
        assert_eq!(make_sequences("s", &segs, 30, 0).unwrap().len(), 3);
        let shifted = make_sequences("s", &segs, 30, 5).unwrap();
        assert_eq!(shifted.len(), 2);
        assert_eq!(shifted[0].start_segment, 5);
        assert_eq!(shifted[1].features[[29, 0]], 64.0);
        assert!(make_sequences("s", &segs[..20], 30, 0).unwrap().is_empty());
        assert!(make_sequences("s", &segs, 30, 30).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let segs: Vec<_> = (0..10).map(|i| seg(i, EngagementLabel::Attentive)).collect();
        let s = &make_sequences("s", &segs, 10, 0).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(&augment(s, 0.0, &[1.0; FRAME_DIM], &mut rng), s);
    }

    #[test]
    fn augmentation_touches_means_only_and_is_seeded() {
        let segs: Vec<_> = (0..10).map(|i| seg(i, EngagementLabel::Attentive)).collect();
        let s = &make_sequences("s", &segs, 10, 0).unwrap()[0];
        let a = augment(s, 0.05, &[1.0; FRAME_DIM], &mut ChaCha8Rng::seed_from_u64(7));
        let b = augment(s, 0.05, &[1.0; FRAME_DIM], &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        for t in 0..10 {
            assert_ne!(a.features[[t, 0]], s.features[[t, 0]]);
            for i in FRAME_DIM..FEATURE_DIM {
                assert_eq!(a.features[[t, i]], s.features[[t, i]]);
            }
        }
    }

    #[test]
    fn weights_from_counts() {
        let w = class_weights([281, 2578, 745]).unwrap();
        assert_eq!(w[1], 1.0);
        assert!((w[0] - 9.17).abs() < 0.005);
        assert!((w[2] - 3.46).abs() < 0.005);
        assert_eq!(class_weights([5, 5, 5]).unwrap(), [1.0, 1.0, 1.0]);
        let err = class_weights([0, 3, 4]).unwrap_err();
        assert!(matches!(err, Error::EmptyClass(1)));
    }

    #[test]
    fn folds() {
        let ids: Vec<String> = (0..25).map(|i| format!("s{i:02}")).collect();
        let folds = loocv_folds(&ids).unwrap();
        assert_eq!(folds.len(), 25);
        for f in &folds {
            assert_eq!(f.train_sessions.len(), 24);
            assert!(!f.train_sessions.contains(&f.test_session));
        }
        assert!(loocv_folds(&ids[..1]).is_err());
        assert_eq!(loocv_folds(&ids[..2]).unwrap().len(), 2);
    }

    #[test]
    fn normalizer_centers_training_data() {
        let segs: Vec<LabeledSegment> = (0..50)
            .map(|i| {
                let mut s = seg(i, EngagementLabel::Attentive);
                s.features[1] = 4.0;
                s.features[2] = (i as f64).sin() * 3.0 + 10.0;
                s
            })
            .collect();
        let norm = Normalizer::fit_segments(&segs).unwrap();
        let session = SessionData {
            session_id: "s".into(),
            segments: segs,
        };
        let out = norm.apply_session(&session);
        for i in [0usize, 2] {
            let m: f64 = out.segments.iter().map(|s| s.features[i]).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-9);
        }
        assert!(out.segments.iter().all(|s| s.features[1] == 4.0));
    }

    #[test]
    fn segments_per_second_from_fps() {
        assert_eq!(segments_per_second(30.0).unwrap(), 6);
        assert!(segments_per_second(32.0).is_err());
    }
}
