//! Leave-one-session-out evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{ForestConfig, MajorityClassifier, RandomForest};
use super::metrics::{BalancedFormula, ConfusionMatrix, MetricsReport};
use super::vote::{majority_vote_1s, window_labels};
use crate::dataset::{loocv_folds, EngagementLabel, Normalizer, SessionData};
use crate::error::{Error, Result};
use crate::model::{argmax, predict_proba, session_matrix, train, NetConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Network { net: NetConfig, train: TrainConfig },
    RandomForest(ForestConfig),
    Majority,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Network { net, .. } => format!("{}FC+{}LSTM", net.n_fc, net.n_lstm),
            Method::RandomForest(_) => "RF".into(),
            Method::Majority => "Majority class".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub method: Method,
    pub segments_per_second: usize,
    pub formula: BalancedFormula,
    /// Worker threads for folds; 0 uses the rayon default.
    pub jobs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldOutcome {
    Completed { report: MetricsReport, seconds: u64 },
    Aborted { fold_id: String, reason: String },
}

/// Averaged percentages over completed folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_f_score: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: String,
    pub folds: Vec<FoldOutcome>,
    /// Every completed fold counts once.
    pub equal_weight: Option<Aggregate>,
    /// Folds weighted by their number of scored seconds.
    pub size_weighted: Option<Aggregate>,
    /// Metrics of the summed confusion matrix.
    pub pooled: Option<MetricsReport>,
}

impl CvReport {
    pub fn aborted(&self) -> usize {
        self.folds
            .iter()
            .filter(|f| matches!(f, FoldOutcome::Aborted { .. }))
            .count()
    }
}

/// Seed for fold `k`, independent of scheduling.
pub fn fold_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn labels_of(sessions: &[&SessionData]) -> Vec<usize> {
    sessions
        .iter()
        .flat_map(|s| s.segments.iter().map(|g| g.label.index()))
        .collect()
}

/// Per-segment class probabilities for `test` after fitting `method` on `train_set`.
pub fn fit_predict(
    method: &Method,
    train_set: &[SessionData],
    test: &SessionData,
    seed: u64,
) -> Result<ndarray::Array2<f64>> {
    let x_test = session_matrix(&test.segments);
    match method {
        Method::Majority => {
            let refs: Vec<&SessionData> = train_set.iter().collect();
            Ok(MajorityClassifier::fit(&labels_of(&refs))?.predict_proba(x_test.nrows()))
        }
        Method::RandomForest(cfg) => {
            let all: Vec<_> = train_set.iter().flat_map(|s| s.segments.iter().cloned()).collect();
            let x = session_matrix(&all);
            let y: Vec<usize> = all.iter().map(|s| s.label.index()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(RandomForest::fit(x.view(), &y, cfg, &mut rng)?.predict_proba(x_test.view()))
        }
        Method::Network { net, train: tc } => {
            let tc = TrainConfig { seed, ..tc.clone() };
            let outcome = train(train_set, net, &tc)?;
            predict_proba(&outcome.params, &x_test)
        }
    }
}

fn run_fold(
    sessions: &[SessionData],
    test_idx: usize,
    cfg: &CvConfig,
) -> Result<(MetricsReport, u64)> {
    let train_raw: Vec<&SessionData> = sessions
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != test_idx)
        .map(|(_, s)| s)
        .collect();
    let norm = Normalizer::fit_segments(train_raw.iter().flat_map(|s| s.segments.iter()))?;
    let train_set: Vec<SessionData> = train_raw.iter().map(|s| norm.apply_session(s)).collect();
    let test = norm.apply_session(&sessions[test_idx]);
    if test.segments.is_empty() {
        return Err(Error::InvalidInput(format!("session {} has no segments", test.session_id)));
    }
    let probs = fit_predict(&cfg.method, &train_set, &test, fold_seed(cfg.seed, test_idx))?;
    let pred: Vec<EngagementLabel> = probs
        .rows()
        .into_iter()
        .map(|r| EngagementLabel::from_index(argmax(r)))
        .collect();
    let voted = majority_vote_1s(&pred, &probs, cfg.segments_per_second)?;
    let truth = window_labels(&test.labels(), cfg.segments_per_second);
    let cm = ConfusionMatrix::from_pairs(&truth, &voted)?;
    Ok((
        MetricsReport::from_confusion(&test.session_id, &cm, cfg.formula)?,
        truth.len() as u64,
    ))
}

fn average(folds: &[(&MetricsReport, f64)]) -> Option<Aggregate> {
    let total: f64 = folds.iter().map(|(_, w)| w).sum();
    if folds.is_empty() || total <= 0.0 {
        return None;
    }
    let avg = |f: fn(&MetricsReport) -> f64| folds.iter().map(|(r, w)| f(r) * w).sum::<f64>() / total;
    Some(Aggregate {
        mean_f_score: avg(|r| r.mean_f_score),
        accuracy: avg(|r| r.accuracy),
        balanced_accuracy: avg(|r| r.balanced_accuracy),
    })
}

/// Trains and scores one fold per session, in parallel over folds.
pub fn cross_validate(sessions: &[SessionData], cfg: &CvConfig) -> Result<CvReport> {
    let ids: Vec<String> = sessions.iter().map(|s| s.session_id.clone()).collect();
    let folds = loocv_folds(&ids)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<(MetricsReport, u64)>> = pool.install(|| {
        (0..folds.len())
            .into_par_iter()
            .map(|k| run_fold(sessions, k, cfg))
            .collect()
    });

    let mut outcomes = Vec::with_capacity(folds.len());
    for (fold, res) in folds.iter().zip(results) {
        outcomes.push(match res {
            Ok((report, seconds)) => FoldOutcome::Completed { report, seconds },
            Err(e @ (Error::Diverged { .. } | Error::EmptyClass(_))) => {
                tracing::warn!(fold = %fold.test_session, "fold aborted: {e}");
                FoldOutcome::Aborted {
                    fold_id: fold.test_session.clone(),
                    reason: e.to_string(),
                }
            }
            Err(e) => return Err(e),
        });
    }

    let done: Vec<(&MetricsReport, u64)> = outcomes
        .iter()
        .filter_map(|o| match o {
            FoldOutcome::Completed { report, seconds } => Some((report, *seconds)),
            FoldOutcome::Aborted { .. } => None,
        })
        .collect();
    let equal: Vec<_> = done.iter().map(|(r, _)| (*r, 1.0)).collect();
    let sized: Vec<_> = done.iter().map(|(r, s)| (*r, *s as f64)).collect();
    let pooled = if done.is_empty() {
        None
    } else {
        let mut cm = ConfusionMatrix::default();
        for (r, _) in &done {
            cm.merge(&r.confusion);
        }
        Some(MetricsReport::from_confusion("pooled", &cm, cfg.formula)?)
    };
    Ok(CvReport {
        method: cfg.method.name(),
        equal_weight: average(&equal),
        size_weighted: average(&sized),
        pooled,
        folds: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LabeledSegment;

    fn separable(id: &str) -> SessionData {
        SessionData {
            session_id: id.into(),
            segments: (0..180)
                .map(|i| {
                    let c = (i / 30) % 3;
                    let mut f = vec![0.0; 4];
                    f[c] = 1.0 + 0.01 * (i % 5) as f64;
                    LabeledSegment {
                        segment_idx: i,
                        features: f,
                        label: EngagementLabel::from_index(c),
                    }
                })
                .collect(),
        }
    }

    fn cfg(method: Method, jobs: usize) -> CvConfig {
        CvConfig {
            method,
            segments_per_second: 6,
            formula: BalancedFormula::MacroRecall,
            jobs,
            seed: 1,
        }
    }

    #[test]
    fn separable_sessions_score_perfectly() {
        let sessions = vec![separable("a"), separable("b")];
        let r = cross_validate(&sessions, &cfg(Method::RandomForest(ForestConfig::default()), 1)).unwrap();
        assert_eq!(r.folds.len(), 2);
        let agg = r.equal_weight.unwrap();
        assert_eq!(agg.balanced_accuracy, 100.0);
        assert_eq!(agg.accuracy, 100.0);
    }

    #[test]
    fn majority_baseline_is_one_third() {
        let sessions = vec![separable("a"), separable("b"), separable("c")];
        let r = cross_validate(&sessions, &cfg(Method::Majority, 2)).unwrap();
        assert!((r.equal_weight.unwrap().balanced_accuracy - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn job_count_does_not_change_results() {
        let sessions = vec![separable("a"), separable("b"), separable("c")];
        let m = Method::RandomForest(ForestConfig::default());
        let a = cross_validate(&sessions, &cfg(m.clone(), 1)).unwrap();
        let b = cross_validate(&sessions, &cfg(m, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn needs_two_sessions() {
        assert!(cross_validate(&[separable("a")], &cfg(Method::Majority, 1)).is_err());
    }
}
