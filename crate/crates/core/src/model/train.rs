//! Two-stage training with early stopping, learning-rate drops and
//! sequence-level prediction.

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::weighted_ce_loss;
use super::net::{argmax, backward_from_logits, forward_route, Mode, Route, Trainable};
use super::optim::{clip_grad_norm, Sgd, SgdConfig};
use super::params::{NetConfig, NetParams, ParamGroup};
use crate::dataset::{
    augment, class_counts, class_weights, make_sequences, EngagementLabel, LabeledSegment,
    LabeledSequence, SessionData, DEFAULT_CLASS_WEIGHTS, NUM_CLASSES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Fixed([f64; NUM_CLASSES]),
    /// Majority count over class count, from the training sessions.
    FromCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub lr_drop_factor: f64,
    pub max_lr_drops: usize,
    /// Cap on the L2 norm of the LSTM gradients.
    pub grad_clip: f64,
    pub class_weights: ClassWeighting,
    pub val_fraction: f64,
    pub max_epochs_per_stage: usize,
    /// Gaussian noise on segment means, in normalized units.
    pub noise_sigma: f64,
    /// Largest random start offset in segments.
    pub max_start_offset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.5,
            weight_decay: 1e-6,
            patience: 10,
            lr_drop_factor: 10.0,
            max_lr_drops: 2,
            grad_clip: 0.1,
            class_weights: ClassWeighting::Fixed(DEFAULT_CLASS_WEIGHTS),
            val_fraction: 0.1,
            max_epochs_per_stage: 200,
            noise_sigma: 0.05,
            max_start_offset: 12,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("lr_drop_factor", self.lr_drop_factor),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("weight_decay and noise_sigma must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patience == 0 || self.max_epochs_per_stage == 0 {
            return Err(Error::Config("patience and max_epochs_per_stage must be positive".into()));
        }
        if let ClassWeighting::Fixed(w) = self.class_weights {
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::Config(format!("class weights must be positive, got {w:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub log: Vec<EpochLog>,
    pub class_weights: [f64; NUM_CLASSES],
}

/// A contiguous range of segments of one session reserved for training.
#[derive(Debug, Clone)]
struct Run {
    session: usize,
    start: usize,
    end: usize,
}

struct Split {
    runs: Vec<Run>,
    val: Vec<LabeledSequence>,
}

/// Holds out `round(m * fraction)` of each session's offset-0 windows.
fn split_validation<R: Rng + ?Sized>(
    sessions: &[SessionData],
    seq_len: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Split> {
    let mut runs = Vec::new();
    let mut val = Vec::new();
    for (si, s) in sessions.iter().enumerate() {
        let windows = s.segments.len() / seq_len;
        let n_val = ((windows as f64) * fraction).round() as usize;
        let mut picked: Vec<usize> = (0..windows).collect();
        picked.shuffle(rng);
        let mut picked = picked[..n_val.min(windows)].to_vec();
        picked.sort_unstable();

        let all = make_sequences(&s.session_id, &s.segments, seq_len, 0)?;
        let mut start = 0;
        for &w in &picked {
            if w * seq_len > start {
                runs.push(Run { session: si, start, end: w * seq_len });
            }
            val.push(all[w].clone());
            start = (w + 1) * seq_len;
        }
        if s.segments.len() > start {
            runs.push(Run { session: si, start, end: s.segments.len() });
        }
    }
    Ok(Split { runs, val })
}

fn epoch_sequences<R: Rng + ?Sized>(
    sessions: &[SessionData],
    runs: &[Run],
    seq_len: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<LabeledSequence>> {
    let max_offset = cfg.max_start_offset.min(seq_len - 1);
    let mut out = Vec::new();
    for run in runs {
        let s = &sessions[run.session];
        let offset = rng.random_range(0..=max_offset);
        let segs = &s.segments[run.start..run.end];
        for mut seq in make_sequences(&s.session_id, segs, seq_len, offset)? {
            seq.start_segment += run.start;
            out.push(augment(&seq, cfg.noise_sigma, &[], rng));
        }
    }
    Ok(out)
}

/// Stacks sequences into `N x L x D` with time-major labels.
pub fn stack_batch(seqs: &[&LabeledSequence]) -> (Array3<f64>, Vec<usize>) {
    let n = seqs.len();
    let (l, d) = seqs[0].features.dim();
    let mut x = Array3::zeros((n, l, d));
    let mut y = vec![0; n * l];
    for (i, seq) in seqs.iter().enumerate() {
        x.slice_mut(s![i, .., ..]).assign(&seq.features);
        for (t, lab) in seq.labels.iter().enumerate() {
            y[t * n + i] = lab.index();
        }
    }
    (x, y)
}

struct Stage {
    id: u8,
    route: Route,
    trainable: Trainable,
    groups: &'static [ParamGroup],
    clip: Option<ParamGroup>,
}

const STAGE_FC: Stage = Stage {
    id: 1,
    route: Route::Segment,
    trainable: Trainable { fc: true, recurrent: false },
    groups: &[ParamGroup::Fc, ParamGroup::Head],
    clip: None,
};

const STAGE_RECURRENT: Stage = Stage {
    id: 2,
    route: Route::Sequence,
    trainable: Trainable { fc: false, recurrent: true },
    groups: &[ParamGroup::Lstm, ParamGroup::Out],
    clip: Some(ParamGroup::Lstm),
};

/// Mean loss over `seqs` in eval mode.
fn eval_loss(
    params: &NetParams,
    seqs: &[LabeledSequence],
    route: Route,
    weights: &[f64],
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0usize;
    for chunk in seqs.chunks(batch) {
        let refs: Vec<&LabeledSequence> = chunk.iter().collect();
        let (x, y) = stack_batch(&refs);
        let cache = forward_route(params, &x, route, Mode::Eval)?;
        total += weighted_ce_loss(cache.probs_time_major(), &y, weights).loss * y.len() as f64;
        rows += y.len();
    }
    Ok(total / rows.max(1) as f64)
}

fn train_stage(
    params: &mut NetParams,
    sessions: &[SessionData],
    stage: &Stage,
    cfg: &TrainConfig,
    weights: &[f64],
    log: &mut Vec<EpochLog>,
) -> Result<()> {
    let net = params.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x5eed_0000 + stage.id as u64));
    let split = split_validation(sessions, net.seq_len, cfg.val_fraction, &mut rng)?;
    let mut opt = Sgd::new(params);
    let mut lr = cfg.lr0;
    let mut best: Option<(f64, NetParams)> = None;
    let mut since_best = 0;
    let mut drops = 0;

    for epoch in 0..cfg.max_epochs_per_stage {
        let mut seqs = epoch_sequences(sessions, &split.runs, net.seq_len, cfg, &mut rng)?;
        if seqs.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no training sequence of length {} fits the training sessions",
                net.seq_len
            )));
        }
        seqs.shuffle(&mut rng);
        let sgd = SgdConfig { lr, momentum: cfg.momentum, weight_decay: cfg.weight_decay };
        let mut total = 0.0;
        let mut rows = 0usize;
        for chunk in seqs.chunks(net.batch_size) {
            let refs: Vec<&LabeledSequence> = chunk.iter().collect();
            let (x, y) = stack_batch(&refs);
            let cache = forward_route(params, &x, stage.route, Mode::Train(&mut rng))?;
            let out = weighted_ce_loss(cache.probs_time_major(), &y, weights);
            if !out.loss.is_finite() {
                return Err(Error::Diverged { stage: stage.id, epoch });
            }
            let mut grads = params.zeros_like();
            backward_from_logits(params, &cache, &out.d_logits, stage.trainable, &mut grads);
            if let Some(group) = stage.clip {
                clip_grad_norm(&mut grads, group, cfg.grad_clip);
            }
            opt.step(params, &grads, stage.groups, &sgd);
            total += out.loss * y.len() as f64;
            rows += y.len();
        }
        let train_loss = total / rows as f64;
        let val_loss = if split.val.is_empty() {
            train_loss
        } else {
            eval_loss(params, &split.val, stage.route, weights, net.batch_size)?
        };
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(Error::Diverged { stage: stage.id, epoch });
        }
        tracing::debug!(stage = stage.id, epoch, lr, train_loss, val_loss, "epoch");
        log.push(EpochLog { epoch, stage: stage.id, lr, train_loss, val_loss });

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            since_best = 0;
            continue;
        }
        since_best += 1;
        if since_best >= cfg.patience {
            *params = best.as_ref().expect("set on first epoch").1.clone();
            opt.reset(params);
            since_best = 0;
            if drops == cfg.max_lr_drops {
                break;
            }
            drops += 1;
            lr /= cfg.lr_drop_factor;
        }
    }
    if let Some((_, p)) = best {
        *params = p;
    }
    Ok(())
}

fn resolve_weights(sessions: &[SessionData], cfg: &TrainConfig) -> Result<[f64; NUM_CLASSES]> {
    match cfg.class_weights {
        ClassWeighting::Fixed(w) => Ok(w),
        ClassWeighting::FromCounts => {
            class_weights(class_counts(sessions.iter().flat_map(|s| s.segments.iter())))
        }
    }
}

/// Stage 1 trains the FC stack through a temporary per-segment head; stage 2
/// drops the head, freezes the FC layers and trains the LSTM and output layer.
pub fn train(sessions: &[SessionData], net: &NetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    net.validate()?;
    cfg.validate()?;
    if sessions.iter().all(|s| s.segments.is_empty()) {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if let Some(bad) = sessions
        .iter()
        .flat_map(|s| s.segments.iter())
        .find(|s| s.features.len() != net.input_dim)
    {
        return Err(Error::Shape(format!(
            "segment {} has {} features, network expects {}",
            bad.segment_idx,
            bad.features.len(),
            net.input_dim
        )));
    }
    let weights = resolve_weights(sessions, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetParams::init(net, &mut rng)?;
    params.attach_head(&mut rng);
    let mut log = Vec::new();
    train_stage(&mut params, sessions, &STAGE_FC, cfg, &weights, &mut log)?;
    params.head = None;
    train_stage(&mut params, sessions, &STAGE_RECURRENT, cfg, &weights, &mut log)?;
    Ok(TrainOutcome { params, log, class_weights: weights })
}

/// Per-segment class probabilities for a whole session, `S x K`, from
/// windows of `seq_len` starting every `seq_len / 2` segments. Each segment
/// takes its output from the window giving it between half and a full
/// window of history; the opening segments use the first window.
pub fn predict_proba(params: &NetParams, features: &Array2<f64>) -> Result<Array2<f64>> {
    let len = params.config.seq_len;
    predict_proba_strided(params, features, (len / 2).max(1))
}

/// [`predict_proba`] with an explicit window stride; `stride == seq_len`
/// gives disjoint windows.
pub fn predict_proba_strided(
    params: &NetParams,
    features: &Array2<f64>,
    stride: usize,
) -> Result<Array2<f64>> {
    let (total, d) = features.dim();
    let len = params.config.seq_len;
    if stride == 0 || stride > len {
        return Err(Error::Config(format!("window stride {stride} must lie in 1..={len}")));
    }
    let mut out = Array2::zeros((total, params.config.classes));
    let mut start = 0;
    while start < total {
        let end = (start + len).min(total);
        let x = features
            .slice(s![start..end, ..])
            .to_owned()
            .into_shape_with_order((1, end - start, d))
            .map_err(|e| Error::Shape(e.to_string()))?;
        let cache = forward_route(params, &x, Route::Sequence, Mode::Eval)?;
        // Keep the rows this window owns: from `len - stride` steps in, or all of the first window.
        let keep = if start == 0 { 0 } else { len - stride };
        out.slice_mut(s![start + keep..end, ..])
            .assign(&cache.probs_time_major().slice(s![keep.., ..]));
        if end == total {
            break;
        }
        start += stride;
    }
    Ok(out)
}

/// Argmax class per segment plus the probabilities; ties go to the lower class.
pub fn predict_sequence(
    params: &NetParams,
    features: &Array2<f64>,
) -> Result<(Vec<EngagementLabel>, Array2<f64>)> {
    let probs = predict_proba(params, features)?;
    let labels = probs
        .rows()
        .into_iter()
        .map(|r| EngagementLabel::from_index(argmax(r)))
        .collect();
    Ok((labels, probs))
}

/// Row-stacks a session's segment features.
pub fn session_matrix(segments: &[LabeledSegment]) -> Array2<f64> {
    let d = segments.first().map_or(0, |s| s.features.len());
    let mut m = Array2::zeros((segments.len(), d));
    for (mut row, s) in m.rows_mut().into_iter().zip(segments) {
        row.assign(&ndarray::ArrayView1::from(&s.features[..]));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sessions(n_sessions: usize, segs: usize, dim: usize, seed: u64) -> Vec<SessionData> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_sessions)
            .map(|k| SessionData {
                session_id: format!("s{k}"),
                segments: (0..segs)
                    .map(|i| {
                        let c = (i / 20) % 3;
                        let mut f: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
                        f[c] += 1.0;
                        LabeledSegment {
                            segment_idx: i,
                            features: f,
                            label: EngagementLabel::from_index(c),
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    fn small_net(dim: usize) -> NetConfig {
        NetConfig {
            input_dim: dim,
            hidden: 8,
            n_fc: 2,
            batch_size: 4,
            seq_len: 10,
            ..NetConfig::default()
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            max_epochs_per_stage: 15,
            class_weights: ClassWeighting::FromCounts,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn validation_windows_excluded_from_runs() {
        let sessions = toy_sessions(2, 100, 4, 0);
        let split = split_validation(&sessions, 10, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(split.val.len(), 4);
        for v in &split.val {
            let si = sessions.iter().position(|s| s.session_id == v.session_id).unwrap();
            for r in split.runs.iter().filter(|r| r.session == si) {
                assert!(v.start_segment + 10 <= r.start || v.start_segment >= r.end);
            }
        }
        let covered: usize = split.runs.iter().map(|r| r.end - r.start).sum();
        assert_eq!(covered + 40, 200);
    }

    #[test]
    fn fc_frozen_in_second_stage() {
        let sessions = toy_sessions(2, 120, 6, 2);
        let net = small_net(6);
        let cfg = quick();
        let weights = resolve_weights(&sessions, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetParams::init(&net, &mut rng).unwrap();
        p.attach_head(&mut rng);
        let mut log = Vec::new();
        train_stage(&mut p, &sessions, &STAGE_FC, &cfg, &weights, &mut log).unwrap();
        p.head = None;
        let fc_before = p.fc.clone();
        let lstm_before = p.lstm.clone();
        train_stage(&mut p, &sessions, &STAGE_RECURRENT, &cfg, &weights, &mut log).unwrap();
        assert_eq!(p.fc, fc_before);
        assert_ne!(p.lstm, lstm_before);
    }

    #[test]
    fn training_is_deterministic() {
        let sessions = toy_sessions(2, 80, 5, 3);
        let a = train(&sessions, &small_net(5), &quick()).unwrap();
        let b = train(&sessions, &small_net(5), &quick()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
        assert!(a.log.iter().any(|e| e.stage == 1) && a.log.iter().any(|e| e.stage == 2));
    }

    #[test]
    fn learns_separable_toy_problem() {
        let sessions = toy_sessions(3, 120, 6, 5);
        let out = train(&sessions, &small_net(6), &quick()).unwrap();
        let (pred, probs) = predict_sequence(&out.params, &session_matrix(&sessions[0].segments)).unwrap();
        assert_eq!(probs.nrows(), 120);
        let correct = pred
            .iter()
            .zip(sessions[0].labels())
            .filter(|(a, b)| **a == *b)
            .count();
        assert!(correct > 100, "{correct}/120");
    }

    #[test]
    fn short_final_window_predicted() {
        let net = small_net(3);
        let p = NetParams::init(&net, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let probs = predict_proba(&p, &Array2::zeros((23, 3))).unwrap();
        assert_eq!(probs.dim(), (23, 3));
        for r in probs.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { lr0: 0.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let sessions = toy_sessions(1, 30, 4, 0);
        assert!(matches!(
            train(&sessions, &small_net(5), &quick()),
            Err(Error::Shape(_))
        ));
    }
}

