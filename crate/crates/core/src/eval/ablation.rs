//! Grid of network variants scored with the same cross-validation.

use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvConfig, CvReport, Method};
use crate::dataset::SessionData;
use crate::error::Result;
use crate::model::{NetConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub n_fc: usize,
    pub n_lstm: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchShape {
    pub batch_size: usize,
    pub seq_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `architecture` or `batch_shape`.
    pub group: String,
    pub variant: String,
    pub report: CvReport,
}

/// Varies the layer counts with the base batch shape, then the batch shape
/// with the base layer counts.
pub fn run_ablation(
    sessions: &[SessionData],
    base: &NetConfig,
    train: &TrainConfig,
    architectures: &[Architecture],
    shapes: &[BatchShape],
    cv: &CvConfig,
) -> Result<Vec<AblationRow>> {
    let mut variants = Vec::new();
    for a in architectures {
        let net = NetConfig { n_fc: a.n_fc, n_lstm: a.n_lstm, ..*base };
        variants.push(("architecture", net));
    }
    for s in shapes {
        let net = NetConfig { batch_size: s.batch_size, seq_len: s.seq_len, ..*base };
        variants.push(("batch_shape", net));
    }
    variants
        .into_iter()
        .map(|(group, net)| {
            let variant = match group {
                "architecture" => format!("{}FC+{}LSTM", net.n_fc, net.n_lstm),
                _ => format!("N={}, L={}", net.batch_size, net.seq_len),
            };
            tracing::info!(group, %variant, "ablation variant");
            let cfg = CvConfig {
                method: Method::Network { net, train: train.clone() },
                ..cv.clone()
            };
            Ok(AblationRow { group: group.into(), variant, report: cross_validate(sessions, &cfg)? })
        })
        .collect()
}
