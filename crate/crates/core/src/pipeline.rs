//! Raw session files to labelled segment features.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use tracing::info;

use crate::dataset::{align_labels, segments_per_second, EngagementLabel, SessionData};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureConfig, SegmentFeatures};
use crate::fusion::{fuse_session, CameraCalibration, FusedSession, FusionConfig, SessionInput};
use crate::io::{self, Manifest, SessionEntry};

#[derive(Debug, Clone)]
pub struct ProcessedSession {
    pub fused: FusedSession,
    pub features: Vec<SegmentFeatures>,
    pub data: SessionData,
    /// Segments beyond the last annotated second.
    pub dropped: usize,
}

pub fn load_session_input(
    data_dir: &Path,
    manifest: &Manifest,
    entry: &SessionEntry,
) -> Result<(SessionInput, Vec<EngagementLabel>)> {
    let streams = io::read_keypoints(&data_dir.join(&entry.keypoints))?;
    if streams.is_empty() {
        return Err(Error::InvalidInput(format!(
            "session {} has no keypoint frames",
            entry.session_id
        )));
    }
    let robot = io::read_robot(&data_dir.join(&entry.robot))?;
    let labels = io::read_annotations(&data_dir.join(&entry.annotations), &entry.session_id)?;
    let input = SessionInput {
        fps: manifest.fps,
        streams,
        robot_camera: entry.robot_camera.clone(),
        robot,
    };
    Ok((input, labels))
}

/// Fuses, extracts and labels one already loaded session.
pub fn process_input(
    session_id: &str,
    input: &SessionInput,
    labels: &[EngagementLabel],
    calibration: &BTreeMap<String, CameraCalibration>,
    manifest: &Manifest,
    fusion: &FusionConfig,
    features: &FeatureConfig,
) -> Result<ProcessedSession> {
    let per_second = segments_per_second(input.fps)?;
    let room_yaw = fusion.room_yaw.unwrap_or(manifest.room_yaw);
    let region = fusion.robot_region.unwrap_or(manifest.robot_region);
    let fused = fuse_session(input, calibration, room_yaw, &region, fusion)?;
    let segs = extract_features(&fused.pose, &fused.robot, features)?;
    let aligned = align_labels(labels, &segs, per_second);
    if aligned.dropped > 0 {
        info!(session_id, dropped = aligned.dropped, "segments past the annotation dropped");
    }
    Ok(ProcessedSession {
        fused,
        features: segs,
        data: SessionData {
            session_id: session_id.to_string(),
            segments: aligned.segments,
        },
        dropped: aligned.dropped,
    })
}

pub fn process_session(
    data_dir: &Path,
    manifest: &Manifest,
    calibration: &BTreeMap<String, CameraCalibration>,
    entry: &SessionEntry,
    fusion: &FusionConfig,
    features: &FeatureConfig,
) -> Result<ProcessedSession> {
    let (input, labels) = load_session_input(data_dir, manifest, entry)?;
    process_input(&entry.session_id, &input, &labels, calibration, manifest, fusion, features)
}

/// Every session listed in the manifest of `data_dir`, processed in parallel.
pub fn process_dataset(
    data_dir: &Path,
    fusion: &FusionConfig,
    features: &FeatureConfig,
) -> Result<(Manifest, Vec<ProcessedSession>)> {
    let manifest = Manifest::load(data_dir)?;
    let calibration = io::read_calibration(&data_dir.join(&manifest.calibration))?;
    let sessions = manifest
        .sessions
        .par_iter()
        .map(|e| process_session(data_dir, &manifest, &calibration, e, fusion, features))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, sessions))
}
