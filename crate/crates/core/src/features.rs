//! Robot-relative per-frame features and their 5-frame segment statistics.
//!
//! Per frame the vector holds the 18 keypoints minus the robot position (54
//! values, joint order of [`Joint::ALL`]) followed by the gaze angle, the
//! body-facing angle (both relative to the robot direction) and the left and
//! right hand-to-shoulder distances. A segment is summarised by the mean and
//! the standard deviation of each of these 58 values, giving 116 features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{PoseTrack, RobotTrack};
use crate::skeleton::{Joint, KeypointFrame, Point3, NUM_JOINTS};

pub const KEYPOINT_DIM: usize = 3 * NUM_JOINTS;
pub const HIGH_LEVEL_DIM: usize = 4;
pub const FRAME_DIM: usize = KEYPOINT_DIM + HIGH_LEVEL_DIM;
pub const FEATURE_DIM: usize = 2 * FRAME_DIM;
pub const SEGMENT_FRAMES: usize = 5;

pub const GAZE_ANGLE_IDX: usize = KEYPOINT_DIM;
pub const BODY_ANGLE_IDX: usize = KEYPOINT_DIM + 1;
pub const LEFT_HAND_IDX: usize = KEYPOINT_DIM + 2;
pub const RIGHT_HAND_IDX: usize = KEYPOINT_DIM + 3;

/// Horizontal distance below which child and robot count as coincident.
const COINCIDENT_EPS: f64 = 1e-9;

const MIN_RESULTANT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Use |angle| instead of the signed relative angles.
    pub absolute_angles: bool,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighLevelFeatures {
    pub gaze_rel_angle: f64,
    pub body_rel_angle: f64,
    pub left_hand_dist: f64,
    pub right_hand_dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeAngle {
    pub angle: f64,
    /// Child and robot coincide in the horizontal plane; `angle` is 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub segment_idx: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

fn require(pose: &KeypointFrame, joint: Joint) -> Result<Point3> {
    pose.position(joint).ok_or_else(|| {
        Error::InvalidInput(format!(
            "frame {}: {} missing for feature extraction",
            pose.frame_idx, joint
        ))
    })
}

/// Keypoints minus the robot position, flattened in joint order.
pub fn relative_keypoints(pose: &KeypointFrame, robot: &Point3) -> Result<[f64; KEYPOINT_DIM]> {
    let mut out = [0.0; KEYPOINT_DIM];
    for joint in Joint::ALL {
        let d = require(pose, joint)? - robot;
        out[3 * joint.index()..3 * joint.index() + 3].copy_from_slice(d.as_slice());
    }
    Ok(out)
}

/// Heading of the horizontal left-to-right vector rotated by 90 degrees.
///
/// The +90 (counterclockwise) rotation is used unless the `forward` hint
/// (a horizontal vector toward the front of the body) disagrees with it.
fn pair_heading(left: Point3, right: Point3, forward: Option<(f64, f64)>) -> f64 {
    let (vx, vy) = (right.x - left.x, right.y - left.y);
    let (mut hx, mut hy) = (-vy, vx);
    if let Some((fx, fy)) = forward {
        if hx * fx + hy * fy < 0.0 {
            (hx, hy) = (vy, -vx);
        }
    }
    hy.atan2(hx)
}

fn forward_hint(from: Point3, to: Option<Point3>) -> Option<(f64, f64)> {
    to.map(|t| (t.x - from.x, t.y - from.y))
}

/// Gaze direction in the horizontal plane, from the ear-to-ear vector.
pub fn gaze_heading(pose: &KeypointFrame) -> Result<f64> {
    let left = require(pose, Joint::LeftEar)?;
    let right = require(pose, Joint::RightEar)?;
    let head_center = (left + right) / 2.0;
    let hint = forward_hint(head_center, pose.position(Joint::Nose));
    Ok(pair_heading(left, right, hint))
}

/// Body-facing direction in the horizontal plane, from the shoulders.
pub fn body_heading(pose: &KeypointFrame) -> Result<f64> {
    let left = require(pose, Joint::LeftShoulder)?;
    let right = require(pose, Joint::RightShoulder)?;
    let center = (left + right) / 2.0;
    let hint = forward_hint(center, pose.position(Joint::Nose));
    Ok(pair_heading(left, right, hint))
}

/// `heading` minus the child-to-robot direction, wrapped; 0 means facing the robot.
pub fn relative_angle(heading: f64, child_com: &Point3, robot: &Point3) -> RelativeAngle {
    let (dx, dy) = (robot.x - child_com.x, robot.y - child_com.y);
    if dx.hypot(dy) < COINCIDENT_EPS {
        return RelativeAngle {
            angle: 0.0,
            degenerate: true,
        };
    }
    RelativeAngle {
        angle: wrap_angle(heading - dy.atan2(dx)),
        degenerate: false,
    }
}

/// Left wrist to left shoulder, right wrist to right shoulder.
pub fn hand_shoulder_distances(pose: &KeypointFrame) -> Result<(f64, f64)> {
    let l = (require(pose, Joint::LeftWrist)? - require(pose, Joint::LeftShoulder)?).norm();
    let r = (require(pose, Joint::RightWrist)? - require(pose, Joint::RightShoulder)?).norm();
    Ok((l, r))
}

pub fn high_level_features(pose: &KeypointFrame, robot: &Point3) -> Result<HighLevelFeatures> {
    let com = pose
        .center_of_mass()
        .ok_or_else(|| Error::InvalidInput("empty pose".into()))?;
    let gaze = relative_angle(gaze_heading(pose)?, &com, robot);
    let body = relative_angle(body_heading(pose)?, &com, robot);
    if gaze.degenerate {
        tracing::debug!(frame = pose.frame_idx, "child and robot coincide horizontally");
    }
    let (left_hand_dist, right_hand_dist) = hand_shoulder_distances(pose)?;
    Ok(HighLevelFeatures {
        gaze_rel_angle: gaze.angle,
        body_rel_angle: body.angle,
        left_hand_dist,
        right_hand_dist,
    })
}

/// The 58 per-frame values.
pub fn frame_vector(
    pose: &KeypointFrame,
    robot: &Point3,
    config: &FeatureConfig,
) -> Result<[f64; FRAME_DIM]> {
    let mut out = [0.0; FRAME_DIM];
    out[..KEYPOINT_DIM].copy_from_slice(&relative_keypoints(pose, robot)?);
    let hl = high_level_features(pose, robot)?;
    let (g, b) = if config.absolute_angles {
        (hl.gaze_rel_angle.abs(), hl.body_rel_angle.abs())
    } else {
        (hl.gaze_rel_angle, hl.body_rel_angle)
    };
    out[GAZE_ANGLE_IDX] = g;
    out[BODY_ANGLE_IDX] = b;
    out[LEFT_HAND_IDX] = hl.left_hand_dist;
    out[RIGHT_HAND_IDX] = hl.right_hand_dist;
    Ok(out)
}

fn is_circular(idx: usize, config: &FeatureConfig) -> bool {
    !config.absolute_angles && (idx == GAZE_ANGLE_IDX || idx == BODY_ANGLE_IDX)
}

/// Mean and population standard deviation of each per-frame value.
///
/// Signed angle channels use circular statistics: the mean direction of the
/// unit vectors and the circular deviation `sqrt(-2 ln R)`.
pub fn segment_stats(
    frames: &[[f64; FRAME_DIM]],
    segment_idx: usize,
    config: &FeatureConfig,
) -> Result<SegmentFeatures> {
    if frames.len() != SEGMENT_FRAMES {
        return Err(Error::Shape(format!(
            "a segment needs {SEGMENT_FRAMES} frames, got {}",
            frames.len()
        )));
    }
    let n = frames.len() as f64;
    let mut values = vec![0.0; FEATURE_DIM];
    for i in 0..FRAME_DIM {
        let (mean, std) = if is_circular(i, config) {
            let (s, c) = frames
                .iter()
                .fold((0.0, 0.0), |(s, c), f| (s + f[i].sin(), c + f[i].cos()));
            // R is floored so fully opposed directions still give a finite spread.
            let r = (s / n).hypot(c / n).clamp(MIN_RESULTANT, 1.0);
            let std = if 1.0 - r <= 4.0 * f64::EPSILON { 0.0 } else { (-2.0 * r.ln()).sqrt() };
            (s.atan2(c), std)
        } else {
            let mean = frames.iter().map(|f| f[i]).sum::<f64>() / n;
            let var = frames.iter().map(|f| (f[i] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        values[i] = mean;
        values[FRAME_DIM + i] = std;
    }
    Ok(SegmentFeatures {
        segment_idx,
        n_frames: frames.len(),
        values,
    })
}

/// Non-overlapping 5-frame segments over a fused session; a trailing
/// partial segment is dropped.
pub fn extract_features(
    pose: &PoseTrack,
    robot: &RobotTrack,
    config: &FeatureConfig,
) -> Result<Vec<SegmentFeatures>> {
    if pose.frames.len() != robot.positions.len() {
        return Err(Error::Shape(format!(
            "pose track has {} frames, robot track {}",
            pose.frames.len(),
            robot.positions.len()
        )));
    }
    let per_frame = pose
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let r = robot.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("robot position missing at frame {}", f.frame_idx))
            })?;
            frame_vector(f, &r, config)
        })
        .collect::<Result<Vec<_>>>()?;
    per_frame
        .chunks_exact(SEGMENT_FRAMES)
        .enumerate()
        .map(|(i, chunk)| segment_stats(chunk, i, config))
        .collect()
}
