//! Multi-camera registration and fusion into one room-aligned pose track.

mod fuse;
mod icp;
mod robot;
mod track;
mod transform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use fuse::{fuse_views, DEFAULT_GATE_RADIUS, FUSED_CAMERA_ID};
pub use icp::{check_spread, fit_rigid, icp_register, IcpParams, IcpResult};
pub use robot::{backproject_bbox, reject_out_of_range, CameraIntrinsics, RegionBox};
pub use track::{
    align_to_room, interpolate_gaps, lowpass_smooth, PoseTrack, RobotTrack, Track, DEFAULT_ALPHA,
    DEFAULT_FPS, DEFAULT_MAX_GAP,
};
pub use transform::{transform_frame, RigidTransform};

use crate::error::{Error, Result};
use crate::skeleton::{KeypointFrame, Point3};

/// Upper bound on points fed to ICP per camera; frames are strided to stay below it.
const ICP_MAX_POINTS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub gate_radius: f64,
    pub max_gap: usize,
    pub alpha: f64,
    /// Final yaw onto the room axes, radians. `None` defers to the dataset manifest.
    pub room_yaw: Option<f64>,
    /// Expected robot region in room coordinates. `None` defers to the dataset manifest.
    pub robot_region: Option<RegionBox>,
    /// Camera whose calibration defines the common frame; defaults to the first id.
    pub reference_camera: Option<String>,
    /// Refine the configured initial transforms with ICP.
    pub refine_registration: bool,
    pub icp: IcpParams,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            gate_radius: DEFAULT_GATE_RADIUS,
            max_gap: DEFAULT_MAX_GAP,
            alpha: DEFAULT_ALPHA,
            room_yaw: None,
            robot_region: None,
            reference_camera: None,
            refine_registration: true,
            icp: IcpParams {
                max_correspondence_distance: Some(0.25),
                ..IcpParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    pub intrinsics: CameraIntrinsics,
    pub init_transform: RigidTransform,
}

/// One robot observation, either a pixel detection with depth in the robot
/// camera or a point already expressed in the common frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobotObservation {
    Pixel {
        frame_idx: u64,
        u: f64,
        v: f64,
        depth_m: f64,
    },
    Point {
        frame_idx: u64,
        position: Point3,
    },
}

impl RobotObservation {
    pub fn frame_idx(&self) -> u64 {
        match *self {
            RobotObservation::Pixel { frame_idx, .. } | RobotObservation::Point { frame_idx, .. } => {
                frame_idx
            }
        }
    }
}

/// Everything recorded for one session, before fusion.
#[derive(Debug, Clone)]
pub struct SessionInput {
    pub fps: f64,
    /// Per-camera frames in that camera's own coordinates.
    pub streams: BTreeMap<String, Vec<KeypointFrame>>,
    pub robot_camera: String,
    pub robot: Vec<RobotObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRegistration {
    pub camera_id: String,
    pub transform: RigidTransform,
    pub icp: Option<IcpResult>,
}

#[derive(Debug, Clone)]
pub struct FusedSession {
    pub pose: PoseTrack,
    pub robot: RobotTrack,
    pub registrations: Vec<CameraRegistration>,
}

fn frame_points(frames: &[KeypointFrame], max_points: usize) -> Vec<Point3> {
    let total: usize = frames.iter().map(|f| f.valid_positions().count()).sum();
    let stride = total.div_ceil(max_points.max(1)).max(1);
    frames
        .iter()
        .step_by(stride)
        .flat_map(|f| f.valid_positions().collect::<Vec<_>>())
        .collect()
}

/// Maps every camera into the common frame defined by the reference camera.
pub fn register_cameras(
    streams: &BTreeMap<String, Vec<KeypointFrame>>,
    calibration: &BTreeMap<String, CameraCalibration>,
    config: &FusionConfig,
) -> Result<Vec<CameraRegistration>> {
    let reference = match &config.reference_camera {
        Some(id) => id.clone(),
        None => streams
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| Error::InvalidInput("no camera streams".into()))?,
    };
    let calib_of = |id: &str| {
        calibration
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no calibration for camera {id}")))
    };
    let ref_frames = streams
        .get(&reference)
        .ok_or_else(|| Error::InvalidInput(format!("reference camera {reference} has no stream")))?;
    let ref_t = calib_of(&reference)?.init_transform;
    let target: Vec<Point3> = frame_points(ref_frames, ICP_MAX_POINTS)
        .iter()
        .map(|p| ref_t.apply(p))
        .collect();

    let mut out = Vec::with_capacity(streams.len());
    for (id, frames) in streams {
        let init = calib_of(id)?.init_transform;
        if *id == reference || !config.refine_registration {
            out.push(CameraRegistration {
                camera_id: id.clone(),
                transform: init,
                icp: None,
            });
            continue;
        }
        let source = frame_points(frames, ICP_MAX_POINTS);
        let result = icp_register(&source, &target, &init, &config.icp)?;
        if !result.converged {
            tracing::warn!(camera = %id, rms = result.rms, "ICP did not converge");
        }
        out.push(CameraRegistration {
            camera_id: id.clone(),
            transform: result.transform,
            icp: Some(result),
        });
    }
    Ok(out)
}

/// Gated fusion of registered streams, one output frame per frame index in
/// the span covered by any camera.
pub fn fuse_streams(
    streams: &BTreeMap<String, Vec<KeypointFrame>>,
    registrations: &[CameraRegistration],
    fps: f64,
    gate_radius: f64,
) -> Result<Vec<KeypointFrame>> {
    let mut by_frame: BTreeMap<u64, Vec<KeypointFrame>> = BTreeMap::new();
    for reg in registrations {
        let Some(frames) = streams.get(&reg.camera_id) else {
            continue;
        };
        let mut last: Option<u64> = None;
        for f in frames {
            if last.is_some_and(|l| f.frame_idx <= l) {
                return Err(Error::InvalidInput(format!(
                    "camera {}: frame indices must strictly increase (saw {} after {})",
                    reg.camera_id,
                    f.frame_idx,
                    last.unwrap()
                )));
            }
            last = Some(f.frame_idx);
            by_frame
                .entry(f.frame_idx)
                .or_default()
                .push(transform_frame(f, &reg.transform));
        }
    }
    let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
        return Err(Error::InvalidInput("no keypoint frames".into()));
    };
    let mut fused: Vec<KeypointFrame> = Vec::with_capacity((last - first + 1) as usize);
    for idx in first..=last {
        let views = by_frame.remove(&idx).unwrap_or_default();
        let mut frame = fuse_views(&views, fused.last(), gate_radius);
        frame.frame_idx = idx;
        if views.is_empty() {
            frame.timestamp = idx as f64 / fps;
        }
        fused.push(frame);
    }
    Ok(fused)
}

/// Dense robot track over `[start, start + len)` in the common frame.
pub fn robot_track(
    observations: &[RobotObservation],
    intrinsics: &CameraIntrinsics,
    camera: &RigidTransform,
    start: u64,
    len: usize,
) -> RobotTrack {
    let mut samples = vec![None; len];
    for obs in observations {
        let idx = obs.frame_idx();
        if idx < start || idx >= start + len as u64 {
            continue;
        }
        let p = match *obs {
            RobotObservation::Point { position, .. } => Some(position),
            RobotObservation::Pixel { u, v, depth_m, .. } => {
                match backproject_bbox(u, v, depth_m, intrinsics) {
                    Ok(p) => Some(camera.apply(&p)),
                    Err(e) => {
                        tracing::debug!(frame = idx, "dropping robot detection: {e}");
                        None
                    }
                }
            }
        };
        if let Some(p) = p.filter(|p| p.iter().all(|v| v.is_finite())) {
            samples[(idx - start) as usize] = Some(p);
        }
    }
    RobotTrack::new(start, samples)
}

/// Full fusion for one session: register, fuse, fill, smooth, align, and the
/// matching cleaned robot track.
pub fn fuse_session(
    input: &SessionInput,
    calibration: &BTreeMap<String, CameraCalibration>,
    room_yaw: f64,
    robot_region: &RegionBox,
    config: &FusionConfig,
) -> Result<FusedSession> {
    robot_region.validate()?;
    let registrations = register_cameras(&input.streams, calibration, config)?;
    let fused = fuse_streams(&input.streams, &registrations, input.fps, config.gate_radius)?;
    let pose = PoseTrack::new(fused, input.fps)?;
    let pose = interpolate_gaps(&pose, config.max_gap)?;
    let pose = lowpass_smooth(&pose, config.alpha)?;
    let pose = align_to_room(&pose, room_yaw);

    let robot_calib = calibration.get(&input.robot_camera).ok_or_else(|| {
        Error::InvalidInput(format!("no calibration for robot camera {}", input.robot_camera))
    })?;
    robot_calib.intrinsics.validate()?;
    let robot_reg = registrations
        .iter()
        .find(|r| r.camera_id == input.robot_camera)
        .map(|r| r.transform)
        .unwrap_or(robot_calib.init_transform);
    let start = pose.frames[0].frame_idx;
    let robot = robot_track(
        &input.robot,
        &robot_calib.intrinsics,
        &robot_reg,
        start,
        pose.frames.len(),
    );
    let robot = align_to_room(&robot, room_yaw);
    let robot = reject_out_of_range(&robot, robot_region);
    let robot = interpolate_gaps(&robot, config.max_gap)?;
    let robot = lowpass_smooth(&robot, config.alpha)?;

    Ok(FusedSession {
        pose,
        robot,
        registrations,
    })
}
