//! Joint layout and per-camera keypoint frames.
//!
//! Joints follow the 18-point body layout used by common 2D/3D pose
//! estimators: limbs, neck and five facial points.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Point3 = Vector3<f64>;

pub const NUM_JOINTS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Joint {
    Nose = 0,
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightEye,
    LeftEye,
    RightEar,
    LeftEar,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Nose,
        Joint::Neck,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightHip,
        Joint::RightKnee,
        Joint::RightAnkle,
        Joint::LeftHip,
        Joint::LeftKnee,
        Joint::LeftAnkle,
        Joint::RightEye,
        Joint::LeftEye,
        Joint::RightEar,
        Joint::LeftEar,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Nose => "nose",
            Joint::Neck => "neck",
            Joint::RightShoulder => "right_shoulder",
            Joint::RightElbow => "right_elbow",
            Joint::RightWrist => "right_wrist",
            Joint::LeftShoulder => "left_shoulder",
            Joint::LeftElbow => "left_elbow",
            Joint::LeftWrist => "left_wrist",
            Joint::RightHip => "right_hip",
            Joint::RightKnee => "right_knee",
            Joint::RightAnkle => "right_ankle",
            Joint::LeftHip => "left_hip",
            Joint::LeftKnee => "left_knee",
            Joint::LeftAnkle => "left_ankle",
            Joint::RightEye => "right_eye",
            Joint::LeftEye => "left_eye",
            Joint::RightEar => "right_ear",
            Joint::LeftEar => "left_ear",
        }
    }

    /// The same joint on the other side of the body; central joints map to themselves.
    pub fn mirrored(self) -> Joint {
        use Joint::*;
        match self {
            RightShoulder => LeftShoulder,
            RightElbow => LeftElbow,
            RightWrist => LeftWrist,
            LeftShoulder => RightShoulder,
            LeftElbow => RightElbow,
            LeftWrist => RightWrist,
            RightHip => LeftHip,
            RightKnee => LeftKnee,
            RightAnkle => LeftAnkle,
            LeftHip => RightHip,
            LeftKnee => RightKnee,
            LeftAnkle => RightAnkle,
            RightEye => LeftEye,
            LeftEye => RightEye,
            RightEar => LeftEar,
            LeftEar => RightEar,
            other => other,
        }
    }
}

impl std::fmt::Display for Joint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub joint: Joint,
    pub position: Point3,
    pub valid: bool,
}

impl Keypoint {
    pub fn missing(joint: Joint) -> Self {
        Keypoint {
            joint,
            position: Point3::zeros(),
            valid: false,
        }
    }

    pub fn observed(joint: Joint, position: Point3) -> Self {
        Keypoint {
            joint,
            position,
            valid: position.iter().all(|v| v.is_finite()),
        }
    }

    pub fn get(&self) -> Option<Point3> {
        self.valid.then_some(self.position)
    }
}

/// One camera's (or the fused) 18 keypoints at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub camera_id: String,
    pub frame_idx: u64,
    pub timestamp: f64,
    pub keypoints: [Keypoint; NUM_JOINTS],
}

impl KeypointFrame {
    pub fn empty(camera_id: impl Into<String>, frame_idx: u64, timestamp: f64) -> Self {
        KeypointFrame {
            camera_id: camera_id.into(),
            frame_idx,
            timestamp,
            keypoints: Joint::ALL.map(Keypoint::missing),
        }
    }

    pub fn from_positions(
        camera_id: impl Into<String>,
        frame_idx: u64,
        timestamp: f64,
        positions: [Option<Point3>; NUM_JOINTS],
    ) -> Self {
        let mut frame = Self::empty(camera_id, frame_idx, timestamp);
        for (kp, pos) in frame.keypoints.iter_mut().zip(positions) {
            if let Some(p) = pos {
                *kp = Keypoint::observed(kp.joint, p);
            }
        }
        frame
    }

    pub fn joint(&self, joint: Joint) -> &Keypoint {
        &self.keypoints[joint.index()]
    }

    pub fn position(&self, joint: Joint) -> Option<Point3> {
        self.keypoints[joint.index()].get()
    }

    pub fn set(&mut self, joint: Joint, position: Option<Point3>) {
        self.keypoints[joint.index()] = match position {
            Some(p) => Keypoint::observed(joint, p),
            None => Keypoint::missing(joint),
        };
    }

    pub fn is_complete(&self) -> bool {
        self.keypoints.iter().all(|k| k.valid)
    }

    pub fn valid_positions(&self) -> impl Iterator<Item = Point3> + '_ {
        self.keypoints.iter().filter_map(Keypoint::get)
    }

    /// Unweighted mean of the valid keypoints.
    pub fn center_of_mass(&self) -> Option<Point3> {
        let (sum, n) = self
            .valid_positions()
            .fold((Point3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}
