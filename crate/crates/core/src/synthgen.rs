//! Seeded synthetic sessions: a child skeleton whose gaze, posture, distance
//! to the robot and reaching follow per-class behavior profiles, observed by
//! several noisy cameras plus a robot-head detector.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{segments_per_second, EngagementLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::features::wrap_angle;
use crate::fusion::{CameraCalibration, CameraIntrinsics, RegionBox, RigidTransform, RobotObservation};
use crate::io::{self, Manifest, SessionEntry};
use crate::skeleton::{Joint, KeypointFrame, Point3, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorProfile {
    pub class: EngagementLabel,
    /// Head-yaw random-walk scale, rad per sqrt(s).
    pub gaze_jitter: f64,
    /// Mean head-yaw offset from the robot direction, radians; sign drawn per bout.
    pub gaze_bias: f64,
    /// Range of the body-yaw offset from the robot direction, radians.
    pub body_offset: [f64; 2],
    /// Range of preferred distances to the robot, meters.
    pub distance: [f64; 2],
    /// m/s.
    pub locomotion_speed: f64,
    /// Reaches per minute.
    pub hand_reach_rate: f64,
    /// Range of bout durations, seconds.
    pub dwell: [f64; 2],
    /// Brief gaze shifts per minute, away from the bout's usual gaze.
    pub glance_rate: f64,
    /// Head-yaw offset from the robot direction during a glance, radians; sign drawn per glance.
    pub glance_offset: f64,
    /// Range of glance durations, seconds.
    pub glance_duration: [f64; 2],
}

pub fn default_profiles() -> [BehaviorProfile; NUM_CLASSES] {
    [
        BehaviorProfile {
            class: EngagementLabel::Disengaged,
            gaze_jitter: 1.0,
            gaze_bias: 110f64.to_radians(),
            body_offset: [100f64.to_radians(), 170f64.to_radians()],
            distance: [1.0, 3.0],
            locomotion_speed: 0.4,
            hand_reach_rate: 3.0,
            dwell: [15.0, 35.0],
            glance_rate: 8.0,
            glance_offset: 0.0,
            glance_duration: [2.0, 4.0],
        },
        BehaviorProfile {
            class: EngagementLabel::Attentive,
            gaze_jitter: 0.5,
            gaze_bias: 15f64.to_radians(),
            body_offset: [20f64.to_radians(), 45f64.to_radians()],
            distance: [0.7, 2.0],
            locomotion_speed: 0.1,
            hand_reach_rate: 0.0,
            dwell: [15.0, 35.0],
            glance_rate: 5.0,
            glance_offset: 90f64.to_radians(),
            glance_duration: [1.5, 3.5],
        },
        BehaviorProfile {
            class: EngagementLabel::Cooperating,
            gaze_jitter: 0.2,
            gaze_bias: 0.0,
            body_offset: [0.0, 10f64.to_radians()],
            distance: [0.5, 0.9],
            locomotion_speed: 0.2,
            hand_reach_rate: 10.0,
            dwell: [15.0, 35.0],
            glance_rate: 1.5,
            glance_offset: 90f64.to_radians(),
            glance_duration: [1.5, 3.0],
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sessions: usize,
    pub duration_s: u32,
    pub fps: f64,
    pub cameras: usize,
    pub room: RegionBox,
    pub robot_position: [f64; 3],
    /// Yaw from the common camera frame to the room axes.
    pub room_yaw: f64,
    /// Per-coordinate camera noise, meters.
    pub noise_sigma: f64,
    pub dropout_p: f64,
    pub outlier_p: f64,
    pub outlier_scale: f64,
    pub robot_miss_p: f64,
    pub robot_outlier_p: f64,
    /// Range of the rotation error of non-reference initial transforms, degrees.
    pub init_rotation_error_deg: [f64; 2],
    /// Range of their translation error, meters.
    pub init_translation_error_m: [f64; 2],
    /// Relative frequency of classes 1, 2, 3 when drawing bouts.
    pub class_mix: [f64; NUM_CLASSES],
    pub profiles: [BehaviorProfile; NUM_CLASSES],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sessions: 8,
            duration_s: 120,
            fps: 30.0,
            cameras: 4,
            room: RegionBox { min: [0.0, 0.0, 0.0], max: [5.0, 4.0, 2.5] },
            robot_position: [2.5, 3.2, 0.55],
            room_yaw: 0.35,
            noise_sigma: 0.01,
            dropout_p: 0.1,
            outlier_p: 0.05,
            outlier_scale: 1.0,
            robot_miss_p: 0.05,
            robot_outlier_p: 0.02,
            init_rotation_error_deg: [1.0, 2.0],
            init_translation_error_m: [0.02, 0.03],
            class_mix: [0.25, 0.45, 0.30],
            profiles: default_profiles(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        segments_per_second(self.fps)?;
        if self.sessions == 0 || self.duration_s == 0 || self.cameras == 0 {
            return Err(Error::Config("sessions, duration_s and cameras must be positive".into()));
        }
        for (name, p) in [
            ("dropout_p", self.dropout_p),
            ("outlier_p", self.outlier_p),
            ("robot_miss_p", self.robot_miss_p),
            ("robot_outlier_p", self.robot_outlier_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.noise_sigma < 0.0 || self.outlier_scale < 0.0 {
            return Err(Error::Config("noise_sigma and outlier_scale must be non-negative".into()));
        }
        if self.class_mix.iter().any(|&w| w < 0.0) || self.class_mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("invalid class_mix {:?}", self.class_mix)));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.class.index() != i {
                return Err(Error::Config(format!("profile {} must describe class {}", i, i + 1)));
            }
            let ranges = [p.body_offset, p.distance, p.dwell, p.glance_duration];
            if p.gaze_jitter < 0.0
                || p.glance_rate < 0.0
                || p.locomotion_speed < 0.0
                || p.hand_reach_rate < 0.0
                || ranges.iter().any(|r| r[0] > r[1] || r[0] < 0.0)
                || p.dwell[0] <= 0.0
            {
                return Err(Error::Config(format!("invalid profile for class {}", i + 1)));
            }
        }
        Ok(())
    }

    fn robot(&self) -> Point3 {
        Point3::from(self.robot_position)
    }

    /// Region the robot head may occupy, in room coordinates.
    pub fn robot_region(&self) -> RegionBox {
        let r = self.robot_position;
        RegionBox {
            min: [r[0] - 0.6, r[1] - 0.6, (r[2] - 0.5).max(0.0)],
            max: [r[0] + 0.6, r[1] + 0.6, r[2] + 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCamera {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    /// Camera to room, exact.
    pub to_room: RigidTransform,
}

/// Cameras with their exact poses and the perturbed calibration handed to fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub cameras: Vec<SynthCamera>,
    pub calibration: BTreeMap<String, CameraCalibration>,
}

pub const DEFAULT_INTRINSICS: CameraIntrinsics = CameraIntrinsics {
    fx: 525.0,
    fy: 525.0,
    cx: 319.5,
    cy: 239.5,
};

/// Camera at `eye` looking at `target`: x right, y down, z forward.
fn look_at(eye: Point3, target: Point3) -> Result<RigidTransform> {
    let z = (target - eye).normalize();
    let x = z.cross(&Vector3::z()).normalize();
    let y = z.cross(&x);
    RigidTransform::new(nalgebra::Matrix3::from_columns(&[x, y, z]), eye)
}

fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Ceiling-corner cameras; the first defines the common frame and is
/// calibrated exactly, the others get perturbed initial transforms.
pub fn build_rig(cfg: &SynthConfig) -> Result<Rig> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xCA3E_4A5E);
    let (lo, hi) = (cfg.room.min, cfg.room.max);
    let height = lo[2] + 0.88 * (hi[2] - lo[2]);
    let inset = 0.2;
    let corners = [
        [lo[0] + inset, lo[1] + inset],
        [hi[0] - inset, lo[1] + inset],
        [hi[0] - inset, hi[1] - inset],
        [lo[0] + inset, hi[1] - inset],
    ];
    let center = Point3::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), lo[2] + 0.8);
    let to_common = RigidTransform::yaw(-cfg.room_yaw);
    let mut cameras = Vec::with_capacity(cfg.cameras);
    let mut calibration = BTreeMap::new();
    for k in 0..cfg.cameras {
        let c = corners[k % 4];
        // Beyond four cameras, move along the wall toward the next corner.
        let n = corners[(k + 1) % 4];
        let lap = (k / 4) as f64 * 0.3;
        let eye = Point3::new(c[0] + lap * (n[0] - c[0]), c[1] + lap * (n[1] - c[1]), height);
        let to_room = look_at(eye, center)?;
        let exact = to_common.compose(&to_room);
        let init = if k == 0 {
            exact
        } else {
            let angle = uniform(&mut rng, cfg.init_rotation_error_deg).to_radians();
            let shift = random_axis(&mut rng) * uniform(&mut rng, cfg.init_translation_error_m);
            RigidTransform::from_axis_angle(random_axis(&mut rng), angle, shift).compose(&exact)
        };
        let id = format!("cam{k}");
        calibration.insert(
            id.clone(),
            CameraCalibration {
                intrinsics: DEFAULT_INTRINSICS,
                init_transform: init,
            },
        );
        cameras.push(SynthCamera {
            id,
            intrinsics: DEFAULT_INTRINSICS,
            to_room,
        });
    }
    Ok(Rig { cameras, calibration })
}

/// Consecutive bouts of `(class, seconds)` covering `duration_s`; every class
/// appears when the duration allows it.
pub fn draw_schedule<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    rng: &mut R,
) -> Vec<(EngagementLabel, u32)> {
    let mix = rand::distr::weighted::WeightedIndex::new(cfg.class_mix).expect("validated mix");
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.shuffle(rng);
    let mut out: Vec<(EngagementLabel, u32)> = Vec::new();
    let mut total = 0;
    let mut k = 0;
    while total < cfg.duration_s {
        let mut class = if k < NUM_CLASSES { order[k] } else { mix.sample(rng) };
        if let Some(&(last, _)) = out.last() {
            while class == last.index() {
                class = mix.sample(rng);
            }
        }
        let p = &cfg.profiles[class];
        let secs = (uniform(rng, p.dwell).round() as u32).max(1).min(cfg.duration_s - total);
        out.push((EngagementLabel::from_index(class), secs));
        total += secs;
        k += 1;
    }
    out
}

/// Child and robot state while simulating.
struct Actor {
    hip: Point3,
    velocity: Vector3<f64>,
    body_yaw: f64,
    head_yaw: f64,
    /// Intended head-yaw offset from the robot direction, following the
    /// bout's bias or a glance.
    gaze_mean: f64,
    /// Slowly correlated wander around `gaze_mean`.
    gaze_noise: f64,
    waypoint: Point3,
    /// Remaining reach time of the right and left arm.
    reach: [Option<f64>; 2],
    /// Slow wander of the body yaw around the bout's offset.
    body_sway: f64,
    /// Remaining glance time and its gaze offset.
    glance: Option<(f64, f64)>,
}

const HIP_HEIGHT: f64 = 0.6;
const REACH_SECONDS: f64 = 1.5;
/// Largest head yaw relative to the shoulders, radians.
const MAX_NECK_TURN: f64 = 80.0 * PI / 180.0;

struct Bout {
    profile: BehaviorProfile,
    gaze_sign: f64,
    body_offset: f64,
}

fn horizontal(v: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0)
}

fn heading_vectors(yaw: f64) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(yaw.cos(), yaw.sin(), 0.0),
        Vector3::new(yaw.sin(), -yaw.cos(), 0.0),
    )
}

fn blend(a: Vector3<f64>, b: Vector3<f64>, s: f64) -> Vector3<f64> {
    let v = a * (1.0 - s) + b * s;
    if v.norm() < 1e-9 {
        a
    } else {
        v.normalize()
    }
}

/// Bone lengths of the synthetic child, meters.
pub mod bones {
    pub const TORSO: f64 = 0.40;
    pub const NECK_TO_HEAD: f64 = 0.12;
    pub const SHOULDER_HALF: f64 = 0.14;
    pub const UPPER_ARM: f64 = 0.19;
    pub const FOREARM: f64 = 0.17;
    pub const HIP_HALF: f64 = 0.08;
    pub const THIGH: f64 = 0.28;
    pub const SHIN: f64 = 0.28;
}

fn skeleton(a: &Actor, robot: &Point3) -> [Point3; NUM_JOINTS] {
    use bones::*;
    let up = Vector3::z();
    let down = -up;
    let (fb, rb) = heading_vectors(a.body_yaw);
    let (fh, rh) = heading_vectors(a.head_yaw);
    let neck = a.hip + TORSO * up;
    let head = neck + NECK_TO_HEAD * up;
    let mut p = [Point3::zeros(); NUM_JOINTS];
    let mut set = |j: Joint, v: Point3| p[j.index()] = v;
    set(Joint::Neck, neck);
    set(Joint::Nose, head + 0.07 * fh);
    set(Joint::RightEye, head + 0.05 * fh + 0.03 * up + 0.03 * rh);
    set(Joint::LeftEye, head + 0.05 * fh + 0.03 * up - 0.03 * rh);
    set(Joint::RightEar, head + 0.065 * rh - 0.01 * fh);
    set(Joint::LeftEar, head - 0.065 * rh - 0.01 * fh);

    let upper_rest = blend(down, fb, 0.1);
    let fore_rest = blend(fb, Vector3::z(), 0.4);
    for (side, (sh, el, wr)) in [
        (1.0, (Joint::RightShoulder, Joint::RightElbow, Joint::RightWrist)),
        (-1.0, (Joint::LeftShoulder, Joint::LeftElbow, Joint::LeftWrist)),
    ] {
        let shoulder = neck + side * SHOULDER_HALF * rb;
        let arm = if side > 0.0 { 0 } else { 1 };
        let s = a.reach[arm].map_or(0.0, |left| (PI * left / REACH_SECONDS).sin().max(0.0));
        let toward = (robot - shoulder).normalize();
        let elbow = shoulder + UPPER_ARM * blend(upper_rest, toward, s);
        let wrist = elbow + FOREARM * blend(fore_rest, toward, s);
        set(sh, shoulder);
        set(el, elbow);
        set(wr, wrist);
    }
    let thigh = blend(down, fb, 0.05);
    for (side, (hip, knee, ankle)) in [
        (1.0, (Joint::RightHip, Joint::RightKnee, Joint::RightAnkle)),
        (-1.0, (Joint::LeftHip, Joint::LeftKnee, Joint::LeftAnkle)),
    ] {
        let h = a.hip + side * HIP_HALF * rb;
        let k = h + THIGH * thigh;
        set(hip, h);
        set(knee, k);
        set(ankle, k + SHIN * down);
    }
    p
}

/// Bearing change between consecutive waypoints, radians.
const MAX_BEARING_STEP: f64 = 0.8;

/// A standing point at the profile's distance from the robot, near the
/// current bearing `from` when given.
fn draw_waypoint<R: Rng + ?Sized>(
    cfg: &SynthConfig,
    p: &BehaviorProfile,
    from: Option<f64>,
    rng: &mut R,
) -> Point3 {
    let robot = cfg.robot();
    let (lo, hi) = (cfg.room.min, cfg.room.max);
    let margin = 0.3;
    for attempt in 0..64 {
        let d = uniform(rng, p.distance);
        let a: f64 = match from {
            Some(b) if attempt < 32 => b + rng.random_range(-MAX_BEARING_STEP..MAX_BEARING_STEP),
            _ => rng.random_range(-PI..PI),
        };
        let w = Point3::new(robot.x + d * a.cos(), robot.y + d * a.sin(), HIP_HEIGHT);
        if w.x > lo[0] + margin && w.x < hi[0] - margin && w.y > lo[1] + margin && w.y < hi[1] - margin {
            return w;
        }
    }
    Point3::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), HIP_HEIGHT)
}

/// Direction from the robot to `p` in the floor plane.
fn bearing(robot: &Point3, p: &Point3) -> f64 {
    (p.y - robot.y).atan2(p.x - robot.x)
}

fn new_bout<R: Rng + ?Sized>(profile: BehaviorProfile, rng: &mut R) -> Bout {
    let sign = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    Bout {
        profile,
        gaze_sign: sign(rng),
        body_offset: sign(rng) * uniform(rng, profile.body_offset),
    }
}

/// Ground truth of one session in room coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTruth {
    pub annotations: Vec<EngagementLabel>,
    pub pose: Vec<KeypointFrame>,
    pub robot: Vec<Point3>,
}

/// Simulates the child and robot for a schedule of bouts.
pub fn simulate(
    schedule: &[(EngagementLabel, u32)],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> SessionTruth {
    let fps = cfg.fps;
    let dt = 1.0 / fps;
    let robot_home = cfg.robot();
    let first = cfg.profiles[schedule[0].0.index()];
    let start = draw_waypoint(cfg, &first, None, rng);
    let mut actor = Actor {
        hip: start,
        velocity: Vector3::zeros(),
        body_yaw: 0.0,
        head_yaw: 0.0,
        gaze_mean: 0.0,
        gaze_noise: 0.0,
        waypoint: start,
        reach: [None, None],
        body_sway: 0.0,
        glance: None,
    };
    let to_robot = horizontal(robot_home - actor.hip);
    actor.body_yaw = to_robot.y.atan2(to_robot.x);
    actor.head_yaw = actor.body_yaw;

    let mut annotations = Vec::new();
    let mut pose = Vec::new();
    let mut robot_track = Vec::new();
    let mut frame: u64 = 0;
    let (gaze_rate, shift_rate, body_rate, head_rate) = (0.5, 3.0, 4.0, 8.0);
    let (sway_rate, sway_jitter) = (0.3, 0.12);
    for &(class, secs) in schedule {
        let bout = new_bout(cfg.profiles[class.index()], rng);
        let p = bout.profile;
        actor.waypoint = draw_waypoint(cfg, &p, Some(bearing(&robot_home, &actor.hip)), rng);
        annotations.extend(std::iter::repeat_n(class, secs as usize));
        for _ in 0..(secs as f64 * fps).round() as usize {
            let t = frame as f64 * dt;
            let robot = robot_home
                + Vector3::new(0.02 * (0.7 * t).sin(), 0.015 * (0.45 * t).cos(), 0.01 * (1.1 * t).sin());

            let to_wp = horizontal(actor.waypoint - actor.hip);
            if to_wp.norm() < 0.1 {
                actor.waypoint = draw_waypoint(cfg, &p, Some(bearing(&robot_home, &actor.hip)), rng);
            }
            let desired = if to_wp.norm() > 1e-9 {
                to_wp.normalize() * p.locomotion_speed.min(to_wp.norm() / 0.5)
            } else {
                Vector3::zeros()
            };
            actor.velocity += (desired - actor.velocity) * (3.0 * dt).min(1.0);
            actor.hip += actor.velocity * dt;
            actor.hip.z = HIP_HEIGHT;

            let dir = horizontal(robot - actor.hip);
            let phi = dir.y.atan2(dir.x);
            let noise: f64 = StandardNormal.sample(rng);
            actor.glance = match actor.glance {
                Some((left, off)) if left > dt => Some((left - dt, off)),
                Some(_) => None,
                None => rng.random_bool((p.glance_rate / 60.0 * dt).min(1.0)).then(|| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (uniform(rng, p.glance_duration), sign * p.glance_offset)
                }),
            };
            let bias = actor.glance.map_or(bout.gaze_sign * p.gaze_bias, |g| g.1);
            actor.gaze_noise += -gaze_rate * actor.gaze_noise * dt + p.gaze_jitter * dt.sqrt() * noise;
            actor.gaze_mean += (shift_rate * dt).min(1.0) * wrap_angle(bias - actor.gaze_mean);
            let noise: f64 = StandardNormal.sample(rng);
            actor.body_sway += -sway_rate * actor.body_sway * dt + sway_jitter * dt.sqrt() * noise;
            let body_target = phi + bout.body_offset + actor.body_sway;
            actor.body_yaw += body_rate * wrap_angle(body_target - actor.body_yaw) * dt;
            let turn = wrap_angle(phi + actor.gaze_mean + actor.gaze_noise - actor.body_yaw).clamp(-MAX_NECK_TURN, MAX_NECK_TURN);
            let head_target = actor.body_yaw + turn;
            actor.head_yaw += (head_rate * dt).min(1.0) * wrap_angle(head_target - actor.head_yaw);
            actor.body_yaw = wrap_angle(actor.body_yaw);
            actor.head_yaw = wrap_angle(actor.head_yaw);

            for arm in 0..2 {
                actor.reach[arm] = match actor.reach[arm] {
                    Some(left) if left > dt => Some(left - dt),
                    Some(_) => None,
                    None => {
                        let rate = p.hand_reach_rate / 60.0 / 2.0;
                        rng.random_bool((rate * dt).min(1.0)).then_some(REACH_SECONDS)
                    }
                };
            }

            let joints = skeleton(&actor, &robot);
            pose.push(KeypointFrame::from_positions("truth", frame, t, joints.map(Some)));
            robot_track.push(robot);
            frame += 1;
        }
    }
    SessionTruth { annotations, pose, robot: robot_track }
}

fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn quantize_point(p: Point3) -> Point3 {
    p.map(quantize)
}

/// Marks each valid joint missing with probability `dropout_p`, and moves
/// each surviving joint by a random offset of about `outlier_scale` meters
/// with probability `outlier_p`.
pub fn corrupt(
    stream: &[KeypointFrame],
    dropout_p: f64,
    outlier_p: f64,
    outlier_scale: f64,
    seed: u64,
) -> Result<Vec<KeypointFrame>> {
    if !(0.0..=1.0).contains(&dropout_p) || !(0.0..=1.0).contains(&outlier_p) {
        return Err(Error::Config(format!(
            "probabilities must lie in [0, 1], got dropout {dropout_p}, outlier {outlier_p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stream
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for joint in Joint::ALL {
                let Some(p) = f.position(joint) else { continue };
                if rng.random_bool(dropout_p) {
                    out.set(joint, None);
                } else if rng.random_bool(outlier_p) {
                    let mag = outlier_scale * rng.random_range(0.5..1.5);
                    out.set(joint, Some(quantize_point(p + random_axis(&mut rng) * mag)));
                }
            }
            out
        })
        .collect())
}

/// What the cameras and robot detector report for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub session_id: String,
    pub truth: SessionTruth,
    /// Per-camera frames in camera coordinates.
    pub streams: BTreeMap<String, Vec<KeypointFrame>>,
    pub robot_camera: String,
    pub robot: Vec<RobotObservation>,
}

fn observe(
    truth: &SessionTruth,
    session_id: &str,
    rig: &Rig,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GeneratedSession> {
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let mut streams = BTreeMap::new();
    for cam in &rig.cameras {
        let from_room = cam.to_room.inverse();
        let clean: Vec<KeypointFrame> = truth
            .pose
            .iter()
            .map(|f| {
                let mut g = KeypointFrame::empty(cam.id.clone(), f.frame_idx, f.timestamp);
                for joint in Joint::ALL {
                    let p = from_room.apply(&f.position(joint).expect("truth is complete"));
                    let jitter = Vector3::from_fn(|_, _| noise.sample(rng));
                    g.set(joint, Some(quantize_point(p + jitter)));
                }
                g
            })
            .collect();
        let seed: u64 = rng.random();
        streams.insert(
            cam.id.clone(),
            corrupt(&clean, cfg.dropout_p, cfg.outlier_p, cfg.outlier_scale, seed)?,
        );
    }

    let cam = &rig.cameras[0];
    let from_room = cam.to_room.inverse();
    let k = cam.intrinsics;
    let mut robot = Vec::new();
    for (i, r) in truth.robot.iter().enumerate() {
        if rng.random_bool(cfg.robot_miss_p) {
            continue;
        }
        let mut pc = from_room.apply(r);
        pc += Vector3::from_fn(|_, _| noise.sample(rng));
        let mut depth = pc.z;
        if rng.random_bool(cfg.robot_outlier_p) {
            depth += rng.random_range(2.0..4.0);
        }
        robot.push(RobotObservation::Pixel {
            frame_idx: i as u64,
            u: quantize(k.fx * pc.x / pc.z + k.cx),
            v: quantize(k.fy * pc.y / pc.z + k.cy),
            depth_m: quantize(depth),
        });
    }
    Ok(GeneratedSession {
        session_id: session_id.to_string(),
        truth: truth.clone(),
        streams,
        robot_camera: cam.id.clone(),
        robot,
    })
}

pub fn session_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(0x5E55_1011).wrapping_mul(k as u64 * 2 + 1)
}

/// Simulates and observes one session.
pub fn generate_session(
    session_id: &str,
    schedule: &[(EngagementLabel, u32)],
    rig: &Rig,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<GeneratedSession> {
    if schedule.is_empty() || schedule.iter().any(|&(_, s)| s == 0) {
        return Err(Error::Config("schedule needs bouts of positive duration".into()));
    }
    if rig.cameras.is_empty() {
        return Err(Error::Config("rig has no cameras".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = simulate(schedule, cfg, &mut rng);
    observe(&truth, session_id, rig, cfg, &mut rng)
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub rig: Rig,
    pub sessions: Vec<GeneratedSession>,
}

pub fn session_id(k: usize) -> String {
    format!("s{:02}", k + 1)
}

/// All sessions of `cfg`, generated in parallel.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    let rig = build_rig(cfg)?;
    let sessions = (0..cfg.sessions)
        .into_par_iter()
        .map(|k| {
            let seed = session_seed(cfg.seed, k);
            let schedule = draw_schedule(cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xB0B));
            generate_session(&session_id(k), &schedule, &rig, cfg, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { rig, sessions })
}

/// Writes the dataset in the fusion input formats and returns its manifest.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, data: &SynthDataset) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let calibration = PathBuf::from("calibration.json");
    io::write_calibration(&dir.join(&calibration), &data.rig.calibration)?;
    let mut entries = Vec::new();
    for s in &data.sessions {
        let sid = &s.session_id;
        let entry = SessionEntry {
            session_id: sid.clone(),
            keypoints: PathBuf::from(sid).join("keypoints.jsonl"),
            robot: PathBuf::from(sid).join("robot.jsonl"),
            annotations: PathBuf::from(sid).join("annotations.csv"),
            robot_camera: s.robot_camera.clone(),
        };
        let n = s.truth.pose.len();
        let frames = (0..n).flat_map(|i| s.streams.values().map(move |st| &st[i]));
        io::write_keypoints(&dir.join(&entry.keypoints), frames)?;
        io::write_robot(&dir.join(&entry.robot), &s.robot)?;
        io::write_annotations(&dir.join(&entry.annotations), sid, &s.truth.annotations)?;
        entries.push(entry);
    }
    let manifest = Manifest {
        fps: cfg.fps,
        room_yaw: cfg.room_yaw,
        robot_region: cfg.robot_region(),
        calibration,
        sessions: entries,
    };
    io::write_json(&dir.join(io::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
