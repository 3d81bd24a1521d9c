//! Time series of 3D points: gap filling, smoothing and room alignment.

use super::transform::RigidTransform;
use crate::error::{Error, Result};
use crate::skeleton::{Joint, KeypointFrame, Point3, NUM_JOINTS};

pub const DEFAULT_FPS: f64 = 30.0;
pub const DEFAULT_MAX_GAP: usize = 30;
pub const DEFAULT_ALPHA: f64 = 0.3;

/// A fixed number of 3D channels sampled on a common frame clock.
pub trait Track: Clone {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn channels(&self) -> usize;
    fn channel_name(&self, channel: usize) -> String;
    fn sample(&self, channel: usize, i: usize) -> Option<Point3>;
    fn set_sample(&mut self, channel: usize, i: usize, p: Point3);
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub frames: Vec<KeypointFrame>,
    pub fps: f64,
}

impl PoseTrack {
    pub fn new(frames: Vec<KeypointFrame>, fps: f64) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        Ok(PoseTrack { frames, fps })
    }

    pub fn is_complete(&self) -> bool {
        self.frames.iter().all(KeypointFrame::is_complete)
    }
}

impl Track for PoseTrack {
    fn len(&self) -> usize {
        self.frames.len()
    }
    fn channels(&self) -> usize {
        NUM_JOINTS
    }
    fn channel_name(&self, channel: usize) -> String {
        Joint::ALL[channel].name().to_string()
    }
    fn sample(&self, channel: usize, i: usize) -> Option<Point3> {
        self.frames[i].keypoints[channel].get()
    }
    fn set_sample(&mut self, channel: usize, i: usize, p: Point3) {
        let kp = &mut self.frames[i].keypoints[channel];
        kp.position = p;
        kp.valid = true;
    }
}

/// Robot head position per frame, starting at `start_frame`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotTrack {
    pub start_frame: u64,
    pub positions: Vec<Point3>,
    pub valid: Vec<bool>,
}

impl RobotTrack {
    pub fn new(start_frame: u64, samples: Vec<Option<Point3>>) -> Self {
        let valid = samples.iter().map(Option::is_some).collect();
        let positions = samples.into_iter().map(Option::unwrap_or_default).collect();
        RobotTrack {
            start_frame,
            positions,
            valid,
        }
    }

    pub fn get(&self, i: usize) -> Option<Point3> {
        self.valid[i].then_some(self.positions[i])
    }
}

impl Track for RobotTrack {
    fn len(&self) -> usize {
        self.positions.len()
    }
    fn channels(&self) -> usize {
        1
    }
    fn channel_name(&self, _channel: usize) -> String {
        "robot".to_string()
    }
    fn sample(&self, _channel: usize, i: usize) -> Option<Point3> {
        self.get(i)
    }
    fn set_sample(&mut self, _channel: usize, i: usize, p: Point3) {
        self.positions[i] = p;
        self.valid[i] = true;
    }
}

/// Fills one channel in place. Returns `false` when the channel has no valid sample.
fn fill_channel(samples: &mut [Option<Point3>], max_gap: usize) -> bool {
    let known: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].is_some()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return samples.is_empty();
    };
    let head = samples[first];
    samples[..first].iter_mut().for_each(|s| *s = head);
    let tail = samples[last];
    samples[last + 1..].iter_mut().for_each(|s| *s = tail);

    for w in known.windows(2) {
        let (a, b) = (w[0], w[1]);
        let gap = b - a - 1;
        if gap == 0 {
            continue;
        }
        let (pa, pb) = (samples[a].unwrap(), samples[b].unwrap());
        for i in a + 1..b {
            samples[i] = Some(if gap <= max_gap {
                let t = (i - a) as f64 / (b - a) as f64;
                pa + (pb - pa) * t
            } else if i - a <= b - i {
                pa
            } else {
                pb
            });
        }
    }
    true
}

/// Fills every missing sample.
///
/// Interior gaps of at most `max_gap` samples are linearly interpolated;
/// longer gaps take the value of the nearest valid sample (earlier side on
/// ties). Leading and trailing gaps hold the first and last valid value.
pub fn interpolate_gaps<T: Track>(track: &T, max_gap: usize) -> Result<T> {
    let mut out = track.clone();
    let n = track.len();
    for ch in 0..track.channels() {
        let mut samples: Vec<Option<Point3>> = (0..n).map(|i| track.sample(ch, i)).collect();
        if !fill_channel(&mut samples, max_gap) {
            return Err(Error::JointNeverObserved(track.channel_name(ch)));
        }
        for (i, s) in samples.into_iter().enumerate() {
            out.set_sample(ch, i, s.expect("filled"));
        }
    }
    Ok(out)
}

/// First-order exponential moving average: `s0 = x0`, `st = a*xt + (1-a)*s(t-1)`.
pub fn lowpass_smooth<T: Track>(track: &T, alpha: f64) -> Result<T> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "low-pass alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let mut out = track.clone();
    for ch in 0..track.channels() {
        let mut state: Option<Point3> = None;
        for i in 0..track.len() {
            let x = track.sample(ch, i).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{} missing at sample {i}; fill gaps before smoothing",
                    track.channel_name(ch)
                ))
            })?;
            let s = match state {
                None => x,
                Some(prev) => x * alpha + prev * (1.0 - alpha),
            };
            out.set_sample(ch, i, s);
            state = Some(s);
        }
    }
    Ok(out)
}

/// Rotates every valid sample about the vertical (z) axis by `yaw` radians.
pub fn align_to_room<T: Track>(track: &T, yaw: f64) -> T {
    let rot = RigidTransform::yaw(yaw);
    let mut out = track.clone();
    for ch in 0..track.channels() {
        for i in 0..track.len() {
            if let Some(p) = track.sample(ch, i) {
                out.set_sample(ch, i, rot.apply(&p));
            }
        }
    }
    out
}
