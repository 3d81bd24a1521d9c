use serde::{Deserialize, Serialize};

use super::track::RobotTrack;
use crate::error::{Error, Result};
use crate::skeleton::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "focal lengths must be positive: fx={}, fy={}",
                self.fx, self.fy
            )))
        }
    }

    /// Pinhole projection of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl RegionBox {
    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|i| self.min[i] < self.max[i]) {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate region {self:?}")))
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Inverse pinhole projection of a pixel at `depth` meters, in the camera frame.
pub fn backproject_bbox(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Point3::new(
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Marks robot positions outside `region` as missing.
pub fn reject_out_of_range(track: &RobotTrack, region: &RegionBox) -> RobotTrack {
    let mut out = track.clone();
    for (p, valid) in out.positions.iter().zip(out.valid.iter_mut()) {
        if *valid && !region.contains(p) {
            *valid = false;
        }
    }
    out
}
