use crate::skeleton::{Joint, KeypointFrame, Point3};

pub const DEFAULT_GATE_RADIUS: f64 = 0.3;

pub const FUSED_CAMERA_ID: &str = "fused";

/// Fuses same-instant detections from several cameras (already in the common frame).
///
/// Per joint, candidates are the valid detections across `frames`. When `prev`
/// holds the joint, only candidates within `gate_radius` of it survive. The
/// output is the mean of the survivors, or missing when none survive.
pub fn fuse_views(
    frames: &[KeypointFrame],
    prev: Option<&KeypointFrame>,
    gate_radius: f64,
) -> KeypointFrame {
    let (frame_idx, timestamp) = frames
        .first()
        .map(|f| (f.frame_idx, f.timestamp))
        .or_else(|| prev.map(|p| (p.frame_idx + 1, p.timestamp)))
        .unwrap_or((0, 0.0));
    let mut out = KeypointFrame::empty(FUSED_CAMERA_ID, frame_idx, timestamp);
    let gate_sq = gate_radius * gate_radius;

    for joint in Joint::ALL {
        let anchor = prev.and_then(|p| p.position(joint));
        let mut sum = Point3::zeros();
        let mut n = 0usize;
        for p in frames.iter().filter_map(|f| f.position(joint)) {
            if anchor.is_none_or(|a| (p - a).norm_squared() <= gate_sq) {
                sum += p;
                n += 1;
            }
        }
        if n > 0 {
            out.set(joint, Some(sum / n as f64));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(p: Point3) -> KeypointFrame {
        let mut f = KeypointFrame::empty("c", 3, 0.1);
        f.set(Joint::Neck, Some(p));
        f
    }

    #[test]
    fn mean_of_gated_survivors() {
        let views = [view(Point3::new(0.0, 0.0, 1.0)), view(Point3::new(0.02, 0.0, 1.0))];
        let prev = view(Point3::new(0.01, 0.0, 1.0));
        let out = fuse_views(&views, Some(&prev), 0.3);
        let p = out.position(Joint::Neck).unwrap();
        assert!((p - Point3::new(0.01, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(out.frame_idx, 3);
        assert_eq!(out.camera_id, FUSED_CAMERA_ID);
    }

    #[test]
    fn all_candidates_gated_out_marks_missing() {
        let views = [view(Point3::new(2.0, 0.0, 1.0))];
        let prev = view(Point3::new(0.0, 0.0, 1.0));
        let out = fuse_views(&views, Some(&prev), 0.3);
        assert!(out.position(Joint::Neck).is_none());
    }

    #[test]
    fn first_frame_averages_everything() {
        let views = [view(Point3::new(0.0, 0.0, 1.0)), view(Point3::new(0.1, 0.0, 1.0))];
        let out = fuse_views(&views, None, 0.3);
        let p = out.position(Joint::Neck).unwrap();
        assert!((p - Point3::new(0.05, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn prev_missing_joint_does_not_gate() {
        let views = [view(Point3::new(2.0, 0.0, 1.0))];
        let prev = KeypointFrame::empty("fused", 2, 0.0);
        let out = fuse_views(&views, Some(&prev), 0.3);
        assert_eq!(out.position(Joint::Neck), Some(Point3::new(2.0, 0.0, 1.0)));
    }

    #[test]
    fn outlier_view_is_rejected() {
        let views = [
            view(Point3::new(0.0, 0.0, 1.0)),
            view(Point3::new(0.02, 0.0, 1.0)),
            view(Point3::new(1.5, 0.3, 0.2)),
        ];
        let prev = view(Point3::new(0.01, 0.0, 1.0));
        let p = fuse_views(&views, Some(&prev), 0.3).position(Joint::Neck).unwrap();
        assert!((p - Point3::new(0.01, 0.0, 1.0)).norm() < 1e-12);
    }
}
