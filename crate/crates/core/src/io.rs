//! On-disk formats: dataset manifest, calibration, keypoint and robot
//! JSON-lines, annotation CSV, segment features, fused tracks and reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::EngagementLabel;
use crate::error::{Error, Result};
use crate::eval::{AblationRow, CvReport, FoldOutcome};
use crate::features::SegmentFeatures;
use crate::fusion::{CameraCalibration, CameraIntrinsics, RegionBox, RigidTransform, RobotObservation};
use crate::model::EpochLog;
use crate::skeleton::{KeypointFrame, Point3, NUM_JOINTS};

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    create_parent(path)?;
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Reads one record per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::InvalidInput(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionEntry {
    pub session_id: String,
    pub keypoints: PathBuf,
    pub robot: PathBuf,
    pub annotations: PathBuf,
    pub robot_camera: String,
}

/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fps: f64,
    pub room_yaw: f64,
    pub robot_region: RegionBox,
    pub calibration: PathBuf,
    pub sessions: Vec<SessionEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(data_dir: &Path) -> Result<Self> {
        let path = data_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::InvalidInput(format!(
                "{} not found; is {} a dataset directory?",
                path.display(),
                data_dir.display()
            )));
        }
        let m: Manifest = read_json(&path)?;
        if m.sessions.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no sessions listed", path.display())));
        }
        m.robot_region.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationEntry {
    pub intrinsics: CameraIntrinsics,
    /// Camera-to-common `[R | t]`, row-major.
    pub init_transform: Vec<f64>,
}

/// Rotations off by less than this (max entry of `R^T R - I`) are snapped to
/// the nearest rotation; larger errors are rejected.
const ORTHO_TOLERANCE: f64 = 1e-3;

fn nearest_rigid(values: &[f64]) -> Result<RigidTransform> {
    if let Ok(t) = RigidTransform::from_row_major_3x4(values) {
        return Ok(t);
    }
    if values.len() != 12 {
        return Err(Error::InvalidInput(format!("expected 12 transform values, got {}", values.len())));
    }
    let r = Matrix3::from_fn(|i, j| values[4 * i + j]);
    let t = Vector3::new(values[3], values[7], values[11]);
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHO_TOLERANCE || r.determinant() <= 0.0 {
        return Err(Error::InvalidInput(format!("rotation is not orthonormal (error {err:.2e})")));
    }
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    RigidTransform::new(u * vt, t)
}

impl CalibrationEntry {
    pub fn from_calibration(c: &CameraCalibration) -> Self {
        CalibrationEntry {
            intrinsics: c.intrinsics,
            init_transform: c.init_transform.to_row_major_3x4().to_vec(),
        }
    }

    pub fn to_calibration(&self) -> Result<CameraCalibration> {
        self.intrinsics.validate()?;
        Ok(CameraCalibration {
            intrinsics: self.intrinsics,
            init_transform: nearest_rigid(&self.init_transform)?,
        })
    }
}

pub fn read_calibration(path: &Path) -> Result<BTreeMap<String, CameraCalibration>> {
    let raw: BTreeMap<String, CalibrationEntry> = read_json(path)?;
    raw.into_iter()
        .map(|(id, e)| {
            let c = e
                .to_calibration()
                .map_err(|err| Error::InvalidInput(format!("{}: camera {id}: {err}", path.display())))?;
            Ok((id, c))
        })
        .collect()
}

pub fn write_calibration(path: &Path, calibration: &BTreeMap<String, CameraCalibration>) -> Result<()> {
    let raw: BTreeMap<&String, CalibrationEntry> = calibration
        .iter()
        .map(|(id, c)| (id, CalibrationEntry::from_calibration(c)))
        .collect();
    write_json(path, &raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub camera_id: String,
    pub frame_idx: u64,
    pub timestamp_s: f64,
    pub keypoints: Vec<Option<[f64; 3]>>,
}

impl KeypointRecord {
    pub fn from_frame(f: &KeypointFrame) -> Self {
        KeypointRecord {
            camera_id: f.camera_id.clone(),
            frame_idx: f.frame_idx,
            timestamp_s: f.timestamp,
            keypoints: f.keypoints.iter().map(|k| k.get().map(|p| [p.x, p.y, p.z])).collect(),
        }
    }

    pub fn to_frame(&self) -> Result<KeypointFrame> {
        if self.keypoints.len() != NUM_JOINTS {
            return Err(Error::InvalidInput(format!(
                "camera {} frame {}: {} keypoints, expected {NUM_JOINTS}",
                self.camera_id,
                self.frame_idx,
                self.keypoints.len()
            )));
        }
        let positions = std::array::from_fn(|i| self.keypoints[i].map(|[x, y, z]| Point3::new(x, y, z)));
        Ok(KeypointFrame::from_positions(
            self.camera_id.clone(),
            self.frame_idx,
            self.timestamp_s,
            positions,
        ))
    }
}

/// Per-camera streams, each sorted by frame index.
pub fn read_keypoints(path: &Path) -> Result<BTreeMap<String, Vec<KeypointFrame>>> {
    let mut streams: BTreeMap<String, Vec<KeypointFrame>> = BTreeMap::new();
    for (i, rec) in read_jsonl::<KeypointRecord>(path)?.into_iter().enumerate() {
        let frame = rec.to_frame().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        streams.entry(frame.camera_id.clone()).or_default().push(frame);
    }
    for frames in streams.values_mut() {
        frames.sort_by_key(|f| f.frame_idx);
    }
    Ok(streams)
}

pub fn write_keypoints<'a>(path: &Path, frames: impl IntoIterator<Item = &'a KeypointFrame>) -> Result<()> {
    write_jsonl(path, frames.into_iter().map(KeypointRecord::from_frame))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum RobotRecord {
    Pixel { frame_idx: u64, u: f64, v: f64, depth_m: f64 },
    Point { frame_idx: u64, x: f64, y: f64, z: f64 },
}

impl From<RobotRecord> for RobotObservation {
    fn from(r: RobotRecord) -> Self {
        match r {
            RobotRecord::Pixel { frame_idx, u, v, depth_m } => RobotObservation::Pixel { frame_idx, u, v, depth_m },
            RobotRecord::Point { frame_idx, x, y, z } => RobotObservation::Point {
                frame_idx,
                position: Point3::new(x, y, z),
            },
        }
    }
}

impl From<RobotObservation> for RobotRecord {
    fn from(r: RobotObservation) -> Self {
        match r {
            RobotObservation::Pixel { frame_idx, u, v, depth_m } => RobotRecord::Pixel { frame_idx, u, v, depth_m },
            RobotObservation::Point { frame_idx, position } => RobotRecord::Point {
                frame_idx,
                x: position.x,
                y: position.y,
                z: position.z,
            },
        }
    }
}

pub fn read_robot(path: &Path) -> Result<Vec<RobotObservation>> {
    Ok(read_jsonl::<RobotRecord>(path)?.into_iter().map(Into::into).collect())
}

pub fn write_robot(path: &Path, obs: &[RobotObservation]) -> Result<()> {
    write_jsonl(path, obs.iter().map(|&o| RobotRecord::from(o)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AnnotationRow<'a> {
    session_id: &'a str,
    second_idx: usize,
    class: u8,
}

#[derive(Debug, Deserialize)]
struct AnnotationRowOwned {
    session_id: String,
    second_idx: usize,
    class: u8,
}

/// Per-second labels of `session_id`, which must cover seconds `0..n` once each.
pub fn read_annotations(path: &Path, session_id: &str) -> Result<Vec<EngagementLabel>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut by_second = BTreeMap::new();
    for (i, row) in rdr.deserialize::<AnnotationRowOwned>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if row.session_id != session_id {
            continue;
        }
        let label = EngagementLabel::from_id(row.class).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if by_second.insert(row.second_idx, label).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("second {} annotated twice", row.second_idx),
            });
        }
    }
    if by_second.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no annotations for session {session_id}",
            path.display()
        )));
    }
    if let Some((k, _)) = by_second.keys().enumerate().find(|(k, s)| *k != **s) {
        return Err(Error::InvalidInput(format!(
            "{}: session {session_id} is missing second {k}",
            path.display()
        )));
    }
    Ok(by_second.into_values().collect())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_annotations(path: &Path, session_id: &str, labels: &[EngagementLabel]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for (second_idx, l) in labels.iter().enumerate() {
        w.serialize(AnnotationRow { session_id, second_idx, class: l.id() })
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub session_id: String,
    pub segment_idx: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

impl FeatureRecord {
    pub fn new(session_id: &str, seg: &SegmentFeatures, label: Option<EngagementLabel>) -> Self {
        FeatureRecord {
            session_id: session_id.to_string(),
            segment_idx: seg.segment_idx,
            values: seg.values.clone(),
            label: label.map(EngagementLabel::id),
        }
    }
}

/// One fused frame: 18 room-frame keypoints and the robot position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedRecord {
    pub frame_idx: u64,
    pub timestamp_s: f64,
    pub keypoints: Vec<Option<[f64; 3]>>,
    pub robot: Option<[f64; 3]>,
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for e in log {
        w.serialize(e).map_err(|err| csv_error(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn write_rows(path: &Path, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn metric_cells(m: Option<(f64, f64, f64)>) -> [String; 3] {
    m.map_or_else(Default::default, |(f, a, b)| [pct(f), pct(a), pct(b)])
}

/// Per-fold rows of every method, each followed by its aggregate rows.
pub fn write_report_csv(path: &Path, reports: &[CvReport]) -> Result<()> {
    let header = ["Method", "Fold", "Status", "Mean F-Score", "Accuracy", "Balanced Accuracy"];
    let mut rows = vec![header.map(String::from).to_vec()];
    for report in reports {
        let mut push = |fold: &str, status: &str, m: Option<(f64, f64, f64)>| {
            let mut row = vec![report.method.clone(), fold.to_string(), status.to_string()];
            row.extend(metric_cells(m));
            rows.push(row);
        };
        for fold in &report.folds {
            match fold {
                FoldOutcome::Completed { report: r, .. } => push(
                    &r.fold_id,
                    "ok",
                    Some((r.mean_f_score, r.accuracy, r.balanced_accuracy)),
                ),
                FoldOutcome::Aborted { fold_id, .. } => push(fold_id, "aborted", None),
            }
        }
        for (name, agg) in [("mean", report.equal_weight), ("size_weighted", report.size_weighted)] {
            push(name, "aggregate", agg.map(|a| (a.mean_f_score, a.accuracy, a.balanced_accuracy)));
        }
        push(
            "pooled",
            "aggregate",
            report.pooled.as_ref().map(|p| (p.mean_f_score, p.accuracy, p.balanced_accuracy)),
        );
    }
    write_rows(path, rows)
}

/// Confusion counts per method and fold, plus the pooled matrix; rows are
/// true classes, columns predicted classes.
pub fn write_confusion_csv(path: &Path, reports: &[CvReport]) -> Result<()> {
    let mut rows = vec![["Method", "Fold", "True", "Pred 1", "Pred 2", "Pred 3"].map(String::from).to_vec()];
    for report in reports {
        let completed = report.folds.iter().filter_map(|f| match f {
            FoldOutcome::Completed { report, .. } => Some(report),
            FoldOutcome::Aborted { .. } => None,
        });
        for r in completed.chain(report.pooled.as_ref()) {
            for (t, counts) in r.confusion.counts.iter().enumerate() {
                let mut row = vec![report.method.clone(), r.fold_id.clone(), (t + 1).to_string()];
                row.extend(counts.iter().map(u64::to_string));
                rows.push(row);
            }
        }
    }
    write_rows(path, rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let header = ["Group", "Variant", "Completed Folds", "Mean F-Score", "Accuracy", "Balanced Accuracy"];
    let mut out = vec![header.map(String::from).to_vec()];
    for r in rows {
        let done = r.report.folds.len() - r.report.aborted();
        let mut row = vec![r.group.clone(), r.variant.clone(), format!("{done}/{}", r.report.folds.len())];
        row.extend(metric_cells(
            r.report.equal_weight.map(|a| (a.mean_f_score, a.accuracy, a.balanced_accuracy)),
        ));
        out.push(row);
    }
    write_rows(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Joint;

    #[test]
    fn keypoint_record_round_trip() {
        let mut f = KeypointFrame::empty("cam1", 7, 0.25);
        f.set(Joint::Nose, Some(Point3::new(0.1, -0.2, 1.5)));
        let line = serde_json::to_string(&KeypointRecord::from_frame(&f)).unwrap();
        assert!(line.starts_with(r#"{"camera_id":"cam1","frame_idx":7,"timestamp_s":0.25,"keypoints":[[0.1,-0.2,1.5],null"#));
        let back: KeypointRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.to_frame().unwrap(), f);
    }

    #[test]
    fn robot_record_forms() {
        let p: RobotRecord = serde_json::from_str(r#"{"frame_idx":3,"u":320,"v":240,"depth_m":2.0}"#).unwrap();
        assert!(matches!(RobotObservation::from(p), RobotObservation::Pixel { frame_idx: 3, .. }));
        let q: RobotRecord = serde_json::from_str(r#"{"frame_idx":4,"x":1,"y":2,"z":0.5}"#).unwrap();
        assert!(matches!(RobotObservation::from(q), RobotObservation::Point { frame_idx: 4, .. }));
    }

    #[test]
    fn annotations_round_trip_and_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let labels = vec![EngagementLabel::Attentive, EngagementLabel::Cooperating];
        write_annotations(&path, "s1", &labels).unwrap();
        assert_eq!(read_annotations(&path, "s1").unwrap(), labels);
        assert!(read_annotations(&path, "s2").is_err());
        std::fs::write(&path, "session_id,second_idx,class\ns1,0,2\ns1,2,1\n").unwrap();
        assert!(read_annotations(&path, "s1").is_err());
        std::fs::write(&path, "session_id,second_idx,class\ns1,0,4\n").unwrap();
        assert!(matches!(read_annotations(&path, "s1"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn calibration_snaps_rounded_rotation() {
        let t = RigidTransform::yaw(0.3);
        let rounded: Vec<f64> = t
            .to_row_major_3x4()
            .iter()
            .map(|v| (v * 1e5).round() / 1e5)
            .collect();
        let got = nearest_rigid(&rounded).unwrap();
        assert!((got.rotation - t.rotation).abs().max() < 1e-4);
        let mut bad = rounded.clone();
        bad[0] = 2.0;
        assert!(nearest_rigid(&bad).is_err());
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.jsonl");
        std::fs::write(&path, "{\"frame_idx\":1,\"u\":1,\"v\":1,\"depth_m\":1}\n\nnot json\n").unwrap();
        match read_jsonl::<RobotRecord>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
