//! JSON / JSONL schemas for CLI interchange.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::conformal::{bound_for_detection, CalibrationRecord, KeypointBound, NormType};
use crate::constraints::ObservationSet;
use crate::error::{Result, SlueError};
use crate::geometry::{CameraIntrinsics, Pose, Rotation};
use crate::slue::{Form, SlueResult, SolveStatus};

#[derive(Serialize, Deserialize)]
struct RecordJson {
    keypoint_id: usize,
    detected: [f64; 2],
    confidence: f64,
    ground_truth: [f64; 2],
}

/// One JSON object per line: {keypoint_id, detected, confidence, ground_truth}.
pub fn read_records_jsonl(r: impl BufRead) -> Result<Vec<CalibrationRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SlueError::input(format!("read failure: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordJson = serde_json::from_str(&line)
            .map_err(|e| SlueError::input(format!("line {}: {e}", lineno + 1)))?;
        out.push(CalibrationRecord {
            keypoint_id: rec.keypoint_id,
            detected: Vector2::new(rec.detected[0], rec.detected[1]),
            confidence: rec.confidence,
            ground_truth: Vector2::new(rec.ground_truth[0], rec.ground_truth[1]),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
pub struct ObservationJson {
    pub intrinsics: [[f64; 3]; 3],
    pub keypoints_3d: Vec<[f64; 3]>,
    pub detections: Vec<[f64; 2]>,
    pub confidences: Vec<f64>,
    pub norm: NormType,
    pub alpha: f64,
    /// Explicit per-keypoint pixel radii; when absent, radii come from
    /// calibrated bounds and the confidences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
}

impl ObservationJson {
    /// Resolves radii and drops keypoints with infinite bounds (with a
    /// warning) rather than failing the frame.
    pub fn to_observation_set(&self, bounds: Option<&[KeypointBound]>) -> Result<ObservationSet> {
        let k = Matrix3::from_fn(|i, j| self.intrinsics[i][j]);
        let intrinsics = CameraIntrinsics::new(k)?;
        let n = self.keypoints_3d.len();
        if self.detections.len() != n || self.confidences.len() != n {
            return Err(SlueError::input(
                "keypoints_3d, detections, and confidences must have equal length",
            ));
        }
        let radii: Vec<f64> = match (&self.radii, bounds) {
            (Some(r), _) => {
                if r.len() != n {
                    return Err(SlueError::input("radii length mismatch"));
                }
                r.clone()
            }
            (None, Some(bounds)) => (0..n)
                .map(|i| {
                    let b = bounds
                        .iter()
                        .find(|b| b.keypoint_id == i)
                        .ok_or_else(|| SlueError::input(format!("no bound for keypoint {i}")))?;
                    bound_for_detection(b, self.confidences[i])
                })
                .collect::<Result<_>>()?,
            (None, None) => {
                return Err(SlueError::input(
                    "observations carry no radii and no bounds file was given",
                ))
            }
        };
        let mut pts = Vec::new();
        let mut dets = Vec::new();
        let mut rs = Vec::new();
        for i in 0..n {
            if !radii[i].is_finite() {
                eprintln!("warning: keypoint {i} has an infinite radius, dropping it");
                continue;
            }
            pts.push(Vector3::from_column_slice(&self.keypoints_3d[i]));
            dets.push(Vector2::new(self.detections[i][0], self.detections[i][1]));
            rs.push(radii[i]);
        }
        ObservationSet::new(pts, dets, rs, intrinsics, self.norm)
    }
}

#[derive(Serialize, Deserialize)]
pub struct PoseJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl PoseJson {
    pub fn to_pose(&self) -> Result<Pose> {
        let r = Rotation::from_matrix(Matrix3::from_fn(|i, j| self.rotation[i][j]))?;
        Ok(Pose::new(r, Vector3::from_column_slice(&self.translation)))
    }

    pub fn from_pose(p: &Pose) -> PoseJson {
        let m = p.rotation.matrix();
        PoseJson {
            rotation: [[m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]]],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

/// Serialized ellipsoid bound; `h` is row-major.
#[derive(Serialize, Deserialize)]
pub struct ResultJson {
    pub form: Form,
    pub order: usize,
    pub status: SolveStatus,
    pub solve_time_s: f64,
    pub center: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub logdet: f64,
    pub certificate_residual: f64,
    pub target: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_estimate: Option<PoseJson>,
}

impl ResultJson {
    pub fn from_result(r: &SlueResult, pose: Option<&Pose>) -> ResultJson {
        let d = r.h.nrows();
        ResultJson {
            form: r.form,
            order: r.order,
            status: r.status,
            solve_time_s: r.solve_time_s,
            center: r.center.iter().copied().collect(),
            h: (0..d)
                .map(|i| (0..d).map(|j| r.h[(i, j)]).collect())
                .collect(),
            logdet: r.logdet,
            certificate_residual: r.certificate_residual,
            target: r.target.clone(),
            pose_estimate: pose.map(PoseJson::from_pose),
        }
    }

    pub fn to_result(&self) -> Result<SlueResult> {
        let d = self.h.len();
        if self.center.len() != d || self.h.iter().any(|row| row.len() != d) {
            return Err(SlueError::input("h must be square and match center"));
        }
        Ok(SlueResult {
            form: self.form,
            order: self.order,
            status: self.status,
            solve_time_s: self.solve_time_s,
            center: DVector::from_vec(self.center.clone()),
            h: DMatrix::from_fn(d, d, |i, j| self.h[i][j]),
            logdet: self.logdet,
            certificate_residual: self.certificate_residual,
            target: self.target.clone(),
        })
    }
}

/// 2D toy problem: 3×3 quadratic forms over x = [1, z1, z2].
#[derive(Serialize, Deserialize)]
pub struct Toy2dJson {
    pub inequalities: Vec<[[f64; 3]; 3]>,
    pub center: [f64; 2],
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_grid_range")]
    pub grid_range: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

fn default_max_order() -> usize {
    3
}
fn default_grid_range() -> f64 {
    2.0
}
fn default_grid_n() -> usize {
    61
}

pub fn write_json(w: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)
        .map_err(|e| SlueError::input(format!("serialization failure: {e}")))?;
    writeln!(w).map_err(|e| SlueError::input(format!("write failure: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_jsonl_round_trip() {
        let text = concat!(
            r#"{"keypoint_id":0,"detected":[1.0,2.0],"confidence":0.9,"ground_truth":[1.5,2.5]}"#,
            "\n\n",
            r#"{"keypoint_id":1,"detected":[3.0,4.0],"confidence":1.0,"ground_truth":[3.0,4.0]}"#,
            "\n",
        );
        let recs = read_records_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].keypoint_id, 0);
        assert_eq!(recs[1].detected, Vector2::new(3.0, 4.0));
        assert!(read_records_jsonl("not json\n".as_bytes()).is_err());
    }

    #[test]
    fn observation_json_resolves_radii_from_bounds() {
        let obs = ObservationJson {
            intrinsics: [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]],
            keypoints_3d: vec![[0.1, 0.0, 0.0], [0.0, 0.1, 0.0]],
            detections: vec![[310.0, 240.0], [330.0, 250.0]],
            confidences: vec![0.5, 1.0],
            norm: NormType::Infinity,
            alpha: 0.1,
            radii: None,
        };
        assert!(obs.to_observation_set(None).is_err());
        let bounds: Vec<KeypointBound> = (0..2)
            .map(|i| KeypointBound {
                keypoint_id: i,
                quantile: 2.0,
                infinite: false,
                norm: NormType::Infinity,
                alpha: 0.1,
            })
            .collect();
        let set = obs.to_observation_set(Some(&bounds)).unwrap();
        assert_eq!(set.radii, vec![4.0, 2.0]);
    }

    #[test]
    fn infinite_bounds_drop_the_keypoint() {
        let obs = ObservationJson {
            intrinsics: [[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]],
            keypoints_3d: vec![[0.1, 0.0, 0.0], [0.0, 0.1, 0.0]],
            detections: vec![[310.0, 240.0], [330.0, 250.0]],
            confidences: vec![1.0, 1.0],
            norm: NormType::Infinity,
            alpha: 0.1,
            radii: Some(vec![f64::INFINITY, 2.0]),
        };
        let set = obs.to_observation_set(None).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.radii, vec![2.0]);
    }

    #[test]
    fn result_json_round_trip() {
        let r = SlueResult {
            form: Form::Quat,
            order: 2,
            status: SolveStatus::Ok,
            solve_time_s: 0.5,
            center: DVector::from_vec((0..7).map(|i| i as f64).collect()),
            h: DMatrix::from_fn(7, 7, |i, j| (i * 7 + j) as f64),
            logdet: 1.25,
            certificate_residual: 1e-9,
            target: (0..7).collect(),
        };
        let json = serde_json::to_string(&ResultJson::from_result(&r, None)).unwrap();
        let back: ResultJson = serde_json::from_str(&json).unwrap();
        let r2 = back.to_result().unwrap();
        assert_eq!(r2.h, r.h);
        assert_eq!(r2.center, r.center);
        assert_eq!(r2.form, r.form);
        assert_eq!(r2.status, r.status);
    }
}
