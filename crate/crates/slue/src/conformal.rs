//! Split conformal calibration of per-keypoint pixel error radii.
//!
//! Calibration records pair a detection with its ground-truth projection.
//! The conformity score is the confidence-weighted p-norm of the pixel
//! error; the calibrated radius is the adjusted `(1-α)(1+1/n)` quantile of
//! the scores, divided by the test-time confidence.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlueError};

/// Which p-norm bounds the keypoint error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormType {
    Two,
    Infinity,
}

/// One labeled calibration example for a single keypoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub keypoint_id: usize,
    pub detected: Vector2<f64>,
    pub confidence: f64,
    pub ground_truth: Vector2<f64>,
}

/// Calibrated quantile for one keypoint. `quantile` is the raw score
/// quantile r̃; the pixel radius for a detection with confidence `c` is
/// `r̃ / c`. `infinite` flags the case `(1-α)(1+1/n) > 1` where no finite
/// bound is available.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KeypointBound {
    pub keypoint_id: usize,
    pub quantile: f64,
    pub infinite: bool,
    pub norm: NormType,
    pub alpha: f64,
}

/// Confidence-weighted conformity score `c · ‖y - z‖_p`.
pub fn conformity_score(record: &CalibrationRecord, norm: NormType) -> Result<f64> {
    if record.confidence <= 0.0 {
        return Err(SlueError::input(format!(
            "confidence {} must be positive",
            record.confidence
        )));
    }
    let e = record.detected - record.ground_truth;
    let dist = match norm {
        NormType::Two => e.norm(),
        NormType::Infinity => e.x.abs().max(e.y.abs()),
    };
    Ok(record.confidence * dist)
}

/// Split-conformal calibration for one keypoint id.
///
/// The quantile is the `⌈(1-α)(1+1/n)·n⌉`-th smallest score (1-indexed);
/// when the adjusted level exceeds 1 the bound is flagged infinite.
pub fn calibrate(
    records: &[CalibrationRecord],
    alpha: f64,
    norm: NormType,
) -> Result<KeypointBound> {
    if records.is_empty() {
        return Err(SlueError::input("calibration needs at least one record"));
    }
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(SlueError::input(format!("alpha {alpha} must be in (0,1)")));
    }
    let keypoint_id = records[0].keypoint_id;
    if records.iter().any(|r| r.keypoint_id != keypoint_id) {
        return Err(SlueError::input("records mix keypoint ids"));
    }
    let mut scores: Vec<f64> = records
        .iter()
        .map(|r| conformity_score(r, norm))
        .collect::<Result<_>>()?;
    scores.sort_by(|a, b| a.total_cmp(b));

    let n = scores.len() as f64;
    let level = (1.0 - alpha) * (1.0 + 1.0 / n);
    if level > 1.0 {
        return Ok(KeypointBound {
            keypoint_id,
            quantile: f64::INFINITY,
            infinite: true,
            norm,
            alpha,
        });
    }
    let rank = (level * n).ceil() as usize; // 1-indexed
    let quantile = scores[rank.max(1) - 1];
    Ok(KeypointBound {
        keypoint_id,
        quantile,
        infinite: false,
        norm,
        alpha,
    })
}

/// Pixel radius for a test detection: `r̃ / c`. Infinite bounds propagate.
pub fn bound_for_detection(bound: &KeypointBound, confidence: f64) -> Result<f64> {
    if confidence <= 0.0 {
        return Err(SlueError::input(format!(
            "confidence {confidence} must be positive"
        )));
    }
    if bound.infinite {
        return Ok(f64::INFINITY);
    }
    Ok(bound.quantile / confidence)
}

/// Groups records by keypoint id and calibrates each group.
pub fn calibrate_all(
    records: &[CalibrationRecord],
    alpha: f64,
    norm: NormType,
) -> Result<Vec<KeypointBound>> {
    let mut ids: Vec<usize> = records.iter().map(|r| r.keypoint_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.iter()
        .map(|&id| {
            let group: Vec<CalibrationRecord> = records
                .iter()
                .filter(|r| r.keypoint_id == id)
                .cloned()
                .collect();
            calibrate(&group, alpha, norm)
        })
        .collect()
}
