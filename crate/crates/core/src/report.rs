//! Run reports: the machine-readable record of one calibration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{EulerAngles, RigidTransform};
use crate::metrics::{compute_errors, CalibrationErrors};
use crate::objective::{evaluate, FramePacket, FrameTerms, ObjectiveConfig};
use crate::search::{Calibration, SearchConfig, Snapshot};

/// Bumped whenever a field changes meaning or disappears.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub euler_deg: EulerAngles,
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn new(t: &RigidTransform, euler: EulerAngles) -> Self {
        let r = t.rotation;
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            euler_deg: euler,
            translation: t.translation.into(),
        }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self::new(t, t.euler())
    }

    pub fn to_transform(&self) -> RigidTransform {
        let r = nalgebra::Matrix3::from_fn(|i, j| self.rotation[i][j]);
        RigidTransform::new(r, nalgebra::Vector3::from(self.translation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageReport {
    /// `S0` (initial guess) to `S3` (final).
    pub name: String,
    pub loss: f64,
    pub pose: PoseRecord,
    /// Present when ground truth was supplied.
    pub errors: Option<CalibrationErrors>,
    /// Objective evaluations spent producing this stage.
    pub evaluations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameReport {
    pub source: String,
    pub initial: FrameTerms,
    pub result: FrameTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub search: SearchConfig,
    pub result: PoseRecord,
    pub ground_truth: Option<PoseRecord>,
    pub stages: Vec<StageReport>,
    pub frames: Vec<FrameReport>,
    /// Best loss after S0, the grid, and every random-search iteration.
    pub loss_trace: Vec<f64>,
}

impl RunReport {
    /// Assembles a report. `sources` names the frames in the same order as
    /// `frames`; errors are filled in when `ground_truth` is given.
    pub fn new(
        sources: &[String],
        frames: &[FramePacket],
        objective: &ObjectiveConfig,
        search: &SearchConfig,
        calibration: &Calibration,
        ground_truth: Option<&RigidTransform>,
    ) -> Result<Self> {
        if sources.len() != frames.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frame names for {} frames",
                sources.len(),
                frames.len()
            )));
        }
        let trace = &calibration.trace;
        let stage = |name: &str, s: &Snapshot, evaluations: usize, seconds: f64| {
            let t = s.transform();
            StageReport {
                name: name.to_string(),
                loss: s.loss,
                pose: PoseRecord::new(&t, s.euler),
                errors: ground_truth.map(|g| compute_errors(g, &t)),
                evaluations,
                seconds,
            }
        };
        let (grid_evals, grid_secs) = trace
            .grid
            .as_ref()
            .map_or((0, 0.0), |g| (g.evaluations, g.seconds));
        let stages = vec![
            stage("S0", &trace.s0, 1, 0.0),
            stage("S1", &trace.s1, grid_evals, grid_secs),
            stage("S2", &trace.s2, trace.coarse.evaluations, trace.coarse.seconds),
            stage("S3", &trace.s3, trace.fine.evaluations, trace.fine.seconds),
        ];
        let initial = evaluate(frames, &trace.s0.transform(), objective)?;
        let result = evaluate(frames, &calibration.transform, objective)?;
        let frames = sources
            .iter()
            .zip(initial.frames.into_iter().zip(result.frames))
            .map(|(s, (initial, result))| FrameReport {
                source: s.clone(),
                initial,
                result,
            })
            .collect();
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: search.seed,
            objective: *objective,
            search: search.clone(),
            result: PoseRecord::new(&calibration.transform, trace.s3.euler),
            ground_truth: ground_truth.map(PoseRecord::from_transform),
            stages,
            frames,
            loss_trace: trace.loss_sequence(),
        })
    }

    pub fn final_errors(&self) -> Option<CalibrationErrors> {
        self.stages.last().and_then(|s| s.errors)
    }

    /// Copy with wall-clock fields zeroed.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.stages {
            s.seconds = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are always serializable")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == REPORT_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::parse(
                    origin,
                    format!("report schema {v}, expected {REPORT_SCHEMA_VERSION}"),
                ))
            }
            None => return Err(Error::parse(origin, "missing schema_version")),
        }
        serde_json::from_value(value).map_err(|e| Error::parse(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
