//! Per-scene records and aggregate reports.
//!
//! Aggregates go to CSV (one `metric,value` row each); per-scene records go
//! to newline-delimited JSON. Both serializations are byte-deterministic
//! for a given config and seed.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use kdfield::field::FieldError;
use kdfield::geom::GeomError;
use kdfield::metrics;
use kdfield::synth::SynthError;
use kdfield::voting::VotingError;

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Voting(#[from] VotingError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("metrics: {0}")]
    Metrics(#[from] metrics::MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sweep needs at least one value")]
    EmptySweep,
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Votes of one scheme on one mask variant, over all keypoints of a scene.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellRecord {
    /// Per-keypoint distance between the voted and true 2D location;
    /// `None` when that vote failed outright.
    pub keypoint_errors: Vec<Option<f64>>,
    /// Mean keypoint error; `None` when any vote failed.
    pub mean_error: Option<f64>,
    /// Consensus score of each winning hypothesis.
    pub scores: Vec<usize>,
    /// Votes that returned an error (degenerate region etc.).
    pub failures: usize,
    /// Direction votes flagged unreliable (always 0 for distance voting).
    pub unreliable: usize,
}

impl CellRecord {
    pub fn from_votes(votes: Vec<VoteOutcome>) -> Self {
        let keypoint_errors: Vec<Option<f64>> = votes.iter().map(|v| v.error).collect();
        let mean_error = if keypoint_errors.iter().all(|e| e.is_some()) {
            let sum: f64 = keypoint_errors.iter().map(|e| e.unwrap()).sum();
            Some(sum / keypoint_errors.len() as f64)
        } else {
            None
        };
        Self {
            mean_error,
            scores: votes.iter().map(|v| v.score).collect(),
            failures: votes.iter().filter(|v| v.error.is_none()).count(),
            unreliable: votes.iter().filter(|v| !v.reliable).count(),
            keypoint_errors,
        }
    }

    /// Scene-level error for accuracy computations: failed scenes count as
    /// infinitely wrong.
    pub fn error_or_inf(&self) -> f64 {
        self.mean_error.unwrap_or(f64::INFINITY)
    }
}

/// One keypoint vote reduced to what the report keeps.
#[derive(Debug, Clone, Copy)]
pub struct VoteOutcome {
    pub error: Option<f64>,
    pub score: usize,
    pub reliable: bool,
}

/// Pose recovery outcome for one scene, when PnP was solvable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseRecord {
    pub rmse_px: f64,
    pub rotation_error_rad: f64,
    pub translation_error_m: f64,
    pub add_m: f64,
    pub proj2d_px: Option<f64>,
}

/// Everything recorded for one scene.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneRecord {
    pub scene: usize,
    /// Occluder radius used for this scene, in pixels.
    pub occluder_radius_px: f64,
    pub distance_full: CellRecord,
    pub distance_occluded: CellRecord,
    pub direction_full: CellRecord,
    pub direction_occluded: CellRecord,
    /// True when the 2D-3D correspondences were degenerate for PnP (the
    /// stick's collinear keypoints always are).
    pub pnp_degenerate: bool,
    pub pose: Option<PoseRecord>,
}

pub const CELLS: [&str; 4] = [
    "distance_full",
    "distance_occluded",
    "direction_full",
    "direction_occluded",
];

/// A full experiment result.
#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub records: Vec<SceneRecord>,
    /// Named aggregate metrics in a fixed emission order.
    pub aggregates: Vec<(String, f64)>,
}

impl Report {
    pub fn aggregate(&self, name: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn cell<'a>(record: &'a SceneRecord, cell: &str) -> &'a CellRecord {
        match cell {
            "distance_full" => &record.distance_full,
            "distance_occluded" => &record.distance_occluded,
            "direction_full" => &record.direction_full,
            "direction_occluded" => &record.direction_occluded,
            other => panic!("unknown cell {other}"),
        }
    }

    pub fn aggregates_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, value) in &self.aggregates {
            let _ = writeln!(out, "{name},{value}");
        }
        out
    }

    pub fn records_ndjson(&self) -> Result<String, BenchError> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes `config.toml`, `aggregates.csv`, and `records.ndjson`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let config_text =
            toml::to_string(&self.config).expect("config serializes to TOML");
        write_file(&dir.join("config.toml"), config_text.as_bytes())?;
        write_file(&dir.join("aggregates.csv"), self.aggregates_csv().as_bytes())?;
        write_file(&dir.join("records.ndjson"), self.records_ndjson()?.as_bytes())?;
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Computes the aggregate table from per-scene records.
pub fn compute_aggregates(
    config: &ExperimentConfig,
    records: &[SceneRecord],
) -> Result<Vec<(String, f64)>, BenchError> {
    let mut out: Vec<(String, f64)> = Vec::new();
    out.push(("scenes".into(), records.len() as f64));

    for cell in CELLS {
        let errors: Vec<f64> = records
            .iter()
            .map(|r| Report::cell(r, cell).error_or_inf())
            .collect();
        let acc_toy = metrics::accuracy(&errors, config.toy_proj_pixels)?;
        let acc_wide = metrics::accuracy(&errors, config.proj_pixels)?;
        out.push((format!("{cell}_acc_toy"), acc_toy));
        out.push((format!("{cell}_acc_wide"), acc_wide));

        let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        out.push((format!("{cell}_mean_error_px"), mean));

        let failures: usize = records
            .iter()
            .map(|r| Report::cell(r, cell).failures)
            .sum();
        out.push((format!("{cell}_failed_votes"), failures as f64));
        let unreliable: usize = records
            .iter()
            .map(|r| Report::cell(r, cell).unreliable)
            .sum();
        if cell.starts_with("direction") {
            out.push((format!("{cell}_unreliable_votes"), unreliable as f64));
        }
    }

    let degenerate = records.iter().filter(|r| r.pnp_degenerate).count();
    out.push(("pnp_degenerate_scenes".into(), degenerate as f64));
    let solved: Vec<&PoseRecord> = records.iter().filter_map(|r| r.pose.as_ref()).collect();
    out.push(("pnp_solved_scenes".into(), solved.len() as f64));
    if !solved.is_empty() {
        let adds: Vec<f64> = solved.iter().map(|p| p.add_m).collect();
        let add_threshold = config.add_fraction * config.stick_length;
        out.push((
            "pnp_add_accuracy".into(),
            metrics::accuracy(&adds, add_threshold)?,
        ));
        out.push(("pnp_add_auc".into(), metrics::auc(&adds, config.auc_max)?));
    }
    Ok(out)
}
