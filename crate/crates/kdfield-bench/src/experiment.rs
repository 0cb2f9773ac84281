//! Experiment orchestration: scene generation, field corruption, both
//! voting schemes on both mask variants, PnP, and aggregation.
//!
//! Scenes are processed by a worker pool; every scene derives its RNG
//! streams from `master_seed XOR scene_index`, so serial and parallel runs
//! produce identical reports. Report assembly happens in scene order.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use kdfield::field::{DistanceField, LossConfig};
use kdfield::geom::{project, ObjectModel, SymmetryGroup};
use kdfield::metrics::add_distance;
use kdfield::pose::{solve_pnp, Correspondence, PoseError};
use kdfield::synth::{
    corrupt_direction_field, corrupt_field, jitter_keypoint, make_stick_scene, occlude_keypoints,
    NoiseModel, SceneConfig,
};
use kdfield::voting::{
    build_direction_field, direction_vote_keypoint, vote_keypoint, DirectionField, VotingConfig,
};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::report::{
    compute_aggregates, io_err, write_file, BenchError, CellRecord, PoseRecord, Report,
    SceneRecord, VoteOutcome,
};

/// Derived per-run pieces shared by all scenes.
struct RunContext {
    scene_config: SceneConfig<f64>,
    loss: LossConfig<f64>,
    noise: NoiseModel<f64>,
}

impl RunContext {
    fn new(config: &ExperimentConfig) -> Result<Self, BenchError> {
        Ok(Self {
            scene_config: config.scene_config()?,
            loss: config.loss_config(),
            noise: config.noise_model()?,
        })
    }
}

/// Simulated predictor output for one keypoint: the distance field and the
/// direction field a trained model would have regressed, both centered on
/// the jittered keypoint and corrupted per-element.
///
/// Keypoint `k` of a scene draws from ChaCha stream `k + 1` of the scene
/// seed (stream 0 samples the scene itself), so any keypoint's fields can
/// be regenerated independently and archives match experiment runs
/// bit for bit.
pub fn predict_fields(
    scene_seed: u64,
    kp_index: usize,
    true_kp: nalgebra::Vector2<f64>,
    width: u32,
    height: u32,
    noise: &NoiseModel<f64>,
    loss: &LossConfig<f64>,
) -> (DistanceField<f64>, DirectionField<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    rng.set_stream(kp_index as u64 + 1);
    let predicted_kp = jitter_keypoint(true_kp, noise, &mut rng);
    let dist_gt = DistanceField::from_keypoint(predicted_kp, width, height, kp_index as u32);
    let dist_field = corrupt_field(&dist_gt, noise, loss, &mut rng);
    let dir_gt = build_direction_field(predicted_kp, width, height, kp_index as u32);
    let dir_field = corrupt_direction_field(&dir_gt, noise, &mut rng);
    (dist_field, dir_field)
}

/// Runs the full experiment described by `config` and returns the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, BenchError> {
    config.validate()?;
    let ctx = RunContext::new(config)?;
    let records: Result<Vec<SceneRecord>, BenchError> = (0..config.scenes)
        .into_par_iter()
        .map(|scene_index| evaluate_scene(config, &ctx, scene_index))
        .collect();
    let records = records?;
    let aggregates = compute_aggregates(config, &records)?;
    Ok(Report {
        config: config.clone(),
        records,
        aggregates,
    })
}

fn evaluate_scene(
    config: &ExperimentConfig,
    ctx: &RunContext,
    scene_index: usize,
) -> Result<SceneRecord, BenchError> {
    let scene_seed = config.master_seed ^ scene_index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let scene = make_stick_scene(&ctx.scene_config, &mut rng)?;
    let k = &ctx.scene_config.intrinsics;

    // Occluders default to 5% of this scene's projected stick length.
    let occluder_radius = match config.occluder_radius {
        Some(r) => r,
        None => {
            let (a, b) = ctx.scene_config.stick.axis_endpoints();
            let pa = project(&a, &scene.pose, k)?;
            let pb = project(&b, &scene.pose, k)?;
            0.05 * (pa - pb).norm()
        }
    };
    let occluded_mask = occlude_keypoints(&scene.mask, &scene.keypoints2d, occluder_radius);

    let voting = VotingConfig {
        num_voters: config.num_voters,
        num_triples: config.num_triples,
        inlier_threshold: config.theta,
        seed: scene_seed,
    };

    let num_kp = scene.keypoints2d.len();
    let mut dist_full = Vec::with_capacity(num_kp);
    let mut dist_occ = Vec::with_capacity(num_kp);
    let mut dir_full = Vec::with_capacity(num_kp);
    let mut dir_occ = Vec::with_capacity(num_kp);
    let mut voted_full: Vec<Option<Vector2<f64>>> = Vec::with_capacity(num_kp);

    for (kp_index, true_kp) in scene.keypoints2d.iter().enumerate() {
        let (dist_field, dir_field) = predict_fields(
            scene_seed,
            kp_index,
            *true_kp,
            k.width,
            k.height,
            &ctx.noise,
            &ctx.loss,
        );

        for (mask, dist_out, dir_out, track_vote) in [
            (&scene.mask, &mut dist_full, &mut dir_full, true),
            (&occluded_mask, &mut dist_occ, &mut dir_occ, false),
        ] {
            let region = |u: u32, v: u32| mask.contains(u, v);
            let dist_vote = vote_keypoint(&dist_field, region, &voting);
            let outcome = match &dist_vote {
                Ok(h) => VoteOutcome {
                    error: Some((h.location - true_kp).norm()),
                    score: h.score,
                    reliable: true,
                },
                Err(_) => VoteOutcome {
                    error: None,
                    score: 0,
                    reliable: false,
                },
            };
            dist_out.push(outcome);
            if track_vote {
                voted_full.push(dist_vote.ok().map(|h| h.location));
            }

            let dir_vote = direction_vote_keypoint(&dir_field, region, &voting);
            dir_out.push(match dir_vote {
                Ok(v) => VoteOutcome {
                    error: Some((v.hypothesis.location - true_kp).norm()),
                    score: v.hypothesis.score,
                    reliable: v.reliable,
                },
                Err(_) => VoteOutcome {
                    error: None,
                    score: 0,
                    reliable: false,
                },
            });
        }
    }

    let (pnp_degenerate, pose) = recover_pose(ctx, &scene, &voted_full)?;

    Ok(SceneRecord {
        scene: scene_index,
        occluder_radius_px: occluder_radius,
        distance_full: CellRecord::from_votes(dist_full),
        distance_occluded: CellRecord::from_votes(dist_occ),
        direction_full: CellRecord::from_votes(dir_full),
        direction_occluded: CellRecord::from_votes(dir_occ),
        pnp_degenerate,
        pose,
    })
}

/// Attempts pose recovery from the full-mask distance votes. The stick's
/// keypoints are collinear in 3D, so PnP reports a degenerate
/// configuration; that outcome is recorded rather than treated as fatal.
fn recover_pose(
    ctx: &RunContext,
    scene: &kdfield::synth::SceneSample<f64>,
    voted: &[Option<Vector2<f64>>],
) -> Result<(bool, Option<PoseRecord>), BenchError> {
    let keypoints3d = ctx.scene_config.stick.keypoints();
    let correspondences: Vec<Correspondence<f64>> = keypoints3d
        .iter()
        .zip(voted.iter())
        .filter_map(|(p3, v)| v.map(|p2| Correspondence::new(*p3, p2)))
        .collect();
    if correspondences.len() < 4 {
        return Ok((true, None));
    }
    let k = &ctx.scene_config.intrinsics;
    match solve_pnp(&correspondences, k) {
        Ok(solution) => {
            let model = ObjectModel::new(
                keypoints3d.clone(),
                keypoints3d.clone(),
                SymmetryGroup::trivial(keypoints3d.len()),
            )
            .map_err(BenchError::Geom)?;
            let proj2d = kdfield::metrics::proj2d_distance(
                &solution.pose,
                &scene.pose,
                &model,
                k,
            )
            .ok();
            Ok((
                false,
                Some(PoseRecord {
                    rmse_px: solution.rmse,
                    rotation_error_rad: solution.pose.rotation_angle_to(&scene.pose),
                    translation_error_m: (solution.pose.translation - scene.pose.translation)
                        .norm(),
                    add_m: add_distance(&solution.pose, &scene.pose, &model),
                    proj2d_px: proj2d,
                }),
            ))
        }
        Err(PoseError::Degenerate { .. }) | Err(PoseError::TooFewCorrespondences { .. }) => {
            Ok((true, None))
        }
        Err(_) => Ok((true, None)),
    }
}

/// Runs one experiment per sweep value, sharing the master seed.
pub struct SweepResult {
    pub axis: SweepAxis,
    pub runs: Vec<(f64, Report)>,
}

impl SweepResult {
    /// One CSV row per `(value, metric)`.
    pub fn csv(&self) -> String {
        let mut out = String::from("axis,value,metric,metric_value\n");
        for (value, report) in &self.runs {
            for (name, metric_value) in &report.aggregates {
                let _ = writeln!(out, "{},{},{},{}", self.axis, value, name, metric_value);
            }
        }
        out
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join("sweep.csv"), self.csv().as_bytes())?;
        for (value, report) in &self.runs {
            report.write_to_dir(&dir.join(format!("{}_{}", self.axis, value)))?;
        }
        Ok(())
    }
}

pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepResult, BenchError> {
    if values.is_empty() {
        return Err(BenchError::EmptySweep);
    }
    let mut runs = Vec::with_capacity(values.len());
    for &value in values {
        let run_config = axis.apply(config, value)?;
        runs.push((value, run_experiment(&run_config)?));
    }
    Ok(SweepResult { axis, runs })
}
