//! Scene archive generation: one JSON document per scene (pose, projected
//! keypoints, run-length encoded mask) plus one binary field file per
//! keypoint, corrupted by the configured noise model.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kdfield::field::write_field;
use kdfield::synth::make_stick_scene;

use crate::config::ExperimentConfig;
use crate::experiment::predict_fields;
use crate::report::{io_err, write_file, BenchError};

/// Writes `scenes` samples into `dir` and returns the number written.
/// Field files use the same seed and stream derivation as the experiment
/// runner, so an archive is a byte-reproducible snapshot of a run's
/// simulated predictor inputs.
pub fn generate_archive(config: &ExperimentConfig, dir: &Path) -> Result<usize, BenchError> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let scene_config = config.scene_config()?;
    let loss = config.loss_config();
    let noise = config.noise_model()?;

    for scene_index in 0..config.scenes {
        let seed = config.master_seed ^ scene_index as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = make_stick_scene(&scene_config, &mut rng)?;

        let doc = scene.to_doc();
        let json = serde_json::to_string_pretty(&doc)?;
        write_file(&dir.join(format!("scene_{scene_index:05}.json")), json.as_bytes())?;

        for (kp_index, true_kp) in scene.keypoints2d.iter().enumerate() {
            let (field, _) = predict_fields(
                seed,
                kp_index,
                *true_kp,
                scene_config.intrinsics.width,
                scene_config.intrinsics.height,
                &noise,
                &loss,
            );
            let path = dir.join(format!("scene_{scene_index:05}_kp{kp_index:02}.kdf"));
            let file = File::create(&path).map_err(|e| io_err(&path, e))?;
            let mut writer = BufWriter::new(file);
            write_field(&field, &mut writer)?;
        }
    }
    Ok(config.scenes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kdfield::field::read_field;
    use kdfield::synth::{SceneDoc, SceneSample};

    #[test]
    fn archive_round_trips_scene_and_fields() {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            scenes: 2,
            sigma_t: 0.05,
            ..ExperimentConfig::default()
        };
        let written = generate_archive(&config, dir.path()).unwrap();
        assert_eq!(written, 2);

        let json = std::fs::read_to_string(dir.path().join("scene_00001.json")).unwrap();
        let doc: SceneDoc = serde_json::from_str(&json).unwrap();
        let scene = SceneSample::<f64>::from_doc(&doc).unwrap();
        assert_eq!(scene.keypoints2d.len(), 4);
        assert!(scene.mask.count_set() > 0);

        let mut reader =
            std::fs::File::open(dir.path().join("scene_00001_kp03.kdf")).unwrap();
        let field: kdfield::DistanceField32 = read_field(&mut reader).unwrap();
        assert_eq!(field.width(), 256);
        assert_eq!(field.height(), 256);
        assert_eq!(field.keypoint_index(), 3);
    }
}
