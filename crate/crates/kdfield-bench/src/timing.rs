//! Wall-clock timing of the voting stage at a configured operating point.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use kdfield::synth::{corrupt_field, make_stick_scene};
use kdfield::voting::{vote_keypoint, VotingConfig};

use crate::config::ExperimentConfig;
use crate::report::BenchError;

/// Result of a voting-stage timing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub num_voters: usize,
    pub hypotheses: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Times `vote_keypoint` on one corrupted field with voters drawn from the
/// whole image (so the configured voter budget is actually reached) and
/// reports the median over `repetitions` runs (clamped to at least one).
pub fn time_voting(
    config: &ExperimentConfig,
    repetitions: usize,
) -> Result<TimingRecord, BenchError> {
    config.validate()?;
    let repetitions = repetitions.max(1);
    let ctx_scene = config.scene_config()?;
    let loss = config.loss_config();
    let noise = config.noise_model()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    let scene = make_stick_scene(&ctx_scene, &mut rng)?;
    let field = corrupt_field(&scene.fields[0], &noise, &loss, &mut rng);

    let voting = VotingConfig {
        num_voters: config.num_voters,
        num_triples: config.num_triples,
        inlier_threshold: config.theta,
        seed: config.master_seed,
    };

    let mut samples_ms = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        let hypothesis = vote_keypoint(&field, |_, _| true, &voting)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(hypothesis);
        samples_ms.push(elapsed);
    }
    samples_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ms = if samples_ms.len() % 2 == 1 {
        samples_ms[samples_ms.len() / 2]
    } else {
        let hi = samples_ms.len() / 2;
        0.5 * (samples_ms[hi - 1] + samples_ms[hi])
    };

    Ok(TimingRecord {
        num_voters: config
            .num_voters
            .min(config.image_width as usize * config.image_height as usize),
        hypotheses: 3 * config.num_triples,
        repetitions,
        median_ms,
        min_ms: samples_ms[0],
        max_ms: *samples_ms.last().unwrap(),
    })
}
