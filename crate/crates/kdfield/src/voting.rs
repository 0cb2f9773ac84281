//! Distance-based RANSAC voting for 2D keypoint localization.
//!
//! Hypotheses are generated by intersecting the circles implied by sampled
//! voter pixels (center = pixel, radius = its predicted keypoint distance)
//! and disambiguated by a third circle; the winner is the hypothesis with
//! the largest consensus of voters whose distance prediction error stays
//! within a threshold. A direction-based voting baseline of the kind used
//! by prior keypoint-voting methods is included for comparison.

use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::field::DistanceField;
use crate::scalar::{cast, Real};

/// Discriminants down to this magnitude below zero still count as tangency.
pub const TANGENT_TOLERANCE: f64 = 1e-9;

/// Minimum |sin| of the angle between two voter directions for their line
/// intersection to be considered well conditioned.
pub const DIRECTION_CROSS_CUTOFF: f64 = 1e-6;

/// Direction-voting inlier test: the direction from a voter to a hypothesis
/// must have at least this cosine against the voter's stored direction
/// (0.99 is roughly an 8 degree cone).
pub const DIRECTION_COS_THRESHOLD: f64 = 0.99;

/// Errors from voting operations.
#[derive(Debug, Error)]
pub enum VotingError {
    #[error("circle centers coincide; intersection set is not finite")]
    CoincidentCenters,
    #[error("no candidate hypotheses to select from")]
    NoCandidates,
    #[error("voting needs at least {needed} voters, got {got}")]
    TooFewVoters { needed: usize, got: usize },
    #[error("voter region yields {got} pixels, need at least {needed}")]
    RegionTooSmall { needed: usize, got: usize },
    #[error("no hypotheses could be generated from the sampled voters")]
    NoHypotheses,
    #[error("voter pixel and distance counts differ: {pixels} vs {distances}")]
    MismatchedVoters { pixels: usize, distances: usize },
    #[error("invalid voting config: {reason}")]
    InvalidConfig { reason: String },
}

/// Pixels participating in one keypoint's vote, with their predicted
/// distance values.
#[derive(Debug, Clone)]
pub struct VoterSet<T: Real> {
    pixels: Vec<Vector2<T>>,
    distances: Vec<T>,
}

impl<T: Real> VoterSet<T> {
    pub fn new(pixels: Vec<Vector2<T>>, distances: Vec<T>) -> Result<Self, VotingError> {
        if pixels.len() != distances.len() {
            return Err(VotingError::MismatchedVoters {
                pixels: pixels.len(),
                distances: distances.len(),
            });
        }
        Ok(Self { pixels, distances })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Vector2<T>] {
        &self.pixels
    }

    pub fn distances(&self) -> &[T] {
        &self.distances
    }
}

/// Candidate keypoint location with its consensus score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis<T: Real> {
    pub location: Vector2<T>,
    pub score: usize,
}

/// Voting-stage parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotingConfig<T: Real> {
    /// Pixels sampled from the voter region (without replacement when the
    /// region is large enough; otherwise every region pixel votes).
    pub num_voters: usize,
    /// Number of sampled voter triples; each triple contributes up to three
    /// hypotheses, one per circle pair.
    pub num_triples: usize,
    /// Inlier threshold on |distance-to-hypothesis - predicted distance|,
    /// in pixels (strict inequality).
    pub inlier_threshold: T,
    /// Base RNG seed. Each keypoint votes on an independent stream seeded
    /// with `seed XOR keypoint_index`, so parallel and serial execution
    /// produce identical results.
    pub seed: u64,
}

impl<T: Real> VotingConfig<T> {
    pub fn validate(&self) -> Result<(), VotingError> {
        if self.num_voters < 3 {
            return Err(VotingError::InvalidConfig {
                reason: format!("num_voters must be at least 3, got {}", self.num_voters),
            });
        }
        if self.num_triples == 0 {
            return Err(VotingError::InvalidConfig {
                reason: "num_triples must be at least 1".into(),
            });
        }
        if !(self.inlier_threshold > T::zero()) {
            return Err(VotingError::InvalidConfig {
                reason: "inlier_threshold must be positive".into(),
            });
        }
        Ok(())
    }
}

impl<T: Real> Default for VotingConfig<T> {
    fn default() -> Self {
        Self {
            num_voters: 4096,
            num_triples: 1024,
            inlier_threshold: cast(0.4),
            seed: 0,
        }
    }
}

/// Intersection of two distinct circles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircleIntersection<T: Real> {
    /// Circles are disjoint or nested.
    Empty,
    /// Circles touch at a single point (within [`TANGENT_TOLERANCE`]).
    Tangent(Vector2<T>),
    /// Circles cross properly at two points.
    Pair(Vector2<T>, Vector2<T>),
}

/// Closed-form intersection of the circles `|h - c1| = r1` and
/// `|h - c2| = r2`. Coincident centers have no finite solution set and are
/// reported as an error.
pub fn circle_intersections<T: Real>(
    c1: Vector2<T>,
    r1: T,
    c2: Vector2<T>,
    r2: T,
) -> Result<CircleIntersection<T>, VotingError> {
    let delta = c2 - c1;
    let dist_sq = delta.norm_squared();
    if dist_sq <= cast::<T>(1e-24) {
        return Err(VotingError::CoincidentCenters);
    }
    let dist = dist_sq.sqrt();
    let along = (r1 * r1 - r2 * r2 + dist_sq) / (cast::<T>(2.0) * dist);
    let h_sq = r1 * r1 - along * along;

    let unit = delta / dist;
    let base = c1 + unit * along;
    if h_sq < -cast::<T>(TANGENT_TOLERANCE) {
        return Ok(CircleIntersection::Empty);
    }
    if h_sq <= T::zero() {
        return Ok(CircleIntersection::Tangent(base));
    }
    let h = h_sq.sqrt();
    let perp = Vector2::new(-unit.y, unit.x);
    Ok(CircleIntersection::Pair(base + perp * h, base - perp * h))
}

/// Picks the candidate whose distance to the third circle's center best
/// matches that circle's radius. Ties keep the first candidate.
pub fn select_valid_hypothesis<T: Real>(
    candidates: &[Vector2<T>],
    c3: Vector2<T>,
    r3: T,
) -> Result<Vector2<T>, VotingError> {
    let mut best: Option<(T, Vector2<T>)> = None;
    for &candidate in candidates {
        let residual = ((candidate - c3).norm() - r3).abs();
        if best.map_or(true, |(b, _)| residual < b) {
            best = Some((residual, candidate));
        }
    }
    best.map(|(_, c)| c).ok_or(VotingError::NoCandidates)
}

/// Generates up to `3 * num_triples` unscored hypotheses by repeatedly
/// sampling voter triples (without replacement within a triple) and
/// intersecting each circle pair, disambiguated by the remaining circle.
/// Degenerate or non-intersecting pairs contribute nothing.
pub fn generate_hypotheses<T: Real, R: Rng>(
    voters: &VoterSet<T>,
    config: &VotingConfig<T>,
    rng: &mut R,
) -> Result<Vec<Hypothesis<T>>, VotingError> {
    config.validate()?;
    if voters.len() < 3 {
        return Err(VotingError::TooFewVoters {
            needed: 3,
            got: voters.len(),
        });
    }
    let mut hypotheses = Vec::with_capacity(3 * config.num_triples);
    let mut buf = [Vector2::zeros(); 2];
    for _ in 0..config.num_triples {
        let picked = rand::seq::index::sample(rng, voters.len(), 3);
        let idx = [picked.index(0), picked.index(1), picked.index(2)];
        for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            let (ca, ra) = (voters.pixels[idx[a]], voters.distances[idx[a]]);
            let (cb, rb) = (voters.pixels[idx[b]], voters.distances[idx[b]]);
            let (cc, rc) = (voters.pixels[idx[c]], voters.distances[idx[c]]);
            let candidates: &[Vector2<T>] = match circle_intersections(ca, ra, cb, rb) {
                Ok(CircleIntersection::Pair(p, q)) => {
                    buf = [p, q];
                    &buf[..2]
                }
                Ok(CircleIntersection::Tangent(p)) => {
                    buf[0] = p;
                    &buf[..1]
                }
                Ok(CircleIntersection::Empty) | Err(_) => continue,
            };
            if let Ok(location) = select_valid_hypothesis(candidates, cc, rc) {
                hypotheses.push(Hypothesis { location, score: 0 });
            }
        }
    }
    Ok(hypotheses)
}

/// Consensus score of a hypothesis: the number of voters whose predicted
/// distance differs from the actual distance to the hypothesis by strictly
/// less than `threshold`.
pub fn vote_score<T: Real>(location: Vector2<T>, voters: &VoterSet<T>, threshold: T) -> usize {
    voters
        .pixels
        .iter()
        .zip(voters.distances.iter())
        .filter(|(pixel, &predicted)| ((location - *pixel).norm() - predicted).abs() < threshold)
        .count()
}

/// Scores every hypothesis in place and returns the index of the winner
/// (highest score; ties go to the lowest index, i.e. generation order).
pub fn score_and_select<T: Real>(
    hypotheses: &mut [Hypothesis<T>],
    voters: &VoterSet<T>,
    threshold: T,
) -> Option<usize> {
    for hypothesis in hypotheses.iter_mut() {
        hypothesis.score = vote_score(hypothesis.location, voters, threshold);
    }
    let mut best: Option<usize> = None;
    for (i, hypothesis) in hypotheses.iter().enumerate() {
        if best.map_or(true, |b| hypothesis.score > hypotheses[b].score) {
            best = Some(i);
        }
    }
    best
}

fn collect_region_pixels<T: Real, F: Fn(u32, u32) -> bool>(
    width: u32,
    height: u32,
    region: &F,
) -> Vec<(Vector2<T>, u32, u32)> {
    let mut pixels = Vec::new();
    for v in 0..height {
        for u in 0..width {
            if region(u, v) {
                pixels.push((Vector2::new(cast(u as f64), cast(v as f64)), u, v));
            }
        }
    }
    pixels
}

/// Samples up to `num_voters` of the region pixels without replacement;
/// regions at or below the budget vote in full, in row-major order.
fn sample_voters<T: Real, R: Rng>(
    pixels: Vec<(Vector2<T>, u32, u32)>,
    num_voters: usize,
    rng: &mut R,
) -> Vec<(Vector2<T>, u32, u32)> {
    if pixels.len() <= num_voters {
        return pixels;
    }
    rand::seq::index::sample(rng, pixels.len(), num_voters)
        .iter()
        .map(|i| pixels[i])
        .collect()
}

/// Runs the full distance-based vote for one keypoint's field.
///
/// Voters are drawn from `region`, hypotheses generated from circle
/// intersections, and every hypothesis scored against the whole sampled
/// voter set. The RNG stream is seeded with
/// `config.seed XOR field.keypoint_index()`.
pub fn vote_keypoint<T: Real, F: Fn(u32, u32) -> bool>(
    field: &DistanceField<T>,
    region: F,
    config: &VotingConfig<T>,
) -> Result<Hypothesis<T>, VotingError> {
    config.validate()?;
    let pixels = collect_region_pixels(field.width(), field.height(), &region);
    if pixels.len() < 3 {
        return Err(VotingError::RegionTooSmall {
            needed: 3,
            got: pixels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ u64::from(field.keypoint_index()));
    let sampled = sample_voters(pixels, config.num_voters, &mut rng);
    let (pixels, distances) = sampled
        .into_iter()
        .map(|(p, u, v)| (p, field.at(u, v)))
        .unzip();
    let voters = VoterSet::new(pixels, distances)?;

    let mut hypotheses = generate_hypotheses(&voters, config, &mut rng)?;
    let best = score_and_select(&mut hypotheses, &voters, config.inlier_threshold)
        .ok_or(VotingError::NoHypotheses)?;
    Ok(hypotheses[best])
}

/// Per-pixel unit vectors toward one projected keypoint; the keypoint's own
/// pixel (if any) stores the zero sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionField<T: Real> {
    values: Vec<Vector2<T>>,
    width: u32,
    height: u32,
    keypoint_index: u32,
}

impl<T: Real> DirectionField<T> {
    #[inline]
    pub fn at(&self, u: u32, v: u32) -> Vector2<T> {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn keypoint_index(&self) -> u32 {
        self.keypoint_index
    }

    pub fn values(&self) -> &[Vector2<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vector2<T>] {
        &mut self.values
    }
}

/// Ground-truth direction field: each element stores the unit vector from
/// the pixel toward the keypoint.
pub fn build_direction_field<T: Real>(
    keypoint: Vector2<T>,
    width: u32,
    height: u32,
    keypoint_index: u32,
) -> DirectionField<T> {
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for v in 0..height {
        for u in 0..width {
            let pixel = Vector2::new(cast::<T>(u as f64), cast::<T>(v as f64));
            let delta = keypoint - pixel;
            let norm = delta.norm();
            if norm == T::zero() {
                values.push(Vector2::zeros());
            } else {
                values.push(delta / norm);
            }
        }
    }
    DirectionField {
        values,
        width,
        height,
        keypoint_index,
    }
}

/// Result of a direction-based vote. `reliable` is false when every sampled
/// voter pair was too close to parallel for a conditioned intersection and
/// the hypothesis is a best-effort fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionVote<T: Real> {
    pub hypothesis: Hypothesis<T>,
    pub reliable: bool,
}

/// Direction-based voting baseline: hypotheses are line intersections of
/// sampled voter pairs, scored by the number of voters whose stored
/// direction points at the hypothesis within [`DIRECTION_COS_THRESHOLD`].
///
/// The pair budget is `3 * num_triples`, matching the hypothesis budget of
/// the distance-based scheme, and the voter sampling stream is identical to
/// it for a given seed and region.
pub fn direction_vote_keypoint<T: Real, F: Fn(u32, u32) -> bool>(
    field: &DirectionField<T>,
    region: F,
    config: &VotingConfig<T>,
) -> Result<DirectionVote<T>, VotingError> {
    config.validate()?;
    let pixels = collect_region_pixels(field.width(), field.height(), &region);
    if pixels.len() < 2 {
        return Err(VotingError::RegionTooSmall {
            needed: 2,
            got: pixels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ u64::from(field.keypoint_index()));
    let sampled = sample_voters(pixels, config.num_voters, &mut rng);
    let voters: Vec<(Vector2<T>, Vector2<T>)> = sampled
        .into_iter()
        .map(|(p, u, v)| (p, field.at(u, v)))
        .collect();

    let cutoff = cast::<T>(DIRECTION_CROSS_CUTOFF);
    let mut hypotheses: Vec<Vector2<T>> = Vec::with_capacity(3 * config.num_triples);
    // Track the least-parallel rejected pair as a fallback when everything
    // is degenerate.
    let mut fallback: Option<(T, Vector2<T>)> = None;
    for _ in 0..3 * config.num_triples {
        let picked = rand::seq::index::sample(&mut rng, voters.len(), 2);
        let (p1, d1) = voters[picked.index(0)];
        let (p2, d2) = voters[picked.index(1)];
        if d1 == Vector2::zeros() || d2 == Vector2::zeros() {
            continue;
        }
        let det = d2.x * d1.y - d2.y * d1.x;
        if det.abs() <= cutoff {
            if det.abs() > T::zero() {
                let delta = p2 - p1;
                let t = (d2.x * delta.y - d2.y * delta.x) / det;
                let candidate = p1 + d1 * t;
                if fallback.map_or(true, |(b, _)| det.abs() > b) {
                    fallback = Some((det.abs(), candidate));
                }
            }
            continue;
        }
        let delta = p2 - p1;
        let t = (d2.x * delta.y - d2.y * delta.x) / det;
        hypotheses.push(p1 + d1 * t);
    }

    let reliable = !hypotheses.is_empty();
    if hypotheses.is_empty() {
        let location = match fallback {
            Some((_, candidate)) => candidate,
            None => {
                // Everything exactly parallel or sentinel: fall back to the
                // voter centroid.
                let sum = voters
                    .iter()
                    .fold(Vector2::zeros(), |acc: Vector2<T>, (p, _)| acc + p);
                sum / cast::<T>(voters.len() as f64)
            }
        };
        hypotheses.push(location);
    }

    let cos_threshold = cast::<T>(DIRECTION_COS_THRESHOLD);
    let mut best_idx = 0;
    let mut best_score = 0usize;
    for (i, &h) in hypotheses.iter().enumerate() {
        let mut score = 0usize;
        for &(pixel, direction) in &voters {
            if direction == Vector2::zeros() {
                continue;
            }
            let to_h = h - pixel;
            let norm = to_h.norm();
            if norm == T::zero() {
                continue;
            }
            if to_h.dot(&direction) / norm > cos_threshold {
                score += 1;
            }
        }
        if i == 0 || score > best_score {
            best_idx = i;
            best_score = score;
        }
    }
    Ok(DirectionVote {
        hypothesis: Hypothesis {
            location: hypotheses[best_idx],
            score: best_score,
        },
        reliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Double-loop reference scorer used as the oracle for the optimized path.
    fn naive_vote_score(h: Vector2<f64>, pixels: &[Vector2<f64>], dists: &[f64], theta: f64) -> usize {
        let mut count = 0;
        for i in 0..pixels.len() {
            let dx = h.x - pixels[i].x;
            let dy = h.y - pixels[i].y;
            let dist = (dx * dx + dy * dy).sqrt();
            if (dist - dists[i]).abs() < theta {
                count += 1;
            }
        }
        count
    }

    fn perfect_voters(keypoint: Vector2<f64>, pixels: &[Vector2<f64>]) -> VoterSet<f64> {
        let dists = pixels.iter().map(|p| (keypoint - p).norm()).collect();
        VoterSet::new(pixels.to_vec(), dists).unwrap()
    }

    #[test]
    fn circle_intersections_two_point_case() {
        // (0,0,r=5) and (8,0,r=5): along = 4, h = 3.
        let out = circle_intersections(
            Vector2::new(0.0, 0.0),
            5.0,
            Vector2::new(8.0, 0.0),
            5.0,
        )
        .unwrap();
        assert_eq!(
            out,
            CircleIntersection::Pair(Vector2::new(4.0, 3.0), Vector2::new(4.0, -3.0))
        );
    }

    #[test]
    fn circle_intersections_tangent_and_empty() {
        let tangent = circle_intersections(
            Vector2::new(0.0, 0.0),
            1.0,
            Vector2::new(2.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(tangent, CircleIntersection::Tangent(Vector2::new(1.0, 0.0)));

        let empty = circle_intersections(
            Vector2::new(0.0, 0.0),
            1.0,
            Vector2::new(5.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(empty, CircleIntersection::Empty);

        // Nested circles never touch either.
        let nested = circle_intersections(
            Vector2::new(0.0, 0.0),
            5.0,
            Vector2::new(1.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(nested, CircleIntersection::Empty);
    }

    #[test]
    fn circle_intersections_coincident_centers_error() {
        let out = circle_intersections(
            Vector2::new(3.0, 3.0),
            1.0,
            Vector2::new(3.0, 3.0),
            2.0,
        );
        assert!(matches!(out, Err(VotingError::CoincidentCenters)));
    }

    #[test]
    fn select_valid_hypothesis_prefers_agreeing_candidate() {
        // Residuals against (4,8,r=5): 0 for (4,3), 6 for (4,-3).
        let picked = select_valid_hypothesis(
            &[Vector2::new(4.0, 3.0), Vector2::new(4.0, -3.0)],
            Vector2::new(4.0, 8.0),
            5.0,
        )
        .unwrap();
        assert_eq!(picked, Vector2::new(4.0, 3.0));
    }

    #[test]
    fn select_valid_hypothesis_single_and_tie() {
        let single = select_valid_hypothesis(&[Vector2::new(1.0, 0.0)], Vector2::new(9.0, 9.0), 1.0)
            .unwrap();
        assert_eq!(single, Vector2::new(1.0, 0.0));

        // Equidistant candidates: first in order wins.
        let tied = select_valid_hypothesis(
            &[Vector2::new(0.0, 1.0), Vector2::new(0.0, -1.0)],
            Vector2::new(0.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(tied, Vector2::new(0.0, 1.0));

        assert!(matches!(
            select_valid_hypothesis::<f64>(&[], Vector2::new(0.0, 0.0), 1.0),
            Err(VotingError::NoCandidates)
        ));
    }

    #[test]
    fn generate_hypotheses_exact_on_perfect_field() {
        // Voters in general position: no three collinear, so every circle
        // pair disambiguates cleanly. (Collinear triples admit a mirror
        // point consistent with all three circles; consensus scoring is
        // what rejects those.)
        let keypoint = Vector2::new(37.25, -12.5);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pixels: Vec<Vector2<f64>> = (0..40)
            .map(|_| Vector2::new(rng.gen_range(0.0..24.0), rng.gen_range(0.0..24.0)))
            .collect();
        let voters = perfect_voters(keypoint, &pixels);
        let config = VotingConfig {
            num_triples: 64,
            ..VotingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hypotheses = generate_hypotheses(&voters, &config, &mut rng).unwrap();
        assert!(!hypotheses.is_empty());
        for h in &hypotheses {
            assert!((h.location - keypoint).norm() < 1e-6);
        }
    }

    #[test]
    fn generate_hypotheses_caps_at_three_per_triple() {
        let voters = perfect_voters(
            Vector2::new(5.0, 5.0),
            &[
                Vector2::new(0.0, 0.0),
                Vector2::new(9.0, 1.0),
                Vector2::new(2.0, 8.0),
                Vector2::new(7.0, 7.0),
            ],
        );
        let config = VotingConfig {
            num_triples: 1,
            ..VotingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hypotheses = generate_hypotheses(&voters, &config, &mut rng).unwrap();
        assert!(hypotheses.len() <= 3);
    }

    #[test]
    fn generate_hypotheses_deterministic_per_seed() {
        let voters = perfect_voters(
            Vector2::new(20.0, 14.0),
            &(0..30)
                .map(|i| Vector2::new((i * 7 % 13) as f64, (i * 5 % 11) as f64))
                .collect::<Vec<_>>(),
        );
        let config = VotingConfig::<f64>::default();
        let a = generate_hypotheses(&voters, &config, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = generate_hypotheses(&voters, &config, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generate_hypotheses_needs_three_voters() {
        let voters = perfect_voters(
            Vector2::new(1.0, 1.0),
            &[Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0)],
        );
        let config = VotingConfig::<f64>::default();
        let out = generate_hypotheses(&voters, &config, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(out, Err(VotingError::TooFewVoters { .. })));
    }

    #[test]
    fn vote_score_perfect_and_displaced() {
        let keypoint = Vector2::new(12.0, 9.0);
        let pixels: Vec<Vector2<f64>> = (0..25)
            .map(|i| Vector2::new((i % 5) as f64, (i / 5) as f64))
            .collect();
        let voters = perfect_voters(keypoint, &pixels);
        assert_eq!(vote_score(keypoint, &voters, 0.4), voters.len());
        assert_eq!(
            vote_score(Vector2::new(1e6, 1e6), &voters, 0.4),
            0
        );
    }

    #[test]
    fn vote_score_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pixels: Vec<Vector2<f64>> = (0..64)
            .map(|_| Vector2::new(rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0)))
            .collect();
        let dists: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..40.0)).collect();
        let voters = VoterSet::new(pixels, dists).unwrap();
        let h = Vector2::new(30.0, 30.0);
        let mut last = usize::MAX;
        for theta in [3.2, 1.6, 0.8, 0.4, 0.2] {
            let score = vote_score(h, &voters, theta);
            assert!(score <= last);
            last = score;
        }
    }

    #[test]
    fn vote_score_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..64);
            let pixels: Vec<Vector2<f64>> = (0..n)
                .map(|_| Vector2::new(rng.gen_range(-10.0..70.0), rng.gen_range(-10.0..70.0)))
                .collect();
            let dists: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..80.0)).collect();
            let voters = VoterSet::new(pixels.clone(), dists.clone()).unwrap();
            let h = Vector2::new(rng.gen_range(-20.0..80.0), rng.gen_range(-20.0..80.0));
            let theta = rng.gen_range(0.05..2.0);
            assert_eq!(
                vote_score(h, &voters, theta),
                naive_vote_score(h, &pixels, &dists, theta)
            );
        }
    }

    #[test]
    fn vote_keypoint_recovers_noiseless_keypoint() {
        let keypoint = Vector2::new(40.7, 21.3);
        let field = DistanceField::from_keypoint(keypoint, 64, 64, 0);
        let config = VotingConfig {
            num_voters: 256,
            num_triples: 64,
            ..VotingConfig::default()
        };
        let won = vote_keypoint(&field, |_, _| true, &config).unwrap();
        assert!((won.location - keypoint).norm() < 0.5);
        // Noiseless voting: every sampled voter agrees with the winner.
        assert_eq!(won.score, 256);
    }

    #[test]
    fn vote_keypoint_recovers_off_image_keypoint() {
        let keypoint = Vector2::new(-25.0, 90.5);
        let field = DistanceField::from_keypoint(keypoint, 64, 64, 3);
        let config = VotingConfig {
            num_voters: 256,
            num_triples: 64,
            ..VotingConfig::default()
        };
        let won = vote_keypoint(&field, |_, _| true, &config).unwrap();
        assert!((won.location - keypoint).norm() < 0.5);
    }

    #[test]
    fn vote_keypoint_exact_for_any_noncollinear_visible_subset() {
        let keypoint = Vector2::new(12.0, 50.0);
        let field = DistanceField::from_keypoint(keypoint, 64, 64, 0);
        let config = VotingConfig {
            num_voters: 64,
            num_triples: 32,
            ..VotingConfig::default()
        };
        // Different disjoint windows of the image, none containing the keypoint.
        for (u0, v0) in [(0u32, 0u32), (40, 0), (0, 20), (48, 40)] {
            let won = vote_keypoint(
                &field,
                |u, v| u >= u0 && u < u0 + 12 && v >= v0 && v < v0 + 12,
                &config,
            )
            .unwrap();
            assert!((won.location - keypoint).norm() < 0.5);
        }
    }

    #[test]
    fn vote_keypoint_deterministic() {
        let field = DistanceField::from_keypoint(Vector2::new(10.0, 10.0), 48, 48, 2);
        let config = VotingConfig {
            num_voters: 128,
            num_triples: 32,
            seed: 1234,
            ..VotingConfig::default()
        };
        let a = vote_keypoint(&field, |_, _| true, &config).unwrap();
        let b = vote_keypoint(&field, |_, _| true, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vote_keypoint_region_too_small() {
        let field = DistanceField::from_keypoint(Vector2::new(1.0, 1.0), 8, 8, 0);
        let out = vote_keypoint(&field, |u, v| u == 0 && v == 0, &VotingConfig::default());
        assert!(matches!(out, Err(VotingError::RegionTooSmall { .. })));
    }

    #[test]
    fn direction_field_construction() {
        let field: DirectionField<f64> = build_direction_field(Vector2::new(10.0, 0.0), 16, 16, 0);
        assert_eq!(field.at(0, 0), Vector2::new(1.0, 0.0));
        assert_eq!(field.at(10, 0), Vector2::new(0.0, 0.0));
        for v in 0..16 {
            for u in 0..16 {
                let d = field.at(u, v);
                if d != Vector2::zeros() {
                    assert!((d.norm() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn direction_vote_recovers_keypoint_on_blob() {
        let keypoint = Vector2::new(20.0, 22.0);
        let field = build_direction_field(keypoint, 48, 48, 0);
        let config = VotingConfig {
            num_voters: 200,
            num_triples: 64,
            ..VotingConfig::default()
        };
        // Compact blob region around (but excluding) the keypoint pixel.
        let vote = direction_vote_keypoint(
            &field,
            |u, v| {
                let du = u as f64 - 20.0;
                let dv = v as f64 - 22.0;
                let r2 = du * du + dv * dv;
                r2 > 1.0 && r2 < 100.0
            },
            &config,
        )
        .unwrap();
        assert!(vote.reliable);
        assert!((vote.hypothesis.location - keypoint).norm() < 1.0);
    }

    #[test]
    fn direction_vote_flags_degenerate_geometry() {
        // All voters on one row, keypoint on the same row: every direction
        // is parallel, so no conditioned intersection exists.
        let keypoint = Vector2::new(40.0, 8.0);
        let field = build_direction_field(keypoint, 48, 16, 0);
        let config = VotingConfig {
            num_voters: 16,
            num_triples: 16,
            ..VotingConfig::default()
        };
        let vote = direction_vote_keypoint(&field, |u, v| v == 8 && u < 20, &config).unwrap();
        assert!(!vote.reliable);
    }

    #[test]
    fn direction_vote_deterministic() {
        let field = build_direction_field(Vector2::new(11.0, 30.0), 40, 40, 1);
        let config = VotingConfig {
            num_voters: 100,
            num_triples: 32,
            seed: 77,
            ..VotingConfig::default()
        };
        let a = direction_vote_keypoint(&field, |_, _| true, &config).unwrap();
        let b = direction_vote_keypoint(&field, |_, _| true, &config).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn circle_intersections_satisfy_both_equations(
            c1x in -50.0f64..50.0,
            c1y in -50.0f64..50.0,
            c2x in -50.0f64..50.0,
            c2y in -50.0f64..50.0,
            r1 in 0.5f64..80.0,
            r2 in 0.5f64..80.0,
        ) {
            prop_assume!((c1x - c2x).abs() > 1e-6 || (c1y - c2y).abs() > 1e-6);
            let c1 = Vector2::new(c1x, c1y);
            let c2 = Vector2::new(c2x, c2y);
            let points: Vec<Vector2<f64>> = match circle_intersections(c1, r1, c2, r2).unwrap() {
                CircleIntersection::Pair(a, b) => vec![a, b],
                CircleIntersection::Tangent(_) | CircleIntersection::Empty => vec![],
            };
            for p in points {
                prop_assert!(((p - c1).norm() - r1).abs() < 1e-6);
                prop_assert!(((p - c2).norm() - r2).abs() < 1e-6);
            }
        }

        #[test]
        fn perfect_voting_exact_for_random_keypoints(
            kx in -30.0f64..90.0,
            ky in -30.0f64..90.0,
            seed in 0u64..1000,
        ) {
            let keypoint = Vector2::new(kx, ky);
            let field = DistanceField::from_keypoint(keypoint, 32, 32, 0);
            let config = VotingConfig {
                num_voters: 64,
                num_triples: 16,
                seed,
                ..VotingConfig::default()
            };
            let won = vote_keypoint(&field, |_, _| true, &config).unwrap();
            prop_assert!((won.location - keypoint).norm() < 0.5);
        }
    }
}
