//! Keypoint distance fields and distance-based RANSAC voting for 2D
//! keypoint localization, with 6D pose recovery and evaluation metrics.
//!
//! A keypoint distance field stores, for every image element, the Euclidean
//! distance to one projected object keypoint. Keypoints are recovered from
//! such fields by sampling voter triples, intersecting their implied
//! circles, and keeping the hypothesis with the largest distance-consensus
//! among voters; poses then follow from 2D-3D correspondences (PnP) or
//! stereo triangulation plus rigid alignment.
//!
//! The numeric core is generic over the scalar type through [`Real`];
//! concrete `f32`/`f64` aliases for the main types are exported below.
//! The [`synth`] module generates the thin-stick scenes used to compare
//! distance-based voting against a direction-based baseline under keypoint
//! occlusion without any learned predictor.

pub mod field;
pub mod geom;
pub mod metrics;
pub mod pose;
pub mod scalar;
pub mod synth;
pub mod voting;

pub use scalar::{cast, Real};

/// `f64` instantiations — the default precision for estimation work.
pub type Pose64 = geom::Pose<f64>;
pub type CameraIntrinsics64 = geom::CameraIntrinsics<f64>;
pub type ObjectModel64 = geom::ObjectModel<f64>;
pub type DistanceField64 = field::DistanceField<f64>;
pub type DirectionField64 = voting::DirectionField<f64>;
pub type LossConfig64 = field::LossConfig<f64>;
pub type VotingConfig64 = voting::VotingConfig<f64>;
pub type Hypothesis64 = voting::Hypothesis<f64>;
pub type NoiseModel64 = synth::NoiseModel<f64>;

/// `f32` instantiations — matching the storage precision of the binary
/// field format.
pub type Pose32 = geom::Pose<f32>;
pub type CameraIntrinsics32 = geom::CameraIntrinsics<f32>;
pub type DistanceField32 = field::DistanceField<f32>;
pub type DirectionField32 = voting::DirectionField<f32>;
