//! Rigid-body poses, pinhole camera projection, and keypoint selection.
//!
//! Everything here is pure and immutable after construction: poses and
//! models can be shared freely across threads.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{cast, Real};

/// Errors from geometric primitives.
#[derive(Debug, Error)]
pub enum GeomError {
    /// A point ended up at non-positive depth in the camera frame.
    #[error("point has non-positive depth {depth} in camera frame")]
    BehindCamera { depth: f64 },
    /// Requested more samples than there are points.
    #[error("sample count {count} exceeds available points {available}")]
    SampleCountExceedsPoints { count: usize, available: usize },
    /// An operation that needs points received none.
    #[error("point set is empty")]
    EmptyPointSet,
    /// A symmetry permutation is not a bijection on its index range.
    #[error("invalid symmetry permutation: {reason}")]
    InvalidPermutation { reason: String },
    /// Object model violates a structural invariant.
    #[error("invalid object model: {reason}")]
    InvalidModel { reason: String },
    /// Camera intrinsics violate a structural invariant.
    #[error("invalid camera intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
    /// Model (de)serialization failure.
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Rigid transform from the model frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    /// Orthonormal rotation matrix with determinant +1.
    pub rotation: Matrix3<T>,
    /// Translation in meters.
    pub translation: Vector3<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Applies the transform: `R x + T`.
    #[inline]
    pub fn apply(&self, point: &Vector3<T>) -> Vector3<T> {
        self.rotation * point + self.translation
    }

    /// Inverse transform, mapping camera frame back to model frame.
    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Composition `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Projects the stored rotation back onto SO(3) via SVD.
    ///
    /// Intended for poses reconstructed from serialized or estimated data,
    /// where round-off can leave the matrix slightly non-orthonormal.
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let u = svd.u.expect("3x3 SVD produces U");
        let v_t = svd.v_t.expect("3x3 SVD produces V^T");
        let mut rot = u * v_t;
        if rot.determinant() < T::zero() {
            let mut u_flip = u;
            u_flip.column_mut(2).neg_mut();
            rot = u_flip * v_t;
        }
        Self {
            rotation: rot,
            translation: self.translation,
        }
    }

    /// Largest deviation from orthonormality: `max |RᵀR − I|` plus `|det R − 1|`.
    pub fn orthonormality_error(&self) -> T {
        let gram = self.rotation.transpose() * self.rotation;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst + (self.rotation.determinant() - T::one()).abs()
    }

    /// Geodesic rotation distance to `other`, in radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        let trace = rel[(0, 0)] + rel[(1, 1)] + rel[(2, 2)];
        let half = cast::<T>(0.5);
        let cos_angle = ((trace - T::one()) * half).clamp(-T::one(), T::one());
        cos_angle.acos()
    }
}

/// Pinhole camera parameters plus the image raster size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self, GeomError> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(GeomError::InvalidIntrinsics {
                reason: "focal lengths must be positive".into(),
            });
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidIntrinsics {
                reason: "image size must be at least 1x1".into(),
            });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point through the pinhole model.
    #[inline]
    pub fn project_camera_point(&self, point: &Vector3<T>) -> Result<Vector2<T>, GeomError> {
        if point.z <= T::zero() {
            return Err(GeomError::BehindCamera {
                depth: point.z.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Vector2::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Whether a pixel position falls inside `[0, W) x [0, H)`.
    pub fn contains(&self, point: &Vector2<T>) -> bool {
        point.x >= T::zero()
            && point.y >= T::zero()
            && point.x < cast(self.width as f64)
            && point.y < cast(self.height as f64)
    }
}

/// Projects a model-frame point into the image: `Π(R x + T)`.
///
/// The result may lie outside the image bounds; only non-positive depth is
/// an error.
pub fn project<T: Real>(
    point: &Vector3<T>,
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<Vector2<T>, GeomError> {
    intrinsics.project_camera_point(&pose.apply(point))
}

/// Applies `R x + T` to every point.
pub fn transform_points<T: Real>(points: &[Vector3<T>], pose: &Pose<T>) -> Vec<Vector3<T>> {
    points.iter().map(|p| pose.apply(p)).collect()
}

/// Greedy farthest point sampling.
///
/// The seed is the point farthest from the centroid; every subsequent pick
/// maximizes the minimum distance to the already-selected set. Ties resolve
/// to the lowest index, so the output is deterministic for a given input
/// order.
pub fn farthest_point_sample<T: Real>(
    points: &[Vector3<T>],
    count: usize,
) -> Result<Vec<Vector3<T>>, GeomError> {
    if points.is_empty() {
        return Err(GeomError::EmptyPointSet);
    }
    if count > points.len() {
        return Err(GeomError::SampleCountExceedsPoints {
            count,
            available: points.len(),
        });
    }

    let inv_n = T::one() / cast::<T>(points.len() as f64);
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) * inv_n;

    let seed = argmax_by_distance(points.iter().map(|p| (p - centroid).norm_squared()));
    let mut selected = Vec::with_capacity(count);
    let mut min_dist: Vec<T> = points
        .iter()
        .map(|p| (p - points[seed]).norm_squared())
        .collect();
    if count > 0 {
        selected.push(points[seed]);
    }
    while selected.len() < count {
        let next = argmax_by_distance(min_dist.iter().copied());
        selected.push(points[next]);
        for (dist, p) in min_dist.iter_mut().zip(points.iter()) {
            let cand = (p - points[next]).norm_squared();
            if cand < *dist {
                *dist = cand;
            }
        }
    }
    Ok(selected)
}

fn argmax_by_distance<T: Real>(values: impl Iterator<Item = T>) -> usize {
    let mut best_idx = 0;
    let mut best = None;
    for (idx, value) in values.enumerate() {
        if best.map_or(true, |b| value > b) {
            best = Some(value);
            best_idx = idx;
        }
    }
    best_idx
}

/// Exact maximum pairwise distance of a point set.
///
/// Quadratic scan; the models handled here stay well under 10k points.
pub fn diameter<T: Real>(points: &[Vector3<T>]) -> T {
    let mut max_sq = T::zero();
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = (a - b).norm_squared();
            if d > max_sq {
                max_sq = d;
            }
        }
    }
    max_sq.sqrt()
}

/// Axis of a continuous rotational symmetry: a 3D line through `point`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryAxis<T: Real> {
    pub point: Vector3<T>,
    pub direction: Vector3<T>,
}

/// Discrete (and optionally continuous) symmetry of a keypoint subset.
///
/// Permutations act on indices `0..len` of the symmetric keypoint subset.
/// The identity permutation is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup<T: Real> {
    permutations: Vec<Vec<usize>>,
    pub axis: Option<SymmetryAxis<T>>,
}

impl<T: Real> SymmetryGroup<T> {
    /// Identity-only group over a subset of `len` keypoints.
    pub fn trivial(len: usize) -> Self {
        Self {
            permutations: vec![(0..len).collect()],
            axis: None,
        }
    }

    /// Builds a group from explicit permutations, validating each is a
    /// bijection and inserting the identity if absent.
    pub fn new(permutations: Vec<Vec<usize>>) -> Result<Self, GeomError> {
        if permutations.is_empty() {
            return Err(GeomError::InvalidPermutation {
                reason: "at least one permutation is required".into(),
            });
        }
        let len = permutations[0].len();
        for perm in &permutations {
            if perm.len() != len {
                return Err(GeomError::InvalidPermutation {
                    reason: format!("mixed permutation lengths {} vs {}", perm.len(), len),
                });
            }
            let mut seen = vec![false; len];
            for &idx in perm {
                if idx >= len || seen[idx] {
                    return Err(GeomError::InvalidPermutation {
                        reason: format!("index {idx} repeated or out of range 0..{len}"),
                    });
                }
                seen[idx] = true;
            }
        }
        let identity: Vec<usize> = (0..len).collect();
        let mut permutations = permutations;
        if !permutations.iter().any(|p| *p == identity) {
            permutations.insert(0, identity);
        }
        Ok(Self {
            permutations,
            axis: None,
        })
    }

    pub fn with_axis(mut self, axis: SymmetryAxis<T>) -> Self {
        self.axis = Some(axis);
        self
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    /// Number of keypoints the permutations act on.
    pub fn subset_len(&self) -> usize {
        self.permutations[0].len()
    }

    /// True when the group is the identity alone and no continuous axis is set.
    pub fn is_trivial(&self) -> bool {
        self.permutations.len() == 1 && self.axis.is_none()
    }
}

/// A rigid object: its surface point set, keypoints, diameter, and symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel<T: Real> {
    pub points: Vec<Vector3<T>>,
    pub keypoints: Vec<Vector3<T>>,
    pub diameter: T,
    pub symmetry: SymmetryGroup<T>,
}

impl<T: Real> ObjectModel<T> {
    /// Builds a model, computing the diameter and checking invariants:
    /// at least 4 keypoints, each inside the bounding box of the points.
    pub fn new(
        points: Vec<Vector3<T>>,
        keypoints: Vec<Vector3<T>>,
        symmetry: SymmetryGroup<T>,
    ) -> Result<Self, GeomError> {
        if points.is_empty() {
            return Err(GeomError::EmptyPointSet);
        }
        if keypoints.len() < 4 {
            return Err(GeomError::InvalidModel {
                reason: format!("need at least 4 keypoints, got {}", keypoints.len()),
            });
        }
        let (mut lo, mut hi) = (points[0], points[0]);
        for p in &points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let slack = cast::<T>(1e-9);
        for (k, kp) in keypoints.iter().enumerate() {
            for i in 0..3 {
                if kp[i] < lo[i] - slack || kp[i] > hi[i] + slack {
                    return Err(GeomError::InvalidModel {
                        reason: format!("keypoint {k} lies outside the model bounding box"),
                    });
                }
            }
        }
        let diameter = diameter(&points);
        Ok(Self {
            points,
            keypoints,
            diameter,
            symmetry,
        })
    }

    /// Serializes to the flat-array JSON document format.
    pub fn to_json_string(&self) -> Result<String, GeomError> {
        let doc = ModelDoc {
            points: flatten(&self.points),
            keypoints: flatten(&self.keypoints),
            diameter: self.diameter.to_f64().unwrap_or(f64::NAN),
            symmetry: SymmetryDoc {
                permutations: self.symmetry.permutations().to_vec(),
                axis: self.symmetry.axis.map(|a| {
                    [
                        a.point.x.to_f64().unwrap_or(f64::NAN),
                        a.point.y.to_f64().unwrap_or(f64::NAN),
                        a.point.z.to_f64().unwrap_or(f64::NAN),
                        a.direction.x.to_f64().unwrap_or(f64::NAN),
                        a.direction.y.to_f64().unwrap_or(f64::NAN),
                        a.direction.z.to_f64().unwrap_or(f64::NAN),
                    ]
                }),
            },
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Parses the flat-array JSON document format.
    pub fn from_json_str(json: &str) -> Result<Self, GeomError> {
        let doc: ModelDoc = serde_json::from_str(json)?;
        let points = unflatten(&doc.points)?;
        let keypoints = unflatten(&doc.keypoints)?;
        let mut symmetry = SymmetryGroup::new(doc.symmetry.permutations)?;
        if let Some(a) = doc.symmetry.axis {
            symmetry = symmetry.with_axis(SymmetryAxis {
                point: Vector3::new(cast(a[0]), cast(a[1]), cast(a[2])),
                direction: Vector3::new(cast(a[3]), cast(a[4]), cast(a[5])),
            });
        }
        let model = Self::new(points, keypoints, symmetry)?;
        let stored = cast::<T>(doc.diameter);
        if (stored - model.diameter).abs() > cast::<T>(1e-6) * model.diameter.max(T::one()) {
            return Err(GeomError::InvalidModel {
                reason: "stored diameter disagrees with recomputed pairwise maximum".into(),
            });
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    points: Vec<f64>,
    keypoints: Vec<f64>,
    diameter: f64,
    symmetry: SymmetryDoc,
}

#[derive(Serialize, Deserialize)]
struct SymmetryDoc {
    permutations: Vec<Vec<usize>>,
    #[serde(default)]
    axis: Option<[f64; 6]>,
}

fn flatten<T: Real>(points: &[Vector3<T>]) -> Vec<f64> {
    points
        .iter()
        .flat_map(|p| [p.x, p.y, p.z])
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect()
}

fn unflatten<T: Real>(values: &[f64]) -> Result<Vec<Vector3<T>>, GeomError> {
    if values.len() % 3 != 0 {
        return Err(GeomError::InvalidModel {
            reason: format!("flat point array length {} is not a multiple of 3", values.len()),
        });
    }
    Ok(values
        .chunks_exact(3)
        .map(|c| Vector3::new(cast(c[0]), cast(c[1]), cast(c[2])))
        .collect())
}
