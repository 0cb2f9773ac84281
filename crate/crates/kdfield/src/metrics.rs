//! Pose evaluation metrics: ADD, ADD-S, 2D projection error, thresholded
//! accuracy, and area under the accuracy-threshold curve.

use std::collections::HashMap;

use thiserror::Error;

use nalgebra::Vector3;

use crate::geom::{project, CameraIntrinsics, GeomError, ObjectModel, Pose};
use crate::scalar::{cast, Real};

/// Point count above which ADD-S switches from the exact quadratic scan to
/// a uniform-grid nearest-neighbor search.
pub const ADDS_EXACT_LIMIT: usize = 2000;

/// Errors from metric evaluation.
#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("distance list is empty")]
    EmptyDistances,
    #[error("threshold must be positive, got {got}")]
    InvalidThreshold { got: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Decision thresholds used by the evaluation reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalThresholds<T: Real> {
    /// ADD(-S) correctness threshold as a fraction of the model diameter.
    pub add_fraction: T,
    /// 2D projection correctness threshold in pixels.
    pub proj_pixels: T,
    /// Stricter projection threshold used by the synthetic keypoint study.
    pub toy_proj_pixels: T,
    /// Upper integration limit of the accuracy-threshold curve, in meters.
    pub auc_max: T,
}

impl<T: Real> Default for EvalThresholds<T> {
    fn default() -> Self {
        Self {
            add_fraction: cast(0.1),
            proj_pixels: cast(5.0),
            toy_proj_pixels: cast(1.0),
            auc_max: cast(0.10),
        }
    }
}

/// Mean 3D distance between the model points transformed by the estimated
/// and ground-truth poses, with matched indices.
pub fn add_distance<T: Real>(pose: &Pose<T>, gt_pose: &Pose<T>, model: &ObjectModel<T>) -> T {
    let mut sum = T::zero();
    for p in &model.points {
        sum += (pose.apply(p) - gt_pose.apply(p)).norm();
    }
    sum / cast::<T>(model.points.len() as f64)
}

/// Closest-point variant of [`add_distance`] for symmetric objects: each
/// transformed point is matched to its nearest neighbor in the
/// ground-truth-transformed set.
pub fn adds_distance<T: Real>(pose: &Pose<T>, gt_pose: &Pose<T>, model: &ObjectModel<T>) -> T {
    let estimated: Vec<Vector3<T>> = model.points.iter().map(|p| pose.apply(p)).collect();
    let targets: Vec<Vector3<T>> = model.points.iter().map(|p| gt_pose.apply(p)).collect();

    let sum = if targets.len() <= ADDS_EXACT_LIMIT {
        let mut sum = T::zero();
        for e in &estimated {
            let mut best = T::max_value().unwrap_or_else(T::one);
            for t in &targets {
                let d = (e - t).norm_squared();
                if d < best {
                    best = d;
                }
            }
            sum += best.sqrt();
        }
        sum
    } else {
        let grid = NeighborGrid::build(&targets);
        let mut sum = T::zero();
        for e in &estimated {
            sum += grid.nearest_distance_sq(e, &targets).sqrt();
        }
        sum
    };
    sum / cast::<T>(targets.len() as f64)
}

/// Uniform-grid index over a 3D point set for exact nearest-neighbor
/// queries. Searches cell shells of growing radius until no closer point
/// can exist outside the scanned shells.
struct NeighborGrid<T: Real> {
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
    origin: Vector3<T>,
    cell_size: T,
}

impl<T: Real> NeighborGrid<T> {
    fn build(points: &[Vector3<T>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let extent = (hi - lo).norm().max(cast::<T>(1e-12));
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell_size = (extent / cast::<T>(per_axis)).max(cast::<T>(1e-12));
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, &lo, cell_size)).or_default().push(i);
        }
        Self {
            cells,
            origin: lo,
            cell_size,
        }
    }

    fn key(p: &Vector3<T>, origin: &Vector3<T>, cell_size: T) -> (i64, i64, i64) {
        let idx = |v: T| ((v / cell_size).floor().to_f64().unwrap_or(0.0)) as i64;
        (
            idx(p.x - origin.x),
            idx(p.y - origin.y),
            idx(p.z - origin.z),
        )
    }

    fn nearest_distance_sq(&self, query: &Vector3<T>, points: &[Vector3<T>]) -> T {
        let center = Self::key(query, &self.origin, self.cell_size);
        let mut best: Option<T> = None;
        let mut ring: i64 = 0;
        loop {
            for (cx, cy, cz) in ring_cells(center, ring) {
                if let Some(indices) = self.cells.get(&(cx, cy, cz)) {
                    for &i in indices {
                        let d = (query - points[i]).norm_squared();
                        if best.map_or(true, |b| d < b) {
                            best = Some(d);
                        }
                    }
                }
            }
            // Cells in ring k+1 are at least k cell widths away from the
            // query, so once the best distance is within that bound no
            // farther ring can improve it.
            if let Some(b) = best {
                let safe = cast::<T>(ring as f64) * self.cell_size;
                if b.sqrt() <= safe {
                    return b;
                }
            }
            ring += 1;
        }
    }
}

/// Integer offsets of the cubic shell at Chebyshev radius `ring`.
fn ring_cells(center: (i64, i64, i64), ring: i64) -> Vec<(i64, i64, i64)> {
    let mut out = Vec::new();
    if ring == 0 {
        out.push(center);
        return out;
    }
    for dx in -ring..=ring {
        for dy in -ring..=ring {
            for dz in -ring..=ring {
                if dx.abs().max(dy.abs()).max(dz.abs()) == ring {
                    out.push((center.0 + dx, center.1 + dy, center.2 + dz));
                }
            }
        }
    }
    out
}

/// Mean 2D distance between the projections of the model points under the
/// estimated and ground-truth poses.
pub fn proj2d_distance<T: Real>(
    pose: &Pose<T>,
    gt_pose: &Pose<T>,
    model: &ObjectModel<T>,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<T, MetricsError> {
    let mut sum = T::zero();
    for p in &model.points {
        let a = project(p, pose, intrinsics)?;
        let b = project(p, gt_pose, intrinsics)?;
        sum += (a - b).norm();
    }
    Ok(sum / cast::<T>(model.points.len() as f64))
}

/// ADD for asymmetric models, ADD-S when the symmetry group is non-trivial.
pub fn symmetry_aware_distance<T: Real>(
    pose: &Pose<T>,
    gt_pose: &Pose<T>,
    model: &ObjectModel<T>,
) -> T {
    if model.symmetry.is_trivial() {
        add_distance(pose, gt_pose, model)
    } else {
        adds_distance(pose, gt_pose, model)
    }
}

/// Fraction of distances strictly below the threshold.
pub fn accuracy<T: Real>(distances: &[T], threshold: T) -> Result<T, MetricsError> {
    if distances.is_empty() {
        return Err(MetricsError::EmptyDistances);
    }
    if !(threshold > T::zero()) {
        return Err(MetricsError::InvalidThreshold {
            got: threshold.to_f64().unwrap_or(f64::NAN),
        });
    }
    let below = distances.iter().filter(|&&d| d < threshold).count();
    Ok(cast::<T>(below as f64) / cast::<T>(distances.len() as f64))
}

/// Exact area under the accuracy-threshold step curve on `[0, max]`,
/// normalized to `[0, 1]`.
pub fn auc<T: Real>(distances: &[T], max_threshold: T) -> Result<T, MetricsError> {
    if distances.is_empty() {
        return Err(MetricsError::EmptyDistances);
    }
    if !(max_threshold > T::zero()) {
        return Err(MetricsError::InvalidThreshold {
            got: max_threshold.to_f64().unwrap_or(f64::NAN),
        });
    }
    // accuracy(t) jumps by 1/n at each distance, so the integral is the sum
    // of (max - d_i) over distances below the limit.
    let mut area = T::zero();
    for &d in distances {
        if d < max_threshold {
            area += max_threshold - d;
        }
    }
    Ok(area / (max_threshold * cast::<T>(distances.len() as f64)))
}
