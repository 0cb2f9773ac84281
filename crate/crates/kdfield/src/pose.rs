//! 6D pose recovery: Perspective-n-Point from 2D-3D correspondences and
//! rigid alignment from stereo-triangulated keypoints.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, GeomError, Pose};
use crate::scalar::{cast, Real};

/// Maximum damped Gauss-Newton iterations.
pub const MAX_REFINE_ITERATIONS: usize = 100;

/// Convergence threshold on the 6-dof update step norm.
pub const STEP_TOLERANCE: f64 = 1e-10;

/// Errors from pose estimation.
#[derive(Debug, Error)]
pub enum PoseError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate configuration: {reason}")]
    Degenerate { reason: String },
    #[error("non-positive stereo disparity {disparity}")]
    NonPositiveDisparity { disparity: f64 },
    #[error("point sets have different lengths {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// A 3D model point paired with its observed 2D projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub point3: Vector3<T>,
    pub point2: Vector2<T>,
    pub weight: T,
}

impl<T: Real> Correspondence<T> {
    pub fn new(point3: Vector3<T>, point2: Vector2<T>) -> Self {
        Self {
            point3,
            point2,
            weight: T::one(),
        }
    }

    pub fn with_weight(mut self, weight: T) -> Self {
        self.weight = weight;
        self
    }
}

/// Rectified stereo rig: two pinhole cameras separated by a horizontal
/// baseline, sharing epipolar lines with image rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig<T: Real> {
    pub left: CameraIntrinsics<T>,
    pub right: CameraIntrinsics<T>,
    pub baseline: T,
}

/// Output of [`solve_pnp`]: the refined pose, its RMS reprojection error in
/// pixels, and whether the refinement converged within the iteration
/// budget. A non-converged solution is the best iterate reached.
#[derive(Debug, Clone, Copy)]
pub struct PnpSolution<T: Real> {
    pub pose: Pose<T>,
    pub rmse: T,
    pub iterations: usize,
    pub converged: bool,
}

fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Rodrigues exponential map from an axis-angle vector to a rotation.
fn so3_exp<T: Real>(omega: &Vector3<T>) -> Matrix3<T> {
    let angle_sq = omega.norm_squared();
    let angle = angle_sq.sqrt();
    let k = skew(omega);
    let (a, b) = if angle < cast::<T>(1e-8) {
        // Series expansion keeps the map smooth through zero.
        (
            T::one() - angle_sq / cast::<T>(6.0),
            cast::<T>(0.5) - angle_sq / cast::<T>(24.0),
        )
    } else {
        (angle.sin() / angle, (T::one() - angle.cos()) / angle_sq)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Largest and second-largest eigenvalues of the 3D scatter of a point set.
fn scatter_spread<T: Real>(points: &[Vector3<T>]) -> (T, T) {
    let inv_n = T::one() / cast::<T>(points.len() as f64);
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov *= inv_n;
    let mut eig: Vec<T> = nalgebra::SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    (eig[0], eig[1])
}

fn check_not_collinear<T: Real>(points: &[Vector3<T>]) -> Result<(), PoseError> {
    let (largest, second) = scatter_spread(points);
    if largest <= T::zero() || second <= cast::<T>(1e-10) * largest {
        return Err(PoseError::Degenerate {
            reason: "3D points are collinear or coincident".into(),
        });
    }
    Ok(())
}

/// Weighted squared reprojection cost; `None` if any point falls at or
/// behind the camera.
fn reprojection_cost<T: Real>(
    pose: &Pose<T>,
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
) -> Option<T> {
    let mut cost = T::zero();
    for c in correspondences {
        let pc = pose.apply(&c.point3);
        if pc.z <= T::zero() {
            return None;
        }
        let proj = Vector2::new(
            intrinsics.fx * pc.x / pc.z + intrinsics.cx,
            intrinsics.fy * pc.y / pc.z + intrinsics.cy,
        );
        cost += c.weight * (proj - c.point2).norm_squared();
    }
    Some(cost)
}

/// Direct linear transform initialization in normalized image coordinates.
/// Needs at least 6 correspondences to determine the 11-dof projection.
fn dlt_init<T: Real>(
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
) -> Result<Pose<T>, PoseError> {
    let n = correspondences.len();
    let inv_n = T::one() / cast::<T>(n as f64);
    let centroid = correspondences
        .iter()
        .fold(Vector3::zeros(), |a, c| a + c.point3)
        * inv_n;
    let mean_dist = correspondences
        .iter()
        .fold(T::zero(), |a, c| a + (c.point3 - centroid).norm())
        * inv_n;
    if mean_dist <= T::zero() {
        return Err(PoseError::Degenerate {
            reason: "3D points coincide".into(),
        });
    }
    let scale = cast::<T>(3.0).sqrt() / mean_dist;

    let mut a = DMatrix::<T>::zeros(2 * n, 12);
    for (i, c) in correspondences.iter().enumerate() {
        let p = (c.point3 - centroid) * scale;
        let x = (c.point2.x - intrinsics.cx) / intrinsics.fx;
        let y = (c.point2.y - intrinsics.cy) / intrinsics.fy;
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[(r0, 0)] = p.x;
        a[(r0, 1)] = p.y;
        a[(r0, 2)] = p.z;
        a[(r0, 3)] = T::one();
        a[(r0, 8)] = -x * p.x;
        a[(r0, 9)] = -x * p.y;
        a[(r0, 10)] = -x * p.z;
        a[(r0, 11)] = -x;
        a[(r1, 4)] = p.x;
        a[(r1, 5)] = p.y;
        a[(r1, 6)] = p.z;
        a[(r1, 7)] = T::one();
        a[(r1, 8)] = -y * p.x;
        a[(r1, 9)] = -y * p.y;
        a[(r1, 10)] = -y * p.z;
        a[(r1, 11)] = -y;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(PoseError::SvdFailed)?;
    let mut min_idx = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let p_vec = v_t.row(min_idx);

    let mut m = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p_vec[4 * r + c];
        }
    }
    let mut t = Vector3::new(p_vec[3], p_vec[7], p_vec[11]);

    // Undo the 3D normalization: P_orig = P_norm * [sI, -s*centroid; 0, 1].
    t = t - m * centroid * scale;
    m *= scale;

    if m.determinant() < T::zero() {
        m = -m;
        t = -t;
    }
    let sigma =
        (m.row(0).norm() + m.row(1).norm() + m.row(2).norm()) / cast::<T>(3.0);
    if sigma <= T::zero() {
        return Err(PoseError::Degenerate {
            reason: "rank-deficient projection from DLT".into(),
        });
    }
    m /= sigma;
    t /= sigma;

    Ok(Pose::new(m, t).orthonormalized())
}

/// Damped Gauss-Newton refinement of the reprojection objective. Steps that
/// would increase the cost are rejected and retried with more damping, so
/// the objective never increases between accepted iterates.
fn refine<T: Real>(
    init: Pose<T>,
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
) -> (Pose<T>, usize, bool) {
    let mut pose = init;
    let mut cost = match reprojection_cost(&pose, correspondences, intrinsics) {
        Some(c) => c,
        None => return (pose, 0, false),
    };
    let mut lambda = cast::<T>(1e-6);
    let step_tol = cast::<T>(STEP_TOLERANCE);
    let mut converged = false;
    let mut iterations = 0;

    'outer: for _ in 0..MAX_REFINE_ITERATIONS {
        iterations += 1;
        let mut h = Matrix6::<T>::zeros();
        let mut g = Vector6::<T>::zeros();
        for c in correspondences {
            let pc = pose.apply(&c.point3);
            if pc.z <= T::zero() {
                return (pose, iterations, false);
            }
            let inv_z = T::one() / pc.z;
            let proj = Vector2::new(
                intrinsics.fx * pc.x * inv_z + intrinsics.cx,
                intrinsics.fy * pc.y * inv_z + intrinsics.cy,
            );
            let residual = proj - c.point2;
            // d(proj)/d(camera point)
            let j_proj = nalgebra::Matrix2x3::new(
                intrinsics.fx * inv_z,
                T::zero(),
                -intrinsics.fx * pc.x * inv_z * inv_z,
                T::zero(),
                intrinsics.fy * inv_z,
                -intrinsics.fy * pc.y * inv_z * inv_z,
            );
            // d(camera point)/d(rotation, translation) with a left-applied
            // increment: p = exp(w^) R x + T + dt.
            let rx = pc - pose.translation;
            let mut j = nalgebra::Matrix2x6::<T>::zeros();
            let j_rot = j_proj * (-skew(&rx));
            let j_tr = j_proj;
            for r in 0..2 {
                for c2 in 0..3 {
                    j[(r, c2)] = j_rot[(r, c2)];
                    j[(r, c2 + 3)] = j_tr[(r, c2)];
                }
            }
            h += j.transpose() * j * c.weight;
            g += j.transpose() * residual * c.weight;
        }

        // Try increasingly damped steps until one lowers the cost.
        for _ in 0..12 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda;
            }
            let step = match damped.cholesky() {
                Some(chol) => chol.solve(&(-g)),
                None => {
                    lambda *= cast::<T>(10.0);
                    continue;
                }
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let delta_t = Vector3::new(step[3], step[4], step[5]);
            let candidate = Pose::new(
                so3_exp(&omega) * pose.rotation,
                pose.translation + delta_t,
            );
            match reprojection_cost(&candidate, correspondences, intrinsics) {
                Some(new_cost) if new_cost < cost => {
                    pose = candidate;
                    cost = new_cost;
                    lambda = (lambda / cast::<T>(10.0)).max(cast::<T>(1e-12));
                    if step.norm() < step_tol {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
                _ => {
                    if step.norm() < step_tol {
                        // No useful descent direction remains.
                        converged = true;
                        break 'outer;
                    }
                    lambda *= cast::<T>(10.0);
                }
            }
        }
        // Damping exhausted without an acceptable step: stationary point.
        converged = true;
        break;
    }
    (pose, iterations, converged)
}

/// Solves Perspective-n-Point by DLT initialization followed by damped
/// Gauss-Newton minimization of the reprojection error.
///
/// With fewer than 6 correspondences the DLT system is underdetermined, so
/// refinement starts from a set of canonical in-front-of-camera guesses and
/// the lowest-cost result wins.
pub fn solve_pnp<T: Real>(
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
) -> Result<PnpSolution<T>, PoseError> {
    if correspondences.len() < 4 {
        return Err(PoseError::TooFewCorrespondences {
            needed: 4,
            got: correspondences.len(),
        });
    }
    let points: Vec<Vector3<T>> = correspondences.iter().map(|c| c.point3).collect();
    check_not_collinear(&points)?;

    let mut inits: Vec<Pose<T>> = Vec::new();
    if correspondences.len() >= 6 {
        if let Ok(pose) = dlt_init(correspondences, intrinsics) {
            inits.push(pose);
        }
    }
    if inits.is_empty() {
        let inv_n = T::one() / cast::<T>(points.len() as f64);
        let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
        let spread = points
            .iter()
            .fold(T::zero(), |a, p| a + (p - centroid).norm())
            * inv_n;
        for depth_factor in [2.0, 5.0, 10.0] {
            let depth = spread.max(cast::<T>(1e-3)) * cast::<T>(depth_factor);
            let translation = Vector3::new(T::zero(), T::zero(), depth) - centroid;
            inits.push(Pose::new(Matrix3::identity(), translation));
        }
    }

    let mut best: Option<(T, Pose<T>, usize, bool)> = None;
    for init in inits {
        let (pose, iterations, converged) = refine(init, correspondences, intrinsics);
        let cost = reprojection_cost(&pose, correspondences, intrinsics)
            .unwrap_or_else(|| cast::<T>(f64::INFINITY));
        if best
            .as_ref()
            .map_or(true, |(best_cost, ..)| cost < *best_cost)
        {
            best = Some((cost, pose, iterations, converged));
        }
    }
    let (_, pose, iterations, converged) = best.expect("at least one initialization");
    let rmse = reprojection_rmse(&pose, correspondences, intrinsics)
        .unwrap_or_else(|_| cast::<T>(f64::INFINITY));
    Ok(PnpSolution {
        pose,
        rmse,
        iterations,
        converged,
    })
}

/// Root-mean-square reprojection error in pixels.
pub fn reprojection_rmse<T: Real>(
    pose: &Pose<T>,
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
) -> Result<T, PoseError> {
    if correspondences.is_empty() {
        return Err(PoseError::TooFewCorrespondences { needed: 1, got: 0 });
    }
    let mut sum_sq = T::zero();
    for c in correspondences {
        let proj = crate::geom::project(&c.point3, pose, intrinsics)?;
        sum_sq += (proj - c.point2).norm_squared();
    }
    Ok((sum_sq / cast::<T>(correspondences.len() as f64)).sqrt())
}

/// Triangulates a rectified stereo observation: `Z = fx·baseline/disparity`,
/// X and Y by back-projection through the left camera (with the row taken
/// as the mean of the two views).
pub fn triangulate_stereo<T: Real>(
    left_kp: Vector2<T>,
    right_kp: Vector2<T>,
    rig: &StereoRig<T>,
) -> Result<Vector3<T>, PoseError> {
    let disparity = left_kp.x - right_kp.x;
    if disparity <= T::zero() {
        return Err(PoseError::NonPositiveDisparity {
            disparity: disparity.to_f64().unwrap_or(f64::NAN),
        });
    }
    let z = rig.left.fx * rig.baseline / disparity;
    let x = (left_kp.x - rig.left.cx) * z / rig.left.fx;
    let row = (left_kp.y + right_kp.y) * cast::<T>(0.5);
    let y = (row - rig.left.cy) * z / rig.left.fy;
    Ok(Vector3::new(x, y, z))
}

/// Least-squares rigid alignment (Orthogonal Procrustes with translation):
/// finds the pose minimizing `Σ ‖R s_i + T - t_i‖²`, forcing a proper
/// rotation even when the unconstrained optimum is a reflection.
pub fn procrustes_fit<T: Real>(
    source: &[Vector3<T>],
    target: &[Vector3<T>],
) -> Result<Pose<T>, PoseError> {
    if source.len() != target.len() {
        return Err(PoseError::LengthMismatch(source.len(), target.len()));
    }
    if source.len() < 3 {
        return Err(PoseError::TooFewCorrespondences {
            needed: 3,
            got: source.len(),
        });
    }
    check_not_collinear(source)?;

    let inv_n = T::one() / cast::<T>(source.len() as f64);
    let s_centroid = source.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let t_centroid = target.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;

    let mut cross_cov = Matrix3::zeros();
    for (s, t) in source.iter().zip(target.iter()) {
        cross_cov += (s - s_centroid) * (t - t_centroid).transpose();
    }
    let svd = cross_cov.svd(true, true);
    let u = svd.u.ok_or(PoseError::SvdFailed)?;
    let v_t = svd.v_t.ok_or(PoseError::SvdFailed)?;
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        d[(2, 2)] = -T::one();
    }
    let rotation = v * d * u.transpose();
    let translation = t_centroid - rotation * s_centroid;
    Ok(Pose::new(rotation, translation))
}

/// RMS alignment residual of a fitted rigid transform.
pub fn alignment_rmse<T: Real>(pose: &Pose<T>, source: &[Vector3<T>], target: &[Vector3<T>]) -> T {
    let sum: T = source
        .iter()
        .zip(target.iter())
        .fold(T::zero(), |a, (s, t)| {
            a + (pose.apply(s) - t).norm_squared()
        });
    (sum / cast::<T>(source.len() as f64)).sqrt()
}
