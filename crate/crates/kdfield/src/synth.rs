//! Synthetic scene generation for the thin-stick keypoint study: analytic
//! capsule masks (no mesh rendering), keypoint occlusion injection, and the
//! parameterized noise model that stands in for a learned field predictor.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DistanceField, LossConfig, MIN_DISTANCE};
use crate::geom::{project, CameraIntrinsics, GeomError, Pose};
use crate::scalar::{cast, Real};
use crate::voting::DirectionField;

/// Errors from synthetic data generation.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid stick: {reason}")]
    InvalidStick { reason: String },
    #[error("invalid noise model: {reason}")]
    InvalidNoise { reason: String },
    #[error("stick mask is empty for this pose")]
    EmptyMask,
    #[error("mask run-length data is inconsistent: {reason}")]
    BadRunLength { reason: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("scene JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Idealized long, thin object: a capsule around a line segment, with
/// equally spaced keypoints along the axis (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickObject<T: Real> {
    pub length: T,
    pub radius: T,
    pub num_keypoints: usize,
}

impl<T: Real> StickObject<T> {
    /// Builds a stick, enforcing the thin-object regime
    /// (`radius <= length / 10`) and at least two keypoints.
    pub fn new(length: T, radius: T, num_keypoints: usize) -> Result<Self, SynthError> {
        if !(length > T::zero()) || !(radius > T::zero()) {
            return Err(SynthError::InvalidStick {
                reason: "length and radius must be positive".into(),
            });
        }
        if radius * cast::<T>(10.0) > length {
            return Err(SynthError::InvalidStick {
                reason: "stick must be thin: radius <= length / 10".into(),
            });
        }
        if num_keypoints < 2 {
            return Err(SynthError::InvalidStick {
                reason: "need at least 2 keypoints along the axis".into(),
            });
        }
        Ok(Self {
            length,
            radius,
            num_keypoints,
        })
    }

    /// Model-frame axis endpoints: the segment spans `[-L/2, L/2]` along z.
    pub fn axis_endpoints(&self) -> (Vector3<T>, Vector3<T>) {
        let half = self.length * cast::<T>(0.5);
        (
            Vector3::new(T::zero(), T::zero(), -half),
            Vector3::new(T::zero(), T::zero(), half),
        )
    }

    /// Model-frame keypoints, equally spaced along the axis including both
    /// endpoints.
    pub fn keypoints(&self) -> Vec<Vector3<T>> {
        let half = self.length * cast::<T>(0.5);
        let steps = cast::<T>((self.num_keypoints - 1) as f64);
        (0..self.num_keypoints)
            .map(|i| {
                let t = -half + self.length * cast::<T>(i as f64) / steps;
                Vector3::new(T::zero(), T::zero(), t)
            })
            .collect()
    }
}

impl<T: Real> Default for StickObject<T> {
    /// 50:1 length-to-radius proportions with four keypoints.
    fn default() -> Self {
        Self {
            length: cast(0.5),
            radius: cast(0.01),
            num_keypoints: 4,
        }
    }
}

/// Boolean pixel grid in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn from_fn<F: FnMut(u32, u32) -> bool>(width: u32, height: u32, mut f: F) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn contains(&self, u: u32, v: u32) -> bool {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Set pixels as `(u, v)` coordinates in row-major order.
    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width;
        self.data.iter().enumerate().filter_map(move |(i, &b)| {
            b.then_some(((i as u32) % width, (i as u32) / width))
        })
    }

    /// Row-major run-length encoding, alternating zero-runs and one-runs and
    /// starting with a zero-run.
    pub fn rle_encode(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut count: u32 = 0;
        for &bit in &self.data {
            if bit == current {
                count += 1;
            } else {
                runs.push(count);
                current = bit;
                count = 1;
            }
        }
        runs.push(count);
        runs
    }

    pub fn rle_decode(width: u32, height: u32, runs: &[u32]) -> Result<Self, SynthError> {
        let expected = width as usize * height as usize;
        let mut data = Vec::with_capacity(expected);
        let mut bit = false;
        for &run in runs {
            for _ in 0..run {
                data.push(bit);
            }
            bit = !bit;
        }
        if data.len() != expected {
            return Err(SynthError::BadRunLength {
                reason: format!("runs cover {} pixels, grid has {}", data.len(), expected),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

/// Scene-generation parameters: camera, fixed translation, stick geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    /// Fixed object translation; only the rotation varies between scenes.
    pub translation: Vector3<T>,
    pub stick: StickObject<T>,
}

impl<T: Real> Default for SceneConfig<T> {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(
                cast(280.0),
                cast(280.0),
                cast(128.0),
                cast(128.0),
                256,
                256,
            )
            .expect("default intrinsics are valid"),
            translation: Vector3::new(T::zero(), T::zero(), T::one()),
            stick: StickObject::default(),
        }
    }
}

/// One generated scene: pose, visibility mask, projected keypoints, and the
/// ground-truth distance field of every keypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample<T: Real> {
    pub pose: Pose<T>,
    pub mask: PixelMask,
    pub keypoints2d: Vec<Vector2<T>>,
    pub fields: Vec<DistanceField<T>>,
}

/// Stand-in for a learned predictor's error, with one per-element part and
/// one spatially correlated part.
///
/// Per element: Gaussian noise on the parameterized value `t = ln(D/r)`
/// (relative error growing with distance), a pixel-precision floor added to
/// the distance itself, and sporadic uniform outliers. Direction fields get
/// a per-element angular noise of their own scale, since a direction
/// regressor is a separately trained predictor with its own error floor.
///
/// Correlated across elements: the field is regressed around a jittered
/// keypoint — small sub-pixel jitter on good predictions, plus an
/// occasional gross mislocalization the way a real predictor fails
/// outright on hard views. Correlated errors are what consensus voting
/// cannot average away, and they hit every mask variant identically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T: Real> {
    /// Standard deviation of additive noise on `t = ln(D/r)`.
    pub sigma_t: T,
    /// Pixel-precision floor: std-dev of additive noise on the distance
    /// value itself (pixels). Zero recovers the pure parameterized model.
    pub sigma_px: T,
    /// Per-element angular noise of the direction baseline, radians.
    pub sigma_dir: T,
    /// Sub-pixel std-dev of the correlated keypoint jitter (pixels).
    pub sigma_kp: T,
    /// Probability that a field is regressed around a grossly wrong
    /// location (offset drawn uniformly from
    /// [`FAILURE_OFFSET_MIN`], [`FAILURE_OFFSET_MAX`]).
    pub kp_failure_rate: T,
    /// Probability that an element's value is replaced by a uniform draw.
    pub outlier_fraction: T,
    /// Radius of the circular occluders placed at keypoint locations, px.
    pub occluder_radius: T,
}

/// Gross-mislocalization offset bounds, in pixels.
pub const FAILURE_OFFSET_MIN: f64 = 2.0;
pub const FAILURE_OFFSET_MAX: f64 = 8.0;

impl<T: Real> NoiseModel<T> {
    pub fn new(sigma_t: T, outlier_fraction: T, occluder_radius: T) -> Result<Self, SynthError> {
        if sigma_t < T::zero() {
            return Err(SynthError::InvalidNoise {
                reason: "sigma_t must be non-negative".into(),
            });
        }
        if outlier_fraction < T::zero() || outlier_fraction >= T::one() {
            return Err(SynthError::InvalidNoise {
                reason: "outlier_fraction must lie in [0, 1)".into(),
            });
        }
        Ok(Self {
            sigma_t,
            sigma_px: T::zero(),
            sigma_dir: T::zero(),
            sigma_kp: T::zero(),
            kp_failure_rate: T::zero(),
            outlier_fraction,
            occluder_radius,
        })
    }

    pub fn with_pixel_noise(mut self, sigma_px: T) -> Result<Self, SynthError> {
        if sigma_px < T::zero() {
            return Err(SynthError::InvalidNoise {
                reason: "sigma_px must be non-negative".into(),
            });
        }
        self.sigma_px = sigma_px;
        Ok(self)
    }

    pub fn with_direction_noise(mut self, sigma_dir: T) -> Result<Self, SynthError> {
        if sigma_dir < T::zero() {
            return Err(SynthError::InvalidNoise {
                reason: "sigma_dir must be non-negative".into(),
            });
        }
        self.sigma_dir = sigma_dir;
        Ok(self)
    }

    pub fn with_keypoint_jitter(mut self, sigma_kp: T, failure_rate: T) -> Result<Self, SynthError> {
        if sigma_kp < T::zero() {
            return Err(SynthError::InvalidNoise {
                reason: "sigma_kp must be non-negative".into(),
            });
        }
        if failure_rate < T::zero() || failure_rate >= T::one() {
            return Err(SynthError::InvalidNoise {
                reason: "kp_failure_rate must lie in [0, 1)".into(),
            });
        }
        self.sigma_kp = sigma_kp;
        self.kp_failure_rate = failure_rate;
        Ok(self)
    }

    pub fn noiseless() -> Self {
        Self {
            sigma_t: T::zero(),
            sigma_px: T::zero(),
            sigma_dir: T::zero(),
            sigma_kp: T::zero(),
            kp_failure_rate: T::zero(),
            outlier_fraction: T::zero(),
            occluder_radius: T::zero(),
        }
    }
}

/// Applies the correlated-error component of the noise model: returns the
/// keypoint location the simulated predictor actually regresses around.
/// With probability `kp_failure_rate` the prediction fails grossly (offset
/// magnitude uniform in the failure range, direction uniform); otherwise
/// the keypoint is jittered by an isotropic Gaussian of std `sigma_kp`.
pub fn jitter_keypoint<T: Real, R: Rng>(
    keypoint: Vector2<T>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> Vector2<T> {
    let mut out = keypoint;
    if noise.sigma_kp > T::zero() {
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        out.x += noise.sigma_kp * cast::<T>(zx);
        out.y += noise.sigma_kp * cast::<T>(zy);
    }
    if noise.kp_failure_rate > T::zero()
        && cast::<T>(rng.gen::<f64>()) < noise.kp_failure_rate
    {
        let magnitude =
            FAILURE_OFFSET_MIN + rng.gen::<f64>() * (FAILURE_OFFSET_MAX - FAILURE_OFFSET_MIN);
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        out.x += cast::<T>(magnitude * angle.cos());
        out.y += cast::<T>(magnitude * angle.sin());
    }
    out
}

/// Uniform random rotation via the quaternion subgroup algorithm.
pub fn uniform_rotation<T: Real, R: Rng>(rng: &mut R) -> Matrix3<T> {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let two_pi = std::f64::consts::TAU;
    let (s1, c1) = (two_pi * u2).sin_cos();
    let (s2, c2) = (two_pi * u3).sin_cos();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (qx, qy, qz, qw) = (a * s1, a * c1, b * s2, b * c2);

    let m = [
        [
            1.0 - 2.0 * (qy * qy + qz * qz),
            2.0 * (qx * qy - qz * qw),
            2.0 * (qx * qz + qy * qw),
        ],
        [
            2.0 * (qx * qy + qz * qw),
            1.0 - 2.0 * (qx * qx + qz * qz),
            2.0 * (qy * qz - qx * qw),
        ],
        [
            2.0 * (qx * qz - qy * qw),
            2.0 * (qy * qz + qx * qw),
            1.0 - 2.0 * (qx * qx + qy * qy),
        ],
    ];
    Matrix3::from_fn(|r, c| cast(m[r][c]))
}

/// Generates one scene: a uniformly random rotation at the fixed
/// translation, the analytic capsule mask, projected keypoints, and
/// ground-truth distance fields. Deterministic for a given RNG state.
pub fn make_stick_scene<T: Real, R: Rng>(
    config: &SceneConfig<T>,
    rng: &mut R,
) -> Result<SceneSample<T>, SynthError> {
    let pose = Pose::new(uniform_rotation(rng), config.translation);
    let k = &config.intrinsics;

    let (end_a, end_b) = config.stick.axis_endpoints();
    let cam_a = pose.apply(&end_a);
    let cam_b = pose.apply(&end_b);
    if cam_a.z <= T::zero() || cam_b.z <= T::zero() {
        return Err(SynthError::Geom(GeomError::BehindCamera {
            depth: cam_a.z.min(cam_b.z).to_f64().unwrap_or(f64::NAN),
        }));
    }
    let proj_a = k.project_camera_point(&cam_a)?;
    let proj_b = k.project_camera_point(&cam_b)?;

    let keypoints2d: Vec<Vector2<T>> = config
        .stick
        .keypoints()
        .iter()
        .map(|kp| project(kp, &pose, k))
        .collect::<Result<_, _>>()?;

    let seg = proj_b - proj_a;
    let seg_len_sq = seg.norm_squared();
    let mask = PixelMask::from_fn(k.width, k.height, |u, v| {
        let p = Vector2::new(cast::<T>(u as f64), cast::<T>(v as f64));
        let s = if seg_len_sq > T::zero() {
            ((p - proj_a).dot(&seg) / seg_len_sq)
                .clamp(T::zero(), T::one())
        } else {
            T::zero()
        };
        let closest = proj_a + seg * s;
        // Perspective-correct depth along the axis.
        let inv_z = (T::one() - s) / cam_a.z + s / cam_b.z;
        let projected_radius = k.fx * config.stick.radius * inv_z;
        (p - closest).norm() <= projected_radius
    });
    if mask.count_set() == 0 {
        return Err(SynthError::EmptyMask);
    }

    let fields = keypoints2d
        .iter()
        .enumerate()
        .map(|(i, kp)| DistanceField::from_keypoint(*kp, k.width, k.height, i as u32))
        .collect();

    Ok(SceneSample {
        pose,
        mask,
        keypoints2d,
        fields,
    })
}

/// Removes every mask pixel within `radius` of any projected keypoint.
pub fn occlude_keypoints<T: Real>(
    mask: &PixelMask,
    keypoints2d: &[Vector2<T>],
    radius: T,
) -> PixelMask {
    let radius_sq = radius * radius;
    PixelMask::from_fn(mask.width(), mask.height(), |u, v| {
        if !mask.contains(u, v) {
            return false;
        }
        let p = Vector2::new(cast::<T>(u as f64), cast::<T>(v as f64));
        !keypoints2d
            .iter()
            .any(|kp| (p - kp).norm_squared() <= radius_sq)
    })
}

/// Applies the noise model to a distance field: Gaussian noise on the
/// parameterized value (back-transformed through `r·exp`), an additive
/// pixel-precision floor clamped at zero, then uniform outliers over
/// `[0, image diagonal)`. Zero noise is the bit-exact identity. All draws
/// happen in `f64` so the stream is identical across scalar instantiations.
pub fn corrupt_field<T: Real, R: Rng>(
    field: &DistanceField<T>,
    noise: &NoiseModel<T>,
    loss: &LossConfig<T>,
    rng: &mut R,
) -> DistanceField<T> {
    let mut out = field.clone();
    let diagonal = field.diagonal();
    let sigma = noise.sigma_t;
    let sigma_px = noise.sigma_px;
    let outlier_fraction = noise.outlier_fraction.to_f64().unwrap_or(0.0);
    for value in out.values_mut() {
        if sigma > T::zero() {
            let z: f64 = rng.sample(StandardNormal);
            let t = (value.max(cast::<T>(MIN_DISTANCE)) / loss.r).ln() + sigma * cast::<T>(z);
            *value = loss.r * t.exp();
        }
        if sigma_px > T::zero() {
            let z: f64 = rng.sample(StandardNormal);
            *value = (*value + sigma_px * cast::<T>(z)).max(T::zero());
        }
        if outlier_fraction > 0.0 && rng.gen::<f64>() < outlier_fraction {
            *value = diagonal * cast::<T>(rng.gen::<f64>());
        }
    }
    out
}

/// Direction-field counterpart of [`corrupt_field`]: each unit vector is
/// rotated by a Gaussian angle with std-dev `sigma_dir` radians, and
/// outliers become uniformly random directions. Zero-vector sentinels are
/// preserved.
pub fn corrupt_direction_field<T: Real, R: Rng>(
    field: &DirectionField<T>,
    noise: &NoiseModel<T>,
    rng: &mut R,
) -> DirectionField<T> {
    let mut out = field.clone();
    let sigma = noise.sigma_dir.to_f64().unwrap_or(0.0);
    let outlier_fraction = noise.outlier_fraction.to_f64().unwrap_or(0.0);
    for value in out.values_mut() {
        if *value == Vector2::zeros() {
            continue;
        }
        if sigma > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            let (sin, cos) = (sigma * z).sin_cos();
            let (s, c) = (cast::<T>(sin), cast::<T>(cos));
            *value = Vector2::new(c * value.x - s * value.y, s * value.x + c * value.y);
        }
        if outlier_fraction > 0.0 && rng.gen::<f64>() < outlier_fraction {
            let angle = rng.gen::<f64>() * std::f64::consts::TAU;
            *value = Vector2::new(cast(angle.cos()), cast(angle.sin()));
        }
    }
    out
}

/// Serialized form of a scene: pose, keypoints, and the run-length encoded
/// mask. Ground-truth fields are reconstructed from the keypoints on read;
/// predicted fields travel separately in the binary field format.
#[derive(Debug, Serialize, Deserialize)]
pub struct SceneDoc {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub keypoints2d: Vec<[f64; 2]>,
    pub mask_width: u32,
    pub mask_height: u32,
    pub mask_runs: Vec<u32>,
}

impl<T: Real> SceneSample<T> {
    pub fn to_doc(&self) -> SceneDoc {
        let r = &self.pose.rotation;
        let as_f64 = |v: T| v.to_f64().unwrap_or(f64::NAN);
        SceneDoc {
            rotation: [
                as_f64(r[(0, 0)]),
                as_f64(r[(0, 1)]),
                as_f64(r[(0, 2)]),
                as_f64(r[(1, 0)]),
                as_f64(r[(1, 1)]),
                as_f64(r[(1, 2)]),
                as_f64(r[(2, 0)]),
                as_f64(r[(2, 1)]),
                as_f64(r[(2, 2)]),
            ],
            translation: [
                as_f64(self.pose.translation.x),
                as_f64(self.pose.translation.y),
                as_f64(self.pose.translation.z),
            ],
            keypoints2d: self
                .keypoints2d
                .iter()
                .map(|kp| [as_f64(kp.x), as_f64(kp.y)])
                .collect(),
            mask_width: self.mask.width(),
            mask_height: self.mask.height(),
            mask_runs: self.mask.rle_encode(),
        }
    }

    pub fn from_doc(doc: &SceneDoc) -> Result<Self, SynthError> {
        let rotation = Matrix3::from_fn(|r, c| cast::<T>(doc.rotation[3 * r + c]));
        let translation = Vector3::new(
            cast(doc.translation[0]),
            cast(doc.translation[1]),
            cast(doc.translation[2]),
        );
        let mask = PixelMask::rle_decode(doc.mask_width, doc.mask_height, &doc.mask_runs)?;
        let keypoints2d: Vec<Vector2<T>> = doc
            .keypoints2d
            .iter()
            .map(|kp| Vector2::new(cast(kp[0]), cast(kp[1])))
            .collect();
        let fields = keypoints2d
            .iter()
            .enumerate()
            .map(|(i, kp)| {
                DistanceField::from_keypoint(*kp, doc.mask_width, doc.mask_height, i as u32)
            })
            .collect();
        Ok(Self {
            pose: Pose::new(rotation, translation),
            mask,
            keypoints2d,
            fields,
        })
    }
}
