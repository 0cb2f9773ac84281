//! Keypoint distance fields: construction, the log-ratio regression
//! parameterization, smooth-L1 losses (plain and symmetry-aware), and the
//! binary field file format.
//!
//! Grid convention: `u` is the column and `v` the row, so the element for
//! pixel `(u, v)` lives at `values[v * width + u]` (row-major storage).

use std::io::{Read, Write};

use nalgebra::Vector2;
use thiserror::Error;

use crate::geom::SymmetryGroup;
use crate::scalar::{cast, Real};

/// Distances at or below this are clamped before the log parameterization;
/// half a pixel is the quantization floor of the grid.
pub const MIN_DISTANCE: f64 = 0.5;

const MAGIC: [u8; 4] = *b"KDF1";

/// Errors from field construction, losses, and the file format.
#[derive(Debug, Error)]
pub enum FieldError {
    #[error("distance {value} is negative or not a number")]
    InvalidDistance { value: f64 },
    #[error("field dimensions {0}x{1} and {2}x{3} differ")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("value buffer holds {got} elements, expected {expected}")]
    BadBufferLength { got: usize, expected: usize },
    #[error("loss support is empty (crop radius excludes every element)")]
    EmptySupport,
    #[error("symmetry group acts on {group} keypoints but {fields} fields were given")]
    PermutationMismatch { group: usize, fields: usize },
    #[error("parameterization constant and threshold must be positive")]
    InvalidLossConfig,
    #[error("bad field file magic {0:?}")]
    BadMagic([u8; 4]),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-keypoint grid of Euclidean pixel distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField<T: Real> {
    values: Vec<T>,
    width: u32,
    height: u32,
    keypoint_index: u32,
}

impl<T: Real> DistanceField<T> {
    /// Ground-truth field for one projected keypoint: every element stores
    /// its Euclidean distance to the keypoint, which may lie outside the
    /// image bounds.
    pub fn from_keypoint(keypoint: Vector2<T>, width: u32, height: u32, keypoint_index: u32) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            let dy = cast::<T>(v as f64) - keypoint.y;
            for u in 0..width {
                let dx = cast::<T>(u as f64) - keypoint.x;
                values.push((dx * dx + dy * dy).sqrt());
            }
        }
        Self {
            values,
            width,
            height,
            keypoint_index,
        }
    }

    /// Wraps an existing buffer; `values.len()` must equal `width * height`.
    pub fn from_values(
        values: Vec<T>,
        width: u32,
        height: u32,
        keypoint_index: u32,
    ) -> Result<Self, FieldError> {
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(FieldError::BadBufferLength {
                got: values.len(),
                expected,
            });
        }
        Ok(Self {
            values,
            width,
            height,
            keypoint_index,
        })
    }

    #[inline]
    pub fn at(&self, u: u32, v: u32) -> T {
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

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> T {
        let w = cast::<T>(self.width as f64);
        let h = cast::<T>(self.height as f64);
        (w * w + h * h).sqrt()
    }

    /// Converts element values to another scalar type through `f64`.
    pub fn convert<U: Real>(&self) -> DistanceField<U> {
        DistanceField {
            values: self
                .values
                .iter()
                .map(|v| cast::<U>(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
            width: self.width,
            height: self.height,
            keypoint_index: self.keypoint_index,
        }
    }
}

/// Parameters of the regression parameterization and loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T: Real> {
    /// Log-ratio constant `r` (pixels): parameterized value is `ln(D / r)`.
    pub r: T,
    /// Smooth-L1 switch threshold between the quadratic and linear branch.
    pub e: T,
    /// When set, the loss is averaged only over elements whose ground-truth
    /// distance is at most this radius.
    pub crop_radius: Option<T>,
}

impl<T: Real> LossConfig<T> {
    pub fn new(r: T, e: T) -> Result<Self, FieldError> {
        if r <= T::zero() || e <= T::zero() {
            return Err(FieldError::InvalidLossConfig);
        }
        Ok(Self {
            r,
            e,
            crop_radius: None,
        })
    }

    pub fn with_crop_radius(mut self, radius: T) -> Self {
        self.crop_radius = Some(radius);
        self
    }

    /// Defaults for a given image size: `r = 16` for 256x256 grids, otherwise
    /// the geometric mean of the smallest representable distance (0.5 px)
    /// and the image diagonal; `e = 1`, crop radius 64 px.
    pub fn default_for_image(width: u32, height: u32) -> Self {
        let r = if width == 256 && height == 256 {
            cast::<T>(16.0)
        } else {
            let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
            cast::<T>((MIN_DISTANCE * diag).sqrt())
        };
        Self {
            r,
            e: T::one(),
            crop_radius: Some(cast::<T>(64.0)),
        }
    }
}

/// Log-ratio parameterization `t = ln(D / r)`.
///
/// Distances below half a pixel are clamped to that floor first; negative or
/// NaN distances are rejected.
pub fn to_log_param<T: Real>(distance: T, config: &LossConfig<T>) -> Result<T, FieldError> {
    if !(distance >= T::zero()) {
        return Err(FieldError::InvalidDistance {
            value: distance.to_f64().unwrap_or(f64::NAN),
        });
    }
    let floored = distance.max(cast::<T>(MIN_DISTANCE));
    Ok((floored / config.r).ln())
}

/// Inverse of [`to_log_param`]: `D = r · exp(t)`.
pub fn from_log_param<T: Real>(t: T, config: &LossConfig<T>) -> T {
    config.r * t.exp()
}

#[inline]
fn smooth_l1<T: Real>(diff: T, e: T) -> T {
    let a = diff.abs();
    if a < e {
        a * a / (cast::<T>(2.0) * e)
    } else {
        a - e / cast::<T>(2.0)
    }
}

/// Smooth-L1 regression loss between a predicted and a ground-truth field,
/// evaluated on parameterized values and averaged over the supported
/// elements (all of them, or those within `crop_radius` of the keypoint in
/// the ground truth).
pub fn kdf_loss<T: Real>(
    pred: &DistanceField<T>,
    gt: &DistanceField<T>,
    config: &LossConfig<T>,
) -> Result<T, FieldError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(FieldError::DimensionMismatch(
            pred.width,
            pred.height,
            gt.width,
            gt.height,
        ));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (p, g) in pred.values.iter().zip(gt.values.iter()) {
        if let Some(crop) = config.crop_radius {
            if *g > crop {
                continue;
            }
        }
        let diff = to_log_param(*g, config)? - to_log_param(*p, config)?;
        sum += smooth_l1(diff, config.e);
        count += 1;
    }
    if count == 0 {
        return Err(FieldError::EmptySupport);
    }
    Ok(sum / cast::<T>(count as f64))
}

/// Symmetry-aware loss: the minimum over the group's permutations of the
/// summed per-keypoint loss, with ground-truth fields reindexed by each
/// permutation.
pub fn symmetric_kdf_loss<T: Real>(
    preds: &[DistanceField<T>],
    gts: &[DistanceField<T>],
    symmetry: &SymmetryGroup<T>,
    config: &LossConfig<T>,
) -> Result<T, FieldError> {
    if preds.len() != gts.len() || symmetry.subset_len() != preds.len() {
        return Err(FieldError::PermutationMismatch {
            group: symmetry.subset_len(),
            fields: preds.len().min(gts.len()),
        });
    }
    let mut best: Option<T> = None;
    for perm in symmetry.permutations() {
        let mut total = T::zero();
        for (pred, &gt_index) in preds.iter().zip(perm.iter()) {
            total += kdf_loss(pred, &gts[gt_index], config)?;
        }
        if best.map_or(true, |b| total < b) {
            best = Some(total);
        }
    }
    best.ok_or(FieldError::EmptySupport)
}

/// Writes the binary field format: a 16-byte header (magic `KDF1`, `u32`
/// height, width, and keypoint index, little-endian) followed by
/// `height × width` little-endian `f32` values in row-major order.
pub fn write_field<T: Real, W: Write>(
    field: &DistanceField<T>,
    writer: &mut W,
) -> Result<(), FieldError> {
    writer.write_all(&MAGIC)?;
    writer.write_all(&field.height.to_le_bytes())?;
    writer.write_all(&field.width.to_le_bytes())?;
    writer.write_all(&field.keypoint_index.to_le_bytes())?;
    let mut buf = Vec::with_capacity(field.values.len() * 4);
    for v in &field.values {
        buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
    }
    writer.write_all(&buf)?;
    Ok(())
}

/// Reads the binary field format written by [`write_field`]. Values are
/// stored as `f32`; reading into a wider scalar is exact.
pub fn read_field<T: Real, R: Read>(reader: &mut R) -> Result<DistanceField<T>, FieldError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(FieldError::BadMagic(magic));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let height = u32::from_le_bytes(word);
    reader.read_exact(&mut word)?;
    let width = u32::from_le_bytes(word);
    reader.read_exact(&mut word)?;
    let keypoint_index = u32::from_le_bytes(word);

    let count = height as usize * width as usize;
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| cast::<T>(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    DistanceField::from_values(values, width, height, keypoint_index)
}
