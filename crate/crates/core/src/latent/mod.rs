//! Latent tensor container and the primitives every other module builds on:
//! NPY file I/O, channel-wise spatial statistics and the replicate-padded box
//! filter that defines the low/high frequency split.

mod npy;
mod pool;
mod stats;

use std::fmt;

pub use npy::{load_latent, read_latent, save_latent, write_latent};
pub use pool::{add_bands, decompose, low_pass, FrequencyDecomposition, PoolingFilterSpec};
pub use stats::{channel_mean_std, ChannelStats};

use crate::error::{LfaError, Result};

/// Scalar types a [`Tensor`] may hold.
pub trait Element: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Channel, height and width of a latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(LfaError::InvalidArgument(format!(
                "latent dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Shape {
            channels,
            height,
            width,
        })
    }

    /// Number of elements in one channel.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.channels, self.height, self.width)
    }
}

/// A C×H×W array stored in channel-height-width row-major order.
///
/// All values are finite. Constructors check this, and operations that could
/// overflow go through [`Tensor::new`] again.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    label: Option<String>,
}

/// The 32-bit latents read from and written to disk.
pub type LatentTensor = Tensor<f32>;

/// Intermediate results kept in 64-bit precision (high-frequency residuals,
/// bias terms).
pub type WideTensor = Tensor<f64>;

impl<T: Element> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        Shape::new(shape.channels, shape.height, shape.width)?;
        if data.len() != shape.len() {
            return Err(LfaError::InvalidArgument(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LfaError::NonFinite(format!(
                "tensor construction (element {idx} is {:?})",
                data[idx]
            )));
        }
        Ok(Tensor {
            shape,
            data,
            label: None,
        })
    }

    /// Caller guarantees `data.len() == shape.len()` and finiteness.
    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Tensor {
            shape,
            data,
            label: None,
        }
    }

    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        Tensor::new(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Tensor::filled(shape, T::from_f64(0.0))
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channels(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.shape.plane())
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.shape.height + i) * self.shape.width + j]
    }

    pub fn to_wide(&self) -> WideTensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v.to_f64()).collect(),
            label: self.label.clone(),
        }
    }

    /// Element-wise combination evaluated in f64 and stored as `U`.
    pub fn zip_with<S: Element, U: Element>(
        &self,
        other: &Tensor<S>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor<U>> {
        self.ensure_same_shape(other.shape)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| U::from_f64(f(a.to_f64(), b.to_f64())))
            .collect();
        Tensor::new(self.shape, data)
    }

    pub fn map<U: Element>(&self, f: impl Fn(f64) -> f64) -> Result<Tensor<U>> {
        let data = self
            .data
            .iter()
            .map(|&a| U::from_f64(f(a.to_f64())))
            .collect();
        Tensor::new(self.shape, data)
    }

    pub fn ensure_same_shape(&self, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(LfaError::ShapeMismatch {
                expected: self.shape,
                found: other,
            });
        }
        Ok(())
    }

    pub fn max_abs_diff<S: Element>(&self, other: &Tensor<S>) -> Result<f64> {
        self.ensure_same_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }
}

impl LatentTensor {
    /// True when shapes match and every element has the same bit pattern.
    pub fn bitwise_eq(&self, other: &LatentTensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl WideTensor {
    /// Rounds to f32 storage; fails if a value overflows the f32 range.
    pub fn to_latent(&self) -> Result<LatentTensor> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        let mut out = Tensor::new(self.shape, data)?;
        out.label = self.label.clone();
        Ok(out)
    }
}
