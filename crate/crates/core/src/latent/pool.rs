use super::{Element, LatentTensor, Tensor, WideTensor};
use crate::error::{LfaError, Result};

/// Square average-pooling window with stride 1 and replicate padding of
/// `(window - 1) / 2` on each side, so the output keeps the input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolingFilterSpec {
    window: usize,
}

impl PoolingFilterSpec {
    pub const DEFAULT_WINDOW: usize = 9;

    pub fn new(window: usize) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(LfaError::InvalidArgument(format!(
                "pooling window must be a positive odd integer, got {window}"
            )));
        }
        Ok(PoolingFilterSpec { window })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn padding(&self) -> usize {
        (self.window - 1) / 2
    }

    pub fn stride(&self) -> usize {
        1
    }
}

impl Default for PoolingFilterSpec {
    fn default() -> Self {
        PoolingFilterSpec {
            window: Self::DEFAULT_WINDOW,
        }
    }
}

/// Channel-wise box filter with replicate edges.
///
/// The ρ×ρ mean is evaluated as two separable 1-D means accumulated in f64
/// and rounded to `T` once at the end.
pub fn low_pass<T: Element>(z: &Tensor<T>, spec: PoolingFilterSpec) -> Tensor<T> {
    let shape = z.shape();
    let (h, w) = (shape.height, shape.width);
    let pad = spec.padding() as isize;
    let inv = 1.0 / spec.window() as f64;
    let clamp = |idx: isize, len: usize| idx.clamp(0, len as isize - 1) as usize;

    let mut out = Vec::with_capacity(shape.len());
    let mut rows = vec![0.0f64; h * w];
    for plane in z.channels() {
        for i in 0..h {
            let row = &plane[i * w..(i + 1) * w];
            for j in 0..w {
                let mut acc = 0.0;
                for d in -pad..=pad {
                    acc += row[clamp(j as isize + d, w)].to_f64();
                }
                rows[i * w + j] = acc * inv;
            }
        }
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for d in -pad..=pad {
                    acc += rows[clamp(i as isize + d, h) * w + j];
                }
                out.push(T::from_f64(acc * inv));
            }
        }
    }
    let mut t = Tensor::from_parts(shape, out);
    if let Some(label) = z.label() {
        t = t.with_label(label);
    }
    t
}

/// A latent split into its pooled low band and the residual high band.
///
/// `high` is the f64 difference `z - low`, so `low + high` evaluated in f64
/// and rounded to f32 reproduces `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyDecomposition {
    pub low: LatentTensor,
    pub high: WideTensor,
    pub spec: PoolingFilterSpec,
}

impl FrequencyDecomposition {
    /// Sum of the bands at f64 precision.
    pub fn recombine_wide(&self) -> WideTensor {
        add_bands(&self.low, &self.high)
    }

    pub fn recombine(&self) -> Result<LatentTensor> {
        self.recombine_wide().to_latent()
    }
}

/// `low + high` element-wise in f64.
pub fn add_bands<T: Element>(low: &Tensor<T>, high: &WideTensor) -> WideTensor {
    debug_assert_eq!(low.shape(), high.shape());
    let data = low
        .data()
        .iter()
        .zip(high.data())
        .map(|(&l, &h)| l.to_f64() + h)
        .collect();
    Tensor::from_parts(low.shape(), data)
}

pub fn decompose(z: &LatentTensor, spec: PoolingFilterSpec) -> FrequencyDecomposition {
    let low = low_pass(z, spec);
    let high = z
        .data()
        .iter()
        .zip(low.data())
        .map(|(&v, &l)| v as f64 - l as f64)
        .collect();
    FrequencyDecomposition {
        high: Tensor::from_parts(z.shape(), high),
        low,
        spec,
    }
}
