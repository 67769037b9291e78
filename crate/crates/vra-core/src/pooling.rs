//! Temporal pooling: per-column mean and sample standard deviation over a
//! frame window, concatenated into one video-level feature vector.
//!
//! Storage is 32-bit; all pooling arithmetic runs in 64-bit. The standard
//! deviation uses the n-1 denominator, which is material at the default
//! window length of 5, and is computed two-pass (mean first, then squared
//! deviations) for numerical robustness.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Result, VraError};

/// Video-level feature: mean vector followed by std vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature {
    concat: Array1<f64>,
    dim: usize,
    n: usize,
}

impl PooledFeature {
    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.concat.slice(ndarray::s![..self.dim])
    }

    pub fn std(&self) -> ArrayView1<'_, f64> {
        self.concat.slice(ndarray::s![self.dim..])
    }

    pub fn concat(&self) -> ArrayView1<'_, f64> {
        self.concat.view()
    }

    pub fn into_concat(self) -> Array1<f64> {
        self.concat
    }

    /// Per-frame feature dimensionality D; the concat vector has length 2D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of frames the statistics were pooled over.
    pub fn n(&self) -> usize {
        self.n
    }
}

/// Column means of an L x D window, in 64-bit.
pub fn pool_mean(window: ArrayView2<'_, f32>) -> Result<Array1<f64>> {
    let (l, d) = window.dim();
    if l == 0 {
        return Err(VraError::EmptyInput("pool_mean over zero frames"));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for row in window.rows() {
        for (j, v) in row.iter().enumerate() {
            mean[j] += f64::from(*v);
        }
    }
    mean.mapv_inplace(|s| s / l as f64);
    Ok(mean)
}

/// Column sample standard deviations (n-1 denominator) of an L x D window.
pub fn pool_std(window: ArrayView2<'_, f32>) -> Result<Array1<f64>> {
    let (l, d) = window.dim();
    if l < 2 {
        return Err(VraError::UndefinedStd(l));
    }
    let mean = pool_mean(window)?;
    let mut acc = Array1::<f64>::zeros(d);
    for row in window.rows() {
        for (j, v) in row.iter().enumerate() {
            let dev = f64::from(*v) - mean[j];
            acc[j] += dev * dev;
        }
    }
    acc.mapv_inplace(|s| (s / (l - 1) as f64).sqrt());
    Ok(acc)
}

/// Mean and std pooled and concatenated into a 2D-length vector.
pub fn pool_concat(window: ArrayView2<'_, f32>) -> Result<PooledFeature> {
    let (l, d) = window.dim();
    let mean = pool_mean(window)?;
    let std = pool_std(window)?;
    let mut concat = Array1::<f64>::zeros(2 * d);
    concat.slice_mut(ndarray::s![..d]).assign(&mean);
    concat.slice_mut(ndarray::s![d..]).assign(&std);
    if concat.iter().any(|v| !v.is_finite()) {
        return Err(VraError::NonFinite {
            context: "pooled feature".into(),
        });
    }
    Ok(PooledFeature { concat, dim: d, n: l })
}
