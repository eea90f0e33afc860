//! A small deterministic convolutional network engine (f64, no bias terms).
//!
//! Tensors are `(channels, d0, d1, d2)`; two-dimensional data uses `d2 = 1`
//! with kernels of depth 1.

mod adam;
mod conv;
mod network;

pub use adam::AdamState;
pub use conv::{ConvLayer, Padding};
pub use network::{Network, Trace};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    spatial: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, spatial: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * spatial.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} values for {channels} channels of {spatial:?}",
                data.len()
            )));
        }
        Ok(Self { channels, spatial, data })
    }

    pub fn zeros(channels: usize, spatial: [usize; 3]) -> Self {
        Self {
            channels,
            spatial,
            data: vec![0.0; channels * spatial.iter().product::<usize>()],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> [usize; 3] {
        self.spatial
    }

    /// Number of spatial positions per channel.
    pub fn plane(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        ((c * self.spatial[0] + i) * self.spatial[1] + j) * self.spatial[2] + k
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// Zero-pad by `lo` before and `hi` after on each spatial axis.
    pub fn pad(&self, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let s = self.spatial;
        let mut out = Self::zeros(self.channels, [s[0] + lo[0] + hi[0], s[1] + lo[1] + hi[1], s[2] + lo[2] + hi[2]]);
        for c in 0..self.channels {
            for i in 0..s[0] {
                for j in 0..s[1] {
                    let src = self.index(c, i, j, 0);
                    let dst = out.index(c, i + lo[0], j + lo[1], lo[2]);
                    out.data[dst..dst + s[2]].copy_from_slice(&self.data[src..src + s[2]]);
                }
            }
        }
        out
    }

    /// Block of extents `dims` starting at `start`.
    pub fn crop(&self, start: [usize; 3], dims: [usize; 3]) -> Self {
        let mut out = Self::zeros(self.channels, dims);
        for c in 0..self.channels {
            for i in 0..dims[0] {
                for j in 0..dims[1] {
                    let src = self.index(c, i + start[0], j + start[1], start[2]);
                    let dst = out.index(c, i, j, 0);
                    out.data[dst..dst + dims[2]].copy_from_slice(&self.data[src..src + dims[2]]);
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.spatial, other.spatial, "tensor shapes differ");
        assert_eq!(self.channels, other.channels, "tensor channels differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// `x + relu((x − 1)/2) + relu(−(x + 1)/2)`: identity on [−1, 1], slope 3/2 outside.
    CustomNl,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => relu(x),
            Activation::CustomNl => custom_nl(x),
        }
    }

    /// Derivative at `x`; ReLU kinks use the left derivative (0 at 0).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::CustomNl => {
                if x > 1.0 {
                    1.5
                } else if x < -1.0 {
                    0.5
                } else {
                    1.0
                }
            }
        }
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
pub fn custom_nl(x: f64) -> f64 {
    x + relu((x - 1.0) / 2.0) + relu(-(x + 1.0) / 2.0)
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, grad)
}
