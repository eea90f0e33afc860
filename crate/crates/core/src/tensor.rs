//! Dense complex n-dimensional arrays and centered Fourier transforms.
//!
//! Layout is row-major. Every centered operation (FFT, crop, pad) places the
//! center of an axis of extent `n` at index `n / 2` (integer division), so the
//! DC sample of k-space, the middle of an ACS block and the middle of a crop
//! window always coincide.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::shape("tensor rank must be at least 1"));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!("extent of axis {pos} is zero")));
    }
    Ok(dims.iter().product())
}

impl ComplexTensor {
    pub fn new(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "{} values for dims {:?} (expected {n})",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    /// Panics on an empty or zero-extent shape.
    pub fn zeros(dims: &[usize]) -> Self {
        let n = check_dims(dims).expect("invalid tensor dims");
        Self {
            dims: dims.to_vec(),
            data: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> Complex64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, dims);
        }
        t
    }

    pub fn from_real(dims: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(
            dims.to_vec(),
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.dims)
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn get(&self, idx: &[usize]) -> Complex64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: Complex64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        Self::new(dims.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| v * a)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `<self, other> = sum conj(self) * other`.
    pub fn vdot(&self, other: &Self) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Centered, orthonormal forward DFT along each listed axis.
    pub fn fftc(&self, axes: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.fftc_inplace(axes, false)?;
        Ok(out)
    }

    /// Inverse of [`fftc`](Self::fftc).
    pub fn ifftc(&self, axes: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.fftc_inplace(axes, true)?;
        Ok(out)
    }

    pub fn fftc_inplace(&mut self, axes: &[usize], inverse: bool) -> Result<()> {
        for &axis in axes {
            if axis >= self.dims.len() {
                return Err(Error::UnknownAxis {
                    axis,
                    rank: self.dims.len(),
                });
            }
        }
        for &axis in axes {
            self.fft_axis(axis, inverse);
        }
        Ok(())
    }

    fn fft_axis(&mut self, axis: usize, inverse: bool) {
        let n = self.dims[axis];
        if n == 1 {
            return;
        }
        let stride: usize = self.dims[axis + 1..].iter().product();
        let outer: usize = self.dims[..axis].iter().product();
        let fft = plan(n, inverse);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let half = n / 2;
        let norm = 1.0 / (n as f64).sqrt();
        for o in 0..outer {
            let base = o * n * stride;
            for s in 0..stride {
                // ifftshift on gather: line[i] = x[(i + n/2) % n]
                for (i, l) in line.iter_mut().enumerate() {
                    *l = self.data[base + ((i + half) % n) * stride + s];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                // fftshift on scatter: out[(i + n/2) % n] = X[i]
                for (i, l) in line.iter().enumerate() {
                    self.data[base + ((i + half) % n) * stride + s] = *l * norm;
                }
            }
        }
    }

    /// Centered crop to `target` extents (each no larger than the source).
    pub fn crop_center(&self, target: &[usize]) -> Result<Self> {
        self.check_target(target)?;
        if target.iter().zip(&self.dims).any(|(t, d)| t > d) {
            return Err(Error::shape(format!(
                "crop target {:?} exceeds source {:?}",
                target, self.dims
            )));
        }
        let starts: Vec<usize> = self
            .dims
            .iter()
            .zip(target)
            .map(|(&d, &t)| d / 2 - t / 2)
            .collect();
        Ok(self.window(&starts, target))
    }

    /// Centered zero-padding to `target` extents (each no smaller than the source).
    pub fn pad_center(&self, target: &[usize]) -> Result<Self> {
        self.check_target(target)?;
        if target.iter().zip(&self.dims).any(|(t, d)| t < d) {
            return Err(Error::shape(format!(
                "pad target {:?} is smaller than source {:?}",
                target, self.dims
            )));
        }
        let mut out = Self::zeros(target);
        let starts: Vec<usize> = self
            .dims
            .iter()
            .zip(target)
            .map(|(&d, &t)| t / 2 - d / 2)
            .collect();
        out.write_window(&starts, self);
        Ok(out)
    }

    fn check_target(&self, target: &[usize]) -> Result<()> {
        if target.len() != self.dims.len() {
            return Err(Error::shape(format!(
                "target rank {} differs from tensor rank {}",
                target.len(),
                self.dims.len()
            )));
        }
        check_dims(target).map(|_| ())
    }

    /// Copy of the block starting at `starts` with extents `extents`.
    pub fn window(&self, starts: &[usize], extents: &[usize]) -> Self {
        let mut out = Self::zeros(extents);
        let src_strides = self.strides();
        let mut idx = vec![0usize; extents.len()];
        for v in out.data.iter_mut() {
            let off: usize = idx
                .iter()
                .zip(starts)
                .zip(&src_strides)
                .map(|((&i, &s), &st)| (i + s) * st)
                .sum();
            *v = self.data[off];
            increment(&mut idx, extents);
        }
        out
    }

    /// Overwrite the block starting at `starts` with `block`.
    pub fn write_window(&mut self, starts: &[usize], block: &Self) {
        let dst_strides = self.strides();
        let mut idx = vec![0usize; block.dims.len()];
        for v in block.data.iter() {
            let off: usize = idx
                .iter()
                .zip(starts)
                .zip(&dst_strides)
                .map(|((&i, &s), &st)| (i + s) * st)
                .sum();
            self.data[off] = *v;
            increment(&mut idx, &block.dims);
        }
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Advance a row-major multi-index; wraps to all zeros after the last element.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < dims[d] {
            return;
        }
        idx[d] = 0;
    }
}

/// Index of `-k` under the centered convention: `(2 * (n / 2) - i) mod n`.
pub fn mirror_index(i: usize, n: usize) -> usize {
    (2 * (n / 2) + n - i) % n
}
