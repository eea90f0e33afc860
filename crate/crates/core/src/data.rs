//! Multi-coil k-space and image containers plus coil combination.
//!
//! Both containers use the fixed axis order `(readout, phase, partition[, coil])`.
//! Single-slice data simply has a partition extent of 1, so every algorithm in
//! the crate has one code path for 2D and 3D.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Readout,
    Phase,
    Partition,
    Coil,
}

pub const KSPACE_AXES: [Axis; 4] = [Axis::Readout, Axis::Phase, Axis::Partition, Axis::Coil];

/// Spatial axes of a canonical 4-axis tensor.
pub const SPATIAL: [usize; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq)]
pub struct KspaceData {
    tensor: ComplexTensor,
    readout_oversample: usize,
}

impl KspaceData {
    pub fn new(tensor: ComplexTensor, readout_oversample: usize) -> Result<Self> {
        if tensor.rank() != KSPACE_AXES.len() {
            return Err(Error::shape(format!(
                "k-space must have axes (readout, phase, partition, coil); got rank {}",
                tensor.rank()
            )));
        }
        if readout_oversample == 0 || !tensor.dims()[0].is_multiple_of(readout_oversample) {
            return Err(Error::invalid(format!(
                "readout extent {} is not a multiple of oversampling {readout_oversample}",
                tensor.dims()[0]
            )));
        }
        Ok(Self {
            tensor,
            readout_oversample,
        })
    }

    pub fn zeros(dims: [usize; 4], readout_oversample: usize) -> Self {
        Self::new(ComplexTensor::zeros(&dims), readout_oversample).expect("valid k-space dims")
    }

    pub fn axes(&self) -> &'static [Axis] {
        &KSPACE_AXES
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut ComplexTensor {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.tensor
    }

    pub fn readout_oversample(&self) -> usize {
        self.readout_oversample
    }

    /// `[readout, phase, partition, coil]`.
    pub fn dims(&self) -> [usize; 4] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2], d[3]]
    }

    pub fn grid(&self) -> [usize; 3] {
        let d = self.dims();
        [d[0], d[1], d[2]]
    }

    pub fn n_coils(&self) -> usize {
        self.dims()[3]
    }

    #[inline]
    pub fn index(&self, ro: usize, pe: usize, pa: usize, c: usize) -> usize {
        let [_, npe, npa, nc] = self.dims();
        ((ro * npe + pe) * npa + pa) * nc + c
    }

    #[inline]
    pub fn at(&self, ro: usize, pe: usize, pa: usize, c: usize) -> Complex64 {
        self.tensor.data()[self.index(ro, pe, pa, c)]
    }

    pub fn coil(&self, c: usize) -> ComplexTensor {
        split_coil(&self.tensor, c)
    }

    pub fn set_coil(&mut self, c: usize, values: &ComplexTensor) {
        join_coil(&mut self.tensor, c, values)
    }

    pub fn from_coils(coils: &[ComplexTensor], readout_oversample: usize) -> Result<Self> {
        Self::new(stack_coils(coils)?, readout_oversample)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            tensor: self.tensor.scale(a),
            readout_oversample: self.readout_oversample,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensor.max_abs()
    }

    /// Per-coil images: inverse centered FFT over the three k-space axes.
    pub fn to_coil_images(&self) -> ImageData {
        let t = self.tensor.ifftc(&SPATIAL).expect("canonical axes");
        ImageData { tensor: t }
    }

    /// Per-coil images of a slice stack: inverse FFT over readout and phase only.
    pub fn to_slice_images(&self) -> ImageData {
        let t = self.tensor.ifftc(&SPATIAL[..2]).expect("canonical axes");
        ImageData { tensor: t }
    }

    /// Centered block `[start, start + extent)` on every spatial axis, all coils.
    pub fn block(&self, starts: [usize; 3], extents: [usize; 3]) -> Self {
        let nc = self.n_coils();
        let t = self
            .tensor
            .window(&[starts[0], starts[1], starts[2], 0], &[extents[0], extents[1], extents[2], nc]);
        Self {
            tensor: t,
            readout_oversample: 1,
        }
    }
}

/// Coil images or a coil-combined image: axes `(x, y, z[, coil])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    tensor: ComplexTensor,
}

impl ImageData {
    pub fn new(tensor: ComplexTensor) -> Result<Self> {
        if tensor.rank() != 3 && tensor.rank() != 4 {
            return Err(Error::shape(format!(
                "image must be rank 3 (x, y, z) or 4 (x, y, z, coil); got {}",
                tensor.rank()
            )));
        }
        Ok(Self { tensor })
    }

    pub fn tensor(&self) -> &ComplexTensor {
        &self.tensor
    }

    pub fn tensor_mut(&mut self) -> &mut ComplexTensor {
        &mut self.tensor
    }

    pub fn into_tensor(self) -> ComplexTensor {
        self.tensor
    }

    pub fn matrix(&self) -> [usize; 3] {
        let d = self.tensor.dims();
        [d[0], d[1], d[2]]
    }

    pub fn n_coils(&self) -> Option<usize> {
        (self.tensor.rank() == 4).then(|| self.tensor.dims()[3])
    }

    pub fn coil(&self, c: usize) -> ComplexTensor {
        split_coil(&self.tensor, c)
    }

    /// Forward centered FFT of every coil image into k-space.
    pub fn to_kspace(&self, readout_oversample: usize) -> Result<KspaceData> {
        if self.n_coils().is_none() {
            return Err(Error::shape("image has no coil axis"));
        }
        KspaceData::new(self.tensor.fftc(&SPATIAL)?, readout_oversample)
    }

    /// Centered crop of the readout axis by the oversampling factor.
    pub fn crop_readout(&self, oversample: usize) -> Result<Self> {
        if oversample == 1 {
            return Ok(self.clone());
        }
        let mut dims = self.tensor.dims().to_vec();
        if !dims[0].is_multiple_of(oversample) {
            return Err(Error::shape("readout extent not divisible by oversampling"));
        }
        dims[0] /= oversample;
        Self::new(self.tensor.crop_center(&dims)?)
    }
}

/// Real-valued image (magnitude, proxy map, error map).
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() || dims.is_empty() {
            return Err(Error::shape(format!(
                "{} values for dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn magnitude(t: &ComplexTensor) -> Self {
        Self {
            dims: t.dims().to_vec(),
            data: t.data().iter().map(|v| v.norm()).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn abs_diff(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(Self {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .collect(),
        })
    }
}

/// Root-sum-of-squares over the coil axis.
pub fn sos_combine(coil_images: &ImageData) -> Result<RealImage> {
    let nc = coil_images
        .n_coils()
        .ok_or_else(|| Error::shape("sos_combine needs a coil axis"))?;
    let data: Vec<f64> = coil_images
        .tensor
        .data()
        .chunks_exact(nc)
        .map(|px| px.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    Ok(RealImage {
        dims: coil_images.matrix().to_vec(),
        data,
    })
}

/// `sum_c conj(S_c) img_c / sum_c |S_c|^2`, zero where the maps vanish.
pub fn complex_combine(coil_images: &ImageData, maps: &ImageData) -> Result<ComplexTensor> {
    if coil_images.tensor.dims() != maps.tensor.dims() {
        return Err(Error::shape(format!(
            "coil images {:?} vs maps {:?}",
            coil_images.tensor.dims(),
            maps.tensor.dims()
        )));
    }
    let nc = coil_images
        .n_coils()
        .ok_or_else(|| Error::shape("complex_combine needs a coil axis"))?;
    let data: Vec<Complex64> = coil_images
        .tensor
        .data()
        .chunks_exact(nc)
        .zip(maps.tensor.data().chunks_exact(nc))
        .map(|(img, s)| {
            let den: f64 = s.iter().map(|v| v.norm_sqr()).sum();
            if den == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let num: Complex64 = img.iter().zip(s).map(|(i, s)| s.conj() * i).sum();
            num / den
        })
        .collect();
    ComplexTensor::new(coil_images.matrix().to_vec(), data)
}

fn split_coil(t: &ComplexTensor, c: usize) -> ComplexTensor {
    let d = t.dims();
    let nc = d[d.len() - 1];
    assert!(c < nc, "coil {c} out of range ({nc} coils)");
    let data: Vec<Complex64> = t.data().iter().skip(c).step_by(nc).copied().collect();
    ComplexTensor::new(d[..d.len() - 1].to_vec(), data).expect("coil slice")
}

fn join_coil(t: &mut ComplexTensor, c: usize, values: &ComplexTensor) {
    let nc = *t.dims().last().unwrap();
    assert_eq!(values.len() * nc, t.len(), "coil slice size mismatch");
    for (dst, src) in t.data_mut().iter_mut().skip(c).step_by(nc).zip(values.data()) {
        *dst = *src;
    }
}

pub(crate) fn stack_coils(coils: &[ComplexTensor]) -> Result<ComplexTensor> {
    let first = coils
        .first()
        .ok_or_else(|| Error::shape("at least one coil is required"))?;
    let nc = coils.len();
    let mut dims = first.dims().to_vec();
    dims.push(nc);
    let mut out = ComplexTensor::zeros(&dims);
    for (c, coil) in coils.iter().enumerate() {
        if coil.dims() != first.dims() {
            return Err(Error::shape("coil extents differ"));
        }
        join_coil(&mut out, c, coil);
    }
    Ok(out)
}

/// Multiply an image `(x, y, z)` by every coil map `(x, y, z, coil)`.
pub fn apply_maps(image: &ComplexTensor, maps: &ImageData) -> Result<ImageData> {
    if image.dims() != &maps.tensor.dims()[..3] {
        return Err(Error::shape(format!(
            "image {:?} vs maps {:?}",
            image.dims(),
            maps.tensor.dims()
        )));
    }
    let nc = maps.n_coils().ok_or_else(|| Error::shape("maps need a coil axis"))?;
    let mut out = maps.tensor.clone();
    for (px, &m) in out.data_mut().chunks_exact_mut(nc).zip(image.data()) {
        for v in px {
            *v *= m;
        }
    }
    ImageData::new(out)
}
