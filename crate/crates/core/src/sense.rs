//! SENSE / wave encoding operator and its least-squares inversion.
//!
//! Per coil the forward model is: multiply by the sensitivity, zero-pad the
//! readout by the oversampling factor, centered FFT along readout, multiply
//! by the wave PSF, centered FFT along phase (and partition), mask.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::data::{ImageData, KspaceData};
use crate::error::{Error, Result};
use crate::sampling::SamplingMask;
use crate::tensor::ComplexTensor;

/// Pure-phase wave point spread function over `(oversampled x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePsf {
    phase: ComplexTensor,
    oversample: usize,
}

impl WavePsf {
    pub fn new(phase: ComplexTensor, oversample: usize) -> Result<Self> {
        if phase.rank() != 3 || oversample == 0 || !phase.dims()[0].is_multiple_of(oversample) {
            return Err(Error::shape(format!(
                "PSF dims {:?} incompatible with oversampling {oversample}",
                phase.dims()
            )));
        }
        let worst = phase.data().iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
        if !(worst <= 1e-12) {
            return Err(Error::invalid(format!("PSF is not pure phase (|psf| off by {worst:e})")));
        }
        Ok(Self { phase, oversample })
    }

    pub fn phase(&self) -> &ComplexTensor {
        &self.phase
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }
}

/// Corkscrew PSF: `exp(i·a·(sin(2π·cycles·kx/K)·ŷ + cos(2π·cycles·kx/K)·ẑ))`
/// with `ŷ = (y − n/2)/n`, `ẑ = (z − p/2)/p`; the z term vanishes for `p = 1`.
pub fn make_wave_psf(m: usize, n: usize, p: usize, oversample: usize, cycles: f64, amplitude: f64) -> Result<WavePsf> {
    if m == 0 || n == 0 || p == 0 || oversample == 0 {
        return Err(Error::invalid("PSF extents must be positive"));
    }
    let k = m * oversample;
    let phase = ComplexTensor::from_fn(&[k, n, p], |i| {
        let arg = 2.0 * PI * cycles * i[0] as f64 / k as f64;
        let y = (i[1] as f64 - (n / 2) as f64) / n as f64;
        let z = if p == 1 {
            0.0
        } else {
            (i[2] as f64 - (p / 2) as f64) / p as f64
        };
        Complex64::from_polar(1.0, amplitude * (arg.sin() * y + arg.cos() * z))
    });
    WavePsf::new(phase, oversample)
}

#[derive(Debug, Clone, PartialEq)]
enum Geometry {
    Volume,
    /// Slices stacked along the third image axis, collapsed into one k-space
    /// plane with a per-slice phase ramp along phase encoding.
    SliceGroup { caipi_shift: usize },
}

/// Encoding operator `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingModel {
    maps: Vec<ComplexTensor>,
    image_dims: [usize; 3],
    mask: SamplingMask,
    psf: Option<WavePsf>,
    oversample: usize,
    geometry: Geometry,
}

impl EncodingModel {
    /// Single-volume model; `oversample` must match the PSF when one is given.
    pub fn new(maps: &ImageData, mask: SamplingMask, psf: Option<WavePsf>, oversample: usize) -> Result<Self> {
        let nc = maps.n_coils().ok_or_else(|| Error::shape("maps need a coil axis"))?;
        let [m, n, p] = maps.matrix();
        if mask.n_pe() != n || mask.n_pa() != p {
            return Err(Error::shape(format!(
                "mask {}x{} vs image phase/partition {n}x{p}",
                mask.n_pe(),
                mask.n_pa()
            )));
        }
        let model = Self {
            maps: (0..nc).map(|c| maps.coil(c)).collect(),
            image_dims: [m, n, p],
            mask,
            psf,
            oversample,
            geometry: Geometry::Volume,
        };
        model.check_psf(p)?;
        Ok(model)
    }

    /// Joint model for slices collapsed by uniform partition undersampling.
    ///
    /// `maps` and `psf` stack the slices along their third axis; the mask is a
    /// single-partition pattern. Slice `s` is shifted by
    /// `s·caipi_shift/S` of the field of view.
    pub fn slice_group(
        maps: &ImageData,
        psf: Option<WavePsf>,
        mask: SamplingMask,
        oversample: usize,
        caipi_shift: usize,
    ) -> Result<Self> {
        let nc = maps.n_coils().ok_or_else(|| Error::shape("maps need a coil axis"))?;
        let [m, n, s] = maps.matrix();
        if mask.n_pe() != n || mask.n_pa() != 1 {
            return Err(Error::shape("slice-group mask must be a single-partition pattern"));
        }
        let model = Self {
            maps: (0..nc).map(|c| maps.coil(c)).collect(),
            image_dims: [m, n, s],
            mask,
            psf,
            oversample,
            geometry: Geometry::SliceGroup { caipi_shift },
        };
        model.check_psf(s)?;
        Ok(model)
    }

    fn check_psf(&self, p: usize) -> Result<()> {
        if self.oversample == 0 {
            return Err(Error::invalid("oversampling must be positive"));
        }
        if let Some(psf) = &self.psf {
            let [m, n, _] = self.image_dims;
            if psf.oversample != self.oversample || psf.phase.dims() != [self.oversample * m, n, p] {
                return Err(Error::shape(format!(
                    "PSF {:?} (oversample {}) vs image {:?} (oversample {})",
                    psf.phase.dims(),
                    psf.oversample,
                    self.image_dims,
                    self.oversample
                )));
            }
        }
        Ok(())
    }

    pub fn image_dims(&self) -> [usize; 3] {
        self.image_dims
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn psf(&self) -> Option<&WavePsf> {
        self.psf.as_ref()
    }

    pub fn oversample(&self) -> usize {
        self.oversample
    }

    /// The same operator with a different sampling pattern.
    pub fn with_mask(&self, mask: SamplingMask) -> Result<Self> {
        if mask.n_pe() != self.mask.n_pe() || mask.n_pa() != self.mask.n_pa() {
            return Err(Error::shape("replacement mask has a different grid"));
        }
        Ok(Self { mask, ..self.clone() })
    }

    /// The operator with every k-space location sampled.
    pub fn fully_sampled(&self) -> Self {
        let full = SamplingMask::full(self.mask.n_pe(), self.mask.n_pa());
        Self {
            mask: full,
            ..self.clone()
        }
    }

    /// Dims of the k-space this model produces.
    pub fn kspace_dims(&self) -> [usize; 4] {
        let [m, n, p] = self.image_dims;
        let pa = match self.geometry {
            Geometry::Volume => p,
            Geometry::SliceGroup { .. } => 1,
        };
        [m * self.oversample, n, pa, self.maps.len()]
    }

    fn ramp(&self, pe: usize, s: usize) -> Complex64 {
        match self.geometry {
            Geometry::Volume => Complex64::new(1.0, 0.0),
            Geometry::SliceGroup { caipi_shift } => {
                let [_, n, ns] = self.image_dims;
                let k = pe as f64 - (n / 2) as f64;
                Complex64::from_polar(1.0, 2.0 * PI * k * (s * caipi_shift) as f64 / ns as f64)
            }
        }
    }

    fn phase_axes(&self) -> &'static [usize] {
        match self.geometry {
            Geometry::Volume => &[1, 2],
            Geometry::SliceGroup { .. } => &[1],
        }
    }

    fn check_image(&self, x: &ComplexTensor) -> Result<()> {
        if x.dims() != self.image_dims {
            return Err(Error::shape(format!("image {:?} vs model {:?}", x.dims(), self.image_dims)));
        }
        Ok(())
    }

    /// Coil k-space before masking: `(K, N, P)` per coil (un-collapsed).
    fn encode_coil(&self, x: &ComplexTensor, c: usize) -> ComplexTensor {
        let [m, n, p] = self.image_dims;
        let mut t = x.mul(&self.maps[c]).expect("checked dims");
        if self.oversample > 1 {
            t = t.pad_center(&[m * self.oversample, n, p]).expect("pad");
        }
        t.fftc_inplace(&[0], false).expect("axis 0");
        if let Some(psf) = &self.psf {
            t = t.mul(&psf.phase).expect("psf dims");
        }
        t.fftc_inplace(self.phase_axes(), false).expect("phase axes");
        t
    }

    /// Unmasked per-coil k-space with slices kept apart: `(K, N, P, C)`.
    pub fn slice_kspace(&self, x: &ComplexTensor) -> Result<KspaceData> {
        self.check_image(x)?;
        let coils: Vec<ComplexTensor> = (0..self.maps.len()).map(|c| self.encode_coil(x, c)).collect();
        KspaceData::from_coils(&coils, self.oversample)
    }

    /// Strip the PSF from [`Self::slice_kspace`]-shaped data, leaving Cartesian
    /// k-space on the oversampled readout grid.
    pub fn unwave(&self, ksp: &KspaceData) -> Result<KspaceData> {
        let [m, n, p] = self.image_dims;
        if ksp.dims() != [m * self.oversample, n, p, self.maps.len()] {
            return Err(Error::shape(format!("k-space {:?} vs model image {:?}", ksp.dims(), self.image_dims)));
        }
        let Some(psf) = &self.psf else {
            return Ok(ksp.clone());
        };
        let axes = self.phase_axes();
        let mut coils = Vec::with_capacity(self.maps.len());
        for c in 0..self.maps.len() {
            let mut t = ksp.coil(c);
            t.fftc_inplace(axes, true)?;
            t = t.zip_with(&psf.phase, |a, b| a * b.conj())?;
            t.fftc_inplace(axes, false)?;
            coils.push(t);
        }
        KspaceData::from_coils(&coils, self.oversample)
    }

    pub fn forward(&self, x: &ImageData) -> Result<KspaceData> {
        self.forward_tensor(x.tensor())
    }

    pub fn forward_tensor(&self, x: &ComplexTensor) -> Result<KspaceData> {
        self.check_image(x)?;
        let [k, n, pa, nc] = self.kspace_dims();
        let ns = self.image_dims[2];
        let mut out = KspaceData::zeros([k, n, pa, nc], self.oversample);
        for c in 0..nc {
            let t = self.encode_coil(x, c);
            let coil = match self.geometry {
                Geometry::Volume => t,
                Geometry::SliceGroup { .. } => ComplexTensor::from_fn(&[k, n, 1], |i| {
                    (0..ns).map(|s| self.ramp(i[1], s) * t.get(&[i[0], i[1], s])).sum()
                }),
            };
            out.set_coil(c, &self.masked(coil));
        }
        Ok(out)
    }

    fn masked(&self, mut t: ComplexTensor) -> ComplexTensor {
        let d = t.dims().to_vec();
        let (n, p) = (d[1], d[2]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let pa = i % p;
            let pe = (i / p) % n;
            if !self.mask.is_sampled(pe, pa) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        t
    }

    pub fn adjoint(&self, y: &KspaceData) -> Result<ImageData> {
        ImageData::new(self.adjoint_tensor(y)?)
    }

    pub fn adjoint_tensor(&self, y: &KspaceData) -> Result<ComplexTensor> {
        if y.dims() != self.kspace_dims() {
            return Err(Error::shape(format!("k-space {:?} vs model {:?}", y.dims(), self.kspace_dims())));
        }
        let [m, n, p] = self.image_dims;
        let k = m * self.oversample;
        let mut acc = ComplexTensor::zeros(&self.image_dims);
        for c in 0..self.maps.len() {
            let yc = self.masked(y.coil(c));
            let mut t = match self.geometry {
                Geometry::Volume => yc,
                Geometry::SliceGroup { .. } => {
                    ComplexTensor::from_fn(&[k, n, p], |i| self.ramp(i[1], i[2]).conj() * yc.get(&[i[0], i[1], 0]))
                }
            };
            t.fftc_inplace(self.phase_axes(), true)?;
            if let Some(psf) = &self.psf {
                t = t.zip_with(&psf.phase, |a, b| a * b.conj())?;
            }
            t.fftc_inplace(&[0], true)?;
            if self.oversample > 1 {
                t = t.crop_center(&self.image_dims)?;
            }
            let contrib = t.zip_with(&self.maps[c], |a, s| a * s.conj())?;
            acc = acc.add(&contrib)?;
        }
        Ok(acc)
    }
}

/// Solution and per-iteration relative data residual `‖y − E x‖ / ‖y‖`.
#[derive(Debug, Clone)]
pub struct CgResult {
    pub image: ImageData,
    pub residuals: Vec<f64>,
}

/// Conjugate gradients on the normal equations (CGLS form), zero start.
///
/// Stops once `‖Eᴴ(y − E x)‖ / ‖Eᴴ y‖ ≤ tol` or after `max_iter` iterations.
pub fn cg_solve(model: &EncodingModel, y: &KspaceData, max_iter: usize, tol: f64) -> Result<CgResult> {
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::invalid("CG needs max_iter >= 1 and tol > 0"));
    }
    let mut r = y.clone();
    {
        let masked: Vec<ComplexTensor> = (0..y.n_coils()).map(|c| model.masked(y.coil(c))).collect();
        for (c, t) in masked.iter().enumerate() {
            r.set_coil(c, t);
        }
    }
    let y_norm = r.tensor().norm();
    let mut x = ComplexTensor::zeros(&model.image_dims);
    let mut s = model.adjoint_tensor(&r)?;
    let g0 = s.norm_sqr();
    let mut residuals = Vec::new();
    if g0 == 0.0 {
        residuals.push(0.0);
        return Ok(CgResult {
            image: ImageData::new(x)?,
            residuals,
        });
    }
    let mut p = s.clone();
    let mut gamma = g0;
    for _ in 0..max_iter {
        let q = model.forward_tensor(&p)?;
        let qn = q.tensor().norm_sqr();
        if qn == 0.0 {
            break;
        }
        let alpha = gamma / qn;
        axpy(x.data_mut(), alpha, p.data());
        axpy(r.tensor_mut().data_mut(), -alpha, q.tensor().data());
        residuals.push(r.tensor().norm() / y_norm);
        s = model.adjoint_tensor(&r)?;
        let g_new = s.norm_sqr();
        if (g_new / g0).sqrt() <= tol {
            break;
        }
        let beta = g_new / gamma;
        for (pv, sv) in p.data_mut().iter_mut().zip(s.data()) {
            *pv = *sv + *pv * beta;
        }
        gamma = g_new;
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("CG solution".into()));
    }
    Ok(CgResult {
        image: ImageData::new(x)?,
        residuals,
    })
}

fn axpy(y: &mut [Complex64], a: f64, x: &[Complex64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += *xv * a;
    }
}

/// `E_full x`: the model's estimate of complete k-space.
pub fn recon_to_kspace(x: &ImageData, model: &EncodingModel) -> Result<KspaceData> {
    model.fully_sampled().forward(x)
}

/// Undo the PSF on fully sampled wave data, giving Cartesian data on the
/// same oversampled readout grid.
pub fn deconvolve_wave(ksp: &KspaceData, psf: &WavePsf) -> Result<KspaceData> {
    let [k, n, p, nc] = ksp.dims();
    if psf.phase.dims() != [k, n, p] {
        return Err(Error::shape(format!("PSF {:?} vs k-space {:?}", psf.phase.dims(), ksp.dims())));
    }
    let mut coils = Vec::with_capacity(nc);
    for c in 0..nc {
        let mut t = ksp.coil(c);
        t.fftc_inplace(&[1, 2], true)?;
        t = t.zip_with(&psf.phase, |a, b| a * b.conj())?;
        t.fftc_inplace(&[1, 2], false)?;
        coils.push(t);
    }
    KspaceData::from_coils(&coils, ksp.readout_oversample())
}
