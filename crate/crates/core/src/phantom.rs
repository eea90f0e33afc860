//! Synthetic acquisitions: analytic ellipse phantoms, ring-array coil
//! sensitivities, multi-coil k-space and coil-correlated complex noise.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_maps, ImageData, KspaceData};
use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// Normalized center, one entry per spatial dimension, in `[-1, 1]`.
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
    /// Rotation in the x-y plane, radians.
    pub angle: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
}

// (intensity, a, b, c, x0, y0, z0, angle in degrees)
const SHEPP_LOGAN: [[f64; 8]; 10] = [
    [1.0, 0.69, 0.92, 0.81, 0.0, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.78, 0.0, -0.0184, 0.0, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.22, 0.0, 0.0, -18.0],
    [-0.2, 0.16, 0.41, 0.28, -0.22, 0.0, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.41, 0.0, 0.35, -0.15, 0.0],
    [0.1, 0.046, 0.046, 0.05, 0.0, 0.1, 0.25, 0.0],
    [0.1, 0.046, 0.046, 0.05, 0.0, -0.1, 0.25, 0.0],
    [0.1, 0.046, 0.023, 0.05, -0.08, -0.605, 0.0, 0.0],
    [0.1, 0.023, 0.023, 0.02, 0.0, -0.606, 0.0, 0.0],
    [0.1, 0.023, 0.046, 0.02, 0.06, -0.605, 0.0, 0.0],
];

impl PhantomSpec {
    /// Ten-ellipse head phantom with the higher-contrast intensities.
    pub fn shepp_logan_2d() -> Self {
        Self {
            ellipses: SHEPP_LOGAN
                .iter()
                .map(|r| Ellipse {
                    center: vec![r[4], r[5]],
                    semi_axes: vec![r[1], r[2]],
                    angle: r[7].to_radians(),
                    intensity: r[0],
                })
                .collect(),
        }
    }

    /// Ellipsoid version of the head phantom.
    pub fn shepp_logan_3d() -> Self {
        Self {
            ellipses: SHEPP_LOGAN
                .iter()
                .map(|r| Ellipse {
                    center: vec![r[4], r[5], r[6]],
                    semi_axes: vec![r[1], r[2], r[3]],
                    angle: r[7].to_radians(),
                    intensity: r[0],
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ellipses.is_empty() {
            return Err(Error::invalid("phantom needs at least one ellipse"));
        }
        let d = self.ellipses[0].center.len();
        for e in &self.ellipses {
            if e.center.len() != d || e.semi_axes.len() != d || !(2..=3).contains(&d) {
                return Err(Error::invalid("ellipse dimensionality must be 2 or 3 and consistent"));
            }
            if e.semi_axes.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::invalid("ellipse semi-axes must be positive"));
            }
        }
        Ok(())
    }

    pub fn dimensionality(&self) -> usize {
        self.ellipses.first().map_or(0, |e| e.center.len())
    }
}

/// Normalized coordinate of index `i` on an axis of extent `n`, in `[-1, 1)`.
pub fn norm_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
    }
}

/// Rasterize the phantom. Axis 0 carries y, axis 1 carries x and axis 2 (if
/// any) carries z. A 2D phantom on 3D dims is repeated along z.
pub fn generate_phantom(spec: &PhantomSpec, dims: &[usize]) -> Result<ImageData> {
    spec.validate()?;
    let dims3 = match dims {
        [a, b] => [*a, *b, 1],
        [a, b, c] => [*a, *b, *c],
        _ => return Err(Error::invalid("phantom dims must have rank 2 or 3")),
    };
    if dims3.contains(&0) {
        return Err(Error::invalid("phantom dims must be positive"));
    }
    let three_d = spec.dimensionality() == 3;
    let t = ComplexTensor::from_fn(&dims3, |idx| {
        let y = norm_coord(idx[0], dims3[0]);
        let x = norm_coord(idx[1], dims3[1]);
        let z = norm_coord(idx[2], dims3[2]);
        let v: f64 = spec
            .ellipses
            .iter()
            .filter(|e| {
                let (dx, dy) = (x - e.center[0], y - e.center[1]);
                let (s, c) = e.angle.sin_cos();
                let xr = c * dx + s * dy;
                let yr = -s * dx + c * dy;
                let mut r = (xr / e.semi_axes[0]).powi(2) + (yr / e.semi_axes[1]).powi(2);
                if three_d {
                    r += ((z - e.center[2]) / e.semi_axes[2]).powi(2);
                }
                r <= 1.0
            })
            .map(|e| e.intensity)
            .sum();
        Complex64::new(v, 0.0)
    });
    ImageData::new(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoilGeometry {
    pub n_coils: usize,
    /// Distance of coil centers from the FOV center, normalized units.
    pub ring_radius: f64,
    /// Gaussian falloff (standard deviation), normalized units.
    pub width: f64,
    /// Linear phase across the FOV, radians per normalized unit.
    pub phase_slope: f64,
    /// Coils alternate between `+z_offset` and `-z_offset` along the partition axis.
    pub z_offset: f64,
}

impl Default for CoilGeometry {
    fn default() -> Self {
        Self {
            n_coils: 8,
            ring_radius: 1.2,
            width: 0.8,
            phase_slope: 1.0,
            z_offset: 0.6,
        }
    }
}

/// Complex Gaussian-lobe sensitivities on a ring, normalized to unit
/// root-sum-of-squares at every voxel. Output axes `(x, y, z, coil)` with the
/// same axis-to-coordinate mapping as [`generate_phantom`].
pub fn generate_sensitivities(geom: &CoilGeometry, dims: &[usize]) -> Result<ImageData> {
    if geom.n_coils == 0 {
        return Err(Error::invalid("n_coils must be at least 1"));
    }
    if !(geom.width > 0.0) {
        return Err(Error::invalid("coil width must be positive"));
    }
    let d = match dims {
        [a, b] => [*a, *b, 1],
        [a, b, c] => [*a, *b, *c],
        _ => return Err(Error::invalid("sensitivity dims must have rank 2 or 3")),
    };
    let nc = geom.n_coils;
    let mut t = ComplexTensor::zeros(&[d[0], d[1], d[2], nc]);
    let data = t.data_mut();
    let mut p = 0;
    for i0 in 0..d[0] {
        let y = norm_coord(i0, d[0]);
        for i1 in 0..d[1] {
            let x = norm_coord(i1, d[1]);
            for i2 in 0..d[2] {
                let z = norm_coord(i2, d[2]);
                let px = &mut data[p * nc..(p + 1) * nc];
                for (c, v) in px.iter_mut().enumerate() {
                    let theta = 2.0 * PI * c as f64 / nc as f64;
                    let (st, ct) = theta.sin_cos();
                    let (cx, cy) = (geom.ring_radius * ct, geom.ring_radius * st);
                    let cz = if d[2] > 1 && nc > 1 {
                        if c % 2 == 0 {
                            geom.z_offset
                        } else {
                            -geom.z_offset
                        }
                    } else {
                        0.0
                    };
                    let r2 = (x - cx).powi(2) + (y - cy).powi(2) + (z - cz).powi(2);
                    let mag = (-r2 / (2.0 * geom.width * geom.width)).exp();
                    let phase = geom.phase_slope * (x * ct + y * st)
                        + 0.25 * geom.phase_slope * (x * x - y * y) * (2.0 * theta).cos()
                        + theta;
                    *v = Complex64::from_polar(mag, phase);
                }
                let sos: f64 = px.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if sos > 0.0 {
                    for v in px.iter_mut() {
                        *v /= sos;
                    }
                }
                p += 1;
            }
        }
    }
    ImageData::new(t)
}

/// Per-coil `fftc(image * S_c)`.
pub fn synthesize_kspace(image: &ImageData, maps: &ImageData) -> Result<KspaceData> {
    if image.n_coils().is_some() {
        return Err(Error::shape("synthesize_kspace expects a coil-free image"));
    }
    apply_maps(image.tensor(), maps)?.to_kspace(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<Complex64>,
    factor: DMatrix<Complex64>,
    pub seed: u64,
}

impl NoiseModel {
    /// Validates the covariance (Hermitian and PSD to 1e-12) and factors it.
    pub fn new(covariance: DMatrix<Complex64>, seed: u64) -> Result<Self> {
        let n = covariance.nrows();
        if n == 0 || covariance.ncols() != n {
            return Err(Error::shape("covariance must be a non-empty square matrix"));
        }
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (covariance[(i, j)] - covariance[(j, i)].conj()).norm())
            .fold(0.0, f64::max);
        if asym > 1e-12 {
            return Err(Error::NotHermitian(asym));
        }
        let eig = SymmetricEigen::new(covariance.clone());
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-12 {
            return Err(Error::NotPsd(min));
        }
        // L = V sqrt(max(lambda, 0)), so L L^H = covariance.
        let mut factor = eig.eigenvectors.clone();
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        Ok(Self {
            covariance,
            factor,
            seed,
        })
    }

    pub fn white(n_coils: usize, seed: u64) -> Self {
        Self::new(DMatrix::identity(n_coils, n_coils), seed).expect("identity is PSD")
    }

    pub fn covariance(&self) -> &DMatrix<Complex64> {
        &self.covariance
    }

    pub fn n_coils(&self) -> usize {
        self.covariance.nrows()
    }

    /// Same covariance, independent stream for replica `r`.
    pub fn for_replica(&self, r: u64) -> Self {
        Self {
            covariance: self.covariance.clone(),
            factor: self.factor.clone(),
            seed: mix_seed(self.seed, r.wrapping_add(1)),
        }
    }
}

/// Deterministic 64-bit key derivation for (seed, stream) pairs.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unit complex Gaussian draws (E|w|^2 = 1) where draw `i` depends only on
/// `(seed, i)`: each draw consumes exactly two 64-bit words of a ChaCha stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Jump to draw index `i`.
    pub fn seek(&mut self, i: u64) {
        self.rng.set_word_pos(4 * i as u128);
    }

    pub fn next_complex(&mut self) -> Complex64 {
        // 53-bit uniforms; u1 in (0, 1] keeps ln finite.
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let u2 = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        Complex64::new(r * c, r * s) * std::f64::consts::FRAC_1_SQRT_2
    }
}

/// `ksp + sigma * L w` with `L L^H = covariance` and `w` i.i.d. unit complex
/// Gaussian per k-space location.
pub fn add_correlated_noise(ksp: &KspaceData, noise: &NoiseModel, sigma: f64) -> Result<KspaceData> {
    let nc = ksp.n_coils();
    if noise.n_coils() != nc {
        return Err(Error::shape(format!(
            "covariance is {0}x{0} but data has {nc} coils",
            noise.n_coils()
        )));
    }
    if sigma == 0.0 {
        return Ok(ksp.clone());
    }
    let mut out = ksp.clone();
    let mut stream = GaussianStream::new(noise.seed);
    let mut w = vec![Complex64::new(0.0, 0.0); nc];
    for px in out.tensor_mut().data_mut().chunks_exact_mut(nc) {
        for v in w.iter_mut() {
            *v = stream.next_complex();
        }
        for (i, dst) in px.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, wj) in w.iter().enumerate() {
                acc += noise.factor[(i, j)] * wj;
            }
            *dst += acc * sigma;
        }
    }
    Ok(out)
}

/// `(1/K) N N^H` for a `C x K` sample matrix; zero when `K = 0`.
pub fn estimate_noise_covariance(samples: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (c, k) = samples.shape();
    if k == 0 {
        return DMatrix::zeros(c, c);
    }
    let mut cov = samples * samples.adjoint() / Complex64::new(k as f64, 0.0);
    // exact Hermitian symmetry
    for i in 0..c {
        cov[(i, i)].im = 0.0;
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)].conj();
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sos_combine;

    fn full_fov_ellipse() -> PhantomSpec {
        PhantomSpec {
            ellipses: vec![Ellipse {
                center: vec![0.0, 0.0],
                semi_axes: vec![2.0, 2.0],
                angle: 0.0,
                intensity: 1.0,
            }],
        }
    }

    #[test]
    fn full_ellipse_is_constant() {
        let img = generate_phantom(&full_fov_ellipse(), &[8, 8]).unwrap();
        assert!(img.tensor().data().iter().all(|v| *v == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn outside_is_zero_and_overlap_adds() {
        let spec = PhantomSpec {
            ellipses: vec![
                Ellipse { center: vec![0.0, 0.0], semi_axes: vec![0.5, 0.5], angle: 0.0, intensity: 0.5 },
                Ellipse { center: vec![0.2, 0.0], semi_axes: vec![0.5, 0.5], angle: 0.3, intensity: 0.3 },
            ],
        };
        let img = generate_phantom(&spec, &[16, 16]).unwrap();
        assert_eq!(img.tensor().get(&[0, 0, 0]).re, 0.0);
        // voxel at the center lies in both
        assert!((img.tensor().get(&[8, 8, 0]).re - 0.8).abs() < 1e-15);
    }

    #[test]
    fn phantom_rejects_bad_specs() {
        assert!(generate_phantom(&PhantomSpec { ellipses: vec![] }, &[4, 4]).is_err());
        let mut s = full_fov_ellipse();
        s.ellipses[0].semi_axes[0] = 0.0;
        assert!(generate_phantom(&s, &[4, 4]).is_err());
        assert!(generate_phantom(&full_fov_ellipse(), &[4]).is_err());
    }

    #[test]
    fn shepp_logan_is_deterministic_and_nonnegative() {
        let a = generate_phantom(&PhantomSpec::shepp_logan_2d(), &[64, 64]).unwrap();
        let b = generate_phantom(&PhantomSpec::shepp_logan_2d(), &[64, 64]).unwrap();
        assert_eq!(a, b);
        assert!(a.tensor().data().iter().all(|v| v.re >= -1e-12 && v.im == 0.0));
        let v3 = generate_phantom(&PhantomSpec::shepp_logan_3d(), &[16, 16, 8]).unwrap();
        assert_eq!(v3.matrix(), [16, 16, 8]);
    }

    #[test]
    fn single_coil_map_has_unit_magnitude() {
        let g = CoilGeometry { n_coils: 1, ..Default::default() };
        let m = generate_sensitivities(&g, &[8, 8]).unwrap();
        assert!(m.tensor().data().iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn maps_have_unit_sos_and_differ() {
        let m = generate_sensitivities(&CoilGeometry::default(), &[32, 32, 4]).unwrap();
        let s = sos_combine(&m).unwrap();
        assert!(s.data.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let coils: Vec<_> = (0..8).map(|c| m.coil(c)).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                let d = coils[a].sub(&coils[b]).unwrap().norm() / coils[a].norm();
                assert!(d > 0.1, "coils {a} and {b} too similar: {d}");
            }
        }
    }

    #[test]
    fn zero_sigma_is_bit_exact() {
        let img = generate_phantom(&PhantomSpec::shepp_logan_2d(), &[16, 16]).unwrap();
        let maps = generate_sensitivities(&CoilGeometry::default(), &[16, 16]).unwrap();
        let k = synthesize_kspace(&img, &maps).unwrap();
        let n = add_correlated_noise(&k, &NoiseModel::white(8, 1), 0.0).unwrap();
        assert_eq!(n, k);
        assert!(add_correlated_noise(&k, &NoiseModel::white(4, 1), 1.0).is_err());
    }

    #[test]
    fn covariance_validation() {
        let mut m = DMatrix::<Complex64>::identity(2, 2);
        m[(0, 1)] = Complex64::new(0.0, 0.5);
        assert!(matches!(NoiseModel::new(m.clone(), 0), Err(Error::NotHermitian(_))));
        m[(1, 0)] = Complex64::new(0.0, -0.5);
        assert!(NoiseModel::new(m, 0).is_ok());
        let mut bad = DMatrix::<Complex64>::identity(2, 2);
        bad[(0, 1)] = Complex64::new(2.0, 0.0);
        bad[(1, 0)] = Complex64::new(2.0, 0.0);
        assert!(matches!(NoiseModel::new(bad, 0), Err(Error::NotPsd(_))));
        // singular PSD is allowed
        let ones = DMatrix::from_element(3, 3, Complex64::new(1.0, 0.0));
        assert!(NoiseModel::new(ones, 0).is_ok());
    }

    #[test]
    fn empty_samples_give_zero_covariance() {
        let s = DMatrix::<Complex64>::zeros(3, 0);
        assert_eq!(estimate_noise_covariance(&s), DMatrix::zeros(3, 3));
    }

    #[test]
    fn gaussian_stream_is_seekable() {
        let mut a = GaussianStream::new(7);
        let draws: Vec<_> = (0..10).map(|_| a.next_complex()).collect();
        let mut b = GaussianStream::new(7);
        b.seek(6);
        assert_eq!(b.next_complex(), draws[6]);
    }
}
