//! Percent RMSE and pseudo-replica noise analysis.

use crate::data::{complex_combine, sos_combine, ImageData, KspaceData, RealImage};
use crate::error::{Error, Result};
use crate::phantom::{add_correlated_noise, NoiseModel};
use crate::sampling::{apply_mask, SamplingMask};
use crate::tensor::ComplexTensor;

/// `100 · ‖recon − reference‖ / ‖reference‖`.
pub fn rmse_percent(recon: &RealImage, reference: &RealImage) -> Result<f64> {
    if recon.dims != reference.dims {
        return Err(Error::shape(format!("{:?} vs {:?}", recon.dims, reference.dims)));
    }
    let den = reference.norm();
    if den == 0.0 {
        return Err(Error::invalid("reference image has zero norm"));
    }
    let num: f64 = recon
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * num / den)
}

/// Coil images with the readout oversampling cropped away.
pub fn coil_images(ksp: &KspaceData) -> Result<ImageData> {
    ksp.to_coil_images().crop_readout(ksp.readout_oversample())
}

/// Root-sum-of-squares magnitude image of multi-coil k-space.
pub fn sos_image(ksp: &KspaceData) -> Result<RealImage> {
    sos_combine(&coil_images(ksp)?)
}

/// Root-sum-of-squares image of a slice stack (no transform across slices).
pub fn slice_sos_image(ksp: &KspaceData) -> Result<RealImage> {
    sos_combine(&ksp.to_slice_images().crop_readout(ksp.readout_oversample())?)
}

/// Sensitivity-weighted complex combination of multi-coil k-space.
pub fn combined_image(ksp: &KspaceData, maps: &ImageData) -> Result<ComplexTensor> {
    complex_combine(&coil_images(ksp)?, maps)
}

/// Per-slice RMSE along the third image axis.
pub fn rmse_per_slice(recon: &RealImage, reference: &RealImage) -> Result<Vec<f64>> {
    if recon.dims != reference.dims || recon.dims.len() != 3 {
        return Err(Error::shape("per-slice RMSE needs matching (x, y, slice) images"));
    }
    let [m, n, s] = [recon.dims[0], recon.dims[1], recon.dims[2]];
    (0..s)
        .map(|k| {
            let take = |img: &RealImage| {
                let data = (0..m * n).map(|p| img.data[p * s + k]).collect();
                RealImage::new(vec![m, n, 1], data)
            };
            rmse_percent(&take(recon)?, &take(reference)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaReport {
    /// `|x0| / std(Re x_r)`, 0 where the std vanishes.
    pub proxy: RealImage,
    pub std_map: RealImage,
    /// Voxels with zero std (proxy forced to 0).
    pub flagged: usize,
    pub rmse: Vec<f64>,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    /// Mean proxy over the support mask.
    pub support_proxy: f64,
}

/// Inputs shared by every replica.
pub struct ReplicaSetup<'a> {
    /// Fully sampled original k-space (already carrying its own noise).
    pub ksp_full: &'a KspaceData,
    pub mask: &'a SamplingMask,
    pub noise: &'a NoiseModel,
    pub sigma: f64,
    pub n_replicas: usize,
    pub maps: &'a ImageData,
    /// Magnitude reference for replica RMSE.
    pub reference: &'a RealImage,
    /// Voxels averaged for `support_proxy`.
    pub support: &'a [bool],
}

/// Reconstruct `n_replicas` re-noised copies with a fixed reconstruction
/// (calibration captured by `recon`) and measure voxelwise variability.
pub fn pseudo_replica(
    setup: &ReplicaSetup<'_>,
    mut recon: impl FnMut(&KspaceData) -> Result<KspaceData>,
) -> Result<ReplicaReport> {
    if setup.n_replicas < 2 {
        return Err(Error::invalid("pseudo-replica needs at least two replicas"));
    }
    let original = recon(&apply_mask(setup.ksp_full, setup.mask)?)?;
    let x0 = combined_image(&original, setup.maps)?;
    if setup.support.len() != x0.len() {
        return Err(Error::shape("support mask does not match the image"));
    }
    let n_vox = x0.len();
    let mut sum = vec![0.0; n_vox];
    let mut sum_sq = vec![0.0; n_vox];
    let mut first = vec![0.0; n_vox];
    let mut rmse = Vec::with_capacity(setup.n_replicas);
    for r in 0..setup.n_replicas {
        let noisy = add_correlated_noise(setup.ksp_full, &setup.noise.for_replica(r as u64), setup.sigma)?;
        let rec = recon(&apply_mask(&noisy, setup.mask)?)?;
        rmse.push(rmse_percent(&sos_image(&rec)?, setup.reference)?);
        let x = combined_image(&rec, setup.maps)?;
        for (i, v) in x.data().iter().enumerate() {
            if r == 0 {
                first[i] = v.re;
            }
            // Shifted sums keep the variance exact for identical replicas.
            let d = v.re - first[i];
            sum[i] += d;
            sum_sq[i] += d * d;
        }
    }
    let n = setup.n_replicas as f64;
    let std: Vec<f64> = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| ((q - s * s / n) / (n - 1.0)).max(0.0).sqrt())
        .collect();
    let mut flagged = 0;
    let proxy: Vec<f64> = x0
        .data()
        .iter()
        .zip(&std)
        .map(|(x, &s)| {
            if s > 0.0 {
                x.norm() / s
            } else {
                flagged += 1;
                0.0
            }
        })
        .collect();
    let in_support: Vec<f64> = proxy
        .iter()
        .zip(setup.support)
        .filter_map(|(p, &keep)| keep.then_some(*p))
        .collect();
    let support_proxy = if in_support.is_empty() {
        0.0
    } else {
        in_support.iter().sum::<f64>() / in_support.len() as f64
    };
    let rmse_mean = rmse.iter().sum::<f64>() / n;
    let rmse_std = (rmse.iter().map(|v| (v - rmse_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let dims = x0.dims().to_vec();
    Ok(ReplicaReport {
        proxy: RealImage::new(dims.clone(), proxy)?,
        std_map: RealImage::new(dims, std)?,
        flagged,
        rmse,
        rmse_mean,
        rmse_std,
        support_proxy,
    })
}
