//! End-to-end reconstruction: build an input reconstruction with one of the
//! linear methods, correct it with per-coil networks and form images.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ImageData, KspaceData, RealImage};
use crate::error::{Error, Result};
use crate::grappa::{acs_replace, calibrate_sheared, grappa, interpolate, vc_grappa};
use crate::metrics::{slice_sos_image, sos_image};
use crate::sampling::{apply_mask, uniform_2d, AcsRegion, SamplingMask};
use crate::sense::{cg_solve, EncodingModel, WavePsf};
use crate::spark::{AcsProjector, SparkConfig, SparkModels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Grappa,
    #[serde(alias = "vc-grappa")]
    VcGrappa,
    Sense,
    Wave,
    #[serde(alias = "wave-slice-group")]
    WaveSliceGroup,
    #[serde(alias = "grappa3d")]
    Grappa3dHybrid,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grappa" => Method::Grappa,
            "vc-grappa" | "vc_grappa" => Method::VcGrappa,
            "sense" => Method::Sense,
            "wave" => Method::Wave,
            "wave-slice-group" | "wave_slice_group" => Method::WaveSliceGroup,
            "grappa3d" | "grappa3d_hybrid" => Method::Grappa3dHybrid,
            _ => return Err(Error::invalid(format!("unknown method `{s}`"))),
        })
    }
}

/// What the scanner delivered.
#[derive(Debug, Clone, Copy)]
pub struct Acquisition<'a> {
    /// Acquired k-space, zero off the mask. Slice groups are collapsed to one partition.
    pub kspace: &'a KspaceData,
    pub mask: &'a SamplingMask,
    pub maps: Option<&'a ImageData>,
    pub psf: Option<&'a WavePsf>,
    /// Separately acquired calibration data: the low-resolution reference
    /// block for the hybrid scheme, per-slice ACS k-space for slice groups.
    pub calibration: Option<&'a KspaceData>,
}

#[derive(Debug, Clone)]
enum Domain {
    Cartesian,
    Wave(Box<EncodingModel>),
    Slices(Box<EncodingModel>),
}

/// Input reconstruction and its training data.
#[derive(Debug, Clone)]
pub struct Estimate {
    /// Input reconstruction on the full grid, without ACS replacement.
    pub y_est: KspaceData,
    /// Data trusted inside `acs`.
    pub y_acq: KspaceData,
    pub acs: AcsProjector,
    /// The method's own final reconstruction.
    pub baseline: KspaceData,
    domain: Domain,
}

impl Estimate {
    /// Root-sum-of-squares magnitude image of k-space in this estimate's domain.
    pub fn image(&self, ksp: &KspaceData) -> Result<RealImage> {
        match &self.domain {
            Domain::Cartesian => sos_image(ksp),
            Domain::Wave(m) => sos_image(&m.unwave(ksp)?),
            Domain::Slices(m) => slice_sos_image(&m.unwave(ksp)?),
        }
    }
}

fn need<'a, T>(v: Option<&'a T>, method: Method, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::MethodMismatch(format!("{method:?} needs {what}")))
}

fn need_acs(mask: &SamplingMask) -> Result<AcsRegion> {
    mask.acs.ok_or_else(|| Error::AcsTooSmall("mask has no ACS block".into()))
}

/// Build the input reconstruction for `method`.
pub fn estimate(method: Method, acq: &Acquisition<'_>, cfg: &RunConfig) -> Result<Estimate> {
    let ksp = acq.kspace;
    let mask = acq.mask;
    let [nro, _, _, _] = ksp.dims();
    let taps = cfg.grappa.taps();
    let lambda = cfg.grappa.lambda;
    match method {
        Method::Grappa | Method::VcGrappa => {
            let acs = need_acs(mask)?;
            let y_est = if method == Method::Grappa {
                grappa(ksp, mask, taps, lambda, false)?
            } else {
                vc_grappa(ksp, mask, taps, lambda, false)?
            };
            Ok(Estimate {
                baseline: acs_replace(&y_est, ksp, Some(&acs))?,
                y_est,
                y_acq: ksp.clone(),
                acs: AcsProjector::from_region(&acs, nro),
                domain: Domain::Cartesian,
            })
        }
        Method::Sense | Method::Wave => {
            let maps = need(acq.maps, method, "coil maps")?;
            let psf = if method == Method::Wave {
                Some(need(acq.psf, method, "a wave PSF")?.clone())
            } else {
                None
            };
            let os = ksp.readout_oversample();
            // ACS lines are held out of the solve so they can supervise the correction.
            let model = EncodingModel::new(maps, mask.without_acs(), psf, os)?;
            let acs = AcsProjector::from_region(&need_acs(mask)?, nro);
            let x = cg_solve(&model, ksp, cfg.sense.iters, cfg.sense.tol)?;
            let y_est = model.slice_kspace(x.image.tensor())?;
            let mut baseline = y_est.clone();
            acs.replace(&mut baseline, ksp)?;
            let domain = if method == Method::Wave {
                Domain::Wave(Box::new(model))
            } else {
                Domain::Cartesian
            };
            Ok(Estimate {
                baseline,
                y_est,
                y_acq: ksp.clone(),
                acs,
                domain,
            })
        }
        Method::WaveSliceGroup => {
            let maps = need(acq.maps, method, "coil maps")?;
            let calib = need(acq.calibration, method, "per-slice ACS data")?;
            let acs = need_acs(mask)?;
            let model = EncodingModel::slice_group(maps, acq.psf.cloned(), mask.without_acs(), ksp.readout_oversample(), cfg.mask.shift)?;
            let (k, ns, nc) = (nro, model.image_dims()[2], model.n_coils());
            if calib.dims() != [k, mask.n_pe(), ns, nc] {
                return Err(Error::shape(format!("per-slice ACS data {:?}", calib.dims())));
            }
            let x = cg_solve(&model, ksp, cfg.sense.iters, cfg.sense.tol)?;
            let y_est = model.slice_kspace(x.image.tensor())?;
            let acs = AcsProjector::new([(0, k - 1), acs.pe, (0, ns - 1)]);
            let mut baseline = y_est.clone();
            acs.replace(&mut baseline, calib)?;
            Ok(Estimate {
                baseline,
                y_est,
                y_acq: calib.clone(),
                acs,
                domain: Domain::Slices(Box::new(model)),
            })
        }
        Method::Grappa3dHybrid => {
            let reference = need(acq.calibration, method, "a low-resolution reference scan")?;
            let acs = need_acs(mask)?;
            let (e_pe, e_pa) = acs.extent();
            let [_, r_pe, r_pa, _] = reference.dims();
            if r_pe < e_pe || r_pa < e_pa {
                return Err(Error::AcsTooSmall("reference scan smaller than the ACS block".into()));
            }
            let [_, npe, npa, _] = ksp.dims();
            // Complete the ACS block from its own lattice.
            let inner = uniform_2d(npe, npa, acs.rate.0, acs.rate.1, 0, 0)?;
            let k_inner = calibrate_sheared(reference, acs.rate, 0, taps, lambda)?;
            let filled = interpolate(&apply_mask(ksp, &inner)?, &inner, &k_inner)?;
            let mut completed = ksp.clone();
            let block = filled.block([0, acs.pe.0, acs.pa.0], [nro, e_pe, e_pa]);
            completed.tensor_mut().write_window(&[0, acs.pe.0, acs.pa.0, 0], block.tensor());
            // Exterior lattice everywhere, sourced from the completed block.
            let k_outer = calibrate_sheared(reference, mask.accel, 0, taps, lambda)?;
            let y_est = interpolate(&completed, &mask.without_acs(), &k_outer)?;
            Ok(Estimate {
                baseline: acs_replace(&y_est, &completed, Some(&acs))?,
                y_est,
                y_acq: completed,
                acs: AcsProjector::from_region(&acs, nro),
                domain: Domain::Cartesian,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimate: Estimate,
    pub baseline_image: RealImage,
    pub kspace: KspaceData,
    pub image: RealImage,
    pub models: SparkModels,
}

/// Input reconstruction, correction and image formation.
pub fn spark_pipeline(method: Method, acq: &Acquisition<'_>, cfg: &RunConfig) -> Result<PipelineOutput> {
    spark_pipeline_with(method, acq, cfg, &cfg.spark)
}

pub fn spark_pipeline_with(method: Method, acq: &Acquisition<'_>, cfg: &RunConfig, spark: &SparkConfig) -> Result<PipelineOutput> {
    let est = estimate(method, acq, cfg)?;
    let models = SparkModels::train(&est.y_acq, &est.y_est, &est.acs, spark)?;
    let replace = spark.final_acs_replace.then_some((&est.y_acq, &est.acs));
    let kspace = models.apply(&est.y_est, replace)?;
    Ok(PipelineOutput {
        baseline_image: est.image(&est.baseline)?,
        image: est.image(&kspace)?,
        kspace,
        models,
        estimate: est,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, generate_sensitivities, synthesize_kspace, CoilGeometry, PhantomSpec};
    use crate::sampling::uniform_1d;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.spark.epochs = 3;
        cfg.spark.hidden_channels = 2;
        cfg.grappa.taps = [3, 2, 1];
        cfg
    }

    #[test]
    fn grappa_at_r1_reproduces_full_data() {
        let dims = [16, 16, 1];
        let truth = generate_phantom(&PhantomSpec::shepp_logan_2d(), &dims).unwrap();
        let maps = generate_sensitivities(&CoilGeometry { n_coils: 2, ..CoilGeometry::default() }, &dims).unwrap();
        let full = synthesize_kspace(&truth, &maps).unwrap();
        let mask = uniform_1d(16, 1, 16).unwrap();
        let acq = Acquisition {
            kspace: &full,
            mask: &mask,
            maps: None,
            psf: None,
            calibration: None,
        };
        let out = spark_pipeline(Method::Grappa, &acq, &small_cfg()).unwrap();
        let want = sos_image(&full).unwrap();
        let err = out.image.abs_diff(&want).unwrap().norm();
        assert!(err <= 1e-8 * want.norm(), "{err}");
        assert_eq!(out.kspace.dims(), full.dims());
    }

    #[test]
    fn missing_inputs_are_method_mismatches() {
        let full = KspaceData::zeros([8, 8, 1, 2], 1);
        let mask = uniform_1d(8, 2, 4).unwrap();
        let acq = Acquisition {
            kspace: &full,
            mask: &mask,
            maps: None,
            psf: None,
            calibration: None,
        };
        for m in [Method::Sense, Method::Wave, Method::WaveSliceGroup, Method::Grappa3dHybrid] {
            assert!(matches!(estimate(m, &acq, &small_cfg()), Err(Error::MethodMismatch(_))), "{m:?}");
        }
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("vc-grappa".parse::<Method>().unwrap(), Method::VcGrappa);
        assert_eq!("grappa3d".parse::<Method>().unwrap(), Method::Grappa3dHybrid);
        assert!("fista".parse::<Method>().is_err());
    }
}
