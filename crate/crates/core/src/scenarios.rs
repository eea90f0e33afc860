//! Seeded end-to-end experiments on synthetic phantoms. Each scenario is a
//! pure function of its [`RunConfig`] and returns a line-oriented report plus
//! the containers it produced.

use std::fmt::Display;

use crate::config::{Pattern, RunConfig};
use crate::data::{ImageData, KspaceData, RealImage};
use crate::error::{Error, Result};
use crate::grappa::{acs_replace, calibrate_sheared, interpolate};
use crate::io::Container;
use crate::metrics::{pseudo_replica, rmse_per_slice, rmse_percent, ReplicaReport, ReplicaSetup};
use crate::phantom::{add_correlated_noise, generate_phantom, generate_sensitivities, mix_seed, synthesize_kspace, NoiseModel};
use crate::pipeline::{estimate, spark_pipeline, Acquisition, Method};
use crate::raki::raki_reconstruct;
use crate::sampling::{apply_mask, hybrid_mask, uniform_1d, SamplingMask};
use crate::sense::{make_wave_psf, EncodingModel, WavePsf};
use crate::spark::{AcsProjector, Arch, SparkModels};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub name: String,
    pub records: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<(String, Container)>,
}

impl Report {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.records.push((key.to_string(), value.to_string()));
    }

    fn value(&mut self, key: &str, v: f64) {
        self.record(key, format!("{v:.6}"));
    }

    pub fn check(&mut self, label: impl Into<String>, pass: bool) {
        self.checks.push(Check {
            label: label.into(),
            pass,
        });
    }

    fn artifact(&mut self, name: &str, c: Container) {
        self.artifacts.push((name.to_string(), c));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// `key=value` lines: records, then one `check=` line per check.
    pub fn to_text(&self) -> String {
        let mut s = format!("scenario={}\n", self.name);
        for (k, v) in &self.records {
            s.push_str(&format!("{k}={v}\n"));
        }
        for c in &self.checks {
            let verdict = if c.pass { "pass" } else { "fail" };
            s.push_str(&format!("check={verdict} {}\n", c.label));
        }
        s
    }
}

/// Names accepted by [`config`] and [`run`].
pub const NAMES: [&str; 8] = [
    "spark-grappa-r4",
    "spark-grappa-r5",
    "small-acs-raki",
    "vc-grappa",
    "wave-2d",
    "hybrid-3d",
    "pseudo-replica",
    "slice-group",
];

/// The configuration a named scenario runs with.
pub fn config(name: &str) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    c.noise.sigma = 0.01;
    c.noise.seed = 11;
    c.noise.correlation = 0.2;
    c.grappa.lambda = 1e-3;
    // Early stopping is the only regularization of the SENSE-type solves.
    c.sense.iters = 20;
    c.sense.tol = 1e-4;
    c.spark.hidden_channels = 32;
    match name {
        "spark-grappa-r4" => {}
        "spark-grappa-r5" => {
            c.noise.sigma = 0.008;
            c.mask.accel = [5, 1];
            c.mask.acs = [30, 1];
        }
        "small-acs-raki" => {
            c.mask.accel = [5, 1];
            c.mask.acs = [16, 1];
            c.grappa.taps = [5, 2, 1];
        }
        "vc-grappa" => {
            c.method = Method::VcGrappa;
            c.mask.accel = [5, 1];
            c.mask.acs = [30, 1];
        }
        "wave-2d" => {
            c.method = Method::Wave;
            c.mask.accel = [5, 1];
            c.spark.hidden_channels = 16;
        }
        "hybrid-3d" => {
            c.method = Method::Grappa3dHybrid;
            c.phantom.dims = [64, 48, 32];
            c.mask.pattern = Pattern::Hybrid;
            c.mask.accel = [4, 3];
            c.mask.acs = [24, 24];
            c.mask.acs_accel = [3, 2];
            c.mask.elliptical = true;
            c.grappa.taps = [5, 4, 3];
            c.spark.arch = Arch::Net3d;
            c.spark.hidden_channels = 8;
            c.spark.epochs = 80;
            c.spark.lr = 4e-3;
        }
        "pseudo-replica" => {
            c.mask.accel = [5, 1];
            c.mask.acs = [30, 1];
        }
        "slice-group" => {
            c.method = Method::WaveSliceGroup;
            c.phantom.dims = [64, 64, 3];
            c.mask.accel = [5, 1];
            c.mask.shift = 1;
            c.spark.hidden_channels = 16;
        }
        _ => return Err(Error::invalid(format!("unknown scenario `{name}`"))),
    }
    Ok(c)
}

pub fn run(name: &str, cfg: &RunConfig) -> Result<Report> {
    match name {
        "spark-grappa-r4" | "spark-grappa-r5" => spark_grappa(name, cfg),
        "small-acs-raki" => small_acs_raki(name, cfg),
        "vc-grappa" => vc_grappa_convergence(name, cfg),
        "wave-2d" => wave_2d(name, cfg),
        "hybrid-3d" => hybrid_3d(name, cfg),
        "pseudo-replica" => replica(name, cfg),
        "slice-group" => slice_group(name, cfg),
        _ => Err(Error::invalid(format!("unknown scenario `{name}`"))),
    }
}

/// Noisy multi-coil acquisition of the configured phantom.
pub struct Simulation {
    pub truth: ImageData,
    pub maps: ImageData,
    pub noise: NoiseModel,
    /// Fully sampled noisy k-space.
    pub kspace: KspaceData,
    /// Magnitude of the noise-free coil-combined image.
    pub reference: RealImage,
    /// Voxels where the ground truth is positive.
    pub support: Vec<bool>,
}

pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let dims = cfg.phantom.dims;
    let truth = generate_phantom(&cfg.phantom.spec(), &dims)?;
    let maps = generate_sensitivities(&cfg.coils, &dims)?;
    let clean = synthesize_kspace(&truth, &maps)?;
    let noise = cfg.noise.model(cfg.coils.n_coils)?;
    let kspace = add_correlated_noise(&clean, &noise, cfg.noise.sigma)?;
    Ok(Simulation {
        reference: RealImage::magnitude(truth.tensor()),
        support: truth.tensor().data().iter().map(|v| v.re > 0.0).collect(),
        truth,
        maps,
        noise,
        kspace,
    })
}

/// Data as delivered by the scanner for one method.
pub struct Acquired {
    pub kspace: KspaceData,
    pub mask: SamplingMask,
    pub psf: Option<WavePsf>,
    pub calibration: Option<KspaceData>,
}

/// Simulate the acquisition `method` needs from the configured phantom.
pub fn acquire(cfg: &RunConfig, sim: &Simulation, method: Method) -> Result<Acquired> {
    match method {
        Method::Grappa | Method::VcGrappa | Method::Sense => {
            let mask = mask_for(cfg)?;
            Ok(Acquired {
                kspace: apply_mask(&sim.kspace, &mask)?,
                mask,
                psf: None,
                calibration: None,
            })
        }
        Method::Wave => {
            let mask = mask_for(cfg)?;
            let psf = wave_psf(cfg, 1)?;
            Ok(Acquired {
                kspace: wave_data(cfg, sim, &mask, Some(&psf))?,
                mask,
                psf: Some(psf),
                calibration: None,
            })
        }
        Method::WaveSliceGroup => {
            let psf = wave_psf(cfg, cfg.phantom.dims[2])?;
            let (kspace, mask, calibration) = slice_group_data(cfg, sim, Some(&psf))?;
            Ok(Acquired {
                kspace,
                mask,
                psf: Some(psf),
                calibration: Some(calibration),
            })
        }
        Method::Grappa3dHybrid => {
            let mask = mask_for(cfg)?;
            let reference = reference_scan(cfg, sim, &mask)?;
            Ok(Acquired {
                kspace: apply_mask(&sim.kspace, &mask)?,
                mask,
                psf: None,
                calibration: Some(reference),
            })
        }
    }
}

fn mask_for(cfg: &RunConfig) -> Result<SamplingMask> {
    let [_, n, p] = cfg.phantom.dims;
    cfg.mask.build(n, p)
}

fn cartesian(name: &str, cfg: &RunConfig, sim: &Simulation, mask: &SamplingMask, method: Method) -> Result<(Report, f64, f64, RealImage, RealImage)> {
    let under = apply_mask(&sim.kspace, mask)?;
    let acq = Acquisition {
        kspace: &under,
        mask,
        maps: Some(&sim.maps),
        psf: None,
        calibration: None,
    };
    let out = spark_pipeline(method, &acq, cfg)?;
    let mut r = Report::new(name);
    let base = rmse_percent(&out.baseline_image, &sim.reference)?;
    let corr = rmse_percent(&out.image, &sim.reference)?;
    r.value("net_acceleration", mask.net_acceleration());
    loss_records(&mut r, &out.models);
    r.artifact("mask", Container::from_mask(mask));
    r.artifact("corrected", Container::from_kspace(&out.kspace));
    r.artifact("models", Container::from_models(&out.models));
    Ok((r, base, corr, out.baseline_image, out.image))
}

fn loss_records(r: &mut Report, models: &SparkModels) {
    let first: f64 = models.reports.iter().map(|t| t.losses[0]).sum::<f64>() / models.reports.len() as f64;
    let last: f64 = models.reports.iter().map(|t| t.final_loss).sum::<f64>() / models.reports.len() as f64;
    r.record("mean_initial_loss", format!("{first:.6e}"));
    r.record("mean_final_loss", format!("{last:.6e}"));
}

fn spark_grappa(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let (mut r, grappa, spark, ..) = cartesian(name, cfg, &sim, &mask, Method::Grappa)?;
    r.value("rmse_grappa", grappa);
    r.value("rmse_spark", spark);
    r.check(format!("GRAPPA RMSE {grappa:.2}% within [5, 20]"), (5.0..=20.0).contains(&grappa));
    r.check(format!("SPARK RMSE {spark:.2}% <= 0.9 x GRAPPA ({:.2}%)", 0.9 * grappa), spark <= 0.9 * grappa);
    Ok(r)
}

fn small_acs_raki(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let (mut r, grappa, spark, ..) = cartesian(name, cfg, &sim, &mask, Method::Grappa)?;
    let under = apply_mask(&sim.kspace, &mask)?;
    let raki = raki_reconstruct(&under, &mask, &cfg.raki)?;
    let raki_rmse = rmse_percent(&crate::metrics::sos_image(&raki)?, &sim.reference)?;
    r.value("rmse_grappa", grappa);
    r.value("rmse_spark", spark);
    r.value("rmse_raki", raki_rmse);
    r.artifact("raki", Container::from_kspace(&raki));
    r.check(format!("SPARK RMSE {spark:.2}% <= RAKI RMSE {raki_rmse:.2}%"), spark <= raki_rmse);
    Ok(r)
}

fn rel_distance(a: &RealImage, b: &RealImage) -> Result<f64> {
    Ok(2.0 * a.abs_diff(b)?.norm() / (a.norm() + b.norm()))
}

fn vc_grappa_convergence(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let (mut r, g, gs, g_img, gs_img) = cartesian(name, cfg, &sim, &mask, Method::Grappa)?;
    let (rv, v, vs, v_img, vs_img) = cartesian(name, cfg, &sim, &mask, Method::VcGrappa)?;
    r.artifacts.extend(rv.artifacts.into_iter().map(|(k, c)| (format!("vc_{k}"), c)));
    r.value("rmse_grappa", g);
    r.value("rmse_spark_grappa", gs);
    r.value("rmse_vc_grappa", v);
    r.value("rmse_spark_vc_grappa", vs);
    let before = rel_distance(&g_img, &v_img)?;
    let after = rel_distance(&gs_img, &vs_img)?;
    r.value("distance_linear", before);
    r.value("distance_spark", after);
    r.check(format!("SPARK outputs distance {after:.4} <= linear distance {before:.4}"), after <= before);
    Ok(r)
}

fn wave_psf(cfg: &RunConfig, n_slices: usize) -> Result<WavePsf> {
    let [m, n, _] = cfg.phantom.dims;
    make_wave_psf(m, n, n_slices, cfg.wave.oversample, cfg.wave.cycles, cfg.wave.amplitude)
}

/// Fully sampled noisy data through `model` (same noise stream for equal shapes).
fn encode_noisy(model: &EncodingModel, x: &ImageData, noise: &NoiseModel, sigma: f64) -> Result<KspaceData> {
    add_correlated_noise(&model.slice_kspace(x.tensor())?, noise, sigma)
}

/// Readout-oversampled 2D data, wave-encoded when `psf` is given. Both
/// variants draw the same noise.
fn wave_data(cfg: &RunConfig, sim: &Simulation, mask: &SamplingMask, psf: Option<&WavePsf>) -> Result<KspaceData> {
    let full = SamplingMask::full(mask.n_pe(), mask.n_pa());
    let model = EncodingModel::new(&sim.maps, full, psf.cloned(), cfg.wave.oversample)?;
    apply_mask(&encode_noisy(&model, &sim.truth, &sim.noise, cfg.noise.sigma)?, mask)
}

fn wave_2d(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let psf = wave_psf(cfg, 1)?;
    let mut r = Report::new(name);
    let mut run = |method: Method, psf: Option<&WavePsf>| -> Result<(f64, f64)> {
        let data = wave_data(cfg, &sim, &mask, psf)?;
        let acq = Acquisition {
            kspace: &data,
            mask: &mask,
            maps: Some(&sim.maps),
            psf,
            calibration: None,
        };
        if method == Method::Sense {
            let est = estimate(method, &acq, cfg)?;
            r.artifact("sense", Container::from_kspace(&est.baseline));
            let rmse = rmse_percent(&est.image(&est.baseline)?, &sim.reference)?;
            return Ok((rmse, rmse));
        }
        let out = spark_pipeline(method, &acq, cfg)?;
        r.artifact("wave_corrected", Container::from_kspace(&out.kspace));
        Ok((
            rmse_percent(&out.baseline_image, &sim.reference)?,
            rmse_percent(&out.image, &sim.reference)?,
        ))
    };
    let (sense, _) = run(Method::Sense, None)?;
    let (wave, wave_spark) = run(Method::Wave, Some(&psf))?;
    r.value("rmse_sense", sense);
    r.value("rmse_wave", wave);
    r.value("rmse_wave_spark", wave_spark);
    r.check(format!("wave RMSE {wave:.2}% < SENSE RMSE {sense:.2}%"), wave < sense);
    r.check(format!("wave+SPARK RMSE {wave_spark:.2}% < wave RMSE {wave:.2}%"), wave_spark < wave);
    Ok(r)
}

/// Separate low-resolution reference scan covering the ACS block, with its own noise.
fn reference_scan(cfg: &RunConfig, sim: &Simulation, mask: &SamplingMask) -> Result<KspaceData> {
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("hybrid mask has no ACS".into()))?;
    let ref_noise = NoiseModel::new(sim.noise.covariance().clone(), mix_seed(cfg.noise.seed, 0x5eed))?;
    let ref_full = add_correlated_noise(&synthesize_kspace(&sim.truth, &sim.maps)?, &ref_noise, cfg.noise.sigma)?;
    let (e_pe, e_pa) = acs.extent();
    Ok(ref_full.block([0, acs.pe.0, acs.pa.0], [cfg.phantom.dims[0], e_pe, e_pa]))
}

fn hybrid_3d(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let under = apply_mask(&sim.kspace, &mask)?;
    let reference = reference_scan(cfg, &sim, &mask)?;
    let acq = Acquisition {
        kspace: &under,
        mask: &mask,
        maps: None,
        psf: None,
        calibration: Some(&reference),
    };
    let out = spark_pipeline(Method::Grappa3dHybrid, &acq, cfg)?;
    let grappa = rmse_percent(&out.baseline_image, &sim.reference)?;
    let spark = rmse_percent(&out.image, &sim.reference)?;
    let mut r = Report::new(name);
    let paper = hybrid_mask(142, 160, 48, 48, (3, 2), (4, 3), true)?;
    let paper_rate = paper.net_acceleration();
    r.value("net_acceleration_desk", mask.net_acceleration());
    r.value("net_acceleration_paper_grid", paper_rate);
    r.value("rmse_grappa", grappa);
    r.value("rmse_spark", spark);
    loss_records(&mut r, &out.models);
    r.artifact("mask", Container::from_mask(&mask));
    r.artifact("corrected", Container::from_kspace(&out.kspace));
    r.artifact("models", Container::from_models(&out.models));
    r.check(format!("SPARK RMSE {spark:.2}% <= GRAPPA RMSE {grappa:.2}%"), spark <= grappa);
    r.check(
        format!("net acceleration {paper_rate:.2} of the 142x160 hybrid mask within [11, 13]"),
        (11.0..=13.0).contains(&paper_rate),
    );
    Ok(r)
}

/// Pseudo-replica statistics of GRAPPA and SPARK-on-GRAPPA with the kernel
/// and networks fixed from the original data.
pub fn replica_reports(cfg: &RunConfig, sim: &Simulation, mask: &SamplingMask) -> Result<(ReplicaReport, ReplicaReport)> {
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("mask has no ACS".into()))?;
    let under = apply_mask(&sim.kspace, mask)?;
    let acq = Acquisition {
        kspace: &under,
        mask,
        maps: None,
        psf: None,
        calibration: None,
    };
    // Calibrate once on the original data.
    let est = estimate(Method::Grappa, &acq, cfg)?;
    let [nro, ..] = under.dims();
    let (e_pe, e_pa) = acs.extent();
    let block = under.block([0, acs.pe.0, acs.pa.0], [nro, e_pe, e_pa]);
    let kernel = calibrate_sheared(&block, mask.accel, mask.shift, cfg.grappa.taps(), cfg.grappa.lambda)?;
    let models = SparkModels::train(&est.y_acq, &est.y_est, &est.acs, &cfg.spark)?;
    let lattice = mask.without_acs();
    let projector = AcsProjector::from_region(&acs, nro);

    let setup = ReplicaSetup {
        ksp_full: &sim.kspace,
        mask,
        noise: &sim.noise,
        sigma: cfg.noise.sigma,
        n_replicas: cfg.metrics.replicas,
        maps: &sim.maps,
        reference: &sim.reference,
        support: &sim.support,
    };
    let g = pseudo_replica(&setup, |k| acs_replace(&interpolate(k, &lattice, &kernel)?, k, Some(&acs)))?;
    let s = pseudo_replica(&setup, |k| models.apply(&interpolate(k, &lattice, &kernel)?, Some((k, &projector))))?;
    Ok((g, s))
}

fn replica(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let mask = mask_for(cfg)?;
    let (g, s) = replica_reports(cfg, &sim, &mask)?;
    let mut r = Report::new(name);
    for (tag, rep) in [("grappa", &g), ("spark", &s)] {
        r.value(&format!("{tag}_rmse_mean"), rep.rmse_mean);
        r.value(&format!("{tag}_rmse_std"), rep.rmse_std);
        r.value(&format!("{tag}_support_proxy"), rep.support_proxy);
        r.record(&format!("{tag}_flagged"), rep.flagged);
        r.artifact(&format!("{tag}_proxy"), Container::from_real(&rep.proxy));
    }
    let cv = |rep: &ReplicaReport| rep.rmse_std / rep.rmse_mean;
    r.check(
        format!("mean replica RMSE SPARK {:.2}% < GRAPPA {:.2}%", s.rmse_mean, g.rmse_mean),
        s.rmse_mean < g.rmse_mean,
    );
    for (tag, rep) in [("GRAPPA", &g), ("SPARK", &s)] {
        r.check(format!("{tag} replica RMSE CV {:.4} < 0.05", cv(rep)), cv(rep) < 0.05);
    }
    r.check(
        format!("support SNR proxy SPARK {:.3} >= GRAPPA {:.3}", s.support_proxy, g.support_proxy),
        s.support_proxy >= g.support_proxy,
    );
    Ok(r)
}

/// Collapsed slice-group data, its phase-encoding mask and the per-slice
/// ACS calibration scan.
fn slice_group_data(cfg: &RunConfig, sim: &Simulation, psf: Option<&WavePsf>) -> Result<(KspaceData, SamplingMask, KspaceData)> {
    let [_, n, ns] = cfg.phantom.dims;
    let mask = uniform_1d(n, cfg.mask.accel[0], cfg.mask.acs[0])?;
    let acs = mask.acs.ok_or_else(|| Error::AcsTooSmall("slice-group mask has no ACS".into()))?;
    let acs_grid = (0..n).flat_map(|pe| std::iter::repeat_n(acs.contains(pe, 0), ns)).collect();
    let acs_only = SamplingMask::from_grid(n, ns, acs_grid, (1, 1))?;
    let collapsed = EncodingModel::slice_group(&sim.maps, psf.cloned(), SamplingMask::full(n, 1), cfg.wave.oversample, cfg.mask.shift)?;
    let data = apply_mask(&add_correlated_noise(&collapsed.forward(&sim.truth)?, &sim.noise, cfg.noise.sigma)?, &mask)?;
    // Single-slice calibration scans share the collapsed data's noise model on a different stream.
    let calib_noise = NoiseModel::new(sim.noise.covariance().clone(), mix_seed(cfg.noise.seed, 0xca1b))?;
    let calib = apply_mask(&add_correlated_noise(&collapsed.slice_kspace(sim.truth.tensor())?, &calib_noise, cfg.noise.sigma)?, &acs_only)?;
    Ok((data, mask, calib))
}

fn slice_group(name: &str, cfg: &RunConfig) -> Result<Report> {
    let sim = simulate(cfg)?;
    let ns = cfg.phantom.dims[2];
    let psf = wave_psf(cfg, ns)?;
    let mut r = Report::new(name);
    let mut results = Vec::new();
    for (tag, p) in [("sense", None), ("wave", Some(&psf))] {
        let (data, mask, calib) = slice_group_data(cfg, &sim, p)?;
        let acq = Acquisition {
            kspace: &data,
            mask: &mask,
            maps: Some(&sim.maps),
            psf: p,
            calibration: Some(&calib),
        };
        if p.is_none() {
            let est = estimate(Method::WaveSliceGroup, &acq, cfg)?;
            let base = rmse_per_slice(&est.image(&est.baseline)?, &sim.reference)?;
            r.record("rmse_sense", fmt_list(&base));
            r.artifact("sense", Container::from_kspace(&est.baseline));
            results.push((base.clone(), base));
            continue;
        }
        let out = spark_pipeline(Method::WaveSliceGroup, &acq, cfg)?;
        let base = rmse_per_slice(&out.baseline_image, &sim.reference)?;
        let corr = rmse_per_slice(&out.image, &sim.reference)?;
        r.record(&format!("rmse_{tag}"), fmt_list(&base));
        r.record(&format!("rmse_{tag}_spark"), fmt_list(&corr));
        r.artifact(&format!("{tag}_corrected"), Container::from_kspace(&out.kspace));
        results.push((base, corr));
    }
    let (sense, _) = &results[0];
    let (wave, wave_spark) = &results[1];
    for s in 0..ns {
        r.check(
            format!(
                "slice {s}: wave+SPARK {:.2}% <= wave {:.2}% <= SENSE {:.2}%",
                wave_spark[s], wave[s], sense[s]
            ),
            wave_spark[s] <= wave[s] && wave[s] <= sense[s],
        );
    }
    Ok(r)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}
