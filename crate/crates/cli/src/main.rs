use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kspark::config::RunConfig;
use kspark::io::{export_pgm, read_container, write_container, Container, Window};
use kspark::metrics::{rmse_percent, sos_image};
use kspark::pipeline::{estimate, spark_pipeline, Method};
use kspark::raki::raki_reconstruct;
use kspark::scenarios::{self, acquire, replica_reports, simulate};
use kspark::{Error, ImageData, KspaceData, RealImage};

/// Parallel-imaging reconstruction with scan-specific k-space correction.
#[derive(Parser)]
#[command(name = "kspark", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig, Error> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}

#[derive(Args)]
struct ReconArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Directory written by `phantom`.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    /// Output magnitude image.
    #[arg(long)]
    out: PathBuf,
    /// Also write the reconstructed k-space.
    #[arg(long)]
    kspace_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ground truth, coil maps, full k-space and the acquisition for the configured method.
    Phantom {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sampling pattern from the configuration.
    Mask {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear reconstruction.
    Recon {
        method: Method,
        #[command(flatten)]
        args: ReconArgs,
    },
    /// Linear reconstruction followed by k-space correction.
    Spark {
        method: Method,
        #[command(flatten)]
        args: ReconArgs,
        /// Trained correction networks.
        #[arg(long)]
        models_out: Option<PathBuf>,
    },
    /// Network-only baseline.
    Raki {
        #[command(flatten)]
        args: ReconArgs,
    },
    Eval {
        #[command(subcommand)]
        what: Eval,
    },
    /// Write a magnitude image, or its error against a reference, as binary PGM.
    Export {
        #[arg(long)]
        image: PathBuf,
        /// Export `|image - reference|` instead.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Display window `lo,hi`; `(0, max)` when omitted.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Run a named acceptance scenario and print its report.
    Repro {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(scenarios::NAMES))]
        name: String,
        /// Write the scenario's containers here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the scenario configuration and exit.
        #[arg(long)]
        show_config: bool,
    },
}

#[derive(Subcommand)]
enum Eval {
    /// RMSE in percent against a reference magnitude image.
    Rmse {
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Pseudo-replica statistics of GRAPPA and SPARK-on-GRAPPA, simulated from the configuration.
    PseudoReplica {
        #[command(flatten)]
        config: ConfigArg,
        /// Write the SNR proxy maps as `<dir>/grappa_proxy.kspc` and `<dir>/spark_proxy.kspc`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        which: Which,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Which {
    Grappa,
    Spark,
    Both,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

const TRUTH: &str = "truth.kspc";
const MAPS: &str = "maps.kspc";
const FULL: &str = "kspace_full.kspc";
const REFERENCE: &str = "reference.kspc";
const ACQUIRED: &str = "kspace.kspc";
const MASK: &str = "mask.kspc";
const PSF: &str = "psf.kspc";
const CALIBRATION: &str = "calibration.kspc";

fn write(path: &Path, c: &Container) -> Result<(), Error> {
    write_container(path, c)?;
    println!("wrote={}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn optional(path: PathBuf) -> Result<Option<Container>, Error> {
    if path.exists() {
        read_container(&path).map(Some)
    } else {
        Ok(None)
    }
}

/// Everything `phantom` wrote into a data directory.
struct Inputs {
    kspace: KspaceData,
    mask: kspark::SamplingMask,
    maps: Option<ImageData>,
    psf: Option<kspark::sense::WavePsf>,
    calibration: Option<KspaceData>,
}

impl Inputs {
    fn load(dir: &Path) -> Result<Self, Error> {
        Ok(Self {
            kspace: read_container(&dir.join(ACQUIRED))?.to_kspace()?,
            mask: read_container(&dir.join(MASK))?.to_mask()?,
            maps: optional(dir.join(MAPS))?.map(|c| c.to_maps()).transpose()?,
            psf: optional(dir.join(PSF))?.map(|c| c.to_psf()).transpose()?,
            calibration: optional(dir.join(CALIBRATION))?.map(|c| c.to_kspace()).transpose()?,
        })
    }

    fn view(&self) -> kspark::pipeline::Acquisition<'_> {
        kspark::pipeline::Acquisition {
            kspace: &self.kspace,
            mask: &self.mask,
            maps: self.maps.as_ref(),
            psf: self.psf.as_ref(),
            calibration: self.calibration.as_ref(),
        }
    }
}

fn write_outputs(args: &ReconArgs, image: &RealImage, kspace: &KspaceData) -> Result<(), Error> {
    write(&args.out, &Container::from_real(image))?;
    if let Some(p) = &args.kspace_out {
        write(p, &Container::from_kspace(kspace))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Phantom { config, out } => {
            let cfg = config.load()?;
            create_dir(&out)?;
            let sim = simulate(&cfg)?;
            let acq = acquire(&cfg, &sim, cfg.method)?;
            write(&out.join(TRUTH), &Container::from_tensor(sim.truth.tensor()))?;
            write(&out.join(MAPS), &Container::from_maps(&sim.maps))?;
            write(&out.join(FULL), &Container::from_kspace(&sim.kspace))?;
            write(&out.join(REFERENCE), &Container::from_real(&sim.reference))?;
            write(&out.join(ACQUIRED), &Container::from_kspace(&acq.kspace))?;
            write(&out.join(MASK), &Container::from_mask(&acq.mask))?;
            if let Some(psf) = &acq.psf {
                write(&out.join(PSF), &Container::from_psf(psf))?;
            }
            if let Some(c) = &acq.calibration {
                write(&out.join(CALIBRATION), &Container::from_kspace(c))?;
            }
            println!("net_acceleration={:.6}", acq.mask.net_acceleration());
        }
        Command::Mask { config, out } => {
            let cfg = config.load()?;
            let [_, n_pe, n_pa] = cfg.phantom.dims;
            let mask = cfg.mask.build(n_pe, n_pa)?;
            write(&out, &Container::from_mask(&mask))?;
            println!("sampled={}", mask.count());
            println!("net_acceleration={:.6}", mask.net_acceleration());
        }
        Command::Recon { method, args } => {
            let cfg = args.config.load()?;
            let inputs = Inputs::load(&args.data)?;
            let est = estimate(method, &inputs.view(), &cfg)?;
            let image = est.image(&est.baseline)?;
            write_outputs(&args, &image, &est.baseline)?;
        }
        Command::Spark { method, args, models_out } => {
            let cfg = args.config.load()?;
            let inputs = Inputs::load(&args.data)?;
            let out = spark_pipeline(method, &inputs.view(), &cfg)?;
            write_outputs(&args, &out.image, &out.kspace)?;
            if let Some(p) = models_out {
                write(&p, &Container::from_models(&out.models))?;
            }
            for (coil, r) in out.models.reports.iter().enumerate() {
                println!("coil={} initial_loss={:.6e} final_loss={:.6e}", coil, r.losses[0], r.final_loss);
            }
        }
        Command::Raki { args } => {
            let cfg = args.config.load()?;
            let inputs = Inputs::load(&args.data)?;
            let kspace = raki_reconstruct(&inputs.kspace, &inputs.mask, &cfg.raki)?;
            write_outputs(&args, &sos_image(&kspace)?, &kspace)?;
        }
        Command::Eval { what: Eval::Rmse { recon, reference } } => {
            let recon = read_container(&recon)?.to_real()?;
            let reference = read_container(&reference)?.to_real()?;
            println!("rmse={:.2}", rmse_percent(&recon, &reference)?);
        }
        Command::Eval {
            what: Eval::PseudoReplica { config, out, which },
        } => {
            let cfg = config.load()?;
            let sim = simulate(&cfg)?;
            let [_, n_pe, n_pa] = cfg.phantom.dims;
            let mask = cfg.mask.build(n_pe, n_pa)?;
            let (g, s) = replica_reports(&cfg, &sim, &mask)?;
            if let Some(dir) = &out {
                create_dir(dir)?;
            }
            for (tag, rep, w) in [("grappa", &g, Which::Grappa), ("spark", &s, Which::Spark)] {
                if which != Which::Both && which != w {
                    continue;
                }
                println!("{tag}_rmse_mean={:.6}", rep.rmse_mean);
                println!("{tag}_rmse_std={:.6}", rep.rmse_std);
                println!("{tag}_support_proxy={:.6}", rep.support_proxy);
                println!("{tag}_flagged={}", rep.flagged);
                if let Some(dir) = &out {
                    write(&dir.join(format!("{tag}_proxy.kspc")), &Container::from_real(&rep.proxy))?;
                }
            }
        }
        Command::Export {
            image,
            reference,
            out,
            window,
        } => {
            let mut img = read_container(&image)?.to_real()?;
            if let Some(r) = reference {
                img = img.abs_diff(&read_container(&r)?.to_real()?)?;
            }
            let window = window.map_or(Window::Auto, |(lo, hi)| Window::Range(lo, hi));
            export_pgm(&img, &out, window)?;
            println!("wrote={}", out.display());
        }
        Command::Repro { name, out, show_config } => {
            let cfg = scenarios::config(&name)?;
            if show_config {
                println!("{}", cfg.to_json());
                return Ok(true);
            }
            let report = scenarios::run(&name, &cfg)?;
            print!("{}", report.to_text());
            if let Some(dir) = &out {
                create_dir(dir)?;
                for (label, c) in &report.artifacts {
                    write(&dir.join(format!("{label}.kspc")), c)?;
                }
            }
            println!("passed={}", report.passed());
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
