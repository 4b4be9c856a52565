use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use volbeam::config::{MethodKind, RunConfig};
use volbeam::fdbf::KappaSelection;
use volbeam::io;
use volbeam::metrics::{format_db, segment_samples, Detection, Table};
use volbeam::pipeline::{self, Volume};
use volbeam::pulse::{Pulse, PulseSpec};
use volbeam::{Error, Result};

#[derive(Parser)]
#[command(name = "volbeam", version, about = "Volumetric ultrasound beamforming from sub-Nyquist Fourier data")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set scan.nx=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Beamforming method.
    #[arg(long, value_parser = ["time", "fdbf"])]
    method: Option<String>,

    /// Coefficient selection: full, half, third or a count.
    #[arg(long)]
    kappa: Option<String>,

    /// Receiver noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,

    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut o = self.overrides.clone();
        if let Some(m) = &self.method {
            o.push(format!("method.kind=\"{m}\""));
        }
        if let Some(k) = &self.kappa {
            let v = match k.as_str() {
                "full" | "half" | "third" => format!("\"{k}\""),
                n => {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::Config(format!("unknown kappa selection `{n}`")))?;
                    format!("{{ count = {n} }}")
                }
            };
            o.push(format!("method.kappa={v}"));
        }
        if let Some(s) = self.noise {
            o.push(format!("noise.std={s:e}"));
        }
        if let Some(s) = self.seed {
            o.push(format!("noise.seed={s}"));
        }
        RunConfig::load(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Distortion lookup tables.
    Lut {
        #[command(subcommand)]
        command: LutCommand,
    },
    /// Simulate element signals of the configured phantom into a frame file.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output frame file.
        #[arg(short, long)]
        out: PathBuf,
        /// Store only the low-rate coefficient bands of the fdbf path.
        #[arg(long)]
        bands: bool,
    },
    /// Beamform a frame file over the configured raster.
    Beamform {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input frame file.
        #[arg(short, long)]
        input: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Recover beams from partial Fourier data of a frame file.
    Recover {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Input frame file.
        #[arg(short, long)]
        input: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Point spread functions and SNR of volume files.
    Metrics {
        /// Volume file.
        volume: PathBuf,
        /// Noise-free volume of the same scene, for SNR.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Depth of the lateral PSF cut in metres.
        #[arg(long, default_value_t = 0.0315)]
        focus_depth: f64,
        #[arg(long, default_value_t = 1540.0)]
        speed_of_sound: f64,
        #[arg(long, default_value_t = 3e6)]
        center_frequency: f64,
        /// Pulse -6 dB bandwidth in Hz.
        #[arg(long, default_value_t = 1.4e6)]
        bandwidth: f64,
        /// SNR segment length in wavelengths.
        #[arg(long, default_value_t = 5.0)]
        segment_wavelengths: f64,
        /// Axial PSF half window in samples.
        #[arg(long, default_value_t = 42)]
        axial_window: usize,
        /// Directory for PSF curves.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full acquisition: simulate, beamform, post-process and report.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; defaults to `output.dir`.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        dump_config: bool,
    },
}

#[derive(Subcommand)]
enum LutCommand {
    /// Build the table for the configured geometry, raster and coefficients.
    Build {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output table file.
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn with_input(mut cfg: RunConfig, input: &Path) -> Result<RunConfig> {
    cfg.phantom.input = Some(input.to_path_buf());
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let result = pipeline::run(cfg)?;
    let dir = out.map_or_else(|| cfg.output.dir.clone(), Path::to_path_buf);
    let written = pipeline::write_outputs(cfg, &result, &dir).map_err(|e| e.in_stage("output"))?;
    print!("{}", pipeline::summary(cfg, &result));
    for p in written {
        info!("wrote {}", p.display());
    }
    if let Some(e) = result.convergence_error() {
        if cfg.solver.require_convergence {
            error!(
                "{} of {} beams did not converge; outputs in {} are flagged",
                result.non_converged(),
                result.solver.len(),
                dir.display()
            );
            return Err(e.in_stage("recovery"));
        }
        warn!("{} beams did not converge", result.non_converged());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn metrics(
    volume: &Path,
    reference: Option<&Path>,
    focus_depth: f64,
    c: f64,
    f0: f64,
    bandwidth: f64,
    wavelengths: f64,
    axial_window: usize,
    csv: Option<&Path>,
) -> Result<()> {
    let v = Volume::from_file(&io::read_volume(volume)?)?;
    let pulse = Pulse::new(PulseSpec {
        center_frequency: f0,
        bandwidth,
        sample_rate: v.fs,
    })?;
    let lateral = v.lateral_psf(focus_depth, c, pulse.duration() / 2.0);
    let axial = v.axial_psf(c, axial_window, Detection::Rf);
    let mut t = Table::new(&v.label, &["axis", "FWHM", "avg side lobes [dB]", "first side lobe [dB]"]);
    for (name, unit, r) in [("lateral", "deg", &lateral), ("axial", "mm", &axial)] {
        match r {
            Ok(r) => t.push(vec![
                name.into(),
                format!("{:.4} {unit}", r.fwhm),
                format_db(r.average_sidelobe_db),
                format_db(r.first_sidelobe_db),
            ]),
            Err(e) => warn!("{name} PSF unavailable: {e}"),
        }
    }
    println!("{}", t.render());
    if let Some(r) = reference {
        let clean = Volume::from_file(&io::read_volume(r)?)?;
        let segment = segment_samples(wavelengths * c / f0, c, v.fs);
        let snr = pipeline::volume_snr(&clean, &v, segment)?;
        println!("SNR: {snr:.2} dB");
    }
    if let Some(dir) = csv {
        std::fs::create_dir_all(dir)?;
        if let Ok(l) = &lateral {
            io::write_csv(&dir.join("lpsf.csv"), &["theta_x_deg", "magnitude"], &[&l.positions, &l.curve])?;
        }
        if let Ok(a) = &axial {
            io::write_csv(&dir.join("apsf.csv"), &["depth_mm", "magnitude"], &[&a.positions, &a.curve])?;
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Lut {
            command: LutCommand::Build { cfg, out },
        } => {
            let cfg = cfg.load()?;
            let lut = pipeline::build_config_lut(&cfg)?;
            io::write_lut(&out, &lut)?;
            println!("{} ({} MiB)", out.display(), (lut.data.len() * 8) >> 20);
            Ok(())
        }
        Command::Simulate { cfg, out, bands } => {
            let cfg = cfg.load()?;
            let h = pipeline::simulate_frame(&cfg, &out, bands)?;
            println!(
                "{}: {} angles x {} elements x {} values",
                out.display(),
                h.n_angles(),
                h.elements.len(),
                h.record_len
            );
            Ok(())
        }
        Command::Beamform { cfg, input, out } => {
            let cfg = with_input(cfg.load()?, &input)?;
            execute(&cfg, out.as_deref())
        }
        Command::Recover { cfg, input, out } => {
            let mut cfg = with_input(cfg.load()?, &input)?;
            cfg.method.kind = MethodKind::Fdbf;
            if cfg.method.kappa == KappaSelection::Full {
                return Err(Error::Config("recover needs a partial coefficient selection (--kappa)".into()));
            }
            execute(&cfg, out.as_deref())
        }
        Command::Metrics {
            volume,
            reference,
            focus_depth,
            speed_of_sound,
            center_frequency,
            bandwidth,
            segment_wavelengths,
            axial_window,
            csv,
        } => metrics(
            &volume,
            reference.as_deref(),
            focus_depth,
            speed_of_sound,
            center_frequency,
            bandwidth,
            segment_wavelengths,
            axial_window,
            csv.as_deref(),
        ),
        Command::Run { cfg, out, dump_config } => {
            let cfg = cfg.load()?;
            if dump_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            execute(&cfg, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
