//! End-to-end acquisition: simulation or frame input, time- or frequency-domain
//! beamforming over the scan raster, post-processing, metrics and outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::{required_band, sample_budget, BandAcquirer, BudgetMethod, CoefficientBand};
use crate::config::{MethodKind, RunConfig};
use crate::error::{Error, Result};
use crate::fdbf::{
    beamform_frequency, build_lut, lut_hash, pulse_band, DistortionLut, EffectiveBand, LutParams,
};
use crate::fri::{beam_from_full_band, beam_from_sparse, build_system, coefficient_noise_std, solve_l1, MeasurementSystem, StageReport};
use crate::geometry::{beam_support, ArrayGeometry, Element, SamplingGrid, ScanPattern, SteeringAngle};
use crate::io::{self, FrameHeader, FrameReader, FrameWriter, PayloadKind, VolumeFile};
use crate::metrics::{self, axial_psf, format_db, lateral_psf, Detection, PsfReport, Table};
use crate::phantom::{synthesize_element_signals, ElementRecord, NoiseSpec, Phantom};
use crate::pulse::Pulse;
use crate::spectrum::envelope;
use crate::time_bf::{beamform_time, Beam, Interpolation};

/// Beamforming path actually taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamPath {
    Time,
    /// Frequency domain over the full band, inverse transform.
    FdbfFull,
    /// Frequency domain over a partial band, ℓ1 recovery.
    FdbfSparse,
}

/// Sample accounting of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetAudit {
    pub method: BudgetMethod,
    pub n_rx: usize,
    pub lines: usize,
    pub n: usize,
    pub kappa: usize,
    pub l1: usize,
    pub l2: usize,
    /// `sample_budget` for the configured method and ν convention.
    pub budget: u64,
    /// Samples actually handed to the beamformer.
    pub consumed: u64,
}

/// Per-beam solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub angle_index: usize,
    pub iterations: usize,
    pub residual: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub stages: Vec<StageReport>,
}

/// Beams of a complete scan raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub scan: ScanPattern,
    pub beams: Vec<Beam>,
    pub fs: f64,
    pub label: String,
}

impl Volume {
    pub fn n_samples(&self) -> usize {
        self.beams.first().map_or(0, |b| b.samples.len())
    }

    pub fn beam(&self, ix: usize, iy: usize) -> &Beam {
        &self.beams[self.scan.index(ix, iy)]
    }

    pub fn to_file(&self) -> VolumeFile {
        VolumeFile {
            theta_x: self.scan.theta_x_axis().to_vec(),
            theta_y: self.scan.theta_y_axis().to_vec(),
            n_samples: self.n_samples(),
            fs: self.fs,
            label: self.label.clone(),
            voxels: self
                .beams
                .iter()
                .flat_map(|b| b.samples.iter().map(|&v| v as f32))
                .collect(),
        }
    }

    /// Rebuilds a volume from its container. Support bounds are not stored,
    /// so every beam gets the full record length.
    pub fn from_file(f: &VolumeFile) -> Result<Self> {
        let period = f.n_samples as f64 / f.fs;
        let scan = ScanPattern::from_axes(f.theta_x.clone(), f.theta_y.clone(), period)?;
        let beams = f
            .voxels
            .chunks_exact(f.n_samples.max(1))
            .enumerate()
            .map(|(i, c)| Beam {
                angle: scan.angle(i),
                samples: c.iter().map(|&v| f64::from(v)).collect(),
                fs: f.fs,
                support: period,
            })
            .collect();
        Ok(Self {
            scan,
            beams,
            fs: f.fs,
            label: f.label.clone(),
        })
    }

    /// Index of the axis value closest to zero.
    fn center(axis: &[f64]) -> usize {
        axis.iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map_or(0, |(i, _)| i)
    }

    /// Lateral PSF on the `θy ≈ 0` row at `focus_depth`; `pulse_delay` is the
    /// time from echo arrival to the envelope peak of the pulse.
    pub fn lateral_psf(&self, focus_depth: f64, c: f64, pulse_delay: f64) -> Result<PsfReport> {
        let (nx, _) = self.scan.dims();
        let iy = Self::center(self.scan.theta_y_axis());
        let theta: Vec<f64> = self.scan.theta_x_axis().iter().map(|t| t.to_degrees()).collect();
        let profiles: Vec<Vec<f64>> = (0..nx).map(|ix| envelope(&self.beam(ix, iy).samples)).collect();
        let focus = ((2.0 * focus_depth / c + pulse_delay) * self.fs).round() as usize;
        lateral_psf(&theta, &profiles, focus, 2)
    }

    /// Axial PSF of the beam closest to broadside, depth in millimetres.
    pub fn axial_psf(&self, c: f64, half_window: usize, detection: Detection) -> Result<PsfReport> {
        let ix = Self::center(self.scan.theta_x_axis());
        let iy = Self::center(self.scan.theta_y_axis());
        let beam = self.beam(ix, iy);
        let depth: Vec<f64> = (0..beam.samples.len())
            .map(|j| j as f64 / self.fs * c / 2.0 * 1e3)
            .collect();
        axial_psf(&depth, &detection.apply(&beam.samples), half_window)
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub volume: Volume,
    pub path: BeamPath,
    pub audit: BudgetAudit,
    pub solver: Vec<SolverSummary>,
    pub lateral: Option<PsfReport>,
    pub axial: Option<PsfReport>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn non_converged(&self) -> usize {
        self.solver.iter().filter(|s| !s.converged).count()
    }

    /// `NonConvergence` for the worst beam when any beam failed to converge.
    pub fn convergence_error(&self) -> Option<Error> {
        self.solver
            .iter()
            .filter(|s| !s.converged)
            .max_by(|a, b| (a.residual / a.epsilon).total_cmp(&(b.residual / b.epsilon)))
            .map(|s| Error::NonConvergence {
                iterations: s.iterations,
                residual: s.residual,
                epsilon: s.epsilon,
            })
    }
}

/// Where element data comes from.
enum Source {
    Simulate(Phantom),
    Frame(Box<FrameReader>),
}

/// Shared, read-only state of one run.
struct Context {
    cfg: RunConfig,
    fine: ArrayGeometry,
    channels: ArrayGeometry,
    pulse: Pulse,
    grid: SamplingGrid,
    scan: ScanPattern,
    band: EffectiveBand,
    kappa: Vec<usize>,
    path: BeamPath,
    acquirer: Option<BandAcquirer>,
    system: Option<MeasurementSystem>,
    lut: Option<DistortionLut>,
    sigma_bin: f64,
}

/// Element data of one angle.
enum AngleInput {
    Records(Vec<ElementRecord>),
    Bands(Vec<CoefficientBand>),
}

struct AngleResult {
    beam: Beam,
    consumed: u64,
    solver: Option<SolverSummary>,
}

fn stage<T>(r: Result<T>, name: &'static str) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Geometry of presummed channels: one channel per `s × s` block, located at
/// the block centre, active when any element of the block is active.
pub fn subarray_geometry(fine: &ArrayGeometry, s: usize) -> Result<ArrayGeometry> {
    if s == 1 {
        return Ok(fine.clone());
    }
    if !fine.rows().is_multiple_of(s) || !fine.cols().is_multiple_of(s) {
        return Err(Error::Config(format!("grid is not divisible into {s}x{s} blocks")));
    }
    let (px, py) = fine.pitch();
    let (m0, n0) = fine.reference();
    let off = (s as f64 - 1.0) / 2.0;
    let coarse = ArrayGeometry::planar(
        fine.rows() / s,
        fine.cols() / s,
        px * s as f64,
        py * s as f64,
        fine.speed_of_sound(),
    )?
    .with_reference((m0 - off) / s as f64, (n0 - off) / s as f64)?;
    let mut active: Vec<Element> = fine.active().iter().map(|e| Element::new(e.m / s, e.n / s)).collect();
    active.sort_unstable();
    active.dedup();
    coarse.with_active(active)
}

/// Sums each `s × s` block of active elements into one channel, aligning the
/// block for a plane wave from `angle` before averaging.
pub fn presum(
    records: &[ElementRecord],
    fine: &ArrayGeometry,
    coarse: &ArrayGeometry,
    s: usize,
    angle: SteeringAngle,
    fs: f64,
) -> Result<Vec<ElementRecord>> {
    if s == 1 {
        return Ok(records.to_vec());
    }
    let n = records.first().map_or(0, |r| r.samples.len());
    let dir = angle.direction_cosines();
    let interp = Interpolation::default();
    let c = fine.speed_of_sound();
    coarse
        .active()
        .par_iter()
        .map(|&ch| {
            let centre = coarse.offsets(ch);
            let members: Vec<&ElementRecord> = records
                .iter()
                .filter(|r| r.element.m / s == ch.m && r.element.n / s == ch.n)
                .collect();
            if members.is_empty() {
                return Err(Error::Geometry(format!("channel ({}, {}) has no elements", ch.m, ch.n)));
            }
            let mut out = vec![0.0; n];
            for r in &members {
                let d = fine.offsets(r.element);
                let lead: f64 = (0..3).map(|i| (d[i] - centre[i]) * dir[i]).sum::<f64>() / c;
                for (j, o) in out.iter_mut().enumerate() {
                    *o += interp.read(&r.samples, j as f64 - lead * fs);
                }
            }
            let w = 1.0 / members.len() as f64;
            out.iter_mut().for_each(|v| *v *= w);
            Ok(ElementRecord {
                element: ch,
                samples: out,
                noise_std: members[0].noise_std.map(|v| v * w.sqrt()),
            })
        })
        .collect()
}

impl Context {
    fn new(cfg: &RunConfig) -> Result<(Self, Source)> {
        let fine = stage(cfg.geometry(), "geometry")?;
        let s = cfg.geometry.subarray;
        let channels = stage(subarray_geometry(&fine, s), "geometry")?;
        let pulse = stage(cfg.pulse(), "pulse")?;
        let grid = stage(cfg.sampling(), "geometry")?;
        stage(pulse.check_period(grid.period()), "pulse")?;
        let scan = stage(cfg.scan(), "scan")?;
        let band = stage(pulse_band(&pulse, grid.n_samples, cfg.method.band_cutoff_db), "band")?;

        let source = match &cfg.phantom.input {
            Some(path) => {
                let reader = stage(FrameReader::open(path), "input")?;
                check_frame(reader.header(), &fine, &scan, &grid)?;
                Source::Frame(Box::new(reader))
            }
            None => {
                let ph = stage(cfg.phantom(), "phantom")?;
                stage(ph.validate(&fine, &pulse, grid.period()), "phantom")?;
                Source::Simulate(ph)
            }
        };

        let (path, kappa) = match cfg.method.kind {
            MethodKind::Time => (BeamPath::Time, Vec::new()),
            MethodKind::Fdbf => {
                let kappa = stage(band.select(&cfg.method.kappa), "kappa")?;
                if kappa == band.indices() {
                    (BeamPath::FdbfFull, kappa)
                } else {
                    (BeamPath::FdbfSparse, kappa)
                }
            }
        };
        let params = cfg.lut.params();
        let (acquirer, system, lut) = if path == BeamPath::Time {
            (None, None, None)
        } else {
            let (k1, k2) = (kappa[0], *kappa.last().expect("non-empty"));
            let (lo, hi) = stage(required_band(k1, k2, params.l1, params.l2, grid.n_samples), "acquisition")?;
            let acq = stage(BandAcquirer::new(grid.n_samples, lo, hi), "acquisition")?;
            let system = if path == BeamPath::FdbfSparse {
                Some(stage(build_system(&pulse, &kappa, grid.n_samples), "recovery")?)
            } else {
                None
            };
            let lut = stage(load_or_build_lut(cfg, &channels, &scan, &kappa, params), "lut")?;
            (Some(acq), system, lut)
        };
        let sigma_bin = coefficient_noise_std(
            cfg.noise.std / s as f64,
            grid.n_samples,
            channels.n_rx(),
        );
        Ok((
            Self {
                cfg: cfg.clone(),
                fine,
                channels,
                pulse,
                grid,
                scan,
                band,
                kappa,
                path,
                acquirer,
                system,
                lut,
                sigma_bin,
            },
            source,
        ))
    }

    fn lut_params(&self) -> LutParams {
        self.cfg.lut.params()
    }

    fn process(&self, a: usize, input: AngleInput) -> Result<AngleResult> {
        let angle = self.scan.angle(a);
        let fs = self.grid.fs;
        let s = self.cfg.geometry.subarray;
        let input = match input {
            AngleInput::Records(r) => AngleInput::Records(stage(
                presum(&r, &self.fine, &self.channels, s, angle, fs),
                "presum",
            )?),
            bands => bands,
        };
        if self.path == BeamPath::Time {
            let AngleInput::Records(records) = input else {
                return Err(Error::Config("time-domain beamforming needs sample frames".into()));
            };
            let beam = stage(
                beamform_time(&records, &self.channels, angle, fs, self.cfg.method.interpolation),
                "beamform",
            )?;
            let consumed = records.iter().map(|r| r.samples.len() as u64).sum();
            return Ok(AngleResult {
                beam,
                consumed,
                solver: None,
            });
        }

        let bands = match input {
            AngleInput::Records(records) => {
                let acq = self.acquirer.as_ref().expect("frequency path has an acquirer");
                stage(records.iter().map(|r| acq.acquire(r)).collect::<Result<Vec<_>>>(), "acquisition")?
            }
            AngleInput::Bands(b) => b,
        };
        let consumed = bands.iter().map(|b| b.nu() as u64).sum();
        let spectrum = match &self.lut {
            Some(lut) => stage(
                beamform_frequency(&bands, lut, &self.channels, &self.scan, a, self.grid.n_samples),
                "beamform",
            )?,
            None => {
                let single = stage(ScanPattern::single(angle, self.scan.period()), "lut")?;
                let lut = stage(build_lut(&self.channels, &single, &self.kappa, self.lut_params()), "lut")?;
                stage(
                    beamform_frequency(&bands, &lut, &self.channels, &single, 0, self.grid.n_samples),
                    "beamform",
                )?
            }
        };
        if self.path == BeamPath::FdbfFull {
            let beam = stage(beam_from_full_band(&spectrum, &self.band, fs), "reconstruct")?;
            return Ok(AngleResult {
                beam,
                consumed,
                solver: None,
            });
        }
        let system = self.system.as_ref().expect("sparse path has a system");
        let eps = self.cfg.solver.epsilon.epsilon(&spectrum.values, self.sigma_bin);
        let sparse = stage(solve_l1(system, &spectrum.values, eps, &self.cfg.solver.params), "recovery")?;
        let support = stage(beam_support(&self.channels, angle, self.scan.period()), "recovery")?;
        let beam = beam_from_sparse(&sparse, &self.pulse, angle, support);
        Ok(AngleResult {
            beam,
            consumed,
            solver: Some(SolverSummary {
                angle_index: a,
                iterations: sparse.iterations,
                residual: sparse.residual,
                epsilon: sparse.epsilon,
                converged: sparse.converged,
                stages: sparse.stages,
            }),
        })
    }

    fn input(&self, source: &mut Source, a: usize) -> Result<AngleInput> {
        match source {
            Source::Simulate(ph) => {
                let noise = NoiseSpec::new(self.cfg.noise.std, self.cfg.noise.seed).with_stream(a as u64);
                let recs = stage(
                    synthesize_element_signals(&self.fine, ph, &self.pulse, self.grid, self.scan.angle(a), noise),
                    "simulate",
                )?;
                Ok(AngleInput::Records(recs))
            }
            Source::Frame(reader) => match reader.header().payload {
                PayloadKind::Samples => Ok(AngleInput::Records(stage(reader.read_records(), "input")?)),
                PayloadKind::Bands { .. } => {
                    if self.cfg.geometry.subarray != 1 {
                        return Err(Error::Config("coefficient frames cannot be presummed".into()));
                    }
                    Ok(AngleInput::Bands(stage(reader.read_bands(), "input")?))
                }
            },
        }
    }

    fn audit(&self, consumed: u64) -> BudgetAudit {
        let params = self.lut_params();
        let method = if self.path == BeamPath::Time {
            BudgetMethod::Time
        } else {
            BudgetMethod::Frequency
        };
        let budget = sample_budget(
            method,
            self.channels.n_rx(),
            self.scan.len(),
            self.grid.n_samples,
            self.kappa.len(),
            params.l1,
            params.l2,
            self.cfg.method.nu_convention,
        );
        BudgetAudit {
            method,
            n_rx: self.channels.n_rx(),
            lines: self.scan.len(),
            n: self.grid.n_samples,
            kappa: self.kappa.len(),
            l1: params.l1,
            l2: params.l2,
            budget,
            consumed,
        }
    }

    fn label(&self) -> String {
        match self.path {
            BeamPath::Time => "time".into(),
            BeamPath::FdbfFull => format!("fdbf K={}", self.kappa.len()),
            BeamPath::FdbfSparse => format!("fdbf-l1 K={}", self.kappa.len()),
        }
    }
}

fn check_frame(h: &FrameHeader, geom: &ArrayGeometry, scan: &ScanPattern, grid: &SamplingGrid) -> Result<()> {
    let mismatch = |what: &str| Err(Error::Config(format!("input frame {what} differs from the configuration")));
    if h.rows != geom.rows() || h.cols != geom.cols() || h.elements != geom.active() {
        return mismatch("geometry");
    }
    if h.theta_x != scan.theta_x_axis() || h.theta_y != scan.theta_y_axis() {
        return mismatch("scan raster");
    }
    if (h.fs - grid.fs).abs() > 1e-9 * grid.fs {
        return mismatch("sampling rate");
    }
    if h.payload == PayloadKind::Samples && h.record_len != grid.n_samples {
        return mismatch("record length");
    }
    Ok(())
}

fn load_or_build_lut(
    cfg: &RunConfig,
    geom: &ArrayGeometry,
    scan: &ScanPattern,
    kappa: &[usize],
    params: LutParams,
) -> Result<Option<DistortionLut>> {
    if let Some(path) = &cfg.lut.path {
        if path.exists() {
            let lut = io::read_lut(path)?;
            lut.check(geom, scan)?;
            if lut.kappa != kappa || lut.params != params {
                return Err(Error::LutMismatch {
                    expected: crate::fdbf::hex(&lut_hash(geom, scan, kappa, params)),
                    found: crate::fdbf::hex(&lut.hash),
                });
            }
            info!("loaded LUT from {}", path.display());
            return Ok(Some(lut));
        }
    }
    let bytes = DistortionLut::size_bytes(scan.len(), geom.n_rx(), kappa.len(), params);
    let budget = u128::from(cfg.lut.memory_budget_mib) << 20;
    if bytes > budget {
        info!(
            "LUT needs {} MiB, above the {} MiB budget; building per angle",
            bytes >> 20,
            cfg.lut.memory_budget_mib
        );
        return Ok(None);
    }
    let lut = build_lut(geom, scan, kappa, params)?;
    if let Some(path) = &cfg.lut.path {
        io::write_lut(path, &lut)?;
    }
    Ok(Some(lut))
}

/// Runs the configured acquisition and beamforming over the whole raster.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let (ctx, mut source) = Context::new(cfg)?;
    info!(
        "{} angles, {} channels, N = {}, path {:?}",
        ctx.scan.len(),
        ctx.channels.n_rx(),
        ctx.grid.n_samples,
        ctx.path
    );
    let chunk = 2 * rayon::current_num_threads().max(1);
    let mut results: Vec<AngleResult> = Vec::with_capacity(ctx.scan.len());
    let mut start = 0;
    while start < ctx.scan.len() {
        let end = (start + chunk).min(ctx.scan.len());
        let inputs = (start..end)
            .map(|a| ctx.input(&mut source, a))
            .collect::<Result<Vec<_>>>()?;
        let mut done = inputs
            .into_par_iter()
            .enumerate()
            .map(|(i, inp)| ctx.process(start + i, inp))
            .collect::<Result<Vec<_>>>()?;
        results.append(&mut done);
        start = end;
    }

    let consumed = results.iter().map(|r| r.consumed).sum();
    let audit = ctx.audit(consumed);
    let solver: Vec<SolverSummary> = results.iter_mut().filter_map(|r| r.solver.take()).collect();
    let volume = Volume {
        scan: ctx.scan.clone(),
        beams: results.into_iter().map(|r| r.beam).collect(),
        fs: ctx.grid.fs,
        label: ctx.label(),
    };
    let mut warnings = Vec::new();
    let c = cfg.geometry.speed_of_sound;
    let lateral = match volume.lateral_psf(cfg.metrics.focus_depth, c, ctx.pulse.duration() / 2.0) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("lateral PSF unavailable: {e}"));
            None
        }
    };
    let half = (ctx.pulse.duration() * ctx.grid.fs).ceil() as usize;
    let axial = match volume.axial_psf(c, half, Detection::Rf) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("axial PSF unavailable: {e}"));
            None
        }
    };
    let out = RunOutput {
        volume,
        path: ctx.path,
        audit,
        solver,
        lateral,
        axial,
        warnings,
    };
    if out.non_converged() > 0 {
        warn!("{} of {} beams did not converge", out.non_converged(), out.solver.len());
    }
    Ok(out)
}

/// Selected coefficient indices for a frequency-domain configuration.
pub fn kappa_for(cfg: &RunConfig) -> Result<Vec<usize>> {
    let pulse = cfg.pulse()?;
    let grid = cfg.sampling()?;
    let band = pulse_band(&pulse, grid.n_samples, cfg.method.band_cutoff_db)?;
    band.select(&cfg.method.kappa)
}

/// Builds the distortion table for the configured channels, raster and `κ`.
pub fn build_config_lut(cfg: &RunConfig) -> Result<DistortionLut> {
    cfg.validate()?;
    let fine = stage(cfg.geometry(), "geometry")?;
    let channels = stage(subarray_geometry(&fine, cfg.geometry.subarray), "geometry")?;
    let scan = stage(cfg.scan(), "scan")?;
    let kappa = stage(kappa_for(cfg), "kappa")?;
    stage(build_lut(&channels, &scan, &kappa, cfg.lut.params()), "lut")
}

/// Simulates the configured phantom and streams the element data of every
/// angle into a frame container. With `bands`, only the low-rate coefficient
/// band needed by the frequency-domain path is stored.
pub fn simulate_frame(cfg: &RunConfig, path: &Path, bands: bool) -> Result<FrameHeader> {
    cfg.validate()?;
    let geom = stage(cfg.geometry(), "geometry")?;
    let pulse = stage(cfg.pulse(), "pulse")?;
    let grid = stage(cfg.sampling(), "geometry")?;
    let scan = stage(cfg.scan(), "scan")?;
    let phantom = stage(cfg.phantom(), "phantom")?;
    stage(phantom.validate(&geom, &pulse, grid.period()), "phantom")?;
    let acquirer = if bands {
        let kappa = stage(kappa_for(cfg), "kappa")?;
        let params = cfg.lut.params();
        let (lo, hi) = stage(
            required_band(kappa[0], kappa[kappa.len() - 1], params.l1, params.l2, grid.n_samples),
            "acquisition",
        )?;
        Some(stage(BandAcquirer::new(grid.n_samples, lo, hi), "acquisition")?)
    } else {
        None
    };
    let header = FrameHeader {
        rows: geom.rows(),
        cols: geom.cols(),
        elements: geom.active().to_vec(),
        record_len: acquirer.as_ref().map_or(grid.n_samples, |a| a.nu()),
        fs: grid.fs,
        period: grid.period(),
        theta_x: scan.theta_x_axis().to_vec(),
        theta_y: scan.theta_y_axis().to_vec(),
        noise_std: cfg.noise.std,
        seed: cfg.noise.seed,
        payload: match &acquirer {
            None => PayloadKind::Samples,
            Some(a) => PayloadKind::Bands { start: a.low() },
        },
    };
    let mut writer = stage(FrameWriter::create(path, header.clone()), "output")?;
    for a in 0..scan.len() {
        let noise = NoiseSpec::new(cfg.noise.std, cfg.noise.seed).with_stream(a as u64);
        let records = stage(
            synthesize_element_signals(&geom, &phantom, &pulse, grid, scan.angle(a), noise),
            "simulate",
        )?;
        match &acquirer {
            None => stage(writer.write_records(&records), "output")?,
            Some(acq) => {
                let b = stage(records.iter().map(|r| acq.acquire(r)).collect::<Result<Vec<_>>>(), "acquisition")?;
                stage(writer.write_bands(&b), "output")?
            }
        }
    }
    stage(writer.finish(), "output")?;
    Ok(header)
}

/// Envelope detection and log compression: each beam becomes values in
/// `[0, 1]`, where 1 is the volume maximum and 0 is `dynamic_range_db` below it.
pub fn postprocess(beams: &[Beam], dynamic_range_db: f64) -> Vec<Vec<f64>> {
    let env: Vec<Vec<f64>> = beams.par_iter().map(|b| envelope(&b.samples)).collect();
    let peak = env.iter().flatten().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return env.into_iter().map(|e| vec![0.0; e.len()]).collect();
    }
    env.into_iter()
        .map(|e| {
            e.into_iter()
                .map(|v| {
                    let db = 20.0 * (v / peak).max(1e-300).log10();
                    ((db + dynamic_range_db) / dynamic_range_db).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

/// Bilinear read of `grid[row][col]` at fractional coordinates; zero outside.
pub fn bilinear(grid: &[Vec<f64>], row: f64, col: f64) -> f64 {
    let rows = grid.len();
    let cols = grid.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || !(row >= 0.0 && col >= 0.0) {
        return 0.0;
    }
    if row > (rows - 1) as f64 || col > (cols - 1) as f64 {
        return 0.0;
    }
    let r0 = (row.floor() as usize).min(rows - 1);
    let c0 = (col.floor() as usize).min(cols - 1);
    let r1 = (r0 + 1).min(rows - 1);
    let c1 = (c0 + 1).min(cols - 1);
    let fr = row - r0 as f64;
    let fc = col - c0 as f64;
    let top = grid[r0][c0] * (1.0 - fc) + grid[r0][c1] * fc;
    let bottom = grid[r1][c0] * (1.0 - fc) + grid[r1][c1] * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Cross-section through the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    /// Beams with `θy` closest to 0, fanned along `θx`.
    ThetaYZero,
    /// Beams with `θx` closest to 0, fanned along `θy`.
    ThetaXZero,
}

/// Scan-converted sector image of one plane: `width × height` pixels, row
/// 0 at the transducer, lateral extent set by the widest beam.
pub fn cross_section(
    volume: &Volume,
    display: &[Vec<f64>],
    plane: Plane,
    width: usize,
    height: usize,
    speed_of_sound: f64,
) -> Vec<f64> {
    let (nx, ny) = volume.scan.dims();
    let (angles, lines): (Vec<f64>, Vec<Vec<f64>>) = match plane {
        Plane::ThetaYZero => {
            let iy = Volume::center(volume.scan.theta_y_axis());
            (
                volume.scan.theta_x_axis().to_vec(),
                (0..nx).map(|ix| display[volume.scan.index(ix, iy)].clone()).collect(),
            )
        }
        Plane::ThetaXZero => {
            let ix = Volume::center(volume.scan.theta_x_axis());
            (
                volume.scan.theta_y_axis().to_vec(),
                (0..ny).map(|iy| display[volume.scan.index(ix, iy)].clone()).collect(),
            )
        }
    };
    let n = lines.first().map_or(0, |l| l.len());
    let r_max = n as f64 / volume.fs * speed_of_sound / 2.0;
    let a_min = angles.first().copied().unwrap_or(0.0);
    let a_max = angles.last().copied().unwrap_or(0.0);
    let x_max = r_max * a_min.abs().max(a_max.abs()).sin().max(1e-3);
    let step = if angles.len() > 1 {
        (a_max - a_min) / (angles.len() - 1) as f64
    } else {
        1.0
    };
    let mut img = vec![0.0; width * height];
    for j in 0..height {
        let z = r_max * j as f64 / (height - 1) as f64;
        for i in 0..width {
            let x = -x_max + 2.0 * x_max * i as f64 / (width - 1) as f64;
            let r = (x * x + z * z).sqrt();
            let th = x.atan2(z);
            let row = if angles.len() > 1 { (th - a_min) / step } else if th.abs() < 1e-12 { 0.0 } else { -1.0 };
            let col = 2.0 * r / speed_of_sound * volume.fs;
            img[j * width + i] = bilinear(&lines, row, col);
        }
    }
    img
}

/// Writes the volume, images, curves and summary of a run into `dir`.
pub fn write_outputs(cfg: &RunConfig, out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    io::write_volume(&emit("volume.vbv"), &out.volume.to_file())?;
    let display = postprocess(&out.volume.beams, cfg.output.dynamic_range_db);
    let (w, h) = (cfg.output.image_width, cfg.output.image_height);
    let c = cfg.geometry.speed_of_sound;
    for (plane, name) in [(Plane::ThetaYZero, "section_theta_y0.png"), (Plane::ThetaXZero, "section_theta_x0.png")] {
        let img = cross_section(&out.volume, &display, plane, w, h, c);
        io::write_png(&emit(name), w, h, &img)?;
    }
    if let Some(l) = &out.lateral {
        io::write_csv(&emit("lpsf.csv"), &["theta_x_deg", "magnitude"], &[&l.positions, &l.curve])?;
    }
    if let Some(a) = &out.axial {
        io::write_csv(&emit("apsf.csv"), &["depth_mm", "magnitude"], &[&a.positions, &a.curve])?;
    }
    if !out.solver.is_empty() {
        let col = |f: &dyn Fn(&SolverSummary) -> f64| out.solver.iter().map(f).collect::<Vec<f64>>();
        let idx = col(&|s| s.angle_index as f64);
        let tx = col(&|s| out.volume.scan.angle(s.angle_index).theta_x.to_degrees());
        let ty = col(&|s| out.volume.scan.angle(s.angle_index).theta_y.to_degrees());
        let it = col(&|s| s.iterations as f64);
        let res = col(&|s| s.residual);
        let eps = col(&|s| s.epsilon);
        let conv = col(&|s| if s.converged { 1.0 } else { 0.0 });
        io::write_csv(
            &emit("solver.csv"),
            &["angle", "theta_x_deg", "theta_y_deg", "iterations", "residual", "epsilon", "converged"],
            &[&idx, &tx, &ty, &it, &res, &eps, &conv],
        )?;
    }
    std::fs::write(emit("config.toml"), cfg.to_toml())?;
    std::fs::write(emit("summary.txt"), summary(cfg, out))?;
    Ok(written)
}

/// Human-readable report of a run.
pub fn summary(cfg: &RunConfig, out: &RunOutput) -> String {
    let mut s = String::new();
    let a = &out.audit;
    let _ = writeln!(s, "method: {}", out.volume.label);
    let _ = writeln!(s, "noise std: {}, seed: {}", cfg.noise.std, cfg.noise.seed);
    let _ = writeln!(s);
    let mut t = Table::new("Sample budget", &["method", "N_RX", "lines", "per element", "budget", "consumed"]);
    let per = if a.method == BudgetMethod::Time {
        a.n.to_string()
    } else {
        cfg.method.nu_convention.nu(a.kappa, a.l1, a.l2).to_string()
    };
    t.push(vec![
        out.volume.label.clone(),
        a.n_rx.to_string(),
        a.lines.to_string(),
        per,
        a.budget.to_string(),
        a.consumed.to_string(),
    ]);
    let _ = writeln!(s, "{}", t.render());
    let mut t = Table::new("Point spread functions", &["axis", "FWHM", "avg side lobes [dB]", "first side lobe [dB]"]);
    for (name, unit, r) in [("lateral", "deg", &out.lateral), ("axial", "mm", &out.axial)] {
        if let Some(r) = r {
            t.push(vec![
                name.into(),
                format!("{:.4} {unit}", r.fwhm),
                format_db(r.average_sidelobe_db),
                format_db(r.first_sidelobe_db),
            ]);
        }
    }
    let _ = writeln!(s, "{}", t.render());
    if !out.solver.is_empty() {
        let its: Vec<usize> = out.solver.iter().map(|x| x.iterations).collect();
        let _ = writeln!(
            s,
            "solver: {} beams, iterations min {} max {}, non-converged {}",
            out.solver.len(),
            its.iter().min().unwrap_or(&0),
            its.iter().max().unwrap_or(&0),
            out.non_converged()
        );
    }
    for w in &out.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Beam SNR of `noisy` against `clean` for the beam closest to broadside.
pub fn volume_snr(clean: &Volume, noisy: &Volume, segment: usize) -> Result<f64> {
    if clean.scan.dims() != noisy.scan.dims() || clean.n_samples() != noisy.n_samples() {
        return Err(Error::InvalidArgument("volumes differ in shape".into()));
    }
    let ix = Volume::center(clean.scan.theta_x_axis());
    let iy = Volume::center(clean.scan.theta_y_axis());
    metrics::beam_snr(&clean.beam(ix, iy).samples, &noisy.beam(ix, iy).samples, segment)
}
