//! Run configuration, read from TOML. Every field has a default, and the
//! defaults describe the reference simulation: a 32×32 grid with 140 µm pitch,
//! a 3 MHz pulse sampled at 18.25 MHz, 5.5 cm depth and a 21×21 raster over
//! ±7.15°.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::NuConvention;
use crate::error::{Error, Result};
use crate::fdbf::{KappaSelection, LutParams, DEFAULT_BAND_CUTOFF_DB};
use crate::fri::{EpsilonRule, SolverParams};
use crate::geometry::{ArrayGeometry, SamplingGrid, ScanPattern};
use crate::phantom::{Phantom, Reflector};
use crate::pulse::{Pulse, PulseSpec};
use crate::time_bf::{diagonal_subset, Interpolation};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub scan: ScanConfig,
    pub pulse: PulseSpec,
    pub phantom: PhantomConfig,
    pub noise: NoiseConfig,
    pub method: MethodConfig,
    pub lut: LutConfig,
    pub solver: SolverConfig,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveSet {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub rows: usize,
    pub cols: usize,
    pub pitch_x: f64,
    pub pitch_y: f64,
    pub speed_of_sound: f64,
    pub active: ActiveSet,
    /// Side of the square element blocks summed into one channel before
    /// beamforming; 1 disables presumming.
    pub subarray: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            pitch_x: 140e-6,
            pitch_y: 140e-6,
            speed_of_sound: 1540.0,
            active: ActiveSet::Full,
            subarray: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub nx: usize,
    pub ny: usize,
    pub half_angle_x_deg: f64,
    pub half_angle_y_deg: f64,
    /// Imaging depth in metres; sets `T = 2 depth / c`.
    pub depth: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            nx: 21,
            ny: 21,
            half_angle_x_deg: 7.15,
            half_angle_y_deg: 7.15,
            depth: 0.055,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorConfig {
    pub depth: f64,
    #[serde(default)]
    pub theta_x_deg: f64,
    #[serde(default)]
    pub theta_y_deg: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomPreset {
    #[default]
    ThreePoint,
    SinglePoint,
    DenseRandom,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub preset: PhantomPreset,
    /// Depth of the single-point preset.
    pub depth: f64,
    pub reflectors: Vec<ReflectorConfig>,
    pub count: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    pub seed: u64,
    /// Frame container to beamform instead of simulating.
    pub input: Option<PathBuf>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            preset: PhantomPreset::ThreePoint,
            depth: 0.0315,
            reflectors: Vec::new(),
            count: 200,
            min_depth: 0.02,
            max_depth: 0.045,
            seed: 1,
            input: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { std: 0.0, seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    #[default]
    Time,
    Fdbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub kappa: KappaSelection,
    pub band_cutoff_db: f64,
    pub interpolation: Interpolation,
    pub nu_convention: NuConvention,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            kind: MethodKind::Time,
            kappa: KappaSelection::Full,
            band_cutoff_db: DEFAULT_BAND_CUTOFF_DB,
            interpolation: Interpolation::default(),
            nu_convention: NuConvention::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LutConfig {
    pub l1: usize,
    pub l2: usize,
    pub oversample: f64,
    /// LUT container to load; built in memory when absent or stale.
    pub path: Option<PathBuf>,
    /// Largest LUT held in memory at once, in MiB; larger tables are built
    /// one angle at a time.
    pub memory_budget_mib: u64,
}

impl Default for LutConfig {
    fn default() -> Self {
        let p = LutParams::default();
        Self {
            l1: p.l1,
            l2: p.l2,
            oversample: p.oversample,
            path: None,
            memory_budget_mib: 1024,
        }
    }
}

impl LutConfig {
    pub fn params(&self) -> LutParams {
        LutParams {
            l1: self.l1,
            l2: self.l2,
            oversample: self.oversample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub params: SolverParams,
    pub epsilon: EpsilonRule,
    /// Fail the run when any beam's solver did not converge.
    pub require_convergence: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            params: SolverParams::default(),
            epsilon: EpsilonRule::default(),
            require_convergence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Depth of the reflector used for the PSFs, metres.
    pub focus_depth: f64,
    /// Segment length for beam SNR, in wavelengths.
    pub snr_segment_wavelengths: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            focus_depth: 0.0315,
            snr_segment_wavelengths: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub dynamic_range_db: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            dynamic_range_db: 40.0,
            image_width: 256,
            image_height: 384,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applying `key=value` overrides (dotted keys,
    /// TOML values) before validation.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.subarray == 0 {
            return Err(config_err("geometry.subarray must be at least 1"));
        }
        if !g.rows.is_multiple_of(g.subarray) || !g.cols.is_multiple_of(g.subarray) {
            return Err(config_err(format!(
                "a {}x{} grid cannot be split into {s}x{s} sub-arrays",
                g.rows,
                g.cols,
                s = g.subarray
            )));
        }
        if self.scan.nx == 0 || self.scan.ny == 0 {
            return Err(config_err("scan raster must not be empty"));
        }
        if !(self.output.dynamic_range_db > 0.0) {
            return Err(config_err("output.dynamic_range_db must be positive"));
        }
        if self.output.image_width < 2 || self.output.image_height < 2 {
            return Err(config_err("images need at least 2x2 pixels"));
        }
        if self.phantom.preset == PhantomPreset::Custom && self.phantom.reflectors.is_empty() && self.phantom.input.is_none() {
            return Err(config_err("custom phantom needs at least one reflector"));
        }
        if let Some(p) = &self.phantom.input {
            if !p.exists() {
                return Err(config_err(format!("input frame {} does not exist", p.display())));
            }
        }
        if !(self.metrics.snr_segment_wavelengths > 0.0) {
            return Err(config_err("metrics.snr_segment_wavelengths must be positive"));
        }
        if !(self.noise.std >= 0.0) {
            return Err(config_err("noise.std must be non-negative"));
        }
        Ok(())
    }

    /// Full-resolution geometry with the configured active set.
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let g = &self.geometry;
        let geom = ArrayGeometry::planar(g.rows, g.cols, g.pitch_x, g.pitch_y, g.speed_of_sound)?;
        match g.active {
            ActiveSet::Full => Ok(geom),
            ActiveSet::Diagonal => geom.with_active(diagonal_subset(g.rows, g.cols)?),
        }
    }

    pub fn sampling(&self) -> Result<SamplingGrid> {
        SamplingGrid::for_depth(self.scan.depth, self.geometry.speed_of_sound, self.pulse.sample_rate)
    }

    pub fn scan(&self) -> Result<ScanPattern> {
        ScanPattern::raster(
            self.scan.nx,
            self.scan.ny,
            self.scan.half_angle_x_deg.to_radians(),
            self.scan.half_angle_y_deg.to_radians(),
            self.sampling()?.period(),
        )
    }

    pub fn pulse(&self) -> Result<Pulse> {
        Pulse::new(self.pulse)
    }

    pub fn phantom(&self) -> Result<Phantom> {
        let c = self.geometry.speed_of_sound;
        let p = &self.phantom;
        Ok(match p.preset {
            PhantomPreset::ThreePoint => Phantom::three_point(c),
            PhantomPreset::SinglePoint => Phantom::single_point(p.depth, c),
            PhantomPreset::DenseRandom => Phantom::dense_random(
                p.count,
                p.min_depth,
                p.max_depth,
                self.scan.half_angle_x_deg.max(self.scan.half_angle_y_deg).to_radians(),
                c,
                p.seed,
            )?,
            PhantomPreset::Custom => Phantom::new(
                p.reflectors
                    .iter()
                    .map(|r| Reflector::at_depth(r.depth, r.theta_x_deg, r.theta_y_deg, r.amplitude, c))
                    .collect(),
            ),
        })
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_reference_setup() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sampling().unwrap().n_samples, 1304);
        assert_eq!(c.scan().unwrap().len(), 441);
        assert_eq!(c.geometry().unwrap().n_rx(), 1024);
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.method.kind = MethodKind::Fdbf;
        c.method.kappa = KappaSelection::Count(80);
        c.solver.epsilon = EpsilonRule::Noise;
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides() {
        let c = RunConfig::load(
            None,
            &[
                "geometry.rows=8".into(),
                "geometry.cols=8".into(),
                "method.kind=fdbf".into(),
                "method.kappa=third".into(),
                "geometry.active=diagonal".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.geometry.rows, 8);
        assert_eq!(c.method.kind, MethodKind::Fdbf);
        assert_eq!(c.method.kappa, KappaSelection::Third);
        assert_eq!(c.geometry().unwrap().n_rx(), 16);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(RunConfig::from_toml("[scan]\nbogus = 1"), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[geometry]\nsubarray = 3"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("[phantom]\npreset = \"custom\"").is_err());
    }
}
