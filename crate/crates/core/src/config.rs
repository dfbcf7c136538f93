//! Run configuration: a TOML document with every default resolved on load.
//!
//! ```toml
//! command = "scan"
//! mu = 0.1
//! t_out = 40.0
//!
//! [grid]
//! r_range = [0.1, 4.0]
//! l_range = [-2.5, 2.5]
//! n_r = 100
//! n_l = 100
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{DetectorConfig, Formulation};
use crate::dynamics::MassRatio;
use crate::error::{Error, Result};
use crate::foliation::Plane;
use crate::integrator::IntegratorOptions;
use crate::scan::{PlaneSeedSpec, ScanSettings};
use crate::section::SectionConfig;
use crate::unperturbed::Ratio;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Scan,
    Detect,
    Section,
    Pendulum,
    Overlays,
    Lyapunov,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Scan => "scan",
            Command::Detect => "detect",
            Command::Section => "section",
            Command::Pendulum => "pendulum",
            Command::Overlays => "overlays",
            Command::Lyapunov => "lyapunov",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scan" => Ok(Command::Scan),
            "detect" => Ok(Command::Detect),
            "section" => Ok(Command::Section),
            "pendulum" => Ok(Command::Pendulum),
            "overlays" => Ok(Command::Overlays),
            "lyapunov" => Ok(Command::Lyapunov),
            _ => Err(Error::InvalidArgument(format!("unknown command '{s}'"))),
        }
    }
}

/// Coordinates used for plotted output. Seeding always uses `(r, L)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    #[default]
    #[serde(rename = "rl")]
    RL,
    /// `(r/(r+m), L/sqrt(r))`
    Bar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r_range: [f64; 2],
    pub l_range: [f64; 2],
    pub n_r: usize,
    pub n_l: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_range: [0.1, 4.0],
            l_range: [-2.5, 2.5],
            n_r: 100,
            n_l: 100,
        }
    }
}

/// Detector settings other than `t_out`, the formulation and the integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTuning {
    pub arming_rel: f64,
    pub event_tol: f64,
    pub degeneracy_tol: f64,
    pub exclusion: f64,
    pub full_horizon: bool,
}

impl Default for DetectorTuning {
    fn default() -> Self {
        let d = DetectorConfig::default();
        Self {
            arming_rel: d.arming_rel,
            event_tol: d.event_tol,
            degeneracy_tol: d.degeneracy_tol,
            exclusion: ScanSettings::default().exclusion,
            full_horizon: d.full_horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// File name stem; outputs are `<stem>.csv`, `<stem>.json`, ...
    pub stem: String,
    pub png: bool,
    /// Pixels per grid cell in the PNG raster.
    pub cell_pixels: u32,
    pub coords: CoordMode,
    /// `m` of the bar coordinates.
    pub bar_m: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            stem: "run".to_string(),
            png: true,
            cell_pixels: 4,
            coords: CoordMode::RL,
            bar_m: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionTuning {
    pub n_returns: usize,
    pub t_max: f64,
    pub tangency_tol: f64,
}

impl Default for SectionTuning {
    fn default() -> Self {
        let d = SectionConfig::default();
        Self {
            n_returns: 200,
            t_max: d.t_max,
            tangency_tol: d.tangency_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub q0: f64,
    pub p_range: [f64; 2],
    pub n: usize,
    pub t_out: f64,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            q0: 0.0,
            p_range: [0.1, 3.0],
            n: 300,
            t_out: 200.0,
        }
    }
}

fn default_plane() -> Plane {
    Plane::Zero
}

fn default_t_out() -> f64 {
    40.0
}

fn default_formulation() -> Formulation {
    Formulation::General
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub mu: MassRatio,
    #[serde(default = "default_plane")]
    pub plane: Plane,
    #[serde(default = "default_t_out")]
    pub t_out: f64,
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub winding_ratios: Vec<Ratio>,
    /// Plane seeds `(r, L)` for `detect`, `section` and `lyapunov`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<[f64; 2]>,
    /// Full states `(x, y, vx, vy)` for `detect`, `section` and `lyapunov`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<[f64; 4]>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    #[serde(default)]
    pub detector: DetectorTuning,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub section: SectionTuning,
    #[serde(default, skip_serializing_if = "is_default")]
    pub pendulum: PendulumConfig,
}

impl RunConfig {
    /// Defaults for `command` at mass ratio `mu`.
    pub fn new(command: Command, mu: MassRatio) -> Self {
        Self {
            command,
            mu,
            plane: default_plane(),
            t_out: default_t_out(),
            formulation: default_formulation(),
            workers: None,
            winding_ratios: Vec::new(),
            seeds: Vec::new(),
            states: Vec::new(),
            grid: GridConfig::default(),
            integrator: IntegratorOptions::default(),
            detector: DetectorTuning::default(),
            output: OutputConfig::default(),
            section: SectionTuning::default(),
            pendulum: PendulumConfig::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.detector_config().violations();
        v.extend(self.seed_spec().violations().into_iter().map(|e| format!("grid: {e}")));
        if !(self.detector.exclusion >= 0.0) {
            v.push(format!("detector.exclusion = {} must be >= 0", self.detector.exclusion));
        }
        if self.workers == Some(0) {
            v.push("workers must be >= 1".into());
        }
        for (k, s) in self.seeds.iter().enumerate() {
            if !(s[0] > 0.0 && s[1].is_finite()) {
                v.push(format!("seeds[{k}] = {s:?} needs r > 0 and finite L"));
            }
        }
        for (k, s) in self.states.iter().enumerate() {
            if !s.iter().all(|x| x.is_finite()) {
                v.push(format!("states[{k}] = {s:?} is not finite"));
            }
        }
        if self.output.cell_pixels == 0 {
            v.push("output.cell_pixels must be >= 1".into());
        }
        if !(self.output.bar_m > 0.0) {
            v.push(format!("output.bar_m = {} must be > 0", self.output.bar_m));
        }
        if self.output.stem.is_empty() {
            v.push("output.stem must not be empty".into());
        }
        v.extend(self.section_config().violations().into_iter().map(|e| format!("section: {e}")));
        if self.section.n_returns == 0 {
            v.push("section.n_returns must be >= 1".into());
        }
        let p = &self.pendulum;
        if !(p.p_range[0] <= p.p_range[1] && p.p_range.iter().all(|x| x.is_finite())) {
            v.push(format!("pendulum.p_range {:?} must satisfy lo <= hi", p.p_range));
        }
        if p.n == 0 {
            v.push("pendulum.n must be >= 1".into());
        }
        if !(p.t_out > 0.0 && p.t_out.is_finite()) {
            v.push(format!("pendulum.t_out = {} must be positive", p.t_out));
        }
        if !p.q0.is_finite() {
            v.push("pendulum.q0 must be finite".into());
        }
        if matches!(self.command, Command::Detect | Command::Section)
            && self.seeds.is_empty()
            && self.states.is_empty()
        {
            v.push(format!("command '{}' needs seeds or states", self.command));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(v))
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            t_out: self.t_out,
            formulation: self.formulation,
            integrator: self.integrator,
            arming_rel: self.detector.arming_rel,
            event_tol: self.detector.event_tol,
            degeneracy_tol: self.detector.degeneracy_tol,
            full_horizon: self.detector.full_horizon,
        }
    }

    pub fn scan_settings(&self) -> ScanSettings {
        ScanSettings {
            detector: self.detector_config(),
            exclusion: self.detector.exclusion,
            workers: self.workers,
        }
    }

    pub fn seed_spec(&self) -> PlaneSeedSpec {
        PlaneSeedSpec {
            plane: self.plane,
            r_range: self.grid.r_range,
            l_range: self.grid.l_range,
            n_r: self.grid.n_r,
            n_l: self.grid.n_l,
            mu: self.mu,
        }
    }

    pub fn section_config(&self) -> SectionConfig {
        SectionConfig {
            t_max: self.section.t_max,
            integrator: self.integrator,
            tangency_tol: self.section.tangency_tol,
            ..SectionConfig::default()
        }
    }

    /// Canonical TOML text with all defaults written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig serialises to TOML")
    }

    /// Hex SHA-256 of [`RunConfig::to_toml`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    /// Parse without validating, so that overrides can still be applied.
    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }
}

/// Parse and validate a TOML run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = text.parse()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
