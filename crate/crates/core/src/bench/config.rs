//! Experiment configuration (TOML).
//!
//! ```toml
//! system = "double_integrator"    # preset name, or an inline table (below)
//! horizon = 1000
//! controllers = ["h2", "hinf", "competitive", "gpc", "offline", "dac_of_competitive"]
//! seed = 7                        # overridden by COMPCTRL_SEED
//! trials = 1                      # > 1 adds a companion CSV with mean/min/max
//!
//! [noise]
//! kind = "sin"                    # sin | sin_amplitude | constant | uniform | gaussian | gaussian_walk
//! scale = 1.0
//! per_entry_index = false
//! # trace = "w.csv"               # replay a recorded t,w_1..w_m trace instead
//!
//! [gpc]
//! memory = 3
//! eta = 0.002                     # default 1e-5 for gaussian_walk, 0.002 otherwise
//! schedule = "constant"           # or "inverse_sqrt"
//! stabilizer = "lqr"              # or "competitive" (uses K̂₀)
//! # theta = 5.0                   # class radius; default from the stabilizer's certificate
//! # gamma_prime = 0.5
//!
//! [dac]
//! # memory = 20                   # memory of dac_of_competitive; default from epsilon
//! epsilon = 1.0
//!
//! [hinf]
//! tol = 1e-4
//!
//! [output]
//! csv = "results.csv"
//! svg = "results.svg"             # optional
//! # trials_csv = "results.trials.csv"
//! ```
//!
//! An inline system replaces the preset string with a table of matrix
//! literals (rows as arrays):
//!
//! ```toml
//! [system]
//! a = [[1.0, 1.0], [0.0, 1.0]]
//! b = [[0.0], [1.0]]
//! q = [[1.0, 0.0], [0.0, 1.0]]
//! r = [[1.0]]
//! w = 1.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::lds::LtiSystem;
use crate::linalg::Mat;
use crate::noise::NoiseKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    H2,
    Hinf,
    Competitive,
    Gpc,
    Offline,
    DacOfCompetitive,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::H2,
        ControllerKind::Hinf,
        ControllerKind::Competitive,
        ControllerKind::Gpc,
        ControllerKind::Offline,
        ControllerKind::DacOfCompetitive,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ControllerKind::H2 => "h2",
            ControllerKind::Hinf => "hinf",
            ControllerKind::Competitive => "competitive",
            ControllerKind::Gpc => "gpc",
            ControllerKind::Offline => "offline",
            ControllerKind::DacOfCompetitive => "dac_of_competitive",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub w: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Preset(String),
    Inline(InlineSystem),
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::invalid(format!("matrix {name} must be a non-empty rectangular array of rows")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

impl InlineSystem {
    pub fn build(&self) -> Result<LtiSystem> {
        LtiSystem::new(
            matrix("a", &self.a)?,
            matrix("b", &self.b)?,
            matrix("q", &self.q)?,
            matrix("r", &self.r)?,
            self.w,
        )
    }
}

pub const PRESETS: [&str; 2] = ["double_integrator", "synthetic_5x9"];

/// Named systems. `synthetic_5x9` is a fixed, mildly unstable 5-state,
/// 9-input plant with identity costs; it is a generic stand-in for a
/// wide-input example, not a model of any particular aircraft.
pub fn preset(name: &str) -> Result<LtiSystem> {
    match name {
        "double_integrator" => Ok(LtiSystem::double_integrator()),
        "synthetic_5x9" => {
            let a = Mat::from_fn(5, 5, |i, j| {
                if i == j {
                    1.02 - 0.05 * i as f64
                } else if j == i + 1 {
                    0.1
                } else if i == j + 2 {
                    -0.05
                } else {
                    0.0
                }
            });
            let b = Mat::from_fn(5, 9, |i, j| (((i * 9 + j) as f64) * 0.7).sin() * 0.5);
            LtiSystem::new(a, b, Mat::identity(5, 5), Mat::identity(9, 9), 1.0)
        }
        _ => Err(Error::invalid(format!(
            "unknown system preset {name:?}; known presets: {}",
            PRESETS.join(", ")
        ))),
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<LtiSystem> {
        match self {
            SystemSpec::Preset(name) => preset(name),
            SystemSpec::Inline(s) => s.build(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    system: SystemSpec,
}

/// Resolves a preset name, or reads a TOML file holding either a `[system]`
/// table or the bare `a`, `b`, `q`, `r`, `w` keys.
pub fn load_system(arg: &str) -> Result<LtiSystem> {
    if PRESETS.contains(&arg) {
        return preset(arg);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "{arg:?} is neither a preset ({}) nor an existing file",
            PRESETS.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read {arg}: {e}")))?;
    if let Ok(inline) = toml::from_str::<InlineSystem>(&text) {
        return inline.build();
    }
    if let Ok(file) = toml::from_str::<SystemFile>(&text) {
        return file.system.build();
    }
    // Fall back to a full experiment config.
    let cfg = ExperimentConfig::from_toml(&text)?;
    cfg.system.build()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: NoiseKind,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub per_entry_index: bool,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilizerChoice {
    #[default]
    Lqr,
    Competitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    #[default]
    Constant,
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpcSection {
    #[serde(default = "three")]
    pub memory: usize,
    pub eta: Option<f64>,
    #[serde(default)]
    pub schedule: ScheduleChoice,
    #[serde(default)]
    pub stabilizer: StabilizerChoice,
    pub theta: Option<f64>,
    pub gamma_prime: Option<f64>,
}

fn three() -> usize {
    3
}

impl Default for GpcSection {
    fn default() -> Self {
        Self {
            memory: 3,
            eta: None,
            schedule: ScheduleChoice::Constant,
            stabilizer: StabilizerChoice::Lqr,
            theta: None,
            gamma_prime: None,
        }
    }
}

impl GpcSection {
    /// Configured rate, or 0.002 (1e-5 under a Gaussian random walk).
    pub fn eta_for(&self, kind: NoiseKind) -> f64 {
        self.eta.unwrap_or(match kind {
            NoiseKind::GaussianWalk => 1e-5,
            _ => 0.002,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DacSection {
    pub memory: Option<usize>,
    #[serde(default = "one")]
    pub epsilon: f64,
}

impl Default for DacSection {
    fn default() -> Self {
        Self {
            memory: None,
            epsilon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HinfSection {
    #[serde(default = "hinf_tol")]
    pub tol: f64,
}

fn hinf_tol() -> f64 {
    1e-4
}

impl Default for HinfSection {
    fn default() -> Self {
        Self { tol: hinf_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    pub trials_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub horizon: Option<usize>,
    pub controllers: Vec<ControllerKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_trial")]
    pub trials: usize,
    pub noise: NoiseSection,
    #[serde(default)]
    pub gpc: GpcSection,
    #[serde(default)]
    pub dac: DacSection,
    #[serde(default)]
    pub hinf: HinfSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one_trial() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.noise.trace);
        rebase(&mut cfg.output.csv);
        rebase(&mut cfg.output.svg);
        rebase(&mut cfg.output.trials_csv);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.controllers.is_empty() {
            return Err(Error::invalid("at least one controller is required"));
        }
        if self.horizon == Some(0) {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.horizon.is_none() && self.noise.trace.is_none() {
            return Err(Error::invalid("horizon is required unless a noise trace is given"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.gpc.memory == 0 {
            return Err(Error::invalid("gpc.memory must be at least 1"));
        }
        if self.dac.memory == Some(0) || !(self.dac.epsilon > 0.0) {
            return Err(Error::invalid("dac.memory must be positive and dac.epsilon > 0"));
        }
        if !(self.hinf.tol > 0.0) {
            return Err(Error::invalid("hinf.tol must be positive"));
        }
        if let SystemSpec::Preset(name) = &self.system {
            if !PRESETS.contains(&name.as_str()) {
                return Err(Error::invalid(format!("unknown system preset {name:?}")));
            }
        }
        Ok(())
    }

    /// Controllers in canonical order without duplicates.
    pub fn roster(&self) -> Vec<ControllerKind> {
        let mut out = self.controllers.clone();
        out.sort();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        system = "double_integrator"
        horizon = 10
        controllers = ["gpc", "h2"]
        [noise]
        kind = "sin"
    "#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.gpc.memory, 3);
        assert_eq!(cfg.gpc.eta_for(NoiseKind::Sin), 0.002);
        assert_eq!(cfg.gpc.eta_for(NoiseKind::GaussianWalk), 1e-5);
        assert_eq!(cfg.roster(), vec![ControllerKind::H2, ControllerKind::Gpc]);
    }

    #[test]
    fn inline_system_parses() {
        let text = r#"
            horizon = 5
            controllers = ["offline"]
            [system]
            a = [[0.5]]
            b = [[1.0]]
            q = [[1.0]]
            r = [[2.0]]
            [noise]
            kind = "constant"
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        let sys = cfg.system.build().unwrap();
        assert_eq!(sys.r()[(0, 0)], 2.0);
        assert_eq!(sys.w_bound(), 1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            MINIMAL.replace("horizon = 10", "horizon = 0"),
            MINIMAL.replace(r#"["gpc", "h2"]"#, "[]"),
            MINIMAL.replace("double_integrator", "boeing"),
            MINIMAL.replace("\"sin\"", "\"pink\""),
            MINIMAL.replace("[noise]", "colour = 1\n[noise]"),
        ];
        for text in bad {
            let err = ExperimentConfig::from_toml(&text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn ragged_inline_matrix_rejected() {
        let s = InlineSystem {
            a: vec![vec![1.0, 0.0], vec![1.0]],
            b: vec![vec![1.0], vec![0.0]],
            q: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            r: vec![vec![1.0]],
            w: 1.0,
        };
        assert!(matches!(s.build(), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn presets_build() {
        for name in PRESETS {
            preset(name).unwrap();
        }
        assert!(preset("nope").is_err());
    }
}
