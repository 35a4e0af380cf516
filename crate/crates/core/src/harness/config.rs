//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "lorenz-full"
//! roster = ["EnKF", "DCT", "DST", "DWT"]
//! ensemble_size = 4
//! cycles = 30
//! realizations = 10
//!
//! [model]
//! kind = "lorenz96"          # or "shallow_water"
//! [model.dynamics]
//! dim = 256
//!
//! [observation]
//! kind = "full"              # "first_variable", "points", "region"
//! variance = 0.04
//!
//! [seeds]
//! truth = 1
//! ```
//!
//! Every field has a default; the defaults reproduce the Lorenz 96
//! full-observation experiment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Lorenz96Config, ShallowWaterConfig};
use crate::ensemble::TaperSpec;
use crate::error::{Error, Result};
use crate::transforms::{TransformKind, Wavelet};

/// How a spectral filter handles observations restricted to a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// The kernel matching the observation operator directly.
    Direct,
    /// Region treated as point observations (`-S`).
    Selection,
    /// Region handled by the augmented state (`-A`).
    Augmented,
}

/// Basis of a spectral filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Identity,
    Dct,
    Dst,
    Dwt,
}

impl Basis {
    fn label(self) -> &'static str {
        match self {
            Basis::Identity => "ID",
            Basis::Dct => "DCT",
            Basis::Dst => "DST",
            Basis::Dwt => "DWT",
        }
    }

    pub fn kind(self, options: &TransformOptions) -> TransformKind {
        match self {
            Basis::Identity => TransformKind::Identity,
            Basis::Dct => TransformKind::Dct,
            Basis::Dst => TransformKind::Dst,
            Basis::Dwt => TransformKind::Dwt {
                wavelet: options.wavelet,
                levels: options.levels,
            },
        }
    }
}

/// One roster entry, written as its legend label (`EnKF`, `Free`, `DCT`,
/// `DWT-A`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FilterSpec {
    Enkf,
    /// No assimilation; reports the free run.
    Free,
    Spectral {
        basis: Basis,
        variant: Variant,
    },
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterSpec::Enkf => f.write_str("EnKF"),
            FilterSpec::Free => f.write_str("Free"),
            FilterSpec::Spectral { basis, variant } => {
                let suffix = match variant {
                    Variant::Direct => "",
                    Variant::Selection => "-S",
                    Variant::Augmented => "-A",
                };
                write!(f, "{}{suffix}", basis.label())
            }
        }
    }
}

impl FromStr for FilterSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        match upper.as_str() {
            "ENKF" => return Ok(FilterSpec::Enkf),
            "FREE" => return Ok(FilterSpec::Free),
            _ => {}
        }
        let (base, variant) = match upper.rsplit_once('-') {
            Some((b, "S")) => (b, Variant::Selection),
            Some((b, "A")) => (b, Variant::Augmented),
            Some(_) => return Err(Error::Config(format!("unknown filter label {s:?}"))),
            None => (upper.as_str(), Variant::Direct),
        };
        let basis = match base {
            "ID" => Basis::Identity,
            "DCT" => Basis::Dct,
            "DST" => Basis::Dst,
            "DWT" => Basis::Dwt,
            _ => return Err(Error::Config(format!("unknown filter label {s:?}"))),
        };
        Ok(FilterSpec::Spectral { basis, variant })
    }
}

impl TryFrom<String> for FilterSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FilterSpec> for String {
    fn from(f: FilterSpec) -> String {
        f.to_string()
    }
}

/// Observation operator applied to the truth; noise enters only through the
/// filters' perturbed observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationTemplate {
    Full {
        variance: f64,
    },
    FirstVariable {
        variance: f64,
    },
    /// Selected nodes of the first variable, `R = variance I`.
    Points {
        indices: Vec<usize>,
        variance: f64,
    },
    /// Nodes `start..start + count` of the first variable.
    Region {
        start: usize,
        count: usize,
        variance: f64,
    },
}

impl Default for ObservationTemplate {
    fn default() -> Self {
        ObservationTemplate::Full { variance: 0.04 }
    }
}

impl ObservationTemplate {
    pub fn variance(&self) -> f64 {
        match self {
            ObservationTemplate::Full { variance }
            | ObservationTemplate::FirstVariable { variance }
            | ObservationTemplate::Points { variance, .. }
            | ObservationTemplate::Region { variance, .. } => *variance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformOptions {
    pub wavelet: Wavelet,
    /// Wavelet depth; omitted means full depth.
    pub levels: Option<usize>,
}

impl Default for TransformOptions {
    fn default() -> Self {
        Self {
            wavelet: Wavelet::Coif2,
            levels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub truth: u64,
    pub ensemble: u64,
    pub perturbations: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            truth: 1,
            ensemble: 2,
            perturbations: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LorenzSetup {
    pub dynamics: Lorenz96Config,
    /// Initial states are drawn componentwise from `N(init_mean, init_variance)`.
    pub init_mean: f64,
    pub init_variance: f64,
    /// Steps taken by truth, members and free run before the first analysis.
    pub spinup_steps: usize,
}

impl Default for LorenzSetup {
    fn default() -> Self {
        Self {
            dynamics: Lorenz96Config::default(),
            init_mean: 0.0005,
            init_variance: 0.01,
            spinup_steps: 1000,
        }
    }
}

/// Factorization used to draw from the background covariance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerChoice {
    /// Dense eigendecomposition when the state fits the dense guard, Kronecker otherwise.
    #[default]
    Auto,
    Dense,
    Kronecker,
}

/// Shallow-water twin setup. Times are in seconds of model time and must be
/// multiples of the model step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowWaterSetup {
    pub grid: ShallowWaterConfig,
    /// Time at which the ensemble is drawn around the background state.
    pub spinup: f64,
    /// Background-run window and stride for the covariance snapshots.
    pub snapshot_start: f64,
    pub snapshot_end: f64,
    pub snapshot_stride: f64,
    /// Free model time between drawing the ensemble and the first analysis.
    pub relax: f64,
    pub taper: TaperSpec,
    pub sampler: SamplerChoice,
}

impl Default for ShallowWaterSetup {
    fn default() -> Self {
        Self::desk()
    }
}

impl ShallowWaterSetup {
    pub fn full_scale() -> Self {
        Self {
            grid: ShallowWaterConfig::full_scale(),
            spinup: 4.0 * 3600.0,
            snapshot_start: 4.0 * 3600.0,
            snapshot_end: 6.0 * 3600.0,
            snapshot_stride: 1.0,
            relax: 3600.0,
            taper: TaperSpec::default(),
            sampler: SamplerChoice::Auto,
        }
    }

    pub fn desk() -> Self {
        Self {
            grid: ShallowWaterConfig::desk(),
            snapshot_stride: 60.0,
            ..Self::full_scale()
        }
    }

    /// Whole number of model steps in `seconds`.
    pub fn steps(&self, seconds: f64, what: &str) -> Result<usize> {
        let ratio = seconds / self.grid.dt;
        let steps = ratio.round();
        if !(seconds >= 0.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "{what} = {seconds} s is not a multiple of the time step {} s",
                self.grid.dt
            )));
        }
        Ok(steps as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Lorenz96(LorenzSetup),
    ShallowWater(ShallowWaterSetup),
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Lorenz96(LorenzSetup::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub roster: Vec<FilterSpec>,
    pub ensemble_size: usize,
    pub cycles: usize,
    /// Model time between analyses; for Lorenz 96 it must equal
    /// `steps_per_cycle * dt`, for shallow water a multiple of `dt`.
    pub cycle_length: f64,
    pub realizations: usize,
    pub observation: ObservationTemplate,
    pub transform: TransformOptions,
    /// Covariance inflation applied before every analysis, `>= 1`.
    pub inflation: f64,
    pub seeds: Seeds,
    /// All filters draw the same observation perturbations in a cycle.
    pub shared_perturbations: bool,
    /// Analysis RMSE above this multiple of the free-run RMSE counts as divergence.
    pub divergence_factor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "lorenz96-full".into(),
            model: ModelConfig::default(),
            roster: ["EnKF", "DCT", "DST", "DWT"]
                .iter()
                .map(|s| s.parse().unwrap())
                .collect(),
            ensemble_size: 4,
            cycles: 30,
            cycle_length: 1.0,
            realizations: 10,
            observation: ObservationTemplate::default(),
            transform: TransformOptions::default(),
            inflation: 1.0,
            seeds: Seeds::default(),
            shared_perturbations: true,
            divergence_factor: 1e3,
        }
    }
}

impl ExperimentConfig {
    /// Shallow-water full-observation experiment on the 32 x 32 grid.
    pub fn shallow_water_desk() -> Self {
        Self {
            name: "shallow-water-desk".into(),
            model: ModelConfig::ShallowWater(ShallowWaterSetup::desk()),
            ensemble_size: 20,
            cycles: 3,
            cycle_length: 60.0,
            realizations: 1,
            observation: ObservationTemplate::Full { variance: 1000.0 },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of model variables (fields) in the state.
    pub fn variables(&self) -> usize {
        match &self.model {
            ModelConfig::Lorenz96(_) => 1,
            ModelConfig::ShallowWater(_) => crate::dynamics::SW_VARIABLES,
        }
    }

    /// Length of one variable block.
    pub fn block_len(&self) -> usize {
        match &self.model {
            ModelConfig::Lorenz96(l) => l.dynamics.dim,
            ModelConfig::ShallowWater(s) => s.grid.cell_count(),
        }
    }

    pub fn variable_names(&self) -> Vec<&'static str> {
        match &self.model {
            ModelConfig::Lorenz96(_) => vec!["x"],
            ModelConfig::ShallowWater(_) => vec!["h", "hu", "hv"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.cycles < 1 {
            return fail("cycles must be at least 1".into());
        }
        if self.ensemble_size < 2 {
            return fail("ensemble_size must be at least 2".into());
        }
        if self.realizations < 1 {
            return fail("realizations must be at least 1".into());
        }
        if !(self.inflation >= 1.0) {
            return fail(format!("inflation must be >= 1, got {}", self.inflation));
        }
        if !(self.divergence_factor > 0.0) {
            return fail("divergence_factor must be positive".into());
        }
        let variance = self.observation.variance();
        if !(variance > 0.0 && variance.is_finite()) {
            return fail(format!("observation variance must be positive, got {variance}"));
        }
        match &self.model {
            ModelConfig::Lorenz96(l) => {
                l.dynamics.validate()?;
                let length = l.dynamics.steps_per_cycle as f64 * l.dynamics.dt;
                if (length - self.cycle_length).abs() > 1e-9 * length.max(1.0) {
                    return fail(format!(
                        "cycle_length {} differs from steps_per_cycle * dt = {length}",
                        self.cycle_length
                    ));
                }
                if !(l.init_variance >= 0.0) {
                    return fail("init_variance must be nonnegative".into());
                }
            }
            ModelConfig::ShallowWater(s) => {
                s.grid.validate()?;
                s.steps(self.cycle_length, "cycle_length")?;
                s.steps(s.spinup, "spinup")?;
                s.steps(s.relax, "relax")?;
                s.steps(s.snapshot_start, "snapshot_start")?;
                s.steps(s.snapshot_end, "snapshot_end")?;
                if s.steps(s.snapshot_stride, "snapshot_stride")? == 0 || s.snapshot_end < s.snapshot_start {
                    return fail("snapshot window must be nonempty with a positive stride".into());
                }
            }
        }
        let n = self.block_len();
        match &self.observation {
            ObservationTemplate::Points { indices, .. } => {
                if indices.is_empty() || indices.iter().any(|&i| i >= n) {
                    return fail(format!("point indices must be nonempty and below {n}"));
                }
            }
            ObservationTemplate::Region { start, count, .. } => {
                if *count == 0 || start + count > n {
                    return fail(format!("region {start}..{} does not fit in {n} nodes", start + count));
                }
            }
            _ => {}
        }
        let region = matches!(self.observation, ObservationTemplate::Region { .. });
        for f in &self.roster {
            if let FilterSpec::Spectral { variant, .. } = f {
                match (variant, region) {
                    (Variant::Direct, true) => {
                        return fail(format!("filter {f} needs a -S or -A suffix for region observations"))
                    }
                    (Variant::Selection | Variant::Augmented, false) => {
                        return fail(format!("filter {f} applies only to region observations"))
                    }
                    _ => {}
                }
            }
        }
        for (i, f) in self.roster.iter().enumerate() {
            if self.roster[..i].contains(f) {
                return fail(format!("filter {f} appears twice in the roster"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for label in ["EnKF", "Free", "ID", "DCT", "DST", "DWT", "DCT-S", "DWT-A", "ID-S"] {
            let f: FilterSpec = label.parse().unwrap();
            assert_eq!(f.to_string(), label);
        }
        assert_eq!("dct-a".parse::<FilterSpec>().unwrap().to_string(), "DCT-A");
        assert!("FFT".parse::<FilterSpec>().is_err());
        assert!("DCT-X".parse::<FilterSpec>().is_err());
    }

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        let sw = ExperimentConfig::shallow_water_desk();
        sw.validate().unwrap();
        assert_eq!(
            ExperimentConfig::from_toml_str(&sw.to_toml_string().unwrap()).unwrap(),
            sw
        );
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn partial_document() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            roster = ["EnKF", "DCT-S", "DWT-A"]
            ensemble_size = 16
            [model]
            kind = "lorenz96"
            [model.dynamics]
            dim = 64
            [observation]
            kind = "region"
            start = 0
            count = 32
            variance = 0.04
            "#,
        )
        .unwrap();
        assert_eq!(cfg.block_len(), 64);
        assert_eq!(cfg.roster.len(), 3);
    }

    #[test]
    fn invalid_documents() {
        for text in [
            "cycles = 0",
            "ensemble_size = 1",
            "realizations = 0",
            "inflation = 0.5",
            "unknown = 3",
            "roster = [\"DCT-A\"]",
            "roster = [\"DCT\", \"DCT\"]",
            "cycle_length = 2.0",
            "[observation]\nkind = \"region\"\nstart = 250\ncount = 10\nvariance = 1.0",
            "[observation]\nkind = \"full\"\nvariance = 0.0",
            "[model]\nkind = \"shallow_water\"\n[model.grid]\ndt = 7.0",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
