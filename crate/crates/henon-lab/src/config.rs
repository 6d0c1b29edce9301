//! Versioned JSON experiment configuration.
//!
//! Every section rejects unknown keys. All fields except `version` have defaults,
//! so `{"version": 1}` is a complete configuration for the reference experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::map::{ElementaryFactor, HenonMap, C64};
use crate::mixing::{Centering, CorrelationOptions, EstimatorKind, TailOptions};
use crate::observable::ObsSpec;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Base points of the reference pair: the two fixed points ±(½ − ½i)(1, 1).
pub const REFERENCE_PHI: &str = "ext:trunc:5:log_dist:0.5,-0.5,0.5,-0.5";
pub const REFERENCE_PSI: &str = "ext:trunc:5:log_dist:-0.5,0.5,-0.5,0.5";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub map: MapSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub green: GreenConfig,
    /// Mollification radius in grid spacings.
    #[serde(default = "default_mollify_cells")]
    pub mollify_cells: f64,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default)]
    pub observables: ObservableConfig,
    #[serde(default = "default_lags")]
    pub lags: Vec<usize>,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default)]
    pub tail: TailConfig,
    #[serde(default)]
    pub dsh: DshConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

/// `"reference"`, `"quadratic:c_re,c_im,delta_re,delta_im"`, or an explicit factor list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Named(String),
    Factors { factors: Vec<FactorSpec> },
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec::Named("reference".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSpec {
    /// Ascending coefficients of p as [re, im] pairs.
    pub coeffs: Vec<[f64; 2]>,
    pub delta: [f64; 2],
}

impl MapSpec {
    pub fn parse(s: &str) -> Result<MapSpec> {
        let spec = MapSpec::Named(s.to_string());
        spec.build()?;
        Ok(spec)
    }

    pub fn build(&self) -> Result<HenonMap> {
        let bad = |why: String| Error::Config(format!("map: {why}"));
        match self {
            MapSpec::Named(name) if name == "reference" => Ok(HenonMap::reference()),
            MapSpec::Named(name) => {
                let rest = name
                    .strip_prefix("quadratic:")
                    .ok_or_else(|| bad(format!("unknown map '{name}'")))?;
                let v: Vec<f64> = rest
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad(format!("'{rest}' is not a number list")))?;
                let [cr, ci, dr, di]: [f64; 4] =
                    v.try_into().map_err(|_| bad("quadratic needs c_re,c_im,delta_re,delta_im".into()))?;
                HenonMap::quadratic(C64::new(cr, ci), C64::new(dr, di)).map_err(|e| bad(e.to_string()))
            }
            MapSpec::Factors { factors } => {
                let fs = factors
                    .iter()
                    .map(|f| {
                        let coeffs = f.coeffs.iter().map(|c| C64::new(c[0], c[1])).collect();
                        ElementaryFactor::new(coeffs, C64::new(f.delta[0], f.delta[1]))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| bad(e.to_string()))?;
                HenonMap::new(fs).map_err(|e| bad(e.to_string()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub resolution: usize,
    /// Half-width of the cubical box [−r, r]⁴.
    pub radius: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 48,
            radius: 2.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GreenConfig {
    pub tol: f64,
    pub n_max: usize,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self { tol: 1e-8, n_max: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub delta: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self { delta: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub clip_ceiling: f64,
    /// Boundary layers left out; absent means kernel reach + 1.
    pub margin: Option<usize>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            clip_ceiling: 0.05,
            margin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableConfig {
    pub phi: String,
    pub psi: String,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        Self {
            phi: REFERENCE_PHI.into(),
            psi: REFERENCE_PSI.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    pub kind: EstimatorKind,
    pub centering: Centering,
    pub bootstrap: usize,
    pub block: usize,
    pub escape_limit: f64,
    pub noise_floor_multiplier: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        let o = CorrelationOptions::default();
        Self {
            kind: o.kind,
            centering: o.centering,
            bootstrap: o.bootstrap,
            block: o.block,
            escape_limit: o.escape_limit,
            noise_floor_multiplier: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    pub observable: String,
    pub m_grid: Vec<f64>,
    pub samples: usize,
    pub min_hits: usize,
    pub max_residual: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        let o = TailOptions::default();
        Self {
            observable: "log_dist:0.5,-0.5,0.5,-0.5".into(),
            m_grid: (1..=8).map(f64::from).collect(),
            samples: 4_000_000,
            min_hits: o.min_hits,
            max_residual: o.max_residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DshConfig {
    pub phi: String,
    pub psi: String,
    pub lags: Vec<usize>,
    pub floor: f64,
}

impl Default for DshConfig {
    fn default() -> Self {
        Self {
            phi: "loc:log_dist:0.5,-0.5,0.5,-0.5".into(),
            psi: "loc:log_dist:-0.5,0.5,-0.5,0.5".into(),
            lags: (0..=10).step_by(2).collect(),
            floor: -50.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Field and measure cache; relative paths are taken under `dir`.
    pub cache: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            cache: "cache".into(),
        }
    }
}

fn default_mollify_cells() -> f64 {
    2.0
}

fn default_lags() -> Vec<usize> {
    (0..=14).step_by(2).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            map: MapSpec::default(),
            grid: GridConfig::default(),
            green: GreenConfig::default(),
            mollify_cells: default_mollify_cells(),
            thresholds: ThresholdConfig::default(),
            measure: MeasureConfig::default(),
            observables: ObservableConfig::default(),
            lags: default_lags(),
            correlation: CorrelationConfig::default(),
            tail: TailConfig::default(),
            dsh: DshConfig::default(),
            seed: 0,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without computing.
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(why));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        self.map.build()?;
        if self.grid.resolution < 8 || !(self.grid.radius > 0.0) {
            return bad("grid needs resolution >= 8 and radius > 0".into());
        }
        if !(self.green.tol > 0.0) || self.green.n_max == 0 {
            return bad("green needs tol > 0 and n_max > 0".into());
        }
        if !(self.mollify_cells >= 0.0) {
            return bad("mollify_cells must be nonnegative".into());
        }
        if !(self.thresholds.delta > 0.0) {
            return bad("thresholds.delta must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.measure.clip_ceiling) {
            return bad("measure.clip_ceiling must lie in [0, 1]".into());
        }
        for label in [&self.observables.phi, &self.observables.psi, &self.tail.observable, &self.dsh.phi, &self.dsh.psi] {
            ObsSpec::parse(label).map_err(|e| Error::Config(e.to_string()))?;
        }
        for (name, lags) in [("lags", &self.lags), ("dsh.lags", &self.dsh.lags)] {
            if lags.is_empty() || lags.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("{name} must be nonempty and strictly increasing"));
            }
            if self.correlation.kind == EstimatorKind::Symmetric && lags.iter().any(|n| n % 2 == 1) {
                return bad(format!("{name}: the symmetric estimator needs even lags"));
            }
        }
        if self.correlation.block == 0 || !(self.correlation.noise_floor_multiplier > 0.0) {
            return bad("correlation needs block >= 1 and a positive noise_floor_multiplier".into());
        }
        if self.tail.m_grid.is_empty() || self.tail.samples == 0 {
            return bad("tail needs levels and samples".into());
        }
        Ok(())
    }

    pub fn correlation_options(&self) -> CorrelationOptions {
        CorrelationOptions {
            kind: self.correlation.kind,
            centering: self.correlation.centering,
            bootstrap: self.correlation.bootstrap,
            block: self.correlation.block,
            escape_limit: self.correlation.escape_limit,
            escape_radius: None,
            seed: self.seed,
        }
    }

    pub fn tail_options(&self) -> TailOptions {
        TailOptions {
            samples: self.tail.samples,
            seed: self.seed,
            min_hits: self.tail.min_hits,
            max_residual: self.tail.max_residual,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        if self.output.cache.is_absolute() {
            self.output.cache.clone()
        } else {
            self.output.dir.join(&self.output.cache)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_complete() {
        let cfg = ExperimentConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.map.build().unwrap(), HenonMap::reference());
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            r#"{"version": 1, "colour": 3}"#,
            r#"{"version": 1, "grid": {"resolution": 16, "radius": 2, "rad": 1}}"#,
            r#"{"version": 1, "correlation": {"blocks": 2}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn version_and_values_are_validated() {
        for text in [
            r#"{}"#,
            r#"{"version": 2}"#,
            r#"{"version": 1, "map": "henon"}"#,
            r#"{"version": 1, "lags": [0, 3]}"#,
            r#"{"version": 1, "observables": {"phi": "ext:nope", "psi": "coord_sq"}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn map_specs() {
        let q = MapSpec::parse("quadratic:0,0.5,-1,0").unwrap().build().unwrap();
        assert_eq!(q, HenonMap::reference());
        let f: MapSpec = serde_json::from_str(r#"{"factors": [{"coeffs": [[0,0.5],[0,0],[1,0]], "delta": [-1,0]}]}"#).unwrap();
        assert_eq!(f.build().unwrap(), HenonMap::reference());
        assert!(MapSpec::parse("quadratic:1,2").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
