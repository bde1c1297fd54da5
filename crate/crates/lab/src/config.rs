//! Run configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use czlab_core::corpus::GeneratorSpec;
use czlab_core::grid::{BoundaryMode, DyadicDomain, MAX_TOTAL_DEPTH};
use czlab_core::operators::LevelRange;
use czlab_core::verify::{info, CheckContext, OmegaMode};

/// Largest matrix size accepted by the runner.
pub const MAX_MATRIX_DIM: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("run {run}: {message}")]
    Invalid { run: String, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
    Interior,
}

impl From<Boundary> for BoundaryMode {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Periodic => BoundaryMode::Periodic,
            Boundary::Interior => BoundaryMode::Interior,
        }
    }
}

/// A generator and the number of instances drawn from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    #[serde(flatten)]
    pub spec: GeneratorSpec,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

fn default_lambda() -> f64 {
    CheckContext::default().lambda_factor
}

fn default_lambda_grid() -> Vec<f64> {
    CheckContext::default().lambda_factors
}

fn default_p_list() -> Vec<f64> {
    CheckContext::default().p_list
}

/// One grid, one corpus, one list of checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub d: u32,
    #[serde(rename = "K")]
    pub depth: u32,
    pub n: usize,
    /// Heights of the weak-type scans, in units of `‖E_0 f‖_∞`.
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    /// Height of the single-λ checks, in units of `‖E_0 f‖_∞`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// `[k_lo, k_hi]`; all admissible levels when absent.
    #[serde(default)]
    pub level_range: Option<[u32; 2]>,
    #[serde(default)]
    pub seed: u64,
    pub corpus: Vec<CorpusEntry>,
    pub checks: Vec<String>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub boundary_mode: Boundary,
    #[serde(default = "exhaustive")]
    pub omega_mode: OmegaMode,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    /// Relative tolerance per check id, replacing the built-in one on
    /// reports with an explicit bound.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn exhaustive() -> OmegaMode {
    OmegaMode::Exhaustive
}

/// A config file: one run, or several sharing an output directory.
#[derive(Clone, Debug, PartialEq)]
pub enum ConfigFile {
    Suite(Suite),
    Single(RunConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    pub runs: Vec<RunConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Suite, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let suite = Self::parse(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?.into_suite();
        suite.validate()?;
        Ok(suite)
    }

    /// Parses a suite when the top level has `runs`, a single run otherwise,
    /// so that errors name the fields of the intended shape.
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("runs").is_some() {
            serde_json::from_value(value).map(ConfigFile::Suite)
        } else {
            serde_json::from_value(value).map(ConfigFile::Single)
        }
    }

    pub fn into_suite(self) -> Suite {
        match self {
            ConfigFile::Suite(s) => s,
            ConfigFile::Single(r) => Suite { output_dir: r.output_dir.clone(), jobs: r.jobs, runs: vec![r] },
        }
    }
}

impl Suite {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs.is_empty() {
            return Err(ConfigError::Invalid { run: String::new(), message: "no runs".into() });
        }
        for (i, r) in self.runs.iter().enumerate() {
            r.validate()?;
            if self.runs[..i].iter().any(|o| o.label() == r.label()) {
                return Err(r.invalid(format!("duplicate run name {}", r.label())));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// The run name, or a name built from the grid.
    pub fn label(&self) -> String {
        if self.name.is_empty() {
            format!("d{}_K{}_n{}", self.d, self.depth, self.n)
        } else {
            self.name.clone()
        }
    }

    fn invalid(&self, message: String) -> ConfigError {
        ConfigError::Invalid { run: self.label(), message }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d * self.depth > MAX_TOTAL_DEPTH {
            return Err(self.invalid(format!(
                "K·d = {} exceeds {MAX_TOTAL_DEPTH} (at most {} cells)",
                self.d * self.depth,
                1u64 << MAX_TOTAL_DEPTH
            )));
        }
        if self.n == 0 || self.n > MAX_MATRIX_DIM {
            return Err(self.invalid(format!("n = {} outside 1..={MAX_MATRIX_DIM}", self.n)));
        }
        let dom = self.domain()?;
        self.range(&dom)?;
        if self.corpus.is_empty() {
            return Err(self.invalid("empty corpus".into()));
        }
        if self.checks.is_empty() {
            return Err(self.invalid("no checks".into()));
        }
        for c in self.checks.iter().chain(self.tolerances.keys()) {
            if info(c).is_none() {
                return Err(self.invalid(format!("unknown check {c}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) || self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(self.invalid("λ factors must be positive".into()));
        }
        if self.p_list.iter().any(|p| !(p.is_finite() && *p > 1.0)) {
            return Err(self.invalid("p must lie in (1, ∞)".into()));
        }
        if let OmegaMode::Sample { count: 0 } = self.omega_mode {
            return Err(self.invalid("Ω sample count must be positive".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<DyadicDomain, ConfigError> {
        DyadicDomain::new(self.d, self.depth, self.boundary_mode.into()).map_err(|e| self.invalid(e.to_string()))
    }

    pub fn range(&self, domain: &DyadicDomain) -> Result<LevelRange, ConfigError> {
        match self.level_range {
            Some([lo, hi]) => LevelRange::new(domain, lo, hi),
            None => LevelRange::full(domain),
        }
        .map_err(|e| self.invalid(e.to_string()))
    }

    pub fn context(&self) -> CheckContext {
        CheckContext {
            lambda_factors: self.lambda_grid.clone(),
            lambda_factor: self.lambda,
            range: self.level_range.map(|[k_lo, k_hi]| LevelRange { k_lo, k_hi }),
            omega: self.omega_mode,
            p_list: self.p_list.clone(),
            ..CheckContext::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"d": 1, "K": 6, "n": 1, "corpus": [{"family": "diagonal", "profile": {"kind": "steps", "level": 3}}],
            "checks": ["scalar_oracle_match"]}"#
    }

    #[test]
    fn single_run_becomes_a_suite() {
        let file: ConfigFile = ConfigFile::parse(minimal()).unwrap();
        let suite = file.into_suite();
        suite.validate().unwrap();
        assert_eq!(suite.runs[0].label(), "d1_K6_n1");
        assert_eq!(suite.runs[0].corpus[0].count, 1);
    }

    #[test]
    fn guards() {
        let mut r = match ConfigFile::parse(minimal()).unwrap() {
            ConfigFile::Single(r) => r,
            ConfigFile::Suite(_) => unreachable!(),
        };
        r.d = 2;
        r.depth = 10;
        assert!(r.validate().unwrap_err().to_string().contains("K·d = 20"));
        r.d = 1;
        r.depth = 6;
        r.n = 9;
        assert!(r.validate().is_err());
        r.n = 1;
        r.checks = vec!["nonsense".into()];
        assert!(r.validate().is_err());
        r.checks = vec!["l2_bound".into()];
        r.level_range = Some([0, 5]);
        assert!(r.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal().replace("\"n\": 1", "\"n\": 1, \"lamda\": 2");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
    }
}
