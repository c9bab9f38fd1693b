//! Declarative experiment files (TOML).
//!
//! ```toml
//! seed = 7
//! alpha = 1.0
//! replicates = 10000
//!
//! [space]
//! kind = "unit-interval"
//!
//! [[integrand]]
//! name = "f"
//! expr = "ind([0, 0.5) x [0.5, 1))"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, Expr};
use crate::harness::digest_hex;
use crate::integrals::SampleConfig;
use crate::integrand::Integrand;
use crate::lepage::TruncationPolicy;
use crate::measure::{
    make_discrete_space, make_interval, make_renewal_space, make_sigma_finite_interval, make_unit_interval, DensityFn,
    MeasureSpace, SpaceError,
};
use crate::regenerative::renewal::RenewalSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("integrand '{name}' at line {line}, column {column}: {message}")]
    Expr { name: String, line: usize, column: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomDecl {
    pub id: String,
    pub weight: f64,
}

/// Density of `mu` with respect to Lebesgue measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law", deny_unknown_fields)]
pub enum DensityDecl {
    Constant {
        value: f64,
    },
    /// `(p + 1) x^p` on the unit interval.
    Power {
        exponent: f64,
    },
    LogSqueezed,
}

impl DensityDecl {
    fn build(&self) -> DensityFn {
        match self {
            DensityDecl::Constant { value } => DensityFn::constant(*value),
            DensityDecl::Power { exponent } => DensityFn::power(*exponent),
            DensityDecl::LogSqueezed => DensityFn::log_squeezed(),
        }
    }
}

fn default_half_line_depth() -> usize {
    48
}

fn default_cf() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SpaceDecl {
    Discrete {
        atoms: Vec<AtomDecl>,
    },
    UnitInterval {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<DensityDecl>,
    },
    Interval {
        lo: f64,
        hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<DensityDecl>,
    },
    /// Lebesgue measure on `[0, inf)` exhausted by `[0, 2^j)`, `j = 1..=depth`.
    HalfLine {
        #[serde(default = "default_half_line_depth")]
        depth: usize,
    },
    /// Renewal paths through a window `{0..=n}` with tail `C_F (1 + n)^-beta`.
    Renewal {
        beta: f64,
        n: u64,
        #[serde(default = "default_cf")]
        cf: f64,
    },
}

impl SpaceDecl {
    pub fn build(&self) -> Result<MeasureSpace, ConfigError> {
        Ok(match self {
            SpaceDecl::Discrete { atoms } => {
                let pairs: Vec<(&str, f64)> = atoms.iter().map(|a| (a.id.as_str(), a.weight)).collect();
                make_discrete_space(&pairs)?
            }
            SpaceDecl::UnitInterval { density } => make_unit_interval(density.as_ref().map(DensityDecl::build))?,
            SpaceDecl::Interval { lo, hi, density } => {
                make_interval(*lo, *hi, density.as_ref().map(DensityDecl::build))?
            }
            SpaceDecl::HalfLine { depth } => {
                if *depth == 0 || *depth > 60 {
                    return Err(ConfigError::Invalid(format!("half-line depth {depth} must lie in 1..=60")));
                }
                let ex = (1..=*depth as i32).map(|j| (0.0, 2f64.powi(j))).collect();
                make_sigma_finite_interval(0.0, f64::INFINITY, None, ex)?
            }
            SpaceDecl::Renewal { beta, n, cf } => {
                let spec = RenewalSpec::power_tail(*beta).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let spec = RenewalSpec { cf: *cf, ..spec };
                make_renewal_space(&spec, *n)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandDecl {
    pub name: String,
    pub expr: String,
}

fn default_out_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputDecl {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    /// File stem for every artifact; defaults to the subcommand name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

impl Default for OutputDecl {
    fn default() -> Self {
        OutputDecl { dir: default_out_dir(), prefix: None }
    }
}

/// Settings of tail fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailDecl {
    /// Power of the logarithmic correction; defaults to `k - 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_power: Option<f64>,
    /// Constant to compare against; defaults to the analytic value when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    crate::tail::DEFAULT_TAIL_TOLERANCE
}

impl Default for TailDecl {
    fn default() -> Self {
        TailDecl { log_power: None, constant: None, tolerance: default_tolerance() }
    }
}

/// Nested Monte Carlo budget for product-tail constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductDecl {
    pub outer: usize,
    pub inner: usize,
}

fn default_replicates() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub alpha: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub space: SpaceDecl,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub output: OutputDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<ProductDecl>,
    #[serde(default, rename = "integrand")]
    pub integrands: Vec<IntegrandDecl>,
}

/// 1-based line and column of a byte offset.
pub fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

impl ExperimentConfig {
    /// Parses and validates a config, including every integrand expression.
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(src, s.start));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        if !(cfg.alpha > 0.0 && cfg.alpha.is_finite()) {
            return Err(ConfigError::Invalid(format!("alpha {} must be positive", cfg.alpha)));
        }
        if cfg.replicates == 0 {
            return Err(ConfigError::Invalid("replicates must be positive".into()));
        }
        for decl in &cfg.integrands {
            if let Err(e) = parse_expr(&decl.expr) {
                // point into the source where the expression text starts
                let start = src.find(&decl.expr).map_or(0, |i| i + e.offset);
                let (line, column) = line_column(src, start);
                return Err(ConfigError::Expr { name: decl.name.clone(), line, column, message: e.message });
            }
        }
        let mut names: Vec<&str> = cfg.integrands.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid(format!("integrand '{}' declared twice", w[0])));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        digest_hex(self.to_toml().as_bytes())
    }

    pub fn build_space(&self) -> Result<MeasureSpace, ConfigError> {
        self.space.build()
    }

    /// Sampler settings under this config's truncation policy. A half line is sampled on
    /// its deepest exhaustion level.
    pub fn sample_config(&self, seed: u64) -> SampleConfig {
        let depth = match self.space {
            SpaceDecl::HalfLine { depth } => depth.saturating_sub(1),
            _ => 0,
        };
        SampleConfig { seed, policy: self.truncation, depth, strict: false }
    }

    pub fn exprs(&self) -> Vec<(String, Expr)> {
        self.integrands
            .iter()
            .map(|d| (d.name.clone(), parse_expr(&d.expr).expect("validated at parse time")))
            .collect()
    }

    /// Named integrands built on `space`.
    pub fn build_integrands(&self, space: &MeasureSpace) -> Result<Vec<(String, Integrand)>, ConfigError> {
        self.exprs()
            .into_iter()
            .map(|(name, e)| {
                e.build(space).map(|f| (name.clone(), f)).map_err(|err| ConfigError::Expr {
                    name,
                    line: 0,
                    column: 0,
                    message: err.message,
                })
            })
            .collect()
    }

    pub fn integrand(&self, space: &MeasureSpace, name: &str) -> Result<Integrand, ConfigError> {
        self.build_integrands(space)?
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f)
            .ok_or_else(|| ConfigError::Invalid(format!("no integrand named '{name}'")))
    }
}
