//! TOML experiment configuration.

use std::sync::Arc;

use iml_core::{make_lattice, DomainKind, DomainSpec, GridField, Lattice};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// `deny_unknown_fields` does not combine with `flatten`, so stray keys in
/// this block are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    pub d: usize,
    #[serde(flatten)]
    pub kind: DomainKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub h: f64,
    #[serde(default)]
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `∏_k cos²(π (x_k - c_k) / (2w))` on `|x_k - c_k| < w`.
    Bump,
    /// `exp(-|x - c|² / (2w²))`.
    Gaussian,
    /// Indicator of the box `|x_k - c_k| < w`.
    Indicator,
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    pub kind: TestFunctionKind,
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    /// Highest moment order (1 or 2).
    #[serde(default = "two")]
    pub k_max: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub delta_list: Vec<f64>,
    /// Box `U` for `C₁`; defaults to the support box of `f` grown by `ε`.
    pub u_lo: Option<Vec<f64>>,
    pub u_hi: Option<Vec<f64>>,
    /// Moment orders for which the super-exponential estimate is checked.
    #[serde(default)]
    pub check_k: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpConfig {
    pub t_list: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    pub alpha: f64,
    /// Frequencies for the characteristic-function check.
    #[serde(default = "default_xis")]
    pub xi: Vec<f64>,
}

fn default_xis() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    /// CSV produced by another subcommand.
    pub input: String,
    pub x: String,
    pub y: String,
    pub err: Option<String>,
    /// Keep only rows whose `filter_column` equals `filter_value`.
    pub filter_column: Option<String>,
    pub filter_value: Option<String>,
    pub title: Option<String>,
}

/// One experiment. Blocks that a subcommand does not use are ignored by it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "two")]
    pub p: usize,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub samples: usize,
    /// Starting points, one per process; default is a central point of `D`.
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
    pub domain: Option<DomainConfig>,
    pub grid: Option<GridConfig>,
    pub test_function: Option<TestFunctionConfig>,
    pub moments: Option<MomentsConfig>,
    pub constants: Option<ConstantsConfig>,
    pub ldp: Option<LdpConfig>,
    pub stable: Option<StableConfig>,
    pub plot: Option<PlotConfig>,
}

fn missing(what: &str) -> CliError {
    CliError::Config(format!("missing `{what}`"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies the `IML_SEED` override.
    pub fn with_env_seed(mut self) -> Result<Self, CliError> {
        if let Ok(s) = std::env::var("IML_SEED") {
            self.seed = s.trim().parse().map_err(|_| CliError::Config(format!("IML_SEED is not a u64: {s}")))?;
        }
        Ok(self)
    }

    /// First 16 hex digits of the SHA-256 of the resolved config as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn domain(&self) -> Result<DomainSpec, CliError> {
        let d = self.domain.as_ref().ok_or_else(|| missing("domain"))?;
        Ok(DomainSpec::new(d.kind.clone(), d.d)?)
    }

    pub fn lattice(&self, dom: &DomainSpec) -> Result<Arc<Lattice>, CliError> {
        let g = self.grid.as_ref().ok_or_else(|| missing("grid"))?;
        Ok(Arc::new(make_lattice(dom, g.h, g.margin)?))
    }

    pub fn t(&self) -> Result<f64, CliError> {
        self.t.ok_or_else(|| missing("t"))
    }

    pub fn dt(&self) -> Result<f64, CliError> {
        self.dt.ok_or_else(|| missing("dt"))
    }

    pub fn eps(&self) -> Result<f64, CliError> {
        self.eps.ok_or_else(|| missing("eps"))
    }

    pub fn delta(&self) -> Result<f64, CliError> {
        self.delta.ok_or_else(|| missing("delta"))
    }

    /// The configured starting points, or `p` copies of a central point.
    pub fn starts(&self, dom: &DomainSpec) -> Result<Vec<Vec<f64>>, CliError> {
        if !self.x0.is_empty() {
            if self.x0.len() != self.p {
                return Err(CliError::Config(format!("x0 has {} points but p = {}", self.x0.len(), self.p)));
            }
            return Ok(self.x0.clone());
        }
        let c = match &dom.kind {
            DomainKind::WholeSpace => vec![0.0; dom.d],
            DomainKind::HalfSpace { axis, offset } => {
                let mut c = vec![0.0; dom.d];
                c[*axis] = offset + 1.0;
                c
            }
            DomainKind::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            DomainKind::Disk { center, .. } => center.clone(),
        };
        Ok(vec![c; self.p])
    }

    pub fn test_function(&self, lat: &Arc<Lattice>) -> Result<GridField, CliError> {
        let f = self.test_function.as_ref().ok_or_else(|| missing("test_function"))?;
        let d = lat.dim();
        let center = if f.center.is_empty() { vec![0.0; d] } else { f.center.clone() };
        if center.len() != d {
            return Err(CliError::Config("test_function.center has the wrong dimension".into()));
        }
        if !(f.width > 0.0) {
            return Err(CliError::Config("test_function.width must be positive".into()));
        }
        let (w, a, kind) = (f.width, f.amplitude, f.kind);
        Ok(GridField::from_fn(lat.clone(), move |x| {
            let u: Vec<f64> = x.iter().zip(&center).map(|(xi, ci)| (xi - ci) / w).collect();
            a * match kind {
                TestFunctionKind::Bump => {
                    if u.iter().all(|v| v.abs() < 1.0) {
                        u.iter().map(|v| (0.5 * std::f64::consts::PI * v).cos().powi(2)).product()
                    } else {
                        0.0
                    }
                }
                TestFunctionKind::Gaussian => (-0.5 * u.iter().map(|v| v * v).sum::<f64>()).exp(),
                TestFunctionKind::Indicator => {
                    if u.iter().all(|v| v.abs() < 1.0) {
                        1.0
                    } else {
                        0.0
                    }
                }
                TestFunctionKind::Constant => 1.0,
            }
        }))
    }
}
