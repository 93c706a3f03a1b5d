//! Experiment configuration: one TOML file describes one experiment.
//!
//! The schema is strict: unknown keys anywhere are rejected before any
//! compute starts, and every report echoes the resolved configuration so an
//! artifact directory is self-describing. The experiment id is a content
//! hash of the resolved configuration (serialized in canonical field order),
//! so it changes exactly when a semantic field changes and is insensitive to
//! key order in the source file.
//!
//! Gated versus exploratory: a named check listed under `gates.exploratory`
//! is still run and reported but never affects the exit status. Thresholds
//! in the `[gates]` table (phi norm, uniformity, rate exponent, ...) are
//! gated checks; absent thresholds are not checked.

use crate::bvp::BoundaryData;
use crate::cell::SolverConfig;
use crate::error::{Error, Result};
use crate::grid::{DomainShape, Field, FieldLoc, Mesh};
use crate::operators::OperatorSpec;
use crate::vect::Vect;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    CheckOperator,
    Cell,
    Effective,
    Bvp,
    TwoScale,
    Regularity,
    Vtest,
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::CheckOperator => "check-operator",
            CommandKind::Cell => "cell",
            CommandKind::Effective => "effective",
            CommandKind::Bvp => "bvp",
            CommandKind::TwoScale => "two-scale",
            CommandKind::Regularity => "regularity",
            CommandKind::Vtest => "vtest",
        }
    }
}

/// Mesh and torus resolutions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct Discretization {
    /// Torus cells per side for corrector solves.
    pub n: usize,
    /// Torus dimension (2 or 3).
    pub dim: usize,
    /// Dirichlet mesh subdivisions per side (bvp; regularity derives its
    /// per-epsilon meshes from cells-per-period instead).
    pub m: usize,
    /// Minimum mesh cells per oscillation period.
    pub cells_per_period: usize,
    pub domain: Option<DomainShape>,
}

impl Default for Discretization {
    fn default() -> Self {
        Discretization { n: 32, dim: 2, m: 64, cells_per_period: 16, domain: None }
    }
}

impl Discretization {
    pub fn domain_or_unit_square(&self) -> DomainShape {
        self.domain
            .unwrap_or(DomainShape::Square { center: [0.5, 0.5], half_width: 0.5 })
    }
}

/// Epsilon ladder and radius-ladder rules.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ladder {
    /// Strictly decreasing oscillation scales, one experiment rung each.
    pub epsilons: Vec<f64>,
    /// Boundary-layer width for two-scale measurement regions.
    pub rho: f64,
    /// Cube size override (cells of side ell*epsilon); None = default rule.
    pub ell: Option<usize>,
    /// Radius contraction of the excess-decay ladder.
    pub theta0: f64,
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder { epsilons: Vec::new(), rho: 0.2, ell: None, theta0: 0.5 }
    }
}

/// What to measure and where.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct Measurement {
    /// Integrability exponent for CZ / Hoelder measurements.
    pub q: Option<f64>,
    /// Exponent sweep for the higher-integrability probe.
    pub q_list: Vec<f64>,
    pub ball_center: Option<[f64; 2]>,
    pub ball_radius: Option<f64>,
    /// Sample count for vtest / check-operator audits.
    pub samples: usize,
    /// Constant cap for audits and structure checks; None = lambda-cap.
    pub cap: Option<f64>,
    /// Exponent pair for vtest (which has no operator section).
    pub p: Option<f64>,
    pub mu: Option<f64>,
    /// Inequality subset for vtest; None = all ten.
    pub inequalities: Option<Vec<String>>,
    /// Assumption subset for check-operator; None = all eight.
    pub assumptions: Option<Vec<String>>,
    /// When set, check-operator also fits the spatial Hoelder modulus.
    pub holder_alpha: Option<f64>,
    /// Structure checks for the effective table; None = all four.
    pub checks: Option<Vec<String>>,
    /// Polar table resolution for the effective command.
    pub magnitudes: usize,
    pub directions: usize,
    /// Regularity measurement kind: cz | large-scale-cz | lipschitz |
    /// holder | excess | higher-integrability.
    pub measure: Option<String>,
}

impl Default for Measurement {
    fn default() -> Self {
        Measurement {
            q: None,
            q_list: Vec::new(),
            ball_center: None,
            ball_radius: None,
            samples: 100_000,
            cap: None,
            p: None,
            mu: None,
            inequalities: None,
            assumptions: None,
            holder_alpha: None,
            checks: None,
            magnitudes: 8,
            directions: 16,
            measure: None,
        }
    }
}

/// Divergence-form load F in div a(x/eps, grad u) = div F.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LoadSpec {
    /// F(x) = |x - center|^(-exponent) e_axis, the contrast probe.
    RadialSingular { center: [f64; 2], exponent: f64, axis: usize },
    /// Constant vector load.
    Constant { value: Vec<f64> },
}

impl LoadSpec {
    /// Per-element load field on a mesh (evaluated at centroids).
    pub fn field(&self, mesh: &Arc<Mesh>) -> Field {
        let dim = mesh.dim;
        let mut f = Field::zeros(mesh, dim, FieldLoc::PerElement);
        for (e, el) in mesh.elements.iter().enumerate() {
            match self {
                LoadSpec::RadialSingular { center, exponent, axis } => {
                    let d = el.centroid - Vect::new2(center[0], center[1]);
                    let r = d.norm().max(1e-12);
                    f.set(e, *axis, r.powf(-exponent));
                }
                LoadSpec::Constant { value } => {
                    for (c, v) in value.iter().enumerate() {
                        f.set(e, c, *v);
                    }
                }
            }
        }
        f
    }
}

/// Problem data: boundary values, loads, and slope candidates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct Problem {
    pub g: Option<BoundaryData>,
    /// Slope for a single corrector solve (cell command).
    pub xi: Option<Vec<f64>>,
    /// Also solve the flux corrector and audit the divergence identity.
    pub sigma: bool,
    pub load: Option<LoadSpec>,
    /// Candidate slopes for the excess-decay minimization.
    pub xi_grid: Option<Vec<Vec<f64>>>,
}

impl Default for Problem {
    fn default() -> Self {
        Problem { g: None, xi: None, sigma: false, load: None, xi_grid: None }
    }
}

/// Pass/fail thresholds. A missing threshold is simply not checked; a check
/// named in `exploratory` is reported without affecting the exit status.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct Gates {
    pub exploratory: Vec<String>,
    /// Cell: cap on the W^{1,p} norm of the corrector.
    pub max_phi_norm: Option<f64>,
    /// Cell: cap on the relative divergence-identity error of sigma.
    pub max_sigma_divergence: Option<f64>,
    /// Regularity: cap on the max/min ratio statistic across the ladder.
    pub max_uniformity: Option<f64>,
    /// Regularity (excess): cap on every pre-floor contraction factor.
    pub max_contraction: Option<f64>,
    /// Two-scale: rate-fit thresholds.
    pub min_beta: Option<f64>,
    pub min_r_squared: Option<f64>,
    /// Two-scale: require e(eps) strictly decreasing along the ladder.
    pub require_decreasing: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Artifact directory; the --out flag overrides it.
    pub directory: Option<PathBuf>,
    /// Subset of {json, csv, binary}; binary adds raw field dumps.
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: None, formats: vec!["json".into(), "csv".into()] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub ladder: Ladder,
    #[serde(default)]
    pub measurement: Measurement,
    #[serde(default)]
    pub problem: Problem,
    #[serde(default)]
    pub gates: Gates,
    #[serde(default)]
    pub output: OutputConfig,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Structural validation beyond the TOML schema: each command's required
    /// sections must be present with meaningful values.
    pub fn validate(&self) -> Result<()> {
        let need_op = !matches!(self.command, CommandKind::Vtest);
        if need_op {
            let op = self
                .operator
                .as_ref()
                .ok_or_else(|| Error::Config("operator: section is required".into()))?;
            op.validate().map_err(|e| Error::Config(format!("operator: {e}")))?;
        }
        for w in self.ladder.epsilons.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Config(
                    "ladder.epsilons: must be strictly decreasing".into(),
                ));
            }
        }
        if let Some(eps0) = self.ladder.epsilons.first() {
            if !(*eps0 > 0.0) {
                return Err(Error::Config("ladder.epsilons: must be positive".into()));
            }
        }
        for f in &self.output.formats {
            if !matches!(f.as_str(), "json" | "csv" | "binary") {
                return Err(Error::Config(format!(
                    "output.formats: unknown format '{f}' (expected json, csv, or binary)"
                )));
            }
        }
        match self.command {
            CommandKind::Vtest => {
                if self.measurement.p.is_none() && self.operator.is_none() {
                    return Err(Error::Config(
                        "vtest: set measurement.p (or provide an operator section)".into(),
                    ));
                }
            }
            CommandKind::Bvp | CommandKind::TwoScale => {
                if self.problem.g.is_none() {
                    return Err(Error::Config("problem.g: boundary data is required".into()));
                }
                if self.ladder.epsilons.is_empty() {
                    return Err(Error::Config("ladder.epsilons: at least one rung".into()));
                }
            }
            CommandKind::Regularity => {
                if self.problem.g.is_none() {
                    return Err(Error::Config("problem.g: boundary data is required".into()));
                }
                let m = self.measurement.measure.as_deref().unwrap_or("");
                let known = [
                    "cz",
                    "large-scale-cz",
                    "lipschitz",
                    "holder",
                    "excess",
                    "higher-integrability",
                ];
                if !known.contains(&m) {
                    return Err(Error::Config(format!(
                        "measurement.measure: '{m}' is not one of {known:?}"
                    )));
                }
                if self.measurement.ball_center.is_none() || self.measurement.ball_radius.is_none()
                {
                    return Err(Error::Config(
                        "measurement.ball-center and ball-radius are required".into(),
                    ));
                }
                if m != "higher-integrability" && self.ladder.epsilons.is_empty() {
                    return Err(Error::Config("ladder.epsilons: at least one rung".into()));
                }
                if m == "excess" && self.problem.xi_grid.is_none() {
                    return Err(Error::Config(
                        "problem.xi-grid: excess decay needs candidate slopes".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical serialization of the resolved config: struct-field order,
    /// independent of TOML key order in the source file.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization cannot fail")
    }

    /// Content hash identifying the experiment.
    pub fn experiment_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.canonical_json().as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}
