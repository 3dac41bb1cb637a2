//! Experiment specification files.
//!
//! A spec is a TOML document. Top-level keys select the experiment and its
//! Monte Carlo budget, `[system]` overrides fields of [`SystemConfig`],
//! `[sweep]` describes the swept variable and `[solver]` the driver settings.
//!
//! ```toml
//! kind = "sweep_nt"
//! realizations = 100
//! seed = 1
//! algos = ["ao", "aao", "apgm"]
//!
//! [system]
//! users = 2
//!
//! [sweep]
//! values = [2, 4, 8, 16]
//! links = ["direct_ris", "direct_only", "ris_only"]
//! ```

use crate::HarnessError;
use ris_bc::drivers::{Algorithm, CovarianceInit, DriverOptions};
use ris_bc::scenario::SystemConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    SweepNt,
    SweepK,
    Csi,
    Blockage,
    MultiRisDistance,
    MultiRisBudget,
    ComplexityTable,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepNt => "sweep_nt",
            ExperimentKind::SweepK => "sweep_k",
            ExperimentKind::Csi => "csi",
            ExperimentKind::Blockage => "blockage",
            ExperimentKind::MultiRisDistance => "multi_ris_distance",
            ExperimentKind::MultiRisBudget => "multi_ris_budget",
            ExperimentKind::ComplexityTable => "complexity_table",
        }
    }

    /// Name of the swept quantity as written to the `sweep_var` column.
    pub fn sweep_var(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "none",
            ExperimentKind::SweepNt => "tx_antennas",
            ExperimentKind::SweepK | ExperimentKind::ComplexityTable => "users",
            ExperimentKind::Csi => "csi_error_var",
            ExperimentKind::Blockage => "non_blockage_prob",
            ExperimentKind::MultiRisDistance | ExperimentKind::MultiRisBudget => "ris_offset_m",
        }
    }
}

/// Which parts of the composite channel are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    DirectRis,
    DirectOnly,
    RisOnly,
}

impl LinkMode {
    pub fn label(self) -> &'static str {
        match self {
            LinkMode::DirectRis => "direct_ris",
            LinkMode::DirectOnly => "direct_only",
            LinkMode::RisOnly => "ris_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub values: Vec<f64>,
    pub links: Vec<LinkMode>,
    /// Surface subsets of the four-surface layout (0-based).
    pub surface_sets: Vec<Vec<usize>>,
    /// Elements shared equally by the surfaces in use (`multi_ris_budget`).
    pub total_elements: usize,
    /// BS to user-area distance of the four-surface layout.
    pub distance_m: f64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            values: Vec::new(),
            links: vec![LinkMode::DirectRis],
            surface_sets: vec![vec![0], vec![0, 1], vec![0, 1, 2, 3]],
            total_elements: 400,
            distance_m: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_outer: usize,
    pub mu0: f64,
    pub mu_bar0: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub init: CovarianceInit,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = DriverOptions::default();
        Self {
            tol: d.tol,
            max_outer: d.max_outer,
            mu0: d.mu0,
            mu_bar0: d.mu_bar0,
            rho: d.rho,
            epsilon: d.epsilon,
            init: CovarianceInit::Uniform,
        }
    }
}

impl SolverSpec {
    pub fn driver_options(&self) -> DriverOptions {
        DriverOptions {
            tol: self.tol,
            max_outer: self.max_outer,
            mu0: self.mu0,
            mu_bar0: self.mu_bar0,
            rho: self.rho,
            epsilon: self.epsilon,
            ..DriverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySpec {
    /// Run the solvers and report measured counters instead of the
    /// published ones.
    pub measure: bool,
    /// Outer iterations over which measured counters are averaged.
    pub average_over: usize,
}

impl Default for ComplexitySpec {
    fn default() -> Self {
        Self {
            measure: false,
            average_over: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Base name of the output files; defaults to the kind.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_algos")]
    pub algos: Vec<Algorithm>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub complexity: ComplexitySpec,
}

fn default_realizations() -> usize {
    100
}

fn default_algos() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub algos: Option<Vec<Algorithm>>,
    pub out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            name: None,
            realizations: default_realizations(),
            seed: 0,
            algos: default_algos(),
            out: default_out(),
            system: SystemConfig::default(),
            sweep: SweepSpec::default(),
            solver: SolverSpec::default(),
            complexity: ComplexitySpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: Self = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Spec(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), HarnessError> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(n) = o.realizations {
            self.realizations = n;
        }
        if let Some(algos) = &o.algos {
            self.algos = algos.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    pub fn file_stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().to_string())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Spec(msg.to_string()));
        if self.realizations == 0 {
            return bad("realizations must be at least 1");
        }
        if self.algos.is_empty() && self.kind != ExperimentKind::ComplexityTable {
            return bad("at least one algorithm is required");
        }
        self.solver
            .driver_options()
            .validate()
            .map_err(|e| HarnessError::Spec(e.to_string()))?;
        use ExperimentKind::*;
        let needs_values = !matches!(self.kind, Convergence) && !(self.kind == ComplexityTable && !self.complexity.measure);
        if needs_values && self.sweep.values.is_empty() {
            return bad("this experiment needs sweep.values");
        }
        if self.sweep.links.is_empty() {
            return bad("sweep.links must not be empty");
        }
        let integral = |v: f64| v >= 1.0 && v.fract() == 0.0;
        match self.kind {
            SweepNt | SweepK | ComplexityTable if !self.sweep.values.iter().all(|&v| integral(v)) => {
                return bad("sweep.values must be positive integers for this experiment");
            }
            Csi if self.sweep.values.iter().any(|&v| !(v >= 0.0)) => {
                return bad("CSI error variances must be non-negative");
            }
            Blockage if self.sweep.values.iter().any(|v| !(0.0..=1.0).contains(v)) => {
                return bad("non-blockage probabilities must lie in [0, 1]");
            }
            MultiRisDistance | MultiRisBudget => {
                if self.sweep.surface_sets.is_empty()
                    || self
                        .sweep
                        .surface_sets
                        .iter()
                        .any(|set| set.is_empty() || set.iter().any(|&i| i > 3))
                {
                    return bad("surface_sets must be non-empty subsets of 0..=3");
                }
                if self.sweep.values.iter().any(|&d| !(d > 0.0 && d < self.sweep.distance_m)) {
                    return bad("RIS offsets must lie strictly between 0 and distance_m");
                }
                if self.kind == MultiRisBudget
                    && self.sweep.surface_sets.iter().any(|s| !self.sweep.total_elements.is_multiple_of(s.len()))
                {
                    return bad("total_elements must divide evenly among every surface set");
                }
            }
            _ => {}
        }
        if self.complexity.measure && self.complexity.average_over == 0 {
            return bad("complexity.average_over must be at least 1");
        }
        self.system.validate().map_err(|e| HarnessError::Spec(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec_uses_defaults() {
        let spec = ExperimentSpec::from_toml("kind = \"convergence\"").unwrap();
        assert_eq!(spec.realizations, 100);
        assert_eq!(spec.algos, Algorithm::ALL.to_vec());
        assert_eq!(spec.system, SystemConfig::default());
        assert_eq!(spec.solver.driver_options(), DriverOptions::default());
    }

    #[test]
    fn system_overrides_are_partial() {
        let spec = ExperimentSpec::from_toml(
            "kind = \"sweep_k\"\nalgos = [\"apgm\"]\n[system]\ntx_antennas = 4\n[sweep]\nvalues = [2, 6]\n",
        )
        .unwrap();
        assert_eq!(spec.system.tx_antennas, 4);
        assert_eq!(spec.system.rx_antennas, 2);
        assert_eq!(spec.algos, vec![Algorithm::Apgm]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for text in [
            "kind = \"bogus\"",
            "kind = \"convergence\"\nrealizations = 0",
            "kind = \"sweep_nt\"",
            "kind = \"sweep_nt\"\n[sweep]\nvalues = [2.5]",
            "kind = \"blockage\"\n[sweep]\nvalues = [1.5]",
            "kind = \"convergence\"\nunknown = 1",
            "kind = \"multi_ris_budget\"\n[sweep]\nvalues = [50]\ntotal_elements = 401",
            "kind = \"multi_ris_distance\"\n[sweep]\nvalues = [50]\nsurface_sets = [[4]]",
            "kind = \"convergence\"\n[solver]\nrho = 1.0",
        ] {
            assert!(matches!(ExperimentSpec::from_toml(text), Err(HarnessError::Spec(_))), "{text}");
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut spec = ExperimentSpec::new(ExperimentKind::Convergence);
        spec.apply(&Overrides {
            seed: Some(9),
            realizations: Some(3),
            algos: Some(vec![Algorithm::Ao]),
            out: Some("x".into()),
        })
        .unwrap();
        assert_eq!((spec.seed, spec.realizations), (9, 3));
        assert_eq!(spec.algos, vec![Algorithm::Ao]);
        assert!(spec
            .apply(&Overrides {
                realizations: Some(0),
                ..Overrides::default()
            })
            .is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = ExperimentSpec::new(ExperimentKind::MultiRisBudget);
        spec.sweep.values = vec![25.0, 50.0];
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_toml(&text).unwrap(), spec);
    }
}
