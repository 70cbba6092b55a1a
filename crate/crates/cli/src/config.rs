//! Experiment configuration: a TOML file, command-line overrides and the
//! checks that run before any simulation starts.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use gptraj_core::topology::SINGULAR_SURVIVAL;
use gptraj_core::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// GP histogram of one ensemble.
    GpDist,
    /// GP histograms along a drive-frequency sweep.
    GpVsOmega,
    /// Echo-parameter histogram of one ensemble.
    EchoDist,
    /// Echo-parameter histograms along a drive-frequency sweep.
    EchoVsOmega,
    /// Jump-free GP, its closed-form estimate and the jump-free echo.
    NoJumpGp,
    /// Jump-free phase and survival over an (Ω/ω, Γ/ω) window, with the
    /// singular points inside it.
    PhaseDiagram,
    /// Winding number of every (Ω/ω, Γ/ω) cell.
    SectorMap,
    /// Difference of the unwrapped θ-sweeps of two parameter points.
    DeltaTheta,
    /// Ensemble average against the integrated master equation.
    LindbladCheck,
    /// Direct against displaced detection.
    UnravelCompare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::GpDist => "gp-dist",
            Mode::GpVsOmega => "gp-vs-omega",
            Mode::EchoDist => "echo-dist",
            Mode::EchoVsOmega => "echo-vs-omega",
            Mode::NoJumpGp => "no-jump-gp",
            Mode::PhaseDiagram => "phase-diagram",
            Mode::SectorMap => "sector-map",
            Mode::DeltaTheta => "delta-theta",
            Mode::LindbladCheck => "lindblad-check",
            Mode::UnravelCompare => "unravel-compare",
        }
    }
}

/// Physical parameters, all rates as ratios to ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub omega_ratio: f64,
    pub gamma_ratio: f64,
    /// θ/π.
    pub theta_pi_units: f64,
    /// γ_z/Γ.
    pub gz_ratio: f64,
    pub lambda_ratio: f64,
    pub ntraj: u64,
    /// Maximum time step, in units of 1/ω.
    pub dt: Option<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            omega_ratio: 5e-3,
            gamma_ratio: 1e-3,
            theta_pi_units: 0.34,
            gz_ratio: 0.0,
            lambda_ratio: 0.0,
            ntraj: 10_000,
            dt: None,
        }
    }
}

impl Params {
    pub fn model(&self, seed: u64) -> ModelParams {
        let mut p = ModelParams::reference(PI * self.theta_pi_units, self.omega_ratio, self.gamma_ratio, self.gz_ratio)
            .with_lambda(self.lambda_ratio);
        if let Some(dt) = self.dt {
            p = p.with_dt(dt);
        }
        p.n_traj = self.ntraj as usize;
        p.seed = seed;
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Omega,
    Gamma,
    Theta,
}

impl Axis {
    pub fn column(self) -> &'static str {
        match self {
            Axis::Omega => "omega_ratio",
            Axis::Gamma => "gamma_ratio",
            Axis::Theta => "theta_pi_units",
        }
    }

    pub fn apply(self, p: &Params, value: f64) -> Params {
        let mut q = *p;
        match self {
            Axis::Omega => q.omega_ratio = value,
            Axis::Gamma => q.gamma_ratio = value,
            Axis::Theta => q.theta_pi_units = value,
        }
        q
    }
}

/// Either explicit values or an evenly spaced (optionally logarithmic) range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub log: bool,
}

impl Grid {
    pub fn resolve(&self, field: &str, diag: &mut Diagnostics) -> Vec<f64> {
        if let Some(v) = &self.values {
            if v.is_empty() {
                diag.push(field, "values must not be empty");
            }
            if v.iter().any(|x| !x.is_finite()) {
                diag.push(field, "values must be finite");
            }
            return v.clone();
        }
        let (Some(a), Some(b), Some(n)) = (self.from, self.to, self.points) else {
            diag.push(field, "give either `values` or all of `from`, `to`, `points`");
            return vec![];
        };
        if n == 0 || !a.is_finite() || !b.is_finite() {
            diag.push(field, "needs finite bounds and at least one point");
            return vec![];
        }
        if self.log && (a <= 0.0 || b <= 0.0) {
            diag.push(field, "a logarithmic range needs positive bounds");
            return vec![];
        }
        if n == 1 {
            return vec![a];
        }
        (0..n)
            .map(|k| {
                let s = k as f64 / (n - 1) as f64;
                if self.log {
                    a * (b / a).powf(s)
                } else {
                    a + (b - a) * s
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    #[serde(flatten)]
    pub grid: Grid,
}

/// The (Ω/ω, Γ/ω) window of the phase-diagram and sector-map modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub omega: Grid,
    pub gamma: Grid,
    /// Extra θ/π points every sector-map sweep passes through (0 and 1 are
    /// always included).
    #[serde(default)]
    pub theta_pi_units: Vec<f64>,
    /// Least jump-free survival below which a sector-map cell is flagged.
    #[serde(default = "default_singular_survival")]
    pub singular_survival: f64,
}

fn default_singular_survival() -> f64 {
    SINGULAR_SURVIVAL
}

/// Second parameter point of the delta-theta mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Compare {
    pub omega_ratio: f64,
    pub gamma_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
    pub bins: usize,
    /// Sample times per cycle for the lindblad-check and unravel-compare
    /// distance tables.
    pub samples: usize,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: PathBuf::from("gptraj-out"), bins: gptraj_core::stats::DEFAULT_BINS, samples: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<Compare>,
    #[serde(default)]
    pub output: Output,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: None,
            seed: 0,
            params: Params::default(),
            sweep: None,
            window: None,
            compare: None,
            output: Output::default(),
        }
    }
}

/// Field-level problems found while loading or checking a configuration.
#[derive(Debug, Default)]
pub struct Diagnostics(Vec<(String, String)>);

impl Diagnostics {
    pub fn push(&mut self, field: &str, msg: impl Into<String>) {
        self.0.push((field.to_string(), msg.into()));
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (field, msg) in &self.0 {
            writeln!(f, "  {field}: {msg}")?;
        }
        Ok(())
    }
}

/// A configuration that passed validation, with every grid expanded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub sweep: Option<(Axis, Vec<f64>)>,
    pub window: Option<(Vec<f64>, Vec<f64>)>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Diagnostics> {
        let mut diag = Diagnostics::default();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                diag.push("--config", format!("cannot read {}: {e}", path.display()));
                return Err(diag);
            }
        };
        toml::from_str(&text).map_err(|e| {
            diag.push("--config", e.to_string());
            diag
        })
    }

    pub fn validate(self) -> Result<Resolved, Diagnostics> {
        let mut diag = Diagnostics::default();
        let Some(mode) = self.mode else {
            diag.push("mode", "missing (set it in the file or pass --mode)");
            return Err(diag);
        };
        let p = &self.params;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(p.omega_ratio) {
            diag.push("params.omega_ratio", "must be > 0");
        }
        if !non_negative(p.gamma_ratio) {
            diag.push("params.gamma_ratio", "must be >= 0");
        }
        if !(p.theta_pi_units.is_finite() && (0.0..=1.0).contains(&p.theta_pi_units)) {
            diag.push("params.theta_pi_units", "must lie in [0, 1]");
        }
        if !non_negative(p.gz_ratio) {
            diag.push("params.gz_ratio", "must be >= 0");
        }
        if !non_negative(p.lambda_ratio) {
            diag.push("params.lambda_ratio", "must be >= 0");
        }
        if p.dt.is_some_and(|dt| !positive(dt)) {
            diag.push("params.dt", "must be > 0");
        }
        let stochastic = matches!(
            mode,
            Mode::GpDist | Mode::GpVsOmega | Mode::EchoDist | Mode::EchoVsOmega | Mode::LindbladCheck | Mode::UnravelCompare
        );
        if stochastic && p.ntraj == 0 {
            diag.push("params.ntraj", "must be >= 1");
        }
        if self.output.bins == 0 {
            diag.push("output.bins", "must be >= 1");
        }
        if matches!(mode, Mode::LindbladCheck | Mode::UnravelCompare) && self.output.samples == 0 {
            diag.push("output.samples", "must be >= 1");
        }
        if diag.is_empty() {
            if let Err(e) = p.model(self.seed).validate() {
                diag.push("params", e.to_string());
            }
        }

        let sweep = match (mode, &self.sweep) {
            (Mode::GpVsOmega | Mode::EchoVsOmega, None) => {
                diag.push("sweep", "required for this mode");
                None
            }
            (Mode::GpVsOmega | Mode::EchoVsOmega, Some(s)) if s.axis != Axis::Omega => {
                diag.push("sweep.axis", "this mode sweeps `omega`");
                None
            }
            (Mode::GpVsOmega | Mode::EchoVsOmega | Mode::NoJumpGp, Some(s)) => {
                let values = s.grid.resolve("sweep", &mut diag);
                for &v in &values {
                    let q = s.axis.apply(p, v);
                    if let Err(e) = q.model(self.seed).validate() {
                        diag.push("sweep", format!("value {v}: {e}"));
                        break;
                    }
                }
                Some((s.axis, values))
            }
            (_, Some(_)) => {
                diag.push("sweep", format!("not used by mode {}", mode.name()));
                None
            }
            (_, None) => None,
        };

        let window = match (mode, &self.window) {
            (Mode::PhaseDiagram | Mode::SectorMap, None) => {
                diag.push("window", "required for this mode");
                None
            }
            (Mode::PhaseDiagram | Mode::SectorMap, Some(w)) => {
                let om = w.omega.resolve("window.omega", &mut diag);
                let ga = w.gamma.resolve("window.gamma", &mut diag);
                if om.iter().any(|&v| !positive(v)) {
                    diag.push("window.omega", "values must be > 0");
                }
                if ga.iter().any(|&v| !non_negative(v)) {
                    diag.push("window.gamma", "values must be >= 0");
                }
                if w.theta_pi_units.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                    diag.push("window.theta_pi_units", "interior points must lie in (0, 1)");
                }
                if !(w.singular_survival >= 0.0) {
                    diag.push("window.singular_survival", "must be >= 0");
                }
                Some((om, ga))
            }
            (_, Some(_)) => {
                diag.push("window", format!("not used by mode {}", mode.name()));
                None
            }
            (_, None) => None,
        };

        match (mode, &self.compare) {
            (Mode::DeltaTheta, None) => diag.push("compare", "required for this mode"),
            (Mode::DeltaTheta, Some(c)) => {
                if !positive(c.omega_ratio) {
                    diag.push("compare.omega_ratio", "must be > 0");
                }
                if !non_negative(c.gamma_ratio) {
                    diag.push("compare.gamma_ratio", "must be >= 0");
                }
            }
            (_, Some(_)) => diag.push("compare", format!("not used by mode {}", mode.name())),
            (_, None) => {}
        }
        if mode == Mode::UnravelCompare && !(p.lambda_ratio > 0.0) {
            diag.push("params.lambda_ratio", "unravel-compare needs a positive displacement");
        }

        if diag.is_empty() {
            Ok(Resolved { mode, config: self, sweep, window })
        } else {
            Err(diag)
        }
    }
}
