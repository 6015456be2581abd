//! Flat TOML run configuration and its validation into a ready-to-run experiment.

use std::path::{Path, PathBuf};

use mpemba_core::mpemba::{thermal_distance, NormKind, QubitTrajectory, Trajectory};
use mpemba_core::protocol::{DeltaPolicy, Preparation};
use mpemba_core::qubit::QubitBathParams;
use mpemba_core::spectral::{decompose, ThermalRateModel};
use serde::Deserialize;

use crate::CliError;

/// Every key is optional; absent keys take the defaults listed in the README.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub omega0: Option<f64>,
    pub gamma: Option<f64>,
    pub temperature: Option<f64>,
    pub alpha: Option<f64>,
    pub p0_hot: Option<f64>,
    pub p0_cold: Option<f64>,
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
    pub kappa1: Option<f64>,
    pub kappa2: Option<f64>,
    pub p_hot: Option<Vec<f64>>,
    pub p_cold: Option<Vec<f64>>,
    pub t_max: Option<f64>,
    pub t_steps: Option<usize>,
    pub norm_kind: Option<String>,
    pub delta_tol: Option<f64>,
    pub delta_policy: Option<String>,
    pub delta_multiplier: Option<f64>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub temperature_grid_min: Option<f64>,
    pub temperature_grid_max: Option<f64>,
    pub temperature_grid_points: Option<usize>,
    pub qfi_mode: Option<String>,
    pub p0_points: Option<usize>,
    pub t_true: Option<f64>,
    pub noiseless: Option<bool>,
    pub preparation: Option<String>,
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Qubit {
        params: QubitBathParams,
        p_hot: f64,
        p_cold: f64,
    },
    Lambda {
        model: ThermalRateModel,
        temperature: f64,
        p_hot: Vec<f64>,
        p_cold: Vec<f64>,
    },
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Qubit { .. } => 2,
            Model::Lambda { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfiMode {
    Trajectory,
    Surface,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: Model,
    /// Horizon; `None` means ten slowest relaxation times.
    pub t_max: Option<f64>,
    pub t_steps: usize,
    pub norm: NormKind,
    pub delta_tol: f64,
    pub delta_policy: DeltaPolicy,
    pub shots: u64,
    pub seed: u64,
    pub temperature_grid: Vec<f64>,
    pub qfi_mode: QfiMode,
    pub p0_points: usize,
    pub t_true: f64,
    pub noiseless: bool,
    pub preparation: Preparation,
    pub output: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn reject_keys(present: &[(&str, bool)], model: &str) -> Result<(), CliError> {
    match present.iter().find(|(_, set)| *set) {
        Some((key, _)) => Err(bad(format!("key `{key}` does not apply to model {model}"))),
        None => Ok(()),
    }
}

fn check_populations(name: &str, p: &[f64]) -> Result<(), CliError> {
    if p.len() != 3 {
        return Err(bad(format!(
            "`{name}` needs 3 populations, got {}",
            p.len()
        )));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(bad(format!("`{name}` must be a probability vector: {p:?}")));
    }
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

impl RunConfig {
    /// Applies command-line overrides and checks every parameter before any
    /// computation runs.
    pub fn validate(
        mut self,
        model_override: Option<&str>,
        seed_override: Option<u64>,
        output_override: Option<PathBuf>,
    ) -> Result<Experiment, CliError> {
        if let Some(m) = model_override {
            self.model = Some(m.to_string());
        }
        if let Some(s) = seed_override {
            self.seed = Some(s);
        }
        let c = self;
        let model_name = c.model.clone().unwrap_or_else(|| "qubit".into());
        let temperature = c.temperature.unwrap_or(0.5);
        let model = match model_name.as_str() {
            "qubit" => {
                reject_keys(
                    &[
                        ("e1", c.e1.is_some()),
                        ("e2", c.e2.is_some()),
                        ("e3", c.e3.is_some()),
                        ("kappa1", c.kappa1.is_some()),
                        ("kappa2", c.kappa2.is_some()),
                        ("p_hot", c.p_hot.is_some()),
                        ("p_cold", c.p_cold.is_some()),
                    ],
                    "qubit",
                )?;
                let params = QubitBathParams::new(
                    c.omega0.unwrap_or(1.0),
                    c.gamma.unwrap_or(1.0),
                    temperature,
                    c.alpha.unwrap_or(1.0),
                )
                .map_err(|e| bad(e.to_string()))?;
                let p_hot = c.p0_hot.unwrap_or(0.9);
                let p_cold = c.p0_cold.unwrap_or(0.5);
                for (key, p) in [("p0_hot", p_hot), ("p0_cold", p_cold)] {
                    QubitTrajectory::new(params, p).map_err(|e| bad(format!("`{key}`: {e}")))?;
                    if !(0.0..=1.0).contains(&p) {
                        return Err(bad(format!("`{key}` must lie in [0, 1], got {p}")));
                    }
                }
                Model::Qubit {
                    params,
                    p_hot,
                    p_cold,
                }
            }
            "lambda" => {
                reject_keys(
                    &[
                        ("omega0", c.omega0.is_some()),
                        ("gamma", c.gamma.is_some()),
                        ("alpha", c.alpha.is_some()),
                        ("p0_hot", c.p0_hot.is_some()),
                        ("p0_cold", c.p0_cold.is_some()),
                    ],
                    "lambda",
                )?;
                let model = ThermalRateModel::lambda(
                    c.e1.unwrap_or(0.0),
                    c.e2.unwrap_or(0.0),
                    c.e3.unwrap_or(1.0),
                    c.kappa1.unwrap_or(1.0),
                    c.kappa2.unwrap_or(1.0),
                )
                .map_err(|e| bad(e.to_string()))?;
                let rm = model
                    .rate_matrix(temperature)
                    .map_err(|e| bad(e.to_string()))?;
                decompose(&rm).map_err(|e| bad(e.to_string()))?;
                let p_hot = c.p_hot.clone().unwrap_or_else(|| vec![0.2, 0.2, 0.6]);
                let p_cold = c.p_cold.clone().unwrap_or_else(|| vec![0.6, 0.3, 0.1]);
                check_populations("p_hot", &p_hot)?;
                check_populations("p_cold", &p_cold)?;
                Model::Lambda {
                    model,
                    temperature,
                    p_hot,
                    p_cold,
                }
            }
            other => return Err(bad(format!("unknown model `{other}` (qubit or lambda)"))),
        };

        let norm = match c.norm_kind.as_deref() {
            None => NormKind::default_for(model.dim()),
            Some(name) => NormKind::parse(name).ok_or_else(|| {
                bad(format!(
                    "unknown norm_kind `{name}` (euclidean, total_variation, scalar_abs)"
                ))
            })?,
        };
        if norm == NormKind::ScalarAbs && model.dim() != 2 {
            return Err(bad("norm_kind `scalar_abs` needs the qubit model"));
        }
        check_labels(&model, norm)?;

        if let Some(t) = c.t_max {
            if !(t.is_finite() && t > 0.0) {
                return Err(bad(format!("`t_max` must be > 0, got {t}")));
            }
        }
        let t_steps = c.t_steps.unwrap_or(201);
        if t_steps < 2 {
            return Err(bad(format!("`t_steps` must be >= 2, got {t_steps}")));
        }
        let delta_tol = c.delta_tol.unwrap_or(0.0);
        if !(delta_tol.is_finite() && delta_tol >= 0.0) {
            return Err(bad(format!("`delta_tol` must be >= 0, got {delta_tol}")));
        }
        let multiplier = c.delta_multiplier.unwrap_or(3.0);
        if !(multiplier.is_finite() && multiplier >= 0.0) {
            return Err(bad(format!(
                "`delta_multiplier` must be >= 0, got {multiplier}"
            )));
        }
        let delta_policy = match c.delta_policy.as_deref().unwrap_or("statistical") {
            "statistical" => DeltaPolicy::Statistical { multiplier },
            "fixed" => DeltaPolicy::Fixed(delta_tol),
            other => {
                return Err(bad(format!(
                    "unknown delta_policy `{other}` (statistical or fixed)"
                )))
            }
        };
        let shots = c.shots.unwrap_or(10_000);
        if shots == 0 {
            return Err(bad("`shots` must be >= 1"));
        }
        let lo = c.temperature_grid_min.unwrap_or(0.3);
        let hi = c.temperature_grid_max.unwrap_or(0.7);
        let points = c.temperature_grid_points.unwrap_or(41);
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(bad(format!(
                "temperature grid needs 0 < min < max, got [{lo}, {hi}]"
            )));
        }
        if points < 5 {
            return Err(bad(format!(
                "`temperature_grid_points` must be >= 5, got {points}"
            )));
        }
        let qfi_mode = match c.qfi_mode.as_deref().unwrap_or("trajectory") {
            "trajectory" => QfiMode::Trajectory,
            "surface" => QfiMode::Surface,
            other => {
                return Err(bad(format!(
                    "unknown qfi_mode `{other}` (trajectory or surface)"
                )))
            }
        };
        if qfi_mode == QfiMode::Surface && model.dim() != 2 {
            return Err(bad("qfi_mode `surface` needs the qubit model"));
        }
        let p0_points = c.p0_points.unwrap_or(51);
        if p0_points < 2 {
            return Err(bad(format!("`p0_points` must be >= 2, got {p0_points}")));
        }
        let t_true = c.t_true.unwrap_or(temperature);
        if !(lo..=hi).contains(&t_true) {
            return Err(bad(format!(
                "`t_true` = {t_true} lies outside the temperature grid [{lo}, {hi}]"
            )));
        }
        let preparation = match (&model, c.preparation.as_deref().unwrap_or("hot")) {
            (Model::Qubit { p_hot, .. }, "hot") => Preparation::Hot(*p_hot),
            (Model::Qubit { p_cold, .. }, "cold") => Preparation::Cold(*p_cold),
            (_, "equilibrium") => Preparation::Equilibrium,
            (Model::Lambda { .. }, "hot" | "cold") => Preparation::Equilibrium,
            (_, other) => {
                return Err(bad(format!(
                    "unknown preparation `{other}` (hot, cold or equilibrium)"
                )))
            }
        };
        Ok(Experiment {
            model,
            t_max: c.t_max,
            t_steps,
            norm,
            delta_tol,
            delta_policy,
            shots,
            seed: c.seed.unwrap_or(0),
            temperature_grid: linspace(lo, hi, points),
            qfi_mode,
            p0_points,
            t_true,
            noiseless: c.noiseless.unwrap_or(false),
            preparation,
            output: output_override.or(c.output_path),
        })
    }
}

/// The hot preparation must start at least as far from equilibrium as the cold one.
fn check_labels(model: &Model, norm: NormKind) -> Result<(), CliError> {
    let (hot, cold, pi) = match model {
        Model::Qubit {
            params,
            p_hot,
            p_cold,
        } => {
            let traj = QubitTrajectory::new(*params, *p_hot).map_err(|e| bad(e.to_string()))?;
            (
                vec![1.0 - p_hot, *p_hot],
                vec![1.0 - p_cold, *p_cold],
                traj.stationary(),
            )
        }
        Model::Lambda {
            model,
            temperature,
            p_hot,
            p_cold,
        } => {
            let rm = model
                .rate_matrix(*temperature)
                .map_err(|e| bad(e.to_string()))?;
            (
                p_hot.clone(),
                p_cold.clone(),
                rm.stationary().iter().copied().collect(),
            )
        }
    };
    let d_hot = thermal_distance(&hot, &pi, norm).map_err(|e| bad(e.to_string()))?;
    let d_cold = thermal_distance(&cold, &pi, norm).map_err(|e| bad(e.to_string()))?;
    if d_hot < d_cold {
        return Err(bad(format!(
            "hot preparation starts closer to equilibrium than the cold one ({d_hot} < {d_cold})"
        )));
    }
    Ok(())
}
