use std::io::Write;
use std::path::{Path, PathBuf};

use mpemba_core::certs::{verify_theorem, TheoremInstance};
use mpemba_core::fisher::qfi_qubit_closed_form;
use mpemba_core::mpemba::{
    detect_inversion, qfi_gain, thermal_distance, uniform_grid, FisherTrajectory, InversionRecord,
    ModalTrajectory, QubitTrajectory, Trajectory,
};
use mpemba_core::protocol::{
    calibrate_equilibrium, dynamical_calibration, fisher_map, mle_temperature, sample_successes,
    MleResult, Observation, Preparation, Probe,
};
use mpemba_core::spectral::{decompose, default_step, modal_derivatives};
use mpemba_core::Execution;

use crate::config::{Experiment, Model, QfiMode};
use crate::table::{num, Table};
use crate::CliError;

/// Where finished artifacts go: a directory, or stdout when none was given.
struct Sink<'a> {
    dir: Option<&'a Path>,
}

impl<'a> Sink<'a> {
    fn new(dir: Option<&'a Path>) -> Result<Self, CliError> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self { dir })
    }

    fn emit(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        match self.dir {
            Some(d) => std::fs::write(d.join(name), bytes)?,
            None => std::io::stdout().write_all(bytes)?,
        }
        Ok(())
    }
}

/// Runs `body` with the hot and cold trajectories of the configured model.
fn with_trajectories<R>(
    model: &Model,
    body: impl FnOnce(&dyn FisherTrajectory, &dyn FisherTrajectory) -> Result<R, CliError>,
) -> Result<R, CliError> {
    match model {
        Model::Qubit {
            params,
            p_hot,
            p_cold,
        } => body(
            &QubitTrajectory::new(*params, *p_hot)?,
            &QubitTrajectory::new(*params, *p_cold)?,
        ),
        Model::Lambda {
            model,
            temperature,
            p_hot,
            p_cold,
        } => {
            let decomp = decompose(&model.rate_matrix(*temperature)?)?;
            let derivs = modal_derivatives(model, &decomp, default_step(*temperature))?;
            body(
                &ModalTrajectory::with_derivatives(&decomp, &derivs, p_hot)?,
                &ModalTrajectory::with_derivatives(&decomp, &derivs, p_cold)?,
            )
        }
    }
}

fn time_grid(
    exp: &Experiment,
    hot: &dyn Trajectory,
    cold: &dyn Trajectory,
) -> Result<Vec<f64>, CliError> {
    let horizon = exp
        .t_max
        .unwrap_or_else(|| 10.0 / hot.slowest_rate().min(cold.slowest_rate()));
    Ok(uniform_grid(horizon, exp.t_steps)?)
}

fn inversion_comments(table: &mut Table, record: &InversionRecord) {
    table.comment("inversion");
    table.comment(format!("norm = {}", record.norm_kind.as_str()));
    table.comment(format!("delta_tol = {}", num(record.delta_tol)));
    match record.t_star {
        Some(t) => {
            table.comment(format!("t_star = {}", num(t)));
            table.comment(format!("persistent = {}", record.persistent));
        }
        None => table.comment("t_star = none (no inversion)"),
    }
}

pub fn relax(exp: &Experiment) -> Result<(), CliError> {
    let sink = Sink::new(exp.output.as_deref())?;
    let bytes = with_trajectories(&exp.model, |hot, cold| {
        let grid = time_grid(exp, hot, cold)?;
        let pi = hot.stationary();
        let qubit = matches!(exp.model, Model::Qubit { .. });
        let header: Vec<String> = if qubit {
            ["t", "p_hot", "p_cold", "p_eq", "d_hot", "d_cold"]
                .map(String::from)
                .to_vec()
        } else {
            let mut h = vec!["t".to_string()];
            for tag in ["p_hot", "p_cold", "p_eq"] {
                h.extend((1..=pi.len()).map(|k| format!("{tag}_{k}")));
            }
            h.extend(["d_hot".to_string(), "d_cold".to_string()]);
            h
        };
        let mut table = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
        for &t in &grid {
            let ph = hot.populations(t)?;
            let pc = cold.populations(t)?;
            let mut row = vec![t];
            if qubit {
                row.extend([ph[1], pc[1], pi[1]]);
            } else {
                row.extend(ph.iter().chain(&pc).chain(&pi));
            }
            row.push(thermal_distance(&ph, &pi, exp.norm)?);
            row.push(thermal_distance(&pc, &pi, exp.norm)?);
            table.numbers(&row)?;
        }
        let record = detect_inversion(hot, cold, &pi, exp.delta_tol, exp.norm, &grid)?;
        inversion_comments(&mut table, &record);
        table.into_bytes()
    })?;
    sink.emit("relax.csv", &bytes)
}

pub fn qfi(exp: &Experiment) -> Result<(), CliError> {
    let sink = Sink::new(exp.output.as_deref())?;
    match exp.qfi_mode {
        QfiMode::Trajectory => {
            let bytes = with_trajectories(&exp.model, |hot, cold| {
                let grid = time_grid(exp, hot, cold)?;
                let f_eq = hot.equilibrium_fisher()?;
                let mut table = Table::new(&["t", "F_hot", "F_cold", "F_eq", "gain_log10"])?;
                for &t in &grid {
                    let f_hot = hot.fisher(t)?;
                    table.numbers(&[t, f_hot, cold.fisher(t)?, f_eq, qfi_gain(f_hot, f_eq)?])?;
                }
                table.into_bytes()
            })?;
            sink.emit("qfi.csv", &bytes)
        }
        QfiMode::Surface => {
            let Model::Qubit {
                params,
                p_hot,
                p_cold,
            } = &exp.model
            else {
                return Err(CliError::Config(
                    "qfi_mode `surface` needs the qubit model".into(),
                ));
            };
            let rate = QubitTrajectory::new(*params, *p_hot)?
                .slowest_rate()
                .min(QubitTrajectory::new(*params, *p_cold)?.slowest_rate());
            let grid = uniform_grid(exp.t_max.unwrap_or(10.0 / rate), exp.t_steps)?;
            let mut table = Table::new(&["p0", "t", "F"])?;
            for k in 0..exp.p0_points {
                let p0 = k as f64 / (exp.p0_points - 1) as f64;
                if let Err(e) = QubitTrajectory::new(*params, p0) {
                    return Err(CliError::Config(format!("surface point p0 = {p0}: {e}")));
                }
                for &t in &grid {
                    table.numbers(&[p0, t, qfi_qubit_closed_form(params, p0, t)?])?;
                }
            }
            sink.emit("qfi_surface.csv", &table.into_bytes()?)
        }
    }
}

pub fn theorem(exp: &Experiment) -> Result<(), CliError> {
    let sink = Sink::new(exp.output.as_deref())?;
    let instance = match &exp.model {
        Model::Qubit {
            params,
            p_hot,
            p_cold,
        } => TheoremInstance::Qubit {
            params: *params,
            p0_hot: *p_hot,
            p0_cold: *p_cold,
        },
        Model::Lambda {
            model,
            temperature,
            p_hot,
            p_cold,
        } => TheoremInstance::Modal {
            model: model.clone(),
            temperature: *temperature,
            p_hot: p_hot.clone(),
            p_cold: p_cold.clone(),
        },
    };
    let grid = match exp.t_max {
        Some(t) => Some(uniform_grid(t, exp.t_steps)?),
        None => None,
    };
    let cert = verify_theorem(&instance, grid.as_deref())?;
    sink.emit("theorem.txt", cert.render().as_bytes())
}

/// Each protocol step draws from its own seed so steps stay independent.
const CALIBRATION_SEED: u64 = 0;
const INVERSION_SEED: u64 = 1;
const FISHER_SEED: u64 = 2;
const ESTIMATE_SEED: u64 = 3;

struct Manifest {
    dir: PathBuf,
    lines: Vec<String>,
}

impl Manifest {
    fn record(&mut self, step: &str, status: &str) -> Result<(), CliError> {
        self.lines.push(format!("{step} = {status}"));
        std::fs::write(self.dir.join("manifest.txt"), self.lines.join("\n") + "\n")?;
        Ok(())
    }

    /// Runs one step, recording success or the failure before propagating it.
    fn step(
        &mut self,
        name: &str,
        file: &str,
        body: impl FnOnce() -> Result<Vec<u8>, CliError>,
    ) -> Result<(), CliError> {
        match body() {
            Ok(bytes) => {
                std::fs::write(self.dir.join(file), bytes)?;
                self.record(name, &format!("ok {file}"))
            }
            Err(e) => {
                self.record(name, &format!("failed: {e}"))?;
                Err(e)
            }
        }
    }
}

fn observe(
    probe: &Probe,
    exp: &Experiment,
    prep: Preparation,
    time: f64,
    stream: u64,
) -> Result<Observation, CliError> {
    let p = probe.population(prep, time, exp.t_true)?;
    if exp.noiseless {
        return Ok(Observation::noiseless(p, exp.shots as f64, time, prep));
    }
    let k = sample_successes(p, exp.shots, exp.seed.wrapping_add(ESTIMATE_SEED), stream)?;
    Ok(Observation {
        shots: exp.shots as f64,
        successes: k as f64,
        time,
        preparation: prep,
    })
}

pub fn protocol(exp: &Experiment, exec: Execution) -> Result<(), CliError> {
    let Model::Qubit {
        params,
        p_hot,
        p_cold,
    } = &exp.model
    else {
        return Err(CliError::Config(
            "the protocol needs the qubit model".into(),
        ));
    };
    let Some(dir) = exp.output.as_deref() else {
        return Err(CliError::Config(
            "the protocol writes several files; pass --output <dir> or set output_path".into(),
        ));
    };
    std::fs::create_dir_all(dir)?;
    let probe = Probe::new(*params);
    let temps = &exp.temperature_grid;
    let rate = QubitTrajectory::new(*params, *p_hot)?
        .slowest_rate()
        .min(QubitTrajectory::new(*params, *p_cold)?.slowest_rate());
    let times = uniform_grid(exp.t_max.unwrap_or(10.0 / rate), exp.t_steps)?;
    let shots = (!exp.noiseless).then_some(exp.shots);
    let seed = |offset: u64| exp.seed.wrapping_add(offset);
    let mut manifest = Manifest {
        dir: dir.to_path_buf(),
        lines: vec![format!("seed = {}", exp.seed)],
    };

    manifest.step("calibration", "calibration.csv", || {
        let mut table = Table::new(&["T_j", "p_fit"])?;
        if exp.noiseless {
            for &t in temps {
                table.numbers(&[t, probe.population(Preparation::Equilibrium, 0.0, t)?])?;
            }
        } else {
            let curve =
                calibrate_equilibrium(&probe, temps, exp.shots, seed(CALIBRATION_SEED), exec)?;
            for (t, v) in curve.knots.iter().zip(&curve.values) {
                table.numbers(&[*t, *v])?;
            }
        }
        table.into_bytes()
    })?;

    manifest.step("inversion_map", "inversion_map.csv", || {
        let map = dynamical_calibration(
            &probe,
            *p_hot,
            *p_cold,
            temps,
            &times,
            shots,
            exp.delta_policy,
            seed(INVERSION_SEED),
            exec,
        )?;
        let mut table = Table::new(&["T_j", "t_M"])?;
        for (t, m) in map.temperatures.iter().zip(&map.times) {
            table.row([num(*t), m.map_or_else(|| "none".to_string(), num)])?;
        }
        table.into_bytes()
    })?;

    let mut argmax = None;
    manifest.step("fisher_map", "fisher_map.csv", || {
        let map = fisher_map(
            &probe,
            exp.preparation,
            temps,
            &times,
            shots,
            seed(FISHER_SEED),
            exec,
        )?;
        let mut table = Table::new(&["T_j", "t_i", "F"])?;
        for j in 0..temps.len() {
            for i in 0..times.len() {
                let cell = map.cell(i, j);
                table.numbers(&[cell.temperature, cell.time, cell.fisher])?;
            }
        }
        argmax = Some(map.argmax_time(exp.t_true));
        table.into_bytes()
    })?;
    let t_arg = argmax.expect("set by the fisher_map step");

    manifest.step("estimate", "estimate.csv", || {
        let interval = (temps[0], temps[temps.len() - 1]);
        let mut table = Table::new(&[
            "interrogation",
            "t",
            "T_hat",
            "stderr",
            "log_likelihood",
            "shots",
            "at_boundary",
            "multimodal",
        ])?;
        let runs = [
            ("argmax", exp.preparation, t_arg, 0),
            ("equilibrium", Preparation::Equilibrium, 0.0, 1),
        ];
        for (label, prep, time, stream) in runs {
            let obs = observe(&probe, exp, prep, time, stream)?;
            let fit: MleResult = mle_temperature(&probe, &[obs], interval)?;
            table.row([
                label.to_string(),
                num(time),
                num(fit.t_hat),
                num(fit.stderr),
                num(fit.log_likelihood),
                exp.shots.to_string(),
                fit.at_boundary.to_string(),
                fit.multimodal.to_string(),
            ])?;
        }
        table.into_bytes()
    })
}
