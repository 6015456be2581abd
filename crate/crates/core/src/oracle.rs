//! Independent reference back-ends for cross-checking the closed-form and modal routes:
//! fixed-step RK4 integration of the rate equations and central finite differences.
//!
//! Nothing here calls the closed-form evolution it is meant to validate.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_positive, Error, Result};
use crate::qubit::{effective_rate, gibbs_population_qubit, QubitBathParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Off by default so that integrator drift stays visible.
    pub clamp_negative: bool,
    /// Record every `record_stride`-th step (the final state is always recorded).
    pub record_stride: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            t_end,
            clamp_negative: false,
            record_stride: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride.max(1);
        self
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_negative = clamp;
        self
    }

    fn validate(&self) -> Result<()> {
        ensure_positive("dt", self.dt)?;
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::Domain {
                name: "t_end",
                value: self.t_end,
                reason: "must be finite and >= 0",
            });
        }
        Ok(())
    }
}

/// Right-hand side of `dp/dt = f(p)`.
#[derive(Debug, Clone, Copy)]
pub enum RateEquation<'a> {
    /// Linear population dynamics `dp/dt = R p`.
    Generator(&'a DMatrix<f64>),
    /// Scalar excited population `dp/dt = −Γ (p − p_eq)` with `Γ` fixed by the preparation.
    Qubit {
        params: &'a QubitBathParams,
        p0: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub clamped: bool,
}

impl IntegratedTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory always holds the initial state")
    }
}

enum Rhs<'a> {
    Linear(&'a DMatrix<f64>),
    Relaxation { rate: f64, target: f64 },
}

impl Rhs<'_> {
    fn eval(&self, p: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            Rhs::Linear(r) => r.mul_to(p, out),
            Rhs::Relaxation { rate, target } => out[0] = -rate * (p[0] - target),
        }
    }
}

/// Classical fixed-step RK4. The step is shrunk to `t_end / ceil(t_end / dt)` so the
/// horizon is hit exactly.
pub fn integrate_rate_equation(
    equation: RateEquation<'_>,
    p0: &[f64],
    config: &IntegratorConfig,
) -> Result<IntegratedTrajectory> {
    config.validate()?;
    let (rhs, dim) = match equation {
        RateEquation::Generator(r) => {
            if r.nrows() != p0.len() || r.ncols() != p0.len() {
                return Err(Error::DimensionMismatch {
                    expected: r.nrows(),
                    actual: p0.len(),
                });
            }
            (Rhs::Linear(r), p0.len())
        }
        RateEquation::Qubit { params, p0: prep } => {
            if p0.len() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    actual: p0.len(),
                });
            }
            let rate = effective_rate(params, prep)?;
            let target = gibbs_population_qubit(params.omega0, params.temperature)?;
            (Rhs::Relaxation { rate, target }, 1)
        }
    };

    let steps = ((config.t_end / config.dt) - 1e-9).ceil().max(0.0) as usize;
    let h = if steps == 0 {
        0.0
    } else {
        config.t_end / steps as f64
    };

    let mut p = DVector::from_column_slice(p0);
    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    let mut stage = DVector::zeros(dim);

    let capacity = steps / config.record_stride + 2;
    let mut times = Vec::with_capacity(capacity);
    let mut states = Vec::with_capacity(capacity);
    times.push(0.0);
    states.push(p0.to_vec());
    let mut clamped = false;

    for step in 1..=steps {
        rhs.eval(&p, &mut k1);
        stage.copy_from(&p);
        stage.axpy(0.5 * h, &k1, 1.0);
        rhs.eval(&stage, &mut k2);
        stage.copy_from(&p);
        stage.axpy(0.5 * h, &k2, 1.0);
        rhs.eval(&stage, &mut k3);
        stage.copy_from(&p);
        stage.axpy(h, &k3, 1.0);
        rhs.eval(&stage, &mut k4);
        p.axpy(h / 6.0, &k1, 1.0);
        p.axpy(h / 3.0, &k2, 1.0);
        p.axpy(h / 3.0, &k3, 1.0);
        p.axpy(h / 6.0, &k4, 1.0);

        let t = step as f64 * h;
        let magnitude = p.amax();
        if !magnitude.is_finite() || magnitude > 1.0 + 1e-6 {
            return Err(Error::UnstableIntegration { time: t, magnitude });
        }
        if config.clamp_negative && p.iter().any(|&x| x < 0.0) {
            p.apply(|x| *x = x.max(0.0));
            let total = p.sum();
            p /= total;
            clamped = true;
        }
        if step % config.record_stride == 0 || step == steps {
            times.push(t);
            states.push(p.iter().copied().collect());
        }
    }
    Ok(IntegratedTrajectory {
        times,
        states,
        clamped,
    })
}

/// Values that a finite difference can be taken of.
pub trait Differentiable: Sized {
    fn central(plus: &Self, minus: &Self, step: f64) -> Self;
    fn distance(a: &Self, b: &Self) -> f64;
}

impl Differentiable for f64 {
    fn central(plus: &Self, minus: &Self, step: f64) -> Self {
        (plus - minus) / (2.0 * step)
    }

    fn distance(a: &Self, b: &Self) -> f64 {
        (a - b).abs()
    }
}

impl Differentiable for DVector<f64> {
    fn central(plus: &Self, minus: &Self, step: f64) -> Self {
        (plus - minus) / (2.0 * step)
    }

    fn distance(a: &Self, b: &Self) -> f64 {
        (a - b).amax()
    }
}

impl Differentiable for DMatrix<f64> {
    fn central(plus: &Self, minus: &Self, step: f64) -> Self {
        (plus - minus) / (2.0 * step)
    }

    fn distance(a: &Self, b: &Self) -> f64 {
        (a - b).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifference<V> {
    /// Central difference with step `h`.
    pub value: V,
    /// Richardson estimate of the truncation error: `|D(h) − D(h/2)| · 4/3`.
    pub error_estimate: f64,
}

pub fn finite_difference_dt<V, F>(f: F, temperature: f64, h: f64) -> Result<FiniteDifference<V>>
where
    V: Differentiable,
    F: Fn(f64) -> Result<V>,
{
    ensure_positive("h", h)?;
    let coarse = V::central(&f(temperature + h)?, &f(temperature - h)?, h);
    let half = 0.5 * h;
    let fine = V::central(&f(temperature + half)?, &f(temperature - half)?, half);
    let error_estimate = V::distance(&coarse, &fine) * 4.0 / 3.0;
    Ok(FiniteDifference {
        value: coarse,
        error_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{dt_gibbs, evolve_population};
    use crate::spectral::{build_lambda_rate_matrix, decompose, evolve_modal, project_initial};

    fn paper_qubit() -> QubitBathParams {
        QubitBathParams::new(1.0, 1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn qubit_rk4_matches_closed_form() {
        let params = paper_qubit();
        let cfg = IntegratorConfig::new(1e-4, 1.0)
            .unwrap()
            .with_stride(10_000);
        let traj = integrate_rate_equation(
            RateEquation::Qubit {
                params: &params,
                p0: 0.9,
            },
            &[0.9],
            &cfg,
        )
        .unwrap();
        let exact = evolve_population(&params, 0.9, 1.0).unwrap();
        assert!((traj.final_state()[0] - exact).abs() < 1e-8);
        assert!((exact - 0.194_547).abs() < 1e-5);
        assert_eq!(traj.times.len(), 2);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let params = paper_qubit();
        let exact = evolve_population(&params, 0.9, 2.0).unwrap();
        let err = |dt: f64| {
            let cfg = IntegratorConfig::new(dt, 2.0)
                .unwrap()
                .with_stride(usize::MAX);
            let traj = integrate_rate_equation(
                RateEquation::Qubit {
                    params: &params,
                    p0: 0.9,
                },
                &[0.9],
                &cfg,
            )
            .unwrap();
            (traj.final_state()[0] - exact).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio >= 12.0, "ratio {ratio}");
    }

    #[test]
    fn zero_generator_is_constant() {
        let r = DMatrix::zeros(3, 3);
        let cfg = IntegratorConfig::new(0.1, 5.0).unwrap();
        let traj =
            integrate_rate_equation(RateEquation::Generator(&r), &[0.2, 0.3, 0.5], &cfg).unwrap();
        assert!(traj.states.iter().all(|s| s == &[0.2, 0.3, 0.5]));
        assert_eq!(traj.times.len(), 51);
        assert!((traj.times[50] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_rk4_matches_modal() {
        let rm = build_lambda_rate_matrix(0.0, 0.0, 1.0, 1.0, 1.0, 0.5).unwrap();
        let d = decompose(&rm).unwrap();
        let p0 = [0.2, 0.2, 0.6];
        let amps = project_initial(&d, &p0).unwrap();
        let cfg = IntegratorConfig::new(1e-4, 10.0).unwrap().with_stride(1000);
        let traj =
            integrate_rate_equation(RateEquation::Generator(rm.entries()), &p0, &cfg).unwrap();
        for (t, state) in traj.times.iter().zip(&traj.states) {
            let modal = evolve_modal(&d, &amps, *t).unwrap();
            for (a, b) in state.iter().zip(&modal.populations) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unstable_integration_is_reported() {
        let r = DMatrix::from_row_slice(2, 2, &[-100.0, 100.0, 100.0, -100.0]);
        let cfg = IntegratorConfig::new(0.1, 1.0).unwrap();
        let err =
            integrate_rate_equation(RateEquation::Generator(&r), &[1.0, 0.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::UnstableIntegration { .. }));
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::new(0.0, 1.0).is_err());
        assert!(IntegratorConfig::new(0.1, -1.0).is_err());
        assert!(IntegratorConfig::new(0.1, 0.0).is_ok());
    }

    #[test]
    fn finite_difference_examples() {
        for h in [0.5, 0.25, 0.125] {
            let fd = finite_difference_dt(|t: f64| Ok(t * t), 3.0, h).unwrap();
            assert_eq!(fd.value, 6.0);
        }
        let c = finite_difference_dt(|_| Ok(4.2), 1.0, 1e-3).unwrap();
        assert_eq!(c.value, 0.0);
        let fd = finite_difference_dt(|t| gibbs_population_qubit(1.0, t), 0.5, 1e-5).unwrap();
        assert!((fd.value - dt_gibbs(1.0, 0.5).unwrap()).abs() < 1e-6);
        assert!((fd.value - 0.419_97).abs() < 1e-5);
        assert!(fd.error_estimate < 1e-6);
    }

    #[test]
    fn finite_difference_propagates_errors() {
        let fd = finite_difference_dt(|t| gibbs_population_qubit(1.0, t), 0.5, 1.0);
        assert!(fd.is_err());
    }
}
