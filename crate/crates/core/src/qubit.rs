//! Two-level probe under generalized amplitude damping.
//!
//! The excited population relaxes as `p(t) = p_eq + (p0 - p_eq) exp(-Γ t)` with the
//! state-dependent rate `Γ = Γ₀ (1 + α (p0 - p_eq))` and `Γ₀ = γ (2 n̄ + 1)`.
//! Units are natural (ħ = k_B = 1); times are in inverse units of the rates.
//!
//! The preparation `p0` is held fixed when differentiating with respect to the
//! bath temperature.

use crate::error::{ensure_positive, ensure_probability, Error, Result};

/// Beyond this value of `ω₀/T` the Boltzmann factor is treated as exactly zero.
pub const EXP_SATURATION: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitBathParams {
    pub omega0: f64,
    pub gamma: f64,
    pub temperature: f64,
    /// Mpemba mixing strength, dimensionless and non-negative.
    pub alpha: f64,
}

impl QubitBathParams {
    pub fn new(omega0: f64, gamma: f64, temperature: f64, alpha: f64) -> Result<Self> {
        let params = Self {
            omega0,
            gamma,
            temperature,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega0", self.omega0)?;
        ensure_positive("gamma", self.gamma)?;
        ensure_positive("temperature", self.temperature)?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Domain {
                name: "alpha",
                value: self.alpha,
                reason: "must be finite and >= 0",
            });
        }
        Ok(())
    }

    /// Same probe and coupling, different bath temperature.
    pub fn at_temperature(&self, temperature: f64) -> Self {
        Self {
            temperature,
            ..*self
        }
    }

    pub fn thermal(&self) -> Result<ThermalQuantities> {
        ThermalQuantities::new(self.omega0, self.gamma, self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalQuantities {
    pub n_bar: f64,
    pub p_eq: f64,
    pub gamma0: f64,
    /// Set when `ω₀/T` exceeded [`EXP_SATURATION`] and the zero-temperature limit was used.
    pub saturated: bool,
}

impl ThermalQuantities {
    pub fn new(omega0: f64, gamma: f64, temperature: f64) -> Result<Self> {
        ensure_positive("gamma", gamma)?;
        let n_bar = bose_occupation(omega0, temperature)?;
        let p_eq = gibbs_population_qubit(omega0, temperature)?;
        Ok(Self {
            n_bar,
            p_eq,
            gamma0: gamma * (2.0 * n_bar + 1.0),
            saturated: omega0 / temperature > EXP_SATURATION,
        })
    }
}

/// One sample of a qubit relaxation trajectory together with its temperature derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitTrajectoryPoint {
    pub t: f64,
    pub p: f64,
    pub dt_p: f64,
}

fn boltzmann_exponent(omega0: f64, temperature: f64) -> Result<f64> {
    ensure_positive("omega0", omega0)?;
    ensure_positive("temperature", temperature)?;
    Ok(omega0 / temperature)
}

/// Mean thermal occupation `1/(exp(ω₀/T) - 1)` of the bath mode at the probe frequency.
pub fn bose_occupation(omega0: f64, temperature: f64) -> Result<f64> {
    let x = boltzmann_exponent(omega0, temperature)?;
    if x > EXP_SATURATION {
        return Ok(0.0);
    }
    Ok(1.0 / x.exp_m1())
}

/// Equilibrium excited-state population `1/(1 + exp(ω₀/T))`.
pub fn gibbs_population_qubit(omega0: f64, temperature: f64) -> Result<f64> {
    let x = boltzmann_exponent(omega0, temperature)?;
    if x > EXP_SATURATION {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + x.exp()))
}

/// `∂_T p_eq = ω₀ e^{ω₀/T} / (T² (1 + e^{ω₀/T})²)`, evaluated as `ω₀ p_eq (1 - p_eq) / T²`.
pub fn dt_gibbs(omega0: f64, temperature: f64) -> Result<f64> {
    let p = gibbs_population_qubit(omega0, temperature)?;
    Ok(omega0 * p * (1.0 - p) / (temperature * temperature))
}

/// `∂_T n̄ = ω₀ n̄ (n̄ + 1) / T²`.
pub fn dt_bose_occupation(omega0: f64, temperature: f64) -> Result<f64> {
    let n = bose_occupation(omega0, temperature)?;
    Ok(omega0 * n * (n + 1.0) / (temperature * temperature))
}

pub fn effective_rate(params: &QubitBathParams, p0: f64) -> Result<f64> {
    params.validate()?;
    ensure_probability("p0", p0)?;
    let th = params.thermal()?;
    let rate = th.gamma0 * (1.0 + params.alpha * (p0 - th.p_eq));
    if rate <= 0.0 {
        return Err(Error::NonPositiveRate { rate });
    }
    Ok(rate)
}

/// Excited population at time `t` for a preparation with initial population `p0`.
pub fn evolve_population(params: &QubitBathParams, p0: f64, t: f64) -> Result<f64> {
    ensure_time(t)?;
    let rate = effective_rate(params, p0)?;
    let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
    if t == 0.0 {
        return Ok(p0);
    }
    Ok(p_eq + (p0 - p_eq) * (-rate * t).exp())
}

/// `∂_T Γ = ∂_T Γ₀ [1 + α (p0 - p_eq)] - α Γ₀ ∂_T p_eq`.
pub fn dt_rate(params: &QubitBathParams, p0: f64) -> Result<f64> {
    // validates the parameter domain and rejects non-positive rates
    effective_rate(params, p0)?;
    let th = params.thermal()?;
    let dgamma0 = 2.0 * params.gamma * dt_bose_occupation(params.omega0, params.temperature)?;
    let dp_eq = dt_gibbs(params.omega0, params.temperature)?;
    let correction = if params.alpha == 0.0 {
        0.0
    } else {
        params.alpha * th.gamma0 * dp_eq
    };
    Ok(dgamma0 * (1.0 + params.alpha * (p0 - th.p_eq)) - correction)
}

/// `∂_T p(t) = ∂_T p_eq (1 - e^{-Γt}) - (p0 - p_eq) t e^{-Γt} ∂_T Γ`.
pub fn dt_population(params: &QubitBathParams, p0: f64, t: f64) -> Result<f64> {
    ensure_time(t)?;
    let rate = effective_rate(params, p0)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
    let dp_eq = dt_gibbs(params.omega0, params.temperature)?;
    let drate = dt_rate(params, p0)?;
    let decay = (-rate * t).exp();
    Ok(dp_eq * (1.0 - decay) - (p0 - p_eq) * t * decay * drate)
}

pub fn trajectory_point(params: &QubitBathParams, p0: f64, t: f64) -> Result<QubitTrajectoryPoint> {
    Ok(QubitTrajectoryPoint {
        t,
        p: evolve_population(params, p0, t)?,
        dt_p: dt_population(params, p0, t)?,
    })
}

fn ensure_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain {
            name: "t",
            value: t,
            reason: "must be >= 0",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper(alpha: f64) -> QubitBathParams {
        QubitBathParams::new(1.0, 1.0, 0.5, alpha).unwrap()
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn bose_occupation_values() {
        // 1/(e^2 - 1) and 1/(e - 1)
        assert_relative_eq!(
            bose_occupation(1.0, 0.5).unwrap(),
            0.156_517_642_749_665_6,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bose_occupation(1.0, 1.0).unwrap(),
            0.581_976_706_869_326_5,
            max_relative = 1e-14
        );
        assert_eq!(bose_occupation(1.0, 1e-4).unwrap(), 0.0);
        assert!(bose_occupation(1.0, 0.0).is_err());
        assert!(bose_occupation(-1.0, 1.0).is_err());
    }

    #[test]
    fn occupation_increases_with_temperature() {
        let mut last = 0.0;
        for i in 1..200 {
            let n = bose_occupation(1.0, 0.02 * i as f64).unwrap();
            assert!(n > last);
            last = n;
        }
    }

    #[test]
    fn gibbs_population_values() {
        let p = gibbs_population_qubit(1.0, 0.5).unwrap();
        assert_relative_eq!(p, 0.119_202_922_022_117_6, max_relative = 1e-14);
        let n = bose_occupation(1.0, 0.5).unwrap();
        assert!((p - n / (2.0 * n + 1.0)).abs() < 1e-12);
        assert_relative_eq!(
            gibbs_population_qubit(1.0, 1e9).unwrap(),
            0.5,
            epsilon = 1e-9
        );
    }

    #[test]
    fn saturation_flag() {
        let th = ThermalQuantities::new(1.0, 1.0, 1e-3).unwrap();
        assert!(th.saturated);
        assert_eq!(th.n_bar, 0.0);
        assert_eq!(th.p_eq, 0.0);
        assert_eq!(th.gamma0, 1.0);
        assert!(!ThermalQuantities::new(1.0, 1.0, 0.5).unwrap().saturated);
    }

    #[test]
    fn effective_rate_values() {
        assert_relative_eq!(
            effective_rate(&paper(0.0), 0.9).unwrap(),
            1.313_035_285_499_331,
            max_relative = 1e-12
        );
        let p_eq = gibbs_population_qubit(1.0, 0.5).unwrap();
        assert_relative_eq!(
            effective_rate(&paper(1.0), p_eq).unwrap(),
            1.313_035_285_499_331,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            effective_rate(&paper(1.0), 0.9).unwrap(),
            2.338_249_399_699_064,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rate_is_state_independent_without_mixing() {
        let params = paper(0.0);
        let reference = effective_rate(&params, 0.0).unwrap();
        for i in 0..=50 {
            let r = effective_rate(&params, i as f64 / 50.0).unwrap();
            assert!((r - reference).abs() < 1e-15);
        }
    }

    #[test]
    fn unphysical_rate_rejected() {
        let params = paper(20.0);
        assert!(matches!(
            effective_rate(&params, 0.0),
            Err(Error::NonPositiveRate { .. })
        ));
    }

    #[test]
    fn evolve_population_values() {
        let params = paper(1.0);
        assert_eq!(evolve_population(&params, 0.9, 0.0).unwrap(), 0.9);
        assert_relative_eq!(
            evolve_population(&params, 0.9, 1.0).unwrap(),
            0.194_547_042_538_537_1,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            evolve_population(&params, 0.9, 1e3).unwrap(),
            0.119_202_922_022_117_6,
            max_relative = 1e-12
        );
        let p_eq = gibbs_population_qubit(1.0, 0.5).unwrap();
        assert_eq!(evolve_population(&params, p_eq, 3.7).unwrap(), p_eq);
        assert!(evolve_population(&params, 0.9, -1.0).is_err());
    }

    #[test]
    fn dt_gibbs_matches_finite_difference() {
        let analytic = dt_gibbs(1.0, 0.5).unwrap();
        assert_relative_eq!(analytic, 0.419_974_341_614, max_relative = 1e-9);
        let fd = central(|t| gibbs_population_qubit(1.0, t).unwrap(), 0.5, 1e-5);
        assert_relative_eq!(analytic, fd, max_relative = 1e-6);
        assert!(dt_gibbs(1.0, 1e8).unwrap() < 1e-15);
        assert_eq!(dt_gibbs(1.0, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn dt_rate_values() {
        let d0 = dt_rate(&paper(0.0), 0.3).unwrap();
        assert_relative_eq!(d0, 1.448_123_321_923, max_relative = 1e-9);
        let fd0 = central(
            |t| effective_rate(&paper(0.0).at_temperature(t), 0.3).unwrap(),
            0.5,
            1e-5,
        );
        assert_relative_eq!(d0, fd0, max_relative = 1e-6);

        // Frozen from the central-difference oracle: 2.02737265...
        let d1 = dt_rate(&paper(1.0), 0.9).unwrap();
        let fd1 = central(
            |t| effective_rate(&paper(1.0).at_temperature(t), 0.9).unwrap(),
            0.5,
            1e-5,
        );
        assert_relative_eq!(d1, fd1, max_relative = 1e-5);
        assert_relative_eq!(d1, 2.027_372_65, max_relative = 1e-7);
    }

    #[test]
    fn dt_population_limits_and_oracle() {
        let params = paper(0.0);
        assert_eq!(dt_population(&params, 0.9, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            dt_population(&params, 0.9, 200.0).unwrap(),
            dt_gibbs(1.0, 0.5).unwrap(),
            max_relative = 1e-12
        );
        let h = 1e-5 * 0.5;
        for &(alpha, t) in &[(0.0, 0.5), (1.0, 0.5), (1.0, 1.367), (2.0, 3.0)] {
            let p = paper(alpha);
            let fd = central(
                |temp| evolve_population(&p.at_temperature(temp), 0.9, t).unwrap(),
                0.5,
                h,
            );
            let analytic = dt_population(&p, 0.9, t).unwrap();
            assert_relative_eq!(analytic, fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn invalid_params() {
        assert!(QubitBathParams::new(1.0, 1.0, 0.5, -0.1).is_err());
        assert!(QubitBathParams::new(1.0, 0.0, 0.5, 0.0).is_err());
        assert!(QubitBathParams::new(f64::NAN, 1.0, 0.5, 0.0).is_err());
        assert!(effective_rate(&paper(0.0), 1.2).is_err());
    }
}
