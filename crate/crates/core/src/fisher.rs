//! Fisher information of diagonal probe states.
//!
//! All states here are diagonal in the energy basis, so the quantum Fisher
//! information equals the classical Fisher information of the population
//! distribution, `F_T = Σ_i (∂_T p_i)² / p_i`.

use crate::error::{Error, Result};
use crate::qubit::{
    dt_gibbs, dt_population, dt_rate, effective_rate, evolve_population, gibbs_population_qubit,
    QubitBathParams,
};
use crate::spectral::{
    dt_populations_modal, modal_populations, ModalAmplitudes, ModalDerivatives,
    SpectralDecomposition,
};

/// Populations below this are treated as empty levels.
pub const POPULATION_FLOOR: f64 = 1e-15;
/// An empty level contributes nothing when its derivative is below this.
pub const DERIVATIVE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherSource {
    ClosedForm,
    Modal,
    Empirical,
}

impl FisherSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FisherSource::ClosedForm => "closed_form",
            FisherSource::Modal => "modal",
            FisherSource::Empirical => "empirical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherPoint {
    pub temperature: f64,
    pub time: f64,
    pub fisher: f64,
    pub source: FisherSource,
}

fn level_term(level: usize, p: f64, dp: f64) -> Result<f64> {
    if p < POPULATION_FLOOR {
        if dp.abs() < DERIVATIVE_FLOOR {
            Ok(0.0)
        } else {
            Err(Error::DivergentFisher {
                level,
                population: p,
                derivative: dp,
            })
        }
    } else {
        Ok(dp * dp / p)
    }
}

pub fn fisher_from_populations(p: &[f64], dt_p: &[f64]) -> Result<f64> {
    if p.len() != dt_p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: dt_p.len(),
        });
    }
    if p.iter().chain(dt_p).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("populations or derivatives"));
    }
    p.iter()
        .zip(dt_p)
        .enumerate()
        .map(|(i, (&pi, &dpi))| level_term(i, pi, dpi))
        .sum()
}

/// Two-level Fisher information `(∂_T p)² / (p (1 − p))`.
pub fn fisher_two_level(p: f64, dt_p: f64) -> Result<f64> {
    let var = p * (1.0 - p);
    if var < POPULATION_FLOOR {
        return level_term(usize::from(p > 0.5), var, dt_p);
    }
    Ok(dt_p * dt_p / var)
}

/// Qubit trajectory Fisher information with the squared derivative expanded into
/// its equilibrium-drift, cross and rate-sensitivity terms.
pub fn qfi_qubit_closed_form(params: &QubitBathParams, p0: f64, t: f64) -> Result<f64> {
    let p = evolve_population(params, p0, t)?;
    let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
    let dp_eq = dt_gibbs(params.omega0, params.temperature)?;
    let rate = effective_rate(params, p0)?;
    let d_rate = dt_rate(params, p0)?;
    let decay = (-rate * t).exp();
    let drift = dp_eq * (1.0 - decay);
    let kick = (p0 - p_eq) * t * decay * d_rate;
    let numerator = drift * drift - 2.0 * drift * kick + kick * kick;
    let var = p * (1.0 - p);
    if var < POPULATION_FLOOR {
        return level_term(usize::from(p > 0.5), var, numerator.abs().sqrt());
    }
    Ok(numerator / var)
}

/// Fisher information of the two-level trajectory assembled from the population and
/// its temperature derivative.
pub fn qfi_qubit_from_trajectory(params: &QubitBathParams, p0: f64, t: f64) -> Result<f64> {
    let p = evolve_population(params, p0, t)?;
    let dp = dt_population(params, p0, t)?;
    fisher_from_populations(&[1.0 - p, p], &[-dp, dp])
}

/// Equilibrium benchmark `(∂_T p_eq)² / (p_eq (1 − p_eq))`.
pub fn qfi_equilibrium(omega0: f64, temperature: f64) -> Result<f64> {
    let p = gibbs_population_qubit(omega0, temperature)?;
    let dp = dt_gibbs(omega0, temperature)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    fisher_two_level(p, dp)
}

/// Leading-order small-`t` form `[∂_T p_eq Γ − (p₀ − p_eq) ∂_T Γ]² t² / (p₀ (1 − p₀))`.
pub fn qfi_short_time(params: &QubitBathParams, p0: f64, t: f64) -> Result<f64> {
    let coeff = short_time_coefficient(params, p0)?;
    let var = p0 * (1.0 - p0);
    let slope_sq = coeff * t * t;
    if var < POPULATION_FLOOR {
        return level_term(usize::from(p0 > 0.5), var, slope_sq.sqrt());
    }
    Ok(slope_sq / var)
}

/// `[∂_T p_eq Γ − (p₀ − p_eq) ∂_T Γ]²`, the `t²` coefficient before division by `p₀(1 − p₀)`.
pub fn short_time_coefficient(params: &QubitBathParams, p0: f64) -> Result<f64> {
    let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
    let dp_eq = dt_gibbs(params.omega0, params.temperature)?;
    let rate = effective_rate(params, p0)?;
    let d_rate = dt_rate(params, p0)?;
    let slope = dp_eq * rate - (p0 - p_eq) * d_rate;
    Ok(slope * slope)
}

/// Horizon `0.1/Γ` inside which the short-time form is reported as valid.
pub fn short_time_validity(params: &QubitBathParams, p0: f64) -> Result<f64> {
    Ok(0.1 / effective_rate(params, p0)?)
}

/// Multi-level trajectory Fisher information from the modal solution.
pub fn fisher_modal(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    t: f64,
) -> Result<f64> {
    let p = modal_populations(decomp, amps, t)?;
    let dp = dt_populations_modal(decomp, amps, derivs, t)?;
    fisher_from_populations(p.as_slice(), dp.as_slice())
}

/// Equilibrium Fisher information `Σ_i (∂_T π_i)² / π_i` of a multi-level probe.
pub fn fisher_stationary(decomp: &SpectralDecomposition, derivs: &ModalDerivatives) -> Result<f64> {
    fisher_from_populations(
        decomp.stationary().as_slice(),
        derivs.dt_stationary.as_slice(),
    )
}

/// Variance floor `1 / (shots · F)`; `+∞` when `F ≤ 0`.
pub fn cramer_rao_bound(fisher: f64, shots: u64) -> Result<f64> {
    if shots == 0 {
        return Err(Error::Domain {
            name: "shots",
            value: 0.0,
            reason: "need at least one shot",
        });
    }
    if fisher.is_nan() {
        return Err(Error::NonFinite("fisher"));
    }
    if fisher <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / (shots as f64 * fisher))
}
