//! Detailed-balance rate matrices and their biorthonormal spectral decomposition.
//!
//! Populations evolve as `dp/dt = R p` where `R` is a column-conserving generator
//! (`R[i][j]` is the rate of the jump `j → i`). Relaxation modes satisfy
//! `R v_k = -λ_k v_k` and `w_kᵀ R = -λ_k w_kᵀ` with `w_j · v_k = δ_jk`.
//!
//! Mode indices are zero-based: mode `0` is the stationary Gibbs vector with
//! `λ_0 = 0`, `v_0 = π` and `w_0 = (1, …, 1)`. The relaxation modes follow in
//! ascending order of decay rate, so mode `1` is the slowest.
//!
//! Right modes use the gauge `‖v_k‖ = 1` with the first nonzero component
//! positive; left modes are scaled to keep biorthonormality.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_positive, Error, Result};
use crate::qubit::{bose_occupation, EXP_SATURATION};

/// Minimum separation between distinct eigenvalues.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;
/// Populations above this negative threshold are treated as round-off and clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
const SIMPLEX_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    /// Coupling strength `κ` at the Bohr frequency of the transition.
    pub coupling: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    entries: DMatrix<f64>,
    stationary: DVector<f64>,
    temperature: f64,
    energies: Option<Vec<f64>>,
}

impl RateMatrix {
    /// Wraps an explicit generator and its stationary vector after checking the
    /// generator and detailed-balance invariants.
    pub fn from_generator(
        entries: DMatrix<f64>,
        stationary: DVector<f64>,
        temperature: f64,
    ) -> Result<Self> {
        let rm = Self {
            entries,
            stationary,
            temperature,
            energies: None,
        };
        rm.validate()?;
        Ok(rm)
    }

    fn validate(&self) -> Result<()> {
        let n = self.entries.nrows();
        if n == 0 || self.entries.ncols() != n {
            return Err(Error::InvalidGenerator(
                "generator must be square and non-empty".into(),
            ));
        }
        if self.stationary.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.stationary.len(),
            });
        }
        if self.entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("rate matrix"));
        }
        let scale = self.entries.amax().max(1.0);
        for j in 0..n {
            let col: f64 = self.entries.column(j).sum();
            if col.abs() > 1e-12 * scale {
                return Err(Error::InvalidGenerator(format!(
                    "column {j} sums to {col:e}"
                )));
            }
            for i in 0..n {
                if i != j && self.entries[(i, j)] < 0.0 {
                    return Err(Error::InvalidGenerator(format!(
                        "negative off-diagonal rate at ({i}, {j})"
                    )));
                }
            }
        }
        if (self.stationary.sum() - 1.0).abs() > SIMPLEX_TOLERANCE
            || self.stationary.iter().any(|&x| x < 0.0)
        {
            return Err(Error::InvalidGenerator(
                "stationary vector is not a distribution".into(),
            ));
        }
        let residual = self.detailed_balance_residual();
        if residual > 1e-10 {
            return Err(Error::NotReversible { residual });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn energies(&self) -> Option<&[f64]> {
        self.energies.as_deref()
    }

    /// Rate of the jump `from → to`.
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        self.entries[(to, from)]
    }

    /// Largest `|w_{i←j} π_j − w_{j←i} π_i|` relative to the largest flux.
    pub fn detailed_balance_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        let mut flux_scale = f64::MIN_POSITIVE;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let forward = self.entries[(i, j)] * self.stationary[j];
                let backward = self.entries[(j, i)] * self.stationary[i];
                flux_scale = flux_scale.max(forward.abs());
                worst = worst.max((forward - backward).abs());
            }
        }
        worst / flux_scale
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| self.entries.column(j).sum())
            .collect()
    }
}

/// A temperature-parametrized family of generators.
pub trait GeneratorFamily {
    fn generator(&self, temperature: f64) -> Result<RateMatrix>;
}

impl<F> GeneratorFamily for F
where
    F: Fn(f64) -> Result<RateMatrix>,
{
    fn generator(&self, temperature: f64) -> Result<RateMatrix> {
        self(temperature)
    }
}

/// N-level probe coupled to a bosonic bath through a set of dipole transitions.
///
/// Each transition contributes `w_{upper←lower} = κ n̄(ω)` and
/// `w_{lower←upper} = κ (n̄(ω) + 1)` with `ω = E_upper − E_lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalRateModel {
    energies: Vec<f64>,
    transitions: Vec<Transition>,
}

impl ThermalRateModel {
    pub fn new(energies: Vec<f64>, transitions: Vec<Transition>) -> Result<Self> {
        let n = energies.len();
        if n < 2 {
            return Err(Error::TooFewPoints {
                required: 2,
                actual: n,
            });
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("energies"));
        }
        for tr in &transitions {
            if tr.lower >= n || tr.upper >= n {
                return Err(Error::InvalidGenerator(format!(
                    "transition ({}, {}) references a missing level",
                    tr.lower, tr.upper
                )));
            }
            ensure_positive("coupling", tr.coupling)?;
            let omega = energies[tr.upper] - energies[tr.lower];
            if !(omega > 0.0) {
                return Err(Error::Domain {
                    name: "bohr_frequency",
                    value: omega,
                    reason: "upper level must lie above lower level",
                });
            }
        }
        if !connected(n, &transitions) {
            return Err(Error::InvalidGenerator(
                "transition graph is not connected".into(),
            ));
        }
        Ok(Self {
            energies,
            transitions,
        })
    }

    /// Λ configuration: ground levels 1 and 2 both coupled to the excited level 3.
    pub fn lambda(e1: f64, e2: f64, e3: f64, kappa1: f64, kappa2: f64) -> Result<Self> {
        Self::new(
            vec![e1, e2, e3],
            vec![
                Transition {
                    lower: 0,
                    upper: 2,
                    coupling: kappa1,
                },
                Transition {
                    lower: 1,
                    upper: 2,
                    coupling: kappa2,
                },
            ],
        )
    }

    /// Population sector of the qubit amplitude-damping channel (no state-dependent mixing).
    pub fn two_level(omega0: f64, gamma: f64) -> Result<Self> {
        Self::new(
            vec![0.0, omega0],
            vec![Transition {
                lower: 0,
                upper: 1,
                coupling: gamma,
            }],
        )
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn rate_matrix(&self, temperature: f64) -> Result<RateMatrix> {
        ensure_positive("temperature", temperature)?;
        let n = self.energies.len();
        let mut entries = DMatrix::zeros(n, n);
        for tr in &self.transitions {
            let omega = self.energies[tr.upper] - self.energies[tr.lower];
            if omega / temperature > EXP_SATURATION {
                return Err(Error::Domain {
                    name: "temperature",
                    value: temperature,
                    reason: "Boltzmann factor underflows; Gibbs state is not strictly positive",
                });
            }
            let n_bar = bose_occupation(omega, temperature)?;
            let up = tr.coupling * n_bar;
            let down = tr.coupling * (n_bar + 1.0);
            entries[(tr.upper, tr.lower)] += up;
            entries[(tr.lower, tr.lower)] -= up;
            entries[(tr.lower, tr.upper)] += down;
            entries[(tr.upper, tr.upper)] -= down;
        }
        let stationary = gibbs_vector(&self.energies, temperature)?;
        let rm = RateMatrix {
            entries,
            stationary,
            temperature,
            energies: Some(self.energies.clone()),
        };
        rm.validate()?;
        Ok(rm)
    }
}

impl GeneratorFamily for ThermalRateModel {
    fn generator(&self, temperature: f64) -> Result<RateMatrix> {
        self.rate_matrix(temperature)
    }
}

fn connected(n: usize, transitions: &[Transition]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for tr in transitions {
            let next = if tr.lower == i {
                tr.upper
            } else if tr.upper == i {
                tr.lower
            } else {
                continue;
            };
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

pub fn build_lambda_rate_matrix(
    e1: f64,
    e2: f64,
    e3: f64,
    kappa1: f64,
    kappa2: f64,
    temperature: f64,
) -> Result<RateMatrix> {
    ThermalRateModel::lambda(e1, e2, e3, kappa1, kappa2)?.rate_matrix(temperature)
}

/// Boltzmann distribution `π_i = e^{−E_i/T} / Z`.
pub fn gibbs_vector(energies: &[f64], temperature: f64) -> Result<DVector<f64>> {
    ensure_positive("temperature", temperature)?;
    if energies.is_empty() {
        return Err(Error::TooFewPoints {
            required: 1,
            actual: 0,
        });
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let weights = DVector::from_iterator(
        energies.len(),
        energies.iter().map(|&e| (-(e - e_min) / temperature).exp()),
    );
    let z = weights.sum();
    Ok(weights / z)
}

/// `∂_T π_i = π_i (E_i − ⟨E⟩) / T²`.
pub fn dt_gibbs_vector(energies: &[f64], temperature: f64) -> Result<DVector<f64>> {
    let pi = gibbs_vector(energies, temperature)?;
    let mean: f64 = pi.iter().zip(energies).map(|(p, e)| p * e).sum();
    let t2 = temperature * temperature;
    Ok(DVector::from_iterator(
        energies.len(),
        pi.iter().zip(energies).map(|(p, e)| p * (e - mean) / t2),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    right: Vec<DVector<f64>>,
    left: Vec<DVector<f64>>,
    stationary: DVector<f64>,
    temperature: f64,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Decay rates, ascending, with `λ_0 = 0`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, mode: usize) -> f64 {
        self.eigenvalues[mode]
    }

    pub fn right_mode(&self, mode: usize) -> &DVector<f64> {
        &self.right[mode]
    }

    pub fn left_mode(&self, mode: usize) -> &DVector<f64> {
        &self.left[mode]
    }

    pub fn right_modes(&self) -> &[DVector<f64>] {
        &self.right
    }

    pub fn left_modes(&self) -> &[DVector<f64>] {
        &self.left
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Slowest nonzero decay rate `λ_1`.
    pub fn slowest_rate(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    /// Smallest separation between distinct relaxation rates (modes ≥ 1).
    pub fn min_relaxation_gap(&self) -> f64 {
        self.eigenvalues[1..]
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `|w_j · v_k − δ_jk|`.
    pub fn biorthonormality_residual(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for k in 0..n {
                let target = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((self.left[j].dot(&self.right[k]) - target).abs());
            }
        }
        worst
    }

    /// `Σ_k (−λ_k) v_k w_kᵀ`, which must reproduce the generator.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for k in 1..n {
            m -= self.eigenvalues[k] * &self.right[k] * self.left[k].transpose();
        }
        m
    }

    /// Matrix with columns `v_1 … v_{N−1}` (relaxation modes only).
    pub fn relaxation_right_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.right[1..])
    }

    /// Matrix with rows `w_1ᵀ … w_{N−1}ᵀ`.
    pub fn relaxation_left_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.left[1..]).transpose()
    }
}

/// Diagonalizes a reversible generator through its symmetrization
/// `S = Π^{−1/2} R Π^{1/2}`.
pub fn decompose(rm: &RateMatrix) -> Result<SpectralDecomposition> {
    let n = rm.dim();
    let pi = rm.stationary();
    if let Some((i, &p)) = pi.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
        return Err(Error::Domain {
            name: "stationary",
            value: p,
            reason: if i == 0 {
                "Gibbs weights must be strictly positive"
            } else {
                "Gibbs weights must be strictly positive (level underflow)"
            },
        });
    }
    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let r = rm.entries();
    let s = DMatrix::from_fn(n, n, |i, j| r[(i, j)] * sqrt_pi[j] / sqrt_pi[i]);
    let asym = (&s - s.transpose()).amax();
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-9 * scale {
        return Err(Error::NotReversible {
            residual: asym / scale,
        });
    }
    let sym = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(idx, &mu)| (-mu, idx))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    if order[0].0.abs() > 1e-9 * scale.max(1.0) {
        return Err(Error::InvalidGenerator(format!(
            "no zero eigenvalue (smallest decay rate {:e})",
            order[0].0
        )));
    }
    for pair in order.windows(2) {
        if pair[1].0 - pair[0].0 < DEGENERACY_TOLERANCE {
            return Err(Error::DegenerateSpectrum {
                first: pair[0].0,
                second: pair[1].0,
                tolerance: DEGENERACY_TOLERANCE,
            });
        }
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    eigenvalues.push(0.0);
    right.push(pi.clone());
    left.push(DVector::from_element(n, 1.0));

    for &(lambda, idx) in &order[1..] {
        let u = eig.eigenvectors.column(idx);
        let mut v = DVector::from_iterator(n, u.iter().zip(&sqrt_pi).map(|(x, s)| x * s));
        let mut w = DVector::from_iterator(n, u.iter().zip(&sqrt_pi).map(|(x, s)| x / s));
        let norm = v.norm();
        v /= norm;
        w *= norm;
        let cutoff = 1e-9 * v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > cutoff) {
            if *first < 0.0 {
                v.neg_mut();
                w.neg_mut();
            }
        }
        eigenvalues.push(lambda);
        right.push(v);
        left.push(w);
    }

    Ok(SpectralDecomposition {
        eigenvalues,
        right,
        left,
        stationary: pi.clone(),
        temperature: rm.temperature(),
    })
}

/// Point on the probability simplex at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    pub populations: Vec<f64>,
    pub time: f64,
    /// True when round-off negatives were clamped to zero.
    pub clamped: bool,
}

impl PopulationVector {
    pub fn new(populations: Vec<f64>, time: f64) -> Result<Self> {
        let mut populations = populations;
        if populations.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("populations"));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Domain {
                name: "populations",
                value: total,
                reason: "must sum to 1",
            });
        }
        let mut clamped = false;
        for p in populations.iter_mut() {
            if *p < 0.0 {
                if *p < -CLAMP_TOLERANCE {
                    return Err(Error::Domain {
                        name: "populations",
                        value: *p,
                        reason: "negative population",
                    });
                }
                *p = 0.0;
                clamped = true;
            }
        }
        Ok(Self {
            populations,
            time,
            clamped,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.populations
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.populations)
    }
}

/// Modal amplitudes `a_k = w_k · (p(0) − π)`, indexed like the modes (`a_0 = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModalAmplitudes {
    pub amplitudes: Vec<f64>,
    pub dt_amplitudes: Option<Vec<f64>>,
}

pub fn project_initial(decomp: &SpectralDecomposition, p0: &[f64]) -> Result<ModalAmplitudes> {
    let n = decomp.dim();
    if p0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p0.len(),
        });
    }
    PopulationVector::new(p0.to_vec(), 0.0)?;
    let delta = DVector::from_column_slice(p0) - decomp.stationary();
    let mut amplitudes: Vec<f64> = decomp.left_modes().iter().map(|w| w.dot(&delta)).collect();
    amplitudes[0] = 0.0;
    Ok(ModalAmplitudes {
        amplitudes,
        dt_amplitudes: None,
    })
}

/// Amplitudes together with `∂_T a_k = ∂_T w_k · (p(0) − π) − w_k · ∂_T π`,
/// holding the preparation fixed.
pub fn project_initial_with_derivatives(
    decomp: &SpectralDecomposition,
    derivs: &ModalDerivatives,
    p0: &[f64],
) -> Result<ModalAmplitudes> {
    let mut amps = project_initial(decomp, p0)?;
    let delta = DVector::from_column_slice(p0) - decomp.stationary();
    let mut dt: Vec<f64> = (0..decomp.dim())
        .map(|k| derivs.dt_left[k].dot(&delta) - decomp.left_mode(k).dot(&derivs.dt_stationary))
        .collect();
    dt[0] = 0.0;
    amps.dt_amplitudes = Some(dt);
    Ok(amps)
}

/// `p(t) = π + Σ_k a_k e^{−λ_k t} v_k`.
pub fn evolve_modal(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    t: f64,
) -> Result<PopulationVector> {
    let p = modal_populations(decomp, amps, t)?;
    PopulationVector::new(p.iter().copied().collect(), t)
}

/// Unchecked modal sum; used where intermediate vectors may sit on the simplex boundary.
pub fn modal_populations(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    t: f64,
) -> Result<DVector<f64>> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain {
            name: "t",
            value: t,
            reason: "must be >= 0",
        });
    }
    check_amplitudes(decomp, amps)?;
    let mut p = decomp.stationary().clone();
    for k in 1..decomp.dim() {
        let a = amps.amplitudes[k];
        if a != 0.0 {
            p.axpy(
                a * (-decomp.eigenvalue(k) * t).exp(),
                decomp.right_mode(k),
                1.0,
            );
        }
    }
    Ok(p)
}

fn check_amplitudes(decomp: &SpectralDecomposition, amps: &ModalAmplitudes) -> Result<()> {
    if amps.amplitudes.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.dim(),
            actual: amps.amplitudes.len(),
        });
    }
    Ok(())
}

/// Temperature derivatives of every spectral object at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalDerivatives {
    pub dt_generator: DMatrix<f64>,
    pub dt_stationary: DVector<f64>,
    pub dt_eigenvalues: Vec<f64>,
    pub dt_right: Vec<DVector<f64>>,
    pub dt_left: Vec<DVector<f64>>,
}

/// Default finite-difference step for `∂_T R`.
pub fn default_step(temperature: f64) -> f64 {
    1e-5 * temperature
}

/// `∂_T R` by central differences; falls back to Richardson extrapolation when the
/// `h` and `h/2` estimates disagree by more than `1e-4` relative.
pub fn dt_generator<F: GeneratorFamily + ?Sized>(
    family: &F,
    temperature: f64,
    h: f64,
) -> Result<DMatrix<f64>> {
    ensure_positive("h", h)?;
    let diff = |step: f64| -> Result<DMatrix<f64>> {
        let plus = family.generator(temperature + step)?;
        let minus = family.generator(temperature - step)?;
        Ok((plus.entries() - minus.entries()) / (2.0 * step))
    };
    let coarse = diff(h)?;
    let fine = diff(0.5 * h)?;
    let scale = fine.amax();
    if scale == 0.0 || (&coarse - &fine).amax() <= 1e-4 * scale {
        Ok(fine)
    } else {
        Ok((&fine * 4.0 - coarse) / 3.0)
    }
}

/// `∂_T λ_k = w_kᵀ (∂_T A) v_k` with `A = −R`, so that decay rates stay non-negative.
pub fn eigenvalue_derivative(
    decomp: &SpectralDecomposition,
    dt_r: &DMatrix<f64>,
    mode: usize,
) -> f64 {
    -decomp
        .left_mode(mode)
        .dot(&(dt_r * decomp.right_mode(mode)))
}

/// Perturbative `Σ_{j≠k} [w_jᵀ (∂_T R) v_k / (λ_j − λ_k)] v_j`, which satisfies
/// `w_k · ∂_T v_k = 0`.
fn biorthogonal_right_derivative(
    decomp: &SpectralDecomposition,
    dt_r: &DMatrix<f64>,
    mode: usize,
) -> DVector<f64> {
    let n = decomp.dim();
    let drv = dt_r * decomp.right_mode(mode);
    let mut out = DVector::zeros(n);
    for j in (0..n).filter(|&j| j != mode) {
        let coeff =
            decomp.left_mode(j).dot(&drv) / (decomp.eigenvalue(j) - decomp.eigenvalue(mode));
        out.axpy(coeff, decomp.right_mode(j), 1.0);
    }
    out
}

/// Rate at which the unit-norm gauge rescales mode `k`: `v_k · ∂v_k` of the
/// biorthogonal derivative. Zero for the stationary mode, which keeps unit sum.
fn gauge_rate(decomp: &SpectralDecomposition, pert: &DVector<f64>, mode: usize) -> f64 {
    if mode == 0 {
        0.0
    } else {
        decomp.right_mode(mode).dot(pert)
    }
}

/// Derivative of the right mode in the decomposition's own gauge: unit norm for
/// relaxation modes, unit sum for the stationary mode.
pub fn right_mode_derivative(
    decomp: &SpectralDecomposition,
    dt_r: &DMatrix<f64>,
    mode: usize,
) -> DVector<f64> {
    let mut out = biorthogonal_right_derivative(decomp, dt_r, mode);
    let shift = gauge_rate(decomp, &out, mode);
    out.axpy(-shift, decomp.right_mode(mode), 1.0);
    out
}

/// `∂_T w_k = Σ_{j≠k} [w_kᵀ (∂_T R) v_j / (λ_j − λ_k)] w_j` plus the rescaling that keeps
/// `w_k · v_k = 1` in the gauge of [`right_mode_derivative`].
pub fn left_mode_derivative(
    decomp: &SpectralDecomposition,
    dt_r: &DMatrix<f64>,
    mode: usize,
) -> DVector<f64> {
    let n = decomp.dim();
    let wdr = dt_r.tr_mul(decomp.left_mode(mode));
    let mut out = DVector::zeros(n);
    for j in (0..n).filter(|&j| j != mode) {
        let coeff =
            wdr.dot(decomp.right_mode(j)) / (decomp.eigenvalue(j) - decomp.eigenvalue(mode));
        out.axpy(coeff, decomp.left_mode(j), 1.0);
    }
    let shift = gauge_rate(
        decomp,
        &biorthogonal_right_derivative(decomp, dt_r, mode),
        mode,
    );
    out.axpy(shift, decomp.left_mode(mode), 1.0);
    out
}

/// Matches every mode of `reference` to a mode of `other` by nearest eigenvalue,
/// confirmed by maximal eigenvector overlap. Returns `(index, sign)` pairs where
/// `sign` aligns the right mode of `other` with the reference gauge.
pub fn track_modes(
    reference: &SpectralDecomposition,
    other: &SpectralDecomposition,
) -> Result<Vec<(usize, f64)>> {
    let n = reference.dim();
    if other.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: other.dim(),
        });
    }
    let mut matches = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = reference.eigenvalue(k);
        let nearest = (0..n)
            .min_by(|&a, &b| {
                (other.eigenvalue(a) - lambda)
                    .abs()
                    .total_cmp(&(other.eigenvalue(b) - lambda).abs())
            })
            .expect("non-empty spectrum");
        let overlap = |j: usize| reference.left_mode(k).dot(other.right_mode(j));
        let best_overlap = (0..n)
            .max_by(|&a, &b| overlap(a).abs().total_cmp(&overlap(b).abs()))
            .expect("non-empty spectrum");
        if nearest != best_overlap || matches.iter().any(|&(m, _)| m == nearest) {
            return Err(Error::AmbiguousTracking { mode: k });
        }
        let sign = if overlap(nearest) < 0.0 { -1.0 } else { 1.0 };
        matches.push((nearest, sign));
    }
    Ok(matches)
}

fn check_tracking<F: GeneratorFamily + ?Sized>(
    family: &F,
    decomp: &SpectralDecomposition,
    mode: usize,
    h: f64,
) -> Result<()> {
    let t = decomp.temperature();
    for temp in [t - h, t + h] {
        let shifted = decompose(&family.generator(temp)?)?;
        let map = track_modes(decomp, &shifted)?;
        if map[mode].0 != mode {
            return Err(Error::AmbiguousTracking { mode });
        }
    }
    Ok(())
}

pub fn dt_eigenvalue<F: GeneratorFamily + ?Sized>(
    family: &F,
    decomp: &SpectralDecomposition,
    mode: usize,
    h: f64,
) -> Result<f64> {
    check_tracking(family, decomp, mode, h)?;
    let dr = dt_generator(family, decomp.temperature(), h)?;
    Ok(eigenvalue_derivative(decomp, &dr, mode))
}

pub fn dt_eigenvector<F: GeneratorFamily + ?Sized>(
    family: &F,
    decomp: &SpectralDecomposition,
    mode: usize,
    h: f64,
) -> Result<DVector<f64>> {
    check_tracking(family, decomp, mode, h)?;
    let dr = dt_generator(family, decomp.temperature(), h)?;
    Ok(right_mode_derivative(decomp, &dr, mode))
}

/// All spectral temperature derivatives from one `∂_T R` evaluation.
///
/// `∂_T π` uses the closed Gibbs form when the generator carries level energies and
/// the perturbative expansion `Σ_{j≥1} [w_jᵀ (∂_T R) π / λ_j] v_j` otherwise.
pub fn modal_derivatives<F: GeneratorFamily + ?Sized>(
    family: &F,
    decomp: &SpectralDecomposition,
    h: f64,
) -> Result<ModalDerivatives> {
    let t = decomp.temperature();
    let dr = dt_generator(family, t, h)?;
    let n = decomp.dim();
    let dt_stationary = match family.generator(t)?.energies() {
        Some(energies) => dt_gibbs_vector(energies, t)?,
        None => right_mode_derivative(decomp, &dr, 0),
    };
    let dt_eigenvalues = (0..n)
        .map(|k| eigenvalue_derivative(decomp, &dr, k))
        .collect();
    let dt_right = (0..n)
        .map(|k| right_mode_derivative(decomp, &dr, k))
        .collect();
    let dt_left = (0..n)
        .map(|k| left_mode_derivative(decomp, &dr, k))
        .collect();
    Ok(ModalDerivatives {
        dt_generator: dr,
        dt_stationary,
        dt_eigenvalues,
        dt_right,
        dt_left,
    })
}

/// `∂_T p(t) = ∂_T π + Σ_k [(∂_T a_k) − a_k t ∂_T λ_k] e^{−λ_k t} v_k + Σ_k a_k e^{−λ_k t} ∂_T v_k`.
pub fn dt_populations_modal(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    t: f64,
) -> Result<DVector<f64>> {
    check_amplitudes(decomp, amps)?;
    let dt_amps = amps
        .dt_amplitudes
        .as_ref()
        .ok_or(Error::NonFinite("amplitude derivatives (not computed)"))?;
    let mut out = derivs.dt_stationary.clone();
    for k in 1..decomp.dim() {
        let decay = (-decomp.eigenvalue(k) * t).exp();
        let a = amps.amplitudes[k];
        let coeff = (dt_amps[k] - a * t * derivs.dt_eigenvalues[k]) * decay;
        out.axpy(coeff, decomp.right_mode(k), 1.0);
        out.axpy(a * decay, &derivs.dt_right[k], 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_difference_dt;
    use approx::assert_relative_eq;

    const N_BAR: f64 = 0.156_517_642_749_665_6;

    fn symmetric() -> (ThermalRateModel, RateMatrix, SpectralDecomposition) {
        let model = ThermalRateModel::lambda(0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        let rm = model.rate_matrix(0.5).unwrap();
        let d = decompose(&rm).unwrap();
        (model, rm, d)
    }

    #[test]
    fn lambda_rates() {
        let (_, rm, _) = symmetric();
        assert_relative_eq!(rm.rate(2, 0), N_BAR, max_relative = 1e-14);
        assert_relative_eq!(rm.rate(2, 1), N_BAR, max_relative = 1e-14);
        assert_relative_eq!(rm.rate(0, 2), 1.0 + N_BAR, max_relative = 1e-14);
        assert_relative_eq!(rm.rate(1, 2), 1.0 + N_BAR, max_relative = 1e-14);
        assert_eq!(rm.rate(0, 1), 0.0);
        for s in rm.column_sums() {
            assert!(s.abs() < 1e-14);
        }
        let pi = rm.stationary();
        assert!((rm.rate(2, 0) * pi[0] - rm.rate(0, 2) * pi[2]).abs() < 1e-12);
        assert!(rm.detailed_balance_residual() < 1e-12);
    }

    #[test]
    fn rejects_bad_bohr_frequency() {
        assert!(build_lambda_rate_matrix(0.0, 1.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(build_lambda_rate_matrix(2.0, 0.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(build_lambda_rate_matrix(0.0, 0.0, 1.0, -1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn rejects_non_generators() {
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -1.0]);
        assert!(RateMatrix::from_generator(bad, pi.clone(), 1.0).is_err());
        let irreversible = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -2.0]);
        assert!(matches!(
            RateMatrix::from_generator(irreversible, pi, 1.0),
            Err(Error::NotReversible { .. })
        ));
    }

    #[test]
    fn gibbs_values() {
        let pi = gibbs_vector(&[0.0, 0.0, 1.0], 0.5).unwrap();
        assert_relative_eq!(pi[0], 0.468_310_530_833_481_2, max_relative = 1e-12);
        assert_relative_eq!(pi[2], 0.063_378_938_333_037_6, max_relative = 1e-12);
        let uniform = gibbs_vector(&[0.3, 0.3, 0.3], 0.5).unwrap();
        assert!(uniform.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let hot = gibbs_vector(&[0.0, 0.5, 1.0], 1e12).unwrap();
        assert!(hot.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn gibbs_is_stationary_solution() {
        let (_, rm, _) = symmetric();
        let residual = rm.entries() * rm.stationary();
        assert!(residual.amax() < 1e-12);
    }

    #[test]
    fn dt_gibbs_vector_values() {
        let d = dt_gibbs_vector(&[0.0, 0.0, 1.0], 0.5).unwrap();
        assert!(d.sum().abs() < 1e-15);
        assert_eq!(d[0], d[1]);
        assert_relative_eq!(d[2], 0.237_448_2, max_relative = 1e-6);
        let h = 1e-6;
        let fd = (gibbs_vector(&[0.0, 0.0, 1.0], 0.5 + h).unwrap()
            - gibbs_vector(&[0.0, 0.0, 1.0], 0.5 - h).unwrap())
            / (2.0 * h);
        assert!((&fd - &d).norm() / d.norm() < 1e-6);
    }

    #[test]
    fn symmetric_spectrum() {
        let (_, _, d) = symmetric();
        assert_eq!(d.eigenvalue(0), 0.0);
        assert_relative_eq!(d.eigenvalue(1), N_BAR, max_relative = 1e-12);
        // κ (3 n̄ + 2)
        assert_relative_eq!(d.eigenvalue(2), 2.469_552_928_248_997, max_relative = 1e-12);
        let s2 = std::f64::consts::FRAC_1_SQRT_2;
        let s6 = 1.0 / 6f64.sqrt();
        let v1 = d.right_mode(1);
        let v2 = d.right_mode(2);
        assert!((v1 - DVector::from_vec(vec![s2, -s2, 0.0])).amax() < 1e-12);
        assert!((v2 - DVector::from_vec(vec![s6, s6, -2.0 * s6])).amax() < 1e-12);
    }

    #[test]
    fn decomposition_invariants() {
        let (_, rm, d) = symmetric();
        assert!(d.biorthonormality_residual() < 1e-10);
        for k in 0..3 {
            let lhs = rm.entries() * d.right_mode(k);
            let rhs = -d.eigenvalue(k) * d.right_mode(k);
            assert!((lhs - rhs).amax() < 1e-10);
        }
        assert!((d.reconstruct() - rm.entries()).amax() < 1e-9);
    }

    #[test]
    fn two_level_rate_matrix_eigenvalue() {
        let rm = ThermalRateModel::two_level(1.0, 1.0)
            .unwrap()
            .rate_matrix(0.5)
            .unwrap();
        let d = decompose(&rm).unwrap();
        assert_relative_eq!(d.eigenvalue(1), 1.313_035_285_499_331, max_relative = 1e-12);
        let trace = rm.entries().trace();
        assert_relative_eq!(-trace, d.eigenvalue(1), max_relative = 1e-12);
    }

    #[test]
    fn degenerate_spectrum_rejected() {
        // Three uncoupled-but-symmetric ground levels give a repeated rate.
        let model = ThermalRateModel::new(
            vec![0.0, 0.0, 0.0, 1.0],
            (0..3)
                .map(|lower| Transition {
                    lower,
                    upper: 3,
                    coupling: 1.0,
                })
                .collect(),
        )
        .unwrap();
        let rm = model.rate_matrix(0.5).unwrap();
        assert!(matches!(
            decompose(&rm),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn disconnected_model_rejected() {
        let err = ThermalRateModel::new(
            vec![0.0, 0.5, 1.0],
            vec![Transition {
                lower: 0,
                upper: 2,
                coupling: 1.0,
            }],
        );
        assert!(err.is_err());
    }

    /// Mode products `a_k v_k` are gauge invariant; compare with the
    /// unnormalized modes `(1, −1, 0)` and `(1, 1, −2)`.
    fn gauge_free(d: &SpectralDecomposition, p0: &[f64]) -> (f64, f64) {
        let a = project_initial(d, p0).unwrap();
        let a1 = a.amplitudes[1] * d.right_mode(1)[0];
        let a2 = a.amplitudes[2] * d.right_mode(2)[0];
        (a1, a2)
    }

    #[test]
    fn projection_examples() {
        let (_, _, d) = symmetric();
        let (a2, a3) = gauge_free(&d, &[0.2, 0.2, 0.6]);
        assert!(a2.abs() < 1e-12);
        assert_relative_eq!(a3, -0.268_310_530_833_481_2, max_relative = 1e-10);

        let (a2, a3) = gauge_free(&d, &[0.6, 0.3, 0.1]);
        assert_relative_eq!(a2, 0.15, max_relative = 1e-10);
        assert_relative_eq!(a3, -0.018_310_530_833_481_2, max_relative = 1e-9);

        let pi: Vec<f64> = d.stationary().iter().copied().collect();
        let a = project_initial(&d, &pi).unwrap();
        assert!(a.amplitudes.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn projection_reconstructs() {
        let (_, _, d) = symmetric();
        let p0 = [0.6, 0.3, 0.1];
        let a = project_initial(&d, &p0).unwrap();
        let p = evolve_modal(&d, &a, 0.0).unwrap();
        for (x, y) in p.populations.iter().zip(p0) {
            assert!((x - y).abs() < 1e-10);
        }
        let late = evolve_modal(&d, &a, 500.0).unwrap();
        for (x, y) in late.populations.iter().zip(d.stationary().iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_rejects_bad_input() {
        let (_, _, d) = symmetric();
        assert!(project_initial(&d, &[0.5, 0.5]).is_err());
        assert!(project_initial(&d, &[0.5, 0.6, 0.1]).is_err());
        assert!(project_initial(&d, &[1.2, -0.2, 0.0]).is_err());
    }

    #[test]
    fn population_vector_clamps_round_off() {
        let p = PopulationVector::new(vec![1.0 + 5e-13, -5e-13, 0.0], 0.0).unwrap();
        assert!(p.clamped);
        assert_eq!(p.populations[1], 0.0);
        assert!(PopulationVector::new(vec![1.1, -0.1], 0.0).is_err());
    }

    #[test]
    fn symmetric_eigenvalue_derivatives() {
        let (model, _, d) = symmetric();
        let h = default_step(0.5);
        // κ ∂_T n̄ = κ ω n̄ (n̄ + 1) / T²
        let dn = N_BAR * (N_BAR + 1.0) / 0.25;
        assert_relative_eq!(
            dt_eigenvalue(&model, &d, 1, h).unwrap(),
            dn,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            dt_eigenvalue(&model, &d, 2, h).unwrap(),
            3.0 * dn,
            max_relative = 1e-8
        );
        assert_relative_eq!(dn, 0.724_061_660_96, max_relative = 1e-9);
    }

    #[test]
    fn temperature_independent_family_has_zero_derivatives() {
        let (_, frozen, _) = symmetric();
        let family = move |t: f64| {
            RateMatrix::from_generator(frozen.entries().clone(), frozen.stationary().clone(), t)
        };
        let d = decompose(&family(0.5).unwrap()).unwrap();
        assert_eq!(dt_eigenvalue(&family, &d, 1, 1e-5).unwrap(), 0.0);
        assert_eq!(dt_eigenvector(&family, &d, 2, 1e-5).unwrap().amax(), 0.0);
        let derivs = modal_derivatives(&family, &d, 1e-5).unwrap();
        assert_eq!(derivs.dt_stationary.amax(), 0.0);
    }

    #[test]
    fn eigenvector_derivative_gauge() {
        let model = ThermalRateModel::lambda(0.0, 0.2, 1.0, 0.7, 1.3).unwrap();
        let d = decompose(&model.rate_matrix(0.6).unwrap()).unwrap();
        let dr = dt_generator(&model, 0.6, default_step(0.6)).unwrap();
        let at = |x: f64| decompose(&model.rate_matrix(x).unwrap()).unwrap();
        for k in 1..3 {
            let dv = dt_eigenvector(&model, &d, k, default_step(0.6)).unwrap();
            let dw = left_mode_derivative(&d, &dr, k);
            assert!(d.right_mode(k).dot(&dv).abs() < 1e-12);
            assert!((d.left_mode(k).dot(&dv) + dw.dot(d.right_mode(k))).abs() < 1e-12);
            let fd_v =
                finite_difference_dt(|x| Ok(at(x).right_mode(k).clone()), 0.6, 1e-4).unwrap();
            let fd_w = finite_difference_dt(|x| Ok(at(x).left_mode(k).clone()), 0.6, 1e-4).unwrap();
            assert!((&dv - &fd_v.value).norm() < 1e-7 * fd_v.value.norm().max(1.0));
            assert!((&dw - &fd_w.value).norm() < 1e-7 * fd_w.value.norm().max(1.0));
        }
    }

    #[test]
    fn perturbative_stationary_derivative_matches_gibbs() {
        let model = ThermalRateModel::lambda(0.0, 0.2, 1.0, 0.7, 1.3).unwrap();
        let d = decompose(&model.rate_matrix(0.6).unwrap()).unwrap();
        let dr = dt_generator(&model, 0.6, default_step(0.6)).unwrap();
        let perturbative = right_mode_derivative(&d, &dr, 0);
        let closed = dt_gibbs_vector(model.energies(), 0.6).unwrap();
        assert!((&perturbative - &closed).norm() / closed.norm() < 1e-8);
    }

    #[test]
    fn symmetric_level_three_derivative_identity() {
        let (model, _, d) = symmetric();
        let derivs = modal_derivatives(&model, &d, default_step(0.5)).unwrap();
        let amps = project_initial_with_derivatives(&d, &derivs, &[0.2, 0.2, 0.6]).unwrap();
        let dpi3 = derivs.dt_stationary[2];
        // a₃ in the (1, 1, −2) normalization
        let a3 = amps.amplitudes[2] * d.right_mode(2)[0];
        let l3 = d.eigenvalue(2);
        let dl3 = derivs.dt_eigenvalues[2];
        for &t in &[0.0, 0.3, 1.0, 2.5] {
            let general = dt_populations_modal(&d, &amps, &derivs, t).unwrap();
            let reduced = dpi3 * (1.0 - (-l3 * t).exp()) + 2.0 * a3 * t * (-l3 * t).exp() * dl3;
            assert!((general[2] - reduced).abs() < 1e-10);
            assert!(general.sum().abs() < 1e-10);
        }
    }

    #[test]
    fn tracking_identity() {
        let (_, _, d) = symmetric();
        let map = track_modes(&d, &d).unwrap();
        for (k, (j, sign)) in map.into_iter().enumerate() {
            assert_eq!(k, j);
            assert_eq!(sign, 1.0);
        }
    }
}
