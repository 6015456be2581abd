//! Distances from equilibrium, Mpemba inversion detection, crossover-time bounds and
//! the Fisher-information ordering along inverted trajectory pairs.

use crate::error::{ensure_positive, Error, Result};
use crate::fisher::{fisher_modal, fisher_stationary, qfi_equilibrium, qfi_qubit_closed_form};
use crate::qubit::{effective_rate, evolve_population, gibbs_population_qubit, QubitBathParams};
use crate::spectral::{
    modal_populations, project_initial, project_initial_with_derivatives, ModalAmplitudes,
    ModalDerivatives, SpectralDecomposition,
};

/// Width of the bisection bracket that refines a grid crossing.
pub const BISECTION_TOLERANCE: f64 = 1e-9;
/// Default grid resolution over `[0, 10/λ_slow]`.
pub const DEFAULT_GRID_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Euclidean,
    TotalVariation,
    /// `|p_excited − p_eq|`; two-level populations only.
    ScalarAbs,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Euclidean => "euclidean",
            NormKind::TotalVariation => "total_variation",
            NormKind::ScalarAbs => "scalar_abs",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "euclidean" => Some(NormKind::Euclidean),
            "total_variation" => Some(NormKind::TotalVariation),
            "scalar_abs" => Some(NormKind::ScalarAbs),
            _ => None,
        }
    }

    /// Scalar distance for two-level probes, Euclidean otherwise.
    pub fn default_for(dim: usize) -> Self {
        if dim == 2 {
            NormKind::ScalarAbs
        } else {
            NormKind::Euclidean
        }
    }
}

pub fn thermal_distance(p: &[f64], pi: &[f64], norm: NormKind) -> Result<f64> {
    if p.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            expected: pi.len(),
            actual: p.len(),
        });
    }
    let diffs = p.iter().zip(pi).map(|(a, b)| a - b);
    Ok(match norm {
        NormKind::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        NormKind::TotalVariation => 0.5 * diffs.map(f64::abs).sum::<f64>(),
        NormKind::ScalarAbs => {
            if p.len() != 2 {
                return Err(Error::UnsupportedNorm("scalar_abs"));
            }
            (p[1] - pi[1]).abs()
        }
    })
}

/// A relaxation trajectory evaluable at arbitrary times.
pub trait Trajectory {
    fn populations(&self, t: f64) -> Result<Vec<f64>>;
    fn stationary(&self) -> Vec<f64>;
    /// Slowest decay rate present in the trajectory.
    fn slowest_rate(&self) -> f64;
}

/// A trajectory that also knows its temperature Fisher information.
pub trait FisherTrajectory: Trajectory {
    fn fisher(&self, t: f64) -> Result<f64>;
    fn equilibrium_fisher(&self) -> Result<f64>;
}

/// Two-level trajectory `(1 − p(t), p(t))` with the state-dependent rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitTrajectory {
    pub params: QubitBathParams,
    pub p0: f64,
}

impl QubitTrajectory {
    pub fn new(params: QubitBathParams, p0: f64) -> Result<Self> {
        effective_rate(&params, p0)?;
        Ok(Self { params, p0 })
    }
}

impl Trajectory for QubitTrajectory {
    fn populations(&self, t: f64) -> Result<Vec<f64>> {
        let p = evolve_population(&self.params, self.p0, t)?;
        Ok(vec![1.0 - p, p])
    }

    fn stationary(&self) -> Vec<f64> {
        let p = gibbs_population_qubit(self.params.omega0, self.params.temperature)
            .expect("parameters validated on construction");
        vec![1.0 - p, p]
    }

    fn slowest_rate(&self) -> f64 {
        effective_rate(&self.params, self.p0).expect("validated on construction")
    }
}

impl FisherTrajectory for QubitTrajectory {
    fn fisher(&self, t: f64) -> Result<f64> {
        qfi_qubit_closed_form(&self.params, self.p0, t)
    }

    fn equilibrium_fisher(&self) -> Result<f64> {
        qfi_equilibrium(self.params.omega0, self.params.temperature)
    }
}

/// Multi-level trajectory from a spectral decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalTrajectory<'a> {
    decomp: &'a SpectralDecomposition,
    derivs: Option<&'a ModalDerivatives>,
    amps: ModalAmplitudes,
}

impl<'a> ModalTrajectory<'a> {
    pub fn new(decomp: &'a SpectralDecomposition, p0: &[f64]) -> Result<Self> {
        Ok(Self {
            decomp,
            derivs: None,
            amps: project_initial(decomp, p0)?,
        })
    }

    pub fn with_derivatives(
        decomp: &'a SpectralDecomposition,
        derivs: &'a ModalDerivatives,
        p0: &[f64],
    ) -> Result<Self> {
        Ok(Self {
            decomp,
            derivs: Some(derivs),
            amps: project_initial_with_derivatives(decomp, derivs, p0)?,
        })
    }

    pub fn amplitudes(&self) -> &ModalAmplitudes {
        &self.amps
    }

    fn derivs(&self) -> Result<&'a ModalDerivatives> {
        self.derivs.ok_or(Error::NonFinite(
            "modal derivatives (trajectory built without them)",
        ))
    }
}

impl Trajectory for ModalTrajectory<'_> {
    fn populations(&self, t: f64) -> Result<Vec<f64>> {
        Ok(modal_populations(self.decomp, &self.amps, t)?
            .iter()
            .copied()
            .collect())
    }

    fn stationary(&self) -> Vec<f64> {
        self.decomp.stationary().iter().copied().collect()
    }

    fn slowest_rate(&self) -> f64 {
        self.decomp.slowest_rate()
    }
}

impl FisherTrajectory for ModalTrajectory<'_> {
    fn fisher(&self, t: f64) -> Result<f64> {
        fisher_modal(self.decomp, &self.amps, self.derivs()?, t)
    }

    fn equilibrium_fisher(&self) -> Result<f64> {
        fisher_stationary(self.decomp, self.derivs()?)
    }
}

/// Uniform grid of `points` times on `[0, 10/rate]`.
pub fn default_grid(slowest_rate: f64, points: usize) -> Result<Vec<f64>> {
    ensure_positive("slowest_rate", slowest_rate)?;
    uniform_grid(10.0 / slowest_rate, points)
}

pub fn uniform_grid(t_max: f64, points: usize) -> Result<Vec<f64>> {
    ensure_positive("t_max", t_max)?;
    if points < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: points,
        });
    }
    let step = t_max / (points - 1) as f64;
    Ok((0..points).map(|i| i as f64 * step).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: grid.len(),
        });
    }
    if grid.iter().any(|t| !t.is_finite() || *t < 0.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::UnsortedGrid);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionRecord {
    /// First time with `D_hot < D_cold − δ`, refined by bisection.
    pub t_star: Option<f64>,
    pub delta_tol: f64,
    pub norm_kind: NormKind,
    /// True if the inversion holds at every grid time after `t_star`.
    pub persistent: bool,
}

impl InversionRecord {
    pub fn detected(&self) -> bool {
        self.t_star.is_some()
    }
}

/// Scans the grid for the first time the hot trajectory is closer to equilibrium than
/// the cold one by more than `delta_tol`, then bisects the bracketing interval.
pub fn detect_inversion<H, C>(
    hot: &H,
    cold: &C,
    pi: &[f64],
    delta_tol: f64,
    norm: NormKind,
    grid: &[f64],
) -> Result<InversionRecord>
where
    H: Trajectory + ?Sized,
    C: Trajectory + ?Sized,
{
    check_grid(grid)?;
    if !(delta_tol >= 0.0) || !delta_tol.is_finite() {
        return Err(Error::Domain {
            name: "delta_tol",
            value: delta_tol,
            reason: "must be finite and >= 0",
        });
    }
    let distances = |t: f64| -> Result<(f64, f64)> {
        Ok((
            thermal_distance(&hot.populations(t)?, pi, norm)?,
            thermal_distance(&cold.populations(t)?, pi, norm)?,
        ))
    };
    let margin = |t: f64| -> Result<f64> {
        let (d_hot, d_cold) = distances(t)?;
        Ok(d_cold - d_hot - delta_tol)
    };

    let (d_hot, d_cold) = distances(0.0)?;
    if d_hot < d_cold {
        return Err(Error::MislabeledPreparations { d_hot, d_cold });
    }

    let margins = grid
        .iter()
        .map(|&t| margin(t))
        .collect::<Result<Vec<_>>>()?;
    let Some(first) = margins.iter().position(|&m| m > 0.0) else {
        return Ok(InversionRecord {
            t_star: None,
            delta_tol,
            norm_kind: norm,
            persistent: false,
        });
    };
    let persistent = margins[first..].iter().all(|&m| m > 0.0);

    let t_star = if first == 0 {
        grid[0]
    } else {
        let (mut lo, mut hi) = (grid[first - 1], grid[first]);
        while hi - lo > BISECTION_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if margin(mid)? > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(InversionRecord {
        t_star: Some(t_star),
        delta_tol,
        norm_kind: norm,
        persistent,
    })
}

/// Crossing time of the two exponential relaxations,
/// `ln[(p_hot − p_eq)/(p_cold − p_eq)] / (Γ_hot − Γ_cold)`.
///
/// `Ok(None)` signals that no inversion can occur (`Γ_hot ≤ Γ_cold`).
pub fn crossover_time_bound(
    params: &QubitBathParams,
    p0_hot: f64,
    p0_cold: f64,
) -> Result<Option<f64>> {
    let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
    if p0_hot == p0_cold {
        return Ok(Some(0.0));
    }
    if !(p0_hot > p0_cold && p0_cold > p_eq) {
        return Err(Error::Domain {
            name: "p0_cold",
            value: p0_cold,
            reason: "requires p0_hot > p0_cold > p_eq",
        });
    }
    let rate_hot = effective_rate(params, p0_hot)?;
    let rate_cold = effective_rate(params, p0_cold)?;
    if rate_hot <= rate_cold {
        return Ok(None);
    }
    Ok(Some(
        ((p0_hot - p_eq) / (p0_cold - p_eq)).ln() / (rate_hot - rate_cold),
    ))
}

/// `log10(F / F_ref)`.
pub fn qfi_gain(fisher: f64, reference: f64) -> Result<f64> {
    ensure_positive("reference fisher", reference)?;
    if !(fisher >= 0.0) {
        return Err(Error::Domain {
            name: "fisher",
            value: fisher,
            reason: "must be >= 0",
        });
    }
    Ok((fisher / reference).log10())
}

pub fn qfi_gain_series(fisher: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    if fisher.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: fisher.len(),
        });
    }
    fisher
        .iter()
        .zip(reference)
        .map(|(&f, &r)| qfi_gain(f, r))
        .collect()
}

/// Maximal runs of consecutive grid times where `flags` holds, as `(start, end)` pairs.
pub fn windows_where(times: &[f64], flags: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &flag) in flags.iter().enumerate() {
        match (flag, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((times[s], times[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((times[s], times[flags.len() - 1]));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyRow {
    pub t: f64,
    pub fisher_hot: f64,
    pub fisher_cold: f64,
    pub fisher_eq: f64,
}

impl HierarchyRow {
    pub fn hot_beats_cold(&self) -> bool {
        self.fisher_hot > self.fisher_cold
    }

    pub fn cold_reaches_eq(&self) -> bool {
        self.fisher_cold >= self.fisher_eq
    }

    pub fn holds(&self) -> bool {
        self.hot_beats_cold() && self.cold_reaches_eq()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HierarchyReport {
    /// No inversion was detected, so the ordering claim has nothing to say.
    NotApplicable,
    Evaluated {
        at_t_star: HierarchyRow,
        /// Rows for every grid time `t ≥ t*`.
        rows: Vec<HierarchyRow>,
        all_hold: bool,
        first_violation: Option<f64>,
        /// Grid windows (`t ≥ t*`) where the full ordering holds.
        windows: Vec<(f64, f64)>,
    },
}

/// Evaluates `F_hot(t) > F_cold(t) ≥ F_eq` at `t*` and at every grid time after it.
pub fn theorem_hierarchy_check<H, C>(
    hot: &H,
    cold: &C,
    record: &InversionRecord,
    t_grid: &[f64],
) -> Result<HierarchyReport>
where
    H: FisherTrajectory + ?Sized,
    C: FisherTrajectory + ?Sized,
{
    let Some(t_star) = record.t_star else {
        return Ok(HierarchyReport::NotApplicable);
    };
    let fisher_eq = cold.equilibrium_fisher()?;
    let row = |t: f64| -> Result<HierarchyRow> {
        Ok(HierarchyRow {
            t,
            fisher_hot: hot.fisher(t)?,
            fisher_cold: cold.fisher(t)?,
            fisher_eq,
        })
    };
    let at_t_star = row(t_star)?;
    let rows = t_grid
        .iter()
        .filter(|&&t| t >= t_star)
        .map(|&t| row(t))
        .collect::<Result<Vec<_>>>()?;
    let flags: Vec<bool> = rows.iter().map(HierarchyRow::holds).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let first_violation = std::iter::once(&at_t_star)
        .chain(&rows)
        .find(|r| !r.holds())
        .map(|r| r.t);
    Ok(HierarchyReport::Evaluated {
        at_t_star,
        all_hold: first_violation.is_none(),
        first_violation,
        windows: windows_where(&times, &flags),
        rows,
    })
}
