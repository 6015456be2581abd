//! Numerical certificates for the remainder, slow-mode and metric bounds behind the
//! Mpemba thermometric advantage, and their assembly at the inversion time.
//!
//! Mode indices are zero-based as in [`crate::spectral`]: mode 1 is the slow mode and
//! modes `2..N` are the fast modes.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fisher::fisher_from_populations;
use crate::mpemba::{
    default_grid, detect_inversion, theorem_hierarchy_check, HierarchyReport, HierarchyRow,
    InversionRecord, ModalTrajectory, NormKind, QubitTrajectory, Trajectory, DEFAULT_GRID_POINTS,
};
use crate::qubit::{dt_rate, gibbs_population_qubit, QubitBathParams};
use crate::spectral::{
    decompose, default_step, dt_populations_modal, modal_derivatives, modal_populations,
    ModalAmplitudes, ModalDerivatives, SpectralDecomposition, ThermalRateModel,
};

const SLOW: usize = 1;
/// Certificates with slack above this are counted as satisfied.
pub const SLACK_TOLERANCE: f64 = -1e-12;
/// Default distance from the simplex boundary for the metric neighbourhood.
pub const DEFAULT_MARGIN: f64 = 1e-6;
/// `|a_slow|` below this selects the strong-cancellation branch.
pub const CANCELLATION_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
}

/// One checked inequality `lhs ≤ rhs` or `lhs ≥ rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    /// Margin by which the inequality holds; negative when violated.
    pub slack: f64,
}

impl Certificate {
    pub fn at_most(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self {
            name,
            lhs,
            rhs,
            relation: Relation::AtMost,
            slack: rhs - lhs,
        }
    }

    pub fn at_least(name: &'static str, lhs: f64, rhs: f64) -> Self {
        Self {
            name,
            lhs,
            rhs,
            relation: Relation::AtLeast,
            slack: lhs - rhs,
        }
    }

    pub fn holds(&self) -> bool {
        self.slack >= SLACK_TOLERANCE
    }
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Bound constants for one preparation at one temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaConstants {
    pub dim: usize,
    /// `max_k |a_k|` over relaxation modes.
    pub a_max: f64,
    pub v_max: f64,
    /// `max_k ‖∂_T v_k‖`.
    pub v_prime_max: f64,
    /// `max_k ‖∂_T w_k‖`.
    pub w_prime_max: f64,
    /// Gap between the two slowest relaxation rates.
    pub gap_delta: f64,
    /// Smallest gap between any two relaxation rates.
    pub min_gap: f64,
    pub lambda_max: f64,
    /// `max |∂_T λ_k|` over fast modes.
    pub lambda_t: f64,
    /// `‖∂_T R‖₂`.
    pub r_t: f64,
    /// `‖W‖₂`, rows `w_kᵀ` of the relaxation modes.
    pub w_op: f64,
    /// `‖V‖₂`, columns `v_k` of the relaxation modes.
    pub v_op: f64,
    /// Bound on `max |∂_T a_k|` over fast modes.
    pub c1: f64,
    /// `(Σ_{j≠slow} ‖w_j‖²)^{1/2}`, including the stationary mode.
    pub w_norm: f64,
    pub d2: f64,
    pub e2: f64,
    /// `‖p₀ − π‖`.
    pub displacement: f64,
    /// `‖∂_T π‖`.
    pub dpi_norm: f64,
    pub m_low: Option<f64>,
    pub m_high: Option<f64>,
}

impl LemmaConstants {
    pub fn compute(
        decomp: &SpectralDecomposition,
        amps: &ModalAmplitudes,
        derivs: &ModalDerivatives,
    ) -> Result<Self> {
        let n = decomp.dim();
        if n < 3 {
            return Err(Error::TooFewPoints {
                required: 3,
                actual: n,
            });
        }
        let relax = SLOW..n;
        let fast = SLOW + 1..n;
        let lam = decomp.eigenvalues();
        let a_max = relax
            .clone()
            .map(|k| amps.amplitudes[k].abs())
            .fold(0.0, f64::max);
        let v_max = relax
            .clone()
            .map(|k| decomp.right_mode(k).norm())
            .fold(0.0, f64::max);
        let v_prime_max = relax
            .clone()
            .map(|k| derivs.dt_right[k].norm())
            .fold(0.0, f64::max);
        let w_prime_max = relax
            .clone()
            .map(|k| derivs.dt_left[k].norm())
            .fold(0.0, f64::max);
        let lambda_t = fast
            .clone()
            .map(|k| derivs.dt_eigenvalues[k].abs())
            .fold(0.0, f64::max);
        let w_op = operator_norm(&decomp.relaxation_left_matrix());
        let v_op = operator_norm(&decomp.relaxation_right_matrix());
        let r_t = operator_norm(&derivs.dt_generator);

        let displacement_vec = relax.clone().fold(DVector::zeros(n), |acc, k| {
            acc + amps.amplitudes[k] * decomp.right_mode(k)
        });
        let displacement = displacement_vec.norm();
        let dpi_norm = derivs.dt_stationary.norm();
        let c1 = (v_prime_max + w_prime_max) * displacement + w_op * dpi_norm;

        let others = (0..n).filter(|&j| j != SLOW);
        let mut w_sq = 0.0;
        let mut d_sq = 0.0;
        let mut e_sq = 0.0;
        for j in others {
            let gap_sq = (lam[SLOW] - lam[j]).powi(2);
            let wj = decomp.left_mode(j).norm_squared();
            w_sq += wj;
            d_sq += wj / gap_sq;
            e_sq += decomp.right_mode(j).norm_squared() / gap_sq;
        }
        let out = Self {
            dim: n,
            a_max,
            v_max,
            v_prime_max,
            w_prime_max,
            gap_delta: lam[SLOW + 1] - lam[SLOW],
            min_gap: decomp.min_relaxation_gap(),
            lambda_max: lam[n - 1],
            lambda_t,
            r_t,
            w_op,
            v_op,
            c1,
            w_norm: w_sq.sqrt(),
            d2: d_sq.sqrt(),
            e2: e_sq.sqrt(),
            displacement,
            dpi_norm,
            m_low: None,
            m_high: None,
        };
        out.check_finite()?;
        Ok(out)
    }

    fn check_finite(&self) -> Result<()> {
        let all = [
            self.a_max,
            self.v_max,
            self.v_prime_max,
            self.w_prime_max,
            self.gap_delta,
            self.min_gap,
            self.lambda_max,
            self.lambda_t,
            self.r_t,
            self.w_op,
            self.v_op,
            self.c1,
            self.w_norm,
            self.d2,
            self.e2,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("lemma constants"));
        }
        Ok(())
    }

    pub fn with_metric_bounds(mut self, bounds: MetricBounds) -> Self {
        self.m_low = Some(bounds.m);
        self.m_high = Some(bounds.big_m);
        self
    }

    fn fast_modes(&self) -> f64 {
        (self.dim - 2) as f64
    }

    /// Coefficient of `e^{−λ_fast t}` in the remainder bound (grows linearly in `t`).
    pub fn c_r1(&self, t: f64) -> f64 {
        self.v_max * self.fast_modes() * self.c1
            + self.v_max * t * self.lambda_t * self.fast_modes() * self.a_max
    }

    /// Coefficient of `e^{−λ_slow t}` in the remainder bound.
    pub fn c_r2(&self) -> f64 {
        (self.dim - 1) as f64 * self.a_max * self.v_prime_max
    }

    /// Combined constant `max(C_R1, C_R2 / A_max)`.
    pub fn c_r(&self, t: f64) -> f64 {
        if self.a_max > 0.0 {
            self.c_r1(t).max(self.c_r2() / self.a_max)
        } else {
            self.c_r1(t)
        }
    }

    /// `Λ_T ≤ R_T ‖W‖ ‖V‖` and `V′_max ≤ R_T ‖W‖ ‖V‖ / gap`.
    pub fn norm_chain(&self) -> [Certificate; 2] {
        let base = self.r_t * self.w_op * self.v_op;
        [
            Certificate::at_most("eigenvalue_derivative_chain", self.lambda_t, base),
            Certificate::at_most(
                "eigenvector_derivative_chain",
                self.v_prime_max,
                base / self.min_gap,
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Certificate {
    pub fast_sum: Certificate,
    pub remainder: Certificate,
    /// `R(t) = R₁ − R₂ + R₃`, the part of `∂_T p(t)` outside `∂_T π + S(t) v_slow`.
    pub remainder_vector: DVector<f64>,
}

impl Lemma1Certificate {
    pub fn certificates(&self) -> [Certificate; 2] {
        [self.fast_sum, self.remainder]
    }
}

fn dt_amplitudes(amps: &ModalAmplitudes) -> Result<&[f64]> {
    amps.dt_amplitudes
        .as_deref()
        .ok_or(Error::NonFinite("amplitude derivatives (not computed)"))
}

/// Remainder of `∂_T p(t)` after removing the stationary and slow-mode pieces.
pub fn remainder_vector(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    t: f64,
) -> Result<DVector<f64>> {
    let dt_a = dt_amplitudes(amps)?;
    let n = decomp.dim();
    let mut r = DVector::zeros(n);
    for k in SLOW + 1..n {
        let decay = (-decomp.eigenvalue(k) * t).exp();
        let coeff = (dt_a[k] - amps.amplitudes[k] * t * derivs.dt_eigenvalues[k]) * decay;
        r.axpy(coeff, decomp.right_mode(k), 1.0);
    }
    for k in SLOW..n {
        let decay = (-decomp.eigenvalue(k) * t).exp();
        r.axpy(amps.amplitudes[k] * decay, &derivs.dt_right[k], 1.0);
    }
    Ok(r)
}

pub fn lemma1_remainder_check(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    t: f64,
) -> Result<(Lemma1Certificate, LemmaConstants)> {
    let c = LemmaConstants::compute(decomp, amps, derivs)?;
    let n = decomp.dim();
    let lam_slow = decomp.eigenvalue(SLOW);
    let lam_fast = decomp.eigenvalue(SLOW + 1);

    let fast_sum = (SLOW + 1..n).fold(DVector::zeros(n), |acc, k| {
        acc + amps.amplitudes[k] * (-decomp.eigenvalue(k) * t).exp() * decomp.right_mode(k)
    });
    let fast_bound = c.a_max * c.v_max * c.fast_modes() * (-lam_fast * t).exp();

    let r = remainder_vector(decomp, amps, derivs, t)?;
    let r_bound = c.c_r1(t) * (-lam_fast * t).exp() + c.c_r2() * (-lam_slow * t).exp();
    if !fast_bound.is_finite() || !r_bound.is_finite() {
        return Err(Error::NonFinite("lemma 1 bound"));
    }
    Ok((
        Lemma1Certificate {
            fast_sum: Certificate::at_most("fast_mode_sum", fast_sum.norm(), fast_bound),
            remainder: Certificate::at_most("remainder", r.norm(), r_bound),
            remainder_vector: r,
        },
        c,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowModeSensitivity {
    pub t: f64,
    pub s_of_t: f64,
    pub b_of_t: f64,
    pub a2: f64,
    pub dt_a2: f64,
    pub dt_lambda2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma2Certificate {
    /// `|S(t)| ≥ t |a| |∂λ| e^{−λt} − B(t)`.
    pub lower_bound: Certificate,
    /// `|S(t)| ≤ (|∂a| + t |a| |∂λ|) e^{−λt}`.
    pub upper_companion: Certificate,
    /// `|∂_T a| ≤ 2 R_T ‖w‖ E₂ W_norm ‖p₀ − π‖ + ‖w‖ ‖∂_T π‖`. The factor 2 covers the
    /// rescaling of `w` that keeps the right mode at unit norm.
    pub amplitude_derivative: Certificate,
    /// Same bound with `W_norm` dropped; informative only, not guaranteed.
    pub amplitude_derivative_compact: Certificate,
}

impl Lemma2Certificate {
    pub fn certificates(&self) -> [Certificate; 3] {
        [
            self.lower_bound,
            self.upper_companion,
            self.amplitude_derivative,
        ]
    }
}

pub fn lemma2_slow_mode(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    t: f64,
) -> Result<(SlowModeSensitivity, Lemma2Certificate)> {
    let c = LemmaConstants::compute(decomp, amps, derivs)?;
    let a = amps.amplitudes[SLOW];
    let da = dt_amplitudes(amps)?[SLOW];
    let dl = derivs.dt_eigenvalues[SLOW];
    let decay = (-decomp.eigenvalue(SLOW) * t).exp();
    let s = (da - a * t * dl) * decay;
    let b = (da.abs() + a.abs() * dl.abs()) * decay;
    let w_slow = decomp.left_mode(SLOW).norm();
    let drift = w_slow * c.dpi_norm;
    let rhs = 2.0 * c.r_t * w_slow * c.e2 * c.w_norm * c.displacement + drift;
    let compact = c.r_t * w_slow * c.e2 * c.displacement + drift;
    let sens = SlowModeSensitivity {
        t,
        s_of_t: s,
        b_of_t: b,
        a2: a,
        dt_a2: da,
        dt_lambda2: dl,
    };
    let cert = Lemma2Certificate {
        lower_bound: Certificate::at_least(
            "slow_mode_lower",
            s.abs(),
            t * a.abs() * dl.abs() * decay - b,
        ),
        upper_companion: Certificate::at_most(
            "slow_mode_upper",
            s.abs(),
            (da.abs() + t * a.abs() * dl.abs()) * decay,
        ),
        amplitude_derivative: Certificate::at_most("slow_amplitude_derivative", da.abs(), rhs),
        amplitude_derivative_compact: Certificate::at_most(
            "slow_amplitude_derivative_compact",
            da.abs(),
            compact,
        ),
    };
    Ok((sens, cert))
}

/// Extremes `m ≤ M` of `diag(1/p_i)` over a neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricBounds {
    pub m: f64,
    pub big_m: f64,
}

impl MetricBounds {
    /// `m ‖x‖² ≤ Σ x_i²/p_i ≤ M ‖x‖²` at one point.
    pub fn check(&self, p: &[f64], x: &[f64]) -> [Certificate; 2] {
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        let form: f64 = x.iter().zip(p).map(|(v, q)| v * v / q).sum();
        [
            Certificate::at_least("metric_lower", form, self.m * norm_sq),
            Certificate::at_most("metric_upper", form, self.big_m * norm_sq),
        ]
    }
}

/// Bounds over the convex hull of `points`. Both extremes are attained at vertices,
/// so only the points themselves are scanned.
pub fn lemma3_metric_bounds<P: AsRef<[f64]>>(points: &[P], margin: f64) -> Result<MetricBounds> {
    if points.is_empty() {
        return Err(Error::TooFewPoints {
            required: 1,
            actual: 0,
        });
    }
    let mut largest = 0.0_f64;
    let mut smallest = f64::INFINITY;
    for p in points {
        for &q in p.as_ref() {
            if !(q > margin) {
                return Err(Error::BoundaryProximity {
                    population: q,
                    margin,
                });
            }
            largest = largest.max(q);
            smallest = smallest.min(q);
        }
    }
    Ok(MetricBounds {
        m: 1.0 / largest,
        big_m: 1.0 / smallest,
    })
}

/// `m (‖ΔS v‖² − 2 ‖ΔS v‖ ‖ΔR‖ − ‖ΔR‖²)`.
pub fn lemma3_fi_gap_bound(
    s_hot: f64,
    s_cold: f64,
    r_hot: &DVector<f64>,
    r_cold: &DVector<f64>,
    slow_mode: &DVector<f64>,
    m: f64,
) -> f64 {
    let x = ((s_hot - s_cold) * slow_mode).norm();
    let y = (r_hot - r_cold).norm();
    m * (x * x - 2.0 * x * y - y * y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hypothesis {
    /// The hot preparation has no slow-mode weight.
    StrongCancellation,
    /// `κ₀ = |∂_T λ_slow|_hot − |∂_T λ_slow|_cold` of the two effective generators.
    MonotoneVariation { kappa0: f64 },
}

impl Hypothesis {
    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::StrongCancellation => "strong_cancellation",
            Hypothesis::MonotoneVariation { .. } => "monotone_variation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparationLemmas {
    pub constants: LemmaConstants,
    pub lemma1: Lemma1Certificate,
    pub sensitivity: SlowModeSensitivity,
    pub lemma2: Lemma2Certificate,
    pub metric: [Certificate; 2],
    pub chain: [Certificate; 2],
}

impl PreparationLemmas {
    pub fn certificates(&self) -> Vec<Certificate> {
        let mut out = Vec::with_capacity(9);
        out.extend(self.lemma1.certificates());
        out.extend(self.lemma2.certificates());
        out.extend(self.metric);
        out.extend(self.chain);
        out
    }
}

/// Evaluates every lemma for one preparation at time `t` with metric bounds `metric`.
pub fn preparation_lemmas(
    decomp: &SpectralDecomposition,
    amps: &ModalAmplitudes,
    derivs: &ModalDerivatives,
    metric: &MetricBounds,
    t: f64,
) -> Result<PreparationLemmas> {
    let (lemma1, constants) = lemma1_remainder_check(decomp, amps, derivs, t)?;
    let (sensitivity, lemma2) = lemma2_slow_mode(decomp, amps, derivs, t)?;
    let p = modal_populations(decomp, amps, t)?;
    let dp = dt_populations_modal(decomp, amps, derivs, t)?;
    let chain = constants.norm_chain();
    Ok(PreparationLemmas {
        constants: constants.with_metric_bounds(*metric),
        lemma1,
        sensitivity,
        lemma2,
        metric: metric.check(p.as_slice(), dp.as_slice()),
        chain,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalLemmas {
    pub hot: PreparationLemmas,
    pub cold: PreparationLemmas,
    pub metric: MetricBounds,
    pub fi_gap_bound: f64,
    pub fi_gap: f64,
}

impl ModalLemmas {
    /// The gap bound, when positive, must not exceed the actual gap.
    pub fn gap_certificate(&self) -> Certificate {
        if self.fi_gap_bound > 0.0 {
            Certificate::at_most("fi_gap_bound", self.fi_gap_bound, self.fi_gap)
        } else {
            Certificate::at_most(
                "fi_gap_bound",
                self.fi_gap_bound,
                self.fi_gap_bound.max(self.fi_gap),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TheoremInstance {
    Qubit {
        params: QubitBathParams,
        p0_hot: f64,
        p0_cold: f64,
    },
    Modal {
        model: ThermalRateModel,
        temperature: f64,
        p_hot: Vec<f64>,
        p_cold: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCertificate {
    pub model: &'static str,
    pub inversion: InversionRecord,
    pub hypothesis: Option<Hypothesis>,
    /// Fisher information ordering at the inversion time.
    pub ordering: Option<HierarchyRow>,
    /// Grid windows after the inversion where `F_hot > F_cold ≥ F_eq`.
    pub hierarchy_windows: Vec<(f64, f64)>,
    pub lemmas: Option<ModalLemmas>,
}

impl TheoremCertificate {
    pub fn applicable(&self) -> bool {
        self.inversion.detected()
    }

    /// Every checked inequality in evaluation order.
    pub fn certificates(&self) -> Vec<Certificate> {
        let mut out = Vec::new();
        if let Some(l) = &self.lemmas {
            out.extend(l.hot.certificates());
            out.extend(l.cold.certificates());
            out.push(l.gap_certificate());
        }
        out
    }

    /// Name of the first failed check, lemmas first, then the Fisher ordering.
    pub fn first_violation(&self) -> Option<String> {
        if let Some(l) = &self.lemmas {
            for (tag, prep) in [("hot", &l.hot), ("cold", &l.cold)] {
                if let Some(c) = prep.certificates().iter().find(|c| !c.holds()) {
                    return Some(format!("{}.{}", tag, c.name));
                }
            }
            if !l.gap_certificate().holds() {
                return Some("fi_gap_bound".into());
            }
        }
        let row = self.ordering?;
        if !row.hot_beats_cold() {
            Some("ordering.hot_beats_cold".into())
        } else if !row.cold_reaches_eq() {
            Some("ordering.cold_reaches_eq".into())
        } else {
            None
        }
    }

    /// Flat `key = value` records.
    pub fn records(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("model", self.model.to_string());
        put("applicable", self.applicable().to_string());
        put("norm", self.inversion.norm_kind.as_str().to_string());
        put("delta_tol", num(self.inversion.delta_tol));
        match self.inversion.t_star {
            Some(t) => {
                put("t_star", num(t));
                put(
                    "inversion_persistent",
                    self.inversion.persistent.to_string(),
                );
            }
            None => put("t_star", "none".to_string()),
        }
        if let Some(h) = &self.hypothesis {
            put("hypothesis", h.label().to_string());
            if let Hypothesis::MonotoneVariation { kappa0 } = h {
                put("kappa0", num(*kappa0));
            }
        }
        if let Some(row) = &self.ordering {
            put("fisher_hot", num(row.fisher_hot));
            put("fisher_cold", num(row.fisher_cold));
            put("fisher_eq", num(row.fisher_eq));
            put("ordering.hot_beats_cold", row.hot_beats_cold().to_string());
            put(
                "ordering.cold_reaches_eq",
                row.cold_reaches_eq().to_string(),
            );
        }
        if self.applicable() {
            let windows = if self.hierarchy_windows.is_empty() {
                "none".to_string()
            } else {
                self.hierarchy_windows
                    .iter()
                    .map(|(a, b)| format!("[{}, {}]", num(*a), num(*b)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            put("hierarchy_windows", windows);
        }
        if let Some(l) = &self.lemmas {
            put("metric.m", num(l.metric.m));
            put("metric.M", num(l.metric.big_m));
            put("fi_gap_bound", num(l.fi_gap_bound));
            put("fi_gap", num(l.fi_gap));
            for (tag, prep) in [("hot", &l.hot), ("cold", &l.cold)] {
                let c = &prep.constants;
                let t = prep.sensitivity.t;
                for (name, value) in [
                    ("a_max", c.a_max),
                    ("v_max", c.v_max),
                    ("v_prime_max", c.v_prime_max),
                    ("w_prime_max", c.w_prime_max),
                    ("gap_delta", c.gap_delta),
                    ("lambda_max", c.lambda_max),
                    ("lambda_t", c.lambda_t),
                    ("r_t", c.r_t),
                    ("w_op", c.w_op),
                    ("v_op", c.v_op),
                    ("c1", c.c1),
                    ("c_r1", c.c_r1(t)),
                    ("c_r2", c.c_r2()),
                    ("c_r", c.c_r(t)),
                    ("w_norm", c.w_norm),
                    ("d2", c.d2),
                    ("e2", c.e2),
                    ("s_of_t", prep.sensitivity.s_of_t),
                    ("b_of_t", prep.sensitivity.b_of_t),
                    ("a2", prep.sensitivity.a2),
                    ("dt_a2", prep.sensitivity.dt_a2),
                    ("dt_lambda2", prep.sensitivity.dt_lambda2),
                ] {
                    put(&format!("{tag}.{name}"), num(value));
                }
                for cert in prep
                    .certificates()
                    .iter()
                    .chain(std::iter::once(&prep.lemma2.amplitude_derivative_compact))
                {
                    put(&format!("{tag}.slack.{}", cert.name), num(cert.slack));
                }
            }
        }
        put(
            "first_violation",
            self.first_violation().unwrap_or_else(|| "none".to_string()),
        );
        out
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.records() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Detects the inversion and, if present, evaluates the Fisher ordering and every
/// lemma at the inversion time. `t_grid` defaults to 2000 points on `[0, 10/λ_slow]`.
pub fn verify_theorem(
    instance: &TheoremInstance,
    t_grid: Option<&[f64]>,
) -> Result<TheoremCertificate> {
    match instance {
        TheoremInstance::Qubit {
            params,
            p0_hot,
            p0_cold,
        } => verify_qubit(params, *p0_hot, *p0_cold, t_grid),
        TheoremInstance::Modal {
            model,
            temperature,
            p_hot,
            p_cold,
        } => verify_modal(model, *temperature, p_hot, p_cold, t_grid),
    }
}

fn grid_or_default(t_grid: Option<&[f64]>, rate: f64) -> Result<Vec<f64>> {
    match t_grid {
        Some(g) => Ok(g.to_vec()),
        None => default_grid(rate, DEFAULT_GRID_POINTS),
    }
}

fn hierarchy_parts(report: HierarchyReport) -> (Option<HierarchyRow>, Vec<(f64, f64)>) {
    match report {
        HierarchyReport::NotApplicable => (None, Vec::new()),
        HierarchyReport::Evaluated {
            at_t_star, windows, ..
        } => (Some(at_t_star), windows),
    }
}

fn verify_qubit(
    params: &QubitBathParams,
    p0_hot: f64,
    p0_cold: f64,
    t_grid: Option<&[f64]>,
) -> Result<TheoremCertificate> {
    let hot = QubitTrajectory::new(*params, p0_hot)?;
    let cold = QubitTrajectory::new(*params, p0_cold)?;
    let grid = grid_or_default(t_grid, hot.slowest_rate().min(cold.slowest_rate()))?;
    let inversion = detect_inversion(
        &hot,
        &cold,
        &hot.stationary(),
        0.0,
        NormKind::ScalarAbs,
        &grid,
    )?;
    let hypothesis = if inversion.detected() {
        let p_eq = gibbs_population_qubit(params.omega0, params.temperature)?;
        Some(if (p0_hot - p_eq).abs() < CANCELLATION_THRESHOLD {
            Hypothesis::StrongCancellation
        } else {
            Hypothesis::MonotoneVariation {
                kappa0: dt_rate(params, p0_hot)?.abs() - dt_rate(params, p0_cold)?.abs(),
            }
        })
    } else {
        None
    };
    let (ordering, hierarchy_windows) =
        hierarchy_parts(theorem_hierarchy_check(&hot, &cold, &inversion, &grid)?);
    Ok(TheoremCertificate {
        model: "qubit",
        inversion,
        hypothesis,
        ordering,
        hierarchy_windows,
        lemmas: None,
    })
}

fn verify_modal(
    model: &ThermalRateModel,
    temperature: f64,
    p_hot: &[f64],
    p_cold: &[f64],
    t_grid: Option<&[f64]>,
) -> Result<TheoremCertificate> {
    let decomp = decompose(&model.rate_matrix(temperature)?)?;
    let derivs = modal_derivatives(model, &decomp, default_step(temperature))?;
    let hot = ModalTrajectory::with_derivatives(&decomp, &derivs, p_hot)?;
    let cold = ModalTrajectory::with_derivatives(&decomp, &derivs, p_cold)?;
    let grid = grid_or_default(t_grid, decomp.slowest_rate())?;
    let pi = hot.stationary();
    let norm = NormKind::default_for(decomp.dim());
    let inversion = detect_inversion(&hot, &cold, &pi, 0.0, norm, &grid)?;
    let model_name = if decomp.dim() == 3 { "lambda" } else { "modal" };

    let Some(t_star) = inversion.t_star else {
        return Ok(TheoremCertificate {
            model: model_name,
            inversion,
            hypothesis: None,
            ordering: None,
            hierarchy_windows: Vec::new(),
            lemmas: None,
        });
    };
    let hypothesis = if hot.amplitudes().amplitudes[SLOW].abs() < CANCELLATION_THRESHOLD {
        Hypothesis::StrongCancellation
    } else {
        // Both preparations share one generator, so the slow-rate sensitivities coincide.
        Hypothesis::MonotoneVariation {
            kappa0: derivs.dt_eigenvalues[SLOW].abs() - derivs.dt_eigenvalues[SLOW].abs(),
        }
    };
    let (ordering, hierarchy_windows) =
        hierarchy_parts(theorem_hierarchy_check(&hot, &cold, &inversion, &grid)?);

    let lemmas = if decomp.dim() >= 3 {
        let hot_p = hot.populations(t_star)?;
        let cold_p = cold.populations(t_star)?;
        let metric = lemma3_metric_bounds(
            &[hot_p.as_slice(), cold_p.as_slice(), pi.as_slice()],
            DEFAULT_MARGIN,
        )?;
        let hot_l = preparation_lemmas(&decomp, hot.amplitudes(), &derivs, &metric, t_star)?;
        let cold_l = preparation_lemmas(&decomp, cold.amplitudes(), &derivs, &metric, t_star)?;
        let fi_gap_bound = lemma3_fi_gap_bound(
            hot_l.sensitivity.s_of_t,
            cold_l.sensitivity.s_of_t,
            &hot_l.lemma1.remainder_vector,
            &cold_l.lemma1.remainder_vector,
            decomp.right_mode(SLOW),
            metric.m,
        );
        let dp_hot = dt_populations_modal(&decomp, hot.amplitudes(), &derivs, t_star)?;
        let dp_cold = dt_populations_modal(&decomp, cold.amplitudes(), &derivs, t_star)?;
        let fi_gap = fisher_from_populations(&hot_p, dp_hot.as_slice())?
            - fisher_from_populations(&cold_p, dp_cold.as_slice())?;
        Some(ModalLemmas {
            hot: hot_l,
            cold: cold_l,
            metric,
            fi_gap_bound,
            fi_gap,
        })
    } else {
        None
    };

    Ok(TheoremCertificate {
        model: model_name,
        inversion,
        hypothesis: Some(hypothesis),
        ordering,
        hierarchy_windows,
        lemmas,
    })
}
