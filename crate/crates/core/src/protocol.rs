//! Shot-based thermometry with a two-level probe: binomial sampling, isotonic
//! equilibrium calibration, empirical inversion detection, Fisher maps and maximum
//! likelihood temperature estimates.
//!
//! Random draws use `ChaCha20Rng` seeded with `seed_from_u64(seed)`. Each independent
//! cell selects its own stream with `set_stream(cell)`, so results do not depend on
//! the execution mode or on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{ensure_positive, ensure_probability, Error, Result};
use crate::fisher::fisher_two_level;
use crate::par::Execution;
use crate::qubit::{
    dt_gibbs, dt_population, evolve_population, gibbs_population_qubit, QubitBathParams,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preparation {
    Hot(f64),
    Cold(f64),
    /// Probe already thermalized with the bath it is measuring.
    Equilibrium,
}

impl Preparation {
    pub fn tag(&self) -> &'static str {
        match self {
            Preparation::Hot(_) => "hot",
            Preparation::Cold(_) => "cold",
            Preparation::Equilibrium => "equilibrium",
        }
    }
}

/// Probe coupled to a bath of unknown temperature. The temperature stored in
/// `params` is ignored; every query supplies its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub params: QubitBathParams,
}

impl Probe {
    pub fn new(params: QubitBathParams) -> Self {
        Self { params }
    }

    /// Excited population after interrogation time `t` in a bath at `temperature`.
    pub fn population(&self, prep: Preparation, t: f64, temperature: f64) -> Result<f64> {
        match prep {
            Preparation::Hot(p0) | Preparation::Cold(p0) => {
                evolve_population(&self.params.at_temperature(temperature), p0, t)
            }
            Preparation::Equilibrium => gibbs_population_qubit(self.params.omega0, temperature),
        }
    }

    pub fn dt_population(&self, prep: Preparation, t: f64, temperature: f64) -> Result<f64> {
        match prep {
            Preparation::Hot(p0) | Preparation::Cold(p0) => {
                dt_population(&self.params.at_temperature(temperature), p0, t)
            }
            Preparation::Equilibrium => dt_gibbs(self.params.omega0, temperature),
        }
    }

    pub fn fisher(&self, prep: Preparation, t: f64, temperature: f64) -> Result<f64> {
        fisher_two_level(
            self.population(prep, t, temperature)?,
            self.dt_population(prep, t, temperature)?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotRecord {
    pub shots: u64,
    /// Excited-state outcomes.
    pub successes: u64,
    pub time: f64,
    pub preparation: Preparation,
    pub seed: u64,
}

impl ShotRecord {
    pub fn p_hat(&self) -> f64 {
        self.successes as f64 / self.shots as f64
    }

    pub fn at(mut self, time: f64, preparation: Preparation) -> Self {
        self.time = time;
        self.preparation = preparation;
        self
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Binomial draw on stream `stream` of `seed`.
pub fn sample_successes(p_true: f64, shots: u64, seed: u64, stream: u64) -> Result<u64> {
    ensure_probability("p_true", p_true)?;
    if shots == 0 {
        return Err(Error::Domain {
            name: "shots",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let dist = Binomial::new(shots, p_true).map_err(|_| Error::Domain {
        name: "p_true",
        value: p_true,
        reason: "invalid binomial parameter",
    })?;
    Ok(dist.sample(&mut stream_rng(seed, stream)))
}

/// Equilibrium-tagged record at `t = 0` drawn from stream 0.
pub fn sample_population(p_true: f64, shots: u64, seed: u64) -> Result<ShotRecord> {
    Ok(ShotRecord {
        shots,
        successes: sample_successes(p_true, shots, seed, 0)?,
        time: 0.0,
        preparation: Preparation::Equilibrium,
        seed,
    })
}

/// Weighted pool-adjacent-violators fit, non-decreasing.
pub fn isotonic_fit(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            actual: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Domain {
            name: "weight",
            value: weights.iter().copied().fold(f64::INFINITY, f64::min),
            reason: "weights must be positive",
        });
    }
    // Blocks of (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, n1 + n2));
        }
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect())
}

fn check_increasing(xs: &[f64]) -> Result<()> {
    if xs.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(Error::UnsortedGrid)
    }
}

/// Non-decreasing fit of `p_eq(T)` with linear interpolation between knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Raw empirical populations before the fit.
    pub observed: Vec<f64>,
    pub shots: u64,
}

impl CalibrationCurve {
    /// Fits noisy or exact estimates `observed` at temperatures `knots`.
    pub fn fit(knots: &[f64], observed: &[f64], shots: u64) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::TooFewPoints {
                required: 3,
                actual: knots.len(),
            });
        }
        check_increasing(knots)?;
        let values = isotonic_fit(observed, &vec![shots as f64; observed.len()])?;
        Ok(Self {
            knots: knots.to_vec(),
            values,
            observed: observed.to_vec(),
            shots,
        })
    }

    pub fn evaluate(&self, temperature: f64) -> Result<f64> {
        let (lo, hi) = (self.knots[0], self.knots[self.knots.len() - 1]);
        if !(lo..=hi).contains(&temperature) {
            return Err(Error::Domain {
                name: "temperature",
                value: temperature,
                reason: "outside the calibrated range",
            });
        }
        let j = self
            .knots
            .partition_point(|&k| k <= temperature)
            .clamp(1, self.knots.len() - 1);
        let (t0, t1) = (self.knots[j - 1], self.knots[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        Ok(v0 + (v1 - v0) * (temperature - t0) / (t1 - t0))
    }

    /// Largest fit residual against `truth`, in units of the binomial standard error.
    pub fn max_standardized_residual<F: Fn(f64) -> Result<f64>>(&self, truth: F) -> Result<f64> {
        let mut worst = 0.0_f64;
        for (&t, &v) in self.knots.iter().zip(&self.values) {
            let p = truth(t)?;
            let se = (p * (1.0 - p) / self.shots as f64).sqrt();
            worst = worst.max((v - p).abs() / se);
        }
        Ok(worst)
    }
}

/// Samples the exact equilibrium population at each temperature (the long wait is
/// idealized away) and fits it. Temperature `j` uses stream `j`.
pub fn calibrate_equilibrium(
    probe: &Probe,
    temps: &[f64],
    shots: u64,
    seed: u64,
    exec: Execution,
) -> Result<CalibrationCurve> {
    if temps.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            actual: temps.len(),
        });
    }
    check_increasing(temps)?;
    let observed = exec
        .map_range(temps.len(), |j| {
            let p = probe.population(Preparation::Equilibrium, 0.0, temps[j])?;
            Ok(sample_successes(p, shots, seed, j as u64)? as f64 / shots as f64)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    CalibrationCurve::fit(temps, &observed, shots)
}

/// Tolerance for the empirical inversion test `D̂_hot < D̂_cold − δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaPolicy {
    Fixed(f64),
    /// `multiplier` times the standard error of `D̂_hot − D̂_cold`.
    Statistical {
        multiplier: f64,
    },
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        DeltaPolicy::Statistical { multiplier: 3.0 }
    }
}

impl DeltaPolicy {
    fn resolve(&self, hot: f64, cold: f64, eq: f64, shots: Option<u64>) -> f64 {
        match *self {
            DeltaPolicy::Fixed(d) => d,
            DeltaPolicy::Statistical { multiplier } => {
                let Some(n) = shots else { return 0.0 };
                let var = |p: f64| p * (1.0 - p) / n as f64;
                // The shared equilibrium estimate cancels when both sit on the same side.
                let eq_weight = ((hot - eq).signum() - (cold - eq).signum()).powi(2);
                multiplier * (var(hot) + var(cold) + eq_weight * var(eq)).sqrt()
            }
        }
    }
}

/// First empirical inversion time per calibration temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionMap {
    pub temperatures: Vec<f64>,
    pub times: Vec<Option<f64>>,
}

/// `shots = None` uses exact populations. Cell `(j, i)` uses streams derived from its
/// index; the equilibrium reference at `T_j` is drawn once per temperature.
#[allow(clippy::too_many_arguments)]
pub fn dynamical_calibration(
    probe: &Probe,
    p_hot: f64,
    p_cold: f64,
    temps: &[f64],
    time_grid: &[f64],
    shots: Option<u64>,
    policy: DeltaPolicy,
    seed: u64,
    exec: Execution,
) -> Result<InversionMap> {
    if !(p_hot > p_cold) {
        return Err(Error::Domain {
            name: "p_hot",
            value: p_hot,
            reason: "must exceed p_cold",
        });
    }
    check_increasing(time_grid)?;
    let hot = Preparation::Hot(p_hot);
    let cold = Preparation::Cold(p_cold);
    let stride = 2 * time_grid.len() as u64 + 1;
    let observe = move |p: f64, stream: u64| -> Result<f64> {
        match shots {
            None => Ok(p),
            Some(n) => Ok(sample_successes(p, n, seed, stream)? as f64 / n as f64),
        }
    };
    let times = exec
        .map_range(temps.len(), |j| -> Result<Option<f64>> {
            let temp = temps[j];
            let base = j as u64 * stride;
            let eq = observe(probe.population(Preparation::Equilibrium, 0.0, temp)?, base)?;
            for (i, &t) in time_grid.iter().enumerate() {
                let h = observe(probe.population(hot, t, temp)?, base + 1 + 2 * i as u64)?;
                let c = observe(probe.population(cold, t, temp)?, base + 2 + 2 * i as u64)?;
                let delta = policy.resolve(h, c, eq, shots);
                if (h - eq).abs() < (c - eq).abs() - delta {
                    return Ok(Some(t));
                }
            }
            Ok(None)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(InversionMap {
        temperatures: temps.to_vec(),
        times,
    })
}

/// Cells whose `p(1 − p)` falls below this are flagged and carry zero information.
pub const FLAG_THRESHOLD: f64 = 1e-12;
const FIT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherCell {
    pub temperature: f64,
    pub time: f64,
    pub population: f64,
    pub derivative: f64,
    pub fisher: f64,
    pub flagged: bool,
}

/// Empirical Fisher information on a `(t, T)` grid, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMap {
    pub temperatures: Vec<f64>,
    pub times: Vec<f64>,
    pub cells: Vec<FisherCell>,
}

impl FisherMap {
    pub fn cell(&self, time_index: usize, temp_index: usize) -> &FisherCell {
        &self.cells[time_index * self.temperatures.len() + temp_index]
    }

    /// Time with the largest information at the temperature nearest `temperature`.
    pub fn argmax_time(&self, temperature: f64) -> f64 {
        let j = nearest_index(&self.temperatures, temperature);
        let i = (0..self.times.len())
            .max_by(|&a, &b| self.cell(a, j).fisher.total_cmp(&self.cell(b, j).fisher))
            .unwrap_or(0);
        self.times[i]
    }
}

fn nearest_index(xs: &[f64], x: f64) -> usize {
    (0..xs.len())
        .min_by(|&a, &b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs()))
        .unwrap_or(0)
}

/// Value and slope at `x[at]` of the least-squares quadratic through the window of
/// up to five knots around it.
fn local_quadratic(x: &[f64], y: &[f64], at: usize) -> (f64, f64) {
    let n = x.len();
    let half = FIT_WINDOW / 2;
    let start = at.saturating_sub(half).min(n.saturating_sub(FIT_WINDOW));
    let end = (start + FIT_WINDOW).min(n);
    let x0 = x[at];
    let mut s = [0.0; 5];
    let mut r = [0.0; 3];
    for k in start..end {
        let u = x[k] - x0;
        let mut pow = 1.0;
        for sk in s.iter_mut() {
            *sk += pow;
            pow *= u;
        }
        r[0] += y[k];
        r[1] += y[k] * u;
        r[2] += y[k] * u * u;
    }
    let m = nalgebra::Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
    let coeffs = m
        .lu()
        .solve(&nalgebra::Vector3::from(r))
        .unwrap_or_else(nalgebra::Vector3::zeros);
    (coeffs[0], coeffs[1])
}

/// Smoothed values and slopes of `y(T)`. When the raw slopes agree in sign the data
/// are first made monotone in that direction by isotonic regression.
pub fn fit_temperature_profile(temps: &[f64], y: &[f64]) -> Result<Vec<(f64, f64)>> {
    if temps.len() < FIT_WINDOW {
        return Err(Error::TooFewPoints {
            required: FIT_WINDOW,
            actual: temps.len(),
        });
    }
    check_increasing(temps)?;
    let raw: Vec<(f64, f64)> = (0..temps.len())
        .map(|j| local_quadratic(temps, y, j))
        .collect();
    let increasing = raw.iter().all(|(_, d)| *d >= 0.0);
    let decreasing = raw.iter().all(|(_, d)| *d <= 0.0);
    if !(increasing || decreasing) {
        return Ok(raw);
    }
    let ones = vec![1.0; y.len()];
    let monotone = if increasing {
        isotonic_fit(y, &ones)?
    } else {
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        isotonic_fit(&flipped, &ones)?
            .into_iter()
            .map(|v| -v)
            .collect()
    };
    Ok((0..temps.len())
        .map(|j| local_quadratic(temps, &monotone, j))
        .collect())
}

/// Fisher map for one preparation. `shots = None` fits exact populations; otherwise
/// cell `(i, j)` samples stream `i · len(T) + j`.
pub fn fisher_map(
    probe: &Probe,
    prep: Preparation,
    temps: &[f64],
    times: &[f64],
    shots: Option<u64>,
    seed: u64,
    exec: Execution,
) -> Result<FisherMap> {
    if temps.len() < FIT_WINDOW {
        return Err(Error::TooFewPoints {
            required: FIT_WINDOW,
            actual: temps.len(),
        });
    }
    let nt = temps.len();
    let rows = exec
        .map_range(times.len(), |i| -> Result<Vec<FisherCell>> {
            let t = times[i];
            let mut y = Vec::with_capacity(nt);
            for (j, &temp) in temps.iter().enumerate() {
                let p = probe.population(prep, t, temp)?;
                y.push(match shots {
                    None => p,
                    Some(n) => sample_successes(p, n, seed, (i * nt + j) as u64)? as f64 / n as f64,
                });
            }
            let fit = fit_temperature_profile(temps, &y)?;
            Ok(fit
                .into_iter()
                .zip(temps)
                .map(|((p, dp), &temp)| {
                    let var = p * (1.0 - p);
                    let flagged = !(var >= FLAG_THRESHOLD);
                    FisherCell {
                        temperature: temp,
                        time: t,
                        population: p,
                        derivative: dp,
                        fisher: if flagged { 0.0 } else { dp * dp / var },
                        flagged,
                    }
                })
                .collect())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FisherMap {
        temperatures: temps.to_vec(),
        times: times.to_vec(),
        cells: rows.into_iter().flatten().collect(),
    })
}

/// Likelihood input. Counts are real so that exact (noiseless) data can be expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub shots: f64,
    pub successes: f64,
    pub time: f64,
    pub preparation: Preparation,
}

impl Observation {
    /// Data with `successes / shots` equal to `p`.
    pub fn noiseless(p: f64, shots: f64, time: f64, preparation: Preparation) -> Self {
        Self {
            shots,
            successes: p * shots,
            time,
            preparation,
        }
    }
}

impl From<&ShotRecord> for Observation {
    fn from(r: &ShotRecord) -> Self {
        Self {
            shots: r.shots as f64,
            successes: r.successes as f64,
            time: r.time,
            preparation: r.preparation,
        }
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `Σ n ln p(t;T) + (N − n) ln(1 − p(t;T))`.
pub fn log_likelihood(probe: &Probe, obs: &[Observation], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for o in obs {
        let p = probe.population(o.preparation, o.time, temperature)?;
        total += xlogy(o.successes, p) + xlogy(o.shots - o.successes, 1.0 - p);
    }
    Ok(total)
}

/// Derivative of [`log_likelihood`] in temperature.
pub fn score(probe: &Probe, obs: &[Observation], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for o in obs {
        let p = probe.population(o.preparation, o.time, temperature)?;
        let dp = probe.dt_population(o.preparation, o.time, temperature)?;
        total += (o.successes - o.shots * p) / (p * (1.0 - p)) * dp;
    }
    Ok(total)
}

/// Bisects the score inside `[a, b]` when it changes sign there. Near the optimum the
/// likelihood is too flat for comparisons to resolve `1e-8`; its slope is not.
fn polish_with_score(probe: &Probe, obs: &[Observation], a: f64, b: f64) -> Result<Option<f64>> {
    let (mut a, mut b) = (a, b);
    let (mut sa, sb) = (score(probe, obs, a)?, score(probe, obs, b)?);
    if !(sa.is_finite() && sb.is_finite()) || sa * sb > 0.0 {
        return Ok(None);
    }
    while b - a > 1e-13 * b.abs().max(1.0) {
        let m = 0.5 * (a + b);
        let sm = score(probe, obs, m)?;
        if sm == 0.0 {
            return Ok(Some(m));
        }
        if sa * sm < 0.0 {
            b = m;
        } else {
            a = m;
            sa = sm;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

pub const MLE_GRID_POINTS: usize = 64;
pub const MLE_TOLERANCE: f64 = 1e-8;
const BOUNDARY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleResult {
    pub t_hat: f64,
    pub log_likelihood: f64,
    /// Shot-weighted Fisher information `Σ N_r F(t_r; T̂)`.
    pub fisher_at_hat: f64,
    pub stderr: f64,
    pub total_shots: f64,
    /// The optimum lies within `1e-6` of an interval end.
    pub at_boundary: bool,
    /// The coarse grid showed more than one local maximum.
    pub multimodal: bool,
}

fn golden_section<F: Fn(f64) -> Result<f64>>(f: F, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while (b - a).abs() > MLE_TOLERANCE {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Maximizes the multi-record log-likelihood over `[lo, hi]` with a 64-point scan
/// followed by golden-section refinement around the best grid point.
pub fn mle_temperature(
    probe: &Probe,
    obs: &[Observation],
    interval: (f64, f64),
) -> Result<MleResult> {
    if obs.is_empty() {
        return Err(Error::NoObservations);
    }
    let (lo, hi) = interval;
    ensure_positive("temperature lower bound", lo)?;
    if !(hi > lo) {
        return Err(Error::UnsortedGrid);
    }
    let step = (hi - lo) / (MLE_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..MLE_GRID_POINTS).map(|k| lo + step * k as f64).collect();
    let mut spread = 0.0_f64;
    for o in obs {
        let ps = grid
            .iter()
            .map(|&t| probe.population(o.preparation, o.time, t))
            .collect::<Result<Vec<_>>>()?;
        let (mn, mx) = ps
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| {
                (a.min(p), b.max(p))
            });
        spread = spread.max(mx - mn);
    }
    if spread < 1e-14 {
        return Err(Error::DegenerateLikelihood);
    }
    let ll = |t: f64| log_likelihood(probe, obs, t);
    let values = grid.iter().map(|&t| ll(t)).collect::<Result<Vec<_>>>()?;
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("log-likelihood"));
    }
    let best = (0..grid.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    let peaks = (0..grid.len())
        .filter(|&k| {
            let left = k == 0 || values[k] > values[k - 1];
            let right = k + 1 == grid.len() || values[k] > values[k + 1];
            left && right
        })
        .count();
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (mut t_hat, mut value) = golden_section(ll, a, b)?;
    if values[best] > value {
        t_hat = grid[best];
        value = values[best];
    }
    let reach = 1e3 * MLE_TOLERANCE;
    if let Some(root) =
        polish_with_score(probe, obs, (t_hat - reach).max(a), (t_hat + reach).min(b))?
    {
        let v = ll(root)?;
        if v >= value - 1e-9 * value.abs().max(1.0) {
            t_hat = root;
            value = v;
        }
    }
    let mut fisher = 0.0;
    let mut total = 0.0;
    for o in obs {
        fisher += o.shots * probe.fisher(o.preparation, o.time, t_hat)?;
        total += o.shots;
    }
    Ok(MleResult {
        t_hat,
        log_likelihood: value,
        fisher_at_hat: fisher,
        stderr: if fisher > 0.0 {
            fisher.sqrt().recip()
        } else {
            f64::INFINITY
        },
        total_shots: total,
        at_boundary: (t_hat - lo).abs() < BOUNDARY_MARGIN || (hi - t_hat).abs() < BOUNDARY_MARGIN,
        multimodal: peaks > 1,
    })
}

/// Temperature whose Gibbs population equals `p`.
pub fn effective_temperature(p: f64, omega0: f64) -> Result<f64> {
    ensure_positive("omega0", omega0)?;
    if !(p > 0.0) {
        return Err(Error::Domain {
            name: "p_measured",
            value: p,
            reason: "must be > 0",
        });
    }
    if p >= 0.5 {
        return Err(Error::PopulationInversion(p));
    }
    Ok(omega0 / (1.0 / p - 1.0).ln())
}

/// Independent single-interrogation estimates; replica `r` samples stream `r`.
#[allow(clippy::too_many_arguments)]
pub fn replicate_estimates(
    probe: &Probe,
    prep: Preparation,
    time: f64,
    t_true: f64,
    shots: u64,
    replicas: usize,
    seed: u64,
    interval: (f64, f64),
    exec: Execution,
) -> Result<Vec<MleResult>> {
    let p = probe.population(prep, time, t_true)?;
    exec.map_range(replicas, |r| {
        let n = sample_successes(p, shots, seed, r as u64)?;
        let obs = Observation {
            shots: shots as f64,
            successes: n as f64,
            time,
            preparation: prep,
        };
        mle_temperature(probe, &[obs], interval)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(xs: &[f64]) -> Result<SampleSummary> {
    if xs.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            actual: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SampleSummary {
        mean,
        std: var.sqrt(),
    })
}

/// Paired comparison of per-replica squared errors, `candidate − reference`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub mean_difference: f64,
    pub stderr: f64,
    /// `mean / stderr`; strongly negative means the candidate is better.
    pub t_statistic: f64,
}

pub fn paired_squared_error(
    candidate: &[f64],
    reference: &[f64],
    truth: f64,
) -> Result<PairedComparison> {
    if candidate.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: candidate.len(),
        });
    }
    let diffs: Vec<f64> = candidate
        .iter()
        .zip(reference)
        .map(|(c, r)| (c - truth).powi(2) - (r - truth).powi(2))
        .collect();
    let s = summarize(&diffs)?;
    let stderr = s.std / (diffs.len() as f64).sqrt();
    Ok(PairedComparison {
        mean_difference: s.mean,
        stderr,
        t_statistic: if stderr > 0.0 { s.mean / stderr } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::{qfi_equilibrium, qfi_qubit_closed_form};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn probe(alpha: f64) -> Probe {
        Probe::new(QubitBathParams::new(1.0, 1.0, 0.5, alpha).unwrap())
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn degenerate_binomials() {
        assert_eq!(sample_population(0.0, 500, 1).unwrap().successes, 0);
        assert_eq!(sample_population(1.0, 500, 1).unwrap().successes, 500);
        assert!(sample_population(0.5, 0, 1).is_err());
        assert!(sample_population(1.2, 10, 1).is_err());
    }

    #[test]
    fn binomial_concentration() {
        let p = 0.119_202_92;
        let r = sample_population(p, 1_000_000, 7).unwrap();
        let sigma = (p * (1.0 - p) / 1e6).sqrt();
        assert!((r.p_hat() - p).abs() < 5.0 * sigma);
    }

    #[test]
    fn sampling_is_reproducible_and_stream_separated() {
        let a = sample_successes(0.3, 10_000, 42, 5).unwrap();
        assert_eq!(a, sample_successes(0.3, 10_000, 42, 5).unwrap());
        let others: Vec<u64> = (0..8)
            .map(|s| sample_successes(0.3, 10_000, 42, s).unwrap())
            .collect();
        assert!(others.iter().any(|&x| x != a));
    }

    #[test]
    fn pav_properties() {
        let ones = [1.0; 4];
        assert_eq!(
            isotonic_fit(&[0.1, 0.2, 0.3, 0.4], &ones).unwrap(),
            vec![0.1, 0.2, 0.3, 0.4]
        );
        let fit = isotonic_fit(&[0.1, 0.3, 0.2, 0.4], &[1.0, 1.0, 3.0, 1.0]).unwrap();
        assert_relative_eq!(fit[1], 0.225, max_relative = 1e-15);
        assert_eq!(fit[1], fit[2]);
        assert_eq!(fit[0], 0.1);
        assert_eq!(fit[3], 0.4);
    }

    #[test]
    fn calibration_examples() {
        let pr = probe(0.0);
        let temps = [0.3, 0.4, 0.5, 0.6, 0.7];
        let exact: Vec<f64> = temps
            .iter()
            .map(|&t| gibbs_population_qubit(1.0, t).unwrap())
            .collect();
        let curve = CalibrationCurve::fit(&temps, &exact, 1_000_000).unwrap();
        assert_eq!(curve.values, exact);
        assert_relative_eq!(
            curve.evaluate(0.45).unwrap(),
            0.5 * (exact[1] + exact[2]),
            max_relative = 1e-14
        );
        assert!(curve.evaluate(0.8).is_err());

        let noisy = calibrate_equilibrium(&pr, &temps, 100_000, 11, Execution::Parallel).unwrap();
        assert!(noisy.values.windows(2).all(|w| w[0] <= w[1]));
        let worst = noisy
            .max_standardized_residual(|t| gibbs_population_qubit(1.0, t))
            .unwrap();
        assert!(worst < 5.0, "{worst}");
        let seq = calibrate_equilibrium(&pr, &temps, 100_000, 11, Execution::Sequential).unwrap();
        assert_eq!(seq, noisy);
        assert!(calibrate_equilibrium(&pr, &temps[..2], 10, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn noiseless_inversion_map() {
        let times = linspace(0.0, 4.0, 40_001);
        let map = dynamical_calibration(
            &probe(1.0),
            0.9,
            0.5,
            &[0.5],
            &times,
            None,
            DeltaPolicy::Fixed(0.0),
            0,
            Execution::Sequential,
        )
        .unwrap();
        let t_m = map.times[0].unwrap();
        assert!((t_m - 1.367_154_164).abs() <= 1e-4, "{t_m}");
        let same = dynamical_calibration(
            &probe(1.0),
            0.9,
            0.9 - 1e-15,
            &[0.5],
            &times[..100],
            None,
            DeltaPolicy::Fixed(0.0),
            0,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(same.times, vec![None]);
    }

    #[test]
    fn null_model_false_positive_rate() {
        let pr = probe(0.0);
        let times = linspace(0.0, 4.0, 21);
        let hits: usize = (0..1000u64)
            .map(|seed| {
                dynamical_calibration(
                    &pr,
                    0.9,
                    0.5,
                    &[0.5],
                    &times,
                    Some(10_000),
                    DeltaPolicy::default(),
                    seed,
                    Execution::Parallel,
                )
                .unwrap()
                .times
                .iter()
                .filter(|t| t.is_some())
                .count()
            })
            .sum();
        assert!(hits < 10, "{hits} false positives in 1000 runs");
    }

    #[test]
    fn fisher_map_rows() {
        let pr = probe(1.0);
        let temps = linspace(0.4, 0.6, 21);
        let map = fisher_map(
            &pr,
            Preparation::Hot(0.9),
            &temps,
            &[0.0, 1.0, 40.0],
            None,
            0,
            Execution::Parallel,
        )
        .unwrap();
        for j in 0..temps.len() {
            assert!(map.cell(0, j).fisher < 1e-20);
            let eq = qfi_equilibrium(1.0, temps[j]).unwrap();
            assert!((map.cell(2, j).fisher / eq - 1.0).abs() < 0.02);
            let exact =
                qfi_qubit_closed_form(&pr.params.at_temperature(temps[j]), 0.9, 1.0).unwrap();
            assert!((map.cell(1, j).fisher / exact - 1.0).abs() < 0.01);
        }
        assert_eq!(map.argmax_time(0.5), 40.0);
    }

    #[test]
    fn local_fit_exact_for_quadratics() {
        let x = linspace(0.0, 1.0, 7);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v * v - v + 3.0).collect();
        for j in 0..x.len() {
            let (val, slope) = local_quadratic(&x, &y, j);
            assert_relative_eq!(val, y[j], epsilon = 1e-12);
            assert_relative_eq!(slope, 4.0 * x[j] - 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn mle_examples() {
        let pr = probe(0.0);
        let rec = Observation {
            shots: 1000.0,
            successes: 119.0,
            time: 0.0,
            preparation: Preparation::Equilibrium,
        };
        let res = mle_temperature(&pr, &[rec], (0.2, 1.0)).unwrap();
        let expected = 1.0 / (1.0 / 0.119 - 1.0f64).ln();
        assert!((res.t_hat - expected).abs() < 1e-6);
        assert!((res.t_hat - 0.499_52).abs() < 1e-5);
        assert!(!res.at_boundary && !res.multimodal);
        let lo = log_likelihood(&pr, &[rec], 0.2).unwrap();
        let hi = log_likelihood(&pr, &[rec], 1.0).unwrap();
        assert!(res.log_likelihood >= lo.max(hi));

        let p = pr.population(Preparation::Hot(0.9), 1.5, 0.5).unwrap();
        let exact = Observation::noiseless(p, 1e4, 1.5, Preparation::Hot(0.9));
        let res = mle_temperature(&pr, &[exact], (0.3, 0.8)).unwrap();
        assert!((res.t_hat - 0.5).abs() < 1e-8);
        let f = pr.fisher(Preparation::Hot(0.9), 1.5, res.t_hat).unwrap();
        assert_relative_eq!(res.stderr, (1e4 * f).sqrt().recip(), max_relative = 1e-12);

        assert!(matches!(
            mle_temperature(&pr, &[], (0.2, 1.0)),
            Err(Error::NoObservations)
        ));
        let frozen = Observation::noiseless(0.9, 100.0, 0.0, Preparation::Hot(0.9));
        assert!(matches!(
            mle_temperature(&pr, &[frozen], (0.2, 1.0)),
            Err(Error::DegenerateLikelihood)
        ));
        let cold_data = Observation::noiseless(0.01, 100.0, 0.0, Preparation::Equilibrium);
        assert!(
            mle_temperature(&pr, &[cold_data], (0.3, 1.0))
                .unwrap()
                .at_boundary
        );
    }

    #[test]
    fn score_matches_likelihood_slope() {
        let pr = probe(1.0);
        let obs = [Observation::noiseless(
            0.3,
            500.0,
            0.5,
            Preparation::Hot(0.9),
        )];
        let fd = crate::oracle::finite_difference_dt(|t| log_likelihood(&pr, &obs, t), 0.6, 1e-5)
            .unwrap();
        assert_relative_eq!(
            score(&pr, &obs, 0.6).unwrap(),
            fd.value,
            max_relative = 1e-6
        );
    }

    #[test]
    fn multi_time_records_add() {
        let pr = probe(1.0);
        let a = Observation::noiseless(0.3, 500.0, 0.5, Preparation::Hot(0.9));
        let b = Observation::noiseless(0.15, 800.0, 2.0, Preparation::Hot(0.9));
        let joint = log_likelihood(&pr, &[a, b], 0.55).unwrap();
        let split =
            log_likelihood(&pr, &[a], 0.55).unwrap() + log_likelihood(&pr, &[b], 0.55).unwrap();
        assert_relative_eq!(joint, split, max_relative = 1e-15);
    }

    #[test]
    fn effective_temperature_examples() {
        assert_relative_eq!(
            effective_temperature(0.119_202_92, 1.0).unwrap(),
            0.5,
            max_relative = 1e-7
        );
        assert!(effective_temperature(1e-300, 1.0).unwrap() < 2e-3);
        assert!(matches!(
            effective_temperature(0.5, 1.0),
            Err(Error::PopulationInversion(_))
        ));
        assert!(matches!(
            effective_temperature(0.0, 1.0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn replicas_match_across_modes() {
        let pr = probe(0.0);
        let run = |exec| {
            replicate_estimates(
                &pr,
                Preparation::Equilibrium,
                0.0,
                0.5,
                1000,
                16,
                3,
                (0.2, 1.2),
                exec,
            )
            .unwrap()
            .iter()
            .map(|r| r.t_hat)
            .collect::<Vec<_>>()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn paired_comparison_signs() {
        let c = paired_squared_error(&[0.5, 0.51, 0.49], &[0.6, 0.4, 0.62], 0.5).unwrap();
        assert!(c.mean_difference < 0.0 && c.t_statistic < 0.0);
        assert!(paired_squared_error(&[0.5], &[0.5, 0.4], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn pav_is_monotone_and_mean_preserving(values in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let w: Vec<f64> = (0..values.len()).map(|k| 1.0 + (k % 3) as f64).collect();
            let fit = isotonic_fit(&values, &w).unwrap();
            prop_assert!(fit.windows(2).all(|p| p[0] <= p[1] + 1e-15));
            let total: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
            let fitted: f64 = fit.iter().zip(&w).map(|(v, w)| v * w).sum();
            prop_assert!((total - fitted).abs() < 1e-12);
        }

        #[test]
        fn effective_temperature_inverts_gibbs(t in 0.05f64..5.0, omega in 0.2f64..3.0) {
            let p = gibbs_population_qubit(omega, t).unwrap();
            let back = effective_temperature(p, omega).unwrap();
            prop_assert!((back / t - 1.0).abs() < 1e-10);
        }
    }
}
