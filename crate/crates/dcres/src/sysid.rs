//! Bus-impedance measurement from time-domain runs: swept-sine current
//! injection, single-frequency spectral extraction, and iterative
//! pole-relocating rational fitting of the sampled response.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{solve_equilibrium, ModelError, SmgParams, SystemState};
use crate::sim::{simulate_from, DisturbanceSchedule, Perturbation, SecondaryControl, SimError};
use crate::tf::{log_grid, FreqSample, RationalTf, TfError};

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("invalid sweep plan: {0}")]
    InvalidPlan(String),
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("order {order} needs at least {needed} samples, got {got}")]
    TooFewSamples {
        order: usize,
        needed: usize,
        got: usize,
    },
    #[error("extraction window needs {needed} samples but only {available} are available")]
    WindowTooShort { needed: usize, available: usize },
    #[error(
        "bus voltage drifted {drift:.3e} V across the measurement window at \
         {omega} rad/s, more than 5% of the {response:.3e} V response"
    )]
    NotSettled {
        omega: f64,
        drift: f64,
        response: f64,
    },
    #[error("least-squares system is numerically singular; the fit order is likely too high for the data")]
    RankDeficient,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tf(#[from] TfError),
}

/// Swept-sine excitation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    /// Excitation frequencies in rad/s, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Injection amplitude in amperes.
    pub amplitude: f64,
    /// Whole excitation periods discarded before extraction.
    pub settle_periods: usize,
    /// Whole excitation periods in the extraction window.
    pub measure_periods: usize,
    /// Lower bound on the extraction window length; raises the period count
    /// at high frequencies.
    pub min_measure_time: f64,
}

impl SweepPlan {
    /// Log-spaced sweep over `[omega_min, omega_max]` rad/s with the default
    /// amplitude and window settings.
    pub fn log_spaced(omega_min: f64, omega_max: f64, count: usize) -> Self {
        Self {
            frequencies: log_grid(omega_min, omega_max, count),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SysidError> {
        if self.frequencies.is_empty() {
            return Err(SysidError::InvalidPlan("no frequencies".into()));
        }
        let mut prev = 0.0;
        for &w in &self.frequencies {
            if !(w > prev) || !w.is_finite() {
                return Err(SysidError::InvalidPlan(
                    "frequencies must be positive, finite, and strictly increasing".into(),
                ));
            }
            prev = w;
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(SysidError::InvalidPlan("amplitude must be positive".into()));
        }
        if self.measure_periods < 1 {
            return Err(SysidError::InvalidPlan(
                "at least one measurement period required".into(),
            ));
        }
        if !(self.min_measure_time >= 0.0) {
            return Err(SysidError::InvalidPlan(
                "min_measure_time must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SweepPlan {
    /// 30 points over 0.1 Hz to 1 kHz, 10 A, 5 settle and 10 measure
    /// periods, 0.2 s minimum window.
    fn default() -> Self {
        use std::f64::consts::TAU;
        Self {
            frequencies: log_grid(0.1 * TAU, 1000.0 * TAU, 30),
            amplitude: 10.0,
            settle_periods: 5,
            measure_periods: 10,
            min_measure_time: 0.2,
        }
    }
}

/// Result of a rational fit to frequency-response samples.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub tf: RationalTf,
    /// Unweighted relative RMS misfit over the input samples.
    pub rel_rms_error: f64,
    /// Pole-relocation iterations executed.
    pub iterations_used: usize,
    /// Largest relative pole displacement per iteration.
    pub pole_movement_history: Vec<f64>,
    /// Whether the pole displacement dropped below the stopping threshold
    /// before the iteration budget ran out.
    pub converged: bool,
}

// ---------------------------------------------------------------------------
// spectral extraction

/// Amplitude and phase of `signal` at `omega`, projected over an integer
/// number of periods (`N = round(periods 2 pi / (omega dt))` samples).
///
/// Normalized so that `A sin(omega t)` sampled from its zero crossing maps
/// to `A` at phase 0; a cosine maps to phase +pi/2.
pub fn single_bin_dft(
    signal: &[f64],
    dt: f64,
    omega: f64,
    periods: usize,
) -> Result<Complex64, SysidError> {
    if !(omega > 0.0) || !(dt > 0.0) || periods < 1 {
        return Err(SysidError::InvalidPlan(
            "extraction needs positive dt, omega, and period count".into(),
        ));
    }
    let n = (periods as f64 * std::f64::consts::TAU / (omega * dt)).round() as usize;
    if n < 2 || signal.len() < n {
        return Err(SysidError::WindowTooShort {
            needed: n.max(2),
            available: signal.len(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, &x) in signal[..n].iter().enumerate() {
        let (s, c) = (omega * k as f64 * dt).sin_cos();
        acc += x * Complex64::new(c, -s);
    }
    // (2/N) sum x e^{-jwt} turns A sin into A e^{-j pi/2}; rotate so sin -> 0
    Ok(Complex64::new(0.0, 1.0) * acc * (2.0 / n as f64))
}

// ---------------------------------------------------------------------------
// measurement

/// Integration step rule for measurement runs: fine enough for the fastest
/// branch and for the excitation period, capped at the default sim step.
fn measurement_step(params: &SmgParams, period: f64) -> (f64, usize) {
    let dt_target = (5e-5f64).min(params.min_time_constant() / 20.0);
    let samples_per_period = ((period / dt_target).ceil() as usize).max(64);
    (period / samples_per_period as f64, samples_per_period)
}

/// Measures the bus impedance at one frequency: simulate with a sinusoidal
/// current injected at the bus from t = 0, discard the settle periods, and
/// take the ratio of the spectral lines of bus voltage and injected current.
pub fn measure_point(
    params: &SmgParams,
    base_p_load: f64,
    plan: &SweepPlan,
    omega: f64,
    secondary: &SecondaryControl,
) -> Result<FreqSample, SysidError> {
    plan.validate()?;
    let mut params = params.clone();
    params.p_load_base = base_p_load;

    let period = std::f64::consts::TAU / omega;
    let measure_periods = if plan.min_measure_time > 0.0 {
        plan.measure_periods
            .max((plan.min_measure_time / period).ceil() as usize)
    } else {
        plan.measure_periods
    };
    let (dt, samples_per_period) = measurement_step(&params, period);
    let t_end = (plan.settle_periods + measure_periods) as f64 * period;

    let schedule = DisturbanceSchedule {
        load_steps: Vec::new(),
        perturbation: Some(Perturbation {
            amplitude: plan.amplitude,
            omega,
            start: 0.0,
        }),
        t_end,
    };
    let (initial, integrator0) = measurement_start(&params, base_p_load, secondary)?;
    let traj = simulate_from(&params, initial, integrator0, &schedule, secondary, dt)?;

    let start = plan.settle_periods * samples_per_period;
    let n = measure_periods * samples_per_period;
    if traj.len() < start + n {
        return Err(SysidError::NumericalFailure(
            "trajectory shorter than the planned extraction window".into(),
        ));
    }
    let window = &traj.v_bus()[start..start + n];
    let mean = window.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = window.iter().map(|v| v - mean).collect();
    let v_hat = single_bin_dft(&centered, dt, omega, measure_periods)?;

    let injected: Vec<f64> = (0..n)
        .map(|k| plan.amplitude * (omega * ((start + k) as f64) * dt).sin())
        .collect();
    let i_hat = single_bin_dft(&injected, dt, omega, measure_periods)?;

    // integer-period means cancel the tone, exposing any residual transient
    let half = measure_periods / 2;
    if half >= 1 {
        let seg = half * samples_per_period;
        let first = window[..seg].iter().sum::<f64>() / seg as f64;
        let last = window[n - seg..].iter().sum::<f64>() / seg as f64;
        let drift = (last - first).abs();
        if drift > 0.05 * v_hat.norm() {
            return Err(SysidError::NotSettled {
                omega,
                drift,
                response: v_hat.norm(),
            });
        }
    }

    Ok(FreqSample {
        omega,
        value: v_hat / i_hat,
    })
}

/// Initial state for a measurement run: the open-loop equilibrium, or the
/// restored operating point when secondary control is active (bus at the
/// target, droop currents sharing the load through the integrator offset).
fn measurement_start(
    params: &SmgParams,
    base_p_load: f64,
    secondary: &SecondaryControl,
) -> Result<(SystemState, f64), SysidError> {
    if !secondary.enabled {
        let eq = solve_equilibrium(params, base_p_load)?;
        return Ok((eq.state(), 0.0));
    }
    let target = secondary.target.unwrap_or(params.v_n);
    let g = params.droop_conductance();
    if !(g > 0.0) {
        return Err(SysidError::InvalidPlan(
            "secondary-controlled measurement needs at least one droop branch".into(),
        ));
    }
    let offset = target - params.v_ref + base_p_load / (target * g);
    let mut i = Vec::with_capacity(params.branches.len());
    let mut v_z = Vec::new();
    for b in &params.branches {
        if b.is_integral_droop() {
            i.push(0.0);
            v_z.push(params.v_ref - target);
        } else {
            i.push((params.v_ref + offset - target) / b.total_resistance());
        }
    }
    Ok((
        SystemState {
            v_bus: target,
            i,
            v_z,
        },
        offset,
    ))
}

/// Runs the full sweep; frequency points simulate in parallel and the
/// result keeps the plan's frequency order. The first failing frequency
/// (in plan order) aborts the sweep.
pub fn measure_frequency_response(
    params: &SmgParams,
    base_p_load: f64,
    plan: &SweepPlan,
    secondary: &SecondaryControl,
) -> Result<Vec<FreqSample>, SysidError> {
    plan.validate()?;
    params.validate()?;
    let results: Vec<Result<FreqSample, SysidError>> = plan
        .frequencies
        .par_iter()
        .map(|&omega| measure_point(params, base_p_load, plan, omega, secondary))
        .collect();
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// rational fitting

/// Row weighting of the fit's least-squares system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    /// Rows scaled by 1/|sample|, balancing wide dynamic ranges.
    InverseMagnitude,
}

/// Fitting iterations used by [`identify_zbus`].
pub const DEFAULT_MAX_ITERATIONS: usize = 25;

/// Relative pole displacement below which the relocation loop stops.
const POLE_SETTLE_TOL: f64 = 1e-6;

/// Compressed pole set: real poles plus the positive-imaginary member of
/// each conjugate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
enum PoleGroup {
    Real(f64),
    Pair(Complex64),
}

impl PoleGroup {
    fn as_complex(self) -> Complex64 {
        match self {
            PoleGroup::Real(p) => Complex64::new(p, 0.0),
            PoleGroup::Pair(p) => p,
        }
    }

    fn basis_width(self) -> usize {
        match self {
            PoleGroup::Real(_) => 1,
            PoleGroup::Pair(_) => 2,
        }
    }
}

fn group_count(groups: &[PoleGroup]) -> usize {
    groups.iter().map(|g| g.basis_width()).sum()
}

/// Starting poles: order/2 conjugate pairs with imaginary parts log-spaced
/// over the sampled band and real parts a hundredth of that, plus one real
/// pole at the low edge for odd orders.
fn init_groups(order: usize, omega_min: f64, omega_max: f64) -> Vec<PoleGroup> {
    let pairs = order / 2;
    let mut groups = Vec::with_capacity(pairs + order % 2);
    if pairs == 1 {
        let im = (omega_min * omega_max).sqrt();
        groups.push(PoleGroup::Pair(Complex64::new(-im / 100.0, im)));
    } else if pairs > 1 {
        for im in log_grid(omega_min, omega_max, pairs) {
            groups.push(PoleGroup::Pair(Complex64::new(-im / 100.0, im)));
        }
    }
    if order % 2 == 1 {
        groups.push(PoleGroup::Real(-omega_min));
    }
    sort_groups(&mut groups);
    groups
}

fn sort_groups(groups: &mut [PoleGroup]) {
    groups.sort_by(|a, b| {
        let (za, zb) = (a.as_complex(), b.as_complex());
        za.im.total_cmp(&zb.im).then(za.re.total_cmp(&zb.re))
    });
}

/// Pairs up a raw eigenvalue set into the compressed representation,
/// averaging conjugate partners and forcing lone complex values onto the
/// upper half-plane.
fn canonical_groups(raw: &[Complex64]) -> Vec<PoleGroup> {
    let mut sorted: Vec<Complex64> = raw.to_vec();
    sorted.sort_by(|a, b| {
        a.im.abs()
            .total_cmp(&b.im.abs())
            .then(a.re.total_cmp(&b.re))
    });
    let mut used = vec![false; sorted.len()];
    let mut out = Vec::new();
    for i in 0..sorted.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let p = sorted[i];
        if p.im.abs() < 1e-9 * p.norm().max(1.0) {
            out.push(PoleGroup::Real(p.re));
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, &q) in sorted.iter().enumerate().skip(i + 1) {
            if used[j] {
                continue;
            }
            let d = (p.conj() - q).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) if d < 1e-6 * p.norm().max(1.0) => {
                used[j] = true;
                let q = sorted[j];
                out.push(PoleGroup::Pair(Complex64::new(
                    0.5 * (p.re + q.re),
                    0.5 * (p.im.abs() + q.im.abs()),
                )));
            }
            _ => out.push(PoleGroup::Pair(Complex64::new(p.re, p.im.abs()))),
        }
    }
    sort_groups(&mut out);
    out
}

/// Largest relative displacement between two compressed pole sets.
fn pole_displacement(old: &[PoleGroup], new: &[PoleGroup]) -> f64 {
    if old.len() != new.len() {
        return f64::INFINITY;
    }
    old.iter()
        .zip(new)
        .map(|(a, b)| {
            let (za, zb) = (a.as_complex(), b.as_complex());
            (zb - za).norm() / za.norm().max(1e-300)
        })
        .fold(0.0f64, f64::max)
}

/// Complex values of the real-coefficient basis functions at `s`: real pole
/// `1/(s-p)`; pair `1/(s-p) + 1/(s-conj p)` and `j/(s-p) - j/(s-conj p)`.
fn basis_row(groups: &[PoleGroup], s: Complex64, out: &mut Vec<Complex64>) {
    out.clear();
    for g in groups {
        match *g {
            PoleGroup::Real(p) => out.push(1.0 / (s - p)),
            PoleGroup::Pair(p) => {
                let a = 1.0 / (s - p);
                let b = 1.0 / (s - p.conj());
                out.push(a + b);
                out.push(Complex64::new(0.0, 1.0) * (a - b));
            }
        }
    }
}

fn row_weights(samples: &[FreqSample], weighting: Weighting) -> Vec<f64> {
    samples
        .iter()
        .map(|smp| match weighting {
            Weighting::Uniform => 1.0,
            Weighting::InverseMagnitude => 1.0 / smp.value.norm().max(1e-300),
        })
        .collect()
}

/// Column-scaled least squares `a x = rhs`, solved through a truncated SVD
/// with the customary machine-precision cutoff. The pole-relocation system
/// is legitimately rank deficient on noise-free rational data, so only
/// callers that expect full rank treat a truncated direction as an error.
fn solve_scaled_ls(
    a: DMatrix<f64>,
    rhs: DVector<f64>,
    reject_singular: bool,
) -> Result<DVector<f64>, SysidError> {
    let (nrows, ncols) = a.shape();
    let mut scales = vec![1.0f64; ncols];
    let mut scaled = a;
    for (j, scale) in scales.iter_mut().enumerate() {
        let norm = scaled.column(j).norm();
        if norm > 0.0 {
            *scale = norm;
            scaled.column_mut(j).unscale_mut(norm);
        }
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(smax > 0.0) {
        return Err(SysidError::RankDeficient);
    }
    let cutoff = f64::EPSILON * nrows.max(ncols) as f64 * smax;
    if reject_singular && smin < cutoff {
        return Err(SysidError::RankDeficient);
    }
    let x = svd
        .solve(&rhs, cutoff)
        .map_err(|e| SysidError::NumericalFailure(e.into()))?;
    Ok(DVector::from_iterator(
        ncols,
        x.iter().zip(&scales).map(|(v, s)| v / s),
    ))
}

/// One relocation step: fit the scaling function's residues along with a
/// provisional model, then move the poles to the scaling function's zeros
/// and reflect any unstable ones.
fn relocate_poles(
    samples: &[FreqSample],
    groups: &[PoleGroup],
    weighting: Weighting,
) -> Result<Vec<PoleGroup>, SysidError> {
    let nb = group_count(groups);
    let m = samples.len();
    let w = row_weights(samples, weighting);

    let mut a = DMatrix::<f64>::zeros(2 * m, 2 * nb + 2);
    let mut rhs = DVector::<f64>::zeros(2 * m);
    let mut row = Vec::with_capacity(nb);
    for (i, smp) in samples.iter().enumerate() {
        let s = Complex64::new(0.0, smp.omega);
        basis_row(groups, s, &mut row);
        for (j, &phi) in row.iter().enumerate() {
            a[(i, j)] = phi.re * w[i];
            a[(m + i, j)] = phi.im * w[i];
            let sig = -smp.value * phi;
            a[(i, nb + 2 + j)] = sig.re * w[i];
            a[(m + i, nb + 2 + j)] = sig.im * w[i];
        }
        a[(i, nb)] = w[i];
        a[(m + i, nb)] = 0.0;
        a[(i, nb + 1)] = 0.0;
        a[(m + i, nb + 1)] = smp.omega * w[i];
        rhs[i] = smp.value.re * w[i];
        rhs[m + i] = smp.value.im * w[i];
    }
    let x = solve_scaled_ls(a, rhs, false)?;
    let c_sigma = x.rows(nb + 2, nb);

    // zeros of the scaling function: eigenvalues of A_p - b c_sigma^T
    let mut h = DMatrix::<f64>::zeros(nb, nb);
    let mut b = DVector::<f64>::zeros(nb);
    let mut k = 0;
    for g in groups {
        match *g {
            PoleGroup::Real(p) => {
                h[(k, k)] = p;
                b[k] = 1.0;
                k += 1;
            }
            PoleGroup::Pair(p) => {
                h[(k, k)] = p.re;
                h[(k, k + 1)] = p.im;
                h[(k + 1, k)] = -p.im;
                h[(k + 1, k + 1)] = p.re;
                b[k] = 2.0;
                k += 2;
            }
        }
    }
    for i in 0..nb {
        for j in 0..nb {
            h[(i, j)] -= b[i] * c_sigma[j];
        }
    }
    let relocated: Vec<Complex64> = h
        .complex_eigenvalues()
        .iter()
        .map(|&z| {
            if z.re > 0.0 {
                Complex64::new(-z.re, z.im)
            } else if z.re == 0.0 {
                // nudge an exactly marginal zero into the stable half-plane
                Complex64::new(-1e-9 * z.norm().max(1.0), z.im)
            } else {
                z
            }
        })
        .collect();
    Ok(canonical_groups(&relocated))
}

struct FixedPoleFit {
    poles: Vec<Complex64>,
    residues: Vec<Complex64>,
    d: f64,
    e: f64,
    rel_rms_error: f64,
}

/// Least-squares residues, D, and E for a frozen pole set, with the
/// unweighted relative RMS misfit of the resulting model.
fn fixed_pole_fit(
    samples: &[FreqSample],
    groups: &[PoleGroup],
    weighting: Weighting,
) -> Result<FixedPoleFit, SysidError> {
    let nb = group_count(groups);
    let m = samples.len();
    let w = row_weights(samples, weighting);

    let mut a = DMatrix::<f64>::zeros(2 * m, nb + 2);
    let mut rhs = DVector::<f64>::zeros(2 * m);
    let mut rows = Vec::with_capacity(m);
    let mut row = Vec::with_capacity(nb);
    for (i, smp) in samples.iter().enumerate() {
        let s = Complex64::new(0.0, smp.omega);
        basis_row(groups, s, &mut row);
        for (j, &phi) in row.iter().enumerate() {
            a[(i, j)] = phi.re * w[i];
            a[(m + i, j)] = phi.im * w[i];
        }
        a[(i, nb)] = w[i];
        a[(m + i, nb + 1)] = smp.omega * w[i];
        rhs[i] = smp.value.re * w[i];
        rhs[m + i] = smp.value.im * w[i];
        rows.push(row.clone());
    }
    let x = solve_scaled_ls(a, rhs, true)?;
    let d = x[nb];
    let e = x[nb + 1];

    let mut poles = Vec::with_capacity(nb);
    let mut residues = Vec::with_capacity(nb);
    let mut k = 0;
    for g in groups {
        match *g {
            PoleGroup::Real(p) => {
                poles.push(Complex64::new(p, 0.0));
                residues.push(Complex64::new(x[k], 0.0));
                k += 1;
            }
            PoleGroup::Pair(p) => {
                let r = Complex64::new(x[k], x[k + 1]);
                poles.push(p);
                residues.push(r);
                poles.push(p.conj());
                residues.push(r.conj());
                k += 2;
            }
        }
    }

    let mut err2 = 0.0;
    let mut ref2 = 0.0;
    for (i, smp) in samples.iter().enumerate() {
        let s = Complex64::new(0.0, smp.omega);
        let mut model = Complex64::new(d, 0.0) + e * s;
        for (j, &phi) in rows[i].iter().enumerate() {
            model += x[j] * phi;
        }
        err2 += (model - smp.value).norm_sqr();
        ref2 += smp.value.norm_sqr();
    }
    Ok(FixedPoleFit {
        poles,
        residues,
        d,
        e,
        rel_rms_error: (err2 / ref2).sqrt(),
    })
}

/// Fits a stable rational model to frequency-response samples by iterative
/// pole relocation, returning the best iterate by relative RMS misfit.
pub fn vector_fit(
    samples: &[FreqSample],
    order: usize,
    max_iterations: usize,
    weighting: Weighting,
) -> Result<FitReport, SysidError> {
    if order < 1 {
        return Err(SysidError::InvalidPlan(
            "fit order must be at least 1".into(),
        ));
    }
    let needed = 2 * order + 2;
    if samples.len() < needed {
        return Err(SysidError::TooFewSamples {
            order,
            needed,
            got: samples.len(),
        });
    }
    let mut omega_min = f64::INFINITY;
    let mut omega_max = 0.0f64;
    for smp in samples {
        if !(smp.omega > 0.0) || !smp.omega.is_finite() || !smp.value.is_finite() {
            return Err(SysidError::InvalidSamples(
                "frequencies must be positive and values finite".into(),
            ));
        }
        omega_min = omega_min.min(smp.omega);
        omega_max = omega_max.max(smp.omega);
    }
    let mut seen: Vec<f64> = samples.iter().map(|s| s.omega).collect();
    seen.sort_by(f64::total_cmp);
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(SysidError::InvalidSamples(
            "duplicate sample frequencies".into(),
        ));
    }

    let mut groups = init_groups(order, omega_min, omega_max);
    let mut best = fixed_pole_fit(samples, &groups, weighting)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    for _ in 0..max_iterations {
        let relocated = relocate_poles(samples, &groups, weighting)?;
        let displacement = pole_displacement(&groups, &relocated);
        history.push(displacement);
        groups = relocated;
        iterations_used += 1;
        let fit = fixed_pole_fit(samples, &groups, weighting)?;
        if fit.rel_rms_error < best.rel_rms_error {
            best = fit;
        }
        if displacement < POLE_SETTLE_TOL {
            converged = true;
            break;
        }
    }

    let tf = RationalTf::new(best.poles, best.residues, best.d, best.e)?;
    Ok(FitReport {
        tf,
        rel_rms_error: best.rel_rms_error,
        iterations_used,
        pole_movement_history: history,
        converged,
    })
}

/// Measurement and fit in one call with the default fitting settings:
/// sweep the plan, then fit `order` poles under inverse-magnitude weighting.
pub fn identify_zbus(
    params: &SmgParams,
    base_p_load: f64,
    plan: &SweepPlan,
    order: usize,
    secondary: &SecondaryControl,
) -> Result<FitReport, SysidError> {
    let samples = measure_frequency_response(params, base_p_load, plan, secondary)?;
    vector_fit(
        &samples,
        order,
        DEFAULT_MAX_ITERATIONS,
        Weighting::InverseMagnitude,
    )
}

// ---------------------------------------------------------------------------
// frequency-response CSV

/// Writes `omega_rad_s,re,im` rows.
pub fn write_freq_csv<W: Write>(samples: &[FreqSample], w: &mut W) -> io::Result<()> {
    writeln!(w, "omega_rad_s,re,im")?;
    for s in samples {
        writeln!(w, "{},{},{}", s.omega, s.value.re, s.value.im)?;
    }
    Ok(())
}

/// Reads `omega_rad_s,re,im` rows, reporting the offending line on failure.
pub fn read_freq_csv<R: BufRead>(r: R) -> Result<Vec<FreqSample>, SysidError> {
    let mut samples = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| SysidError::InvalidSamples(e.to_string()))?;
        let line = line.trim();
        if idx == 0 {
            if line != "omega_rad_s,re,im" {
                return Err(SysidError::InvalidSamples(format!(
                    "line 1: expected header omega_rad_s,re,im, got {line:?}"
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(SysidError::InvalidSamples(format!(
                "line {}: expected 3 comma-separated fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let mut parsed = [0.0f64; 3];
        for (k, field) in fields.iter().enumerate() {
            parsed[k] = field.trim().parse().map_err(|_| {
                SysidError::InvalidSamples(format!("line {}: {field:?} is not a number", idx + 1))
            })?;
        }
        samples.push(FreqSample {
            omega: parsed[0],
            value: Complex64::new(parsed[1], parsed[2]),
        });
    }
    Ok(samples)
}
