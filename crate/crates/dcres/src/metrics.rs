//! Time-domain resilience metrics over recorded trajectories: energy
//! imbalance of the bus voltage, voltage nadir, and rate of change of
//! voltage (RoCoV).

use thiserror::Error;

use crate::sim::Trajectory;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("integration window out of range: {0}")]
    WindowOutOfRange(String),
    #[error("no samples at or after t = {after} s")]
    EmptyWindow { after: f64 },
    #[error("smooth window must be at least one sample")]
    InvalidSmoothWindow,
}

/// Reference against which the squared bus-voltage deviation is integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviationMode {
    /// Deviation from a fixed nominal voltage.
    FromNominal { v_n: f64 },
    /// Deviation from the mean bus voltage over `[0, tau1]`.
    FromPredisturbance,
    /// No reference; integrates the squared raw signal.
    Raw,
}

/// Trapezoidal integral of the squared deviation of v_bus over `[tau1, tau2]`.
///
/// The window bounds snap to the nearest sample, which absorbs the rounding
/// error of times that are not exactly representable on the grid.
pub fn energy_imbalance(
    traj: &Trajectory,
    tau1: f64,
    tau2: f64,
    mode: DeviationMode,
) -> Result<f64, MetricsError> {
    let (i1, i2) = window_indices(traj, tau1, tau2)?;
    let reference = match mode {
        DeviationMode::FromNominal { v_n } => v_n,
        DeviationMode::Raw => 0.0,
        DeviationMode::FromPredisturbance => {
            let pre = &traj.v_bus()[..=i1];
            pre.iter().sum::<f64>() / pre.len() as f64
        }
    };
    let v = traj.v_bus();
    let sq = |n: usize| {
        let d = v[n] - reference;
        d * d
    };
    let mut acc = 0.5 * (sq(i1) + sq(i2));
    for n in i1 + 1..i2 {
        acc += sq(n);
    }
    Ok(acc * traj.dt())
}

fn window_indices(traj: &Trajectory, tau1: f64, tau2: f64) -> Result<(usize, usize), MetricsError> {
    if !(tau1 < tau2) {
        return Err(MetricsError::WindowOutOfRange(format!(
            "tau1 = {tau1} s must precede tau2 = {tau2} s"
        )));
    }
    let dt = traj.dt();
    let last = (traj.len() - 1) as f64;
    let r1 = tau1 / dt;
    let r2 = tau2 / dt;
    if r1 < -1e-6 || r2 > last + 1e-6 {
        return Err(MetricsError::WindowOutOfRange(format!(
            "[{tau1}, {tau2}] s exceeds the trajectory span [0, {}] s",
            traj.t_end()
        )));
    }
    let i1 = r1.round().max(0.0) as usize;
    let i2 = (r2.round() as usize).min(traj.len() - 1);
    if i1 >= i2 {
        return Err(MetricsError::WindowOutOfRange(
            "window covers fewer than two samples".into(),
        ));
    }
    Ok((i1, i2))
}

/// Minimum bus voltage over `t >= after`.
pub fn nadir(traj: &Trajectory, after: f64) -> Result<f64, MetricsError> {
    let start = start_index(traj, after)?;
    Ok(traj.v_bus()[start..]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Maximum |dv_bus/dt| over `t >= after`, estimated by central differences
/// of the moving-average-smoothed voltage.
///
/// The smoothing window is centered and truncated at the record edges; an
/// even `smooth_window` is widened to the next odd length.
pub fn rocov(traj: &Trajectory, after: f64, smooth_window: usize) -> Result<f64, MetricsError> {
    if smooth_window < 1 {
        return Err(MetricsError::InvalidSmoothWindow);
    }
    let start = start_index(traj, after)?.max(1);
    let n = traj.len();
    if start > n - 2 {
        return Err(MetricsError::EmptyWindow { after });
    }
    let s = moving_average(traj.v_bus(), smooth_window / 2);
    let two_dt = 2.0 * traj.dt();
    let mut peak = 0.0f64;
    for k in start..n - 1 {
        peak = peak.max(((s[k + 1] - s[k - 1]) / two_dt).abs());
    }
    Ok(peak)
}

fn start_index(traj: &Trajectory, after: f64) -> Result<usize, MetricsError> {
    let idx = ((after / traj.dt()) - 1e-9).ceil().max(0.0) as usize;
    if idx >= traj.len() {
        return Err(MetricsError::EmptyWindow { after });
    }
    Ok(idx)
}

fn moving_average(v: &[f64], half: usize) -> Vec<f64> {
    if half == 0 {
        return v.to_vec();
    }
    let n = v.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(n - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// All time-domain metrics of one scenario, with slots for the
/// frequency-domain norms filled in by downstream analysis.
#[derive(Debug, Clone, Default)]
pub struct ResilienceReport {
    pub scenario: String,
    pub e_v: f64,
    pub nadir: f64,
    pub rocov: f64,
    pub h2_zbus: Option<f64>,
    pub hinf_zbus: Option<f64>,
    pub h2_gpv: Option<f64>,
    pub hinf_gpv: Option<f64>,
}
