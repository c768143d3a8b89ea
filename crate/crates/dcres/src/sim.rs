//! Fixed-step time-domain integration of the microgrid model under a
//! disturbance schedule, with optional secondary voltage restoration and
//! sinusoidal current injection.

use std::io;

use thiserror::Error;

use crate::model::{solve_equilibrium, ModelError, SmgParams, SystemState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid disturbance schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid secondary control: {0}")]
    InvalidSecondary(String),
    #[error(
        "time step {dt} s is too coarse; it must stay below a tenth of the \
         fastest branch time constant ({limit} s)"
    )]
    TimeStepTooCoarse { dt: f64, limit: f64 },
    #[error("bus voltage collapsed to {v_bus} V at t = {time} s")]
    NonPhysicalState { time: f64, v_bus: f64 },
    #[error("window start {from} s leaves no samples before the end of the trajectory")]
    EmptyWindow { from: f64 },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A step change of the constant power load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadStep {
    pub time: f64,
    pub delta_p: f64,
}

/// Sinusoidal current injected into the bus node from `start` onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub amplitude: f64,
    pub omega: f64,
    pub start: f64,
}

impl Perturbation {
    fn current(&self, t: f64) -> f64 {
        if t >= self.start {
            self.amplitude * (self.omega * (t - self.start)).sin()
        } else {
            0.0
        }
    }
}

/// Everything that happens to the system over a run.
#[derive(Debug, Clone, Default)]
pub struct DisturbanceSchedule {
    pub load_steps: Vec<LoadStep>,
    pub perturbation: Option<Perturbation>,
    pub t_end: f64,
}

impl DisturbanceSchedule {
    pub fn quiet(t_end: f64) -> Self {
        Self {
            load_steps: Vec::new(),
            perturbation: None,
            t_end,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(SimError::InvalidSchedule("t_end must be positive".into()));
        }
        let mut prev = -1.0;
        for s in &self.load_steps {
            if !(s.time >= 0.0) || !s.time.is_finite() || !s.delta_p.is_finite() {
                return Err(SimError::InvalidSchedule(
                    "load step times must be non-negative and finite".into(),
                ));
            }
            if s.time <= prev {
                return Err(SimError::InvalidSchedule(
                    "load step times must be strictly increasing".into(),
                ));
            }
            if s.time >= self.t_end {
                return Err(SimError::InvalidSchedule(format!(
                    "load step at {} s is not before t_end = {} s",
                    s.time, self.t_end
                )));
            }
            prev = s.time;
        }
        if let Some(p) = &self.perturbation {
            if !(p.amplitude.is_finite() && p.omega > 0.0 && p.omega.is_finite()) {
                return Err(SimError::InvalidSchedule(
                    "perturbation needs a finite amplitude and a positive frequency".into(),
                ));
            }
            if !(p.start >= 0.0) || p.start >= self.t_end {
                return Err(SimError::InvalidSchedule(
                    "perturbation start must lie inside [0, t_end)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Centralized integral restoration of the bus voltage. When enabled, the
/// integrator state feeds the reference offset of droop branches only.
#[derive(Debug, Clone, Copy, Default)]
pub struct SecondaryControl {
    pub enabled: bool,
    /// Integral gain in 1/s.
    pub k_i: f64,
    /// Restoration target; the nominal voltage when absent.
    pub target: Option<f64>,
}

impl SecondaryControl {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn with_gain(k_i: f64) -> Self {
        Self {
            enabled: true,
            k_i,
            target: None,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.enabled && !(self.k_i > 0.0 && self.k_i.is_finite()) {
            return Err(SimError::InvalidSecondary(
                "k_i must be positive when secondary control is enabled".into(),
            ));
        }
        if let Some(t) = self.target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(SimError::InvalidSecondary("target must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A disturbance event marker attached to a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub time: f64,
    pub label: String,
}

/// Uniformly sampled run record. Columns are stored per signal so metric
/// evaluation can borrow the bus voltage as one contiguous slice.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    branch_ids: Vec<String>,
    v_bus: Vec<f64>,
    i: Vec<Vec<f64>>,
    v_z: Vec<Vec<f64>>,
    p_load: Vec<f64>,
    annotations: Vec<Annotation>,
}

impl Trajectory {
    /// Wraps a bare bus-voltage series (no branch signals) so that metrics
    /// can run on synthetic or externally measured records.
    pub fn from_bus_samples(dt: f64, v_bus: Vec<f64>) -> Result<Self, SimError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::InvalidTrajectory("dt must be positive".into()));
        }
        if v_bus.len() < 2 {
            return Err(SimError::InvalidTrajectory(
                "at least two samples required".into(),
            ));
        }
        let n = v_bus.len();
        Ok(Self {
            dt,
            branch_ids: Vec::new(),
            v_bus,
            i: Vec::new(),
            v_z: Vec::new(),
            p_load: vec![0.0; n],
            annotations: Vec::new(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.v_bus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_bus.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 * self.dt
    }

    /// Nearest sample index for a time, clamped to the trajectory span.
    pub fn index_of_time(&self, t: f64) -> usize {
        let idx = (t / self.dt).round();
        if idx <= 0.0 {
            0
        } else {
            (idx as usize).min(self.len() - 1)
        }
    }

    pub fn v_bus(&self) -> &[f64] {
        &self.v_bus
    }

    pub fn p_load(&self) -> &[f64] {
        &self.p_load
    }

    pub fn branch_ids(&self) -> &[String] {
        &self.branch_ids
    }

    pub fn branch_current(&self, branch: usize) -> &[f64] {
        &self.i[branch]
    }

    pub fn branch_current_by_id(&self, id: &str) -> Option<&[f64]> {
        let k = self.branch_ids.iter().position(|b| b == id)?;
        Some(&self.i[k])
    }

    pub fn state_at(&self, index: usize) -> SystemState {
        SystemState {
            v_bus: self.v_bus[index],
            i: self.i.iter().map(|col| col[index]).collect(),
            v_z: self.v_z.iter().map(|col| col[index]).collect(),
        }
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    /// Writes `t,v_bus,<branch currents by id>,p_load` rows, keeping every
    /// `decimation`-th sample starting from t = 0.
    pub fn write_csv<W: io::Write>(&self, w: &mut W, decimation: usize) -> io::Result<()> {
        let decimation = decimation.max(1);
        write!(w, "t,v_bus")?;
        for id in &self.branch_ids {
            write!(w, ",i_{id}")?;
        }
        writeln!(w, ",p_load")?;
        for n in (0..self.len()).step_by(decimation) {
            write!(w, "{},{}", self.time_at(n), self.v_bus[n])?;
            for col in &self.i {
                write!(w, ",{}", col[n])?;
            }
            writeln!(w, ",{}", self.p_load[n])?;
        }
        Ok(())
    }
}

/// Mean and spread of the bus voltage over a trailing window.
#[derive(Debug, Clone, Copy)]
pub struct WindowStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WindowStats {
    /// Largest excursion from the window mean.
    pub fn max_deviation(&self) -> f64 {
        (self.max - self.mean).max(self.mean - self.min)
    }
}

/// Statistics of v_bus over `[from, t_end]`.
pub fn steady_window(traj: &Trajectory, from: f64) -> Result<WindowStats, SimError> {
    // tolerate `from` sitting a rounding error above a grid point
    let start = ((from / traj.dt()) - 1e-9).ceil().max(0.0) as usize;
    if start >= traj.len() {
        return Err(SimError::EmptyWindow { from });
    }
    let w = &traj.v_bus()[start..];
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in w {
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    Ok(WindowStats {
        mean: sum / w.len() as f64,
        min,
        max,
    })
}

/// Integrates the model from its pre-disturbance equilibrium through the
/// schedule with classical fixed-step 4th-order Runge-Kutta.
///
/// Load steps snap to the nearest sample so the grid stays uniform. When
/// secondary control is enabled its integrator starts at zero and the run
/// begins from the open-loop (droop) equilibrium.
pub fn simulate(
    params: &SmgParams,
    schedule: &DisturbanceSchedule,
    secondary: &SecondaryControl,
    dt: f64,
) -> Result<Trajectory, SimError> {
    let eq = solve_equilibrium(params, params.p_load_base)?;
    simulate_from(params, eq.state(), 0.0, schedule, secondary, dt)
}

/// As [`simulate`], but from an explicit initial state and secondary
/// integrator value. Used to start measurement runs at a closed-loop
/// operating point.
pub(crate) fn simulate_from(
    params: &SmgParams,
    initial: SystemState,
    integrator0: f64,
    schedule: &DisturbanceSchedule,
    secondary: &SecondaryControl,
    dt: f64,
) -> Result<Trajectory, SimError> {
    params.validate()?;
    schedule.validate()?;
    secondary.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::InvalidSchedule("dt must be positive".into()));
    }
    let limit = params.min_time_constant() / 10.0;
    if dt >= limit {
        return Err(SimError::TimeStepTooCoarse { dt, limit });
    }
    if initial.i.len() != params.branches.len()
        || initial.v_z.len() != params.integral_droop_count()
    {
        return Err(SimError::InvalidTrajectory(
            "initial state does not match the branch layout".into(),
        ));
    }

    let n_model = params.state_dim();
    let dim = n_model + usize::from(secondary.enabled);
    let target = secondary.target.unwrap_or(params.v_n);
    let n_steps = (schedule.t_end / dt).round().max(1.0) as usize;

    // load steps by snapped sample index, in schedule order
    let events: Vec<(usize, f64)> = schedule
        .load_steps
        .iter()
        .map(|s| ((s.time / dt).round() as usize, s.delta_p))
        .collect();
    let mut annotations: Vec<Annotation> = events
        .iter()
        .map(|&(idx, dp)| Annotation {
            time: idx as f64 * dt,
            label: format!("load step {dp:+} W"),
        })
        .collect();
    if let Some(p) = &schedule.perturbation {
        annotations.push(Annotation {
            time: p.start,
            label: format!(
                "sinusoidal injection {} A at {} rad/s",
                p.amplitude, p.omega
            ),
        });
    }

    let nb = params.branches.len();
    let nh = params.integral_droop_count();
    let mut v_bus_col = Vec::with_capacity(n_steps + 1);
    let mut i_cols = vec![Vec::with_capacity(n_steps + 1); nb];
    let mut vz_cols = vec![Vec::with_capacity(n_steps + 1); nh];
    let mut p_col = Vec::with_capacity(n_steps + 1);

    let mut x = initial.to_flat();
    if secondary.enabled {
        x.push(integrator0);
    }
    let record =
        |x: &[f64], v_bus_col: &mut Vec<f64>, i_cols: &mut [Vec<f64>], vz_cols: &mut [Vec<f64>]| {
            v_bus_col.push(x[0]);
            for (k, col) in i_cols.iter_mut().enumerate() {
                col.push(x[1 + k]);
            }
            for (h, col) in vz_cols.iter_mut().enumerate() {
                col.push(x[1 + nb + h]);
            }
        };
    record(&x, &mut v_bus_col, &mut i_cols, &mut vz_cols);

    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut xs = vec![0.0; dim];

    let mut next_event = 0;
    let mut p_eff = params.p_load_base;
    for n in 0..=n_steps {
        while next_event < events.len() && events[next_event].0 <= n {
            p_eff += events[next_event].1;
            next_event += 1;
        }
        p_col.push(p_eff);
        if n == n_steps {
            break;
        }
        let t = n as f64 * dt;

        let stage = |t: f64, x: &[f64], out: &mut [f64]| -> Result<(), SimError> {
            let i_inj = schedule.perturbation.as_ref().map_or(0.0, |p| p.current(t));
            let offset = if secondary.enabled { x[n_model] } else { 0.0 };
            params
                .derivative_flat(&x[..n_model], p_eff, i_inj, offset, &mut out[..n_model])
                .map_err(|e| match e {
                    ModelError::NonPhysicalState { v_bus } => {
                        SimError::NonPhysicalState { time: t, v_bus }
                    }
                    other => SimError::Model(other),
                })?;
            if secondary.enabled {
                out[n_model] = secondary.k_i * (target - x[0]);
            }
            Ok(())
        };

        stage(t, &x, &mut k1)?;
        for j in 0..dim {
            xs[j] = x[j] + 0.5 * dt * k1[j];
        }
        stage(t + 0.5 * dt, &xs, &mut k2)?;
        for j in 0..dim {
            xs[j] = x[j] + 0.5 * dt * k2[j];
        }
        stage(t + 0.5 * dt, &xs, &mut k3)?;
        for j in 0..dim {
            xs[j] = x[j] + dt * k3[j];
        }
        stage(t + dt, &xs, &mut k4)?;
        for j in 0..dim {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if !(x[0] > 0.0) {
            return Err(SimError::NonPhysicalState {
                time: t + dt,
                v_bus: x[0],
            });
        }
        record(&x, &mut v_bus_col, &mut i_cols, &mut vz_cols);
    }

    Ok(Trajectory {
        dt,
        branch_ids: params.branches.iter().map(|b| b.id.clone()).collect(),
        v_bus: v_bus_col,
        i: i_cols,
        v_z: vz_cols,
        p_load: p_col,
        annotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BranchParams;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn two_branch_params() -> SmgParams {
        SmgParams {
            branches: vec![
                BranchParams::droop("g", 1e-3, 0.05, 0.05),
                BranchParams::integral_droop("sc", 4e-4, 5.0, 0.05),
            ],
            c_eq: 0.02,
            v_ref: 6000.0,
            v_n: 6000.0,
            p_load_base: 5e6,
        }
    }

    #[test]
    fn equilibrium_start_stays_at_equilibrium() {
        let p = two_branch_params();
        let traj = simulate(
            &p,
            &DisturbanceSchedule::quiet(0.5),
            &SecondaryControl::disabled(),
            2e-5,
        )
        .unwrap();
        let v_star = solve_equilibrium(&p, 5e6).unwrap().v_bus_star;
        for &v in traj.v_bus() {
            assert_abs_diff_eq!(v, v_star, epsilon = 1e-6);
        }
        assert_eq!(traj.len(), 25_001);
        assert_relative_eq!(traj.t_end(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn coarse_time_step_is_rejected() {
        let p = two_branch_params();
        // fastest branch time constant is 8 ms, so 1 ms exceeds a tenth of it
        let err = simulate(
            &p,
            &DisturbanceSchedule::quiet(1.0),
            &SecondaryControl::disabled(),
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::TimeStepTooCoarse { .. }));
    }

    #[test]
    fn schedule_validation_catches_bad_events() {
        let p = two_branch_params();
        let bad_order = DisturbanceSchedule {
            load_steps: vec![
                LoadStep {
                    time: 0.5,
                    delta_p: 1e6,
                },
                LoadStep {
                    time: 0.5,
                    delta_p: 1e6,
                },
            ],
            perturbation: None,
            t_end: 1.0,
        };
        assert!(matches!(
            simulate(&p, &bad_order, &SecondaryControl::disabled(), 2e-5),
            Err(SimError::InvalidSchedule(_))
        ));
        let late_event = DisturbanceSchedule {
            load_steps: vec![LoadStep {
                time: 2.0,
                delta_p: 1e6,
            }],
            perturbation: None,
            t_end: 1.0,
        };
        assert!(matches!(
            simulate(&p, &late_event, &SecondaryControl::disabled(), 2e-5),
            Err(SimError::InvalidSchedule(_))
        ));
    }

    #[test]
    fn load_step_snaps_to_the_sample_grid() {
        let p = two_branch_params();
        let schedule = DisturbanceSchedule {
            load_steps: vec![LoadStep {
                time: 0.01231,
                delta_p: 1e6,
            }],
            perturbation: None,
            t_end: 0.05,
        };
        let dt = 1e-4;
        let traj = simulate(&p, &schedule, &SecondaryControl::disabled(), dt).unwrap();
        // 0.01231 / 1e-4 rounds to sample 123
        assert_eq!(traj.p_load()[122], 5e6);
        assert_eq!(traj.p_load()[123], 6e6);
        assert_relative_eq!(traj.annotations()[0].time, 0.0123, max_relative = 1e-12);
    }

    #[test]
    fn droop_leaves_a_persistent_post_step_deviation() {
        // droop branches only: the bus settles within a few hundred ms,
        // leaving the steady-state statism visible
        let p = SmgParams {
            branches: vec![
                BranchParams::droop("a", 1e-3, 0.05, 0.05),
                BranchParams::droop("b", 1e-3, 0.1, 0.05),
            ],
            c_eq: 0.1,
            v_ref: 6000.0,
            v_n: 6000.0,
            p_load_base: 5e6,
        };
        let schedule = DisturbanceSchedule {
            load_steps: vec![LoadStep {
                time: 0.2,
                delta_p: 2e6,
            }],
            perturbation: None,
            t_end: 2.0,
        };
        let traj = simulate(&p, &schedule, &SecondaryControl::disabled(), 2e-5).unwrap();
        let post = steady_window(&traj, 1.5).unwrap();
        let v_post = solve_equilibrium(&p, 7e6).unwrap().v_bus_star;
        let v_pre = solve_equilibrium(&p, 5e6).unwrap().v_bus_star;
        assert!(post.mean < v_pre - 1.0);
        assert_relative_eq!(post.mean, v_post, max_relative = 1e-6);
        assert!(post.max_deviation() < 1e-3);
    }

    #[test]
    fn secondary_control_restores_the_bus() {
        let p = two_branch_params();
        let schedule = DisturbanceSchedule {
            load_steps: vec![LoadStep {
                time: 0.2,
                delta_p: 2e6,
            }],
            perturbation: None,
            t_end: 5.0,
        };
        let traj = simulate(&p, &schedule, &SecondaryControl::with_gain(5.0), 2e-5).unwrap();
        let tail = steady_window(&traj, 4.5).unwrap();
        assert!((tail.mean - 6000.0).abs() < 0.001 * 6000.0);
        assert!(tail.max_deviation() < 0.5);
    }

    #[test]
    fn window_stats_on_constant_and_sinusoid() {
        let n = 10_001;
        let c = 42.0;
        let constant = Trajectory::from_bus_samples(1e-3, vec![c; n]).unwrap();
        let s = steady_window(&constant, 0.0).unwrap();
        assert_eq!(s.mean, c);
        assert_eq!(s.max_deviation(), 0.0);

        let a = 3.0;
        let v: Vec<f64> = (0..n)
            .map(|k| c + a * (2.0 * std::f64::consts::PI * 1.0 * (k as f64 * 1e-3)).sin())
            .collect();
        let sine = Trajectory::from_bus_samples(1e-3, v).unwrap();
        let s = steady_window(&sine, 0.0).unwrap();
        assert_abs_diff_eq!(s.mean, c, epsilon = 0.02 * a);
        assert_abs_diff_eq!(s.max_deviation(), a, epsilon = 0.02 * a);
    }

    #[test]
    fn window_after_the_end_is_empty() {
        let traj = Trajectory::from_bus_samples(1e-3, vec![1.0; 100]).unwrap();
        assert!(matches!(
            steady_window(&traj, 1.0),
            Err(SimError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn csv_export_writes_decimated_rows() {
        let p = two_branch_params();
        let traj = simulate(
            &p,
            &DisturbanceSchedule::quiet(0.01),
            &SecondaryControl::disabled(),
            1e-4,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, 10).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,v_bus,i_g,i_sc,p_load");
        // 101 samples decimated by 10 keeps indices 0, 10, ..., 100
        assert_eq!(lines.count(), 11);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn voltage_collapse_reports_the_time() {
        let p = SmgParams {
            branches: vec![BranchParams::droop("g", 1e-3, 0.05, 0.05)],
            c_eq: 0.001,
            v_ref: 6000.0,
            v_n: 6000.0,
            p_load_base: 0.0,
        };
        // far beyond the maximum transferable power once applied as a step
        let schedule = DisturbanceSchedule {
            load_steps: vec![LoadStep {
                time: 0.01,
                delta_p: 500e6,
            }],
            perturbation: None,
            t_end: 1.0,
        };
        let err = simulate(&p, &schedule, &SecondaryControl::disabled(), 1e-5).unwrap_err();
        match err {
            SimError::NonPhysicalState { time, .. } => assert!(time >= 0.01),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
