//! Reduced-order microgrid model: parameters, nonlinear bus/branch dynamics,
//! equilibrium computation, and Jacobian linearization.
//!
//! The state vector is laid out as `[v_bus, i_0 .. i_{B-1}, v_z_0 .. v_z_{H-1}]`
//! where `B` is the number of branches (in declaration order) and `H` the
//! number of integral-droop branches (virtual-capacitor voltages, also in
//! declaration order).

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Column indices of [`LinearModel::b`].
pub const INPUT_P_LOAD: usize = 0;
pub const INPUT_I_INJ: usize = 1;
pub const INPUT_V_REF: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-physical state: v_bus = {v_bus} V must be positive")]
    NonPhysicalState { v_bus: f64 },
    #[error("load {p_load} W exceeds the maximum transferable power {p_max} W")]
    Infeasible { p_load: f64, p_max: f64 },
    #[error("equilibrium root finding did not converge")]
    NotConverged,
}

/// Control law of a source branch.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchKind {
    /// Proportional droop `v = v_ref - R * i` (generators, batteries).
    Droop { droop_gain: f64 },
    /// Integral droop `v = v_ref - (1/C_h) * integral(i)` (supercapacitors);
    /// carries zero current in steady state.
    IntegralDroop { virtual_capacitance: f64 },
}

/// One RL source branch feeding the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub id: String,
    pub kind: BranchKind,
    pub inductance: f64,
    pub parasitic_resistance: f64,
}

impl BranchParams {
    pub fn droop(
        id: impl Into<String>,
        inductance: f64,
        droop_gain: f64,
        parasitic_resistance: f64,
    ) -> Self {
        Self {
            id: id.into(),
            kind: BranchKind::Droop { droop_gain },
            inductance,
            parasitic_resistance,
        }
    }

    pub fn integral_droop(
        id: impl Into<String>,
        inductance: f64,
        virtual_capacitance: f64,
        parasitic_resistance: f64,
    ) -> Self {
        Self {
            id: id.into(),
            kind: BranchKind::IntegralDroop {
                virtual_capacitance,
            },
            inductance,
            parasitic_resistance,
        }
    }

    /// Series resistance seen by the branch loop: droop gain plus parasitic
    /// resistance for droop branches, parasitic resistance alone for
    /// integral-droop branches.
    pub fn total_resistance(&self) -> f64 {
        match self.kind {
            BranchKind::Droop { droop_gain } => droop_gain + self.parasitic_resistance,
            BranchKind::IntegralDroop { .. } => self.parasitic_resistance,
        }
    }

    pub fn is_integral_droop(&self) -> bool {
        matches!(self.kind, BranchKind::IntegralDroop { .. })
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::InvalidParams(
                "branch id must not be empty".into(),
            ));
        }
        if !(self.inductance > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "branch {}: inductance must be positive",
                self.id
            )));
        }
        if !(self.parasitic_resistance >= 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "branch {}: parasitic resistance must be non-negative",
                self.id
            )));
        }
        match self.kind {
            BranchKind::Droop { droop_gain } => {
                if !(droop_gain > 0.0) {
                    return Err(ModelError::InvalidParams(format!(
                        "branch {}: droop gain must be positive",
                        self.id
                    )));
                }
            }
            BranchKind::IntegralDroop {
                virtual_capacitance,
            } => {
                if !(virtual_capacitance > 0.0) {
                    return Err(ModelError::InvalidParams(format!(
                        "branch {}: virtual capacitance must be positive",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Full physical and control parameterization of the microgrid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmgParams {
    pub branches: Vec<BranchParams>,
    /// Aggregate DC-link capacitance (the virtual inertia).
    pub c_eq: f64,
    /// Droop voltage reference.
    pub v_ref: f64,
    /// Nominal bus voltage.
    pub v_n: f64,
    /// Pre-disturbance constant power load.
    pub p_load_base: f64,
}

impl SmgParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.branches.is_empty() {
            return Err(ModelError::InvalidParams(
                "at least one branch required".into(),
            ));
        }
        for b in &self.branches {
            b.validate()?;
        }
        for (i, a) in self.branches.iter().enumerate() {
            if self.branches[i + 1..].iter().any(|b| b.id == a.id) {
                return Err(ModelError::InvalidParams(format!(
                    "duplicate branch id {}",
                    a.id
                )));
            }
        }
        if !(self.c_eq > 0.0) {
            return Err(ModelError::InvalidParams("c_eq must be positive".into()));
        }
        if !(self.v_ref > 0.0) {
            return Err(ModelError::InvalidParams("v_ref must be positive".into()));
        }
        if !(self.v_n > 0.0) {
            return Err(ModelError::InvalidParams("v_n must be positive".into()));
        }
        if !(self.p_load_base >= 0.0) {
            return Err(ModelError::InvalidParams(
                "p_load_base must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn integral_droop_count(&self) -> usize {
        self.branches
            .iter()
            .filter(|b| b.is_integral_droop())
            .count()
    }

    /// State dimension: bus voltage + one current per branch + one virtual
    /// capacitor voltage per integral-droop branch.
    pub fn state_dim(&self) -> usize {
        1 + self.branches.len() + self.integral_droop_count()
    }

    /// Labels matching the flat state layout.
    pub fn state_labels(&self) -> Vec<String> {
        let mut labels = vec!["v_bus".to_string()];
        labels.extend(self.branches.iter().map(|b| format!("i_{}", b.id)));
        labels.extend(
            self.branches
                .iter()
                .filter(|b| b.is_integral_droop())
                .map(|b| format!("v_z_{}", b.id)),
        );
        labels
    }

    /// Smallest branch L/R time constant; bounds usable integration steps.
    pub fn min_time_constant(&self) -> f64 {
        self.branches
            .iter()
            .map(|b| {
                let r = b.total_resistance();
                if r > 0.0 {
                    b.inductance / r
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Sum of droop conductances `1/R_t` over droop branches.
    pub fn droop_conductance(&self) -> f64 {
        self.branches
            .iter()
            .filter(|b| !b.is_integral_droop())
            .map(|b| 1.0 / b.total_resistance())
            .sum()
    }

    /// Time derivative of the state under the node and loop equations with a
    /// constant power load `p_load / v_bus` drawn from the bus.
    ///
    /// `i_inj` is an extra current injected into the bus node (perturbation
    /// source); `v_ref_offset` shifts the reference of droop branches only
    /// (secondary control actuation).
    pub fn derivative(
        &self,
        state: &SystemState,
        p_load: f64,
        i_inj: f64,
        v_ref_offset: f64,
    ) -> Result<SystemState, ModelError> {
        let x = state.to_flat();
        let mut out = vec![0.0; x.len()];
        self.derivative_flat(&x, p_load, i_inj, v_ref_offset, &mut out)?;
        Ok(SystemState::from_flat(self, &out))
    }

    /// Hot-loop form of [`Self::derivative`] over the flat state layout.
    pub fn derivative_flat(
        &self,
        x: &[f64],
        p_load: f64,
        i_inj: f64,
        v_ref_offset: f64,
        out: &mut [f64],
    ) -> Result<(), ModelError> {
        let v_bus = x[0];
        if !(v_bus > 0.0) {
            return Err(ModelError::NonPhysicalState { v_bus });
        }
        let nb = self.branches.len();
        let mut i_sum = i_inj;
        let mut zi = 1 + nb;
        for (k, br) in self.branches.iter().enumerate() {
            let ik = x[1 + k];
            i_sum += ik;
            let rt = br.total_resistance();
            match br.kind {
                BranchKind::Droop { .. } => {
                    out[1 + k] = (self.v_ref + v_ref_offset - rt * ik - v_bus) / br.inductance;
                }
                BranchKind::IntegralDroop {
                    virtual_capacitance,
                } => {
                    let vz = x[zi];
                    out[1 + k] = (self.v_ref - rt * ik - vz - v_bus) / br.inductance;
                    out[zi] = ik / virtual_capacitance;
                    zi += 1;
                }
            }
        }
        out[0] = (i_sum - p_load / v_bus) / self.c_eq;
        Ok(())
    }
}

/// Instantaneous system state.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub v_bus: f64,
    /// Branch currents, ordered as the branch list.
    pub i: Vec<f64>,
    /// Virtual capacitor voltages, one per integral-droop branch in branch order.
    pub v_z: Vec<f64>,
}

impl SystemState {
    pub fn dim(&self) -> usize {
        1 + self.i.len() + self.v_z.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(self.v_bus);
        x.extend_from_slice(&self.i);
        x.extend_from_slice(&self.v_z);
        x
    }

    pub fn from_flat(params: &SmgParams, x: &[f64]) -> Self {
        let nb = params.branches.len();
        Self {
            v_bus: x[0],
            i: x[1..1 + nb].to_vec(),
            v_z: x[1 + nb..].to_vec(),
        }
    }
}

/// Operating point of the nonlinear model.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub v_bus_star: f64,
    /// Branch currents, zero for integral-droop branches.
    pub i_star: Vec<f64>,
    pub p_load_star: f64,
    /// Virtual capacitor voltages `v_ref - V*`, one per integral-droop branch.
    pub v_z_star: Vec<f64>,
}

impl Equilibrium {
    pub fn state(&self) -> SystemState {
        SystemState {
            v_bus: self.v_bus_star,
            i: self.i_star.clone(),
            v_z: self.v_z_star.clone(),
        }
    }
}

/// Solves the droop power balance `sum_k (v_ref - V)/R_tk = p_load / V` for
/// the high-voltage root (the operationally stable point nearest `v_ref`).
///
/// Newton iteration from `v_ref` with a bisection fallback on
/// `[0.25 v_ref, v_ref]`; converged steps are polished so the residual sits at
/// rounding level.
pub fn solve_equilibrium(params: &SmgParams, p_load: f64) -> Result<Equilibrium, ModelError> {
    params.validate()?;
    if !(p_load >= 0.0) || !p_load.is_finite() {
        return Err(ModelError::InvalidParams(
            "p_load must be non-negative".into(),
        ));
    }
    let v_ref = params.v_ref;
    let g = params.droop_conductance();

    let v_star = if p_load == 0.0 {
        v_ref
    } else {
        let p_max = g * v_ref * v_ref / 4.0;
        if p_load > p_max {
            return Err(ModelError::Infeasible { p_load, p_max });
        }
        // f(V) = sum (v_ref - V)/R_t - p/V, decreasing through the high root
        let f = |v: f64| g * (v_ref - v) - p_load / v;
        let fp = |v: f64| -g + p_load / (v * v);
        let tol = 1e-9 * v_ref;
        let mut v = v_ref;
        let mut newton_ok = false;
        for _ in 0..100 {
            let step = f(v) / fp(v);
            let v_next = v - step;
            if !(v_next > 0.0 && v_next <= v_ref) {
                break;
            }
            let done = step.abs() <= tol;
            v = v_next;
            if done {
                newton_ok = true;
                break;
            }
        }
        if newton_ok {
            // two polishing steps push the residual to rounding level
            for _ in 0..2 {
                v -= f(v) / fp(v);
            }
            v
        } else {
            bisect_high_root(f, 0.25 * v_ref, v_ref, tol)?
        }
    };

    let mut i_star = Vec::with_capacity(params.branches.len());
    let mut v_z_star = Vec::new();
    for b in &params.branches {
        match b.kind {
            BranchKind::Droop { .. } => {
                i_star.push((v_ref - v_star) / b.total_resistance());
            }
            BranchKind::IntegralDroop { .. } => {
                i_star.push(0.0);
                v_z_star.push(v_ref - v_star);
            }
        }
    }
    Ok(Equilibrium {
        v_bus_star: v_star,
        i_star,
        p_load_star: p_load,
        v_z_star,
    })
}

fn bisect_high_root(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<f64, ModelError> {
    let flo = f(lo);
    let fhi = f(hi);
    if !(flo > 0.0 && fhi < 0.0) {
        // bracket does not straddle the high root
        return Err(ModelError::NotConverged);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(ModelError::NotConverged)
}

/// State-space matrices of the model linearized at an equilibrium.
///
/// Inputs are ordered `{delta P_load, delta i_inj, delta v_ref}` (see the
/// `INPUT_*` constants); the single output is `delta v_bus`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_labels: Vec<String>,
}

impl LinearModel {
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn is_stable(&self) -> bool {
        self.eigenvalues().iter().all(|l| l.re < 0.0)
    }

    pub fn max_eigenvalue_re(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Jacobian linearization at `eq`. The constant power load contributes the
/// incremental conductance `+P*/V*^2` on the bus row.
pub fn linearize(params: &SmgParams, eq: &Equilibrium) -> Result<LinearModel, ModelError> {
    params.validate()?;
    let n = params.state_dim();
    let nb = params.branches.len();
    if eq.i_star.len() != nb || eq.v_z_star.len() != params.integral_droop_count() {
        return Err(ModelError::InvalidParams(
            "equilibrium does not match the branch layout".into(),
        ));
    }
    let v_star = eq.v_bus_star;
    if !(v_star > 0.0) {
        return Err(ModelError::NonPhysicalState { v_bus: v_star });
    }

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 3);

    a[(0, 0)] = eq.p_load_star / (v_star * v_star) / params.c_eq;
    b[(0, INPUT_P_LOAD)] = -1.0 / (params.c_eq * v_star);
    b[(0, INPUT_I_INJ)] = 1.0 / params.c_eq;

    let mut zi = 1 + nb;
    for (k, br) in params.branches.iter().enumerate() {
        let row = 1 + k;
        a[(0, row)] = 1.0 / params.c_eq;
        a[(row, 0)] = -1.0 / br.inductance;
        a[(row, row)] = -br.total_resistance() / br.inductance;
        match br.kind {
            BranchKind::Droop { .. } => {
                b[(row, INPUT_V_REF)] = 1.0 / br.inductance;
            }
            BranchKind::IntegralDroop {
                virtual_capacitance,
            } => {
                a[(row, zi)] = -1.0 / br.inductance;
                a[(zi, row)] = 1.0 / virtual_capacitance;
                zi += 1;
            }
        }
    }

    let mut c = DMatrix::zeros(1, n);
    c[(0, 0)] = 1.0;
    let d = DMatrix::zeros(1, 3);

    Ok(LinearModel {
        a,
        b,
        c,
        d,
        state_labels: params.state_labels(),
    })
}
