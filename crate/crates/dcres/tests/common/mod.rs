//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles deliberately avoid the library's own solution paths: the
//! Jacobian comes from finite differences on the nonlinear right-hand side,
//! the H2 norm from direct frequency-domain quadrature, and step responses
//! from an RK4 loop written against the linear matrices.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use dcres::model::{BranchParams, LinearModel, SmgParams};
use dcres::tf::{bode, log_grid, RationalTf};

/// Six-branch benchmark network: four droop sources with staggered gains
/// and two integral-droop storage branches, 6 kV bus.
pub fn benchmark(c_eq: f64) -> SmgParams {
    SmgParams {
        branches: vec![
            BranchParams::droop("sga", 1e-3, 0.05, 0.05),
            BranchParams::droop("sgb", 1e-3, 0.10, 0.05),
            BranchParams::droop("ba", 0.8e-3, 0.225, 0.05),
            BranchParams::droop("bb", 0.8e-3, 0.45, 0.05),
            BranchParams::integral_droop("sca", 0.4e-3, 5.0, 0.05),
            BranchParams::integral_droop("scb", 0.4e-3, 10.0, 0.05),
        ],
        c_eq,
        v_ref: 6000.0,
        v_n: 6000.0,
        p_load_base: 5e6,
    }
}

/// Central-difference Jacobian of the nonlinear dynamics with respect to the
/// state, evaluated at `x0`.
pub fn fd_state_jacobian(params: &SmgParams, x0: &[f64], p_load: f64) -> DMatrix<f64> {
    let n = x0.len();
    let mut jac = DMatrix::zeros(n, n);
    let h = 1e-2;
    let mut xp = x0.to_vec();
    let mut xm = x0.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        xp[j] = x0[j] + h;
        xm[j] = x0[j] - h;
        params
            .derivative_flat(&xp, p_load, 0.0, 0.0, &mut fp)
            .unwrap();
        params
            .derivative_flat(&xm, p_load, 0.0, 0.0, &mut fm)
            .unwrap();
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
        xp[j] = x0[j];
        xm[j] = x0[j];
    }
    jac
}

/// Central-difference input Jacobian (columns: load power, injected
/// current, reference offset) at `x0`.
pub fn fd_input_jacobian(params: &SmgParams, x0: &[f64], p_load: f64) -> DMatrix<f64> {
    let n = x0.len();
    let mut jac = DMatrix::zeros(n, 3);
    let steps = [1e3, 1.0, 1e-2];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for (j, h) in steps.iter().enumerate() {
        let up = |k: usize, sign: f64| {
            let mut u = [p_load, 0.0, 0.0];
            u[k] += sign * h;
            u
        };
        let [pl, ii, vo] = up(j, 1.0);
        params.derivative_flat(x0, pl, ii, vo, &mut fp).unwrap();
        let [pl, ii, vo] = up(j, -1.0);
        params.derivative_flat(x0, pl, ii, vo, &mut fm).unwrap();
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Random stable transfer function with bounded resonance sharpness, so a
/// dense frequency grid resolves every peak.
pub fn random_stable_tf<R: Rng>(rng: &mut R, strictly_proper: bool) -> RationalTf {
    loop {
        let pairs = rng.random_range(0..=5usize);
        let reals = rng.random_range(0..=2usize);
        if pairs == 0 && reals == 0 {
            continue;
        }
        let mut poles = Vec::new();
        let mut residues = Vec::new();
        for _ in 0..pairs {
            let mag = 10f64.powf(rng.random_range(0.0..3.0));
            let zeta = 10f64.powf(rng.random_range(-1.5..-0.2));
            let p = Complex64::new(-zeta * mag, mag * (1.0 - zeta * zeta).sqrt());
            let rmag = 10f64.powf(rng.random_range(-1.0..2.0));
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let r = Complex64::from_polar(rmag, ang);
            poles.push(p);
            residues.push(r);
            poles.push(p.conj());
            residues.push(r.conj());
        }
        for _ in 0..reals {
            let mag = 10f64.powf(rng.random_range(0.0..3.0));
            let rmag = 10f64.powf(rng.random_range(-1.0..2.0));
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            poles.push(Complex64::new(-mag, 0.0));
            residues.push(Complex64::new(sign * rmag, 0.0));
        }
        let d = if strictly_proper {
            0.0
        } else {
            rng.random_range(-1.0..1.0)
        };
        return RationalTf::new(poles, residues, d, 0.0).unwrap();
    }
}

/// H2 norm by direct quadrature of `sqrt((1/pi) int |G(jw)|^2 dw)` on a
/// dense log grid, with analytic head and tail corrections.
pub fn h2_by_quadrature(tf: &RationalTf) -> f64 {
    let scale_min = tf
        .poles()
        .iter()
        .map(|p| p.norm())
        .fold(f64::INFINITY, f64::min);
    let scale_max = tf.poles().iter().map(|p| p.norm()).fold(0.0f64, f64::max);
    let lo = 1e-6 * scale_min;
    let hi = 1e6 * scale_max;
    let grid = log_grid(lo, hi, 500_001);
    let samples = bode(tf, &grid).unwrap();
    let mut integral = 0.0;
    for k in 1..samples.len() {
        let a = samples[k - 1].value.norm_sqr();
        let b = samples[k].value.norm_sqr();
        integral += 0.5 * (a + b) * (samples[k].omega - samples[k - 1].omega);
    }
    // |G| is flat below the lowest pole and rolls off as |sum r|/w above hi
    integral += samples[0].value.norm_sqr() * lo;
    let rsum: Complex64 = tf.residues().iter().sum();
    integral += rsum.norm_sqr() / hi;
    (integral / std::f64::consts::PI).sqrt()
}

/// Largest gain over a dense log grid, as a lower bound on the true peak.
pub fn dense_grid_peak(tf: &RationalTf, lo: f64, hi: f64, count: usize) -> f64 {
    bode(tf, &log_grid(lo, hi, count))
        .unwrap()
        .iter()
        .map(|s| s.value.norm())
        .fold(0.0f64, f64::max)
}

/// Peak bus-voltage deviation of the linearized model's response to a load
/// step, integrated with RK4 directly on the matrices.
pub fn linear_step_peak(lin: &LinearModel, delta_p: f64, t_end: f64, dt: f64) -> f64 {
    let n = lin.a.nrows();
    let mut x = DVector::<f64>::zeros(n);
    let u = lin.b.column(dcres::model::INPUT_P_LOAD) * delta_p;
    let steps = (t_end / dt).round() as usize;
    let mut peak = 0.0f64;
    for _ in 0..steps {
        let k1 = &lin.a * &x + &u;
        let k2 = &lin.a * (&x + &k1 * (0.5 * dt)) + &u;
        let k3 = &lin.a * (&x + &k2 * (0.5 * dt)) + &u;
        let k4 = &lin.a * (&x + &k3 * dt) + &u;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        peak = peak.max(x[0].abs());
    }
    peak
}
