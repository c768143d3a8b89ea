//! Rational transfer functions in pole-residue form, closed-form bus
//! impedance and load-to-voltage responses, extraction from state-space
//! models, and H2/H-infinity norms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::model::{Equilibrium, LinearModel, SmgParams, INPUT_I_INJ, INPUT_P_LOAD};

#[derive(Debug, Error)]
pub enum TfError {
    #[error("jw = {omega} rad/s coincides with a pole")]
    PoleOnAxis { omega: f64 },
    #[error("transfer function has a pole with real part {max_re} >= 0")]
    UnstablePoles { max_re: f64 },
    #[error("model is unstable: fastest-growing mode has real part {max_re} >= 0")]
    UnstableModel { max_re: f64 },
    #[error("feedthrough (D = {d}, E = {e}) makes the impulse response energy infinite")]
    ImproperTf { d: f64, e: f64 },
    #[error("the s-proportional term E = {e} makes the magnitude unbounded")]
    Unbounded { e: f64 },
    #[error("eigenvector matrix condition number {cond:.3e} exceeds 1e10; modes are too close to defective")]
    DefectiveMatrix { cond: f64 },
    #[error("poles and residues are not closed under conjugation: {0}")]
    NotConjugateClosed(String),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Default magnitude-scan band and density shared by the norm routines.
const SCAN_MIN: f64 = 1e-3;
const SCAN_MAX: f64 = 1e7;
const SCAN_POINTS: usize = 2000;

/// Band over which closed-form and state-space responses are compared.
const CHECK_MIN: f64 = 1e-1;
const CHECK_MAX: f64 = 1e6;
const CHECK_POINTS: usize = 200;

/// Strictly increasing logarithmically spaced grid, `min` and `max` included.
pub fn log_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    assert!(min > 0.0 && max > min && count >= 2, "degenerate log grid");
    let l0 = min.ln();
    let l1 = max.ln();
    (0..count)
        .map(|k| (l0 + (l1 - l0) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// One point of a frequency response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqSample {
    pub omega: f64,
    pub value: Complex64,
}

impl FreqSample {
    pub fn mag(&self) -> f64 {
        self.value.norm()
    }

    pub fn mag_db(&self) -> f64 {
        20.0 * self.mag().log10()
    }

    pub fn phase_deg(&self) -> f64 {
        self.value.arg().to_degrees()
    }
}

/// Partial-fraction transfer function `sum R_i/(s - p_i) + D + s E`.
///
/// Poles and residues are kept closed under conjugation and in a canonical
/// order (ascending |Im|, then real part; conjugate partners adjacent with
/// the positive-imaginary member first), so equal systems compare equal and
/// downstream realizations are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalTf {
    poles: Vec<Complex64>,
    residues: Vec<Complex64>,
    d: f64,
    e: f64,
}

/// Relative imaginary part below which a pole counts as real.
const REAL_POLE_TOL: f64 = 1e-9;
/// Relative mismatch allowed when pairing conjugate poles and residues.
const CONJ_MATCH_TOL: f64 = 1e-6;

impl RationalTf {
    /// Builds a transfer function, pairing conjugate poles, symmetrizing
    /// them exactly, and sorting into the canonical order.
    pub fn new(
        poles: Vec<Complex64>,
        residues: Vec<Complex64>,
        d: f64,
        e: f64,
    ) -> Result<Self, TfError> {
        if poles.len() != residues.len() {
            return Err(TfError::NotConjugateClosed(
                "pole and residue counts differ".into(),
            ));
        }
        let res_scale = residues
            .iter()
            .map(|r| r.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);

        let mut reals: Vec<(f64, f64)> = Vec::new();
        let mut pos: Vec<(Complex64, Complex64)> = Vec::new();
        let mut neg: Vec<(Complex64, Complex64)> = Vec::new();
        for (p, r) in poles.into_iter().zip(residues) {
            if p.im.abs() <= REAL_POLE_TOL * (1.0 + p.norm()) {
                if r.im.abs() > CONJ_MATCH_TOL * (r.norm() + res_scale) {
                    return Err(TfError::NotConjugateClosed(format!(
                        "real pole {p} carries the complex residue {r}"
                    )));
                }
                reals.push((p.re, r.re));
            } else if p.im > 0.0 {
                pos.push((p, r));
            } else {
                neg.push((p, r));
            }
        }
        if pos.len() != neg.len() {
            return Err(TfError::NotConjugateClosed(format!(
                "{} poles above the real axis vs {} below",
                pos.len(),
                neg.len()
            )));
        }

        let mut pairs: Vec<(Complex64, Complex64)> = Vec::new();
        for (p, r) in pos {
            let best = neg
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 .0 - p.conj())
                        .norm()
                        .total_cmp(&(b.1 .0 - p.conj()).norm())
                })
                .map(|(k, _)| k)
                .ok_or_else(|| TfError::NotConjugateClosed(format!("no partner for pole {p}")))?;
            let (pc, rc) = neg.swap_remove(best);
            if (pc - p.conj()).norm() > CONJ_MATCH_TOL * (1.0 + p.norm()) {
                return Err(TfError::NotConjugateClosed(format!(
                    "pole {p} has no conjugate partner (nearest is {pc})"
                )));
            }
            if (rc - r.conj()).norm() > CONJ_MATCH_TOL * (r.norm() + rc.norm() + res_scale) {
                return Err(TfError::NotConjugateClosed(format!(
                    "residues {r} and {rc} of a conjugate pole pair do not mirror"
                )));
            }
            let p_avg = 0.5 * (p + pc.conj());
            let r_avg = 0.5 * (r + rc.conj());
            pairs.push((p_avg, r_avg));
        }

        reals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs.sort_by(|a, b| a.0.im.total_cmp(&b.0.im).then(a.0.re.total_cmp(&b.0.re)));

        let mut out_p = Vec::new();
        let mut out_r = Vec::new();
        for (p, r) in reals {
            out_p.push(Complex64::new(p, 0.0));
            out_r.push(Complex64::new(r, 0.0));
        }
        for (p, r) in pairs {
            out_p.push(p);
            out_r.push(r);
            out_p.push(p.conj());
            out_r.push(r.conj());
        }
        Ok(Self {
            poles: out_p,
            residues: out_r,
            d,
            e,
        })
    }

    pub fn constant(d: f64) -> Self {
        Self {
            poles: Vec::new(),
            residues: Vec::new(),
            d,
            e: 0.0,
        }
    }

    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn residues(&self) -> &[Complex64] {
        &self.residues
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    pub fn max_pole_re(&self) -> f64 {
        self.poles
            .iter()
            .map(|p| p.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|p| p.re < 0.0)
    }

    /// Same poles and residues with the constant and s-proportional terms
    /// dropped.
    pub fn strictly_proper_part(&self) -> Self {
        Self {
            poles: self.poles.clone(),
            residues: self.residues.clone(),
            d: 0.0,
            e: 0.0,
        }
    }

    /// The transfer function multiplied by a real scalar.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            poles: self.poles.clone(),
            residues: self.residues.iter().map(|r| k * r).collect(),
            d: k * self.d,
            e: k * self.e,
        }
    }

    pub(crate) fn eval_complex(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(self.d, 0.0) + self.e * s;
        for (p, r) in self.poles.iter().zip(&self.residues) {
            acc += r / (s - p);
        }
        acc
    }
}

/// `G(jw)` by direct partial-fraction summation.
pub fn evaluate(tf: &RationalTf, omega: f64) -> Result<Complex64, TfError> {
    let s = Complex64::new(0.0, omega);
    for p in tf.poles() {
        if (s - p).norm() <= 1e-14 * (1.0 + p.norm()) {
            return Err(TfError::PoleOnAxis { omega });
        }
    }
    Ok(tf.eval_complex(s))
}

/// Frequency response over a positive, strictly increasing grid.
pub fn bode(tf: &RationalTf, grid: &[f64]) -> Result<Vec<FreqSample>, TfError> {
    if grid.is_empty() {
        return Err(TfError::InvalidGrid("empty grid".into()));
    }
    let mut prev = 0.0;
    for &w in grid {
        if !(w > prev) || !w.is_finite() {
            return Err(TfError::InvalidGrid(
                "grid must be positive, finite, and strictly increasing".into(),
            ));
        }
        prev = w;
    }
    grid.iter()
        .map(|&omega| evaluate(tf, omega).map(|value| FreqSample { omega, value }))
        .collect()
}

// ---------------------------------------------------------------------------
// closed-form constructions

/// Real polynomial with ascending coefficients.
#[derive(Debug, Clone)]
struct Poly(Vec<f64>);

impl Poly {
    fn one() -> Self {
        Poly(vec![1.0])
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn add_scaled(&mut self, other: &Poly, k: f64) {
        if other.0.len() > self.0.len() {
            self.0.resize(other.0.len(), 0.0);
        }
        for (o, b) in self.0.iter_mut().zip(&other.0) {
            *o += k * b;
        }
    }

    fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(
            self.0[1..]
                .iter()
                .enumerate()
                .map(|(k, c)| (k + 1) as f64 * c)
                .collect(),
        )
    }

    fn eval(&self, s: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in self.0.iter().rev() {
            acc = acc * s + c;
        }
        acc
    }

    /// Roots as eigenvalues of the companion matrix of the monic polynomial.
    fn roots(&self) -> Result<Vec<Complex64>, TfError> {
        let n = self.0.len() - 1;
        if n == 0 {
            return Ok(Vec::new());
        }
        let lead = self.0[n];
        if lead == 0.0 {
            return Err(TfError::NumericalFailure(
                "polynomial leading coefficient is zero".into(),
            ));
        }
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -self.0[i] / lead;
        }
        Ok(m.complex_eigenvalues().iter().copied().collect())
    }
}

fn branch_admittance_factor(b: &crate::model::BranchParams) -> Poly {
    match b.kind {
        // denominator of 1/(L s + R_t)
        crate::model::BranchKind::Droop { .. } => Poly(vec![b.total_resistance(), b.inductance]),
        // denominator of C s/(L C s^2 + r C s + 1)
        crate::model::BranchKind::IntegralDroop {
            virtual_capacitance,
        } => Poly(vec![
            1.0,
            b.parasitic_resistance * virtual_capacitance,
            b.inductance * virtual_capacitance,
        ]),
    }
}

/// Bus impedance seen from a current source at the DC link:
/// `Z_bus = 1 / (sum of branch admittances + C_eq s - P*/V*^2)`.
///
/// Built as a ratio of real polynomials over the common denominator of the
/// branch admittances, then converted to pole-residue form through the
/// companion-matrix roots of the denominator.
pub fn analytic_zbus(params: &SmgParams, eq: &Equilibrium) -> Result<RationalTf, TfError> {
    params
        .validate()
        .map_err(|e| TfError::NumericalFailure(e.to_string()))?;
    let v_star = eq.v_bus_star;
    let g_cpl = eq.p_load_star / (v_star * v_star);

    // q = product of admittance denominators, so z_bus = q / n
    let mut q = Poly::one();
    for b in &params.branches {
        q = q.mul(&branch_admittance_factor(b));
    }
    // n = (c_eq s - g_cpl) q + sum over branches of (numerator_k * q / factor_k)
    let mut n = q.mul(&Poly(vec![-g_cpl, params.c_eq]));
    for (k, b) in params.branches.iter().enumerate() {
        let mut partial = Poly::one();
        for (j, other) in params.branches.iter().enumerate() {
            if j != k {
                partial = partial.mul(&branch_admittance_factor(other));
            }
        }
        match b.kind {
            crate::model::BranchKind::Droop { .. } => n.add_scaled(&partial, 1.0),
            crate::model::BranchKind::IntegralDroop {
                virtual_capacitance,
            } => {
                // numerator C_h s
                let shifted = partial.mul(&Poly(vec![0.0, virtual_capacitance]));
                n.add_scaled(&shifted, 1.0);
            }
        }
    }

    let poles = Poly::roots(&n)?;
    let max_re = poles.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re >= 0.0 {
        return Err(TfError::UnstableModel { max_re });
    }
    let n_der = n.derivative();
    let residues: Vec<Complex64> = poles.iter().map(|&p| q.eval(p) / n_der.eval(p)).collect();
    RationalTf::new(poles, residues, 0.0, 0.0)
}

/// Load-to-voltage response with its closed-form admittance cross-check.
#[derive(Debug, Clone)]
pub struct GpvAnalysis {
    /// The state-space-derived transfer function (authoritative).
    pub tf: RationalTf,
    /// The same response written directly over the aggregate branch
    /// admittance, `C_eq / (P* + V*^2 (Y_t - C_eq s))`.
    pub admittance_form: RationalTf,
    /// Largest relative gap between the two forms over the comparison band.
    /// A value near 1 means the admittance form differs from the true
    /// response by roughly its whole magnitude.
    pub admittance_form_deviation: f64,
}

/// Small-signal transfer function from load power to bus voltage.
///
/// The returned `tf` is extracted from the linearized state equations. The
/// admittance shorthand is evaluated alongside; on this model family it
/// reproduces the true response only up to a constant factor, and the
/// measured deviation is reported so the gap stays visible.
pub fn analytic_gpv(params: &SmgParams, eq: &Equilibrium) -> Result<GpvAnalysis, TfError> {
    let lin = crate::model::linearize(params, eq)
        .map_err(|e| TfError::NumericalFailure(e.to_string()))?;
    let max_re = lin.max_eigenvalue_re();
    if max_re >= 0.0 {
        return Err(TfError::UnstableModel { max_re });
    }
    let tf = ss_to_tf(&lin, INPUT_P_LOAD, 0)?;

    let v_star = eq.v_bus_star;
    let admittance_form = analytic_zbus(params, eq)?.scaled(-params.c_eq / (v_star * v_star));

    let grid = log_grid(CHECK_MIN, CHECK_MAX, CHECK_POINTS);
    let mut deviation = 0.0f64;
    for &w in &grid {
        let s = Complex64::new(0.0, w);
        let truth = tf.eval_complex(s);
        let shorthand = admittance_shorthand(params, eq, s);
        deviation = deviation.max((shorthand - truth).norm() / truth.norm());
    }
    Ok(GpvAnalysis {
        tf,
        admittance_form,
        admittance_form_deviation: deviation,
    })
}

/// Direct evaluation of `C_eq / (P* + V*^2 (Y_t(s) - C_eq s))` where `Y_t`
/// sums the loop-oriented (negative) branch admittances.
fn admittance_shorthand(params: &SmgParams, eq: &Equilibrium, s: Complex64) -> Complex64 {
    let mut y_t = Complex64::new(0.0, 0.0);
    for b in &params.branches {
        match b.kind {
            crate::model::BranchKind::Droop { .. } => {
                y_t -= 1.0 / (b.inductance * s + b.total_resistance());
            }
            crate::model::BranchKind::IntegralDroop {
                virtual_capacitance,
            } => {
                let den = b.inductance * virtual_capacitance * s * s
                    + b.parasitic_resistance * virtual_capacitance * s
                    + 1.0;
                y_t -= virtual_capacitance * s / den;
            }
        }
    }
    let v2 = eq.v_bus_star * eq.v_bus_star;
    params.c_eq / (eq.p_load_star + v2 * (y_t - params.c_eq * s))
}

/// Bus impedance through the state equations: the injected-current to bus
/// voltage response of the linearized model.
pub fn zbus_from_state_space(params: &SmgParams, eq: &Equilibrium) -> Result<RationalTf, TfError> {
    let lin = crate::model::linearize(params, eq)
        .map_err(|e| TfError::NumericalFailure(e.to_string()))?;
    let max_re = lin.max_eigenvalue_re();
    if max_re >= 0.0 {
        return Err(TfError::UnstableModel { max_re });
    }
    ss_to_tf(&lin, INPUT_I_INJ, 0)
}

// ---------------------------------------------------------------------------
// state space to pole-residue form

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvector of `a` for the eigenvalue nearest `lambda`, by shifted
/// inverse iteration with a Rayleigh-quotient polish of the eigenvalue.
fn eigenvector_for(
    a: &DMatrix<Complex64>,
    lambda: Complex64,
) -> Result<(Complex64, DVector<Complex64>), TfError> {
    let n = a.nrows();
    let mut shift_scale = 1e-10 * (1.0 + lambda.norm());
    for _ in 0..6 {
        let shifted = a - DMatrix::identity(n, n) * (lambda + shift_scale);
        let lu = shifted.lu();
        let mut v = DVector::from_element(n, Complex64::new(1.0, 0.0) / (n as f64).sqrt());
        let mut ok = true;
        for _ in 0..2 {
            match lu.solve(&v) {
                Some(w) => {
                    let norm = w.norm();
                    if !(norm > 0.0) || !norm.is_finite() {
                        ok = false;
                        break;
                    }
                    v = w / Complex64::new(norm, 0.0);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let av = a * &v;
            let rayleigh = v.dotc(&av);
            return Ok((rayleigh, v));
        }
        // shift sat exactly on the eigenvalue; back off and retry
        shift_scale *= 10.0;
    }
    Err(TfError::NumericalFailure(format!(
        "inverse iteration failed near eigenvalue {lambda}"
    )))
}

/// Pole-residue form of one SISO channel of a state-space model.
///
/// Poles are the eigenvalues of `A`; residues come from the eigenvector
/// decomposition of `C (sI - A)^{-1} B`. Fails with [`TfError::DefectiveMatrix`]
/// when the eigenvector basis is too ill-conditioned to trust.
pub fn ss_to_tf(model: &LinearModel, input: usize, output: usize) -> Result<RationalTf, TfError> {
    let n = model.a.nrows();
    if input >= model.b.ncols() || output >= model.c.nrows() {
        return Err(TfError::NumericalFailure(
            "input or output index out of range".into(),
        ));
    }
    let a_c = to_complex(&model.a);
    let eigs = model.a.complex_eigenvalues();

    let mut poles = Vec::with_capacity(n);
    let mut v = DMatrix::<Complex64>::zeros(n, n);
    for (k, &lambda) in eigs.iter().enumerate() {
        let (polished, vec) = eigenvector_for(&a_c, lambda)?;
        poles.push(polished);
        v.set_column(k, &vec);
    }

    let sv = v.clone().svd(false, false).singular_values;
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0f64, f64::max);
    if !(smin > 0.0) || smax / smin > 1e10 {
        return Err(TfError::DefectiveMatrix {
            cond: if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            },
        });
    }

    let b_col = DVector::from_iterator(n, (0..n).map(|i| Complex64::new(model.b[(i, input)], 0.0)));
    let w = v
        .clone()
        .lu()
        .solve(&b_col)
        .ok_or_else(|| TfError::NumericalFailure("eigenvector basis is singular".into()))?;

    let residues: Vec<Complex64> = (0..n)
        .map(|k| {
            let cv: Complex64 = (0..n)
                .map(|i| Complex64::new(model.c[(output, i)], 0.0) * v[(i, k)])
                .sum();
            cv * w[k]
        })
        .collect();

    RationalTf::new(poles, residues, model.d[(output, input)], 0.0)
}

// ---------------------------------------------------------------------------
// norms

fn require_stable(tf: &RationalTf) -> Result<(), TfError> {
    let max_re = tf.max_pole_re();
    if !tf.poles().is_empty() && max_re >= 0.0 {
        return Err(TfError::UnstablePoles { max_re });
    }
    Ok(())
}

/// Peak magnitude over the default scan grid including the endpoints of the
/// band and DC. Used to express feedthrough tolerances relative to the
/// response size.
fn scan_peak(tf: &RationalTf) -> f64 {
    let mut peak = tf.eval_complex(Complex64::new(0.0, 0.0)).norm();
    for w in log_grid(SCAN_MIN, SCAN_MAX, SCAN_POINTS) {
        peak = peak.max(tf.eval_complex(Complex64::new(0.0, w)).norm());
    }
    peak
}

/// Real block-diagonal realization of the strictly proper part, with poles
/// and residues rescaled by `1/omega0` for conditioning. The H2 norm of the
/// original system is `sqrt(omega0)` times the norm of this realization.
fn scaled_realization(tf: &RationalTf) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
    let omega0 = if tf.poles().is_empty() {
        1.0
    } else {
        (tf.poles().iter().map(|p| p.norm().ln()).sum::<f64>() / tf.order() as f64).exp()
    };
    let n = tf.order();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut c = DVector::<f64>::zeros(n);
    let mut row = 0;
    let mut k = 0;
    while k < n {
        let p = tf.poles()[k] / omega0;
        let r = tf.residues()[k] / omega0;
        if p.im == 0.0 {
            a[(row, row)] = p.re;
            b[row] = 1.0;
            c[row] = r.re;
            row += 1;
            k += 1;
        } else {
            // conjugate pair: R/(s-p) + conj both, companion block of
            // s^2 - 2 Re(p) s + |p|^2 with numerator 2 Re(R) s - 2 Re(R conj(p))
            let sigma = p.re;
            let norm2 = p.norm_sqr();
            a[(row, row)] = 2.0 * sigma;
            a[(row, row + 1)] = -norm2;
            a[(row + 1, row)] = 1.0;
            b[row] = 1.0;
            c[row] = 2.0 * r.re;
            c[row + 1] = -2.0 * (r * p.conj()).re;
            row += 2;
            k += 2; // canonical order keeps the conjugate adjacent
        }
    }
    (a, b, c, omega0)
}

/// H2 norm (RMS of the impulse response) through the controllability
/// Gramian of a real minimal realization.
pub fn h2_norm(tf: &RationalTf) -> Result<f64, TfError> {
    require_stable(tf)?;
    if tf.poles().is_empty() {
        if tf.d() == 0.0 && tf.e() == 0.0 {
            return Ok(0.0);
        }
        return Err(TfError::ImproperTf {
            d: tf.d(),
            e: tf.e(),
        });
    }
    let peak = scan_peak(tf);
    if tf.d().abs() > 1e-9 * peak || tf.e().abs() > 1e-9 * peak {
        return Err(TfError::ImproperTf {
            d: tf.d(),
            e: tf.e(),
        });
    }

    let (a, b, c, omega0) = scaled_realization(tf);
    let n = a.nrows();
    // vec(AP + PA^T) = (I kron A + A kron I) vec(P)
    let eye = DMatrix::<f64>::identity(n, n);
    let m = eye.kronecker(&a) + a.kronecker(&eye);
    let bbt = &b * b.transpose();
    let rhs = DVector::from_iterator(n * n, bbt.iter().map(|x| -x));
    let p_vec = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| TfError::NumericalFailure("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_iterator(n, n, p_vec.iter().copied());
    let value = (c.transpose() * &p * &c)[(0, 0)];
    Ok((omega0 * value.max(0.0)).sqrt())
}

/// H-infinity norm and the frequency where the magnitude peaks.
#[derive(Debug, Clone, Copy)]
pub struct HinfResult {
    pub norm: f64,
    pub omega_peak: f64,
}

/// H-infinity norm: peak of `|G(jw)|` over a dense log grid refined by
/// golden-section search, with the DC and high-frequency limits included.
pub fn hinf_norm(tf: &RationalTf) -> Result<HinfResult, TfError> {
    require_stable(tf)?;
    if tf.e() != 0.0 {
        return Err(TfError::Unbounded { e: tf.e() });
    }
    let mag = |w: f64| tf.eval_complex(Complex64::new(0.0, w)).norm();

    let mut best_norm = mag(0.0);
    let mut best_omega = 0.0f64;
    let tail = tf.d().abs();
    if tail > best_norm {
        best_norm = tail;
        best_omega = f64::INFINITY;
    }

    let grid = log_grid(SCAN_MIN, SCAN_MAX, SCAN_POINTS);
    let mut arg = 0;
    let mut grid_best = 0.0f64;
    for (k, &w) in grid.iter().enumerate() {
        let m = mag(w);
        if m > grid_best {
            grid_best = m;
            arg = k;
        }
    }
    // refine on log-frequency between the grid neighbors of the argmax
    let lo = grid[arg.saturating_sub(1)].ln();
    let hi = grid[(arg + 1).min(grid.len() - 1)].ln();
    let (w_ref, m_ref) = golden_max(|x| mag(x.exp()), lo, hi, 1e-7);
    let (m_fine, w_fine) = if m_ref > grid_best {
        (m_ref, w_ref.exp())
    } else {
        (grid_best, grid[arg])
    };
    if m_fine > best_norm {
        best_norm = m_fine;
        best_omega = w_fine;
    }
    Ok(HinfResult {
        norm: best_norm,
        omega_peak: best_omega,
    })
}

/// Golden-section maximization of `f` on `[a, b]`; returns (argmax, max).
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if b - a <= tol {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn first_order(a: f64) -> RationalTf {
        RationalTf::new(
            vec![Complex64::new(-a, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_first_order_lag() {
        let tf = first_order(1.0);
        let dc = evaluate(&tf, 0.0).unwrap();
        assert_abs_diff_eq!(dc.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dc.im, 0.0, epsilon = 1e-15);
        let at1 = evaluate(&tf, 1.0).unwrap();
        assert_abs_diff_eq!(at1.re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(at1.im, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn evaluate_constant_tf() {
        let tf = RationalTf::constant(3.0);
        for w in [0.0, 0.5, 100.0] {
            assert_eq!(evaluate(&tf, w).unwrap(), Complex64::new(3.0, 0.0));
        }
    }

    #[test]
    fn pole_on_the_axis_is_reported() {
        let tf = RationalTf::new(
            vec![Complex64::new(0.0, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&tf, 0.0),
            Err(TfError::PoleOnAxis { .. })
        ));
        assert!(evaluate(&tf, 1.0).is_ok());
    }

    #[test]
    fn constructor_enforces_conjugate_closure() {
        let lone = RationalTf::new(
            vec![Complex64::new(-1.0, 2.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.0,
            0.0,
        );
        assert!(matches!(lone, Err(TfError::NotConjugateClosed(_))));

        let mismatched = RationalTf::new(
            vec![Complex64::new(-1.0, 2.0), Complex64::new(-1.0, -2.0)],
            vec![Complex64::new(1.0, 1.0), Complex64::new(1.0, 1.0)],
            0.0,
            0.0,
        );
        assert!(matches!(mismatched, Err(TfError::NotConjugateClosed(_))));
    }

    #[test]
    fn constructor_orders_poles_canonically() {
        let tf = RationalTf::new(
            vec![
                Complex64::new(-3.0, -40.0),
                Complex64::new(-5.0, 0.0),
                Complex64::new(-3.0, 40.0),
                Complex64::new(-1.0, 0.0),
            ],
            vec![
                Complex64::new(0.5, -0.25),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.25),
                Complex64::new(1.0, 0.0),
            ],
            0.0,
            0.0,
        )
        .unwrap();
        let poles = tf.poles();
        assert_eq!(poles[0], Complex64::new(-5.0, 0.0));
        assert_eq!(poles[1], Complex64::new(-1.0, 0.0));
        assert_eq!(poles[2], Complex64::new(-3.0, 40.0));
        assert_eq!(poles[3], Complex64::new(-3.0, -40.0));
        assert_eq!(tf.residues()[2], tf.residues()[3].conj());
    }

    #[test]
    fn ss_extraction_of_scalar_and_decoupled_systems() {
        let scalar = LinearModel {
            a: DMatrix::from_row_slice(1, 1, &[-1.0]),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            c: DMatrix::from_row_slice(1, 1, &[1.0]),
            d: DMatrix::zeros(1, 1),
            state_labels: vec!["x".into()],
        };
        let tf = ss_to_tf(&scalar, 0, 0).unwrap();
        assert_abs_diff_eq!(tf.poles()[0].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tf.residues()[0].re, 1.0, epsilon = 1e-12);

        let decoupled = LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            b: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            d: DMatrix::zeros(1, 1),
            state_labels: vec!["x1".into(), "x2".into()],
        };
        let tf = ss_to_tf(&decoupled, 0, 0).unwrap();
        assert_abs_diff_eq!(tf.poles()[0].re, -2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(tf.poles()[1].re, -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(tf.residues()[0].re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(tf.residues()[1].re, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn defective_systems_are_rejected() {
        let jordan = LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d: DMatrix::zeros(1, 1),
            state_labels: vec!["x1".into(), "x2".into()],
        };
        assert!(matches!(
            ss_to_tf(&jordan, 0, 0),
            Err(TfError::DefectiveMatrix { .. })
        ));
    }

    #[test]
    fn h2_norm_of_first_order_lags() {
        assert_relative_eq!(
            h2_norm(&first_order(1.0)).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-6
        );
        assert_relative_eq!(
            h2_norm(&first_order(2.0)).unwrap(),
            0.5,
            max_relative = 1e-6
        );
    }

    #[test]
    fn h2_norm_scales_linearly() {
        let tf = RationalTf::new(
            vec![Complex64::new(-2.0, 30.0), Complex64::new(-2.0, -30.0)],
            vec![Complex64::new(1.0, 0.5), Complex64::new(1.0, -0.5)],
            0.0,
            0.0,
        )
        .unwrap();
        let h = h2_norm(&tf).unwrap();
        let h3 = h2_norm(&tf.scaled(-3.0)).unwrap();
        assert_relative_eq!(h3, 3.0 * h, max_relative = 1e-10);
    }

    #[test]
    fn h2_norm_rejects_feedthrough_and_unstable_poles() {
        let improper = RationalTf::new(
            vec![Complex64::new(-1.0, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.5,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            h2_norm(&improper),
            Err(TfError::ImproperTf { .. })
        ));
        let unstable = RationalTf::new(
            vec![Complex64::new(0.1, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.0,
            0.0,
        )
        .unwrap();
        assert!(matches!(
            h2_norm(&unstable),
            Err(TfError::UnstablePoles { .. })
        ));
    }

    #[test]
    fn hinf_norm_of_monotone_lag_peaks_at_dc() {
        let r = hinf_norm(&first_order(1.0)).unwrap();
        assert_relative_eq!(r.norm, 1.0, max_relative = 1e-9);
        assert_eq!(r.omega_peak, 0.0);
    }

    #[test]
    fn hinf_norm_of_light_resonance_matches_closed_form() {
        // wn^2/(s^2 + 2 z wn s + wn^2), z = 0.1, wn = 10
        let (z, wn) = (0.1f64, 10.0f64);
        let mu = wn * (1.0 - z * z).sqrt();
        let pole = Complex64::new(-z * wn, mu);
        let residue = Complex64::new(0.0, -wn * wn / (2.0 * mu));
        let tf = RationalTf::new(
            vec![pole, pole.conj()],
            vec![residue, residue.conj()],
            0.0,
            0.0,
        )
        .unwrap();
        let r = hinf_norm(&tf).unwrap();
        let expected = 1.0 / (2.0 * z * (1.0 - z * z).sqrt());
        assert_abs_diff_eq!(r.norm, expected, epsilon = 1e-3);
        assert_relative_eq!(
            r.omega_peak,
            wn * (1.0 - 2.0 * z * z).sqrt(),
            max_relative = 1e-3
        );
    }

    #[test]
    fn hinf_norm_rejects_unbounded_growth() {
        let tf = RationalTf::new(
            vec![Complex64::new(-1.0, 0.0)],
            vec![Complex64::new(1.0, 0.0)],
            0.0,
            0.25,
        )
        .unwrap();
        assert!(matches!(hinf_norm(&tf), Err(TfError::Unbounded { .. })));
    }

    #[test]
    fn hinf_norm_scales_with_gain() {
        let tf = first_order(3.0);
        let a = hinf_norm(&tf).unwrap().norm;
        let b = hinf_norm(&tf.scaled(-7.0)).unwrap().norm;
        assert_relative_eq!(b, 7.0 * a, max_relative = 1e-9);
    }

    #[test]
    fn bode_matches_evaluate_and_validates_grid() {
        let tf = first_order(1.0);
        let samples = bode(&tf, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(samples.len(), 3);
        assert_relative_eq!(
            samples[1].mag(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-12
        );
        assert_relative_eq!(samples[1].phase_deg(), -45.0, max_relative = 1e-12);
        assert!(matches!(
            bode(&tf, &[1.0, 1.0]),
            Err(TfError::InvalidGrid(_))
        ));
        assert!(matches!(
            bode(&tf, &[-1.0, 1.0]),
            Err(TfError::InvalidGrid(_))
        ));
    }

    #[test]
    fn strictly_proper_part_drops_feedthrough() {
        let tf = RationalTf::new(
            vec![Complex64::new(-1.0, 0.0)],
            vec![Complex64::new(2.0, 0.0)],
            0.7,
            0.1,
        )
        .unwrap();
        let sp = tf.strictly_proper_part();
        assert_eq!(sp.d(), 0.0);
        assert_eq!(sp.e(), 0.0);
        assert_eq!(sp.poles(), tf.poles());
    }

    #[test]
    fn log_grid_spans_the_requested_band() {
        let g = log_grid(1e-2, 1e3, 11);
        assert_eq!(g.len(), 11);
        assert_relative_eq!(g[0], 1e-2, max_relative = 1e-12);
        assert_relative_eq!(g[10], 1e3, max_relative = 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(g[5] / g[4], g[1] / g[0], max_relative = 1e-9);
    }
}
