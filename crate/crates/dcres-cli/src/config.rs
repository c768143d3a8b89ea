//! Scenario files: a TOML schema covering the plant, the disturbance, the
//! metric windows, and the analysis knobs of every subcommand.
//!
//! Loading validates everything up front so a bad file fails before any work
//! starts. Unknown keys are rejected rather than ignored; a typo in a
//! parameter name must not silently run the default scenario.

use std::fs;
use std::path::Path;

use dcres::metrics::DeviationMode;
use dcres::model::{BranchParams, SmgParams};
use dcres::sim::{DisturbanceSchedule, LoadStep, Perturbation, SecondaryControl};
use dcres::sysid::{SweepPlan, Weighting};
use dcres::tf::log_grid;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Schema revision this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub smg: SmgSection,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub secondary: SecondarySection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub norms: NormsSection,
    #[serde(default)]
    pub bode: BodeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmgSection {
    pub c_eq: f64,
    pub v_ref: f64,
    pub v_n: f64,
    #[serde(default)]
    pub p_load_base: f64,
    #[serde(rename = "branch", default)]
    pub branches: Vec<BranchSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchKindField {
    Droop,
    IntegralDroop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSection {
    pub id: String,
    pub kind: BranchKindField,
    pub inductance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub virtual_capacitance: Option<f64>,
    pub parasitic_resistance: f64,
}

impl BranchSection {
    fn to_params(&self) -> Result<BranchParams, CliError> {
        match self.kind {
            BranchKindField::Droop => {
                if self.virtual_capacitance.is_some() {
                    return Err(CliError::Config(format!(
                        "branch {}: virtual_capacitance does not apply to a droop branch",
                        self.id
                    )));
                }
                let gain = self.droop_gain.ok_or_else(|| {
                    CliError::Config(format!(
                        "branch {}: droop branches need droop_gain",
                        self.id
                    ))
                })?;
                Ok(BranchParams::droop(
                    &self.id,
                    self.inductance,
                    gain,
                    self.parasitic_resistance,
                ))
            }
            BranchKindField::IntegralDroop => {
                if self.droop_gain.is_some() {
                    return Err(CliError::Config(format!(
                        "branch {}: droop_gain does not apply to an integral-droop branch",
                        self.id
                    )));
                }
                let cap = self.virtual_capacitance.ok_or_else(|| {
                    CliError::Config(format!(
                        "branch {}: integral-droop branches need virtual_capacitance",
                        self.id
                    ))
                })?;
                Ok(BranchParams::integral_droop(
                    &self.id,
                    self.inductance,
                    cap,
                    self.parasitic_resistance,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(rename = "load_step", default)]
    pub load_steps: Vec<LoadStepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSection>,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        Self {
            t_end: default_t_end(),
            load_steps: Vec::new(),
            perturbation: None,
        }
    }
}

fn default_t_end() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadStepSection {
    pub time: f64,
    pub delta_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondarySection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_k_i")]
    pub k_i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

impl Default for SecondarySection {
    fn default() -> Self {
        Self {
            enabled: false,
            k_i: default_k_i(),
            target: None,
        }
    }
}

fn default_k_i() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Keep every n-th trajectory sample in the CSV.
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            decimation: default_decimation(),
        }
    }
}

fn default_dt() -> f64 {
    5e-5
}

fn default_decimation() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricModeField {
    DeviationFromNominal,
    DeviationFromPredisturbance,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Integration window start; defaults to half a second before the first
    /// load step (or 0 with no steps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau1: Option<f64>,
    /// Integration window end; defaults to 9.5 s after the first load step
    /// (or t_end with no steps), clamped to the run length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    #[serde(default = "default_metric_mode")]
    pub mode: MetricModeField,
    /// Nadir and slope searches start here; defaults to the first load step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<f64>,
    #[serde(default = "default_smooth_window")]
    pub smooth_window: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            tau1: None,
            tau2: None,
            mode: default_metric_mode(),
            after: None,
            smooth_window: default_smooth_window(),
        }
    }
}

fn default_metric_mode() -> MetricModeField {
    MetricModeField::DeviationFromNominal
}

fn default_smooth_window() -> usize {
    11
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
    #[serde(default = "default_sweep_count")]
    pub count: usize,
    /// Explicit excitation frequencies in rad/s; overrides the log grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_settle_periods")]
    pub settle_periods: usize,
    #[serde(default = "default_measure_periods")]
    pub measure_periods: usize,
    #[serde(default = "default_min_measure_time")]
    pub min_measure_time: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            omega_min: default_omega_min(),
            omega_max: default_omega_max(),
            count: default_sweep_count(),
            frequencies: None,
            amplitude: default_amplitude(),
            settle_periods: default_settle_periods(),
            measure_periods: default_measure_periods(),
            min_measure_time: default_min_measure_time(),
        }
    }
}

fn default_omega_min() -> f64 {
    0.1 * std::f64::consts::TAU
}

fn default_omega_max() -> f64 {
    1000.0 * std::f64::consts::TAU
}

fn default_sweep_count() -> usize {
    30
}

fn default_amplitude() -> f64 {
    10.0
}

fn default_settle_periods() -> usize {
    5
}

fn default_measure_periods() -> usize {
    10
}

fn default_min_measure_time() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingField {
    Uniform,
    InverseMagnitude,
}

impl From<WeightingField> for Weighting {
    fn from(w: WeightingField) -> Self {
        match w {
            WeightingField::Uniform => Weighting::Uniform,
            WeightingField::InverseMagnitude => Weighting::InverseMagnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_weighting")]
    pub weighting: WeightingField,
    /// Fit an existing frequency-response CSV instead of measuring one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<String>,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            order: default_order(),
            max_iterations: default_max_iterations(),
            weighting: default_weighting(),
            import: None,
        }
    }
}

fn default_order() -> usize {
    9
}

fn default_max_iterations() -> usize {
    dcres::sysid::DEFAULT_MAX_ITERATIONS
}

fn default_weighting() -> WeightingField {
    WeightingField::InverseMagnitude
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormsSection {
    /// Capacitance values to tabulate; the plant's own c_eq when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_eq: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodeSection {
    #[serde(default = "default_bode_min")]
    pub omega_min: f64,
    #[serde(default = "default_bode_max")]
    pub omega_max: f64,
    #[serde(default = "default_bode_count")]
    pub count: usize,
}

impl Default for BodeSection {
    fn default() -> Self {
        Self {
            omega_min: default_bode_min(),
            omega_max: default_bode_max(),
            count: default_bode_count(),
        }
    }
}

fn default_bode_min() -> f64 {
    0.1
}

fn default_bode_max() -> f64 {
    1e5
}

fn default_bode_count() -> usize {
    400
}

/// Metric window resolved against the disturbance schedule.
#[derive(Debug, Clone, Copy)]
pub struct MetricWindows {
    pub tau1: f64,
    pub tau2: f64,
    pub mode: DeviationMode,
    pub after: f64,
    pub smooth_window: usize,
}

impl ScenarioConfig {
    pub fn scenario_name(&self) -> &str {
        self.name.as_deref().unwrap_or("scenario")
    }

    pub fn smg_params(&self) -> Result<SmgParams, CliError> {
        let branches = self
            .smg
            .branches
            .iter()
            .map(BranchSection::to_params)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SmgParams {
            branches,
            c_eq: self.smg.c_eq,
            v_ref: self.smg.v_ref,
            v_n: self.smg.v_n,
            p_load_base: self.smg.p_load_base,
        })
    }

    pub fn schedule(&self) -> DisturbanceSchedule {
        DisturbanceSchedule {
            load_steps: self
                .disturbance
                .load_steps
                .iter()
                .map(|s| LoadStep {
                    time: s.time,
                    delta_p: s.delta_p,
                })
                .collect(),
            perturbation: self
                .disturbance
                .perturbation
                .as_ref()
                .map(|p| Perturbation {
                    amplitude: p.amplitude,
                    omega: p.omega,
                    start: p.start,
                }),
            t_end: self.disturbance.t_end,
        }
    }

    pub fn secondary(&self) -> SecondaryControl {
        SecondaryControl {
            enabled: self.secondary.enabled,
            k_i: self.secondary.k_i,
            target: self.secondary.target,
        }
    }

    pub fn sweep_plan(&self) -> SweepPlan {
        let s = &self.sweep;
        SweepPlan {
            frequencies: s
                .frequencies
                .clone()
                .unwrap_or_else(|| log_grid(s.omega_min, s.omega_max, s.count)),
            amplitude: s.amplitude,
            settle_periods: s.settle_periods,
            measure_periods: s.measure_periods,
            min_measure_time: s.min_measure_time,
        }
    }

    pub fn bode_grid(&self) -> Vec<f64> {
        log_grid(self.bode.omega_min, self.bode.omega_max, self.bode.count)
    }

    /// Metric windows with schedule-derived defaults filled in.
    pub fn metric_windows(&self) -> MetricWindows {
        let t_end = self.disturbance.t_end;
        let first_step = self
            .disturbance
            .load_steps
            .iter()
            .map(|s| s.time)
            .fold(f64::INFINITY, f64::min);
        let (d1, d2) = if first_step.is_finite() {
            ((first_step - 0.5).max(0.0), (first_step + 9.5).min(t_end))
        } else {
            (0.0, t_end)
        };
        let mode = match self.metrics.mode {
            MetricModeField::DeviationFromNominal => {
                DeviationMode::FromNominal { v_n: self.smg.v_n }
            }
            MetricModeField::DeviationFromPredisturbance => DeviationMode::FromPredisturbance,
            MetricModeField::Raw => DeviationMode::Raw,
        };
        MetricWindows {
            tau1: self.metrics.tau1.unwrap_or(d1),
            tau2: self.metrics.tau2.unwrap_or(d2),
            mode,
            after: self.metrics.after.unwrap_or(if first_step.is_finite() {
                first_step
            } else {
                0.0
            }),
            smooth_window: self.metrics.smooth_window,
        }
    }

    /// Checks every cross-field rule the typed schema cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {}; this build reads version {}",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        self.smg_params()?.validate().map_err(config_err)?;

        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return Err(CliError::Config("sim.dt must be positive".into()));
        }
        if self.sim.decimation == 0 {
            return Err(CliError::Config("sim.decimation must be at least 1".into()));
        }

        let d = &self.disturbance;
        if !(d.t_end > 0.0 && d.t_end.is_finite()) {
            return Err(CliError::Config(
                "disturbance.t_end must be positive".into(),
            ));
        }
        for (i, s) in d.load_steps.iter().enumerate() {
            if !(s.time >= 0.0 && s.time <= d.t_end && s.time.is_finite()) {
                return Err(CliError::Config(format!(
                    "load_step {}: time {} s is outside the run [0, {}]",
                    i, s.time, d.t_end
                )));
            }
            if !s.delta_p.is_finite() {
                return Err(CliError::Config(format!(
                    "load_step {i}: delta_p must be finite"
                )));
            }
        }
        if let Some(p) = &d.perturbation {
            if !(p.amplitude.is_finite() && p.omega > 0.0 && p.omega.is_finite() && p.start >= 0.0)
            {
                return Err(CliError::Config(
                    "perturbation needs a finite amplitude, a positive omega, and a non-negative start".into(),
                ));
            }
        }

        if self.secondary.enabled && !(self.secondary.k_i > 0.0 && self.secondary.k_i.is_finite()) {
            return Err(CliError::Config(
                "secondary.k_i must be positive when secondary control is enabled".into(),
            ));
        }
        if let Some(t) = self.secondary.target {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Config("secondary.target must be positive".into()));
            }
        }

        let m = &self.metrics;
        if m.smooth_window == 0 {
            return Err(CliError::Config(
                "metrics.smooth_window must be at least 1".into(),
            ));
        }
        if let (Some(t1), Some(t2)) = (m.tau1, m.tau2) {
            if !(t1 < t2) {
                return Err(CliError::Config(format!(
                    "metrics window is empty: tau1 = {t1} must be below tau2 = {t2}"
                )));
            }
        }

        self.sweep_plan().validate().map_err(config_err)?;

        let id = &self.identify;
        if id.order == 0 {
            return Err(CliError::Config("identify.order must be at least 1".into()));
        }
        if id.import.is_none() {
            let needed = 2 * id.order + 2;
            let got = self.sweep_plan().frequencies.len();
            if got < needed {
                return Err(CliError::Config(format!(
                    "identify.order {} needs {} sweep points, the plan has {}",
                    id.order, needed, got
                )));
            }
        }

        if let Some(list) = &self.norms.c_eq {
            if list.is_empty() {
                return Err(CliError::Config(
                    "norms.c_eq must not be empty when given".into(),
                ));
            }
            for &c in list {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(CliError::Config(format!(
                        "norms.c_eq value {c} must be positive"
                    )));
                }
            }
        }

        let b = &self.bode;
        if !(b.omega_min > 0.0 && b.omega_min < b.omega_max && b.omega_max.is_finite()) {
            return Err(CliError::Config(
                "bode grid needs 0 < omega_min < omega_max".into(),
            ));
        }
        if b.count < 2 {
            return Err(CliError::Config("bode.count must be at least 2".into()));
        }
        Ok(())
    }

    /// Serializes the fully resolved configuration; reloading the dump
    /// reproduces this value.
    pub fn to_toml_string(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(config_err)
    }
}

/// Reads, overrides, and validates a scenario file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, overrides)
}

/// As [`load_config`], from an in-memory TOML document.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut value: toml::Value = toml::from_str(text).map_err(config_err)?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    let cfg: ScenarioConfig = value.try_into().map_err(config_err)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `dotted.path=value` override to a parsed TOML tree.
///
/// Missing intermediate tables are created (sections left to their defaults
/// are still addressable); numeric segments index existing array entries.
/// Misspelled names survive until deserialization, where the schema rejects
/// them as unknown keys. Values parse as bool, integer, float, then string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} must look like key=value")))?;
    let segments: Vec<&str> = path.split('.').collect();
    if path.is_empty() || segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!(
            "override {spec:?} has an empty path segment"
        )));
    }

    let mut cur = root;
    for seg in &segments[..segments.len() - 1] {
        let next = match cur {
            toml::Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            toml::Value::Table(table) => Some(
                table
                    .entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new())),
            ),
            _ => None,
        };
        cur = next.ok_or_else(|| {
            CliError::Config(format!(
                "override path {path:?}: no table or entry named {seg:?}"
            ))
        })?;
    }

    let leaf = parse_literal(raw);
    let last = segments[segments.len() - 1];
    match cur {
        toml::Value::Table(table) => {
            table.insert(last.to_string(), leaf);
            Ok(())
        }
        toml::Value::Array(items) => {
            let slot = last
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| {
                    CliError::Config(format!("override path {path:?}: no array entry {last:?}"))
                })?;
            *slot = leaf;
            Ok(())
        }
        _ => Err(CliError::Config(format!(
            "override path {path:?}: {last:?} cannot be set inside a scalar value"
        ))),
    }
}

/// Reads the literal as a TOML value (`true`, `20`, `0.04`, `[1, 2]`, a
/// quoted string) and falls back to a bare string, so `raw` and `data.csv`
/// need no quoting.
fn parse_literal(raw: &str) -> toml::Value {
    if let Ok(table) = toml::from_str::<toml::Table>(&format!("x = {raw}")) {
        if let Some(v) = table.get("x") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "unit"

[smg]
c_eq = 0.02
v_ref = 6000.0
v_n = 6000.0
p_load_base = 5e6

[[smg.branch]]
id = "sg"
kind = "droop"
inductance = 1e-3
droop_gain = 0.05
parasitic_resistance = 0.05

[[smg.branch]]
id = "sc"
kind = "integral-droop"
inductance = 4e-4
virtual_capacitance = 5.0
parasitic_resistance = 0.05

[disturbance]
t_end = 20.0

[[disturbance.load_step]]
time = 10.0
delta_p = 5e6
"#;

    #[test]
    fn minimal_document_loads_with_defaults() {
        let cfg = parse_config(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.scenario_name(), "unit");
        assert_eq!(cfg.sim.dt, 5e-5);
        assert_eq!(cfg.metrics.smooth_window, 11);
        assert_eq!(cfg.identify.order, 9);
        let params = cfg.smg_params().unwrap();
        assert_eq!(params.branches.len(), 2);
        assert!(params.branches[1].is_integral_droop());
        let w = cfg.metric_windows();
        assert_eq!((w.tau1, w.tau2, w.after), (9.5, 19.5, 10.0));
        assert_eq!(cfg.sweep_plan().frequencies.len(), 30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = MINIMAL.replace("p_load_base", "p_load_bse");
        let err = parse_config(&doc, &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("p_load_bse"), "{err}");
    }

    #[test]
    fn overrides_parse_into_natural_types() {
        let cfg = parse_config(
            MINIMAL,
            &[
                "smg.c_eq=0.04".into(),
                "metrics.smooth_window=21".into(),
                "secondary.enabled=true".into(),
                "metrics.mode=raw".into(),
                "smg.branch.0.droop_gain=0.1".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.smg.c_eq, 0.04);
        assert_eq!(cfg.metrics.smooth_window, 21);
        assert!(cfg.secondary.enabled);
        assert_eq!(cfg.metrics.mode, MetricModeField::Raw);
        assert_eq!(cfg.smg.branches[0].droop_gain, Some(0.1));
    }

    #[test]
    fn override_into_an_unknown_section_is_rejected_by_name() {
        let err = parse_config(MINIMAL, &["smgX.c_eq=1".into()]).unwrap_err();
        assert!(err.to_string().contains("smgX"), "{err}");
        let err = parse_config(MINIMAL, &["smg.c_eq".into()]).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");
    }

    #[test]
    fn override_with_a_typo_key_is_still_rejected() {
        let err = parse_config(MINIMAL, &["smg.c_eqq=0.04".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn cross_field_branch_rules_are_enforced() {
        let doc = MINIMAL.replace("virtual_capacitance = 5.0", "droop_gain = 5.0");
        let err = parse_config(&doc, &[]).unwrap_err();
        assert!(err.to_string().contains("integral-droop"), "{err}");
    }

    #[test]
    fn schema_version_gate() {
        let doc = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        let err = parse_config(&doc, &[]).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn empty_metric_window_is_rejected() {
        let err = parse_config(
            MINIMAL,
            &["metrics.tau1=5.0".into(), "metrics.tau2=5.0".into()],
        )
        .unwrap_err();
        assert!(err.to_string().contains("tau1"), "{err}");
    }

    #[test]
    fn order_must_fit_the_sweep_plan() {
        let err = parse_config(MINIMAL, &["identify.order=15".into()]).unwrap_err();
        assert!(err.to_string().contains("sweep points"), "{err}");
        // import mode defers the sample count check to the file contents
        parse_config(
            MINIMAL,
            &[
                "identify.order=15".into(),
                "identify.import=data.csv".into(),
            ],
        )
        .unwrap();
    }

    #[test]
    fn dump_reloads_to_an_equal_config() {
        let cfg = parse_config(MINIMAL, &["secondary.enabled=true".into()]).unwrap();
        let dump = cfg.to_toml_string().unwrap();
        let back = parse_config(&dump, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn literal_parsing_prefers_narrow_types() {
        assert_eq!(parse_literal("true"), toml::Value::Boolean(true));
        assert_eq!(parse_literal("20"), toml::Value::Integer(20));
        assert_eq!(parse_literal("0.04"), toml::Value::Float(0.04));
        assert_eq!(parse_literal("1e6"), toml::Value::Float(1e6));
        assert_eq!(
            parse_literal("inverse-magnitude"),
            toml::Value::String("inverse-magnitude".into())
        );
        assert_eq!(
            parse_literal("[0.02, 0.04]"),
            toml::Value::Array(vec![toml::Value::Float(0.02), toml::Value::Float(0.04)])
        );
    }

    #[test]
    fn array_overrides_reach_list_fields() {
        let cfg = parse_config(MINIMAL, &["norms.c_eq=[0.02,0.03,0.04]".into()]).unwrap();
        assert_eq!(cfg.norms.c_eq, Some(vec![0.02, 0.03, 0.04]));
    }
}
