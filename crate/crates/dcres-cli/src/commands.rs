//! Subcommand implementations. Each command reads a validated
//! [`ScenarioConfig`], runs the corresponding library pipeline, and writes
//! its results as CSV files plus an `effective_config.toml` dump of the
//! exact configuration that produced them.
//!
//! All outputs are deterministic: repeated runs of the same configuration
//! and build produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use dcres::metrics::{energy_imbalance, nadir, rocov, ResilienceReport};
use dcres::model::solve_equilibrium;
use dcres::sim::{simulate, Trajectory};
use dcres::sysid::{measure_point, read_freq_csv, vector_fit, write_freq_csv, FitReport};
use dcres::tf::{analytic_gpv, analytic_zbus, bode, h2_norm, hinf_norm, log_grid, FreqSample};
use rayon::prelude::*;

use crate::config::{apply_override, ScenarioConfig};
use crate::error::CliError;
use crate::plot;

/// Quotes a CSV field when it contains separators or quotes.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_effective_config(cfg: &ScenarioConfig, out_dir: &Path) -> Result<(), CliError> {
    fs::write(out_dir.join("effective_config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// Integrates the scenario and bundles its time- and frequency-domain
/// metrics. The frequency-domain indices describe the pre-disturbance
/// operating point.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<(ResilienceReport, Trajectory), CliError> {
    let params = cfg.smg_params()?;
    let traj = simulate(&params, &cfg.schedule(), &cfg.secondary(), cfg.sim.dt)?;
    let w = cfg.metric_windows();
    let e_v = energy_imbalance(&traj, w.tau1, w.tau2, w.mode)?;
    let nadir_v = nadir(&traj, w.after)?;
    let rocov_v = rocov(&traj, w.after, w.smooth_window)?;

    let eq = solve_equilibrium(&params, params.p_load_base)?;
    let zbus = analytic_zbus(&params, &eq)?;
    let gpv = analytic_gpv(&params, &eq)?;
    let report = ResilienceReport {
        scenario: cfg.scenario_name().to_string(),
        e_v,
        nadir: nadir_v,
        rocov: rocov_v,
        h2_zbus: Some(h2_norm(&zbus)?),
        hinf_zbus: Some(hinf_norm(&zbus)?.norm),
        h2_gpv: Some(h2_norm(&gpv.tf)?),
        hinf_gpv: Some(hinf_norm(&gpv.tf)?.norm),
    };
    Ok((report, traj))
}

fn write_report_csv(report: &ResilienceReport, path: &Path) -> Result<(), CliError> {
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = create(path)?;
    writeln!(w, "key,value")?;
    writeln!(w, "scenario,{}", csv_field(&report.scenario))?;
    writeln!(w, "e_v,{}", report.e_v)?;
    writeln!(w, "nadir,{}", report.nadir)?;
    writeln!(w, "rocov,{}", report.rocov)?;
    writeln!(w, "h2_zbus,{}", fmt_opt(report.h2_zbus))?;
    writeln!(w, "hinf_zbus,{}", fmt_opt(report.hinf_zbus))?;
    writeln!(w, "h2_gpv,{}", fmt_opt(report.h2_gpv))?;
    writeln!(w, "hinf_gpv,{}", fmt_opt(report.hinf_gpv))?;
    Ok(())
}

/// Runs the disturbance scenario; writes `trajectory.csv`, `report.csv`,
/// and the effective config.
pub fn cmd_simulate(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    render_plots: bool,
) -> Result<ResilienceReport, CliError> {
    fs::create_dir_all(out_dir)?;
    let (report, traj) = run_scenario(cfg)?;
    let mut w = create(&out_dir.join("trajectory.csv"))?;
    traj.write_csv(&mut w, cfg.sim.decimation)?;
    drop(w);
    write_report_csv(&report, &out_dir.join("report.csv"))?;
    write_effective_config(cfg, out_dir)?;
    if render_plots {
        plot::write_trajectory_svg(&out_dir.join("trajectory.svg"), &traj)?;
    }
    Ok(report)
}

/// One row of the norm table produced by [`cmd_norms`].
#[derive(Debug, Clone, Copy)]
pub struct NormRow {
    pub c_eq: f64,
    pub h2_zbus: f64,
    pub hinf_zbus: f64,
    pub omega_peak_zbus: f64,
    pub h2_gpv: f64,
    pub hinf_gpv: f64,
    pub omega_peak_gpv: f64,
    pub h2_gpv_admittance_form: f64,
    pub hinf_gpv_admittance_form: f64,
    pub gpv_admittance_form_rel_dev: f64,
}

/// Tabulates analytic norms over the configured capacitance values and
/// exports a Bode CSV pair per value.
pub fn cmd_norms(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Vec<NormRow>, CliError> {
    fs::create_dir_all(out_dir)?;
    let c_values = cfg.norms.c_eq.clone().unwrap_or_else(|| vec![cfg.smg.c_eq]);
    let grid = cfg.bode_grid();

    let mut rows = Vec::with_capacity(c_values.len());
    for &c in &c_values {
        let mut params = cfg.smg_params()?;
        params.c_eq = c;
        let eq = solve_equilibrium(&params, params.p_load_base)?;
        let zbus = analytic_zbus(&params, &eq)?;
        let gpv = analytic_gpv(&params, &eq)?;

        let hinf_z = hinf_norm(&zbus)?;
        let hinf_g = hinf_norm(&gpv.tf)?;
        rows.push(NormRow {
            c_eq: c,
            h2_zbus: h2_norm(&zbus)?,
            hinf_zbus: hinf_z.norm,
            omega_peak_zbus: hinf_z.omega_peak,
            h2_gpv: h2_norm(&gpv.tf)?,
            hinf_gpv: hinf_g.norm,
            omega_peak_gpv: hinf_g.omega_peak,
            h2_gpv_admittance_form: h2_norm(&gpv.admittance_form)?,
            hinf_gpv_admittance_form: hinf_norm(&gpv.admittance_form)?.norm,
            gpv_admittance_form_rel_dev: gpv.admittance_form_deviation,
        });

        write_bode_csv(
            &bode(&zbus, &grid)?,
            &out_dir.join(format!("bode_zbus_ceq_{c}.csv")),
        )?;
        write_bode_csv(
            &bode(&gpv.tf, &grid)?,
            &out_dir.join(format!("bode_gpv_ceq_{c}.csv")),
        )?;
    }

    let mut w = create(&out_dir.join("norms.csv"))?;
    writeln!(
        w,
        "c_eq,h2_zbus,hinf_zbus,omega_peak_zbus,h2_gpv,hinf_gpv,omega_peak_gpv,\
         h2_gpv_admittance_form,hinf_gpv_admittance_form,gpv_admittance_form_rel_dev"
    )?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.c_eq,
            r.h2_zbus,
            r.hinf_zbus,
            r.omega_peak_zbus,
            r.h2_gpv,
            r.hinf_gpv,
            r.omega_peak_gpv,
            r.h2_gpv_admittance_form,
            r.hinf_gpv_admittance_form,
            r.gpv_admittance_form_rel_dev
        )?;
    }
    drop(w);
    write_effective_config(cfg, out_dir)?;
    Ok(rows)
}

fn write_bode_csv(samples: &[FreqSample], path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "omega_rad_s,mag,mag_db,phase_deg")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{}",
            s.omega,
            s.mag(),
            s.mag_db(),
            s.phase_deg()
        )?;
    }
    Ok(())
}

/// Measures (or imports) a frequency response, fits a rational model, and
/// writes the samples, the fit, and the fitted model's norms.
///
/// Individual sweep frequencies may fail without aborting the run; they are
/// listed in `failures.csv` and the fit proceeds on the survivors as long
/// as enough points remain to determine the requested order.
pub fn cmd_identify(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    render_plots: bool,
) -> Result<FitReport, CliError> {
    fs::create_dir_all(out_dir)?;
    let id = &cfg.identify;

    let (samples, failures): (Vec<FreqSample>, Vec<(f64, String)>) = match &id.import {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| CliError::Config(format!("identify.import {path}: {e}")))?;
            (read_freq_csv(BufReader::new(file))?, Vec::new())
        }
        None => {
            let params = cfg.smg_params()?;
            let plan = cfg.sweep_plan();
            let secondary = cfg.secondary();
            let results: Vec<(f64, Result<FreqSample, _>)> = plan
                .frequencies
                .par_iter()
                .map(|&omega| {
                    (
                        omega,
                        measure_point(&params, params.p_load_base, &plan, omega, &secondary),
                    )
                })
                .collect();
            let mut ok = Vec::new();
            let mut bad = Vec::new();
            for (omega, r) in results {
                match r {
                    Ok(s) => ok.push(s),
                    Err(e) => bad.push((omega, e.to_string())),
                }
            }
            (ok, bad)
        }
    };

    let mut w = create(&out_dir.join("failures.csv"))?;
    writeln!(w, "omega_rad_s,error")?;
    for (omega, msg) in &failures {
        writeln!(w, "{omega},{}", csv_field(msg))?;
    }
    drop(w);

    let mut w = create(&out_dir.join("measured.csv"))?;
    write_freq_csv(&samples, &mut w)?;
    drop(w);

    let needed = 2 * id.order + 2;
    if !failures.is_empty() && samples.len() < needed {
        return Err(CliError::Numerical(format!(
            "only {} of {} sweep frequencies produced usable samples; order {} needs {}",
            samples.len(),
            samples.len() + failures.len(),
            id.order,
            needed
        )));
    }

    let fit = vector_fit(&samples, id.order, id.max_iterations, id.weighting.into())?;

    let mut w = create(&out_dir.join("fit_report.csv"))?;
    writeln!(w, "key,value")?;
    writeln!(w, "scenario,{}", csv_field(cfg.scenario_name()))?;
    writeln!(w, "order,{}", id.order)?;
    writeln!(w, "samples_used,{}", samples.len())?;
    writeln!(w, "samples_failed,{}", failures.len())?;
    writeln!(w, "rel_rms_error,{}", fit.rel_rms_error)?;
    writeln!(w, "iterations_used,{}", fit.iterations_used)?;
    writeln!(w, "converged,{}", fit.converged)?;
    writeln!(w, "d,{}", fit.tf.d())?;
    writeln!(w, "e,{}", fit.tf.e())?;
    drop(w);

    let mut w = create(&out_dir.join("fit_poles.csv"))?;
    writeln!(w, "pole_re,pole_im,residue_re,residue_im")?;
    for (p, r) in fit.tf.poles().iter().zip(fit.tf.residues()) {
        writeln!(w, "{},{},{},{}", p.re, p.im, r.re, r.im)?;
    }
    drop(w);

    let proper = fit.tf.strictly_proper_part();
    let hinf = hinf_norm(&proper)?;
    let mut w = create(&out_dir.join("identified_norms.csv"))?;
    writeln!(w, "h2_zbus,hinf_zbus,omega_peak_zbus")?;
    writeln!(w, "{},{},{}", h2_norm(&proper)?, hinf.norm, hinf.omega_peak)?;
    drop(w);

    if render_plots && samples.len() >= 2 {
        let lo = samples
            .iter()
            .map(|s| s.omega)
            .fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(|s| s.omega).fold(0.0f64, f64::max);
        let curve = bode(&fit.tf, &log_grid(lo, hi, 200))?;
        plot::write_fit_overlay_svg(&out_dir.join("fit_overlay.svg"), &samples, &curve)?;
    }

    write_effective_config(cfg, out_dir)?;
    Ok(fit)
}

/// Re-runs the scenario metrics once per parameter value and writes one
/// long-format CSV. A failing value contributes a diagnostic row and the
/// sweep moves on.
pub fn cmd_sweep(
    cfg: &ScenarioConfig,
    parameter: &str,
    values: &[f64],
    out_dir: &Path,
) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    fs::create_dir_all(out_dir)?;
    let base = toml::Value::try_from(cfg).map_err(|e| CliError::Config(e.to_string()))?;

    let mut w = create(&out_dir.join("sweep.csv"))?;
    writeln!(w, "parameter,value,metric,result,status")?;
    for &v in values {
        let outcome = (|| -> Result<ResilienceReport, CliError> {
            let mut tree = base.clone();
            apply_override(&mut tree, &format!("{parameter}={v}"))?;
            let varied: ScenarioConfig = tree
                .try_into()
                .map_err(|e| CliError::Config(e.to_string()))?;
            varied.validate()?;
            Ok(run_scenario(&varied)?.0)
        })();
        match outcome {
            Ok(r) => {
                let metrics: [(&str, Option<f64>); 7] = [
                    ("e_v", Some(r.e_v)),
                    ("nadir", Some(r.nadir)),
                    ("rocov", Some(r.rocov)),
                    ("h2_zbus", r.h2_zbus),
                    ("hinf_zbus", r.hinf_zbus),
                    ("h2_gpv", r.h2_gpv),
                    ("hinf_gpv", r.hinf_gpv),
                ];
                for (name, value) in metrics {
                    let value = value.map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{},{},ok", csv_field(parameter), v, name, value)?;
                }
            }
            Err(e) => {
                writeln!(
                    w,
                    "{},{},,{},error",
                    csv_field(parameter),
                    v,
                    csv_field(&e.to_string())
                )?;
            }
        }
    }
    drop(w);
    write_effective_config(cfg, out_dir)?;
    Ok(())
}

/// Exports Bode CSVs of the analytic bus impedance and load sensitivity.
pub fn cmd_bode(cfg: &ScenarioConfig, out_dir: &Path, render_plots: bool) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let params = cfg.smg_params()?;
    let eq = solve_equilibrium(&params, params.p_load_base)?;
    let zbus = analytic_zbus(&params, &eq)?;
    let gpv = analytic_gpv(&params, &eq)?;
    let grid = cfg.bode_grid();

    let zbus_samples = bode(&zbus, &grid)?;
    let gpv_samples = bode(&gpv.tf, &grid)?;
    write_bode_csv(&zbus_samples, &out_dir.join("bode_zbus.csv"))?;
    write_bode_csv(&gpv_samples, &out_dir.join("bode_gpv.csv"))?;
    if render_plots {
        plot::write_bode_svg(
            &out_dir.join("bode_zbus.svg"),
            "bus impedance",
            &zbus_samples,
        )?;
        plot::write_bode_svg(
            &out_dir.join("bode_gpv.svg"),
            "load-to-voltage sensitivity",
            &gpv_samples,
        )?;
    }
    write_effective_config(cfg, out_dir)?;
    Ok(())
}
