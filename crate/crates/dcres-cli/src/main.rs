use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dcres_cli::commands::{cmd_bode, cmd_identify, cmd_norms, cmd_simulate, cmd_sweep};
use dcres_cli::config::load_config;
use dcres_cli::error::CliError;

/// Resilience analysis of droop-controlled DC microgrids under pulsed loads.
#[derive(Parser)]
#[command(name = "dcres", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted-path config override (key=value); repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Render SVG plots next to the CSV outputs.
    #[arg(long)]
    plot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a disturbance scenario and report its resilience metrics.
    Simulate(CommonArgs),
    /// Tabulate analytic impedance and load-sensitivity norms.
    Norms(CommonArgs),
    /// Measure a frequency response and fit a rational impedance model.
    Identify(CommonArgs),
    /// Re-run the scenario metrics over a list of values for one parameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dotted config path of the parameter to vary (for example smg.c_eq).
        #[arg(long)]
        parameter: String,
        /// Comma-separated numeric values to sweep over.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Export Bode CSVs of the analytic responses.
    Bode(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Simulate(c) | Command::Norms(c) | Command::Identify(c) | Command::Bode(c) => c,
            Command::Sweep { common, .. } => common,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let common = cli.command.common();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let cfg = load_config(&common.config, &common.overrides)?;
    fs::create_dir_all(&common.out)?;
    let out = common.out.display();

    match &cli.command {
        Command::Simulate(a) => {
            let report = cmd_simulate(&cfg, &a.out, a.plot)?;
            println!(
                "{}: e_v = {}, nadir = {} V, rocov = {} V/s",
                report.scenario, report.e_v, report.nadir, report.rocov
            );
            println!("wrote trajectory.csv, report.csv to {out}");
        }
        Command::Norms(a) => {
            let rows = cmd_norms(&cfg, &a.out)?;
            println!(
                "wrote norms.csv ({} rows) and Bode CSVs to {out}",
                rows.len()
            );
        }
        Command::Identify(a) => {
            let fit = cmd_identify(&cfg, &a.out, a.plot)?;
            println!(
                "fit order {}: rel_rms_error = {}, {} iterations{}",
                fit.tf.order(),
                fit.rel_rms_error,
                fit.iterations_used,
                if fit.converged {
                    ""
                } else {
                    " (iteration budget hit)"
                },
            );
            println!(
                "wrote measured.csv, fit_report.csv, fit_poles.csv, identified_norms.csv to {out}"
            );
        }
        Command::Sweep {
            common,
            parameter,
            values,
        } => {
            cmd_sweep(&cfg, parameter, values, &common.out)?;
            println!(
                "swept {parameter} over {} values; wrote sweep.csv to {out}",
                values.len()
            );
        }
        Command::Bode(a) => {
            cmd_bode(&cfg, &a.out, a.plot)?;
            println!("wrote bode_zbus.csv, bode_gpv.csv to {out}");
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        // one machine-parsable stderr line: error(<kind>): <message>; some
        // library messages span lines, so flatten them
        let message = e.to_string().trim().replace('\n', " ");
        eprintln!("error({}): {message}", e.kind());
        std::process::exit(e.exit_code());
    }
}
