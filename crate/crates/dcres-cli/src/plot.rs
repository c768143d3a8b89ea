//! Static SVG renderings of the command outputs. The CSVs stay the data
//! contract; these files are a convenience for eyeballing a run without a
//! plotting stack. Everything is emitted inline, with no external assets.

use std::fs;
use std::path::Path;

use dcres::sim::Trajectory;
use dcres::tf::FreqSample;

use crate::error::CliError;

const CHART_W: f64 = 860.0;
const CHART_H: f64 = 420.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 52.0;
const PALETTE: [&str; 4] = ["#1668a8", "#c2503c", "#3a8a4d", "#8456a8"];

struct Series<'a> {
    label: &'a str,
    points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e6).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn wrap_svg(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n{body}</svg>\n"
    )
}

/// One chart as a `<g>` fragment sized [`CHART_W`] x [`CHART_H`].
///
/// A logarithmic x axis drops non-positive abscissas; an empty result
/// degrades to a label instead of failing the command.
fn line_chart(title: &str, x_label: &str, y_label: &str, log_x: bool, series: &[Series]) -> String {
    let mapped: Vec<(usize, Vec<(f64, f64)>)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pts = s
                .points
                .iter()
                .filter(|(x, y)| (!log_x || *x > 0.0) && x.is_finite() && y.is_finite())
                .map(|&(x, y)| (if log_x { x.log10() } else { x }, y))
                .collect();
            (i, pts)
        })
        .collect();

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in &mapped {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        return format!(
            "<text x=\"20\" y=\"30\" font-size=\"14\">{}: no data</text>",
            esc(title)
        );
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let y_pad = ((y_max - y_min) * 0.05).max(y_max.abs().max(1.0) * 1e-3);
    y_min -= y_pad;
    y_max += y_pad;

    let plot_w = CHART_W - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = CHART_H - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    out.push_str("<g font-size=\"12\" fill=\"#222222\">\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        esc(title)
    ));

    // axis ticks with light grid lines
    let x_ticks: Vec<f64> = if log_x {
        let lo = x_min.ceil() as i64;
        let hi = x_max.floor() as i64;
        if lo <= hi {
            (lo..=hi).map(|k| k as f64).collect()
        } else {
            vec![x_min, x_max]
        }
    } else {
        (0..5)
            .map(|i| x_min + (x_max - x_min) * i as f64 / 4.0)
            .collect()
    };
    for &xt in &x_ticks {
        let gx = px(xt);
        let label = if log_x {
            format!("1e{}", xt.round() as i64)
        } else {
            fmt_tick(xt)
        };
        out.push_str(&format!(
            "<line x1=\"{gx:.2}\" y1=\"{:.2}\" x2=\"{gx:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        ));
        out.push_str(&format!(
            "<text x=\"{gx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>\n",
            MARGIN_TOP + plot_h + 18.0
        ));
    }
    for i in 0..5 {
        let yt = y_min + (y_max - y_min) * i as f64 / 4.0;
        let gy = py(yt);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            gy + 4.0,
            fmt_tick(yt)
        ));
    }

    out.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#555555\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        CHART_H - 12.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        esc(y_label)
    ));

    for (i, pts) in &mapped {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        if series.len() > 1 {
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{}</text>\n",
                MARGIN_LEFT + plot_w - 150.0,
                MARGIN_TOP + 16.0 + 16.0 * *i as f64,
                esc(series[*i].label)
            ));
        }
    }
    out.push_str("</g>\n");
    out
}

/// Bus voltage against time, thinned to a few thousand points.
pub fn write_trajectory_svg(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let stride = (traj.len() / 4000).max(1);
    let points: Vec<(f64, f64)> = (0..traj.len())
        .step_by(stride)
        .map(|n| (traj.time_at(n), traj.v_bus()[n]))
        .collect();
    let chart = line_chart(
        "bus voltage",
        "t in s",
        "v_bus in V",
        false,
        &[Series {
            label: "v_bus",
            points,
        }],
    );
    fs::write(path, wrap_svg(CHART_W, CHART_H, &chart))?;
    Ok(())
}

/// Magnitude and phase panels over a logarithmic frequency axis.
pub fn write_bode_svg(path: &Path, name: &str, samples: &[FreqSample]) -> Result<(), CliError> {
    let mag: Vec<(f64, f64)> = samples.iter().map(|s| (s.omega, s.mag_db())).collect();
    let phase: Vec<(f64, f64)> = samples.iter().map(|s| (s.omega, s.phase_deg())).collect();
    let top = line_chart(
        &format!("{name}: magnitude"),
        "omega in rad/s",
        "magnitude in dB",
        true,
        &[Series {
            label: "mag",
            points: mag,
        }],
    );
    let bottom = line_chart(
        &format!("{name}: phase"),
        "omega in rad/s",
        "phase in deg",
        true,
        &[Series {
            label: "phase",
            points: phase,
        }],
    );
    let body = format!("{top}<g transform=\"translate(0,{CHART_H})\">\n{bottom}</g>\n");
    fs::write(path, wrap_svg(CHART_W, 2.0 * CHART_H, &body))?;
    Ok(())
}

/// Measured magnitude samples overlaid with the fitted model's curve.
pub fn write_fit_overlay_svg(
    path: &Path,
    measured: &[FreqSample],
    fit: &[FreqSample],
) -> Result<(), CliError> {
    let m: Vec<(f64, f64)> = measured.iter().map(|s| (s.omega, s.mag_db())).collect();
    let f: Vec<(f64, f64)> = fit.iter().map(|s| (s.omega, s.mag_db())).collect();
    let chart = line_chart(
        "measured response and rational fit",
        "omega in rad/s",
        "magnitude in dB",
        true,
        &[
            Series {
                label: "measured",
                points: m,
            },
            Series {
                label: "fit",
                points: f,
            },
        ],
    );
    fs::write(path, wrap_svg(CHART_W, CHART_H, &chart))?;
    Ok(())
}
