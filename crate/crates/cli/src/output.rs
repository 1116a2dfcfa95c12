//! Output writers: JSON results, sweep tables, plot data, SVG, and the
//! premium/elasticity report.

use std::io::Write;
use std::path::Path;

use rdsuite_core::error::Result;
use rdsuite_core::{BootstrapSummary, HistogramBin, PlotData, RddResult, SweepPoint};

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn result_row(label: &str, r: &RddResult) -> String {
    let fs = match &r.first_stage {
        Some(f) => format!(" | first stage {:.4} (t = {:.2})", f.jump, f.t_statistic),
        None => String::new(),
    };
    format!(
        "{label}: bias-corrected {:.6} (robust se {:.6}) [{:.6}, {:.6}] p = {:.4} | \
         conventional {:.6} (se {:.6}) | h = {:.6}, b = {:.6} | n = {} + {}{fs}",
        r.tau_bias_corrected,
        r.se_robust,
        r.ci_robust.0,
        r.ci_robust.1,
        r.p_value_robust,
        r.tau_conventional,
        r.se_conventional,
        r.bandwidths.h,
        r.bandwidths.b,
        r.n_left,
        r.n_right,
    )
}

const SWEEP_HEADER: [&str; 16] = [
    "at",
    "h",
    "b",
    "rho",
    "tau_conventional",
    "tau_bias_corrected",
    "se_conventional",
    "se_robust",
    "ci_lo",
    "ci_hi",
    "p_value_robust",
    "t_robust",
    "n_left",
    "n_right",
    "is_mse_optimal",
    "error",
];

fn sweep_record(point: &SweepPoint, clip: Option<f64>) -> Vec<String> {
    let mut out = vec![format!("{}", point.at)];
    match &point.result {
        Some(r) => {
            let bound = |v: f64| match clip {
                Some(c) => v.clamp(-c, c),
                None => v,
            };
            let t = if r.se_robust > 0.0 {
                r.tau_bias_corrected / r.se_robust
            } else {
                f64::NAN
            };
            out.extend([
                r.bandwidths.h.to_string(),
                r.bandwidths.b.to_string(),
                r.bandwidths.rho.to_string(),
                bound(r.tau_conventional).to_string(),
                bound(r.tau_bias_corrected).to_string(),
                r.se_conventional.to_string(),
                r.se_robust.to_string(),
                bound(r.ci_robust.0).to_string(),
                bound(r.ci_robust.1).to_string(),
                r.p_value_robust.to_string(),
                t.to_string(),
                r.n_left.to_string(),
                r.n_right.to_string(),
                point.is_mse_optimal.to_string(),
                String::new(),
            ]);
        }
        None => {
            out.extend(std::iter::repeat_n(String::new(), 13));
            out.push(point.is_mse_optimal.to_string());
            out.push(point.error.clone().unwrap_or_default());
        }
    }
    out
}

/// Write a sweep as CSV. `clip` bounds the estimate and interval columns for
/// plot files; the unclipped file is the primary output.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint], clip: Option<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for p in points {
        w.write_record(sweep_record(p, clip))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_plot_bins_csv(path: &Path, plot: &PlotData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["side", "center", "mean_y", "count"])?;
    for bin in &plot.bins {
        let side = if bin.center < 0.0 { "left" } else { "right" };
        w.write_record(&[
            side.to_string(),
            (bin.center + plot.cutoff).to_string(),
            bin.mean_y.to_string(),
            bin.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lo", "hi", "treated", "count", "fraction"])?;
    for b in bins {
        w.write_record(&[
            b.lo.to_string(),
            b.hi.to_string(),
            b.treated.to_string(),
            b.count.to_string(),
            b.fraction.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    let mut xp = 1.0;
    for &c in coeffs {
        acc += c * xp;
        xp *= x;
    }
    acc
}

/// Minimal self-contained scatter-with-overlay SVG for a discontinuity plot.
pub fn write_plot_svg(path: &Path, plot: &PlotData) -> Result<()> {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 40.0;

    let xs: Vec<f64> = plot.bins.iter().map(|b| b.center).collect();
    let mut ys: Vec<f64> = plot.bins.iter().map(|b| b.mean_y).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    for side in [&plot.fit_left, &plot.fit_right] {
        for i in 0..=40 {
            let x = x_min + (x_max - x_min) * i as f64 / 40.0;
            ys.push(poly_eval(side, x));
        }
    }
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_pad = ((y_max - y_min) * 0.05).max(1e-9);
    let (y_lo, y_hi) = (y_min - y_pad, y_max + y_pad);
    let sx = |x: f64| M + (x - x_min) / (x_max - x_min).max(1e-12) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    // Cutoff line at centered x = 0.
    svg.push_str(&format!(
        "<line x1=\"{0}\" y1=\"{M}\" x2=\"{0}\" y2=\"{1}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n",
        sx(0.0),
        H - M
    ));
    for (coeffs, lo, hi, color) in [
        (&plot.fit_left, x_min, 0.0, "#1f77b4"),
        (&plot.fit_right, 0.0, x_max, "#d62728"),
    ] {
        let pts: Vec<String> = (0..=80)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 80.0;
                format!("{:.2},{:.2}", sx(x), sy(poly_eval(coeffs, x)))
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
    }
    for bin in &plot.bins {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#333\" fill-opacity=\"0.7\"/>\n",
            sx(bin.center),
            sy(bin.mean_y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">cutoff {}</text>\n</svg>\n",
        sx(0.0),
        M - 8.0,
        plot.cutoff
    ));
    std::fs::write(path, svg)?;
    Ok(())
}

/// Table 4-style text block: estimate, bootstrap SE in parentheses, one-sided
/// sign p-value in brackets, bootstrap median alongside.
pub fn ge_table(method: &str, summaries: &[BootstrapSummary]) -> String {
    let mut out = format!("method: {method}\n");
    out.push_str(&format!(
        "{:<28} {:>12} {:>12} {:>10} {:>12} {:>8}\n",
        "statistic", "estimate", "(boot se)", "[p sign]", "boot median", "n used"
    ));
    for s in summaries {
        out.push_str(&format!(
            "{:<28} {:>12.5} ({:>10.4}) [{:>8.4}] {:>12.5} {:>8}\n",
            s.name, s.point, s.se, s.p_one_sided, s.median, s.n_used
        ));
    }
    out
}
