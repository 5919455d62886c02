//! CSV summarization and static SVG plotting for sweep outputs.
//!
//! The plot is a pure function of the CSV bytes: log-log medians of the
//! reward gap and constraint violation against N, with fitted slopes in the
//! legend. No plotting dependency; the SVG is assembled by hand.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Median of a sample (average of the central pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median input"));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Least-squares slope of y against x.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Log-log slope fit, flooring values at `floor` to keep logs finite.
pub fn fit_loglog_slope(ns: &[f64], values: &[f64], floor: f64) -> Option<f64> {
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.max(floor).ln()).collect();
    fit_slope(&xs, &ys)
}

/// Probit-model crossing point: fits `freq(N) ~ Phi((ln N - mu) / s)` by
/// least squares on probit-transformed frequencies and returns the `N` at
/// which the fitted curve reaches `target`. Frequencies are clamped away
/// from 0 and 1 using the per-cell run count before transforming.
pub fn fit_success_crossing(
    ns: &[f64],
    freqs: &[f64],
    runs_per_cell: f64,
    target: f64,
) -> Option<f64> {
    if ns.len() != freqs.len() || ns.len() < 2 || !(0.0 < target && target < 1.0) {
        return None;
    }
    let clamp = (0.5 / runs_per_cell).clamp(1e-6, 0.49);
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let zs: Vec<f64> = freqs
        .iter()
        .map(|f| probit(f.clamp(clamp, 1.0 - clamp)))
        .collect();
    // Linear fit z = a + b x; crossing at z* = probit(target).
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let mz = zs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxz = 0.0;
    for (x, z) in xs.iter().zip(&zs) {
        sxx += (x - mx) * (x - mx);
        sxz += (x - mx) * (z - mz);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxz / sxx;
    if slope.abs() < 1e-12 {
        return None;
    }
    let intercept = mz - slope * mx;
    Some(((probit(target) - intercept) / slope).exp())
}

/// Inverse standard normal CDF (Acklam's rational approximation; adequate
/// for curve fitting well inside (0, 1)).
#[allow(clippy::excessive_precision)]
pub fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// A parsed sweep CSV: data rows only, comments and the header skipped.
pub struct SweepCsv {
    pub ns: Vec<u64>,
    pub reward_gaps: Vec<f64>,
    pub constraint_violations: Vec<f64>,
}

pub fn parse_sweep_csv(text: &str) -> Result<SweepCsv> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::input("CSV is empty: expected a header line"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::input(format!("CSV header is missing column '{name}'")))
    };
    let n_col = col("n")?;
    let gap_col = col("reward_gap")?;
    let viol_col = col("constraint_violation")?;
    let mut out = SweepCsv {
        ns: Vec::new(),
        reward_gaps: Vec::new(),
        constraint_violations: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::input(format!(
                "CSV line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |idx: usize, what: &str| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| {
                Error::input(format!(
                    "CSV line {}: cannot parse {what} '{}'",
                    lineno + 2,
                    fields[idx]
                ))
            })
        };
        out.ns.push(parse(n_col, "n")? as u64);
        out.reward_gaps.push(parse(gap_col, "reward_gap")?);
        out.constraint_violations
            .push(parse(viol_col, "constraint_violation")?);
    }
    Ok(out)
}

const PLOT_FLOOR: f64 = 1e-9;

struct Series {
    name: &'static str,
    color: &'static str,
    points: Vec<(f64, f64)>, // (n, median)
    slope: Option<f64>,
}

/// Renders the log-log medians plot for a sweep CSV into an SVG file.
/// A CSV with no data rows produces an axes-only plot.
pub fn emit_plot(csv_path: &Path, out_svg: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)?;
    let svg = render_plot_svg(&text)?;
    std::fs::write(out_svg, svg)?;
    Ok(())
}

/// The SVG text for a sweep CSV; separated from file IO for testing.
pub fn render_plot_svg(csv_text: &str) -> Result<String> {
    let data = parse_sweep_csv(csv_text)?;
    let mut by_n: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for i in 0..data.ns.len() {
        let entry = by_n.entry(data.ns[i]).or_default();
        entry.0.push(data.reward_gaps[i]);
        entry.1.push(data.constraint_violations[i]);
    }
    let mut gap_series = Series {
        name: "median reward_gap",
        color: "#1f77b4",
        points: Vec::new(),
        slope: None,
    };
    let mut viol_series = Series {
        name: "median constraint_violation",
        color: "#d62728",
        points: Vec::new(),
        slope: None,
    };
    for (&n, (gaps, viols)) in &by_n {
        if let Some(m) = median(gaps) {
            gap_series.points.push((n as f64, m.max(PLOT_FLOOR)));
        }
        if let Some(m) = median(viols) {
            viol_series.points.push((n as f64, m.max(PLOT_FLOOR)));
        }
    }
    for series in [&mut gap_series, &mut viol_series] {
        let ns: Vec<f64> = series.points.iter().map(|p| p.0).collect();
        let vals: Vec<f64> = series.points.iter().map(|p| p.1).collect();
        series.slope = fit_loglog_slope(&ns, &vals, PLOT_FLOOR);
    }

    let (w, h, ml, mr, mt, mb) = (640.0, 440.0, 70.0, 20.0, 30.0, 50.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let all: Vec<(f64, f64)> = gap_series
        .points
        .iter()
        .chain(&viol_series.points)
        .cloned()
        .collect();
    let (x_lo, x_hi, y_lo, y_hi) = if all.is_empty() {
        (1.0f64, 10.0f64, 1e-3f64, 1.0f64)
    } else {
        let x_lo = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let x_hi = all.iter().map(|p| p.0).fold(0.0f64, f64::max);
        let y_lo = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let y_hi = all.iter().map(|p| p.1).fold(0.0f64, f64::max);
        (x_lo, x_hi * 1.0001, y_lo, y_hi * 1.0001)
    };
    let x_of = |n: f64| ml + plot_w * ((n.ln() - x_lo.ln()) / (x_hi.ln() - x_lo.ln()).max(1e-12));
    let y_of =
        |v: f64| mt + plot_h * (1.0 - (v.ln() - y_lo.ln()) / (y_hi.ln() - y_lo.ln()).max(1e-12));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb,
        w - mr,
        h - mb
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>",
        h - mb
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">samples per state-action pair N (log)</text>",
        ml + plot_w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">median error (log)</text>",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    );
    for (i, series) in [&gap_series, &viol_series].into_iter().enumerate() {
        if !series.points.is_empty() {
            let path: Vec<String> = series
                .points
                .iter()
                .map(|&(n, v)| format!("{:.2},{:.2}", x_of(n), y_of(v)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
                series.color,
                path.join(" ")
            );
            for &(n, v) in &series.points {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                    x_of(n),
                    y_of(v),
                    series.color
                );
            }
        }
        let label = match series.slope {
            Some(s) => format!("{} (slope {:.3})", series.name, s),
            None => format!("{} (no data)", series.name),
        };
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>",
            ml + 8.0,
            mt + 16.0 + 16.0 * i as f64,
            series.color,
            label
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_basics() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0]), Some(3.0));
        assert_eq!(median(&[1.0, 2.0, 4.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 10.0]), Some(2.5));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let ns: Vec<f64> = vec![250.0, 1000.0, 4000.0, 16000.0];
        let vals: Vec<f64> = ns.iter().map(|n| n.powf(-0.5)).collect();
        let slope = fit_loglog_slope(&ns, &vals, 1e-12).unwrap();
        assert!((slope + 0.5).abs() < 0.01, "slope {slope}");
    }

    #[test]
    fn probit_roundtrip() {
        for p in [0.05, 0.2, 0.5, 0.6, 0.9, 0.99] {
            let z = probit(p);
            // Check against the error-function relation via a coarse CDF.
            let cdf = 0.5 * (1.0 + erf_approx(z / std::f64::consts::SQRT_2));
            assert!((cdf - p).abs() < 2e-3, "p={p} z={z} cdf={cdf}");
        }
    }

    fn erf_approx(x: f64) -> f64 {
        // Abramowitz-Stegun 7.1.26.
        let sign = x.signum();
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.3275911 * x);
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        sign * y
    }

    #[test]
    fn crossing_recovers_a_synthetic_shift() {
        // freq(N) = Phi((ln N - ln 1000) / 0.8): crossing of 0.5 at N = 1000.
        let ns = [250.0f64, 1000.0, 4000.0, 16000.0];
        let freqs: Vec<f64> = ns
            .iter()
            .map(|n: &f64| {
                0.5 * (1.0 + erf_approx(((n.ln() - 1000f64.ln()) / 0.8) / std::f64::consts::SQRT_2))
            })
            .collect();
        // Frequency clamping near 1 biases the fit slightly; one grid step of
        // accuracy is plenty for comparing two crossings.
        let hat = fit_success_crossing(&ns, &freqs, 100.0, 0.5).unwrap();
        assert!((hat / 1000.0 - 1.0).abs() < 0.15, "crossing {hat}");
    }

    #[test]
    fn synthetic_csv_slope() {
        let mut csv = String::from(
            "seed,n,queries_used,v_reward_true,v_constraint_true,v_reward_opt,reward_gap,constraint_violation,relaxed_ok,strict_ok,wall_time_s\n",
        );
        for n in [250u64, 1000, 4000, 16000] {
            for seed in 0..5 {
                let v = (n as f64).powf(-0.5);
                csv.push_str(&format!("{seed},{n},0,0,0,0,{v},{v},true,true,0\n"));
            }
        }
        let svg = render_plot_svg(&csv).unwrap();
        assert!(svg.contains("slope -0.500"), "svg legend: {svg}");
    }

    #[test]
    fn empty_csv_gives_axes_only() {
        let csv = "seed,n,queries_used,v_reward_true,v_constraint_true,v_reward_opt,reward_gap,constraint_violation,relaxed_ok,strict_ok,wall_time_s\n";
        let svg = render_plot_svg(csv).unwrap();
        assert!(svg.contains("<line"));
        assert!(!svg.contains("<polyline"));
        assert!(svg.contains("no data"));
    }

    #[test]
    fn malformed_csv_is_input_error() {
        assert!(render_plot_svg("").is_err());
        assert!(render_plot_svg("a,b,c\n1,2\n").is_err());
        let missing = "seed,n,queries_used\n1,2,3\n";
        assert!(render_plot_svg(missing).is_err());
    }
}
