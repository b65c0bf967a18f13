//! Learning-curve SVGs: mean across seeds with a ±1 std band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{config, Error, Result};

const W: f64 = 800.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Aggregated curve of one column. Index `i` combines the `i`-th logged
/// value of every seed, so the length is that of the shortest seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub column: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Trailing moving average; the first `window − 1` points average what is
/// available.
fn smooth(v: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    let mut sum = 0.0;
    for i in 0..v.len() {
        sum += v[i];
        if i >= window {
            sum -= v[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Reads a metrics CSV (needs `step`; `seed` is optional) and aggregates
/// each column across seeds after smoothing. Empty cells are skipped.
pub fn plot_series(csv_in: &Path, columns: &[&str], window: usize) -> Result<Vec<PlotSeries>> {
    if window == 0 {
        return Err(config("smoothing window must be at least 1"));
    }
    let mut rd = csv::Reader::from_path(csv_in)?;
    let headers = rd.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let step_col = find("step").ok_or_else(|| Error::Schema("CSV has no 'step' column".into()))?;
    let seed_col = find("seed");
    let cols: Vec<usize> = columns
        .iter()
        .map(|c| find(c).ok_or_else(|| Error::Schema(format!("CSV has no '{c}' column"))))
        .collect::<Result<_>>()?;
    // column -> seed -> [(step, value)]
    let mut data: Vec<BTreeMap<String, Vec<(f64, f64)>>> = vec![BTreeMap::new(); cols.len()];
    for row in rd.records() {
        let row = row?;
        let parse = |i: usize| -> Result<Option<f64>> {
            let s = row.get(i).unwrap_or("").trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Schema(format!("non-numeric cell '{s}'")))
        };
        let step = parse(step_col)?.ok_or_else(|| Error::Schema("empty step cell".into()))?;
        let seed = seed_col.and_then(|i| row.get(i)).unwrap_or("").to_string();
        for (k, &c) in cols.iter().enumerate() {
            if let Some(v) = parse(c)? {
                data[k].entry(seed.clone()).or_default().push((step, v));
            }
        }
    }
    let mut out = Vec::new();
    for (k, per_seed) in data.into_iter().enumerate() {
        let n = per_seed.values().map(Vec::len).min().unwrap_or(0);
        let seeds = per_seed.len() as f64;
        let smoothed: Vec<(Vec<f64>, Vec<f64>)> = per_seed
            .values()
            .map(|pts| {
                let xs = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                (xs, smooth(&ys, window))
            })
            .collect();
        let mut s = PlotSeries {
            column: columns[k].to_string(),
            x: Vec::with_capacity(n),
            mean: Vec::with_capacity(n),
            std: Vec::with_capacity(n),
        };
        for i in 0..n {
            let x = smoothed.iter().map(|(xs, _)| xs[i]).sum::<f64>() / seeds;
            let m = smoothed.iter().map(|(_, ys)| ys[i]).sum::<f64>() / seeds;
            let var = smoothed.iter().map(|(_, ys)| (ys[i] - m).powi(2)).sum::<f64>() / seeds;
            s.x.push(x);
            s.mean.push(m);
            s.std.push(var.sqrt());
        }
        out.push(s);
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Renders [`plot_series`] as a standalone SVG line chart.
pub fn emit_plot(csv_in: &Path, svg_out: &Path, columns: &[&str], window: usize) -> Result<Vec<PlotSeries>> {
    let series = plot_series(csv_in, columns, window)?;
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = bounds(
        series
            .iter()
            .flat_map(|s| s.mean.iter().zip(&s.std).flat_map(|(m, d)| [m - d, m + d])),
    );
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
        b = H - BOTTOM,
        r = W - RIGHT
    );
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="11" fill="black">"#);
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.4}</text>"#, px(xv), H - BOTTOM + 16.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.4}</text>"#, LEFT - 6.0, py(yv) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">env steps</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0);
    svg.push_str("</g>\n");

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let name = escape(&s.column);
        let upper: Vec<String> = (0..s.x.len()).map(|i| format!("{:.3},{:.3}", px(s.x[i]), py(s.mean[i] + s.std[i]))).collect();
        let lower: Vec<String> = (0..s.x.len()).rev().map(|i| format!("{:.3},{:.3}", px(s.x[i]), py(s.mean[i] - s.std[i]))).collect();
        let line: Vec<String> = (0..s.x.len()).map(|i| format!("{:.3},{:.3}", px(s.x[i]), py(s.mean[i]))).collect();
        let _ = writeln!(svg, r#"<g class="series" data-column="{name}">"#);
        if !s.x.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" ")
            );
            let _ = writeln!(svg, r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        }
        let ly = TOP + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            LEFT + 10.0
        );
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    std::fs::write(svg_out, svg)?;
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_file(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("m.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn moving_average() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(smooth(&[1.0, 3.0, 5.0], 1), vec![1.0, 3.0, 5.0]);
    }

    #[test]
    fn single_seed_band_is_zero_and_window_one_is_raw() {
        let tmp = tempfile::tempdir().unwrap();
        let p = csv_file(tmp.path(), "seed,step,r\n0,10,1.5\n0,20,\n0,30,-2\n");
        let s = plot_series(&p, &["r"], 1).unwrap();
        assert_eq!(s[0].x, vec![10.0, 30.0]);
        assert_eq!(s[0].mean, vec![1.5, -2.0]);
        assert!(s[0].std.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn seeds_are_aggregated() {
        let tmp = tempfile::tempdir().unwrap();
        let p = csv_file(tmp.path(), "seed,step,r\n0,10,1\n0,20,3\n1,10,3\n1,20,5\n1,30,9\n");
        let s = plot_series(&p, &["r"], 1).unwrap();
        assert_eq!(s[0].mean, vec![2.0, 4.0]);
        assert_eq!(s[0].std, vec![1.0, 1.0]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let tmp = tempfile::tempdir().unwrap();
        let p = csv_file(tmp.path(), "seed,step,r\n0,10,1\n");
        assert!(matches!(plot_series(&p, &["q"], 1), Err(Error::Schema(_))));
        assert!(matches!(plot_series(&p, &["r"], 0), Err(Error::Config(_))));
        assert!(plot_series(&tmp.path().join("nope.csv"), &["r"], 1).is_err());
    }

    #[test]
    fn svg_parses_strictly() {
        let tmp = tempfile::tempdir().unwrap();
        let p = csv_file(tmp.path(), "seed,step,a<b,c\n0,10,1,2\n0,20,3,\n1,10,2,2\n1,20,4,\n");
        let out = tmp.path().join("p.svg");
        emit_plot(&p, &out, &["a<b", "c"], 2).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("mean")).count(), 2);
    }
}
