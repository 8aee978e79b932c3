//! Hand-written SVG charts with a CSV file holding the plotted numbers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::report::ExperimentReport;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    name: String,
    points: Vec<(usize, f64)>,
    dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn plot_box() -> (f64, f64, f64, f64) {
    (
        MARGIN_LEFT,
        MARGIN_TOP,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
    )
}

fn axes(s: &mut String, n_layers: usize, y_max: f64, x_label: &str, y_label: &str, y_fmt: impl Fn(f64) -> String) {
    let (x0, y0, w, h) = plot_box();
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y0} V{} H{}" fill="none" stroke="black"/>"#,
        y0 + h,
        x0 + w
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y0 + h - h * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            x0 + w,
            x0 - 6.0,
            y + 4.0,
            y_fmt(v)
        );
    }
    let step = n_layers.div_ceil(16).max(1);
    for l in (0..n_layers).step_by(step) {
        let x = layer_x(l, n_layers);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{l}</text>"#,
            y0 + h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        x0 + w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        y0 + h / 2.0,
        escape(y_label)
    );
}

/// Centre of layer `l` on the x axis.
fn layer_x(l: usize, n_layers: usize) -> f64 {
    let (x0, _, w, _) = plot_box();
    x0 + w * (l as f64 + 0.5) / n_layers.max(1) as f64
}

fn legend(s: &mut String, entries: &[(String, &str, bool)]) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    for (i, (name, color, dashed)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            escape(name)
        );
    }
}

fn line_chart(title: &str, n_layers: usize, series: &[Series]) -> String {
    let (_, y0, _, h) = plot_box();
    let mut s = svg_open(title);
    axes(&mut s, n_layers, 1.0, "layer", "accuracy", |v| format!("{:.0}%", 100.0 * v));
    let mut entries = Vec::new();
    for (i, series) in series.iter().enumerate() {
        let color = if series.dashed { "#555" } else { PALETTE[i % PALETTE.len()] };
        let dash = if series.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(l, v)| format!("{:.2},{:.2}", layer_x(l, n_layers), y0 + h - h * v.clamp(0.0, 1.0)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
        entries.push((series.name.clone(), color, series.dashed));
    }
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

fn bar_chart(title: &str, counts: &[usize]) -> String {
    let (_, y0, w, h) = plot_box();
    let n = counts.len();
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let y_max = nice_ceiling(max);
    let mut s = svg_open(title);
    axes(&mut s, n, y_max as f64, "layer", "neurons", |v| format!("{v:.0}"));
    let bar = 0.8 * w / n.max(1) as f64;
    for (l, &c) in counts.iter().enumerate() {
        let bh = h * c as f64 / y_max as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{bar:.2}" height="{bh:.2}" fill="{}"><title>layer {l}: {c}</title></rect>"#,
            layer_x(l, n) - bar / 2.0,
            y0 + h - bh,
            PALETTE[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Smallest multiple of 4 at or above `max`.
fn nice_ceiling(max: usize) -> usize {
    max.div_ceil(4) * 4
}

fn write(path: PathBuf, contents: String, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Per-layer accuracy averaged over the runs that have a layer curve; test
/// accuracy when every run recorded it, dev otherwise.
fn mean_layer_curve(report: &ExperimentReport) -> Option<(Vec<(usize, f64)>, &'static str)> {
    let curves: Vec<_> = report.runs.iter().filter_map(|r| r.layer_curve.as_ref()).collect();
    if curves.is_empty() {
        return None;
    }
    let use_test = curves.iter().all(|c| c.iter().all(|l| l.test.is_some()));
    let n_layers = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut points = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let values: Vec<f64> = curves
            .iter()
            .filter_map(|c| c.iter().find(|l| l.layer == layer))
            .map(|l| if use_test { l.test.unwrap() } else { l.dev })
            .collect();
        if !values.is_empty() {
            points.push((layer, values.iter().sum::<f64>() / values.len() as f64));
        }
    }
    Some((points, if use_test { "test" } else { "dev" }))
}

/// Writes every chart the report has data for into `dir`; sections absent
/// from the report are skipped.
pub fn emit_charts(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    emit_comparison_charts(&[(report.task.clone(), report)], None, dir)
}

/// Like [`emit_charts`] with one accuracy series per report, plus an
/// optional dashed baseline series (typically a control task).
pub fn emit_comparison_charts(
    reports: &[(String, &ExperimentReport)],
    baseline: Option<(String, &ExperimentReport)>,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();

    let mut series = Vec::new();
    let mut split = "dev";
    for (name, report) in reports {
        match mean_layer_curve(report) {
            Some((points, s)) => {
                split = s;
                series.push(Series {
                    name: name.clone(),
                    points,
                    dashed: false,
                });
            }
            None => log::warn!("{name}: no layer curve, skipping accuracy chart series"),
        }
    }
    if let Some((name, report)) = &baseline {
        match mean_layer_curve(report) {
            Some((points, _)) => series.push(Series {
                name: name.clone(),
                points,
                dashed: true,
            }),
            None => log::warn!("{name}: baseline has no layer curve"),
        }
    }
    if series.iter().any(|s| !s.dashed) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n_layers = series.iter().flat_map(|s| s.points.iter().map(|p| p.0 + 1)).max().unwrap_or(0);
        let mut csv = String::from("series,layer,accuracy\n");
        for s in &series {
            for (l, v) in &s.points {
                let _ = writeln!(csv, "{},{l},{v}", csv_field(&s.name));
            }
        }
        write(dir.join("layer_curve.csv"), csv, &mut written)?;
        let title = format!("Probe accuracy per layer ({split})");
        write(dir.join("layer_curve.svg"), line_chart(&title, n_layers, &series), &mut written)?;
    }

    for (name, report) in reports {
        let Some(hist) = report.runs.iter().find_map(|r| r.histogram.as_ref()) else {
            log::warn!("{name}: no neuron histogram, skipping bar chart");
            continue;
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = if reports.len() == 1 {
            "neurons_per_layer".to_string()
        } else {
            format!("neurons_per_layer_{}", file_stem(name))
        };
        let mut csv = String::from("layer,neurons\n");
        for (l, c) in hist.counts.iter().enumerate() {
            let _ = writeln!(csv, "{l},{c}");
        }
        write(dir.join(format!("{stem}.csv")), csv, &mut written)?;
        let title = format!("{name}: {} ({} neurons) by layer", hist.source, hist.n_neurons);
        write(dir.join(format!("{stem}.svg")), bar_chart(&title, &hist.counts), &mut written)?;
    }
    Ok(written)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn gridline_ceiling() {
        assert_eq!(nice_ceiling(1), 4);
        assert_eq!(nice_ceiling(8), 8);
        assert_eq!(nice_ceiling(9), 12);
    }

    #[test]
    fn bars_fit_the_plot() {
        let svg = bar_chart("t", &[3, 0, 7]);
        assert_eq!(svg.matches("<rect x=").count(), 3);
        assert!(svg.ends_with("</svg>\n"));
    }
}
