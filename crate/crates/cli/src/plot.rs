//! Line plots of CSV columns as standalone SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{write_file, CliError, CliResult};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub csv: Vec<PathBuf>,
    pub columns: Vec<String>,
    pub out: PathBuf,
    pub log_y: bool,
    /// Column used for the horizontal axis; the row index when absent.
    pub x_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn read_series(path: &Path, columns: &[String], x_column: Option<&str>) -> CliResult<Vec<Series>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::csv(path, e))?
        .clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: no column '{name}'", path.display())))
    };
    let x_idx = x_column.map(index).transpose()?;
    let idx: Vec<usize> = columns.iter().map(|c| index(c)).collect::<CliResult<_>>()?;
    let mut series: Vec<Series> = columns
        .iter()
        .map(|c| Series {
            label: format!("{}:{c}", path.display()),
            points: Vec::new(),
        })
        .collect();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::csv(path, e))?;
        let parse = |i: usize| -> CliResult<f64> {
            record[i].trim().parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: row {}: '{}' is not a number",
                    path.display(),
                    row + 1,
                    &record[i]
                ))
            })
        };
        let x = match x_idx {
            Some(i) => parse(i)?,
            None => row as f64,
        };
        for (s, &i) in series.iter_mut().zip(&idx) {
            s.points.push((x, parse(i)?));
        }
    }
    Ok(series)
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one polyline per series. With `log_y`, non-positive values are
/// dropped and the vertical axis is `log10`.
pub fn render_svg(series: &[Series], log_y: bool) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let valid = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0);
    let (x0, x1) = bounds(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| valid(p)).map(|p| p.0)),
    )
    .unwrap_or((0.0, 1.0));
    let (y0, y1) = bounds(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| valid(p)).map(|p| ty(p.1))),
    )
    .unwrap_or((0.0, 1.0));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
    .unwrap();
    let ylabel = |v: f64| {
        if log_y {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3e}")
        }
    };
    for (v, y) in [(y0, HEIGHT - MARGIN), (y1, MARGIN)] {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            ylabel(v)
        )
        .unwrap();
    }
    for (v, x) in [(x0, MARGIN), (x1, WIDTH - MARGIN)] {
        writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v}</text>"#,
            HEIGHT - MARGIN + 16.0
        )
        .unwrap();
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| valid(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_plot(opts: &PlotOptions) -> CliResult<usize> {
    if opts.csv.is_empty() || opts.columns.is_empty() {
        return Err(CliError::Usage(
            "plot needs at least one csv file and one column".into(),
        ));
    }
    let mut series = Vec::new();
    for path in &opts.csv {
        series.extend(read_series(path, &opts.columns, opts.x_column.as_deref())?);
    }
    write_file(&opts.out, &render_svg(&series, opts.log_y))?;
    Ok(series.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_empty_series_render() {
        let flat = Series {
            label: "a<b".into(),
            points: vec![(0.0, 2.0), (1.0, 2.0)],
        };
        let svg = render_svg(&[flat], false);
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let svg = render_svg(&[], true);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn log_axis_drops_non_positive() {
        let s = Series {
            label: "s".into(),
            points: vec![(0.0, 0.0), (1.0, 1e-3), (2.0, 10.0)],
        };
        let svg = render_svg(&[s], true);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let points = line.split("points=\"").nth(1).unwrap();
        assert_eq!(points.split_whitespace().count(), 2);
    }
}
