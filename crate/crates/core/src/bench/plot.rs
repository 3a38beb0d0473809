//! SVG accuracy charts from a metrics CSV.
//!
//! For a chosen axis (entangler, layers or qubits) records are grouped by the
//! remaining configuration fields. Each group gets a line chart of median test
//! accuracy per epoch with one series per axis value; each algorithm gets a
//! grouped bar chart of final-epoch accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::{median, read_metrics, RunRecord};
use crate::error::{Error, Result};
use crate::models::Algo;
use crate::templates::EntanglerKind;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlotAxis {
    Entangler,
    Layers,
    Qubits,
}

impl PlotAxis {
    pub const ALL: [PlotAxis; 3] = [PlotAxis::Entangler, PlotAxis::Layers, PlotAxis::Qubits];

    pub fn as_str(self) -> &'static str {
        match self {
            PlotAxis::Entangler => "entangler",
            PlotAxis::Layers => "layers",
            PlotAxis::Qubits => "qubits",
        }
    }

    /// Sort key and legend label of a record's value on this axis.
    fn value(self, r: &RunRecord) -> (usize, String) {
        match self {
            PlotAxis::Entangler => {
                let pos = EntanglerKind::ALL.iter().position(|&e| e == r.entangler).unwrap_or(0);
                (pos, r.entangler.as_str().to_uppercase())
            }
            PlotAxis::Layers => (r.n_layers, format!("{} layers", r.n_layers)),
            PlotAxis::Qubits => (r.n_qubits, format!("{} qubits", r.n_qubits)),
        }
    }

    /// Fields other than this axis and the seed, as a file stem and a title.
    fn group(self, r: &RunRecord) -> (String, String) {
        let mut stem = vec![r.algo.as_str().to_string()];
        let mut title = vec![algo_title(r.algo).to_string()];
        if self != PlotAxis::Entangler {
            stem.push(r.entangler.as_str().to_string());
            title.push(r.entangler.as_str().to_uppercase());
        }
        if self != PlotAxis::Layers {
            stem.push(format!("l{}", r.n_layers));
            title.push(format!("{} layers", r.n_layers));
        }
        if self != PlotAxis::Qubits {
            stem.push(format!("q{}", r.n_qubits));
            title.push(format!("{} qubits", r.n_qubits));
        }
        (stem.join("-"), title.join(", "))
    }
}

impl FromStr for PlotAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entangler" => Ok(PlotAxis::Entangler),
            "layers" => Ok(PlotAxis::Layers),
            "qubits" => Ok(PlotAxis::Qubits),
            other => Err(Error::Config(format!("unknown plot axis '{other}'"))),
        }
    }
}

fn algo_title(a: Algo) -> &'static str {
    match a {
        Algo::QuanNN => "QuanNN",
        Algo::QCNN => "QCNN",
        Algo::QResNet => "QResNet",
    }
}

/// Restricts which records are plotted; `None` fields match everything.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlotFilter {
    pub algo: Option<Algo>,
    pub entangler: Option<EntanglerKind>,
    pub layers: Option<usize>,
    pub qubits: Option<usize>,
}

impl PlotFilter {
    pub fn matches(&self, r: &RunRecord) -> bool {
        self.algo.is_none_or(|a| a == r.algo)
            && self.entangler.is_none_or(|e| e == r.entangler)
            && self.layers.is_none_or(|l| l == r.n_layers)
            && self.qubits.is_none_or(|q| q == r.n_qubits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(epoch, median test accuracy)`, ascending in epoch.
    pub points: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineChart {
    pub stem: String,
    pub title: String,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarChart {
    pub stem: String,
    pub title: String,
    pub categories: Vec<String>,
    pub series_labels: Vec<String>,
    /// `values[category][series]`, final-epoch median test accuracy.
    pub values: Vec<Vec<Option<f64>>>,
}

type Grouped = BTreeMap<(Algo, String), (String, BTreeMap<(usize, String), BTreeMap<usize, Vec<f64>>>)>;

fn group(records: &[RunRecord], axis: PlotAxis) -> Grouped {
    let mut out: Grouped = BTreeMap::new();
    for r in records {
        let (stem, title) = axis.group(r);
        out.entry((r.algo, stem))
            .or_insert_with(|| (title, BTreeMap::new()))
            .1
            .entry(axis.value(r))
            .or_default()
            .entry(r.epoch)
            .or_default()
            .push(r.test_acc);
    }
    out
}

fn to_series(label: &str, by_epoch: &BTreeMap<usize, Vec<f64>>) -> Series {
    Series {
        label: label.to_string(),
        points: by_epoch.iter().map(|(&e, accs)| (e, median(accs).unwrap_or(f64::NAN))).collect(),
    }
}

/// One chart per group, series ordered by axis value.
pub fn line_charts(records: &[RunRecord], axis: PlotAxis) -> Vec<LineChart> {
    group(records, axis)
        .into_iter()
        .map(|((_, stem), (title, series))| LineChart {
            stem,
            title,
            series: series.iter().map(|((_, label), pts)| to_series(label, pts)).collect(),
        })
        .collect()
}

/// One grouped bar chart per algorithm: categories are the line-chart groups,
/// bars are axis values.
pub fn bar_charts(records: &[RunRecord], axis: PlotAxis) -> Vec<BarChart> {
    let grouped = group(records, axis);
    let mut per_algo: BTreeMap<Algo, Vec<_>> = BTreeMap::new();
    for ((algo, _), (title, series)) in &grouped {
        per_algo.entry(*algo).or_default().push((title.clone(), series));
    }
    per_algo
        .into_iter()
        .map(|(algo, groups)| {
            let mut labels: BTreeMap<&(usize, String), ()> = BTreeMap::new();
            for (_, series) in &groups {
                for k in series.keys() {
                    labels.insert(k, ());
                }
            }
            let labels: Vec<&(usize, String)> = labels.into_keys().collect();
            let values = groups
                .iter()
                .map(|(_, series)| {
                    labels
                        .iter()
                        .map(|k| series.get(*k).and_then(|pts| pts.values().next_back()).and_then(|v| median(v)))
                        .collect()
                })
                .collect();
            BarChart {
                stem: format!("{}-final", algo.as_str()),
                title: format!("{} final test accuracy by {}", algo_title(algo), axis.as_str()),
                categories: groups.iter().map(|(t, _)| strip_algo(t)).collect(),
                series_labels: labels.iter().map(|(_, l)| l.clone()).collect(),
                values,
            }
        })
        .collect()
}

fn strip_algo(title: &str) -> String {
    title.split_once(", ").map_or(String::new(), |(_, rest)| rest.to_string())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn plot_area() -> (f64, f64, f64, f64) {
    (MARGIN_LEFT, MARGIN_TOP, WIDTH - MARGIN_LEFT - MARGIN_RIGHT, HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
}

/// Map an accuracy in `[0, 1]` to an SVG y coordinate.
fn y_of(acc: f64) -> f64 {
    let (_, top, _, h) = plot_area();
    top + h * (1.0 - acc.clamp(0.0, 1.0))
}

/// Map an epoch to an SVG x coordinate given the plotted epoch range.
pub fn x_of(epoch: usize, first: usize, last: usize) -> f64 {
    let (left, _, w, _) = plot_area();
    if last == first {
        left + w / 2.0
    } else {
        left + w * (epoch - first) as f64 / (last - first) as f64
    }
}

/// SVG coordinates of a series' polyline.
pub fn polyline_coords(series: &Series, first: usize, last: usize) -> Vec<(f64, f64)> {
    series.points.iter().map(|&(e, a)| (x_of(e, first, last), y_of(a))).collect()
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn y_axis(out: &mut String) {
    let (left, top, w, h) = plot_area();
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let y = y_of(acc);
        let _ = writeln!(out, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + w);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{acc:.1}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.2}" stroke="black"/>"#, top + h);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">test accuracy</text>"#,
        top + h / 2.0,
        top + h / 2.0
    );
}

fn legend(out: &mut String, labels: &[String]) {
    let x = WIDTH - MARGIN_RIGHT + 16.0;
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{:.2}" width="12" height="12" fill="{color}"/>"#, y - 10.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y:.2}">{}</text>"#, x + 18.0, escape(label));
    }
}

pub fn render_line_chart(chart: &LineChart) -> String {
    let first = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).min().unwrap_or(1);
    let last = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).max().unwrap_or(1);
    let (left, top, w, h) = plot_area();
    let mut out = String::new();
    svg_open(&mut out, &chart.title);
    y_axis(&mut out);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, top + h, left + w, top + h);
    for e in first..=last {
        let x = x_of(e, first, last);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#, top + h + 18.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#, left + w / 2.0, HEIGHT - 10.0);
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = polyline_coords(s, first, last).iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            r#"<polyline data-series="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&s.label),
            pts.join(" ")
        );
    }
    legend(&mut out, &chart.series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

pub fn render_bar_chart(chart: &BarChart) -> String {
    let (left, top, w, h) = plot_area();
    let mut out = String::new();
    svg_open(&mut out, &chart.title);
    y_axis(&mut out);
    let _ = writeln!(out, r#"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, top + h, left + w, top + h);
    let n_cat = chart.categories.len().max(1) as f64;
    let slot = w / n_cat;
    let bar = slot * 0.8 / chart.series_labels.len().max(1) as f64;
    for (c, (cat, vals)) in chart.categories.iter().zip(&chart.values).enumerate() {
        let x0 = left + slot * c as f64 + slot * 0.1;
        for (s, v) in vals.iter().enumerate() {
            if let Some(v) = v {
                let y = y_of(*v);
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{}"><title>{v:.4}</title></rect>"#,
                    x0 + bar * s as f64,
                    top + h - y,
                    PALETTE[s % PALETTE.len()]
                );
            }
        }
        if chart.categories.len() <= 12 {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
                x0 + slot * 0.4,
                top + h + 16.0,
                escape(cat)
            );
        }
    }
    legend(&mut out, &chart.series_labels);
    out.push_str("</svg>\n");
    out
}

/// Render charts for `axis` into `out_dir/<axis>/`. Returns the written
/// files; an empty selection writes nothing and logs a warning.
pub fn plot(csv: &Path, axis: PlotAxis, filter: &PlotFilter, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let records: Vec<RunRecord> = read_metrics(csv)?.into_iter().filter(|r| filter.matches(r)).collect();
    plot_records(&records, axis, out_dir)
}

pub fn plot_records(records: &[RunRecord], axis: PlotAxis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        log::warn!("no records match the plot filter; nothing written");
        return Ok(Vec::new());
    }
    let dir = out_dir.join(axis.as_str());
    fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut files = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        files.push(path);
        Ok(())
    };
    for chart in line_charts(records, axis) {
        write(format!("line-{}.svg", chart.stem), render_line_chart(&chart))?;
    }
    for chart in bar_charts(records, axis) {
        write(format!("bar-{}.svg", chart.stem), render_bar_chart(&chart))?;
    }
    Ok(files)
}
