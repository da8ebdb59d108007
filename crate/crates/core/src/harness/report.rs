//! Summaries across finished runs: accuracy against parameter count,
//! per-layer sparsity and storage accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::metrics::write_atomic;
use crate::harness::train::RunSummary;

pub const REPORT_COLUMNS: [&str; 9] = [
    "run",
    "method",
    "seed",
    "sparsity",
    "param_count",
    "sparse_dense_count",
    "sparse_active_count",
    "descriptive_length_bits",
    "final_test_acc",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub runs: Vec<(String, RunSummary)>,
    /// Method name to `(param_count, accuracy)` points.
    pub series: BTreeMap<String, Vec<(usize, f64)>>,
    pub files: Vec<PathBuf>,
}

pub fn load_summary(run_dir: &Path) -> Result<RunSummary> {
    let text = fs::read(run_dir.join("summary.json"))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Writes `report.csv`, `layers.csv` and `accuracy.svg` into `out_dir`.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportOutput> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one run".into()));
    }
    let mut runs = Vec::new();
    for d in run_dirs {
        let id = d
            .file_name()
            .map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        runs.push((id, load_summary(d)?));
    }
    let mut series: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (_, s) in &runs {
        series
            .entry(s.method.name().to_string())
            .or_default()
            .push((s.param_count, s.final_test_acc));
    }

    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for (id, s) in &runs {
        w.write_record([
            id.clone(),
            s.method.name().to_string(),
            s.seed.to_string(),
            s.sparsity.to_string(),
            s.param_count.to_string(),
            s.sparse_dense_count.to_string(),
            s.sparse_active_count.to_string(),
            s.descriptive_length_bits.to_string(),
            s.final_test_acc.to_string(),
        ])?;
    }
    let report_csv = out_dir.join("report.csv");
    write_atomic(&report_csv, &w.into_inner().map_err(|e| e.into_error())?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "method", "tensor", "sparsity"])?;
    for (id, s) in &runs {
        for (name, sp) in s.tensor_names.iter().zip(&s.tensor_sparsity) {
            w.write_record([id.as_str(), s.method.name(), name, &sp.to_string()])?;
        }
    }
    let layers_csv = out_dir.join("layers.csv");
    write_atomic(&layers_csv, &w.into_inner().map_err(|e| e.into_error())?)?;

    let svg_path = out_dir.join("accuracy.svg");
    write_atomic(&svg_path, accuracy_svg(&series).as_bytes())?;
    Ok(ReportOutput {
        runs,
        series,
        files: vec![report_csv, layers_csv, svg_path],
    })
}

const COLORS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

/// Scatter plot of test accuracy against parameter count (log scale).
pub fn accuracy_svg(series: &BTreeMap<String, Vec<(usize, f64)>>) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let pts: Vec<(f64, f64)> = series
        .values()
        .flatten()
        .map(|&(n, a)| ((n.max(1) as f64).log10(), a * 100.0))
        .collect();
    let (mut x0, mut x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#,
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">parameters (log10)</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">test accuracy (%)</text>"#, h / 2.0, h / 2.0);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{fx:.2}</text>"#, sx(fx), h - m + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{fy:.1}</text>"#, m - 6.0, sy(fy) + 4.0);
    }
    for (i, (name, points)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for &(n, a) in points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{c}"><title>{name}: {n} params, {:.2}%</title></circle>"#,
                sx((n.max(1) as f64).log10()),
                sy(a * 100.0),
                a * 100.0
            );
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{ly}" r="4" fill="{c}"/><text x="{}" y="{}">{name}</text>"#, w - m - 110.0, w - m - 100.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
