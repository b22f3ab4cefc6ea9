//! Evaluation reports: JSON lines, a CSV summary and an SVG plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use soupsr_core::metrics::{Metric, MetricRecord, SignificanceResult};

use crate::error::{Error, Result};

pub fn jsonl<T: serde::Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in items {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Append one JSON line, creating the file if needed.
pub fn append_jsonl<T: serde::Serialize>(path: &Path, item: &T) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(item)?).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (`n - 1`); a single value has std 0.
pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 || mean.is_infinite() { 0.0 } else { (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt() };
    MeanStd { mean, std }
}

fn scale_key(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

/// `(method, scale) -> metric -> values` over successful records, with
/// methods in first-seen order.
fn grouped(records: &[MetricRecord]) -> (Vec<String>, BTreeMap<(usize, u64), (f64, Vec<&MetricRecord>)>) {
    let mut methods: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, u64), (f64, Vec<&MetricRecord>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let m = match methods.iter().position(|x| *x == r.method) {
            Some(i) => i,
            None => {
                methods.push(r.method.clone());
                methods.len() - 1
            }
        };
        groups.entry((m, scale_key(r.scale))).or_insert((r.scale, Vec::new())).1.push(r);
    }
    (methods, groups)
}

/// One row per (method, scale): mean and std of each metric.
pub fn summary_csv(records: &[MetricRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["method", "scale", "n", "rmse_mean", "rmse_std", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "errors"]).map_err(csv_err)?;
    let (methods, groups) = grouped(records);
    for ((m, _), (scale, rs)) in &groups {
        let errors = records.iter().filter(|r| r.method == methods[*m] && scale_key(r.scale) == scale_key(*scale) && !r.is_ok()).count();
        let mut row = vec![methods[*m].clone(), format!("{scale}"), rs.len().to_string()];
        for metric in Metric::ALL {
            let v: Vec<f64> = rs.iter().map(|r| r.get(metric)).collect();
            let ms = mean_std(&v);
            row.push(format!("{}", ms.mean));
            row.push(format!("{}", ms.std));
        }
        row.push(errors.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).map_err(|e| Error::Format(e.to_string()))
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Metric-versus-scale plot, one panel per metric, with significance stars
/// above each scale tick.
pub fn plot_svg(records: &[MetricRecord], significance: &[SignificanceResult]) -> String {
    let (methods, groups) = grouped(records);
    let mut scales: Vec<f64> = groups.values().map(|(s, _)| *s).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    let (pw, ph, pad) = (300.0, 240.0, 48.0);
    let width = 3.0 * (pw + pad) + pad;
    let height = ph + 2.0 * pad + 24.0 + 16.0 * methods.len() as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (smin, smax) = (scales.first().copied().unwrap_or(0.0), scales.last().copied().unwrap_or(1.0));
    let sx = |x0: f64, v: f64| x0 + if smax > smin { (v - smin) / (smax - smin) * pw } else { pw / 2.0 };
    for (pi, metric) in Metric::ALL.iter().enumerate() {
        let x0 = pad + pi as f64 * (pw + pad);
        let y0 = pad;
        let series: Vec<Vec<(f64, f64)>> = (0..methods.len())
            .map(|m| {
                groups
                    .iter()
                    .filter(|((gm, _), _)| *gm == m)
                    .map(|(_, (sc, rs))| (*sc, mean_std(&rs.iter().map(|r| r.get(*metric)).collect::<Vec<_>>()).mean))
                    .filter(|(_, v)| v.is_finite())
                    .collect()
            })
            .collect();
        let vals: Vec<f64> = series.iter().flatten().map(|p| p.1).collect();
        let (mut lo, mut hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let m = (hi - lo) * 0.08;
        let (lo, hi) = (lo - m, hi + m);
        let sy = |v: f64| y0 + ph - (v - lo) / (hi - lo) * ph;
        let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, x0 + pw / 2.0, y0 - 18.0, metric.name().to_uppercase());
        for k in 0..=4 {
            let v = lo + (hi - lo) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, sy(v) + 4.0, v);
        }
        for &sc in &scales {
            let x = sx(x0, sc);
            let stars: String = significance
                .iter()
                .filter(|r| r.metric == *metric && scale_key(r.scale) == scale_key(sc))
                .map(|r| r.stars.symbol())
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{sc}{}</text>"#, y0 + ph + 16.0, if stars.is_empty() { String::new() } else { format!(" {stars}") });
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">sampling factor s</text>"#, x0 + pw / 2.0, y0 + ph + 32.0);
        for (mi, pts) in series.iter().enumerate() {
            let c = COLORS[mi % COLORS.len()];
            let path: Vec<String> = pts.iter().map(|(a, b)| format!("{:.2},{:.2}", sx(x0, *a), sy(*b))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            for (a, b) in pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(x0, *a), sy(*b));
            }
        }
    }
    for (mi, name) in methods.iter().enumerate() {
        let y = ph + 2.0 * pad + 16.0 * mi as f64 + 8.0;
        let c = COLORS[mi % COLORS.len()];
        let _ = writeln!(s, r#"<rect x="{pad}" y="{}" width="12" height="3" fill="{c}"/><text x="{}" y="{}">{name}</text>"#, y - 4.0, pad + 18.0, y);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(m: &str, s: f64, p: f64) -> MetricRecord {
        MetricRecord { volume_id: "v".into(), method: m.into(), scale: s, rmse: 0.1, psnr: p, ssim: 0.9, error: None }
    }

    #[test]
    fn summary_has_one_row_per_group_and_writes_inf() {
        let rs = [rec("tricubic", 2.0, 30.0), rec("tricubic", 2.0, 32.0), rec("sr", 2.0, f64::INFINITY)];
        let csv = summary_csv(&rs).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("tricubic,2,2,0.1,0,31,1.414"), "{}", lines[1]);
        assert!(lines[2].contains(",inf,"), "{}", lines[2]);
        let svg = plot_svg(&rs, &[]);
        assert!(svg.starts_with("<svg") && svg.contains("PSNR"));
    }

    #[test]
    fn jsonl_round_trips_infinite_psnr() {
        let rs = vec![rec("sr", 4.0, f64::INFINITY)];
        let text = jsonl(&rs).unwrap();
        assert!(text.contains(r#""psnr":"inf""#));
        let back: MetricRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, rs[0]);
    }
}
