//! Metric summaries with bootstrap intervals and the CSV/SVG report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{BinnedStats, Coverage, PointR, SectorRow};
use super::bootstrap::{bootstrap_ci, Interval};
use super::metrics::{baseline_mae, flatten, mae, pearson_r, r2};
use crate::error::MetricError;
use crate::task::Target;
use crate::vf::RetestCiTable;

/// Clinical reference values, shown next to results for orientation only.
pub mod clinical_reference {
    pub const BASELINE_MAE_VALIDATION_THRESHOLDS: f64 = 8.17;
    pub const BASELINE_MAE_VALIDATION_MD: f64 = 7.15;
    pub const BASELINE_MAE_TEST_THRESHOLDS: f64 = 7.64;
    pub const BASELINE_MAE_TEST_MD: f64 = 6.26;
    pub const POINTWISE_R_RANGE: (f64, f64) = (0.68, 0.87);
    pub const LABEL: &str = "clinical reference (display only)";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tag: String,
    pub target: Target,
    pub n_samples: usize,
    pub r2: Estimate,
    pub pearson_r: Estimate,
    pub mae_db: Estimate,
    pub baseline_mae_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapOptions {
    pub iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { iterations: 5000, level: 0.95, seed: 0 }
    }
}

fn estimate<F>(stat: F, m: &[Vec<f64>], p: &[Vec<f64>], opts: &BootstrapOptions) -> Result<Estimate, MetricError>
where
    F: Fn(&[f64], &[f64]) -> Result<f64, MetricError> + Sync + Copy,
{
    let value = stat(&flatten(m), &flatten(p))?;
    let Interval { low, high } = bootstrap_ci(stat, m, p, opts.iterations, opts.level, opts.seed)?;
    Ok(Estimate { value, low, high })
}

/// Pooled R², Pearson r and MAE over all (exam, output) pairs, each with a
/// percentile bootstrap interval over exams, plus the mean-predictor MAE.
pub fn evaluate(
    tag: &str,
    target: Target,
    measured: &[Vec<f64>],
    predicted: &[Vec<f64>],
    opts: &BootstrapOptions,
) -> Result<MetricsReport, MetricError> {
    if measured.len() != predicted.len() {
        return Err(MetricError::LengthMismatch { op: "evaluate", measured: measured.len(), predicted: predicted.len() });
    }
    Ok(MetricsReport {
        tag: tag.to_string(),
        target,
        n_samples: measured.len(),
        r2: estimate(r2, measured, predicted, opts)?,
        pearson_r: estimate(pearson_r, measured, predicted, opts)?,
        mae_db: estimate(mae, measured, predicted, opts)?,
        baseline_mae_db: baseline_mae(&flatten(measured))?,
    })
}

pub const METRICS_HEADER: &str =
    "tag,target,n,r2,r2_lo,r2_hi,pearson,pearson_lo,pearson_hi,mae,mae_lo,mae_hi,baseline_mae";

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.tag,
            r.target,
            r.n_samples,
            r.r2.value,
            r.r2.low,
            r.r2.high,
            r.pearson_r.value,
            r.pearson_r.low,
            r.pearson_r.high,
            r.mae_db.value,
            r.mae_db.low,
            r.mae_db.high,
            r.baseline_mae_db
        );
    }
    s
}

pub const SECTORS_HEADER: &str = "sector,points,r2,pearson,mae,mae_baseline";

pub fn sectors_csv(rows: &[SectorRow]) -> String {
    let mut s = format!("{SECTORS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.sector.label(), r.points, r.r2, r.pearson_r, r.mae, r.mae_baseline);
    }
    s
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grey level for r in [0, 1]: darker is higher.
fn r_fill(r: f64) -> String {
    let t = r.clamp(0.0, 1.0);
    let v = (235.0 - 190.0 * t).round() as u8;
    format!("rgb({v},{v},{})", (v as u16 + 20).min(255))
}

/// Figure-2 style map: one cell per active point at its grid position.
pub fn pointwise_map_svg(map: &[PointR], title: &str) -> String {
    let cell = 44.0;
    let (w, h) = (10.0 * cell + 40.0, 8.0 * cell + 110.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r##"<defs><pattern id="undef" width="6" height="6" patternUnits="userSpaceOnUse"><path d="M0,6 L6,0" stroke="#888" stroke-width="1"/></pattern></defs>"##);
    let _ = writeln!(s, r#"<text x="20" y="24" font-family="sans-serif" font-size="15">{}</text>"#, svg_escape(title));
    for p in map {
        // x in -27..27 and y in -21..21, both on a 6 degree lattice
        let cx = 20.0 + ((p.x_deg + 27) as f64 / 6.0) * cell;
        let cy = 40.0 + ((21 - p.y_deg) as f64 / 6.0) * cell;
        let (fill, label) = match p.r {
            Some(r) => (r_fill(r), format!("{r:.2}")),
            None => ("url(#undef)".to_string(), "n/a".to_string()),
        };
        let _ = writeln!(
            s,
            r##"<rect class="cell" data-index="{}" x="{cx:.1}" y="{cy:.1}" width="{:.1}" height="{:.1}" fill="{fill}" stroke="#444"/>"##,
            p.index,
            cell - 2.0,
            cell - 2.0
        );
        let color = if p.r.is_some_and(|r| r > 0.55) { "#fff" } else { "#000" };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle" fill="{color}">{label}</text>"#,
            cx + (cell - 2.0) / 2.0,
            cy + cell / 2.0 + 3.0
        );
    }
    let defined: Vec<f64> = map.iter().filter_map(|p| p.r).collect();
    let summary = if defined.is_empty() {
        "no defined values".to_string()
    } else {
        let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("range {lo:.2}-{hi:.2}, mean {:.2}, undefined {}", defined.iter().sum::<f64>() / defined.len() as f64, map.len() - defined.len())
    };
    let (rl, rh) = clinical_reference::POINTWISE_R_RANGE;
    let _ = writeln!(s, r#"<text x="20" y="{:.1}" font-family="sans-serif" font-size="12">Pearson r per point: {summary}</text>"#, h - 44.0);
    let _ = writeln!(
        s,
        r##"<text x="20" y="{:.1}" font-family="sans-serif" font-size="12" fill="#666">{}: r range {rl:.2}-{rh:.2}</text>"##,
        h - 24.0,
        clinical_reference::LABEL
    );
    s.push_str("</svg>\n");
    s
}

/// Figure-3 style plot: per-bin box (quartiles), whiskers (5th/95th
/// percentile) and median against the shaded retest band.
pub fn binned_whiskers_svg(binned: &BinnedStats, retest: Option<&RetestCiTable>, coverage: Option<&Coverage>, title: &str) -> String {
    let (left, top, plot) = (60.0, 40.0, 400.0);
    let (w, h) = (left + plot + 30.0, top + plot + 80.0);
    let max_db = 40.0;
    let px = |v: f64| left + v.clamp(0.0, max_db) / max_db * plot;
    let py = |v: f64| top + plot - v.clamp(0.0, max_db) / max_db * plot;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="24" font-family="sans-serif" font-size="15">{}</text>"#, svg_escape(title));
    if let Some(t) = retest {
        let rows: Vec<_> = t.rows().iter().filter(|r| r.measured_db <= max_db).collect();
        if !rows.is_empty() {
            let mut pts: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", px(r.measured_db), py(r.upper_db))).collect();
            pts.extend(rows.iter().rev().map(|r| format!("{:.2},{:.2}", px(r.measured_db), py(r.lower_db))));
            let _ = writeln!(s, r##"<polygon class="retest-band" points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##, pts.join(" "));
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{plot}" height="{plot}" fill="none" stroke="#000"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        px(0.0),
        py(0.0),
        px(max_db),
        py(max_db)
    );
    for tick in (0..=40).step_by(10) {
        let t = tick as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{tick}</text><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{tick}</text>"#,
            px(t),
            top + plot + 16.0,
            left - 6.0,
            py(t) + 4.0
        );
    }
    for bin in &binned.bins {
        let Some(q) = bin.stats else { continue };
        let half = (px(bin.high) - px(bin.low)) * 0.35;
        let c = px(bin.center());
        let _ = writeln!(
            s,
            r##"<g class="bin" data-count="{}"><line x1="{c:.2}" y1="{:.2}" x2="{c:.2}" y2="{:.2}" stroke="#000"/><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#fff" stroke="#000"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="2"/></g>"##,
            bin.count,
            py(q.p95),
            py(q.p5),
            c - half,
            py(q.q75),
            2.0 * half,
            py(q.q25) - py(q.q75),
            c - half,
            py(q.median),
            c + half,
            py(q.median)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">measured threshold (dB), {} dB bins</text>"#,
        left + plot / 2.0,
        top + plot + 36.0,
        binned.step
    );
    if let Some(c) = coverage {
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{:.2}" font-family="sans-serif" font-size="12">whiskers inside retest interval: {} of {}</text>"#,
            top + plot + 60.0,
            c.inside,
            c.total_whiskers
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Everything `render_report` can emit; absent parts are skipped except the
/// two CSV tables, which are always written (header-only when empty).
#[derive(Debug, Default)]
pub struct ReportInputs<'a> {
    pub reports: &'a [MetricsReport],
    pub sectors: &'a [SectorRow],
    pub pointwise: Option<&'a [PointR]>,
    pub binned: Option<&'a BinnedStats>,
    pub coverage: Option<&'a Coverage>,
    pub retest: Option<&'a RetestCiTable>,
}

/// Serializable evaluation results, the hand-off between the `eval` and
/// `report` stages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalBundle {
    pub reports: Vec<MetricsReport>,
    pub sectors: Vec<SectorRow>,
    pub pointwise: Option<Vec<PointR>>,
    pub binned: Option<BinnedStats>,
    pub coverage: Option<Coverage>,
}

impl EvalBundle {
    pub fn inputs<'a>(&'a self, retest: Option<&'a RetestCiTable>) -> ReportInputs<'a> {
        ReportInputs {
            reports: &self.reports,
            sectors: &self.sectors,
            pointwise: self.pointwise.as_deref(),
            binned: self.binned.as_ref(),
            coverage: self.coverage.as_ref(),
            retest,
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), MetricError> {
    std::fs::write(path, text).map_err(|source| MetricError::Io { path: path.to_path_buf(), source })
}

/// Writes `metrics.csv`, `sectors.csv` and, when given, `pointwise_map.svg`,
/// `binned_whiskers.svg` and `summary.json` under `out_dir`.
pub fn render_report(inputs: &ReportInputs<'_>, out_dir: &Path) -> Result<(), MetricError> {
    std::fs::create_dir_all(out_dir).map_err(|source| MetricError::Io { path: out_dir.to_path_buf(), source })?;
    write(&out_dir.join("metrics.csv"), &metrics_csv(inputs.reports))?;
    write(&out_dir.join("sectors.csv"), &sectors_csv(inputs.sectors))?;
    if let Some(map) = inputs.pointwise {
        write(&out_dir.join("pointwise_map.svg"), &pointwise_map_svg(map, "Pointwise Pearson r"))?;
    }
    if let Some(b) = inputs.binned {
        write(
            &out_dir.join("binned_whiskers.svg"),
            &binned_whiskers_svg(b, inputs.retest, inputs.coverage, "Predicted vs measured threshold"),
        )?;
    }
    let summary = summary_json(inputs);
    write(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}

fn summary_json(inputs: &ReportInputs<'_>) -> String {
    let mean_point_r = inputs.pointwise.and_then(|m| {
        let d: Vec<f64> = m.iter().filter_map(|p| p.r).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    });
    let per_report: Vec<serde_json::Value> = inputs
        .reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "tag": r.tag,
                "target": r.target,
                "sqrt_r2": if r.r2.value >= 0.0 { Some(r.r2.value.sqrt()) } else { None },
                "baseline_mae_reduction": 1.0 - r.mae_db.value / r.baseline_mae_db,
            })
        })
        .collect();
    let v = serde_json::json!({
        "reports": per_report,
        "mean_pointwise_r": mean_point_r,
        "coverage": inputs.coverage,
        clinical_reference::LABEL: {
            "baseline_mae_validation": {"thresholds": clinical_reference::BASELINE_MAE_VALIDATION_THRESHOLDS, "md": clinical_reference::BASELINE_MAE_VALIDATION_MD},
            "baseline_mae_test": {"thresholds": clinical_reference::BASELINE_MAE_TEST_THRESHOLDS, "md": clinical_reference::BASELINE_MAE_TEST_MD},
            "pointwise_r_range": [clinical_reference::POINTWISE_R_RANGE.0, clinical_reference::POINTWISE_R_RANGE.1],
        }
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::analysis::{bin_by_measured, pointwise_r_map, retest_coverage};
    use crate::vf::grid_24_2;

    fn opts() -> BootstrapOptions {
        BootstrapOptions { iterations: 200, level: 0.95, seed: 5 }
    }

    #[test]
    fn empty_lists_give_header_only_csvs() {
        let dir = tempfile::tempdir().unwrap();
        render_report(&ReportInputs::default(), dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap(), format!("{METRICS_HEADER}\n"));
        assert_eq!(std::fs::read_to_string(dir.path().join("sectors.csv")).unwrap(), format!("{SECTORS_HEADER}\n"));
    }

    #[test]
    fn report_is_deterministic_with_52_cells() {
        let grid = grid_24_2();
        let m: Vec<Vec<f64>> = (0..12).map(|e| (0..52).map(|k| ((e * 7 + k * 3) % 31) as f64).collect()).collect();
        let p: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|v| v * 0.8 + 3.0 + (v % 3.0)).collect()).collect();
        let rep = evaluate("test", Target::Thresholds, &m, &p, &opts()).unwrap();
        assert!(rep.r2.low <= rep.r2.high);
        let map = pointwise_r_map(&m, &p, &grid).unwrap();
        let binned = bin_by_measured(&flatten(&m), &flatten(&p), 2.0).unwrap();
        let table = RetestCiTable::bundled();
        let cov = retest_coverage(&binned, &table).unwrap();
        let inputs = ReportInputs {
            reports: std::slice::from_ref(&rep),
            sectors: &[],
            pointwise: Some(&map),
            binned: Some(&binned),
            coverage: Some(&cov),
            retest: Some(&table),
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        render_report(&inputs, a.path()).unwrap();
        render_report(&inputs, b.path()).unwrap();
        for f in ["metrics.csv", "pointwise_map.svg", "binned_whiskers.svg", "summary.json"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let svg = std::fs::read_to_string(a.path().join("pointwise_map.svg")).unwrap();
        assert_eq!(svg.matches(r#"<rect class="cell""#).count(), 52);
        assert!(svg.contains(clinical_reference::LABEL));
        let csv = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("test,thresholds,12,"));
    }

    #[test]
    fn mismatched_counts() {
        let m = vec![vec![1.0]; 3];
        let p = vec![vec![1.0]; 2];
        let err = evaluate("x", Target::Md, &m, &p, &opts()).unwrap_err();
        assert!(err.to_string().contains('3') && err.to_string().contains('2'));
    }
}
