//! Aggregated reports: a CSV of per-method returns with the weight-table
//! ROC area against ground-truth labels, and an SVG chart of mean return
//! versus attack fraction. Output bytes are deterministic for identical
//! inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use dwbc_core::attacks::PoisonLabels;
use dwbc_core::weighting::WeightTable;

use crate::pipeline::RunArtifacts;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no runs to report")]
    EmptyRuns,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const METHODS: [&str; 3] = ["expert", "baseline", "dwbc"];

/// One run's worth of report rows.
#[derive(Debug, Clone)]
pub struct ReportRun {
    pub attack_kind: String,
    pub fraction: f64,
    /// `(method, mean_return, std_return)` rows.
    pub methods: Vec<(String, f64, f64)>,
    pub weight_auc: Option<f64>,
}

impl ReportRun {
    /// Builds report rows from a run, reading the weight table and labels
    /// files. Ground-truth labels are consumed only here, never by training.
    pub fn from_artifacts(run: &RunArtifacts) -> Self {
        let methods = METHODS
            .iter()
            .filter_map(|m| run.evals.get(*m).map(|r| (m.to_string(), r.mean_return, r.std_return)))
            .collect();
        let weight_auc = weight_auc(&run.paths.weights, &run.paths.labels);
        Self { attack_kind: run.attack_kind.clone(), fraction: run.fraction, methods, weight_auc }
    }
}

/// ROC area of `-weight` against the poison labels: 1.0 when every poisoned
/// trajectory sits below every clean one, 0.5 for constant weights. `None`
/// when either file is missing or one class is empty.
pub fn weight_auc(weights_path: &Path, labels_path: &Path) -> Option<f64> {
    let table = WeightTable::read(weights_path).ok()?;
    let labels = PoisonLabels::read(labels_path).ok()?;
    let pairs: Vec<(f64, bool)> = table
        .rows()
        .iter()
        .filter_map(|(id, row)| labels.map.get(id).map(|p| (-row.weight, *p)))
        .collect();
    roc_auc(&pairs)
}

/// Mann-Whitney ROC area: higher scores should rank positives above
/// negatives; ties count one half.
pub fn roc_auc(pairs: &[(f64, bool)]) -> Option<f64> {
    let pos: Vec<f64> = pairs.iter().filter(|(_, l)| *l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = pairs.iter().filter(|(_, l)| !*l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut num = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                num += 1.0;
            } else if p == n {
                num += 0.5;
            }
        }
    }
    Some(num / (pos.len() as f64 * neg.len() as f64))
}

fn csv_text(runs: &[ReportRun]) -> String {
    let mut s = String::from("attack_kind,fraction,method,mean_return,std_return,weight_auc\n");
    for run in runs {
        for (method, mean, std) in &run.methods {
            let auc = run.weight_auc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{}",
                run.attack_kind, run.fraction, method, mean, std, auc
            );
        }
    }
    s
}

fn svg_text(runs: &[ReportRun]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 30.0;
    const MB: f64 = 50.0;
    let colors = [("expert", "#2c7fb8"), ("baseline", "#d95f02"), ("dwbc", "#1b9e77")];

    let mut series: Vec<(&str, &str, Vec<(f64, f64)>)> = Vec::new();
    for (method, color) in colors {
        let mut pts: Vec<(f64, f64)> = runs
            .iter()
            .flat_map(|r| {
                r.methods
                    .iter()
                    .filter(move |(m, _, _)| m == method)
                    .map(move |(_, mean, _)| (r.fraction, *mean))
            })
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if !pts.is_empty() {
            series.push((method, color, pts));
        }
    }

    let xs: Vec<f64> = series.iter().flat_map(|s| s.2.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.2.iter().map(|p| p.1)).collect();
    let (mut x0, mut x1) = (0.0f64, xs.iter().copied().fold(0.0, f64::max));
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let (mut y0, mut y1) = (
        ys.iter().copied().fold(f64::INFINITY, f64::min),
        ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    if !y0.is_finite() || !y1.is_finite() {
        y0 = -1.0;
        y1 = 0.0;
    }
    if y1 - y0 < 1e-9 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" font-family="sans-serif" font-size="14">mean return vs attack fraction</text>"#,
        ML
    );
    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        ML,
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        ML,
        MT,
        ML,
        H - MB
    );
    // axis extremes
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.2}</text>"#,
        px(x0),
        H - MB + 16.0,
        x0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.2}</text>"#,
        px(x1),
        H - MB + 16.0,
        x1
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.2}</text>"#,
        ML - 6.0,
        py(y0) + 4.0,
        y0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.2}</text>"#,
        ML - 6.0,
        py(y1) + 4.0,
        y1
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">attack fraction</text>"#,
        (ML + W - MR) / 2.0,
        H - 12.0
    );

    for (k, (method, color, pts)) in series.iter().enumerate() {
        if pts.len() > 1 {
            let points: Vec<String> =
                pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
                color,
                points.join(" ")
            );
        }
        for (x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                px(*x),
                py(*y),
                color
            );
        }
        let ly = MT + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            W - MR - 110.0,
            ly,
            color
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            W - MR - 96.0,
            ly + 9.0,
            method
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
}

/// Writes `report.csv` and `report.svg` for the given runs.
pub fn emit_report(runs: &[ReportRun], out_dir: &Path) -> Result<ReportPaths, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::EmptyRuns);
    }
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("report.csv");
    let svg = out_dir.join("report.svg");
    std::fs::write(&csv, csv_text(runs))?;
    std::fs::write(&svg, svg_text(runs))?;
    Ok(ReportPaths { csv, svg })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_of_constant_scores_is_half() {
        let pairs: Vec<(f64, bool)> = (0..10).map(|i| (-1.0, i % 2 == 0)).collect();
        assert_eq!(roc_auc(&pairs), Some(0.5));
    }

    #[test]
    fn auc_of_perfect_separation_is_one() {
        let mut pairs = vec![];
        for i in 0..5 {
            pairs.push((10.0 + i as f64, true));
            pairs.push((-10.0 - i as f64, false));
        }
        assert_eq!(roc_auc(&pairs), Some(1.0));
    }

    #[test]
    fn auc_of_inverted_separation_is_zero() {
        let pairs = vec![(0.0, true), (1.0, false)];
        assert_eq!(roc_auc(&pairs), Some(0.0));
    }

    #[test]
    fn auc_needs_both_classes() {
        assert_eq!(roc_auc(&[(1.0, true)]), None);
        assert_eq!(roc_auc(&[]), None);
    }

    #[test]
    fn csv_rows_per_method_and_empty_auc() {
        let run = ReportRun {
            attack_kind: "none".into(),
            fraction: 0.0,
            methods: vec![
                ("expert".into(), -6.5, 1.1),
                ("baseline".into(), -6.7, 1.2),
                ("dwbc".into(), -6.8, 1.3),
            ],
            weight_auc: None,
        };
        let text = csv_text(&[run]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "attack_kind,fraction,method,mean_return,std_return,weight_auc");
        assert_eq!(lines[1], "none,0,expert,-6.500000,1.100000,");
        assert!(lines[3].starts_with("none,0,dwbc,"));
    }

    #[test]
    fn report_bytes_are_deterministic() {
        let run = ReportRun {
            attack_kind: "action_inversion".into(),
            fraction: 0.3,
            methods: vec![("expert".into(), -6.5, 1.1), ("dwbc".into(), -7.0, 1.0)],
            weight_auc: Some(0.97),
        };
        let a = (csv_text(&[run.clone()]), svg_text(&[run.clone()]));
        let b = (csv_text(&[run.clone()]), svg_text(&[run]));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_runs_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], dir.path()), Err(ReportError::EmptyRuns)));
    }

    #[test]
    fn svg_is_wellformed_for_single_run() {
        let run = ReportRun {
            attack_kind: "none".into(),
            fraction: 0.0,
            methods: vec![("expert".into(), -6.5, 1.1)],
            weight_auc: None,
        };
        let svg = svg_text(&[run]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("circle"));
    }
}
