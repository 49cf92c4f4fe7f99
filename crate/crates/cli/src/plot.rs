//! ROC curves as SVG and metric tables as CSV or Markdown.

use std::fmt::Write as _;

use wssl_core::eval::{EvalReport, RocPoint};

const SIZE: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct RocSeries {
    pub label: String,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn sx(fpr: f64) -> f64 {
    PAD + fpr * SIZE
}

fn sy(tpr: f64) -> f64 {
    PAD + (1.0 - tpr) * SIZE
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One polyline per series. Each legend entry carries the exact AUC in a
/// `data-auc` attribute next to the rounded label.
pub fn roc_svg(series: &[RocSeries]) -> String {
    let w = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#bbb" stroke-dasharray="4 4"/>"##,
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(1.0)
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            sx(v),
            PAD + SIZE + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            PAD - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">True positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    for (i, r) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .points
            .iter()
            .map(|p| format!("{:.3},{:.3}", sx(p.fpr), sy(p.tpr)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="roc" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let y = PAD + SIZE - 12.0 - 18.0 * (series.len() - 1 - i) as f64;
        let _ = writeln!(
            s,
            r#"<text class="auc" x="{:.1}" y="{y:.1}" text-anchor="end" fill="{color}" data-auc="{:?}">{} (AUC = {:.3})</text>"#,
            PAD + SIZE - 8.0,
            r.auc,
            escape(&r.label),
            r.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `(column, value)` rows of one report, in `report.json` key order.
pub fn report_columns(r: &EvalReport) -> Vec<(String, Option<f64>)> {
    r.metric_rows()
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn columns(rows: &[(String, EvalReport)]) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for (_, r) in rows {
        for (k, _) in report_columns(r) {
            if !cols.contains(&k) {
                cols.push(k);
            }
        }
    }
    cols
}

fn cells(r: &EvalReport, cols: &[String]) -> Vec<String> {
    let m = report_columns(r);
    cols.iter()
        .map(|c| fmt(m.iter().find(|(k, _)| k == c).and_then(|(_, v)| *v)))
        .collect()
}

pub fn table_csv(rows: &[(String, EvalReport)]) -> String {
    let cols = columns(rows);
    let mut out = format!("name,split,{}\n", cols.join(","));
    for (name, r) in rows {
        out.push_str(&format!("{name},{},{}\n", r.split, cells(r, &cols).join(",")));
    }
    out
}

pub fn table_markdown(rows: &[(String, EvalReport)]) -> String {
    let cols = columns(rows);
    let mut out = format!("| name | split | {} |\n", cols.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(cols.len() + 2)));
    for (name, r) in rows {
        out.push_str(&format!("| {name} | {} | {} |\n", r.split, cells(r, &cols).join(" | ")));
    }
    out
}
