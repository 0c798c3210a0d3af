//! Deterministic text rendering of evaluation results: markdown tables in
//! the published row/column convention and CSV sweep curves. Identical
//! inputs always produce identical bytes.

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use serde::{Deserialize, Serialize};

/// Section rows rendered before any others, in this order.
const PREFERRED_SECTIONS: [&str; 6] = [
    "seen",
    "unseen",
    "seen_adjective",
    "seen_plain",
    "unseen_adjective",
    "unseen_plain",
];

/// One grid point of a context-visibility sweep, as unseen-set recalls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub ir_at_1: f64,
    pub ir_at_5: f64,
    pub cr_at_1: f64,
}

/// Renders the aggregate table: one row per section, instance recall at
/// every configured cutoff plus category recall at the smallest cutoff,
/// cells as `mean ± std` percent. Sections without data are omitted.
pub fn emit_markdown(report: &EvalReport) -> String {
    let mut columns: Vec<(String, String)> = report
        .ks
        .iter()
        .map(|k| (format!("IR@{k}"), format!("ir@{k}")))
        .collect();
    if let Some(first_k) = report.ks.first() {
        columns.push((format!("CR@{first_k}"), format!("cr@{first_k}")));
    }

    let mut sections: Vec<String> = PREFERRED_SECTIONS
        .iter()
        .map(|s| s.to_string())
        .filter(|s| has_section(report, s))
        .collect();
    let mut extra: Vec<String> = report
        .aggregate
        .keys()
        .filter_map(|key| key.split_once('/').map(|(s, _)| s.to_string()))
        .filter(|s| !PREFERRED_SECTIONS.contains(&s.as_str()))
        .collect();
    extra.sort();
    extra.dedup();
    sections.extend(extra);

    let mut out = String::new();
    out.push_str("| Experiment |");
    for (label, _) in &columns {
        out.push_str(&format!(" {label} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in &columns {
        out.push_str("---|");
    }
    out.push('\n');
    for section in &sections {
        out.push_str(&format!("| {section} |"));
        for (_, suffix) in &columns {
            let cell = report
                .aggregate
                .get(&format!("{section}/{suffix}"))
                .map(|c| c.format_percent())
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

fn has_section(report: &EvalReport, section: &str) -> bool {
    report
        .aggregate
        .keys()
        .any(|key| key.split_once('/').map(|(s, _)| s == section).unwrap_or(false))
}

/// Renders a visibility sweep as CSV with the fixed column contract.
pub fn emit_sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda,ir_at_1,ir_at_5,cr_at_1\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            p.lambda, p.ir_at_1, p.ir_at_5, p.cr_at_1
        ));
    }
    out
}

/// One row of the loss-ablation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossAblationRow {
    pub loss: String,
    pub ir_at_1: crate::eval::AggregateCell,
    pub ir_at_5: crate::eval::AggregateCell,
    pub cr_at_1: crate::eval::AggregateCell,
}

/// Renders the loss ablation in the same table convention.
pub fn emit_loss_markdown(rows: &[LossAblationRow]) -> String {
    let mut out = String::from("| Loss | IR@1 | IR@5 | CR@1 |\n|---|---|---|---|\n");
    for row in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            row.loss,
            row.ir_at_1.format_percent(),
            row.ir_at_5.format_percent(),
            row.cr_at_1.format_percent()
        ));
    }
    out
}

/// Serializes any report value as pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate_folds, FoldEval, KRecall};

    fn sample_report() -> EvalReport {
        let fold = |fold_index: usize, bump: f64| FoldEval {
            fold_index,
            sections: [
                (
                    "seen".to_string(),
                    vec![
                        KRecall { k: 1, ir: 0.10 + bump, cr: 0.80 + bump },
                        KRecall { k: 5, ir: 0.30 + bump, cr: 0.90 + bump },
                    ],
                ),
                (
                    "unseen".to_string(),
                    vec![
                        KRecall { k: 1, ir: 0.05 + bump, cr: 0.70 + bump },
                        KRecall { k: 5, ir: 0.20 + bump, cr: 0.85 + bump },
                    ],
                ),
            ]
            .into_iter()
            .collect(),
        };
        aggregate_folds(vec![fold(0, 0.00), fold(1, 0.02)], &[1, 5]).unwrap()
    }

    #[test]
    fn markdown_layout_matches_the_table_convention() {
        let md = emit_markdown(&sample_report());
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Experiment | IR@1 | IR@5 | CR@1 |");
        assert_eq!(lines[1], "|---|---|---|---|");
        assert!(lines[2].starts_with("| seen | 11.0 ± 1.0 |"), "{}", lines[2]);
        assert!(lines[3].starts_with("| unseen | 6.0 ± 1.0 |"), "{}", lines[3]);
        assert_eq!(lines.len(), 4, "no blank breakdown rows");
    }

    #[test]
    fn identical_reports_render_identical_bytes() {
        assert_eq!(emit_markdown(&sample_report()), emit_markdown(&sample_report()));
        let json_a = to_json_pretty(&sample_report()).unwrap();
        let json_b = to_json_pretty(&sample_report()).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn sweep_csv_has_the_exact_column_contract() {
        let points = vec![
            SweepPoint { lambda: 0.0, ir_at_1: 0.052, ir_at_5: 0.21, cr_at_1: 0.88 },
            SweepPoint { lambda: 0.5, ir_at_1: 0.18, ir_at_5: 0.46, cr_at_1: 0.9 },
        ];
        let csv = emit_sweep_csv(&points);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda,ir_at_1,ir_at_5,cr_at_1");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0.052000,"), "{}", lines[1]);
    }

    #[test]
    fn loss_table_renders_one_row_per_loss() {
        use crate::eval::AggregateCell;
        let cell = |m: f64| AggregateCell { mean: m, std: 0.01 };
        let rows = vec![
            LossAblationRow { loss: "mse".into(), ir_at_1: cell(0.05), ir_at_5: cell(0.15), cr_at_1: cell(0.6) },
            LossAblationRow { loss: "infonce".into(), ir_at_1: cell(0.2), ir_at_5: cell(0.5), cr_at_1: cell(0.9) },
        ];
        let md = emit_loss_markdown(&rows);
        assert!(md.contains("| mse | 5.0 ± 1.0 | 15.0 ± 1.0 | 60.0 ± 1.0 |"));
        assert!(md.contains("| infonce | 20.0 ± 1.0 |"));
    }
}
