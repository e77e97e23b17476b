//! Report files: `report.json`, flattened `records.csv` and `aggregate.csv`,
//! and an optional SVG bar chart of median CID error.

use std::fmt::Write as _;
use std::path::Path;

use dopfn_core::eval::{AggregateRow, EvalRecord, EvalReport};

use crate::error::Result;
use crate::io::{write_file, write_json};

pub const REPORT_FILE: &str = "report.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CHART_FILE: &str = "nmse_cid.svg";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn records_csv(records: &[EvalRecord], levels: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> =
        ["case_id", "dataset_idx", "method", "nmse_cid", "nmse_cate", "mean_entropy", "bias_do0", "bias_do1"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    head.extend(levels.iter().map(|l| format!("picp@{l}")));
    w.write_record(&head).expect("writing to memory");
    for r in records {
        let mut row = vec![
            r.case_id.clone(),
            r.dataset_idx.to_string(),
            r.method.to_string(),
            cell(r.nmse_cid),
            cell(r.nmse_cate),
            cell(r.mean_entropy),
            cell(r.bias_do0),
            cell(r.bias_do1),
        ];
        row.extend((0..levels.len()).map(|i| cell(r.picp.get(i).copied())));
        w.write_record(&row).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case_id", "method", "metric", "n", "median", "mean", "ci95_lo", "ci95_hi", "mean_rank"])
        .expect("writing to memory");
    for r in rows {
        w.write_record([
            r.case_id.clone(),
            r.method.to_string(),
            r.metric.clone(),
            r.n.to_string(),
            r.median.to_string(),
            r.mean.to_string(),
            r.ci95.0.to_string(),
            r.ci95.1.to_string(),
            r.mean_rank.to_string(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

const PALETTE: [&str; 5] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"];

/// Grouped bars: one group per case, one bar per method, whiskers at the CI95.
pub fn nmse_chart(rows: &[AggregateRow]) -> String {
    let rows: Vec<&AggregateRow> = rows.iter().filter(|r| r.metric == "nmse_cid" && r.median.is_finite()).collect();
    let mut cases: Vec<&str> = rows.iter().map(|r| r.case_id.as_str()).collect();
    cases.dedup();
    let mut methods: Vec<_> = rows.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let top = rows.iter().map(|r| if r.ci95.1.is_finite() { r.ci95.1 } else { r.median }).fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let (bar, gap, plot_h, left, base) = (18.0, 24.0, 240.0, 60.0, 280.0);
    let group_w = bar * methods.len() as f64 + gap;
    let width = left + group_w * cases.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="380" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="16">median nmse_cid (CI95)</text>"#);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, width - 10.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{top:.3}</text>"#, base - plot_h + 4.0);
    let y = |v: f64| base - plot_h * (v / top).clamp(0.0, 1.0);
    for (ci, case) in cases.iter().enumerate() {
        let x0 = left + ci as f64 * group_w;
        for (mi, m) in methods.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.case_id == *case && r.method == *m) else {
                continue;
            };
            let x = x0 + mi as f64 * bar;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                y(r.median),
                bar - 2.0,
                base - y(r.median),
                PALETTE[mi % PALETTE.len()]
            );
            if r.ci95.0.is_finite() && r.ci95.1.is_finite() {
                let cx = x + bar / 2.0 - 1.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                    y(r.ci95.0),
                    y(r.ci95.1)
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" transform="rotate(30 {} {})">{case}</text>"#,
            x0,
            base + 14.0,
            x0,
            base + 14.0
        );
    }
    for (mi, m) in methods.iter().enumerate() {
        let ly = 30.0 + 14.0 * mi as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#,
            width - 110.0,
            ly - 9.0,
            PALETTE[mi % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{m}</text>"#, width - 96.0);
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_report(dir: &Path, report: &EvalReport, svg: bool) -> Result<()> {
    crate::io::create_dir(dir)?;
    write_json(&dir.join(REPORT_FILE), report)?;
    write_file(&dir.join(RECORDS_FILE), records_csv(&report.records, &report.levels))?;
    write_file(&dir.join(AGGREGATE_FILE), aggregate_csv(&report.aggregate))?;
    if svg {
        write_file(&dir.join(CHART_FILE), nmse_chart(&report.aggregate))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dopfn_core::eval::Method;

    fn rec(method: Method, v: Option<f64>) -> EvalRecord {
        EvalRecord {
            case_id: "common_effect".into(),
            dataset_idx: 3,
            method,
            nmse_cid: v,
            nmse_cate: None,
            picp: vec![0.5, 1.0],
            mean_entropy: None,
            bias_do0: Some(-0.25),
            bias_do1: None,
        }
    }

    #[test]
    fn records_flatten_with_empty_cells_for_missing_values() {
        let text = String::from_utf8(records_csv(&[rec(Method::Knn, Some(0.125))], &[0.1, 0.9])).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "case_id,dataset_idx,method,nmse_cid,nmse_cate,mean_entropy,bias_do0,bias_do1,picp@0.1,picp@0.9"
        );
        assert_eq!(lines[1], "common_effect,3,knn,0.125,,,-0.25,,0.5,1");
    }

    #[test]
    fn chart_has_one_bar_per_row() {
        let recs = [rec(Method::Knn, Some(0.1)), rec(Method::Oracle, Some(0.05))];
        let agg = dopfn_core::eval::aggregate(&recs, 50, 0);
        let svg = nmse_chart(&agg);
        assert_eq!(svg.matches("<rect").count(), 2 + 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
