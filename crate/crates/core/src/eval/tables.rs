//! Plain-text rendering of evaluation results.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::harness::{ComparisonReport, EvalMatrix, UnseenReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(format!("unknown table format {other:?} (expected csv or md)")),
        }
    }
}

/// Round `v` to `decimals` places, ties to even, on its decimal digits.
///
/// The value is first written with 12 decimals, which absorbs the binary
/// error of a sum or mean: `(0.9007 + 0.7800) / 2` is stored as
/// 0.840349999..., and still rounds as the tie 0.84035 it stands for.
pub fn round_half_even(v: f64, decimals: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let text = format!("{:.*}", 12.max(decimals + 1), v.abs());
    let (int_part, frac_part) = text.split_once('.').unwrap_or((&text, ""));
    let mut digits: Vec<u8> = int_part.bytes().chain(frac_part.bytes()).map(|b| b - b'0').collect();
    let point = int_part.len();
    let keep = point + decimals;
    if digits.len() > keep {
        let next = digits[keep];
        let rest_nonzero = digits[keep + 1..].iter().any(|&d| d != 0);
        let last_odd = keep > 0 && digits[keep - 1] % 2 == 1;
        digits.truncate(keep);
        if next > 5 || (next == 5 && (rest_nonzero || last_odd)) {
            let mut i = keep;
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
    } else {
        digits.resize(keep, 0);
    }
    let int_len = digits.len() - decimals;
    let mut out = String::new();
    let int_digits = &digits[..int_len];
    if int_digits.is_empty() {
        out.push('0');
    } else {
        out.extend(int_digits.iter().map(|&d| (b'0' + d) as char));
    }
    if decimals > 0 {
        out.push('.');
        out.extend(digits[int_len..].iter().map(|&d| (b'0' + d) as char));
    }
    if v < 0.0 && digits.iter().any(|&d| d != 0) {
        out.insert(0, '-');
    }
    out
}

pub fn fmt_metric(v: f64) -> String {
    round_half_even(v, 4)
}

/// Percentage-point delta with an explicit sign.
pub fn fmt_pp(v: f64) -> String {
    let s = round_half_even(v, 2);
    if s.starts_with('-') {
        s
    } else {
        format!("+{s}")
    }
}

/// Everything the report command renders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub matrices: Vec<EvalMatrix>,
    pub comparisons: Vec<ComparisonReport>,
    pub unseen: Option<UnseenReport>,
}

fn comparison_for<'a>(report: &'a Report, m: &EvalMatrix) -> Option<&'a ComparisonReport> {
    report
        .comparisons
        .iter()
        .find(|c| c.candidate.preprocessing == m.preprocessing && c.candidate.backbone == m.backbone)
}

pub fn render_tables(report: &Report, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => render_csv(report),
        TableFormat::Markdown => render_markdown(report),
    }
}

const MATRIX_COLUMNS: &str = "preprocessing,backbone,train,test,ba,sens,spec,auc,within_average,cross_average,delta_within_pp,delta_cross_pp";
const UNSEEN_COLUMNS: &str = "preprocessing,backbone,test,ba,sens,spec,auc,delta_ba_pp,delta_sens_pp,delta_spec_pp,delta_auc_pp";

fn render_csv(report: &Report) -> String {
    let mut out = String::new();
    if !report.matrices.is_empty() {
        out.push_str(MATRIX_COLUMNS);
        out.push('\n');
    }
    for m in &report.matrices {
        let cmp = comparison_for(report, m);
        let (dw, dc) = match cmp {
            Some(c) => (fmt_pp(c.delta_within_pp), fmt_pp(c.delta_cross_pp)),
            None => (String::new(), String::new()),
        };
        for cell in m.sorted_cells() {
            let r = &cell.metrics;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                m.preprocessing.tag(),
                m.backbone,
                m.dataset_name(cell.train_dataset),
                m.dataset_name(cell.test_dataset),
                fmt_metric(r.ba),
                fmt_metric(r.sensitivity),
                fmt_metric(r.specificity),
                fmt_metric(r.auc),
                fmt_metric(m.within_average),
                fmt_metric(m.cross_average),
                dw,
                dc
            )
            .unwrap();
        }
    }
    if let Some(u) = &report.unseen {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(UNSEEN_COLUMNS);
        out.push('\n');
        for row in &u.rows {
            let r = &row.metrics;
            let d = &row.delta_pp;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.preprocessing.tag(),
                u.backbone,
                u.dataset,
                fmt_metric(r.ba),
                fmt_metric(r.sensitivity),
                fmt_metric(r.specificity),
                fmt_metric(r.auc),
                fmt_pp(d.ba),
                fmt_pp(d.sens),
                fmt_pp(d.spec),
                fmt_pp(d.auc)
            )
            .unwrap();
        }
    }
    out
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn render_markdown(report: &Report) -> String {
    let mut out = String::new();
    if let Some(first) = report.matrices.first() {
        let names = &first.dataset_names;
        let mut header = vec!["Preprocessing".to_string(), "Train \\ Test".to_string()];
        for n in names {
            for metric in ["BA", "Sens", "Spec", "AUC"] {
                header.push(format!("{n} {metric}"));
            }
        }
        header.extend(
            ["Within avg", "Cross avg", "Δ within (pp)", "Δ cross (pp)"]
                .iter()
                .map(|s| s.to_string()),
        );
        out.push_str("## Cross-dataset evaluation\n\n");
        out.push_str(&md_row(&header));
        out.push_str(&md_row(&vec!["---".to_string(); header.len()]));
        for m in &report.matrices {
            let cmp = comparison_for(report, m);
            for train in 0..m.dataset_names.len() {
                let mut row = vec![
                    format!("{} ({})", m.preprocessing.tag(), m.backbone),
                    m.dataset_name(train).to_string(),
                ];
                for test in 0..m.dataset_names.len() {
                    match m.cell(train, test) {
                        Some(c) => {
                            let r = &c.metrics;
                            row.extend([r.ba, r.sensitivity, r.specificity, r.auc].map(fmt_metric));
                        }
                        None => row.extend(std::iter::repeat_n("".to_string(), 4)),
                    }
                }
                row.push(fmt_metric(m.within_average));
                row.push(fmt_metric(m.cross_average));
                match cmp {
                    Some(c) => {
                        row.push(fmt_pp(c.delta_within_pp));
                        row.push(fmt_pp(c.delta_cross_pp));
                    }
                    None => {
                        row.push("baseline".into());
                        row.push("baseline".into());
                    }
                }
                out.push_str(&md_row(&row));
            }
        }
    }
    if let Some(u) = &report.unseen {
        if !out.is_empty() {
            out.push('\n');
        }
        writeln!(out, "## Unseen dataset: {}\n", u.dataset).unwrap();
        let header: Vec<String> = ["Preprocessing", "BA", "Sens", "Spec", "AUC", "Δ BA (pp)", "Δ Sens (pp)", "Δ Spec (pp)", "Δ AUC (pp)"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.push_str(&md_row(&header));
        out.push_str(&md_row(&vec!["---".to_string(); header.len()]));
        for row in &u.rows {
            let r = &row.metrics;
            let d = &row.delta_pp;
            let mut cells = vec![format!("{} ({})", row.preprocessing.tag(), u.backbone)];
            cells.extend([r.ba, r.sensitivity, r.specificity, r.auc].map(fmt_metric));
            cells.extend([d.ba, d.sens, d.spec, d.auc].map(fmt_pp));
            out.push_str(&md_row(&cells));
        }
    }
    out
}
