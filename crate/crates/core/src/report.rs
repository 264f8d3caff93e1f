//! Plain-text and CSV tables: overall scores per method under the four criteria,
//! and the same broken down by category. Values are rounded half-up to two decimals.

use std::fmt::Write;

use crate::corpus::Category;
use crate::metrics::{fmt2, ByMode, Evaluation, MatchMode, Prf};

/// Category row order in the per-category table.
pub const CATEGORY_ROWS: [Category; 4] = [
    Category::CompositeMention,
    Category::DiseaseClass,
    Category::Modifier,
    Category::SpecificDisease,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Csv,
}

fn cells(scores: &ByMode<Prf>) -> Vec<String> {
    MatchMode::ALL
        .iter()
        .flat_map(|&m| {
            let p = scores.get(m);
            [fmt2(p.precision), fmt2(p.recall), fmt2(p.f1)]
        })
        .collect()
}

fn csv_header(lead: &[&str]) -> String {
    let mut cols: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    for m in MatchMode::ALL {
        for metric in ["P", "R", "F1"] {
            cols.push(format!("{} {metric}", m.label()));
        }
    }
    cols.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(",")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn text_table(lead: &[&str], rows: &[(Vec<String>, Vec<String>)]) -> String {
    let mut lead_w: Vec<usize> = lead.iter().map(|s| s.len()).collect();
    for (keys, _) in rows {
        for (w, k) in lead_w.iter_mut().zip(keys) {
            *w = (*w).max(k.chars().count());
        }
    }
    let group_w: Vec<usize> = MatchMode::ALL.iter().map(|m| m.label().len().max(16)).collect();

    let mut out = String::new();
    let lead_blank: Vec<String> = lead_w.iter().map(|w| " ".repeat(*w)).collect();
    let lead_head: Vec<String> = lead.iter().zip(&lead_w).map(|(s, w)| format!("{s:<w$}")).collect();

    let _ = write!(out, "{}", lead_head.join("  "));
    for (m, w) in MatchMode::ALL.iter().zip(&group_w) {
        let _ = write!(out, " | {:<w$}", m.label());
    }
    out.push('\n');
    let _ = write!(out, "{}", lead_blank.join("  "));
    for w in &group_w {
        let _ = write!(out, " | {:<w$}", format!("{:>4}  {:>4}  {:>4}", "P", "R", "F1"));
    }
    out.push('\n');
    let rule_len = out.lines().next().map_or(0, |l| l.chars().count());
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for (keys, vals) in rows {
        let lead_cells: Vec<String> = keys.iter().zip(&lead_w).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = write!(out, "{}", lead_cells.join("  "));
        for (chunk, w) in vals.chunks(3).zip(&group_w) {
            let _ = write!(out, " | {:<w$}", format!("{:>4}  {:>4}  {:>4}", chunk[0], chunk[1], chunk[2]));
        }
        out.push('\n');
    }
    // Trailing spaces from left-aligned padding on the last column.
    out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
}

/// Overall scores, one row per method.
pub fn render_overall(methods: &[(&str, &Evaluation)], format: TableFormat) -> String {
    let rows: Vec<(Vec<String>, Vec<String>)> = methods
        .iter()
        .map(|(name, eval)| (vec![name.to_string()], cells(&eval.overall)))
        .collect();
    match format {
        TableFormat::Text => text_table(&["Method"], &rows),
        TableFormat::Csv => {
            let mut out = csv_header(&["Method"]);
            out.push('\n');
            for (keys, vals) in rows {
                let _ = writeln!(out, "{},{}", csv_field(&keys[0]), vals.join(","));
            }
            out
        }
    }
}

/// Per-category scores: four category rows, each repeated per method.
pub fn render_by_category(methods: &[(&str, &Evaluation)], format: TableFormat) -> String {
    let mut rows = Vec::new();
    for cat in CATEGORY_ROWS {
        for (name, eval) in methods {
            rows.push((
                vec![cat.display_name().to_string(), name.to_string()],
                cells(eval.per_category.get(cat)),
            ));
        }
    }
    match format {
        TableFormat::Text => text_table(&["Category", "Method"], &rows),
        TableFormat::Csv => {
            let mut out = csv_header(&["Category", "Method"]);
            out.push('\n');
            for (keys, vals) in rows {
                let _ = writeln!(out, "{},{},{}", csv_field(&keys[0]), csv_field(&keys[1]), vals.join(","));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, Corpus, Document};
    use crate::metrics::evaluate_sequential;
    use std::collections::BTreeMap;

    fn perfect() -> Evaluation {
        let doc = Document::new("1", "Wilson disease.", "A study.");
        let ann = Annotation::new("1", 0, 14, "Wilson disease", Category::SpecificDisease);
        let corpus = Corpus::from_parts(vec![doc], vec![ann.clone()]).unwrap();
        let preds = BTreeMap::from([("1".to_string(), vec![ann])]);
        evaluate_sequential(&corpus, &preds).unwrap()
    }

    #[test]
    fn overall_layout() {
        let e = perfect();
        let csv = render_overall(&[("Run", &e)], TableFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 13);
        assert!(lines[0].starts_with("Method,Strict Match P,Strict Match R,Strict Match F1,Strict Match (w/o Category) P"));
        assert_eq!(lines[1], format!("Run,{}", ["1.00"; 12].join(",")));
        let text = render_overall(&[("Run", &e)], TableFormat::Text);
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l == l.trim_end()));
    }

    #[test]
    fn category_layout_has_four_rows_per_method() {
        let e = perfect();
        let csv = render_by_category(&[("A", &e), ("B", &e)], TableFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[1].starts_with("Composite Mention,A,"));
        assert!(lines[8].starts_with("Specific Disease,B,1.00,1.00,1.00"));
        let text = render_by_category(&[("A", &e)], TableFormat::Text);
        assert_eq!(text.lines().count(), 3 + 4);
    }
}
