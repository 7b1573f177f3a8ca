//! Comparison tables from metrics CSVs.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use dwols_core::sim::{read_metrics_csv, MetricsRecord};

use crate::ReportFormat;

const COLUMNS: [&str; 8] = [
    "variant",
    "M",
    "mse",
    "error rate",
    "|bias| int",
    "|bias| K1",
    "|bias| Q",
    "value",
];

/// Reads every file and renders one table per (scenario, n). Rows for the
/// same variant in a later file replace earlier ones.
pub fn render_files(paths: &[PathBuf], format: ReportFormat) -> Result<String> {
    let mut records = Vec::new();
    for path in paths {
        records.extend(read_file(path)?);
    }
    Ok(render(&records, format))
}

fn read_file(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_metrics_csv(file).with_context(|| format!("reading {}", path.display()))?;
    if records.is_empty() {
        bail!("{} contains no metrics rows", path.display());
    }
    Ok(records)
}

fn scenario_key(s: &str) -> (u8, u64, String) {
    match s.parse::<u64>() {
        Ok(v) => (0, v, String::new()),
        Err(_) => (1, 0, s.to_string()),
    }
}

type GroupKey = ((u8, u64, String), usize);

pub fn render(records: &[MetricsRecord], format: ReportFormat) -> String {
    let mut groups: BTreeMap<GroupKey, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let rows = groups.entry((scenario_key(&r.scenario), r.n)).or_default();
        match rows.iter_mut().find(|x| x.variant == r.variant) {
            Some(slot) => *slot = r,
            None => rows.push(r),
        }
    }
    let mut out = String::new();
    for (((_, _, _), n), rows) in &groups {
        let scenario = &rows[0].scenario;
        let cells: Vec<[String; 8]> = rows
            .iter()
            .map(|r| {
                [
                    r.variant.clone(),
                    r.m.to_string(),
                    format!("{:.3}", r.mse),
                    format!("{:.3}", r.error_rate),
                    format!("{:.3}", r.bias_intercept),
                    format!("{:.3}", r.bias_k1),
                    format!("{:.3}", r.bias_q),
                    format!("{:.3}", r.value),
                ]
            })
            .collect();
        let title = format!("Scenario {scenario}, n = {n}");
        match format {
            ReportFormat::Markdown => {
                out.push_str(&format!("### {title}\n\n"));
                out.push_str(&table(&cells, "| ", " | ", " |", true));
            }
            ReportFormat::Text => {
                out.push_str(&format!("{title}\n"));
                out.push_str(&table(&cells, "", "  ", "", false));
            }
        }
        out.push('\n');
    }
    out
}

fn table(cells: &[[String; 8]], open: &str, sep: &str, close: &str, markdown: bool) -> String {
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|j| {
            cells
                .iter()
                .map(|r| r[j].len())
                .chain([COLUMNS[j].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |row: Vec<String>| -> String {
        let padded: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("{open}{}{close}\n", padded.join(sep)).trim_end().to_string() + "\n"
    };
    let mut s = line(COLUMNS.iter().map(|c| c.to_string()).collect());
    if markdown {
        let rule: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if j == 0 {
                    "-".repeat(w)
                } else {
                    format!("{}:", "-".repeat(w - 1))
                }
            })
            .collect();
        s.push_str(&line(rule));
    } else {
        s.push_str(&"-".repeat(widths.iter().sum::<usize>() + sep.len() * (widths.len() - 1)));
        s.push('\n');
    }
    for row in cells {
        s.push_str(&line(row.to_vec()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(scenario: &str, n: usize, variant: &str, mse: f64) -> MetricsRecord {
        MetricsRecord {
            scenario: scenario.into(),
            variant: variant.into(),
            n,
            m: 10,
            mse,
            error_rate: 0.1,
            bias_intercept: 0.0,
            bias_k1: 0.0,
            bias_q: 0.0,
            value: -1.0,
        }
    }

    #[test]
    fn groups_and_merges() {
        let records = vec![
            rec("2", 500, "DW1", 1.25),
            rec("2", 500, "OLS", 2.0),
            rec("10", 500, "DW1", 3.0),
            rec("2", 250, "DW1", 4.0),
            rec("2", 500, "DW1", 5.0),
        ];
        let md = render(&records, ReportFormat::Markdown);
        let titles: Vec<&str> = md.lines().filter(|l| l.starts_with("###")).collect();
        assert_eq!(
            titles,
            [
                "### Scenario 2, n = 250",
                "### Scenario 2, n = 500",
                "### Scenario 10, n = 500"
            ]
        );
        assert!(md.contains("5.000"));
        assert!(!md.contains("1.250"));
        let text = render(&records, ReportFormat::Text);
        assert!(text.contains("Scenario 2, n = 500\nvariant"));
    }
}
