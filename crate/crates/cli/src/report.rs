//! Aggregate result tables from several runs into one comparison table.

use anyhow::Context;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn find_result_tables(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            find_result_tables(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "results.csv") {
            out.push(path);
        }
    }
    Ok(())
}

/// One aggregated line: (run label, metric) with replicate statistics.
#[derive(Debug)]
pub struct AggregateRow {
    pub run: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn aggregate(root: &Path) -> anyhow::Result<Vec<AggregateRow>> {
    let mut tables = Vec::new();
    find_result_tables(root, &mut tables)?;
    tables.sort();
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for table in &tables {
        let label = table
            .parent()
            .and_then(|p| p.strip_prefix(root).ok())
            .map(|p| p.to_string_lossy().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| {
                table
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().to_string())
                    .unwrap_or_else(|| "run".into())
            });
        let text = std::fs::read_to_string(table)?;
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 || fields[0] == "summary" {
                continue;
            }
            let metric = fields[2].to_string();
            if let Ok(value) = fields[3].parse::<f64>() {
                if value.is_finite() {
                    groups.entry((label.clone(), metric)).or_default().push(value);
                }
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|((run, metric), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n as f64 - 1.0).max(1.0);
            AggregateRow {
                run,
                metric,
                n,
                mean,
                stderr: (var / n as f64).sqrt(),
            }
        })
        .collect())
}

pub fn render(rows: &[AggregateRow]) -> String {
    let mut out = String::from("run,metric,replicates,mean,stderr\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6e},{:.6e}\n",
            row.run, row.metric, row.n, row.mean, row.stderr
        ));
    }
    out
}
