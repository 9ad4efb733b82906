//! Metrics reports: a header with reproducibility details, an aligned
//! table, and a machine-readable block between `---METRICS---` and `---END---`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::pipeline::eval::Metrics;

pub const METRICS_BEGIN: &str = "---METRICS---";
pub const METRICS_END: &str = "---END---";

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub notes: Vec<String>,
    pub metrics: Vec<(String, Metrics)>,
    /// Extra `key=value` pairs for the machine block.
    pub values: Vec<(String, String)>,
    /// Optional free-form table (header row first).
    pub table: Vec<Vec<String>>,
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl Report {
    pub fn new(command: &str, seed: u64, config_hash: &str) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            ..Self::default()
        }
    }

    pub fn add_metrics(&mut self, name: &str, m: Metrics) {
        self.metrics.push((name.to_string(), m));
    }

    pub fn add_value(&mut self, key: &str, value: impl ToString) {
        self.values.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nerxfer {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command: {}", self.command);
        let _ = writeln!(out, "# seed: {}", self.seed);
        let _ = writeln!(out, "# config-hash: {}", self.config_hash);
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        if !self.metrics.is_empty() {
            out.push('\n');
            let mut rows = vec![["set", "type", "P", "R", "F1", "tp", "fp", "fn"].map(String::from).to_vec()];
            for (name, m) in &self.metrics {
                let mut push = |ty: &str, c: &crate::pipeline::eval::Counts| {
                    rows.push(vec![
                        name.clone(),
                        ty.to_string(),
                        format!("{:.4}", c.precision()),
                        format!("{:.4}", c.recall()),
                        format!("{:.4}", c.f1()),
                        c.tp.to_string(),
                        c.fp.to_string(),
                        c.fn_.to_string(),
                    ]);
                };
                push("ALL", &m.overall);
                for (ty, c) in &m.per_type {
                    push(ty, c);
                }
            }
            out.push_str(&aligned(&rows));
        }
        if !self.table.is_empty() {
            out.push('\n');
            out.push_str(&aligned(&self.table));
        }
        out.push('\n');
        out.push_str(METRICS_BEGIN);
        out.push('\n');
        for (k, v) in self.machine_values() {
            let _ = writeln!(out, "{k}={v}");
        }
        out.push_str(METRICS_END);
        out.push('\n');
        out
    }

    fn machine_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("command".to_string(), self.command.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("config_hash".to_string(), self.config_hash.clone()),
        ];
        for (name, m) in &self.metrics {
            kv.push((format!("{name}.precision"), format!("{:.6}", m.precision())));
            kv.push((format!("{name}.recall"), format!("{:.6}", m.recall())));
            kv.push((format!("{name}.f1"), format!("{:.6}", m.f1())));
            for (ty, c) in &m.per_type {
                kv.push((format!("{name}.{ty}.f1"), format!("{:.6}", c.f1())));
            }
        }
        kv.extend(self.values.iter().cloned());
        kv
    }
}

/// `key=value` pairs of the machine block in `text`; empty if absent.
pub fn parse_metrics_block(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .skip_while(|l| *l != METRICS_BEGIN)
        .skip(1)
        .take_while(|l| *l != METRICS_END)
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
