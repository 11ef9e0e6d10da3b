//! Summaries over finished run directories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::runner::METRICS_FILE;
use crate::metrics::{read_metric_csv, MetricRow};
use crate::stats::mean_se;
use crate::{Error, Result};

/// Seed-averaged horizon-end metrics of one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: String,
    pub seeds: usize,
    pub p_le: f64,
    pub p_le_se: f64,
    pub p_ir: f64,
    pub p_ir_se: f64,
    pub p_ft: f64,
    pub p_ft_se: f64,
    pub alpha: f64,
}

/// Mean over seeds of each metric at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanTraceRow {
    pub t: u64,
    #[serde(rename = "P_LE")]
    pub p_le: Option<f64>,
    #[serde(rename = "P_IR")]
    pub p_ir: Option<f64>,
    #[serde(rename = "P_FT")]
    pub p_ft: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub traces: BTreeMap<String, Vec<MeanTraceRow>>,
}

fn find_metric_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            find_metric_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups every `metrics.csv` under `dir` by the directory above its seed
/// directory and summarizes each group.
pub fn build_report(dir: &Path) -> Result<Report> {
    let mut files = Vec::new();
    find_metric_files(dir, &mut files)?;
    if files.is_empty() {
        return Err(Error::MissingRecord(format!("no {METRICS_FILE} under {}", dir.display())));
    }
    let mut grouped: BTreeMap<String, Vec<Vec<MetricRow>>> = BTreeMap::new();
    for f in files {
        let seed_dir = f.parent().expect("file has a parent");
        let group_dir = seed_dir.parent().unwrap_or(seed_dir);
        let group = group_dir
            .strip_prefix(dir)
            .ok()
            .map(|p| p.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        let rows = read_metric_csv(File::open(&f)?)?;
        grouped.entry(group).or_default().push(rows);
    }
    let mut groups = Vec::new();
    let mut traces = BTreeMap::new();
    for (group, runs) in grouped {
        let last = |f: &dyn Fn(&MetricRow) -> Option<f64>| -> (f64, f64) {
            let xs: Vec<f64> = runs.iter().filter_map(|r| r.iter().rev().find_map(f)).collect();
            mean_se(&xs)
        };
        let (p_le, p_le_se) = last(&|r| r.p_le);
        let (p_ir, p_ir_se) = last(&|r| r.p_ir);
        let (p_ft, p_ft_se) = last(&|r| r.p_ft);
        let (alpha, _) = last(&|r| Some(r.alpha));
        groups.push(GroupSummary {
            group: group.clone(),
            seeds: runs.len(),
            p_le,
            p_le_se,
            p_ir,
            p_ir_se,
            p_ft,
            p_ft_se,
            alpha,
        });
        let mut by_t: BTreeMap<u64, Vec<&MetricRow>> = BTreeMap::new();
        for run in &runs {
            for row in run {
                by_t.entry(row.t).or_default().push(row);
            }
        }
        let trace = by_t
            .into_iter()
            .map(|(t, rows)| MeanTraceRow {
                t,
                p_le: mean_opt(rows.iter().map(|r| r.p_le)),
                p_ir: mean_opt(rows.iter().map(|r| r.p_ir)),
                p_ft: mean_opt(rows.iter().map(|r| r.p_ft)),
                alpha: rows.iter().map(|r| r.alpha).sum::<f64>() / rows.len() as f64,
            })
            .collect();
        traces.insert(group, trace);
    }
    Ok(Report { groups, traces })
}

impl Report {
    /// Fixed-width summary table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<32} {:>5} {:>17} {:>17} {:>17} {:>10}\n",
            "group", "seeds", "P_LE", "P_IR", "P_FT", "alpha"
        );
        let cell = |m: f64, se: f64| format!("{m:.4} ± {se:.4}");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<32} {:>5} {:>17} {:>17} {:>17} {:>10.3e}\n",
                g.group,
                g.seeds,
                cell(g.p_le, g.p_le_se),
                cell(g.p_ir, g.p_ir_se),
                cell(g.p_ft, g.p_ft_se),
                g.alpha
            ));
        }
        s
    }

    /// Writes `summary.csv` into `dir` and `mean_trace.csv` into each group
    /// directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("summary.csv"))?));
        for g in &self.groups {
            w.serialize(g)?;
        }
        w.flush()?;
        for (group, trace) in &self.traces {
            let gdir = dir.join(group);
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(gdir.join("mean_trace.csv"))?));
            for row in trace {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        let mut f = File::create(dir.join("summary.txt"))?;
        f.write_all(self.table().as_bytes())?;
        Ok(())
    }
}
