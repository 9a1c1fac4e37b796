use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::store::{ConfigResult, Outcome};
use super::LeaderboardRow;
use crate::error::{Error, Result};

/// Sample quantile by linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summary of one model's scores over the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub model: String,
    pub metric: String,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(model: &str, metric: &str, values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Distribution {
            model: model.to_string(),
            metric: metric.to_string(),
            count: v.len(),
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Search-split F1-micro and F1-macro distributions per model label.
pub fn score_distribution(results: &[ConfigResult]) -> Vec<Distribution> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in results {
        if let Outcome::Completed { search, .. } = &r.outcome {
            let g = groups
                .entry(r.hyperparams.model_kind.table_label())
                .or_default();
            g.0.push(search.f1_micro);
            g.1.push(search.f1_macro);
        }
    }
    groups
        .into_iter()
        .flat_map(|(model, (micro, macro_))| {
            [
                Distribution::of(model, "f1_micro", &micro),
                Distribution::of(model, "f1_macro", &macro_),
            ]
        })
        .flatten()
        .collect()
}

fn cell(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn score(v: f64) -> String {
    format!("{v:.5}")
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Best row per model label in the shape
/// `model,filter_size,num_blocks,num_filters,num_rnn_blocks,num_units,mean_f1_micro`.
pub fn write_table_csv(path: &Path, rows: &[LeaderboardRow]) -> Result<()> {
    let mut out = String::from(
        "model,filter_size,num_blocks,num_filters,num_rnn_blocks,num_units,mean_f1_micro\n",
    );
    let mut seen = Vec::new();
    for r in rows {
        let label = r.model_kind.table_label();
        if seen.contains(&label) {
            continue;
        }
        seen.push(label);
        let hp = &r.hyperparams;
        let _ = writeln!(
            out,
            "{label},{},{},{},{},{},{}",
            cell(hp.filter_size),
            cell(hp.num_blocks),
            cell(hp.num_filters),
            cell(hp.num_rnn_blocks),
            cell(hp.num_units),
            score(r.mean_f1_micro)
        );
    }
    write(path, &out)
}

/// Every leaderboard row with its channel count, cell, search and
/// validation scores side by side.
pub fn write_leaderboard_csv(path: &Path, rows: &[LeaderboardRow]) -> Result<()> {
    let mut out = String::from(
        "rank,model,num_channels,filter_size,num_blocks,num_filters,num_rnn_blocks,num_units,rnn_cell,seed,\
         parameters,search_f1_micro,search_f1_macro,validation_f1_micro,validation_f1_macro,f1_micro_hc,f1_micro_pd,\
         runtime_s\n",
    );
    let opt = |v: Option<f64>| v.map(score).unwrap_or_default();
    for (i, r) in rows.iter().enumerate() {
        let hp = &r.hyperparams;
        let v = r.validation.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            i + 1,
            hp.model_kind.label(),
            hp.num_channels,
            cell(hp.filter_size),
            cell(hp.num_blocks),
            cell(hp.num_filters),
            cell(hp.num_rnn_blocks),
            cell(hp.num_units),
            hp.cell().map_or("-", |c| c.label()),
            r.seed,
            r.parameter_count,
            score(r.search_f1_micro),
            score(r.search_f1_macro),
            opt(v.map(|v| v.f1_micro)),
            opt(v.map(|v| v.f1_macro)),
            opt(r.per_cohort_f1.get("HC").copied()),
            opt(r.per_cohort_f1.get("PD").copied()),
            r.runtime_s
        );
    }
    write(path, &out)
}

pub fn write_distribution_csv(path: &Path, dist: &[Distribution]) -> Result<()> {
    let mut out = String::from("model,metric,count,min,q1,median,q3,max\n");
    for d in dist {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.model,
            d.metric,
            d.count,
            score(d.min),
            score(d.q1),
            score(d.median),
            score(d.q3),
            score(d.max)
        );
    }
    write(path, &out)
}

/// Writes `table.csv`, `leaderboard.csv`, `leaderboard.json` and
/// `distribution.csv` into `dir`.
pub fn write_report(dir: &Path, rows: &[LeaderboardRow], results: &[ConfigResult]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Config("leaderboard has no rows to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_table_csv(&dir.join("table.csv"), rows)?;
    write_leaderboard_csv(&dir.join("leaderboard.csv"), rows)?;
    write(
        &dir.join("leaderboard.json"),
        &serde_json::to_string_pretty(rows)?,
    )?;
    write_distribution_csv(&dir.join("distribution.csv"), &score_distribution(results))
}
