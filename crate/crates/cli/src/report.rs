//! Aggregation of per-seed evaluation outputs into a comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tuneup::eval::{mean_std, BUCKET_LABELS};
use tuneup::training::Method;

use crate::commands::{read_json, write_json, EvalOutput};
use crate::{run_err, CliError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub setting: String,
    /// `all`, `tail` or a degree-bucket label.
    pub bucket: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub setting: String,
    pub bucket: String,
    pub base: f64,
    pub tuneup: f64,
    pub gain: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub metric: String,
    pub rows: Vec<ReportRow>,
    pub gains: Vec<GainRow>,
}

/// `(tuneup - base) / base` as a signed percentage with one decimal.
pub fn relative_gain(base: f64, tuneup: f64) -> String {
    if base == 0.0 {
        return "n/a".into();
    }
    format!("{:+.1}%", 100.0 * (tuneup - base) / base)
}

/// Reads every `<seed>/eval-<method>.json` under `root` (a `<out>/<hash>`
/// directory) and aggregates mean and sample std over seeds.
pub fn aggregate(root: &Path) -> Result<Report, CliError> {
    let hash = root
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::MissingInput(root.to_path_buf()))?
        .to_string();
    let entries = fs::read_dir(root).map_err(|_| CliError::MissingInput(root.to_path_buf()))?;
    let mut seed_dirs: Vec<(u64, std::path::PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_str()?.parse::<u64>().ok()?;
            e.path().is_dir().then(|| (name, e.path()))
        })
        .collect();
    seed_dirs.sort();

    let mut outputs = Vec::new();
    for (_, dir) in &seed_dirs {
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(run_err)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("eval-") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        for f in files {
            let out: EvalOutput = read_json(&f)?;
            if out.config_hash != hash {
                return Err(CliError::Config(format!(
                    "{} belongs to config {}, not {hash}; refusing to aggregate",
                    f.display(),
                    out.config_hash
                )));
            }
            outputs.push(out);
        }
    }
    if outputs.is_empty() {
        return Err(CliError::MissingInput(root.join("<seed>/eval-<method>.json")));
    }

    let metric = outputs[0].reports.first().map(|r| r.metric.clone()).unwrap_or_default();
    let mut values: BTreeMap<(Method, String, usize), Vec<f64>> = BTreeMap::new();
    // Bucket slot 0 is `all`, 1 is `tail`, then one per degree bucket.
    let bucket_name = |slot: usize| match slot {
        0 => "all".to_string(),
        1 => "tail".to_string(),
        s => BUCKET_LABELS[s - 2].to_string(),
    };
    let mut settings_order: Vec<String> = Vec::new();
    for out in &outputs {
        for r in &out.reports {
            let setting = r.setting.to_string();
            if !settings_order.contains(&setting) {
                settings_order.push(setting.clone());
            }
            values
                .entry((out.method, setting.clone(), 0))
                .or_default()
                .push(r.value);
            if let Some(t) = r.tail {
                values.entry((out.method, setting.clone(), 1)).or_default().push(t);
            }
            for (i, row) in r.buckets.rows.iter().enumerate() {
                if let Some(m) = row.mean {
                    values.entry((out.method, setting.clone(), i + 2)).or_default().push(m);
                }
            }
        }
    }
    let setting_rank = |s: &String| settings_order.iter().position(|x| x == s).unwrap_or(usize::MAX);
    let mut keys: Vec<_> = values.keys().cloned().collect();
    keys.sort_by_key(|(m, s, b)| (*m, setting_rank(s), *b));
    let rows: Vec<ReportRow> = keys
        .iter()
        .map(|k| {
            let v = &values[k];
            let (mean, std) = mean_std(v);
            ReportRow {
                method: k.0,
                setting: k.1.clone(),
                bucket: bucket_name(k.2),
                mean,
                std,
                seeds: v.len(),
            }
        })
        .collect();

    let mut gains = Vec::new();
    for k in keys.iter().filter(|k| k.0 == Method::Base) {
        let tk = (Method::Tuneup, k.1.clone(), k.2);
        if let Some(t) = values.get(&tk) {
            let (b, _) = mean_std(&values[k]);
            let (t, _) = mean_std(t);
            gains.push(GainRow {
                setting: k.1.clone(),
                bucket: bucket_name(k.2),
                base: b,
                tuneup: t,
                gain: relative_gain(b, t),
            });
        }
    }
    Ok(Report {
        config_hash: hash,
        seeds: seed_dirs.iter().map(|(s, _)| *s).collect(),
        metric,
        rows,
        gains,
    })
}

impl Report {
    /// Method x setting table of overall and tail mean ± std, followed by
    /// the relative-gain row.
    pub fn to_table(&self) -> String {
        let settings: Vec<&String> = {
            let mut s: Vec<&String> = Vec::new();
            for r in &self.rows {
                if !s.contains(&&r.setting) {
                    s.push(&r.setting);
                }
            }
            s
        };
        let cell = |m: Method, s: &str, b: &str| {
            self.rows
                .iter()
                .find(|r| r.method == m && r.setting == s && r.bucket == b)
                .map(|r| format!("{:.4} ± {:.4}", r.mean, r.std))
                .unwrap_or_else(|| "-".into())
        };
        let mut out = format!(
            "{} over seeds {:?} (config {})\n\n",
            self.metric, self.seeds, self.config_hash
        );
        let _ = write!(out, "| method |");
        for s in &settings {
            let _ = write!(out, " {s} | {s} tail |");
        }
        out.push('\n');
        out.push_str("|---|");
        out.push_str(&"---|---|".repeat(settings.len()));
        out.push('\n');
        let mut methods: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        methods.dedup();
        for m in methods {
            let _ = write!(out, "| {m} |");
            for s in &settings {
                let _ = write!(out, " {} | {} |", cell(m, s, "all"), cell(m, s, "tail"));
            }
            out.push('\n');
        }
        if !self.gains.is_empty() {
            out.push_str("| rel. gain over base |");
            for s in &settings {
                let g = |b: &str| {
                    self.gains
                        .iter()
                        .find(|g| &g.setting == *s && g.bucket == b)
                        .map(|g| g.gain.clone())
                        .unwrap_or_else(|| "-".into())
                };
                let _ = write!(out, " {} | {} |", g("all"), g("tail"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,setting,bucket,mean,std,seeds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method, r.setting, r.bucket, r.mean, r.std, r.seeds
            );
        }
        out
    }

    pub fn write(&self, root: &Path, csv: bool) -> Result<(), CliError> {
        write_json(&root.join("report.json"), self)?;
        fs::write(root.join("report.md"), self.to_table()).map_err(run_err)?;
        if csv {
            fs::write(root.join("report.csv"), self.to_csv()).map_err(run_err)?;
        }
        Ok(())
    }
}
