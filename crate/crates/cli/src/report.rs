//! Manifests and the `report` aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scenarios::Check;
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub kind: String,
    pub refine: u32,
    pub grid: BTreeMap<String, f64>,
    pub metrics: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub refine: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub summary: Summary,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Report(format!("{}: line {}: {e}", path.display(), e.line())))?;
        if m.format_version != FORMAT_VERSION {
            return Err(CliError::Report(format!(
                "{}: format_version {} is not {FORMAT_VERSION}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

pub struct Report {
    pub text: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub regressions: Vec<String>,
}

/// Aggregates manifests of one scenario kind. With several refinement
/// levels, observed orders `log2(e_k / e_(k+1)) / (refine_(k+1) - refine_k)`
/// are added per error metric. A baseline flags errors that grew by more
/// than 10%.
pub fn build(paths: &[PathBuf], baseline: Option<&Path>) -> Result<Report, CliError> {
    if paths.is_empty() {
        return Err(CliError::Report("report needs at least one manifest".into()));
    }
    let mut ms = paths.iter().map(|p| Manifest::load(p)).collect::<Result<Vec<_>, _>>()?;
    let kinds: BTreeSet<&str> = ms.iter().map(|m| m.kind.as_str()).collect();
    if kinds.len() > 1 {
        return Err(CliError::Report(format!(
            "manifests mix scenario kinds: {}",
            kinds.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    ms.sort_by_key(|m| m.refine);
    let mut keys: BTreeSet<String> = BTreeSet::new();
    for m in &ms {
        keys.extend(m.summary.metrics.keys().cloned());
        keys.extend(m.summary.errors.keys().map(|k| format!("error:{k}")));
    }
    let header: Vec<String> = std::iter::once("metric".to_string())
        .chain(ms.iter().map(|m| format!("refine={}", m.refine)))
        .chain((1..ms.len()).map(|k| format!("order {}->{}", ms[k - 1].refine, ms[k].refine)))
        .collect();
    let value = |m: &Manifest, key: &str| -> Option<f64> {
        match key.strip_prefix("error:") {
            Some(k) => m.summary.errors.get(k).copied(),
            None => m.summary.metrics.get(key).copied(),
        }
    };
    let mut rows = Vec::new();
    for key in &keys {
        let mut row = vec![key.clone()];
        for m in &ms {
            row.push(value(m, key).map_or("-".into(), |v| format!("{v:.6e}")));
        }
        for k in 1..ms.len() {
            let cell = match (key.starts_with("error:"), value(&ms[k - 1], key), value(&ms[k], key)) {
                (true, Some(a), Some(b)) if a > 0.0 && b > 0.0 && ms[k].refine > ms[k - 1].refine => {
                    format!("{:.3}", (a / b).log2() / (ms[k].refine - ms[k - 1].refine) as f64)
                }
                _ => "-".into(),
            };
            row.push(cell);
        }
        rows.push(row);
    }
    let mut regressions = Vec::new();
    if let Some(b) = baseline {
        let base = Manifest::load(b)?;
        if base.kind != ms[0].kind {
            return Err(CliError::Report(format!(
                "baseline kind {} does not match {}",
                base.kind, ms[0].kind
            )));
        }
        let cur = ms.iter().rev().find(|m| m.refine == base.refine).unwrap_or(&ms[ms.len() - 1]);
        for (k, v) in &cur.summary.errors {
            if let Some(old) = base.summary.errors.get(k) {
                if *v > 1.1 * old {
                    regressions.push(format!("{k}: {v:.3e} > baseline {old:.3e}"));
                }
            }
        }
        for c in &cur.summary.checks {
            let was = base.summary.checks.iter().find(|x| x.name == c.name);
            if !c.passed && was.is_some_and(|w| w.passed) {
                regressions.push(format!("check {} passed in the baseline and fails now", c.name));
            }
        }
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut text = format!("kind: {}\n", ms[0].kind);
    text.push_str(&line(&header));
    text.push('\n');
    for r in &rows {
        text.push_str(&line(r));
        text.push('\n');
    }
    for r in &regressions {
        text.push_str(&format!("REGRESSION {r}\n"));
    }
    Ok(Report {
        text,
        header,
        rows,
        regressions,
    })
}
