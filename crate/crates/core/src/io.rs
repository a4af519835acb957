//! CSV tables and versioned JSON documents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSolution;

pub const FORMAT_VERSION: u32 = 1;

/// Writes equally long columns under a header row.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: header.len(),
            got: columns.len(),
        });
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if let Some(c) = columns.iter().find(|c| c.len() != rows) {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: c.len(),
        });
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in 0..rows {
        let line: Vec<String> = columns.iter().map(|c| format!("{:e}", c[r])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_columns`].
pub fn read_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty table".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (k, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            return Err(Error::DimensionMismatch {
                expected: header.len(),
                got: vals.len(),
            });
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("row {}: cannot parse {v:?}", k + 1))
            })?);
        }
    }
    Ok((header, cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub format_version: u32,
    pub alpha: f64,
    pub l: f64,
    pub n: usize,
    pub diag_error: f64,
    pub outside_max: f64,
    pub h1_norm: f64,
    pub l2_norm: f64,
}

impl KernelMeta {
    pub fn of(k: &KernelSolution) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            alpha: k.alpha(),
            l: k.grid().l,
            n: k.grid().n,
            diag_error: k.diag_error(),
            outside_max: k.outside_max(),
            h1_norm: k.h1_norm(),
            l2_norm: k.l2_norm(),
        }
    }
}

/// `x,y,k` rows over the lower triangle.
pub fn write_kernel_csv(path: &Path, k: &KernelSolution) -> Result<()> {
    let g = k.grid();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vs = Vec::new();
    for i in 0..g.n {
        for j in 0..=i {
            xs.push(g.x(i));
            ys.push(g.x(j));
            vs.push(k.at(i, j));
        }
    }
    write_columns(path, &["x", "y", "k"], &[&xs, &ys, &vs])
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
