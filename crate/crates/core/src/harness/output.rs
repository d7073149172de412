//! CSV tables, figure series and the run manifest.

use super::cell::{CellResult, MethodMetrics, TargetMetrics};
use super::config::CellSpec;
use crate::{Error, Result};
use serde_json::json;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TABLE1_HEADER: &str = "mu,sigma,corr,ig_rb_ey,ig_rb_ybar,nig_rb_ey,nig_rb_ybar";
pub const TABLE2_HEADER: &str = "mu,sigma,corr,ig_ey_width,ig_ey_cp,ig_ey_adj_cp,ig_ybar_width,ig_ybar_cp,ig_ybar_adj_cp,\
nig_ey_width,nig_ey_cp,nig_ybar_width,nig_ybar_cp,ig_ey_cp_se,ig_ey_adj_cp_se,ig_ybar_cp_se,ig_ybar_adj_cp_se,nig_ey_cp_se,nig_ybar_cp_se";
const HT_COLUMNS: &str = "corr,ht_rb_ybar,nig_rb_ybar,ht_width,ht_cp,ht_adj_cp,nig_width,nig_cp,ht_cp_se,ht_adj_cp_se,nig_cp_se";
pub const FIG1_HEADER: &str = "population,sample_mean,posterior_mean_nonsampled";
pub const FIG_RB_HEADER: &str = "population,nig_rb,ht_rb";

fn num(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.6}"),
        _ => "NA".into(),
    }
}

fn ybar(m: Option<MethodMetrics>) -> Option<TargetMetrics> {
    m.map(|m| m.ybar)
}

fn ey(m: Option<MethodMetrics>) -> Option<TargetMetrics> {
    m.and_then(|m| m.ey)
}

fn row(fields: &[Option<f64>]) -> String {
    fields.iter().map(|f| num(*f)).collect::<Vec<_>>().join(",")
}

fn table1_row(r: &CellResult) -> String {
    let m = &r.metrics;
    let p = &r.cell.params;
    row(&[
        Some(p.mu),
        Some(p.sigma2.sqrt()),
        Some(m.corr),
        ey(m.ig).map(|t| t.relative_bias),
        ybar(m.ig).map(|t| t.relative_bias),
        ey(m.nig).map(|t| t.relative_bias),
        ybar(m.nig).map(|t| t.relative_bias),
    ])
}

fn table2_row(r: &CellResult) -> String {
    let m = &r.metrics;
    let p = &r.cell.params;
    let (ige, igy, nige, nigy) = (ey(m.ig), ybar(m.ig), ey(m.nig), ybar(m.nig));
    row(&[
        Some(p.mu),
        Some(p.sigma2.sqrt()),
        Some(m.corr),
        ige.map(|t| t.mean_width),
        ige.map(|t| t.coverage),
        ige.and_then(|t| t.adjusted_coverage),
        igy.map(|t| t.mean_width),
        igy.map(|t| t.coverage),
        igy.and_then(|t| t.adjusted_coverage),
        nige.map(|t| t.mean_width),
        nige.map(|t| t.coverage),
        nigy.map(|t| t.mean_width),
        nigy.map(|t| t.coverage),
        ige.map(|t| t.coverage_se),
        ige.and_then(|t| t.adjusted_coverage_se),
        igy.map(|t| t.coverage_se),
        igy.and_then(|t| t.adjusted_coverage_se),
        nige.map(|t| t.coverage_se),
        nigy.map(|t| t.coverage_se),
    ])
}

fn ht_row(lead: [f64; 2], r: &CellResult) -> String {
    let m = &r.metrics;
    let (ht, nig) = (ybar(m.ht), ybar(m.nig));
    row(&[
        Some(lead[0]),
        Some(lead[1]),
        Some(m.corr),
        ht.map(|t| t.relative_bias),
        nig.map(|t| t.relative_bias),
        ht.map(|t| t.mean_width),
        ht.map(|t| t.coverage),
        ht.and_then(|t| t.adjusted_coverage),
        nig.map(|t| t.mean_width),
        nig.map(|t| t.coverage),
        ht.map(|t| t.coverage_se),
        ht.and_then(|t| t.adjusted_coverage_se),
        nig.map(|t| t.coverage_se),
    ])
}

/// Text of `table{k}.csv` for the runs tagged with table `k`, or `None`
/// when no run carries the tag.
pub fn table_csv(k: u8, runs: &[(CellSpec, CellResult)]) -> Option<String> {
    let tagged: Vec<&CellResult> = runs.iter().filter(|(s, _)| s.tables.contains(&k)).map(|(_, r)| r).collect();
    if tagged.is_empty() {
        return None;
    }
    let mut out = match k {
        1 => TABLE1_HEADER.to_string(),
        2 => TABLE2_HEADER.to_string(),
        3 => format!("mu,sigma,{HT_COLUMNS}"),
        4 => format!("beta0,sigma_e,{HT_COLUMNS}"),
        _ => return None,
    };
    out.push('\n');
    for r in tagged {
        let p = &r.cell.params;
        let line = match k {
            1 => table1_row(r),
            2 => table2_row(r),
            3 => ht_row([p.mu, p.sigma2.sqrt()], r),
            _ => ht_row([p.beta0, p.sigma_e2.sqrt()], r),
        };
        out.push_str(&line);
        out.push('\n');
    }
    Some(out)
}

/// Text of `fig{k}.csv` from the first run tagged with figure `k`.
pub fn figure_csv(k: u8, runs: &[(CellSpec, CellResult)]) -> Option<String> {
    let (_, r) = runs.iter().find(|(s, _)| s.figures.contains(&k))?;
    let mut out = String::new();
    match k {
        1 => {
            out.push_str(FIG1_HEADER);
            out.push('\n');
            for rep in &r.replications {
                let post = rep.nig.as_ref().map(|n| n.mean_nonsampled);
                let _ = writeln!(out, "{},{}", rep.rep, row(&[Some(rep.sample_mean), post]));
            }
        }
        2 | 3 => {
            out.push_str(FIG_RB_HEADER);
            out.push('\n');
            for rep in &r.replications {
                let rb = |x: f64| (x - rep.truth_ybar) / rep.truth_ybar;
                let nig = rep.nig.as_ref().map(|n| rb(n.ybar.equal_tail.point));
                let ht = rep.ht.map(|h| rb(h.total_hat));
                let _ = writeln!(out, "{},{}", rep.rep, row(&[nig, ht]));
            }
        }
        _ => return None,
    }
    Some(out)
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(())
}

/// Write every table and figure the runs provide, plus `manifest.json`.
pub fn emit_outputs(runs: &[(CellSpec, CellResult)], seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for k in 1..=4u8 {
        if let Some(text) = table_csv(k, runs) {
            let name = format!("table{k}.csv");
            write(out_dir, &name, &text, &mut written)?;
            files.push(name);
        }
    }
    for k in 1..=3u8 {
        if let Some(text) = figure_csv(k, runs) {
            let name = format!("fig{k}.csv");
            write(out_dir, &name, &text, &mut written)?;
            files.push(name);
        }
    }
    let manifest = json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "files": files,
        "cells": runs.iter().map(|(spec, r)| json!({
            "spec": spec,
            "cell": r.cell,
            "metrics": r.metrics,
            "failures": r.failures,
            "failed": r.failed(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Fault(e.to_string()))?;
    write(out_dir, "manifest.json", &(text + "\n"), &mut written)?;
    Ok(written)
}
