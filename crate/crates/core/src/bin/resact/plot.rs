use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use statrs::distribution::{ContinuousCDF, StudentsT};

use resact::trainer::METRICS_HEADER;

use crate::run_config::run_root;
use crate::PlotArgs;

const PLOT_SCRIPT: &str = include_str!("plot.py");

/// Mean and two-sided 95% Student-t interval; the interval is empty for one sample.
pub fn mean_ci(xs: &[f64]) -> (f64, Option<(f64, f64)>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    (mean, Some((mean - half, mean + half)))
}

fn collect(path: &Path, metrics: &mut Vec<PathBuf>, reports: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            collect(&p, metrics, reports)?;
        }
    } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
        metrics.push(path.to_path_buf());
    } else if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path)?;
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
            if v.get("ncis").is_some_and(|x| x.is_number()) && v.get("n_trajectories").is_some() {
                reports.push(path.to_path_buf());
            }
        }
    } else if !path.exists() {
        bail!("no such input {}", path.display());
    }
    Ok(())
}

type Table = BTreeMap<usize, Vec<Vec<Option<f64>>>>;

fn read_metrics(path: &Path, table: &mut Table) -> anyhow::Result<()> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        bail!("{} is not a metrics file", path.display());
    }
    for (k, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let iteration: usize = cells
            .next()
            .unwrap_or("")
            .parse()
            .with_context(|| format!("{} line {}", path.display(), k + 2))?;
        let values = cells
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse().map(Some) })
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} line {}", path.display(), k + 2))?;
        table.entry(iteration).or_default().push(values);
    }
    Ok(())
}

fn fmt_ci(cells: &mut Vec<String>, xs: &[f64]) {
    if xs.is_empty() {
        cells.extend([String::new(), String::new(), String::new()]);
        return;
    }
    let (m, ci) = mean_ci(xs);
    cells.push(m.to_string());
    match ci {
        Some((lo, hi)) => cells.extend([lo.to_string(), hi.to_string()]),
        None => cells.extend([String::new(), String::new()]),
    }
}

fn curves(table: &Table) -> String {
    let columns: Vec<&str> = METRICS_HEADER.split(',').skip(1).collect();
    let mut header = vec!["iteration".to_string(), "runs".to_string()];
    for c in &columns {
        header.extend([format!("{c}_mean"), format!("{c}_ci_lo"), format!("{c}_ci_hi")]);
    }
    let mut out = header.join(",") + "\n";
    for (it, rows) in table {
        let mut cells = vec![it.to_string(), rows.len().to_string()];
        for j in 0..columns.len() {
            let xs: Vec<f64> = rows.iter().filter_map(|r| r.get(j).copied().flatten()).collect();
            fmt_ci(&mut cells, &xs);
        }
        out += &(cells.join(",") + "\n");
    }
    out
}

fn n_sweep(reports: &[PathBuf]) -> anyhow::Result<Option<String>> {
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for path in reports {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        let Some(n) = v.get("n_estimators").and_then(|n| n.as_u64()) else { continue };
        let g = groups.entry(n as usize).or_default();
        g.0.push(v["ncis"].as_f64().unwrap_or(f64::NAN));
        if let Some(r) = v.pointer("/true_rollout/mean_return").and_then(|x| x.as_f64()) {
            g.1.push(r);
        }
    }
    if groups.is_empty() {
        return Ok(None);
    }
    let mut out = String::from("n_estimators,reports,ncis_mean,ncis_ci_lo,ncis_ci_hi,return_mean,return_ci_lo,return_ci_hi\n");
    for (n, (ncis, ret)) in &groups {
        let mut cells = vec![n.to_string(), ncis.len().to_string()];
        fmt_ci(&mut cells, ncis);
        fmt_ci(&mut cells, ret);
        out += &(cells.join(",") + "\n");
    }
    Ok(Some(out))
}

pub fn run(a: PlotArgs) -> anyhow::Result<()> {
    let (mut metrics, mut reports) = (Vec::new(), Vec::new());
    for p in &a.inputs {
        collect(p, &mut metrics, &mut reports)?;
    }
    let mut table = Table::new();
    for m in &metrics {
        read_metrics(m, &mut table)?;
    }
    let sweep = n_sweep(&reports)?;
    if table.is_empty() && sweep.is_none() {
        bail!("no metrics.csv files or evaluation reports with n_estimators under the given inputs");
    }
    let out = a.out.unwrap_or_else(|| run_root().join("plots"));
    fs::create_dir_all(&out)?;
    if !table.is_empty() {
        fs::write(out.join("curves.csv"), curves(&table))?;
    }
    if let Some(s) = sweep {
        fs::write(out.join("n_sweep.csv"), s)?;
    }
    fs::write(out.join("plot.py"), PLOT_SCRIPT)?;
    info!(
        "aggregated {} metrics files and {} reports into {}",
        metrics.len(),
        reports.len(),
        out.display()
    );
    Ok(())
}
