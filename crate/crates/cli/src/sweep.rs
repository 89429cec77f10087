//! Parameter sweeps: independent runs per value, executed concurrently and
//! merged deterministically.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{ExperimentConfig, SweepAxis};
use crate::output::fmt17;
use crate::run::{run_experiment, CliError, RunSummary};

#[derive(Debug, Serialize)]
pub struct SweepEntry {
    pub value: f64,
    pub dir: String,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Run the base experiment once per axis value. Per-run failures are
/// recorded and the sweep continues; results are merged in value order into
/// `sweep.csv` regardless of completion order.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<SweepEntry>, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let axis_slug = axis.label().replace('.', "-");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let entries: Vec<SweepEntry> = pool.install(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .enumerate()
            .map(|(i, &value)| {
                let dir_name = format!("{}-{}-{:03}", base.name, axis_slug, i);
                let run_dir = out_dir.join(&dir_name);
                match axis.apply(base, value) {
                    Ok(cfg) => match run_experiment(&cfg, &run_dir) {
                        Ok(artifacts) => SweepEntry {
                            value,
                            dir: dir_name,
                            summary: Some(artifacts.summary),
                            error: None,
                        },
                        Err(e) => SweepEntry {
                            value,
                            dir: dir_name,
                            summary: None,
                            error: Some(e.to_string()),
                        },
                    },
                    Err(e) => SweepEntry {
                        value,
                        dir: dir_name,
                        summary: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    write_sweep_csv(
        &out_dir.join("sweep.csv"),
        base.hierarchy.order,
        axis,
        &entries,
    )?;
    Ok(entries)
}

fn write_sweep_csv(
    path: &Path,
    order: usize,
    axis: SweepAxis,
    entries: &[SweepEntry],
) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut cols = vec![
        axis.label().to_string(),
        "failed".to_string(),
        "err_mean".to_string(),
        "err_max".to_string(),
        "pivot_switches".to_string(),
        "oracle_max_chart_distance".to_string(),
    ];
    for k in 1..=order {
        cols.push(format!("I{k}_mean"));
        cols.push(format!("I{k}_drift"));
        cols.push(format!("max_abs_d{k}p"));
        cols.push(format!("max_abs_d{k}q"));
        cols.push(format!("pred_A{k}_mean"));
        cols.push(format!("pred_B{k}_mean"));
    }
    writeln!(w, "{}", cols.join(","))?;
    for e in entries {
        let mut row = vec![fmt17(e.value)];
        match &e.summary {
            None => {
                row.push("1".to_string());
                for _ in 0..(4 + 6 * order) {
                    row.push("NaN".to_string());
                }
            }
            Some(s) => {
                row.push("0".to_string());
                row.push(fmt17(s.err_mean));
                row.push(fmt17(s.err_max));
                row.push(s.pivot_switches.to_string());
                row.push(fmt17(s.oracle_max_chart_distance.unwrap_or(f64::NAN)));
                for k in 1..=order {
                    let act = s.actions.iter().find(|a| a.order == k);
                    row.push(fmt17(act.map(|a| a.mean).unwrap_or(f64::NAN)));
                    row.push(fmt17(act.map(|a| a.drift).unwrap_or(f64::NAN)));
                    let po = s.per_order.iter().find(|o| o.order == k);
                    row.push(fmt17(po.map(|o| o.max_abs_dp).unwrap_or(f64::NAN)));
                    row.push(fmt17(po.map(|o| o.max_abs_dq).unwrap_or(f64::NAN)));
                    row.push(fmt17(po.map(|o| o.mean_predicted_a).unwrap_or(f64::NAN)));
                    row.push(fmt17(po.map(|o| o.mean_predicted_b).unwrap_or(f64::NAN)));
                }
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// Least-squares slope of ln(y) against ln(x), for power-law checks.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
