//! Measured residual centers against the hierarchy predictions, order by
//! order.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use adhier::dynamics::window_mean;

use crate::config::ExperimentConfig;
use crate::output::fmt17;
use crate::run::{execute, CliError, RunArtifacts};

#[derive(Debug, Clone, Serialize)]
pub struct CompareOrder {
    pub order: usize,
    pub windows: usize,
    /// Mean |measured center − (A_k, B_k)| / |(A_k, B_k)| over windows with a
    /// resolvable prediction.
    pub agreement: Option<f64>,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub name: String,
    pub order: usize,
    pub per_order: Vec<CompareOrder>,
}

/// Run the experiment and tabulate, per order and per orbit window, the
/// measured center of (δ^k p, δ^k q) next to the predicted (A_k, B_k).
/// Writes `{name}_compare.csv` alongside the usual run outputs.
pub fn compare_hierarchy(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(CompareReport, RunArtifacts), CliError> {
    let artifacts = execute(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    crate::run::write_artifacts(&artifacts, out_dir)?;
    let report = build_report(&artifacts, out_dir)?;
    Ok((report, artifacts))
}

fn build_report(artifacts: &RunArtifacts, out_dir: &Path) -> Result<CompareReport, CliError> {
    let traj = &artifacts.primary;
    let dev = traj.deviations.as_ref().expect("deviations extracted");
    let order = dev.order;
    let path = out_dir.join(format!("{}_compare.csv", artifacts.config.name));
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "order,t_mid,measured_p,measured_q,predicted_a,predicted_b,abs_error"
    )?;

    let mut per_order = Vec::with_capacity(order);
    for k in 1..=order {
        let mut agree_sum = 0.0;
        let mut agree_n = 0usize;
        let mut max_err: f64 = 0.0;
        let mut windows = 0usize;
        for series in traj.actions.iter().filter(|s| s.order == k) {
            for win in series.windows.iter().filter(|w| w.closed) {
                windows += 1;
                let cp = window_mean(traj, &dev.dp[k - 1], win);
                let cq = window_mean(traj, &dev.dq[k - 1], win);
                let mid = win.start_index + (win.end_index - win.start_index) / 2;
                let (pa, pb) = (dev.shift_a[k - 1][mid], dev.shift_b[k - 1][mid]);
                let err = ((cp - pa).powi(2) + (cq - pb).powi(2)).sqrt();
                max_err = max_err.max(err);
                let pred = (pa * pa + pb * pb).sqrt();
                if pred > 1e-15 {
                    agree_sum += err / pred;
                    agree_n += 1;
                }
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    k,
                    fmt17(0.5 * (win.t_start + win.t_end)),
                    fmt17(cp),
                    fmt17(cq),
                    fmt17(pa),
                    fmt17(pb),
                    fmt17(err)
                )?;
            }
        }
        per_order.push(CompareOrder {
            order: k,
            windows,
            agreement: if agree_n > 0 {
                Some(agree_sum / agree_n as f64)
            } else {
                None
            },
            max_abs_error: max_err,
        });
    }
    w.flush()?;
    Ok(CompareReport {
        name: artifacts.config.name.clone(),
        order,
        per_order,
    })
}
