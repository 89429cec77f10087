//! Experiment orchestration: integrate, extract, summarize, emit.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use adhier::chart;
use adhier::classical::find_fixed_points;
use adhier::dynamics::{
    adiabatic_error, extract_deviations, integrate_hamilton, integrate_schrodinger,
    max_linearization_frequency, sample_times, window_mean, IntegrateOptions, Protocol, Trajectory,
};
use adhier::Wavefunction;

use crate::config::{ConfigError, ExperimentConfig, ModelConfig, ProtocolConfig};
use crate::output;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] adhier::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    /// Process exit code: 2 config, 3 numerical/io, 4 failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
            CliError::ChecksFailed { .. } => 4,
        }
    }
}

/// Predicted-vs-measured statistics for one hierarchy order.
#[derive(Debug, Clone, Serialize)]
pub struct OrderSummary {
    pub order: usize,
    /// Measured window centers of (δ^k p, δ^k q), averaged over closed
    /// windows.
    pub mean_center_dp: f64,
    pub mean_center_dq: f64,
    /// Predicted (A_k, B_k) averaged over the emitted rows.
    pub mean_predicted_a: f64,
    pub mean_predicted_b: f64,
    pub max_abs_dp: f64,
    pub max_abs_dq: f64,
    /// Mean |measured center − predicted| / |predicted| over windows where
    /// the prediction is resolvable.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionSummary {
    pub order: usize,
    pub windows: usize,
    pub closed: usize,
    /// Mean action over closed windows (all windows when none close).
    pub mean: f64,
    /// (max − min)/mean over the same set.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownSummary {
    /// Relative variation of the order-0 action over the run.
    pub i0_variation: f64,
    pub max_abs_dq: f64,
    /// The steady-rate first-order bound |Ṙ|/L the growth is measured
    /// against.
    pub reference_bound: f64,
    pub broken: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub model: String,
    pub protocol: String,
    pub branch: usize,
    pub order: usize,
    pub t_span: [f64; 2],
    pub samples_total: usize,
    pub samples_emitted: usize,
    pub csv_stride: usize,
    pub pivot_switches: usize,
    /// Largest per-step norm defect of the oracle route.
    pub max_norm_drift: Option<f64>,
    /// Max chart distance between the classical and oracle routes over the
    /// emitted rows.
    pub oracle_max_chart_distance: Option<f64>,
    pub per_order: Vec<OrderSummary>,
    pub actions: Vec<ActionSummary>,
    pub err_mean: f64,
    pub err_max: f64,
    pub breakdown: Option<BreakdownSummary>,
    pub wall_time_s: f64,
    pub failed: Option<String>,
}

/// Everything a run produced, kept in memory for checks and tests.
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub primary: Trajectory,
    pub oracle: Option<Trajectory>,
    pub emitted: Vec<usize>,
}

/// Integrate both routes, extract deviations and actions, and assemble the
/// summary. No files are written.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts, CliError> {
    let started = Instant::now();
    cfg.validate()?;
    let h = cfg.hamiltonian();
    let protocol = cfg.protocol();
    let t_span = cfg.t_span();
    let branch = cfg.branch();
    let order = cfg.hierarchy.order;
    protocol
        .validate(t_span, order.max(3))
        .map_err(CliError::Numerical)?;

    let freq_max = max_linearization_frequency(&h, &protocol, t_span, branch)?;
    let dt = std::f64::consts::TAU / freq_max / cfg.integration.samples_per_period;
    let n_estimate = ((t_span.1 - t_span.0).abs() / dt) as usize + 2;
    if n_estimate > 30_000_000 {
        return Err(ConfigError::Invalid {
            key: "integration.t_end".to_string(),
            message: format!(
                "run would need {n_estimate} samples; shorten it or lower samples_per_period"
            ),
        }
        .into());
    }
    let samples = sample_times(t_span.0, t_span.1, dt);
    let opts = IntegrateOptions {
        rel_tol: cfg.integration.rel_tol,
        abs_tol: cfg.integration.abs_tol,
        ..Default::default()
    }
    .with_stability_cap(freq_max);

    // Start on the exact eigenstate of the followed branch.
    let fp0 = find_fixed_points(&h, protocol.r(t_span.0))?
        .into_iter()
        .nth(branch)
        .expect("two-level model");
    let psi0 = Wavefunction::normalized(fp0.eigvec.clone());
    let s0 = fp0.chart.clone();

    let primary = integrate_hamilton(&h, &s0, &protocol, t_span, &samples, &opts)?;
    let mut primary = extract_deviations(primary, &h, &protocol, order)?;
    primary.err = Some(adiabatic_error(&primary)?);

    let oracle = if cfg.integration.oracle {
        let traj = integrate_schrodinger(&h, &psi0, &protocol, t_span, &samples, &opts)?;
        let mut traj = extract_deviations(traj, &h, &protocol, order)?;
        traj.err = Some(adiabatic_error(&traj)?);
        Some(traj)
    } else {
        None
    };

    let (emitted, stride) = output::emitted_indices(primary.len(), cfg.output.max_csv_rows);
    let summary = summarize(
        cfg,
        &protocol,
        t_span,
        &primary,
        oracle.as_ref(),
        &emitted,
        stride,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(RunArtifacts {
        config: cfg.clone(),
        summary,
        primary,
        oracle,
        emitted,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cfg: &ExperimentConfig,
    protocol: &Protocol,
    t_span: (f64, f64),
    primary: &Trajectory,
    oracle: Option<&Trajectory>,
    emitted: &[usize],
    stride: usize,
    wall_time_s: f64,
) -> Result<RunSummary, CliError> {
    let dev = primary.deviations.as_ref().expect("deviations extracted");
    let err = primary.err.as_ref().expect("error series");
    let order = dev.order;

    let mut per_order = Vec::with_capacity(order);
    for k in 1..=order {
        let (mut sum_cp, mut sum_cq, mut n_closed) = (0.0, 0.0, 0usize);
        let mut agree_sum = 0.0;
        let mut agree_n = 0usize;
        for series in primary.actions.iter().filter(|s| s.order == k) {
            for w in series.windows.iter().filter(|w| w.closed) {
                let cp = window_mean(primary, &dev.dp[k - 1], w);
                let cq = window_mean(primary, &dev.dq[k - 1], w);
                sum_cp += cp;
                sum_cq += cq;
                n_closed += 1;
                let mid = w.start_index + (w.end_index - w.start_index) / 2;
                let (pa, pb) = (dev.shift_a[k - 1][mid], dev.shift_b[k - 1][mid]);
                let pred = (pa * pa + pb * pb).sqrt();
                if pred > 1e-15 {
                    let d = ((cp - pa).powi(2) + (cq - pb).powi(2)).sqrt();
                    agree_sum += d / pred;
                    agree_n += 1;
                }
            }
        }
        let mut max_dp: f64 = 0.0;
        let mut max_dq: f64 = 0.0;
        let mut pred_a = 0.0;
        let mut pred_b = 0.0;
        for &i in emitted {
            max_dp = max_dp.max(dev.dp[k - 1][i].abs());
            max_dq = max_dq.max(dev.dq[k - 1][i].abs());
            pred_a += dev.shift_a[k - 1][i];
            pred_b += dev.shift_b[k - 1][i];
        }
        per_order.push(OrderSummary {
            order: k,
            mean_center_dp: if n_closed > 0 {
                sum_cp / n_closed as f64
            } else {
                f64::NAN
            },
            mean_center_dq: if n_closed > 0 {
                sum_cq / n_closed as f64
            } else {
                f64::NAN
            },
            mean_predicted_a: pred_a / emitted.len() as f64,
            mean_predicted_b: pred_b / emitted.len() as f64,
            max_abs_dp: max_dp,
            max_abs_dq: max_dq,
            agreement: if agree_n > 0 {
                Some(agree_sum / agree_n as f64)
            } else {
                None
            },
        });
    }

    let mut actions = Vec::new();
    for series in &primary.actions {
        let closed: Vec<f64> = series
            .windows
            .iter()
            .filter(|w| w.closed)
            .map(|w| w.value)
            .collect();
        let pool: Vec<f64> = if closed.is_empty() {
            series.windows.iter().map(|w| w.value).collect()
        } else {
            closed.clone()
        };
        if pool.is_empty() {
            actions.push(ActionSummary {
                order: series.order,
                windows: 0,
                closed: 0,
                mean: f64::NAN,
                drift: f64::NAN,
            });
            continue;
        }
        let mean = pool.iter().sum::<f64>() / pool.len() as f64;
        let hi = pool.iter().cloned().fold(f64::MIN, f64::max);
        let lo = pool.iter().cloned().fold(f64::MAX, f64::min);
        actions.push(ActionSummary {
            order: series.order,
            windows: series.windows.len(),
            closed: closed.len(),
            mean,
            drift: if mean != 0.0 {
                (hi - lo) / mean.abs()
            } else {
                f64::NAN
            },
        });
    }

    let err_mean = emitted.iter().map(|&i| err[i]).sum::<f64>() / emitted.len() as f64;
    let err_max = emitted.iter().map(|&i| err[i]).fold(0.0f64, f64::max);

    let oracle_max_chart_distance = match oracle {
        Some(o) => {
            let mut worst: f64 = 0.0;
            for &i in emitted {
                let sa = primary.chart_at(i);
                let sb = o.chart_at(i);
                let sb = if sb.pivot == sa.pivot {
                    sb
                } else {
                    chart::repivot(&sb, sa.pivot)?
                };
                worst = worst.max(sa.distance(&sb));
            }
            Some(worst)
        }
        None => None,
    };

    // Breakdown assessment for rate-flip protocols: the first-order theory
    // bounds |δq| by |Ṙ|/L for a steady rate; resonant flipping should blow
    // through that and destroy I₀ conservation.
    let breakdown = match (&cfg.protocol, &cfg.model) {
        (ProtocolConfig::SquareWaveRate { amplitude, .. }, ModelConfig::Spin { l, .. }) => {
            let bound = amplitude / l;
            let i0 = actions.iter().find(|a| a.order == 0);
            let i0_variation = i0.map(|a| a.drift).unwrap_or(f64::NAN);
            let max_abs_dq = per_order.first().map(|o| o.max_abs_dq).unwrap_or(f64::NAN);
            Some(BreakdownSummary {
                i0_variation,
                max_abs_dq,
                reference_bound: bound,
                broken: i0_variation > 0.1 && max_abs_dq > 100.0 * bound,
            })
        }
        _ => None,
    };

    Ok(RunSummary {
        name: cfg.name.clone(),
        model: cfg.model_label(),
        protocol: protocol.label().to_string(),
        branch: cfg.branch(),
        order,
        t_span: [t_span.0, t_span.1],
        samples_total: primary.len(),
        samples_emitted: emitted.len(),
        csv_stride: stride,
        pivot_switches: primary.pivot_switches,
        max_norm_drift: oracle.map(|o| o.max_norm_drift),
        oracle_max_chart_distance,
        per_order,
        actions,
        err_mean,
        err_max,
        breakdown,
        wall_time_s,
        failed: None,
    })
}

/// Run one experiment and write `{name}.csv`, `{name}_oracle.csv` (when the
/// oracle route is enabled), `{name}_actions.csv`, and `{name}_summary.json`
/// under `out_dir`. On a numerical failure a summary with the `failed`
/// marker is still flushed before the error propagates.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts, CliError> {
    std::fs::create_dir_all(out_dir)?;
    match execute(cfg) {
        Ok(artifacts) => {
            write_artifacts(&artifacts, out_dir)?;
            Ok(artifacts)
        }
        Err(e) => {
            let marker = FailedSummary {
                name: cfg.name.clone(),
                model: cfg.model_label(),
                failed: e.to_string(),
            };
            let _ =
                output::write_json(&out_dir.join(format!("{}_summary.json", cfg.name)), &marker);
            Err(e)
        }
    }
}

#[derive(Serialize)]
struct FailedSummary {
    name: String,
    model: String,
    failed: String,
}

pub fn write_artifacts(artifacts: &RunArtifacts, out_dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir)?;
    let cfg = &artifacts.config;
    let protocol = cfg.protocol();
    output::write_trajectory_csv(
        &out_dir.join(format!("{}.csv", cfg.name)),
        &artifacts.primary,
        &protocol,
        &artifacts.emitted,
    )?;
    if let Some(oracle) = &artifacts.oracle {
        output::write_trajectory_csv(
            &out_dir.join(format!("{}_oracle.csv", cfg.name)),
            oracle,
            &protocol,
            &artifacts.emitted,
        )?;
    }
    output::write_actions_csv(
        &out_dir.join(format!("{}_actions.csv", cfg.name)),
        &artifacts.primary,
    )?;
    output::write_json(
        &out_dir.join(format!("{}_summary.json", cfg.name)),
        &artifacts.summary,
    )?;
    Ok(())
}
