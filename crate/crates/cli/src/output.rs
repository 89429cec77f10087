//! Fixed-format CSV and JSON emission.
//!
//! Trajectory rows are written with 17 significant digits so downstream
//! analysis can reproduce every reported statistic bit for bit; identical
//! configs produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use adhier::dynamics::{Protocol, Trajectory};

/// 17 significant digits; NaN marks not-yet-available running values.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Column header for a trajectory CSV at deviation order K:
/// `t,R,Rdot,p,q,pbar,qbar,dp,dq,A1,B1[,d2p,d2q,A2,B2,...],I1..IK,Err`.
pub fn trajectory_header(order: usize) -> String {
    let mut cols: Vec<String> = [
        "t", "R", "Rdot", "p", "q", "pbar", "qbar", "dp", "dq", "A1", "B1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for k in 2..=order {
        cols.push(format!("d{k}p"));
        cols.push(format!("d{k}q"));
        cols.push(format!("A{k}"));
        cols.push(format!("B{k}"));
    }
    for k in 1..=order {
        cols.push(format!("I{k}"));
    }
    cols.push("Err".to_string());
    cols.join(",")
}

/// Emitted row indices: decimation by a uniform stride with the final sample
/// always included.
pub fn emitted_indices(n: usize, max_rows: usize) -> (Vec<usize>, usize) {
    let stride = n.div_ceil(max_rows).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last().unwrap_or(&0) != n - 1 && n > 0 {
        idx.push(n - 1);
    }
    (idx, stride)
}

/// Running action value per sample: the most recent completed window of each
/// order, NaN before the first completes.
pub fn running_actions(traj: &Trajectory, order: usize) -> Vec<Vec<f64>> {
    let n = traj.len();
    let mut out = vec![vec![f64::NAN; n]; order];
    for series in &traj.actions {
        if series.order == 0 || series.order > order {
            continue;
        }
        let dst = &mut out[series.order - 1];
        let mut wi = 0;
        let mut current = f64::NAN;
        for i in 0..n {
            while wi < series.windows.len() && series.windows[wi].end_index <= i {
                current = series.windows[wi].value;
                wi += 1;
            }
            dst[i] = current;
        }
    }
    out
}

/// Write a trajectory CSV (deviations and error series must be present).
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    protocol: &Protocol,
    indices: &[usize],
) -> std::io::Result<()> {
    let dev = traj.deviations.as_ref().expect("deviations extracted");
    let err = traj.err.as_ref().expect("error series computed");
    let order = dev.order;
    let running = running_actions(traj, order);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", trajectory_header(order))?;
    for &i in indices {
        let t = traj.times[i];
        let mut cols: Vec<String> = Vec::with_capacity(12 + 5 * order);
        cols.push(fmt17(t));
        cols.push(fmt17(protocol.r(t)));
        cols.push(fmt17(protocol.deriv(1, t)));
        cols.push(fmt17(traj.p[i]));
        cols.push(fmt17(traj.q[i]));
        cols.push(fmt17(dev.pbar[i]));
        cols.push(fmt17(dev.qbar[i]));
        cols.push(fmt17(dev.dp[0][i]));
        cols.push(fmt17(dev.dq[0][i]));
        cols.push(fmt17(dev.shift_a[0][i]));
        cols.push(fmt17(dev.shift_b[0][i]));
        for k in 2..=order {
            cols.push(fmt17(dev.dp[k - 1][i]));
            cols.push(fmt17(dev.dq[k - 1][i]));
            cols.push(fmt17(dev.shift_a[k - 1][i]));
            cols.push(fmt17(dev.shift_b[k - 1][i]));
        }
        for k in 1..=order {
            cols.push(fmt17(running[k - 1][i]));
        }
        cols.push(fmt17(err[i]));
        writeln!(w, "{}", cols.join(","))?;
    }
    w.flush()
}

/// Per-window action records for every order (0 = raw orbit about the fixed
/// point), with the measured window center and the predicted shift at the
/// window midpoint.
pub fn write_actions_csv(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    let dev = traj.deviations.as_ref().expect("deviations extracted");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "order,t_start,t_end,value,orientation,closed,center_p,center_q,predicted_a,predicted_b"
    )?;
    for series in &traj.actions {
        let k = series.order;
        for win in &series.windows {
            let (src_p, src_q) = if k == 0 {
                (&dev.dp[0], &dev.dq[0])
            } else {
                (&dev.dp[k - 1], &dev.dq[k - 1])
            };
            let cp = adhier::dynamics::window_mean(traj, src_p, win);
            let cq = adhier::dynamics::window_mean(traj, src_q, win);
            let (pa, pb) = if k == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mid = win.start_index + (win.end_index - win.start_index) / 2;
                (dev.shift_a[k - 1][mid], dev.shift_b[k - 1][mid])
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                k,
                fmt17(win.t_start),
                fmt17(win.t_end),
                fmt17(win.value),
                win.orientation,
                win.closed as u8,
                fmt17(cp),
                fmt17(cq),
                fmt17(pa),
                fmt17(pb)
            )?;
        }
    }
    w.flush()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}
