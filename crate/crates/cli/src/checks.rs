//! Built-in pass/fail checks for the shipped presets (`run --check`).

use adhier::models::lz_closed_forms;

use crate::config::{ExperimentConfig, ModelConfig, ProtocolConfig};
use crate::run::RunArtifacts;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Checks keyed to the built-in presets; other configs get an empty list.
pub fn preset_checks(artifacts: &RunArtifacts) -> Vec<CheckOutcome> {
    match artifacts.config.name.as_str() {
        "fig3" => fig3_checks(artifacts),
        "fig4" => fig4_checks(artifacts),
        "fig5" => fig5_checks(artifacts),
        "lz-sweep" => lz_sweep_checks(artifacts),
        _ => Vec::new(),
    }
}

fn spin_scales(cfg: &ExperimentConfig) -> (f64, f64) {
    let l = match cfg.model {
        ModelConfig::Spin { l, .. } => l,
        _ => 1.0,
    };
    let rate = match cfg.protocol {
        ProtocolConfig::Linear { rate, .. } => rate,
        ProtocolConfig::SquareWaveRate { amplitude, .. } => amplitude,
        _ => 0.0,
    };
    (l, rate)
}

fn fig3_checks(a: &RunArtifacts) -> Vec<CheckOutcome> {
    let (l, omega) = spin_scales(&a.config);
    let i1_ref = omega * omega / (4.0 * l * l);
    let s = &a.summary;
    let mut out = Vec::new();
    if let Some(act) = s.actions.iter().find(|x| x.order == 1) {
        out.push(check(
            "I1 mean = rate^2/4L^2 within 2%",
            (act.mean - i1_ref).abs() <= 0.02 * i1_ref,
            format!("mean {:.6e} vs {:.6e}", act.mean, i1_ref),
        ));
        out.push(check(
            "I1 drift below 1%",
            act.drift.abs() <= 0.01,
            format!("drift {:.3e}", act.drift),
        ));
        out.push(check(
            "all I1 windows closed",
            act.closed == act.windows && act.windows > 10,
            format!("{}/{} closed", act.closed, act.windows),
        ));
    }
    let dev = a.primary.deviations.as_ref().unwrap();
    let (lo, hi) = dev.dq[0]
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let bound = omega / l;
    out.push(check(
        "dq oscillates inside [0, rate/L]",
        lo >= -0.02 * bound && hi <= 1.02 * bound && hi >= 0.9 * bound,
        format!("range [{lo:.3e}, {hi:.3e}] vs [0, {bound:.3e}]"),
    ));
    out.push(check(
        "mean infidelity within 4x of rate^2/4L^2",
        s.err_mean <= 4.0 * i1_ref && s.err_mean >= i1_ref / 4.0,
        format!("err_mean {:.3e} vs plateau {:.3e}", s.err_mean, i1_ref),
    ));
    if let Some(d) = s.oracle_max_chart_distance {
        out.push(check(
            "oracle agreement within 1e-8",
            d <= 1e-8,
            format!("max chart distance {d:.3e}"),
        ));
    }
    out
}

fn fig4_checks(a: &RunArtifacts) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let dev = a.primary.deviations.as_ref().unwrap();
    let worst_i1 = a
        .primary
        .actions
        .iter()
        .filter(|s| s.order == 1)
        .flat_map(|s| s.windows.iter())
        .map(|w| w.value)
        .fold(0.0f64, f64::max);
    out.push(check(
        "I1 below 1e-13 throughout",
        worst_i1 < 1e-13,
        format!("max window I1 = {worst_i1:.3e}"),
    ));
    // After the initial transient, dq tracks B1 = a t / 2L within 2%.
    let t_end = a.config.t_span().1;
    let mut worst_rel: f64 = 0.0;
    for i in 0..a.primary.len() {
        if a.primary.times[i] < 0.2 * t_end {
            continue;
        }
        let b1 = dev.shift_b[0][i];
        if b1.abs() > 0.0 {
            worst_rel = worst_rel.max((dev.dq[0][i] - b1).abs() / b1.abs());
        }
    }
    out.push(check(
        "dq tracks B1 = accel*t/2L within 2% after the transient",
        worst_rel <= 0.02,
        format!("worst relative deviation {worst_rel:.3e}"),
    ));
    out
}

fn fig5_checks(a: &RunArtifacts) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    match &a.summary.breakdown {
        Some(b) => {
            out.push(check(
                "I0 no longer conserved (variation > 10%)",
                b.i0_variation > 0.1,
                format!("variation {:.3e}", b.i0_variation),
            ));
            out.push(check(
                "max |dq| exceeds 100x the steady-rate bound",
                b.max_abs_dq > 100.0 * b.reference_bound,
                format!(
                    "max |dq| {:.3e} vs bound {:.3e}",
                    b.max_abs_dq, b.reference_bound
                ),
            ));
        }
        None => out.push(check(
            "breakdown assessment present",
            false,
            "missing".into(),
        )),
    }
    out
}

fn lz_sweep_checks(a: &RunArtifacts) -> Vec<CheckOutcome> {
    let (x, v) = match (&a.config.model, &a.config.protocol) {
        (ModelConfig::Lz { x, .. }, ProtocolConfig::LzSweep { v, .. }) => (*x, *v),
        _ => (1.0, 1e-3),
    };
    let mut out = Vec::new();
    let traj = &a.primary;
    let dev = traj.deviations.as_ref().unwrap();
    let protocol = a.config.protocol();
    // In-run shift predictions against the closed forms, up to the sign flip
    // of the swapped chart. The tolerance reflects the per-segment grid
    // interpolation, not the shift map itself.
    let mut worst_a1: f64 = 0.0;
    let mut worst_b2: f64 = 0.0;
    let n = traj.len();
    for j in 0..64 {
        let i = j * (n - 1) / 63;
        let z = protocol.r(traj.times[i]);
        let forms = lz_closed_forms(x, z, v);
        let sign = if traj.pivot[i] == 0 { 1.0 } else { -1.0 };
        worst_a1 = worst_a1.max((dev.shift_a[0][i] - sign * forms.shift1.0).abs());
        if dev.order >= 2 {
            worst_b2 = worst_b2.max((dev.shift_b[1][i] - sign * forms.shift2.1).abs());
        }
    }
    let a1_scale = v / (x * x);
    out.push(check(
        "A1 prediction matches V/(x^2+z^2) along the sweep",
        worst_a1 <= 1e-3 * a1_scale,
        format!("worst |error| {worst_a1:.3e} vs scale {a1_scale:.3e}"),
    ));
    if dev.order >= 2 {
        let b2_peak = lz_closed_forms(x, x / 6.0f64.sqrt(), v).shift2.1;
        out.push(check(
            "B2 prediction matches the closed form along the sweep",
            worst_b2 <= 1e-2 * b2_peak,
            format!("worst |error| {worst_b2:.3e} vs peak {b2_peak:.3e}"),
        ));
    }
    if let Some(d) = a.summary.oracle_max_chart_distance {
        out.push(check(
            "oracle agreement within 1e-6 over the sweep",
            d <= 1e-6,
            format!("max chart distance {d:.3e}"),
        ));
    }
    out
}
