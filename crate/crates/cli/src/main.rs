use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adhier_cli::checks::preset_checks;
use adhier_cli::config::{ConfigError, SweepAxis};
use adhier_cli::run::{run_experiment, CliError};
use adhier_cli::{compare_hierarchy, presets, run_sweep};

/// Adiabatic deviation hierarchy experiments: integrate driven two-level
/// models, extract per-order residuals and actions, and emit CSV/JSON.
#[derive(Parser)]
#[command(name = "adhier", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a preset name or a TOML manifest path.
    Run {
        config: String,
        /// Output directory (default: $ADHIER_OUT_DIR or ./out).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the hierarchy order K.
        #[arg(long)]
        order: Option<usize>,
        /// Override the relative integration tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Run the preset's built-in checks and exit 4 on failure.
        #[arg(long)]
        check: bool,
    },
    /// Run the experiment once per value of a numeric parameter.
    Sweep {
        config: String,
        /// Parameter path, e.g. protocol.rate or model.l.
        #[arg(long)]
        axis: String,
        /// Comma-separated numeric values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Concurrent runs (default: one per value, capped by the CPU count).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare measured residual centers against the hierarchy predictions.
    Compare {
        config: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Inspect the built-in experiment manifests.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
}

#[derive(Subcommand)]
enum PresetsAction {
    /// List preset names.
    List,
    /// Print a preset manifest.
    Show { name: String },
}

fn out_dir_or_default(dir: Option<PathBuf>) -> PathBuf {
    dir.unwrap_or_else(|| {
        std::env::var_os("ADHIER_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
    })
}

fn load_config(
    arg: &str,
    order: Option<usize>,
    tol: Option<f64>,
) -> Result<adhier_cli::ExperimentConfig, CliError> {
    let mut cfg = presets::resolve(arg)?;
    if let Some(k) = order {
        cfg.hierarchy.order = k;
    }
    if let Some(t) = tol {
        cfg.integration.rel_tol = t;
        cfg.integration.abs_tol = cfg.integration.abs_tol.min(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out_dir,
            order,
            tol,
            check,
        } => {
            let cfg = load_config(&config, order, tol)?;
            let out = out_dir_or_default(out_dir);
            let artifacts = run_experiment(&cfg, &out)?;
            let s = &artifacts.summary;
            println!(
                "{}: {} samples ({} emitted), pivot switches {}, err_mean {:.3e}, wall {:.2}s",
                s.name,
                s.samples_total,
                s.samples_emitted,
                s.pivot_switches,
                s.err_mean,
                s.wall_time_s
            );
            if let Some(d) = s.oracle_max_chart_distance {
                println!("  oracle max chart distance: {d:.3e}");
            }
            for a in &s.actions {
                println!(
                    "  I{}: mean {:.6e}, drift {:.3e} over {} windows ({} closed)",
                    a.order, a.mean, a.drift, a.windows, a.closed
                );
            }
            println!("  outputs in {}", out.display());
            if check {
                let outcomes = preset_checks(&artifacts);
                if outcomes.is_empty() {
                    println!("  no built-in checks for '{}'", s.name);
                }
                let mut failed = 0;
                for c in &outcomes {
                    println!(
                        "  check {}: {} ({})",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                    if !c.passed {
                        failed += 1;
                    }
                }
                if failed > 0 {
                    return Err(CliError::ChecksFailed {
                        failed,
                        total: outcomes.len(),
                    });
                }
            }
            Ok(())
        }
        Command::Sweep {
            config,
            axis,
            values,
            out_dir,
            workers,
            order,
            tol,
        } => {
            let cfg = load_config(&config, order, tol)?;
            let axis = SweepAxis::parse(&axis)?;
            let out = out_dir_or_default(out_dir);
            let workers = workers.unwrap_or_else(|| values.len().max(1).min(num_cpus()));
            let entries = run_sweep(&cfg, axis, &values, &out, workers)?;
            for e in &entries {
                match (&e.summary, &e.error) {
                    (Some(s), _) => println!(
                        "{} = {:.6e}: err_mean {:.3e} ({})",
                        axis.label(),
                        e.value,
                        s.err_mean,
                        e.dir
                    ),
                    (None, Some(err)) => {
                        println!("{} = {:.6e}: FAILED: {err}", axis.label(), e.value)
                    }
                    _ => {}
                }
            }
            println!("merged results in {}", out.join("sweep.csv").display());
            Ok(())
        }
        Command::Compare {
            config,
            out_dir,
            order,
            tol,
        } => {
            let cfg = load_config(&config, order, tol)?;
            let out = out_dir_or_default(out_dir);
            let (report, _) = compare_hierarchy(&cfg, &out)?;
            for o in &report.per_order {
                match o.agreement {
                    Some(a) => println!(
                        "order {}: {} windows, mean relative center error {:.3e}, max abs {:.3e}",
                        o.order, o.windows, a, o.max_abs_error
                    ),
                    None => println!(
                        "order {}: {} windows, prediction below resolution (max abs error {:.3e})",
                        o.order, o.windows, o.max_abs_error
                    ),
                }
            }
            Ok(())
        }
        Command::Presets { action } => {
            match action {
                PresetsAction::List => {
                    for name in presets::names() {
                        println!("{name}");
                    }
                }
                PresetsAction::Show { name } => match presets::source(&name) {
                    Some(text) => print!("{text}"),
                    None => return Err(CliError::Config(ConfigError::UnknownPreset(name))),
                },
            }
            Ok(())
        }
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
