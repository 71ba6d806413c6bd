use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, ValueEnum};
use serde_json::json;

use polarimeter_core::lab::{
    curve_to_csv, precision_curve_with, precision_vs_time, time_curves_to_csv, LabError,
    PrecisionPoint, TimeCurve, TimingProfile, CURVE_CSV_HEADER, TIME_CSV_HEADER,
};
use polarimeter_core::{DensityMatrix, Method, PureState2Q};

use crate::chart::{self, Series};
use crate::{emit, Cli, Ctx, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Study {
    /// Precision against ensemble size N.
    N,
    /// Precision against total time T for each timing profile.
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Estimators {
    Lls,
    Ml,
    Both,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum, default_value_t = Study::N)]
    mode: Study,
    /// Named ideal state (default: `montecarlo.state`).
    #[arg(long)]
    state: Option<String>,
    /// Comma-separated ensemble sizes (default: `montecarlo.n_values`).
    #[arg(long = "n", value_name = "LIST")]
    n_values: Option<String>,
    /// Comma-separated total times in seconds (default: `montecarlo.t_values`).
    #[arg(long = "t", value_name = "LIST")]
    t_values: Option<String>,
    /// Comma-separated profile names: polarimeter, freespace, config.
    #[arg(long, value_name = "LIST")]
    profiles: Option<String>,
    /// Trials per point (default: `montecarlo.trials`).
    #[arg(long)]
    trials: Option<usize>,
    /// Default: the config's `reconstruction.method`.
    #[arg(long, value_enum)]
    estimator: Option<Estimators>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Fidelity plot as SVG.
    #[arg(long, value_name = "SVG")]
    plot: Option<PathBuf>,
    /// Do not print the text chart on stderr.
    #[arg(long)]
    quiet: bool,
}

fn usage(message: String) -> ! {
    Cli::command()
        .error(ErrorKind::InvalidValue, message)
        .exit()
}

fn parse_list(flag: &str, text: &str) -> Vec<f64> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        usage(format!("{flag} needs at least one value"));
    }
    items
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .unwrap_or_else(|_| usage(format!("{flag}: {s:?} is not a number")))
        })
        .collect()
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let mc = &ctx.config.montecarlo;
    let state_name = args.state.clone().unwrap_or_else(|| mc.state.clone());
    let rho = DensityMatrix::from_pure(
        &PureState2Q::named(&state_name).ok_or_else(|| anyhow!("unknown state {state_name:?}"))?,
    );
    let trials = args.trials.unwrap_or(mc.trials);
    if trials == 0 {
        usage("--trials must be at least 1".into());
    }
    let methods = match args
        .estimator
        .unwrap_or(match ctx.config.reconstruction.method {
            Method::Lls => Estimators::Lls,
            Method::Ml => Estimators::Ml,
        }) {
        Estimators::Lls => vec![Method::Lls],
        Estimators::Ml => vec![Method::Ml],
        Estimators::Both => vec![Method::Lls, Method::Ml],
    };
    let options = ctx.config.study_options();
    let noise = ctx.config.noise;
    let format = ctx.format.unwrap_or(Format::Json);

    let (text, series, x_label, log_x): (String, Vec<Series>, _, _) = match args.mode {
        Study::N => {
            let n_values = match &args.n_values {
                Some(t) => parse_list("--n", t),
                None if mc.n_values.is_empty() => usage("montecarlo.n_values is empty".into()),
                None => mc.n_values.clone(),
            };
            let curves: Vec<(Method, Vec<PrecisionPoint>)> = methods
                .iter()
                .map(|&m| {
                    precision_curve_with(&rho, &n_values, trials, m, &noise, ctx.seed, &options)
                        .map(|c| (m, c))
                })
                .collect::<Result<_, _>>()?;
            let text = match format {
                Format::Json => {
                    let curves: Vec<_> = curves
                        .iter()
                        .map(|(m, points)| json!({"estimator": m, "points": points}))
                        .collect();
                    serde_json::to_string_pretty(&json!({
                        "study": "n",
                        "state": state_name,
                        "trials": trials,
                        "settings": options.settings,
                        "seed": ctx.seed,
                        "noise": noise,
                        "curves": curves,
                    }))? + "\n"
                }
                Format::Csv => {
                    let mut s = format!("{CURVE_CSV_HEADER}\n");
                    for (_, points) in &curves {
                        s.extend(curve_to_csv(points).lines().skip(1).map(|l| format!("{l}\n")));
                    }
                    s
                }
            };
            let series = curves
                .iter()
                .map(|(m, points)| Series {
                    label: m.to_string(),
                    points: points.iter().map(|p| (p.n, p.mean_fidelity, p.std_error())).collect(),
                })
                .collect();
            (text, series, "N (detected pairs)", true)
        }
        Study::Time => {
            let t_values = match &args.t_values {
                Some(t) => parse_list("--t", t),
                None if mc.t_values.is_empty() => usage("montecarlo.t_values is empty".into()),
                None => mc.t_values.clone(),
            };
            let names: Vec<String> = match &args.profiles {
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                None => mc.profiles.clone(),
            };
            if names.is_empty() {
                usage("--profiles needs at least one profile".into());
            }
            let profiles: Vec<TimingProfile> = names
                .iter()
                .map(|n| {
                    ctx.config.profile(n).ok_or_else(|| {
                        anyhow!("unknown profile {n:?}; expected polarimeter, freespace or config")
                    })
                })
                .collect::<Result<_>>()?;
            let curves: Vec<(Method, Vec<TimeCurve>)> = methods
                .iter()
                .map(|&m| {
                    precision_vs_time(&rho, &profiles, &t_values, trials, m, &noise, ctx.seed, &options)
                        .map(|c| (m, c))
                })
                .collect::<Result<_, _>>()?;
            check_feasible(&curves[0].1)?;
            let text = match format {
                Format::Json => {
                    let curves: Vec<_> = curves
                        .iter()
                        .map(|(m, c)| json!({"estimator": m, "profiles": c}))
                        .collect();
                    serde_json::to_string_pretty(&json!({
                        "study": "time",
                        "state": state_name,
                        "trials": trials,
                        "seed": ctx.seed,
                        "noise": noise,
                        "curves": curves,
                    }))? + "\n"
                }
                Format::Csv => {
                    let mut s = format!("{TIME_CSV_HEADER}\n");
                    for (_, c) in &curves {
                        s.extend(time_curves_to_csv(c).lines().skip(1).map(|l| format!("{l}\n")));
                    }
                    s
                }
            };
            let series = curves
                .iter()
                .flat_map(|(m, c)| {
                    c.iter().map(move |curve| Series {
                        label: format!("{} {m}", curve.profile.name),
                        points: curve
                            .points
                            .iter()
                            .filter_map(|tp| {
                                tp.point
                                    .as_ref()
                                    .map(|p| (tp.t, p.mean_fidelity, p.std_error()))
                            })
                            .collect(),
                    })
                })
                .collect();
            (text, series, "T (s)", false)
        }
    };

    emit(args.out.as_deref(), &text)?;
    if let Some(path) = &args.plot {
        let title = format!("{state_name}, {trials} trials per point");
        std::fs::write(path, chart::curves_svg(&series, x_label, log_x, &title))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if !args.quiet {
        let x_name = if args.mode == Study::N { "N" } else { "T" };
        eprint!("{}", chart::curves_ascii(&series, x_name));
    }
    Ok(())
}

/// Warns about each infeasible time and fails when a profile has none left.
fn check_feasible(curves: &[TimeCurve]) -> Result<()> {
    for curve in curves {
        let overhead = curve.profile.overhead();
        let mut any = false;
        for tp in &curve.points {
            if tp.point.is_some() {
                any = true;
            } else {
                eprintln!(
                    "warning: {}: {}",
                    curve.profile.name,
                    LabError::Infeasible { t: tp.t, overhead }
                );
            }
        }
        if !any {
            bail!(
                "profile {}: every requested T is infeasible (overhead {overhead} s)",
                curve.profile.name
            );
        }
    }
    Ok(())
}
