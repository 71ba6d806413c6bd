use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use polarimeter_core::countfile::CountFile;
use polarimeter_core::measurement::build_measurement_matrix;
use polarimeter_core::quantum::{BASIS_LABELS, StokesVector2Q};
use polarimeter_core::reconstruction::{check_rank, reconstruct, ReconFlag};
use polarimeter_core::{DensityMatrix, Method, PureState2Q};

use crate::{chart, emit, read, Ctx, Format};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Counts file (`# polarimeter-counts v1`).
    counts: PathBuf,
    /// Estimator (default: the config's `reconstruction.method`).
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Named state to report fidelity against (HH, HV, VH, VV, phi+, phi-, psi+, psi-).
    #[arg(long)]
    target: Option<String>,
    /// Report file; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Bar chart of Re ρ and Im ρ as SVG.
    #[arg(long, value_name = "SVG")]
    chart: Option<PathBuf>,
    /// Do not print the text chart on stderr.
    #[arg(long)]
    quiet: bool,
}

pub fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// The JSON report. Timing is left out so that identical inputs give
/// identical files; the solve time goes to stderr.
#[derive(Debug, Serialize)]
struct Report {
    method: Method,
    settings: usize,
    records: usize,
    /// Row-major `(re, im)` pairs in `{HH, HV, VH, VV}` order.
    rho: Vec<f64>,
    stokes: Vec<f64>,
    raw_stokes: Vec<f64>,
    eigenvalues: [f64; 4],
    purity: f64,
    concurrence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fidelity: Option<f64>,
    truncated_mass: f64,
    residual: f64,
    iterations: usize,
    flags: Vec<ReconFlag>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let text = read(&args.counts)?;
    let file = CountFile::parse(&text).map_err(|e| anyhow!("{}: {e}", args.counts.display()))?;
    let method = args.method.unwrap_or(ctx.config.reconstruction.method);
    let target = match &args.target {
        Some(name) => Some((
            name.clone(),
            DensityMatrix::from_pure(
                &PureState2Q::named(name).ok_or_else(|| anyhow!("unknown target state {name:?}"))?,
            ),
        )),
        None => None,
    };

    let matrix = build_measurement_matrix(&file.settings())?;
    check_rank(&matrix, &file.records).with_context(|| format!("{}", args.counts.display()))?;
    let recon = &ctx.config.reconstruction;
    let report = reconstruct(method, &matrix, &file.records, &recon.lls(), &recon.ml())
        .with_context(|| format!("{}", args.counts.display()))?;
    log::info!("{method} solve time {:.3} ms", report.solve_time * 1e3);
    if report.flags.contains(&ReconFlag::NotConverged) {
        eprintln!("warning: likelihood maximization did not converge");
    }

    let rho = &report.rho;
    let out = Report {
        method,
        settings: file.settings_m,
        records: file.records.len(),
        rho: rho.to_flat(),
        stokes: rho.stokes().as_slice().to_vec(),
        raw_stokes: report.raw_stokes.as_slice().to_vec(),
        eigenvalues: rho.eigenvalues(),
        purity: rho.purity(),
        concurrence: rho.concurrence(),
        fidelity: target.as_ref().map(|(_, t)| rho.fidelity(t)),
        target: target.map(|(n, _)| n),
        truncated_mass: report.truncated_mass,
        residual: report.residual,
        iterations: report.iterations,
        flags: report.flags.clone(),
    };
    let text = match ctx.format.unwrap_or(Format::Json) {
        Format::Json => serde_json::to_string_pretty(&out)? + "\n",
        Format::Csv => csv(&out),
    };
    emit(args.out.as_deref(), &text)?;

    if let Some(path) = &args.chart {
        let title = format!("{} reconstruction of {}", method, args.counts.display());
        std::fs::write(path, chart::density_svg(rho, &title))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if !args.quiet {
        eprint!("{}", chart::density_ascii(rho));
    }
    if !rho.purity().is_finite() {
        bail!("reconstruction produced a non-finite state");
    }
    Ok(())
}

/// Scalars as `#` comment lines, then one row per matrix entry and one per
/// Stokes parameter.
fn csv(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# method: {}", r.method);
    let _ = writeln!(s, "# purity: {}", r.purity);
    let _ = writeln!(s, "# concurrence: {}", r.concurrence);
    if let (Some(t), Some(f)) = (&r.target, r.fidelity) {
        let _ = writeln!(s, "# fidelity to {t}: {f}");
    }
    let _ = writeln!(s, "# truncated_mass: {}", r.truncated_mass);
    s.push_str("kind,row,col,re,im\n");
    for i in 0..4 {
        for j in 0..4 {
            let k = 2 * (4 * i + j);
            let _ = writeln!(
                s,
                "rho,{},{},{},{}",
                BASIS_LABELS[i], BASIS_LABELS[j], r.rho[k], r.rho[k + 1]
            );
        }
    }
    for (k, v) in r.stokes.iter().enumerate() {
        let _ = writeln!(s, "stokes,{},,{v},", StokesVector2Q::label(k));
    }
    s
}
