use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};

use polarimeter_core::countfile::CountFile;
use polarimeter_core::engine::{source_density, SourceState};
use polarimeter_core::measurement::{
    canonical_settings, expected_records, perturb_projectors, simulate_counts_with,
};
use polarimeter_core::rng::{seeded_rng, split_seed, streams};
use polarimeter_core::{DensityMatrix, NoiseModel, PureState2Q};

use crate::{emit, Ctx, Format};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Named true state (HH, HV, VH, VV, phi+, phi-, psi+, psi-).
    #[arg(long, conflicts_with = "theta")]
    state: Option<String>,
    /// Source pump angle θ in radians: cos 2θ|HH⟩ + sin 2θ|VV⟩, with the
    /// config's source depolarization. Default: the config's `[source]`.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Schedule: 9 or 36 settings.
    #[arg(long, default_value_t = 9)]
    settings: usize,
    /// Total detected pairs, split evenly over the settings. Default: one
    /// dwell of `timing.tau_m` per setting.
    #[arg(long)]
    pairs: Option<f64>,
    /// Coincidence-to-accidental ratio (`inf` for none); overrides `noise.car`.
    #[arg(long)]
    car: Option<f64>,
    /// Write the rounded expected counts with no noise of any kind.
    #[arg(long)]
    noiseless: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<()> {
    let rho = match (&args.state, args.theta) {
        (Some(name), _) => DensityMatrix::from_pure(
            &PureState2Q::named(name).ok_or_else(|| anyhow!("unknown state {name:?}"))?,
        ),
        (None, Some(theta)) => {
            let source = SourceState {
                theta,
                ..ctx.config.source
            };
            source.validate().map_err(|e| anyhow!("source: {e}"))?;
            source_density(&source)
        }
        (None, None) => source_density(&ctx.config.source),
    };

    let mut noise = ctx.config.noise;
    if let Some(car) = args.car {
        noise.car = car;
    }
    if args.noiseless {
        noise = NoiseModel::ideal(noise.pair_rate, noise.eta);
    }
    noise.validate()?;

    let timing = &ctx.config.timing;
    let dwell = match args.pairs {
        Some(n) if n.is_finite() && n > 0.0 => {
            if noise.detected_pair_rate() <= 0.0 {
                bail!("noise.pair_rate is 0: no pairs are detected");
            }
            n / (args.settings as f64 * noise.detected_pair_rate())
        }
        Some(n) => bail!("--pairs must be finite and > 0, got {n}"),
        None => timing.tau_m,
    };
    let settings: Vec<_> = canonical_settings(args.settings)?
        .into_iter()
        .map(|s| s.with_dwell(dwell))
        .collect();

    let mut records = if args.noiseless {
        expected_records(&rho, &settings, &noise)
    } else {
        let actual = perturb_projectors(&settings, noise.systematic_angle, ctx.seed);
        let mut rng = seeded_rng(split_seed(ctx.seed, streams::COUNTS));
        actual
            .iter()
            .map(|s| simulate_counts_with(&mut rng, &rho, s, &noise, 0.0))
            .collect()
    };
    // each record is stamped with the end of its dwell
    for (k, r) in records.iter_mut().enumerate() {
        r.timestamp = k as f64 * (dwell + timing.tau_s) + dwell;
    }

    let file = CountFile {
        settings_m: args.settings,
        seed: (!args.noiseless).then_some(ctx.seed),
        records,
    };
    let text = match ctx.format.unwrap_or(Format::Csv) {
        Format::Csv => file.to_text(),
        Format::Json => {
            serde_json::to_string_pretty(&serde_json::json!({
                "settings": file.settings_m,
                "seed": file.seed,
                "records": file.records,
            }))? + "\n"
        }
    };
    emit(args.out.as_deref(), &text)
}
