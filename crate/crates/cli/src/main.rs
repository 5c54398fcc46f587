//! `nvem` — simulation and inference for ensemble NV electrometry.
//!
//! Subcommands cover the full pipeline: internal-field statistics
//! (`field-dist`), ODMR synthesis (`spectrum`, `fluorescence`),
//! susceptibility fitting (`fit`), sensitivity budgets (`sensitivity`,
//! `bias-field`), orbital-model estimates (`theory`), and canned
//! end-to-end bundles (`reproduce`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nvem_cli::config::RunConfig;
use nvem_cli::{commands, AppError};

#[derive(Parser)]
#[command(name = "nvem", version, about = "Ensemble NV electrometry toolkit")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the first run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress chatter on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the internal electric-field distribution and calibrate ρ_eff.
    FieldDist {
        /// Total charge density in ppm.
        #[arg(long, default_value_t = 15.0)]
        rho_c_ppm: f64,
        /// Number of Monte Carlo field samples.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Output CSV (E_vcm,E_par_vcm,E_perp_vcm) plus a JSON sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a resonant ODMR spectrum at one optical detuning.
    Spectrum {
        /// Optical detuning in GHz (positive = below the ZPL).
        #[arg(long)]
        detuning_ghz: f64,
        /// Temperature preset: 5K, 40K, 55K, 100K or custom.
        #[arg(long)]
        preset: Option<String>,
        /// Output CSV (mw_offset_mhz,signal).
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative fluorescence and configuration fractions over a detuning scan.
    Fluorescence {
        #[arg(long)]
        detuning_min: f64,
        #[arg(long)]
        detuning_max: f64,
        #[arg(long)]
        detuning_step: f64,
        /// Output CSV (detuning_ghz,rel_fluorescence,f_r,f_or).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit excited-state susceptibilities to splitting observations.
    Fit {
        /// CSV with detuning_ghz,pi_perp_mhz,pi_perp_err_mhz rows.
        #[arg(long, conflicts_with = "spectra")]
        data: Option<PathBuf>,
        /// Raw spectra CSV (detuning_ghz,mw_offset_mhz,signal); peaks and
        /// shot-noise uncertainties are extracted before fitting.
        #[arg(long)]
        spectra: Option<PathBuf>,
        /// Optional CSV grid rho_c_ppm,kappa_ih_mhz for the systematic scan.
        #[arg(long)]
        scan: Option<PathBuf>,
        /// Output JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// DC sensitivity budget at one density or over a sweep.
    Sensitivity {
        /// Single NV density (ppm).
        #[arg(long, conflicts_with = "sweep")]
        rho_nv_ppm: Option<f64>,
        /// Log-spaced sweep "min,max,n" in ppm.
        #[arg(long)]
        sweep: Option<String>,
        /// Intrinsic optical broadening in GHz (10 or 100).
        #[arg(long)]
        kappa0e_ghz: Option<f64>,
        /// Illumination volume in mm³.
        #[arg(long)]
        volume_mm3: Option<f64>,
        /// Output CSV; a JSON summary lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias field required to isolate one NV orientation.
    BiasField {
        #[arg(long, default_value_t = 8.0)]
        rho_nv_ppm: f64,
    },
    /// Orbital-model susceptibility estimates vs. measured values.
    Theory {
        /// Optional TOML file with an [orbitals] section override.
        #[arg(long)]
        orbitals: Option<PathBuf>,
        /// Output JSON table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Canned end-to-end bundles with plot-ready CSVs and JSON summaries.
    Reproduce {
        /// One of: fig2b, fig3, table-sens.
        #[arg(long)]
        which: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nvem: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if config.output_dir.is_none() {
        config.output_dir = Some(cli.out_dir.clone());
    }
    for warning in config.validate()? {
        if !cli.quiet {
            eprintln!("nvem: warning: {warning}");
        }
    }

    let quiet = cli.quiet;
    match cli.command {
        Command::FieldDist {
            rho_c_ppm,
            samples,
            out,
        } => commands::field_dist(&config, rho_c_ppm, samples, &out, quiet),
        Command::Spectrum {
            detuning_ghz,
            preset,
            out,
        } => {
            let chosen = preset.or_else(|| config.preset.clone());
            if let Some(name) = chosen {
                if name != "custom" {
                    config.apply_preset(&name)?;
                    config.preset = Some(name);
                }
            }
            commands::spectrum(&config, detuning_ghz, &out, quiet)
        }
        Command::Fluorescence {
            detuning_min,
            detuning_max,
            detuning_step,
            out,
        } => commands::fluorescence(&config, detuning_min, detuning_max, detuning_step, &out, quiet),
        Command::Fit {
            data,
            spectra,
            scan,
            out,
        } => commands::fit(
            &config,
            data.as_deref(),
            spectra.as_deref(),
            scan.as_deref(),
            &out,
            quiet,
        ),
        Command::Sensitivity {
            rho_nv_ppm,
            sweep,
            kappa0e_ghz,
            volume_mm3,
            out,
        } => {
            if let Some(k) = kappa0e_ghz {
                config.protocol.kappa0_e_mhz = k * 1e3;
            }
            if let Some(v) = volume_mm3 {
                config.protocol.illumination_volume_mm3 = v;
            }
            commands::sensitivity(&config, rho_nv_ppm, sweep.as_deref(), &out, quiet)
        }
        Command::BiasField { rho_nv_ppm } => commands::bias_field(&config, rho_nv_ppm),
        Command::Theory { orbitals, out } => {
            commands::theory(&config, orbitals.as_deref(), out.as_deref())
        }
        Command::Reproduce { which } => commands::reproduce(&config, &which, quiet),
    }
}
