use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tscf_cli::{commands, CliError, Method, PipelineInput, RunConfig};

#[derive(Parser)]
#[command(name = "dce-tscf", version, about = "Denoising and Tofts fitting for noisy DCE-MRI")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for phantom noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    method: Option<Method>,
    /// Also write every intermediate volume.
    #[arg(long, global = true)]
    keep_intermediates: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the reference phantom.
    DroGen,
    /// Add Rician noise to a magnitude volume.
    NoiseAdd {
        input: PathBuf,
        /// Channel noise std; defaults to the phantom's.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Estimate the channel noise level over a region.
    NoiseEstimate {
        input: PathBuf,
        /// Mask container; defaults to the phantom's blood rows.
        #[arg(long)]
        roi: Option<PathBuf>,
    },
    /// Restore a noisy volume with the selected method.
    Denoise {
        input: PathBuf,
        /// Known noise level; estimated over `--roi` otherwise.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        roi: Option<PathBuf>,
    },
    /// Fit the Tofts model voxel by voxel.
    Fit {
        input: PathBuf,
        #[arg(long)]
        aif: PathBuf,
        /// Mask container; defaults to the phantom's tissue blocks.
        #[arg(long)]
        roi: Option<PathBuf>,
    },
    /// Score fitted maps against ground truth.
    Metrics {
        /// Directory holding `estimate_*` containers.
        estimate: PathBuf,
        /// Directory holding `truth_*` containers.
        truth: PathBuf,
    },
    /// Noise estimation, restoration, fitting and scoring end to end.
    Pipeline {
        /// A `dro-gen` directory; the phantom is synthesized when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Time the collaborative filter over the configured sizes.
    Bench,
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads {
        config.threads = t;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(m) = cli.method {
        config.method = m;
    }
    if cli.keep_intermediates {
        config.keep_intermediates = true;
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    Ok(config)
}

fn print<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = config(cli)?;
    match &cli.command {
        Command::DroGen => commands::cmd_dro_gen(&config),
        Command::NoiseAdd { input, sigma } => {
            commands::cmd_noise_add(&config, input, sigma.unwrap_or(config.dro.sigma_g))
        }
        Command::NoiseEstimate { input, roi } => {
            commands::cmd_noise_estimate(&config, input, roi.as_deref()).map(|s| print(&s))
        }
        Command::Denoise { input, sigma, roi } => {
            commands::cmd_denoise(&config, input, *sigma, roi.as_deref()).map(|d| d.iter().for_each(print))
        }
        Command::Fit { input, aif, roi } => {
            commands::cmd_fit(&config, input, aif, roi.as_deref()).map(|f| print(&f.params.summary(None)))
        }
        Command::Metrics { estimate, truth } => commands::cmd_metrics(&config, estimate, truth).map(|s| print(&s)),
        Command::Pipeline { data } => {
            let input = data.as_deref().map_or(PipelineInput::Generate, PipelineInput::Directory);
            commands::cmd_pipeline(&config, input).map(|r| print(&r))
        }
        Command::Bench => commands::cmd_bench(&config).map(|r| print(&r)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dce-tscf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
