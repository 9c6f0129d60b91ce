//! `specseg`: batch segmentation, evaluation and baselines over DCFT feature files.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use specseg_core::tensorio::DEFAULT_IGNORE_INDEX;
use specseg_core::{NcutParams, PamrParams, Upsample};

#[derive(Parser)]
#[command(
    name = "specseg",
    version,
    about = "Zero-shot segmentation by recursive normalized cut"
)]
struct Cli {
    /// Worker threads for file-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment feature files into pixel label maps and partition trees.
    Segment(SegmentArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Grid of (tau, alpha) settings scored against ground truth.
    Sweep(SweepArgs),
    /// ROC of patch cosine similarity against same-class pairs.
    Coherence(CoherenceArgs),
    /// Eigen-gap spectral clustering baseline.
    Autosc(AutoscArgs),
    /// k-means baseline on normalized patch features.
    Kmeans(KmeansArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum UpsampleMode {
    Concept,
    Nearest,
}

impl From<UpsampleMode> for Upsample {
    fn from(m: UpsampleMode) -> Self {
        match m {
            UpsampleMode::Concept => Upsample::Concept,
            UpsampleMode::Nearest => Upsample::Nearest,
        }
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

/// How patch labels become pixel labels.
#[derive(Args, Clone)]
struct LiftArgs {
    #[arg(long, value_enum, default_value = "concept")]
    upsample: UpsampleMode,
    /// Refine pixel labels against the source image (default).
    #[arg(long, overrides_with = "no_pamr")]
    pamr: bool,
    #[arg(long = "no-pamr", overrides_with = "pamr")]
    no_pamr: bool,
    #[arg(long, default_value_t = 10)]
    pamr_iters: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 12, 24])]
    dilations: Vec<usize>,
    /// Source image PNG, or a directory of `<stem>.png`.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Output size when neither an image nor a sidecar gives one.
    #[arg(long, value_parser = parse_size, value_name = "HxW")]
    out_size: Option<(usize, usize)>,
    /// Also write a colour rendering of each label map.
    #[arg(long)]
    render: bool,
}

impl LiftArgs {
    fn pamr_params(&self) -> Result<Option<PamrParams>> {
        if self.no_pamr {
            return Ok(None);
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            bail!("dilations must be positive");
        }
        Ok(Some(PamrParams {
            iterations: self.pamr_iters,
            dilations: self.dilations.clone(),
        }))
    }
}

#[derive(Args, Clone)]
struct NcutArgs {
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    alpha: u32,
    /// Thresholds tried along each Fiedler vector.
    #[arg(long, default_value_t = 32)]
    splits: usize,
    #[arg(long, default_value_t = 2)]
    min_size: usize,
    /// Keep negative cosines instead of clamping them to zero.
    #[arg(long)]
    no_clamp: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        bail!("tau must lie in (0, 1), got {tau}");
    }
    Ok(())
}

impl NcutArgs {
    fn params(&self) -> Result<NcutParams> {
        check_tau(self.tau)?;
        let p = NcutParams {
            tau: self.tau,
            alpha: self.alpha,
            splits: self.splits,
            min_size: self.min_size,
            clamp: !self.no_clamp,
            ..NcutParams::default()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct SegmentArgs {
    /// DCFT file or directory of `*.dcft`.
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    ncut: NcutArgs,
    #[command(flatten)]
    lift: LiftArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted label PNG or directory.
    pred: PathBuf,
    /// Ground-truth label PNG or directory.
    gt: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Class that absorbs unmatched segments.
    #[arg(long)]
    background: Option<u16>,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    ignore_index: u16,
}

#[derive(Args)]
struct SweepArgs {
    features: PathBuf,
    gt: PathBuf,
    /// CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.35, 0.55, 0.75])]
    taus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [10u32])]
    alphas: Vec<u32>,
    #[arg(long, default_value_t = 32)]
    splits: usize,
    #[arg(long, default_value_t = 2)]
    min_size: usize,
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    background: Option<u16>,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    ignore_index: u16,
    #[command(flatten)]
    lift: LiftArgs,
}

#[derive(Args)]
struct CoherenceArgs {
    features: PathBuf,
    gt: PathBuf,
    /// ROC CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    ignore_index: u16,
}

#[derive(Args)]
struct AutoscArgs {
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = specseg_core::autosc::DEFAULT_ALPHAS)]
    alphas: Vec<u32>,
    #[arg(long, default_value_t = specseg_core::autosc::DEFAULT_K_MAX)]
    k_max: usize,
    #[command(flatten)]
    lift: LiftArgs,
}

#[derive(Args)]
struct KmeansArgs {
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(
        long,
        required_unless_present = "k_from_gt",
        conflicts_with = "k_from_gt"
    )]
    k: Option<usize>,
    /// Take k from the number of classes in this ground truth (PNG or directory).
    #[arg(long, value_name = "GT")]
    k_from_gt: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IGNORE_INDEX)]
    ignore_index: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    lift: LiftArgs,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("SPECSEG_LOG", "warn");
    env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    match cli.command {
        Command::Segment(a) => commands::segment(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Coherence(a) => commands::coherence(a),
        Command::Autosc(a) => commands::autosc(a),
        Command::Kmeans(a) => commands::kmeans(a),
    }
}

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("64x48"), Ok((64, 48)));
        assert!(parse_size("64").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn pamr_toggle_last_wins() {
        let cli = Cli::parse_from([
            "specseg",
            "segment",
            "f",
            "--out",
            "o",
            "--no-pamr",
            "--pamr",
        ]);
        let Command::Segment(a) = cli.command else {
            panic!()
        };
        assert!(a.lift.pamr_params().unwrap().is_some());
        let cli = Cli::parse_from(["specseg", "segment", "f", "--out", "o", "--no-pamr"]);
        let Command::Segment(a) = cli.command else {
            panic!()
        };
        assert!(a.lift.pamr_params().unwrap().is_none());
    }

    #[test]
    fn tau_outside_unit_interval_is_rejected() {
        let args = NcutArgs {
            tau: 1.0,
            alpha: 10,
            splits: 32,
            min_size: 2,
            no_clamp: false,
        };
        assert!(args.params().is_err());
    }
}
