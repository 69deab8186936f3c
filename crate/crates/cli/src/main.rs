//! `sbde`: run the defect editing pipeline stages from the command line.

mod backends;
mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use tracing::{error, Level};

use crate::config::resolve_config;
use crate::error::CliError;
use crate::run::RunContext;

#[derive(Parser, Debug)]
#[command(name = "sbde", version, about = "Segmentation-driven fastener defect editing")]
struct Cli {
    /// JSON run configuration (falls back to $SBDE_CONFIG).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `output_root`.
    #[arg(long, global = true, value_name = "DIR")]
    out_root: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `parallel`.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Segment an attribute on every manifest image and write the masks.
    Segment(SegmentArgs),
    /// Optimize a binary mask (open, then dilate).
    Mod(ModArgs),
    /// Remove an attribute from every crop of a generation manifest.
    Edit(EditArgs),
    /// Edit eligible instances in full scenes and write the augmented manifest.
    Era(EraArgs),
    /// Score predicted masks against ground truth.
    EvalSeg(EvalSegArgs),
    /// PSNR and SSIM between edited images and their sources.
    EvalEdit(EvalEditArgs),
    /// Attribute editing accuracy of edited images under a classifier.
    Aea(AeaArgs),
    /// Human preference scores from ranking ballots.
    Hps(HpsArgs),
    /// High-frequency component of an image as 16-bit PNG plus sidecar.
    Hpf(HpfArgs),
    /// Reassign train/test splits.
    Split(SplitArgs),
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// pin | nut
    #[arg(long)]
    pub attr: String,
    /// oracle | threshold | http:<url>
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Args, Debug)]
pub struct ModArgs {
    #[arg(long = "in", value_name = "PNG")]
    pub input: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// Opening element, e.g. `2x2`, `3x3@1,1` or `010/111/010`.
    #[arg(long)]
    pub se_open: Option<String>,
    #[arg(long)]
    pub se_dilate: Option<String>,
    #[arg(long)]
    pub passes: Option<u32>,
}

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// pin | nut
    #[arg(long)]
    pub attr: String,
    /// harmonic | identity | http:<url>
    #[arg(long)]
    pub backend: Option<String>,
    /// Segmenter for entries without stored masks.
    #[arg(long)]
    pub backend_seg: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Control {
    Copy,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    All,
    One,
}

#[derive(Args, Debug)]
pub struct EraArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// all_pin | all_nut | round_robin | ratio:<p>
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub backend_seg: Option<String>,
    #[arg(long)]
    pub backend_inpaint: Option<String>,
    /// Also build the copy-augmented control set.
    #[arg(long, value_enum, default_value = "none")]
    pub control: Control,
    #[arg(long, value_enum)]
    pub grouping: Option<GroupingArg>,
    #[arg(long)]
    pub min_side: Option<u32>,
}

#[derive(Args, Debug)]
pub struct EvalSegArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth masks with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalEditArgs {
    /// Manifest whose entries carry a `source` image.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct AeaArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// pin | nut; the target is the matching defect class.
    #[arg(long)]
    pub attr: String,
    /// heuristic | http:<url>
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Args, Debug)]
pub struct HpsArgs {
    /// Line-JSON ballots `{expert, image, scores: {config: rank}}`.
    #[arg(long)]
    pub ballots: PathBuf,
}

#[derive(Args, Debug)]
pub struct HpfArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    pub input: PathBuf,
    /// Output PNG; the sidecar goes next to it with a `.json` extension.
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    /// `N` or `XxY` tiles.
    #[arg(long)]
    pub tiles: Option<String>,
    /// Clip limit, or `inf`.
    #[arg(long)]
    pub clip: Option<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub test_count: usize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Segment(_) => "segment",
            Command::Mod(_) => "mod",
            Command::Edit(_) => "edit",
            Command::Era(_) => "era",
            Command::EvalSeg(_) => "eval-seg",
            Command::EvalEdit(_) => "eval-edit",
            Command::Aea(_) => "aea",
            Command::Hps(_) => "hps",
            Command::Hpf(_) => "hpf",
            Command::Split(_) => "split",
        }
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { Level::WARN } else { Level::INFO };
    let _ = tracing_subscriber::fmt()
        .json()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_current_span(false)
        .try_init();
}

fn run(cli: Cli, argv: Vec<String>) -> Result<u8, CliError> {
    let mut cfg = resolve_config(cli.config.as_deref())?;
    if let Some(root) = cli.out_root {
        cfg.output_root = root;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.parallel {
        cfg.parallel = p;
    }
    cfg.validate()?;
    let mut ctx = RunContext::new(cfg, cli.command.name(), argv)?;
    let failures = match &cli.command {
        Command::Segment(a) => commands::segment(&mut ctx, a),
        Command::Mod(a) => commands::mod_mask(&mut ctx, a),
        Command::Edit(a) => commands::edit(&mut ctx, a),
        Command::Era(a) => commands::era(&mut ctx, a),
        Command::EvalSeg(a) => commands::eval_seg(&mut ctx, a),
        Command::EvalEdit(a) => commands::eval_edit(&mut ctx, a),
        Command::Aea(a) => commands::aea(&mut ctx, a),
        Command::Hps(a) => commands::hps(&mut ctx, a),
        Command::Hpf(a) => commands::hpf(&mut ctx, a),
        Command::Split(a) => commands::split(&mut ctx, a),
    };
    let (failures, code) = match failures {
        Ok(0) => (0, 0),
        Ok(n) => (n, 1),
        Err(e) => {
            let _ = ctx.finish(0, e.exit_code());
            return Err(e);
        }
    };
    ctx.finish(failures, code)?;
    Ok(code)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            eprintln!("{}", Cli::command().render_help());
            return ExitCode::from(2);
        }
    };
    init_logging(cli.quiet);
    match run(cli, argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!(code = e.exit_code(), "{e}");
            eprintln!("sbde: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("{}", Cli::command().render_help());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
