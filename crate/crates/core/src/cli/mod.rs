//! Command-line front end. Subcommands communicate only through files
//! under one output directory; see [`layout`].

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub use commands::layout;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "oadino", version, about = "Object-aware patch retrieval pipeline")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "OADINO_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Io {
    /// Output directory; every artifact is written below it.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    /// Corpus manifest [default: <out>/manifest.jsonl].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl Io {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join(layout::MANIFEST))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Global feature followed by the patch latent, one vector per foreground patch.
    Joint,
    /// The global feature of the masked image alone.
    Global,
    /// Patch latents alone.
    Latent,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::Global => "global",
            Mode::Latent => "latent",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus with embeddings and ground-truth masks.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of images.
        #[arg(long, default_value_t = 600)]
        n: usize,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Training images [default: n/3].
        #[arg(long)]
        train: Option<usize>,
        /// Query images [default: n/6]; the rest are candidates.
        #[arg(long)]
        queries: Option<usize>,
        /// Patch grid as HxW.
        #[arg(long, default_value = "8x8")]
        grid: String,
        /// Patch cell side in pixels.
        #[arg(long, default_value_t = 16)]
        patch_px: usize,
        /// Objects per image as MIN-MAX.
        #[arg(long, default_value = "3-10")]
        objects: String,
        /// Embedding dimension.
        #[arg(long, default_value_t = 48)]
        n_y: usize,
        /// Background marker weight.
        #[arg(long, default_value_t = 4.0)]
        marker: f64,
        /// Embedding noise standard deviation.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Colour salience in the embeddings.
        #[arg(long, default_value_t = 0.01)]
        colour_weight: f64,
        /// JSON generator config; overrides the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Add externally exported images, embeddings and globals to a manifest.
    Import {
        #[command(flatten)]
        io: Io,
        /// Directory of PPM images named <id>.ppm.
        #[arg(long)]
        images: PathBuf,
        /// Directory of OADF patch embeddings named <id>.oadf.
        #[arg(long)]
        embeddings: PathBuf,
        /// Directory of OADF global features (of the masked images) named <id>.oadf.
        #[arg(long)]
        globals: Option<PathBuf>,
        /// Scene annotations (JSON lines).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Split assigned to every imported image.
        #[arg(long, value_parser = parse_split)]
        split: crate::corpus::Split,
    },
    /// Two-pass PCA foreground segmentation of the patch embeddings.
    Segment {
        #[command(flatten)]
        io: Io,
        /// Images per PCA batch.
        #[arg(long, default_value_t = crate::segment::DEFAULT_BATCH)]
        t: usize,
        /// Keep first-pass masks only.
        #[arg(long)]
        no_refine: bool,
    },
    /// Crop foreground cells and resize them to 64x64 object patches.
    ExtractPatches {
        #[command(flatten)]
        io: Io,
    },
    /// Write background-masked images for external global-feature export.
    MaskApply {
        #[command(flatten)]
        io: Io,
    },
    /// Train the VAE on object patches of the training split.
    TrainVae {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = crate::vae::DEFAULT_BETA)]
        beta: f64,
        /// Latent size.
        #[arg(long, default_value_t = crate::vae::DEFAULT_LATENT)]
        latent: usize,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use at most this many patches (0 = all), taken in manifest order.
        #[arg(long, default_value_t = 0)]
        max_patches: usize,
    },
    /// Build per-image representations for the query and candidate splits.
    Embed {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        /// VAE checkpoint [default: <out>/vae/model.oavm].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank the candidate split for each query.
    Retrieve {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        /// Query ids (repeatable) [default: every query].
        #[arg(long = "query")]
        queries: Vec<String>,
        /// Keep only the top N entries (0 = all).
        #[arg(long, default_value_t = 0)]
        top: usize,
    },
    /// Run the multi-trial attribute retrieval protocol.
    Evaluate {
        #[command(flatten)]
        io: Io,
        #[arg(long, value_enum, default_value_t = Mode::Joint)]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        trials: usize,
        /// Queries per trial.
        #[arg(long, default_value_t = 50)]
        queries: usize,
        /// Candidate pool size.
        #[arg(long, default_value_t = 5000)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Subset families, e.g. S,C,P2(SDM),P3(SDM)+C [default: all for the schema].
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
        /// Contact sheets rendered for the first trial's queries.
        #[arg(long, default_value_t = 5)]
        sheets: usize,
    },
    /// Compare the metrics of every evaluated mode.
    Report {
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<crate::corpus::Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    if cli.threads > 0 {
        // the pool can be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
