//! `livmap` command-line driver.
//!
//! Exit codes: 0 on success, 1 for invalid input or usage, 2 for I/O and
//! numerical failures during a run.

pub mod commands;
pub mod manifest;
pub mod synth;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use livmap_core::{Error, Result};

use crate::manifest::RunManifest;
use crate::synth::SynthConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "livmap", version, about = "Housing-quality maps from aerial and street-level image features")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known score model.
    Synth(SynthArgs),
    /// Assign cells to train/val/test around the test squares.
    Split(RunArgs),
    /// Apply a scene filter to the image corpus.
    Filter(RunArgs),
    /// Train the regression head.
    Train(RunArgs),
    /// Evaluate a checkpoint per split and per test tile.
    Eval(RunArgs),
    /// Render ground-truth and predicted maps of test tiles.
    Map(RunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub width: u32,
    #[arg(long, default_value_t = 40)]
    pub height: u32,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Mean number of ground images per cell.
    #[arg(long, default_value_t = 3.0)]
    pub lambda: f64,
    /// Absolute score noise std (overrides --noise-rel).
    #[arg(long)]
    pub noise: Option<f64>,
    /// Score noise std relative to the noise-free score std.
    #[arg(long, default_value_t = 0.05)]
    pub noise_rel: f64,
    /// Ground signal std relative to the aerial signal std.
    #[arg(long, default_value_t = 2.0)]
    pub ground_weight: f64,
    /// Weight of the score direction in the ground latent.
    #[arg(long, default_value_t = 30.0)]
    pub latent_signal: f64,
    #[arg(long, default_value_t = 0.5)]
    pub image_noise: f64,
    #[arg(long, default_value_t = 10.0)]
    pub scale: f64,
    /// Test square side in cells (0 = automatic).
    #[arg(long, default_value_t = 0)]
    pub square_side: u32,
    #[arg(long, default_value_t = synth::DEFAULT_BUFFER)]
    pub buffer: u32,
}

impl SynthArgs {
    pub fn config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            width: self.width,
            height: self.height,
            dim: self.dim,
            lambda: self.lambda,
            noise: self.noise,
            noise_rel: self.noise_rel,
            ground_weight: self.ground_weight,
            latent_signal: self.latent_signal,
            image_noise: self.image_noise,
            scale: self.scale,
            square_side: self.square_side,
            buffer: self.buffer,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON manifest; flags given here override its values.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub squares: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub outdoor_mask: Option<PathBuf>,
    #[arg(long)]
    pub building_classes: Option<PathBuf>,
    #[arg(long)]
    pub aerial_features: Option<PathBuf>,
    #[arg(long)]
    pub ground_features: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// none | outdoors | buildings
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// none | ground | aerial
    #[arg(long)]
    pub ablate: Option<String>,
    /// patch | cell
    #[arg(long)]
    pub assign: Option<String>,
    #[arg(long)]
    pub buffer: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub freeze_adapter_epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// coupled | decoupled
    #[arg(long)]
    pub decay_mode: Option<String>,
    /// tau_a | tau_b
    #[arg(long)]
    pub tau: Option<String>,
    /// Tile to render (repeatable); all tiles by default.
    #[arg(long = "tile")]
    pub tiles: Vec<String>,
    /// Fixed colour range `MIN,MAX` for maps.
    #[arg(long, value_parser = parse_range)]
    pub range: Option<[f64; 2]>,
    #[arg(long)]
    pub block_px: Option<u32>,
}

fn parse_range(s: &str) -> std::result::Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(',').ok_or("expected MIN,MAX")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad minimum `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad maximum `{hi}`"))?;
    Ok([lo, hi])
}

impl RunArgs {
    fn as_manifest(&self, seed: Option<u64>) -> RunManifest {
        RunManifest {
            scores: self.scores.clone(),
            squares: self.squares.clone(),
            splits: self.splits.clone(),
            images: self.images.clone(),
            activations: self.activations.clone(),
            outdoor_mask: self.outdoor_mask.clone(),
            building_classes: self.building_classes.clone(),
            aerial_features: self.aerial_features.clone(),
            ground_features: self.ground_features.clone(),
            checkpoint: self.checkpoint.clone(),
            out_dir: self.out.clone(),
            filter: self.filter.clone(),
            building_threshold: self.threshold,
            ablation: self.ablate.clone(),
            assign_mode: self.assign.clone(),
            buffer: self.buffer,
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            freeze_adapter_epochs: self.freeze_adapter_epochs,
            hidden: self.hidden,
            decay_mode: self.decay_mode.clone(),
            tau_variant: self.tau.clone(),
            tiles: (!self.tiles.is_empty()).then(|| self.tiles.clone()),
            map_range: self.range,
            block_px: self.block_px,
            seed,
        }
    }

    /// Defaults, then the manifest file, then flags.
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunManifest> {
        let base = match &self.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        base.overlay(&self.as_manifest(seed)).resolved()
    }
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Caps rayon's pool at `LIVMAP_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LIVMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("LIVMAP_THREADS must be a positive integer, got `{raw}`")))?;
    // a pool built earlier in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Synth(a) => {
            let s = synth::generate(&a.config(cli.seed.unwrap_or(0)), &a.out)?;
            println!(
                "synthetic city {}x{}: {} cells, {} images, noise std {:.6}",
                a.width, a.height, s.cells, s.images, s.noise_std
            );
            Ok(())
        }
        Command::Split(a) => commands::cmd_split(&a.resolve(cli.seed)?),
        Command::Filter(a) => commands::cmd_filter(&a.resolve(cli.seed)?),
        Command::Train(a) => commands::cmd_train(&a.resolve(cli.seed)?),
        Command::Eval(a) => commands::cmd_eval(&a.resolve(cli.seed)?),
        Command::Map(a) => commands::cmd_map(&a.resolve(cli.seed)?),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
