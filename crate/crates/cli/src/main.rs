//! Command-line front end: train, evaluate, and run models, generate
//! synthetic data, and inspect configurations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bionet::augment::AugmentConfig;
use bionet::data::{load_image, materialize, save_gray_png, save_mask_png, synth_blobs, Manifest};
use bionet::metrics::{foreground_probability, mask_from_probability, Metric};
use bionet::opt::TrainConfig;
use bionet::train::{evaluate, train};
use bionet::{BioNet, BioNetConfig, Error, Head, Result};

#[derive(Parser)]
#[command(name = "bionet", version, about = "Recurrent bi-directional encoder-decoder networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the layer table and parameter counts for a configuration
    Params(ParamsArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint against a dataset split
    Eval(EvalArgs),
    /// Run a checkpoint on a single image
    Predict(PredictArgs),
    /// Generate a synthetic blob dataset
    Synth(SynthArgs),
}

/// Architecture options shared by `params` and `train`.
///
/// Precedence: built-in defaults, then `--config` file entries, then
/// explicit flags.
#[derive(Args)]
struct ModelArgs {
    /// Config file with one `key = value` per line; `#` starts a comment
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recurrence iterations
    #[arg(long)]
    t: Option<usize>,
    /// Channel width multiplier
    #[arg(long)]
    mult: Option<f64>,
    /// Backward skip connections, counted from the deepest level
    /// (default: every level)
    #[arg(long)]
    w: Option<usize>,
    /// Encoder depth (number of pooling steps)
    #[arg(long)]
    depth: Option<usize>,
    /// Stack decoded features from every iteration before the output stage
    #[arg(long)]
    int_stack: bool,
    /// Skip fusion: concat or add
    #[arg(long)]
    fusion: Option<String>,
    /// Override any config key, e.g. --set base_channels=16
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<BioNetConfig> {
        let mut cfg = BioNetConfig::default();
        let mut w_explicit = false;
        if let Some(path) = &self.config {
            w_explicit |= apply_config_file(&mut cfg, path)?;
        }
        if let Some(t) = self.t {
            cfg.set_kv("t", &t.to_string())?;
        }
        if let Some(mult) = self.mult {
            cfg.set_kv("mult", &mult.to_string())?;
        }
        if let Some(w) = self.w {
            cfg.set_kv("w", &w.to_string())?;
            w_explicit = true;
        }
        if let Some(depth) = self.depth {
            cfg.set_kv("depth", &depth.to_string())?;
        }
        if self.int_stack {
            cfg.set_kv("int_stack", "true")?;
        }
        if let Some(fusion) = &self.fusion {
            cfg.set_kv("fusion", fusion)?;
        }
        for pair in &self.set {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects KEY=VALUE, got '{}'", pair))
            })?;
            let key = key.trim();
            cfg.set_kv(key, value.trim())?;
            w_explicit |= key == "w";
        }
        // The stock skip count means "every level"; keep that reading when
        // a shallower depth is chosen without saying anything about w.
        if !w_explicit && cfg.backward_skips > cfg.depth {
            cfg.backward_skips = cfg.depth;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Applies a config file; the returned flag reports whether it set `w`.
fn apply_config_file(cfg: &mut BioNetConfig, path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path)?;
    let mut sets_w = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `key = value`", path.display(), lineno + 1))
        })?;
        let key = key.trim();
        cfg.set_kv(key, value.trim()).map_err(|e| {
            Error::Config(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
        sets_w |= key == "w";
    }
    Ok(sets_w)
}

fn echo_config(cfg: &BioNetConfig) {
    for (k, v) in cfg.to_kv() {
        println!("config {} = {}", k, v);
    }
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    model: ModelArgs,
}

fn run_params(args: &ParamsArgs) -> Result<()> {
    let cfg = args.model.resolve()?;
    echo_config(&cfg);
    let net = BioNet::build(&cfg, 0)?;
    print!("{}", net.describe());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset manifest (tab-separated)
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest split to train on
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 2)]
    batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Inverse-time decay applied per optimizer step
    #[arg(long, default_value_t = 3e-5)]
    lr_decay: f64,
    /// Loss: ce or mse
    #[arg(long, default_value = "ce")]
    loss: String,
    /// Apply random affine augmentation to each batch
    #[arg(long)]
    augment: bool,
    /// Log a metric line every N epochs (0 disables)
    #[arg(long, default_value_t = 0)]
    metrics_every: usize,
    /// Seed for weights, shuffling, and augmentation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.model.resolve()?;
    echo_config(&cfg);
    let mut tcfg = TrainConfig::default();
    tcfg.epochs = args.epochs;
    tcfg.batch_size = args.batch_size;
    tcfg.initial_lr = args.lr;
    tcfg.lr_decay = args.lr_decay;
    tcfg.loss = args.loss.parse()?;
    tcfg.augment = args.augment;
    tcfg.metrics_every = args.metrics_every;
    tcfg.seed = args.seed;

    let manifest = Manifest::read(&args.manifest)?;
    let samples = manifest.load_split(&args.split)?;
    let mut net = BioNet::build(&cfg, args.seed)?;
    let pc = net.param_count();
    println!(
        "training on {} samples, {} parameters ({:.1} MB)",
        samples.len(),
        pc.total,
        pc.model_bytes as f64 / (1024.0 * 1024.0)
    );
    let report = train(&mut net, &samples, &tcfg, &AugmentConfig::default())?;
    print!("{}", report.log);
    net.save(&args.out)?;
    println!("saved {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Dataset manifest (tab-separated)
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest split to score
    #[arg(long, default_value = "val")]
    split: String,
    /// Comma-separated metrics: dice, iou, psnr, rand-f
    #[arg(long, default_value = "dice,iou")]
    metrics: String,
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let net = BioNet::load(&args.model)?;
    let manifest = Manifest::read(&args.manifest)?;
    let samples = manifest.load_split(&args.split)?;
    let metrics = args
        .metrics
        .split(',')
        .map(|m| m.trim().parse::<Metric>())
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&net, &samples, &metrics)?;
    print!("{}", report);
    Ok(())
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Input PNG
    #[arg(long)]
    image: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
    /// Write the probability map instead of the thresholded mask
    #[arg(long)]
    prob: bool,
}

fn run_predict(args: &PredictArgs) -> Result<()> {
    let net = BioNet::load(&args.model)?;
    let image = load_image(&args.image)?;
    let pass = net.forward(&image)?;
    let output = pass.output_tensor();
    match net.config().head {
        Head::Segmentation => {
            let p = foreground_probability(output)?;
            let s = p.shape();
            if args.prob {
                save_gray_png(&args.out, p.data(), s.h, s.w)?;
            } else {
                let mask = mask_from_probability(&p, 0.5)?;
                save_mask_png(&args.out, &mask)?;
            }
        }
        Head::Regression => {
            let s = output.shape();
            if s.c != 1 {
                return Err(Error::Data(format!(
                    "cannot write a {}-channel output as a grayscale image",
                    s.c
                )));
            }
            save_gray_png(&args.out, output.data(), s.h, s.w)?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct SynthArgs {
    /// Number of images to generate
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of samples assigned to the val split
    #[arg(long, default_value_t = 0.25)]
    val_fraction: f64,
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let samples = synth_blobs(args.count, args.size, args.seed, args.noise)?;
    let manifest = materialize(&samples, &args.out, args.val_fraction)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Params(args) => run_params(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Predict(args) => run_predict(args),
        Command::Synth(args) => run_synth(args),
    }
}

/// Exit codes: 2 for configuration problems, 3 for data problems, 4 for
/// anything else. Argument parse failures also exit with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Image(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
