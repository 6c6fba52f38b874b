//! Command-line surface. One binary, subcommands for dataset generation,
//! training, calibration, generation, editing, and evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Failures print a
//! machine-readable JSON line on stderr.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::emotion::{EmotionLabel, EmotionWheel};
use crate::error::{EmodiffError, Result};
use crate::eval::{self, Judges};
use crate::glyphs::{self, Dataset, Vocab};
use crate::models::{
    train_classifier, train_denoiser, train_embedder, ClassifierArch, ClassifierTrainConfig,
    Denoiser, DenoiserTrainConfig, EmbedderTrainConfig, EmotionClassifier, JointEmbedder,
    SubsetSpec,
};
use crate::synthesis::{self, Models};

// ---------------------------------------------------------------------------
// Checkpoint bundle
// ---------------------------------------------------------------------------

pub const DENOISER_CKPT: &str = "denoiser.ckpt";
pub const GUIDE_CKPT: &str = "classifier_guide.ckpt";
pub const AGNOSTIC_CKPT: &str = "classifier_agnostic.ckpt";
pub const REDUCED_CKPT: &str = "classifier_reduced.ckpt";
pub const EMBEDDER_CKPT: &str = "embedder.ckpt";

/// Owned model stack loaded from a checkpoint directory. The reduced-data
/// classifier is optional; everything else is required.
pub struct ModelBundle {
    pub denoiser: Denoiser,
    pub guide: EmotionClassifier,
    pub agnostic: EmotionClassifier,
    pub reduced: Option<EmotionClassifier>,
    pub embedder: JointEmbedder,
    pub wheel: EmotionWheel,
}

impl ModelBundle {
    pub fn load(dir: &Path) -> Result<Self> {
        let reduced_path = dir.join(REDUCED_CKPT);
        Ok(Self {
            denoiser: Denoiser::load(&dir.join(DENOISER_CKPT))?.0,
            guide: EmotionClassifier::load(&dir.join(GUIDE_CKPT))?.0,
            agnostic: EmotionClassifier::load(&dir.join(AGNOSTIC_CKPT))?.0,
            reduced: if reduced_path.exists() {
                Some(EmotionClassifier::load(&reduced_path)?.0)
            } else {
                None
            },
            embedder: JointEmbedder::load(&dir.join(EMBEDDER_CKPT))?.0,
            wheel: EmotionWheel::default(),
        })
    }

    pub fn models(&self) -> Models<'_> {
        Models {
            denoiser: &self.denoiser,
            classifier: &self.guide,
            embedder: &self.embedder,
            wheel: &self.wheel,
        }
    }

    pub fn judges(&self) -> Judges<'_> {
        Judges {
            agnostic: &self.agnostic,
            reduced: self.reduced.as_ref(),
        }
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "emodiff", version, about = "Emotion-guided toy diffusion")]
pub struct Cli {
    /// Run config TOML; explicit flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Dataset commands.
    Data {
        #[command(subcommand)]
        cmd: DataCmd,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[command(subcommand)]
        cmd: TrainCmd,
    },
    /// Calibrate the gate threshold from unguided runs and write it into a
    /// resolved config.
    CalibrateEta(CalibrateArgs),
    /// Generate an image from noise with emotional guidance.
    Gen(GenArgs),
    /// Edit an existing image toward a target emotion.
    Edit(EditArgs),
    /// Evaluate a generated set (or a freshly generated one) against a
    /// reference dataset.
    Eval(EvalArgs),
    /// Sweep the gate threshold over a grid.
    SweepEta(SweepArgs),
    /// Compare loss-term combinations.
    AblateLosses(AblateArgs),
}

#[derive(Subcommand)]
pub enum DataCmd {
    /// Generate the procedural glyph dataset.
    Gen {
        #[arg(long)]
        n: usize,
        /// Shape-emotion correlation strength.
        #[arg(long, default_value_t = 0.8)]
        rho: f32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ArchArg {
    Guide,
    Agnostic,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SubsetArg {
    All,
    FirstHalf,
    SecondHalf,
}

impl From<SubsetArg> for SubsetSpec {
    fn from(s: SubsetArg) -> Self {
        match s {
            SubsetArg::All => SubsetSpec::All,
            SubsetArg::FirstHalf => SubsetSpec::FirstHalf,
            SubsetArg::SecondHalf => SubsetSpec::SecondHalf,
        }
    }
}

#[derive(Args)]
pub struct TrainCommon {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand)]
pub enum TrainCmd {
    Denoiser {
        #[command(flatten)]
        common: TrainCommon,
        /// Relax the trained-loss ceiling (for smoke runs on tiny data).
        #[arg(long)]
        loss_ceiling: Option<f32>,
    },
    Classifier {
        #[command(flatten)]
        common: TrainCommon,
        #[arg(long, value_enum, default_value_t = ArchArg::Guide)]
        arch: ArchArg,
        #[arg(long, value_enum, default_value_t = SubsetArg::All)]
        subset: SubsetArg,
        /// Relax the trained-accuracy floor (for reduced-data training).
        #[arg(long)]
        accuracy_floor: Option<f32>,
    },
    Embedder {
        #[command(flatten)]
        common: TrainCommon,
        /// Relax the trained retrieval floor (for smoke runs on tiny data).
        #[arg(long)]
        retrieval_floor: Option<f32>,
    },
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    pub percentile: f32,
    /// Unguided validation runs to pool s_clip values from.
    #[arg(long, default_value_t = 8)]
    pub runs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for the calibrated resolved config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Text prompt; mutually exclusive with --emotion-only.
    #[arg(long, conflicts_with = "emotion_only")]
    pub prompt: Option<String>,
    /// Use the emotion-name template instead of a prompt.
    #[arg(long)]
    pub emotion_only: bool,
    /// Target emotion name.
    #[arg(long)]
    pub emotion: String,
    /// Gate threshold override ("inf" and "-inf" accepted).
    #[arg(long)]
    pub eta: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (image.png, trace.jsonl, resolved config).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EditArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Source image PNG.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub emotion: String,
    #[arg(long)]
    pub eta: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub models: PathBuf,
    /// Reference dataset directory (feature distribution for FD).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Existing generated-set directory (index.jsonl + PNGs). Without it,
    /// guided and vanilla sets of --n runs are generated in place.
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub eta: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Comma-separated eta grid; "inf" and "-inf" accepted.
    #[arg(long)]
    pub grid: String,
    /// Runs per grid cell.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parse arguments from the process environment and run; returns the exit
/// code. Usage errors are 1, runtime failures 2, both with a JSON error line
/// on stderr.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            eprintln!(
                "{}",
                serde_json::json!({"error": "usage", "message": e.to_string()})
            );
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": "runtime", "message": err.to_string()})
            );
            2
        }
    }
}

fn base_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_emotion(name: &str) -> Result<EmotionLabel> {
    EmotionLabel::parse(name)
}

/// One record of a generated-set index (JSONL).
#[derive(serde::Serialize, serde::Deserialize)]
pub struct SetRecord {
    pub file: String,
    pub target: String,
    pub prompt: String,
}

fn load_set(dir: &Path) -> Result<(Vec<ndarray::Array3<f32>>, Vec<EmotionLabel>, Vec<glyphs::PromptTokens>)> {
    let vocab = Vocab::default();
    let text = std::fs::read_to_string(dir.join("index.jsonl"))?;
    let mut images = Vec::new();
    let mut targets = Vec::new();
    let mut prompts = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: SetRecord = serde_json::from_str(line)?;
        images.push(glyphs::load_png(&dir.join(&rec.file))?);
        targets.push(EmotionLabel::parse(&rec.target)?);
        prompts.push(vocab.tokenize(&rec.prompt)?);
    }
    if images.is_empty() {
        return Err(EmodiffError::InvalidArgument(format!(
            "empty set at {}",
            dir.display()
        )));
    }
    Ok((images, targets, prompts))
}

fn reference_features(
    dataset_dir: &Path,
    embedder: &JointEmbedder,
) -> Result<ndarray::Array2<f32>> {
    let dataset = Dataset::load(dataset_dir)?;
    let images: Vec<_> = dataset.samples.iter().map(|s| s.image.clone()).collect();
    eval::embed_set(&images, embedder)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(cli.config.as_ref())?;
    match cli.command {
        Command::Data { cmd } => match cmd {
            DataCmd::Gen { n, rho, seed, out } => {
                let seed = seed.unwrap_or(cfg.seed);
                let dataset = glyphs::generate_dataset(n, rho, seed)?;
                dataset.write(&out)?;
                println!("wrote {} samples to {}", n, out.display());
                println!("dataset hash: {}", dataset.hash()?);
            }
        },
        Command::Train { cmd } => train(cmd, &cfg)?,
        Command::CalibrateEta(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            let bundle = ModelBundle::load(&args.models)?;
            let eta = eval::calibrate_eta(
                args.runs,
                args.percentile,
                &bundle.models(),
                &cfg.guidance,
                seed,
            )?;
            cfg.guidance.eta = eta;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            std::fs::create_dir_all(&args.out)?;
            cfg.write_resolved(&args.out)?;
            println!("calibrated eta: {eta}");
        }
        Command::Gen(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            if let Some(eta) = args.eta {
                cfg.guidance.eta = eta;
            }
            if args.prompt.is_none() && !args.emotion_only {
                return Err(EmodiffError::InvalidArgument(
                    "pass --prompt or --emotion-only".into(),
                ));
            }
            let target = parse_emotion(&args.emotion)?;
            let bundle = ModelBundle::load(&args.models)?;
            let (image, trace) = synthesis::generate(
                args.prompt.as_deref(),
                target,
                &bundle.models(),
                &cfg.guidance,
                seed,
            )?;
            std::fs::create_dir_all(&args.out)?;
            glyphs::save_png(&image, &args.out.join("image.png"))?;
            trace.write_jsonl(&args.out.join("trace.jsonl"))?;
            crate::plot::plot_trace_probs(&trace, &args.out.join("trace_probs.png"))?;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            cfg.write_resolved(&args.out)?;
            println!("wrote {}", args.out.join("image.png").display());
        }
        Command::Edit(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            if let Some(eta) = args.eta {
                cfg.guidance.eta = eta;
            }
            let target = parse_emotion(&args.emotion)?;
            let bundle = ModelBundle::load(&args.models)?;
            let source = glyphs::load_png(&args.image)?;
            let (image, trace) = synthesis::edit(
                &source,
                &args.prompt,
                target,
                &bundle.models(),
                &cfg.guidance,
                seed,
            )?;
            std::fs::create_dir_all(&args.out)?;
            glyphs::save_png(&image, &args.out.join("image.png"))?;
            trace.write_jsonl(&args.out.join("trace.jsonl"))?;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            cfg.write_resolved(&args.out)?;
            println!("wrote {}", args.out.join("image.png").display());
        }
        Command::Eval(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            if let Some(eta) = args.eta {
                cfg.guidance.eta = eta;
            }
            let bundle = ModelBundle::load(&args.models)?;
            let models = bundle.models();
            let judges = bundle.judges();
            let reference = reference_features(&args.reference, &bundle.embedder)?;
            let mut rows = Vec::new();
            if let Some(set_dir) = &args.set {
                let (images, targets, prompts) = load_set(set_dir)?;
                rows.push(eval::score_condition(
                    "set", &images, &targets, &prompts, &reference, &models, &judges,
                )?);
            } else {
                let guided = eval::run_guided_batch(args.n, &models, &cfg.guidance, seed)?;
                rows.push(eval::score_condition(
                    "guided",
                    &guided.images,
                    &guided.targets,
                    &guided.prompts,
                    &reference,
                    &models,
                    &judges,
                )?);
                let (images, targets, prompts) =
                    eval::run_vanilla_batch(args.n, &models, &cfg.guidance, seed)?;
                rows.push(eval::score_condition(
                    "vanilla", &images, &targets, &prompts, &reference, &models, &judges,
                )?);
            }
            let report = eval::EvalReport {
                config_hash: eval::config_hash(&cfg.guidance),
                rows,
            };
            std::fs::create_dir_all(&args.out)?;
            report.write_csv(&args.out.join("report.csv"))?;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            cfg.dataset_dir = Some(args.reference.clone());
            cfg.write_resolved(&args.out)?;
            println!("wrote {}", args.out.join("report.csv").display());
        }
        Command::SweepEta(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            let etas: Vec<f32> = args
                .grid
                .split(',')
                .map(|s| {
                    s.trim().parse::<f32>().map_err(|_| {
                        EmodiffError::InvalidArgument(format!("bad eta value {s:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            let bundle = ModelBundle::load(&args.models)?;
            let models = bundle.models();
            let judges = bundle.judges();
            let reference = reference_features(&args.reference, &bundle.embedder)?;
            let report = eval::sweep_eta(
                &etas,
                args.n,
                &models,
                &judges,
                &reference,
                &cfg.guidance,
                seed,
            )?;
            std::fs::create_dir_all(&args.out)?;
            report.report.write_csv(&args.out.join("sweep.csv"))?;
            crate::plot::plot_sweep(&report, &args.out.join("sweep.png"))?;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            cfg.dataset_dir = Some(args.reference.clone());
            cfg.write_resolved(&args.out)?;
            println!(
                "rank(acc, eta) = {:.3}, rank(semantic, eta) = {:.3}",
                report.rank_acc_eta, report.rank_sem_eta
            );
            println!("wrote {}", args.out.join("sweep.csv").display());
        }
        Command::AblateLosses(args) => {
            let seed = args.seed.unwrap_or(cfg.seed);
            let bundle = ModelBundle::load(&args.models)?;
            let report = eval::ablate_losses(
                args.n,
                &bundle.models(),
                &bundle.judges(),
                &cfg.guidance,
                seed,
            )?;
            std::fs::create_dir_all(&args.out)?;
            report.write_csv(&args.out.join("ablation.csv"))?;
            cfg.seed = seed;
            cfg.models_dir = args.models.clone();
            cfg.write_resolved(&args.out)?;
            println!("wrote {}", args.out.join("ablation.csv").display());
        }
    }
    Ok(())
}

fn train(cmd: TrainCmd, cfg: &RunConfig) -> Result<()> {
    match cmd {
        TrainCmd::Denoiser {
            common,
            loss_ceiling,
        } => {
            let dataset = Dataset::load(&common.data)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let mut tc = DenoiserTrainConfig::default();
            if let Some(e) = common.epochs {
                tc.epochs = e;
            }
            if let Some(c) = loss_ceiling {
                tc.loss_ceiling = c;
            }
            let model = train_denoiser(&dataset, &tc, seed)?;
            model.save(&common.out, &dataset.hash()?, seed)?;
            println!("wrote {}", common.out.display());
        }
        TrainCmd::Classifier {
            common,
            arch,
            subset,
            accuracy_floor,
        } => {
            let dataset = Dataset::load(&common.data)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let mut tc = ClassifierTrainConfig {
                arch: match arch {
                    ArchArg::Guide => ClassifierArch::Guide,
                    ArchArg::Agnostic => ClassifierArch::Agnostic,
                },
                subset: subset.into(),
                ..Default::default()
            };
            if let Some(e) = common.epochs {
                tc.epochs = e;
            }
            if let Some(f) = accuracy_floor {
                tc.accuracy_floor = f;
            }
            let model = train_classifier(&dataset, &tc, seed)?;
            model.save(&common.out, &dataset.hash()?, seed)?;
            println!("wrote {}", common.out.display());
        }
        TrainCmd::Embedder {
            common,
            retrieval_floor,
        } => {
            let dataset = Dataset::load(&common.data)?;
            let seed = common.seed.unwrap_or(cfg.seed);
            let mut tc = EmbedderTrainConfig::default();
            if let Some(e) = common.epochs {
                tc.epochs = e;
            }
            if let Some(f) = retrieval_floor {
                tc.retrieval_floor = f;
            }
            let model = train_embedder(&dataset, &tc, seed)?;
            model.save(&common.out, &dataset.hash()?, seed)?;
            println!("wrote {}", common.out.display());
        }
    }
    Ok(())
}

/// Write a generated set directory (PNGs + index.jsonl) so it can be fed
/// back through `eval --set`.
pub fn write_set(
    dir: &Path,
    images: &[ndarray::Array3<f32>],
    targets: &[EmotionLabel],
    prompts: &[String],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::new();
    for (i, ((img, target), prompt)) in images.iter().zip(targets).zip(prompts).enumerate() {
        let file = format!("{i:04}.png");
        glyphs::save_png(img, &dir.join(&file))?;
        let rec = SetRecord {
            file,
            target: target.name().to_string(),
            prompt: prompt.clone(),
        };
        index.push_str(&serde_json::to_string(&rec)?);
        index.push('\n');
    }
    std::fs::write(dir.join("index.jsonl"), index)?;
    Ok(())
}
