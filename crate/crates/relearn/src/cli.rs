//! The `relearn` executable: argument parsing, config-file merging, and
//! the glue from files on disk to library calls. Everything process-shaped
//! — exit codes, stdout vs stderr, thread-pool setup — lives here, so the
//! library stays free of it.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 on usage
//! errors, 2 on data or contract errors. Results go to stdout or `--out`
//! files; diagnostics go to stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use relearn::augment::{augment_multilevel, estimate_noise_stats, AugmentConfig, NoiseStats};
use relearn::datamodel::{
    self, Dataset, FeatureVector, FrameFeatures, RelevanceTable, Split, VideoFeatures, VideoId,
};
use relearn::error::{Error, Result};
use relearn::eval::{self, evaluate, StrategySpec, HIT_KS, RECALL_KS};
use relearn::model::{LossConfig, LossKind};
use relearn::predict::{build_candidate_index, rank_candidates, Strategy};
use relearn::synth::{self, SynthConfig};
use relearn::train::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "relearn",
    version,
    about = "Re-learn video feature spaces for relevance ranking"
)]
struct Cli {
    /// Worker threads for evaluation fan-out; the RELEARN_THREADS
    /// environment variable is honored when the flag is absent
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic clustered dataset
    Synth(SynthArgs),
    /// Train a projection model
    Train(TrainArgs),
    /// Write augmented feature instances for inspection
    Augment(AugmentArgs),
    /// Rank candidates for every seed video in a split
    Predict(PredictArgs),
    /// Score a ranking strategy with the recall/hit panel
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            // Help and version requests print to stdout and succeed; real
            // usage errors go to stderr with exit code 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let cli = Cli::from_arg_matches(matches)
        .map_err(|e| Error::data(format!("argument resolution failed: {e}")))?;
    configure_threads(resolve_threads(matches, cli.threads)?)?;
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => {
            cmd_train(args, matches.subcommand_matches("train").expect("train parsed"))
        }
        Command::Augment(args) => cmd_augment(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    }
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

fn resolve_threads(m: &ArgMatches, flag: usize) -> Result<usize> {
    // --threads is global, so it may surface on either matches level.
    let on_cli = from_cli(m, "threads")
        || m.subcommand().is_some_and(|(_, sm)| from_cli(sm, "threads"));
    if on_cli {
        return Ok(flag);
    }
    match std::env::var("RELEARN_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("RELEARN_THREADS: expected an integer, got {s:?}"))),
        Err(_) => Ok(flag),
    }
}

fn configure_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Err(Error::data("--threads must be ≥ 1"));
    }
    // Ignore the error: the global pool can only be configured once per
    // process, and a second `run` call in the same process is fine with
    // the existing pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
    Ok(())
}

fn parse_loss_kind(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_eval_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected `val` or `test`, got {s:?}")),
    }
}

fn load_dataset(
    features: &Path,
    frames: Option<&Path>,
    relevance: &Path,
    splits: &Path,
) -> Result<Dataset> {
    let videos = datamodel::load_video_features(features)?;
    let frames = frames.map(datamodel::load_frame_features).transpose()?;
    let table = RelevanceTable {
        lists: datamodel::load_relevance(relevance)?,
        split: datamodel::load_splits(splits)?,
    };
    Dataset::new(videos, frames, table)
}

/// A results sink: `--out` file or stdout, with a display name for error
/// messages.
struct Output {
    w: Box<dyn Write>,
    path: PathBuf,
}

impl Output {
    fn new(out: Option<&Path>) -> Result<Output> {
        match out {
            Some(p) => Ok(Output {
                w: Box::new(BufWriter::new(
                    File::create(p).map_err(|e| Error::file(p, e))?,
                )),
                path: p.to_path_buf(),
            }),
            None => Ok(Output {
                w: Box::new(std::io::stdout().lock()),
                path: PathBuf::from("<stdout>"),
            }),
        }
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.w, "{s}").map_err(|e| Error::file(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::file(&self.path, e))
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Directory for the four dataset files
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 240)]
    num_videos: usize,
    #[arg(long, default_value_t = 24)]
    num_clusters: usize,
    /// Feature dimension d
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    min_frames: usize,
    #[arg(long, default_value_t = 40)]
    max_frames: usize,
    /// Intra-cluster noise scale
    #[arg(long, default_value_t = 0.4)]
    noise_scale: f64,
    /// Apply the distractor: nuisance dimensions, rotation, per-dimension scaling
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    distractor: bool,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_videos: args.num_videos,
        num_clusters: args.num_clusters,
        dim: args.dim,
        min_frames: args.min_frames,
        max_frames: args.max_frames,
        noise_scale: args.noise_scale,
        distractor: args.distractor,
        train_frac: args.train_frac,
        val_frac: args.val_frac,
        seed: args.seed,
    };
    let ds = synth::generate(&cfg)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::file(&args.out_dir, e))?;
    synth::write_to_dir(&ds, &args.out_dir)?;
    eprintln!(
        "wrote {} videos in {} clusters to {}",
        args.num_videos,
        args.num_clusters,
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Video-level feature file
    #[arg(long)]
    features: PathBuf,
    /// Frame-level feature file; enables frame-level augmentation
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Relevance ground-truth file
    #[arg(long)]
    relevance: PathBuf,
    /// Split assignment file
    #[arg(long)]
    splits: PathBuf,
    /// Where to write the trained model
    #[arg(long)]
    out_model: PathBuf,
    /// key=value file overriding built-in defaults (explicit flags still
    /// win)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss: trl, itrl, netrl, or contrastive
    #[arg(long, default_value = "netrl", value_parser = parse_loss_kind)]
    loss: LossKind,
    /// Ranking margin m1
    #[arg(long, default_value_t = 0.2)]
    m1: f64,
    /// Negative-enhancement margin m2
    #[arg(long, default_value_t = 0.05)]
    m2: f64,
    /// Weight of the negative-enhancement term
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Triplets per optimizer step
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Projection dimension p
    #[arg(long, default_value_t = 512)]
    proj_dim: usize,
    /// Skip-sampling stride s
    #[arg(long, default_value_t = 12)]
    stride: usize,
    /// Perturbation mask probability q
    #[arg(long, default_value_t = 0.5)]
    mask_prob: f64,
    /// Perturbation intensity
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Frame-level augmentation (needs --frames)
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    frame_aug: bool,
    /// Video-level augmentation
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    video_aug: bool,
    /// Epochs of non-decreasing validation loss before halving the LR
    #[arg(long, default_value_t = 3)]
    lr_halve_patience: usize,
    /// Epochs of non-improving validation Sum before stopping
    #[arg(long, default_value_t = 10)]
    early_stop_patience: usize,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Extra mid-epoch validation report every N iterations
    #[arg(long)]
    val_every: Option<usize>,
}

/// Applies `key=value` lines to every field the command line left at its
/// default. Keys are the long flag names; `_` and `-` are interchangeable.
fn apply_config_file(args: &mut TrainArgs, m: &ArgMatches, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(path, i + 1, format!("expected key=value, got {line:?}"))
        })?;
        set_config_key(args, m, path, i + 1, &key.trim().replace('_', "-"), value.trim())?;
    }
    Ok(())
}

fn set_config_key(
    args: &mut TrainArgs,
    m: &ArgMatches,
    path: &Path,
    lineno: usize,
    key: &str,
    value: &str,
) -> Result<()> {
    macro_rules! set {
        ($field:ident) => {{
            if !from_cli(m, stringify!($field)) {
                args.$field = value.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("{key}: cannot parse {value:?}"))
                })?;
            }
            Ok(())
        }};
    }
    match key {
        "loss" => {
            if !from_cli(m, "loss") {
                args.loss = parse_loss_kind(value)
                    .map_err(|e| Error::parse(path, lineno, e))?;
            }
            Ok(())
        }
        "m1" => set!(m1),
        "m2" => set!(m2),
        "alpha" => set!(alpha),
        "lr" => set!(lr),
        "batch-size" => set!(batch_size),
        "proj-dim" => set!(proj_dim),
        "stride" => set!(stride),
        "mask-prob" => set!(mask_prob),
        "epsilon" => set!(epsilon),
        "frame-aug" => set!(frame_aug),
        "video-aug" => set!(video_aug),
        "lr-halve-patience" => set!(lr_halve_patience),
        "early-stop-patience" => set!(early_stop_patience),
        "max-epochs" => set!(max_epochs),
        "seed" => set!(seed),
        "val-every" => {
            if !from_cli(m, "val_every") {
                let n = value.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("val-every: cannot parse {value:?}"))
                })?;
                args.val_every = Some(n);
            }
            Ok(())
        }
        _ => Err(Error::parse(path, lineno, format!("unknown configuration key {key:?}"))),
    }
}

fn cmd_train(mut args: TrainArgs, m: &ArgMatches) -> Result<()> {
    if let Some(path) = args.config.clone() {
        apply_config_file(&mut args, m, &path)?;
    }
    let ds = load_dataset(&args.features, args.frames.as_deref(), &args.relevance, &args.splits)?;
    let cfg = TrainConfig {
        projection_dim: args.proj_dim,
        batch_size: args.batch_size,
        initial_lr: args.lr,
        lr_halve_patience: args.lr_halve_patience,
        early_stop_patience: args.early_stop_patience,
        max_epochs: args.max_epochs,
        loss: LossConfig { kind: args.loss, m1: args.m1, m2: args.m2, alpha: args.alpha },
        augment: AugmentConfig {
            stride: args.stride,
            mask_prob: args.mask_prob,
            epsilon: args.epsilon,
            enable_frame_level: args.frame_aug,
            enable_video_level: args.video_aug,
        },
        seed: args.seed,
        val_every: args.val_every,
    };
    let (model, history) = train(&cfg, &ds, |rec| println!("{}", rec.log_line()))?;
    datamodel::save_model(&model, &args.out_model)?;
    match history.epochs.iter().map(|r| r.val_sum).reduce(f64::max) {
        Some(best) => eprintln!(
            "wrote {} (best validation Sum {best:.6} over {} epochs)",
            args.out_model.display(),
            history.epochs.len()
        ),
        None => eprintln!(
            "wrote untrained model to {} (max-epochs 0)",
            args.out_model.display()
        ),
    }
    Ok(())
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Video-level feature file
    #[arg(long)]
    features: PathBuf,
    /// Frame-level feature file; enables frame-level augmentation
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Split file: restrict noise statistics to its train videos
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Skip-sampling stride s
    #[arg(long, default_value_t = 12)]
    stride: usize,
    /// Perturbation mask probability q
    #[arg(long, default_value_t = 0.5)]
    mask_prob: f64,
    /// Perturbation intensity
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Frame-level augmentation (needs --frames)
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    frame_aug: bool,
    /// Video-level augmentation
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    video_aug: bool,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn augmented_instances(
    id: &VideoId,
    videos: &VideoFeatures,
    frames: Option<&FrameFeatures>,
    stats: &NoiseStats,
    cfg: &AugmentConfig,
    rng: &mut rand::rngs::StdRng,
) -> Result<Vec<FeatureVector>> {
    if cfg.enable_frame_level {
        if let Some(seq) = frames.and_then(|ff| ff.by_id.get(id)) {
            return augment_multilevel(seq, stats, cfg, rng);
        }
    }
    // No frame data for this video: augment its pooled feature alone.
    let solo = [videos.require(id)?.clone()];
    let video_only = AugmentConfig { enable_frame_level: false, ..*cfg };
    augment_multilevel(&solo, stats, &video_only, rng)
}

fn cmd_augment(args: &AugmentArgs) -> Result<()> {
    use rand::SeedableRng;

    let videos = datamodel::load_video_features(&args.features)?;
    let frames = args.frames.as_deref().map(datamodel::load_frame_features).transpose()?;
    let cfg = AugmentConfig {
        stride: args.stride,
        mask_prob: args.mask_prob,
        epsilon: args.epsilon,
        enable_frame_level: args.frame_aug && frames.is_some(),
        enable_video_level: args.video_aug,
    };
    cfg.validate()?;

    // Noise statistics come from the train split when one is given,
    // otherwise from every video in the feature file.
    let stat_ids: Vec<VideoId> = match &args.splits {
        Some(path) => {
            let split = datamodel::load_splits(path)?;
            let ids: Vec<VideoId> = split
                .iter()
                .filter(|(_, s)| **s == Split::Train)
                .map(|(id, _)| id.clone())
                .collect();
            if ids.is_empty() {
                return Err(Error::data(format!("{}: no train videos", path.display())));
            }
            ids
        }
        None => videos.by_id.keys().cloned().collect(),
    };
    let stat_feats: Vec<&FeatureVector> = stat_ids
        .iter()
        .map(|v| videos.require(v))
        .collect::<Result<_>>()?;
    let stats = estimate_noise_stats(stat_feats.iter().copied())?;

    let mut rng = rand::rngs::StdRng::seed_from_u64(args.seed);
    let mut out = Output::new(args.out.as_deref())?;
    out.line(&format!("#dim {}", videos.dim))?;
    for id in videos.by_id.keys() {
        let instances = augmented_instances(id, &videos, frames.as_ref(), &stats, &cfg, &mut rng)?;
        for (k, inst) in instances.iter().enumerate() {
            let values = inst.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
            out.line(&format!("{id}#{k}\t{values}"))?;
        }
    }
    out.finish()
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Video-level feature file
    #[arg(long)]
    features: PathBuf,
    /// Relevance ground-truth file (neighbor lists for strategy 2)
    #[arg(long)]
    relevance: PathBuf,
    /// Split assignment file
    #[arg(long)]
    splits: PathBuf,
    /// Split whose videos act as seeds
    #[arg(long, default_value = "test", value_parser = parse_eval_split)]
    eval_split: Split,
    /// Ranking strategy
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    strategy: u8,
    /// Neighbors per candidate used by strategy 2
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Ranked-list length per seed
    #[arg(long, default_value_t = 300)]
    k: usize,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let model = datamodel::load_model(&args.model)?;
    let ds = load_dataset(&args.features, None, &args.relevance, &args.splits)?;
    let candidates = eval::candidate_ids(&ds, args.eval_split);
    let index = build_candidate_index(&model, &ds.videos, &candidates)?;
    let strategy = match args.strategy {
        1 => Strategy::One,
        _ => Strategy::Two { neighbors: eval::neighbor_table(&ds, &candidates), n: args.n },
    };
    let mut out = Output::new(args.out.as_deref())?;
    for seed in ds.table.ids_in(args.eval_split) {
        let ranked = rank_candidates(&index, &seed, &strategy, args.k)?;
        let ids = ranked
            .entries
            .iter()
            .map(|(id, _)| id.as_str())
            .collect::<Vec<_>>()
            .join(",");
        out.line(&format!("{seed}\t{ids}"))?;
    }
    out.finish()
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Video-level feature file
    #[arg(long)]
    features: PathBuf,
    /// Relevance ground-truth file
    #[arg(long)]
    relevance: PathBuf,
    /// Split assignment file
    #[arg(long)]
    splits: PathBuf,
    /// Split whose videos act as seeds
    #[arg(long, default_value = "test", value_parser = parse_eval_split)]
    eval_split: Split,
    /// Ranking strategy
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    strategy: u8,
    /// Neighbors per candidate used by strategy 2
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Write a per-seed metrics CSV here
    #[arg(long)]
    per_seed: Option<PathBuf>,
    /// Output path for the report row (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn metric_columns() -> Vec<String> {
    HIT_KS
        .iter()
        .map(|k| format!("hit@{k}"))
        .chain(RECALL_KS.iter().map(|k| format!("recall@{k}")))
        .collect()
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model = datamodel::load_model(&args.model)?;
    let ds = load_dataset(&args.features, None, &args.relevance, &args.splits)?;
    let spec = match args.strategy {
        1 => StrategySpec::One,
        _ => StrategySpec::Two { n: args.n },
    };
    let report = evaluate(&model, &ds, args.eval_split, spec, args.per_seed.is_some())?;

    let mut out = Output::new(args.out.as_deref())?;
    let mut header = metric_columns().join("\t");
    header.push_str("\tSum");
    out.line(&header)?;
    let mut row = report
        .hit_at
        .iter()
        .chain(report.recall_at.iter())
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join("\t");
    row.push_str(&format!("\t{:.6}", report.sum));
    out.line(&row)?;
    out.finish()?;

    if let Some(path) = &args.per_seed {
        let per = report.per_seed.as_ref().expect("per-seed metrics were requested");
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?);
        let io = |e| Error::file(path, e);
        writeln!(w, "seed,{}", metric_columns().join(",")).map_err(io)?;
        for (seed, sm) in per {
            let values = sm
                .hit_at
                .iter()
                .chain(sm.recall_at.iter())
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{seed},{values}").map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    eprintln!(
        "evaluated {} seed(s), skipped {} without ground truth",
        report.evaluated_seeds, report.skipped_seeds
    );
    Ok(())
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Number of random (model, batch, loss) draws
    #[arg(long, default_value_t = 100)]
    draws: usize,
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let worst = synth::gradient_check(args.draws, args.seed)?;
    println!("max relative gradient error over {} draws: {worst:e}", args.draws);
    Ok(())
}
