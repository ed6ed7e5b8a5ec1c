use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use semvad::fusion::FusedScores;
use semvad::ingest::{self, Dataset, VideoManifest};
use semvad::pipeline::{self, PipelineConfig, PipelineError, VideoScores};
use semvad::s3m::{self, InitMode, S3mParams};
use semvad::spa::SpaModel;
use semvad::synth::{self, SynthConfig};
use semvad::tracker::Track;

const TRACKS_FILE: &str = "tracks.jsonl";
const SPA_MODEL_FILE: &str = "spa_model.json";
const S3M_MODEL_FILE: &str = "s3m_model.bin";
const LOSS_LOG_FILE: &str = "loss_log.csv";
const SCORES_FILE: &str = "scores.csv";
const REPORT_FILE: &str = "report.json";
const ROC_FILE: &str = "roc.csv";
const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";

/// Object-level video anomaly scoring on precomputed detections.
///
/// Settings are resolved as built-in defaults, then the `--config` file,
/// then command-line flags. Log verbosity follows RUST_LOG (default info).
#[derive(Parser)]
#[command(name = "semvad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and check every file against the format.
    Validate(Opts),
    /// Build tracks for every video.
    Track(Opts),
    /// Fit the caption-frequency model on the training split.
    SpaFit(Opts),
    /// Train the temporal model on clips of the training tracks.
    S3mTrain(Opts),
    /// Score test videos with the fitted models.
    Score(Opts),
    /// Frame-level AUC and AP of the scored test videos.
    Eval(Opts),
    /// Write a synthetic dataset with known anomalies.
    Synth(SynthOpts),
    /// All stages from tracking to evaluation.
    Run(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    /// Config file, TOML or JSON (by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output root; each stage writes under <out>/<stage>/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    state_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = ["gaussian", "hippo"])]
    init: Option<String>,
    /// Weight of the static channel in the fused score.
    #[arg(long)]
    lambda: Option<f64>,
    /// Smoothing kernel width in frames.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SynthOpts {
    /// Destination dataset root.
    dir: PathBuf,
    /// Generator config, TOML or JSON. Defaults to the acceptance instance.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Opts {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        set!(self.seed => seed);
        set!(self.clip_len => clip.length);
        set!(self.stride => clip.stride);
        set!(self.alpha => spa.alpha);
        set!(self.state_dim => s3m.state_dim);
        set!(self.epochs => s3m.epochs);
        set!(self.lr => s3m.lr0);
        set!(self.lambda => fusion.lambda);
        set!(self.sigma => fusion.sigma);
        if let Some(init) = &self.init {
            cfg.s3m.init_mode = if init == "hippo" {
                InitMode::Hippo
            } else {
                InitMode::Gaussian
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Resolved paths and config of one invocation.
struct Ctx {
    cfg: PipelineConfig,
    data: PathBuf,
    out: PathBuf,
}

impl Ctx {
    fn new(opts: &Opts, needs_out: bool) -> Result<Self> {
        let cfg = opts.resolve()?;
        let Some(data) = cfg.data.clone() else {
            bail!("no dataset root: pass --data or set `data` in the config");
        };
        if !data.is_dir() {
            bail!("dataset root {} does not exist", data.display());
        }
        let out = match (&cfg.out, needs_out) {
            (Some(o), _) => o.clone(),
            (None, false) => PathBuf::new(),
            (None, true) => bail!("no output root: pass --out or set `out` in the config"),
        };
        if needs_out {
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            ingest::write_json(&out.join(EFFECTIVE_CONFIG_FILE), &cfg)?;
        }
        Ok(Ctx { cfg, data, out })
    }

    fn stage(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.out.join(stage);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let ds = Dataset::load(&self.data)?;
        info!(
            "dataset {}: {} train, {} test videos",
            self.data.display(),
            ds.train.len(),
            ds.test.len()
        );
        Ok(ds)
    }
}

fn need(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {}: run `semvad {producer}` first", path.display());
    }
    Ok(())
}

fn write_tracks(ctx: &Ctx, ds: &Dataset) -> Result<Vec<Vec<Track>>> {
    let stage = ctx.stage("track")?;
    let mut all = Vec::new();
    for v in ds.videos() {
        let tracks = pipeline::track_video(v, &ctx.cfg);
        let dir = stage.join(&v.video_id);
        fs::create_dir_all(&dir)?;
        ingest::write_jsonl(&dir.join(TRACKS_FILE), &tracks)?;
        info!("{}: {} tracks", v.video_id, tracks.len());
        all.push(tracks);
    }
    Ok(all)
}

fn read_tracks(ctx: &Ctx, videos: &[VideoManifest]) -> Result<Vec<Vec<Track>>> {
    videos
        .iter()
        .map(|v| {
            let path = ctx.out.join("track").join(&v.video_id).join(TRACKS_FILE);
            need(&path, "track")?;
            Ok(ingest::read_jsonl(&path)?)
        })
        .collect()
}

fn fit_spa(ctx: &Ctx, ds: &Dataset) -> Result<SpaModel> {
    let model = pipeline::fit_spa(&ds.pool, &ds.train, &ctx.cfg.spa)?;
    model.save(&ctx.stage("spa")?.join(SPA_MODEL_FILE))?;
    info!("spa: selected prompt {:?}", model.prompt_id);
    Ok(model)
}

fn train_s3m(ctx: &Ctx, ds: &Dataset, train_tracks: &[Vec<Track>]) -> Result<S3mParams> {
    let pairs: Vec<(&VideoManifest, &[Track])> = ds
        .train
        .iter()
        .zip(train_tracks)
        .map(|(v, t)| (v, t.as_slice()))
        .collect();
    let outcome = pipeline::train_s3m(&pairs, &ctx.cfg)?;
    let stage = ctx.stage("s3m")?;
    let path = stage.join(S3M_MODEL_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    s3m::write_params(BufWriter::new(file), &outcome.params)?;
    fs::write(stage.join(LOSS_LOG_FILE), pipeline::loss_log_csv(&outcome.log))?;
    if let Some(last) = outcome.log.last() {
        info!("s3m: epoch {} mean loss {:.6}", last.epoch, last.mean_loss);
    }
    Ok(outcome.params)
}

fn write_scores(ctx: &Ctx, scores: &[VideoScores]) -> Result<()> {
    let stage = ctx.stage("score")?;
    for s in scores {
        let dir = stage.join(&s.video_id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(SCORES_FILE), pipeline::scores_csv(&s.combined))?;
    }
    Ok(())
}

fn write_eval(ctx: &Ctx, ds: &Dataset, scores: &[FusedScores]) -> Result<()> {
    let videos: Vec<&VideoManifest> = ds.test.iter().collect();
    if videos.is_empty() {
        bail!("labels required: the dataset has no test videos");
    }
    if let Some(v) = videos.iter().find(|v| v.labels.is_none()) {
        return Err(PipelineError::LabelsRequired(v.video_id.clone()).into());
    }
    let report = pipeline::evaluate(scores, &videos, &ctx.cfg.fusion, &ctx.cfg.eval)?;
    let stage = ctx.stage("eval")?;
    ingest::write_json(&stage.join(REPORT_FILE), &report)?;
    fs::write(stage.join(ROC_FILE), pipeline::roc_csv(&report.roc))?;
    println!(
        "auc {:.4}  ap {:.4}  auc_static {:.4}  auc_temporal {:.4}",
        report.auc, report.ap, report.auc_static, report.auc_temporal
    );
    Ok(())
}

fn cmd_validate(opts: &Opts) -> Result<()> {
    let ctx = Ctx::new(opts, false)?;
    let ds = ctx.load_dataset()?;
    let detections: usize = ds.videos().map(|v| v.detections.len()).sum();
    let labeled = ds.test.iter().filter(|v| v.labels.is_some()).count();
    println!(
        "ok: {} train + {} test videos ({} labeled), {} detections, feature dim {}, {} prompts",
        ds.train.len(),
        ds.test.len(),
        labeled,
        detections,
        ds.feature_dim().map_or("-".to_string(), |d| d.to_string()),
        ds.pool.prompts.len()
    );
    Ok(())
}

fn cmd_score(opts: &Opts) -> Result<()> {
    let ctx = Ctx::new(opts, true)?;
    let ds = ctx.load_dataset()?;
    let tracks = read_tracks(&ctx, &ds.test)?;
    let spa_path = ctx.out.join("spa").join(SPA_MODEL_FILE);
    need(&spa_path, "spa-fit")?;
    let spa = SpaModel::load(&spa_path)?;
    let s3m_path = ctx.out.join("s3m").join(S3M_MODEL_FILE);
    need(&s3m_path, "s3m-train")?;
    let file = fs::File::open(&s3m_path)?;
    let params = s3m::read_params(std::io::BufReader::new(file))?;
    let scores = pipeline::score_videos(&ds.test, &tracks, &spa, &params, &ctx.cfg)?;
    write_scores(&ctx, &scores)
}

fn cmd_eval(opts: &Opts) -> Result<()> {
    let ctx = Ctx::new(opts, true)?;
    let ds = ctx.load_dataset()?;
    if let Some(v) = ds.test.iter().find(|v| v.labels.is_none()) {
        return Err(PipelineError::LabelsRequired(v.video_id.clone()).into());
    }
    let scores = ds
        .test
        .iter()
        .map(|v| {
            let path = ctx.out.join("score").join(&v.video_id).join(SCORES_FILE);
            need(&path, "score")?;
            let text = fs::read_to_string(&path)?;
            let s = pipeline::parse_scores_csv(&v.video_id, &text)?;
            if s.fused.len() != v.frame_count {
                bail!(
                    "{}: {} rows for {} frames",
                    path.display(),
                    s.fused.len(),
                    v.frame_count
                );
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    write_eval(&ctx, &ds, &scores)
}

fn cmd_run(opts: &Opts) -> Result<()> {
    let start = Instant::now();
    let ctx = Ctx::new(opts, true)?;
    let ds = ctx.load_dataset()?;
    let tracks = write_tracks(&ctx, &ds)?;
    let (train_tracks, test_tracks) = tracks.split_at(ds.train.len());
    let spa = fit_spa(&ctx, &ds)?;
    let params = train_s3m(&ctx, &ds, train_tracks)?;
    let scores = pipeline::score_videos(&ds.test, test_tracks, &spa, &params, &ctx.cfg)?;
    write_scores(&ctx, &scores)?;
    if ds.test.iter().all(|v| v.labels.is_some()) && !ds.test.is_empty() {
        let fused: Vec<FusedScores> = scores.into_iter().map(|s| s.combined).collect();
        write_eval(&ctx, &ds, &fused)?;
    } else {
        info!("test videos without labels: skipping evaluation");
    }
    info!("run finished in {:.1?}", start.elapsed());
    Ok(())
}

fn cmd_synth(opts: &SynthOpts) -> Result<()> {
    let mut cfg: SynthConfig = match &opts.config {
        Some(p) => pipeline::parse_config_file(p)?,
        None => SynthConfig::acceptance(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let ds = synth::generate(&cfg)?;
    ds.write(&opts.dir)?;
    println!(
        "wrote {} train + {} test videos to {}",
        ds.dataset.train.len(),
        ds.dataset.test.len(),
        opts.dir.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(o) => cmd_validate(&o),
        Command::Track(o) => {
            let ctx = Ctx::new(&o, true)?;
            let ds = ctx.load_dataset()?;
            write_tracks(&ctx, &ds).map(|_| ())
        }
        Command::SpaFit(o) => {
            let ctx = Ctx::new(&o, true)?;
            let ds = ctx.load_dataset()?;
            fit_spa(&ctx, &ds).map(|_| ())
        }
        Command::S3mTrain(o) => {
            let ctx = Ctx::new(&o, true)?;
            let ds = ctx.load_dataset()?;
            let tracks = read_tracks(&ctx, &ds.train)?;
            train_s3m(&ctx, &ds, &tracks).map(|_| ())
        }
        Command::Score(o) => cmd_score(&o),
        Command::Eval(o) => cmd_eval(&o),
        Command::Synth(o) => cmd_synth(&o),
        Command::Run(o) => cmd_run(&o),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
