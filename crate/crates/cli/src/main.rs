use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastvc::audio::Waveform;
use fastvc::checkpoint::Checkpoint;
use fastvc::config::RunConfig;
use fastvc::corpus::{load_manifest, Dataset, SpeakerRegistry, Split};
use fastvc::pipeline::{FastVc, VocoderKind};
use fastvc::prepare::prepare_corpus;
use fastvc::probes::{
    bench_rtf, encode_dataset, objective_eval, phoneme_probe, speaker_independence_report, write_report,
    ExternalScorer, Report,
};
use fastvc::synth::{synthetic_dataset, write_synthetic_corpus, SynthConfig};
use fastvc::training::{AdversarialMode, AdversarialTrainer, MetricsLog, Stage1Trainer};
use log::{info, warn};

const PRESETS: &[(&str, &str)] = &[
    ("smoke", include_str!("../../../configs/smoke.toml")),
    ("vcc20", include_str!("../../../configs/vcc20.toml")),
    ("bottleneck-autovc", include_str!("../../../configs/bottleneck-autovc.toml")),
    ("latent-10hz", include_str!("../../../configs/latent-10hz.toml")),
    ("adv-speaker", include_str!("../../../configs/adv-speaker.toml")),
    ("e2e", include_str!("../../../configs/e2e.toml")),
    ("learnable-mel", include_str!("../../../configs/learnable-mel.toml")),
];

#[derive(Parser)]
#[command(name = "fastvc", version, about = "Voice conversion: data prep, training, conversion, probes, evaluation, benchmark")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (see `fastvc presets`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one setting, e.g. `--set stage1.max_steps=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resample a manifest's audio to the model rate and write the cache.
    Prepare(PrepareArgs),
    /// Run a training stage.
    Train(TrainArgs),
    /// Convert one file between speakers.
    Convert(ConvertArgs),
    /// Latent-space probes.
    Probe(ProbeArgs),
    /// Objective metrics over waveform pairs.
    Eval(EvalArgs),
    /// Real-time-factor benchmark.
    Bench(BenchArgs),
    /// Print the merged configuration as TOML.
    ShowConfig,
    /// List built-in presets.
    Presets,
}

#[derive(Args)]
struct PrepareArgs {
    /// Input manifest (defaults to `paths.manifest`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (defaults to the cache directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generate a synthetic two-speaker corpus instead of reading a manifest.
    #[arg(long, conflicts_with = "manifest")]
    synthetic: bool,
    #[arg(long, default_value_t = 2, requires = "synthetic")]
    speakers: usize,
    #[arg(long, default_value_t = 4, requires = "synthetic")]
    utterances: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    /// Autoencoder reconstruction training.
    Ae,
    /// End-to-end adversarial training (needs `--init`).
    E2e,
    /// Vocoder-only adversarial training.
    Vocoder,
}

impl StageArg {
    fn name(self) -> &'static str {
        match self {
            StageArg::Ae => "ae",
            StageArg::E2e => "e2e",
            StageArg::Vocoder => "vocoder",
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    stage: StageArg,
    /// Prepared manifest (defaults to `<cache>/manifest.jsonl`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue a run of the same stage from this checkpoint.
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Warm-start checkpoint for the adversarial stages.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output directory (defaults to `<out_dir>/<name>/<stage>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    source: String,
    #[arg(long)]
    target: String,
    #[arg(long)]
    output: PathBuf,
    /// Griffin-Lim instead of the neural vocoder.
    #[arg(long)]
    griffin_lim: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Phoneme,
    Speaker,
}

#[derive(Args)]
struct ProbeArgs {
    kind: ProbeKind,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory (defaults to `<out_dir>/<name>/reports`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// File of `reference.wav degraded.wav` lines.
    #[arg(long, conflicts_with = "ckpt")]
    pairs: Option<PathBuf>,
    /// Self-reconstruction pairs from the test split through this checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Most test utterances to convert.
    #[arg(long, default_value_t = 100)]
    limit: usize,
    /// Longest test utterance to use, in seconds.
    #[arg(long, default_value_t = 5.0)]
    max_seconds: f64,
    /// Scorer executable (overrides `eval.external_scorer`).
    #[arg(long)]
    scorer: Option<PathBuf>,
    #[arg(long)]
    griffin_lim: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Model to time; a freshly initialized one from the configuration otherwise.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Audio to convert; a synthetic utterance otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Length of the synthetic input.
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    griffin_lim: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> fastvc::Result<RunConfig> {
    match (&cli.config, &cli.preset) {
        (Some(path), _) => RunConfig::load(path, &cli.set),
        (None, Some(name)) => {
            let text = PRESETS
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                    fastvc::Error::Argument(format!("unknown preset {name:?}; known: {}", known.join(", ")))
                })?;
            RunConfig::from_toml_str(text, &cli.set)
        }
        (None, None) => RunConfig::from_toml_str("", &cli.set),
    }
}

fn data_manifest(arg: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    arg.clone().unwrap_or_else(|| cfg.cache_dir().join("manifest.jsonl"))
}

fn load_data(path: &Path, cfg: &RunConfig) -> fastvc::Result<Dataset> {
    info!("loading {}", path.display());
    let m = load_manifest(path, cfg.seed, cfg.data.train_fraction)?;
    Dataset::load(&m)
}

fn run_dir(arg: &Option<PathBuf>, cfg: &RunConfig, leaf: &str) -> PathBuf {
    arg.clone().unwrap_or_else(|| cfg.paths.out_dir.join(&cfg.name).join(leaf))
}

fn emit<R: Report>(dir: &Path, stem: &str, report: &R, cfg: &RunConfig) -> fastvc::Result<()> {
    let (json, text) = write_report(dir, stem, report, cfg)?;
    eprint!("{}", report.to_text());
    info!("wrote {} and {}", json.display(), text.display());
    Ok(())
}

fn vocoder_kind(griffin_lim: bool, cfg: &RunConfig) -> VocoderKind {
    if griffin_lim {
        VocoderKind::GriffinLim {
            iters: cfg.eval.griffin_lim_iters,
        }
    } else {
        VocoderKind::Neural
    }
}

fn cmd_prepare(args: &PrepareArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let out = args.out.clone().unwrap_or_else(|| cfg.cache_dir());
    let manifest = if args.synthetic {
        let synth = SynthConfig {
            n_speakers: args.speakers,
            utterances_per_speaker: args.utterances,
            seed: cfg.seed,
            ..SynthConfig::default()
        };
        write_synthetic_corpus(&out.join("raw"), &synth)?
    } else {
        args.manifest
            .clone()
            .or_else(|| cfg.paths.manifest.clone())
            .ok_or_else(|| fastvc::Error::Argument("no manifest: pass --manifest or set paths.manifest".into()))?
    };
    let p = prepare_corpus(&manifest, &out, cfg)?;
    info!(
        "prepared {} utterances: {}, {}, {}",
        p.n_utterances,
        p.manifest.display(),
        p.registry.display(),
        p.splits.display()
    );
    Ok(())
}

struct CheckpointWriter {
    dir: PathBuf,
    stage: &'static str,
}

impl CheckpointWriter {
    fn save(&self, ck: &Checkpoint) -> fastvc::Result<()> {
        let path = self
            .dir
            .join(format!("{}-e{:05}-s{:07}.ckpt", self.stage, ck.header.epoch, ck.header.step));
        ck.save(&path)?;
        ck.save(&self.dir.join(format!("{}-latest.ckpt", self.stage)))?;
        info!("epoch {} step {}: wrote {}", ck.header.epoch, ck.header.step, path.display());
        Ok(())
    }
}

fn log_final(log: &MetricsLog, terms: &[&str]) {
    for t in terms {
        if let Some(v) = log.last(t) {
            info!("final {t} = {v:.6}");
        }
    }
}

fn cmd_train(args: &TrainArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let data = load_data(&data_manifest(&args.data, cfg), cfg)?;
    let dir = run_dir(&args.out, cfg, args.stage.name());
    std::fs::create_dir_all(&dir).map_err(|e| fastvc::Error::Load(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)
        .map_err(|e| fastvc::Error::Load(format!("{}: {e}", dir.display())))?;
    let writer = CheckpointWriter {
        dir: dir.clone(),
        stage: args.stage.name(),
    };
    let metrics = dir.join("metrics.csv");
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    match args.stage {
        StageArg::Ae => {
            if args.init.is_some() {
                return Err(fastvc::Error::Argument("stage ae starts fresh; use --resume to continue".into()));
            }
            let mut t = match &resume {
                Some(ck) => Stage1Trainer::resume_with(ck, cfg)?,
                None => Stage1Trainer::new(FastVc::new(cfg, data.registry.clone())?)?,
            };
            info!("stage ae from epoch {} step {}", t.epoch(), t.step());
            t.run(&data, |ck| writer.save(ck))?;
            log_final(t.log(), &["total", "recon_pre", "recon_post", "content"]);
            t.log().append_to(&metrics)?;
        }
        StageArg::E2e | StageArg::Vocoder => {
            let mode = match args.stage {
                StageArg::E2e => AdversarialMode::EndToEnd,
                _ => AdversarialMode::Vocoder,
            };
            let mut t = match &resume {
                Some(ck) => AdversarialTrainer::resume(ck, cfg)?,
                None => {
                    let init = args.init.as_deref().map(Checkpoint::load).transpose()?;
                    AdversarialTrainer::new(mode, cfg, init.as_ref(), Some(data.registry.clone()))?
                }
            };
            info!("stage {} from epoch {} step {}", args.stage.name(), t.epoch(), t.step());
            t.run(&data, |ck| writer.save(ck))?;
            log_final(t.log(), &["d_loss", "g_adversarial", "g_content_weighted", "g_total"]);
            t.log().append_to(&metrics)?;
        }
    }
    info!("metrics appended to {}", metrics.display());
    Ok(())
}

fn cmd_convert(args: &ConvertArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let model = FastVc::from_checkpoint(&Checkpoint::load(&args.ckpt)?)?;
    let input = Waveform::read(&args.input)?;
    let out = model.convert(&input, &args.source, &args.target, vocoder_kind(args.griffin_lim, cfg))?;
    out.waveform.write_pcm16(&args.output)?;
    let secs = out.timings.total().as_secs_f64();
    info!(
        "wrote {} ({:.2}s of audio in {secs:.3}s, rtf {:.2})",
        args.output.display(),
        out.waveform.duration_secs(),
        out.waveform.duration_secs() / secs
    );
    Ok(())
}

fn cmd_probe(args: &ProbeArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let model = FastVc::from_checkpoint(&Checkpoint::load(&args.ckpt)?)?;
    let data = load_data(&data_manifest(&args.data, cfg), cfg)?;
    let dir = run_dir(&args.out, cfg, "reports");
    match args.kind {
        ProbeKind::Phoneme => {
            let r = phoneme_probe(&model, &data, &cfg.probe)?;
            if r.n_classes != 41 {
                info!(
                    "{} phoneme classes; a 2.44% random baseline corresponds to 41",
                    r.n_classes
                );
            }
            emit(&dir, "phoneme_probe", &r, cfg)
        }
        ProbeKind::Speaker => {
            let codes = encode_dataset(&model, &data)?;
            let r = speaker_independence_report(&codes, &data.registry, &cfg.probe)?;
            emit(&dir, "speaker_probe", &r, cfg)
        }
    }
}

fn read_pairs(path: &Path) -> fastvc::Result<Vec<(Waveform, Waveform)>> {
    let text = std::fs::read_to_string(path).map_err(|e| fastvc::Error::Load(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [r, d] = parts[..] else {
            return Err(fastvc::Error::Validation(format!(
                "{} line {}: expected `reference degraded`",
                path.display(),
                i + 1
            )));
        };
        pairs.push((Waveform::read(base.join(r))?, Waveform::read(base.join(d))?));
    }
    Ok(pairs)
}

fn cmd_eval(args: &EvalArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let pairs = match (&args.pairs, &args.ckpt) {
        (Some(p), _) => read_pairs(p)?,
        (None, Some(ck)) => {
            let model = FastVc::from_checkpoint(&Checkpoint::load(ck)?)?;
            let data = load_data(&data_manifest(&args.data, cfg), cfg)?;
            let kind = vocoder_kind(args.griffin_lim, cfg);
            let mut pairs = Vec::new();
            for u in data.split(Split::Test) {
                if pairs.len() == args.limit {
                    break;
                }
                if u.waveform.duration_secs() >= args.max_seconds {
                    continue;
                }
                let spk = &data.registry.names()[u.speaker];
                let out = model.convert(&u.waveform, spk, spk, kind)?;
                pairs.push((u.waveform.clone(), out.waveform));
            }
            pairs
        }
        (None, None) => return Err(fastvc::Error::Argument("pass --pairs or --ckpt".into())),
    };
    if pairs.is_empty() {
        return Err(fastvc::Error::Argument("no pairs to evaluate".into()));
    }
    let program = args.scorer.clone().or_else(|| cfg.eval.external_scorer.clone());
    let scorer = program.map(|p| ExternalScorer::new(cfg.eval.external_metric_name.clone(), p));
    let table = objective_eval(&pairs, &cfg.melfront, scorer.as_ref())?;
    for m in table.metrics.iter().filter(|m| !m.available) {
        warn!("{} unavailable: {}", m.name, m.note.as_deref().unwrap_or(""));
    }
    emit(&run_dir(&args.out, cfg, "reports"), "objective", &table, cfg)
}

fn cmd_bench(args: &BenchArgs, cfg: &RunConfig) -> fastvc::Result<()> {
    let model = match &args.ckpt {
        Some(p) => FastVc::from_checkpoint(&Checkpoint::load(p)?)?,
        None => {
            let names = (0..2).map(fastvc::synth::speaker_name);
            FastVc::new(cfg, SpeakerRegistry::from_names(names))?
        }
    };
    let input = match &args.input {
        Some(p) => Waveform::read(p)?,
        None => {
            let sr = model.config.melfront.sample_rate;
            let n = (args.seconds * sr as f64).round() as usize;
            let data = synthetic_dataset(&SynthConfig::default())?;
            let samples: Vec<f32> = data
                .utterances
                .iter()
                .flat_map(|u| u.waveform.samples.iter().copied())
                .cycle()
                .take(n)
                .collect();
            Waveform::new(samples, sr)?
        }
    };
    let repeats = args.repeats.unwrap_or(cfg.bench.repeats);
    let r = bench_rtf(&input, &model, repeats, vocoder_kind(args.griffin_lim, cfg))?;
    emit(&run_dir(&args.out, cfg, "reports"), "bench", &r, cfg)
}

fn run(cli: &Cli) -> fastvc::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Convert(a) => cmd_convert(a, &cfg),
        Command::Probe(a) => cmd_probe(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Bench(a) => {
            if !cfg.bench.parallel {
                // Must happen before the first tensor op starts the thread pool.
                std::env::set_var("RAYON_NUM_THREADS", "1");
            }
            cmd_bench(a, &cfg)
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
