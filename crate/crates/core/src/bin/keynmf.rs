use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use keynmf::infodyn::{DEFAULT_DEGREE, DEFAULT_SPAN, DEFAULT_WINDOW};
use keynmf::keywords::DEFAULT_N_KEYWORDS;
use keynmf::nmf::{Init, SolverConfig};
use keynmf::pipeline::{
    cmd_dynamic, cmd_eval, cmd_fit, cmd_infodyn, cmd_sweep, parse_duration, CorpusOptions, DynamicConfig,
    EmbeddingSource, EvalConfig, EvalOptions, FitConfig, InfodynConfig, KeywordRange, RunManifest, StageError,
    SweepConfig,
};

#[derive(Parser)]
#[command(name = "keynmf", version, about = "Keyword NMF topic models over timestamped corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract keywords, factorize and write a model directory
    Fit(FitArgs),
    /// Per-slice topics and pseudo-distributions from a model directory
    Dynamic(DynamicArgs),
    /// Novelty, transience and resonance from a dynamic directory
    Infodyn(InfodynArgs),
    /// Topic-quality metrics for a model directory
    Eval(EvalArgs),
    /// Metrics over a range of keyword counts
    Sweep(SweepArgs),
    /// fit, dynamic and infodyn in sequence under one output directory
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct CorpusArgs {
    /// Corpus JSONL with id, text, timestamp, source
    #[arg(long)]
    corpus: PathBuf,
    /// Dictionary for longest-match segmentation (default: Unicode word boundaries)
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Keep only the first observation of an id within each time slice
    #[arg(long)]
    dedupe: bool,
}

#[derive(Args, Clone)]
struct SliceArgs {
    /// Slice width such as 6h, 30m or 1d
    #[arg(long, default_value = "6h", value_parser = parse_width)]
    slice_width: Duration,
    /// Slice origin (RFC 3339); defaults to the earliest timestamp truncated to the hour
    #[arg(long, value_parser = parse_origin)]
    origin: Option<DateTime<Utc>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Nndsvd,
    Random,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Number of topics (presets: 10, 25, 50)
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    rel_tol: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Nndsvd)]
    init: InitArg,
    /// Seed for random initialization and for a bare `test` embedder
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            k: self.k,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            init: match self.init {
                InitArg::Nndsvd => Init::Nndsvd,
                InitArg::Random => Init::SeededRandom,
            },
            seed: self.seed,
        }
    }
}

#[derive(Args, Clone)]
struct FitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// precomputed:PATH, http:URL, test:SEED, or test (seeded by --seed)
    #[arg(long)]
    embeddings: String,
    #[arg(long, default_value_t = DEFAULT_N_KEYWORDS)]
    n_keywords: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    slices: SliceArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DynamicArgs {
    /// Directory written by `fit`
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    slices: SliceArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SignalArgs {
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_SPAN)]
    span: usize,
    #[arg(long, default_value_t = DEFAULT_DEGREE)]
    degree: usize,
    /// JSONL of {label, start, end} periods copied into the output
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct InfodynArgs {
    /// Directory written by `dynamic`
    #[arg(long)]
    dynamic: PathBuf,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MetricArgs {
    #[arg(long, default_value_t = keynmf::pipeline::TOP_WORDS)]
    top_words: usize,
    #[arg(long, default_value_t = keynmf::metrics::DEFAULT_NPMI_WINDOW)]
    npmi_window: usize,
    #[arg(long, default_value_t = keynmf::metrics::DEFAULT_INTERNAL_DIM)]
    internal_dim: usize,
    #[arg(long, default_value_t = keynmf::metrics::DEFAULT_PPMI_WINDOW)]
    ppmi_window: usize,
}

impl MetricArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            top_words: self.top_words,
            npmi_window: self.npmi_window,
            internal_dim: self.internal_dim,
            ppmi_window: self.ppmi_window,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `fit`
    #[arg(long)]
    model: PathBuf,
    /// External embeddings (default: the source the model was fitted with)
    #[arg(long)]
    embeddings: Option<String>,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Keyword counts as START..END[:STEP], inclusive
    #[arg(long, default_value = "5..100:5")]
    n_range: String,
    #[command(flatten)]
    metrics: MetricArgs,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    signal: SignalArgs,
}

fn parse_width(s: &str) -> Result<Duration, String> {
    parse_duration(s).map_err(|e| e.to_string())
}

fn parse_origin(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn embeddings(spec: &str, seed: u64) -> Result<EmbeddingSource, Failure> {
    if spec == "test" {
        return Ok(EmbeddingSource::Test(seed));
    }
    spec.parse()
        .map_err(|e: keynmf::Error| Failure::Usage(format!("--embeddings: {e}")))
}

impl FitArgs {
    fn config(&self) -> Result<FitConfig, Failure> {
        Ok(FitConfig {
            input: CorpusOptions {
                corpus: self.corpus.corpus.clone(),
                lexicon: self.corpus.lexicon.clone(),
                stopwords: self.corpus.stopwords.clone(),
                dedupe: self.corpus.dedupe,
                slice_width: self.slices.slice_width,
                origin: self.slices.origin,
            },
            embeddings: embeddings(&self.embeddings, self.solver.seed)?,
            n_keywords: self.n_keywords,
            solver: self.solver.config(),
        })
    }
}

impl SignalArgs {
    fn config(&self, dynamic_dir: PathBuf) -> InfodynConfig {
        InfodynConfig {
            dynamic_dir,
            window: self.window,
            span: self.span,
            degree: self.degree,
            events: self.events.clone(),
        }
    }
}

fn report(manifest: &RunManifest, out: &Path) {
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {}", out.display());
}

fn fit(args: &FitArgs, out: &Path) -> Result<(), Failure> {
    let res = cmd_fit(&args.config()?, out)?;
    for (t, words) in res.top_words.iter().enumerate() {
        println!("topic {t}: {}", words.join(" "));
    }
    report(&res.manifest, out);
    Ok(())
}

fn dynamic(model: &Path, slices: &SliceArgs, out: &Path) -> Result<(), Failure> {
    let cfg = DynamicConfig {
        model_dir: model.to_path_buf(),
        slice_width: slices.slice_width,
        origin: slices.origin,
    };
    let res = cmd_dynamic(&cfg, out)?;
    println!("{} slices, k = {}", res.model.n_slices(), res.model.k());
    report(&res.manifest, out);
    Ok(())
}

fn infodyn(cfg: &InfodynConfig, out: &Path) -> Result<(), Failure> {
    let res = cmd_infodyn(cfg, out)?;
    let defined = res.signals.resonance.iter().flatten().count();
    println!("{} time points, {defined} with resonance defined", res.signals.len());
    report(&res.manifest, out);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit(a) => fit(&a, &a.out),
        Command::Dynamic(a) => dynamic(&a.model, &a.slices, &a.out),
        Command::Infodyn(a) => infodyn(&a.signal.config(a.dynamic.clone()), &a.out),
        Command::Eval(a) => {
            let cfg = EvalConfig {
                model_dir: a.model.clone(),
                embeddings: a.embeddings.as_deref().map(|s| embeddings(s, 0)).transpose()?,
                options: a.metrics.options(),
            };
            let res = cmd_eval(&cfg, &a.out)?;
            println!("{}", serde_json::to_string_pretty(&res.report).expect("serializable"));
            report(&res.manifest, &a.out);
            Ok(())
        }
        Command::Sweep(a) => {
            let range: KeywordRange = a
                .n_range
                .parse()
                .map_err(|e: keynmf::Error| Failure::Usage(format!("--n-range: {e}")))?;
            let cfg = SweepConfig {
                fit: a.fit.config()?,
                range,
                options: a.metrics.options(),
            };
            let res = cmd_sweep(&cfg, &a.fit.out)?;
            for r in &res.rows {
                println!("N = {:3}  d = {:.4}  c_npmi = {:?}", r.n_keywords, r.diversity, r.c_npmi);
            }
            report(&res.manifest, &a.fit.out);
            Ok(())
        }
        Command::Run(a) => {
            if a.signal.window == 0 {
                return Err(Failure::Usage("--window must be at least 1".into()));
            }
            let root = &a.fit.out;
            let (model, dyn_dir, sig_dir) = (root.join("model"), root.join("dynamic"), root.join("signals"));
            fit(&a.fit, &model)?;
            dynamic(&model, &a.fit.slices, &dyn_dir)?;
            infodyn(&a.signal.config(dyn_dir.clone()), &sig_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
