//! `sidalign` command-line frontend.
//!
//! Settings resolve as: command-line flag, then the JSON config file named by
//! `--config` or `SIDALIGN_CONFIG`, then the built-in default.

use std::ffi::OsString;
use std::io::{Read as _, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::align::{rerank_json_line, score_episode, AlignConfig, CandidatePolicy};
use crate::backend::{RemoteBackend, RemoteConfig, ScoringBackend, SyntheticModel, SyntheticModelConfig};
use crate::compress::CompressorConfig;
use crate::diagnose::{diagnose_episode, pca_project, DiagnosticsReport};
use crate::error::{Error, Result};
use crate::evalx::experiment::{build_compressor, par_map, LoadedBackend};
use crate::evalx::{evaluate, load_dataset, synth_dataset, to_jsonl, CotStyle};
use crate::mock::{Fixtures, MockServer};
use crate::vocab::Vocabulary;

pub const CONFIG_ENV: &str = "SIDALIGN_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "sidalign", version, about = "Inference-time subspace alignment for semantic-ID recommenders")]
struct Cli {
    /// JSON config file (defaults to $SIDALIGN_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic episode dataset.
    Synth(SynthArgs),
    /// Rerank each episode's candidates with the three-context score.
    Rerank(RerankArgs),
    /// Compare think-off, think-on and aligned rankings.
    Eval(EvalArgs),
    /// Attention dominance metrics and token-embedding projections.
    Diagnose(DiagnoseArgs),
    /// Compress a reasoning chain into one preference sentence.
    Compress(CompressArgs),
    /// Serve canned protocol responses from fixture files.
    MockServer(MockArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long = "items-levels")]
    levels: Option<usize>,
    #[arg(long)]
    codes: Option<u32>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long = "cot-style", default_value = "verbose")]
    cot_style: CotStyle,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the model config, for use as `--backend synth:PATH`.
    #[arg(long = "model-out")]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// `synth`, `synth:MODEL.json` or an http(s) URL.
    #[arg(long)]
    backend: Option<String>,
    /// Vocabulary JSON, required for remote backends.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beams: Option<usize>,
    #[arg(long)]
    returns: Option<usize>,
    /// `expert_beam` or `union_expert_baseline`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long = "compressor-endpoint")]
    compressor_endpoint: Option<String>,
}

#[derive(Debug, Args)]
struct RerankArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "alpha-grid", value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    align: AlignArgs,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Token-embedding PCA projections CSV (synthetic backend only).
    #[arg(long)]
    projections: Option<PathBuf>,
    /// Embedding dimension for the projections.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug, Args)]
struct CompressArgs {
    /// Input file holding one reasoning chain, or `-` for stdin.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MockArgs {
    /// Fixture file; may be repeated.
    #[arg(long = "fixtures", required = true)]
    fixtures: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

/// Config file schema. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    backend: Option<String>,
    vocab: Option<PathBuf>,
    model: Option<SyntheticModelConfig>,
    align: Option<AlignConfig>,
    compressor: Option<CompressorConfig>,
    compressor_endpoint: Option<String>,
    workers: Option<usize>,
    k: Option<Vec<usize>>,
    alpha_grid: Option<Vec<f64>>,
    max_in_flight: Option<usize>,
    timeout_ms: Option<u64>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if path == Path::new("-") {
        std::io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_file_config(explicit: Option<&Path>) -> Result<FileConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => return Ok(FileConfig::default()),
        },
    };
    serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_backend(args: &BackendArgs, file: &FileConfig) -> Result<LoadedBackend> {
    let spec = args.backend.clone().or_else(|| file.backend.clone()).unwrap_or_else(|| "synth".into());
    if spec == "synth" {
        return Ok(LoadedBackend::Synthetic(SyntheticModel::new(file.model.clone().unwrap_or_default())?));
    }
    if let Some(path) = spec.strip_prefix("synth:") {
        let cfg: SyntheticModelConfig = serde_json::from_str(&read_text(Path::new(path))?)
            .map_err(|e| Error::Config(format!("{path}: {e}")))?;
        return Ok(LoadedBackend::Synthetic(SyntheticModel::new(cfg)?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let vocab_path = args
            .vocab
            .clone()
            .or_else(|| file.vocab.clone())
            .ok_or_else(|| Error::Config("a remote backend needs --vocab".into()))?;
        let vocab = Vocabulary::from_json(&read_text(&vocab_path)?)?;
        let defaults = RemoteConfig::default();
        let cfg = RemoteConfig {
            url: spec,
            max_in_flight: file.max_in_flight.unwrap_or(defaults.max_in_flight),
            timeout_ms: file.timeout_ms.unwrap_or(defaults.timeout_ms),
        };
        return Ok(LoadedBackend::Remote(RemoteBackend::new(cfg, vocab)?));
    }
    Err(Error::Config(format!("unrecognized backend `{spec}` (expected synth, synth:PATH or a URL)")))
}

fn workers(args: &BackendArgs, file: &FileConfig) -> usize {
    args.workers.or(file.workers).unwrap_or(1)
}

fn align_config(args: &AlignArgs, file: &FileConfig) -> Result<AlignConfig> {
    let mut cfg = file.align.unwrap_or_default();
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = e;
    }
    if let Some(b) = args.beams {
        cfg.num_beams = b;
    }
    if let Some(r) = args.returns {
        cfg.num_return = r;
    }
    if let Some(p) = &args.policy {
        cfg.candidate_policy = match p.as_str() {
            "expert_beam" => CandidatePolicy::ExpertBeam,
            "union_expert_baseline" => CandidatePolicy::UnionExpertBaseline,
            other => return Err(Error::Config(format!("unknown candidate policy `{other}`"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn compressor_config(budget: Option<usize>, file: &FileConfig) -> CompressorConfig {
    let mut cfg = file.compressor.clone().unwrap_or_default();
    if let Some(b) = budget {
        cfg.budget = b;
    }
    cfg
}

fn run_synth(args: SynthArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = file.model.clone().unwrap_or_default();
    cfg.levels = args.levels.unwrap_or(cfg.levels);
    cfg.codes_per_level = args.codes.unwrap_or(cfg.codes_per_level);
    cfg.clusters = args.clusters.unwrap_or(cfg.clusters);
    cfg.gamma = args.gamma.unwrap_or(cfg.gamma);
    cfg.kappa = args.kappa.unwrap_or(cfg.kappa);
    cfg.seed = args.seed;
    let model = SyntheticModel::new(cfg.clone())?;
    let episodes = synth_dataset(&model, args.episodes, args.cot_style, args.seed);
    write_text(&args.out, &to_jsonl(&episodes, model.vocab()))?;
    if let Some(path) = &args.model_out {
        let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
        write_text(path, &(json + "\n"))?;
    }
    Ok(())
}

fn run_rerank(args: RerankArgs, file: &FileConfig) -> Result<()> {
    let backend = load_backend(&args.backend, file)?;
    let align = align_config(&args.align, file)?;
    let endpoint = args.align.compressor_endpoint.clone().or_else(|| file.compressor_endpoint.clone());
    let compressor = build_compressor(&compressor_config(args.align.budget, file), endpoint.as_deref())?;
    let episodes = load_dataset(&args.data, backend.vocab())?;
    let lines = par_map(workers(&args.backend, file), &episodes, |ep| {
        let ranked = score_episode(backend.as_dyn(), ep, &align, compressor.as_ref())?.rank(align.alpha)?;
        Ok(rerank_json_line(&ep.user, &ranked, backend.vocab()))
    })?;
    let mut out = String::new();
    for l in lines {
        out.push_str(&l);
        out.push('\n');
    }
    write_text(&args.out, &out)
}

fn run_eval(args: EvalArgs, file: &FileConfig) -> Result<()> {
    let backend = load_backend(&args.backend, file)?;
    let align = align_config(&args.align, file)?;
    let endpoint = args.align.compressor_endpoint.clone().or_else(|| file.compressor_endpoint.clone());
    let compressor = build_compressor(&compressor_config(args.align.budget, file), endpoint.as_deref())?;
    let episodes = load_dataset(&args.data, backend.vocab())?;
    let ks = args.k.clone().or_else(|| file.k.clone()).unwrap_or_else(|| vec![1, 5, 10]);
    let alphas = args
        .alpha_grid
        .clone()
        .or_else(|| file.alpha_grid.clone())
        .unwrap_or_else(|| vec![align.alpha]);
    let table = evaluate(
        backend.as_dyn(),
        &episodes,
        &align,
        compressor.as_ref(),
        &ks,
        &alphas,
        workers(&args.backend, file),
    )?;
    write_text(&args.out, &table.to_csv())
}

fn run_diagnose(args: DiagnoseArgs, file: &FileConfig) -> Result<()> {
    let backend = load_backend(&args.backend, file)?;
    let episodes = load_dataset(&args.data, backend.vocab())?;
    let reports = par_map(workers(&args.backend, file), &episodes, |ep| Ok(diagnose_episode(backend.as_dyn(), ep)?))?;
    let mut out = String::from(DiagnosticsReport::csv_header());
    out.push('\n');
    for (on, off) in &reports {
        out.push_str(&on.to_csv_row());
        out.push('\n');
        out.push_str(&off.to_csv_row());
        out.push('\n');
    }
    write_text(&args.out, &out)?;

    if let Some(path) = &args.projections {
        let LoadedBackend::Synthetic(model) = &backend else {
            return Err(Error::Config("--projections needs the synthetic backend".into()));
        };
        let embeddings = model.token_embeddings(args.dim);
        let vectors: Vec<Vec<f64>> = embeddings.iter().map(|(_, _, v)| v.clone()).collect();
        let pca = pca_project(&vectors, 2.min(args.dim))?;
        let mut csv = String::from("token,tag,pc1,pc2\n");
        for ((token, tag, _), p) in embeddings.iter().zip(&pca.projections) {
            let pc2 = p.get(1).copied().unwrap_or(0.0);
            csv.push_str(&format!("{token},{},{},{pc2}\n", tag.as_str(), p[0]));
        }
        write_text(path, &csv)?;
    }
    Ok(())
}

fn run_compress(args: CompressArgs, file: &FileConfig) -> Result<()> {
    let cot = if args.input == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        s
    } else {
        read_text(&args.input)?
    };
    let endpoint = args.endpoint.clone().or_else(|| file.compressor_endpoint.clone());
    let compressor = build_compressor(&compressor_config(args.budget, file), endpoint.as_deref())?;
    let sentence = compressor.compress(&cot)?;
    match &args.out {
        Some(path) => write_text(path, &(sentence + "\n")),
        None => write_text(Path::new("-"), &(sentence + "\n")),
    }
}

fn run_mock(args: MockArgs) -> Result<()> {
    let mut fixtures = Fixtures::default();
    for path in &args.fixtures {
        fixtures.merge(Fixtures::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?);
    }
    let server = MockServer::start(fixtures, &args.bind, args.threads)?;
    eprintln!("mock server listening on {}", server.url());
    server.join();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => run_synth(a, &file),
        Command::Rerank(a) => run_rerank(a, &file),
        Command::Eval(a) => run_eval(a, &file),
        Command::Diagnose(a) => run_diagnose(a, &file),
        Command::Compress(a) => run_compress(a, &file),
        Command::MockServer(a) => run_mock(a),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code: 0 on success, 2 for usage or validation errors, 1 for
/// anything else.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}
