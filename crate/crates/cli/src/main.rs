mod backend;
mod records;

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use memcap::bleu;
use memcap::concept::{ClusterConfig, DEFAULT_MAX_CONCEPTS};
use memcap::fusion::FusionWeights;
use memcap::gateway::ImageInput;
use memcap::memory::MemoryIndex;
use memcap::pipeline::{Captioner, PipelineConfig, PipelineError};
use memcap::refine::{DecodeConfig, DEFAULT_PREFIX};
use memcap::triplet::TripletStore;

use backend::{Backend, BackendKind};
use records::{CaptionRecord, ErrorInfo, ErrorRecord, InspectDocument, ReferenceLine, ResultLine, TraceLine};

#[derive(Debug, Parser)]
#[command(name = "memcap", version, about = "Memory-augmented zero-shot image captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a caption corpus (one caption per line) into an index file.
    BuildMemory {
        corpus: PathBuf,
        out: PathBuf,
        #[arg(long, default_value = "corpus")]
        tag: String,
        #[command(flatten)]
        backend: BackendArgs,
        /// Embedding size of the mock backend.
        #[arg(long, default_value_t = memcap::memory::DEFAULT_DIMENSION)]
        dim: usize,
    },
    /// Caption one image or every file in a directory; JSON lines on stdout.
    Caption {
        input: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Write one decision record per filled mask to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Images captioned concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print retrieval, parsing and concept selection for one image.
    Inspect {
        image: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Also run refinement.
        #[arg(long)]
        full: bool,
    },
    /// Corpus BLEU-4 of caption results against references.
    EvalBleu { results: PathBuf, references: PathBuf },
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Seed of the mock backend.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sidecar base URL; defaults to MEACAP_SIDECAR_URL.
    #[arg(long)]
    sidecar_url: Option<String>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = 5)]
    n_retrieve: usize,
    #[arg(long, default_value_t = 200)]
    k_w: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f32,
    #[arg(long, default_value_t = 0.4)]
    beta: f32,
    #[arg(long, default_value_t = 0.2)]
    gamma: f32,
    /// Concept merge threshold; 0.55 suits web-scale memories.
    #[arg(long, default_value_t = 0.6)]
    tau: f32,
    #[arg(long, default_value_t = 0.5)]
    cf_threshold: f32,
    #[arg(long, default_value_t = DEFAULT_MAX_CONCEPTS)]
    max_concepts: usize,
    #[arg(long, default_value_t = 15)]
    max_iters: usize,
    #[arg(long, default_value = DEFAULT_PREFIX)]
    prefix: String,
    /// Refine without a prefix.
    #[arg(long, conflicts_with = "prefix")]
    no_prefix: bool,
    /// JSON-lines file of precomputed triplets.
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Abort on a malformed triplet line instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Io(String),
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Backend(m) => m,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig<f32>, CliError> {
        let cluster = ClusterConfig::new(self.tau, self.cf_threshold, self.max_concepts)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let weights =
            FusionWeights::new(self.alpha, self.beta, self.gamma).map_err(|e| CliError::Usage(e.to_string()))?;
        let decode = DecodeConfig {
            k_w: self.k_w,
            n_d: self.n_retrieve,
            max_iterations: self.max_iters,
            prefix: if self.no_prefix || self.prefix.trim().is_empty() {
                None
            } else {
                Some(self.prefix.clone())
            },
            weights,
        };
        decode.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(PipelineConfig { cluster, decode })
    }

    fn triplet_store(&self) -> Result<Option<TripletStore>, CliError> {
        let Some(path) = &self.triplets else { return Ok(None) };
        let store = TripletStore::load(path, self.strict).map_err(|e| CliError::io(path, e))?;
        for w in store.warnings() {
            log::warn!("{}: {w}", path.display());
        }
        Ok(Some(store))
    }
}

fn open_backend(args: &BackendArgs, dim: usize) -> Result<Backend, CliError> {
    Backend::open(args.backend, args.seed, Some(dim), args.sidecar_url.as_deref())
        .map_err(|e| CliError::Backend(e.to_string()))
}

fn load_index(path: &Path) -> Result<MemoryIndex<f32>, CliError> {
    MemoryIndex::load(path).map_err(|e| CliError::io(path, e))
}

fn read_image(path: &Path) -> Result<ImageInput, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let hint = path.extension().map(|e| e.to_string_lossy().to_lowercase());
    ImageInput::new(bytes, hint).map_err(|e| CliError::io(path, e))
}

/// Files of a directory in name order, or the path itself.
fn image_paths(input: &Path) -> Result<(Vec<PathBuf>, bool), CliError> {
    let meta = fs::metadata(input).map_err(|e| CliError::io(input, e))?;
    if !meta.is_dir() {
        return Ok((vec![input.to_path_buf()], false));
    }
    let mut paths = Vec::new();
    for entry in fs::read_dir(input).map_err(|e| CliError::io(input, e))? {
        let path = entry.map_err(|e| CliError::io(input, e))?.path();
        let hidden = path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if !hidden && !path.is_dir() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok((paths, true))
}

fn write_line<T: serde::Serialize>(out: &mut impl Write, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn build_memory(corpus: &Path, out: &Path, tag: &str, args: &BackendArgs, dim: usize) -> Result<(), CliError> {
    let file = fs::File::open(corpus).map_err(|e| CliError::io(corpus, e))?;
    let captions: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(corpus, e))?;
    let backend = match args.backend {
        BackendKind::Mock => open_backend(args, dim)?,
        BackendKind::Sidecar => Backend::open(args.backend, args.seed, None, args.sidecar_url.as_deref())
            .map_err(|e| CliError::Backend(e.to_string()))?,
    };
    eprintln!("embedding {} captions", captions.len());
    let index = MemoryIndex::build(&captions, backend.models().text, tag).map_err(|e| match e {
        memcap::MemoryError::Gateway(g) => CliError::Backend(g.to_string()),
        other => CliError::io(corpus, other),
    })?;
    for r in index.rejected() {
        eprintln!("line {}: rejected ({})", r.input_index + 1, r.reason);
    }
    index.save(out).map_err(|e| CliError::io(out, e))?;
    eprintln!(
        "wrote {} entries ({} rejected), dimension {}, to {}",
        index.len(),
        index.rejected().len(),
        index.dimension(),
        out.display()
    );
    Ok(())
}

fn caption(input: &Path, memory: &Path, args: &PipelineArgs, trace: Option<&Path>, jobs: usize) -> Result<(), CliError> {
    let config = args.config()?;
    let (paths, is_dir) = image_paths(input)?;
    let index = load_index(memory)?;
    let store = args.triplet_store()?;
    let backend = open_backend(&args.backend, index.dimension())?;
    let mut captioner = Captioner::new(backend.models(), &index, config);
    if let Some(s) = &store {
        captioner = captioner.with_triplets(s);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        paths
            .par_iter()
            .map(|p| read_image(p).and_then(|img| captioner.caption(&img).map_err(CliError::from)))
            .collect()
    });

    let mut trace_out = match trace {
        Some(path) => Some(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?)),
        None => None,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut first_error = None;
    for (path, outcome) in paths.iter().zip(outcomes) {
        let image_path = path.to_string_lossy();
        match outcome {
            Ok(result) => {
                write_line(&mut out, &CaptionRecord::new(&image_path, &result))?;
                if let Some(t) = trace_out.as_mut() {
                    for d in &result.trace.decisions {
                        write_line(t, &TraceLine {
                            image_path: &image_path,
                            decision: d,
                        })?;
                    }
                }
            }
            Err(e) => {
                let kind = match e {
                    CliError::Backend(_) => "backend",
                    _ => "io",
                };
                write_line(&mut out, &ErrorRecord {
                    image_path: &image_path,
                    error: ErrorInfo {
                        kind,
                        message: e.message().to_owned(),
                    },
                })?;
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(t) = trace_out.as_mut() {
        t.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    match first_error {
        Some(e) if !is_dir => Err(e),
        _ => Ok(()),
    }
}

fn inspect(image: &Path, memory: &Path, args: &PipelineArgs, full: bool) -> Result<(), CliError> {
    let config = args.config()?;
    let index = load_index(memory)?;
    let store = args.triplet_store()?;
    let backend = open_backend(&args.backend, index.dimension())?;
    let mut captioner = Captioner::new(backend.models(), &index, config);
    if let Some(s) = &store {
        captioner = captioner.with_triplets(s);
    }
    let input = read_image(image)?;
    let image_path = image.to_string_lossy();
    let doc = if full {
        let out = captioner.caption(&input)?;
        serde_json::to_string_pretty(&InspectDocument::new(&image_path, &out.inspection).with_refinement(&out))
    } else {
        let inspection = captioner.inspect(&input)?;
        serde_json::to_string_pretty(&InspectDocument::new(&image_path, &inspection))
    };
    println!("{}", doc.map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

/// Image key: file name without directories or extension.
fn image_key(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_owned())
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CliError::io(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn eval_bleu(results: &Path, references: &Path) -> Result<(), CliError> {
    let candidates: Vec<(String, String)> = read_json_lines::<ResultLine>(results)?
        .into_iter()
        .filter_map(|r| Some((image_key(&r.image_path), r.caption?)))
        .collect();
    let mut refs: HashMap<String, Vec<String>> = HashMap::new();
    for r in read_json_lines::<ReferenceLine>(references)? {
        refs.entry(image_key(&r.image)).or_default().extend(r.references);
    }
    let report = bleu::evaluate(&candidates, &refs);
    for id in &report.unmatched {
        eprintln!("no references for {id}; excluded");
    }
    let doc = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{doc}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildMemory {
            corpus,
            out,
            tag,
            backend,
            dim,
        } => build_memory(&corpus, &out, &tag, &backend, dim),
        Command::Caption {
            input,
            memory,
            pipeline,
            trace,
            jobs,
        } => caption(&input, &memory, &pipeline, trace.as_deref(), jobs),
        Command::Inspect {
            image,
            memory,
            pipeline,
            full,
        } => inspect(&image, &memory, &pipeline, full),
        Command::EvalBleu { results, references } => eval_bleu(&results, &references),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
