//! Command-line front end for `proghash`.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: 0 on success, 2 for usage, validation and configuration
//! errors, 1 for internal failures. Diagnostics go to the error stream as
//! `error kind=<kind>: <message>` lines.

pub mod config;

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use proghash::cliploss::{self, Batch};
use proghash::corpus;
use proghash::corpus::binfmt::{SEMANTIC_MAGIC, STRUCTURAL_MAGIC};
use proghash::eval;
use proghash::index::{self, Embedding};
use proghash::kmeans;
use proghash::sem::{self, WeightMode};
use proghash::stru::{self, FeatureHasher};
use proghash::synth::{self, SynthSpec};
use proghash::{CentroidModel, Corpus, Repository, SemanticEmbedding, StructuralEmbedding};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::PipelineConfig;

/// A failed command: diagnostic kind, exit code and message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            code: 2,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            code: 2,
            message: message.into(),
        }
    }

    fn internal(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            code: 1,
            message: message.into(),
        }
    }

    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={}: {}", self.kind, self.message)
    }
}

impl From<proghash::Error> for CliError {
    fn from(e: proghash::Error) -> Self {
        use proghash::Error as E;
        let code = match &e {
            E::Io(io) if io.kind() != io::ErrorKind::NotFound => 1,
            _ => 2,
        };
        Self {
            kind: e.kind(),
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        proghash::Error::from(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

/// Attaches the offending path to module errors.
trait WithPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> WithPath<T> for Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().context(path))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "proghash",
    version,
    about = "Program similarity hashing and clone search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a spherical k-means codebook on every function of a corpus.
    KmeansTrain(KmeansTrainArgs),
    /// Embed every program of a corpus.
    Hash(HashArgs),
    /// Exact top-k search of query embeddings against a repository.
    IndexSearch(SearchArgs),
    /// mAP@k and mP@k of a results file.
    Eval(EvalArgs),
    /// Precision, recall and F1 of codebook-based function matching.
    MatchEval(MatchEvalArgs),
    /// Finite-difference check of the contrastive loss gradients.
    LossCheck(LossCheckArgs),
    /// Generate a labelled synthetic corpus split into repository and queries.
    Synth(SynthArgs),
    /// Measure structural scoring throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct KmeansTrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HashMode {
    /// Structural bit vector; needs `--model`.
    Stru,
    /// Significance-weighted pooling with the configured weights.
    Sem,
    /// Unweighted mean pooling.
    Mean,
    /// LoC-only weights.
    Loc,
    /// NoS-only weights.
    Nos,
}

#[derive(Debug, Args)]
pub struct HashArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub mode: HashMode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Structural vector length in bits.
    #[arg(long)]
    pub m: Option<u32>,
    /// Decimal or `0x`-prefixed hexadecimal.
    #[arg(long, value_parser = parse_u64)]
    pub seed_position: Option<u64>,
    #[arg(long, value_parser = parse_u64)]
    pub seed_sign: Option<u64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Repository embedding file.
    #[arg(long)]
    pub repo: PathBuf,
    /// Query embedding file of the same kind.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Tab-separated `program_id<TAB>class_id` lines.
    #[arg(long)]
    pub class_map: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// Embedding file whose ids form the repository. Without it every
    /// program in the class map except the query counts as a member.
    #[arg(long)]
    pub repo: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct MatchEvalArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub repo: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving repo.jsonl, queries.jsonl and classes.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML generator parameters; flags override them.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub programs_per_class: Option<usize>,
    #[arg(long)]
    pub functions_per_program: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub reuse: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub shared_pool_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Programs per class moved into the query corpus.
    #[arg(long, default_value_t = 2)]
    pub queries_per_class: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = stru::DEFAULT_M)]
    pub m: u32,
    #[arg(long, default_value_t = 5000)]
    pub repo_size: usize,
    #[arg(long, default_value_t = 40)]
    pub queries: usize,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("{s:?} is not a u64: {e}"))
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let text = e.to_string();
                let first = text
                    .lines()
                    .next()
                    .unwrap_or("")
                    .trim_start_matches("error: ");
                let _ = writeln!(err, "{}", CliError::usage(first));
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.code
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::KmeansTrain(a) => cmd_kmeans_train(&a, out),
        Command::Hash(a) => cmd_hash(&a, out, err),
        Command::IndexSearch(a) => cmd_search(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::MatchEval(a) => cmd_match_eval(&a, out),
        Command::LossCheck(a) => cmd_loss_check(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

fn load_corpus(path: &Path, cfg: &PipelineConfig) -> CliResult<Corpus> {
    let corpus = corpus::load_corpus(path).at(path)?;
    if let Some(d) = cfg.d {
        if corpus.d() != d {
            return Err(CliError::config(format!(
                "{}: corpus dimension {} does not match configured d={d}",
                path.display(),
                corpus.d()
            )));
        }
    }
    Ok(corpus)
}

pub fn cmd_kmeans_train(a: &KmeansTrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(a.config.config.as_deref())?;
    if let Some(n) = a.n_clusters {
        cfg.n_clusters = n;
    }
    if let Some(n) = a.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seeds.kmeans = s;
    }
    cfg.validate()?;
    let corpus = load_corpus(&a.corpus, &cfg)?;
    let embeddings = corpus.function_embeddings();
    let trained = kmeans::train(
        &embeddings,
        cfg.n_clusters,
        cfg.iterations,
        cfg.seeds.kmeans,
    )
    .at(&a.corpus)?;
    trained.model.save(&a.out).at(&a.out)?;
    writeln!(out, "clusters={}", trained.model.n_clusters())?;
    writeln!(out, "functions={}", embeddings.len())?;
    writeln!(out, "iterations={}", trained.iterations_run)?;
    writeln!(out, "objective={:.6}", trained.final_objective())?;
    Ok(())
}

pub fn cmd_hash(a: &HashArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(a.config.config.as_deref())?;
    if let Some(m) = a.m {
        cfg.m = m;
    }
    if let Some(s) = a.seed_position {
        cfg.seeds.position = s;
    }
    if let Some(s) = a.seed_sign {
        cfg.seeds.sign = s;
    }
    let w = &mut cfg.weights;
    for (slot, flag) in [
        (&mut w.alpha1, a.alpha1),
        (&mut w.alpha2, a.alpha2),
        (&mut w.beta1, a.beta1),
        (&mut w.beta2, a.beta2),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    match a.mode {
        HashMode::Stru | HashMode::Sem => {}
        HashMode::Mean => w.mode = WeightMode::MeanPooling,
        HashMode::Loc => w.mode = WeightMode::LocOnly,
        HashMode::Nos => w.mode = WeightMode::NosOnly,
    }
    cfg.validate()?;

    if a.mode == HashMode::Stru {
        let Some(model_path) = &a.model else {
            return Err(CliError::usage("--mode stru requires --model"));
        };
        let model = CentroidModel::load(model_path).at(model_path)?;
        let corpus = load_corpus(&a.corpus, &cfg)?;
        let hasher = FeatureHasher::new(cfg.m, cfg.seeds.position, cfg.seeds.sign)?;
        let mut entries = Vec::with_capacity(corpus.len());
        for p in corpus.programs() {
            entries.push((
                p.program_id.clone(),
                stru::hash_program(p, &model, &hasher).at(&a.corpus)?,
            ));
        }
        corpus::save_structural(&entries, &a.out).at(&a.out)?;
        writeln!(out, "programs={}", entries.len())?;
        writeln!(out, "kind=structural")?;
        writeln!(out, "m={}", cfg.m)?;
        return Ok(());
    }

    let corpus = load_corpus(&a.corpus, &cfg)?;
    let mut entries = Vec::with_capacity(corpus.len());
    let mut skipped = 0usize;
    for p in corpus.programs() {
        let pooled = sem::hash_program(p, corpus.d(), &cfg.weights).at(&a.corpus)?;
        skipped += pooled.skipped_zero_norm.len();
        if pooled.degenerate {
            writeln!(
                err,
                "warning kind=degenerate: program {:?} has no usable function",
                p.program_id
            )?;
        }
        entries.push((p.program_id.clone(), pooled.embedding));
    }
    corpus::save_semantic(&entries, &a.out).at(&a.out)?;
    writeln!(out, "programs={}", entries.len())?;
    writeln!(out, "kind=semantic")?;
    writeln!(out, "skipped_zero_norm={skipped}")?;
    Ok(())
}

/// Contents of an embedding file, told apart by magic.
#[derive(Debug)]
pub enum EmbeddingFile {
    Structural(Vec<(String, StructuralEmbedding)>),
    Semantic(Vec<(String, SemanticEmbedding)>),
}

impl EmbeddingFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).at(path)?;
        if bytes.starts_with(STRUCTURAL_MAGIC) {
            Ok(Self::Structural(corpus::read_structural(&bytes).at(path)?))
        } else if bytes.starts_with(SEMANTIC_MAGIC) {
            Ok(Self::Semantic(corpus::read_semantic(&bytes).at(path)?))
        } else {
            Err(CliError {
                kind: "format",
                code: 2,
                message: format!(
                    "{}: not a structural or semantic embedding file",
                    path.display()
                ),
            })
        }
    }

    pub fn ids(&self) -> Vec<String> {
        match self {
            Self::Structural(v) => v.iter().map(|(id, _)| id.clone()).collect(),
            Self::Semantic(v) => v.iter().map(|(id, _)| id.clone()).collect(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Self::Structural(_) => "structural",
            Self::Semantic(_) => "semantic",
        }
    }

    fn into_entries(self) -> Vec<(String, Embedding)> {
        match self {
            Self::Structural(v) => v.into_iter().map(|(id, e)| (id, e.into())).collect(),
            Self::Semantic(v) => v.into_iter().map(|(id, e)| (id, e.into())).collect(),
        }
    }
}

pub fn cmd_search(a: &SearchArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(a.config.config.as_deref())?;
    if let Some(k) = a.k {
        if k == 0 {
            return Err(CliError::usage("k must be at least 1"));
        }
        cfg.k = k;
    }
    cfg.validate()?;
    let repo_file = EmbeddingFile::load(&a.repo)?;
    let query_file = EmbeddingFile::load(&a.queries)?;
    if repo_file.kind_name() != query_file.kind_name() {
        return Err(CliError {
            kind: "validation",
            code: 2,
            message: format!(
                "{} queries cannot search a {} repository",
                query_file.kind_name(),
                repo_file.kind_name()
            ),
        });
    }
    let kind = match repo_file {
        EmbeddingFile::Structural(_) => index::EmbeddingKind::Structural,
        EmbeddingFile::Semantic(_) => index::EmbeddingKind::Semantic,
    };
    let repo = Repository::build(kind, repo_file.into_entries()).at(&a.repo)?;
    let (query_ids, queries): (Vec<String>, Vec<Embedding>) =
        query_file.into_entries().into_iter().unzip();
    let batch = repo.batch_search(&queries, cfg.k, a.workers)?;
    let file = File::create(&a.out).at(&a.out)?;
    let mut w = BufWriter::new(file);
    index::write_results(&query_ids, &batch.results, &mut w).at(&a.out)?;
    w.flush().at(&a.out)?;
    writeln!(out, "queries={}", query_ids.len())?;
    writeln!(out, "repository={}", repo.len())?;
    writeln!(out, "k={}", cfg.k)?;
    writeln!(out, "comparisons={}", batch.comparisons)?;
    Ok(())
}

/// Reads `program_id<TAB>class_id` lines. Blank lines are skipped.
pub fn read_class_map<R: BufRead>(reader: R) -> proghash::Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| proghash::Error::Parse {
            line: i + 1,
            message,
        };
        let Some((pid, cid)) = line.split_once('\t') else {
            return Err(bad("expected program_id<TAB>class_id".into()));
        };
        if cid.contains('\t') {
            return Err(bad("too many fields".into()));
        }
        if let Some(prev) = map.insert(pid.to_string(), cid.to_string()) {
            if prev != cid {
                return Err(bad(format!(
                    "program {pid:?} listed with classes {prev:?} and {cid:?}"
                )));
            }
        }
    }
    Ok(map)
}

pub fn write_class_map<W: Write>(corpora: &[&Corpus], mut w: W) -> io::Result<()> {
    for c in corpora {
        for p in c.programs() {
            if let Some(cid) = &p.class_id {
                writeln!(w, "{}\t{cid}", p.program_id)?;
            }
        }
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = PipelineConfig::load(a.config.config.as_deref())?;
    if let Some(k) = a.k {
        if k == 0 {
            return Err(CliError::usage("k must be at least 1"));
        }
        cfg.k = k;
    }
    cfg.validate()?;
    let results = index::read_results(BufReader::new(File::open(&a.results).at(&a.results)?))
        .at(&a.results)?;
    let class_of = read_class_map(BufReader::new(File::open(&a.class_map).at(&a.class_map)?))
        .at(&a.class_map)?;
    let repo_ids: Option<HashSet<String>> = match &a.repo {
        Some(p) => Some(EmbeddingFile::load(p)?.ids().into_iter().collect()),
        None => None,
    };
    let judged = eval::judge(&results, &class_of, repo_ids.as_ref());
    writeln!(out, "k={}", cfg.k)?;
    writeln!(out, "queries={}", judged.judgments.len())?;
    writeln!(out, "excluded={}", judged.excluded.len())?;
    if judged.judgments.is_empty() {
        return Err(CliError {
            kind: "validation",
            code: 2,
            message: "no query has a class with repository members".into(),
        });
    }
    writeln!(out, "map={:.6}", eval::map_at_k(&judged.judgments, cfg.k)?)?;
    writeln!(out, "mp={:.6}", eval::mp_at_k(&judged.judgments, cfg.k)?)?;
    Ok(())
}

/// Codebook label and ground-truth label of every function, by global index.
struct FunctionLabels {
    predicted: Vec<(usize, u32)>,
    truth: Vec<Option<u64>>,
}

fn function_labels(corpus: &Corpus, model: &CentroidModel) -> proghash::Result<FunctionLabels> {
    let embeddings = corpus.function_embeddings();
    let labels = model.classify(&embeddings)?.labels;
    let truth = corpus
        .programs()
        .iter()
        .flat_map(|p| p.functions.iter().map(|f| f.class_label))
        .collect();
    Ok(FunctionLabels {
        predicted: labels.into_iter().enumerate().collect(),
        truth,
    })
}

pub fn cmd_match_eval(a: &MatchEvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let model = CentroidModel::load(&a.model).at(&a.model)?;
    let queries = corpus::load_corpus(&a.queries).at(&a.queries)?;
    let repo = corpus::load_corpus(&a.repo).at(&a.repo)?;
    let q = function_labels(&queries, &model).at(&a.queries)?;
    let r = function_labels(&repo, &model).at(&a.repo)?;
    let predicted = eval::predicted_matches(&q.predicted, &r.predicted);

    let mut by_class: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, t) in r.truth.iter().enumerate() {
        if let Some(t) = t {
            by_class.entry(*t).or_default().push(i);
        }
    }
    let mut truth = HashSet::new();
    for (qi, t) in q.truth.iter().enumerate() {
        if let Some(rs) = t.and_then(|t| by_class.get(&t)) {
            truth.extend(rs.iter().map(|&ri| (qi, ri)));
        }
    }
    let report = eval::matching_eval(&predicted, &truth);
    writeln!(out, "predicted_pairs={}", predicted.len())?;
    writeln!(out, "truth_pairs={}", truth.len())?;
    writeln!(out, "matched_pairs={}", report.matched_pairs)?;
    writeln!(out, "precision={:.6}", report.precision)?;
    writeln!(out, "recall={:.6}", report.recall)?;
    writeln!(out, "f1={:.6}", report.f1)?;
    Ok(())
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn cmd_loss_check(a: &LossCheckArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.n == 0 || a.d == 0 {
        return Err(CliError::usage("n and d must be positive"));
    }
    if !(a.step > 0.0 && a.tolerance > 0.0) {
        return Err(CliError::usage("step and tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let batch = Batch::new(
        random_rows(&mut rng, a.n, a.d),
        random_rows(&mut rng, a.n, a.d),
        a.temperature,
    )?;
    let loss = cliploss::loss(&batch)?;
    let check = cliploss::finite_difference_check(&batch, a.step)?;
    let single = Batch::new(
        random_rows(&mut rng, 1, a.d),
        random_rows(&mut rng, 1, a.d),
        a.temperature,
    )?;
    let single_loss = cliploss::loss(&single)?;

    let gradient_ok = check.max_relative_error <= a.tolerance;
    let single_ok = single_loss.abs() <= 1e-9;
    writeln!(out, "n={} d={} temperature={}", a.n, a.d, a.temperature)?;
    writeln!(out, "loss={loss:.9}")?;
    writeln!(out, "components={}", check.components)?;
    writeln!(out, "max_relative_error={:.3e}", check.max_relative_error)?;
    writeln!(out, "max_absolute_error={:.3e}", check.max_absolute_error)?;
    writeln!(
        out,
        "gradient_check={}",
        if gradient_ok { "pass" } else { "fail" }
    )?;
    writeln!(out, "single_pair_loss={:.3e}", single_loss + 0.0)?;
    writeln!(
        out,
        "single_pair_check={}",
        if single_ok { "pass" } else { "fail" }
    )?;
    if gradient_ok && single_ok {
        writeln!(out, "result=pass")?;
        Ok(())
    } else {
        writeln!(out, "result=fail")?;
        Err(CliError::internal("check", "loss gradient check failed"))
    }
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).at(p)?;
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = a.classes {
        spec.classes = v;
    }
    if let Some(v) = a.programs_per_class {
        spec.programs_per_class = v;
    }
    if let Some(v) = a.functions_per_program {
        spec.functions_per_program = v;
    }
    if let Some(v) = a.d {
        spec.d = v;
    }
    if let Some(v) = a.reuse {
        spec.reuse = v;
    }
    if let Some(v) = a.noise {
        spec.noise = v;
    }
    if a.shared_pool_size.is_some() {
        spec.shared_pool_size = a.shared_pool_size;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if a.queries_per_class >= spec.programs_per_class {
        return Err(CliError::config(format!(
            "queries_per_class={} leaves no repository program out of {} per class",
            a.queries_per_class, spec.programs_per_class
        )));
    }
    let corpus = synth::generate(&spec)?;
    let (repo, queries) = synth::split_queries(&corpus, a.queries_per_class)?;
    std::fs::create_dir_all(&a.out_dir).at(&a.out_dir)?;
    let repo_path = a.out_dir.join("repo.jsonl");
    let query_path = a.out_dir.join("queries.jsonl");
    let class_path = a.out_dir.join("classes.tsv");
    corpus::save_corpus(&repo, &repo_path).at(&repo_path)?;
    corpus::save_corpus(&queries, &query_path).at(&query_path)?;
    let mut w = BufWriter::new(File::create(&class_path).at(&class_path)?);
    write_class_map(&[&repo, &queries], &mut w).at(&class_path)?;
    w.flush().at(&class_path)?;
    writeln!(out, "repo_programs={}", repo.len())?;
    writeln!(out, "query_programs={}", queries.len())?;
    writeln!(out, "functions_per_program={}", spec.functions_per_program)?;
    writeln!(out, "shared_per_program={}", spec.shared_per_program())?;
    Ok(())
}

/// Random sparse structural vectors: `labels` random labels folded each.
fn random_structural(
    rng: &mut ChaCha8Rng,
    hasher: &FeatureHasher,
    labels: usize,
) -> StructuralEmbedding {
    hasher.fold((0..labels).map(|_| rng.random::<u64>()))
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.repo_size == 0 || a.queries == 0 {
        return Err(CliError::usage("repo-size and queries must be positive"));
    }
    let hasher = FeatureHasher::with_m(a.m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let entries: Vec<(String, StructuralEmbedding)> = (0..a.repo_size)
        .map(|i| (format!("r{i}"), random_structural(&mut rng, &hasher, 500)))
        .collect();
    let repo = Repository::structural(entries)?;
    let queries: Vec<Embedding> = (0..a.queries)
        .map(|_| random_structural(&mut rng, &hasher, 500).into())
        .collect();
    let batch = repo.batch_search(&queries, a.k, a.workers)?;
    let rate = batch.comparisons_per_second();
    writeln!(out, "m={}", a.m)?;
    writeln!(out, "workers={}", a.workers)?;
    writeln!(out, "comparisons={}", batch.comparisons)?;
    writeln!(out, "elapsed_s={:.6}", batch.elapsed.as_secs_f64())?;
    writeln!(out, "comparisons_per_second={rate:.0}")?;
    writeln!(
        out,
        "comparisons_per_second_per_worker={:.0}",
        rate / a.workers as f64
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_hex_and_decimal() {
        assert_eq!(
            parse_u64("0x9E37_79B9_7F4A_7C15"),
            Ok(stru::DEFAULT_SEED_POSITION)
        );
        assert_eq!(parse_u64("42"), Ok(42));
        assert!(parse_u64("0xZZ").is_err());
    }

    #[test]
    fn flag_seeds_match_defaults() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            [
                "proghash",
                "hash",
                "--corpus",
                "/nonexistent",
                "--mode",
                "sem",
                "--out",
                "x",
                "--seed-sign",
                "0xBF58476D1CE4E5B9",
            ],
            &mut out,
            &mut err,
        );
        assert_eq!(code, 2);
        assert!(String::from_utf8_lossy(&err).starts_with("error kind=io"));
    }
}
