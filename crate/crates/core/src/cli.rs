//! The `dismark` command line. Every subcommand is a thin wrapper over the
//! library; `run` maps errors to exit codes (1 usage, 2 data, 3 numeric).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::align::{self, Preprocessor};
use crate::corpus::DocumentReader;
use crate::dataset::{self, DatasetMeta, MarkerSet, PairDataset, PairRecord, Split};
use crate::embed::{self, EmbeddingTable, LogRegConfig, Vocabulary};
use crate::encoder::{self, Dims, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Classifier, Featurizer};
use crate::extract::{self, ExtractionConfig};
use crate::patterns::{self, MarkerPattern, PatternRegistry};

#[derive(Parser, Debug)]
#[command(name = "dismark", version, about = "Discourse-marker pair mining and marker classification")]
pub struct Cli {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for extract and validate.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract (S1, S2, marker) pairs from a CoNLL-U corpus.
    Extract(ExtractArgs),
    /// Per-marker counts of a pair file.
    Stats(StatsArgs),
    /// Keep only pairs whose marker is in a named set.
    Subset(SubsetArgs),
    /// Write train/valid/test pair files.
    Split(SplitArgs),
    /// Cap the number of pairs per marker.
    Balance(BalanceArgs),
    /// Align extracted pairs with gold pairs and report precision.
    Validate(ValidateArgs),
    /// Train a bag-of-ngrams or averaged-embedding logistic regression.
    TrainBaseline(TrainBaselineArgs),
    /// Train the BiLSTM-max encoder and pair classifier.
    TrainEncoder(TrainEncoderArgs),
    /// Train on one pair file, score another.
    Eval(EvalArgs),
    /// Confusion matrices and the frequency residual analysis.
    Confusion(ConfusionArgs),
    /// Compare encoder gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Input corpus in CoNLL-U.
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Output pair TSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Rejection log; defaults to `<out>.rejections.tsv`.
    #[arg(long, value_name = "FILE")]
    pub rejections: Option<PathBuf>,
    /// Marker set: books5, books8, books_all or custom:a,b,...
    #[arg(long)]
    pub markers: Option<String>,
    /// TOML file of `[[pattern]]` rows replacing or adding markers.
    #[arg(long, value_name = "FILE")]
    pub patterns: Option<PathBuf>,
    /// Also enable however, meanwhile and "for example".
    #[arg(long)]
    pub extra_patterns: bool,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub max_ratio: Option<f64>,
    /// Do not require a verb or auxiliary on each side.
    #[arg(long)]
    pub no_verb_check: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Pair TSV.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct SubsetArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub markers: String,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Directory for train.tsv, valid.tsv, test.tsv and split.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Train, valid and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.05, 0.05])]
    pub ratios: Vec<f64>,
    /// Balance to this many pairs per marker before splitting.
    #[arg(long)]
    pub balance: Option<usize>,
    /// Split by doc_id prefix instead of at random: prefixes for valid.
    #[arg(long, value_delimiter = ',')]
    pub valid_prefix: Vec<String>,
    /// Doc_id prefixes for test.
    #[arg(long, value_delimiter = ',')]
    pub test_prefix: Vec<String>,
    /// Marker set recorded in the metadata; defaults to the labels present.
    #[arg(long)]
    pub markers: Option<String>,
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub cap: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Automatically extracted pairs.
    #[arg(long, value_name = "FILE")]
    pub extracted: Option<PathBuf>,
    /// Gold pairs.
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    #[arg(long, default_value_t = align::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Replace numeric tokens with this placeholder before aligning.
    #[arg(long)]
    pub number_placeholder: Option<String>,
    /// Map words outside the most frequent N (over both files) to <unk>.
    #[arg(long)]
    pub vocab_cap: Option<usize>,
    /// Write one line per extracted pair: index, gold index, distances.
    #[arg(long, value_name = "FILE")]
    pub alignments: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureKind {
    Ngram,
    Sif,
    Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassifierKind {
    Logreg,
    Majority,
}

#[derive(Args, Debug, Clone)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value_t = FeatureKind::Ngram)]
    pub features: FeatureKind,
    /// N-gram orders for the bag-of-ngrams features.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3])]
    pub orders: Vec<usize>,
    /// Most frequent n-grams kept.
    #[arg(long, default_value_t = embed::DEFAULT_VOCAB_CAP)]
    pub vocab_cap: usize,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Word vectors (`word v1 v2 ...` per line) for sif features or encoder
    /// initialization.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Encoder checkpoint prefix for encoder features.
    #[arg(long, value_name = "PREFIX")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainBaselineArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Optional test file scored after training.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Writes `<prefix>.json` and `<prefix>.bin`.
    #[arg(long, value_name = "PREFIX")]
    pub out: PathBuf,
    #[command(flatten)]
    pub feat: FeatureArgs,
}

#[derive(Args, Debug)]
pub struct TrainEncoderArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub valid: PathBuf,
    /// Checkpoint prefix: `<prefix>.json`, `<prefix>.bin`, `<prefix>.log.csv`.
    #[arg(long, value_name = "PREFIX")]
    pub out: PathBuf,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub proj_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub train_embeddings: bool,
    /// Initial word vectors; dimension must equal embed_dim.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Logreg)]
    pub classifier: ClassifierKind,
    /// Write `gold<TAB>predicted` per test pair.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub feat: FeatureArgs,
}

#[derive(Args, Debug)]
pub struct ConfusionArgs {
    /// `gold<TAB>predicted` lines, e.g. from `eval --predictions`.
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    /// Training pairs; fixes class order by ascending frequency.
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Predictions of a model trained on balanced data; enables the
    /// residual analysis.
    #[arg(long, value_name = "FILE")]
    pub balanced: Option<PathBuf>,
    /// Writes `<prefix>.counts.csv`, `<prefix>.normalized.csv`, `<prefix>.log.csv`.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = eval::LOG_DISPLAY_DELTA)]
    pub delta: f64,
    /// Include correct classifications in the residual regression.
    #[arg(long)]
    pub include_diagonal: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 7)]
    pub vocab: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    /// Longest random sentence, in words.
    #[arg(long, default_value_t = 5)]
    pub max_len: usize,
    #[arg(long, default_value_t = encoder::GRAD_CHECK_EPSILON)]
    pub epsilon: f64,
    /// Check a seeded sample of this many coordinates instead of all.
    #[arg(long)]
    pub max_coords: Option<usize>,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Paths that may come from the config file instead of flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub extracted: Option<PathBuf>,
}

/// Contents of the `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub paths: Paths,
    pub extraction: Option<ExtractionConfig>,
    /// Marker set name used when `extraction.markers` is not given.
    pub marker_set: Option<String>,
    #[serde(rename = "pattern")]
    pub patterns: Vec<MarkerPattern>,
    pub train: Option<TrainConfig>,
    pub baseline: Option<LogRegConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }
}

struct Ctx {
    format: Format,
    seed: u64,
    jobs: usize,
    file: RunConfig,
}

impl Ctx {
    fn emit<T: Serialize + std::fmt::Display>(&self, value: &T) -> Result<()> {
        let mut out = std::io::stdout().lock();
        match self.format {
            Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
            Format::Text => write!(out, "{}", value)?,
        }
        Ok(())
    }
}

fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| Error::argument(format!("--{} is required (flag or config file)", name)))
}

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::argument(format!("{} does not exist", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load(path: &Path) -> Result<Vec<PairRecord>> {
    dataset::load_pairs(existing(path)?)
}

fn save(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let mut w = create(path)?;
    dataset::write_pairs(pairs, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Parses `std::env::args` and runs the command; returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{}", e);
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<i32> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(existing(p)?)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        format: cli.format,
        seed: cli.seed.or(file.seed).unwrap_or(0),
        jobs: cli.jobs.or(file.jobs).unwrap_or(1).max(1),
        file,
    };
    match cli.command {
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Subset(a) => cmd_subset(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Balance(a) => cmd_balance(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::TrainBaseline(a) => cmd_train_baseline(&ctx, a),
        Command::TrainEncoder(a) => cmd_train_encoder(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Confusion(a) => cmd_confusion(&ctx, a),
        Command::Gradcheck(a) => cmd_gradcheck(&ctx, a),
    }
    .map(|()| 0)
    .or_else(|e| match e {
        GradcheckFailed => Ok(3),
        Other(e) => Err(e),
    })
}

enum Outcome {
    GradcheckFailed,
    Other(Error),
}
use Outcome::{GradcheckFailed, Other};

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        Other(e)
    }
}

impl From<std::io::Error> for Outcome {
    fn from(e: std::io::Error) -> Self {
        Other(e.into())
    }
}

type CmdResult = std::result::Result<(), Outcome>;

#[derive(Serialize)]
struct ExtractReport {
    documents: usize,
    sentences: usize,
    accepted: usize,
    rejected: usize,
    reasons: BTreeMap<String, usize>,
    markers: dataset::MarkerStats,
}

impl std::fmt::Display for ExtractReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "documents  {}", self.documents)?;
        writeln!(f, "sentences  {}", self.sentences)?;
        writeln!(f, "accepted   {}", self.accepted)?;
        writeln!(f, "rejected   {}", self.rejected)?;
        for (r, n) in &self.reasons {
            writeln!(f, "  {:<20}{}", r, n)?;
        }
        write!(f, "{}", self.markers)
    }
}

fn registry_for(ctx: &Ctx, a: &ExtractArgs) -> Result<PatternRegistry> {
    let mut registry = patterns::default_patterns();
    if a.extra_patterns {
        registry.apply_overrides(patterns::extra_patterns())?;
    }
    if !ctx.file.patterns.is_empty() {
        registry.apply_overrides(ctx.file.patterns.clone())?;
    }
    if let Some(p) = &a.patterns {
        let text = fs::read_to_string(existing(p)?)?;
        registry.apply_overrides(PatternRegistry::overrides_from_toml(&text)?)?;
    }
    Ok(registry)
}

fn cmd_extract(ctx: &Ctx, a: ExtractArgs) -> CmdResult {
    let input = required(a.input.clone(), &ctx.file.paths.corpus, "in")?;
    let out = required(a.out.clone(), &ctx.file.paths.out, "out")?;
    let registry = registry_for(ctx, &a)?;

    let mut config = ctx.file.extraction.clone().unwrap_or_default();
    let set_name = a.markers.clone().or_else(|| ctx.file.marker_set.clone());
    if let Some(name) = set_name {
        config.markers = MarkerSet::from_name(&name)?.markers();
    }
    if a.extra_patterns {
        config.markers.extend(patterns::extra_patterns().into_iter().map(|p| p.marker));
    }
    if let Some(v) = a.min_len {
        config.min_len = v;
    }
    if let Some(v) = a.max_len {
        config.max_len = v;
    }
    if let Some(v) = a.max_ratio {
        config.max_ratio = v;
    }
    if a.no_verb_check {
        config.require_main_verb = false;
    }
    config.validate()?;
    if let Some(m) = config.markers.iter().find(|m| !registry.contains(m)) {
        return Err(Error::Config(format!("marker '{}' has no pattern", m)).into());
    }

    let reader = DocumentReader::new(BufReader::new(File::open(existing(&input)?)?));
    let docs = reader.collect::<Result<Vec<_>>>()?;
    log::info!("read {} documents from {}", docs.len(), input.display());
    let result = extract::extract_corpus(&docs, &registry, &config, ctx.jobs)?;

    let mut w = create(&out)?;
    extract::write_pairs_tsv(&result.accepted, &mut w)?;
    let rej_path = a.rejections.unwrap_or_else(|| with_suffix(&out, ".rejections.tsv"));
    let mut w = create(&rej_path)?;
    extract::write_rejections_tsv(&result.rejected, &mut w)?;
    w.flush()?;

    let mut reasons = BTreeMap::new();
    for r in &result.rejected {
        *reasons.entry(r.reason.to_string()).or_default() += 1;
    }
    ctx.emit(&ExtractReport {
        documents: docs.len(),
        sentences: docs.iter().map(|d| d.sentences.len()).sum(),
        accepted: result.accepted.len(),
        rejected: result.rejected.len(),
        reasons,
        markers: dataset::MarkerStats::from_counts(result.accepted.iter().map(|p| (p.marker.as_str(), 1))),
    })?;
    Ok(())
}

fn cmd_stats(ctx: &Ctx, a: StatsArgs) -> CmdResult {
    let ds = PairDataset::from_pairs(load(&a.input)?);
    ctx.emit(&dataset::marker_stats(&ds))?;
    Ok(())
}

fn cmd_subset(ctx: &Ctx, a: SubsetArgs) -> CmdResult {
    let set = MarkerSet::from_name(&a.markers)?;
    let ds = PairDataset::from_pairs(load(&a.input)?);
    let sub = dataset::subset_markers(&ds, &set);
    save(&a.out, &sub.pairs)?;
    log::info!("kept {} of {} pairs", sub.len(), ds.len());
    ctx.emit(&dataset::marker_stats(&sub))?;
    Ok(())
}

fn checksum(path: &Path) -> Result<String> {
    Ok(dataset::sha256_hex(&fs::read(path)?))
}

#[derive(Serialize)]
struct SplitReport {
    train: usize,
    valid: usize,
    test: usize,
    meta: DatasetMeta,
}

impl std::fmt::Display for SplitReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "train  {}", self.train)?;
        writeln!(f, "valid  {}", self.valid)?;
        writeln!(f, "test   {}", self.test)
    }
}

fn cmd_split(ctx: &Ctx, a: SplitArgs) -> CmdResult {
    if a.ratios.len() != 3 {
        return Err(Error::argument("--ratios takes three comma-separated fractions").into());
    }
    let pairs = load(&a.input)?;
    let mut ds = match &a.markers {
        Some(name) => PairDataset::with_marker_set(pairs, MarkerSet::from_name(name)?)?,
        None => PairDataset::from_pairs(pairs),
    };
    if let Some(cap) = a.balance {
        ds = dataset::balance(&ds, cap, ctx.seed)?;
    }
    let by_prefix = !a.valid_prefix.is_empty() || !a.test_prefix.is_empty();
    let ratios = (a.ratios[0], a.ratios[1], a.ratios[2]);
    let ds = if by_prefix {
        dataset::split_by_prefix(&ds, &a.valid_prefix, &a.test_prefix)?
    } else {
        dataset::split(&ds, ratios, ctx.seed)?
    };
    fs::create_dir_all(&a.out_dir)?;
    for s in [Split::Train, Split::Valid, Split::Test] {
        save(&a.out_dir.join(format!("{}.tsv", s.name())), &ds.part(s))?;
    }
    let meta = DatasetMeta {
        marker_set: ds.marker_set.name(),
        seed: (!by_prefix || a.balance.is_some()).then_some(ctx.seed),
        ratios: (!by_prefix).then_some(ratios),
        cap: a.balance,
        source_checksum: checksum(&a.input)?,
    };
    write_json(&a.out_dir.join("split.json"), &meta)?;
    let (train, valid, test) = ds.split_sizes();
    ctx.emit(&SplitReport {
        train,
        valid,
        test,
        meta,
    })?;
    Ok(())
}

fn cmd_balance(ctx: &Ctx, a: BalanceArgs) -> CmdResult {
    let ds = PairDataset::from_pairs(load(&a.input)?);
    let bal = dataset::balance(&ds, a.cap, ctx.seed)?;
    save(&a.out, &bal.pairs)?;
    let meta = DatasetMeta {
        marker_set: bal.marker_set.name(),
        seed: Some(ctx.seed),
        ratios: None,
        cap: Some(a.cap),
        source_checksum: checksum(&a.input)?,
    };
    write_json(&with_suffix(&a.out, ".meta.json"), &meta)?;
    ctx.emit(&dataset::marker_stats(&bal))?;
    Ok(())
}

#[derive(Serialize)]
struct ValidateOutput {
    #[serde(flatten)]
    report: align::ValidationReport,
}

impl std::fmt::Display for ValidateOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let r = &self.report;
        writeln!(f, "threshold  {}", r.threshold)?;
        writeln!(f, "{:<12}  {:>9}  {:>7}  {:>9}", "marker", "extracted", "aligned", "precision")?;
        for (m, p) in &r.precision.per_marker {
            let prec = p.precision.map_or("-".to_string(), |v| format!("{:.4}", v));
            writeln!(f, "{:<12}  {:>9}  {:>7}  {:>9}", m, p.extracted, p.aligned, prec)?;
        }
        let o = &r.precision.overall;
        let prec = o.precision.map_or("-".to_string(), |v| format!("{:.4}", v));
        writeln!(f, "{:<12}  {:>9}  {:>7}  {:>9}", "overall", o.extracted, o.aligned, prec)?;
        if let Some(q) = r.mean_quality {
            writeln!(f, "mean quality  {:.4}", q)?;
        }
        writeln!(f, "quality histogram  {:?}", r.quality_histogram)
    }
}

fn cmd_validate(ctx: &Ctx, a: ValidateArgs) -> CmdResult {
    let extracted = load(&required(a.extracted, &ctx.file.paths.extracted, "extracted")?)?;
    let gold = load(&required(a.gold, &ctx.file.paths.gold, "gold")?)?;
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(Error::argument("threshold must be in (0, 1]").into());
    }
    let mut pre = match &a.number_placeholder {
        Some(p) => Preprocessor::with_numbers(p),
        None => Preprocessor::identity(),
    };
    if let Some(cap) = a.vocab_cap {
        let texts = extracted.iter().chain(&gold).flat_map(|p| [p.s1.as_str(), p.s2.as_str()]);
        pre = pre.cap_vocabulary(texts, cap);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results = pool.install(|| align::align_by_marker(&extracted, &gold, a.threshold, &pre));
    if let Some(path) = &a.alignments {
        let mut rows: Vec<(usize, String)> = Vec::new();
        for r in results.values() {
            for al in &r.alignments {
                rows.push((
                    al.extracted,
                    format!("{}\t{}\t{}\t{}", al.extracted, al.gold, al.match_distance, al.quality),
                ));
            }
            for &u in &r.unaligned {
                rows.push((u, format!("{}\t-\t-\t-", u)));
            }
        }
        rows.sort_by_key(|r| r.0);
        let mut w = create(path)?;
        writeln!(w, "extracted\tgold\tmatch_distance\tquality")?;
        for (_, line) in rows {
            writeln!(w, "{}", line)?;
        }
        w.flush()?;
    }
    ctx.emit(&ValidateOutput {
        report: align::validation_report(&results, a.threshold),
    })?;
    Ok(())
}

fn logreg_config(ctx: &Ctx, f: &FeatureArgs) -> LogRegConfig {
    let mut cfg = ctx.file.baseline.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    if let Some(v) = f.lr {
        cfg.lr = v;
    }
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.l2 {
        cfg.l2 = v;
    }
    cfg
}

fn embeddings_path(ctx: &Ctx, f: &FeatureArgs) -> Option<PathBuf> {
    f.embeddings.clone().or_else(|| ctx.file.paths.embeddings.clone())
}

fn featurizer(ctx: &Ctx, f: &FeatureArgs) -> Result<Featurizer> {
    Ok(match f.features {
        FeatureKind::Ngram => Featurizer::Ngram {
            orders: f.orders.clone(),
            cap: f.vocab_cap,
            min_freq: f.min_freq,
        },
        FeatureKind::Sif => {
            let path = embeddings_path(ctx, f)
                .ok_or_else(|| Error::argument("sif features need --embeddings"))?;
            Featurizer::Sif {
                table: EmbeddingTable::load(existing(&path)?)?,
            }
        }
        FeatureKind::Encoder => {
            let prefix = f
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::argument("encoder features need --checkpoint"))?;
            Featurizer::Encoder(Box::new(encoder::load_checkpoint(prefix)?))
        }
    })
}

#[derive(Serialize)]
struct BaselineReport {
    features: String,
    dim: usize,
    train_pairs: usize,
    final_loss: Option<f64>,
    test: Option<eval::TaskReport>,
}

impl std::fmt::Display for BaselineReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "features     {}", self.features)?;
        writeln!(f, "dimension    {}", self.dim)?;
        writeln!(f, "train pairs  {}", self.train_pairs)?;
        if let Some(l) = self.final_loss {
            writeln!(f, "final loss   {:.6}", l)?;
        }
        match &self.test {
            Some(t) => write!(f, "{}", t),
            None => Ok(()),
        }
    }
}

fn cmd_train_baseline(ctx: &Ctx, a: TrainBaselineArgs) -> CmdResult {
    if a.feat.features == FeatureKind::Encoder {
        return Err(Error::argument("train-baseline supports ngram and sif features; use eval for encoder features").into());
    }
    let train = load(&a.train)?;
    let texts = || train.iter().flat_map(|p| [p.s1.as_str(), p.s2.as_str()]);
    let cfg = logreg_config(ctx, &a.feat);
    let labels: Vec<String> = train.iter().map(|p| p.marker.clone()).collect();
    let (fit, vocab) = match featurizer(ctx, &a.feat)? {
        Featurizer::Ngram { orders, cap, min_freq } => {
            let vocab = Vocabulary::build(texts(), &orders, cap, min_freq);
            let xs: Vec<_> = train.iter().map(|p| embed::pair_ngram_features(&p.s1, &p.s2, &vocab)).collect();
            (embed::train_logreg(&xs, &labels, &cfg)?, Some(vocab))
        }
        Featurizer::Sif { mut table } => {
            table.estimate_probabilities(texts());
            let sif = embed::SifEmbedder::fit(table, texts());
            let xs: Vec<_> = train.iter().map(|p| sif.pair_features(&p.s1, &p.s2)).collect();
            (embed::train_logreg(&xs, &labels, &cfg)?, None)
        }
        Featurizer::Encoder(_) => unreachable!("rejected above"),
    };
    embed::save_model(&fit.model, vocab.as_ref(), &a.out)?;
    let test = match &a.test {
        Some(path) => {
            let test = load(path)?;
            Some(eval::pair_task_eval(&train, &test, &featurizer(ctx, &a.feat)?, &Classifier::LogReg(cfg))?)
        }
        None => None,
    };
    ctx.emit(&BaselineReport {
        features: format!("{:?}", a.feat.features).to_lowercase(),
        dim: fit.model.dim,
        train_pairs: train.len(),
        final_loss: fit.losses.last().copied(),
        test,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct EncoderReport {
    best_epoch: usize,
    epochs_run: usize,
    best_val_acc: f64,
    anneals: usize,
    log: Vec<encoder::EpochLog>,
}

impl std::fmt::Display for EncoderReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>5}  {:>10}  {:>10}  {:>7}", "epoch", "lr", "loss", "val_acc")?;
        for e in &self.log {
            writeln!(f, "{:>5}  {:>10.6}  {:>10.5}  {:>7.4}", e.epoch, e.lr, e.train_loss, e.val_acc)?;
        }
        writeln!(f, "best epoch {} (val_acc {:.4}), lr annealed {} times", self.best_epoch, self.best_val_acc, self.anneals)
    }
}

fn cmd_train_encoder(ctx: &Ctx, a: TrainEncoderArgs) -> CmdResult {
    let mut cfg = ctx.file.train.clone().unwrap_or_default();
    cfg.seed = ctx.seed;
    macro_rules! flag {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value {
                cfg.$field = v;
            }
        };
    }
    flag!(hidden, a.hidden);
    flag!(embed_dim, a.embed_dim);
    flag!(max_epochs, a.epochs);
    flag!(initial_lr, a.lr);
    flag!(batch_size, a.batch_size);
    flag!(patience, a.patience);
    if a.proj_dim.is_some() {
        cfg.proj_dim = a.proj_dim;
    }
    if a.train_embeddings {
        cfg.train_embeddings = true;
    }
    let train = load(&a.train)?;
    let valid = load(&a.valid)?;
    let table = match a.embeddings.clone().or_else(|| ctx.file.paths.embeddings.clone()) {
        Some(p) => Some(EmbeddingTable::load(existing(&p)?)?),
        None => None,
    };
    let model = encoder::train_with_embeddings(&train, &valid, &cfg, table.as_ref())?;
    encoder::save_checkpoint(&model, &a.out)?;
    let mut w = create(&with_suffix(&a.out, ".log.csv"))?;
    encoder::write_epoch_log(&model.log, &mut w)?;
    w.flush()?;
    ctx.emit(&EncoderReport {
        best_epoch: model.best_epoch,
        epochs_run: model.log.len(),
        best_val_acc: model.log.iter().map(|e| e.val_acc).fold(f64::NEG_INFINITY, f64::max),
        anneals: model.log.windows(2).filter(|w| w[1].lr < w[0].lr).count(),
        log: model.log.clone(),
    })?;
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> CmdResult {
    let train = load(&a.train)?;
    let test = load(&a.test)?;
    let classifier = match a.classifier {
        ClassifierKind::Logreg => Classifier::LogReg(logreg_config(ctx, &a.feat)),
        ClassifierKind::Majority => Classifier::Majority,
    };
    let report = eval::pair_task_eval(&train, &test, &featurizer(ctx, &a.feat)?, &classifier)?;
    if let Some(path) = &a.predictions {
        let mut w = create(path)?;
        for (p, pred) in test.iter().zip(&report.predictions) {
            writeln!(w, "{}\t{}", p.marker, pred)?;
        }
        w.flush()?;
    }
    ctx.emit(&report)?;
    Ok(())
}

fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let text = fs::read_to_string(existing(path)?)?;
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(g), Some(p), None) => {
                gold.push(g.to_string());
                pred.push(p.to_string());
            }
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected gold<TAB>predicted".into(),
                })
            }
        }
    }
    Ok((gold, pred))
}

#[derive(Serialize)]
struct ConfusionReport {
    matrix: eval::ConfusionMatrix,
    accuracy: f64,
    residual: Option<eval::ResidualAnalysis>,
}

impl std::fmt::Display for ConfusionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let w = self.matrix.classes.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
        write!(f, "{:<w$}", "")?;
        for c in &self.matrix.classes {
            write!(f, "  {:>w$}", c)?;
        }
        writeln!(f)?;
        for (c, row) in self.matrix.classes.iter().zip(&self.matrix.counts) {
            write!(f, "{:<w$}", c)?;
            for v in row {
                write!(f, "  {:>w$}", v)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "accuracy  {:.4}", self.accuracy)?;
        if let Some(r) = &self.residual {
            writeln!(
                f,
                "step 1: unbalanced = {:.6} + {:.6} * log(freq)  (R^2 {:.4})",
                r.frequency_fit.intercept, r.frequency_fit.slope, r.frequency_fit.r_squared
            )?;
            writeln!(
                f,
                "step 2: balanced = {:.6} + {:.6} * residual  (R^2 {:.4}, F(1,{}) = {:.3}, {} cells)",
                r.residual_fit.intercept,
                r.residual_fit.slope,
                r.r_squared,
                r.cells.saturating_sub(2),
                r.f_statistic,
                r.cells
            )?;
        }
        Ok(())
    }
}

fn cmd_confusion(ctx: &Ctx, a: ConfusionArgs) -> CmdResult {
    let train = load(&a.train)?;
    let freqs = eval::label_frequencies(&train.iter().map(|p| p.marker.as_str()).collect::<Vec<_>>());
    let classes = eval::order_by_frequency(&freqs);
    let (gold, pred) = read_predictions(&a.predictions)?;
    let matrix = eval::confusion(&gold, &pred, &classes)?;
    let residual = match &a.balanced {
        Some(path) => {
            let (bg, bp) = read_predictions(path)?;
            let balanced = eval::confusion(&bg, &bp, &classes)?;
            Some(eval::frequency_residual_analysis(&matrix, &balanced, &freqs, a.include_diagonal)?)
        }
        None => None,
    };
    if let Some(prefix) = &a.out {
        let mut w = create(&with_suffix(prefix, ".counts.csv"))?;
        matrix.write_counts_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&with_suffix(prefix, ".normalized.csv"))?;
        matrix.write_normalized_csv(&mut w)?;
        w.flush()?;
        let mut w = create(&with_suffix(prefix, ".log.csv"))?;
        matrix.write_log_csv(a.delta, &mut w)?;
        w.flush()?;
    }
    ctx.emit(&ConfusionReport {
        accuracy: matrix.accuracy(),
        matrix,
        residual,
    })?;
    Ok(())
}

#[derive(Serialize)]
struct GradcheckOutput {
    hidden: usize,
    seed: u64,
    coords_checked: usize,
    max_rel_error: f64,
    /// Tensor, offset, analytic and numeric value at the worst coordinate.
    worst: (usize, usize, f64, f64),
    tolerance: f64,
    passed: bool,
}

impl std::fmt::Display for GradcheckOutput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "max relative error {:.3e} over {} coordinates", self.max_rel_error, self.coords_checked)?;
        writeln!(f, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

fn cmd_gradcheck(ctx: &Ctx, a: GradcheckArgs) -> CmdResult {
    if a.hidden == 0 || a.embed_dim == 0 || a.vocab == 0 || a.classes < 2 || a.batch == 0 || a.max_len == 0 {
        return Err(Error::argument("gradcheck needs positive sizes and at least two classes").into());
    }
    let dims = Dims {
        vocab: a.vocab,
        embed: a.embed_dim,
        hidden: a.hidden,
        proj: 2 * a.hidden,
        classes: a.classes,
    };
    let (params, batch) = encoder::gradcheck_problem(dims, a.batch, a.max_len, ctx.seed);
    let report = encoder::grad_check(&params, &batch, a.epsilon, a.max_coords, ctx.seed)?;
    let passed = report.max_rel_error < a.tolerance;
    ctx.emit(&GradcheckOutput {
        hidden: a.hidden,
        seed: ctx.seed,
        coords_checked: report.coords_checked,
        max_rel_error: report.max_rel_error,
        worst: report.worst,
        tolerance: a.tolerance,
        passed,
    })?;
    if passed {
        Ok(())
    } else {
        Err(GradcheckFailed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from(["dismark", "no-such-command"]), 1);
        assert_eq!(run_from(["dismark", "stats", "--bogus"]), 1);
        assert_eq!(run_from(["dismark", "--version"]), 0);
    }

    #[test]
    fn config_file_parses() {
        let text = r#"
seed = 9
marker_set = "books5"

[extraction]
min_len = 4

[train]
hidden = 8

[[pattern]]
marker = "when"
s2_attach = "advcl"
marker_attach = "mark"
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.extraction.unwrap().min_len, 4);
        assert_eq!(cfg.train.unwrap().hidden, 8);
        assert_eq!(cfg.patterns.len(), 1);
        assert!(toml::from_str::<RunConfig>("unknown = 1").is_err());
    }
}
