//! The `ethno` command line.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bisg::{classify_bisg, load_bisg_tables, GeoMode};
use crate::distill::{evaluate_student, export_teacher_set, read_label_file, read_split_file};
use crate::llm::backend::{backend_from_env, ChatBackend, MockBackend};
use crate::llm::{
    build_prompt, classify_batch, digest_fields, BackendConfig, DirCache, Feature, MemoryCache,
    NameMode, PromptConfig, ReasoningLevel, ResponseCache, TemplateRegistry,
    BASELINE_TEMPLATE_ID,
};
use crate::manifest::RunManifest;
use crate::metrics::{
    aggregate_error, compare_models, confusion_matrix, evaluate, income_bias_audit, CensusShares,
};
use crate::prediction::{read_predictions, write_predictions};
use crate::records::{
    ingest_records, load_scheme, stratified_sample, write_records, CategoryScheme, ColumnMapping,
    RecordSet, StratumField,
};
use crate::rng::SampleRng;

#[derive(Debug, Parser)]
#[command(name = "ethno", version, about = "Name-based ethnicity classification and evaluation")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Base directory for outputs; relative --out paths are placed inside it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Only errors on stderr, nothing on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// Directory of cached backend responses (LLM engine).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw an equal-size sample from every stratum.
    Sample(SampleArgs),
    /// Predict a label for every record with BISG or an LLM.
    Classify(Box<ClassifyArgs>),
    /// Accuracy, per-class recall and confusion matrix.
    Evaluate(EvaluateArgs),
    /// Compare predicted label shares with census shares.
    AggregateValidate(AggregateArgs),
    /// Misclassification by income ventile with an OLS trend per race.
    AuditBias(AuditArgs),
    /// Write teacher-labelled train/test files for a student model.
    ExportDistill(ExportArgs),
    /// Score base and fine-tuned student predictions on the test split.
    ScoreStudent(ScoreArgs),
}

#[derive(Debug, Args)]
struct RecordArgs {
    /// Record file (CSV, TSV or JSON-lines).
    #[arg(long = "in")]
    input: PathBuf,
    /// Column mapping JSON.
    #[arg(long)]
    map: PathBuf,
    /// Category scheme JSON.
    #[arg(long)]
    scheme: PathBuf,
}

#[derive(Debug, Args)]
struct TruthArgs {
    /// Record file carrying the truth labels.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    scheme: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    records: RecordArgs,
    /// truth, gender, party or geo:<level>.
    #[arg(long, default_value = "truth")]
    stratum: String,
    /// Records per stratum.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "sample.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineArg {
    Bisg,
    Llm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NameModeArg {
    Full,
    SurnameOnly,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    records: RecordArgs,
    #[arg(long, value_enum)]
    engine: EngineArg,
    #[arg(long, default_value = "predictions.jsonl")]
    out: PathBuf,
    /// Geography level used by BISG and the prompt Location line.
    #[arg(long)]
    geo_level: Option<String>,
    /// BISG without a geography factor.
    #[arg(long)]
    surname_only: bool,
    /// Surname table CSV (BISG).
    #[arg(long)]
    surname_table: Option<PathBuf>,
    /// Geography count table CSV (BISG).
    #[arg(long)]
    geo_table: Option<PathBuf>,
    /// Backend id (openai, gemini, qwen, openrouter, deepseek, mock).
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = BASELINE_TEMPLATE_ID)]
    template: String,
    /// Directory of extra prompt templates (*.txt).
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    name_mode: NameModeArg,
    /// Leave the Location line out of the prompt.
    #[arg(long)]
    no_geo: bool,
    /// Coarser levels appended to the location, comma separated.
    #[arg(long, value_delimiter = ',')]
    geo_context: Vec<String>,
    /// Extra prompt inputs: age, party, zip, gender or all.
    #[arg(long, default_value = "")]
    features: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value = "off")]
    reasoning: String,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    /// Mock backend answers: fixed:<text>, hash, or truth:<error rate>.
    #[arg(long, default_value = "hash")]
    mock: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    preds: PathBuf,
    #[command(flatten)]
    truth: TruthArgs,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Prediction file; repeat to compare models (named by file stem).
    #[arg(long, required = true)]
    preds: Vec<PathBuf>,
    /// Census shares JSON: {"label": percent, ...}.
    #[arg(long)]
    census: PathBuf,
    #[arg(long)]
    scheme: PathBuf,
    #[arg(long, default_value = "aggregate.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long)]
    preds: PathBuf,
    #[command(flatten)]
    truth: TruthArgs,
    #[arg(long, default_value = "audit.json")]
    out: PathBuf,
    /// Ventile table CSV; defaults to ventiles.csv beside --out.
    #[arg(long)]
    ventiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    records: RecordArgs,
    /// Teacher predictions JSON-lines.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    /// Split each teacher label separately.
    #[arg(long)]
    stratify: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// test.jsonl from export-distill.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    finetuned: PathBuf,
    #[arg(long)]
    scheme: PathBuf,
    #[arg(long, default_value = "student_report.json")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

struct Ctx {
    seed: u64,
    out_dir: Option<PathBuf>,
    quiet: bool,
    cache_dir: Option<PathBuf>,
    manifest: RunManifest,
}

impl Ctx {
    fn out_path(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn info(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn print(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn scheme(&mut self, path: &Path) -> CliResult<Arc<CategoryScheme>> {
        self.manifest.add_config(path)?;
        Ok(Arc::new(load_scheme(path)?))
    }

    fn records(&mut self, path: &Path, map: &Path, scheme: Arc<CategoryScheme>) -> CliResult<(RecordSet, ColumnMapping)> {
        self.manifest.add_config(map)?;
        self.manifest.add_input(path)?;
        let mapping = ColumnMapping::load(map)?;
        let (set, report) = ingest_records(path, &mapping, scheme)?;
        if !report.rejects.is_empty() {
            self.info(report.render_text().trim_end());
        }
        Ok((set, mapping))
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        self.manifest.add_input(path)?;
        Ok(())
    }

    fn create_parent(path: &Path) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        Self::create_parent(path)?;
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(path, text)?;
        self.manifest.add_output(path);
        Ok(())
    }

    fn write_text(&mut self, path: &Path, text: &str) -> CliResult<()> {
        Self::create_parent(path)?;
        std::fs::write(path, text)?;
        self.manifest.add_output(path);
        Ok(())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let parsed = Cli::command()
        .try_get_matches_from(&argv)
        .and_then(|m| Ok((Cli::from_arg_matches(&m)?, m)));
    let (cli, matches) = match parsed {
        Ok(p) => p,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let name = matches.subcommand_name().unwrap_or_default().to_string();
    let mut ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
        quiet: cli.quiet,
        cache_dir: cli.cache_dir,
        manifest: RunManifest::new(name, args, cli.seed),
    };
    let result = match &cli.command {
        Command::Sample(a) => run_sample(&mut ctx, a),
        Command::Classify(a) => run_classify(&mut ctx, a),
        Command::Evaluate(a) => run_evaluate(&mut ctx, a),
        Command::AggregateValidate(a) => run_aggregate(&mut ctx, a),
        Command::AuditBias(a) => run_audit(&mut ctx, a),
        Command::ExportDistill(a) => run_export(&mut ctx, a),
        Command::ScoreStudent(a) => run_score(&mut ctx, a),
    }
    .and_then(|()| {
        ctx.manifest.write()?;
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            2
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn run_sample(ctx: &mut Ctx, a: &SampleArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.records.scheme)?;
    let (set, mapping) = ctx.records(&a.records.input, &a.records.map, scheme)?;
    let field: StratumField = a.stratum.parse().map_err(|e| usage(format!("{e:?}")))?;
    let sample = stratified_sample(&set, &field, a.n, ctx.seed)?;
    let out = ctx.out_path(&a.out);
    Ctx::create_parent(&out)?;
    write_records(&out, sample.records(), &mapping)?;
    ctx.manifest.add_output(&out);
    ctx.info(format!("sampled {} records into {}", sample.len(), out.display()));
    Ok(())
}

fn run_classify(ctx: &mut Ctx, a: &ClassifyArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.records.scheme)?;
    let (set, _) = ctx.records(&a.records.input, &a.records.map, scheme.clone())?;
    let out = ctx.out_path(&a.out);
    let preds = match a.engine {
        EngineArg::Bisg => classify_with_bisg(ctx, a, &set, &scheme)?,
        EngineArg::Llm => classify_with_llm(ctx, a, &set, &scheme, &out)?,
    };
    Ctx::create_parent(&out)?;
    write_predictions(&out, &preds)?;
    ctx.manifest.add_output(&out);
    let unparseable = preds.iter().filter(|p| p.label.is_unparseable()).count();
    ctx.info(format!(
        "{} predictions ({unparseable} UNPARSEABLE) written to {}",
        preds.len(),
        out.display()
    ));
    Ok(())
}

fn classify_with_bisg(
    ctx: &mut Ctx,
    a: &ClassifyArgs,
    set: &RecordSet,
    scheme: &CategoryScheme,
) -> CliResult<Vec<crate::Prediction>> {
    let surnames = a.surname_table.as_ref().ok_or_else(|| usage("--engine bisg needs --surname-table"))?;
    let geo = a.geo_table.as_ref().ok_or_else(|| usage("--engine bisg needs --geo-table"))?;
    let mode = match (&a.geo_level, a.surname_only) {
        (_, true) => GeoMode::SurnameOnly,
        (Some(level), false) => GeoMode::Level(level.clone()),
        (None, false) => return Err(usage("--engine bisg needs --geo-level or --surname-only")),
    };
    ctx.input(surnames)?;
    ctx.input(geo)?;
    let tables = load_bisg_tables(surnames, geo, scheme)?;
    let mut preds = Vec::with_capacity(set.len());
    let mut errors = Vec::new();
    for r in set.iter() {
        match classify_bisg(r, &tables, scheme, &mode) {
            Ok(p) => preds.push(p),
            Err(e) => errors.push(e.to_string()),
        }
    }
    if !errors.is_empty() {
        for e in &errors {
            eprintln!("  {e}");
        }
        return Err(CliError::Data(format!("{} record(s) could not be classified", errors.len())));
    }
    Ok(preds)
}

fn mock_backend(spec: &str, set: &RecordSet, pcfg: &PromptConfig, registry: &TemplateRegistry, seed: u64) -> CliResult<MockBackend> {
    let labels = set.scheme().labels().to_vec();
    if spec == "hash" {
        return Ok(MockBackend::hash_pick(labels));
    }
    if let Some(text) = spec.strip_prefix("fixed:") {
        return Ok(MockBackend::fixed(text));
    }
    if let Some(rate) = spec.strip_prefix("truth:") {
        let rate: f64 = rate
            .parse()
            .ok()
            .filter(|r| (0.0..=1.0).contains(r))
            .ok_or_else(|| usage(format!("bad error rate in --mock {spec:?}")))?;
        let mut answers: HashMap<String, String> = HashMap::new();
        for r in set.iter() {
            let prompt = build_prompt(r, pcfg, registry)?;
            if let Some(t) = &r.truth_label {
                answers.insert(prompt, t.clone());
            }
        }
        return Ok(MockBackend::script(move |req| {
            let digest = digest_fields(&["mock", &seed.to_string(), &req.prompt]);
            let mut rng = SampleRng::new(u64::from_str_radix(&digest[..16], 16).unwrap_or(0));
            let truth = answers.get(&req.prompt);
            let wrong = rng.unit_f64() < rate;
            Ok(match truth {
                Some(t) if !wrong => t.clone(),
                Some(t) => {
                    let others: Vec<&String> = labels.iter().filter(|l| *l != t).collect();
                    others[rng.below(others.len() as u64) as usize].clone()
                }
                None => labels[rng.below(labels.len() as u64) as usize].clone(),
            })
        }));
    }
    Err(usage(format!("unknown --mock policy {spec:?}; use fixed:<text>, hash or truth:<rate>")))
}

fn classify_with_llm(
    ctx: &mut Ctx,
    a: &ClassifyArgs,
    set: &RecordSet,
    scheme: &Arc<CategoryScheme>,
    out: &Path,
) -> CliResult<Vec<crate::Prediction>> {
    let backend_id = a.backend.as_deref().ok_or_else(|| usage("--engine llm needs --backend"))?;
    let model = a.model.clone().unwrap_or_else(|| format!("{backend_id}-default"));
    let registry = match &a.templates_dir {
        Some(dir) => TemplateRegistry::load_dir(dir)?,
        None => TemplateRegistry::builtin(),
    };
    let mut pcfg = PromptConfig::new(scheme.clone(), a.geo_level.clone().unwrap_or_default());
    pcfg.name_mode = match a.name_mode {
        NameModeArg::Full => NameMode::Full,
        NameModeArg::SurnameOnly => NameMode::SurnameOnly,
    };
    pcfg.include_geo = !a.no_geo;
    if pcfg.include_geo && a.geo_level.is_none() {
        return Err(usage("--engine llm needs --geo-level unless --no-geo is given"));
    }
    pcfg.geo_context = a.geo_context.clone();
    pcfg.extra_features = if a.features.trim().is_empty() {
        Default::default()
    } else {
        Feature::parse_list(&a.features).map_err(usage)?
    };
    pcfg.template_id = a.template.clone();

    let bcfg = BackendConfig {
        temperature: a.temperature,
        reasoning_level: a.reasoning.parse::<ReasoningLevel>().map_err(usage)?,
        max_retries: a.max_retries,
        concurrency_limit: a.concurrency,
        timeout: Duration::try_from_secs_f64(a.timeout_secs)
            .map_err(|_| usage("--timeout-secs must be a positive number"))?,
        ..BackendConfig::new(backend_id, model)
    };
    let backend: Arc<dyn ChatBackend> = if backend_id == "mock" {
        Arc::new(mock_backend(&a.mock, set, &pcfg, &registry, ctx.seed)?)
    } else {
        backend_from_env(backend_id)?
    };
    let cache: Box<dyn ResponseCache> = match &ctx.cache_dir {
        Some(dir) => Box::new(DirCache::open(dir)?),
        None => Box::new(MemoryCache::new()),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let output = runtime
        .block_on(classify_batch(set, &pcfg, &registry, &bcfg, backend.as_ref(), cache.as_ref()))
        .map_err(|e| match e {
            crate::llm::BatchError::Config(m) => usage(m),
            crate::llm::BatchError::Prompt(failures) => {
                for (id, e) in &failures {
                    eprintln!("  {id}: {e}");
                }
                CliError::Data(format!("{} record(s) cannot be prompted", failures.len()))
            }
            other => CliError::Data(other.to_string()),
        })?;
    for w in &output.warnings {
        ctx.info(format!("warning: {w}"));
    }
    let usage_path = out.with_file_name("usage.json");
    ctx.write_json(&usage_path, &output.usage)?;
    let u = &output.usage;
    ctx.info(format!(
        "calls {} cache hits {} retries {} unparseable {} errors {}",
        u.calls, u.cache_hits, u.retries, u.unparseable, u.errors
    ));
    Ok(output.predictions)
}

fn run_evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.truth.scheme)?;
    let (truths, _) = ctx.records(&a.truth.truth, &a.truth.map, scheme)?;
    ctx.input(&a.preds)?;
    let preds = read_predictions(&a.preds)?;
    let report = evaluate(&confusion_matrix(&preds, &truths)?)?;
    let out = ctx.out_path(&a.out);
    ctx.write_json(&out, &report)?;
    ctx.print(&report.render_text());
    Ok(())
}

#[derive(Serialize)]
struct AggregateOutput {
    models: BTreeMap<String, crate::metrics::AggregateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<crate::metrics::AggregateComparison>,
}

fn run_aggregate(ctx: &mut Ctx, a: &AggregateArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.scheme)?;
    ctx.input(&a.census)?;
    let census: CensusShares = serde_json::from_str(&std::fs::read_to_string(&a.census)?)?;
    let mut reports = Vec::new();
    for path in &a.preds {
        ctx.input(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if reports.iter().any(|(n, _)| *n == name) {
            return Err(usage(format!("two --preds files share the name {name:?}")));
        }
        let report = aggregate_error(&read_predictions(path)?, &census, &scheme)?;
        ctx.print(&format!("{name}\n{}\n", report.render_text()));
        reports.push((name, report));
    }
    let comparison = if reports.len() > 1 {
        Some(compare_models(&reports)?)
    } else {
        None
    };
    let out = ctx.out_path(&a.out);
    ctx.write_json(
        &out,
        &AggregateOutput {
            models: reports.into_iter().collect(),
            comparison,
        },
    )
}

fn run_audit(ctx: &mut Ctx, a: &AuditArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.truth.scheme)?;
    let (truths, _) = ctx.records(&a.truth.truth, &a.truth.map, scheme)?;
    ctx.input(&a.preds)?;
    let preds = read_predictions(&a.preds)?;
    let engine = preds.first().map(|p| p.model_id.clone()).unwrap_or_default();
    let report = income_bias_audit(&preds, &truths, &engine)?;
    let out = ctx.out_path(&a.out);
    let ventiles = match &a.ventiles {
        Some(p) => ctx.out_path(p),
        None => out.with_file_name("ventiles.csv"),
    };
    ctx.write_json(&out, &report)?;
    ctx.write_text(&ventiles, &report.ventile_csv())?;
    ctx.print(&report.render_text());
    Ok(())
}

fn run_export(ctx: &mut Ctx, a: &ExportArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.records.scheme)?;
    let (set, _) = ctx.records(&a.records.input, &a.records.map, scheme)?;
    ctx.input(&a.teacher)?;
    let teacher = read_predictions(&a.teacher)?;
    let dir = ctx.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let (split, train, test) = export_teacher_set(&set, &teacher, a.fraction, ctx.seed, a.stratify, &dir)?;
    ctx.manifest.add_output(&train);
    ctx.manifest.add_output(&test);
    ctx.info(format!(
        "train {} test {} excluded {} in {}",
        split.train.len(),
        split.test.len(),
        split.excluded,
        dir.display()
    ));
    Ok(())
}

fn run_score(ctx: &mut Ctx, a: &ScoreArgs) -> CliResult<()> {
    let scheme = ctx.scheme(&a.scheme)?;
    for p in [&a.test, &a.base, &a.finetuned] {
        ctx.input(p)?;
    }
    let report = evaluate_student(
        &read_split_file(&a.test)?,
        &read_label_file(&a.base)?,
        &read_label_file(&a.finetuned)?,
        &scheme,
    )?;
    let out = ctx.out_path(&a.out);
    ctx.write_json(&out, &report)?;
    ctx.print(&report.render_text());
    Ok(())
}
