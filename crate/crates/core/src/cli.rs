//! The `parag` command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 backend failure.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::citemodel::parse_response;
use crate::dataio::{
    export_stage, load_corpus, load_qa, read_ift, read_jsonl, read_manifest, read_pairs, write_json, Corpus, Document, Perspective, QaItem,
    StageManifest, StageRecords,
};
use crate::genclient::{ChatClient, GenConfig, Generator};
use crate::metrics::{covered_groups, evaluate, ResponseRecord};
use crate::mock::MockGenerator;
use crate::oracle::{MockOracle, Oracle, RemoteNli};
use crate::pipelines::{build_cq, build_ift, build_ri, build_rr, Batch, ChosenIndex, Deps, PipelineConfig, RunSummary};
use crate::retrieval::{LexicalRetriever, RemoteRetriever, Retriever};
use crate::{Error, HttpConfig};

#[derive(Debug, Parser)]
#[command(name = "parag", version, about = "Build citation-aware RAG training data and score cited answers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Use deterministic local backends; no network access.
    #[arg(long, global = true)]
    mock: bool,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: logical CPUs, at most 8).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, env = "GENERATOR_URL")]
    generator_url: Option<String>,
    #[arg(long, global = true, env = "NLI_URL")]
    nli_url: Option<String>,
    #[arg(long, global = true, env = "RETRIEVER_URL")]
    retriever_url: Option<String>,
    #[arg(long, global = true, env = "API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, global = true, default_value = "gpt-3.5-turbo-1106")]
    model: String,
    #[arg(long, global = true, default_value_t = 1.0)]
    temperature: f64,
    /// Per-request timeout in seconds.
    #[arg(long, global = true, default_value_t = 60)]
    timeout: u64,
    /// Attempts per request, including the first.
    #[arg(long, global = true, default_value_t = 3)]
    retries: u32,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build instruction fine-tuning records.
    BuildIft(BuildArgs),
    /// Build preference pairs for one perspective.
    BuildPref(PrefArgs),
    /// Score responses: answer recall and citation recall/precision.
    Eval(EvalArgs),
    /// Citation and answer-coverage distributions of data files.
    Stats(StatsArgs),
    /// Write the training stage manifest.
    ExportManifest(ManifestArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    max_golden: usize,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    /// Stage manifest to write alongside the data (defaults if absent).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PerspectiveArg {
    Ri,
    Rr,
    Cq,
}

#[derive(Debug, Args)]
struct PrefArgs {
    #[command(flatten)]
    build: BuildArgs,
    #[arg(long, value_enum)]
    perspective: PerspectiveArg,
    /// IFT records supplying chosen outputs (RI).
    #[arg(long)]
    ift: Option<PathBuf>,
    /// RI pairs supplying chosen outputs (RR).
    #[arg(long)]
    ri: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    n_related: usize,
    #[arg(long, default_value_t = 2)]
    n_random: usize,
    /// Emit only the first faulty statement of each CQ response.
    #[arg(long)]
    cq_first_error_only: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    qa: PathBuf,
    /// JSONL with `id`, `output` and `docs` per line.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// IFT, response or preference-pair JSONL files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Questions, for the answer-group coverage histogram.
    #[arg(long)]
    qa: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ManifestArgs {
    #[arg(long)]
    out: PathBuf,
    /// Start from this manifest instead of the defaults.
    #[arg(long)]
    from: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let workers = cli.global.workers.unwrap_or_else(default_workers).max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Backend(_) => 2,
                _ => 1,
            }
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}

fn dispatch(cli: &Cli) -> Result<(), Error> {
    let g = &cli.global;
    match &cli.command {
        Command::BuildIft(a) => build_ift_cmd(g, a),
        Command::BuildPref(a) => build_pref_cmd(g, a),
        Command::Eval(a) => eval_cmd(g, a),
        Command::Stats(a) => stats_cmd(a),
        Command::ExportManifest(a) => {
            let manifest = match &a.from {
                Some(p) => read_manifest(p)?,
                None => StageManifest::default(),
            };
            write_json(&a.out, &manifest)?;
            Ok(())
        }
    }
}

fn http(g: &Global) -> HttpConfig {
    HttpConfig {
        timeout: Duration::from_secs(g.timeout),
        max_attempts: g.retries.max(1),
        api_key: g.api_key.clone(),
        ..HttpConfig::default()
    }
}

fn missing(flag: &str, env: &str) -> Error {
    Error::Precondition(format!("--{flag} (or {env}) is required unless --mock is given"))
}

fn oracle(g: &Global) -> Result<Oracle, Error> {
    if g.mock {
        return Ok(Oracle::new(MockOracle::new()));
    }
    let url = g.nli_url.as_deref().ok_or_else(|| missing("nli-url", "NLI_URL"))?;
    Ok(Oracle::new(RemoteNli::new(url, http(g))))
}

fn generator(g: &Global) -> Result<Box<dyn Generator>, Error> {
    if g.mock {
        return Ok(Box::new(MockGenerator::new()));
    }
    let url = g.generator_url.as_deref().ok_or_else(|| missing("generator-url", "GENERATOR_URL"))?;
    Ok(Box::new(ChatClient::new(GenConfig {
        endpoint: url.to_string(),
        model: g.model.clone(),
        temperature: g.temperature,
        http: http(g),
        ..GenConfig::default()
    })?))
}

fn retriever(g: &Global, corpus: Arc<Corpus>) -> Box<dyn Retriever> {
    match (&g.retriever_url, g.mock) {
        (Some(url), false) => Box::new(RemoteRetriever::new(url, http(g))),
        _ => Box::new(LexicalRetriever::new(corpus)),
    }
}

fn load_questions(path: &Path) -> Result<Vec<QaItem>, Error> {
    let file = load_qa(path)?;
    if file.skipped_empty > 0 {
        log::warn!("{}: skipped {} questions without answers", path.display(), file.skipped_empty);
    }
    Ok(file.items)
}

fn manifest(a: &BuildArgs) -> Result<StageManifest, Error> {
    Ok(match &a.manifest {
        Some(p) => read_manifest(p)?,
        None => StageManifest::default(),
    })
}

fn print_summary(summary: &RunSummary) -> Result<(), Error> {
    let line = serde_json::to_string(summary).map_err(|e| Error::Precondition(e.to_string()))?;
    println!("{line}");
    Ok(())
}

fn pipeline_config(g: &Global, a: &BuildArgs) -> PipelineConfig {
    PipelineConfig {
        seed: g.seed,
        k: a.k,
        max_golden: a.max_golden,
        samples: a.samples,
        ..PipelineConfig::default()
    }
}

fn build_ift_cmd(g: &Global, a: &BuildArgs) -> Result<(), Error> {
    let items = load_questions(&a.qa)?;
    let corpus = Arc::new(load_corpus(&a.corpus)?);
    let (ret, gen, orc) = (retriever(g, corpus), generator(g)?, oracle(g)?);
    let deps = Deps {
        retriever: ret.as_ref(),
        generator: gen.as_ref(),
        oracle: &orc,
    };
    let cfg = pipeline_config(g, a);
    let batch = Batch::retrieve(&items, deps.retriever, cfg.k);
    let (records, summary) = build_ift(&batch, &deps, &cfg)?;
    export_stage(StageRecords::Ift(&records), &manifest(a)?, &a.out)?;
    print_summary(&summary)
}

fn build_pref_cmd(g: &Global, a: &PrefArgs) -> Result<(), Error> {
    let b = &a.build;
    let items = load_questions(&b.qa)?;
    let corpus = Arc::new(load_corpus(&b.corpus)?);
    let (ret, gen, orc) = (retriever(g, corpus.clone()), generator(g)?, oracle(g)?);
    let deps = Deps {
        retriever: ret.as_ref(),
        generator: gen.as_ref(),
        oracle: &orc,
    };
    let cfg = PipelineConfig {
        n_related: a.n_related,
        n_random: a.n_random,
        cq_first_error_only: a.cq_first_error_only,
        ..pipeline_config(g, b)
    };
    let batch = Batch::retrieve(&items, deps.retriever, cfg.k);
    let ift = a.ift.as_deref().map(read_ift).transpose()?;
    let (perspective, pairs, summary) = match a.perspective {
        PerspectiveArg::Ri => {
            let ift = ift.ok_or_else(|| Error::Precondition("--ift is required for --perspective ri".into()))?;
            let (p, s) = build_ri(&batch, &ChosenIndex::from_ift(&ift), &deps, &cfg)?;
            (Perspective::Ri, p, s)
        }
        PerspectiveArg::Rr => {
            let ri_path = a.ri.as_deref().ok_or_else(|| Error::Precondition("--ri is required for --perspective rr".into()))?;
            let ri = read_pairs(ri_path)?;
            let mut known: HashMap<String, Document> = HashMap::new();
            for rec in ift.iter().flatten() {
                for d in &rec.prompt_docs {
                    known.insert(d.doc_id.clone(), d.clone());
                }
            }
            let chosen = ChosenIndex::from_ri_pairs(&ri, |id| known.get(id).or_else(|| corpus.get(id)).cloned())?;
            let (p, s) = build_rr(&batch, &chosen, &deps, &cfg)?;
            (Perspective::Rr, p, s)
        }
        PerspectiveArg::Cq => {
            let (p, s) = build_cq(&batch, &deps, &cfg)?;
            (Perspective::Cq, p.into_iter().flatten().collect(), s)
        }
    };
    export_stage(StageRecords::Pairs(perspective, &pairs), &manifest(b)?, &b.out)?;
    print_summary(&summary)
}

fn eval_cmd(g: &Global, a: &EvalArgs) -> Result<(), Error> {
    let index: HashMap<String, QaItem> = load_questions(&a.qa)?.into_iter().map(|q| (q.qid.clone(), q)).collect();
    let responses: Vec<ResponseRecord> = read_jsonl(&a.responses)?;
    let report = evaluate(&responses, &index, &oracle(g)?)?;
    write_json(&a.out, &report)?;
    Ok(())
}

/// Distribution report for one data file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FileStats {
    pub records: usize,
    pub statements: usize,
    /// Citations per statement, as percentages of statements.
    pub citations_per_claim: BTreeMap<usize, f64>,
    /// Answer groups covered per record (`covered/total`), as percentages of
    /// records. Empty without questions.
    pub group_coverage: BTreeMap<String, f64>,
}

fn percentages<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> BTreeMap<K, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(k, &c)| (k.clone(), (c as f64 * 10_000.0 / total as f64).round() / 100.0))
        .collect()
}

/// Texts of one JSONL record whose statements are counted, and the text
/// whose answer coverage is measured. CQ pairs count their chosen marker run
/// as a single claim.
fn record_texts(v: &Value) -> Option<(String, Vec<usize>)> {
    let obj = v.as_object()?;
    let qid = obj.get("id").map(|id| match id {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    })?;
    if let Some(out) = obj.get("output").and_then(Value::as_str) {
        let counts = parse_response(out).statements.iter().map(|s| s.citations.len()).collect();
        return Some((format!("{qid}\n{out}"), counts));
    }
    let chosen = obj.get("chosen").and_then(Value::as_str)?;
    if obj.get("perspective").and_then(Value::as_str) == Some("CQ") {
        return Some((format!("{qid}\n"), vec![crate::citemodel::find_markers(chosen).len()]));
    }
    let counts = parse_response(chosen).statements.iter().map(|s| s.citations.len()).collect();
    Some((format!("{qid}\n{chosen}"), counts))
}

/// Statistics over JSONL records (IFT, responses or preference pairs).
pub fn file_stats(records: &[Value], questions: Option<&HashMap<String, QaItem>>) -> FileStats {
    let mut cites: BTreeMap<usize, usize> = BTreeMap::new();
    let mut coverage: BTreeMap<String, usize> = BTreeMap::new();
    let mut statements = 0;
    for rec in records {
        let Some((keyed, counts)) = record_texts(rec) else { continue };
        statements += counts.len();
        for c in counts {
            *cites.entry(c).or_default() += 1;
        }
        let (qid, text) = keyed.split_once('\n').unwrap_or((&keyed, ""));
        if let Some(qa) = questions.and_then(|q| q.get(qid)) {
            if !text.is_empty() {
                let key = format!("{}/{}", covered_groups(text, qa).len(), qa.answer_groups.len());
                *coverage.entry(key).or_default() += 1;
            }
        }
    }
    FileStats {
        records: records.len(),
        statements,
        citations_per_claim: percentages(&cites),
        group_coverage: percentages(&coverage),
    }
}

fn stats_cmd(a: &StatsArgs) -> Result<(), Error> {
    let questions = match &a.qa {
        Some(p) => Some(load_questions(p)?.into_iter().map(|q| (q.qid.clone(), q)).collect::<HashMap<_, _>>()),
        None => None,
    };
    let mut report = BTreeMap::new();
    for f in &a.files {
        let records: Vec<Value> = read_jsonl(f)?;
        report.insert(f.display().to_string(), file_stats(&records, questions.as_ref()));
    }
    match &a.out {
        Some(out) => write_json(out, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Precondition(e.to_string()))?),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn stats_single_citations() {
        let recs = vec![
            json!({"id": "a", "output": "One[1]. Two[2]."}),
            json!({"id": "b", "output": "Three[3]."}),
        ];
        let s = file_stats(&recs, None);
        assert_eq!(s.statements, 3);
        assert_eq!(s.citations_per_claim, BTreeMap::from([(1, 100.0)]));
        assert!(s.group_coverage.is_empty());
    }

    #[test]
    fn stats_empty() {
        let s = file_stats(&[], None);
        assert_eq!(s.records, 0);
        assert!(s.citations_per_claim.is_empty());
    }

    #[test]
    fn stats_coverage() {
        let qa = QaItem::new("a", "q", vec![vec!["Patchy".into()], vec!["Burger Beard".into()]]).unwrap();
        let idx = HashMap::from([("a".to_string(), qa)]);
        let recs = vec![json!({"id": "a", "output": "Patchy the Pirate[1]."})];
        let s = file_stats(&recs, Some(&idx));
        assert_eq!(s.group_coverage, BTreeMap::from([("1/2".to_string(), 100.0)]));
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        assert_eq!(run(["parag", "eval", "--responses", "r.jsonl", "--out", "x.json"]), 1);
        assert_eq!(run(["parag", "frobnicate"]), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["parag", "--help"]), 0);
    }
}
