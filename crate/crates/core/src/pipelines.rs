//! The four data-construction flows: instruction fine-tuning (IFT) and the
//! informativeness (RI), robustness (RR) and citation-quality (CQ)
//! preference pairs.
//!
//! Questions are processed in parallel; every random choice is drawn from a
//! stream keyed by (seed, qid, purpose) and results keep input order, so
//! output does not depend on scheduling.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::citemodel::{build_mapping, parse_response, remap_citations, render_markers, Direction};
use crate::dataio::{export_stage, Document, IftRecord, Perspective, PreferencePair, QaItem, StageManifest, StageRecords};
use crate::error::{BackendError, DataError};
use crate::genclient::{build_ift_prompt, build_rag_prompt, Generator};
use crate::metrics::{is_complete, is_incomplete};
use crate::oracle::{build_premise, Oracle};
use crate::retrieval::{
    assemble_prompt_docs, filter_golden, retrieve, sample_noisy, select_prompt_docs, DocFlag, PromptDoc, PromptDocSet, RankedList,
    Retriever,
};
use crate::rewrite::{rewrite_response, MAX_DOCS};
use crate::seed::{derive, rng_for};
use crate::Error;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Documents retrieved per question.
    pub k: usize,
    pub max_golden: usize,
    pub n_related: usize,
    pub n_random: usize,
    /// Generator samples requested per prompt.
    pub samples: usize,
    /// Attempts at drawing a document deletion that hides an answer (RI).
    pub deletion_retries: usize,
    /// Emit only the first faulty statement per CQ response.
    pub cq_first_error_only: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            k: 100,
            max_golden: 5,
            n_related: 2,
            n_random: 2,
            samples: 4,
            deletion_retries: 8,
            cq_first_error_only: false,
        }
    }
}

/// Backends shared by all flows.
#[derive(Clone, Copy)]
pub struct Deps<'a> {
    pub retriever: &'a dyn Retriever,
    pub generator: &'a dyn Generator,
    pub oracle: &'a Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// No answer-covering set of at most `max_golden` golden documents.
    NoCover,
    /// No qualifying incomplete (rejected) response.
    NoIncomplete,
    /// A backend kept failing for this question.
    Backend,
    /// Every candidate cited a document index outside the prompt.
    Remap,
    /// No complete, fully supportable response.
    NoComplete,
    /// Not enough answer-free documents to sample noise from.
    NoNoise,
    /// No chosen output from the previous stage.
    NoChosen,
    /// The response's citations were already correct.
    NoCitationError,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub no_cover: u64,
    pub no_incomplete: u64,
    pub backend: u64,
    pub remap: u64,
    pub no_complete: u64,
    pub no_noise: u64,
    pub no_chosen: u64,
    pub no_citation_error: u64,
}

impl SkipCounts {
    fn add(&mut self, r: SkipReason) {
        let slot = match r {
            SkipReason::NoCover => &mut self.no_cover,
            SkipReason::NoIncomplete => &mut self.no_incomplete,
            SkipReason::Backend => &mut self.backend,
            SkipReason::Remap => &mut self.remap,
            SkipReason::NoComplete => &mut self.no_complete,
            SkipReason::NoNoise => &mut self.no_noise,
            SkipReason::NoChosen => &mut self.no_chosen,
            SkipReason::NoCitationError => &mut self.no_citation_error,
        };
        *slot += 1;
    }

    pub fn total(&self) -> u64 {
        self.no_cover + self.no_incomplete + self.backend + self.remap + self.no_complete + self.no_noise + self.no_chosen + self.no_citation_error
    }
}

/// Per-stage accounting: `questions == kept + skipped.total()`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stage: String,
    pub questions: u64,
    pub kept: u64,
    pub skipped: SkipCounts,
    /// Distinct entailment queries resolved by the backend during the stage.
    pub oracle_calls: u64,
    pub generator_calls: u64,
    /// qids that produced output, in input order.
    pub qids: Vec<String>,
}

enum Outcome<T> {
    Kept(T),
    Skipped(SkipReason),
}

struct Row<T> {
    qid: String,
    outcome: Outcome<T>,
    generator_calls: u64,
}

fn run_stage<T: Send>(
    stage: &str,
    items: &[QaItem],
    oracle: &Oracle,
    per_question: impl Fn(&QaItem, &mut u64) -> Result<Outcome<T>, Error> + Sync,
) -> Result<(Vec<T>, RunSummary), Error> {
    let resolved_before = oracle.stats().resolved;
    let rows: Vec<Result<Row<T>, Error>> = items
        .par_iter()
        .map(|qa| {
            let mut calls = 0;
            let outcome = match per_question(qa, &mut calls) {
                Ok(o) => o,
                Err(Error::Backend(e)) => {
                    log::warn!("{stage} {}: backend failure: {e}", qa.qid);
                    Outcome::Skipped(SkipReason::Backend)
                }
                Err(e) => return Err(e),
            };
            Ok(Row {
                qid: qa.qid.clone(),
                outcome,
                generator_calls: calls,
            })
        })
        .collect();
    let mut out = Vec::new();
    let mut summary = RunSummary {
        stage: stage.to_string(),
        questions: items.len() as u64,
        ..RunSummary::default()
    };
    for row in rows {
        let row = row?;
        summary.generator_calls += row.generator_calls;
        match row.outcome {
            Outcome::Kept(t) => {
                summary.kept += 1;
                summary.qids.push(row.qid);
                out.push(t);
            }
            Outcome::Skipped(r) => summary.skipped.add(r),
        }
    }
    summary.oracle_calls = oracle.stats().resolved - resolved_before;
    if summary.questions > 0 && summary.skipped.backend == summary.questions {
        return Err(BackendError::Unreachable {
            service: "pipeline",
            message: format!("{stage}: every question failed with a backend error"),
        }
        .into());
    }
    Ok((out, summary))
}

/// Retrieval results for a batch of questions, computed once and shared by
/// the flows that need them.
pub struct Batch {
    pub items: Vec<QaItem>,
    ranked: HashMap<String, Result<RankedList, String>>,
}

impl Batch {
    pub fn retrieve(items: &[QaItem], retriever: &dyn Retriever, k: usize) -> Self {
        let ranked = items
            .par_iter()
            .map(|qa| {
                let r = retrieve(retriever, &qa.qid, &qa.question, k).map_err(|e| e.to_string());
                (qa.qid.clone(), r)
            })
            .collect();
        Self {
            items: items.to_vec(),
            ranked,
        }
    }

    pub fn ranked(&self, qid: &str) -> Result<&RankedList, Error> {
        match self.ranked.get(qid) {
            Some(Ok(r)) => Ok(r),
            Some(Err(msg)) => Err(BackendError::Unreachable {
                service: "retriever",
                message: msg.clone(),
            }
            .into()),
            None => Err(Error::Precondition(format!("question {qid} is not in this batch"))),
        }
    }

    /// Documents retrieved for every other question, deduplicated, in batch
    /// order.
    fn other_pool(&self, qid: &str) -> Vec<Document> {
        let mut seen = std::collections::HashSet::new();
        let mut pool = Vec::new();
        for qa in &self.items {
            if qa.qid == qid {
                continue;
            }
            if let Some(Ok(list)) = self.ranked.get(&qa.qid) {
                for d in list.documents() {
                    if seen.insert(d.doc_id.as_str()) {
                        pool.push(d.clone());
                    }
                }
            }
        }
        pool
    }
}

fn generate(deps: &Deps<'_>, prompt: &str, n: usize, seed: u64, calls: &mut u64) -> Result<Vec<String>, Error> {
    *calls += 1;
    Ok(deps.generator.generate(prompt, n, seed)?.candidates)
}

/// Golden prompt documents for one question.
fn golden_set(batch: &Batch, qa: &QaItem, cfg: &PipelineConfig) -> Result<Option<PromptDocSet>, Error> {
    let ranked = batch.ranked(&qa.qid)?;
    let golden = filter_golden(ranked, qa);
    Ok(select_prompt_docs(&golden, qa, cfg.max_golden.min(MAX_DOCS)))
}

/// Instruction fine-tuning records: hinted generation, citation rewrite, and
/// a filter keeping only complete responses whose every statement could be
/// supported.
pub fn build_ift(batch: &Batch, deps: &Deps<'_>, cfg: &PipelineConfig) -> Result<(Vec<IftRecord>, RunSummary), Error> {
    run_stage("IFT", &batch.items, deps.oracle, |qa, calls| {
        let Some(set) = golden_set(batch, qa, cfg)? else {
            return Ok(Outcome::Skipped(SkipReason::NoCover));
        };
        let docs = set.documents();
        let hinted = build_ift_prompt(&qa.question, &qa.answer_groups, &docs)?;
        let candidates = generate(deps, &hinted, cfg.samples, derive(cfg.seed, &[&qa.qid, "ift"]), calls)?;
        let mut remap_failures = 0;
        for cand in &candidates {
            let parsed = parse_response(cand);
            let (rewritten, report) = match rewrite_response(&parsed, &docs, deps.oracle) {
                Ok(r) => r,
                Err(Error::Citation(_)) => {
                    remap_failures += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let output = rewritten.render();
            if report.has_infeasible() || rewritten.statements.is_empty() || !is_complete(&output, qa) {
                continue;
            }
            return Ok(Outcome::Kept(IftRecord {
                qid: qa.qid.clone(),
                question: qa.question.clone(),
                prompt: build_rag_prompt(&qa.question, &docs)?,
                prompt_docs: docs,
                output,
            }));
        }
        Ok(Outcome::Skipped(if remap_failures > 0 && remap_failures == candidates.len() {
            SkipReason::Remap
        } else {
            SkipReason::NoComplete
        }))
    })
}

/// A chosen output and the golden documents it cites, keyed by qid.
#[derive(Debug, Clone, Default)]
pub struct ChosenIndex {
    entries: HashMap<String, ChosenEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChosenEntry {
    pub docs: Vec<Document>,
    pub output: String,
}

impl ChosenIndex {
    pub fn from_ift(records: &[IftRecord]) -> Self {
        Self {
            entries: records
                .iter()
                .map(|r| {
                    (
                        r.qid.clone(),
                        ChosenEntry {
                            docs: r.prompt_docs.clone(),
                            output: r.output.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// RI chosen outputs, with golden documents resolved through `lookup`
    /// from the pair's `golden_doc_ids` meta.
    pub fn from_ri_pairs(pairs: &[PreferencePair], lookup: impl Fn(&str) -> Option<Document>) -> Result<Self, DataError> {
        let mut entries = HashMap::new();
        for p in pairs {
            let ids = p
                .meta
                .get("golden_doc_ids")
                .and_then(Value::as_array)
                .ok_or_else(|| DataError::Invalid(format!("{}: RI pair lacks golden_doc_ids", p.qid)))?;
            let docs = ids
                .iter()
                .map(|v| {
                    let id = v.as_str().unwrap_or_default();
                    lookup(id).ok_or_else(|| DataError::Invalid(format!("{}: unknown doc id {id}", p.qid)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.insert(
                p.qid.clone(),
                ChosenEntry {
                    docs,
                    output: p.chosen.clone(),
                },
            );
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, qid: impl Into<String>, entry: ChosenEntry) {
        self.entries.insert(qid.into(), entry);
    }

    pub fn get(&self, qid: &str) -> Option<&ChosenEntry> {
        self.entries.get(qid)
    }

    /// Keeps only the listed qids.
    pub fn restricted_to(&self, qids: &[String]) -> Self {
        Self {
            entries: qids.iter().filter_map(|q| self.entries.get(q).map(|e| (q.clone(), e.clone()))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Display indices (ascending) to keep after deleting a random nonempty
/// proper subset of `m` documents such that some answer group loses all of
/// its documents.
fn draw_deletion<R: Rng>(docs: &[Document], qa: &QaItem, retries: usize, rng: &mut R) -> Option<Vec<usize>> {
    let m = docs.len();
    if !(2..=MAX_DOCS).contains(&m) {
        return None;
    }
    for _ in 0..retries {
        let removed: u32 = rng.random_range(1..(1u32 << m) - 1);
        let kept: Vec<usize> = (0..m).filter(|i| removed >> i & 1 == 0).map(|i| i + 1).collect();
        let kept_text: String = kept.iter().map(|&i| docs[i - 1].text.as_str()).collect::<Vec<_>>().join("\n");
        if !is_complete(&kept_text, qa) {
            return Some(kept);
        }
    }
    None
}

fn doc_ids(docs: &[Document]) -> Value {
    json!(docs.iter().map(|d| d.doc_id.as_str()).collect::<Vec<_>>())
}

/// Response-informativeness pairs: chosen is the complete answer over all
/// golden documents; rejected is an incomplete answer generated after some
/// golden documents were deleted, renumbered back to the full prompt.
pub fn build_ri(batch: &Batch, chosen: &ChosenIndex, deps: &Deps<'_>, cfg: &PipelineConfig) -> Result<(Vec<PreferencePair>, RunSummary), Error> {
    run_stage("RI", &batch.items, deps.oracle, |qa, calls| {
        let Some(entry) = chosen.get(&qa.qid) else {
            return Ok(Outcome::Skipped(SkipReason::NoChosen));
        };
        let mut rng = rng_for(cfg.seed, &qa.qid, "ri-delete");
        let Some(kept) = draw_deletion(&entry.docs, qa, cfg.deletion_retries, &mut rng) else {
            return Ok(Outcome::Skipped(SkipReason::NoIncomplete));
        };
        let mapping = build_mapping(&kept)?;
        let reduced: Vec<Document> = kept.iter().map(|&i| entry.docs[i - 1].clone()).collect();
        let prompt = build_rag_prompt(&qa.question, &reduced)?;
        let candidates = generate(deps, &prompt, cfg.samples, derive(cfg.seed, &[&qa.qid, "ri"]), calls)?;
        let mut remap_failures = 0;
        for (attempt, cand) in candidates.iter().enumerate() {
            let restored = match remap_citations(cand, &mapping, Direction::Inverse) {
                Ok(t) => t,
                Err(_) => {
                    remap_failures += 1;
                    continue;
                }
            };
            if !is_incomplete(&restored, qa) || restored == entry.output {
                continue;
            }
            let mut meta = BTreeMap::new();
            meta.insert("golden_doc_ids".into(), doc_ids(&entry.docs));
            meta.insert("kept_positions".into(), json!(kept));
            meta.insert("rejected_raw".into(), json!(cand));
            meta.insert("attempt".into(), json!(attempt));
            return Ok(Outcome::Kept(PreferencePair {
                qid: qa.qid.clone(),
                perspective: Perspective::Ri,
                prompt: build_rag_prompt(&qa.question, &entry.docs)?,
                chosen: entry.output.clone(),
                rejected: restored,
                meta,
            }));
        }
        Ok(Outcome::Skipped(if remap_failures > 0 && remap_failures == candidates.len() {
            SkipReason::Remap
        } else {
            SkipReason::NoIncomplete
        }))
    })
}

/// Response-robustness pairs: golden documents are mixed with related and
/// random answer-free documents; chosen is the noise-free answer renumbered
/// into the mixed prompt; rejected is an incomplete answer to the mixed
/// prompt.
pub fn build_rr(batch: &Batch, chosen: &ChosenIndex, deps: &Deps<'_>, cfg: &PipelineConfig) -> Result<(Vec<PreferencePair>, RunSummary), Error> {
    run_stage("RR", &batch.items, deps.oracle, |qa, calls| {
        let Some(entry) = chosen.get(&qa.qid) else {
            return Ok(Outcome::Skipped(SkipReason::NoChosen));
        };
        let ranked = batch.ranked(&qa.qid)?;
        let mut rng = rng_for(cfg.seed, &qa.qid, "rr-noise");
        let Some(noise) = sample_noisy(ranked, &batch.other_pool(&qa.qid), qa, cfg.n_related, cfg.n_random, &mut rng) else {
            return Ok(Outcome::Skipped(SkipReason::NoNoise));
        };
        let noisy: Vec<PromptDoc> = noise
            .related
            .into_iter()
            .map(|doc| PromptDoc {
                doc,
                flag: DocFlag::NoisyRelated,
            })
            .chain(noise.random.into_iter().map(|doc| PromptDoc {
                doc,
                flag: DocFlag::NoisyRandom,
            }))
            .collect();
        let golden = PromptDocSet::golden(entry.docs.iter().cloned());
        let mixed = assemble_prompt_docs(&golden, &noisy, &mut rng_for(cfg.seed, &qa.qid, "rr-mix"))?;
        let golden_positions = mixed.golden_positions();
        let mapping = build_mapping(&golden_positions)?;
        let chosen_text = match remap_citations(&entry.output, &mapping, Direction::Inverse) {
            Ok(t) => t,
            Err(_) => return Ok(Outcome::Skipped(SkipReason::Remap)),
        };
        let docs = mixed.documents();
        let prompt = build_rag_prompt(&qa.question, &docs)?;
        let candidates = generate(deps, &prompt, cfg.samples, derive(cfg.seed, &[&qa.qid, "rr"]), calls)?;
        for (attempt, cand) in candidates.iter().enumerate() {
            if !is_incomplete(cand, qa) || *cand == chosen_text {
                continue;
            }
            let mut meta = BTreeMap::new();
            meta.insert("doc_ids".into(), json!(mixed.doc_ids()));
            meta.insert("flags".into(), json!(mixed.flags()));
            meta.insert("golden_positions".into(), json!(golden_positions));
            meta.insert("noisy_positions".into(), json!(mixed.noisy_positions()));
            meta.insert("attempt".into(), json!(attempt));
            return Ok(Outcome::Kept(PreferencePair {
                qid: qa.qid.clone(),
                perspective: Perspective::Rr,
                prompt,
                chosen: chosen_text,
                rejected: cand.clone(),
                meta,
            }));
        }
        Ok(Outcome::Skipped(SkipReason::NoIncomplete))
    })
}

/// Citation-quality pairs: for each statement of a complete generated
/// response whose citations fail verification or include an irrelevant
/// document, the prompt is the input plus the response up to that claim,
/// rejected is the original marker run and chosen the rewritten one.
pub fn build_cq(batch: &Batch, deps: &Deps<'_>, cfg: &PipelineConfig) -> Result<(Vec<Vec<PreferencePair>>, RunSummary), Error> {
    run_stage("CQ", &batch.items, deps.oracle, |qa, calls| {
        let Some(set) = golden_set(batch, qa, cfg)? else {
            return Ok(Outcome::Skipped(SkipReason::NoCover));
        };
        let docs = set.documents();
        let prompt = build_rag_prompt(&qa.question, &docs)?;
        let candidates = generate(deps, &prompt, cfg.samples, derive(cfg.seed, &[&qa.qid, "cq"]), calls)?;
        let Some((attempt, response)) = candidates.iter().enumerate().find(|(_, c)| is_complete(c, qa)) else {
            return Ok(Outcome::Skipped(SkipReason::NoComplete));
        };
        let original = parse_response(response);
        let mut working = original.clone();
        let mut pairs = Vec::new();
        for (i, stmt) in original.statements.iter().enumerate() {
            let one = crate::citemodel::ParsedResponse {
                prefix: String::new(),
                statements: vec![stmt.clone()],
            };
            let in_range = stmt.citations.iter().all(|&c| c >= 1 && c <= docs.len());
            let fixed = if in_range {
                let (rewritten, report) = rewrite_response(&one, &docs, deps.oracle)?;
                if report.has_infeasible() || !report.changed() {
                    continue;
                }
                rewritten.statements[0].citations.clone()
            } else {
                match crate::rewrite::construct_citation(&stmt.claim, &docs, deps.oracle)? {
                    Some(set) => crate::rewrite::simplify_citation(&set, &stmt.claim, &docs, deps.oracle)?,
                    None => continue,
                }
            };
            let premise_chars = build_premise(&docs, &fixed)?.map_or(0, |p| p.chars().count());
            let context = format!("{}{}", working.text_before(i), stmt.text_before_citations());
            let mut meta = BTreeMap::new();
            meta.insert("doc_ids".into(), json!(set.doc_ids()));
            meta.insert("statement_index".into(), json!(i));
            meta.insert("claim".into(), json!(stmt.claim));
            meta.insert("rejected_citations".into(), json!(stmt.citations));
            meta.insert("chosen_citations".into(), json!(fixed));
            meta.insert("premise_chars".into(), json!(premise_chars));
            meta.insert("attempt".into(), json!(attempt));
            pairs.push(PreferencePair {
                qid: qa.qid.clone(),
                perspective: Perspective::Cq,
                prompt: format!("{prompt} {context}"),
                chosen: render_markers(&fixed),
                rejected: stmt.marker_text(),
                meta,
            });
            working.set_citations(i, &fixed);
            if cfg.cq_first_error_only {
                break;
            }
        }
        if pairs.is_empty() {
            return Ok(Outcome::Skipped(SkipReason::NoCitationError));
        }
        Ok(Outcome::Kept(pairs))
    })
}

/// Everything one full run produces.
#[derive(Debug, Clone, Default)]
pub struct Bundle {
    pub ift: Vec<IftRecord>,
    pub ri: Vec<PreferencePair>,
    pub rr: Vec<PreferencePair>,
    pub cq: Vec<PreferencePair>,
    pub summaries: Vec<RunSummary>,
}

/// IFT, then RI from the IFT outputs, then RR from the RI chosen outputs,
/// then CQ.
pub fn run_all(items: &[QaItem], deps: &Deps<'_>, cfg: &PipelineConfig) -> Result<Bundle, Error> {
    let batch = Batch::retrieve(items, deps.retriever, cfg.k);
    let (ift, s_ift) = build_ift(&batch, deps, cfg)?;
    let ift_index = ChosenIndex::from_ift(&ift);
    let (ri, s_ri) = build_ri(&batch, &ift_index, deps, cfg)?;
    let ri_qids: Vec<String> = ri.iter().map(|p| p.qid.clone()).collect();
    let (rr, s_rr) = build_rr(&batch, &ift_index.restricted_to(&ri_qids), deps, cfg)?;
    let (cq, s_cq) = build_cq(&batch, deps, cfg)?;
    Ok(Bundle {
        ift,
        ri,
        rr,
        cq: cq.into_iter().flatten().collect(),
        summaries: vec![s_ift, s_ri, s_rr, s_cq],
    })
}

/// Writes `ift.jsonl`, `ri.jsonl`, `rr.jsonl`, `cq.jsonl` and
/// `manifest.json`.
pub fn emit_stage_bundle(bundle: &Bundle, manifest: &StageManifest, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, DataError> {
    let out_dir = out_dir.as_ref();
    let mut files = Vec::new();
    let stages = [
        StageRecords::Ift(&bundle.ift),
        StageRecords::Pairs(Perspective::Ri, &bundle.ri),
        StageRecords::Pairs(Perspective::Rr, &bundle.rr),
        StageRecords::Pairs(Perspective::Cq, &bundle.cq),
    ];
    for records in stages {
        for f in export_stage(records, manifest, out_dir)? {
            if !files.contains(&f) {
                files.push(f);
            }
        }
    }
    Ok(files)
}
