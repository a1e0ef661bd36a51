//! Correctness (EM recall over answer groups) and citation quality
//! (recall / precision / F1) scoring.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::citemodel::{parse_response, ParsedResponse, Statement};
use crate::dataio::{Document, QaItem};
use crate::error::BackendError;
use crate::oracle::Oracle;
use crate::Error;

/// Lowercase and collapse whitespace runs to a single space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Whether `alias` occurs as a substring of `text` after normalization.
pub fn contains_answer(text: &str, alias: &str) -> bool {
    let alias = normalize(alias);
    !alias.is_empty() && normalize(text).contains(&alias)
}

fn group_hit(normalized_text: &str, group: &[String]) -> bool {
    group.iter().any(|a| {
        let a = normalize(a);
        !a.is_empty() && normalized_text.contains(&a)
    })
}

/// Fraction of answer groups with at least one alias contained in `text`.
pub fn em_recall(text: &str, qa: &QaItem) -> f64 {
    if qa.answer_groups.is_empty() {
        return 0.0;
    }
    let norm = normalize(text);
    let hits = qa.answer_groups.iter().filter(|g| group_hit(&norm, g)).count();
    hits as f64 / qa.answer_groups.len() as f64
}

/// Every answer group is hit.
pub fn is_complete(text: &str, qa: &QaItem) -> bool {
    let norm = normalize(text);
    qa.answer_groups.iter().all(|g| group_hit(&norm, g))
}

/// Some answer group is missed.
pub fn is_incomplete(text: &str, qa: &QaItem) -> bool {
    !is_complete(text, qa)
}

/// Indices of the answer groups `text` covers.
pub fn covered_groups(text: &str, qa: &QaItem) -> Vec<usize> {
    let norm = normalize(text);
    qa.answer_groups
        .iter()
        .enumerate()
        .filter(|(_, g)| group_hit(&norm, g))
        .map(|(i, _)| i)
        .collect()
}

/// Citation verdicts for one statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatementScore {
    /// Cited documents jointly entail the claim.
    pub supported: bool,
    /// Number of distinct citations.
    pub citations: usize,
    /// Citations that are relevant (alone entailing, or needed by the rest).
    pub relevant: usize,
    /// Some citation index was outside `1..=n`.
    pub invalid: bool,
}

/// Scores one statement against the prompt documents.
pub fn score_statement(stmt: &Statement, docs: &[Document], oracle: &Oracle) -> Result<StatementScore, BackendError> {
    let n = docs.len();
    let cites = &stmt.citations;
    if cites.iter().any(|&c| c == 0 || c > n) {
        return Ok(StatementScore {
            supported: false,
            citations: cites.len(),
            relevant: 0,
            invalid: true,
        });
    }
    let supported = supports(oracle, docs, cites, &stmt.claim)?;
    let mut relevant = 0;
    if supported {
        for &c in cites {
            if supports(oracle, docs, &[c], &stmt.claim)? {
                relevant += 1;
                continue;
            }
            let rest: Vec<usize> = cites.iter().copied().filter(|&x| x != c).collect();
            if !supports(oracle, docs, &rest, &stmt.claim)? {
                relevant += 1;
            }
        }
    }
    Ok(StatementScore {
        supported,
        citations: cites.len(),
        relevant,
        invalid: false,
    })
}

fn supports(oracle: &Oracle, docs: &[Document], cites: &[usize], claim: &str) -> Result<bool, BackendError> {
    match oracle.supports(docs, cites, claim) {
        Ok(v) => Ok(v),
        Err(Error::Backend(e)) => Err(e),
        // indices were validated by the caller
        Err(other) => unreachable!("{other}"),
    }
}

/// Aggregate citation verdicts for one response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CitationScores {
    pub statements: usize,
    pub supported: usize,
    pub citations: usize,
    pub relevant: usize,
    pub invalid_statements: usize,
}

impl CitationScores {
    pub fn recall(&self) -> f64 {
        if self.statements == 0 {
            0.0
        } else {
            self.supported as f64 / self.statements as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.citations == 0 {
            0.0
        } else {
            self.relevant as f64 / self.citations as f64
        }
    }
}

pub fn score_citations(parsed: &ParsedResponse, docs: &[Document], oracle: &Oracle) -> Result<CitationScores, BackendError> {
    let mut out = CitationScores::default();
    for stmt in &parsed.statements {
        let s = score_statement(stmt, docs, oracle)?;
        out.statements += 1;
        out.supported += s.supported as usize;
        out.citations += s.citations;
        out.relevant += s.relevant;
        out.invalid_statements += s.invalid as usize;
    }
    Ok(out)
}

/// Mean over statements of "cited documents entail the claim". Uncited and
/// invalid-index statements score 0; an empty response scores 0.
pub fn citation_recall(parsed: &ParsedResponse, docs: &[Document], oracle: &Oracle) -> Result<f64, BackendError> {
    Ok(score_citations(parsed, docs, oracle)?.recall())
}

/// Relevant citations over all citations. A citation is relevant iff its
/// statement is supported and it either entails the claim alone or the
/// remaining citations no longer do. No citations anywhere scores 0.
pub fn citation_precision(parsed: &ParsedResponse, docs: &[Document], oracle: &Oracle) -> Result<f64, BackendError> {
    Ok(score_citations(parsed, docs, oracle)?.precision())
}

/// A generator output to evaluate, with the documents it was given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    #[serde(rename = "id")]
    pub qid: String,
    pub output: String,
    pub docs: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub id: String,
    pub em: f64,
    pub cit_rec: f64,
    pub cit_prec: f64,
}

/// Aggregates are means ×100 rounded to 2 decimals; `None` when there is
/// nothing to average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub em: Option<f64>,
    pub rec: Option<f64>,
    pub prec: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_question: Vec<QuestionScore>,
    pub aggregate: Aggregate,
    pub counts: BTreeMap<String, u64>,
}

fn pct2(x: f64) -> f64 {
    (x * 100.0 * 100.0).round() / 100.0
}

/// Harmonic mean; 0 when both are 0.
pub fn f1(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// Scores every response. Responses whose qid is not in `qa_index` are
/// excluded and counted under `unknown_qid`.
pub fn evaluate(responses: &[ResponseRecord], qa_index: &HashMap<String, QaItem>, oracle: &Oracle) -> Result<EvalReport, BackendError> {
    let calls_before = oracle.stats().backend_queries;
    let rows: Vec<Result<Option<(QuestionScore, CitationScores)>, BackendError>> = responses
        .par_iter()
        .map(|r| {
            let Some(qa) = qa_index.get(&r.qid) else {
                return Ok(None);
            };
            let parsed = parse_response(&r.output);
            let cit = score_citations(&parsed, &r.docs, oracle)?;
            Ok(Some((
                QuestionScore {
                    id: r.qid.clone(),
                    em: em_recall(&r.output, qa),
                    cit_rec: cit.recall(),
                    cit_prec: cit.precision(),
                },
                cit,
            )))
        })
        .collect();
    let mut per_question = Vec::new();
    let mut unknown = 0u64;
    let (mut statements, mut citations, mut invalid) = (0u64, 0u64, 0u64);
    for row in rows {
        match row? {
            None => unknown += 1,
            Some((q, c)) => {
                statements += c.statements as u64;
                citations += c.citations as u64;
                invalid += c.invalid_statements as u64;
                per_question.push(q);
            }
        }
    }
    let n = per_question.len() as f64;
    let mean = |f: fn(&QuestionScore) -> f64| (n > 0.0).then(|| per_question.iter().map(f).sum::<f64>() / n);
    let em = mean(|q| q.em);
    let rec = mean(|q| q.cit_rec);
    let prec = mean(|q| q.cit_prec);
    let f1v = rec.zip(prec).map(|(r, p)| f1(r, p));
    let mut counts = BTreeMap::new();
    counts.insert("questions".to_string(), per_question.len() as u64);
    counts.insert("unknown_qid".to_string(), unknown);
    counts.insert("statements".to_string(), statements);
    counts.insert("citations".to_string(), citations);
    counts.insert("invalid_citation_statements".to_string(), invalid);
    counts.insert("oracle_calls".to_string(), oracle.stats().backend_queries - calls_before);
    Ok(EvalReport {
        per_question,
        aggregate: Aggregate {
            em: em.map(pct2),
            rec: rec.map(pct2),
            prec: prec.map(pct2),
            f1: f1v.map(pct2),
        },
        counts,
    })
}
