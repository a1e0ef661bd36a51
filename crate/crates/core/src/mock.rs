//! Deterministic offline generator that reads the prompts this crate builds.
//!
//! With short-answer hints it writes one sentence per answer group, copied
//! from the first document that mentions the answer. Without hints it copies
//! the first sentence of a random subset of the documents, so some samples
//! miss answers. Either way citations are sometimes wrong or padded, and a
//! hinted answer occasionally gains an unsupported sentence, which gives the
//! citation rewrite and the preference filters real work.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::citemodel::parse_response;
use crate::dataio::Document;
use crate::error::BackendError;
use crate::genclient::{Generation, Generator, Usage, HINT_PREFIX};
use crate::metrics::contains_answer;
use crate::seed::derive;

pub const UNSUPPORTED_SENTENCE: &str = "It remains a popular subject of local folklore";

#[derive(Debug, Clone)]
pub struct MockGenerator {
    /// Probability a sentence cites a wrong document instead of its source.
    pub p_wrong_citation: f64,
    /// Probability a sentence cites one extra document.
    pub p_extra_citation: f64,
    /// Probability a hinted answer ends with an unsupported sentence.
    pub p_unsupported: f64,
    /// Probability each document is used by an unhinted answer.
    pub p_use_doc: f64,
    calls: std::sync::Arc<AtomicU64>,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self {
            p_wrong_citation: 0.25,
            p_extra_citation: 0.15,
            p_unsupported: 0.15,
            p_use_doc: 0.65,
            calls: Default::default(),
        }
    }
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clean answers only: no citation noise, no unsupported sentences.
    pub fn faithful() -> Self {
        Self {
            p_wrong_citation: 0.0,
            p_extra_citation: 0.0,
            p_unsupported: 0.0,
            ..Self::default()
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn cite(&self, source: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let other = |rng: &mut ChaCha8Rng| {
            let r = rng.random_range(1..n);
            if r >= source {
                r + 1
            } else {
                r
            }
        };
        if n > 1 && rng.random_bool(self.p_wrong_citation) {
            return vec![other(rng)];
        }
        let mut cites = vec![source];
        if n > 1 && rng.random_bool(self.p_extra_citation) {
            cites.push(other(rng));
        }
        cites
    }

    fn answer(&self, prompt: &ParsedPrompt, rng: &mut ChaCha8Rng) -> String {
        let n = prompt.docs.len();
        let mut picked: Vec<(String, usize)> = Vec::new();
        match &prompt.hints {
            Some(groups) => {
                for group in groups {
                    let found = prompt.docs.iter().enumerate().find_map(|(i, d)| {
                        sentences(&d.text)
                            .into_iter()
                            .find(|s| group.iter().any(|a| contains_answer(s, a)))
                            .map(|s| (s, i + 1))
                    });
                    if let Some(hit) = found {
                        if !picked.iter().any(|(s, _)| *s == hit.0) {
                            picked.push(hit);
                        }
                    }
                }
            }
            None => {
                let mut used: Vec<usize> = (1..=n).filter(|_| rng.random_bool(self.p_use_doc)).collect();
                if used.is_empty() && n > 0 {
                    used.push(rng.random_range(1..=n));
                }
                for i in used {
                    if let Some(first) = sentences(&prompt.docs[i - 1].text).into_iter().next() {
                        if !picked.iter().any(|(s, _)| *s == first) {
                            picked.push((first, i));
                        }
                    }
                }
            }
        }
        let mut out: Vec<String> = picked
            .into_iter()
            .map(|(s, src)| {
                let cites = self.cite(src, n, rng);
                format!("{}{}.", s, cites.iter().map(|c| format!("[{c}]")).collect::<String>())
            })
            .collect();
        if prompt.hints.is_some() && n > 0 && rng.random_bool(self.p_unsupported) {
            out.push(format!("{UNSUPPORTED_SENTENCE}[1]."));
        }
        out.join(" ")
    }
}

/// Sentences of a document with terminal punctuation stripped.
fn sentences(text: &str) -> Vec<String> {
    parse_response(text)
        .statements
        .iter()
        .map(|s| s.segment().trim().trim_end_matches(['.', '!', '?']).to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

struct ParsedPrompt {
    hints: Option<Vec<Vec<String>>>,
    docs: Vec<Document>,
}

fn parse_prompt(prompt: &str) -> ParsedPrompt {
    let mut hints = None;
    let mut docs = Vec::new();
    let mut in_docs = false;
    for line in prompt.lines() {
        if let Some(h) = line.strip_prefix(HINT_PREFIX) {
            hints = Some(h.split("; ").map(|g| g.split(" / ").map(str::to_string).collect()).collect());
        } else if line == "Documents:" {
            in_docs = true;
        } else if line.starts_with("Answer:") {
            break;
        } else if in_docs {
            if let Some(doc) = parse_doc_line(line) {
                docs.push(doc);
            }
        }
    }
    ParsedPrompt { hints, docs }
}

fn parse_doc_line(line: &str) -> Option<Document> {
    let rest = line.strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] (Title: ")?;
    let (title, text) = rest.split_once(") ")?;
    Some(Document::new(idx, title, text))
}

fn judge_answer(prompt: &str, model: &str) -> usize {
    let marker = format!(r#"{{"model": "{model}","answer": ""#);
    prompt
        .find(&marker)
        .map(|start| {
            let body = &prompt[start + marker.len()..];
            body.find("\"},").or_else(|| body.find("\"}")).unwrap_or(body.len())
        })
        .unwrap_or(0)
}

impl Generator for MockGenerator {
    fn generate(&self, prompt: &str, n: usize, seed: u64) -> Result<Generation, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if prompt.contains("create a leaderboard") {
            let (a, b) = (judge_answer(prompt, "model_1"), judge_answer(prompt, "model_2"));
            let (r1, r2) = if a >= b { (1, 2) } else { (2, 1) };
            return Ok(Generation {
                candidates: vec![format!("[{{'model': 'model_1', 'rank': {r1}}}, {{'model': 'model_2', 'rank': {r2}}}]")],
                usage: Usage::default(),
            });
        }
        let parsed = parse_prompt(prompt);
        let candidates: Vec<String> = (0..n.max(1))
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, &[prompt, &i.to_string()]));
                self.answer(&parsed, &mut rng)
            })
            .filter(|c| !c.trim().is_empty())
            .collect();
        Ok(Generation {
            usage: Usage {
                prompt_tokens: (prompt.split_whitespace().count() * n.max(1)) as u64,
                completion_tokens: candidates.iter().map(|c| c.split_whitespace().count() as u64).sum(),
            },
            candidates,
        })
    }
}
