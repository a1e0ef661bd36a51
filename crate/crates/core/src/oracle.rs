//! Entailment oracle: answers "does this premise fully support this claim?"
//!
//! [`Oracle`] memoizes every answer by a content hash of (premise,
//! hypothesis) in front of a pluggable [`EntailmentBackend`]: the remote NLI
//! service ([`RemoteNli`]) or the deterministic [`MockOracle`].

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, LazyLock};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::Document;
use crate::error::{BackendError, CitationError};
use crate::http::{join_url, HttpConfig, JsonClient};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntailmentQuery {
    pub premise: String,
    pub hypothesis: String,
}

impl EntailmentQuery {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Self {
        Self {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.premise.len() as u64).to_le_bytes());
        h.update(self.premise.as_bytes());
        h.update(self.hypothesis.as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        key
    }
}

/// Renders one document the way it appears inside a premise.
pub fn premise_part(doc: &Document) -> String {
    format!("{}. {}", doc.title, doc.text)
}

/// Concatenation of the cited documents: `"{title}. {text}"` per document,
/// ascending display index, blank-line separated. `docs[i]` has display index
/// `i + 1`. Returns `None` for an empty citation set.
pub fn build_premise(docs: &[Document], citations: &[usize]) -> Result<Option<String>, CitationError> {
    let mut cites = citations.to_vec();
    cites.sort_unstable();
    cites.dedup();
    if cites.is_empty() {
        return Ok(None);
    }
    let mut parts = Vec::with_capacity(cites.len());
    for &c in &cites {
        let doc = c
            .checked_sub(1)
            .and_then(|i| docs.get(i))
            .ok_or(CitationError::OutOfRange { index: c, n: docs.len() })?;
        parts.push(premise_part(doc));
    }
    Ok(Some(parts.join("\n\n")))
}

/// Something that can decide entailment for a batch of queries, preserving
/// order.
pub trait EntailmentBackend: Send + Sync {
    fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError>;
}

impl<T: EntailmentBackend + ?Sized> EntailmentBackend for Arc<T> {
    fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        (**self).entails_batch(queries)
    }
}

/// Counters exposed by [`Oracle::stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleStats {
    /// Distinct queries resolved by the backend and stored in the cache.
    pub resolved: u64,
    /// Queries actually sent to the backend.
    pub backend_queries: u64,
    /// Lookups served from the cache.
    pub cache_hits: u64,
}

/// Memoizing front for an entailment backend. Safe to share across threads.
pub struct Oracle {
    backend: Box<dyn EntailmentBackend>,
    cache: DashMap<[u8; 32], bool>,
    memoize: bool,
    resolved: AtomicU64,
    backend_queries: AtomicU64,
    cache_hits: AtomicU64,
}

impl Oracle {
    pub fn new(backend: impl EntailmentBackend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            cache: DashMap::new(),
            memoize: true,
            resolved: AtomicU64::new(0),
            backend_queries: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// Disables the cache; every query goes to the backend.
    pub fn without_cache(mut self) -> Self {
        self.memoize = false;
        self
    }

    pub fn entails(&self, query: &EntailmentQuery) -> Result<bool, BackendError> {
        Ok(self.entails_batch(std::slice::from_ref(query))?[0])
    }

    /// Pointwise equal to calling [`Oracle::entails`] on each query. Cache
    /// misses are deduplicated and sent to the backend in one batch; if the
    /// backend fails nothing is cached.
    pub fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        if !self.memoize {
            self.backend_queries.fetch_add(queries.len() as u64, Ordering::Relaxed);
            return self.backend.entails_batch(queries);
        }
        let keys: Vec<[u8; 32]> = queries.iter().map(EntailmentQuery::key).collect();
        let mut results: Vec<Option<bool>> = keys.iter().map(|k| self.cache.get(k).map(|v| *v)).collect();
        let mut seen = HashSet::new();
        let mut misses = Vec::new();
        let mut miss_keys = Vec::new();
        for (i, r) in results.iter().enumerate() {
            if r.is_some() {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
            } else if seen.insert(keys[i]) {
                misses.push(queries[i].clone());
                miss_keys.push(keys[i]);
            }
        }
        if !misses.is_empty() {
            self.backend_queries.fetch_add(misses.len() as u64, Ordering::Relaxed);
            let answers = self.backend.entails_batch(&misses)?;
            if answers.len() != misses.len() {
                return Err(BackendError::Malformed {
                    service: "nli",
                    message: format!("expected {} answers, got {}", misses.len(), answers.len()),
                });
            }
            for (key, ans) in miss_keys.iter().zip(answers) {
                if self.cache.insert(*key, ans).is_none() {
                    self.resolved.fetch_add(1, Ordering::Relaxed);
                }
            }
            for (i, r) in results.iter_mut().enumerate() {
                if r.is_none() {
                    *r = self.cache.get(&keys[i]).map(|v| *v);
                }
            }
        }
        Ok(results.into_iter().map(|r| r.expect("every miss resolved")).collect())
    }

    /// φ(concat(cited docs), claim). An empty citation set supports nothing
    /// and costs no query.
    pub fn supports(&self, docs: &[Document], citations: &[usize], claim: &str) -> Result<bool, crate::Error> {
        match build_premise(docs, citations)? {
            None => Ok(false),
            Some(premise) => Ok(self.entails(&EntailmentQuery::new(premise, claim))?),
        }
    }

    pub fn stats(&self) -> OracleStats {
        OracleStats {
            resolved: self.resolved.load(Ordering::Relaxed),
            backend_queries: self.backend_queries.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }
}

static STOPWORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    [
        "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "by", "with", "from", "as", "is", "are",
        "was", "were", "be", "been", "being", "it", "its", "this", "that", "these", "those", "he", "she", "they", "his",
        "her", "their", "them", "who", "whom", "which", "what", "also", "has", "have", "had", "not", "into", "than",
        "then", "there", "s",
    ]
    .into_iter()
    .collect()
});

/// Lowercased alphanumeric tokens with stopwords removed.
pub fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(t.as_str()))
        .collect()
}

/// Deterministic local stand-in for an NLI model.
///
/// Explicit table entries win; otherwise a premise entails a hypothesis iff
/// every content word of the hypothesis occurs in the premise (a hypothesis
/// with no content words is not entailed).
#[derive(Debug, Clone, Default)]
pub struct MockOracle {
    table: HashMap<(String, String), bool>,
}

impl MockOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, premise: impl Into<String>, hypothesis: impl Into<String>, entails: bool) -> Self {
        self.insert(premise, hypothesis, entails);
        self
    }

    pub fn insert(&mut self, premise: impl Into<String>, hypothesis: impl Into<String>, entails: bool) {
        self.table.insert((premise.into(), hypothesis.into()), entails);
    }

    pub fn decide(&self, premise: &str, hypothesis: &str) -> bool {
        if let Some(&v) = self.table.get(&(premise.to_string(), hypothesis.to_string())) {
            return v;
        }
        let hyp = content_words(hypothesis);
        if hyp.is_empty() {
            return false;
        }
        let prem: HashSet<String> = content_words(premise).into_iter().collect();
        hyp.iter().all(|w| prem.contains(w))
    }
}

impl EntailmentBackend for MockOracle {
    fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        Ok(queries.iter().map(|q| self.decide(&q.premise, &q.hypothesis)).collect())
    }
}

#[derive(Serialize)]
struct NliRequest<'a> {
    pairs: &'a [EntailmentQuery],
}

#[derive(Deserialize)]
struct NliResponse {
    entails: Vec<bool>,
}

/// Client for the remote NLI service (`POST {endpoint}/entails`).
pub struct RemoteNli {
    client: JsonClient,
    url: String,
    batch_size: usize,
    max_in_flight: usize,
}

impl RemoteNli {
    pub fn new(endpoint: &str, http: HttpConfig) -> Self {
        Self {
            client: JsonClient::new("nli", http),
            url: join_url(endpoint, "entails"),
            batch_size: 32,
            max_in_flight: 4,
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn send(&self, chunk: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        let resp: NliResponse = self.client.post(&self.url, &NliRequest { pairs: chunk })?;
        if resp.entails.len() != chunk.len() {
            return Err(BackendError::Malformed {
                service: "nli",
                message: format!("expected {} answers, got {}", chunk.len(), resp.entails.len()),
            });
        }
        Ok(resp.entails)
    }
}

impl EntailmentBackend for RemoteNli {
    fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        let chunks: Vec<&[EntailmentQuery]> = queries.chunks(self.batch_size).collect();
        let mut out = Vec::with_capacity(queries.len());
        for wave in chunks.chunks(self.max_in_flight) {
            let answers: Vec<Result<Vec<bool>, BackendError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|chunk| s.spawn(|| self.send(chunk))).collect();
                handles.into_iter().map(|h| h.join().expect("nli worker panicked")).collect()
            });
            for a in answers {
                out.extend(a?);
            }
        }
        Ok(out)
    }
}
