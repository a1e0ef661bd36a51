#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parag_forge::dataio::Document;
use parag_forge::error::BackendError;
use parag_forge::oracle::{EntailmentBackend, EntailmentQuery};
use rand::Rng;

/// Documents `T1..Tn` with distinct bodies.
pub fn numbered_docs(n: usize) -> Vec<Document> {
    (1..=n)
        .map(|i| Document::new(format!("d{i}"), format!("T{i}"), format!("body of document {i}")))
        .collect()
}

/// Premise for a set of 1-based indices, written out by hand: cited
/// passages in ascending order as "title. text", blank-line separated.
pub fn literal_premise(docs: &[Document], mask: u32) -> String {
    (0..docs.len())
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| format!("{}. {}", docs[i].title, docs[i].text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Entailment decided by an explicit table: for each claim, one verdict per
/// nonempty document subset (bitmask). Counts every query it answers.
pub struct TruthTable {
    premises: HashMap<String, u32>,
    verdicts: HashMap<String, Vec<bool>>,
    pub queries: Arc<AtomicU64>,
}

impl TruthTable {
    pub fn new(docs: &[Document]) -> Self {
        let premises = (1u32..1 << docs.len()).map(|m| (literal_premise(docs, m), m)).collect();
        Self {
            premises,
            verdicts: HashMap::new(),
            queries: Arc::default(),
        }
    }

    /// Random verdicts for `claim` with entailment probability `p`.
    pub fn random_claim<R: Rng>(&mut self, claim: &str, n: usize, p: f64, rng: &mut R) {
        let v = (0..1u32 << n).map(|m| m != 0 && rng.random_bool(p)).collect();
        self.verdicts.insert(claim.to_string(), v);
    }

    pub fn set_claim(&mut self, claim: &str, verdicts: Vec<bool>) {
        self.verdicts.insert(claim.to_string(), verdicts);
    }

    pub fn truth(&self, claim: &str, mask: u32) -> bool {
        mask != 0 && self.verdicts[claim][mask as usize]
    }

    pub fn counter(&self) -> Arc<AtomicU64> {
        self.queries.clone()
    }
}

impl EntailmentBackend for TruthTable {
    fn entails_batch(&self, queries: &[EntailmentQuery]) -> Result<Vec<bool>, BackendError> {
        self.queries.fetch_add(queries.len() as u64, Ordering::Relaxed);
        Ok(queries
            .iter()
            .map(|q| {
                let mask = *self
                    .premises
                    .get(&q.premise)
                    .unwrap_or_else(|| panic!("unexpected premise {:?}", q.premise));
                self.truth(&q.hypothesis, mask)
            })
            .collect())
    }
}

pub fn mask_of(cites: &[usize]) -> u32 {
    cites.iter().fold(0, |m, &c| m | 1 << (c - 1))
}

pub fn indices_of(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).collect()
}

/// Support, then per-citation relevance, read straight off the table:
/// (supported, relevant count).
pub fn literal_statement(table: &TruthTable, claim: &str, cites: &[usize]) -> (bool, usize) {
    let all = mask_of(cites);
    let supported = table.truth(claim, all);
    if !supported {
        return (false, 0);
    }
    let relevant = cites
        .iter()
        .filter(|&&c| {
            let alone = 1 << (c - 1);
            table.truth(claim, alone) || !table.truth(claim, all & !alone)
        })
        .count();
    (true, relevant)
}

/// Smallest entailing subset by exhaustive enumeration, ties broken by the
/// sorted index list.
pub fn brute_force_min(table: &TruthTable, claim: &str, n: usize) -> Option<Vec<usize>> {
    (1u32..1 << n)
        .filter(|&m| table.truth(claim, m))
        .map(indices_of)
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
}

/// A local HTTP server answering every POST with `respond(path, body)`.
/// Counts requests; stops when dropped.
pub struct Stub {
    pub url: String,
    pub requests: Arc<AtomicU64>,
    server: Arc<tiny_http::Server>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl Stub {
    pub fn start(respond: impl Fn(&str, &str) -> (u16, String) + Send + 'static) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("tcp address"));
        let requests = Arc::new(AtomicU64::new(0));
        let (srv, count) = (server.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                count.fetch_add(1, Ordering::SeqCst);
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, reply) = respond(req.url(), &body);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let _ = req.respond(tiny_http::Response::from_string(reply).with_status_code(status).with_header(header));
            }
        });
        Self {
            url,
            requests,
            server,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// An NLI endpoint that answers with the offline oracle's default rule.
pub fn nli_stub() -> Stub {
    let rule = parag_forge::oracle::MockOracle::new();
    Stub::start(move |path, body| {
        assert!(path.ends_with("/entails"), "unexpected path {path}");
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        let answers: Vec<bool> = v["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| rule.decide(p["premise"].as_str().unwrap(), p["hypothesis"].as_str().unwrap()))
            .collect();
        (200, serde_json::json!({ "entails": answers }).to_string())
    })
}
