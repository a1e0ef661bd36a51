//! Candidate retrieval and prompt-document selection.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Corpus, Document, QaItem};
use crate::error::BackendError;
use crate::http::{join_url, HttpConfig, JsonClient};
use crate::metrics::contains_answer;
use crate::oracle::content_words;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc: Document,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Retrieval output for one question: ranks 1.., scores non-increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub qid: String,
    pub docs: Vec<RankedDoc>,
}

impl RankedList {
    /// Sorts by descending score (ties by doc id) and assigns ranks.
    pub fn from_scored(qid: impl Into<String>, mut scored: Vec<(Document, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.doc_id.cmp(&b.0.doc_id)));
        Self {
            qid: qid.into(),
            docs: scored
                .into_iter()
                .enumerate()
                .map(|(i, (doc, score))| RankedDoc { doc, score, rank: i + 1 })
                .collect(),
        }
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().map(|r| &r.doc)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub trait Retriever: Send + Sync {
    /// Top `k` documents for `question`, best first.
    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<(Document, f64)>, BackendError>;
}

/// Retrieves and wraps the result as a [`RankedList`].
pub fn retrieve(retriever: &dyn Retriever, qid: &str, question: &str, k: usize) -> Result<RankedList, BackendError> {
    let mut list = RankedList::from_scored(qid, retriever.retrieve(question, k.max(1))?);
    list.docs.truncate(k.max(1));
    Ok(list)
}

/// Token-overlap retriever weighted by inverse document frequency.
///
/// A document's score is the sum of `ln(1 + N / df(t))` over distinct query
/// terms it contains. Every document is rankable, so asking for more than
/// the corpus size returns the whole corpus; zero-score documents come last
/// in doc id order.
pub struct LexicalRetriever {
    corpus: Arc<Corpus>,
    postings: HashMap<String, Vec<usize>>,
    by_id: Vec<usize>,
}

impl LexicalRetriever {
    pub fn new(corpus: Arc<Corpus>) -> Self {
        let mut postings: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, d) in corpus.documents().iter().enumerate() {
            let terms: HashSet<String> = content_words(&format!("{} {}", d.title, d.text)).into_iter().collect();
            for t in terms {
                postings.entry(t).or_default().push(i);
            }
        }
        let mut by_id: Vec<usize> = (0..corpus.len()).collect();
        by_id.sort_by(|&a, &b| corpus.documents()[a].doc_id.cmp(&corpus.documents()[b].doc_id));
        Self { corpus, postings, by_id }
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }
}

impl Retriever for LexicalRetriever {
    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<(Document, f64)>, BackendError> {
        let docs = self.corpus.documents();
        if docs.is_empty() {
            return Ok(Vec::new());
        }
        let n = docs.len() as f64;
        let terms: HashSet<String> = content_words(question).into_iter().collect();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for t in &terms {
            if let Some(post) = self.postings.get(t) {
                let idf = (1.0 + n / post.len() as f64).ln();
                for &d in post {
                    *scores.entry(d).or_default() += idf;
                }
            }
        }
        let mut scored: Vec<(usize, f64)> = scores.into_iter().collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| docs[a.0].doc_id.cmp(&docs[b.0].doc_id)));
        scored.truncate(k);
        if scored.len() < k {
            let have: HashSet<usize> = scored.iter().map(|s| s.0).collect();
            let fill: Vec<(usize, f64)> = self.by_id.iter().filter(|i| !have.contains(i)).take(k - scored.len()).map(|&i| (i, 0.0)).collect();
            scored.extend(fill);
        }
        Ok(scored.into_iter().map(|(i, s)| (docs[i].clone(), s)).collect())
    }
}

#[derive(Serialize)]
struct RetrieveRequest<'a> {
    question: &'a str,
    k: usize,
}

#[derive(Deserialize)]
struct RemoteDoc {
    id: String,
    title: String,
    text: String,
    score: f64,
}

#[derive(Deserialize)]
struct RetrieveResponse {
    docs: Vec<RemoteDoc>,
}

/// Client for a remote dense retriever (`POST {endpoint}/retrieve`).
pub struct RemoteRetriever {
    client: JsonClient,
    url: String,
}

impl RemoteRetriever {
    pub fn new(endpoint: &str, http: HttpConfig) -> Self {
        Self {
            client: JsonClient::new("retriever", http),
            url: join_url(endpoint, "retrieve"),
        }
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, question: &str, k: usize) -> Result<Vec<(Document, f64)>, BackendError> {
        let resp: RetrieveResponse = self.client.post(&self.url, &RetrieveRequest { question, k })?;
        Ok(resp
            .docs
            .into_iter()
            .map(|d| (Document::new(d.id, d.title, d.text), d.score))
            .collect())
    }
}

/// Whether any alias of any group occurs in the document text.
pub fn contains_any_alias(doc: &Document, qa: &QaItem) -> bool {
    qa.aliases().any(|a| contains_answer(&doc.text, a))
}

/// Documents containing at least one answer alias, in rank order.
pub fn filter_golden(ranked: &RankedList, qa: &QaItem) -> Vec<Document> {
    ranked.documents().filter(|d| contains_any_alias(d, qa)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocFlag {
    Golden,
    NoisyRelated,
    NoisyRandom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptDoc {
    pub doc: Document,
    pub flag: DocFlag,
}

/// Prompt documents; the document at position `i` has display index `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PromptDocSet {
    pub docs: Vec<PromptDoc>,
}

impl PromptDocSet {
    pub fn golden(docs: impl IntoIterator<Item = Document>) -> Self {
        Self {
            docs: docs.into_iter().map(|doc| PromptDoc { doc, flag: DocFlag::Golden }).collect(),
        }
    }

    pub fn documents(&self) -> Vec<Document> {
        self.docs.iter().map(|p| p.doc.clone()).collect()
    }

    pub fn flags(&self) -> Vec<DocFlag> {
        self.docs.iter().map(|p| p.flag).collect()
    }

    /// Display indices of golden documents, ascending.
    pub fn golden_positions(&self) -> Vec<usize> {
        self.positions(|f| f == DocFlag::Golden)
    }

    pub fn noisy_positions(&self) -> Vec<usize> {
        self.positions(|f| f != DocFlag::Golden)
    }

    fn positions(&self, pred: impl Fn(DocFlag) -> bool) -> Vec<usize> {
        self.docs
            .iter()
            .enumerate()
            .filter(|(_, d)| pred(d.flag))
            .map(|(i, _)| i + 1)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc.doc_id.clone()).collect()
    }
}

/// Bitmask of the answer groups a document covers.
fn coverage_mask(doc: &Document, qa: &QaItem) -> u64 {
    qa.answer_groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|a| contains_answer(&doc.text, a)))
        .fold(0, |m, (i, _)| m | 1 << i)
}

/// Picks at most `max_docs` golden documents that together cover every
/// answer group, or `None` when no such cover exists.
///
/// Greedy by number of newly covered groups (ties to the better-ranked
/// document). If greedy needs more than `max_docs`, an exact search for the
/// smallest cover runs instead, so `None` means no cover of that size exists.
/// The result is in rank order.
pub fn select_prompt_docs(golden: &[Document], qa: &QaItem, max_docs: usize) -> Option<PromptDocSet> {
    let groups = qa.answer_groups.len();
    if golden.is_empty() || groups == 0 || groups > 64 || max_docs == 0 {
        return None;
    }
    let full: u64 = if groups == 64 { u64::MAX } else { (1 << groups) - 1 };
    let masks: Vec<u64> = golden.iter().map(|d| coverage_mask(d, qa)).collect();
    if masks.iter().fold(0, |a, m| a | m) != full {
        return None;
    }

    let mut chosen = Vec::new();
    let mut uncovered = full;
    while uncovered != 0 {
        let (best, gain) = masks
            .iter()
            .enumerate()
            .map(|(i, m)| (i, (m & uncovered).count_ones()))
            .fold((0, 0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if gain == 0 {
            return None;
        }
        chosen.push(best);
        uncovered &= !masks[best];
    }
    if chosen.len() > max_docs {
        chosen = exact_cover(&masks, full, max_docs)?;
    }
    chosen.sort_unstable();
    Some(PromptDocSet::golden(chosen.into_iter().map(|i| golden[i].clone())))
}

/// Smallest cover of `full` using at most `max_docs` masks, preferring
/// better-ranked documents.
fn exact_cover(masks: &[u64], full: u64, max_docs: usize) -> Option<Vec<usize>> {
    // identical coverage: keep only the best-ranked representative
    let mut seen = HashSet::new();
    let candidates: Vec<usize> = (0..masks.len()).filter(|&i| masks[i] != 0 && seen.insert(masks[i])).collect();

    fn search(masks: &[u64], candidates: &[usize], uncovered: u64, budget: usize, picked: &mut Vec<usize>) -> bool {
        if uncovered == 0 {
            return true;
        }
        if budget == 0 {
            return false;
        }
        let group = uncovered.trailing_zeros();
        for &c in candidates {
            if masks[c] >> group & 1 == 1 && !picked.contains(&c) {
                picked.push(c);
                if search(masks, candidates, uncovered & !masks[c], budget - 1, picked) {
                    return true;
                }
                picked.pop();
            }
        }
        false
    }

    for size in 1..=max_docs {
        let mut picked = Vec::new();
        if search(masks, &candidates, full, size, &mut picked) {
            return Some(picked);
        }
    }
    None
}

/// Two kinds of answer-free distractors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisySample {
    /// From the question's own retrieval list.
    pub related: Vec<Document>,
    /// From other questions' retrieval lists.
    pub random: Vec<Document>,
}

/// Samples `n_related` answer-free documents from `ranked` and `n_random`
/// answer-free documents from `other_pool`, all distinct. Returns `None` if a
/// pool has too few eligible documents.
pub fn sample_noisy<R: Rng + ?Sized>(
    ranked: &RankedList,
    other_pool: &[Document],
    qa: &QaItem,
    n_related: usize,
    n_random: usize,
    rng: &mut R,
) -> Option<NoisySample> {
    let mut taken = HashSet::new();
    let related_pool: Vec<&Document> = ranked
        .documents()
        .filter(|d| !contains_any_alias(d, qa))
        .filter(|d| taken.insert(d.doc_id.clone()))
        .collect();
    let related = pick(&related_pool, n_related, rng)?;
    let used: HashSet<&str> = related.iter().map(|d| d.doc_id.as_str()).collect();
    let mut seen = HashSet::new();
    let random_pool: Vec<&Document> = other_pool
        .iter()
        .filter(|d| !used.contains(d.doc_id.as_str()) && !contains_any_alias(d, qa))
        .filter(|d| seen.insert(d.doc_id.clone()))
        .collect();
    let random = pick(&random_pool, n_random, rng)?;
    Some(NoisySample { related, random })
}

fn pick<R: Rng + ?Sized>(pool: &[&Document], n: usize, rng: &mut R) -> Option<Vec<Document>> {
    if pool.len() < n {
        return None;
    }
    Some(rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect())
}

/// Mixes golden and noisy documents into one prompt set.
///
/// The slot pattern is a uniform shuffle of the combined list; golden
/// documents fill their slots in their original relative order, so the
/// golden-to-mixed renumbering stays order-preserving.
pub fn assemble_prompt_docs<R: Rng + ?Sized>(golden: &PromptDocSet, noisy: &[PromptDoc], rng: &mut R) -> Result<PromptDocSet, Error> {
    if golden.len() > 5 || noisy.len() > 4 {
        return Err(Error::Precondition(format!(
            "at most 5 golden and 4 noisy documents, got {} and {}",
            golden.len(),
            noisy.len()
        )));
    }
    let mut all: Vec<PromptDoc> = golden.docs.iter().cloned().chain(noisy.iter().cloned()).collect();
    all.shuffle(rng);
    let mut golden_iter = golden.docs.iter();
    for slot in all.iter_mut() {
        if slot.flag == DocFlag::Golden {
            *slot = golden_iter.next().expect("golden count preserved").clone();
        }
    }
    Ok(PromptDocSet { docs: all })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, format!("Title {id}"), text)
    }

    fn qa(groups: &[&[&str]]) -> QaItem {
        QaItem::new("q", "question?", groups.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()).unwrap()
    }

    fn lexical(docs: Vec<Document>) -> LexicalRetriever {
        LexicalRetriever::new(Arc::new(Corpus::from_documents(docs).unwrap()))
    }

    #[test]
    fn single_overlapping_doc_ranks_first() {
        let r = lexical(vec![doc("a", "apples grow on trees"), doc("b", "the volcano erupted"), doc("c", "rivers flow")]);
        let list = retrieve(&r, "q", "when did the volcano erupt?", 10).unwrap();
        assert_eq!(list.docs[0].doc.doc_id, "b");
        assert_eq!(list.docs[0].rank, 1);
    }

    #[test]
    fn k_larger_than_corpus_returns_everything() {
        let r = lexical(vec![doc("a", "one"), doc("b", "two"), doc("c", "three")]);
        let list = retrieve(&r, "q", "two", 100).unwrap();
        assert_eq!(list.len(), 3);
        assert!(list.docs.windows(2).all(|w| w[0].score >= w[1].score && w[0].rank < w[1].rank));
    }

    #[test]
    fn equal_scores_break_ties_by_doc_id() {
        let r = lexical(vec![doc("z9", "volcano ash"), doc("a1", "volcano ash"), doc("m5", "rivers")]);
        let list = retrieve(&r, "q", "volcano", 3).unwrap();
        assert_eq!(list.docs[0].score, list.docs[1].score);
        let ids: Vec<&str> = list.docs.iter().map(|d| d.doc.doc_id.as_str()).collect();
        assert_eq!(ids, ["a1", "z9", "m5"]);
    }

    #[test]
    fn empty_corpus_retrieves_nothing() {
        let r = lexical(vec![]);
        assert!(retrieve(&r, "q", "anything", 5).unwrap().is_empty());
    }

    #[test]
    fn golden_filter_case_one() {
        let d = doc("1", "the first time the character appeared, she was played by Ashley Jones.");
        let list = RankedList::from_scored("q", vec![(d.clone(), 1.0), (doc("2", "nothing here"), 0.5)]);
        assert_eq!(filter_golden(&list, &qa(&[&["Ashley Jones"]])), vec![d]);
    }

    #[test]
    fn golden_filter_brute_force() {
        let scored: Vec<(Document, f64)> = (0..100)
            .map(|i| {
                let text = if [3, 17, 18, 40, 55, 90, 99].contains(&i) {
                    format!("passage {i} mentions Zorblax")
                } else {
                    format!("passage {i}")
                };
                (doc(&format!("d{i:03}"), &text), 100.0 - i as f64)
            })
            .collect();
        let list = RankedList::from_scored("q", scored);
        let expect: Vec<Document> = list.documents().filter(|d| d.text.to_lowercase().contains("zorblax")).cloned().collect();
        let got = filter_golden(&list, &qa(&[&["zorblax"]]));
        assert_eq!(got.len(), 7);
        assert_eq!(got, expect);
    }

    #[test]
    fn single_doc_cover() {
        let g = vec![doc("A", "x and y"), doc("B", "x")];
        let set = select_prompt_docs(&g, &qa(&[&["x"], &["y"]]), 5).unwrap();
        assert_eq!(set.doc_ids(), ["A"]);
    }

    #[test]
    fn greedy_prefers_rank_on_ties() {
        let g = vec![doc("A", "g1"), doc("B", "g2"), doc("C", "g1")];
        let set = select_prompt_docs(&g, &qa(&[&["g1"], &["g2"]]), 5).unwrap();
        assert_eq!(set.doc_ids(), ["A", "B"]);
    }

    #[test]
    fn six_distinct_groups_infeasible_at_five() {
        let g: Vec<Document> = (0..6).map(|i| doc(&format!("d{i}"), &format!("ans{i}"))).collect();
        let groups: Vec<Vec<String>> = (0..6).map(|i| vec![format!("ans{i}")]).collect();
        let q = QaItem::new("q", "?", groups).unwrap();
        assert!(select_prompt_docs(&g, &q, 5).is_none());
        assert_eq!(select_prompt_docs(&g, &q, 6).unwrap().len(), 6);
    }

    #[test]
    fn exact_search_rescues_greedy_overshoot() {
        // greedy takes the 4-group doc first, then needs 3 more; {B, C} suffices
        let g = vec![
            doc("A", "g1 g2 g3 g4"),
            doc("B", "g1 g2 g5"),
            doc("C", "g3 g4 g6"),
            doc("D", "g5"),
            doc("E", "g6"),
        ];
        let q = qa(&[&["g1"], &["g2"], &["g3"], &["g4"], &["g5"], &["g6"]]);
        assert_eq!(select_prompt_docs(&g, &q, 2).unwrap().doc_ids(), ["B", "C"]);
    }

    #[test]
    fn noisy_forced_choice_and_determinism() {
        let q = qa(&[&["gold"]]);
        let ranked = RankedList::from_scored(
            "q",
            vec![(doc("g", "gold here"), 3.0), (doc("r1", "related one"), 2.0), (doc("r2", "related two"), 1.0)],
        );
        let other = vec![doc("o1", "other"), doc("o2", "another"), doc("og", "gold decoy")];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_noisy(&ranked, &other, &q, 2, 2, &mut rng).unwrap();
        let mut rel: Vec<&str> = s.related.iter().map(|d| d.doc_id.as_str()).collect();
        let mut ran: Vec<&str> = s.random.iter().map(|d| d.doc_id.as_str()).collect();
        rel.sort();
        ran.sort();
        assert_eq!(rel, ["r1", "r2"]);
        assert_eq!(ran, ["o1", "o2"]);

        let again = sample_noisy(&ranked, &other, &q, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(s, sample_noisy(&ranked, &other, &q, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap());
        assert_eq!(s, again);
        assert!(sample_noisy(&ranked, &other[..1], &q, 2, 2, &mut rng).is_none());
    }

    #[test]
    fn assemble_single_golden() {
        let g = PromptDocSet::golden(vec![doc("a", "x")]);
        let set = assemble_prompt_docs(&g, &[], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(set.doc_ids(), ["a"]);
        assert_eq!(set.golden_positions(), [1]);
    }

    fn four_and_four() -> (PromptDocSet, Vec<PromptDoc>) {
        let g = PromptDocSet::golden((1..=4).map(|i| doc(&format!("g{i}"), "gold")));
        let noisy: Vec<PromptDoc> = (1..=4)
            .map(|i| PromptDoc {
                doc: doc(&format!("n{i}"), "noise"),
                flag: if i <= 2 { DocFlag::NoisyRelated } else { DocFlag::NoisyRandom },
            })
            .collect();
        (g, noisy)
    }

    #[test]
    fn assemble_seed_42_is_stable() {
        let (g, noisy) = four_and_four();
        let a = assemble_prompt_docs(&g, &noisy, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = assemble_prompt_docs(&g, &noisy, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.doc_ids(), GOLDEN_PERMUTATION_SEED_42);
    }

    const GOLDEN_PERMUTATION_SEED_42: [&str; 8] = ["n4", "g1", "n2", "n1", "n3", "g2", "g3", "g4"];

    #[test]
    fn assemble_preserves_flags_and_golden_order() {
        let (g, noisy) = four_and_four();
        for seed in 0..50 {
            let set = assemble_prompt_docs(&g, &noisy, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut flags = set.flags();
            flags.sort_by_key(|f| *f as u8);
            let mut expect: Vec<DocFlag> = g.flags().into_iter().chain(noisy.iter().map(|n| n.flag)).collect();
            expect.sort_by_key(|f| *f as u8);
            assert_eq!(flags, expect);
            let golden_ids: Vec<String> = set.golden_positions().iter().map(|&p| set.docs[p - 1].doc.doc_id.clone()).collect();
            assert_eq!(golden_ids, ["g1", "g2", "g3", "g4"]);
        }
    }

    #[test]
    fn assemble_rejects_oversized_inputs() {
        let g = PromptDocSet::golden((0..6).map(|i| doc(&format!("g{i}"), "gold")));
        assert!(assemble_prompt_docs(&g, &[], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
