//! Prompt construction and chat-completion generation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::LazyLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataio::Document;
use crate::error::BackendError;
use crate::http::{join_url, HttpConfig, JsonClient};
use crate::Error;

pub const INSTRUCTION: &str = "Write an accurate, engaging, and concise answer for the given question using only the provided search results (some of which might be irrelevant) and cite them properly. Use an unbiased and journalistic tone. Always cite for any factual claim. When citing several search results, use [1][2][3]. Cite at least one document and at most three documents in each sentence. If multiple documents support the sentence, only cite a minimum sufficient subset of the documents.";

pub const HINT_PREFIX: &str = "The final answer should contain the following short answers: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    IftWithHints,
    RagPlain,
    Judge,
}

/// `A / B; C` for groups `[[A, B], [C]]`.
pub fn flatten_hints(answer_groups: &[Vec<String>]) -> String {
    answer_groups.iter().map(|g| g.join(" / ")).collect::<Vec<_>>().join("; ")
}

fn documents_block(docs: &[Document]) -> String {
    let mut out = String::new();
    for (i, d) in docs.iter().enumerate() {
        let text: String = d.text.split_whitespace().collect::<Vec<_>>().join(" ");
        let title: String = d.title.split_whitespace().collect::<Vec<_>>().join(" ");
        out.push_str(&format!("[{}] (Title: {}) {}\n", i + 1, title, text));
    }
    out
}

fn render_prompt(question: &str, hints: Option<&str>, docs: &[Document]) -> String {
    let mut p = format!("Instruction: {INSTRUCTION}\nQuestion: {}\n", question.trim());
    if let Some(h) = hints {
        p.push_str(HINT_PREFIX);
        p.push_str(h);
        p.push('\n');
    }
    p.push_str("Documents:\n");
    p.push_str(&documents_block(docs));
    p.push_str("Answer:");
    p
}

/// Data-construction prompt: instruction, question, short-answer hints,
/// numbered documents.
pub fn build_ift_prompt(question: &str, answer_groups: &[Vec<String>], docs: &[Document]) -> Result<String, Error> {
    if docs.is_empty() {
        return Err(Error::Precondition("prompt needs at least one document".into()));
    }
    if answer_groups.is_empty() || answer_groups.iter().any(|g| g.is_empty() || g.iter().any(|a| a.trim().is_empty())) {
        return Err(Error::Precondition("short-answer hints must be nonempty".into()));
    }
    Ok(render_prompt(question, Some(&flatten_hints(answer_groups)), docs))
}

/// The same prompt without the hint line; this is what a RAG generator sees.
pub fn build_rag_prompt(question: &str, docs: &[Document]) -> Result<String, Error> {
    if docs.is_empty() {
        return Err(Error::Precondition("prompt needs at least one document".into()));
    }
    Ok(render_prompt(question, None, docs))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Candidates in generation order; empty completions are dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Generation {
    pub candidates: Vec<String>,
    pub usage: Usage,
}

pub trait Generator: Send + Sync {
    /// Up to `n` samples for `prompt`. `seed` is forwarded where supported.
    fn generate(&self, prompt: &str, n: usize, seed: u64) -> Result<Generation, BackendError>;
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_samples_per_input: usize,
    pub forward_seed: bool,
    pub http: HttpConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "gpt-3.5-turbo-1106".into(),
            temperature: 1.0,
            max_samples_per_input: 4,
            forward_seed: false,
            http: HttpConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Precondition(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_samples_per_input == 0 {
            return Err(Error::Precondition("max_samples_per_input must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

/// OpenAI-compatible `POST {endpoint}/chat/completions` client.
pub struct ChatClient {
    cfg: GenConfig,
    client: JsonClient,
    url: String,
    calls: AtomicU64,
}

impl ChatClient {
    pub fn new(cfg: GenConfig) -> Result<Self, Error> {
        cfg.validate()?;
        Ok(Self {
            client: JsonClient::new("generator", cfg.http.clone()),
            url: join_url(&cfg.endpoint, "chat/completions"),
            cfg,
            calls: AtomicU64::new(0),
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Generator for ChatClient {
    fn generate(&self, prompt: &str, n: usize, seed: u64) -> Result<Generation, BackendError> {
        let n = n.clamp(1, self.cfg.max_samples_per_input);
        self.calls.fetch_add(1, Ordering::Relaxed);
        let req = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
            n,
            seed: self.cfg.forward_seed.then_some(seed),
        };
        let resp: ChatResponse = self.client.post(&self.url, &req)?;
        let usage = resp.usage.unwrap_or_default();
        log::debug!("generator usage: {} prompt / {} completion tokens", usage.prompt_tokens, usage.completion_tokens);
        let candidates = resp
            .choices
            .into_iter()
            .filter_map(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .take(n)
            .collect();
        Ok(Generation { candidates, usage })
    }
}

pub const JUDGE_TEMPLATE: &str = r#"I want you to create a leaderboard of different of large-language models. To do so, I will give you the instructions (prompts) given to the models, and the responses of two models. Please rank the models according to the correctness of their answers and whether they make use of valuable documents and avoid being interfered with by irrelevant documents. All inputs and outputs should be python dictionaries.

Here is the prompt: {instruction}

Here are the outputs of the models:

[
    {"model": "model_1","answer": "{output_1}"},
    {"model": "model_2","answer": "{output_2}"}
]

Now please rank the models by the quality of their answers, so that the model with rank 1 has the best output. Then return a list of the model names and ranks, i.e., produce the following output:

[
    {'model': <model-name>, 'rank': <model-rank>},
    {'model': <model-name>, 'rank': <model-rank>}
]

Your response must be a valid Python dictionary and should contain nothing else because we will directly execute it in Python. Please provide the ranking that the majority of humans would give."#;

pub fn build_judge_prompt(instruction: &str, output_1: &str, output_2: &str) -> String {
    JUDGE_TEMPLATE
        .replace("{instruction}", instruction)
        .replace("{output_1}", output_1)
        .replace("{output_2}", output_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeOutcome {
    /// 1 or 2, in terms of the caller's argument order.
    Winner(u8),
    Tie,
    ParseFailure,
}

static JUDGE_ENTRY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"['"]model['"]\s*:\s*['"](model_[12])['"]\s*,\s*['"]rank['"]\s*:\s*(\d+)"#).unwrap()
});

/// Parses a judge reply into the rank of each position.
pub fn parse_judge_ranks(reply: &str) -> Option<(u32, u32)> {
    let mut r1 = None;
    let mut r2 = None;
    for cap in JUDGE_ENTRY.captures_iter(reply) {
        let rank: u32 = cap[2].parse().ok()?;
        match &cap[1] {
            "model_1" => r1 = Some(rank),
            _ => r2 = Some(rank),
        }
    }
    r1.zip(r2)
}

/// Pairwise LLM judgement with position-bias control: which output appears
/// as `model_1` is drawn from `rng`, and the verdict is mapped back to the
/// caller's order.
pub fn judge_pairwise<R: Rng + ?Sized>(
    instruction: &str,
    out1: &str,
    out2: &str,
    generator: &dyn Generator,
    rng: &mut R,
) -> Result<JudgeOutcome, Error> {
    if out1.trim().is_empty() || out2.trim().is_empty() {
        return Err(Error::Precondition("judge needs two nonempty outputs".into()));
    }
    let swapped = rng.random_bool(0.5);
    let (first, second) = if swapped { (out2, out1) } else { (out1, out2) };
    let prompt = build_judge_prompt(instruction, first, second);
    let seed: u64 = rng.random();
    let gen = generator.generate(&prompt, 1, seed)?;
    let Some(reply) = gen.candidates.first() else {
        return Ok(JudgeOutcome::ParseFailure);
    };
    let Some((r1, r2)) = parse_judge_ranks(reply) else {
        return Ok(JudgeOutcome::ParseFailure);
    };
    let positional = match r1.cmp(&r2) {
        std::cmp::Ordering::Less => 1,
        std::cmp::Ordering::Greater => 2,
        std::cmp::Ordering::Equal => return Ok(JudgeOutcome::Tie),
    };
    Ok(JudgeOutcome::Winner(if swapped { 3 - positional } else { positional }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn docs(n: usize) -> Vec<Document> {
        (1..=n).map(|i| Document::new(format!("d{i}"), format!("Title {i}"), format!("Passage number {i}."))).collect()
    }

    #[test]
    fn ift_prompt_shape() {
        let p = build_ift_prompt("Who?", &[vec!["Ada".into()]], &docs(1)).unwrap();
        assert!(p.starts_with("Instruction: Write an accurate, engaging, and concise answer"));
        assert!(p.contains("use [1][2][3]"));
        assert!(p.contains("Cite at least one document and at most three documents in each sentence"));
        assert!(p.contains("only cite a minimum sufficient subset of the documents"));
        assert!(p.contains("Question: Who?\n"));
        assert!(p.contains("The final answer should contain the following short answers: Ada\n"));
        assert!(p.contains("Documents:\n[1] (Title: Title 1) Passage number 1.\n"));
        assert!(p.ends_with("Answer:"));
    }

    #[test]
    fn hint_flattening() {
        assert_eq!(flatten_hints(&[vec!["A".into(), "B".into()], vec!["C".into()]]), "A / B; C");
    }

    #[test]
    fn empty_hints_rejected() {
        assert!(build_ift_prompt("q", &[], &docs(1)).is_err());
        assert!(build_ift_prompt("q", &[vec![]], &docs(1)).is_err());
        assert!(build_rag_prompt("q", &[]).is_err());
    }

    #[test]
    fn plain_and_hinted_differ_by_one_line() {
        let d = docs(3);
        let hinted = build_ift_prompt("Who?", &[vec!["A".into()], vec!["B".into()]], &d).unwrap();
        let plain = build_rag_prompt("Who?", &d).unwrap();
        let h: Vec<&str> = hinted.lines().collect();
        let p: Vec<&str> = plain.lines().collect();
        assert_eq!(h.len(), p.len() + 1);
        let extra: Vec<&&str> = h.iter().filter(|l| !p.contains(l)).collect();
        assert_eq!(extra, [&"The final answer should contain the following short answers: A; B"]);
    }

    #[test]
    fn nine_docs_numbered_once_each() {
        let plain = build_rag_prompt("q", &docs(9)).unwrap();
        let block = &plain[plain.find("Documents:").unwrap()..];
        let re = Regex::new(r"\[(\d+)\]").unwrap();
        let mut found: Vec<usize> = re.captures_iter(block).map(|c| c[1].parse().unwrap()).collect();
        found.sort();
        assert_eq!(found, (1..=9).collect::<Vec<_>>());
    }

    struct FixedJudge(&'static str);
    impl Generator for FixedJudge {
        fn generate(&self, _: &str, _: usize, _: u64) -> Result<Generation, BackendError> {
            Ok(Generation {
                candidates: vec![self.0.to_string()],
                usage: Usage::default(),
            })
        }
    }

    const MODEL_1_FIRST: &str = "[{'model': 'model_1', 'rank': 1}, {'model': 'model_2', 'rank': 2}]";

    fn seed_with_swap(want: bool) -> u64 {
        (0..).find(|&s| ChaCha8Rng::seed_from_u64(s).random_bool(0.5) == want).unwrap()
    }

    #[test]
    fn judge_without_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_with_swap(false));
        let out = judge_pairwise("inst", "a", "b", &FixedJudge(MODEL_1_FIRST), &mut rng).unwrap();
        assert_eq!(out, JudgeOutcome::Winner(1));
    }

    #[test]
    fn judge_swap_is_undone() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_with_swap(true));
        let out = judge_pairwise("inst", "a", "b", &FixedJudge(MODEL_1_FIRST), &mut rng).unwrap();
        assert_eq!(out, JudgeOutcome::Winner(2));
    }

    #[test]
    fn judge_malformed_and_tie() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(judge_pairwise("i", "a", "b", &FixedJudge("hello"), &mut rng).unwrap(), JudgeOutcome::ParseFailure);
        let tie = "[{'model': 'model_1', 'rank': 1}, {'model': 'model_2', 'rank': 1}]";
        assert_eq!(judge_pairwise("i", "a", "b", &FixedJudge(tie), &mut rng).unwrap(), JudgeOutcome::Tie);
        assert!(judge_pairwise("i", "", "b", &FixedJudge(tie), &mut rng).is_err());
    }

    #[test]
    fn judge_prompt_substitution() {
        let p = build_judge_prompt("INST", "OUT1", "OUT2");
        assert!(p.contains("Here is the prompt: INST"));
        assert!(p.contains(r#"{"model": "model_1","answer": "OUT1"}"#));
        assert!(p.contains(r#"{"model": "model_2","answer": "OUT2"}"#));
    }

    #[test]
    fn config_validation() {
        let bad = GenConfig {
            temperature: -0.1,
            ..GenConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GenConfig {
            max_samples_per_input: 0,
            ..GenConfig::default()
        };
        assert!(ChatClient::new(bad).is_err());
    }
}
