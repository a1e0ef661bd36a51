//! Input loaders (QA datasets, DPR-style passage corpus) and the JSONL/JSON
//! writers for every data product the pipelines emit.
//!
//! All output is UTF-8 with one compact JSON object per line. Struct field
//! order fixes key order, and `meta` maps are sorted, so identical inputs
//! always produce identical bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::DataError;

/// One retrievable passage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }
}

/// A question with its short answers. Each group is a list of aliases; a
/// group is satisfied when any one alias is found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaItem {
    pub qid: String,
    pub question: String,
    pub answer_groups: Vec<Vec<String>>,
}

impl QaItem {
    pub fn new(qid: impl Into<String>, question: impl Into<String>, answer_groups: Vec<Vec<String>>) -> Result<Self, DataError> {
        let item = Self {
            qid: qid.into(),
            question: question.into(),
            answer_groups,
        };
        item.validate()?;
        Ok(item)
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.answer_groups.is_empty() {
            return Err(DataError::Invalid(format!("{}: no answer groups", self.qid)));
        }
        for group in &self.answer_groups {
            if group.is_empty() || group.iter().any(|a| a.trim().is_empty()) {
                return Err(DataError::Invalid(format!("{}: empty answer alias or group", self.qid)));
            }
        }
        Ok(())
    }

    /// Every alias of every group, in order.
    pub fn aliases(&self) -> impl Iterator<Item = &str> {
        self.answer_groups.iter().flatten().map(String::as_str)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawAnswers {
    Grouped(Vec<Vec<String>>),
    Flat(Vec<String>),
}

#[derive(Deserialize)]
struct RawQa {
    id: Value,
    question: String,
    answers: RawAnswers,
}

/// Result of [`load_qa`]: the parsed items plus how many records were skipped
/// for having no usable answers.
#[derive(Debug, Default)]
pub struct QaFile {
    pub items: Vec<QaItem>,
    pub skipped_empty: usize,
}

/// Loads `{"id", "question", "answers"}` lines. A flat answer list becomes one
/// singleton group per answer.
pub fn load_qa(path: impl AsRef<Path>) -> Result<QaFile, DataError> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut out = QaFile::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| io_err(path, source))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQa = serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e))?;
        let qid = match raw.id {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            other => return Err(parse_err(path, lineno, format!("id must be a string, got {other}"))),
        };
        let groups: Vec<Vec<String>> = match raw.answers {
            RawAnswers::Grouped(groups) => groups,
            RawAnswers::Flat(flat) => flat.into_iter().map(|a| vec![a]).collect(),
        };
        let groups: Vec<Vec<String>> = groups
            .into_iter()
            .map(|g| g.into_iter().filter(|a| !a.trim().is_empty()).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        if groups.is_empty() {
            log::warn!("{}:{}: question {qid} has no answers, skipping", path.display(), lineno);
            out.skipped_empty += 1;
            continue;
        }
        out.items.push(QaItem {
            qid,
            question: raw.question,
            answer_groups: groups,
        });
    }
    Ok(out)
}

/// Id-indexed, immutable passage store.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self, DataError> {
        let mut corpus = Corpus::default();
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.insert(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, doc: Document, line: usize) -> Result<(), DataError> {
        if doc.doc_id.is_empty() {
            return Err(DataError::Invalid(format!("empty doc_id at line {line}")));
        }
        if doc.text.trim().is_empty() {
            return Err(DataError::Invalid(format!("empty text for doc {} at line {line}", doc.doc_id)));
        }
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(DataError::DuplicateDocId { line, doc_id: doc.doc_id });
        }
        self.by_id.insert(doc.doc_id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }
}

/// Loads a `doc_id<TAB>text<TAB>title` file. A leading `id\ttext\ttitle`
/// header is skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, DataError> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut corpus = Corpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| io_err(path, source))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        if lineno == 1 && line == "id\ttext\ttitle" {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(path, lineno, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        corpus.insert(Document::new(cols[0], cols[2], cols[1]), lineno)?;
    }
    Ok(corpus)
}

/// Writes a corpus in the same TSV layout [`load_corpus`] reads.
pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::from("id\ttext\ttitle\n");
    for d in corpus.documents() {
        body.push_str(&format!("{}\t{}\t{}\n", d.doc_id, d.text, d.title));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct QaOut<'a> {
    id: &'a str,
    question: &'a str,
    answers: &'a [Vec<String>],
}

pub fn write_qa(path: impl AsRef<Path>, items: &[QaItem]) -> Result<(), DataError> {
    write_jsonl(
        path,
        items.iter().map(|q| QaOut {
            id: &q.qid,
            question: &q.question,
            answers: &q.answer_groups,
        }),
    )
}

/// One instruction fine-tuning example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IftRecord {
    #[serde(rename = "id")]
    pub qid: String,
    pub question: String,
    #[serde(rename = "docs")]
    pub prompt_docs: Vec<Document>,
    pub prompt: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Perspective {
    /// Response informativeness.
    #[serde(rename = "RI")]
    Ri,
    /// Response robustness.
    #[serde(rename = "RR")]
    Rr,
    /// Citation quality.
    #[serde(rename = "CQ")]
    Cq,
}

impl Perspective {
    pub const ALL: [Perspective; 3] = [Perspective::Ri, Perspective::Rr, Perspective::Cq];

    pub fn as_str(self) -> &'static str {
        match self {
            Perspective::Ri => "RI",
            Perspective::Rr => "RR",
            Perspective::Cq => "CQ",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Perspective::Ri => "ri.jsonl",
            Perspective::Rr => "rr.jsonl",
            Perspective::Cq => "cq.jsonl",
        }
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perspective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RI" => Ok(Perspective::Ri),
            "RR" => Ok(Perspective::Rr),
            "CQ" => Ok(Perspective::Cq),
            _ => Err(format!("unknown perspective {s:?} (expected ri, rr or cq)")),
        }
    }
}

/// A DPO training triple with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(rename = "id")]
    pub qid: String,
    pub perspective: Perspective,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub data: String,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub epochs: u32,
}

/// Training stage order and hyperparameters for an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stages: Vec<StageSpec>,
}

impl Default for StageManifest {
    fn default() -> Self {
        let stage = |name: &str, data: &str, batch_size, learning_rate| StageSpec {
            name: name.to_string(),
            data: data.to_string(),
            batch_size,
            learning_rate,
            epochs: 1,
        };
        Self {
            stages: vec![
                stage("IFT", "ift.jsonl", 128, 2e-5),
                stage("RI", "ri.jsonl", 64, 2e-6),
                stage("RR", "rr.jsonl", 64, 2e-6),
                stage("CQ", "cq.jsonl", 64, 2e-7),
            ],
        }
    }
}

impl StageManifest {
    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn stage_mut(&mut self, name: &str) -> Option<&mut StageSpec> {
        self.stages.iter_mut().find(|s| s.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.name.as_str()).collect()
    }
}

/// Records destined for one stage file.
#[derive(Debug, Clone, Copy)]
pub enum StageRecords<'a> {
    Ift(&'a [IftRecord]),
    Pairs(Perspective, &'a [PreferencePair]),
}

impl StageRecords<'_> {
    pub fn file_name(&self) -> &'static str {
        match self {
            StageRecords::Ift(_) => "ift.jsonl",
            StageRecords::Pairs(p, _) => p.file_name(),
        }
    }
}

/// Writes the stage's JSONL file and `manifest.json` into `out_dir`, returning
/// the paths written.
pub fn export_stage(records: StageRecords<'_>, manifest: &StageManifest, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, DataError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let data_path = out_dir.join(records.file_name());
    match records {
        StageRecords::Ift(recs) => write_jsonl(&data_path, recs.iter())?,
        StageRecords::Pairs(perspective, pairs) => {
            if let Some(bad) = pairs.iter().find(|p| p.perspective != perspective) {
                return Err(DataError::MixedPerspectives {
                    expected: perspective.to_string(),
                    found: bad.perspective.to_string(),
                });
            }
            write_jsonl(&data_path, pairs.iter())?;
        }
    }
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, manifest)?;
    Ok(vec![data_path, manifest_path])
}

pub fn read_ift(path: impl AsRef<Path>) -> Result<Vec<IftRecord>, DataError> {
    read_jsonl(path)
}

/// Reads a pair file, rejecting files that mix perspectives.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>, DataError> {
    let pairs: Vec<PreferencePair> = read_jsonl(path)?;
    if let Some(first) = pairs.first() {
        if let Some(bad) = pairs.iter().find(|p| p.perspective != first.perspective) {
            return Err(DataError::MixedPerspectives {
                expected: first.perspective.to_string(),
                found: bad.perspective.to_string(),
            });
        }
    }
    Ok(pairs)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<StageManifest, DataError> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&body).map_err(|e| parse_err(path, 1, e))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: impl IntoIterator<Item = T>) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for rec in records {
        let line = serde_json::to_string(&rec).map_err(|e| DataError::Invalid(e.to_string()))?;
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, idx + 1, e))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut body = serde_json::to_string_pretty(value).map_err(|e| DataError::Invalid(e.to_string()))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl fmt::Display) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn grouped_answers_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "qa.jsonl",
            r#"{"id":"q1","question":"What is the name of the pirate in SpongeBob?","answers":[["Patchy"],["Burger Beard"]]}"#,
        );
        let qa = load_qa(&p).unwrap();
        assert_eq!(qa.items.len(), 1);
        assert_eq!(qa.items[0].answer_groups, vec![vec!["Patchy".to_string()], vec!["Burger Beard".to_string()]]);
    }

    #[test]
    fn flat_answers_promote_to_singletons() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "qa.jsonl", r#"{"id":"q","question":"?","answers":["x"]}"#);
        let qa = load_qa(&p).unwrap();
        assert_eq!(qa.items[0].answer_groups, vec![vec!["x".to_string()]]);
    }

    #[test]
    fn empty_qa_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "qa.jsonl", "");
        assert!(load_qa(&p).unwrap().items.is_empty());
    }

    #[test]
    fn malformed_qa_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "qa.jsonl",
            "{\"id\":\"a\",\"question\":\"q\",\"answers\":[\"x\"]}\n{not json\n",
        );
        match load_qa(&p) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_answers_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "qa.jsonl",
            "{\"id\":\"a\",\"question\":\"q\",\"answers\":[]}\n{\"id\":\"b\",\"question\":\"q\",\"answers\":[[\"\"]]}\n{\"id\":\"c\",\"question\":\"q\",\"answers\":[\"y\"]}\n",
        );
        let qa = load_qa(&p).unwrap();
        assert_eq!(qa.skipped_empty, 2);
        assert_eq!(qa.items.len(), 1);
        assert_eq!(qa.items[0].qid, "c");
    }

    #[test]
    fn corpus_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", "1\ta\tA\n2\tb\tB\n3\tc\tC\n");
        let c = load_corpus(&p).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("2").unwrap(), &Document::new("2", "B", "b"));
    }

    #[test]
    fn corpus_header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", "id\ttext\ttitle\nd1\tfirst passage\tOne\nd2\tsecond passage\tTwo\n");
        assert_eq!(load_corpus(&p).unwrap().len(), 2);
    }

    #[test]
    fn corpus_duplicate_id_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", "1\ta\tA\n2\tb\tB\n3\tc\tC\n4\td\tD\n2\te\tE\n");
        let err = load_corpus(&p).unwrap_err();
        assert!(err.to_string().starts_with("duplicate doc_id at line 5"), "{err}");
    }

    #[test]
    fn corpus_wrong_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", "1\ta\tA\n2\tb\n");
        match load_corpus(&p) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    fn pair(p: Perspective, n: usize) -> PreferencePair {
        let mut meta = BTreeMap::new();
        meta.insert("doc_ids".to_string(), serde_json::json!(["d1", "d2"]));
        PreferencePair {
            qid: format!("q{n}"),
            perspective: p,
            prompt: "prompt".into(),
            chosen: "good[1].".into(),
            rejected: "bad[2].".into(),
            meta,
        }
    }

    #[test]
    fn export_zero_records_still_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_stage(StageRecords::Ift(&[]), &StageManifest::default(), dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(fs::read_to_string(dir.path().join("ift.jsonl")).unwrap(), "");
        assert_eq!(read_manifest(dir.path().join("manifest.json")).unwrap(), StageManifest::default());
    }

    #[test]
    fn export_pairs_schema() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![pair(Perspective::Ri, 1), pair(Perspective::Ri, 2)];
        export_stage(StageRecords::Pairs(Perspective::Ri, &pairs), &StageManifest::default(), dir.path()).unwrap();
        let body = fs::read_to_string(dir.path().join("ri.jsonl")).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            assert!(line.starts_with(r#"{"id":"#));
            let v: Value = serde_json::from_str(line).unwrap();
            let mut keys: Vec<&String> = v.as_object().unwrap().keys().collect();
            keys.sort();
            assert_eq!(keys, ["chosen", "id", "meta", "perspective", "prompt", "rejected"]);
        }
        assert_eq!(read_pairs(dir.path().join("ri.jsonl")).unwrap(), pairs);
    }

    #[test]
    fn export_rejects_mixed_perspectives() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![pair(Perspective::Ri, 1), pair(Perspective::Cq, 2)];
        let err = export_stage(StageRecords::Pairs(Perspective::Ri, &pairs), &StageManifest::default(), dir.path()).unwrap_err();
        assert!(matches!(err, DataError::MixedPerspectives { .. }));
    }

    #[test]
    fn export_unwritable_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = write(dir.path(), "file", "x");
        assert!(export_stage(StageRecords::Ift(&[]), &StageManifest::default(), blocker.join("sub")).is_err());
    }

    #[test]
    fn export_is_byte_deterministic() {
        use sha2::{Digest, Sha256};
        let pairs = vec![pair(Perspective::Rr, 1), pair(Perspective::Rr, 2)];
        let digest = || {
            let dir = tempfile::tempdir().unwrap();
            export_stage(StageRecords::Pairs(Perspective::Rr, &pairs), &StageManifest::default(), dir.path()).unwrap();
            let mut h = Sha256::new();
            h.update(fs::read(dir.path().join("rr.jsonl")).unwrap());
            h.update(fs::read(dir.path().join("manifest.json")).unwrap());
            h.finalize().to_vec()
        };
        assert_eq!(digest(), digest());
    }

    #[test]
    fn manifest_defaults() {
        let m = StageManifest::default();
        assert_eq!(m.names(), ["IFT", "RI", "RR", "CQ"]);
        let ift = m.stage("IFT").unwrap();
        assert_eq!((ift.batch_size, ift.learning_rate, ift.epochs), (128, 2e-5, 1));
        for name in ["RI", "RR"] {
            let s = m.stage(name).unwrap();
            assert_eq!((s.batch_size, s.learning_rate, s.epochs), (64, 2e-6, 1));
        }
        let cq = m.stage("CQ").unwrap();
        assert_eq!((cq.batch_size, cq.learning_rate, cq.epochs), (64, 2e-7, 1));
    }

    #[test]
    fn manifest_override_touches_one_field() {
        let mut m = StageManifest::default();
        m.stage_mut("RR").unwrap().learning_rate = 1e-6;
        let d = StageManifest::default();
        for (a, b) in m.stages.iter().zip(&d.stages) {
            if a.name == "RR" {
                assert_eq!(a.learning_rate, 1e-6);
                assert_eq!((a.batch_size, a.epochs, &a.data), (b.batch_size, b.epochs, &b.data));
            } else {
                assert_eq!(a, b);
            }
        }
    }
}
