//! Statement/citation model for generator responses.
//!
//! A response is split into sentences; every `[n]` marker (n >= 1) inside a
//! sentence joins that sentence's citation set. Parsing is lossless: each
//! statement keeps its source segment, so [`ParsedResponse::render`] returns
//! the original bytes until citations are edited.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::CitationError;

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([1-9][0-9]{0,8})\]").unwrap());

/// Tokens that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Dr", "Mr", "Mrs", "Ms", "Prof", "St", "Jr", "Sr", "Mt", "Ft", "Gen", "Col", "Lt", "Sgt", "Capt", "Rev", "Hon", "Gov",
    "Sen", "Rep", "Inc", "Ltd", "Co", "Corp", "No", "vs", "etc", "e.g", "i.e", "U.S", "U.K", "U.N", "Jan", "Feb", "Mar",
    "Apr", "Jun", "Jul", "Aug", "Sep", "Sept", "Oct", "Nov", "Dec", "approx", "ca", "cf", "al",
];

/// A located citation marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marker {
    pub span: Range<usize>,
    pub index: usize,
}

/// All `[n]` markers in `text`, in order.
pub fn find_markers(text: &str) -> Vec<Marker> {
    MARKER
        .captures_iter(text)
        .map(|c| Marker {
            span: c.get(0).unwrap().range(),
            index: c[1].parse().unwrap(),
        })
        .collect()
}

/// Renders a citation set as a marker run, e.g. `[1][3]`.
pub fn render_markers(citations: &[usize]) -> String {
    citations.iter().map(|i| format!("[{i}]")).collect()
}

/// One sentence of a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    /// Sentence text with markers removed and whitespace collapsed.
    pub claim: String,
    /// Distinct display indices, ascending.
    pub citations: Vec<usize>,
    /// Byte range of this statement in the rendered response.
    pub span: Range<usize>,
    segment: String,
}

impl Statement {
    fn from_segment(segment: String) -> Self {
        let markers = find_markers(&segment);
        let mut citations: Vec<usize> = markers.iter().map(|m| m.index).collect();
        citations.sort_unstable();
        citations.dedup();
        Self {
            claim: claim_text(&segment),
            citations,
            span: 0..0,
            segment,
        }
    }

    /// Source text of this statement, including markers and trailing whitespace.
    pub fn segment(&self) -> &str {
        &self.segment
    }

    /// The statement text up to its first citation marker, with any markers
    /// removed. For an uncited sentence this is the sentence without its
    /// terminal punctuation.
    pub fn text_before_citations(&self) -> &str {
        match find_markers(&self.segment).first() {
            Some(m) => self.segment[..m.span.start].trim_end(),
            None => self
                .segment
                .trim_end()
                .trim_end_matches(['.', '!', '?'])
                .trim_end(),
        }
    }

    /// The marker run as it appears in the source, e.g. `[1][3]` (empty when
    /// uncited). Duplicates and order are kept as written.
    pub fn marker_text(&self) -> String {
        find_markers(&self.segment).iter().map(|m| &self.segment[m.span.clone()]).collect()
    }

    /// Replaces the citation markers. The new run goes where the first old
    /// marker was, or before the terminal punctuation if there was none; every
    /// other byte is kept.
    fn set_citations(&mut self, citations: &[usize]) {
        let mut cites = citations.to_vec();
        cites.sort_unstable();
        cites.dedup();
        let markers = find_markers(&self.segment);
        let insert_at = match markers.first() {
            Some(m) => m.span.start,
            None => sentence_tail_start(&self.segment),
        };
        let mut out = String::with_capacity(self.segment.len() + 4 * cites.len());
        let mut cursor = 0;
        let mut inserted = false;
        let run = render_markers(&cites);
        for m in &markers {
            out.push_str(&self.segment[cursor..m.span.start]);
            if !inserted {
                out.push_str(&run);
                inserted = true;
            }
            cursor = m.span.end;
        }
        if !inserted {
            out.push_str(&self.segment[cursor..insert_at]);
            out.push_str(&run);
            cursor = insert_at;
        }
        out.push_str(&self.segment[cursor..]);
        self.segment = out;
        self.citations = cites;
    }
}

/// Start of the trailing run of terminal punctuation, closing quotes and
/// whitespace.
fn sentence_tail_start(segment: &str) -> usize {
    let trimmed = segment.trim_end();
    let body = trimmed.trim_end_matches(['.', '!', '?', '"', '\'', '\u{201d}', '\u{2019}', ')']);
    body.len()
}

fn claim_text(segment: &str) -> String {
    let stripped = MARKER.replace_all(segment, " ");
    let mut claim = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !claim.is_empty() && !word.starts_with(['.', ',', '!', '?', ';', ':']) {
            claim.push(' ');
        }
        claim.push_str(word);
    }
    claim
}

/// A response split into statements.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedResponse {
    /// Leading text that belongs to no statement (whitespace, or a response
    /// without any claim text).
    pub prefix: String,
    pub statements: Vec<Statement>,
}

impl ParsedResponse {
    pub fn render(&self) -> String {
        let mut out = self.prefix.clone();
        for s in &self.statements {
            out.push_str(&s.segment);
        }
        out
    }

    pub fn set_citations(&mut self, statement: usize, citations: &[usize]) {
        self.statements[statement].set_citations(citations);
        self.recompute_spans();
    }

    /// Rendered text of everything before statement `idx`.
    pub fn text_before(&self, idx: usize) -> String {
        let mut out = self.prefix.clone();
        for s in &self.statements[..idx] {
            out.push_str(&s.segment);
        }
        out
    }

    fn recompute_spans(&mut self) {
        let mut pos = self.prefix.len();
        for s in &mut self.statements {
            s.span = pos..pos + s.segment.len();
            pos = s.span.end;
        }
    }
}

/// Splits `text` into statements.
///
/// Sentences end at `.`, `!` or `?` (optionally followed by closing quotes,
/// more terminal punctuation and citation markers) when followed by
/// whitespace or end of text. A period after a known abbreviation or a single
/// capital initial does not end a sentence.
pub fn parse_response(text: &str) -> ParsedResponse {
    let content_start = text.len() - text.trim_start().len();
    let mut parsed = ParsedResponse {
        prefix: text[..content_start].to_string(),
        statements: Vec::new(),
    };
    let mut pending = String::new();
    for range in sentence_ranges(text, content_start) {
        let seg = &text[range];
        let stmt = Statement::from_segment(format!("{pending}{seg}"));
        if stmt.claim.is_empty() {
            match parsed.statements.last_mut() {
                Some(prev) => {
                    let merged = format!("{}{}", prev.segment, seg);
                    *prev = Statement::from_segment(merged);
                }
                None => pending.push_str(seg),
            }
            continue;
        }
        pending.clear();
        parsed.statements.push(stmt);
    }
    if !pending.is_empty() {
        parsed.prefix.push_str(&pending);
    }
    parsed.recompute_spans();
    parsed
}

fn sentence_ranges(text: &str, start: usize) -> Vec<Range<usize>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut seg_start = start;
    let mut i = start;
    while i < text.len() {
        let c = text[i..].chars().next().unwrap();
        if !matches!(c, '.' | '!' | '?') {
            i += c.len_utf8();
            continue;
        }
        let mut j = i + 1;
        loop {
            if bytes.get(j) == Some(&b'[') {
                if let Some(m) = MARKER.find_at(text, j).filter(|m| m.start() == j) {
                    j = m.end();
                    continue;
                }
                break;
            }
            match text[j..].chars().next() {
                Some(n @ ('.' | '!' | '?' | '"' | '\'' | '\u{201d}' | '\u{2019}' | ')')) => j += n.len_utf8(),
                _ => break,
            }
        }
        let at_break = text[j..].chars().next().is_none_or(char::is_whitespace);
        if at_break && !(c == '.' && j == i + 1 && is_abbreviation(&text[seg_start..i])) {
            let end = j + (text.len() - j - text[j..].trim_start().len());
            out.push(seg_start..end);
            seg_start = end;
            i = end;
        } else {
            i = j;
        }
    }
    if seg_start < text.len() {
        out.push(seg_start..text.len());
    }
    out
}

fn is_abbreviation(before: &str) -> bool {
    let word = before
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or("")
        .trim_start_matches(['(', '"', '\'']);
    if word.is_empty() {
        return false;
    }
    let mut chars = word.chars();
    if let (Some(first), None) = (chars.next(), chars.next()) {
        if first.is_uppercase() {
            return true;
        }
    }
    ABBREVIATIONS.contains(&word)
}

/// Order-preserving bijection between a kept subset of old display indices
/// and the new indices `1..=kept.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMapping {
    kept: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// old -> new
    Forward,
    /// new -> old
    Inverse,
}

impl IndexMapping {
    pub fn forward(&self, old: usize) -> Option<usize> {
        self.kept.binary_search(&old).ok().map(|i| i + 1)
    }

    pub fn inverse(&self, new: usize) -> Option<usize> {
        new.checked_sub(1).and_then(|i| self.kept.get(i)).copied()
    }

    pub fn apply(&self, index: usize, direction: Direction) -> Option<usize> {
        match direction {
            Direction::Forward => self.forward(index),
            Direction::Inverse => self.inverse(index),
        }
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }
}

/// Maps the i-th kept old index to new index i.
pub fn build_mapping(kept_old_indices: &[usize]) -> Result<IndexMapping, CitationError> {
    let valid = kept_old_indices.first().is_none_or(|&f| f >= 1) && kept_old_indices.windows(2).all(|w| w[0] < w[1]);
    if !valid {
        return Err(CitationError::InvalidMapping(kept_old_indices.to_vec()));
    }
    Ok(IndexMapping {
        kept: kept_old_indices.to_vec(),
    })
}

/// Rewrites every `[n]` marker through `mapping`; all other bytes are copied
/// unchanged.
pub fn remap_citations(text: &str, mapping: &IndexMapping, direction: Direction) -> Result<String, CitationError> {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for m in find_markers(text) {
        let mapped = mapping
            .apply(m.index, direction)
            .ok_or(CitationError::OutsideDomain { index: m.index })?;
        out.push_str(&text[cursor..m.span.start]);
        out.push_str(&format!("[{mapped}]"));
        cursor = m.span.end;
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cites(p: &ParsedResponse) -> Vec<Vec<usize>> {
        p.statements.iter().map(|s| s.citations.clone()).collect()
    }

    #[test]
    fn two_claims_with_marker_runs() {
        let p = parse_response("Claim1[2]. Claim2[1][3].");
        assert_eq!(cites(&p), vec![vec![2], vec![1, 3]]);
        assert_eq!(p.statements[0].claim, "Claim1.");
        assert_eq!(p.statements[1].claim, "Claim2.");
        assert_eq!(p.render(), "Claim1[2]. Claim2[1][3].");
    }

    #[test]
    fn empty_text() {
        let p = parse_response("");
        assert!(p.statements.is_empty());
        assert_eq!(p.render(), "");
    }

    #[test]
    fn uncited_sentence() {
        let p = parse_response("Hello world.");
        assert_eq!(p.statements.len(), 1);
        assert!(p.statements[0].citations.is_empty());
    }

    #[test]
    fn non_numeric_brackets_stay_in_claim() {
        let p = parse_response("See [abc] and [1, 2] here[0][3].");
        assert_eq!(cites(&p), vec![vec![3]]);
        assert_eq!(p.statements[0].claim, "See [abc] and [1, 2] here[0].");
    }

    #[test]
    fn abbreviations_do_not_split() {
        let p = parse_response("Dr. Quinn moved to the U.S. in 1867[1]. She stayed[2].");
        assert_eq!(p.statements.len(), 2);
        assert_eq!(cites(&p), vec![vec![1], vec![2]]);
    }

    #[test]
    fn marker_after_closing_quote() {
        let text = "Both played Ingrid on \"Dr. Quinn, Medicine Woman.\"[1]. Ashley Jones came first[1].";
        let p = parse_response(text);
        assert_eq!(p.statements.len(), 2);
        assert_eq!(p.render(), text);
    }

    #[test]
    fn duplicates_collapse_and_sort() {
        let p = parse_response("X[3][1][3].");
        assert_eq!(p.statements[0].citations, vec![1, 3]);
        assert_eq!(p.statements[0].marker_text(), "[3][1][3]");
    }

    #[test]
    fn spans_partition_the_text() {
        let text = "  A one[1]. B two!  C three?[2]\nD";
        let p = parse_response(text);
        let mut pos = p.prefix.len();
        for s in &p.statements {
            assert_eq!(s.span.start, pos);
            assert_eq!(&text[s.span.clone()], s.segment());
            pos = s.span.end;
        }
        assert_eq!(pos, text.len());
    }

    #[test]
    fn set_citations_rewrites_only_markers() {
        let mut p = parse_response("Claim1[2]. Claim2[1][3].");
        p.set_citations(1, &[1]);
        assert_eq!(p.render(), "Claim1[2]. Claim2[1].");
        p.set_citations(0, &[3, 1]);
        assert_eq!(p.render(), "Claim1[1][3]. Claim2[1].");
        assert_eq!(p.statements[1].span.start, "Claim1[1][3]. ".len());
    }

    #[test]
    fn set_citations_on_uncited_sentence() {
        let mut p = parse_response("Hello world. Next.");
        p.set_citations(0, &[2]);
        assert_eq!(p.render(), "Hello world[2]. Next.");
    }

    #[test]
    fn text_before_citations() {
        let p = parse_response("Claim1[2]. Claim two is long[1][3]. Plain one.");
        assert_eq!(p.statements[1].text_before_citations(), "Claim two is long");
        assert_eq!(p.statements[2].text_before_citations(), "Plain one");
    }

    #[test]
    fn build_mapping_examples() {
        let m = build_mapping(&[2, 4, 5]).unwrap();
        assert_eq!((m.forward(2), m.forward(4), m.forward(5)), (Some(1), Some(2), Some(3)));
        assert_eq!(m.forward(3), None);
        let m = build_mapping(&[1, 3, 4, 7]).unwrap();
        assert_eq!([1, 3, 4, 7].map(|o| m.forward(o).unwrap()), [1, 2, 3, 4]);
        let m = build_mapping(&[1]).unwrap();
        assert_eq!(m.forward(1), Some(1));
        assert!(build_mapping(&[3, 2]).is_err());
        assert!(build_mapping(&[0, 2]).is_err());
    }

    #[test]
    fn remap_worked_examples() {
        let m = build_mapping(&[2, 4, 5]).unwrap();
        assert_eq!(
            remap_citations("Claim1[2]. Claim2[1][3].", &m, Direction::Inverse).unwrap(),
            "Claim1[4]. Claim2[2][5]."
        );
        let m = build_mapping(&[1, 3, 4, 7]).unwrap();
        assert_eq!(
            remap_citations("Claim1[1][2]. Claim2[3][4].", &m, Direction::Inverse).unwrap(),
            "Claim1[1][3]. Claim2[4][7]."
        );
    }

    #[test]
    fn remap_identity_and_domain_errors() {
        let id = build_mapping(&[1, 2, 3]).unwrap();
        let text = "A[1]. B[2][3] [x] [0].";
        assert_eq!(remap_citations(text, &id, Direction::Forward).unwrap(), text);
        let m = build_mapping(&[2, 4, 5]).unwrap();
        match remap_citations("A[4].", &m, Direction::Inverse) {
            Err(CitationError::OutsideDomain { index }) => assert_eq!(index, 4),
            other => panic!("{other:?}"),
        }
    }
}
