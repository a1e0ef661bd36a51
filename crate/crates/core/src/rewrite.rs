//! Citation rewrite: verify each statement's citations, search for a
//! supporting set when they fail, and drop citations the claim does not need.
//!
//! Only citation markers change; claim text is never edited.

use std::cell::Cell;

use crate::citemodel::{ParsedResponse, Statement};
use crate::dataio::Document;
use crate::error::CitationError;
use crate::oracle::Oracle;
use crate::Error;

/// Largest prompt the power-set search accepts.
pub const MAX_DOCS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementOutcome {
    /// Citations already support the claim and none is irrelevant.
    VerifiedAsIs,
    /// Citations failed; replaced by this set.
    Constructed(Vec<usize>),
    /// Citations supported the claim; these irrelevant ones were removed.
    Simplified { removed: Vec<usize> },
    /// No subset of the prompt documents supports the claim.
    Infeasible,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewriteReport {
    pub outcomes: Vec<StatementOutcome>,
    /// Entailment queries issued (cache hits included).
    pub oracle_queries: u64,
}

impl RewriteReport {
    /// Some statement could not be supported by any citation set.
    pub fn has_infeasible(&self) -> bool {
        self.outcomes.contains(&StatementOutcome::Infeasible)
    }

    pub fn changed(&self) -> bool {
        self.outcomes.iter().any(|o| *o != StatementOutcome::VerifiedAsIs)
    }
}

struct Checker<'a> {
    docs: &'a [Document],
    oracle: &'a Oracle,
    queries: Cell<u64>,
}

impl<'a> Checker<'a> {
    fn new(docs: &'a [Document], oracle: &'a Oracle) -> Self {
        Self {
            docs,
            oracle,
            queries: Cell::new(0),
        }
    }

    fn supports(&self, cites: &[usize], claim: &str) -> Result<bool, Error> {
        if cites.is_empty() {
            return Ok(false);
        }
        self.queries.set(self.queries.get() + 1);
        self.oracle.supports(self.docs, cites, claim)
    }

    fn check_range(&self, cites: &[usize]) -> Result<(), Error> {
        match cites.iter().find(|&&c| c == 0 || c > self.docs.len()) {
            Some(&index) => Err(CitationError::OutOfRange { index, n: self.docs.len() }.into()),
            None => Ok(()),
        }
    }

    fn verify(&self, stmt: &Statement) -> Result<bool, Error> {
        self.check_range(&stmt.citations)?;
        self.supports(&stmt.citations, &stmt.claim)
    }

    fn construct(&self, claim: &str) -> Result<Option<Vec<usize>>, Error> {
        let n = self.docs.len();
        if n == 0 || n > MAX_DOCS {
            return Err(Error::Precondition(format!("citation search needs 1..={MAX_DOCS} documents, got {n}")));
        }
        for size in 1..=n {
            let mut combo: Vec<usize> = (1..=size).collect();
            loop {
                if self.supports(&combo, claim)? {
                    return Ok(Some(combo));
                }
                if !next_combination(&mut combo, n) {
                    break;
                }
            }
        }
        Ok(None)
    }

    fn simplify(&self, cites: &[usize], claim: &str) -> Result<Vec<usize>, Error> {
        let mut current: Vec<usize> = cites.to_vec();
        current.sort_unstable();
        current.dedup();
        loop {
            let mut removed_any = false;
            let snapshot = current.clone();
            for c in snapshot {
                if self.supports(&[c], claim)? {
                    continue;
                }
                let rest: Vec<usize> = current.iter().copied().filter(|&x| x != c).collect();
                if self.supports(&rest, claim)? {
                    current = rest;
                    removed_any = true;
                }
            }
            if !removed_any {
                return Ok(current);
            }
        }
    }
}

/// Advances `combo` (ascending, values in `1..=n`) to the next combination in
/// lexicographic order. Returns false after the last one.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - (k - 1 - i) {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Whether the statement's cited documents jointly entail its claim. An
/// uncited statement is never verified.
pub fn verify_statement(stmt: &Statement, docs: &[Document], oracle: &Oracle) -> Result<bool, Error> {
    Checker::new(docs, oracle).verify(stmt)
}

/// First supporting subset of the prompt documents, searching by increasing
/// size and lexicographically within a size; `None` if no subset entails.
pub fn construct_citation(claim: &str, docs: &[Document], oracle: &Oracle) -> Result<Option<Vec<usize>>, Error> {
    Checker::new(docs, oracle).construct(claim)
}

/// Removes citations that neither support the claim alone nor are needed by
/// the others. Scans ascending, re-checking against the shrinking set, and
/// repeats until a pass removes nothing. The input set must support the claim.
pub fn simplify_citation(citations: &[usize], claim: &str, docs: &[Document], oracle: &Oracle) -> Result<Vec<usize>, Error> {
    let checker = Checker::new(docs, oracle);
    checker.check_range(citations)?;
    checker.simplify(citations, claim)
}

/// Verify → construct on failure → simplify, for every statement.
pub fn rewrite_response(parsed: &ParsedResponse, docs: &[Document], oracle: &Oracle) -> Result<(ParsedResponse, RewriteReport), Error> {
    let checker = Checker::new(docs, oracle);
    let mut out = parsed.clone();
    let mut outcomes = Vec::with_capacity(parsed.statements.len());
    for (i, stmt) in parsed.statements.iter().enumerate() {
        let outcome = if checker.verify(stmt)? {
            let kept = checker.simplify(&stmt.citations, &stmt.claim)?;
            if kept.len() == stmt.citations.len() {
                StatementOutcome::VerifiedAsIs
            } else {
                let removed = stmt.citations.iter().copied().filter(|c| !kept.contains(c)).collect();
                out.set_citations(i, &kept);
                StatementOutcome::Simplified { removed }
            }
        } else {
            match checker.construct(&stmt.claim)? {
                Some(set) => {
                    let set = checker.simplify(&set, &stmt.claim)?;
                    out.set_citations(i, &set);
                    StatementOutcome::Constructed(set)
                }
                None => StatementOutcome::Infeasible,
            }
        };
        outcomes.push(outcome);
    }
    Ok((
        out,
        RewriteReport {
            outcomes,
            oracle_queries: checker.queries.get(),
        },
    ))
}
