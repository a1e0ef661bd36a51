//! Verify, construct and simplify the citations of a generated answer.
//!
//!     cargo run --example citation_rewrite

use parag_forge::citemodel::parse_response;
use parag_forge::dataio::Document;
use parag_forge::metrics::score_citations;
use parag_forge::oracle::{MockOracle, Oracle};
use parag_forge::rewrite::rewrite_response;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = vec![
        Document::new("d1", "Brightwater", "Alder Quenbyn founded Brightwater in 1802."),
        Document::new("d2", "Pottery", "Brightwater is known for its pottery."),
        Document::new("d3", "Tolvane", "Mira Tolvane settled Brightwater in 1805."),
    ];
    // The offline oracle entails a claim when the premise contains every
    // content word of it.
    let oracle = Oracle::new(MockOracle::new());
    let answer = "Alder Quenbyn founded Brightwater in 1802[2]. \
                  Mira Tolvane settled Brightwater in 1805[1][3]. \
                  Brightwater is known for its pottery[2].";
    let parsed = parse_response(answer);
    let before = score_citations(&parsed, &docs, &oracle)?;

    let (fixed, report) = rewrite_response(&parsed, &docs, &oracle)?;
    let after = score_citations(&fixed, &docs, &oracle)?;

    println!("before: {answer}");
    println!("after:  {}", fixed.render());
    for (stmt, outcome) in parsed.statements.iter().zip(&report.outcomes) {
        println!("  {:<50} {outcome:?}", stmt.claim);
    }
    println!(
        "citation recall {:.2} -> {:.2}, precision {:.2} -> {:.2}, {} entailment checks",
        before.recall(),
        after.recall(),
        before.precision(),
        after.precision(),
        report.oracle_queries
    );
    Ok(())
}
