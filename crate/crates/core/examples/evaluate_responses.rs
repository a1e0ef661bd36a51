//! Score answers for exact-match recall and citation recall/precision.
//!
//!     cargo run --example evaluate_responses

use std::collections::HashMap;

use parag_forge::dataio::{Document, QaItem};
use parag_forge::metrics::{evaluate, ResponseRecord};
use parag_forge::oracle::{MockOracle, Oracle};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = vec![
        Document::new("p1", "Patchy the Pirate", "Patchy the Pirate is the president of the SpongeBob fan club."),
        Document::new("p2", "Burger Beard", "Burger Beard is a pirate in the second SpongeBob film."),
    ];
    let qa = QaItem::new(
        "sb",
        "What is the name of the pirate in SpongeBob?",
        vec![vec!["Patchy".into()], vec!["Burger Beard".into()]],
    )?;
    let index = HashMap::from([(qa.qid.clone(), qa)]);
    let responses = vec![
        ResponseRecord {
            qid: "sb".into(),
            output: "Patchy the Pirate is the president of the SpongeBob fan club[1]. \
                     Burger Beard is a pirate in the second SpongeBob film[2]."
                .into(),
            docs: docs.clone(),
        },
        ResponseRecord {
            qid: "sb".into(),
            output: "The pirate is named Patchy the Pirate[1][2].".into(),
            docs,
        },
    ];
    let report = evaluate(&responses, &index, &Oracle::new(MockOracle::new()))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
