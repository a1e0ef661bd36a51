//! Retrieve for a question, keep the answer-bearing documents, pick a small
//! set covering every answer, then mix in seeded noise.
//!
//!     cargo run --example golden_selection

use std::sync::Arc;

use parag_forge::dataio::Corpus;
use parag_forge::retrieval::{
    assemble_prompt_docs, filter_golden, retrieve, sample_noisy, select_prompt_docs, DocFlag, LexicalRetriever, PromptDoc,
};
use parag_forge::seed::rng_for;
use parag_forge::toy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = toy::generate(4, 7);
    let corpus = Arc::new(Corpus::from_documents(world.corpus.documents().to_vec())?);
    let retriever = LexicalRetriever::new(corpus);
    let qa = &world.questions[1];
    println!("{} {}", qa.qid, qa.question);
    println!("answers: {:?}", qa.answer_groups);

    let ranked = retrieve(&retriever, &qa.qid, &qa.question, 20)?;
    let golden = filter_golden(&ranked, qa);
    println!("{} retrieved, {} contain an answer", ranked.len(), golden.len());

    let Some(set) = select_prompt_docs(&golden, qa, 5) else {
        println!("no covering set of at most five documents");
        return Ok(());
    };
    println!("covering set: {:?}", set.doc_ids());

    let others: Vec<_> = world
        .questions
        .iter()
        .filter(|q| q.qid != qa.qid)
        .flat_map(|q| retrieve(&retriever, &q.qid, &q.question, 5).map(|l| l.documents().cloned().collect::<Vec<_>>()))
        .flatten()
        .collect();
    let mut rng = rng_for(42, &qa.qid, "noise");
    let Some(noise) = sample_noisy(&ranked, &others, qa, 2, 2, &mut rng) else {
        println!("not enough answer-free documents");
        return Ok(());
    };
    let noisy: Vec<PromptDoc> = noise
        .related
        .into_iter()
        .map(|doc| PromptDoc { doc, flag: DocFlag::NoisyRelated })
        .chain(noise.random.into_iter().map(|doc| PromptDoc { doc, flag: DocFlag::NoisyRandom }))
        .collect();
    let mixed = assemble_prompt_docs(&set, &noisy, &mut rng)?;
    for (i, (doc, flag)) in mixed.documents().iter().zip(mixed.flags()).enumerate() {
        println!("[{}] {:<14} {:?}", i + 1, doc.doc_id, flag);
    }
    println!("golden positions {:?}", mixed.golden_positions());
    Ok(())
}
