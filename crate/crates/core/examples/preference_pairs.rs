//! Build each preference perspective separately and print one pair of each.
//!
//!     cargo run --example preference_pairs

use std::sync::Arc;

use parag_forge::dataio::PreferencePair;
use parag_forge::mock::MockGenerator;
use parag_forge::oracle::{MockOracle, Oracle};
use parag_forge::pipelines::{build_cq, build_ift, build_ri, build_rr, Batch, ChosenIndex, Deps, PipelineConfig};
use parag_forge::retrieval::LexicalRetriever;
use parag_forge::toy;

fn show(pair: Option<&PreferencePair>) {
    let Some(p) = pair else {
        println!("  (none)");
        return;
    };
    let tail: String = p.prompt.lines().last().unwrap_or_default().chars().take(100).collect();
    println!("  {} {}", p.perspective, p.qid);
    println!("  prompt ends: {tail}");
    println!("  chosen:   {}", p.chosen);
    println!("  rejected: {}", p.rejected);
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = toy::generate(10, 1);
    let retriever = LexicalRetriever::new(Arc::new(world.corpus.clone()));
    let generator = MockGenerator::new();
    let oracle = Oracle::new(MockOracle::new());
    let deps = Deps {
        retriever: &retriever,
        generator: &generator,
        oracle: &oracle,
    };
    let cfg = PipelineConfig::default();
    let batch = Batch::retrieve(&world.questions, &retriever, cfg.k);

    let (ift, _) = build_ift(&batch, &deps, &cfg)?;
    let chosen = ChosenIndex::from_ift(&ift);
    let (ri, s) = build_ri(&batch, &chosen, &deps, &cfg)?;
    println!("RI: {} pairs, skipped {:?}", ri.len(), s.skipped);
    show(ri.first());

    let kept: Vec<String> = ri.iter().map(|p| p.qid.clone()).collect();
    let (rr, s) = build_rr(&batch, &chosen.restricted_to(&kept), &deps, &cfg)?;
    println!("RR: {} pairs, skipped {:?}", rr.len(), s.skipped);
    show(rr.first());

    let (cq, s) = build_cq(&batch, &deps, &cfg)?;
    let cq: Vec<PreferencePair> = cq.into_iter().flatten().collect();
    println!("CQ: {} pairs from {} responses", cq.len(), s.kept);
    show(cq.first());
    Ok(())
}
