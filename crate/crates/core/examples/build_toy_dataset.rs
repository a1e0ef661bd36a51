//! Runs all four construction flows over the synthetic founders world with
//! the offline generator and oracle, then writes the stage bundle.
//!
//!     cargo run --example build_toy_dataset -- [out_dir] [questions] [seed]

use std::sync::Arc;

use parag_forge::dataio::{write_corpus, write_qa, StageManifest};
use parag_forge::mock::MockGenerator;
use parag_forge::oracle::{MockOracle, Oracle};
use parag_forge::pipelines::{emit_stage_bundle, run_all, Deps, PipelineConfig};
use parag_forge::retrieval::LexicalRetriever;
use parag_forge::toy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "toy_out".into());
    let n: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(42), |s| s.parse())?;

    let world = toy::generate(n, seed);
    std::fs::create_dir_all(&out)?;
    write_qa(format!("{out}/qa.jsonl"), &world.questions)?;
    write_corpus(format!("{out}/corpus.tsv"), &world.corpus)?;

    let retriever = LexicalRetriever::new(Arc::new(world.corpus));
    let generator = MockGenerator::new();
    let oracle = Oracle::new(MockOracle::new());
    let deps = Deps {
        retriever: &retriever,
        generator: &generator,
        oracle: &oracle,
    };
    let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
    let bundle = run_all(&world.questions, &deps, &cfg)?;
    for s in &bundle.summaries {
        println!(
            "{:<3} kept {:>3}/{:<3} skipped {:?}",
            s.stage, s.kept, s.questions, s.skipped
        );
    }
    for f in emit_stage_bundle(&bundle, &StageManifest::default(), &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
