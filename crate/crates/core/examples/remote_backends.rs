//! Wire the pipeline to live services instead of the offline stand-ins.
//!
//!     GENERATOR_URL=http://localhost:8000/v1 NLI_URL=http://localhost:9000 \
//!         cargo run --example remote_backends -- qa.jsonl corpus.tsv
//!
//! The NLI service takes `POST /entails` with `{"pairs":[{"premise","hypothesis"}]}`
//! and answers `{"entails":[bool]}`. Set `RETRIEVER_URL` to use a remote
//! retriever (`POST /retrieve`) instead of lexical search over the corpus.

use std::sync::Arc;

use parag_forge::dataio::{load_corpus, load_qa};
use parag_forge::genclient::{ChatClient, GenConfig};
use parag_forge::oracle::{Oracle, RemoteNli};
use parag_forge::pipelines::{build_ift, Batch, Deps, PipelineConfig};
use parag_forge::retrieval::{LexicalRetriever, RemoteRetriever, Retriever};
use parag_forge::HttpConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(qa_path), Some(corpus_path)) = (args.next(), args.next()) else {
        eprintln!("usage: remote_backends QA_JSONL CORPUS_TSV");
        std::process::exit(1);
    };
    let http = HttpConfig {
        api_key: std::env::var("API_KEY").ok(),
        ..HttpConfig::default()
    };
    let items = load_qa(&qa_path)?.items;
    let retriever: Box<dyn Retriever> = match std::env::var("RETRIEVER_URL") {
        Ok(url) => Box::new(RemoteRetriever::new(&url, http.clone())),
        Err(_) => Box::new(LexicalRetriever::new(Arc::new(load_corpus(&corpus_path)?))),
    };
    let generator = ChatClient::new(GenConfig {
        endpoint: std::env::var("GENERATOR_URL")?,
        http: http.clone(),
        ..GenConfig::default()
    })?;
    let oracle = Oracle::new(RemoteNli::new(&std::env::var("NLI_URL")?, http));
    let deps = Deps {
        retriever: retriever.as_ref(),
        generator: &generator,
        oracle: &oracle,
    };
    let cfg = PipelineConfig::default();
    let batch = Batch::retrieve(&items, deps.retriever, cfg.k);
    let (records, summary) = build_ift(&batch, &deps, &cfg)?;
    println!("{} records; {}", records.len(), serde_json::to_string(&summary)?);
    println!("generator calls {}, oracle {:?}", generator.calls(), oracle.stats());
    Ok(())
}
