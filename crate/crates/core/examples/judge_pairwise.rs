//! Pairwise comparison of two answers by a judge model, with the presented
//! order randomized and undone.
//!
//!     cargo run --example judge_pairwise
//!     GENERATOR_URL=http://localhost:8000/v1 cargo run --example judge_pairwise

use parag_forge::genclient::{judge_pairwise, ChatClient, GenConfig, Generator, JudgeOutcome};
use parag_forge::mock::MockGenerator;
use parag_forge::seed::rng_for;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let judge: Box<dyn Generator> = match std::env::var("GENERATOR_URL") {
        Ok(endpoint) => Box::new(ChatClient::new(GenConfig {
            endpoint,
            temperature: 0.0,
            ..GenConfig::default()
        })?),
        // the offline judge prefers the longer answer
        Err(_) => Box::new(MockGenerator::new()),
    };
    let instruction = "Who founded Brightwater?";
    let terse = "Alder Quenbyn[1].";
    let full = "Alder Quenbyn founded Brightwater in 1802[1]. Mira Tolvane settled it three years later[2].";
    let mut wins = [0; 2];
    for round in 0..6 {
        let mut rng = rng_for(42, instruction, &format!("judge-{round}"));
        match judge_pairwise(instruction, terse, full, judge.as_ref(), &mut rng)? {
            JudgeOutcome::Winner(w) => wins[usize::from(w) - 1] += 1,
            other => println!("round {round}: {other:?}"),
        }
    }
    println!("terse answer won {} rounds, full answer won {}", wins[0], wins[1]);
    Ok(())
}
