//! Moving citations between a reduced or mixed document list and the full
//! prompt.
//!
//!     cargo run --example renumber_citations

use parag_forge::citemodel::{build_mapping, remap_citations, Direction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Documents 1 and 3 of five were deleted before generating; the answer
    // cites the three survivors by their new numbers.
    let reduced = build_mapping(&[2, 4, 5])?;
    let raw = "Claim1[2]. Claim2[1][3].";
    println!("{raw:<28} -> {}", remap_citations(raw, &reduced, Direction::Inverse)?);

    // A clean answer over four golden documents, moved into a prompt where
    // they sit at positions 1, 3, 4 and 7 among noise.
    let mixed = build_mapping(&[1, 3, 4, 7])?;
    let chosen = "Claim1[1][2]. Claim2[3][4].";
    println!("{chosen:<28} -> {}", remap_citations(chosen, &mixed, Direction::Inverse)?);

    // Citing a position outside the mapping is an error, not a guess.
    match remap_citations("Claim[4].", &reduced, Direction::Inverse) {
        Ok(s) => println!("unexpected: {s}"),
        Err(e) => println!("{:<28} -> error: {e}", "Claim[4]."),
    }
    Ok(())
}
