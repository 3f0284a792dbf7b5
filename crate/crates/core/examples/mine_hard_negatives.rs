//! Mine hard negatives from the shipped alias corpus: edit-distance
//! candidates whose cosine under the scoring model stays below the
//! threshold.
//!
//!     cargo run --release --example mine_hard_negatives [scorer.ckpt]

use pearlkit::corpus::Corpus;
use pearlkit::encoder::{EncoderConfig, ModelState};
use pearlkit::mining::{edit_candidates, levenshtein, HardNegativeIndex, MiningConfig};

fn main() -> pearlkit::Result<()> {
    let scorer = match std::env::args().nth(1) {
        Some(path) => ModelState::load(path)?,
        None => ModelState::init(EncoderConfig::default(), 0)?,
    };
    let corpus = Corpus::load(concat!(env!("CARGO_MANIFEST_DIR"), "/data/alias/train.jsonl"), false)?;
    let phrases: Vec<&str> = corpus.surfaces().collect();

    println!("levenshtein(\"kitten\", \"sitting\") = {}", levenshtein("kitten", "sitting"));
    let probe = phrases[0];
    println!("within distance 3 of {probe:?}: {:?}", edit_candidates(probe, &phrases, 3)?);

    let config = MiningConfig::default();
    let index = HardNegativeIndex::build(&phrases, &scorer, &config)?;
    index.verify(&config)?;
    println!(
        "{} of {} phrases have hard negatives ({} pairs)",
        index.len(),
        phrases.len(),
        index.pair_count()
    );
    for (phrase, negatives) in index.iter().take(8) {
        let shown: Vec<String> = negatives.iter().map(|(n, c)| format!("{n} ({c:.2})")).collect();
        println!("  {phrase:<28} {}", shown.join(", "));
    }
    Ok(())
}
