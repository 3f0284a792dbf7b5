//! Show what each augmentation level does to a few phrases.
//!
//!     cargo run --example augment_preview [seed]

use pearlkit::augment::{AugmentConfig, AugmentLevel, AugmentResources, Augmenter, ParaphraseTable, SynonymSource};

fn main() -> pearlkit::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let synonyms = SynonymSource::from_tsv("city\ttown\nnew\tfresh\ntimes\tperiods\n")?;
    let mut paraphrases = ParaphraseTable::new();
    paraphrases.insert("The New York Times", "New York's daily paper");
    paraphrases.insert("new york city", "the big apple");
    let resources = AugmentResources { synonyms, paraphrases };

    let phrases = ["The New York Times", "new york city", "machine learning"];
    for level in AugmentLevel::ALL {
        let augmenter = Augmenter::new(AugmentConfig::new(seed).with_levels([level]), resources.clone())?;
        println!("[{level}]");
        for phrase in phrases {
            let variants = (0..4)
                .map(|i| augmenter.augment_at(phrase, i))
                .collect::<pearlkit::Result<Vec<_>>>()?;
            println!("  {phrase:<20} -> {}", variants.join(" | "));
        }
    }
    Ok(())
}
