//! Parse a JSONL corpus, show each phrase's joint type label, and filter
//! by frequency.
//!
//!     cargo run --example phrase_types [corpus.jsonl] [min-frequency]

use pearlkit::corpus::{Corpus, EntityType, LexicalTag, PhraseTypeLabel};

const SAMPLE: &str = r#"{"surface": "The New York Times", "lexical_tag": "NP", "entity_type": "ORG", "frequency": 120}
{"surface": "walked away", "lexical_tag": "VP", "entity_type": "OTHER", "frequency": 14}
{"surface": "in early June", "lexical_tag": "PP", "entity_type": "DATE", "frequency": 3}
{"surface": "Barack Obama", "lexical_tag": "NP", "entity_type": "PERSON", "frequency": 88}
"#;

fn main() -> pearlkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let corpus = match args.get(1) {
        Some(path) => Corpus::load(path, true)?,
        None => Corpus::parse_jsonl(SAMPLE, false)?,
    };
    let min_freq = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);

    println!(
        "{} lexical tags x {} entity types = {} labels",
        LexicalTag::ALL.len(),
        EntityType::ALL.len(),
        PhraseTypeLabel::COUNT
    );
    for record in corpus.records().iter().take(20) {
        let label = record.label();
        println!(
            "{:>3}  {:<5} {:<12} {:>6}  {}",
            label.index(),
            label.lexical_tag(),
            label.entity_type(),
            record.frequency,
            record.surface
        );
    }
    let kept = corpus.filter_by_frequency(min_freq);
    println!("{} of {} phrases have frequency >= {min_freq}", kept.len(), corpus.len());
    Ok(())
}
