//! Train on the synthetic alias corpus and compare against the untrained
//! model on held-out alias retrieval.
//!
//!     cargo run --release --example train_alias_corpus [epochs] [seed]

use pearlkit::augment::AugmentResources;
use pearlkit::encoder::{ModelState, PhraseEmbedder};
use pearlkit::evalharness::{eval_retrieval, SearchMode};
use pearlkit::mining::{HardNegativeIndex, MiningConfig};
use pearlkit::synthetic::AliasDataset;
use pearlkit::trainer::{train, TrainConfig, TrainOptions};

fn mean_cosine(model: &dyn PhraseEmbedder, pairs: &[(String, String)]) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|(a, b)| model.embed(a).unwrap().cosine(&model.embed(b).unwrap()))
        .sum();
    sum / pairs.len() as f64
}

fn main() -> pearlkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let data = AliasDataset::standard();
    let corpus = data.training_corpus();
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let untrained = ModelState::init(cfg.encoder.clone(), seed)?;
    let phrases: Vec<&str> = corpus.surfaces().collect();
    let index = HardNegativeIndex::build(&phrases, &untrained, &MiningConfig::default())?;
    println!("mined {} hard-negative pairs for {} phrases", index.pair_count(), index.len());

    let resources = AugmentResources {
        synonyms: data.synonym_source(),
        paraphrases: data.paraphrase_table(),
    };
    let start = std::time::Instant::now();
    let out = train(&corpus, &index, resources, &cfg, &TrainOptions::default())?;
    let n = out.log.len();
    let tenth = (n / 10).max(1);
    let mean = |xs: &[pearlkit::trainer::TrainLogEntry]| xs.iter().map(|e| e.loss_total).sum::<f64>() / xs.len() as f64;
    println!(
        "{n} steps in {:.1?}; loss first 10% {:.4}, last 10% {:.4}",
        start.elapsed(),
        mean(&out.log[..tenth]),
        mean(&out.log[n - tenth..])
    );

    let task = data.retrieval_task();
    let positives = data.held_out_positive_pairs();
    let random = data.random_pairs(500, 1);
    for (name, model) in [("untrained", &untrained), ("finetuned", &out.finetuned), ("averaged", &out.model)] {
        let rep = eval_retrieval(&task, model, SearchMode::Exact)?;
        let acc = rep.accuracy;
        if std::env::var("DEBUG_MISSES").is_ok() {
            for ((q, g), p) in task.queries.iter().zip(&rep.predictions) {
                if g != p {
                    println!("  miss {q:?} -> {:?} (gold {:?})", task.dictionary[*p], task.dictionary[*g]);
                }
            }
        }
        let gap = mean_cosine(model, &positives) - mean_cosine(model, &random);
        println!("{name:>10}: retrieval top-1 {acc:.3}, positive-minus-random cosine {gap:.3}");
    }
    Ok(())
}
