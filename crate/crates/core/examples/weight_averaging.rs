//! Train briefly on the alias corpus, then sweep the interpolation weight
//! between the starting and the fine-tuned weights.
//!
//!     cargo run --release --example weight_averaging [epochs]

use pearlkit::augment::AugmentResources;
use pearlkit::evalharness::{eval_retrieval, SearchMode};
use pearlkit::mining::HardNegativeIndex;
use pearlkit::synthetic::AliasDataset;
use pearlkit::trainer::{average_weights, train, TrainConfig, TrainOptions};
use pearlkit::encoder::ModelState;

fn main() -> pearlkit::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let data = AliasDataset::standard();
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let resources = AugmentResources {
        synonyms: data.synonym_source(),
        paraphrases: data.paraphrase_table(),
    };
    let original = ModelState::init(cfg.encoder.clone(), cfg.seed)?;
    let out = train(&data.training_corpus(), &HardNegativeIndex::default(), resources, &cfg, &TrainOptions::default())?;
    let task = data.retrieval_task();
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let model = average_weights(&original, &out.finetuned, alpha)?;
        let acc = eval_retrieval(&task, &model, SearchMode::Exact)?.accuracy;
        println!("alpha {alpha:.2}: held-out retrieval {acc:.3}");
    }
    let same = average_weights(&original, &original, 0.3)?;
    println!("avg(x, x) == x: {}", same.to_bytes()? == original.to_bytes()?);
    Ok(())
}
