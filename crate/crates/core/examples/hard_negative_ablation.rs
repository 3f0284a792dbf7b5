//! Train on the alias corpus with mined hard negatives (K=2) and without
//! (K=0), then compare the late contrastive loss and held-out retrieval.
//!
//! `bootstrap` mines with a freshly initialized encoder and trains both
//! arms from scratch. `pretrained` first trains a K=0 backbone, mines with
//! it, and fine-tunes both arms from that backbone.
//!
//!     cargo run --release --example hard_negative_ablation [bootstrap|pretrained] [epochs] [seeds]

use pearlkit::augment::AugmentResources;
use pearlkit::encoder::ModelState;
use pearlkit::evalharness::{eval_retrieval, SearchMode};
use pearlkit::mining::{HardNegativeIndex, MiningConfig};
use pearlkit::synthetic::AliasDataset;
use pearlkit::trainer::{train, TrainConfig, TrainOptions};

fn main() -> pearlkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pretrained = args.get(1).is_some_and(|m| m == "pretrained");
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);

    let data = AliasDataset::standard();
    let corpus = data.training_corpus();
    let phrases: Vec<&str> = corpus.surfaces().collect();
    let task = data.retrieval_task();
    let resources = || AugmentResources {
        synonyms: data.synonym_source(),
        paraphrases: data.paraphrase_table(),
    };
    for seed in 0..seeds {
        let base = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let (scorer, initial) = if pretrained {
            let cfg = TrainConfig {
                hard_negatives_per_batch: 0,
                ..base.clone()
            };
            let backbone = train(&corpus, &HardNegativeIndex::default(), resources(), &cfg, &TrainOptions::default())?.model;
            (backbone.clone(), Some(backbone))
        } else {
            (ModelState::init(base.encoder.clone(), seed)?, None)
        };
        let index = HardNegativeIndex::build(&phrases, &scorer, &MiningConfig::default())?;
        let mut row = Vec::new();
        for k in [2, 0] {
            let cfg = TrainConfig {
                hard_negatives_per_batch: k,
                ..base.clone()
            };
            let opts = TrainOptions {
                initial: initial.clone(),
                ..TrainOptions::default()
            };
            let out = train(&corpus, &index, resources(), &cfg, &opts)?;
            let tail = &out.log[out.log.len() * 9 / 10..];
            let loss_cl = tail.iter().map(|e| e.loss_cl).sum::<f64>() / tail.len() as f64;
            let acc = eval_retrieval(&task, &out.model, SearchMode::Exact)?.accuracy;
            row.push(format!("K={k}: late loss_cl {loss_cl:.4}, retrieval {acc:.3}"));
        }
        println!("seed {seed} ({} mined pairs): {}", index.pair_count(), row.join(" | "));
    }
    Ok(())
}
