//! Train on the typed corpus with and without the phrase-type loss and
//! compare k-means clustering of held-out phrases.
//!
//!     cargo run --release --example type_head_ablation [epochs] [seeds]

use pearlkit::augment::AugmentResources;
use pearlkit::evalharness::eval_clustering;
use pearlkit::mining::HardNegativeIndex;
use pearlkit::synthetic::TypedDataset;
use pearlkit::trainer::{train, TrainConfig, TrainOptions};

fn main() -> pearlkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);

    let data = TypedDataset::standard();
    let corpus = data.corpus();
    let task = data.clustering_task();
    for seed in 0..seeds {
        let mut nmi = [0.0; 2];
        for (slot, type_loss) in [(0, true), (1, false)] {
            let cfg = TrainConfig {
                epochs,
                seed,
                type_loss,
                ..TrainConfig::default()
            };
            let out = train(&corpus, &HardNegativeIndex::default(), AugmentResources::default(), &cfg, &TrainOptions::default())?;
            nmi[slot] = eval_clustering(&task, &out.model, seed)?;
        }
        println!("seed {seed}: NMI with type loss {:.3}, without {:.3}", nmi[0], nmi[1]);
    }
    Ok(())
}
