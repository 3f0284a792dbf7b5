//! Run every evaluator on tasks built from the shipped fixtures, for a
//! checkpoint or a fresh encoder.
//!
//!     cargo run --release --example evaluate_suite [model.ckpt]

use pearlkit::encoder::{EncoderConfig, ModelState};
use pearlkit::evalharness::{
    eval_clustering, eval_fuzzyjoin, eval_paraphrase, eval_retrieval, eval_similarity, eval_turney, FuzzyJoinTask,
    LabeledPair, ProbeConfig, SearchMode, TurneyItem,
};
use pearlkit::synthetic::{AliasDataset, TypedDataset};

fn main() -> pearlkit::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => ModelState::load(path)?,
        None => ModelState::init(EncoderConfig::default(), 0)?,
    };
    let alias = AliasDataset::standard();
    let groups = &alias.groups;

    // Pairs within a group are paraphrases; pairs across groups are not.
    let mut pairs = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let other = &groups[(i * 7 + 3) % groups.len()];
        pairs.push(LabeledPair::new(&g.canonical, &g.alias, 1.0)?);
        pairs.push(LabeledPair::new(&g.typo, &g.swapped, 1.0)?);
        pairs.push(LabeledPair::new(&g.canonical, &other.alias, 0.0)?);
        pairs.push(LabeledPair::new(&g.typo, &other.canonical, 0.0)?);
    }
    let (train, rest) = pairs.split_at(240);
    let (dev, test) = rest.split_at(60);
    let paraphrase = eval_paraphrase(train, dev, test, &model, &ProbeConfig::default(), 0)?;
    println!("paraphrase classification accuracy  {paraphrase:.3}");

    let graded: Vec<LabeledPair> = groups
        .iter()
        .zip(groups.iter().skip(1))
        .flat_map(|(g, next)| {
            [
                LabeledPair::new(&g.canonical, &g.typo, 0.9),
                LabeledPair::new(&g.canonical, &g.alias, 0.7),
                LabeledPair::new(&g.canonical, &next.canonical, 0.1),
            ]
        })
        .collect::<pearlkit::Result<_>>()?;
    println!("graded similarity (pearson)         {:.3}", eval_similarity(&graded, &model)?);

    let turney: Vec<TurneyItem> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| TurneyItem {
            bigram: g.canonical.clone(),
            candidates: std::array::from_fn(|j| {
                if j == 0 {
                    g.typo.clone()
                } else {
                    groups[(i + 11 * j) % groups.len()].canonical.clone()
                }
            }),
            gold: 0,
        })
        .collect();
    println!("five-way choice accuracy            {:.3}", eval_turney(&turney, &model)?);

    let retrieval = eval_retrieval(&alias.retrieval_task(), &model, SearchMode::Exact)?;
    println!("held-out alias retrieval top-1      {:.3}", retrieval.accuracy);

    let typed = TypedDataset::standard().clustering_task();
    println!("entity-type clustering NMI          {:.3}", eval_clustering(&typed, &model, 0)?);

    let join = FuzzyJoinTask::new(
        groups.iter().map(|g| g.canonical.clone()).collect(),
        groups.iter().map(|g| (g.swapped.clone(), g.canonical.clone())).collect(),
    )?;
    println!("fuzzy join accuracy                 {:.3}", eval_fuzzyjoin(&join, &model)?);
    Ok(())
}
