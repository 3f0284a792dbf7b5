//! Evaluate the contrastive and phrase-type losses on one small batch and
//! watch the contrastive term change with the temperature.
//!
//!     cargo run --example losses

use pearlkit::corpus::{label_index, EntityType, LexicalTag};
use pearlkit::encoder::{EncoderConfig, ModelState};
use pearlkit::objective::{batch_from_phrases, total_loss, BatchPhrases, LossWeights};

fn main() -> pearlkit::Result<()> {
    let model = ModelState::init(EncoderConfig::default(), 1)?;
    let phrases = BatchPhrases {
        anchors: vec!["new york times".into(), "barack obama".into(), "in early june".into()],
        positives: vec!["new yrok times".into(), "obama barack".into(), "in erly june".into()],
        hard_negatives: vec!["new york post".into(), "new york".into()],
    };
    let labels = vec![
        label_index(LexicalTag::NP, EntityType::ORG),
        label_index(LexicalTag::NP, EntityType::PERSON),
        label_index(LexicalTag::PP, EntityType::DATE),
    ];

    for tau in [1.0, 0.2, 0.07] {
        let batch = batch_from_phrases(&model, phrases.clone(), labels.clone(), tau)?;
        let out = total_loss(&batch, &model, LossWeights::default())?;
        println!(
            "tau {tau:<4}  contrastive {:.4}  type {:.4}  total {:.4}",
            out.loss_cl, out.loss_ce, out.total
        );
    }
    // An untrained type head is close to uniform, so the type loss sits
    // near ln 95.
    println!("ln 95 = {:.4}", 95f64.ln());

    let batch = batch_from_phrases(&model, phrases, labels, 0.07)?;
    let without = total_loss(&batch, &model, LossWeights { type_loss: false })?;
    println!("with the type loss disabled: total {:.4}", without.total);
    Ok(())
}
