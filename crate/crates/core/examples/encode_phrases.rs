//! Encode phrases with a checkpoint (or a fresh encoder) and print their
//! pairwise cosine similarities.
//!
//!     cargo run --example encode_phrases [model.ckpt] [phrase ...]

use pearlkit::encoder::{char_ngrams, EncoderConfig, ModelState};

fn main() -> pearlkit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (model, phrases) = match args.first() {
        Some(path) if path.ends_with(".ckpt") => (ModelState::load(path)?, args[1..].to_vec()),
        _ => (ModelState::init(EncoderConfig::default(), 0)?, args.clone()),
    };
    let phrases = if phrases.is_empty() {
        ["The New York Times", "The New York Timse", "New York Post", "Le Monde"]
            .map(String::from)
            .to_vec()
    } else {
        phrases
    };

    let c = &model.config;
    println!(
        "token part {} + char part {} = {} dims; n-grams {:?}",
        c.token_dim,
        c.char_dim,
        c.embedding_dim(),
        c.char_ngram_sizes
    );
    println!("n-grams of \"Times\": {:?}", char_ngrams("Times", &c.char_ngram_sizes));

    let vectors = phrases.iter().map(|p| model.encode(p)).collect::<pearlkit::Result<Vec<_>>>()?;
    print!("{:>22}", "");
    for i in 0..phrases.len() {
        print!("{i:>7}");
    }
    println!();
    for (i, (p, a)) in phrases.iter().zip(&vectors).enumerate() {
        print!("{i:>2} {p:>19}");
        for b in &vectors {
            print!("{:>7.3}", a.cosine(b));
        }
        println!();
    }
    Ok(())
}
