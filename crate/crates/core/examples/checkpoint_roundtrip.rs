//! Save a model with optimizer state, reload it, and confirm nothing
//! changed.
//!
//!     cargo run --example checkpoint_roundtrip

use pearlkit::encoder::{EncoderConfig, ModelState, OptimizerState};

fn main() -> pearlkit::Result<()> {
    let config = EncoderConfig {
        num_token_buckets: 4096,
        num_char_buckets: 4096,
        ..EncoderConfig::default()
    };
    let mut model = ModelState::init(config, 42)?;
    let bare = model.to_bytes()?;
    model.optimizer = Some(OptimizerState::for_model(&model));
    let path = std::env::temp_dir().join("pearlkit-roundtrip.ckpt");
    model.save(&path)?;

    let loaded = ModelState::load(&path)?;
    let phrase = "the new york times";
    println!("weights only: {} bytes; with Adam moments: {} bytes", bare.len(), std::fs::metadata(&path)?.len());
    println!("config preserved: {}", loaded.config == model.config);
    println!("optimizer state preserved: {}", loaded.optimizer.is_some());
    println!("identical embedding: {}", loaded.encode(phrase)? == model.encode(phrase)?);
    println!("stripped bytes equal weights-only bytes: {}", loaded.strip_optimizer().to_bytes()? == bare);
    std::fs::remove_file(path)?;
    Ok(())
}
