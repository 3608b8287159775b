//! Transformer building blocks on small token sets: attention weights, an
//! encoder layer with 1-D positional encoding and a decoder layer reading
//! from an encoded memory.
//!
//!     cargo run --release --example attention_blocks

use dcnt::autodiff::{ParamStore, Tape, Tensor};
use dcnt::nn::{AttentionConfig, DecoderLayer, EncoderLayer, Init, MultiHeadAttention, PositionalEncoding1d};

fn main() -> dcnt::Result<()> {
    let cfg = AttentionConfig::new(8, 2)?;
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, 3);
    let attention = MultiHeadAttention::new(&mut init, "mha", &cfg)?;
    let pos = PositionalEncoding1d::new(&mut init, "pos", 8);
    let encoder = EncoderLayer::new(&mut init, "enc", &cfg)?;
    let decoder = DecoderLayer::new(&mut init, "dec", &cfg)?;

    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let tokens = tape.constant(Tensor::from_fn(&[5, 8], |k| ((k * 37 % 11) as f64 - 5.0) / 5.0));
    let queries = tape.constant(Tensor::from_fn(&[3, 8], |k| ((k * 13 % 7) as f64 - 3.0) / 3.0));

    for head in 0..cfg.heads {
        let weights = attention.attention_weights(&p, head, tokens, tokens)?.value();
        println!("head {head} self-attention weights (rows sum to 1):");
        for row in weights.data().chunks(5) {
            println!("  {}", row.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
        }
    }
    let memory = encoder.forward(&p, tokens, pos.forward(&p, tokens)?)?;
    let decoded = decoder.forward(&p, queries, memory)?;
    println!("encoder output {:?}, decoder output {:?}", memory.value().shape(), decoded.value().shape());
    Ok(())
}
