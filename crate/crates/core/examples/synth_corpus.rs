//! Builds a synthetic corpus, splits it by conversation and builds a vocabulary.
//!
//! ```text
//! cargo run --example synth_corpus
//! ```

use persona_esc::corpus::{build_vocab, generate_synthetic, split_corpus, Speaker, SynthConfig};

fn main() -> anyhow::Result<()> {
    let corpus = generate_synthetic(&SynthConfig {
        n_conversations: 20,
        n_turns: 6,
        vocab_seed_words: vec!["baker".into(), "pilot".into()],
        seed: 7,
    });
    let first = &corpus.conversations[0];
    println!("situation: {}", first.situation);
    for u in &first.turns {
        match u.speaker {
            Speaker::Seeker => println!("  seeker:    {}", u.text),
            Speaker::Supporter => println!("  supporter: [{}] {}", u.strategy.map_or("-", |s| s.name()), u.text),
        }
    }
    println!("scores: {:?}", first.scores);

    let (train, valid, test) = split_corpus(&corpus, 0)?;
    println!("split: {} / {} / {}", train.len(), valid.len(), test.len());

    let vocab = build_vocab(&train, 500)?;
    println!("vocabulary: {} entries, first words {:?}", vocab.len(), &vocab.tokens()[13..20]);
    Ok(())
}
