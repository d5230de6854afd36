//! Strategy prediction and persona-aware generation with a small trained model,
//! plus a checkpoint round trip.
//!
//! ```text
//! cargo run --release --example generate_reply
//! ```

use persona_esc::corpus::{build_vocab, generate_synthetic, SynthConfig};
use persona_esc::dataset::gold_turns;
use persona_esc::decode::{generate, DecodeConfig};
use persona_esc::model::{read_checkpoint, write_checkpoint, Model, ModelConfig};
use persona_esc::persona::{annotate_corpus, RuleExtractor};
use persona_esc::train::{train, TrainConfig};
use persona_esc::Strategy;

fn main() -> anyhow::Result<()> {
    let corpus = generate_synthetic(&SynthConfig {
        n_conversations: 12,
        ..Default::default()
    });
    let annotated = annotate_corpus(&corpus, &RuleExtractor);
    let cfg = ModelConfig {
        d_model: 32,
        d_ff: 64,
        ..Default::default()
    };
    let vocab = build_vocab(&corpus, 500)?;
    let gold = gold_turns(&annotated, &vocab, cfg.max_len);
    let examples: Vec<_> = gold.iter().map(|g| g.example.clone()).collect();
    let model = Model::new(cfg, vocab)?;
    let (model, report) = train(
        model,
        &examples,
        &examples,
        &TrainConfig {
            epochs: 15,
            ..TrainConfig::desk()
        },
    )?;
    println!("trained {} epochs, final loss {:.3}", report.epochs.len(), report.final_train_loss().unwrap_or(f64::NAN));

    // A supporter turn late enough to have a persona snapshot.
    let target = gold.iter().find(|g| !g.persona.is_empty()).expect("a turn with persona");
    let (dialogue, persona) = (&target.context, &target.persona);
    println!("dialogue: {dialogue:?}\npersona:  {:?}", persona.sentences());

    let cfg = DecodeConfig {
        seed: 1,
        ..Default::default()
    };
    let out = generate(&model, dialogue, persona, &cfg, None)?;
    println!("predicted [{}] α={} -> {}", out.strategy, out.alpha_used, out.text);
    println!("gold      [{}] {}", target.example.strategy, target.response);
    for (s, p) in out.strategy_ranking.iter().take(3) {
        println!("  {:<28} {p:.3}", s.name());
    }

    let forced = generate(&model, dialogue, persona, &cfg, Some(Strategy::SelfDisclosure))?;
    println!("forced    [{}] α={} -> {}", forced.strategy, forced.alpha_used, forced.text);

    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes)?;
    let restored = read_checkpoint(bytes.as_slice())?;
    let again = generate(&restored, dialogue, persona, &cfg, None)?;
    assert_eq!(again.tokens, out.tokens);
    println!("checkpoint: {} bytes, restored model reproduces the reply", bytes.len());
    Ok(())
}
