//! Trains the desk-scale model on a synthetic corpus until it memorizes it.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs]
//! ```

use std::time::Instant;

use persona_esc::corpus::{build_vocab, generate_synthetic, SynthConfig};
use persona_esc::dataset::build_examples;
use persona_esc::decode::DecodeConfig;
use persona_esc::metrics::{evaluate, perplexity, HashEmbedder};
use persona_esc::model::{Model, ModelConfig};
use persona_esc::persona::{annotate_corpus, RuleExtractor};
use persona_esc::train::{train_with_hook, TrainConfig};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?;
    let corpus = generate_synthetic(&SynthConfig::default());
    let vocab = build_vocab(&corpus, 1000)?;
    let annotated = annotate_corpus(&corpus, &RuleExtractor);
    let cfg = ModelConfig::default();
    let examples = build_examples(&annotated, &vocab, cfg.max_len);
    println!("{} conversations, {} examples, vocabulary {}", corpus.len(), examples.len(), vocab.len());

    let model = Model::new(cfg, vocab)?;
    let mut train_cfg = TrainConfig::desk();
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    let start = Instant::now();
    let (model, report) = train_with_hook(model, &examples, &examples, &train_cfg, &mut |r| {
        if r.epoch % 10 == 0 {
            println!("epoch {:>3}  train {:.4}  valid {:.4}  {:.1}s", r.epoch, r.train_loss, r.valid_loss, start.elapsed().as_secs_f64());
        }
    })?;
    println!("selected epoch {:?}, final train loss {:.4}", report.selected_epoch, report.final_train_loss().unwrap_or(f64::NAN));
    println!("train-set perplexity {:.4}", perplexity(&model, &examples)?);
    let report = evaluate(&model, &annotated, &DecodeConfig::default(), &HashEmbedder::default())?;
    for (name, value) in report.table_row() {
        println!("{name:>8} {value:.4}");
    }
    Ok(())
}
