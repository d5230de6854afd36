//! One decoding step by hand: temperature, persona contrast, repetition
//! penalty, truncation and sampling.
//!
//! ```text
//! cargo run --example contrastive_decoding
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use persona_esc::decode::{
    apply_repetition_penalty, apply_temperature, contrastive_adjust, filter_top_k_top_p, sample, AlphaTable,
};
use persona_esc::Strategy;

fn main() -> anyhow::Result<()> {
    let table = AlphaTable::default();
    for (s, alpha) in table.iter() {
        println!("{:<28} α = {alpha:<4} ({:?})", s.name(), table.category(s));
    }

    // Logits with and without the persona for a five-token vocabulary.
    let with_persona = [2.0, 1.5, 1.0, 0.2, -1.0];
    let without_persona = [2.5, 0.5, 1.0, 0.0, -1.0];
    let p_full = apply_temperature(&with_persona, 0.8)?;
    let p_ctx = apply_temperature(&without_persona, 0.8)?;
    let alpha = table.get(Strategy::ProvidingSuggestions);

    let q = contrastive_adjust(&p_full, &p_ctx, alpha)?;
    println!("p_full {:.3?}", p_full.probs());
    println!("q      {:.3?}", q.probs());

    // Token 0 was already generated, so it is penalized in log space.
    let log_q: Vec<f64> = q.probs().iter().map(|p| p.ln()).collect();
    let penalized = apply_repetition_penalty(&log_q, &[0], 1.5);
    let kept = filter_top_k_top_p(&persona_esc::model::TokenDistribution::from_logits(&penalized), 3, 0.8);
    println!("kept   {:.3?}", kept.probs());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws: Vec<usize> = (0..10).map(|_| sample(&kept, &mut rng)).collect();
    println!("draws  {draws:?}");
    Ok(())
}
