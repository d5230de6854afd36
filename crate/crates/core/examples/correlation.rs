//! Relates persona/response similarity to conversation ratings.
//!
//! ```text
//! cargo run --example correlation
//! ```

use persona_esc::corpus::{generate_synthetic, SynthConfig};
use persona_esc::metrics::{correlation_analysis, linear_fit, HashEmbedder, ScoreAxis};
use persona_esc::persona::{annotate_corpus, RuleExtractor};

fn main() -> anyhow::Result<()> {
    let fit = linear_fit(&[(1.0, 0.1), (2.0, 0.3), (3.0, 0.5), (4.0, 0.7)])?;
    println!("hand check: slope {:.2}, intercept {:.2}, R² {:.2}", fit.slope, fit.intercept, fit.r_squared);

    let corpus = generate_synthetic(&SynthConfig {
        n_conversations: 200,
        ..Default::default()
    });
    let annotated = annotate_corpus(&corpus, &RuleExtractor);
    let report = correlation_analysis(&annotated, &HashEmbedder::default())?;
    println!("{} conversations analysed, {} skipped", report.n_conversations, report.skipped.len());
    let empathy = report.axis(ScoreAxis::Empathy).expect("empathy axis");
    for (score, bucket) in &empathy.buckets {
        println!("  empathy {score}: mean sim {:.3} over {}", bucket.mean_sim, bucket.n);
    }
    print!("{}", report.to_csv()?);
    Ok(())
}
