//! Text metrics on hand-written hypotheses.
//!
//! ```text
//! cargo run --example metrics
//! ```

use persona_esc::corpus::tokenize;
use persona_esc::metrics::{bleu_n, distinct_n, ead_n, persona_response_similarity, rouge_l, strategy_accuracy, HashEmbedder};
use persona_esc::persona::PersonaSet;
use persona_esc::Strategy;

fn main() -> anyhow::Result<()> {
    let reference = tokenize("it sounds like your job has been very stressful lately");
    let hyps = [
        "it sounds like your job has been stressful",
        "have you talked to your manager about it",
        "i am sorry to hear that",
    ];
    let tokenized: Vec<Vec<String>> = hyps.iter().map(|h| tokenize(h)).collect();
    for (h, t) in hyps.iter().zip(&tokenized) {
        println!("{h:<45} B-2 {:.3}  B-4 {:.3}  R-L {:.3}", bleu_n(t, &reference, 2)?, bleu_n(t, &reference, 4)?, rouge_l(t, &reference));
    }
    println!("D-1 {:.3}  D-2 {:.3}", distinct_n(&tokenized, 1)?, distinct_n(&tokenized, 2)?);
    println!("E-1 {:.3}  E-2 {:.3}  (vocabulary 40)", ead_n(&tokenized, 1, 40)?, ead_n(&tokenized, 2, 40)?);

    let predictions = vec![
        vec![Strategy::Question, Strategy::Information],
        vec![Strategy::SelfDisclosure, Strategy::Question],
    ];
    let gold = [Strategy::Question, Strategy::Question];
    println!("ACC top-1 {:.2}  top-2 {:.2}", strategy_accuracy(&predictions, &gold, 1)?, strategy_accuracy(&predictions, &gold, 2)?);

    let mut persona = PersonaSet::new();
    persona.insert("i work as a nurse", 0);
    persona.insert("my job is stressful", 2);
    let sim = persona_response_similarity(&hyps, &persona, &HashEmbedder::default())?;
    println!("Cos-Sim {sim:.3}");
    Ok(())
}
