//! Extracts persona facts from seeker turns and writes the PESConv format.
//!
//! ```text
//! cargo run --example annotate_persona
//! ```

use persona_esc::corpus::{Conversation, Corpus, Utterance};
use persona_esc::persona::{annotate_corpus, extract_from_utterance, parse_pesconv, pesconv_to_json, RuleExtractor};
use persona_esc::Strategy;

fn main() -> anyhow::Result<()> {
    for text in ["I am a nurse and I love hiking.", "My sister lives in Oslo.", "It rained today."] {
        println!("{text:<35} -> {:?}", extract_from_utterance(text));
    }

    let conv = Conversation::new(
        "work stress",
        vec![
            Utterance::seeker("Hi, I am a nurse."),
            Utterance::supporter("Hello, what is on your mind?", Some(Strategy::Question)),
            Utterance::seeker("I work night shifts and I feel exhausted."),
            Utterance::supporter("That sounds really hard.", Some(Strategy::AffirmationAndReassurance)),
            Utterance::seeker("My manager never listens to me."),
            Utterance::supporter("Maybe you could write down your concerns first.", Some(Strategy::ProvidingSuggestions)),
        ],
        None,
    )
    .map_err(anyhow::Error::msg)?;

    // Snapshots exist from the third utterance on and only ever grow.
    let annotated = annotate_corpus(&Corpus::new(vec![conv]), &RuleExtractor);
    for (turn, persona) in &annotated[0].persona_at_turn {
        println!("before turn {turn}: {:?}", persona.sentences());
    }

    let json = pesconv_to_json(&annotated)?;
    assert_eq!(parse_pesconv(&json)?, annotated);
    println!("PESConv round trip ok ({} bytes)", json.len());
    Ok(())
}
