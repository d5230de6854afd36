use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Conversation, Corpus, Scores, Utterance};
use crate::strategy::Strategy;

const NOUNS: &[&str] = &[
    "plumber", "teacher", "nurse", "student", "pharmacist", "driver", "chef", "farmer", "painter", "lawyer", "baker",
    "writer", "soldier", "dancer", "pilot", "doctor", "mechanic", "gardener", "singer", "clerk", "carpenter",
    "librarian", "cashier", "designer",
];

const ADJECTIVES: &[&str] = &[
    "sad", "anxious", "lonely", "tired", "angry", "stressed", "lost", "hopeless", "nervous", "worried", "scared",
    "frustrated", "overwhelmed", "confused", "hurt", "empty",
];

const PROBLEMS: &[&str] = &[
    "a sick dog", "no money", "a big exam", "a broken car", "a new boss", "a long commute", "a noisy neighbor",
    "a bad back", "a court date", "a small flat",
];

const THINGS: &[&str] = &["job", "family", "health", "future", "marriage", "studies", "savings", "friends"];

/// Parameters for [`generate_synthetic`]. `n_turns` counts utterances of
/// both speakers; values below 2 are raised to 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_conversations: usize,
    pub n_turns: usize,
    /// Extra occupation nouns added to the built-in pool.
    pub vocab_seed_words: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_conversations: 50,
            n_turns: 6,
            vocab_seed_words: Vec::new(),
            seed: 0,
        }
    }
}

fn supporter_text(strategy: Strategy, noun: &str, adj: &str, thing: &str) -> String {
    match strategy {
        Strategy::Question => format!("what happened with your {thing} as a {noun} ?"),
        Strategy::RestatementOrParaphrasing => format!("so you are a {noun} and you feel {adj} ."),
        Strategy::ReflectionOfFeelings => format!("it sounds like you feel {adj} about your {thing} ."),
        Strategy::SelfDisclosure => format!("i also felt {adj} when my {thing} was hard ."),
        Strategy::AffirmationAndReassurance => format!("you are a good {noun} and you will get through this ."),
        Strategy::ProvidingSuggestions => format!("as a {noun} you could talk to someone about your {thing} ."),
        Strategy::Information => format!("many people who work as a {noun} feel {adj} at times ."),
        Strategy::Others => "i am here for you .".to_string(),
    }
}

/// Templated conversations with plantable persona facts ("i am a <noun>",
/// "i feel <adj>", "i have <problem>") and supporter turns whose strategy
/// labels cycle through all eight strategies. Deterministic per seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut nouns: Vec<String> = NOUNS.iter().map(|s| s.to_string()).collect();
    for w in &cfg.vocab_seed_words {
        let w = w.trim().to_lowercase();
        if !w.is_empty() && !nouns.contains(&w) {
            nouns.push(w);
        }
    }

    // distinct (noun, adjective) openings as long as the pool allows
    let mut pairs: Vec<(usize, usize)> = (0..nouns.len()).flat_map(|n| (0..ADJECTIVES.len()).map(move |a| (n, a))).collect();
    pairs.shuffle(&mut rng);

    let n_turns = cfg.n_turns.max(2);
    let mut conversations = Vec::with_capacity(cfg.n_conversations);
    for c in 0..cfg.n_conversations {
        let (ni, ai) = pairs[c % pairs.len()];
        let noun = nouns[ni].as_str();
        let adj = ADJECTIVES[ai];
        let adj2 = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
        let problem = PROBLEMS[rng.random_range(0..PROBLEMS.len())];
        let thing = THINGS[rng.random_range(0..THINGS.len())];
        // The strategy sequence depends only on the opening line, so a
        // model can learn it from the context it is given.
        let offset = ni % Strategy::ALL.len();

        let seeker_lines = [
            format!("hello , i am a {noun} ."),
            format!("i feel {adj} about my {thing} ."),
            format!("i have {problem} ."),
            format!("i am worried about my {thing} ."),
            format!("i feel {adj2} today ."),
        ];

        let mut turns = Vec::with_capacity(n_turns);
        let mut seeker_k = 0;
        let mut supporter_k = 0;
        for t in 0..n_turns {
            if t % 2 == 0 {
                turns.push(Utterance::seeker(seeker_lines[seeker_k % seeker_lines.len()].clone()));
                seeker_k += 1;
            } else {
                let strategy = Strategy::ALL[(offset + supporter_k) % Strategy::ALL.len()];
                turns.push(Utterance::supporter(supporter_text(strategy, noun, adj, thing), Some(strategy)));
                supporter_k += 1;
            }
        }

        let intensity_before = rng.random_range(2..=5u8);
        let scores = Scores {
            empathy: rng.random_range(1..=5),
            relevance: rng.random_range(1..=5),
            intensity_before,
            intensity_after: rng.random_range(1..=intensity_before),
        };
        let situation = format!("conversation {c}: a {noun} who feels {adj}");
        conversations.push(Conversation::new(situation, turns, Some(scores)).expect("templates satisfy invariants"));
    }
    Corpus::new(conversations)
}
