use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Corpus;
use crate::error::{Error, Result};

/// Shuffles conversations with a seeded RNG and cuts them 7:2:1.
///
/// Sizes are `floor(0.7 n)`, `floor(0.2 n)` and the remainder. Each part keeps
/// the original relative order of its conversations.
pub fn split_corpus(corpus: &Corpus, seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    split_corpus_ratio(corpus, [7, 2, 1], seed)
}

/// Parses a `train:valid:test` ratio such as `"7:2:1"`.
pub fn parse_ratio(text: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let bad = || Error::InvalidArgument(format!("ratio {text:?} must look like 7:2:1"));
    let [a, b, c] = parts[..] else { return Err(bad()) };
    let ratio = [a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?];
    if ratio[0] == 0 {
        return Err(Error::InvalidArgument("the training share must be positive".into()));
    }
    Ok(ratio)
}

/// [`split_corpus`] with arbitrary integer weights. The first two parts get
/// `floor(n · w / Σw)` conversations and the last part the remainder.
/// Needs at least `Σw` conversations, which leaves every part with positive
/// weight non-empty.
pub fn split_corpus_ratio(corpus: &Corpus, ratio: [u32; 3], seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
    let n = corpus.len();
    let total: u64 = ratio.iter().map(|&w| u64::from(w)).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("split ratio is all zeros".into()));
    }
    if (n as u64) < total {
        return Err(Error::InvalidArgument(format!("a {}:{}:{} split needs at least {total} conversations, got {n}", ratio[0], ratio[1], ratio[2])));
    }
    let n_train = (n as u64 * u64::from(ratio[0]) / total) as usize;
    let n_valid = (n as u64 * u64::from(ratio[1]) / total) as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        Corpus {
            format_version: corpus.format_version.clone(),
            conversations: idx.into_iter().map(|i| corpus.conversations[i].clone()).collect(),
        }
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_valid]),
        take(&order[n_train + n_valid..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn synth(n: usize) -> Corpus {
        generate_synthetic(&SynthConfig {
            n_conversations: n,
            n_turns: 4,
            seed: 1,
            ..SynthConfig::default()
        })
    }

    #[test]
    fn ratios() {
        assert_eq!(parse_ratio("7:2:1").unwrap(), [7, 2, 1]);
        assert_eq!(parse_ratio(" 8 : 1 : 1 ").unwrap(), [8, 1, 1]);
        for bad in ["7:2", "7:2:1:0", "a:b:c", "0:1:1", "-1:2:1"] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
        let (a, b, c) = split_corpus_ratio(&synth(20), [8, 1, 1], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (16, 2, 2));
        let (a, b, c) = split_corpus_ratio(&synth(5), [1, 0, 0], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5, 0, 0));
        assert!(split_corpus_ratio(&synth(9), [7, 2, 1], 0).is_err());
    }

    #[test]
    fn ten_split_seven_two_one() {
        for seed in 0..5 {
            let (a, b, c) = split_corpus(&synth(10), seed).unwrap();
            assert_eq!((a.len(), b.len(), c.len()), (7, 2, 1));
        }
    }

    #[test]
    fn hundred_split_exact() {
        let (a, b, c) = split_corpus(&synth(100), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 20, 10));
    }

    #[test]
    fn deterministic() {
        let corpus = synth(23);
        assert_eq!(split_corpus(&corpus, 9).unwrap(), split_corpus(&corpus, 9).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(split_corpus(&synth(9), 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn partitions_exactly(n in 10usize..60, seed in any::<u64>()) {
            let corpus = synth(n);
            let (a, b, c) = split_corpus(&corpus, seed).unwrap();
            // situations are unique per synthetic conversation, so they identify members
            let key = |c: &Corpus| c.conversations.iter().map(|x| x.situation.clone()).collect::<BTreeSet<_>>();
            let (ka, kb, kc) = (key(&a), key(&b), key(&c));
            prop_assert_eq!(ka.len() + kb.len() + kc.len(), n);
            prop_assert!(ka.is_disjoint(&kb) && ka.is_disjoint(&kc) && kb.is_disjoint(&kc));
            let union: BTreeSet<_> = ka.union(&kb).cloned().collect::<BTreeSet<_>>().union(&kc).cloned().collect();
            prop_assert_eq!(union, key(&corpus));
        }
    }
}
