//! Automatic evaluation: strategy accuracy, perplexity, BLEU, Distinct,
//! EAD, Rouge-L and persona/response cosine similarity, plus the
//! similarity-versus-rating correlation study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::Hash;
use std::io::Write;

use crate::corpus::{tokenize, Speaker};
use crate::dataset::gold_turns;
use crate::decode::{generate_with_rule, ContrastiveRule, DecodeConfig, PersonaContrast};
use crate::error::{Error, Result};
use crate::hash::{fnv1a, fnv1a_extend};
use crate::model::Model;
use crate::persona::{AnnotatedConversation, PersonaSet};
use crate::strategy::Strategy;
use crate::train::{validate_scoped, TokenScope};

fn ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    tokens.windows(n.max(1)).filter(move |_| n >= 1)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for g in ngrams(tokens, n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU up to order `n` with brevity penalty.
///
/// Orders longer than the hypothesis are left out of the geometric mean.
/// An order with no clipped match gets precision `1 / (2^k · total)`,
/// where `k` counts the zero-match orders seen so far, so the score stays
/// strictly positive without rewarding misses.
pub fn bleu_n<T: Eq + Hash>(hypothesis: &[T], reference: &[T], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("BLEU order must be >= 1".into()));
    }
    if hypothesis.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let orders = n.min(hypothesis.len());
    let mut log_sum = 0.0;
    let mut zero_orders = 0;
    for m in 1..=orders {
        let hyp = ngram_counts(hypothesis, m);
        let refc = ngram_counts(reference, m);
        let total = hypothesis.len() + 1 - m;
        let matched: usize = hyp.iter().map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else {
            zero_orders += 1;
            1.0 / (2f64.powi(zero_orders) * total as f64)
        };
        log_sum += p.ln();
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * (log_sum / orders as f64).exp())
}

fn unique_and_total<T: Eq + Hash, H: AsRef<[T]>>(hypotheses: &[H], n: usize) -> (usize, usize) {
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0;
    for h in hypotheses {
        for g in ngrams(h.as_ref(), n) {
            total += 1;
            seen.insert(g);
        }
    }
    (seen.len(), total)
}

/// Unique n-grams over total n-grams across all hypotheses.
pub fn distinct_n<T: Eq + Hash, H: AsRef<[T]>>(hypotheses: &[H], n: usize) -> Result<f64> {
    let (unique, total) = unique_and_total(hypotheses, n);
    if total == 0 {
        return Err(Error::InvalidArgument(format!("no {n}-grams in the hypotheses")));
    }
    Ok(unique as f64 / total as f64)
}

/// Unique n-grams across all hypotheses divided by the vocabulary size.
pub fn ead_n<T: Eq + Hash, H: AsRef<[T]>>(hypotheses: &[H], n: usize, vocab_size: usize) -> Result<f64> {
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocabulary size must be >= 1".into()));
    }
    let (unique, _) = unique_and_total(hypotheses, n);
    Ok(unique as f64 / vocab_size as f64)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Balanced F1 of LCS precision and recall.
pub fn rouge_l<T: Eq>(hypothesis: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(hypothesis, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / hypothesis.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// `exp` of the mean response NLL (strategy token excluded, EOS included),
/// averaged per example as in validation.
pub fn perplexity(model: &Model, examples: &[crate::model::Example]) -> Result<f64> {
    Ok(validate_scoped(model, examples, TokenScope::ResponseOnly)?.exp())
}

/// Fraction of items whose gold strategy is among the first `top_n`
/// ranked predictions.
pub fn strategy_accuracy(predictions: &[Vec<Strategy>], gold: &[Strategy], top_n: usize) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} gold labels", predictions.len(), gold.len())));
    }
    if !(1..=8).contains(&top_n) {
        return Err(Error::InvalidArgument(format!("top_n must be in 1..=8, got {top_n}")));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("no items to score".into()));
    }
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p.iter().take(top_n).any(|s| s == *g)).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Maps a sentence to a fixed-length vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, sentence: &str) -> Vec<f64>;
}

/// Averaged word vectors. Each word's vector is drawn once from a stream
/// seeded by the hash of the word, so every word, seen or not, has a stable
/// embedding.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 64, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        let h = fnv1a_extend(fnv1a(&self.seed.to_le_bytes()), word.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, sentence: &str) -> Vec<f64> {
        let words = tokenize(sentence);
        let mut out = vec![0.0; self.dim];
        if words.is_empty() {
            return out;
        }
        for w in &words {
            for (o, v) in out.iter_mut().zip(self.word_vector(w)) {
                *o += v;
            }
        }
        let n = words.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Persona sentences joined into one text for embedding.
pub fn persona_text(persona: &PersonaSet) -> String {
    persona.sentences().join(" ")
}

/// Mean cosine between each response and the joined persona text.
pub fn persona_response_similarity<S: AsRef<str>>(responses: &[S], persona: &PersonaSet, embedder: &dyn Embedder) -> Result<f64> {
    if responses.is_empty() || persona.is_empty() {
        return Err(Error::InvalidArgument("similarity needs at least one response and one persona sentence".into()));
    }
    let p = embedder.embed(&persona_text(persona));
    let total: f64 = responses.iter().map(|r| cosine(&embedder.embed(r.as_ref()), &p)).sum();
    Ok(total / responses.len() as f64)
}

/// Ordinary least squares `y ≈ slope·x + intercept` with its R².
///
/// A constant `x` or constant `y` gives slope 0 and R² = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("cannot fit an empty point set".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 1e-300 || syy <= 1e-24 {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: my,
            r_squared: 0.0,
        });
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAxis {
    Empathy,
    Relevance,
    IntensityDecrease,
}

impl ScoreAxis {
    pub const ALL: [ScoreAxis; 3] = [ScoreAxis::Empathy, ScoreAxis::Relevance, ScoreAxis::IntensityDecrease];

    pub fn name(self) -> &'static str {
        match self {
            ScoreAxis::Empathy => "empathy",
            ScoreAxis::Relevance => "relevance",
            ScoreAxis::IntensityDecrease => "intensity_decrease",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub mean_sim: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub axis: ScoreAxis,
    /// Observed score value → mean similarity of its conversations.
    pub buckets: BTreeMap<i32, Bucket>,
    pub fit: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub axes: Vec<AxisReport>,
    /// Conversations used in the fits.
    pub n_conversations: usize,
    /// Indices of conversations left out because no persona was found.
    pub skipped: Vec<usize>,
}

impl CorrelationReport {
    /// Columns `axis,score,mean_sim,n,slope,intercept,r_squared`. Bucket rows
    /// leave the fit columns empty; each axis ends with a `summary` row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(["axis", "score", "mean_sim", "n", "slope", "intercept", "r_squared"]).map_err(io)?;
        for a in &self.axes {
            for (score, b) in &a.buckets {
                out.write_record([a.axis.name(), &score.to_string(), &b.mean_sim.to_string(), &b.n.to_string(), "", "", ""]).map_err(io)?;
            }
            let n: usize = a.buckets.values().map(|b| b.n).sum();
            let mean = a.buckets.values().map(|b| b.mean_sim * b.n as f64).sum::<f64>() / n.max(1) as f64;
            out.write_record([
                a.axis.name(),
                "summary",
                &mean.to_string(),
                &n.to_string(),
                &a.fit.slope.to_string(),
                &a.fit.intercept.to_string(),
                &a.fit.r_squared.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn axis(&self, axis: ScoreAxis) -> Option<&AxisReport> {
        self.axes.iter().find(|a| a.axis == axis)
    }
}

/// Per-conversation mean similarity between supporter utterances and the
/// final persona snapshot, correlated with each rating axis.
pub fn correlation_analysis(annotated: &[AnnotatedConversation], embedder: &dyn Embedder) -> Result<CorrelationReport> {
    let missing: Vec<usize> = annotated.iter().enumerate().filter(|(_, a)| a.base.scores.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (i, a) in annotated.iter().enumerate() {
        let persona = a.persona_at_turn.values().next_back().cloned().unwrap_or_default();
        let responses: Vec<&str> = a.base.turns.iter().filter(|t| t.speaker == Speaker::Supporter).map(|t| t.text.as_str()).collect();
        if persona.is_empty() || responses.is_empty() {
            skipped.push(i);
            continue;
        }
        let sim = persona_response_similarity(&responses, &persona, embedder)?;
        rows.push((a.base.scores.expect("checked above"), sim));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no conversation has both persona annotations and supporter turns".into()));
    }
    let axes = ScoreAxis::ALL
        .iter()
        .map(|&axis| {
            let points: Vec<(i32, f64)> = rows
                .iter()
                .map(|(s, sim)| {
                    let x = match axis {
                        ScoreAxis::Empathy => i32::from(s.empathy),
                        ScoreAxis::Relevance => i32::from(s.relevance),
                        ScoreAxis::IntensityDecrease => s.intensity_decrease(),
                    };
                    (x, *sim)
                })
                .collect();
            let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
            for &(x, y) in &points {
                let e = sums.entry(x).or_default();
                e.0 += y;
                e.1 += 1;
            }
            let buckets = sums.into_iter().map(|(k, (s, n))| (k, Bucket { mean_sim: s / n as f64, n })).collect();
            let fit = linear_fit(&points.iter().map(|&(x, y)| (f64::from(x), y)).collect::<Vec<_>>())?;
            Ok(AxisReport { axis, buckets, fit })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationReport {
        axes,
        n_conversations: rows.len(),
        skipped,
    })
}

/// Table-level metrics over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_items: usize,
    /// Top-n strategy accuracy for n = 1..=8.
    pub acc_top: BTreeMap<usize, f64>,
    pub ppl: f64,
    /// Mean sentence BLEU for orders 1..=4.
    pub bleu: BTreeMap<usize, f64>,
    pub distinct: BTreeMap<usize, f64>,
    pub ead: BTreeMap<usize, f64>,
    pub rouge_l: f64,
    pub cos_sim: f64,
}

/// Column names of the summary table, in order.
pub const TABLE_COLUMNS: [&str; 10] = ["ACC", "PPL", "B-2", "B-4", "D-1", "D-2", "E-1", "E-2", "R-L", "Cos-Sim"];

impl MetricReport {
    /// The report as `(column, value)` pairs in [`TABLE_COLUMNS`] order.
    pub fn table_row(&self) -> Vec<(&'static str, f64)> {
        let values = [
            self.acc_top[&1],
            self.ppl,
            self.bleu[&2],
            self.bleu[&4],
            self.distinct[&1],
            self.distinct[&2],
            self.ead[&1],
            self.ead[&2],
            self.rouge_l,
            self.cos_sim,
        ];
        TABLE_COLUMNS.into_iter().zip(values).collect()
    }
}

/// One scored generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub conversation: usize,
    pub turn: usize,
    pub gold_strategy: Strategy,
    pub predicted: Vec<Strategy>,
    pub generated_strategy: Strategy,
    pub reference: String,
    pub hypothesis: String,
}

/// Seed for the `index`-th generation of an evaluation run.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    fnv1a_extend(fnv1a(&seed.to_le_bytes()), &(index as u64).to_le_bytes())
}

/// Generates one response per gold supporter turn and scores them.
pub fn evaluate(model: &Model, test: &[AnnotatedConversation], cfg: &DecodeConfig, embedder: &dyn Embedder) -> Result<MetricReport> {
    evaluate_detailed(model, test, cfg, embedder).map(|(r, _)| r)
}

pub fn evaluate_detailed(model: &Model, test: &[AnnotatedConversation], cfg: &DecodeConfig, embedder: &dyn Embedder) -> Result<(MetricReport, Vec<EvalItem>)> {
    evaluate_with_rule(model, test, cfg, embedder, &PersonaContrast)
}

/// [`evaluate_detailed`] with a different reweighting between the pathways.
pub fn evaluate_with_rule(
    model: &Model,
    test: &[AnnotatedConversation],
    cfg: &DecodeConfig,
    embedder: &dyn Embedder,
    rule: &dyn ContrastiveRule,
) -> Result<(MetricReport, Vec<EvalItem>)> {
    let gold = gold_turns(test, &model.vocab, model.config.max_len);
    if gold.is_empty() {
        return Err(Error::InvalidArgument("test set has no strategy-labeled supporter turns".into()));
    }
    let mut items = Vec::with_capacity(gold.len());
    let mut sims = Vec::new();
    for (i, g) in gold.iter().enumerate() {
        let item_cfg = DecodeConfig {
            seed: item_seed(cfg.seed, i),
            trace: false,
            trace_distributions: false,
            ..cfg.clone()
        };
        let out = generate_with_rule(model, &g.context, &g.persona, &item_cfg, None, rule)?;
        if !g.persona.is_empty() {
            sims.push(persona_response_similarity(&[&out.text], &g.persona, embedder)?);
        }
        items.push(EvalItem {
            conversation: g.conversation,
            turn: g.turn,
            gold_strategy: g.example.strategy,
            predicted: out.strategy_ranking.iter().map(|(s, _)| *s).collect(),
            generated_strategy: out.strategy,
            reference: g.response.clone(),
            hypothesis: out.text,
        });
    }

    let predictions: Vec<Vec<Strategy>> = items.iter().map(|it| it.predicted.clone()).collect();
    let gold_strategies: Vec<Strategy> = items.iter().map(|it| it.gold_strategy).collect();
    let acc_top = (1..=8).map(|n| Ok((n, strategy_accuracy(&predictions, &gold_strategies, n)?))).collect::<Result<_>>()?;

    let hyps: Vec<Vec<String>> = items.iter().map(|it| tokenize(&it.hypothesis)).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|it| tokenize(&it.reference)).collect();
    let mean = |f: &dyn Fn(&[String], &[String]) -> f64| hyps.iter().zip(&refs).map(|(h, r)| f(h, r)).sum::<f64>() / hyps.len() as f64;
    let bleu = (1..=4).map(|n| (n, mean(&|h, r| bleu_n(h, r, n).unwrap_or(0.0)))).collect();
    let v = model.vocab.len();
    // a model that only emits EOS has no n-grams; score its diversity as 0
    let distinct = (1..=2).map(|n| (n, distinct_n(&hyps, n).unwrap_or(0.0))).collect();
    let ead = (1..=2).map(|n| Ok((n, ead_n(&hyps, n, v)?))).collect::<Result<_>>()?;
    let examples: Vec<_> = gold.iter().map(|g| g.example.clone()).collect();

    let report = MetricReport {
        n_items: items.len(),
        acc_top,
        ppl: perplexity(model, &examples)?,
        bleu,
        distinct,
        ead,
        rouge_l: mean(&|h, r| rouge_l(h, r)),
        cos_sim: if sims.is_empty() { 0.0 } else { sims.iter().sum::<f64>() / sims.len() as f64 },
    };
    Ok((report, items))
}
