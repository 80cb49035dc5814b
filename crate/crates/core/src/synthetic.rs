//! Seeded synthetic corpora for checks and demos.
//!
//! [`vocabulary_shift`] builds a source/target pair whose sentiment is carried
//! partly by shared terms and partly by terms exclusive to each domain. A raw
//! bag-of-words classifier trained on the source cannot use the target's
//! exclusive terms; a representation that learns their co-occurrence with the
//! shared terms can.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DomainDataset, Example, Label, TermDictionary};

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftConfig {
    /// Total vocabulary size; terms past the sentiment terms are neutral.
    pub vocab: usize,
    /// Shared sentiment terms, half positive and half negative.
    pub shared: usize,
    /// Sentiment terms exclusive to each domain, split the same way.
    pub exclusive: usize,
    pub source_labeled: usize,
    pub target_unlabeled: usize,
    pub target_labeled: usize,
    /// Mean tokens per document; lengths are uniform on `[len/2, 3len/2]`.
    pub doc_len: usize,
    /// Probability that a token is a shared sentiment term.
    pub shared_rate: f64,
    /// Probability that a token is one of the domain's exclusive terms.
    pub exclusive_rate: f64,
    /// Probability that a sentiment token agrees with the document label.
    pub agreement: f64,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            vocab: 200,
            shared: 20,
            exclusive: 25,
            source_labeled: 1000,
            target_unlabeled: 1000,
            target_labeled: 500,
            doc_len: 30,
            shared_rate: 0.08,
            exclusive_rate: 0.2,
            agreement: 0.75,
            seed: 2012,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShiftCorpus {
    /// Labeled source documents.
    pub source: DomainDataset,
    /// Unlabeled target documents followed by labeled ones.
    pub target: DomainDataset,
    pub names: TermDictionary,
}

/// Term ids of one polarity inside a block of sentiment terms.
fn polarity_terms(start: usize, len: usize, label: Label) -> std::ops::Range<usize> {
    let half = len.div_ceil(2);
    match label {
        Label::Positive => start..start + half,
        Label::Negative => start + half..start + len,
    }
}

struct DomainSampler<'a> {
    config: &'a ShiftConfig,
    exclusive_start: usize,
    neutral_cdf: Vec<f64>,
}

impl DomainSampler<'_> {
    fn document(&self, rng: &mut ChaCha8Rng, label: Label) -> Vec<(usize, f64)> {
        let c = self.config;
        let len = rng.random_range(c.doc_len / 2..=c.doc_len + c.doc_len / 2);
        let mut counts = vec![0.0; c.vocab];
        for _ in 0..len {
            let u: f64 = rng.random();
            let term = if u < c.shared_rate + c.exclusive_rate {
                let polarity = if rng.random::<f64>() < c.agreement {
                    label
                } else {
                    label.flipped()
                };
                let range = if u < c.shared_rate {
                    polarity_terms(0, c.shared, polarity)
                } else {
                    polarity_terms(self.exclusive_start, c.exclusive, polarity)
                };
                rng.random_range(range)
            } else {
                let v: f64 = rng.random();
                let k = self
                    .neutral_cdf
                    .partition_point(|&p| p < v)
                    .min(self.neutral_cdf.len() - 1);
                c.shared + 2 * c.exclusive + k
            };
            counts[term] += 1.0;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, v)| v > 0.0)
            .collect()
    }
}

/// Zipf-like cumulative distribution over `n` neutral terms.
fn zipf_cdf(n: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..n).map(|k| 1.0 / (k as f64 + 1.0).powf(0.8)).collect();
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect()
}

fn random_label(rng: &mut ChaCha8Rng) -> Label {
    if rng.random::<bool>() {
        Label::Positive
    } else {
        Label::Negative
    }
}

pub fn vocabulary_shift(config: &ShiftConfig) -> ShiftCorpus {
    let neutral = config.vocab - config.shared - 2 * config.exclusive;
    assert!(neutral > 0, "vocabulary too small for the sentiment terms");
    let cdf = zipf_cdf(neutral);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let source_sampler = DomainSampler {
        config,
        exclusive_start: config.shared,
        neutral_cdf: cdf.clone(),
    };
    let target_sampler = DomainSampler {
        config,
        exclusive_start: config.shared + config.exclusive,
        neutral_cdf: cdf,
    };
    let mut draw = |sampler: &DomainSampler<'_>, keep_label: bool| {
        let label = random_label(&mut rng);
        Example {
            features: sampler.document(&mut rng, label),
            label: keep_label.then_some(label),
        }
    };
    let source = (0..config.source_labeled)
        .map(|_| draw(&source_sampler, true))
        .collect();
    let mut target: Vec<Example> = (0..config.target_unlabeled)
        .map(|_| draw(&target_sampler, false))
        .collect();
    target.extend((0..config.target_labeled).map(|_| draw(&target_sampler, true)));

    let mut names = Vec::with_capacity(config.vocab);
    for (start, len, prefix) in [
        (0, config.shared, "shared"),
        (config.shared, config.exclusive, "source"),
        (config.shared + config.exclusive, config.exclusive, "target"),
    ] {
        for label in [Label::Positive, Label::Negative] {
            let tag = if label == Label::Positive {
                "pos"
            } else {
                "neg"
            };
            for (k, id) in polarity_terms(start, len, label).enumerate() {
                names.push((id, format!("{prefix}_{tag}_{k}")));
            }
        }
    }
    for k in 0..neutral {
        names.push((
            config.shared + 2 * config.exclusive + k,
            format!("neutral_{k}"),
        ));
    }
    ShiftCorpus {
        source: DomainDataset::new("source", source),
        target: DomainDataset::new("target", target),
        names: TermDictionary::from_pairs(names),
    }
}

/// Two unlabeled domains drawn from one distribution over `vocab` terms.
pub fn identical_pair(
    n: usize,
    vocab: usize,
    doc_len: usize,
    seed: u64,
) -> (DomainDataset, DomainDataset) {
    let cdf = zipf_cdf(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut domain = |id: &str| {
        let examples = (0..n)
            .map(|_| Example {
                features: bag(&mut rng, &cdf, 0, doc_len),
                label: None,
            })
            .collect();
        DomainDataset::new(id, examples)
    };
    let a = domain("a");
    (a, domain("b"))
}

/// Two unlabeled domains over disjoint halves of `2 * half_vocab` terms.
pub fn disjoint_pair(
    n: usize,
    half_vocab: usize,
    doc_len: usize,
    seed: u64,
) -> (DomainDataset, DomainDataset) {
    let cdf = zipf_cdf(half_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut domain = |id: &str, offset: usize| {
        let examples = (0..n)
            .map(|_| Example {
                features: bag(&mut rng, &cdf, offset, doc_len),
                label: None,
            })
            .collect();
        DomainDataset::new(id, examples)
    };
    let a = domain("a", 0);
    (a, domain("b", half_vocab))
}

fn bag(rng: &mut ChaCha8Rng, cdf: &[f64], offset: usize, doc_len: usize) -> Vec<(usize, f64)> {
    let len = rng.random_range(doc_len / 2..=doc_len + doc_len / 2).max(1);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..len {
        let v: f64 = rng.random();
        let k = cdf.partition_point(|&p| p < v).min(cdf.len() - 1);
        *counts.entry(offset + k).or_insert(0.0) += 1.0;
    }
    counts.into_iter().collect()
}
