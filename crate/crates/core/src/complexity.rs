//! Sequence complexity scores under a unigram model, and corpus-level
//! profiles ranked by average rank across several metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Registry, SeqId};
use crate::rng::{fnv1a64, streams, SplitMix64};
use crate::tokenizer::UnigramModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub id: SeqId,
    pub token_len: usize,
    /// Σ −log₂ p(t) over the sequence, in bits.
    pub entropy_total: f64,
    /// Mean −log₂ p(t) per token, in bits.
    pub unigram_mean: f64,
}

/// Scores every sequence of the registry, in registry order.
///
/// With an unsmoothed model a token of probability zero is an error; pass
/// [`UnigramModel::add_one`] to score text the model was not fitted on.
pub fn score_sequences(registry: &Registry, unigram: &UnigramModel) -> Result<Vec<SequenceScore>> {
    registry.require_tokenized()?;
    let seqs: Vec<_> = registry.iter().collect();
    seqs.par_iter()
        .map(|s| {
            let mut bits = 0.0f64;
            for &t in &s.token_ids {
                let p = unigram.prob(t);
                if p <= 0.0 {
                    return Err(Error::Scoring(format!(
                        "token {t} in {} has zero probability",
                        registry.seq_label(s.id)
                    )));
                }
                bits -= p.log2();
            }
            let n = s.token_len();
            Ok(SequenceScore {
                id: s.id,
                token_len: n,
                entropy_total: bits,
                unigram_mean: if n == 0 { 0.0 } else { bits / n as f64 },
            })
        })
        .collect()
}

pub fn write_scores(path: &Path, registry: &Registry, scores: &[SequenceScore]) -> Result<()> {
    let mut out = String::from("seq_id\ttoken_len\tentropy_total\tunigram_mean\n");
    for s in scores {
        let _ = writeln!(
            out,
            "{}\t{}\t{:?}\t{:?}",
            registry.seq_label(s.id),
            s.token_len,
            s.entropy_total,
            s.unigram_mean
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path, registry: &Registry) -> Result<Vec<SequenceScore>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize, what: &str| Error::format(format!("{}: line {}: {what}", path.display(), n + 1), 0);
    body.lines()
        .enumerate()
        .skip(1)
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(n, "expected 4 columns"));
            }
            let (corpus, l) = cols[0].rsplit_once(':').ok_or_else(|| bad(n, "bad seq_id"))?;
            let corpus = registry.corpus_index(corpus).ok_or_else(|| bad(n, "unknown corpus"))? as u32;
            Ok(SequenceScore {
                id: SeqId {
                    corpus,
                    line: l.parse().map_err(|_| bad(n, "bad line index"))?,
                },
                token_len: cols[1].parse().map_err(|_| bad(n, "bad token_len"))?,
                entropy_total: cols[2].parse().map_err(|_| bad(n, "bad entropy"))?,
                unigram_mean: cols[3].parse().map_err(|_| bad(n, "bad unigram mean"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMetric {
    MeanTokenLen,
    MeanUnigram,
    MeanEntropy,
    TypeTokenRatio,
    ShortLineFraction,
}

impl ProfileMetric {
    pub const DEFAULT: [ProfileMetric; 5] = [
        ProfileMetric::MeanTokenLen,
        ProfileMetric::MeanUnigram,
        ProfileMetric::MeanEntropy,
        ProfileMetric::TypeTokenRatio,
        ProfileMetric::ShortLineFraction,
    ];

    /// Whether a larger value means a simpler corpus.
    fn higher_is_simpler(self) -> bool {
        matches!(self, ProfileMetric::ShortLineFraction)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProfileMetric::MeanTokenLen => "mean_token_len",
            ProfileMetric::MeanUnigram => "mean_unigram",
            ProfileMetric::MeanEntropy => "mean_entropy",
            ProfileMetric::TypeTokenRatio => "type_token_ratio",
            ProfileMetric::ShortLineFraction => "short_line_fraction",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub metrics: Vec<ProfileMetric>,
    pub ttr_sample_tokens: usize,
    pub short_line_max_tokens: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            metrics: ProfileMetric::DEFAULT.to_vec(),
            ttr_sample_tokens: 10_000,
            short_line_max_tokens: 10,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub corpus_id: String,
    /// Metric values, parallel to [`ProfileSet::metrics`].
    pub values: Vec<f64>,
    /// 1 = simplest; tied corpora share the mean rank.
    pub ranks: Vec<f64>,
    pub average_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub metrics: Vec<ProfileMetric>,
    /// In registry order.
    pub profiles: Vec<CorpusProfile>,
    /// Corpus ids from simplest to most complex.
    pub ordering: Vec<String>,
}

/// Tie-averaged ascending ranks (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn type_token_ratio(tokens: &[u32], sample: usize, rng: &mut SplitMix64) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let window = if tokens.len() <= sample {
        tokens
    } else {
        let start = rng.below((tokens.len() - sample + 1) as u64) as usize;
        &tokens[start..start + sample]
    };
    let mut seen = window.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len() as f64 / window.len() as f64
}

/// Profiles each non-empty corpus and orders corpora by ascending average rank
/// (ties: lower mean unigram bits first, then corpus id).
pub fn profile_corpora(registry: &Registry, scores: &[SequenceScore], cfg: &ProfileConfig) -> Result<ProfileSet> {
    if cfg.metrics.is_empty() {
        return Err(Error::Config("profile needs at least one metric".into()));
    }
    let live: Vec<usize> = (0..registry.corpora.len())
        .filter(|&c| !registry.sequences[c].is_empty())
        .collect();
    if live.len() < 2 {
        return Err(Error::Precondition(format!(
            "profiling needs at least 2 non-empty corpora, found {}",
            live.len()
        )));
    }
    let mut sums = vec![(0usize, 0.0f64, 0.0f64, 0usize, 0usize); registry.corpora.len()];
    for s in scores {
        let acc = sums
            .get_mut(s.id.corpus as usize)
            .ok_or_else(|| Error::Precondition("score references an unknown corpus".into()))?;
        acc.0 += s.token_len;
        acc.1 += s.unigram_mean;
        acc.2 += s.entropy_total;
        acc.3 += 1;
        acc.4 += (s.token_len <= cfg.short_line_max_tokens) as usize;
    }

    let mut profiles: Vec<CorpusProfile> = live
        .iter()
        .map(|&c| {
            let (toks, uni, ent, n, short) = sums[c];
            if n == 0 {
                return Err(Error::Precondition(format!(
                    "no scores for corpus {}",
                    registry.corpora[c].corpus_id
                )));
            }
            let n = n as f64;
            let values = cfg
                .metrics
                .iter()
                .map(|m| match m {
                    ProfileMetric::MeanTokenLen => toks as f64 / n,
                    ProfileMetric::MeanUnigram => uni / n,
                    ProfileMetric::MeanEntropy => ent / n,
                    ProfileMetric::ShortLineFraction => short as f64 / n,
                    ProfileMetric::TypeTokenRatio => {
                        let stream: Vec<u32> = registry.sequences[c]
                            .iter()
                            .flat_map(|s| s.token_ids.iter().copied())
                            .collect();
                        let key = fnv1a64(registry.corpora[c].corpus_id.as_bytes());
                        let mut rng = SplitMix64::for_stream(cfg.seed, streams::TTR_SAMPLE, &[key]);
                        type_token_ratio(&stream, cfg.ttr_sample_tokens, &mut rng)
                    }
                })
                .collect();
            Ok(CorpusProfile {
                corpus_id: registry.corpora[c].corpus_id.clone(),
                values,
                ranks: Vec::new(),
                average_rank: 0.0,
            })
        })
        .collect::<Result<_>>()?;

    for (k, m) in cfg.metrics.iter().enumerate() {
        let oriented: Vec<f64> = profiles
            .iter()
            .map(|p| if m.higher_is_simpler() { -p.values[k] } else { p.values[k] })
            .collect();
        for (p, r) in profiles.iter_mut().zip(average_ranks(&oriented)) {
            p.ranks.push(r);
        }
    }
    for p in &mut profiles {
        p.average_rank = p.ranks.iter().sum::<f64>() / p.ranks.len() as f64;
    }

    let uni_k = cfg.metrics.iter().position(|m| *m == ProfileMetric::MeanUnigram);
    let mut order: Vec<&CorpusProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        a.average_rank
            .total_cmp(&b.average_rank)
            .then_with(|| match uni_k {
                Some(k) => a.values[k].total_cmp(&b.values[k]),
                None => std::cmp::Ordering::Equal,
            })
            .then_with(|| a.corpus_id.cmp(&b.corpus_id))
    });
    let ordering = order.iter().map(|p| p.corpus_id.clone()).collect();
    Ok(ProfileSet {
        metrics: cfg.metrics.clone(),
        profiles,
        ordering,
    })
}

impl ProfileSet {
    pub fn get(&self, corpus_id: &str) -> Option<&CorpusProfile> {
        self.profiles.iter().find(|p| p.corpus_id == corpus_id)
    }

    /// Rank table in simplest-first order, one column per metric.
    pub fn table(&self) -> String {
        let w = self.ordering.iter().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<w$}", "corpus");
        for m in &self.metrics {
            let _ = write!(out, "  {:>19}", m.name());
        }
        out.push_str("  avg_rank\n");
        for id in &self.ordering {
            let p = self.get(id).expect("ordering names profiled corpora");
            let _ = write!(out, "{:<w$}", id);
            for r in &p.ranks {
                let _ = write!(out, "  {:>19}", format!("{r:.1}"));
            }
            let _ = writeln!(out, "  {:>8.3}", p.average_rank);
        }
        out
    }
}
