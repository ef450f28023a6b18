//! Deterministic synthetic corpora shaped like a ten-corpus child-directed
//! pretraining mix: spoken corpora have short lines over a small lexicon,
//! written ones longer lines over a larger one.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::registry::{CorpusSpec, Modality, Registry, RegistryConfig};
use crate::rng::{streams, SplitMix64};

pub const DEFAULT_SYNTH_LINES: usize = 50_000;
pub const REGISTRY_FILE: &str = "registry.toml";

struct Profile {
    id: &'static str,
    share: f64,
    min_words: u64,
    max_words: u64,
    lexicon: usize,
}

const PROFILES: [Profile; 10] = [
    Profile { id: "aochildes", share: 0.20, min_words: 2, max_words: 6, lexicon: 300 },
    Profile { id: "bnc_spoken", share: 0.08, min_words: 3, max_words: 10, lexicon: 900 },
    Profile { id: "cbt", share: 0.05, min_words: 6, max_words: 18, lexicon: 1500 },
    Profile { id: "children_stories", share: 0.05, min_words: 5, max_words: 14, lexicon: 1000 },
    Profile { id: "gutenberg", share: 0.05, min_words: 8, max_words: 24, lexicon: 2500 },
    Profile { id: "open_subtitles", share: 0.40, min_words: 2, max_words: 8, lexicon: 700 },
    Profile { id: "qed", share: 0.05, min_words: 4, max_words: 14, lexicon: 1800 },
    Profile { id: "simple_wikipedia", share: 0.05, min_words: 6, max_words: 16, lexicon: 2200 },
    Profile { id: "switchboard", share: 0.04, min_words: 2, max_words: 9, lexicon: 600 },
    Profile { id: "wikipedia", share: 0.03, min_words: 10, max_words: 30, lexicon: 3000 },
];

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "sh", "tr"];
const NUCLEI: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ou", "é"];

fn lexicon(seed: u64, size: usize) -> Vec<String> {
    let mut rng = SplitMix64::for_stream(seed, streams::SYNTH, &[u64::MAX]);
    (0..size)
        .map(|_| {
            let syllables = 1 + rng.below(3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.below(ONSETS.len() as u64) as usize]);
                w.push_str(NUCLEI[rng.below(NUCLEI.len() as u64) as usize]);
            }
            w
        })
        .collect()
}

fn line_counts(total: usize) -> Vec<usize> {
    // Largest remainder, ties to the earlier corpus.
    let exact: Vec<f64> = PROFILES.iter().map(|p| p.share * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// The synthetic corpora as `(corpus_id, lines)` in a fixed order.
pub fn synth_corpora(total_lines: usize, seed: u64) -> Vec<(&'static str, Vec<String>)> {
    let words = lexicon(seed, PROFILES.iter().map(|p| p.lexicon).max().unwrap_or(0));
    PROFILES
        .iter()
        .zip(line_counts(total_lines))
        .enumerate()
        .map(|(ci, (p, n))| {
            let mut rng = SplitMix64::for_stream(seed, streams::SYNTH, &[ci as u64]);
            let lines = (0..n)
                .map(|_| {
                    let len = p.min_words + rng.below(p.max_words - p.min_words + 1);
                    let mut line = String::new();
                    for k in 0..len {
                        if k > 0 {
                            line.push(' ');
                        }
                        // Cubing skews draws toward the head of the lexicon.
                        let u = rng.next_f64();
                        let idx = ((u * u * u) * p.lexicon as f64) as usize;
                        line.push_str(&words[idx.min(p.lexicon - 1)]);
                        if rng.below(40) == 0 {
                            line.push_str(&rng.below(100).to_string());
                        }
                    }
                    line.push(if rng.below(5) == 0 { '?' } else { '.' });
                    line
                })
                .collect();
            (p.id, lines)
        })
        .collect()
}

/// In-memory raw registry over the synthetic corpora.
pub fn synth_registry(total_lines: usize, seed: u64) -> Result<Registry> {
    Registry::from_texts(
        synth_corpora(total_lines, seed)
            .into_iter()
            .map(|(id, lines)| {
                (
                    CorpusSpec {
                        corpus_id: id.to_string(),
                        display_name: None,
                        path: PathBuf::from(format!("{id}.txt")),
                        modality: Modality::default_for(id),
                    },
                    lines,
                )
            })
            .collect(),
    )
}

/// Writes one text file per corpus plus a registry config under `dir` and
/// returns the config path.
pub fn write_synth(dir: &Path, total_lines: usize, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut corpora = Vec::new();
    for (id, lines) in synth_corpora(total_lines, seed) {
        let path = dir.join(format!("{id}.txt"));
        let mut body = lines.join("\n");
        body.push('\n');
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        corpora.push(CorpusSpec {
            corpus_id: id.to_string(),
            display_name: None,
            path: PathBuf::from(format!("{id}.txt")),
            modality: Modality::default_for(id),
        });
    }
    let cfg = RegistryConfig { corpora };
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(REGISTRY_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
