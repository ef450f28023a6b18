//! Corpus ingestion, length filtering, line/token statistics and the
//! three-corpus control composition.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerModel;

/// Sequence length cap for the main pipeline.
pub const DEFAULT_MAX_SEQ_LEN: usize = 128;
/// Sequence length cap for the control composition.
pub const CONTROL_MAX_SEQ_LEN: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Speech, Modality::Text];

    /// Default tag for the BabyLM corpus names; `None` for anything else.
    pub fn default_for(corpus_id: &str) -> Option<Modality> {
        match corpus_id {
            "aochildes" | "bnc_spoken" | "open_subtitles" | "switchboard" | "qed" => Some(Modality::Speech),
            "cbt" | "children_stories" | "gutenberg" | "simple_wikipedia" | "wikipedia" => Some(Modality::Text),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub corpus_id: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub path: PathBuf,
    #[serde(default)]
    pub modality: Option<Modality>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryConfig {
    pub corpora: Vec<CorpusSpec>,
}

impl RegistryConfig {
    /// Reads a JSON or TOML config (chosen by extension). Relative corpus
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RegistryConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut cfg.corpora {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.corpora {
            if c.corpus_id.is_empty() {
                return Err(Error::Config("empty corpus_id".into()));
            }
            if !seen.insert(c.corpus_id.as_str()) {
                return Err(Error::Config(format!("duplicate corpus_id {:?}", c.corpus_id)));
            }
        }
        if self.corpora.is_empty() {
            return Err(Error::Config("registry config lists no corpora".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub corpus_id: String,
    pub display_name: String,
    pub modality: Modality,
    pub path: PathBuf,
    /// Lines read from the file, blank ones included.
    pub raw_line_count: u64,
    /// Lines that survived blank and length filtering.
    pub line_count: u64,
    pub token_count: u64,
    pub excluded_count: u64,
    /// Set when nothing survived filtering.
    pub empty: bool,
}

/// (corpus index in registry order, zero-based line index in the source file)
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeqId {
    pub corpus: u32,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: SeqId,
    pub text: String,
    pub token_ids: Vec<u32>,
}

impl SequenceRecord {
    pub fn token_len(&self) -> usize {
        self.token_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub corpora: Vec<CorpusRecord>,
    /// Per corpus, surviving sequences in line order.
    pub sequences: Vec<Vec<SequenceRecord>>,
    pub max_seq_len: Option<usize>,
    pub vocab_size: Option<usize>,
    pub tokenizer_digest: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryHeader {
    format: String,
    max_seq_len: Option<usize>,
    vocab_size: Option<usize>,
    tokenizer_digest: Option<String>,
    corpora: Vec<CorpusRecord>,
}

#[derive(Serialize, Deserialize)]
struct SeqLine<'a> {
    corpus: u32,
    line: u32,
    #[serde(borrow)]
    text: std::borrow::Cow<'a, str>,
    ids: Vec<u32>,
}

const REGISTRY_FORMAT: &str = "currikit-registry-v1";

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut parts: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if parts.last().is_some_and(|l| l.is_empty()) {
        parts.pop();
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            String::from_utf8(p.to_vec()).map_err(|_| Error::Utf8 {
                path: path.to_path_buf(),
                line: i + 1,
            })
        })
        .collect()
}

impl Registry {
    /// Builds an untokenized registry from in-memory corpora. Blank lines are
    /// dropped and counted as excluded.
    pub fn from_texts(corpora: Vec<(CorpusSpec, Vec<String>)>) -> Result<Self> {
        RegistryConfig {
            corpora: corpora.iter().map(|(s, _)| s.clone()).collect(),
        }
        .validate()?;
        let mut records = Vec::with_capacity(corpora.len());
        let mut sequences = Vec::with_capacity(corpora.len());
        for (ci, (spec, lines)) in corpora.into_iter().enumerate() {
            let modality = match spec.modality.or_else(|| Modality::default_for(&spec.corpus_id)) {
                Some(m) => m,
                None => {
                    return Err(Error::Config(format!(
                        "corpus {:?} needs an explicit modality",
                        spec.corpus_id
                    )))
                }
            };
            let raw = lines.len() as u64;
            let seqs: Vec<SequenceRecord> = lines
                .into_iter()
                .enumerate()
                .filter(|(_, t)| !t.trim().is_empty())
                .map(|(li, text)| SequenceRecord {
                    id: SeqId {
                        corpus: ci as u32,
                        line: li as u32,
                    },
                    text,
                    token_ids: Vec::new(),
                })
                .collect();
            records.push(CorpusRecord {
                display_name: spec.display_name.clone().unwrap_or_else(|| spec.corpus_id.clone()),
                corpus_id: spec.corpus_id,
                modality,
                path: spec.path,
                raw_line_count: raw,
                line_count: seqs.len() as u64,
                token_count: 0,
                excluded_count: raw - seqs.len() as u64,
                empty: seqs.is_empty(),
            });
            sequences.push(seqs);
        }
        Ok(Self {
            corpora: records,
            sequences,
            max_seq_len: None,
            vocab_size: None,
            tokenizer_digest: None,
        })
    }

    /// Reads every corpus (in parallel) without tokenizing.
    pub fn load_raw(config: &RegistryConfig) -> Result<Self> {
        config.validate()?;
        let texts = config
            .corpora
            .par_iter()
            .map(|spec| read_lines(&spec.path).map(|lines| (spec.clone(), lines)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_texts(texts)
    }

    /// Tokenizes every surviving line and drops (never truncates) lines longer
    /// than `max_seq_len`.
    pub fn tokenize(&mut self, tokenizer: &TokenizerModel, max_seq_len: usize) -> Result<()> {
        if max_seq_len < 2 {
            return Err(Error::Config(format!("max_seq_len must be at least 2, got {max_seq_len}")));
        }
        if self.max_seq_len.is_some() {
            return Err(Error::Precondition("registry is already tokenized".into()));
        }
        for (record, seqs) in self.corpora.iter_mut().zip(self.sequences.iter_mut()) {
            let texts: Vec<&str> = seqs.iter().map(|s| s.text.as_str()).collect();
            let encoded = tokenizer.encode_batch(&texts);
            let before = seqs.len();
            let kept: Vec<SequenceRecord> = std::mem::take(seqs)
                .into_iter()
                .zip(encoded)
                .filter(|(_, ids)| !ids.is_empty() && ids.len() <= max_seq_len)
                .map(|(mut s, ids)| {
                    s.token_ids = ids;
                    s
                })
                .collect();
            record.excluded_count += (before - kept.len()) as u64;
            record.line_count = kept.len() as u64;
            record.token_count = kept.iter().map(|s| s.token_len() as u64).sum();
            record.empty = kept.is_empty();
            if record.empty {
                log::warn!("corpus {} is empty after filtering", record.corpus_id);
            }
            *seqs = kept;
        }
        self.max_seq_len = Some(max_seq_len);
        self.vocab_size = Some(tokenizer.vocab_size());
        self.tokenizer_digest = Some(tokenizer.digest());
        Ok(())
    }

    pub fn is_tokenized(&self) -> bool {
        self.max_seq_len.is_some()
    }

    pub fn require_tokenized(&self) -> Result<()> {
        if self.is_tokenized() {
            Ok(())
        } else {
            Err(Error::Precondition("registry has not been tokenized".into()))
        }
    }

    pub fn corpus_index(&self, corpus_id: &str) -> Option<usize> {
        self.corpora.iter().position(|c| c.corpus_id == corpus_id)
    }

    /// Every surviving sequence in (corpus config order, line index) order.
    pub fn iter(&self) -> impl Iterator<Item = &SequenceRecord> {
        self.sequences.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: SeqId) -> Option<&SequenceRecord> {
        let seqs = self.sequences.get(id.corpus as usize)?;
        seqs.binary_search_by_key(&id.line, |s| s.id.line).ok().map(|i| &seqs[i])
    }

    pub fn seq_ids(&self) -> Vec<SeqId> {
        self.iter().map(|s| s.id).collect()
    }

    pub fn seq_label(&self, id: SeqId) -> String {
        format!("{}:{}", self.corpora[id.corpus as usize].corpus_id, id.line)
    }

    pub fn stats(&self) -> Result<RegistryStats> {
        self.require_tokenized()?;
        RegistryStats::from_corpora(&self.corpora)
    }

    /// Writes `registry.json` and `sequences.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = RegistryHeader {
            format: REGISTRY_FORMAT.into(),
            max_seq_len: self.max_seq_len,
            vocab_size: self.vocab_size,
            tokenizer_digest: self.tokenizer_digest.clone(),
            corpora: self.corpora.clone(),
        };
        let hp = dir.join("registry.json");
        fs::write(&hp, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&hp, e))?;
        let sp = dir.join("sequences.jsonl");
        let file = fs::File::create(&sp).map_err(|e| Error::io(&sp, e))?;
        let mut w = BufWriter::new(file);
        for s in self.iter() {
            let line = SeqLine {
                corpus: s.id.corpus,
                line: s.id.line,
                text: std::borrow::Cow::Borrowed(&s.text),
                ids: s.token_ids.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(&sp, e))?;
        }
        w.flush().map_err(|e| Error::io(&sp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hp = dir.join("registry.json");
        let header: RegistryHeader =
            serde_json::from_str(&fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?)?;
        if header.format != REGISTRY_FORMAT {
            return Err(Error::format(format!("unknown registry format {:?}", header.format), 0));
        }
        let mut sequences: Vec<Vec<SequenceRecord>> = vec![Vec::new(); header.corpora.len()];
        let sp = dir.join("sequences.jsonl");
        let file = fs::File::open(&sp).map_err(|e| Error::io(&sp, e))?;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&sp, e))?;
            let s: SeqLine = serde_json::from_str(&line)?;
            let slot = sequences
                .get_mut(s.corpus as usize)
                .ok_or_else(|| Error::format(format!("sequence references corpus {}", s.corpus), 0))?;
            slot.push(SequenceRecord {
                id: SeqId {
                    corpus: s.corpus,
                    line: s.line,
                },
                text: s.text.into_owned(),
                token_ids: s.ids,
            });
        }
        Ok(Self {
            corpora: header.corpora,
            sequences,
            max_seq_len: header.max_seq_len,
            vocab_size: header.vocab_size,
            tokenizer_digest: header.tokenizer_digest,
        })
    }
}

/// Reads, tokenizes and length-filters every corpus in `config`.
pub fn ingest(config: &RegistryConfig, max_seq_len: usize, tokenizer: &TokenizerModel) -> Result<Registry> {
    let mut registry = Registry::load_raw(config)?;
    registry.tokenize(tokenizer, max_seq_len)?;
    Ok(registry)
}

/// Registry of AO-Childes (speech), CBT (text) and Wikipedia (text).
pub fn compose_control(
    aochildes: &Path,
    cbt: &Path,
    wikipedia: &Path,
    tokenizer: &TokenizerModel,
    max_seq_len: usize,
) -> Result<Registry> {
    let spec = |id: &str, name: &str, path: &Path, m| CorpusSpec {
        corpus_id: id.into(),
        display_name: Some(name.into()),
        path: path.to_path_buf(),
        modality: Some(m),
    };
    let config = RegistryConfig {
        corpora: vec![
            spec("aochildes", "AO-Childes", aochildes, Modality::Speech),
            spec("cbt", "CBT", cbt, Modality::Text),
            spec("wikipedia", "Wikipedia", wikipedia, Modality::Text),
        ],
    };
    let registry = ingest(&config, max_seq_len, tokenizer)?;
    log::info!("control registry composed:\n{}", registry.stats()?.table());
    Ok(registry)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub name: String,
    pub lines: u64,
    pub tokens: u64,
    pub line_fraction: f64,
    pub token_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryStats {
    pub total_lines: u64,
    pub total_tokens: u64,
    pub corpora: Vec<Share>,
    pub modalities: Vec<Share>,
}

impl RegistryStats {
    pub fn from_corpora(corpora: &[CorpusRecord]) -> Result<Self> {
        let total_lines: u64 = corpora.iter().map(|c| c.line_count).sum();
        let total_tokens: u64 = corpora.iter().map(|c| c.token_count).sum();
        if total_lines == 0 || total_tokens == 0 {
            return Err(Error::Precondition("registry holds no tokenized sequences".into()));
        }
        let share = |name: String, lines: u64, tokens: u64| Share {
            name,
            lines,
            tokens,
            line_fraction: lines as f64 / total_lines as f64,
            token_fraction: tokens as f64 / total_tokens as f64,
        };
        let per_corpus = corpora
            .iter()
            .map(|c| share(c.corpus_id.clone(), c.line_count, c.token_count))
            .collect();
        let modalities = Modality::ALL
            .iter()
            .filter(|m| corpora.iter().any(|c| c.modality == **m))
            .map(|&m| {
                let (l, t) = corpora
                    .iter()
                    .filter(|c| c.modality == m)
                    .fold((0, 0), |(l, t), c| (l + c.line_count, t + c.token_count));
                share(m.to_string(), l, t)
            })
            .collect();
        Ok(Self {
            total_lines,
            total_tokens,
            corpora: per_corpus,
            modalities,
        })
    }

    pub fn corpus(&self, name: &str) -> Option<&Share> {
        self.corpora.iter().find(|s| s.name == name)
    }

    pub fn modality(&self, m: Modality) -> Option<&Share> {
        self.modalities.iter().find(|s| s.name == m.as_str())
    }

    /// Aligned text table, corpora first then modality totals.
    pub fn table(&self) -> String {
        let rows: Vec<&Share> = self.corpora.iter().chain(self.modalities.iter()).collect();
        let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(6);
        let mut out = format!(
            "{:<w$}  {:>12}  {:>8}  {:>14}  {:>8}\n",
            "corpus", "lines", "line%", "tokens", "token%"
        );
        for (i, r) in rows.iter().enumerate() {
            if i == self.corpora.len() {
                out.push_str(&"-".repeat(w + 52));
                out.push('\n');
            }
            out.push_str(&format!(
                "{:<w$}  {:>12}  {:>7.2}%  {:>14}  {:>7.2}%\n",
                r.name,
                r.lines,
                100.0 * r.line_fraction,
                r.tokens,
                100.0 * r.token_fraction
            ));
        }
        out.push_str(&format!(
            "{:<w$}  {:>12}  {:>8}  {:>14}\n",
            "total", self.total_lines, "", self.total_tokens
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str, m: Modality) -> CorpusSpec {
        CorpusSpec {
            corpus_id: id.into(),
            display_name: None,
            path: PathBuf::from(format!("{id}.txt")),
            modality: Some(m),
        }
    }

    fn lines(n: usize, word: &str) -> Vec<String> {
        (0..n).map(|i| format!("{word} {i}")).collect()
    }

    #[test]
    fn long_lines_are_excluded_not_truncated() {
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let texts = vec!["a".repeat(5), "b".repeat(130), "c".repeat(7)];
        let mut reg = Registry::from_texts(vec![(spec("x", Modality::Text), texts)]).unwrap();
        reg.tokenize(&tok, 128).unwrap();
        assert_eq!(reg.len(), 2);
        let rec = &reg.corpora[0];
        assert_eq!((rec.line_count, rec.excluded_count, rec.raw_line_count), (2, 1, 3));
        assert_eq!(reg.iter().map(|s| s.token_len()).collect::<Vec<_>>(), vec![5, 7]);
        assert_eq!(reg.iter().map(|s| s.id.line).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn blank_lines_count_as_excluded() {
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let texts = vec!["one".into(), "".into(), "   ".into(), "two".into()];
        let mut reg = Registry::from_texts(vec![(spec("x", Modality::Text), texts)]).unwrap();
        reg.tokenize(&tok, 128).unwrap();
        assert_eq!(reg.corpora[0].excluded_count, 2);
        assert_eq!(reg.corpora[0].line_count, 2);
    }

    #[test]
    fn empty_corpus_is_flagged_not_failed() {
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let mut reg = Registry::from_texts(vec![
            (spec("a", Modality::Speech), vec![]),
            (spec("b", Modality::Text), lines(3, "x")),
        ])
        .unwrap();
        reg.tokenize(&tok, 128).unwrap();
        assert!(reg.corpora[0].empty);
        assert_eq!(reg.corpora[0].line_count, 0);
        assert!(!reg.corpora[1].empty);
    }

    #[test]
    fn stats_exact_fractions() {
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let mut reg = Registry::from_texts(vec![
            (spec("s", Modality::Speech), vec!["ab".to_string(); 6000]),
            (spec("t", Modality::Text), vec!["cd".to_string(); 4000]),
        ])
        .unwrap();
        assert!(matches!(reg.stats(), Err(Error::Precondition(_))));
        reg.tokenize(&tok, 128).unwrap();
        let st = reg.stats().unwrap();
        assert_eq!(st.corpus("s").unwrap().line_fraction, 0.6);
        assert_eq!(st.corpus("t").unwrap().line_fraction, 0.4);
        assert_eq!(st.modality(Modality::Speech).unwrap().token_fraction, 0.6);
        assert!(st.table().contains("60.00%"));
    }

    #[test]
    fn single_corpus_is_identity() {
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let mut reg = Registry::from_texts(vec![(spec("only", Modality::Text), lines(10, "w"))]).unwrap();
        reg.tokenize(&tok, 128).unwrap();
        let st = reg.stats().unwrap();
        assert_eq!(st.corpora[0].line_fraction, 1.0);
        assert_eq!(st.corpora[0].token_fraction, 1.0);
        assert_eq!(st.modalities.len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = Registry::from_texts(vec![
            (spec("a", Modality::Text), lines(1, "x")),
            (spec("a", Modality::Text), lines(1, "y")),
        ]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn default_modalities() {
        assert_eq!(Modality::default_for("qed"), Some(Modality::Speech));
        assert_eq!(Modality::default_for("gutenberg"), Some(Modality::Text));
        assert_eq!(Modality::default_for("mystery"), None);
    }

    #[test]
    fn files_round_trip_and_utf8_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.txt");
        fs::write(&good, "first line\n\nthird line\n").unwrap();
        let bad = dir.path().join("bad.txt");
        fs::write(&bad, b"ok\n\xff\xfe\n").unwrap();
        let cfg_path = dir.path().join("reg.toml");
        fs::write(&cfg_path, "[[corpora]]\ncorpus_id = \"cbt\"\npath = \"good.txt\"\n").unwrap();
        let cfg = RegistryConfig::load(&cfg_path).unwrap();
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let reg = ingest(&cfg, 128, &tok).unwrap();
        assert_eq!(reg.corpora[0].modality, Modality::Text);
        assert_eq!(reg.corpora[0].raw_line_count, 3);
        assert_eq!(reg.len(), 2);

        let out = dir.path().join("reg");
        reg.save(&out).unwrap();
        assert_eq!(Registry::load(&out).unwrap(), reg);

        let bad_cfg = RegistryConfig {
            corpora: vec![CorpusSpec {
                corpus_id: "b".into(),
                display_name: None,
                path: bad.clone(),
                modality: Some(Modality::Text),
            }],
        };
        match Registry::load_raw(&bad_cfg) {
            Err(Error::Utf8 { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected utf8 error, got {other:?}"),
        }
        let missing = RegistryConfig {
            corpora: vec![CorpusSpec {
                corpus_id: "m".into(),
                display_name: None,
                path: dir.path().join("nope.txt"),
                modality: Some(Modality::Text),
            }],
        };
        let err = Registry::load_raw(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.txt"));
    }

    #[test]
    fn control_composition_symmetry() {
        let dir = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for name in ["a", "c", "w"] {
            let p = dir.path().join(format!("{name}.txt"));
            fs::write(&p, "abcd\n".repeat(100)).unwrap();
            paths.push(p);
        }
        let tok = crate::tokenizer::TokenizerModel::byte_level();
        let reg = compose_control(&paths[0], &paths[1], &paths[2], &tok, CONTROL_MAX_SEQ_LEN).unwrap();
        let st = reg.stats().unwrap();
        let mods: Vec<Modality> = reg.corpora.iter().map(|c| c.modality).collect();
        assert_eq!(mods, vec![Modality::Speech, Modality::Text, Modality::Text]);
        for s in &st.corpora {
            assert!((s.line_fraction - 1.0 / 3.0).abs() < 1e-12);
            assert!((s.token_fraction - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(reg.max_seq_len, Some(512));
    }
}
