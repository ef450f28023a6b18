//! Byte-level BPE tokenizer and the MLE unigram model fitted over its output.
//!
//! Id layout is fixed: the five special tokens come first, then the 256 raw
//! bytes in byte order, then one id per learned merge whose byte string was
//! not already in the vocabulary.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::rc::Rc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<mask>"];
pub const BYTE_ALPHABET: usize = 256;
const FIRST_BYTE_ID: u32 = SPECIAL_TOKENS.len() as u32;

pub const DEFAULT_VOCAB_SIZE: usize = 30_000;
/// Smallest vocabulary that can hold the specials and the byte alphabet.
pub const MIN_VOCAB_SIZE: usize = SPECIAL_TOKENS.len() + BYTE_ALPHABET;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub bos: u32,
    pub eos: u32,
    pub mask: u32,
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self {
            pad: 0,
            unk: 1,
            bos: 2,
            eos: 3,
            mask: 4,
        }
    }
}

impl SpecialIds {
    pub fn contains(&self, id: u32) -> bool {
        id < FIRST_BYTE_ID
    }
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    vocab_size: usize,
    tokens: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    specials: SpecialIds,
    // pair -> (rank, merged id)
    ranks: HashMap<(u32, u32), (u32, u32)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    vocab_size: usize,
    byte_alphabet: usize,
    special_tokens: Vec<String>,
    specials: SpecialIds,
    merges: usize,
}

const HEADER_FORMAT: &str = "currikit-bpe-v1";

impl TokenizerModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// A tokenizer with no merges: every byte is its own token.
    pub fn byte_level() -> Self {
        Self::from_merges(Vec::new()).expect("byte-level model is always valid")
    }

    fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.as_bytes().to_vec())
            .collect();
        tokens.extend((0..=255u8).map(|b| vec![b]));
        let mut by_bytes: HashMap<Vec<u8>, u32> = tokens[FIRST_BYTE_ID as usize..]
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + FIRST_BYTE_ID))
            .collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let n = tokens.len() as u32;
            if a < FIRST_BYTE_ID || b < FIRST_BYTE_ID || a >= n || b >= n {
                return Err(Error::format(format!("merge {rank} references unknown id"), 0));
            }
            let mut joined = tokens[a as usize].clone();
            joined.extend_from_slice(&tokens[b as usize]);
            let id = match by_bytes.get(&joined) {
                Some(&id) => id,
                None => {
                    by_bytes.insert(joined.clone(), n);
                    tokens.push(joined);
                    n
                }
            };
            if ranks.insert((a, b), (rank as u32, id)).is_some() {
                return Err(Error::format(format!("duplicate merge at rank {rank}"), 0));
            }
        }
        Ok(Self {
            vocab_size: tokens.len(),
            tokens,
            merges,
            specials: SpecialIds::default(),
            ranks,
        })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for chunk in split_chunks(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Encode many lines in parallel; output order follows input order.
    pub fn encode_batch<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Vec<Vec<u32>> {
        texts
            .par_iter()
            .map_init(HashMap::<String, Vec<u32>>::new, |cache, t| {
                let mut out = Vec::new();
                for chunk in split_chunks(t.as_ref()) {
                    match cache.get(chunk) {
                        Some(ids) => out.extend_from_slice(ids),
                        None => {
                            let mut ids = Vec::new();
                            self.encode_chunk(chunk, &mut ids);
                            out.extend_from_slice(&ids);
                            cache.insert(chunk.to_owned(), ids);
                        }
                    }
                }
                out
            })
            .collect()
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = chunk.bytes().map(|b| b as u32 + FIRST_BYTE_ID).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| ((w[0], w[1]), r)))
                .min_by_key(|&(_, (rank, _))| rank);
            let Some((pair, (_, id))) = best else { break };
            syms = merge_pair(&syms, pair, id);
        }
        out.extend_from_slice(&syms);
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let t = self.tokens.get(id as usize).ok_or(Error::Range {
                id,
                vocab_size: self.vocab_size,
            })?;
            out.extend_from_slice(t);
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode). Special ids decode to their literal
    /// names; byte sequences that are not UTF-8 are replaced lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    fn header(&self) -> Header {
        Header {
            format: HEADER_FORMAT.to_owned(),
            vocab_size: self.vocab_size,
            byte_alphabet: BYTE_ALPHABET,
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            specials: self.specials,
            merges: self.merges.len(),
        }
    }

    fn serialized(&self) -> (String, String, String) {
        let table = byte_to_unicode();
        let show = |id: u32| -> String {
            if self.specials.contains(id) {
                SPECIAL_TOKENS[id as usize].to_owned()
            } else {
                self.tokens[id as usize].iter().map(|&b| table[b as usize]).collect()
            }
        };
        let header = serde_json::to_string_pretty(&self.header()).expect("header serializes") + "\n";
        let mut vocab = String::new();
        for id in 0..self.vocab_size as u32 {
            vocab.push_str(&format!("{id}\t{}\n", show(id)));
        }
        let mut merges = String::new();
        for &(a, b) in &self.merges {
            merges.push_str(&format!("{} {}\n", show(a), show(b)));
        }
        (header, vocab, merges)
    }

    /// SHA-256 over the serialized header, vocab and merges.
    pub fn digest(&self) -> String {
        let (h, v, m) = self.serialized();
        let mut hasher = Sha256::new();
        hasher.update(h.as_bytes());
        hasher.update(v.as_bytes());
        hasher.update(m.as_bytes());
        hex::encode(hasher.finalize())
    }

    /// Writes `tokenizer.json`, `vocab.txt` and `merges.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (h, v, m) = self.serialized();
        for (name, body) in [("tokenizer.json", h), ("vocab.txt", v), ("merges.txt", m)] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let header: Header = serde_json::from_str(&read("tokenizer.json")?)?;
        if header.format != HEADER_FORMAT {
            return Err(Error::format(format!("unknown tokenizer format {:?}", header.format), 0));
        }
        let table = byte_to_unicode();
        let inverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        let mut by_bytes: HashMap<Vec<u8>, u32> = HashMap::new();
        for b in 0..=255u8 {
            by_bytes.insert(vec![b], b as u32 + FIRST_BYTE_ID);
        }
        let unmap = |s: &str| -> Result<Vec<u8>> {
            s.chars()
                .map(|c| inverse.get(&c).copied())
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| Error::format(format!("bad symbol {s:?} in merges.txt"), 0))
        };
        let mut merges = Vec::with_capacity(header.merges);
        for (n, line) in read("merges.txt")?.lines().enumerate() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::format(format!("merges.txt line {}: expected a pair", n + 1), 0))?;
            let (lb, rb) = (unmap(l)?, unmap(r)?);
            let look = |b: &Vec<u8>| {
                by_bytes
                    .get(b)
                    .copied()
                    .ok_or_else(|| Error::format(format!("merges.txt line {}: unknown symbol", n + 1), 0))
            };
            let pair = (look(&lb)?, look(&rb)?);
            let mut joined = lb;
            joined.extend_from_slice(&rb);
            let next = (by_bytes.len() as u32) + FIRST_BYTE_ID;
            by_bytes.entry(joined).or_insert(next);
            merges.push(pair);
        }
        let model = Self::from_merges(merges)?;
        if model.vocab_size != header.vocab_size {
            return Err(Error::format(
                format!(
                    "header declares {} tokens but merges rebuild {}",
                    header.vocab_size, model.vocab_size
                ),
                0,
            ));
        }
        let vocab_lines = read("vocab.txt")?.lines().count();
        if vocab_lines != model.vocab_size {
            return Err(Error::format(
                format!("vocab.txt has {vocab_lines} entries, expected {}", model.vocab_size),
                0,
            ));
        }
        Ok(model)
    }
}

fn merge_pair(syms: &[u32], pair: (u32, u32), id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[derive(PartialEq, Eq, Clone, Copy)]
enum CharClass {
    Space,
    Letter,
    Digit,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Other
    }
}

/// Lossless pre-tokenization: a chunk is an optional single leading space
/// followed by a run of letters, digits or other symbols; any remaining
/// whitespace forms its own chunk. Concatenating the chunks gives back `text`.
pub fn split_chunks(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let start = k;
        if classify(chars[k].1) == CharClass::Space {
            let mut j = k;
            while j < chars.len() && classify(chars[j].1) == CharClass::Space {
                j += 1;
            }
            if j < chars.len() && chars[j - 1].1 == ' ' {
                if j - 1 > start {
                    out.push(&text[end_of(start)..end_of(j - 1)]);
                }
                k = j;
                let class = classify(chars[k].1);
                while k < chars.len() && classify(chars[k].1) == class {
                    k += 1;
                }
                out.push(&text[end_of(j - 1)..end_of(k)]);
            } else {
                out.push(&text[end_of(start)..end_of(j)]);
                k = j;
            }
        } else {
            let class = classify(chars[k].1);
            while k < chars.len() && classify(chars[k].1) == class {
                k += 1;
            }
            out.push(&text[end_of(start)..end_of(k)]);
        }
    }
    out
}

/// The printable byte mapping popularised by GPT-2, used for the text files.
fn byte_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
    let mut extra = 0;
    for b in 0..256u32 {
        table[b as usize] = if printable(b) {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BpeConfig {
    pub vocab_size: usize,
}

impl Default for BpeConfig {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

struct HeapEntry {
    count: i64,
    key: (Rc<[u8]>, Rc<[u8]>),
    pair: (u32, u32),
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // highest count first; among equal counts the lexicographically smallest pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Train a byte-level BPE model with exactly `cfg.vocab_size` entries.
pub fn train_bpe<'a, I>(lines: I, cfg: &BpeConfig) -> Result<TokenizerModel>
where
    I: IntoIterator<Item = &'a str>,
{
    if cfg.vocab_size < MIN_VOCAB_SIZE {
        return Err(Error::Config(format!(
            "vocab size {} is below the {} byte and special tokens",
            cfg.vocab_size, MIN_VOCAB_SIZE
        )));
    }
    let mut chunk_counts: HashMap<&str, u64> = HashMap::new();
    let mut any = false;
    for line in lines {
        any = true;
        for chunk in split_chunks(line) {
            *chunk_counts.entry(chunk).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::Precondition("cannot train a tokenizer on an empty corpus".into()));
    }
    let mut chunks: Vec<(&str, u64)> = chunk_counts.into_iter().collect();
    chunks.sort_unstable();

    let mut words: Vec<Vec<u32>> = chunks
        .iter()
        .map(|(c, _)| c.bytes().map(|b| b as u32 + FIRST_BYTE_ID).collect())
        .collect();
    let freq: Vec<i64> = chunks.iter().map(|&(_, n)| n as i64).collect();

    let mut tokens: Vec<Rc<[u8]>> = SPECIAL_TOKENS.iter().map(|s| Rc::from(s.as_bytes())).collect();
    tokens.extend((0..=255u8).map(|b| Rc::from(&[b][..])));
    let mut by_bytes: HashMap<Rc<[u8]>, u32> = tokens[FIRST_BYTE_ID as usize..]
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32 + FIRST_BYTE_ID))
        .collect();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (w, syms) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_insert(0) += freq[w];
            where_.entry(pair).or_default().insert(w);
        }
    }
    let entry = |pair: (u32, u32), count: i64, tokens: &[Rc<[u8]>]| HeapEntry {
        count,
        key: (tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone()),
        pair,
    };
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&pair, &c)| entry(pair, c, &tokens))
        .collect();

    let mut merges = Vec::new();
    while tokens.len() < cfg.vocab_size {
        let Some(top) = heap.pop() else {
            return Err(Error::Config(format!(
                "corpus supports only {} tokens, cannot reach vocab size {}",
                tokens.len(),
                cfg.vocab_size
            )));
        };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            if current > 0 {
                heap.push(entry(top.pair, current, &tokens));
            }
            continue;
        }
        if current <= 0 {
            continue;
        }
        let (a, b) = top.pair;
        let mut joined = tokens[a as usize].to_vec();
        joined.extend_from_slice(&tokens[b as usize]);
        let joined: Rc<[u8]> = Rc::from(joined);
        let id = match by_bytes.get(&joined) {
            Some(&id) => id,
            None => {
                let id = tokens.len() as u32;
                by_bytes.insert(joined.clone(), id);
                tokens.push(joined);
                id
            }
        };
        merges.push(top.pair);

        let mut affected: Vec<usize> = where_.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for w in affected {
            let merged = merge_pair(&words[w], top.pair, id);
            if merged.len() == words[w].len() {
                continue;
            }
            for p in words[w].windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.get_mut(&pair).expect("pair was counted") -= freq[w];
                touched.insert(pair);
            }
            for p in merged.windows(2) {
                let pair = (p[0], p[1]);
                *pair_counts.entry(pair).or_insert(0) += freq[w];
                where_.entry(pair).or_default().insert(w);
                touched.insert(pair);
            }
            words[w] = merged;
        }
        pair_counts.remove(&top.pair);
        for pair in touched {
            if let Some(&c) = pair_counts.get(&pair) {
                if c > 0 {
                    heap.push(entry(pair, c, &tokens));
                }
            }
        }
    }
    let model = TokenizerModel::from_merges(merges)?;
    debug_assert_eq!(model.vocab_size, cfg.vocab_size);
    Ok(model)
}

/// Maximum-likelihood unigram distribution over token ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramModel {
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
    pub total: u64,
    pub smoothed: bool,
}

impl UnigramModel {
    /// Exact relative frequencies over the given token sequences.
    pub fn fit<'a, I>(sequences: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut counts = vec![0u64; vocab_size];
        for seq in sequences {
            for &t in seq {
                let slot = counts.get_mut(t as usize).ok_or(Error::Range { id: t, vocab_size })?;
                *slot += 1;
            }
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Precondition("cannot fit a unigram model on an empty registry".into()));
        }
        let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            counts,
            probs,
            total,
            smoothed: false,
        })
    }

    /// Add-one smoothed copy, for scoring text outside the fitted registry.
    pub fn add_one(&self) -> Self {
        let denom = (self.total + self.counts.len() as u64) as f64;
        Self {
            counts: self.counts.clone(),
            probs: self.counts.iter().map(|&c| (c + 1) as f64 / denom).collect(),
            total: self.total,
            smoothed: true,
        }
    }

    pub fn prob(&self, id: u32) -> f64 {
        self.probs.get(id as usize).copied().unwrap_or(0.0)
    }
}
