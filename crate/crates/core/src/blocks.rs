//! Fixed-size blocks cut from the concatenated token stream. Blocks may start
//! or end in the middle of a sequence; the trailing partial block is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Registry, SeqId};
use crate::rng::{streams, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BlockOrder {
    /// Sequences in the order given (registry order for whole-registry pools).
    ConfigOrder,
    SeededShuffle { seed: u64 },
}

/// A run of tokens inside a block. `source` is `None` for separator tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: Option<SeqId>,
    /// Offset of the first token within the source sequence.
    pub offset: u32,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStream {
    pub block_size: usize,
    tokens: Vec<u32>,
    pub provenance: Vec<Vec<Segment>>,
    pub dropped_tail: usize,
    /// Set when the pool held fewer tokens than one block.
    pub short: bool,
}

impl BlockStream {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn block(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.block_size..(i + 1) * self.block_size]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks_exact(self.block_size.max(1))
    }

    pub fn total_tokens(&self) -> usize {
        self.tokens.len() + self.dropped_tail
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SegmentConfig {
    pub block_size: usize,
    pub order: BlockOrder,
    /// Token inserted after every sequence, if any.
    pub separator: Option<u32>,
}

impl SegmentConfig {
    pub fn new(block_size: usize) -> Self {
        Self {
            block_size,
            order: BlockOrder::ConfigOrder,
            separator: None,
        }
    }
}

/// Segments the given pool of sequences.
pub fn segment(registry: &Registry, pool: &[SeqId], cfg: &SegmentConfig) -> Result<BlockStream> {
    if cfg.block_size == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Precondition("cannot segment an empty pool".into()));
    }
    let mut order: Vec<SeqId> = pool.to_vec();
    if let BlockOrder::SeededShuffle { seed } = cfg.order {
        SplitMix64::for_stream(seed, streams::BLOCK_ORDER, &[cfg.block_size as u64]).shuffle(&mut order);
    }

    let bs = cfg.block_size;
    let mut tokens = Vec::new();
    let mut provenance: Vec<Vec<Segment>> = Vec::new();
    let mut current: Vec<Segment> = Vec::new();
    let mut filled = 0usize;
    let mut push_run = |source: Option<SeqId>, ids: &[u32], tokens: &mut Vec<u32>| {
        let mut off = 0usize;
        while off < ids.len() {
            let take = (bs - filled).min(ids.len() - off);
            tokens.extend_from_slice(&ids[off..off + take]);
            current.push(Segment {
                source,
                offset: off as u32,
                len: take as u32,
            });
            filled += take;
            off += take;
            if filled == bs {
                provenance.push(std::mem::take(&mut current));
                filled = 0;
            }
        }
    };
    for id in &order {
        let seq = registry
            .get(*id)
            .ok_or_else(|| Error::Precondition(format!("pool names missing sequence {}", registry.seq_label(*id))))?;
        push_run(Some(*id), &seq.token_ids, &mut tokens);
        if let Some(sep) = cfg.separator {
            push_run(None, &[sep], &mut tokens);
        }
    }
    let dropped_tail = tokens.len() % bs;
    tokens.truncate(tokens.len() - dropped_tail);
    let short = provenance.is_empty();
    if short {
        log::warn!("pool holds {dropped_tail} tokens, fewer than one block of {bs}");
    }
    Ok(BlockStream {
        block_size: bs,
        tokens,
        provenance,
        dropped_tail,
        short,
    })
}

/// Segments every sequence of the registry in registry order.
pub fn segment_registry(registry: &Registry, cfg: &SegmentConfig) -> Result<BlockStream> {
    segment(registry, &registry.seq_ids(), cfg)
}
