//! Dynamic masking for masked-LM examples. By default every selected
//! position becomes the mask token; the 80/10/10 replacement scheme exists
//! only as an ablation switch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SplitMix64};

/// Label value for positions that carry no loss.
pub const IGNORE_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Selected positions always become the mask token.
    #[default]
    MaskOnly,
    /// 80% mask, 10% random token, 10% unchanged.
    Standard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskConfig {
    pub mask_prob: f64,
    pub seed: u64,
    pub policy: MaskPolicy,
    pub mask_id: u32,
    pub vocab_size: u32,
    /// Lowest id eligible as a random replacement under [`MaskPolicy::Standard`].
    pub first_regular_id: u32,
    pub max_redraws: u32,
}

impl MaskConfig {
    pub fn new(seed: u64, mask_id: u32, vocab_size: u32) -> Self {
        Self {
            mask_prob: 0.15,
            seed,
            policy: MaskPolicy::MaskOnly,
            mask_id,
            vocab_size,
            first_regular_id: 5,
            max_redraws: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask_prob must lie in (0, 1), got {}", self.mask_prob)));
        }
        if self.mask_id >= self.vocab_size || self.first_regular_id >= self.vocab_size {
            return Err(Error::Config("mask settings fall outside the vocabulary".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    pub input_ids: Vec<u32>,
    pub labels: Vec<u32>,
    pub attention_len: usize,
}

impl MaskedExample {
    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(|(_, &l)| l != IGNORE_LABEL).map(|(i, _)| i)
    }
}

/// Masks one input. The draw is keyed on `(seed, step, example_key)` so a
/// revisit at a later step gets a fresh selection.
///
/// Every example gets at least one selected position, and inputs of two or
/// more tokens keep at least one unselected position: draws violating that
/// are redrawn up to `max_redraws` times, after which exactly one uniformly
/// chosen position is selected.
pub fn mask_example(ids: &[u32], example_key: u64, step: u64, cfg: &MaskConfig) -> Result<MaskedExample> {
    if ids.is_empty() {
        return Err(Error::Precondition("cannot mask an empty input".into()));
    }
    let mut rng = SplitMix64::for_stream(cfg.seed, streams::MASKING, &[step, example_key]);
    let n = ids.len();
    let ok = |k: usize| k >= 1 && (n == 1 || k < n);
    let mut selected = vec![false; n];
    let mut done = false;
    for _ in 0..=cfg.max_redraws {
        let mut k = 0;
        for s in selected.iter_mut() {
            *s = rng.next_f64() < cfg.mask_prob;
            k += *s as usize;
        }
        if ok(k) {
            done = true;
            break;
        }
    }
    if !done {
        selected.iter_mut().for_each(|s| *s = false);
        selected[rng.below(n as u64) as usize] = true;
    }

    let mut input_ids = ids.to_vec();
    let mut labels = vec![IGNORE_LABEL; n];
    for (i, _) in selected.iter().enumerate().filter(|(_, &s)| s) {
        labels[i] = ids[i];
        input_ids[i] = match cfg.policy {
            MaskPolicy::MaskOnly => cfg.mask_id,
            MaskPolicy::Standard => {
                let r = rng.next_f64();
                if r < 0.8 {
                    cfg.mask_id
                } else if r < 0.9 {
                    cfg.first_regular_id + rng.below((cfg.vocab_size - cfg.first_regular_id) as u64) as u32
                } else {
                    ids[i]
                }
            }
        };
    }
    Ok(MaskedExample {
        input_ids,
        labels,
        attention_len: n,
    })
}

/// Masks a batch; `keys[i]` identifies input `i` across visits.
pub fn mask_batch(inputs: &[&[u32]], keys: &[u64], step: u64, cfg: &MaskConfig) -> Result<Vec<MaskedExample>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Precondition("cannot mask an empty batch".into()));
    }
    if keys.len() != inputs.len() {
        return Err(Error::Precondition("one example key per input is required".into()));
    }
    inputs
        .iter()
        .zip(keys)
        .map(|(ids, &k)| mask_example(ids, k, step, cfg))
        .collect()
}
