//! Step-by-step batch schedules and per-corpus exposure accounting.
//!
//! Within a stage, inputs are drawn by walking a sequence of seeded
//! permutations of the stage's effective pool, one permutation per epoch.
//! Batches are consecutive windows of that walk, so a batch may straddle two
//! epochs. Permutation `e` of stage `s` is Fisher–Yates over `0..n` driven by
//! `SplitMix64::for_stream(seed, "schedule", [s, e])`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{segment, BlockOrder, BlockStream, SegmentConfig};
use crate::curriculum::{CurriculumKind, CurriculumPlan, Pool};
use crate::error::{Error, Result};
use crate::registry::{Modality, Registry, SeqId};
use crate::rng::{streams, SplitMix64};

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const CONTROL_BATCH_SIZE: usize = 64;

/// The inputs a stage draws from.
#[derive(Debug, Clone, PartialEq)]
pub enum StageInputs {
    Sequences(Vec<SeqId>),
    Blocks(BlockStream),
}

impl StageInputs {
    pub fn len(&self) -> usize {
        match self {
            StageInputs::Sequences(v) => v.len(),
            StageInputs::Blocks(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn unit(&self) -> &'static str {
        match self {
            StageInputs::Sequences(_) => "sequence",
            StageInputs::Blocks(_) => "block",
        }
    }

    /// Token ids of pool member `i`.
    pub fn tokens<'a>(&'a self, registry: &'a Registry, i: usize) -> &'a [u32] {
        match self {
            StageInputs::Sequences(v) => &registry.get(v[i]).expect("pool member is registered").token_ids,
            StageInputs::Blocks(b) => b.block(i),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSchedule {
    pub plan_id: String,
    pub kind: CurriculumKind,
    pub batch_size: usize,
    pub seed: u64,
    pub budgets: Vec<u64>,
    /// Effective (post-composition) pool of each stage, in draw order.
    pub stages: Vec<StageInputs>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub step: u64,
    /// 1-based.
    pub stage: usize,
    /// Indices into the stage's effective pool.
    pub members: Vec<u32>,
}

/// Builds the schedule for `plan`. Block stages are segmented from the whole
/// registry in registry order.
pub fn plan_schedule(plan: &CurriculumPlan, registry: &Registry, batch_size: usize, seed: u64) -> Result<TrainingSchedule> {
    plan_schedule_with(plan, registry, batch_size, seed, BlockOrder::ConfigOrder, None)
}

pub fn plan_schedule_with(
    plan: &CurriculumPlan,
    registry: &Registry,
    batch_size: usize,
    seed: u64,
    block_order: BlockOrder,
    separator: Option<u32>,
) -> Result<TrainingSchedule> {
    plan.validate()?;
    registry.require_tokenized()?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let registered: Vec<&str> = registry.corpora.iter().map(|c| c.corpus_id.as_str()).collect();
    if !plan.corpora.is_empty() && plan.corpora != registered {
        return Err(Error::Config(format!(
            "plan {} was built for corpora {:?}, registry has {:?}",
            plan.plan_id, plan.corpora, registered
        )));
    }
    let mut stages = Vec::with_capacity(plan.stages.len());
    for st in &plan.stages {
        let inputs = match &st.pool {
            Pool::Blocks { block_size } => {
                let cfg = SegmentConfig {
                    block_size: *block_size,
                    order: block_order,
                    separator,
                };
                StageInputs::Blocks(segment(registry, &registry.seq_ids(), &cfg)?)
            }
            Pool::Sequences(_) => {
                let ids = plan.effective_pool(st.stage_index).expect("sequence stage");
                if let Some(missing) = ids.iter().find(|id| registry.get(**id).is_none()) {
                    return Err(Error::Config(format!(
                        "plan references {} which is not in the registry",
                        registry.seq_label(*missing)
                    )));
                }
                StageInputs::Sequences(ids)
            }
        };
        if batch_size > inputs.len() {
            return Err(Error::Config(format!(
                "batch size {batch_size} exceeds the {} inputs of stage {}",
                inputs.len(),
                st.stage_index
            )));
        }
        stages.push(inputs);
    }
    Ok(TrainingSchedule {
        plan_id: plan.plan_id.clone(),
        kind: plan.kind,
        batch_size,
        seed,
        budgets: plan.budgets(),
        stages,
    })
}

/// Draw order of stage `stage` (1-based), epoch `epoch`, over `n` inputs.
pub fn epoch_permutation(seed: u64, stage: usize, epoch: u64, n: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    SplitMix64::for_stream(seed, streams::SCHEDULE, &[stage as u64, epoch]).shuffle(&mut perm);
    perm
}

/// Single-reader cursor over the batch stream.
pub struct BatchCursor<'a> {
    schedule: &'a TrainingSchedule,
    step: u64,
    stage: usize,
    stage_end: u64,
    epoch: u64,
    perm: Vec<u32>,
    pos: usize,
}

impl<'a> BatchCursor<'a> {
    fn enter_stage(&mut self, stage: usize) {
        self.stage = stage;
        self.stage_end += self.schedule.budgets[stage - 1];
        self.epoch = 0;
        self.perm = epoch_permutation(self.schedule.seed, stage, 0, self.schedule.stages[stage - 1].len());
        self.pos = 0;
    }

    /// Fills `out` with the next batch; returns `(step, stage)` or `None` at the end.
    pub fn next_into(&mut self, out: &mut Vec<u32>) -> Option<(u64, usize)> {
        if self.step >= self.schedule.total_steps() {
            return None;
        }
        while self.step >= self.stage_end {
            self.enter_stage(self.stage + 1);
        }
        out.clear();
        while out.len() < self.schedule.batch_size {
            if self.pos == self.perm.len() {
                self.epoch += 1;
                self.perm = epoch_permutation(self.schedule.seed, self.stage, self.epoch, self.perm.len());
                self.pos = 0;
            }
            let take = (self.schedule.batch_size - out.len()).min(self.perm.len() - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + take]);
            self.pos += take;
        }
        let at = (self.step, self.stage);
        self.step += 1;
        Some(at)
    }
}

impl Iterator for BatchCursor<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let mut members = Vec::with_capacity(self.schedule.batch_size);
        self.next_into(&mut members).map(|(step, stage)| Batch { step, stage, members })
    }
}

impl TrainingSchedule {
    pub fn total_steps(&self) -> u64 {
        self.budgets.iter().sum()
    }

    /// 1-based stage index of `step`.
    pub fn stage_at(&self, step: u64) -> usize {
        let mut end = 0;
        for (i, b) in self.budgets.iter().enumerate() {
            end += b;
            if step < end {
                return i + 1;
            }
        }
        self.budgets.len()
    }

    pub fn boundaries(&self) -> Vec<u64> {
        let mut acc = 0;
        self.budgets[..self.budgets.len() - 1]
            .iter()
            .map(|b| {
                acc += b;
                acc
            })
            .collect()
    }

    pub fn batches(&self) -> BatchCursor<'_> {
        BatchCursor {
            schedule: self,
            step: 0,
            stage: 0,
            stage_end: 0,
            epoch: 0,
            perm: Vec::new(),
            pos: 0,
        }
    }

    /// SHA-256 over the whole batch stream, as little-endian u32 stage index
    /// followed by the batch's member indices, for every step.
    pub fn stream_digest(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::with_capacity(self.batch_size);
        let mut bytes = Vec::with_capacity(4 * (self.batch_size + 1));
        let mut cur = self.batches();
        while let Some((_, stage)) = cur.next_into(&mut buf) {
            bytes.clear();
            bytes.extend_from_slice(&(stage as u32).to_le_bytes());
            for m in &buf {
                bytes.extend_from_slice(&m.to_le_bytes());
            }
            h.update(&bytes);
        }
        hex::encode(h.finalize())
    }

    pub fn summary(&self, with_digest: bool) -> ScheduleSummary {
        let mut first = 0;
        let stages = self
            .stages
            .iter()
            .zip(&self.budgets)
            .enumerate()
            .map(|(i, (inputs, &steps))| {
                let s = StageSummary {
                    stage_index: i + 1,
                    first_step: first,
                    steps,
                    input_unit: inputs.unit().into(),
                    pool_size: inputs.len(),
                    epochs: (steps as f64 * self.batch_size as f64) / inputs.len() as f64,
                };
                first += steps;
                s
            })
            .collect();
        ScheduleSummary {
            plan_id: self.plan_id.clone(),
            kind: self.kind,
            batch_size: self.batch_size,
            seed: self.seed,
            total_steps: self.total_steps(),
            total_inputs: self.total_steps() * self.batch_size as u64,
            stages,
            stream_sha256: with_digest.then(|| self.stream_digest()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage_index: usize,
    pub first_step: u64,
    pub steps: u64,
    pub input_unit: String,
    pub pool_size: usize,
    pub epochs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub plan_id: String,
    pub kind: CurriculumKind,
    pub batch_size: usize,
    pub seed: u64,
    pub total_steps: u64,
    pub total_inputs: u64,
    pub stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureShare {
    pub name: String,
    pub expected_input_fraction: f64,
    pub realized_input_fraction: f64,
    /// Realized fraction over each stage's completed epochs only.
    pub completed_epoch_fraction: f64,
    /// Expected share of drawn tokens.
    pub token_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub plan_id: String,
    pub total_inputs: u64,
    pub completed_epoch_inputs: u64,
    pub corpora: Vec<ExposureShare>,
    pub modalities: Vec<ExposureShare>,
}

impl ExposureReport {
    pub fn corpus(&self, name: &str) -> Option<&ExposureShare> {
        self.corpora.iter().find(|s| s.name == name)
    }

    pub fn modality(&self, m: Modality) -> Option<&ExposureShare> {
        self.modalities.iter().find(|s| s.name == m.as_str())
    }

    pub fn table(&self) -> String {
        let rows: Vec<&ExposureShare> = self.corpora.iter().chain(&self.modalities).collect();
        let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(6).max(6);
        let mut out = format!("{:<w$}  {:>10}  {:>10}  {:>10}  {:>10}\n", "corpus", "expected%", "realized%", "epochs%", "tokens%");
        for (i, r) in rows.iter().enumerate() {
            if i == self.corpora.len() {
                out.push_str(&"-".repeat(w + 48));
                out.push('\n');
            }
            out.push_str(&format!(
                "{:<w$}  {:>9.3}%  {:>9.3}%  {:>9.3}%  {:>9.3}%\n",
                r.name,
                100.0 * r.expected_input_fraction,
                100.0 * r.realized_input_fraction,
                100.0 * r.completed_epoch_fraction,
                100.0 * r.token_fraction
            ));
        }
        out
    }
}

/// Per-member corpus weights (summing to 1) and token counts for one stage.
fn member_weights(inputs: &StageInputs, registry: &Registry) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
    match inputs {
        StageInputs::Sequences(ids) => ids
            .iter()
            .map(|id| {
                let n = registry.get(*id).map_or(0, |s| s.token_len()) as f64;
                (vec![(id.corpus as usize, 1.0)], n)
            })
            .unzip(),
        StageInputs::Blocks(b) => b
            .provenance
            .iter()
            .map(|segs| {
                let mut by: BTreeMap<usize, f64> = BTreeMap::new();
                for s in segs {
                    if let Some(id) = s.source {
                        *by.entry(id.corpus as usize).or_default() += s.len as f64;
                    }
                }
                let sum: f64 = by.values().sum();
                (by.into_iter().map(|(c, n)| (c, n / sum)).collect(), b.block_size as f64)
            })
            .unzip(),
    }
}

/// Expected and realized per-corpus exposure of a schedule.
pub fn exposure(schedule: &TrainingSchedule, registry: &Registry) -> Result<ExposureReport> {
    registry.require_tokenized()?;
    let nc = registry.corpora.len();
    let total_steps = schedule.total_steps() as f64;
    let mut expected = vec![0.0; nc];
    let mut expected_tokens = vec![0.0; nc];
    let mut realized = vec![0.0; nc];
    let mut completed = vec![0.0; nc];
    let weights: Vec<_> = schedule.stages.iter().map(|s| member_weights(s, registry)).collect();

    // Per-stage sums first and a single division by the total at the end,
    // so that simple ratios come out exact.
    for (si, (w, toks)) in weights.iter().enumerate() {
        let budget = schedule.budgets[si] as f64;
        let n = w.len() as f64;
        let mut stage_w = vec![0.0; nc];
        let mut stage_t = vec![0.0; nc];
        for (m, t) in w.iter().zip(toks) {
            for &(c, f) in m {
                stage_w[c] += f;
                stage_t[c] += f * t;
            }
        }
        for c in 0..nc {
            expected[c] += budget * stage_w[c] / n;
            expected_tokens[c] += budget * stage_t[c] / n;
        }
    }
    for e in &mut expected {
        *e /= total_steps;
    }

    let mut buf = Vec::new();
    let mut cur = schedule.batches();
    let mut drawn_in_stage = vec![0u64; schedule.stages.len()];
    let full_epoch_draws: Vec<u64> = schedule
        .stages
        .iter()
        .zip(&schedule.budgets)
        .map(|(s, &b)| {
            let n = s.len() as u64;
            (b * schedule.batch_size as u64) / n * n
        })
        .collect();
    let mut completed_inputs = 0u64;
    while let Some((_, stage)) = cur.next_into(&mut buf) {
        let (w, _) = &weights[stage - 1];
        for &m in &buf {
            let in_full_epoch = drawn_in_stage[stage - 1] < full_epoch_draws[stage - 1];
            drawn_in_stage[stage - 1] += 1;
            for &(c, f) in &w[m as usize] {
                realized[c] += f;
                if in_full_epoch {
                    completed[c] += f;
                }
            }
            completed_inputs += in_full_epoch as u64;
        }
    }
    let total_inputs = schedule.total_steps() * schedule.batch_size as u64;

    let norm = |v: &[f64]| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect::<Vec<f64>>()
    };
    let exp_tok = norm(&expected_tokens);
    let share = |name: String, idx: &[usize]| {
        let sum = |v: &[f64]| idx.iter().map(|&c| v[c]).sum::<f64>();
        ExposureShare {
            name,
            expected_input_fraction: sum(&expected),
            realized_input_fraction: sum(&realized) / total_inputs as f64,
            completed_epoch_fraction: if completed_inputs > 0 {
                sum(&completed) / completed_inputs as f64
            } else {
                0.0
            },
            token_fraction: sum(&exp_tok),
        }
    };
    let corpora = (0..nc)
        .map(|c| share(registry.corpora[c].corpus_id.clone(), &[c]))
        .collect();
    let modalities = Modality::ALL
        .iter()
        .filter_map(|&m| {
            let idx: Vec<usize> = (0..nc).filter(|&c| registry.corpora[c].modality == m).collect();
            (!idx.is_empty()).then(|| share(m.to_string(), &idx))
        })
        .collect();
    Ok(ExposureReport {
        plan_id: schedule.plan_id.clone(),
        total_inputs,
        completed_epoch_inputs: completed_inputs,
        corpora,
        modalities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::*;
    use crate::registry::CorpusSpec;
    use crate::tokenizer::TokenizerModel;

    fn reg(corpora: &[(&str, Modality, usize)]) -> Registry {
        let mut r = Registry::from_texts(
            corpora
                .iter()
                .map(|&(id, m, n)| {
                    (
                        CorpusSpec {
                            corpus_id: id.into(),
                            display_name: None,
                            path: id.into(),
                            modality: Some(m),
                        },
                        (0..n).map(|i| format!("{id}{i}")).collect(),
                    )
                })
                .collect(),
        )
        .unwrap();
        r.tokenize(&TokenizerModel::byte_level(), 128).unwrap();
        r
    }

    #[test]
    fn epochs_cover_each_member_once() {
        let r = reg(&[("a", Modality::Speech, 7), ("b", Modality::Text, 3)]);
        let p = build_random_baseline(&r, 10).unwrap();
        let s = plan_schedule(&p, &r, 5, 17).unwrap();
        let draws: Vec<u32> = s.batches().flat_map(|b| b.members).collect();
        assert_eq!(draws.len(), 50);
        for epoch in draws.chunks(10) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, (0..10).collect::<Vec<_>>());
        }
        assert_ne!(draws[..10], draws[10..20]);
    }

    #[test]
    fn same_seed_same_stream() {
        let r = reg(&[("a", Modality::Speech, 20)]);
        let p = build_random_baseline(&r, 30).unwrap();
        let a = plan_schedule(&p, &r, 4, 17).unwrap();
        let b = plan_schedule(&p, &r, 4, 17).unwrap();
        let c = plan_schedule(&p, &r, 4, 18).unwrap();
        assert!(a.batches().eq(b.batches()));
        assert_eq!(a.stream_digest(), b.stream_digest());
        assert_ne!(a.stream_digest(), c.stream_digest());
    }

    #[test]
    fn stages_are_monotone_and_new_pools_wait() {
        let r = reg(&[("a", Modality::Speech, 12), ("b", Modality::Text, 12)]);
        let p = build_modality_curriculum(&r, Modality::Speech, [7, 5]).unwrap();
        let s = plan_schedule(&p, &r, 4, 1).unwrap();
        let mut last = 1;
        for b in s.batches() {
            assert!(b.stage >= last);
            last = b.stage;
            if b.step < 7 {
                assert_eq!(b.stage, 1);
                let StageInputs::Sequences(pool) = &s.stages[0] else { panic!() };
                assert!(b.members.iter().all(|&m| pool[m as usize].corpus == 0));
            }
        }
        assert_eq!(s.boundaries(), vec![7]);
        assert_eq!(s.stage_at(6), 1);
        assert_eq!(s.stage_at(7), 2);
    }

    #[test]
    fn batch_larger_than_pool() {
        let r = reg(&[("a", Modality::Speech, 3)]);
        let p = build_random_baseline(&r, 10).unwrap();
        assert!(matches!(plan_schedule(&p, &r, 4, 1), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_exposure_is_exact() {
        let r = reg(&[("s", Modality::Speech, 60), ("t", Modality::Text, 40)]);
        let p = build_random_baseline(&r, 50).unwrap();
        let s = plan_schedule(&p, &r, 10, 3).unwrap();
        let e = exposure(&s, &r).unwrap();
        assert_eq!(e.corpus("s").unwrap().expected_input_fraction, 0.6);
        assert_eq!(e.corpus("s").unwrap().realized_input_fraction, 0.6);
        assert_eq!(e.corpus("t").unwrap().completed_epoch_fraction, 0.4);
    }

    #[test]
    fn modality_first_text_share() {
        // 80% speech lines: speech-first gives text 0.5 * 0.2 = 10% of inputs;
        // text-first gives 0.5 + 0.5 * 0.2 = 60%.
        let r = reg(&[("s", Modality::Speech, 80), ("t", Modality::Text, 20)]);
        let p = build_modality_curriculum(&r, Modality::Speech, [100, 100]).unwrap();
        let e = exposure(&plan_schedule(&p, &r, 10, 3).unwrap(), &r).unwrap();
        assert!((e.modality(Modality::Text).unwrap().expected_input_fraction - 0.1).abs() < 1e-12);
        let p = build_modality_curriculum(&r, Modality::Text, [100, 100]).unwrap();
        let e = exposure(&plan_schedule(&p, &r, 10, 3).unwrap(), &r).unwrap();
        assert!((e.modality(Modality::Text).unwrap().expected_input_fraction - 0.6).abs() < 1e-12);
    }

    #[test]
    fn block_exposure_follows_tokens() {
        // Corpus a has 3x the tokens of b with equal line counts.
        let mut r = Registry::from_texts(vec![
            (
                CorpusSpec { corpus_id: "a".into(), display_name: None, path: "a".into(), modality: Some(Modality::Speech) },
                vec!["xxxxxx".to_string(); 40],
            ),
            (
                CorpusSpec { corpus_id: "b".into(), display_name: None, path: "b".into(), modality: Some(Modality::Text) },
                vec!["yy".to_string(); 40],
            ),
        ])
        .unwrap();
        r.tokenize(&TokenizerModel::byte_level(), 128).unwrap();
        let p = build_block_curriculum(&r, &[8], 10).unwrap();
        let e = exposure(&plan_schedule(&p, &r, 4, 1).unwrap(), &r).unwrap();
        assert!((e.corpus("a").unwrap().expected_input_fraction - 0.75).abs() < 1e-12);
    }
}
