//! Curriculum plans: ordered stages of sequence pools (or block sizes) with
//! step budgets, and the builders for each curriculum family.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::complexity::SequenceScore;
use crate::error::{Error, Result};
use crate::registry::{Modality, Registry, SeqId};

pub const DEFAULT_TOTAL_STEPS: u64 = 120_000;
pub const DEFAULT_STAGES: usize = 4;
pub const DEFAULT_BLOCK_SIZES: [usize; 4] = [16, 32, 64, 128];
pub const ORIGINAL_BLOCK_SIZES: [usize; 4] = [64, 128, 256, 512];
pub const MODALITY_STAGE_STEPS: [u64; 2] = [60_000, 60_000];
pub const MODALITY_ONLY_STEPS: u64 = 40_000;
pub const DEFAULT_MERGES: [[&str; 2]; 2] = [["bnc_spoken", "switchboard"], ["cbt", "children_stories"]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumKind {
    Entropy,
    Unigram,
    Block,
    CorpusComplexity,
    ModalityFirst,
    RandomBaseline,
}

impl fmt::Display for CurriculumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurriculumKind::Entropy => "entropy",
            CurriculumKind::Unigram => "unigram",
            CurriculumKind::Block => "block",
            CurriculumKind::CorpusComplexity => "corpus_complexity",
            CurriculumKind::ModalityFirst => "modality_first",
            CurriculumKind::RandomBaseline => "random_baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// Stage s trains on the union of pools 1..=s.
    #[default]
    Cumulative,
    /// Stage s trains on its own pool only.
    SinglePhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceMeasure {
    Entropy,
    Unigram,
}

impl SequenceMeasure {
    fn of(self, s: &SequenceScore) -> f64 {
        match self {
            SequenceMeasure::Entropy => s.entropy_total,
            SequenceMeasure::Unigram => s.unigram_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoolRepr", from = "PoolRepr")]
pub enum Pool {
    Sequences(Vec<SeqId>),
    /// The whole registry token stream cut into blocks of this many tokens.
    Blocks { block_size: usize },
}

/// Consecutive line indices `[start, end)` of one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Run {
    corpus: u32,
    start: u32,
    end: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum PoolRepr {
    Sequences { runs: Vec<Run> },
    Blocks { block_size: usize },
}

impl From<Pool> for PoolRepr {
    fn from(p: Pool) -> Self {
        match p {
            Pool::Blocks { block_size } => PoolRepr::Blocks { block_size },
            Pool::Sequences(ids) => {
                let mut runs: Vec<Run> = Vec::new();
                for id in ids {
                    match runs.last_mut() {
                        Some(r) if r.corpus == id.corpus && r.end == id.line => r.end += 1,
                        _ => runs.push(Run {
                            corpus: id.corpus,
                            start: id.line,
                            end: id.line + 1,
                        }),
                    }
                }
                PoolRepr::Sequences { runs }
            }
        }
    }
}

impl From<PoolRepr> for Pool {
    fn from(r: PoolRepr) -> Self {
        match r {
            PoolRepr::Blocks { block_size } => Pool::Blocks { block_size },
            PoolRepr::Sequences { runs } => Pool::Sequences(
                runs.into_iter()
                    .flat_map(|r| (r.start..r.end).map(move |line| SeqId { corpus: r.corpus, line }))
                    .collect(),
            ),
        }
    }
}

impl Pool {
    pub fn is_empty(&self) -> bool {
        match self {
            Pool::Sequences(ids) => ids.is_empty(),
            Pool::Blocks { block_size } => *block_size == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// 1-based.
    pub stage_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub step_budget: u64,
    pub pool: Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub plan_id: String,
    pub kind: CurriculumKind,
    pub composition: Composition,
    pub reverse: bool,
    /// Registry corpus ids; pool runs refer to corpora by position here.
    pub corpora: Vec<String>,
    pub stages: Vec<Stage>,
}

impl CurriculumPlan {
    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.step_budget).sum()
    }

    pub fn budgets(&self) -> Vec<u64> {
        self.stages.iter().map(|s| s.step_budget).collect()
    }

    /// First step of each stage after the first.
    pub fn boundaries(&self) -> Vec<u64> {
        self.stages
            .iter()
            .scan(0u64, |acc, s| {
                *acc += s.step_budget;
                Some(*acc)
            })
            .take(self.stages.len().saturating_sub(1))
            .collect()
    }

    /// Sequences visible at stage `s` (1-based) under the plan's composition.
    /// `None` for block stages.
    pub fn effective_pool(&self, s: usize) -> Option<Vec<SeqId>> {
        let range = match self.composition {
            Composition::Cumulative => 0..s,
            Composition::SinglePhase => s - 1..s,
        };
        let mut out = Vec::new();
        for st in &self.stages[range] {
            match &st.pool {
                Pool::Sequences(ids) => out.extend_from_slice(ids),
                Pool::Blocks { .. } => return None,
            }
        }
        Some(out)
    }

    /// Checks the structural invariants every builder guarantees.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config(format!("plan {} has no stages", self.plan_id)));
        }
        let mut seen = HashSet::new();
        for (i, st) in self.stages.iter().enumerate() {
            if st.stage_index != i + 1 {
                return Err(Error::Config(format!("stage {} is out of order", st.stage_index)));
            }
            if st.step_budget == 0 {
                return Err(Error::Config(format!("stage {} has no steps", st.stage_index)));
            }
            if st.pool.is_empty() {
                return Err(Error::Config(format!("stage {} has an empty pool", st.stage_index)));
            }
            if let Pool::Sequences(ids) = &st.pool {
                for id in ids {
                    if id.corpus as usize >= self.corpora.len() {
                        return Err(Error::Config(format!("stage {} names corpus #{}", st.stage_index, id.corpus)));
                    }
                    if !seen.insert(*id) {
                        return Err(Error::Config(format!(
                            "{}:{} appears in more than one pool",
                            self.corpora[id.corpus as usize], id.line
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Same pools and order with budgets rescaled to `total_steps`.
    pub fn rescaled(&self, total_steps: u64) -> Result<Self> {
        let old = self.total_steps();
        if total_steps < self.stages.len() as u64 {
            return Err(Error::Config(format!(
                "{total_steps} steps cannot cover {} stages",
                self.stages.len()
            )));
        }
        let mut plan = self.clone();
        let mut given = 0u64;
        let n = plan.stages.len();
        for (i, st) in plan.stages.iter_mut().enumerate() {
            st.step_budget = if i + 1 == n {
                total_steps - given
            } else {
                ((st.step_budget as u128 * total_steps as u128) / old as u128).max(1) as u64
            };
            given += st.step_budget;
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Pool order reversed; budgets stay attached to stage positions.
    fn reversed(mut self) -> Self {
        let budgets = self.budgets();
        self.stages.reverse();
        for (i, (st, b)) in self.stages.iter_mut().zip(budgets).enumerate() {
            st.stage_index = i + 1;
            st.step_budget = b;
        }
        self.reverse = !self.reverse;
        self.plan_id.push_str("-reverse");
        self
    }
}

/// Near-equal sizes summing to `total`, larger parts first.
pub fn split_even(total: u64, parts: usize) -> Vec<u64> {
    let parts_u = parts as u64;
    (0..parts_u)
        .map(|i| total / parts_u + u64::from(i < total % parts_u))
        .collect()
}

fn budgets(total_steps: u64, n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Config("a plan needs at least one stage".into()));
    }
    if total_steps < n as u64 {
        return Err(Error::Config(format!("{total_steps} steps cannot cover {n} stages")));
    }
    Ok(split_even(total_steps, n))
}

fn corpus_ids(registry: &Registry) -> Vec<String> {
    registry.corpora.iter().map(|c| c.corpus_id.clone()).collect()
}

/// Sorts sequences by score (ties on corpus id, then line) and chunks them
/// into `n_stages` contiguous pools of near-equal size.
pub fn build_sequence_curriculum(
    registry: &Registry,
    scores: &[SequenceScore],
    measure: SequenceMeasure,
    n_stages: usize,
    total_steps: u64,
    reverse: bool,
) -> Result<CurriculumPlan> {
    if scores.is_empty() {
        return Err(Error::Precondition("no sequence scores to build a curriculum from".into()));
    }
    if n_stages == 0 || n_stages > scores.len() {
        return Err(Error::Config(format!(
            "{n_stages} stages requested for {} sequences",
            scores.len()
        )));
    }
    let names = corpus_ids(registry);
    let name = |s: &SequenceScore| names.get(s.id.corpus as usize).map(String::as_str).unwrap_or("");
    let mut sorted: Vec<&SequenceScore> = scores.iter().collect();
    sorted.sort_by(|a, b| {
        measure
            .of(a)
            .total_cmp(&measure.of(b))
            .then_with(|| name(a).cmp(name(b)))
            .then_with(|| a.id.line.cmp(&b.id.line))
    });
    let steps = budgets(total_steps, n_stages)?;
    let sizes = split_even(sorted.len() as u64, n_stages);
    let mut it = sorted.into_iter();
    let stages = sizes
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(i, (&n, b))| Stage {
            stage_index: i + 1,
            label: None,
            step_budget: b,
            pool: Pool::Sequences(it.by_ref().take(n as usize).map(|s| s.id).collect()),
        })
        .collect();
    let kind = match measure {
        SequenceMeasure::Entropy => CurriculumKind::Entropy,
        SequenceMeasure::Unigram => CurriculumKind::Unigram,
    };
    let plan = CurriculumPlan {
        plan_id: format!("{kind}-{n_stages}x{total_steps}"),
        kind,
        composition: Composition::Cumulative,
        reverse: false,
        corpora: names,
        stages,
    };
    plan.validate()?;
    Ok(if reverse { plan.reversed() } else { plan })
}

/// One stage per block size, each covering the whole token stream.
pub fn build_block_curriculum(registry: &Registry, block_sizes: &[usize], total_steps: u64) -> Result<CurriculumPlan> {
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::Config("block sizes must be positive".into()));
    }
    if block_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("block sizes {block_sizes:?} are not strictly increasing")));
    }
    let steps = budgets(total_steps, block_sizes.len())?;
    let stages = block_sizes
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(i, (&block_size, b))| Stage {
            stage_index: i + 1,
            label: Some(format!("block{block_size}")),
            step_budget: b,
            pool: Pool::Blocks { block_size },
        })
        .collect();
    let sizes: Vec<String> = block_sizes.iter().map(usize::to_string).collect();
    let plan = CurriculumPlan {
        plan_id: format!("block-{}x{total_steps}", sizes.join("_")),
        kind: CurriculumKind::Block,
        composition: Composition::SinglePhase,
        reverse: false,
        corpora: corpus_ids(registry),
        stages,
    };
    plan.validate()?;
    Ok(plan)
}

/// The merges among [`DEFAULT_MERGES`] whose corpora are all registered.
pub fn default_merges_for(registry: &Registry) -> Vec<Vec<String>> {
    DEFAULT_MERGES
        .iter()
        .filter(|g| g.iter().all(|c| registry.corpus_index(c).is_some()))
        .map(|g| g.iter().map(|c| c.to_string()).collect())
        .collect()
}

/// One stage per (merged) corpus, simplest first. A merged group takes the
/// position of its earliest member in `ordering`.
pub fn build_corpus_curriculum(
    registry: &Registry,
    ordering: &[String],
    merges: &[Vec<String>],
    n_stages: Option<usize>,
    total_steps: u64,
    reverse: bool,
) -> Result<CurriculumPlan> {
    let mut grouped: HashSet<&str> = HashSet::new();
    for g in merges {
        for c in g {
            if registry.corpus_index(c).is_none() {
                return Err(Error::Config(format!("merge names unknown corpus {c:?}")));
            }
            if !grouped.insert(c) {
                return Err(Error::Config(format!("corpus {c:?} appears in more than one merge")));
            }
        }
    }
    for c in ordering {
        if registry.corpus_index(c).is_none() {
            return Err(Error::Config(format!("ordering names unknown corpus {c:?}")));
        }
    }
    for (c, seqs) in registry.corpora.iter().zip(&registry.sequences) {
        if !seqs.is_empty() && !ordering.contains(&c.corpus_id) {
            return Err(Error::Config(format!("ordering does not cover corpus {:?}", c.corpus_id)));
        }
    }

    let mut groups: Vec<Vec<&str>> = Vec::new();
    let mut placed: HashSet<&str> = HashSet::new();
    for c in ordering {
        if placed.contains(c.as_str()) {
            continue;
        }
        let group: Vec<&str> = match merges.iter().find(|g| g.contains(c)) {
            Some(g) => {
                let mut members: Vec<&str> = g.iter().map(String::as_str).collect();
                members.sort_by_key(|m| ordering.iter().position(|o| o == m).unwrap_or(usize::MAX));
                members
            }
            None => vec![c.as_str()],
        };
        placed.extend(group.iter().copied());
        groups.push(group);
    }
    groups.retain(|g| {
        g.iter()
            .any(|c| !registry.sequences[registry.corpus_index(c).unwrap()].is_empty())
    });
    if let Some(n) = n_stages {
        if n != groups.len() {
            return Err(Error::Config(format!(
                "corpus curriculum has {} (merged) corpora but {n} stages were requested",
                groups.len()
            )));
        }
    }
    let steps = budgets(total_steps, groups.len())?;
    let stages = groups
        .iter()
        .zip(steps)
        .enumerate()
        .map(|(i, (g, b))| Stage {
            stage_index: i + 1,
            label: Some(g.join("+")),
            step_budget: b,
            pool: Pool::Sequences(
                g.iter()
                    .flat_map(|c| registry.sequences[registry.corpus_index(c).unwrap()].iter().map(|s| s.id))
                    .collect(),
            ),
        })
        .collect();
    let plan = CurriculumPlan {
        plan_id: format!("corpus_complexity-{}x{total_steps}", groups.len()),
        kind: CurriculumKind::CorpusComplexity,
        composition: Composition::Cumulative,
        reverse: false,
        corpora: corpus_ids(registry),
        stages,
    };
    plan.validate()?;
    Ok(if reverse { plan.reversed() } else { plan })
}

fn modality_ids(registry: &Registry, m: Modality) -> Vec<SeqId> {
    registry
        .iter()
        .filter(|s| registry.corpora[s.id.corpus as usize].modality == m)
        .map(|s| s.id)
        .collect()
}

/// Stage 1: every line of `first`; stage 2: everything else (cumulative, so
/// stage 2 trains on the full registry).
pub fn build_modality_curriculum(registry: &Registry, first: Modality, stage_steps: [u64; 2]) -> Result<CurriculumPlan> {
    let other = if first == Modality::Speech { Modality::Text } else { Modality::Speech };
    let a = modality_ids(registry, first);
    let b = modality_ids(registry, other);
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(format!(
            "modality curriculum needs both speech and text lines ({first}: {}, {other}: {})",
            a.len(),
            b.len()
        )));
    }
    let plan = CurriculumPlan {
        plan_id: format!("{first}_first-{}+{}", stage_steps[0], stage_steps[1]),
        kind: CurriculumKind::ModalityFirst,
        composition: Composition::Cumulative,
        reverse: false,
        corpora: corpus_ids(registry),
        stages: vec![
            Stage {
                stage_index: 1,
                label: Some(first.to_string()),
                step_budget: stage_steps[0],
                pool: Pool::Sequences(a),
            },
            Stage {
                stage_index: 2,
                label: Some(other.to_string()),
                step_budget: stage_steps[1],
                pool: Pool::Sequences(b),
            },
        ],
    };
    plan.validate()?;
    Ok(plan)
}

/// Single stage over one modality.
pub fn build_modality_only(registry: &Registry, modality: Modality, steps: u64) -> Result<CurriculumPlan> {
    let ids = modality_ids(registry, modality);
    if ids.is_empty() {
        return Err(Error::Config(format!("registry has no {modality} lines")));
    }
    let plan = CurriculumPlan {
        plan_id: format!("{modality}_only-{steps}"),
        kind: CurriculumKind::ModalityFirst,
        composition: Composition::Cumulative,
        reverse: false,
        corpora: corpus_ids(registry),
        stages: vec![Stage {
            stage_index: 1,
            label: Some(modality.to_string()),
            step_budget: steps,
            pool: Pool::Sequences(ids),
        }],
    };
    plan.validate()?;
    Ok(plan)
}

pub fn build_random_baseline(registry: &Registry, total_steps: u64) -> Result<CurriculumPlan> {
    if registry.is_empty() {
        return Err(Error::Precondition("random baseline over an empty registry".into()));
    }
    let plan = CurriculumPlan {
        plan_id: format!("random_baseline-{total_steps}"),
        kind: CurriculumKind::RandomBaseline,
        composition: Composition::Cumulative,
        reverse: false,
        corpora: corpus_ids(registry),
        stages: vec![Stage {
            stage_index: 1,
            label: None,
            step_budget: total_steps,
            pool: Pool::Sequences(registry.seq_ids()),
        }],
    };
    plan.validate()?;
    Ok(plan)
}

/// Switches a plan to single-phase composition (control mode).
pub fn single_phase(mut plan: CurriculumPlan) -> CurriculumPlan {
    plan.composition = Composition::SinglePhase;
    plan.plan_id.push_str("-single_phase");
    plan
}
