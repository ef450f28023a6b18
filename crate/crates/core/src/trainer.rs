//! Reference masked-LM trainer used to exercise schedules, masking and layer
//! stacking end to end.
//!
//! The model is a context bag: for a masked position `j` the context is the
//! mean of `E[t_i] + P[i]` over unmasked positions `i`, then
//! `h0 = c + P[j]`, a stack of residual feed-forward blocks
//! `h' = h + W2 relu(W1 h + b1) + b2`, and tied output logits `E h + bias`.
//! Gradients are derived by hand.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer_stack::{self, layer_name, Checkpoint, CheckpointMeta, GrowthConfig, Tensor};
use crate::masking::{mask_batch, MaskConfig, MaskedExample, IGNORE_LABEL};
use crate::registry::Registry;
use crate::rng::{streams, SplitMix64};
use crate::schedule::{StageInputs, TrainingSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// hidden × dim
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// dim × hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Block {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; dim * hidden],
            b2: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    /// vocab × dim, shared by input and output.
    pub embedding: Vec<f64>,
    /// max_len × dim
    pub position: Vec<f64>,
    pub blocks: Vec<Block>,
    pub output_bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub layers: usize,
}

impl ToyModel {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            vocab: cfg.vocab,
            dim: cfg.dim,
            hidden: cfg.hidden,
            max_len: cfg.max_len,
            embedding: vec![0.0; cfg.vocab * cfg.dim],
            position: vec![0.0; cfg.max_len * cfg.dim],
            blocks: (0..cfg.layers).map(|_| Block::zeros(cfg.dim, cfg.hidden)).collect(),
            output_bias: vec![0.0; cfg.vocab],
        }
    }

    /// Every parameter drawn from uniform(−0.05, 0.05).
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.vocab == 0 || cfg.dim == 0 || cfg.hidden == 0 || cfg.max_len == 0 {
            return Err(Error::Config(format!("degenerate model config {cfg:?}")));
        }
        let mut m = Self::zeros(cfg);
        let mut rng = SplitMix64::for_stream(seed, streams::INIT, &[]);
        for s in m.slices_mut() {
            for v in s.iter_mut() {
                *v = rng.uniform(-0.05, 0.05);
            }
        }
        Ok(m)
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&ModelConfig {
            vocab: self.vocab,
            dim: self.dim,
            hidden: self.hidden,
            max_len: self.max_len,
            layers: self.blocks.len(),
        })
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embedding, &self.position];
        for b in &self.blocks {
            v.extend([b.w1.as_slice(), &b.b1, &b.w2, &b.b2]);
        }
        v.push(&self.output_bias);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embedding, &mut self.position];
        for b in &mut self.blocks {
            v.extend([b.w1.as_mut_slice(), &mut b.b1, &mut b.w2, &mut b.b2]);
        }
        v.push(&mut self.output_bias);
        v
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Result<Checkpoint> {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let (v, d, h) = (self.vocab, self.dim, self.hidden);
        let mut t = BTreeMap::new();
        t.insert("embedding".to_string(), Tensor::new(vec![v, d], f(&self.embedding))?);
        t.insert("position".to_string(), Tensor::new(vec![self.max_len, d], f(&self.position))?);
        t.insert("output_bias".to_string(), Tensor::new(vec![v], f(&self.output_bias))?);
        for (i, b) in self.blocks.iter().enumerate() {
            t.insert(layer_name(i, "w1"), Tensor::new(vec![h, d], f(&b.w1))?);
            t.insert(layer_name(i, "b1"), Tensor::new(vec![h], f(&b.b1))?);
            t.insert(layer_name(i, "w2"), Tensor::new(vec![d, h], f(&b.w2))?);
            t.insert(layer_name(i, "b2"), Tensor::new(vec![d], f(&b.b2))?);
        }
        Checkpoint::new(t, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ck.tensors
                .get(name)
                .ok_or_else(|| Error::Manifest(format!("checkpoint lacks tensor {name}")))
        };
        let emb = get("embedding")?;
        let pos = get("position")?;
        let bias = get("output_bias")?;
        if emb.shape.len() != 2 || pos.shape.len() != 2 || pos.shape[1] != emb.shape[1] || bias.shape != [emb.shape[0]] {
            return Err(Error::Manifest("embedding, position and bias shapes disagree".into()));
        }
        let (v, d) = (emb.shape[0], emb.shape[1]);
        let layers = ck.layer_count()?;
        let hidden = if layers > 0 { get("block.0.b1")?.numel() } else { 1 };
        let g = |t: &Tensor| t.data.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        let mut blocks = Vec::with_capacity(layers);
        for i in 0..layers {
            let (w1, b1, w2, b2) = (
                get(&layer_name(i, "w1"))?,
                get(&layer_name(i, "b1"))?,
                get(&layer_name(i, "w2"))?,
                get(&layer_name(i, "b2"))?,
            );
            if w1.shape != [hidden, d] || b1.shape != [hidden] || w2.shape != [d, hidden] || b2.shape != [d] {
                return Err(Error::Manifest(format!("block {i} shapes do not match the model")));
            }
            blocks.push(Block {
                w1: g(w1),
                b1: g(b1),
                w2: g(w2),
                b2: g(b2),
            });
        }
        Ok(Self {
            vocab: v,
            dim: d,
            hidden,
            max_len: pos.shape[0],
            embedding: g(emb),
            position: g(pos),
            blocks,
            output_bias: g(bias),
        })
    }
}

fn check_example(m: &ToyModel, ex: &MaskedExample) -> Result<()> {
    let n = ex.input_ids.len();
    if n == 0 || n != ex.labels.len() {
        return Err(Error::Precondition("malformed masked example".into()));
    }
    if n > m.max_len {
        return Err(Error::Precondition(format!("example of {n} tokens exceeds model max_len {}", m.max_len)));
    }
    if let Some(&t) = ex.input_ids.iter().find(|&&t| t as usize >= m.vocab) {
        return Err(Error::Range { id: t, vocab_size: m.vocab });
    }
    if let Some(&t) = ex.labels.iter().find(|&&t| t != IGNORE_LABEL && t as usize >= m.vocab) {
        return Err(Error::Range { id: t, vocab_size: m.vocab });
    }
    let masked = ex.labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if masked == 0 {
        return Err(Error::Precondition("example has no labeled position".into()));
    }
    if masked == n && n > 1 {
        return Err(Error::Precondition("every position is masked; no context remains".into()));
    }
    Ok(())
}

/// Mean cross-entropy (nats) over labeled positions, with gradients when
/// `grads` is given.
fn run(m: &ToyModel, batch: &[MaskedExample], mut grads: Option<&mut ToyModel>) -> Result<f64> {
    for ex in batch {
        check_example(m, ex)?;
    }
    let total: usize = batch.iter().map(|ex| ex.labels.iter().filter(|&&l| l != IGNORE_LABEL).count()).sum();
    if total == 0 {
        return Err(Error::Precondition("empty batch".into()));
    }
    let scale = 1.0 / total as f64;
    let (d, hd, v) = (m.dim, m.hidden, m.vocab);
    let row = |r: usize, w: usize| r * w..(r + 1) * w;

    let mut loss = 0.0;
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(m.blocks.len() + 1);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(m.blocks.len());
    let mut logits = vec![0.0; v];
    for ex in batch {
        let context: Vec<usize> = (0..ex.labels.len()).filter(|&i| ex.labels[i] == IGNORE_LABEL).collect();
        let mut c = vec![0.0; d];
        if !context.is_empty() {
            let inv = 1.0 / context.len() as f64;
            for &i in &context {
                let e = &m.embedding[row(ex.input_ids[i] as usize, d)];
                let p = &m.position[row(i, d)];
                for k in 0..d {
                    c[k] += inv * (e[k] + p[k]);
                }
            }
        }
        let mut dc = vec![0.0; d];
        for (j, &y) in ex.labels.iter().enumerate() {
            if y == IGNORE_LABEL {
                continue;
            }
            hs.clear();
            acts.clear();
            let pj = &m.position[row(j, d)];
            hs.push((0..d).map(|k| c[k] + pj[k]).collect());
            for b in &m.blocks {
                let h = hs.last().unwrap();
                let a: Vec<f64> = (0..hd)
                    .map(|r| b.b1[r] + b.w1[r * d..(r + 1) * d].iter().zip(h).map(|(w, x)| w * x).sum::<f64>())
                    .collect();
                let next: Vec<f64> = (0..d)
                    .map(|r| {
                        h[r] + b.b2[r]
                            + b.w2[r * hd..(r + 1) * hd]
                                .iter()
                                .zip(&a)
                                .map(|(w, x)| w * x.max(0.0))
                                .sum::<f64>()
                    })
                    .collect();
                acts.push(a);
                hs.push(next);
            }
            let top = hs.last().unwrap();
            for t in 0..v {
                logits[t] = m.output_bias[t] + m.embedding[t * d..(t + 1) * d].iter().zip(top).map(|(e, x)| e * x).sum::<f64>();
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|&l| (l - mx).exp()).sum();
            let lse = mx + z.ln();
            loss += lse - logits[y as usize];

            let Some(g) = grads.as_deref_mut() else { continue };
            let mut dh = vec![0.0; d];
            for t in 0..v {
                let gt = scale * ((logits[t] - lse).exp() - if t == y as usize { 1.0 } else { 0.0 });
                g.output_bias[t] += gt;
                let e = &m.embedding[t * d..(t + 1) * d];
                let ge = &mut g.embedding[t * d..(t + 1) * d];
                for k in 0..d {
                    ge[k] += gt * top[k];
                    dh[k] += gt * e[k];
                }
            }
            for (l, b) in m.blocks.iter().enumerate().rev() {
                let gb = &mut g.blocks[l];
                let a = &acts[l];
                let h = &hs[l];
                let mut da = vec![0.0; hd];
                for r in 0..d {
                    gb.b2[r] += dh[r];
                    for q in 0..hd {
                        gb.w2[r * hd + q] += dh[r] * a[q].max(0.0);
                        da[q] += b.w2[r * hd + q] * dh[r];
                    }
                }
                for q in 0..hd {
                    if a[q] <= 0.0 {
                        da[q] = 0.0;
                    }
                }
                for q in 0..hd {
                    gb.b1[q] += da[q];
                    for k in 0..d {
                        gb.w1[q * d + k] += da[q] * h[k];
                        dh[k] += b.w1[q * d + k] * da[q];
                    }
                }
            }
            for k in 0..d {
                g.position[j * d + k] += dh[k];
                dc[k] += dh[k];
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            if !context.is_empty() {
                let inv = 1.0 / context.len() as f64;
                for &i in &context {
                    let t = ex.input_ids[i] as usize;
                    for k in 0..d {
                        g.embedding[t * d + k] += inv * dc[k];
                        g.position[i * d + k] += inv * dc[k];
                    }
                }
            }
        }
    }
    Ok(loss * scale)
}

pub fn forward_loss(model: &ToyModel, batch: &[MaskedExample]) -> Result<f64> {
    run(model, batch, None)
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad(model: &ToyModel, batch: &[MaskedExample]) -> Result<(f64, ToyModel)> {
    let mut g = model.zeros_like();
    let loss = run(model, batch, Some(&mut g))?;
    Ok((loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { lr: 1e-2 }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: ToyModel,
    first_moment: ToyModel,
    second_moment: ToyModel,
    pub step: u64,
    pub running_loss: f64,
}

impl TrainState {
    pub fn new(model: ToyModel) -> Self {
        Self {
            first_moment: model.zeros_like(),
            second_moment: model.zeros_like(),
            model,
            step: 0,
            running_loss: f64::NAN,
        }
    }

    fn apply(&mut self, grads: &ToyModel, opt: &OptimizerConfig) {
        match *opt {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in self.model.slices_mut().into_iter().zip(grads.slices()) {
                    for (x, dx) in p.iter_mut().zip(g) {
                        *x -= lr * dx;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = (self.step + 1) as f64;
                let (c1, c2) = (1.0 - beta1.powf(t), 1.0 - beta2.powf(t));
                let params = self.model.slices_mut();
                let ms = self.first_moment.slices_mut();
                let vs = self.second_moment.slices_mut();
                for (((p, g), m), v) in params.into_iter().zip(grads.slices()).zip(ms).zip(vs) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }

    /// Adds a layer through checkpoint surgery; optimizer moments of the new
    /// layer start at zero.
    pub fn grow(&mut self, stage: usize) -> Result<Checkpoint> {
        let ck = self.model.to_checkpoint(CheckpointMeta {
            stage,
            step: self.step,
            optimizer_reset: Vec::new(),
        })?;
        let grown = layer_stack::grow(&ck)?;
        self.model = ToyModel::from_checkpoint(&grown)?;
        self.first_moment.blocks.push(Block::zeros(self.model.dim, self.model.hidden));
        self.second_moment.blocks.push(Block::zeros(self.model.dim, self.model.hidden));
        Ok(grown)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Starting depth when growth is off.
    pub layers: usize,
    pub optimizer: OptimizerConfig,
    pub mask: MaskConfig,
    pub seed: u64,
    pub log_every: u64,
    pub growth: Option<GrowthConfig>,
    /// Smoothing factor of the running loss.
    pub ema: f64,
}

impl TrainConfig {
    pub fn new(seed: u64, mask: MaskConfig) -> Self {
        Self {
            dim: 32,
            hidden: 64,
            layers: 1,
            optimizer: OptimizerConfig::default(),
            mask,
            seed,
            log_every: 100,
            growth: None,
            ema: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
    pub running_loss: f64,
    pub stage: usize,
    pub layers: usize,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub curve: Vec<LossPoint>,
    /// One checkpoint at the end of every stage.
    pub checkpoints: Vec<Checkpoint>,
    pub initial_loss: f64,
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,loss,stage,layers,running_loss\n");
    for p in curve {
        let _ = writeln!(out, "{},{:?},{},{},{:?}", p.step, p.loss, p.stage, p.layers, p.running_loss);
    }
    out
}

/// Identifier of a pool member across visits, used to key the masking draw.
pub fn example_key(inputs: &StageInputs, stage: usize, member: usize) -> u64 {
    match inputs {
        StageInputs::Sequences(ids) => ((ids[member].corpus as u64) << 32) | ids[member].line as u64,
        StageInputs::Blocks(b) => (1 << 63) | ((b.block_size as u64) << 40) | ((stage as u64) << 32) | member as u64,
    }
}

/// Trains the toy model along `schedule`, growing one layer per stage when
/// growth is configured.
pub fn train(schedule: &TrainingSchedule, registry: &Registry, cfg: &TrainConfig) -> Result<TrainOutcome> {
    registry.require_tokenized()?;
    cfg.mask.validate()?;
    let vocab = registry
        .vocab_size
        .ok_or_else(|| Error::Precondition("registry has no vocabulary size".into()))?;
    if cfg.mask.vocab_size as usize != vocab {
        return Err(Error::Config(format!(
            "masking vocabulary {} differs from registry vocabulary {vocab}",
            cfg.mask.vocab_size
        )));
    }
    let max_len = schedule
        .stages
        .iter()
        .map(|s| match s {
            StageInputs::Blocks(b) => b.block_size,
            StageInputs::Sequences(_) => registry.max_seq_len.unwrap_or(1),
        })
        .max()
        .unwrap_or(1);
    let layer_plan = cfg
        .growth
        .map(|g| layer_stack::layers_per_stage(schedule.stages.len(), &g));
    let model_cfg = ModelConfig {
        vocab,
        dim: cfg.dim,
        hidden: cfg.hidden,
        max_len,
        layers: layer_plan.as_ref().map_or(cfg.layers, |p| p[0]),
    };
    let mut state = TrainState::new(ToyModel::init(&model_cfg, cfg.seed)?);
    let mut curve = Vec::new();
    let mut checkpoints = Vec::new();
    let mut initial_loss = f64::NAN;
    let mut current_stage = 1;
    let total = schedule.total_steps();
    let mut members = Vec::new();
    let mut cursor = schedule.batches();

    while let Some((step, stage)) = cursor.next_into(&mut members) {
        if stage != current_stage {
            checkpoints.push(state.model.to_checkpoint(CheckpointMeta {
                stage: current_stage,
                step,
                optimizer_reset: Vec::new(),
            })?);
            if let Some(plan) = &layer_plan {
                while state.model.layers() < plan[stage - 1] {
                    state.grow(stage)?;
                }
            }
            current_stage = stage;
        }
        let inputs = &schedule.stages[stage - 1];
        let batch: Vec<&[u32]> = members.iter().map(|&m| inputs.tokens(registry, m as usize)).collect();
        let keys: Vec<u64> = members.iter().map(|&m| example_key(inputs, stage, m as usize)).collect();
        let masked = mask_batch(&batch, &keys, step, &cfg.mask)?;
        let (loss, grads) = loss_and_grad(&state.model, &masked)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {loss} at step {step} (stage {stage}, {} layers)",
                state.model.layers()
            )));
        }
        if step == 0 {
            initial_loss = loss;
            state.running_loss = loss;
        } else {
            state.running_loss = (1.0 - cfg.ema) * state.running_loss + cfg.ema * loss;
        }
        state.apply(&grads, &cfg.optimizer);
        state.step = step + 1;
        if step % cfg.log_every.max(1) == 0 || step + 1 == total {
            curve.push(LossPoint {
                step,
                loss,
                running_loss: state.running_loss,
                stage,
                layers: state.model.layers(),
            });
        }
    }
    checkpoints.push(state.model.to_checkpoint(CheckpointMeta {
        stage: current_stage,
        step: state.step,
        optimizer_reset: Vec::new(),
    })?);
    Ok(TrainOutcome {
        state,
        curve,
        checkpoints,
        initial_loss,
    })
}
