//! Python bindings for currikit.
//!
//! Reports (stats, schedules, exposure) come back as plain dicts decoded from
//! the same JSON the command line writes.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use currikit_core::curriculum::CurriculumPlan;
use currikit_core::layer_stack::{self, Checkpoint};
use currikit_core::masking::{self, MaskConfig, MaskPolicy};
use currikit_core::registry::{self, RegistryConfig};
use currikit_core::schedule;
use currikit_core::shard::{self, ShardRecord};
use currikit_core::tokenizer::{self, BpeConfig, TokenizerModel};
use currikit_core::{rng, Error};

create_exception!(currikit, CurrikitError, PyException);
create_exception!(currikit, IntegrityError, CurrikitError);
create_exception!(currikit, FormatError, CurrikitError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Integrity(_) => IntegrityError::new_err(msg),
        Error::Format { .. } => FormatError::new_err(msg),
        _ => CurrikitError::new_err(msg),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(|e| py_err(e.into()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyclass(name = "SplitMix64")]
struct PySplitMix64(rng::SplitMix64);

#[pymethods]
impl PySplitMix64 {
    /// Plain generator from `seed`, or a named stream of it when `stream` is given.
    #[new]
    #[pyo3(signature = (seed, stream=None, keys=Vec::new()))]
    fn new(seed: u64, stream: Option<&str>, keys: Vec<u64>) -> Self {
        match stream {
            Some(name) => Self(rng::SplitMix64::for_stream(seed, name, &keys)),
            None => Self(rng::SplitMix64::new(seed)),
        }
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn below(&mut self, n: u64) -> PyResult<u64> {
        if n == 0 {
            return Err(CurrikitError::new_err("below(0) has no valid result"));
        }
        Ok(self.0.below(n))
    }

    fn next_f64(&mut self) -> f64 {
        self.0.next_f64()
    }

    /// Shuffled copy of `items` (Fisher–Yates).
    fn shuffled(&mut self, mut items: Vec<Py<PyAny>>) -> Vec<Py<PyAny>> {
        self.0.shuffle(&mut items);
        items
    }
}

#[pyfunction]
#[pyo3(signature = (seed, name, keys=Vec::new()))]
fn derive_seed(seed: u64, name: &str, keys: Vec<u64>) -> u64 {
    rng::derive_seed(seed, name, &keys)
}

/// Draw order of `n` pool members for one stage (1-based) and epoch.
#[pyfunction]
fn epoch_permutation(seed: u64, stage: usize, epoch: u64, n: usize) -> Vec<u32> {
    schedule::epoch_permutation(seed, stage, epoch, n)
}

#[pyclass(name = "Tokenizer")]
struct PyTokenizer(TokenizerModel);

#[pymethods]
impl PyTokenizer {
    #[staticmethod]
    #[pyo3(signature = (lines, vocab_size=tokenizer::DEFAULT_VOCAB_SIZE))]
    fn train(py: Python<'_>, lines: Vec<String>, vocab_size: usize) -> PyResult<Self> {
        py.detach(|| tokenizer::train_bpe(lines.iter().map(String::as_str), &BpeConfig { vocab_size }))
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn byte_level() -> Self {
        Self(TokenizerModel::byte_level())
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        TokenizerModel::load(&dir).map(Self).map_err(py_err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(py_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn digest(&self) -> String {
        self.0.digest()
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        self.0.encode(text)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.0.decode(&ids).map_err(py_err)
    }
}

#[pyclass(name = "Registry")]
struct PyRegistry(currikit_core::Registry);

#[pymethods]
impl PyRegistry {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        currikit_core::Registry::load(&dir).map(Self).map_err(py_err)
    }

    /// Reads and tokenizes the corpora listed in a registry config.
    #[staticmethod]
    #[pyo3(signature = (config, tokenizer, max_len=registry::DEFAULT_MAX_SEQ_LEN))]
    fn ingest(py: Python<'_>, config: PathBuf, tokenizer: &PyTokenizer, max_len: usize) -> PyResult<Self> {
        let cfg = RegistryConfig::load(&config).map_err(py_err)?;
        py.detach(|| registry::ingest(&cfg, max_len, &tokenizer.0))
            .map(Self)
            .map_err(py_err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.0.save(&dir).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn corpora(&self) -> Vec<String> {
        self.0.corpora.iter().map(|c| c.corpus_id.clone()).collect()
    }

    /// Token ids of line `line` of corpus `corpus` (registry positions).
    fn tokens(&self, corpus: u32, line: u32) -> PyResult<Vec<u32>> {
        self.0
            .get(currikit_core::SeqId { corpus, line })
            .map(|s| s.token_ids.clone())
            .ok_or_else(|| CurrikitError::new_err(format!("no sequence {corpus}:{line}")))
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.stats().map_err(py_err)?)
    }

    /// Schedule summary (with stream digest) for the plan file at `plan`.
    #[pyo3(signature = (plan, batch=schedule::DEFAULT_BATCH_SIZE, seed=17))]
    fn schedule<'py>(&self, py: Python<'py>, plan: PathBuf, batch: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let plan = read_plan(&plan)?;
        let summary = py
            .detach(|| schedule::plan_schedule(&plan, &self.0, batch, seed).map(|s| s.summary(true)))
            .map_err(py_err)?;
        to_py(py, &summary)
    }

    #[pyo3(signature = (plan, batch=schedule::DEFAULT_BATCH_SIZE, seed=17))]
    fn exposure<'py>(&self, py: Python<'py>, plan: PathBuf, batch: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let plan = read_plan(&plan)?;
        let report = py
            .detach(|| schedule::plan_schedule(&plan, &self.0, batch, seed).and_then(|s| schedule::exposure(&s, &self.0)))
            .map_err(py_err)?;
        to_py(py, &report)
    }
}

fn read_plan(path: &PathBuf) -> PyResult<CurriculumPlan> {
    let body = std::fs::read_to_string(path).map_err(|e| py_err(Error::io(path, e)))?;
    CurriculumPlan::from_json(&body).map_err(py_err)
}

/// Masks one input; returns `(input_ids, labels)` with ignored labels set to
/// `0xFFFFFFFF`.
#[pyfunction]
#[pyo3(signature = (ids, key, step, seed, vocab_size, mask_id=4, mask_prob=0.15, standard=false))]
#[allow(clippy::too_many_arguments)]
fn mask(
    ids: Vec<u32>,
    key: u64,
    step: u64,
    seed: u64,
    vocab_size: u32,
    mask_id: u32,
    mask_prob: f64,
    standard: bool,
) -> PyResult<(Vec<u32>, Vec<u32>)> {
    let mut cfg = MaskConfig::new(seed, mask_id, vocab_size);
    cfg.mask_prob = mask_prob;
    if standard {
        cfg.policy = MaskPolicy::Standard;
    }
    cfg.validate().map_err(py_err)?;
    let m = masking::mask_example(&ids, key, step, &cfg).map_err(py_err)?;
    Ok((m.input_ids, m.labels))
}

/// All records of a manifest: id lists, or `(inputs, labels)` pairs for
/// masked payloads.
#[pyfunction]
fn read_shards(py: Python<'_>, manifest: PathBuf) -> PyResult<Vec<Py<PyAny>>> {
    let records = py.detach(|| shard::read(&manifest)).map_err(py_err)?;
    records
        .into_iter()
        .map(|r| match r {
            ShardRecord::Tokens(ids) => Ok(ids.into_pyobject(py)?.into_any().unbind()),
            ShardRecord::Masked { inputs, labels } => Ok((inputs, labels).into_pyobject(py)?.into_any().unbind()),
        })
        .collect()
}

/// Re-checks every shard of a manifest; returns the record count.
#[pyfunction]
fn verify_shards(py: Python<'_>, manifest: PathBuf) -> PyResult<u64> {
    py.detach(|| shard::verify(&manifest)).map_err(py_err)
}

/// Adds `times` layers to the checkpoint at `src`, writes it to `dst` and
/// returns the new layer count.
#[pyfunction]
#[pyo3(signature = (src, dst, times=1))]
fn grow_checkpoint(src: PathBuf, dst: PathBuf, times: usize) -> PyResult<usize> {
    let mut ck = Checkpoint::load(&src).map_err(py_err)?;
    for _ in 0..times {
        ck = layer_stack::grow(&ck).map_err(py_err)?;
    }
    ck.save(&dst).map_err(py_err)?;
    ck.layer_count().map_err(py_err)
}

/// Runs the command line in-process and returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv = std::iter::once("currikit".to_string()).chain(args);
    py.detach(|| currikit_core::cli::main_with(argv))
}

#[pymodule]
#[pyo3(name = "currikit")]
fn currikit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CurrikitError", m.py().get_type::<CurrikitError>())?;
    m.add("IntegrityError", m.py().get_type::<IntegrityError>())?;
    m.add("FormatError", m.py().get_type::<FormatError>())?;
    m.add("IGNORE_LABEL", masking::IGNORE_LABEL)?;
    m.add("PERMUTATION_SCHEME", shard::PERMUTATION_SCHEME)?;
    m.add_class::<PySplitMix64>()?;
    m.add_class::<PyTokenizer>()?;
    m.add_class::<PyRegistry>()?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(epoch_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(mask, m)?)?;
    m.add_function(wrap_pyfunction!(read_shards, m)?)?;
    m.add_function(wrap_pyfunction!(verify_shards, m)?)?;
    m.add_function(wrap_pyfunction!(grow_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
