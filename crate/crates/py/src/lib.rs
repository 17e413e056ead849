//! Python bindings: embedding, retrieval, the offline pipeline, the
//! router, reward shaping, and the synthetic environment's training
//! loop and oracle.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::str::FromStr;
use tierroute_core::backend::BackendSpec;
use tierroute_core::corpus::{self, Chunk, ChunkStore};
use tierroute_core::pipeline::{run_pipeline, PipelineContext};
use tierroute_core::reward::{self, PriceTable, RewardWindows};
use tierroute_core::router::{
    self, encode_state, forward, select_action, ActionMode, CheckpointMeta, RouterArch,
    RouterParams,
};
use tierroute_core::simenv::{self, SimConfig, SimEnv};
use tierroute_core::trainer::{self, PPOConfig, Split, TrainSettings};
use tierroute_core::types::{ModuleId, Strategy, Tier, TierAssignment};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_tier(s: &str) -> PyResult<Tier> {
    Tier::from_str(s).map_err(value_err)
}

fn parse_module(s: &str) -> PyResult<ModuleId> {
    let lower = s.to_ascii_lowercase();
    ModuleId::ORDER
        .iter()
        .copied()
        .find(|m| m.name() == lower)
        .ok_or_else(|| value_err(format!("unknown module '{s}'")))
}

fn parse_assignment(tiers: Vec<String>) -> PyResult<TierAssignment> {
    if tiers.len() != 5 {
        return Err(value_err(format!(
            "expected 5 tiers (one per module), got {}",
            tiers.len()
        )));
    }
    let mut out = TierAssignment::uniform(Tier::Low);
    for (i, t) in tiers.iter().enumerate() {
        out.0[i] = parse_tier(t)?;
    }
    Ok(out)
}

fn chunks_from_texts(texts: &[String]) -> Vec<Chunk> {
    texts
        .iter()
        .enumerate()
        .map(|(id, text)| Chunk {
            id,
            text: text.clone(),
            token_count: corpus::tokenize(text).len(),
            meta: None,
        })
        .collect()
}

/// Deterministic hashed text embedder.
#[pyclass(name = "Embedder")]
struct PyEmbedder {
    inner: corpus::Embedder,
}

#[pymethods]
impl PyEmbedder {
    #[new]
    fn new(dim: usize) -> PyResult<PyEmbedder> {
        if dim == 0 {
            return Err(value_err("embedding dimension must be positive"));
        }
        Ok(PyEmbedder { inner: corpus::Embedder::new(dim) })
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        self.inner.embed(text)
    }

    fn cosine(&self, a: &str, b: &str) -> f64 {
        corpus::cosine(&self.inner.embed(a), &self.inner.embed(b))
    }
}

/// The tier-routing policy network.
#[pyclass(name = "Router")]
struct PyRouter {
    params: RouterParams,
    embedder: corpus::Embedder,
    seed: u64,
}

#[pymethods]
impl PyRouter {
    #[new]
    #[pyo3(signature = (embed_dim=64, hidden=128, seed=0))]
    fn new(embed_dim: usize, hidden: usize, seed: u64) -> PyResult<PyRouter> {
        if embed_dim == 0 || hidden == 0 {
            return Err(value_err("router dimensions must be positive"));
        }
        let arch = RouterArch { embed_dim, hidden };
        Ok(PyRouter {
            params: RouterParams::init(arch, seed),
            embedder: corpus::Embedder::new(embed_dim),
            seed,
        })
    }

    fn param_count(&self) -> usize {
        self.params.arch.param_count()
    }

    /// Tier probabilities and value estimate for one module decision.
    fn forward(&self, query: &str, module: &str, input_text: &str) -> PyResult<(Vec<f64>, f64)> {
        let module = parse_module(module)?;
        let state = encode_state(query, module, input_text, &self.embedder);
        let pass = forward(&self.params, &state).map_err(value_err)?;
        Ok((pass.output.probs.to_vec(), pass.output.value))
    }

    /// Greedy tier pick for one module decision.
    fn greedy_tier(&self, query: &str, module: &str, input_text: &str) -> PyResult<String> {
        let module = parse_module(module)?;
        let state = encode_state(query, module, input_text, &self.embedder);
        let pass = forward(&self.params, &state).map_err(value_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(select_action(&pass.output, ActionMode::Greedy, &mut rng).tier.to_string())
    }

    /// Greedy tiers for all five modules given per-module input texts.
    fn greedy_assignment(&self, query: &str, inputs: Vec<String>) -> PyResult<Vec<String>> {
        if inputs.len() != 5 {
            return Err(value_err("expected 5 module input texts"));
        }
        let mut out = Vec::with_capacity(5);
        for module in ModuleId::ORDER {
            out.push(self.greedy_tier(query, module.name(), &inputs[module.index()])?);
        }
        Ok(out)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let meta = CheckpointMeta {
            strategy: Strategy::Simulated,
            lambda: 0.0,
            step: 0,
            seed: self.seed,
        };
        router::save_checkpoint(&path, &self.params, &meta).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyRouter> {
        let (params, meta) = router::load_checkpoint(&path).map_err(value_err)?;
        let embedder = corpus::Embedder::new(params.arch.embed_dim);
        Ok(PyRouter { params, embedder, seed: meta.seed })
    }
}

/// Sliding-window reward shaping.
#[pyclass(name = "RewardWindows")]
struct PyRewardWindows {
    inner: RewardWindows,
}

#[pymethods]
impl PyRewardWindows {
    #[new]
    #[pyo3(signature = (window=256, epsilon=1e-8))]
    fn new(window: usize, epsilon: f64) -> PyRewardWindows {
        PyRewardWindows { inner: RewardWindows::new(window, epsilon) }
    }

    fn cost_reward(&mut self, c_raw: f64) -> f64 {
        self.inner.cost_reward(c_raw)
    }

    fn push_task_reward(&mut self, r_task: f64) {
        self.inner.push_task_reward(r_task);
    }

    fn push_cost_reward(&mut self, r_cost: f64) {
        self.inner.push_cost_reward(r_cost);
    }

    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn total_reward(&self, r_task: f64, r_cost: f64, lambda: f64) -> f64 {
        reward::total_reward(r_task, r_cost, self.inner.alpha(), lambda)
    }
}

/// Multiset token F1 of a prediction against gold answers.
#[pyfunction]
fn token_f1(prediction: &str, golds: Vec<String>) -> f64 {
    reward::token_f1(prediction, &golds)
}

/// Module names in routing order.
#[pyfunction]
fn modules() -> Vec<String> {
    ModuleId::ORDER.iter().map(|m| m.name().to_string()).collect()
}

/// Tier names from cheapest to most capable.
#[pyfunction]
fn tiers() -> Vec<String> {
    Tier::ALL.iter().map(|t| t.to_string()).collect()
}

/// Top-k chunk retrieval over a list of texts; returns (id, text)
/// pairs by descending cosine similarity.
#[pyfunction]
#[pyo3(signature = (query, texts, k=5, embed_dim=768))]
fn retrieve(query: &str, texts: Vec<String>, k: usize, embed_dim: usize) -> PyResult<Vec<(usize, String)>> {
    if k == 0 {
        return Err(value_err("k must be at least 1"));
    }
    let embedder = corpus::Embedder::new(embed_dim);
    let store = ChunkStore::build(chunks_from_texts(&texts), &embedder);
    let query_emb = embedder.embed(query);
    Ok(corpus::retrieve_by_embedding(&query_emb, &store, k)
        .into_iter()
        .map(|c| (c.id, c.text))
        .collect())
}

/// Runs the offline extraction pipeline (heuristic and embedding
/// backends only) over chunk texts at the given tier assignment.
#[pyfunction]
#[pyo3(signature = (query, chunks, tiers, embed_dim=768))]
fn extract_memory(
    py: Python<'_>,
    query: &str,
    chunks: Vec<String>,
    tiers: Vec<String>,
    embed_dim: usize,
) -> PyResult<Py<PyDict>> {
    let assignment = parse_assignment(tiers)?;
    let backends = BackendSpec::implementation(None);
    let prices = PriceTable::default();
    let embedder = corpus::Embedder::new(embed_dim);
    let ctx = PipelineContext::offline(&backends, &prices, &embedder);
    let retrieved = chunks_from_texts(&chunks);
    let output = run_pipeline(&ctx, query, &retrieved, &assignment).map_err(value_err)?;
    let result = PyDict::new(py);
    result.set_item("memory", output.memory)?;
    result.set_item(
        "filtered",
        output.filtered_chunks.iter().map(|c| c.text.clone()).collect::<Vec<_>>(),
    )?;
    result.set_item("entity", output.entity_relations)?;
    result.set_item("temporal", output.temporal_facts)?;
    result.set_item("topic", output.topic_relations)?;
    result.set_item("cost", reward::raw_cost(&output.ledger))?;
    result.set_item("ledger_len", output.ledger.len())?;
    Ok(result.into())
}

/// The synthetic oracle's best assignment for one requirement set at
/// one lambda: (tiers, r_task, cost).
#[pyfunction]
#[pyo3(signature = (required, lam=0.0))]
fn sim_oracle(required: Vec<String>, lam: f64) -> PyResult<(Vec<String>, f64, f64)> {
    let required = parse_assignment(required)?;
    let config = SimConfig::default();
    let task = simenv::exhaustive_tasks("py")
        .into_iter()
        .find(|t| t.required == required)
        .expect("every assignment is enumerated");
    let choice = simenv::oracle_best(&config, &task, lam);
    let tiers = choice.assignment.0.iter().map(|t| t.to_string()).collect();
    Ok((tiers, choice.r_task, choice.c_raw))
}

/// Trains a small router on the synthetic environment and returns a
/// summary dict; writes run artifacts under `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, lam=0.0, seed=0, max_steps=5, batch=8, train=20, val=8))]
#[allow(clippy::too_many_arguments)]
fn train_sim(
    py: Python<'_>,
    out_dir: PathBuf,
    lam: f64,
    seed: u64,
    max_steps: usize,
    batch: usize,
    train: usize,
    val: usize,
) -> PyResult<Py<PyDict>> {
    let sim = SimConfig { train, val, test: val.max(1), embed_dim: 16, ..SimConfig::default() };
    let env = SimEnv::new(sim);
    let settings = TrainSettings {
        ppo: PPOConfig { lambda: lam, seed, max_steps, batch, val_every: 2, ..PPOConfig::default() },
        arch: RouterArch { embed_dim: 16, hidden: 24 },
        strategy: Strategy::Simulated,
        out_dir,
        log_episodes: true,
    };
    let outcome = trainer::train(&settings, &env).map_err(value_err)?;
    let windows = RewardWindows::new(settings.ppo.window, settings.ppo.epsilon);
    let report = trainer::evaluate(&outcome.final_params, &env, Split::Val, lam, &windows, None)
        .map_err(value_err)?;
    let result = PyDict::new(py);
    result.set_item("steps", outcome.steps_run)?;
    result.set_item("val_r_task", report.mean_r_task)?;
    result.set_item("val_cost", report.mean_cost)?;
    result.set_item("run_log", outcome.run_log_path)?;
    result.set_item("final_checkpoint", outcome.final_checkpoint)?;
    result.set_item("best_checkpoint", outcome.best_checkpoint)?;
    Ok(result.into())
}

#[pymodule]
fn tierroute(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbedder>()?;
    m.add_class::<PyRouter>()?;
    m.add_class::<PyRewardWindows>()?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(modules, m)?)?;
    m.add_function(wrap_pyfunction!(tiers, m)?)?;
    m.add_function(wrap_pyfunction!(retrieve, m)?)?;
    m.add_function(wrap_pyfunction!(extract_memory, m)?)?;
    m.add_function(wrap_pyfunction!(sim_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(train_sim, m)?)?;
    Ok(())
}
