//! Reward computation: raw dollar cost, sliding-window cost
//! normalization, variance-based reward-scale alignment, the total
//! scalar reward, and the task metrics (token F1 and the LLM judge).

use crate::error::{Error, Result};
use crate::templates;
use crate::types::{ModuleId, Tier};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::collections::VecDeque;
use std::path::Path;

/// Entries below this count leave a window in warmup.
pub const WARMUP: usize = 16;

/// Spread below this is treated as degenerate when normalizing.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// One backend call's token usage and price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub module: ModuleId,
    pub tier: Tier,
    pub model_id: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: f64,
}

impl CostRecord {
    /// A zero-cost record for heuristic or simulated backends.
    pub fn free(module: ModuleId, tier: Tier) -> CostRecord {
        CostRecord {
            module,
            tier,
            model_id: None,
            input_tokens: 0,
            output_tokens: 0,
            usd: 0.0,
        }
    }

    /// A remote-call record priced from the table.
    pub fn remote(
        module: ModuleId,
        tier: Tier,
        model_id: &str,
        input_tokens: u64,
        output_tokens: u64,
        table: &PriceTable,
    ) -> Result<CostRecord> {
        let usd = price_of(Some(model_id), input_tokens, output_tokens, table)?;
        Ok(CostRecord {
            module,
            tier,
            model_id: Some(model_id.to_string()),
            input_tokens,
            output_tokens,
            usd,
        })
    }
}

/// Per-million-token prices for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    #[serde(rename = "in")]
    pub input_usd_per_million: f64,
    #[serde(rename = "out")]
    pub output_usd_per_million: f64,
}

/// Model-id to price mapping, loaded from a JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub HashMap<String, ModelPrice>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<PriceTable> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad price table {}: {e}", path.display())))
    }

    pub fn get(&self, model_id: &str) -> Option<ModelPrice> {
        self.0.get(model_id).copied()
    }
}

/// Prices one call. Records without a model id are non-LLM tiers and
/// cost zero regardless of the table; unknown remote models are a
/// configuration error.
pub fn price_of(
    model_id: Option<&str>,
    input_tokens: u64,
    output_tokens: u64,
    table: &PriceTable,
) -> Result<f64> {
    let Some(id) = model_id else {
        return Ok(0.0);
    };
    let price = table
        .get(id)
        .ok_or_else(|| Error::Config(format!("no price entry for model {id:?}")))?;
    Ok(input_tokens as f64 * price.input_usd_per_million / 1e6
        + output_tokens as f64 * price.output_usd_per_million / 1e6)
}

/// Sum of the ledger's usd fields.
pub fn raw_cost(ledger: &[CostRecord]) -> f64 {
    ledger.iter().map(|r| r.usd).sum()
}

/// Sliding windows backing cost normalization and reward-scale
/// alignment.
#[derive(Debug, Clone)]
pub struct RewardWindows {
    cost_window: VecDeque<f64>,
    task_window: VecDeque<f64>,
    cost_reward_window: VecDeque<f64>,
    capacity: usize,
    epsilon: f64,
}

impl RewardWindows {
    pub fn new(capacity: usize, epsilon: f64) -> RewardWindows {
        assert!(capacity >= 1, "window capacity must be >= 1");
        RewardWindows {
            cost_window: VecDeque::with_capacity(capacity),
            task_window: VecDeque::with_capacity(capacity),
            cost_reward_window: VecDeque::with_capacity(capacity),
            capacity,
            epsilon,
        }
    }

    fn push(queue: &mut VecDeque<f64>, capacity: usize, value: f64) {
        if queue.len() == capacity {
            queue.pop_front();
        }
        queue.push_back(value);
    }

    /// Normalizes a raw episode cost into `r_cost` in [0, 1].
    ///
    /// The cost joins the window first (so the window is never empty and
    /// extreme early costs self-clip), then `sqrt(c_raw)` is positioned
    /// between the window's 5th and 95th percentiles of sqrt costs.
    /// Warmup or a degenerate spread yields the neutral 0.5.
    pub fn cost_reward(&mut self, c_raw: f64) -> f64 {
        assert!(c_raw >= 0.0, "raw cost must be non-negative");
        Self::push(&mut self.cost_window, self.capacity, c_raw);
        Self::normalize(self.cost_window.iter().copied(), c_raw)
    }

    /// The normalization `cost_reward` would apply, without mutating the
    /// window. Used by read-only evaluation.
    pub fn cost_reward_frozen(&self, c_raw: f64) -> f64 {
        assert!(c_raw >= 0.0, "raw cost must be non-negative");
        Self::normalize(self.cost_window.iter().copied(), c_raw)
    }

    fn normalize(window: impl Iterator<Item = f64>, c_raw: f64) -> f64 {
        let mut sqrts: Vec<f64> = window.map(f64::sqrt).collect();
        if sqrts.len() < WARMUP {
            return 0.5;
        }
        sqrts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q5 = quantile_sorted(&sqrts, 0.05);
        let q95 = quantile_sorted(&sqrts, 0.95);
        if q95 - q5 < DEGENERATE_SPREAD {
            return 0.5;
        }
        let c_tilde = (c_raw.sqrt() - q5) / (q95 - q5);
        1.0 - c_tilde.clamp(0.0, 1.0)
    }

    /// Records the episode's task reward for alignment.
    pub fn push_task_reward(&mut self, r_task: f64) {
        Self::push(&mut self.task_window, self.capacity, r_task);
    }

    /// Records the episode's cost reward for alignment.
    pub fn push_cost_reward(&mut self, r_cost: f64) {
        Self::push(&mut self.cost_reward_window, self.capacity, r_cost);
    }

    /// Variance-based reward-scale alignment factor:
    /// `std(task rewards) / (std(cost rewards) + epsilon)`, clamped to
    /// [0, 10]. Returns 1 while either window is in warmup.
    pub fn alpha(&self) -> f64 {
        if self.task_window.len() < WARMUP || self.cost_reward_window.len() < WARMUP {
            return 1.0;
        }
        let s_task = population_std(self.task_window.iter().copied());
        let s_cost = population_std(self.cost_reward_window.iter().copied());
        (s_task / (s_cost + self.epsilon)).clamp(0.0, 10.0)
    }

    pub fn cost_window_len(&self) -> usize {
        self.cost_window.len()
    }

    pub fn task_window_len(&self) -> usize {
        self.task_window.len()
    }
}

/// Linear-interpolation quantile at rank `q * (n - 1)` over a sorted
/// slice. This exact rule is normative: any consumer comparing against
/// it must use the same interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile rank out of range");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

fn population_std(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// The fully assembled reward for one episode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeReward {
    pub r_task: f64,
    pub c_raw: f64,
    pub r_cost: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub r: f64,
}

impl EpisodeReward {
    pub fn assemble(r_task: f64, c_raw: f64, r_cost: f64, alpha: f64, lambda: f64) -> EpisodeReward {
        EpisodeReward {
            r_task,
            c_raw,
            r_cost,
            alpha,
            lambda,
            r: total_reward(r_task, r_cost, alpha, lambda),
        }
    }
}

/// The scalar PPO reward: `r_task + lambda * alpha * r_cost`.
pub fn total_reward(r_task: f64, r_cost: f64, alpha: f64, lambda: f64) -> f64 {
    r_task + lambda * alpha * r_cost
}

/// Max-over-golds multiset token F1 between a prediction and the gold
/// answers, tokenized with the corpus tokenizer (so it is case- and
/// punctuation-insensitive).
pub fn token_f1(prediction: &str, gold_answers: &[String]) -> f64 {
    assert!(!gold_answers.is_empty(), "gold answers must be non-empty");
    let pred = crate::corpus::tokenize(prediction);
    gold_answers
        .iter()
        .map(|g| single_f1(&pred, &crate::corpus::tokenize(g)))
        .fold(0.0, f64::max)
}

fn single_f1(pred: &[String], gold: &[String]) -> f64 {
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Anything that can complete a judge prompt.
pub trait JudgeBackend {
    fn complete(&self, prompt: &str) -> Result<String>;
}

impl<F> JudgeBackend for F
where
    F: Fn(&str) -> Result<String>,
{
    fn complete(&self, prompt: &str) -> Result<String> {
        self(prompt)
    }
}

/// Renders the judge prompt, calls the backend, and parses the strict
/// JSON verdict. An unparsable or out-of-set score is retried once;
/// a second failure is an error and the caller excludes the query from
/// judge aggregates.
pub fn judge_score(
    question: &str,
    gold_answers: &[String],
    prediction: &str,
    judge: &dyn JudgeBackend,
) -> Result<f64> {
    let prompt = templates::render_judge(question, gold_answers, prediction);
    let mut last_err = None;
    for _ in 0..2 {
        let completion = judge.complete(&prompt)?;
        match templates::parse_judge(&completion) {
            Ok(v) => return Ok(v.score),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("loop ran"))
}
