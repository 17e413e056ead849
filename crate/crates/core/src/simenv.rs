//! Synthetic routing environment. Each task assigns every module a
//! required tier; choosing at least the required tier succeeds with
//! probability 1, one tier below degrades to 0.6, two below to 0.3.
//! Task reward is the product of per-module success probabilities,
//! cost is the sum of per-module tier prices, and module input texts
//! carry tier marker tokens so the requirement is observable.

use crate::corpus::Embedder;
use crate::error::Result;
use crate::reward::DEGENERATE_SPREAD;
use crate::router::{encode_state, forward, select_action, ActionMode, RouterArch, RouterParams};
use crate::trainer::{EpisodeEnv, RolloutResult, Split, Transition};
use crate::types::{all_assignments, ModuleId, Tier, TierAssignment};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Router shape used for synthetic runs; small enough to train in
/// seconds per sweep point.
pub const SIM_ARCH: RouterArch = RouterArch { embed_dim: 64, hidden: 128 };

fn default_success_table() -> [[f64; 3]; 3] {
    [[1.0, 1.0, 1.0], [0.6, 1.0, 1.0], [0.3, 0.6, 1.0]]
}

fn default_cost_table() -> [[f64; 3]; 5] {
    [[0.0, 0.002, 0.010]; 5]
}

fn default_tier_distribution() -> [f64; 3] {
    [1.0 / 3.0; 3]
}

fn default_train() -> usize {
    500
}

fn default_val() -> usize {
    100
}

fn default_test() -> usize {
    100
}

fn default_embed_dim() -> usize {
    SIM_ARCH.embed_dim
}

/// Synthetic environment settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Success probability indexed by [required tier][chosen tier].
    pub success_table: [[f64; 3]; 3],
    /// Cost in dollars indexed by [module][chosen tier].
    pub cost_table: [[f64; 3]; 5],
    /// Sampling weights for required tiers when generating tasks.
    pub tier_distribution: [f64; 3],
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Task generation seed, independent of the training seed.
    pub seed: u64,
    /// Replaces every split with all 243 requirement combinations.
    pub exhaustive: bool,
    /// Samples per-module Bernoulli success instead of using expected
    /// values.
    pub noise: bool,
    pub embed_dim: usize,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            success_table: default_success_table(),
            cost_table: default_cost_table(),
            tier_distribution: default_tier_distribution(),
            train: default_train(),
            val: default_val(),
            test: default_test(),
            seed: 0,
            exhaustive: false,
            noise: false,
            embed_dim: default_embed_dim(),
        }
    }
}

/// One synthetic task: a per-module tier requirement plus the texts
/// the router observes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub id: String,
    pub required: TierAssignment,
    pub query_text: String,
    pub feature_text: [String; 5],
}

fn tier_marker(tier: Tier) -> &'static str {
    match tier {
        Tier::Low => "low",
        Tier::Mid => "mid",
        Tier::High => "high",
    }
}

fn make_task(id: String, required: TierAssignment) -> SyntheticTask {
    let markers: Vec<&str> = required.0.iter().map(|t| tier_marker(*t)).collect();
    let query_text = format!(
        "task {id} needs {} {} {} {} {} handling",
        markers[0], markers[1], markers[2], markers[3], markers[4]
    );
    let feature_text = std::array::from_fn(|m| {
        let module = ModuleId::from_index(m).expect("five modules").name();
        let marker = markers[m];
        format!("{module} signal {marker} {marker} {marker}")
    });
    SyntheticTask { id, required, query_text, feature_text }
}

/// Samples `n` tasks with requirements drawn from the configured tier
/// distribution.
pub fn generate_tasks(config: &SimConfig, seed: u64, n: usize, id_prefix: &str) -> Vec<SyntheticTask> {
    let weights = config.tier_distribution;
    let total: f64 = weights.iter().sum();
    assert!(
        total > 0.0 && weights.iter().all(|w| *w >= 0.0),
        "tier distribution must be non-negative with positive mass"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut required = TierAssignment::uniform(Tier::Low);
            for module in ModuleId::ORDER {
                let draw: f64 = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut tier = Tier::High;
                for t in Tier::ALL {
                    acc += weights[t.index()];
                    if draw < acc {
                        tier = t;
                        break;
                    }
                }
                required.set(module, tier);
            }
            make_task(format!("{id_prefix}-{i}"), required)
        })
        .collect()
}

/// All 243 requirement combinations in lexicographic order.
pub fn exhaustive_tasks(id_prefix: &str) -> Vec<SyntheticTask> {
    all_assignments()
        .into_iter()
        .enumerate()
        .map(|(i, required)| make_task(format!("{id_prefix}-{i}"), required))
        .collect()
}

/// Success probability for one module decision.
pub fn success_prob(config: &SimConfig, required: Tier, chosen: Tier) -> f64 {
    config.success_table[required.index()][chosen.index()]
}

/// Expected task reward and raw cost for an assignment, noise-free.
pub fn deterministic_outcome(
    config: &SimConfig,
    task: &SyntheticTask,
    assignment: &TierAssignment,
) -> (f64, f64) {
    let mut r_task = 1.0;
    let mut c_raw = 0.0;
    for module in ModuleId::ORDER {
        let required = task.required.get(module);
        let chosen = assignment.get(module);
        r_task *= success_prob(config, required, chosen);
        c_raw += config.cost_table[module.index()][chosen.index()];
    }
    (r_task, c_raw)
}

/// Realized task reward: expected values, or a product of Bernoulli
/// draws when noise is on.
pub fn simulate_episode(
    config: &SimConfig,
    task: &SyntheticTask,
    assignment: &TierAssignment,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let (expected, c_raw) = deterministic_outcome(config, task, assignment);
    if !config.noise {
        return (expected, c_raw);
    }
    let mut r_task = 1.0;
    for module in ModuleId::ORDER {
        let p = success_prob(config, task.required.get(module), assignment.get(module));
        if rng.random::<f64>() >= p {
            r_task = 0.0;
        }
    }
    (r_task, c_raw)
}

/// The oracle's pick for one task at one lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleChoice {
    pub assignment: TierAssignment,
    pub r_task: f64,
    pub c_raw: f64,
    pub r_cost: f64,
    pub objective: f64,
}

/// Enumerates all 243 assignments and maximizes
/// r_task + lambda * r_cost, where r_cost min-max normalizes the
/// square-root cost within the task's own assignment set (0.5 when
/// the spread degenerates). Ties break toward lower cost, then
/// lexicographic order.
pub fn oracle_best(config: &SimConfig, task: &SyntheticTask, lambda: f64) -> OracleChoice {
    let assignments = all_assignments();
    let outcomes: Vec<(f64, f64)> = assignments
        .iter()
        .map(|a| deterministic_outcome(config, task, a))
        .collect();
    let sqrt_costs: Vec<f64> = outcomes.iter().map(|(_, c)| c.sqrt()).collect();
    let min = sqrt_costs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = sqrt_costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = max - min;
    let mut best: Option<OracleChoice> = None;
    for (i, assignment) in assignments.into_iter().enumerate() {
        let (r_task, c_raw) = outcomes[i];
        let r_cost = if spread < DEGENERATE_SPREAD {
            0.5
        } else {
            1.0 - (sqrt_costs[i] - min) / spread
        };
        let objective = r_task + lambda * r_cost;
        let candidate = OracleChoice { assignment, r_task, c_raw, r_cost, objective };
        let replace = match &best {
            None => true,
            Some(b) => {
                candidate.objective > b.objective
                    || (candidate.objective == b.objective && candidate.c_raw < b.c_raw)
            }
        };
        if replace {
            best = Some(candidate);
        }
    }
    best.expect("non-empty assignment set")
}

/// Oracle averages over a task set.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub lambda: f64,
    pub mean_r_task: f64,
    pub mean_cost: f64,
    pub mean_objective: f64,
}

pub fn oracle_summary(config: &SimConfig, tasks: &[SyntheticTask], lambda: f64) -> OracleSummary {
    assert!(!tasks.is_empty(), "oracle needs at least one task");
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut sum_o = 0.0;
    for task in tasks {
        let choice = oracle_best(config, task, lambda);
        sum_r += choice.r_task;
        sum_c += choice.c_raw;
        sum_o += choice.objective;
    }
    let n = tasks.len() as f64;
    OracleSummary {
        lambda,
        mean_r_task: sum_r / n,
        mean_cost: sum_c / n,
        mean_objective: sum_o / n,
    }
}

/// The synthetic environment: generated (or exhaustive) task splits
/// plus the embedder the router observes them through.
pub struct SimEnv {
    pub config: SimConfig,
    pub embedder: Embedder,
    splits: [Vec<SyntheticTask>; 3],
}

impl SimEnv {
    pub fn new(config: SimConfig) -> SimEnv {
        let embedder = Embedder::new(config.embed_dim);
        let splits = if config.exhaustive {
            [
                exhaustive_tasks("sim-ex"),
                exhaustive_tasks("sim-ex"),
                exhaustive_tasks("sim-ex"),
            ]
        } else {
            let total = config.train + config.val + config.test;
            let mut tasks = generate_tasks(&config, config.seed, total, "sim");
            let test = tasks.split_off(config.train + config.val);
            let val = tasks.split_off(config.train);
            [tasks, val, test]
        };
        SimEnv { config, embedder, splits }
    }

    pub fn tasks(&self, split: Split) -> &[SyntheticTask] {
        &self.splits[split as usize]
    }
}

impl EpisodeEnv for SimEnv {
    fn len(&self, split: Split) -> usize {
        self.splits[split as usize].len()
    }

    fn run_episode(
        &self,
        split: Split,
        index: usize,
        params: &RouterParams,
        mode: ActionMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutResult> {
        let task = &self.splits[split as usize][index];
        let mut transitions = Vec::with_capacity(5);
        let mut assignment = TierAssignment::uniform(Tier::Low);
        for module in ModuleId::ORDER {
            let state = encode_state(
                &task.query_text,
                module,
                &task.feature_text[module.index()],
                &self.embedder,
            );
            let pass = forward(params, &state)?;
            let choice = select_action(&pass.output, mode, rng);
            assignment.set(module, choice.tier);
            transitions.push(Transition {
                state,
                action: choice.tier,
                log_prob_old: choice.log_prob,
                value_old: pass.output.value,
                module,
            });
        }
        let (r_task, c_raw) = simulate_episode(&self.config, task, &assignment, rng);
        Ok(RolloutResult {
            transitions,
            r_task,
            c_raw,
            query_id: task.id.clone(),
            assignment,
            prediction: None,
        })
    }
}
