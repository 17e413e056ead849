//! PPO training over routed episodes. Each query is one episode with
//! five tier decisions and a single terminal reward; updates use the
//! joint likelihood ratio across the five decisions, a critic-baseline
//! advantage, the clipped surrogate with value and entropy terms, and
//! Adam behind global gradient-norm clipping.

use crate::backend::GenerationParams;
use crate::corpus::{retrieve, Chunk, DatasetRecord, Embedder, QueryRecord};
use crate::error::{Error, Result};
use crate::pipeline::{self, PipelineContext};
use crate::reward::{self, EpisodeReward, RewardWindows};
use crate::router::{
    self, encode_state, forward, select_action, ActionMode, CheckpointMeta, RouterArch,
    RouterParams, RouterState,
};
use crate::templates::{extract_answer_span, render_answer_prompt, AnswerPromptKind};
use crate::types::{ModuleId, Strategy, Tier, TierAssignment};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

/// PPO and schedule hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PPOConfig {
    pub lr: f64,
    pub clip: f64,
    pub c_v: f64,
    pub c_e: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub batch: usize,
    pub max_steps: usize,
    pub lambda: f64,
    pub window: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Pins the reward-scale alignment factor (ablation switch);
    /// None keeps the adaptive value.
    pub force_alpha: Option<f64>,
    /// Validation cadence in training steps.
    pub val_every: usize,
}

impl Default for PPOConfig {
    fn default() -> PPOConfig {
        PPOConfig {
            lr: 3e-4,
            clip: 0.2,
            c_v: 0.5,
            c_e: 0.01,
            epochs: 4,
            grad_clip: 0.5,
            batch: 32,
            max_steps: 600,
            lambda: 0.0,
            window: 256,
            epsilon: 1e-8,
            seed: 0,
            force_alpha: None,
            val_every: 20,
        }
    }
}

/// One routing decision as collected.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: RouterState,
    pub action: Tier,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub module: ModuleId,
}

/// One query's routed episode with its assembled reward.
#[derive(Debug, Clone)]
pub struct EpisodeTrajectory {
    pub transitions: Vec<Transition>,
    pub reward: EpisodeReward,
    pub query_id: String,
}

/// Which slice of the data an episode comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// What an environment returns for one routed episode, before reward
/// shaping.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub transitions: Vec<Transition>,
    pub r_task: f64,
    pub c_raw: f64,
    pub query_id: String,
    pub assignment: TierAssignment,
    pub prediction: Option<String>,
}

/// A source of routed episodes: the synthetic environment or a
/// dataset-backed pipeline.
pub trait EpisodeEnv: Sync {
    fn len(&self, split: Split) -> usize;
    fn run_episode(
        &self,
        split: Split,
        index: usize,
        params: &RouterParams,
        mode: ActionMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutResult>;
    /// Judge-scores a prediction when a judge backend is configured.
    fn judge_prediction(&self, split: Split, index: usize, prediction: &str) -> Option<Result<f64>> {
        let _ = (split, index, prediction);
        None
    }
}

/// Shuffles record indices with the seed and cuts 6/2/2.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
    let train_n = n * 6 / 10;
    let val_n = n * 2 / 10;
    let train = indices[..train_n].to_vec();
    let val = indices[train_n..train_n + val_n].to_vec();
    let test = indices[train_n + val_n..].to_vec();
    (train, val, test)
}

/// Per-episode advantages: reward minus the mean of the five stored
/// value estimates, then batch-standardized.
pub fn advantages(batch: &[EpisodeTrajectory]) -> Vec<f64> {
    assert!(!batch.is_empty(), "advantages need a non-empty batch");
    let raw: Vec<f64> = batch
        .iter()
        .map(|e| {
            let mean_v = e.transitions.iter().map(|t| t.value_old).sum::<f64>()
                / e.transitions.len() as f64;
            e.reward.r - mean_v
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    raw.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Loss components for one PPO evaluation of a batch.
#[derive(Debug, Clone, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Joint ratio per episode.
    #[serde(skip)]
    pub rho: Vec<f64>,
    /// Fraction of episodes with |rho - 1| > 0.5, a drift monitor.
    pub ratio_drift: f64,
}

/// Evaluates the PPO loss on a batch and accumulates its gradient.
///
/// Per episode, rho is the exponential of the summed new-minus-old
/// action log-probabilities; the policy term is the clipped surrogate
/// over episodes, the value term regresses every decision's value to
/// the episode reward, and the entropy bonus averages (not sums)
/// entropy across all module decisions.
pub fn ppo_loss_and_grad(
    params: &RouterParams,
    batch: &[EpisodeTrajectory],
    advantages: &[f64],
    config: &PPOConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    assert_eq!(batch.len(), advantages.len(), "one advantage per episode");
    assert!(!batch.is_empty(), "loss needs a non-empty batch");
    let b = batch.len() as f64;
    let total_transitions: usize = batch.iter().map(|e| e.transitions.len()).sum();
    let t = total_transitions as f64;

    let mut grads = vec![0.0f64; params.arch.param_count()];
    let mut policy_loss = 0.0;
    let mut value_loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut rhos = Vec::with_capacity(batch.len());

    for (episode, &adv) in batch.iter().zip(advantages) {
        let passes: Vec<router::ForwardPass> = episode
            .transitions
            .iter()
            .map(|tr| forward(params, &tr.state))
            .collect::<Result<_>>()?;
        let sum_new: f64 = passes
            .iter()
            .zip(&episode.transitions)
            .map(|(p, tr)| p.output.probs[tr.action.index()].ln())
            .sum();
        let sum_old: f64 = episode.transitions.iter().map(|tr| tr.log_prob_old).sum();
        let rho = (sum_new - sum_old).exp();
        rhos.push(rho);

        let clipped = rho.clamp(1.0 - config.clip, 1.0 + config.clip);
        let unclipped_term = rho * adv;
        let clipped_term = clipped * adv;
        let surrogate = unclipped_term.min(clipped_term);
        policy_loss -= surrogate / b;
        // Subgradient: the unclipped branch carries d(surrogate)/d(rho)
        // = adv; a selected clipped branch is constant in rho.
        let dsurr_drho = if unclipped_term <= clipped_term { adv } else { 0.0 };
        let policy_coeff = -(dsurr_drho * rho) / b;

        for (pass, tr) in passes.iter().zip(&episode.transitions) {
            let probs = pass.output.probs;
            let value = pass.output.value;
            let entropy = router::entropy3(probs);
            debug_assert!((-1e-12..=3.0f64.ln() + 1e-12).contains(&entropy));
            entropy_sum += entropy;
            let verr = value - episode.reward.r;
            value_loss += verr * verr / t;

            let mut dlogits = [0.0f64; 3];
            for j in 0..3 {
                let onehot = if j == tr.action.index() { 1.0 } else { 0.0 };
                let dpolicy = policy_coeff * (onehot - probs[j]);
                let dentropy = if probs[j] > 0.0 {
                    (config.c_e / t) * probs[j] * (probs[j].ln() + entropy)
                } else {
                    0.0
                };
                dlogits[j] = dpolicy + dentropy;
            }
            let dvalue = config.c_v * 2.0 * verr / t;
            router::backward(params, pass, dlogits, dvalue, &mut grads);
        }
    }

    let entropy_mean = entropy_sum / t;
    let total = policy_loss + config.c_v * value_loss - config.c_e * entropy_mean;
    if !total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite PPO loss (policy {policy_loss}, value {value_loss}, entropy {entropy_mean})"
        )));
    }
    let drift = rhos.iter().filter(|r| (**r - 1.0).abs() > 0.5).count() as f64 / b;
    Ok((
        LossBreakdown {
            total,
            policy: policy_loss,
            value: value_loss,
            entropy: entropy_mean,
            rho: rhos,
            ratio_drift: drift,
        },
        grads,
    ))
}

/// Scales gradients so the global L2 norm is at most `max_norm`;
/// returns the post-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
        max_norm
    } else {
        norm
    }
}

/// Bias-corrected Adam over the flat parameter vector. Moments are
/// kept in f64; parameters round to f32 after each update.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies global norm clipping then one Adam update in place.
    pub fn step(
        &mut self,
        params: &mut RouterParams,
        grads: &mut [f64],
        lr: f64,
        grad_clip: f64,
    ) {
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        assert_eq!(params.data.len(), self.m.len(), "parameter shape mismatch");
        clip_global_norm(grads, grad_clip);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, &g) in grads.iter().enumerate() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let update = lr * m_hat / (v_hat.sqrt() + self.eps);
            params.data[i] = (params.data[i] as f64 - update) as f32;
        }
    }
}

/// Collects one batch of episodes. Failed episodes are dropped and
/// replaced with resampled training queries (a few attempts each)
/// so transport faults do not punish the policy.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    params: &RouterParams,
    env: &dyn EpisodeEnv,
    split: Split,
    order: &[usize],
    mode: ActionMode,
    windows: &mut RewardWindows,
    config: &PPOConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeTrajectory>> {
    let n = env.len(split);
    assert!(n > 0, "empty split");
    let mut out = Vec::with_capacity(order.len());
    for &planned in order {
        let mut index = planned;
        let mut attempts = 0;
        let rollout = loop {
            match env.run_episode(split, index, params, mode, rng) {
                Ok(r) => break r,
                Err(e) if attempts < 3 => {
                    attempts += 1;
                    eprintln!("episode {index} dropped ({e}); resampling");
                    index = rng.random_range(0..n);
                }
                Err(e) => return Err(e),
            }
        };
        let r_cost = windows.cost_reward(rollout.c_raw);
        windows.push_task_reward(rollout.r_task);
        windows.push_cost_reward(r_cost);
        let alpha = config.force_alpha.unwrap_or_else(|| windows.alpha());
        let reward =
            EpisodeReward::assemble(rollout.r_task, rollout.c_raw, r_cost, alpha, config.lambda);
        out.push(EpisodeTrajectory {
            transitions: rollout.transitions,
            reward,
            query_id: rollout.query_id,
        });
    }
    Ok(out)
}

/// Per-module tier-selection frequencies over a set of assignments.
pub fn tier_ratios(assignments: &[TierAssignment]) -> [[f64; 3]; 5] {
    let mut counts = [[0usize; 3]; 5];
    for a in assignments {
        for (m, tier) in a.0.iter().enumerate() {
            counts[m][tier.index()] += 1;
        }
    }
    let n = assignments.len().max(1) as f64;
    let mut ratios = [[0.0; 3]; 5];
    for m in 0..5 {
        for t in 0..3 {
            ratios[m][t] = counts[m][t] as f64 / n;
        }
    }
    ratios
}

fn trajectory_assignment(episode: &EpisodeTrajectory) -> TierAssignment {
    let mut a = TierAssignment::uniform(Tier::Low);
    for tr in &episode.transitions {
        a.set(tr.module, tr.action);
    }
    a
}

/// One training-step line of the JSONL run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLogLine {
    pub step: usize,
    pub mean_r: f64,
    pub mean_r_task: f64,
    pub mean_cost: f64,
    pub alpha: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub tier_ratio: [[f64; 3]; 5],
}

/// One episode line of the JSONL episode trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTraceRow {
    pub step: usize,
    pub query_id: String,
    pub tiers: [String; 5],
    pub r_task: f64,
    pub c_raw: f64,
    pub r_cost: f64,
    pub alpha: f64,
    pub r: f64,
}

/// Everything `train` leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub final_params: RouterParams,
    pub best_params: RouterParams,
    pub best_val_reward: f64,
    pub steps_run: usize,
    pub run_log_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

/// Full training configuration beyond PPO numbers.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub ppo: PPOConfig,
    pub arch: RouterArch,
    pub strategy: Strategy,
    pub out_dir: PathBuf,
    pub log_episodes: bool,
}

/// Runs the training loop: collect a batch, shape rewards, compute
/// advantages, take the configured PPO epochs (one full-batch Adam
/// step each), log one line, and periodically checkpoint the
/// best-validation-reward parameters. Deterministic for a fixed seed
/// and deterministic environment.
pub fn train(settings: &TrainSettings, env: &dyn EpisodeEnv) -> Result<TrainOutcome> {
    let config = &settings.ppo;
    std::fs::create_dir_all(&settings.out_dir)?;
    let run_log_path = settings.out_dir.join("run_log.jsonl");
    let episodes_path = settings.out_dir.join("episodes.jsonl");
    let final_path = settings.out_dir.join("router_final.ckpt");
    let best_path = settings.out_dir.join("router_best.ckpt");
    let mut run_log = std::io::BufWriter::new(std::fs::File::create(&run_log_path)?);
    let mut episode_log = if settings.log_episodes {
        Some(std::io::BufWriter::new(std::fs::File::create(&episodes_path)?))
    } else {
        None
    };

    let mut params = RouterParams::init(settings.arch, config.seed);
    let mut adam = Adam::new(params.data.len());
    let mut windows = RewardWindows::new(config.window, config.epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_train = env.len(Split::Train);
    assert!(n_train > 0, "training split is empty");

    let meta = |step: usize| CheckpointMeta {
        strategy: settings.strategy,
        lambda: config.lambda,
        step: step as u64,
        seed: config.seed,
    };

    let mut best_params = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let validate = |params: &RouterParams,
                        windows: &RewardWindows,
                        best_params: &mut RouterParams,
                        best_val: &mut f64,
                        step: usize|
     -> Result<()> {
        let report = evaluate(params, env, Split::Val, config.lambda, windows, config.force_alpha)?;
        if report.mean_r > *best_val {
            *best_val = report.mean_r;
            *best_params = params.clone();
            router::save_checkpoint(&best_path, params, &meta(step))?;
        }
        Ok(())
    };

    if config.max_steps == 0 {
        router::save_checkpoint(&final_path, &params, &meta(0))?;
        router::save_checkpoint(&best_path, &params, &meta(0))?;
        run_log.flush()?;
        return Ok(TrainOutcome {
            best_params: params.clone(),
            final_params: params,
            best_val_reward: f64::NAN,
            steps_run: 0,
            run_log_path,
            final_checkpoint: final_path,
            best_checkpoint: best_path,
        });
    }

    let mut steps_run = 0;
    for step in 1..=config.max_steps {
        let order: Vec<usize> =
            (0..config.batch).map(|_| rng.random_range(0..n_train)).collect();
        let batch = collect_rollouts(
            &params,
            env,
            Split::Train,
            &order,
            ActionMode::Sample,
            &mut windows,
            config,
            &mut rng,
        )?;
        if let Some(log) = &mut episode_log {
            for episode in &batch {
                let assignment = trajectory_assignment(episode);
                let row = EpisodeTraceRow {
                    step,
                    query_id: episode.query_id.clone(),
                    tiers: assignment.0.map(|t| t.to_string()),
                    r_task: episode.reward.r_task,
                    c_raw: episode.reward.c_raw,
                    r_cost: episode.reward.r_cost,
                    alpha: episode.reward.alpha,
                    r: episode.reward.r,
                };
                serde_json::to_writer(&mut *log, &row)
                    .map_err(|e| Error::Io(std::io::Error::other(e)))?;
                log.write_all(b"\n")?;
            }
        }

        let adv = advantages(&batch);
        let mut last_loss = None;
        for _ in 0..config.epochs {
            let (loss, mut grads) = ppo_loss_and_grad(&params, &batch, &adv, config)
                .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;
            adam.step(&mut params, &mut grads, config.lr, config.grad_clip);
            last_loss = Some(loss);
        }
        let loss = last_loss.expect("at least one epoch");

        let assignments: Vec<TierAssignment> =
            batch.iter().map(trajectory_assignment).collect();
        let line = RunLogLine {
            step,
            mean_r: batch.iter().map(|e| e.reward.r).sum::<f64>() / batch.len() as f64,
            mean_r_task: batch.iter().map(|e| e.reward.r_task).sum::<f64>() / batch.len() as f64,
            mean_cost: batch.iter().map(|e| e.reward.c_raw).sum::<f64>() / batch.len() as f64,
            alpha: batch.last().map(|e| e.reward.alpha).unwrap_or(1.0),
            loss: loss.total,
            policy_loss: loss.policy,
            value_loss: loss.value,
            entropy: loss.entropy,
            tier_ratio: tier_ratios(&assignments),
        };
        serde_json::to_writer(&mut run_log, &line)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        run_log.write_all(b"\n")?;
        steps_run = step;

        if env.len(Split::Val) > 0 && (step % config.val_every == 0 || step == config.max_steps) {
            validate(&params, &windows, &mut best_params, &mut best_val, step)?;
        }
    }

    if best_val == f64::NEG_INFINITY {
        best_params = params.clone();
        router::save_checkpoint(&best_path, &params, &meta(steps_run))?;
    }
    router::save_checkpoint(&final_path, &params, &meta(steps_run))?;
    run_log.flush()?;
    if let Some(mut log) = episode_log {
        log.flush()?;
    }
    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_val_reward: best_val,
        steps_run,
        run_log_path,
        final_checkpoint: final_path,
        best_checkpoint: best_path,
    })
}

/// One evaluated query.
#[derive(Debug, Clone, Serialize)]
pub struct EvalRow {
    pub query_id: String,
    pub tiers: [String; 5],
    pub r_task: f64,
    pub c_raw: f64,
    pub prediction: Option<String>,
    pub judge: Option<f64>,
}

/// Aggregate evaluation results over a split.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub mean_r: f64,
    pub mean_r_task: f64,
    pub mean_cost: f64,
    pub tier_ratios: [[f64; 3]; 5],
    pub mean_judge: Option<f64>,
    pub judge_excluded: usize,
    pub rows: Vec<EvalRow>,
}

/// Greedy, read-only evaluation over a split: frozen cost windows,
/// no parameter or window mutation.
pub fn evaluate(
    params: &RouterParams,
    env: &dyn EpisodeEnv,
    split: Split,
    lambda: f64,
    windows: &RewardWindows,
    force_alpha: Option<f64>,
) -> Result<EvalReport> {
    let n = env.len(split);
    assert!(n > 0, "evaluation split is empty");
    let alpha = force_alpha.unwrap_or_else(|| windows.alpha());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    let mut judge_scores = Vec::new();
    let mut judge_excluded = 0;
    let mut sum_r = 0.0;
    for index in 0..n {
        let rollout = env.run_episode(split, index, params, ActionMode::Greedy, &mut rng)?;
        let r_cost = windows.cost_reward_frozen(rollout.c_raw);
        sum_r += reward::total_reward(rollout.r_task, r_cost, alpha, lambda);
        let judge = match rollout
            .prediction
            .as_deref()
            .and_then(|p| env.judge_prediction(split, index, p))
        {
            Some(Ok(score)) => {
                judge_scores.push(score);
                Some(score)
            }
            Some(Err(_)) => {
                judge_excluded += 1;
                None
            }
            None => None,
        };
        assignments.push(rollout.assignment);
        rows.push(EvalRow {
            query_id: rollout.query_id,
            tiers: rollout.assignment.0.map(|t| t.to_string()),
            r_task: rollout.r_task,
            c_raw: rollout.c_raw,
            prediction: rollout.prediction,
            judge,
        });
    }
    let nf = n as f64;
    Ok(EvalReport {
        split,
        mean_r: sum_r / nf,
        mean_r_task: rows.iter().map(|r| r.r_task).sum::<f64>() / nf,
        mean_cost: rows.iter().map(|r| r.c_raw).sum::<f64>() / nf,
        tier_ratios: tier_ratios(&assignments),
        mean_judge: if judge_scores.is_empty() {
            None
        } else {
            Some(judge_scores.iter().sum::<f64>() / judge_scores.len() as f64)
        },
        judge_excluded,
        rows,
    })
}

/// A dataset query with its cached top-K retrieval.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub record: QueryRecord,
    pub retrieved: Vec<Chunk>,
}

/// Dataset-backed environment: routes the real pipeline per episode
/// and scores predictions with token F1 (optionally via a remote
/// reader model; without one, the extracted memory itself is scored
/// as a noisy proxy).
pub struct DataEnv<'a> {
    queries: Vec<PreparedQuery>,
    splits: [Vec<usize>; 3],
    ctx: PipelineContext<'a>,
    embedder: &'a Embedder,
    answer_kind: AnswerPromptKind,
    answer_model: Option<String>,
    answer_max_tokens: u32,
    judge_model: Option<String>,
}

impl<'a> DataEnv<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        records: Vec<DatasetRecord>,
        k: usize,
        split_seed: u64,
        ctx: PipelineContext<'a>,
        embedder: &'a Embedder,
        answer_kind: AnswerPromptKind,
        answer_model: Option<String>,
        judge_model: Option<String>,
    ) -> DataEnv<'a> {
        let queries: Vec<PreparedQuery> = records
            .into_iter()
            .map(|r| {
                let retrieved = retrieve(&r.query, &r.store, k, embedder);
                PreparedQuery { record: r.query, retrieved }
            })
            .collect();
        let (train, val, test) = split_indices(queries.len(), split_seed);
        DataEnv {
            queries,
            splits: [train, val, test],
            ctx,
            embedder,
            answer_kind,
            answer_model,
            answer_max_tokens: crate::backend::SHORT_ANSWER_MAX_TOKENS,
            judge_model,
        }
    }

    fn query_at(&self, split: Split, index: usize) -> &PreparedQuery {
        let list = &self.splits[split as usize];
        &self.queries[list[index]]
    }

    fn predict(&self, memory: &str, record: &QueryRecord) -> Result<String> {
        let Some(model) = &self.answer_model else {
            return Ok(memory.to_string());
        };
        let client = self
            .ctx
            .client
            .ok_or_else(|| Error::Config("answer model set but no endpoint configured".into()))?;
        let prompt = render_answer_prompt(
            self.answer_kind,
            memory,
            &record.question,
            record.current_date.as_deref(),
        );
        let params = GenerationParams { temperature: 0.0, max_tokens: self.answer_max_tokens };
        let completion = client.complete(model, &prompt, &params)?;
        let text = match self.answer_kind {
            AnswerPromptKind::Context => extract_answer_span(&completion.text)
                .unwrap_or(&completion.text)
                .trim()
                .to_string(),
            _ => completion.text.trim().to_string(),
        };
        Ok(text)
    }
}

impl EpisodeEnv for DataEnv<'_> {
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
        let prepared = self.query_at(split, index);
        let query = &prepared.record;
        let mut transitions = Vec::with_capacity(5);
        let mut assignment = TierAssignment::uniform(Tier::Low);

        let decide = |module: ModuleId,
                          input_text: &str,
                          transitions: &mut Vec<Transition>,
                          rng: &mut ChaCha8Rng|
         -> Result<Tier> {
            let state = encode_state(&query.question, module, input_text, self.embedder);
            let pass = forward(params, &state)?;
            let choice = select_action(&pass.output, mode, rng);
            transitions.push(Transition {
                state,
                action: choice.tier,
                log_prob_old: choice.log_prob,
                value_old: pass.output.value,
                module,
            });
            Ok(choice.tier)
        };

        let retrieved_text = pipeline::joined_chunk_text(&prepared.retrieved);
        let filter_tier = decide(ModuleId::Filter, &retrieved_text, &mut transitions, rng)?;
        assignment.set(ModuleId::Filter, filter_tier);
        let filter_result =
            pipeline::execute_filter(&self.ctx, &query.question, &prepared.retrieved, filter_tier)?;
        let mut ledger = filter_result.cost_records.clone();
        let filtered = filter_result.into_chunks();

        let filtered_text = pipeline::joined_chunk_text(&filtered);
        let mut relations: Vec<Vec<String>> = Vec::with_capacity(3);
        for module in [ModuleId::Entity, ModuleId::Temporal, ModuleId::Topic] {
            let tier = decide(module, &filtered_text, &mut transitions, rng)?;
            assignment.set(module, tier);
            let result =
                pipeline::execute_relation(&self.ctx, module, &query.question, &filtered, tier)?;
            ledger.extend(result.cost_records.clone());
            relations.push(result.into_relations());
        }
        let topic = relations.pop().expect("topic");
        let temporal = relations.pop().expect("temporal");
        let entity = relations.pop().expect("entity");

        let summary_input = pipeline::relations_text(&entity, &temporal, &topic);
        let summary_tier = decide(ModuleId::Summary, &summary_input, &mut transitions, rng)?;
        assignment.set(ModuleId::Summary, summary_tier);
        let summary = pipeline::execute_summary(
            &self.ctx,
            &query.question,
            &filtered,
            &entity,
            &temporal,
            &topic,
            summary_tier,
        )?;
        ledger.extend(summary.cost_records.clone());
        let memory = summary.into_memory();

        let prediction = self.predict(&memory, query)?;
        let r_task = reward::token_f1(&prediction, &query.gold_answers);
        let c_raw = reward::raw_cost(&ledger);
        Ok(RolloutResult {
            transitions,
            r_task,
            c_raw,
            query_id: query.id.clone(),
            assignment,
            prediction: Some(prediction),
        })
    }

    fn judge_prediction(&self, split: Split, index: usize, prediction: &str) -> Option<Result<f64>> {
        let model = self.judge_model.as_ref()?;
        let client = self.ctx.client?;
        let record = &self.query_at(split, index).record;
        let backend = |prompt: &str| -> Result<String> {
            let params = GenerationParams {
                temperature: 0.0,
                max_tokens: crate::backend::DEFAULT_MAX_TOKENS,
            };
            Ok(client.complete(model, prompt, &params)?.text)
        };
        Some(reward::judge_score(
            &record.question,
            &record.gold_answers,
            prediction,
            &backend,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A deterministic environment that rewards low tiers: r_task is
    /// the fraction of LOW picks, cost grows with tier.
    struct ToyEnv {
        embedder: Embedder,
        n_train: usize,
        n_val: usize,
    }

    impl ToyEnv {
        fn new(embed_dim: usize, n_train: usize, n_val: usize) -> ToyEnv {
            ToyEnv { embedder: Embedder::new(embed_dim), n_train, n_val }
        }
    }

    impl EpisodeEnv for ToyEnv {
        fn len(&self, split: Split) -> usize {
            match split {
                Split::Train => self.n_train,
                Split::Val => self.n_val,
                Split::Test => 0,
            }
        }

        fn run_episode(
            &self,
            split: Split,
            index: usize,
            params: &RouterParams,
            mode: ActionMode,
            rng: &mut ChaCha8Rng,
        ) -> Result<RolloutResult> {
            let query = format!("toy query {split:?} {index}");
            let mut transitions = Vec::with_capacity(5);
            let mut assignment = TierAssignment::uniform(Tier::Low);
            for module in ModuleId::ORDER {
                let input = format!("toy input {module} {index}");
                let state = encode_state(&query, module, &input, &self.embedder);
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
            let lows = assignment.0.iter().filter(|t| **t == Tier::Low).count();
            let cost: f64 = assignment
                .0
                .iter()
                .map(|t| match t {
                    Tier::Low => 0.0,
                    Tier::Mid => 0.002,
                    Tier::High => 0.010,
                })
                .sum();
            Ok(RolloutResult {
                transitions,
                r_task: lows as f64 / 5.0,
                c_raw: cost,
                query_id: format!("toy-{index}"),
                assignment,
                prediction: None,
            })
        }
    }

    fn toy_arch() -> RouterArch {
        RouterArch { embed_dim: 8, hidden: 16 }
    }

    fn toy_batch(params: &RouterParams, n: usize, seed: u64) -> Vec<EpisodeTrajectory> {
        let env = ToyEnv::new(8, 50, 10);
        let mut windows = RewardWindows::new(256, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let order: Vec<usize> = (0..n).map(|i| i % 50).collect();
        collect_rollouts(
            params,
            &env,
            Split::Train,
            &order,
            ActionMode::Sample,
            &mut windows,
            &PPOConfig { lambda: 0.3, ..PPOConfig::default() },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn test_split_indices_disjoint_cover() {
        let (train, val, test) = split_indices(100, 7);
        assert_eq!(train.len(), 60);
        assert_eq!(val.len(), 20);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let (train2, _, _) = split_indices(100, 7);
        assert_eq!(train, train2);
        let (train3, _, _) = split_indices(100, 8);
        assert_ne!(train, train3);
    }

    #[test]
    fn test_advantages_identities() {
        let params = RouterParams::init(toy_arch(), 3);
        let mut batch = toy_batch(&params, 8, 1);
        // Baseline identity: reward equal to mean value gives zero
        // pre-standardization advantage; identical episodes stay zero
        // after standardization.
        for episode in &mut batch {
            let mean_v = episode.transitions.iter().map(|t| t.value_old).sum::<f64>() / 5.0;
            episode.reward.r = mean_v;
        }
        let first = batch[0].clone();
        let identical: Vec<EpisodeTrajectory> = (0..4).map(|_| first.clone()).collect();
        for a in advantages(&identical) {
            assert_eq!(a, 0.0);
        }
        // General case: standardized mean 0, std 1.
        let batch = toy_batch(&params, 16, 2);
        let adv = advantages(&batch);
        let mean: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "std {std}");
    }

    #[test]
    fn test_identity_ratio_and_surrogate() {
        let params = RouterParams::init(toy_arch(), 5);
        let batch = toy_batch(&params, 8, 3);
        let adv = advantages(&batch);
        let config = PPOConfig::default();
        let (loss, _) = ppo_loss_and_grad(&params, &batch, &adv, &config).unwrap();
        for rho in &loss.rho {
            assert!((rho - 1.0).abs() < 1e-9, "rho {rho}");
        }
        let mean_adv: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((loss.policy - (-mean_adv)).abs() < 1e-9);
        assert_eq!(loss.ratio_drift, 0.0);
        assert!(loss.entropy >= 0.0 && loss.entropy <= 3.0f64.ln() + 1e-12);
    }

    #[test]
    fn test_joint_ratio_decomposes_into_per_module_product() {
        let params_old = RouterParams::init(toy_arch(), 5);
        let mut params_new = params_old.clone();
        for v in params_new.data.iter_mut() {
            *v += 0.01;
        }
        let batch = toy_batch(&params_old, 6, 4);
        let adv = advantages(&batch);
        let (loss, _) =
            ppo_loss_and_grad(&params_new, &batch, &adv, &PPOConfig::default()).unwrap();
        for (episode, rho) in batch.iter().zip(&loss.rho) {
            let mut product = 1.0;
            for tr in &episode.transitions {
                let pass = forward(&params_new, &tr.state).unwrap();
                let logp_new = pass.output.probs[tr.action.index()].ln();
                product *= (logp_new - tr.log_prob_old).exp();
            }
            assert!((product - rho).abs() < 1e-9, "{product} vs {rho}");
        }
    }

    #[test]
    fn test_clip_arithmetic() {
        // A single episode with rho engineered via log_prob_old offset:
        // rho = 1.5, adv = +1 → clipped term 1.2 wins the min.
        let params = RouterParams::init(toy_arch(), 9);
        let mut batch = toy_batch(&params, 2, 5);
        let offset = 1.5f64.ln();
        for tr in &mut batch[0].transitions {
            tr.log_prob_old -= offset / 5.0;
        }
        let adv = vec![1.0, -1.0];
        let config = PPOConfig::default();
        let (loss, _) = ppo_loss_and_grad(&params, &batch, &adv, &config).unwrap();
        assert!((loss.rho[0] - 1.5).abs() < 1e-9);
        assert!((loss.rho[1] - 1.0).abs() < 1e-9);
        // Episode 0 contributes min(1.5, 1.2) = 1.2; episode 1
        // contributes min(-1, -1) = -1. Policy loss = -(1.2 - 1.0)/2.
        assert!((loss.policy - (-(1.2 - 1.0) / 2.0)).abs() < 1e-9);
        assert!((loss.ratio_drift - 0.0).abs() < 1e-12);
    }

    #[test]
    fn test_ppo_gradient_matches_finite_differences() {
        let arch = toy_arch();
        let params_old = RouterParams::init(arch, 17);
        let batch = toy_batch(&params_old, 4, 6);
        let adv = advantages(&batch);
        let config = PPOConfig::default();

        // Evaluation points: the collection parameters (rho = 1) and a
        // perturbed copy (rho != 1), both safely inside the clip band.
        let mut perturbed = params_old.clone();
        let mut prng = ChaCha8Rng::seed_from_u64(99);
        for v in perturbed.data.iter_mut() {
            *v += (prng.random::<f64>() as f32 - 0.5) * 2e-3;
        }
        for mut params in [params_old.clone(), perturbed] {
            let (loss, grads) = ppo_loss_and_grad(&params, &batch, &adv, &config).unwrap();
            for rho in &loss.rho {
                let margin = (rho - 0.8).abs().min((rho - 1.2).abs());
                assert!(margin > 1e-2, "rho {rho} too close to a clip kink for FD");
            }
            for i in (0..arch.param_count()).step_by(3) {
                let original = params.data[i];
                let up = (original as f64 + 1e-4) as f32;
                let down = (original as f64 - 1e-4) as f32;
                params.data[i] = up;
                let f_up = ppo_loss_and_grad(&params, &batch, &adv, &config).unwrap().0.total;
                params.data[i] = down;
                let f_down = ppo_loss_and_grad(&params, &batch, &adv, &config).unwrap().0.total;
                params.data[i] = original;
                let numeric = (f_up - f_down) / (up as f64 - down as f64);
                let scale = grads[i].abs().max(numeric.abs());
                if scale > 1e-7 {
                    let rel = (grads[i] - numeric).abs() / scale;
                    assert!(
                        rel <= 1e-4,
                        "param {i}: analytic {} vs fd {numeric} (rel {rel:.3e})",
                        grads[i]
                    );
                }
            }
        }
    }

    #[test]
    fn test_clip_global_norm() {
        let mut grads = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut grads, 0.5);
        assert!((norm - 0.5).abs() < 1e-12);
        let post = (grads[0] * grads[0] + grads[1] * grads[1]).sqrt();
        assert!((post - 0.5).abs() < 1e-9);
        assert!((grads[0] / grads[1] - 0.75).abs() < 1e-12);

        let mut small = vec![0.1, 0.2];
        let norm = clip_global_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.2]);
        assert!((norm - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn test_adam_first_step_sign_and_zero_fixed_point() {
        let arch = toy_arch();
        let mut params = RouterParams::zeros(arch);
        let n = arch.param_count();
        let mut adam = Adam::new(n);
        let mut grads = vec![0.0f64; n];
        grads[0] = 0.01;
        grads[1] = -0.02;
        let lr = 3e-4;
        adam.step(&mut params, &mut grads, lr, 0.5);
        assert!((params.data[0] as f64 + lr).abs() < lr * 1e-5, "{}", params.data[0]);
        assert!((params.data[1] as f64 - lr).abs() < lr * 1e-5);

        // Zero gradients move nothing only when the moments are also
        // zero, so use a fresh optimizer.
        let mut fresh = Adam::new(n);
        let mut zeros = vec![0.0f64; n];
        let before = params.clone();
        fresh.step(&mut params, &mut zeros, lr, 0.5);
        assert_eq!(params, before);
    }

    #[test]
    fn test_adam_three_step_trace_matches_oracle() {
        // Independent reference Adam on 4 parameters, f64 throughout.
        let g_trace = [
            [0.1f64, -0.2, 0.05, 0.0],
            [0.08, 0.02, -0.01, 0.3],
            [-0.3, 0.1, 0.0, 0.05],
        ];
        let (beta1, beta2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.01f64);
        let mut theta = [0.5f64, -0.5, 0.25, 0.0];
        let mut m = [0.0f64; 4];
        let mut v = [0.0f64; 4];
        for (t, g) in g_trace.iter().enumerate() {
            // Reference applies the same global clip first.
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = if norm > 0.5 { 0.5 / norm } else { 1.0 };
            for i in 0..4 {
                let gi = g[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / (1.0 - beta1.powi(t as i32 + 1));
                let v_hat = v[i] / (1.0 - beta2.powi(t as i32 + 1));
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }

        let arch = RouterArch { embed_dim: 1, hidden: 1 };
        assert!(arch.param_count() >= 4);
        let mut params = RouterParams::zeros(arch);
        params.data[0] = 0.5;
        params.data[1] = -0.5;
        params.data[2] = 0.25;
        params.data[3] = 0.0;
        let mut adam = Adam::new(params.data.len());
        adam.eps = eps;
        for g in g_trace {
            let mut grads = vec![0.0f64; params.data.len()];
            grads[..4].copy_from_slice(&g);
            adam.step(&mut params, &mut grads, lr, 0.5);
        }
        for (i, &th) in theta.iter().enumerate() {
            assert!(
                (params.data[i] as f64 - th).abs() < 1e-7,
                "param {i}: {} vs {}",
                params.data[i],
                theta[i]
            );
        }
    }

    #[test]
    fn test_rollout_structure_and_determinism() {
        let env = ToyEnv::new(8, 20, 5);
        let params = RouterParams::init(toy_arch(), 2);
        let config = PPOConfig::default();
        let run = |seed: u64| {
            let mut windows = RewardWindows::new(256, 1e-8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order: Vec<usize> = (0..8).collect();
            collect_rollouts(
                &params,
                &env,
                Split::Train,
                &order,
                ActionMode::Sample,
                &mut windows,
                &config,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.len(), 8);
        for (ea, eb) in a.iter().zip(&b) {
            assert_eq!(
                ea.transitions.iter().map(|t| t.module).collect::<Vec<_>>(),
                ModuleId::ORDER.to_vec()
            );
            assert_eq!(
                ea.transitions.iter().map(|t| t.action).collect::<Vec<_>>(),
                eb.transitions.iter().map(|t| t.action).collect::<Vec<_>>()
            );
            assert_eq!(ea.reward.r.to_bits(), eb.reward.r.to_bits());
        }
        let c = run(12);
        let differs = a
            .iter()
            .zip(&c)
            .any(|(ea, ec)| {
                ea.transitions.iter().map(|t| t.action).collect::<Vec<_>>()
                    != ec.transitions.iter().map(|t| t.action).collect::<Vec<_>>()
            });
        assert!(differs, "different seeds should sample different actions");
    }

    #[test]
    fn test_uniform_policy_tier_frequencies() {
        let env = ToyEnv::new(8, 50, 5);
        let params = RouterParams::zeros(toy_arch());
        let mut windows = RewardWindows::new(256, 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let order: Vec<usize> = (0..1000).map(|i| i % 50).collect();
        let batch = collect_rollouts(
            &params,
            &env,
            Split::Train,
            &order,
            ActionMode::Sample,
            &mut windows,
            &PPOConfig::default(),
            &mut rng,
        )
        .unwrap();
        let assignments: Vec<TierAssignment> =
            batch.iter().map(trajectory_assignment).collect();
        let ratios = tier_ratios(&assignments);
        for (m, row) in ratios.iter().enumerate() {
            for (t, &ratio) in row.iter().enumerate() {
                assert!(
                    (ratio - 1.0 / 3.0).abs() < 0.04,
                    "module {m} tier {t}: {ratio}"
                );
            }
        }
    }

    #[test]
    fn test_train_zero_steps_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let env = ToyEnv::new(8, 10, 4);
        let settings = TrainSettings {
            ppo: PPOConfig { max_steps: 0, ..PPOConfig::default() },
            arch: toy_arch(),
            strategy: crate::types::Strategy::Simulated,
            out_dir: dir.path().to_path_buf(),
            log_episodes: true,
        };
        let outcome = train(&settings, &env).unwrap();
        assert_eq!(outcome.steps_run, 0);
        assert!(outcome.final_checkpoint.exists());
        assert!(outcome.best_checkpoint.exists());
        let log = std::fs::read_to_string(&outcome.run_log_path).unwrap();
        assert!(log.is_empty());
        let (loaded, meta) = router::load_checkpoint(&outcome.final_checkpoint).unwrap();
        assert_eq!(loaded, RouterParams::init(toy_arch(), settings.ppo.seed));
        assert_eq!(meta.step, 0);
    }

    #[test]
    fn test_short_training_improves_toy_reward_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let env = ToyEnv::new(8, 40, 10);
        let ppo = PPOConfig {
            max_steps: 60,
            batch: 16,
            lambda: 0.0,
            seed: 3,
            val_every: 10,
            ..PPOConfig::default()
        };
        let settings = TrainSettings {
            ppo,
            arch: toy_arch(),
            strategy: crate::types::Strategy::Simulated,
            out_dir: dir.path().join("a"),
            log_episodes: false,
        };
        let outcome = train(&settings, &env).unwrap();
        let windows = RewardWindows::new(256, 1e-8);
        let report =
            evaluate(&outcome.final_params, &env, Split::Val, 0.0, &windows, None).unwrap();
        assert!(
            report.mean_r_task > 0.9,
            "toy training should saturate LOW picks, got {}",
            report.mean_r_task
        );

        let settings_b = TrainSettings { out_dir: dir.path().join("b"), ..settings };
        let outcome_b = train(&settings_b, &env).unwrap();
        let log_a = std::fs::read_to_string(&outcome.run_log_path).unwrap();
        let log_b = std::fs::read_to_string(&outcome_b.run_log_path).unwrap();
        assert_eq!(log_a, log_b, "same seed should give identical run logs");
        assert_eq!(outcome.final_params, outcome_b.final_params);
    }

    #[test]
    fn test_evaluate_read_only_and_greedy() {
        let env = ToyEnv::new(8, 10, 6);
        let params = RouterParams::init(toy_arch(), 21);
        let windows = RewardWindows::new(256, 1e-8);
        let a = evaluate(&params, &env, Split::Val, 0.3, &windows, None).unwrap();
        let b = evaluate(&params, &env, Split::Val, 0.3, &windows, None).unwrap();
        assert_eq!(a.mean_r.to_bits(), b.mean_r.to_bits());
        assert_eq!(a.rows.len(), 6);
        for m in 0..5 {
            let s: f64 = a.tier_ratios[m].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_advantages_standardized(n in 2usize..12, seed in 0u64..50) {
            let params = RouterParams::init(toy_arch(), seed);
            let batch = toy_batch(&params, n, seed);
            let adv = advantages(&batch);
            let mean: f64 = adv.iter().sum::<f64>() / adv.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
        }

        #[test]
        fn prop_post_clip_norm_bounded(values in proptest::collection::vec(-10.0f64..10.0, 1..100)) {
            let mut grads = values;
            clip_global_norm(&mut grads, 0.5);
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            prop_assert!(norm <= 0.5 + 1e-9);
        }
    }
}
