//! Run configuration: a TOML file selects the strategy, the
//! environment (dataset-backed or synthetic), backend bindings, and
//! PPO overrides. Endpoint credentials come from an environment
//! variable named in the config, never from the file itself.

use crate::backend::{BackendSpec, HttpChatClient, DEFAULT_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::heuristics::TOPIC_TOP_N;
use crate::reward::PriceTable;
use crate::router::RouterArch;
use crate::simenv::{SimConfig, SIM_ARCH};
use crate::templates::AnswerPromptKind;
use crate::trainer::PPOConfig;
use crate::types::Strategy;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_API_KEY_ENV: &str = "TIERROUTE_API_KEY";

/// Optional PPO overrides; unset fields keep defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub lr: Option<f64>,
    pub clip: Option<f64>,
    pub c_v: Option<f64>,
    pub c_e: Option<f64>,
    pub epochs: Option<usize>,
    pub grad_clip: Option<f64>,
    pub batch: Option<usize>,
    pub max_steps: Option<usize>,
    pub window: Option<usize>,
    pub epsilon: Option<f64>,
    pub force_alpha: Option<f64>,
    pub val_every: Option<usize>,
}

/// Router width overrides; defaults depend on the environment kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    pub embed_dim: Option<usize>,
    pub hidden: Option<usize>,
}

fn default_chunk_size() -> usize {
    512
}

fn default_k() -> usize {
    10
}

fn default_answer_prompt() -> AnswerPromptKind {
    AnswerPromptKind::Short
}

/// Dataset-backed environment settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_answer_prompt")]
    pub answer_prompt: AnswerPromptKind,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_topic_top_n() -> usize {
    TOPIC_TOP_N
}

/// Remote backend bindings. Which model fields apply depends on the
/// strategy: `model` serves the implementation and reasoning
/// strategies, the three tiered fields serve the capacity strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    pub endpoint: Option<String>,
    pub api_key_env: String,
    pub model: Option<String>,
    pub model_low: Option<String>,
    pub model_mid: Option<String>,
    pub model_high: Option<String>,
    pub answer_model: Option<String>,
    pub judge_model: Option<String>,
    pub price_table: Option<PathBuf>,
    pub max_tokens: u32,
    pub topic_top_n: usize,
}

impl Default for BackendSection {
    fn default() -> BackendSection {
        BackendSection {
            endpoint: None,
            api_key_env: default_api_key_env(),
            model: None,
            model_low: None,
            model_mid: None,
            model_high: None,
            answer_model: None,
            judge_model: None,
            price_table: None,
            max_tokens: default_max_tokens(),
            topic_top_n: default_topic_top_n(),
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default = "default_log_episodes")]
    pub log_episodes: bool,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub router: RouterSection,
    pub data: Option<DataSection>,
    pub simenv: Option<SimConfig>,
    #[serde(default)]
    pub backend: BackendSection,
}

fn default_log_episodes() -> bool {
    true
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Parses a config file, resolves its relative paths against the
/// file's directory, and validates it.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(data) = &mut config.data {
        resolve(base, &mut data.path);
    }
    if let Some(prices) = &mut config.backend.price_table {
        resolve(base, prices);
    }
    if let Some(out) = &mut config.out {
        resolve(base, out);
    }
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Checks internal consistency and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        match (&self.data, &self.simenv) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "config sets both [data] and [simenv]; pick one".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "config needs either a [data] or a [simenv] section".into(),
                ))
            }
            _ => {}
        }
        if self.strategy == Strategy::Simulated && self.simenv.is_none() {
            return Err(Error::Config(
                "the simulated strategy requires a [simenv] section".into(),
            ));
        }
        if self.strategy != Strategy::Simulated && self.simenv.is_some() {
            return Err(Error::Config(format!(
                "the {} strategy requires a [data] section, not [simenv]",
                strategy_name(self.strategy)
            )));
        }
        if let Some(data) = &self.data {
            if data.k < 1 {
                return Err(Error::Config("data.k must be at least 1".into()));
            }
            if data.chunk_size < 1 {
                return Err(Error::Config("data.chunk_size must be at least 1".into()));
            }
            if !data.path.exists() {
                return Err(Error::Config(format!(
                    "dataset file {} does not exist",
                    data.path.display()
                )));
            }
        }
        if let Some(sim) = &self.simenv {
            if !sim.exhaustive && (sim.train == 0 || sim.val == 0) {
                return Err(Error::Config(
                    "simenv needs non-empty train and val splits".into(),
                ));
            }
            if let Some(dim) = self.router.embed_dim {
                if dim != sim.embed_dim {
                    return Err(Error::Config(format!(
                        "router.embed_dim {} conflicts with simenv.embed_dim {}",
                        dim, sim.embed_dim
                    )));
                }
            }
        }
        let b = &self.backend;
        match self.strategy {
            Strategy::Implementation | Strategy::Reasoning => {
                if self.strategy == Strategy::Reasoning && b.model.is_none() {
                    return Err(Error::Config(
                        "the reasoning strategy requires backend.model".into(),
                    ));
                }
                if b.model_low.is_some() || b.model_mid.is_some() || b.model_high.is_some() {
                    return Err(Error::Config(
                        "tiered model fields only apply to the capacity strategy".into(),
                    ));
                }
            }
            Strategy::Capacity => {
                if b.model_low.is_none() || b.model_mid.is_none() || b.model_high.is_none() {
                    return Err(Error::Config(
                        "the capacity strategy requires backend.model_low, model_mid, and model_high"
                            .into(),
                    ));
                }
            }
            Strategy::Simulated => {}
        }
        let spec = self.backend_spec()?;
        let module_models = spec.remote_models();
        if !module_models.is_empty() {
            match &b.price_table {
                None => {
                    return Err(Error::Config(
                        "remote module backends require backend.price_table".into(),
                    ))
                }
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!(
                        "price table {} does not exist",
                        p.display()
                    )))
                }
                Some(_) => {}
            }
        }
        let any_remote = !module_models.is_empty() || b.answer_model.is_some() || b.judge_model.is_some();
        if any_remote && b.endpoint.is_none() {
            return Err(Error::Config(
                "remote models require backend.endpoint".into(),
            ));
        }
        Ok(())
    }

    /// CLI flag overrides, applied before revalidation.
    pub fn apply_overrides(
        &mut self,
        lambda: Option<f64>,
        seed: Option<u64>,
        strategy: Option<Strategy>,
        out: Option<PathBuf>,
    ) -> Result<()> {
        if let Some(l) = lambda {
            self.lambda = l;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(s) = strategy {
            self.strategy = s;
        }
        if let Some(o) = out {
            self.out = Some(o);
        }
        self.validate()
    }

    /// PPO configuration with overrides, lambda, and seed applied.
    pub fn ppo_config(&self) -> PPOConfig {
        let mut c = PPOConfig { lambda: self.lambda, seed: self.seed, ..PPOConfig::default() };
        let o = &self.ppo;
        if let Some(v) = o.lr {
            c.lr = v;
        }
        if let Some(v) = o.clip {
            c.clip = v;
        }
        if let Some(v) = o.c_v {
            c.c_v = v;
        }
        if let Some(v) = o.c_e {
            c.c_e = v;
        }
        if let Some(v) = o.epochs {
            c.epochs = v;
        }
        if let Some(v) = o.grad_clip {
            c.grad_clip = v;
        }
        if let Some(v) = o.batch {
            c.batch = v;
        }
        if let Some(v) = o.max_steps {
            c.max_steps = v;
        }
        if let Some(v) = o.window {
            c.window = v;
        }
        if let Some(v) = o.epsilon {
            c.epsilon = v;
        }
        if o.force_alpha.is_some() {
            c.force_alpha = o.force_alpha;
        }
        if let Some(v) = o.val_every {
            c.val_every = v;
        }
        c
    }

    /// Router shape: explicit overrides win, otherwise the synthetic
    /// default for simenv runs and the full-size default for data runs.
    pub fn router_arch(&self) -> RouterArch {
        let base = if let Some(sim) = &self.simenv {
            RouterArch { embed_dim: sim.embed_dim, hidden: SIM_ARCH.hidden }
        } else {
            RouterArch::default()
        };
        RouterArch {
            embed_dim: self.router.embed_dim.unwrap_or(base.embed_dim),
            hidden: self.router.hidden.unwrap_or(base.hidden),
        }
    }

    /// Module backend bindings for the configured strategy.
    pub fn backend_spec(&self) -> Result<BackendSpec> {
        let b = &self.backend;
        Ok(match self.strategy {
            Strategy::Implementation => BackendSpec::implementation(b.model.as_deref()),
            Strategy::Reasoning => BackendSpec::reasoning(
                b.model
                    .as_deref()
                    .ok_or_else(|| Error::Config("reasoning strategy requires backend.model".into()))?,
            ),
            Strategy::Capacity => {
                let low = b.model_low.as_deref();
                let mid = b.model_mid.as_deref();
                let high = b.model_high.as_deref();
                match (low, mid, high) {
                    (Some(l), Some(m), Some(h)) => BackendSpec::capacity(l, m, h),
                    _ => {
                        return Err(Error::Config(
                            "capacity strategy requires all three tier models".into(),
                        ))
                    }
                }
            }
            Strategy::Simulated => BackendSpec::simulated(),
        })
    }

    /// Loads the price table, or an empty one when no remote module
    /// backends are configured.
    pub fn price_table(&self) -> Result<PriceTable> {
        match &self.backend.price_table {
            Some(path) => PriceTable::load(path),
            None => Ok(PriceTable::default()),
        }
    }

    /// Builds the HTTP client when an endpoint is configured, reading
    /// the API key from the configured environment variable.
    pub fn make_client(&self) -> Option<HttpChatClient> {
        let endpoint = self.backend.endpoint.as_ref()?;
        let key = std::env::var(&self.backend.api_key_env).ok();
        Some(HttpChatClient::new(endpoint, key))
    }

    /// Output directory: the --out flag or config `out`, else a fixed
    /// default next to the working directory.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("train_out"))
    }
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Implementation => "implementation",
        Strategy::Reasoning => "reasoning",
        Strategy::Capacity => "capacity",
        Strategy::Simulated => "simulated",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    fn sim_toml() -> &'static str {
        "strategy = \"simulated\"\nlambda = 0.3\nseed = 7\n\n[simenv]\ntrain = 50\nval = 10\ntest = 10\n"
    }

    #[test]
    fn test_minimal_simenv_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "run.toml", sim_toml());
        let config = load_config(&path).unwrap();
        assert_eq!(config.strategy, Strategy::Simulated);
        assert_eq!(config.lambda, 0.3);
        assert_eq!(config.seed, 7);
        let ppo = config.ppo_config();
        assert_eq!(ppo.lambda, 0.3);
        assert_eq!(ppo.seed, 7);
        assert_eq!(ppo.lr, 3e-4);
        assert_eq!(ppo.batch, 32);
        assert_eq!(ppo.max_steps, 600);
        let arch = config.router_arch();
        assert_eq!(arch.embed_dim, 64);
        assert_eq!(arch.hidden, 128);
        assert!(config.log_episodes);
    }

    #[test]
    fn test_ppo_overrides_merge() {
        let dir = tempfile::tempdir().unwrap();
        let toml = format!(
            "{}\n[ppo]\nlr = 0.001\nmax_steps = 10\nforce_alpha = 1.0\n",
            sim_toml()
        );
        let path = write_file(dir.path(), "run.toml", &toml);
        let config = load_config(&path).unwrap();
        let ppo = config.ppo_config();
        assert_eq!(ppo.lr, 0.001);
        assert_eq!(ppo.max_steps, 10);
        assert_eq!(ppo.force_alpha, Some(1.0));
        assert_eq!(ppo.clip, 0.2);
    }

    #[test]
    fn test_unknown_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "run.toml",
            "strategy = \"simulated\"\nlambdaa = 0.3\n\n[simenv]\n",
        );
        let err = load_config(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn test_env_section_requirements() {
        let dir = tempfile::tempdir().unwrap();
        let neither = write_file(dir.path(), "a.toml", "strategy = \"simulated\"\n");
        assert!(load_config(&neither).is_err());

        let data = write_file(dir.path(), "d.jsonl", "");
        let both = write_file(
            dir.path(),
            "b.toml",
            &format!(
                "strategy = \"simulated\"\n[simenv]\n[data]\npath = {:?}\n",
                data.file_name().unwrap()
            ),
        );
        assert!(load_config(&both).is_err());

        let mismatched = write_file(
            dir.path(),
            "c.toml",
            "strategy = \"reasoning\"\n[simenv]\n[backend]\nmodel = \"m\"\nendpoint = \"http://x\"\n",
        );
        assert!(load_config(&mismatched).is_err());
    }

    #[test]
    fn test_dataset_path_checked_and_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write_file(
            dir.path(),
            "a.toml",
            "strategy = \"implementation\"\n[data]\npath = \"nope.jsonl\"\n",
        );
        let err = load_config(&missing).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");

        write_file(dir.path(), "data.jsonl", "");
        let ok = write_file(
            dir.path(),
            "b.toml",
            "strategy = \"implementation\"\n[data]\npath = \"data.jsonl\"\n",
        );
        let config = load_config(&ok).unwrap();
        assert!(config.data.as_ref().unwrap().path.is_absolute());
        assert_eq!(config.data.as_ref().unwrap().chunk_size, 512);
        assert_eq!(config.data.as_ref().unwrap().k, 10);
        let arch = config.router_arch();
        assert_eq!(arch.embed_dim, 768);
        assert_eq!(arch.hidden, 256);
    }

    #[test]
    fn test_capacity_requires_three_models_and_prices() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "data.jsonl", "");
        let incomplete = write_file(
            dir.path(),
            "a.toml",
            "strategy = \"capacity\"\n[data]\npath = \"data.jsonl\"\n[backend]\nendpoint = \"http://x\"\nmodel_low = \"a\"\nmodel_high = \"c\"\n",
        );
        assert!(load_config(&incomplete).is_err());

        let no_prices = write_file(
            dir.path(),
            "b.toml",
            "strategy = \"capacity\"\n[data]\npath = \"data.jsonl\"\n[backend]\nendpoint = \"http://x\"\nmodel_low = \"a\"\nmodel_mid = \"b\"\nmodel_high = \"c\"\n",
        );
        let err = load_config(&no_prices).unwrap_err();
        assert!(err.to_string().contains("price_table"), "{err}");

        write_file(dir.path(), "prices.json", "{\"a\":{\"in\":1.0,\"out\":2.0},\"b\":{\"in\":1.0,\"out\":2.0},\"c\":{\"in\":1.0,\"out\":2.0}}");
        let ok = write_file(
            dir.path(),
            "c.toml",
            "strategy = \"capacity\"\n[data]\npath = \"data.jsonl\"\n[backend]\nendpoint = \"http://x\"\nmodel_low = \"a\"\nmodel_mid = \"b\"\nmodel_high = \"c\"\nprice_table = \"prices.json\"\n",
        );
        let config = load_config(&ok).unwrap();
        let prices = config.price_table().unwrap();
        assert!(prices.get("b").is_some());
        let spec = config.backend_spec().unwrap();
        assert_eq!(spec.remote_models().len(), 3);
    }

    #[test]
    fn test_offline_implementation_needs_no_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "data.jsonl", "");
        let path = write_file(
            dir.path(),
            "a.toml",
            "strategy = \"implementation\"\n[data]\npath = \"data.jsonl\"\n",
        );
        let config = load_config(&path).unwrap();
        assert!(config.make_client().is_none());
        let spec = config.backend_spec().unwrap();
        assert!(spec.remote_models().is_empty());
    }

    #[test]
    fn test_remote_needs_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "data.jsonl", "");
        write_file(dir.path(), "prices.json", "{\"m\":{\"in\":1.0,\"out\":2.0}}");
        let path = write_file(
            dir.path(),
            "a.toml",
            "strategy = \"reasoning\"\n[data]\npath = \"data.jsonl\"\n[backend]\nmodel = \"m\"\nprice_table = \"prices.json\"\n",
        );
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("endpoint"), "{err}");
    }

    #[test]
    fn test_lambda_validation_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "run.toml", sim_toml());
        let mut config = load_config(&path).unwrap();
        assert!(config
            .apply_overrides(Some(-0.1), None, None, None)
            .is_err());
        config.lambda = 0.3;
        config
            .apply_overrides(Some(0.9), Some(11), None, Some(PathBuf::from("x")))
            .unwrap();
        assert_eq!(config.lambda, 0.9);
        assert_eq!(config.seed, 11);
        assert_eq!(config.out_dir(), PathBuf::from("x"));
    }

    #[test]
    fn test_router_embed_dim_conflict_with_simenv() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "run.toml",
            &format!("{}\n[router]\nembed_dim = 32\n", sim_toml()),
        );
        let err = load_config(&path).unwrap_err();
        assert!(err.to_string().contains("embed_dim"), "{err}");
    }
}
