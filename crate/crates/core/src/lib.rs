//! Budget-tier routing for runtime memory extraction. A five-module
//! pipeline distills retrieved history into a compact memory; a
//! learned router picks a capability tier per module, trained with
//! PPO against a reward that trades task quality against normalized
//! dollar cost.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod heuristics;
pub mod mockhttp;
pub mod pipeline;
pub mod report;
pub mod reward;
pub mod router;
pub mod simenv;
pub mod templates;
pub mod trainer;
pub mod types;

pub use config::{load_config, RunConfig};
pub use error::{Error, Result};
pub use types::{ModuleId, Strategy, Tier, TierAssignment};
