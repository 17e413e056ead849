//! Shared vocabulary types: compute tiers, pipeline modules, tier
//! assignments, and tiering strategies.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A compute budget tier. Ordered: `Low < Mid < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    Mid,
    High,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Low, Tier::Mid, Tier::High];

    /// Index in `{0, 1, 2}`; doubles as the router's action id.
    pub fn index(self) -> usize {
        match self {
            Tier::Low => 0,
            Tier::Mid => 1,
            Tier::High => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Tier> {
        Tier::ALL.get(i).copied()
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tier::Low => write!(f, "low"),
            Tier::Mid => write!(f, "mid"),
            Tier::High => write!(f, "high"),
        }
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Tier::Low),
            "mid" => Ok(Tier::Mid),
            "high" => Ok(Tier::High),
            other => Err(format!("unknown tier: {other}")),
        }
    }
}

/// One of the five pipeline modules, in routing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModuleId {
    Filter,
    Entity,
    Temporal,
    Topic,
    Summary,
}

impl ModuleId {
    /// Fixed routing order: filter, then the three parallel extractors,
    /// then summary.
    pub const ORDER: [ModuleId; 5] = [
        ModuleId::Filter,
        ModuleId::Entity,
        ModuleId::Temporal,
        ModuleId::Topic,
        ModuleId::Summary,
    ];

    pub fn index(self) -> usize {
        match self {
            ModuleId::Filter => 0,
            ModuleId::Entity => 1,
            ModuleId::Temporal => 2,
            ModuleId::Topic => 3,
            ModuleId::Summary => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<ModuleId> {
        ModuleId::ORDER.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModuleId::Filter => "filter",
            ModuleId::Entity => "entity",
            ModuleId::Temporal => "temporal",
            ModuleId::Topic => "topic",
            ModuleId::Summary => "summary",
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// One tier per module, in routing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TierAssignment(pub [Tier; 5]);

impl TierAssignment {
    pub fn uniform(tier: Tier) -> TierAssignment {
        TierAssignment([tier; 5])
    }

    pub fn get(&self, module: ModuleId) -> Tier {
        self.0[module.index()]
    }

    pub fn set(&mut self, module: ModuleId, tier: Tier) {
        self.0[module.index()] = tier;
    }

    /// Tier indices as a `[usize; 5]`, useful for logs.
    pub fn indices(&self) -> [usize; 5] {
        let mut out = [0usize; 5];
        for (i, t) in self.0.iter().enumerate() {
            out[i] = t.index();
        }
        out
    }
}

/// The mechanism realizing budget tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Tiers differ in algorithm class: symbolic rules at Low, embedding
    /// stand-ins at Mid, a remote LLM at High.
    Implementation,
    /// Tiers differ in inference behavior: direct, step-by-step, and a
    /// plan/act/reflect scaffold, all on one model.
    Reasoning,
    /// Tiers differ in backbone model size, sharing one prompt per module.
    Capacity,
    /// No backends at all; used with the synthetic environment.
    Simulated,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Implementation => "implementation",
            Strategy::Reasoning => "reasoning",
            Strategy::Capacity => "capacity",
            Strategy::Simulated => "simulated",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "implementation" => Ok(Strategy::Implementation),
            "reasoning" => Ok(Strategy::Reasoning),
            "capacity" => Ok(Strategy::Capacity),
            "simulated" => Ok(Strategy::Simulated),
            other => Err(format!("unknown strategy: {other}")),
        }
    }
}

/// Enumerates all 3^5 = 243 tier assignments in lexicographic order over
/// the routing order with `Low < Mid < High`.
pub fn all_assignments() -> Vec<TierAssignment> {
    let mut out = Vec::with_capacity(243);
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                for d in 0..3 {
                    for e in 0..3 {
                        out.push(TierAssignment([
                            Tier::from_index(a).unwrap(),
                            Tier::from_index(b).unwrap(),
                            Tier::from_index(c).unwrap(),
                            Tier::from_index(d).unwrap(),
                            Tier::from_index(e).unwrap(),
                        ]));
                    }
                }
            }
        }
    }
    out
}
