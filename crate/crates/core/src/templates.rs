//! Prompt templates, placeholder substitution, memory-tag serialization,
//! and completion parsing.
//!
//! Templates live as plain-text files under `templates/` and are
//! embedded at compile time. Reasoning tiers bind tier-specific
//! templates; implementation and capacity tiers reuse each module's
//! High template (capacity varies the model, implementation varies the
//! algorithm below the High tier).

use crate::error::{Error, Result};
use crate::types::{ModuleId, Strategy, Tier};
use regex::Regex;
use std::sync::OnceLock;

const FILTER_LOW: &str = include_str!("../templates/filter_low.txt");
const FILTER_MID: &str = include_str!("../templates/filter_mid.txt");
const FILTER_HIGH: &str = include_str!("../templates/filter_high.txt");
const ENTITY_LOW: &str = include_str!("../templates/entity_low.txt");
const ENTITY_MID: &str = include_str!("../templates/entity_mid.txt");
const ENTITY_HIGH: &str = include_str!("../templates/entity_high.txt");
const TEMPORAL_LOW: &str = include_str!("../templates/temporal_low.txt");
const TEMPORAL_MID: &str = include_str!("../templates/temporal_mid.txt");
const TEMPORAL_HIGH: &str = include_str!("../templates/temporal_high.txt");
const TOPIC_LOW: &str = include_str!("../templates/topic_low.txt");
const TOPIC_MID: &str = include_str!("../templates/topic_mid.txt");
const TOPIC_HIGH: &str = include_str!("../templates/topic_high.txt");
const SUMMARY_LOW: &str = include_str!("../templates/summary_low.txt");
const SUMMARY_MID: &str = include_str!("../templates/summary_mid.txt");
const SUMMARY_HIGH: &str = include_str!("../templates/summary_high.txt");
const JUDGE: &str = include_str!("../templates/judge.txt");
const ANSWER_SHORT: &str = include_str!("../templates/answer_locomo.txt");
const ANSWER_CONTEXT: &str = include_str!("../templates/answer_hotpotqa.txt");
const ANSWER_SESSIONS: &str = include_str!("../templates/answer_longmemeval.txt");

/// The tier-specific template for a module.
fn tier_template(module: ModuleId, tier: Tier) -> &'static str {
    match (module, tier) {
        (ModuleId::Filter, Tier::Low) => FILTER_LOW,
        (ModuleId::Filter, Tier::Mid) => FILTER_MID,
        (ModuleId::Filter, Tier::High) => FILTER_HIGH,
        (ModuleId::Entity, Tier::Low) => ENTITY_LOW,
        (ModuleId::Entity, Tier::Mid) => ENTITY_MID,
        (ModuleId::Entity, Tier::High) => ENTITY_HIGH,
        (ModuleId::Temporal, Tier::Low) => TEMPORAL_LOW,
        (ModuleId::Temporal, Tier::Mid) => TEMPORAL_MID,
        (ModuleId::Temporal, Tier::High) => TEMPORAL_HIGH,
        (ModuleId::Topic, Tier::Low) => TOPIC_LOW,
        (ModuleId::Topic, Tier::Mid) => TOPIC_MID,
        (ModuleId::Topic, Tier::High) => TOPIC_HIGH,
        (ModuleId::Summary, Tier::Low) => SUMMARY_LOW,
        (ModuleId::Summary, Tier::Mid) => SUMMARY_MID,
        (ModuleId::Summary, Tier::High) => SUMMARY_HIGH,
    }
}

/// Resolves the template bound to a `(module, tier, strategy)` cell.
///
/// Reasoning varies the prompt per tier. Implementation and capacity use
/// one unified prompt per module (the High template): capacity swaps the
/// backbone model instead, and implementation swaps the algorithm below
/// its LLM tier. The simulated strategy binds no templates.
pub fn module_template(module: ModuleId, tier: Tier, strategy: Strategy) -> Result<&'static str> {
    match strategy {
        Strategy::Reasoning => Ok(tier_template(module, tier)),
        Strategy::Implementation | Strategy::Capacity => Ok(tier_template(module, Tier::High)),
        Strategy::Simulated => Err(Error::Config(
            "simulated strategy binds no prompt templates".into(),
        )),
    }
}

/// One memory entry ready for tag serialization.
#[derive(Debug, Clone)]
pub struct MemoryEntry {
    pub index: usize,
    pub date_time: Option<String>,
    pub session_id: Option<String>,
    pub dia_id: Option<String>,
    pub text: String,
}

impl MemoryEntry {
    pub fn from_chunk(index: usize, chunk: &crate::corpus::Chunk) -> MemoryEntry {
        let meta = chunk.meta.clone().unwrap_or_default();
        MemoryEntry {
            index,
            date_time: meta.date_time,
            session_id: meta.session_id,
            dia_id: meta.dia_id,
            text: chunk.text.clone(),
        }
    }
}

/// Serializes memories as `<memory index="N" ...>text</memory>` tags,
/// one per line, with absent attributes omitted.
pub fn serialize_memories(memories: &[MemoryEntry]) -> String {
    memories
        .iter()
        .map(|m| {
            let mut tag = format!("<memory index=\"{}\"", m.index);
            if let Some(d) = &m.date_time {
                tag.push_str(&format!(" date_time=\"{d}\""));
            }
            if let Some(s) = &m.session_id {
                tag.push_str(&format!(" session_id=\"{s}\""));
            }
            if let Some(d) = &m.dia_id {
                tag.push_str(&format!(" dia_id=\"{d}\""));
            }
            tag.push('>');
            tag.push_str(&m.text);
            tag.push_str("</memory>");
            tag
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inputs for prompt rendering; the variant must match the module.
#[derive(Debug, Clone)]
pub enum PromptInputs {
    /// Filter, entity, temporal, and topic prompts take memory tags.
    Memories(Vec<MemoryEntry>),
    /// The summary prompt takes the three extracted relation lists.
    Relations {
        entity: Vec<String>,
        temporal: Vec<String>,
        topic: Vec<String>,
    },
}

fn tag_list(tag: &str, items: &[String]) -> String {
    items
        .iter()
        .map(|s| format!("<{tag}>{s}</{tag}>"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-pass placeholder substitution. Only the listed keys are
/// replaced, exactly once each occurrence; everything else (including
/// literal braces) passes through, and substituted values are never
/// rescanned.
fn substitute(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;
    'outer: while i < bytes.len() {
        if bytes[i] == b'{' {
            for (key, value) in pairs {
                if template[i..].starts_with(key) {
                    out.push_str(value);
                    i += key.len();
                    continue 'outer;
                }
            }
        }
        // Advance one full character.
        let ch_len = template[i..].chars().next().unwrap().len_utf8();
        out.push_str(&template[i..i + ch_len]);
        i += ch_len;
    }
    out
}

/// Renders the prompt for a `(module, tier, strategy)` cell, serializing
/// memories exactly as the templates describe and substituting the
/// `{query}` / `{memories_text}` / `{entity_text}` / `{temporal_text}` /
/// `{topic_text}` placeholders verbatim.
pub fn render_prompt(
    module: ModuleId,
    tier: Tier,
    strategy: Strategy,
    query: &str,
    inputs: &PromptInputs,
) -> Result<String> {
    let template = module_template(module, tier, strategy)?;
    match (module, inputs) {
        (ModuleId::Summary, PromptInputs::Relations { entity, temporal, topic }) => {
            let e = tag_list("entity", entity);
            let t = tag_list("temporal", temporal);
            let p = tag_list("topic", topic);
            Ok(substitute(
                template,
                &[
                    ("{query}", query),
                    ("{entity_text}", &e),
                    ("{temporal_text}", &t),
                    ("{topic_text}", &p),
                ],
            ))
        }
        (ModuleId::Summary, PromptInputs::Memories(_)) => Err(Error::Config(
            "summary prompt takes relation lists, not memories".into(),
        )),
        (_, PromptInputs::Memories(memories)) => {
            let mems = serialize_memories(memories);
            Ok(substitute(
                template,
                &[("{query}", query), ("{memories_text}", &mems)],
            ))
        }
        (_, PromptInputs::Relations { .. }) => Err(Error::Config(format!(
            "{module} prompt takes memories, not relation lists"
        ))),
    }
}

fn answer_span_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap())
}

/// The LAST `<answer>...</answer>` span of a completion, if any.
/// Reasoning-tier completions may contain earlier drafts; the final
/// span is the one that counts.
pub fn extract_answer_span(completion: &str) -> Option<&str> {
    answer_span_regex()
        .captures_iter(completion)
        .last()
        .map(|c| c.get(1).unwrap().as_str())
}

/// Parses a bracketed integer score list of length `expected_n` from the
/// completion's last answer span. Scores are clamped into 0..=10.
pub fn parse_score_array(completion: &str, expected_n: usize) -> Result<Vec<i64>> {
    let span = extract_answer_span(completion)
        .ok_or_else(|| Error::Parse("no <answer> span in completion".into()))?;
    let inner = span.trim();
    let inner = inner
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Parse(format!("expected bracketed list, got {inner:?}")))?;
    let mut scores = Vec::new();
    let body = inner.trim();
    if !body.is_empty() {
        for part in body.split(',') {
            let n: i64 = part
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("non-integer score entry {:?}", part.trim())))?;
            scores.push(n.clamp(0, 10));
        }
    }
    if scores.len() != expected_n {
        return Err(Error::Parse(format!(
            "expected {expected_n} scores, got {}",
            scores.len()
        )));
    }
    Ok(scores)
}

/// Parses a JSON array of strings from the completion's last answer
/// span. Empty arrays are valid.
pub fn parse_string_array(completion: &str) -> Result<Vec<String>> {
    let span = extract_answer_span(completion)
        .ok_or_else(|| Error::Parse("no <answer> span in completion".into()))?;
    serde_json::from_str(span.trim())
        .map_err(|e| Error::Parse(format!("bad string array: {e}")))
}

/// Extracts the plain-text summary from the completion's last answer
/// span; empty or missing spans are errors.
pub fn parse_summary(completion: &str) -> Result<String> {
    let span = extract_answer_span(completion)
        .ok_or_else(|| Error::Parse("no <answer> span in completion".into()))?;
    let text = span.trim();
    if text.is_empty() {
        return Err(Error::Parse("empty summary span".into()));
    }
    Ok(text.to_string())
}

/// Renders the judge prompt. Gold answers are serialized as a JSON
/// array so multiple references stay unambiguous.
pub fn render_judge(question: &str, gold_answers: &[String], prediction: &str) -> String {
    let gt = serde_json::to_string(gold_answers).expect("string array always serializes");
    substitute(
        JUDGE,
        &[
            ("{question}", question),
            ("{ground_truth}", &gt),
            ("{model_answer}", prediction),
        ],
    )
}

/// A parsed judge verdict.
#[derive(Debug, Clone)]
pub struct JudgeVerdict {
    pub explanation: String,
    pub score: f64,
}

/// Parses the judge's strict-JSON output. Only scores in {0, 0.5, 1}
/// are accepted.
pub fn parse_judge(completion: &str) -> Result<JudgeVerdict> {
    #[derive(serde::Deserialize)]
    struct Raw {
        explanation: String,
        score: f64,
    }
    let trimmed = completion.trim();
    let parsed: std::result::Result<Raw, _> = serde_json::from_str(trimmed);
    let raw = match parsed {
        Ok(r) => r,
        Err(_) => {
            // Tolerate completions that wrap the JSON in prose or fences.
            let start = trimmed.find('{');
            let end = trimmed.rfind('}');
            match (start, end) {
                (Some(s), Some(e)) if s < e => serde_json::from_str(&trimmed[s..=e])
                    .map_err(|e| Error::Parse(format!("bad judge JSON: {e}")))?,
                _ => return Err(Error::Parse("no JSON object in judge completion".into())),
            }
        }
    };
    if raw.score != 0.0 && raw.score != 0.5 && raw.score != 1.0 {
        return Err(Error::Parse(format!(
            "judge score {} outside {{0, 0.5, 1}}",
            raw.score
        )));
    }
    Ok(JudgeVerdict {
        explanation: raw.explanation,
        score: raw.score,
    })
}

/// Which downstream answer prompt a dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerPromptKind {
    /// Short-phrase answers, memory prepended as context.
    Short,
    /// Context + question with tagged answer output.
    Context,
    /// Chat-history style with a current date.
    Sessions,
}

/// Renders the answer prompt used to turn extracted memory into a
/// prediction when a remote reader model is configured.
pub fn render_answer_prompt(
    kind: AnswerPromptKind,
    memory: &str,
    question: &str,
    current_date: Option<&str>,
) -> String {
    match kind {
        AnswerPromptKind::Short => {
            let body = fill_positional(ANSWER_SHORT, &[question]);
            format!("{memory}\n\n{body}")
        }
        AnswerPromptKind::Context => substitute(
            ANSWER_CONTEXT,
            &[("{context}", memory), ("{question}", question)],
        ),
        AnswerPromptKind::Sessions => fill_positional(
            ANSWER_SESSIONS,
            &[memory, current_date.unwrap_or(""), question],
        ),
    }
}

/// Replaces bare `{}` placeholders in order; extra placeholders are
/// left untouched.
fn fill_positional(template: &str, values: &[&str]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    for v in values {
        match rest.find("{}") {
            Some(pos) => {
                out.push_str(&rest[..pos]);
                out.push_str(v);
                rest = &rest[pos + 2..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}
