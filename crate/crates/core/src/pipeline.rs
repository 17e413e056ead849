//! The fixed extraction pipeline: FILTER refines retrieved chunks,
//! ENTITY/TEMPORAL/TOPIC extract relation cues from the filtered set
//! in parallel, and SUMMARY folds everything into the final memory.
//! Each stage executes at the tier the router assigned it, through the
//! backend bound to that cell.

use crate::backend::{BackendKind, BackendSpec, ChatClient, Completion, GenerationParams};
use crate::corpus::{Chunk, Embedder};
use crate::error::{Error, Result};
use crate::heuristics;
use crate::reward::{CostRecord, PriceTable};
use crate::templates::{self, MemoryEntry, PromptInputs};
use crate::types::{ModuleId, Tier, TierAssignment};

/// Shared read-only state for pipeline execution.
pub struct PipelineContext<'a> {
    pub backends: &'a BackendSpec,
    pub client: Option<&'a dyn ChatClient>,
    pub prices: &'a PriceTable,
    pub embedder: &'a Embedder,
    pub max_tokens: u32,
    pub topic_top_n: usize,
}

impl<'a> PipelineContext<'a> {
    pub fn offline(
        backends: &'a BackendSpec,
        prices: &'a PriceTable,
        embedder: &'a Embedder,
    ) -> PipelineContext<'a> {
        PipelineContext {
            backends,
            client: None,
            prices,
            embedder,
            max_tokens: crate::backend::DEFAULT_MAX_TOKENS,
            topic_top_n: heuristics::TOPIC_TOP_N,
        }
    }
}

/// What one module produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulePayload {
    Chunks(Vec<Chunk>),
    Relations(Vec<String>),
    Memory(String),
}

/// One executed module: payload plus every backend call it made.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleResult {
    pub payload: ModulePayload,
    pub cost_records: Vec<CostRecord>,
}

impl ModuleResult {
    pub fn into_chunks(self) -> Vec<Chunk> {
        match self.payload {
            ModulePayload::Chunks(c) => c,
            _ => panic!("payload is not chunks"),
        }
    }

    pub fn into_relations(self) -> Vec<String> {
        match self.payload {
            ModulePayload::Relations(r) => r,
            _ => panic!("payload is not relations"),
        }
    }

    pub fn into_memory(self) -> String {
        match self.payload {
            ModulePayload::Memory(m) => m,
            _ => panic!("payload is not memory"),
        }
    }
}

/// The full pipeline result for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub filtered_chunks: Vec<Chunk>,
    pub entity_relations: Vec<String>,
    pub temporal_facts: Vec<String>,
    pub topic_relations: Vec<String>,
    pub memory: String,
    pub ledger: Vec<CostRecord>,
}

/// Newline-joined chunk texts, the router-state input for FILTER (over
/// retrieved chunks) and the three relation modules (over filtered
/// chunks).
pub fn joined_chunk_text(chunks: &[Chunk]) -> String {
    chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n")
}

/// Newline-joined relation cues, the router-state input for SUMMARY.
pub fn relations_text(entity: &[String], temporal: &[String], topic: &[String]) -> String {
    entity
        .iter()
        .chain(temporal)
        .chain(topic)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join("\n")
}

fn memory_entries(chunks: &[Chunk]) -> Vec<MemoryEntry> {
    chunks
        .iter()
        .enumerate()
        .map(|(i, c)| MemoryEntry::from_chunk(i, c))
        .collect()
}

fn remote_call(
    ctx: &PipelineContext,
    module: ModuleId,
    tier: Tier,
    model_id: &str,
    prompt: &str,
) -> Result<(Completion, CostRecord)> {
    let client = ctx.client.ok_or_else(|| {
        Error::Config(format!("{module} {tier} is bound to {model_id} but no endpoint is configured"))
    })?;
    let params = GenerationParams { temperature: 0.0, max_tokens: ctx.max_tokens };
    let completion = client
        .complete(model_id, prompt, &params)
        .map_err(|e| Error::Backend { module, tier, msg: e.to_string() })?;
    let record = CostRecord::remote(
        module,
        tier,
        model_id,
        completion.input_tokens,
        completion.output_tokens,
        ctx.prices,
    )?;
    Ok((completion, record))
}

fn simulated_cell_error(module: ModuleId, tier: Tier) -> Error {
    Error::Config(format!(
        "simulated strategy bypasses pipeline execution ({module} {tier} was invoked)"
    ))
}

/// Runs FILTER at a tier over the retrieved chunks.
pub fn execute_filter(
    ctx: &PipelineContext,
    query: &str,
    retrieved: &[Chunk],
    tier: Tier,
) -> Result<ModuleResult> {
    if retrieved.is_empty() {
        return Err(Error::Config("filter requires a non-empty retrieved chunk set".into()));
    }
    let module = ModuleId::Filter;
    match ctx.backends.kind(module, tier) {
        _ if ctx.backends.strategy == crate::types::Strategy::Simulated => {
            Err(simulated_cell_error(module, tier))
        }
        BackendKind::Heuristic => Ok(ModuleResult {
            payload: ModulePayload::Chunks(heuristics::heuristic_filter(query, retrieved)),
            cost_records: vec![CostRecord::free(module, tier)],
        }),
        BackendKind::Embedding => Ok(ModuleResult {
            payload: ModulePayload::Chunks(heuristics::embedding_filter(
                query,
                retrieved,
                ctx.embedder,
            )),
            cost_records: vec![CostRecord::free(module, tier)],
        }),
        BackendKind::Remote { model_id } => {
            let prompt = templates::render_prompt(
                module,
                tier,
                ctx.backends.strategy,
                query,
                &PromptInputs::Memories(memory_entries(retrieved)),
            )?;
            let mut records = Vec::new();
            for _ in 0..2 {
                let (completion, record) = remote_call(ctx, module, tier, model_id, &prompt)?;
                records.push(record);
                if let Ok(scores) = templates::parse_score_array(&completion.text, retrieved.len())
                {
                    return Ok(ModuleResult {
                        payload: ModulePayload::Chunks(heuristics::filter_by_scores(
                            retrieved,
                            &scores,
                            heuristics::FILTER_TAU,
                        )),
                        cost_records: records,
                    });
                }
            }
            records.push(CostRecord::free(module, tier));
            Ok(ModuleResult {
                payload: ModulePayload::Chunks(heuristics::embedding_filter(
                    query,
                    retrieved,
                    ctx.embedder,
                )),
                cost_records: records,
            })
        }
    }
}

/// Runs one of ENTITY/TEMPORAL/TOPIC at a tier over the filtered
/// chunks.
pub fn execute_relation(
    ctx: &PipelineContext,
    module: ModuleId,
    query: &str,
    filtered: &[Chunk],
    tier: Tier,
) -> Result<ModuleResult> {
    assert!(
        matches!(module, ModuleId::Entity | ModuleId::Temporal | ModuleId::Topic),
        "not a relation module: {module}"
    );
    if ctx.backends.strategy == crate::types::Strategy::Simulated {
        return Err(simulated_cell_error(module, tier));
    }
    let low = |chunks: &[Chunk]| match module {
        ModuleId::Entity => heuristics::heuristic_entity(chunks),
        ModuleId::Temporal => heuristics::heuristic_temporal(chunks),
        ModuleId::Topic => heuristics::heuristic_topic(chunks, ctx.topic_top_n),
        _ => unreachable!(),
    };
    match ctx.backends.kind(module, tier) {
        BackendKind::Heuristic => Ok(ModuleResult {
            payload: ModulePayload::Relations(low(filtered)),
            cost_records: vec![CostRecord::free(module, tier)],
        }),
        BackendKind::Embedding => {
            let relations = match module {
                ModuleId::Entity => heuristics::mid_entity(query, filtered, ctx.embedder),
                ModuleId::Temporal => heuristics::mid_temporal(query, filtered, ctx.embedder),
                ModuleId::Topic => {
                    heuristics::mid_topic(query, filtered, ctx.topic_top_n, ctx.embedder)
                }
                _ => unreachable!(),
            };
            Ok(ModuleResult {
                payload: ModulePayload::Relations(relations),
                cost_records: vec![CostRecord::free(module, tier)],
            })
        }
        BackendKind::Remote { model_id } => {
            let prompt = templates::render_prompt(
                module,
                tier,
                ctx.backends.strategy,
                query,
                &PromptInputs::Memories(memory_entries(filtered)),
            )?;
            let mut records = Vec::new();
            for _ in 0..2 {
                let (completion, record) = remote_call(ctx, module, tier, model_id, &prompt)?;
                records.push(record);
                if let Ok(relations) = templates::parse_string_array(&completion.text) {
                    return Ok(ModuleResult {
                        payload: ModulePayload::Relations(relations),
                        cost_records: records,
                    });
                }
            }
            records.push(CostRecord::free(module, tier));
            Ok(ModuleResult {
                payload: ModulePayload::Relations(low(filtered)),
                cost_records: records,
            })
        }
    }
}

/// Runs SUMMARY at a tier over the three cue lists; the filtered
/// chunks back the digest fallback.
pub fn execute_summary(
    ctx: &PipelineContext,
    query: &str,
    filtered: &[Chunk],
    entity: &[String],
    temporal: &[String],
    topic: &[String],
    tier: Tier,
) -> Result<ModuleResult> {
    let module = ModuleId::Summary;
    if ctx.backends.strategy == crate::types::Strategy::Simulated {
        return Err(simulated_cell_error(module, tier));
    }
    match ctx.backends.kind(module, tier) {
        BackendKind::Heuristic => Ok(ModuleResult {
            payload: ModulePayload::Memory(heuristics::heuristic_summary(
                filtered, entity, temporal, topic,
            )),
            cost_records: vec![CostRecord::free(module, tier)],
        }),
        BackendKind::Embedding => Ok(ModuleResult {
            payload: ModulePayload::Memory(heuristics::mid_summary(
                query, filtered, entity, temporal, topic,
            )),
            cost_records: vec![CostRecord::free(module, tier)],
        }),
        BackendKind::Remote { model_id } => {
            let prompt = templates::render_prompt(
                module,
                tier,
                ctx.backends.strategy,
                query,
                &PromptInputs::Relations {
                    entity: entity.to_vec(),
                    temporal: temporal.to_vec(),
                    topic: topic.to_vec(),
                },
            )?;
            let mut records = Vec::new();
            for _ in 0..2 {
                let (completion, record) = remote_call(ctx, module, tier, model_id, &prompt)?;
                records.push(record);
                if let Ok(memory) = templates::parse_summary(&completion.text) {
                    return Ok(ModuleResult {
                        payload: ModulePayload::Memory(memory),
                        cost_records: records,
                    });
                }
            }
            records.push(CostRecord::free(module, tier));
            Ok(ModuleResult {
                payload: ModulePayload::Memory(heuristics::heuristic_summary(
                    filtered, entity, temporal, topic,
                )),
                cost_records: records,
            })
        }
    }
}

/// Executes the whole pipeline under a fixed tier assignment. The
/// three relation modules run on scoped threads; their results and
/// cost records are merged back in fixed module order, so output and
/// ledger are deterministic regardless of scheduling.
pub fn run_pipeline(
    ctx: &PipelineContext,
    query: &str,
    retrieved: &[Chunk],
    assignment: &TierAssignment,
) -> Result<PipelineOutput> {
    if retrieved.is_empty() {
        return Err(Error::Config("run_pipeline requires retrieved chunks".into()));
    }
    let filter = execute_filter(ctx, query, retrieved, assignment.get(ModuleId::Filter))?;
    let mut ledger = filter.cost_records.clone();
    let filtered = filter.into_chunks();

    let (entity_res, temporal_res, topic_res) = std::thread::scope(|scope| {
        let entity = scope.spawn(|| {
            execute_relation(ctx, ModuleId::Entity, query, &filtered, assignment.get(ModuleId::Entity))
        });
        let temporal = scope.spawn(|| {
            execute_relation(
                ctx,
                ModuleId::Temporal,
                query,
                &filtered,
                assignment.get(ModuleId::Temporal),
            )
        });
        let topic =
            execute_relation(ctx, ModuleId::Topic, query, &filtered, assignment.get(ModuleId::Topic));
        (entity.join().expect("entity worker"), temporal.join().expect("temporal worker"), topic)
    });
    let entity_res = entity_res?;
    let temporal_res = temporal_res?;
    let topic_res = topic_res?;
    ledger.extend(entity_res.cost_records.clone());
    ledger.extend(temporal_res.cost_records.clone());
    ledger.extend(topic_res.cost_records.clone());
    let entity_relations = entity_res.into_relations();
    let temporal_facts = temporal_res.into_relations();
    let topic_relations = topic_res.into_relations();

    let summary = execute_summary(
        ctx,
        query,
        &filtered,
        &entity_relations,
        &temporal_facts,
        &topic_relations,
        assignment.get(ModuleId::Summary),
    )?;
    ledger.extend(summary.cost_records.clone());
    let memory = summary.into_memory();

    Ok(PipelineOutput {
        filtered_chunks: filtered,
        entity_relations,
        temporal_facts,
        topic_relations,
        memory,
        ledger,
    })
}
