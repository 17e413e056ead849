//! Dataset ingestion, tokenization, chunking, deterministic embeddings,
//! and top-K retrieval.
//!
//! History text is the only persistent form of memory: it is segmented
//! into fixed-size token chunks, embedded with a seed-free feature
//! hasher, and retrieved by cosine similarity per query. No extraction
//! or summarization happens here.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

/// Default embedding width for queries, module inputs, and module
/// descriptors.
pub const EMBED_DIM: usize = 768;

/// One query with its gold answers and optional metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub current_date: Option<String>,
    pub category: Option<String>,
}

/// Dialogue provenance attached to chunks cut from session histories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMeta {
    pub date_time: Option<String>,
    pub session_id: Option<String>,
    pub dia_id: Option<String>,
}

impl ChunkMeta {
    pub fn is_empty(&self) -> bool {
        self.date_time.is_none() && self.session_id.is_none() && self.dia_id.is_none()
    }
}

/// A contiguous segment of raw history text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    /// Index within the owning store; contiguous and ordered.
    pub id: usize,
    pub text: String,
    /// Number of tokens in `text` under [`tokenize`].
    pub token_count: usize,
    pub meta: Option<ChunkMeta>,
}

/// All chunks of one record's history plus their embeddings.
#[derive(Debug, Clone)]
pub struct ChunkStore {
    pub chunks: Vec<Chunk>,
    pub embeddings: Vec<Vec<f32>>,
}

impl ChunkStore {
    /// Builds a store by embedding every chunk with `embedder`.
    pub fn build(chunks: Vec<Chunk>, embedder: &Embedder) -> ChunkStore {
        let embeddings = chunks.iter().map(|c| embedder.embed(&c.text)).collect();
        ChunkStore { chunks, embeddings }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// One dataset line: a query and the chunked store of its own history.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub query: QueryRecord,
    pub store: ChunkStore,
}

/// Lowercases, strips punctuation to spaces, and splits on whitespace.
///
/// A token is a maximal run of alphanumeric characters; everything else
/// separates. Deterministic across runs and processes.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|s| text[s].chars().flat_map(|c| c.to_lowercase()).collect())
        .collect()
}

/// Byte ranges of each token in `text`, in order.
fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push(s..i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Segments a document into chunks of exactly `chunk_size` tokens (the
/// last chunk may be shorter). Chunk texts are raw spans of the
/// document cut at token boundaries, so their concatenation reproduces
/// the document byte for byte.
pub fn chunk_history(document: &str, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk_size must be >= 1");
    chunk_spans(document, chunk_size)
        .into_iter()
        .enumerate()
        .map(|(id, cs)| Chunk {
            id,
            text: document[cs.range].to_string(),
            token_count: cs.token_count,
            meta: None,
        })
        .collect()
}

struct ChunkSpan {
    range: Range<usize>,
    token_count: usize,
    /// Byte offset of the chunk's first token within the document.
    first_token_start: usize,
}

fn chunk_spans(document: &str, chunk_size: usize) -> Vec<ChunkSpan> {
    let tokens = token_spans(document);
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for group in tokens.chunks(chunk_size) {
        let last_end = group.last().unwrap().end;
        out.push(ChunkSpan {
            range: cursor..last_end,
            token_count: group.len(),
            first_token_start: group[0].start,
        });
        cursor = last_end;
    }
    // The last chunk absorbs any trailing separator bytes so that the
    // concatenation of chunk texts covers the whole document.
    out.last_mut().unwrap().range.end = document.len();
    out
}

/// Deterministic signed feature-hash embedder over token unigrams and
/// bigrams, L2-normalized. Empty text maps to the zero vector.
///
/// The hash is a fixed-seed FNV-1a, so vectors are bitwise identical
/// across runs and processes. Replace this with a remote encoder by
/// swapping the embedding step where stores are built.
#[derive(Debug, Clone)]
pub struct Embedder {
    pub dim: usize,
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder { dim: EMBED_DIM }
    }
}

impl Embedder {
    pub fn new(dim: usize) -> Embedder {
        assert!(dim >= 1, "embedding dimension must be >= 1");
        Embedder { dim }
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        let tokens = tokenize(text);
        for t in &tokens {
            self.add_feature(&mut v, t.as_bytes());
        }
        for pair in tokens.windows(2) {
            let mut key = Vec::with_capacity(pair[0].len() + pair[1].len() + 1);
            key.extend_from_slice(pair[0].as_bytes());
            key.push(b' ');
            key.extend_from_slice(pair[1].as_bytes());
            self.add_feature(&mut v, &key);
        }
        let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
        }
        v
    }

    fn add_feature(&self, v: &mut [f32], key: &[u8]) {
        let h = fnv1a64(key);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
}

/// Embeds with the default 768-bucket embedder.
pub fn embed_text(text: &str) -> Vec<f32> {
    Embedder::default().embed(text)
}

/// Fixed-seed FNV-1a 64-bit hash; stable across processes, unlike the
/// standard library's `DefaultHasher`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Cosine similarity; zero if either vector is all-zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine: dimension mismatch");
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += (a[i] as f64).powi(2);
        nb += (b[i] as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Returns the `k` chunks most similar to the query by cosine, ranked
/// descending with ties broken by ascending chunk id. Returns all
/// chunks (ranked) when the store holds `k` or fewer.
pub fn retrieve(query: &QueryRecord, store: &ChunkStore, k: usize, embedder: &Embedder) -> Vec<Chunk> {
    assert!(k >= 1, "retrieval k must be >= 1");
    let qe = embedder.embed(&query.question);
    retrieve_by_embedding(&qe, store, k)
}

/// Retrieval against a precomputed query embedding. Ties break on the
/// chunk id itself, so results do not depend on store insertion order.
pub fn retrieve_by_embedding(query_emb: &[f32], store: &ChunkStore, k: usize) -> Vec<Chunk> {
    let mut scored: Vec<(f64, usize)> = store
        .embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| (cosine(query_emb, e), i))
        .collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(store.chunks[a.1].id.cmp(&store.chunks[b.1].id))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(_, i)| store.chunks[i].clone())
        .collect()
}

#[derive(Deserialize)]
struct RawTurn {
    dia_id: Option<String>,
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct RawSession {
    date_time: Option<String>,
    session_id: Option<String>,
    turns: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    question: String,
    answers: Option<Vec<String>>,
    context: Option<String>,
    sessions: Option<Vec<RawSession>>,
    current_date: Option<String>,
    category: Option<String>,
}

/// Loads a JSONL dataset; each line carries its own history, chunked at
/// `chunk_size` and embedded into a per-record store.
///
/// A line must provide exactly one of `context` (plain text) or
/// `sessions` (dialogue turns, flattened to `speaker: text` lines with
/// date/session/turn provenance propagated into chunk metadata).
pub fn load_dataset(path: &Path, chunk_size: usize, embedder: &Embedder) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: lineno,
            msg: e.to_string(),
        })?;
        let answers = raw.answers.ok_or(Error::Dataset {
            line: lineno,
            msg: "missing field \"answers\"".into(),
        })?;
        if answers.is_empty() {
            return Err(Error::Dataset {
                line: lineno,
                msg: "\"answers\" must be non-empty".into(),
            });
        }
        let chunks = match (raw.context, raw.sessions) {
            (Some(ctx), None) => chunk_history(&ctx, chunk_size),
            (None, Some(sessions)) => chunk_sessions(&sessions, chunk_size),
            (Some(_), Some(_)) => {
                return Err(Error::Dataset {
                    line: lineno,
                    msg: "exactly one of \"context\"/\"sessions\" required, got both".into(),
                })
            }
            (None, None) => {
                return Err(Error::Dataset {
                    line: lineno,
                    msg: "exactly one of \"context\"/\"sessions\" required, got neither".into(),
                })
            }
        };
        out.push(DatasetRecord {
            query: QueryRecord {
                id: raw.id,
                question: raw.question,
                gold_answers: answers,
                current_date: raw.current_date,
                category: raw.category,
            },
            store: ChunkStore::build(chunks, embedder),
        });
    }
    Ok(out)
}

/// Flattens dialogue sessions into `speaker: text` lines and chunks each
/// session separately. Chunk ids run sequentially across sessions; each
/// chunk inherits the session's date/id and the dia_id of the turn that
/// contains its first token.
fn chunk_sessions(sessions: &[RawSession], chunk_size: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for session in sessions {
        let mut flat = String::new();
        // (start byte in flat, dia_id) per turn line.
        let mut turn_starts: Vec<(usize, Option<String>)> = Vec::new();
        for turn in &session.turns {
            turn_starts.push((flat.len(), turn.dia_id.clone()));
            flat.push_str(&turn.speaker);
            flat.push_str(": ");
            flat.push_str(&turn.text);
            flat.push('\n');
        }
        for cs in chunk_spans(&flat, chunk_size) {
            let dia_id = turn_starts
                .iter()
                .rev()
                .find(|(start, _)| *start <= cs.first_token_start)
                .and_then(|(_, d)| d.clone());
            let meta = ChunkMeta {
                date_time: session.date_time.clone(),
                session_id: session.session_id.clone(),
                dia_id,
            };
            chunks.push(Chunk {
                id: chunks.len(),
                text: flat[cs.range.clone()].to_string(),
                token_count: cs.token_count,
                meta: if meta.is_empty() { None } else { Some(meta) },
            });
        }
    }
    chunks
}
