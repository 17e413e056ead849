//! Cost-free stand-in backends for the implementation strategy: lexical
//! heuristics at the low tier and embedding-based scoring at the mid
//! tier. Every function here is pure and deterministic.

use crate::corpus::{cosine, tokenize, Chunk, Embedder};
use regex::Regex;
use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

/// Chunks scoring at or above this 0..=10 threshold survive filtering.
pub const FILTER_TAU: i64 = 5;

/// Default number of topic keywords extracted per query.
pub const TOPIC_TOP_N: usize = 8;

/// Scores one chunk 0..=10 as the rounded fraction of distinct query
/// tokens it contains.
pub fn overlap_score(query_tokens: &HashSet<String>, chunk_text: &str) -> i64 {
    if query_tokens.is_empty() {
        return 0;
    }
    let chunk_tokens: HashSet<String> = tokenize(chunk_text).into_iter().collect();
    let overlap = query_tokens.intersection(&chunk_tokens).count();
    (10.0 * overlap as f64 / query_tokens.len() as f64).round() as i64
}

/// Lexical-overlap scores for every chunk, in input order.
pub fn overlap_scores(query: &str, chunks: &[Chunk]) -> Vec<i64> {
    let q: HashSet<String> = tokenize(query).into_iter().collect();
    chunks.iter().map(|c| overlap_score(&q, &c.text)).collect()
}

/// Embedding-cosine scores 0..=10 for every chunk, in input order.
/// Negative cosines clamp to 0 before scaling.
pub fn embedding_scores(query: &str, chunks: &[Chunk], embedder: &Embedder) -> Vec<i64> {
    let q = embedder.embed(query);
    chunks
        .iter()
        .map(|c| {
            let sim = cosine(&q, &embedder.embed(&c.text)).max(0.0);
            (10.0 * sim).round() as i64
        })
        .collect()
}

/// Applies the keep rule to scored chunks: everything scoring at least
/// tau stays, and when nothing does, the single best-scoring chunk
/// (ties to the lowest chunk id) stays so the output is never empty.
pub fn filter_by_scores(chunks: &[Chunk], scores: &[i64], tau: i64) -> Vec<Chunk> {
    assert_eq!(chunks.len(), scores.len(), "one score per chunk");
    assert!(!chunks.is_empty(), "filter requires chunks");
    let kept: Vec<Chunk> = chunks
        .iter()
        .zip(scores)
        .filter(|(_, s)| **s >= tau)
        .map(|(c, _)| c.clone())
        .collect();
    if !kept.is_empty() {
        return kept;
    }
    let best = chunks
        .iter()
        .zip(scores)
        .min_by(|(ca, sa), (cb, sb)| sb.cmp(sa).then(ca.id.cmp(&cb.id)))
        .map(|(c, _)| c.clone())
        .expect("non-empty input");
    vec![best]
}

/// Low-tier filter: lexical overlap scoring plus the keep rule.
pub fn heuristic_filter(query: &str, chunks: &[Chunk]) -> Vec<Chunk> {
    filter_by_scores(chunks, &overlap_scores(query, chunks), FILTER_TAU)
}

/// Mid-tier filter: embedding-cosine scoring plus the same keep rule.
pub fn embedding_filter(query: &str, chunks: &[Chunk], embedder: &Embedder) -> Vec<Chunk> {
    filter_by_scores(chunks, &embedding_scores(query, chunks, embedder), FILTER_TAU)
}

fn capitalized_token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Z][A-Za-z]+\b").unwrap())
}

/// Capitalized tokens that are calendar words or sentence-leading
/// function words, not entity mentions.
fn entity_stopword(token: &str) -> bool {
    const STOP: &[&str] = &[
        "january", "february", "march", "april", "may", "june", "july", "august", "september",
        "october", "november", "december", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep",
        "sept", "oct", "nov", "dec", "monday", "tuesday", "wednesday", "thursday", "friday",
        "saturday", "sunday", "mon", "tue", "wed", "thu", "fri", "sat", "sun", "the", "this",
        "that", "these", "those", "it", "he", "she", "they", "we", "you", "an", "and", "but",
        "when", "what", "where", "who", "why", "how", "there", "then", "after", "before",
        "during", "today", "yesterday", "tomorrow",
    ];
    let lower = token.to_lowercase();
    STOP.contains(&lower.as_str())
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', '\n']).filter(|s| !s.trim().is_empty())
}

/// Entity relations with the sentence each pair came from, for mid-tier
/// re-ranking.
fn entity_pairs(chunks: &[Chunk]) -> Vec<(String, String)> {
    let re = capitalized_token_regex();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for chunk in chunks {
        for sentence in sentences(&chunk.text) {
            let names: Vec<&str> = {
                let mut uniq = Vec::new();
                for m in re.find_iter(sentence) {
                    let tok = m.as_str();
                    if !entity_stopword(tok) && !uniq.contains(&tok) {
                        uniq.push(tok);
                    }
                }
                uniq
            };
            for i in 0..names.len() {
                for j in (i + 1)..names.len() {
                    let rel = format!(
                        "{} - cooccurs_with - {} (chunk {})",
                        names[i], names[j], chunk.id
                    );
                    if seen.insert(rel.clone()) {
                        out.push((rel, sentence.to_string()));
                    }
                }
            }
        }
    }
    out
}

/// Low-tier entity extraction: capitalized-token pairs co-occurring in
/// a sentence.
pub fn heuristic_entity(chunks: &[Chunk]) -> Vec<String> {
    entity_pairs(chunks).into_iter().map(|(rel, _)| rel).collect()
}

/// Mid-tier entity extraction: the same pairs, ranked by embedding
/// similarity of their source sentence to the query.
pub fn mid_entity(query: &str, chunks: &[Chunk], embedder: &Embedder) -> Vec<String> {
    let q = embedder.embed(query);
    rank_by_similarity(entity_pairs(chunks), &q, embedder)
}

fn rank_by_similarity(
    items: Vec<(String, String)>,
    query_emb: &[f32],
    embedder: &Embedder,
) -> Vec<String> {
    let mut scored: Vec<(f64, usize, String)> = items
        .into_iter()
        .enumerate()
        .map(|(i, (rel, key))| (cosine(query_emb, &embedder.embed(&key)), i, rel))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, _, rel)| rel).collect()
}

fn date_regexes() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        let month = "(?:January|February|March|April|May|June|July|August|September|October|\
                     November|December|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sept|Sep|Oct|Nov|Dec)";
        [
            format!(r"\b\d{{1,2}} {month},? \d{{4}}\b"),
            format!(r"\b{month} \d{{1,2}},? \d{{4}}\b"),
            r"\b\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}(?::\d{2})?)?\b".to_string(),
            format!(r"\b{month} \d{{4}}\b"),
            r"\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?(?:am|pm|AM|PM))?\b".to_string(),
            r"\b(?:1[89]\d{2}|20\d{2})\b".to_string(),
        ]
        .iter()
        .map(|p| Regex::new(p).unwrap())
        .collect()
    })
}

/// Date and time expressions found in a text, most specific pattern
/// first, with later patterns skipping spans an earlier one claimed.
pub fn extract_dates(text: &str) -> Vec<String> {
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut found: Vec<(usize, String)> = Vec::new();
    for re in date_regexes() {
        for m in re.find_iter(text) {
            let overlaps = claimed.iter().any(|(s, e)| m.start() < *e && *s < m.end());
            if !overlaps {
                claimed.push((m.start(), m.end()));
                found.push((m.start(), m.as_str().to_string()));
            }
        }
    }
    found.sort_by_key(|(start, _)| *start);
    found.into_iter().map(|(_, d)| d).collect()
}

fn temporal_facts(chunks: &[Chunk]) -> Vec<(String, String)> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for chunk in chunks {
        let mut dates = Vec::new();
        if let Some(meta_date) = chunk.meta.as_ref().and_then(|m| m.date_time.as_ref()) {
            dates.push(meta_date.clone());
        }
        dates.extend(extract_dates(&chunk.text));
        for date in dates {
            let fact = format!("Event in chunk {} occurred on {}", chunk.id, date);
            if seen.insert(fact.clone()) {
                out.push((fact, date));
            }
        }
    }
    out
}

/// Low-tier temporal extraction: regex date matches plus chunk metadata
/// timestamps, rendered as event facts.
pub fn heuristic_temporal(chunks: &[Chunk]) -> Vec<String> {
    temporal_facts(chunks).into_iter().map(|(f, _)| f).collect()
}

/// Mid-tier temporal extraction: the same facts, re-ranked by embedding
/// similarity of the underlying date string to the query.
pub fn mid_temporal(query: &str, chunks: &[Chunk], embedder: &Embedder) -> Vec<String> {
    let q = embedder.embed(query);
    rank_by_similarity(temporal_facts(chunks), &q, embedder)
}

fn topic_stopword(token: &str) -> bool {
    const STOP: &[&str] = &[
        "a", "an", "and", "are", "as", "at", "be", "been", "but", "by", "did", "do", "does",
        "for", "from", "had", "has", "have", "he", "her", "his", "i", "if", "in", "is", "it",
        "its", "me", "my", "no", "not", "of", "on", "or", "our", "she", "so", "that", "the",
        "their", "them", "then", "there", "they", "this", "to", "up", "was", "we", "were",
        "what", "when", "where", "which", "who", "will", "with", "would", "you", "your",
    ];
    STOP.contains(&token)
}

/// TF-IDF keywords over the chunk set with the chunk each keyword is
/// most prominent in, scored with smoothed inverse document frequency
/// so single-chunk inputs still rank terms.
fn topic_keywords(chunks: &[Chunk], top_n: usize) -> Vec<(String, usize)> {
    let n = chunks.len();
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    let mut term_freq: Vec<HashMap<String, usize>> = Vec::with_capacity(n);
    for chunk in chunks {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for tok in tokenize(&chunk.text) {
            if !topic_stopword(&tok) && tok.len() > 1 {
                *tf.entry(tok).or_insert(0) += 1;
            }
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        term_freq.push(tf);
    }
    let mut best: HashMap<&str, (f64, usize)> = HashMap::new();
    for (chunk, tf) in chunks.iter().zip(&term_freq) {
        for (term, count) in tf {
            let idf = ((1.0 + n as f64) / (1.0 + doc_freq[term] as f64)).ln() + 1.0;
            let score = *count as f64 * idf;
            let entry = best.entry(term).or_insert((f64::NEG_INFINITY, 0));
            if score > entry.0 {
                *entry = (score, chunk.id);
            }
        }
    }
    let mut ranked: Vec<(&str, f64, usize)> =
        best.into_iter().map(|(t, (s, id))| (t, s, id)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(top_n)
        .map(|(t, _, id)| (t.to_string(), id))
        .collect()
}

/// Low-tier topic extraction: top TF-IDF keywords rendered as presence
/// facts.
pub fn heuristic_topic(chunks: &[Chunk], top_n: usize) -> Vec<String> {
    topic_keywords(chunks, top_n)
        .into_iter()
        .map(|(kw, id)| format!("Topic {kw} present in chunk {id}"))
        .collect()
}

/// Mid-tier topic extraction: the same keywords, grouped by embedding
/// similarity to the query so related topics lead.
pub fn mid_topic(query: &str, chunks: &[Chunk], top_n: usize, embedder: &Embedder) -> Vec<String> {
    let q = embedder.embed(query);
    let items = topic_keywords(chunks, top_n)
        .into_iter()
        .map(|(kw, id)| (format!("Topic {kw} present in chunk {id}"), kw))
        .collect();
    rank_by_similarity(items, &q, embedder)
}

fn sections(entity: &[String], temporal: &[String], topic: &[String]) -> String {
    let mut out = String::new();
    for (header, items) in [
        ("Entity relations:", entity),
        ("Temporal facts:", temporal),
        ("Topic relations:", topic),
    ] {
        out.push_str(header);
        out.push('\n');
        for item in items {
            out.push_str(item);
            out.push('\n');
        }
    }
    out
}

/// Low-tier summary: deterministic digest of the filtered chunks
/// followed by the three cue lists under fixed headers.
pub fn heuristic_summary(
    filtered: &[Chunk],
    entity: &[String],
    temporal: &[String],
    topic: &[String],
) -> String {
    let mut out = String::from("Digest:\n");
    for chunk in filtered {
        out.push_str(&chunk.text);
        out.push('\n');
    }
    out.push_str(&sections(entity, temporal, topic));
    out
}

/// Mid-tier summary: a structured synthesis that leads with the query
/// and counts before the same digest and cue sections.
pub fn mid_summary(
    query: &str,
    filtered: &[Chunk],
    entity: &[String],
    temporal: &[String],
    topic: &[String],
) -> String {
    let mut out = format!(
        "Memory for query: {query}\nEvidence chunks: {}\nDigest:\n",
        filtered.len()
    );
    for chunk in filtered {
        out.push_str(&chunk.text);
        out.push('\n');
    }
    out.push_str(&sections(entity, temporal, topic));
    out
}
