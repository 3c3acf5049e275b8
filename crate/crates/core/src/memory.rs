//! Short-term context windows and the long-term chunked memory.
//!
//! The core transcript is cut into fixed-size, time-ordered chunks once
//! entries fall behind a horizon of recent entries. Each chunk is summarized
//! and embedded; retrieval is an exhaustive cosine scan over chunk
//! embeddings (project scale never needs an approximate index).

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;
use crate::model::{AgentRole, Stage, Timestamp};
use crate::provider::{GenerationParams, ProviderError, ProviderRequest, TextProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    Message,
    ToolCall,
    InterAgent,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub kind: EntryKind,
    pub text: String,
    pub timestamp: Timestamp,
    /// Links a tool call to its output; the two are evicted together.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<u64>,
}

impl MemoryEntry {
    pub fn new(kind: EntryKind, text: impl Into<String>, timestamp: Timestamp) -> Self {
        Self {
            kind,
            text: text.into(),
            timestamp,
            pair: None,
        }
    }

    pub fn paired(mut self, pair: u64) -> Self {
        self.pair = Some(pair);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("memory entry text is empty")]
    EmptyEntry,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_entries: usize,
    pub max_chars: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_entries: 40,
            max_chars: 16_000,
        }
    }
}

/// Recent entries for one agent, bounded by entry count and total characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub owner: AgentRole,
    pub budget: Budget,
    entries: VecDeque<MemoryEntry>,
}

impl ContextWindow {
    pub fn new(owner: AgentRole, budget: Budget) -> Self {
        Self {
            owner,
            budget,
            entries: VecDeque::new(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_chars(&self) -> usize {
        self.entries.iter().map(|e| e.text.chars().count()).sum()
    }

    pub fn within_budget(&self) -> bool {
        self.len() <= self.budget.max_entries && self.total_chars() <= self.budget.max_chars
    }

    /// Appends and then evicts oldest-first until both budgets hold. A
    /// single entry longer than the character budget is truncated.
    pub fn append_entry(&mut self, mut entry: MemoryEntry) -> Result<(), MemoryError> {
        if entry.text.trim().is_empty() {
            return Err(MemoryError::EmptyEntry);
        }
        if entry.text.chars().count() > self.budget.max_chars {
            entry.text = entry.text.chars().take(self.budget.max_chars).collect();
        }
        self.entries.push_back(entry);
        while !self.within_budget() {
            let Some(old) = self.entries.pop_front() else {
                break;
            };
            if let (EntryKind::ToolCall, Some(p)) = (old.kind, old.pair) {
                self.entries
                    .retain(|e| !(e.kind == EntryKind::Output && e.pair == Some(p)));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("[{}] {}", kind_label(e.kind), e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn kind_label(kind: EntryKind) -> &'static str {
    match kind {
        EntryKind::Message => "message",
        EntryKind::ToolCall => "tool-call",
        EntryKind::InterAgent => "inter-agent",
        EntryKind::Output => "output",
    }
}

// ---------------------------------------------------------------------------
// Long-term memory

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub chunk_size: usize,
    /// Number of most recent entries never chunked.
    pub horizon: usize,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            chunk_size: 10,
            horizon: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryChunk {
    pub chunk_id: String,
    /// Transcript index range `[start, end)` covered by the chunk.
    pub start: usize,
    pub end: usize,
    pub time_range: (Timestamp, Timestamp),
    pub entries: Vec<MemoryEntry>,
    pub summary: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    pub score: f64,
}

/// What one retrieval looked at and returned, kept for offline inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub query: String,
    pub expanded: String,
    pub hits: Vec<ScoredChunk>,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, entries: &[MemoryEntry]) -> Result<String, ProviderError>;
}

pub trait QueryExpander: Send + Sync {
    fn expand(&self, query: &str) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// First `n` characters of every entry, joined with ` | `.
#[derive(Debug, Clone, Copy)]
pub struct PrefixSummarizer {
    pub n: usize,
}

impl Default for PrefixSummarizer {
    fn default() -> Self {
        Self { n: 40 }
    }
}

impl Summarizer for PrefixSummarizer {
    fn summarize(&self, entries: &[MemoryEntry]) -> Result<String, ProviderError> {
        Ok(entries
            .iter()
            .map(|e| e.text.chars().take(self.n).collect::<String>())
            .collect::<Vec<_>>()
            .join(" | "))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExpander;

impl QueryExpander for IdentityExpander {
    fn expand(&self, query: &str) -> Result<String, ProviderError> {
        Ok(query.to_string())
    }
}

fn light_request(instruction: &str, prompt: String) -> ProviderRequest {
    ProviderRequest {
        role: AgentRole::Core,
        stage: Stage::Planning,
        task_kind: None,
        instruction: instruction.to_string(),
        prompt,
        reference_images: Vec::new(),
        params: GenerationParams {
            temperature: 0.0,
            max_length: 512,
            seed: None,
        },
    }
}

/// Summaries from the lightweight text tier.
pub struct ProviderSummarizer {
    pub provider: Arc<dyn TextProvider>,
}

impl Summarizer for ProviderSummarizer {
    fn summarize(&self, entries: &[MemoryEntry]) -> Result<String, ProviderError> {
        let body = entries
            .iter()
            .map(|e| format!("[{}] {}", kind_label(e.kind), e.text))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = format!(
            "Summarize the following project conversation excerpt in two sentences, \
             keeping names, decisions and artifact kinds.\n\n{body}"
        );
        self.provider
            .complete(&light_request("summarize memory chunk", prompt), &CancelToken::new())
    }
}

/// Up to three paraphrases from the lightweight tier, appended to the query.
pub struct ProviderExpander {
    pub provider: Arc<dyn TextProvider>,
}

impl QueryExpander for ProviderExpander {
    fn expand(&self, query: &str) -> Result<String, ProviderError> {
        let prompt = format!(
            "Write at most three short paraphrases of this request, one per line, \
             and nothing else.\n\n{query}"
        );
        let out = self
            .provider
            .complete(&light_request("expand memory query", prompt), &CancelToken::new())?;
        let extra: Vec<&str> = out.lines().map(str::trim).filter(|l| !l.is_empty()).take(3).collect();
        Ok(std::iter::once(query).chain(extra).collect::<Vec<_>>().join("\n"))
    }
}

/// Bag-of-words embedding: lowercase alphanumeric tokens hashed with FNV-1a
/// into a fixed number of buckets.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 256 }
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for t in tokens(text) {
            v[(fnv1a(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        v
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub transcript: Vec<MemoryEntry>,
    pub chunks: Vec<MemoryChunk>,
    #[serde(default)]
    pub traces: Vec<RetrievalTrace>,
}

pub fn chunk_id(index: usize) -> String {
    format!("chunk-{index:06}")
}

impl MemoryStore {
    pub fn record(&mut self, entry: MemoryEntry) -> Result<(), MemoryError> {
        if entry.text.trim().is_empty() {
            return Err(MemoryError::EmptyEntry);
        }
        self.transcript.push(entry);
        Ok(())
    }

    /// Transcript entries already assigned to a chunk.
    pub fn chunked_len(&self) -> usize {
        self.chunks.last().map_or(0, |c| c.end)
    }

    /// Creates every full chunk lying behind the horizon that is not yet
    /// stored. Chunk ids derive from transcript position, so a rerun over an
    /// unchanged transcript adds nothing. All-or-nothing: on a summarizer
    /// failure no chunk from this run is kept.
    pub fn chunk_and_index(
        &mut self,
        policy: ChunkPolicy,
        summarizer: &dyn Summarizer,
        embedder: &dyn Embedder,
    ) -> Result<usize, ProviderError> {
        let size = policy.chunk_size.max(1);
        let eligible = self.transcript.len().saturating_sub(policy.horizon);
        let full = eligible / size;
        let mut fresh = Vec::new();
        for i in self.chunks.len()..full {
            let id = chunk_id(i);
            if self.chunks.iter().any(|c| c.chunk_id == id) {
                continue;
            }
            let (start, end) = (i * size, (i + 1) * size);
            let entries = self.transcript[start..end].to_vec();
            let summary = summarizer.summarize(&entries)?;
            let embedding = embedder.embed(&summary);
            fresh.push(MemoryChunk {
                chunk_id: id,
                start,
                end,
                time_range: (entries[0].timestamp, entries[size - 1].timestamp),
                entries,
                summary,
                embedding,
            });
        }
        let n = fresh.len();
        self.chunks.extend(fresh);
        Ok(n)
    }

    /// Top-`k` chunks by cosine similarity to the expanded query, scores
    /// descending, newer chunks first on ties. An expander failure falls back
    /// to the raw query.
    pub fn retrieve(
        &self,
        query: &str,
        k: usize,
        expander: &dyn QueryExpander,
        embedder: &dyn Embedder,
    ) -> Result<RetrievalTrace, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        let expanded = expander.expand(query).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "query expansion failed; using raw query");
            query.to_string()
        });
        let q = embedder.embed(&expanded);
        let mut scored: Vec<(usize, f64)> = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (i, cosine(&q, &c.embedding)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
        let hits = scored
            .into_iter()
            .take(k)
            .map(|(i, score)| ScoredChunk {
                chunk_id: self.chunks[i].chunk_id.clone(),
                score,
            })
            .collect();
        Ok(RetrievalTrace {
            query: query.to_string(),
            expanded,
            hits,
        })
    }

    pub fn chunk(&self, id: &str) -> Option<&MemoryChunk> {
        self.chunks.iter().find(|c| c.chunk_id == id)
    }

    /// Indices of transcript entries that are older than the horizon but
    /// not in exactly one chunk. Empty when coverage holds.
    pub fn coverage_gaps(&self, policy: ChunkPolicy) -> Vec<usize> {
        let size = policy.chunk_size.max(1);
        let covered_to = self.transcript.len().saturating_sub(policy.horizon) / size * size;
        (0..covered_to)
            .filter(|i| self.chunks.iter().filter(|c| c.start <= *i && *i < c.end).count() != 1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(kind: EntryKind, text: &str, t: u64) -> MemoryEntry {
        MemoryEntry::new(kind, text, Timestamp(t))
    }

    #[test]
    fn window_fifo_and_pairing() {
        let mut w = ContextWindow::new(
            AgentRole::Core,
            Budget {
                max_entries: 3,
                max_chars: 1000,
            },
        );
        w.append_entry(entry(EntryKind::Message, "a", 0)).unwrap();
        w.append_entry(entry(EntryKind::Message, "b", 1)).unwrap();
        assert_eq!(w.len(), 2);
        w.append_entry(entry(EntryKind::ToolCall, "call", 2).paired(7)).unwrap();
        w.append_entry(entry(EntryKind::Output, "out", 3).paired(7)).unwrap();
        // "a" evicted, newest present
        let texts: Vec<_> = w.entries().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["b", "call", "out"]);
        // evicting "b" is enough for count, then the call must drag its output
        w.append_entry(entry(EntryKind::Message, "c", 4)).unwrap();
        w.append_entry(entry(EntryKind::Message, "d", 5)).unwrap();
        let texts: Vec<_> = w.entries().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["c", "d"]);
        assert!(w.within_budget());
        assert_eq!(
            w.append_entry(entry(EntryKind::Message, " ", 6)),
            Err(MemoryError::EmptyEntry)
        );
    }

    #[test]
    fn window_char_budget_truncates_oversize() {
        let mut w = ContextWindow::new(
            AgentRole::Art,
            Budget {
                max_entries: 10,
                max_chars: 5,
            },
        );
        w.append_entry(entry(EntryKind::Message, "abc", 0)).unwrap();
        w.append_entry(entry(EntryKind::Message, "abcdefgh", 1)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.entries().next().unwrap().text, "abcde");
    }

    fn store_with(n: usize) -> MemoryStore {
        let mut s = MemoryStore::default();
        for i in 0..n {
            s.record(entry(EntryKind::Message, &format!("entry number {i}"), i as u64))
                .unwrap();
        }
        s
    }

    struct Failing;
    impl Summarizer for Failing {
        fn summarize(&self, _: &[MemoryEntry]) -> Result<String, ProviderError> {
            Err(ProviderError::failure(crate::provider::FailureReason::Timeout, "x"))
        }
    }

    #[test]
    fn chunking_arithmetic_idempotence_and_failure() {
        let policy = ChunkPolicy {
            chunk_size: 10,
            horizon: 0,
        };
        let mut s = store_with(25);
        assert!(s.chunk_and_index(policy, &Failing, &HashEmbedder::default()).is_err());
        assert!(s.chunks.is_empty());
        assert_eq!(s.transcript.len(), 25);

        let n = s
            .chunk_and_index(policy, &PrefixSummarizer::default(), &HashEmbedder::default())
            .unwrap();
        assert_eq!(n, 2);
        assert_eq!(s.transcript.len() - s.chunked_len(), 5);
        assert_eq!(
            s.chunk_and_index(policy, &PrefixSummarizer::default(), &HashEmbedder::default())
                .unwrap(),
            0
        );
        assert!(s.coverage_gaps(policy).is_empty());
        assert_eq!(
            s.chunks[0].summary.split(" | ").next(),
            Some("entry number 0")
        );

        // the default horizon keeps the 20 newest entries out
        let mut d = store_with(25);
        d.chunk_and_index(ChunkPolicy::default(), &PrefixSummarizer::default(), &HashEmbedder::default())
            .unwrap();
        assert_eq!(d.chunks.len(), 0);
        let mut d = store_with(30);
        d.chunk_and_index(ChunkPolicy::default(), &PrefixSummarizer::default(), &HashEmbedder::default())
            .unwrap();
        assert_eq!(d.chunks.len(), 1);
    }

    #[test]
    fn retrieval_ranks_and_clamps() {
        let e = HashEmbedder::default();
        let mut s = MemoryStore::default();
        assert!(s.retrieve("x", 3, &IdentityExpander, &e).unwrap().hits.is_empty());
        let summaries = [
            "watercolor palette notes",
            "scene list for act one",
            "dream architect character roster",
            "storyboard camera angles",
            "project brief and timeline",
        ];
        for (i, text) in summaries.iter().enumerate() {
            s.chunks.push(MemoryChunk {
                chunk_id: chunk_id(i),
                start: i,
                end: i + 1,
                time_range: (Timestamp(i as u64), Timestamp(i as u64)),
                entries: vec![],
                summary: text.to_string(),
                embedding: e.embed(text),
            });
        }
        let t = s.retrieve("who is the architect", 10, &IdentityExpander, &e).unwrap();
        assert_eq!(t.hits.len(), 5);
        assert_eq!(t.hits[0].chunk_id, chunk_id(2));
        assert!(t.hits.windows(2).all(|w| w[0].score >= w[1].score));
        // zero-score ties come newest first
        let zeros: Vec<_> = t.hits.iter().filter(|h| h.score == 0.0).map(|h| h.chunk_id.clone()).collect();
        let mut sorted = zeros.clone();
        sorted.sort_by(|a, b| b.cmp(a));
        assert_eq!(zeros, sorted);
        assert_eq!(s.retrieve("q", 0, &IdentityExpander, &e), Err(MemoryError::ZeroK));
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
