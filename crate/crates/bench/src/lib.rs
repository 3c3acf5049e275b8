//! Fixtures shared by the benchmarks.

use preprod_core::memory::{ChunkPolicy, EntryKind, HashEmbedder, MemoryEntry, MemoryStore, PrefixSummarizer};
use preprod_core::model::{Timestamp, VersionOrigin};
use preprod_core::{ArtifactKind, BoardStore, Element};

const WORDS: &[&str] = &[
    "dream", "architect", "city", "bell", "warden", "paper", "market", "clock", "atrium", "night", "lamp", "ink",
    "scene", "shot", "rooftop", "echo", "glass", "moon", "fog", "bridge",
];

fn text(i: usize, n: usize) -> String {
    (0..n).map(|j| WORDS[(i * 7 + j * 13) % WORDS.len()]).collect::<Vec<_>>().join(" ")
}

/// A store holding `chunks` indexed chunks of ten entries each.
pub fn memory_store(chunks: usize) -> MemoryStore {
    let policy = ChunkPolicy::default();
    let mut store = MemoryStore::default();
    for i in 0..chunks * policy.chunk_size + policy.horizon {
        store
            .record(MemoryEntry::new(EntryKind::Message, text(i, 12), Timestamp(i as u64)))
            .unwrap();
    }
    store
        .chunk_and_index(policy, &PrefixSummarizer::default(), &HashEmbedder::default())
        .unwrap();
    store
}

/// A story-concept board with `n` blocks, every fourth one branching off
/// its predecessor.
pub fn board(n: usize) -> BoardStore {
    let mut store = BoardStore::new();
    let kind = ArtifactKind::StoryConcept;
    let mut last = None;
    for i in 0..n {
        let parent = if i % 4 == 3 { last.clone() } else { None };
        let b = store
            .create_block(
                kind.stage(),
                kind,
                parent.as_ref(),
                concept(i),
                VersionOrigin::UserEdit,
                Timestamp(i as u64),
            )
            .unwrap();
        last = Some(b.block_id.clone());
    }
    store
}

pub fn concept(i: usize) -> Vec<Element> {
    vec![Element::text("e1", preprod_core::model::ElementKind::ConceptOption, text(i, 20)).with_attr("title", "t")]
}
