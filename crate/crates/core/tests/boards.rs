use preprod_core::model::{Timestamp, VersionOrigin};
use preprod_core::schema::{element_schema, ContentType};
use preprod_core::{ArtifactKind, AssetRef, BlockId, BoardStore, Element};
use proptest::prelude::*;

fn valid(kind: ArtifactKind, salt: u64) -> Vec<Element> {
    let schema = element_schema(kind);
    let mut out = Vec::new();
    for (i, req) in schema.elements.iter().enumerate() {
        let n = if i == 0 { req.min.max(1) } else { req.min };
        for _ in 0..req.max.map_or(n, |m| n.min(m)) {
            let id = format!("e{}", out.len() + 1);
            let mut el = match req.content {
                ContentType::Text => Element::text(id, req.kind, format!("t{salt}")),
                ContentType::Image => Element::image(id, req.kind, AssetRef::new(format!("assets/{salt}.png"))),
            };
            for a in &req.attributes {
                el = el.with_attr(a, "v");
            }
            out.push(el);
        }
    }
    out
}

#[derive(Debug, Clone)]
enum Op {
    Create { kind: usize, parent: Option<usize> },
    Version { block: usize },
    Activate { block: usize, index: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..ArtifactKind::ALL.len(), proptest::option::of(0usize..64)).prop_map(|(kind, parent)| Op::Create { kind, parent }),
        (0usize..64).prop_map(|block| Op::Version { block }),
        (0usize..64, 0usize..6).prop_map(|(block, index)| Op::Activate { block, index }),
    ]
}

proptest! {
    #[test]
    fn random_operations_keep_the_store_consistent(ops in proptest::collection::vec(op(), 1..60)) {
        let mut store = BoardStore::new();
        let mut ids: Vec<BlockId> = Vec::new();
        let mut history: Vec<(BlockId, usize, Vec<Element>)> = Vec::new();
        for (t, op) in ops.into_iter().enumerate() {
            let t = t as u64;
            match op {
                Op::Create { kind, parent } => {
                    let kind = ArtifactKind::ALL[kind];
                    let parent = parent.and_then(|p| ids.get(p % ids.len().max(1))).cloned();
                    let same = parent.as_ref().map(|p| store.block(p).unwrap().stage == kind.stage());
                    let els = valid(kind, t);
                    let r = store.create_block(kind.stage(), kind, parent.as_ref(), els.clone(), VersionOrigin::UserEdit, Timestamp(t));
                    prop_assert_eq!(r.is_ok(), same != Some(false));
                    if let Ok(b) = r {
                        let id = b.block_id.clone();
                        history.push((id.clone(), 0, els));
                        ids.push(id);
                    }
                }
                Op::Version { block } if !ids.is_empty() => {
                    let id = ids[block % ids.len()].clone();
                    let kind = store.block(&id).unwrap().kind;
                    let els = valid(kind, t);
                    let idx = store.add_version(&id, els.clone(), VersionOrigin::UserEdit, Timestamp(t)).unwrap();
                    history.push((id, idx, els));
                }
                Op::Activate { block, index } if !ids.is_empty() => {
                    let id = &ids[block % ids.len()];
                    let n = store.block(id).unwrap().versions.len();
                    prop_assert_eq!(store.set_active_version(id, index).is_ok(), index < n);
                }
                _ => {}
            }
        }
        prop_assert!(store.invariant_violations().is_empty());
        for (id, idx, els) in &history {
            prop_assert_eq!(&store.block(id).unwrap().versions[*idx].elements, els);
        }
        for id in &ids {
            let chain = store.lineage(id).unwrap();
            let stage = store.block(id).unwrap().stage;
            prop_assert!(chain.iter().all(|a| store.block(a).unwrap().stage == stage));
            let mut uniq = chain.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), chain.len());
        }
    }
}
