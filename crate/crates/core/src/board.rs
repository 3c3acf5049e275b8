//! Stage boards holding lineage-aware, versioned blocks.
//!
//! History is append-only: versions are never rewritten and blocks are never
//! removed. Parent links only point at blocks on the same board, and every
//! block gets a canvas placement that does not overlap any other block.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{
    ArtifactKind, Block, BlockId, BlockVersion, Content, ContextItem, ContextSource, Element,
    Selection, Stage, Timestamp, VersionOrigin,
};
use crate::schema::{check_elements, SchemaViolation};

/// Nominal collapsed block footprint, in canvas units.
pub const BLOCK_WIDTH: i64 = 320;
pub const BLOCK_HEIGHT: i64 = 240;
pub const GUTTER: i64 = 40;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub x: i64,
    pub y: i64,
}

impl Placement {
    pub fn overlaps(&self, other: &Placement) -> bool {
        self.x < other.x + BLOCK_WIDTH
            && other.x < self.x + BLOCK_WIDTH
            && self.y < other.y + BLOCK_HEIGHT
            && other.y < self.y + BLOCK_HEIGHT
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BoardError {
    #[error("unknown parent block `{0}` on this board")]
    UnknownParent(BlockId),
    #[error("unknown block `{0}`")]
    UnknownBlock(BlockId),
    #[error("{kind} belongs on the {} board, not {stage}", kind.stage())]
    StageKindMismatch { stage: Stage, kind: ArtifactKind },
    #[error("schema violation for {kind}: {}", join_violations(.violations))]
    SchemaViolation {
        kind: ArtifactKind,
        violations: Vec<SchemaViolation>,
    },
    #[error("block `{block}` has no version {index}")]
    BadIndex { block: BlockId, index: usize },
    #[error("selection no longer resolves: {0}")]
    StaleSelection(String),
}

fn join_violations(v: &[SchemaViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    pub stage: Stage,
    pub blocks: BTreeMap<BlockId, Block>,
    pub placement: BTreeMap<BlockId, Placement>,
}

impl Board {
    pub fn new(stage: Stage) -> Self {
        Self {
            stage,
            blocks: BTreeMap::new(),
            placement: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Position for a new block: roots stack down column 0, children go in
    /// the column right of their parent, at the first free slot at or below
    /// the parent's row.
    pub fn auto_place(&self, parent: Option<&BlockId>) -> Placement {
        let (x, start_y) = match parent.and_then(|p| self.placement.get(p)) {
            Some(p) => (p.x + BLOCK_WIDTH + GUTTER, p.y),
            None => (0, 0),
        };
        let mut candidate = Placement { x, y: start_y };
        while let Some(hit) = self
            .placement
            .values()
            .filter(|p| p.overlaps(&candidate))
            .map(|p| p.y)
            .max()
        {
            let row = BLOCK_HEIGHT + GUTTER;
            // next grid row below the lowest obstacle
            let below = hit + BLOCK_HEIGHT + GUTTER;
            let steps = (below - start_y + row - 1).div_euclid(row);
            candidate.y = start_y + steps.max(1) * row;
        }
        candidate
    }

    /// Children of `block`, in id order.
    pub fn children(&self, block: &BlockId) -> Vec<&BlockId> {
        self.blocks
            .values()
            .filter(|b| b.parent_id.as_ref() == Some(block))
            .map(|b| &b.block_id)
            .collect()
    }
}

/// The four stage boards plus the block id counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardStore {
    pub boards: BTreeMap<Stage, Board>,
    next_block: u64,
}

impl Default for BoardStore {
    fn default() -> Self {
        Self::new()
    }
}

impl BoardStore {
    pub fn new() -> Self {
        Self {
            boards: Stage::BOARDS.iter().map(|s| (*s, Board::new(*s))).collect(),
            next_block: 1,
        }
    }

    pub fn board(&self, stage: Stage) -> Option<&Board> {
        self.boards.get(&stage)
    }

    pub fn block(&self, id: &BlockId) -> Option<&Block> {
        self.boards.values().find_map(|b| b.blocks.get(id))
    }

    pub fn placement(&self, id: &BlockId) -> Option<Placement> {
        self.boards
            .values()
            .find_map(|b| b.placement.get(id).copied())
    }

    pub fn block_count(&self) -> usize {
        self.boards.values().map(Board::len).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.boards.values().flat_map(|b| b.blocks.values())
    }

    fn locate_mut(&mut self, id: &BlockId) -> Result<&mut Block, BoardError> {
        self.boards
            .values_mut()
            .find_map(|b| b.blocks.get_mut(id))
            .ok_or_else(|| BoardError::UnknownBlock(id.clone()))
    }

    /// Adds a block with a single version 0.
    pub fn create_block(
        &mut self,
        stage: Stage,
        kind: ArtifactKind,
        parent: Option<&BlockId>,
        elements: Vec<Element>,
        origin: VersionOrigin,
        now: Timestamp,
    ) -> Result<&Block, BoardError> {
        if kind.stage() != stage {
            return Err(BoardError::StageKindMismatch { stage, kind });
        }
        let board = self
            .boards
            .get(&stage)
            .ok_or(BoardError::StageKindMismatch { stage, kind })?;
        if let Some(p) = parent {
            if !board.blocks.contains_key(p) {
                return Err(BoardError::UnknownParent(p.clone()));
            }
        }
        let violations = check_elements(kind, &elements);
        if !violations.is_empty() {
            return Err(BoardError::SchemaViolation { kind, violations });
        }

        let block_id = BlockId::new(format!("blk-{:06}", self.next_block));
        self.next_block += 1;
        let placement = board.auto_place(parent);
        let block = Block {
            block_id: block_id.clone(),
            stage,
            kind,
            parent_id: parent.cloned(),
            versions: vec![BlockVersion {
                version_index: 0,
                elements,
                created_at: now,
                origin,
            }],
            active_version: 0,
            pinned: false,
            collapsed: false,
        };
        let board = self.boards.get_mut(&stage).expect("board checked above");
        board.placement.insert(block_id.clone(), placement);
        board.blocks.insert(block_id.clone(), block);
        Ok(&board.blocks[&block_id])
    }

    /// Appends a version and makes it active. Returns the new index.
    pub fn add_version(
        &mut self,
        id: &BlockId,
        elements: Vec<Element>,
        origin: VersionOrigin,
        now: Timestamp,
    ) -> Result<usize, BoardError> {
        let block = self.locate_mut(id)?;
        let violations = check_elements(block.kind, &elements);
        if !violations.is_empty() {
            return Err(BoardError::SchemaViolation {
                kind: block.kind,
                violations,
            });
        }
        let index = block.versions.len();
        block.versions.push(BlockVersion {
            version_index: index,
            elements,
            created_at: now,
            origin,
        });
        block.active_version = index;
        Ok(index)
    }

    pub fn set_active_version(&mut self, id: &BlockId, index: usize) -> Result<(), BoardError> {
        let block = self.locate_mut(id)?;
        if index >= block.versions.len() {
            return Err(BoardError::BadIndex {
                block: id.clone(),
                index,
            });
        }
        block.active_version = index;
        Ok(())
    }

    pub fn set_pinned(&mut self, id: &BlockId, pinned: bool) -> Result<(), BoardError> {
        self.locate_mut(id)?.pinned = pinned;
        Ok(())
    }

    pub fn set_collapsed(&mut self, id: &BlockId, collapsed: bool) -> Result<(), BoardError> {
        self.locate_mut(id)?.collapsed = collapsed;
        Ok(())
    }

    /// Manual placement from the UI; last write wins.
    pub fn set_placement(&mut self, id: &BlockId, placement: Placement) -> Result<(), BoardError> {
        let board = self
            .boards
            .values_mut()
            .find(|b| b.blocks.contains_key(id))
            .ok_or_else(|| BoardError::UnknownBlock(id.clone()))?;
        board.placement.insert(id.clone(), placement);
        Ok(())
    }

    /// Ancestors of `id` followed by `id` itself, root first.
    pub fn lineage(&self, id: &BlockId) -> Result<Vec<BlockId>, BoardError> {
        let block = self
            .block(id)
            .ok_or_else(|| BoardError::UnknownBlock(id.clone()))?;
        let board = &self.boards[&block.stage];
        let mut chain = vec![id.clone()];
        let mut cursor = block.parent_id.clone();
        // a chain longer than the board would mean a cycle
        for _ in 0..=board.len() {
            let Some(p) = cursor else {
                chain.reverse();
                return Ok(chain);
            };
            let parent = board
                .blocks
                .get(&p)
                .ok_or_else(|| BoardError::UnknownParent(p.clone()))?;
            chain.push(p);
            cursor = parent.parent_id.clone();
        }
        panic!("lineage of `{id}` does not terminate; board is corrupt");
    }

    /// Turns a selection into labelled context items.
    pub fn resolve_selection(&self, sel: &Selection) -> Result<Vec<ContextItem>, BoardError> {
        let block = self
            .block(&sel.block_id)
            .ok_or_else(|| BoardError::StaleSelection(format!("block `{}`", sel.block_id)))?;
        let version = block.version(sel.version_index).ok_or_else(|| {
            BoardError::StaleSelection(format!(
                "block `{}` has no version {}",
                sel.block_id, sel.version_index
            ))
        })?;
        let chosen: Vec<&Element> = if sel.is_whole_block() {
            version.elements.iter().collect()
        } else {
            sel.element_ids
                .iter()
                .map(|eid| {
                    version.element(eid).ok_or_else(|| {
                        BoardError::StaleSelection(format!(
                            "element `{eid}` not in `{}` v{}",
                            sel.block_id, sel.version_index
                        ))
                    })
                })
                .collect::<Result<_, _>>()?
        };
        let mut items = vec![ContextItem::text(
            "selection",
            format!(
                "{} block {} v{} on the {} board",
                block.kind, block.block_id, sel.version_index, block.stage
            ),
        )
        .with_source(ContextSource {
            block_id: block.block_id.clone(),
            version_index: sel.version_index,
            element_id: None,
        })];
        items.extend(
            chosen
                .into_iter()
                .map(|el| element_item("selection", block, sel.version_index, el)),
        );
        Ok(items)
    }

    /// Checks every structural invariant; returns human-readable violations.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (stage, board) in &self.boards {
            if board.stage != *stage {
                out.push(format!("board keyed {stage} claims {}", board.stage));
            }
            for (id, block) in &board.blocks {
                if &block.block_id != id {
                    out.push(format!("block keyed {id} claims id {}", block.block_id));
                }
                if block.stage != *stage || block.kind.stage() != *stage {
                    out.push(format!("block {id} on wrong board"));
                }
                if block.versions.is_empty() || block.active_version >= block.versions.len() {
                    out.push(format!("block {id} has bad active version"));
                }
                for (i, v) in block.versions.iter().enumerate() {
                    if v.version_index != i {
                        out.push(format!("block {id} version {i} has index {}", v.version_index));
                    }
                }
                if let Some(p) = &block.parent_id {
                    if !board.blocks.contains_key(p) {
                        out.push(format!("block {id} has parent {p} outside its board"));
                    }
                }
                if !board.placement.contains_key(id) {
                    out.push(format!("block {id} has no placement"));
                }
            }
            // cycle check with step bound
            for id in board.blocks.keys() {
                let mut cursor = board.blocks[id].parent_id.clone();
                let mut steps = 0;
                while let Some(p) = cursor {
                    steps += 1;
                    if steps > board.len() {
                        out.push(format!("lineage cycle through {id}"));
                        break;
                    }
                    cursor = board.blocks.get(&p).and_then(|b| b.parent_id.clone());
                }
            }
        }
        out
    }
}

/// Renders an element as a context item with provenance.
pub fn element_item(prefix: &str, block: &Block, version: usize, el: &Element) -> ContextItem {
    let label = format!("{prefix}:{}@v{}#{}", block.block_id, version, el.element_id);
    let source = ContextSource {
        block_id: block.block_id.clone(),
        version_index: version,
        element_id: Some(el.element_id.clone()),
    };
    let item = match &el.content {
        Content::Text(t) => ContextItem::text(label, render_text(el.kind.name(), t, el)),
        Content::Image(a) => ContextItem::image(label, a.clone()),
    };
    item.with_source(source)
}

fn render_text(kind: &str, text: &str, el: &Element) -> String {
    let attrs = el
        .attributes
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>();
    if attrs.is_empty() {
        format!("({kind}) {text}")
    } else {
        format!("({kind}) {text} [{}]", attrs.join("; "))
    }
}

/// All elements of a block's active version as context items.
pub fn block_items(prefix: &str, block: &Block) -> Vec<ContextItem> {
    let v = block.active();
    v.elements
        .iter()
        .map(|el| element_item(prefix, block, v.version_index, el))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ElementKind, TaskId};
    use crate::schema::SCENE_ATTRIBUTES;

    fn origin() -> VersionOrigin {
        VersionOrigin::Task {
            task_id: TaskId::new("task-1"),
        }
    }

    fn options(n: usize) -> Vec<Element> {
        (0..n)
            .map(|i| {
                Element::text(format!("e{i}"), ElementKind::ConceptOption, format!("option {i}"))
                    .with_attr("title", format!("T{i}"))
            })
            .collect()
    }

    fn scenes() -> Vec<Element> {
        (0..2)
            .map(|i| {
                let mut el = Element::text(format!("e{i}"), ElementKind::SceneEntry, "scene");
                for a in SCENE_ATTRIBUTES {
                    el.attributes.insert(a.into(), format!("{a}-{i}"));
                }
                el
            })
            .collect()
    }

    fn root(store: &mut BoardStore, n: usize) -> BlockId {
        store
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, None, options(n), origin(), Timestamp(1))
            .unwrap()
            .block_id
            .clone()
    }

    #[test]
    fn create_root_with_parallel_options() {
        let mut s = BoardStore::new();
        let id = root(&mut s, 3);
        let b = s.block(&id).unwrap();
        assert_eq!(b.versions.len(), 1);
        assert_eq!(b.active_version, 0);
        assert_eq!(b.active().elements.len(), 3);
        assert!(b.parent_id.is_none());
        assert_eq!(s.placement(&id), Some(Placement { x: 0, y: 0 }));
    }

    #[test]
    fn child_leaves_parent_untouched() {
        let mut s = BoardStore::new();
        let b1 = root(&mut s, 3);
        let before = s.block(&b1).unwrap().clone();
        let child = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&b1), options(1), origin(), Timestamp(2))
            .unwrap()
            .block_id
            .clone();
        assert_eq!(s.block(&b1).unwrap(), &before);
        assert_eq!(s.block(&child).unwrap().parent_id.as_ref(), Some(&b1));
        assert!(s.placement(&child).unwrap().x > s.placement(&b1).unwrap().x);
    }

    #[test]
    fn stage_kind_mismatch_and_unknown_parent() {
        let mut s = BoardStore::new();
        let err = s
            .create_block(Stage::Scripting, ArtifactKind::CharacterSheet, None, vec![], origin(), Timestamp(0))
            .unwrap_err();
        assert!(matches!(err, BoardError::StageKindMismatch { .. }));
        let err = s
            .create_block(
                Stage::Ideation,
                ArtifactKind::StoryConcept,
                Some(&BlockId::new("nope")),
                options(1),
                origin(),
                Timestamp(0),
            )
            .unwrap_err();
        assert!(matches!(err, BoardError::UnknownParent(_)));
        // a parent on a different board is also unknown here
        let scene_list = s
            .create_block(Stage::Scripting, ArtifactKind::SceneList, None, scenes(), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        let err = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&scene_list), options(1), origin(), Timestamp(0))
            .unwrap_err();
        assert!(matches!(err, BoardError::UnknownParent(_)));
    }

    #[test]
    fn add_version_appends_and_activates() {
        let mut s = BoardStore::new();
        let id = root(&mut s, 1);
        let v0 = s.block(&id).unwrap().versions[0].clone();
        for expected in 1..=3 {
            let idx = s.add_version(&id, options(2), origin(), Timestamp(9)).unwrap();
            assert_eq!(idx, expected);
        }
        let b = s.block(&id).unwrap();
        assert_eq!(b.versions[0], v0);
        assert_eq!(b.active_version, 3);
    }

    #[test]
    fn add_version_reports_missing_scene_attribute() {
        let mut s = BoardStore::new();
        let id = s
            .create_block(Stage::Scripting, ArtifactKind::SceneList, None, scenes(), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        let mut broken = scenes();
        broken[1].attributes.remove("time_of_day");
        let err = s.add_version(&id, broken, origin(), Timestamp(1)).unwrap_err();
        match &err {
            BoardError::SchemaViolation { violations, .. } => {
                assert!(violations.iter().any(|v| matches!(
                    v,
                    SchemaViolation::MissingAttribute { attribute, .. } if attribute == "time_of_day"
                )));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("time_of_day"));
        assert_eq!(s.block(&id).unwrap().versions.len(), 1);
    }

    #[test]
    fn flags_and_active_version() {
        let mut s = BoardStore::new();
        let id = root(&mut s, 1);
        s.add_version(&id, options(1), origin(), Timestamp(1)).unwrap();
        s.set_active_version(&id, 0).unwrap();
        assert_eq!(s.block(&id).unwrap().active_version, 0);
        assert_eq!(s.block(&id).unwrap().versions.len(), 2);
        assert!(matches!(
            s.set_active_version(&id, 99),
            Err(BoardError::BadIndex { index: 99, .. })
        ));
        s.set_pinned(&id, true).unwrap();
        let once = s.clone();
        s.set_pinned(&id, true).unwrap();
        assert_eq!(s, once);
        s.set_collapsed(&id, true).unwrap();
        assert!(s.block(&id).unwrap().collapsed);
        assert!(matches!(
            s.set_pinned(&BlockId::new("x"), true),
            Err(BoardError::UnknownBlock(_))
        ));
    }

    #[test]
    fn lineage_chain_and_branch_isolation() {
        let mut s = BoardStore::new();
        let r = root(&mut s, 1);
        assert_eq!(s.lineage(&r).unwrap(), vec![r.clone()]);

        let mut recorded_parent = BTreeMap::new();
        let c = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&r), options(1), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        recorded_parent.insert(c.clone(), r.clone());
        let g = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&c), options(1), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        recorded_parent.insert(g.clone(), c.clone());

        // walk the independently recorded pointers
        let mut expected = vec![g.clone()];
        while let Some(p) = recorded_parent.get(expected.last().unwrap()) {
            expected.push(p.clone());
        }
        expected.reverse();
        assert_eq!(s.lineage(&g).unwrap(), expected);

        let sibling = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&r), options(1), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        assert_eq!(s.lineage(&sibling).unwrap(), vec![r.clone(), sibling.clone()]);
        assert_eq!(s.lineage(&c).unwrap(), vec![r, c]);
        assert!(s.lineage(&BlockId::new("x")).is_err());
    }

    #[test]
    fn selection_resolution() {
        let mut s = BoardStore::new();
        let b = root(&mut s, 3);
        let items = s
            .resolve_selection(&Selection {
                block_id: b.clone(),
                version_index: 0,
                element_ids: vec!["e2".into()],
            })
            .unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].label, "selection");
        assert!(items[0].content.as_text().unwrap().contains("story-concept"));
        assert!(items[1].label.ends_with("#e2"));
        assert!(items[1].content.as_text().unwrap().contains("option 2"));

        let whole = s.resolve_selection(&Selection::whole(b.clone(), 0)).unwrap();
        assert_eq!(whole.len(), 4);

        for bad in [
            Selection::whole(BlockId::new("gone"), 0),
            Selection::whole(b.clone(), 5),
            Selection {
                block_id: b,
                version_index: 0,
                element_ids: vec!["e9".into()],
            },
        ] {
            assert!(matches!(
                s.resolve_selection(&bad),
                Err(BoardError::StaleSelection(_))
            ));
        }
    }

    #[test]
    fn placement_stacks_roots_and_avoids_overlap() {
        let mut s = BoardStore::new();
        let a = root(&mut s, 1);
        let b = root(&mut s, 1);
        let pa = s.placement(&a).unwrap();
        let pb = s.placement(&b).unwrap();
        assert_eq!(pa, Placement { x: 0, y: 0 });
        assert_eq!(pb, Placement { x: 0, y: BLOCK_HEIGHT + GUTTER });
        // interval arithmetic: vertical extents are disjoint
        assert!(pa.y + BLOCK_HEIGHT <= pb.y);

        // children of a fill column 1 downward; child of b must not collide
        for _ in 0..3 {
            s.create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&a), options(1), origin(), Timestamp(0))
                .unwrap();
        }
        let cb = s
            .create_block(Stage::Ideation, ArtifactKind::StoryConcept, Some(&b), options(1), origin(), Timestamp(0))
            .unwrap()
            .block_id
            .clone();
        let board = s.board(Stage::Ideation).unwrap();
        let pcb = board.placement[&cb];
        assert!(pcb.x > pb.x);
        for (id, p) in &board.placement {
            if id != &cb {
                assert!(!p.overlaps(&pcb), "{id} overlaps {cb}");
            }
        }
        assert!(s.invariant_violations().is_empty());
    }

    #[test]
    fn auto_place_after_manual_move_still_avoids_overlap() {
        let mut s = BoardStore::new();
        let a = root(&mut s, 1);
        s.set_placement(&a, Placement { x: 10, y: 300 }).unwrap();
        let b = root(&mut s, 1);
        let c = root(&mut s, 1);
        let board = s.board(Stage::Ideation).unwrap();
        let ps: Vec<_> = [&a, &b, &c].iter().map(|id| board.placement[*id]).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(!ps[i].overlaps(&ps[j]), "{:?} vs {:?}", ps[i], ps[j]);
            }
        }
    }
}
