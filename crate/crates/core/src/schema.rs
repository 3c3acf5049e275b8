//! Element schemas per artifact kind and the conformance check used by the
//! board store and by result validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::model::{ArtifactKind, Content, Element, ElementKind};

/// Attributes every scene entry carries, possibly empty-valued.
pub const SCENE_ATTRIBUTES: [&str; 6] = [
    "scene_number",
    "location",
    "time_of_day",
    "characters",
    "description",
    "styleframe_slot",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentType {
    Text,
    Image,
}

/// One element kind a version must (or may) contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ElementRequirement {
    pub kind: ElementKind,
    pub content: ContentType,
    pub min: usize,
    pub max: Option<usize>,
    pub attributes: Vec<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ElementSchema {
    pub artifact: ArtifactKind,
    pub elements: Vec<ElementRequirement>,
}

impl ElementSchema {
    pub fn requirement(&self, kind: ElementKind) -> Option<&ElementRequirement> {
        self.elements.iter().find(|r| r.kind == kind)
    }

    /// The element kind that carries the artifact's main content.
    pub fn primary(&self) -> &ElementRequirement {
        &self.elements[0]
    }
}

fn req(
    kind: ElementKind,
    content: ContentType,
    min: usize,
    max: Option<usize>,
    attributes: &[&'static str],
) -> ElementRequirement {
    ElementRequirement {
        kind,
        content,
        min,
        max,
        attributes: attributes.to_vec(),
    }
}

/// Schema for an artifact kind. Total over the enumeration and stable.
pub fn element_schema(kind: ArtifactKind) -> ElementSchema {
    use ArtifactKind as A;
    use ContentType::{Image, Text};
    use ElementKind as E;

    let elements = match kind {
        A::Logline => vec![req(E::LoglineOption, Text, 1, None, &[])],
        A::StoryConcept => vec![req(E::ConceptOption, Text, 1, None, &["title"])],
        A::WorldConcept => vec![req(E::WorldOption, Text, 1, None, &["title"])],
        A::StyleDescription => vec![req(E::StyleOption, Text, 1, None, &["title"])],
        A::CharacterConcept => vec![req(E::CharacterEntry, Text, 1, None, &["name", "role"])],
        A::ThreeActStructure => vec![req(
            E::ActSection,
            Text,
            3,
            Some(3),
            &["act", "turning_point"],
        )],
        A::StoryOutline => vec![req(E::OutlineBeat, Text, 1, None, &["beat_number"])],
        A::SceneList => vec![req(E::SceneEntry, Text, 1, None, &SCENE_ATTRIBUTES)],
        A::Script => vec![req(E::ScriptSection, Text, 1, None, &["scene_number"])],
        A::CharacterSheet => vec![req(E::CharacterDesign, Image, 1, None, &["name", "notes"])],
        A::EnvironmentDesign => vec![req(
            E::EnvironmentView,
            Image,
            1,
            None,
            &["location", "notes"],
        )],
        A::HeroImage => vec![
            req(E::ImageAsset, Image, 1, Some(1), &[]),
            req(E::TextField, Text, 1, Some(1), &[]),
        ],
        A::Styleframe => vec![
            req(E::ImageAsset, Image, 1, Some(1), &["scene_number"]),
            req(E::TextField, Text, 1, Some(1), &[]),
        ],
        A::StoryboardSequence => vec![req(
            E::ShotPanel,
            Image,
            1,
            None,
            &["shot_number", "scene_number", "camera", "description"],
        )],
    };
    ElementSchema {
        artifact: kind,
        elements,
    }
}

/// A single way in which a list of elements fails its schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SchemaViolation {
    Empty,
    DuplicateElementId { element_id: String },
    UnexpectedElementKind { element_id: String, kind: ElementKind },
    TooFew { kind: ElementKind, min: usize, found: usize },
    TooMany { kind: ElementKind, max: usize, found: usize },
    WrongContent { element_id: String, expected: ContentType },
    MissingAttribute { element_id: String, kind: ElementKind, attribute: String },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::Empty => write!(f, "no elements"),
            SchemaViolation::DuplicateElementId { element_id } => {
                write!(f, "duplicate element id `{element_id}`")
            }
            SchemaViolation::UnexpectedElementKind { element_id, kind } => {
                write!(f, "element `{element_id}` has unexpected kind `{kind}`")
            }
            SchemaViolation::TooFew { kind, min, found } => {
                write!(f, "expected at least {min} `{kind}` element(s), found {found}")
            }
            SchemaViolation::TooMany { kind, max, found } => {
                write!(f, "expected at most {max} `{kind}` element(s), found {found}")
            }
            SchemaViolation::WrongContent { element_id, expected } => {
                let what = match expected {
                    ContentType::Text => "text",
                    ContentType::Image => "an image reference",
                };
                write!(f, "element `{element_id}` must hold {what}")
            }
            SchemaViolation::MissingAttribute {
                element_id,
                kind,
                attribute,
            } => write!(
                f,
                "`{kind}` element `{element_id}` is missing attribute `{attribute}`"
            ),
        }
    }
}

/// Checks `elements` against the schema of `kind`; returns every violation.
pub fn check_elements(kind: ArtifactKind, elements: &[Element]) -> Vec<SchemaViolation> {
    let schema = element_schema(kind);
    let mut out = Vec::new();
    if elements.is_empty() {
        out.push(SchemaViolation::Empty);
    }

    let mut seen = BTreeSet::new();
    let mut counts: BTreeMap<ElementKind, usize> = BTreeMap::new();
    for el in elements {
        if !seen.insert(el.element_id.as_str()) {
            out.push(SchemaViolation::DuplicateElementId {
                element_id: el.element_id.to_string(),
            });
        }
        let Some(rule) = schema.requirement(el.kind) else {
            out.push(SchemaViolation::UnexpectedElementKind {
                element_id: el.element_id.to_string(),
                kind: el.kind,
            });
            continue;
        };
        *counts.entry(el.kind).or_default() += 1;
        let content_ok = matches!(
            (&el.content, rule.content),
            (Content::Text(_), ContentType::Text) | (Content::Image(_), ContentType::Image)
        );
        if !content_ok {
            out.push(SchemaViolation::WrongContent {
                element_id: el.element_id.to_string(),
                expected: rule.content,
            });
        }
        for attr in &rule.attributes {
            if !el.attributes.contains_key(*attr) {
                out.push(SchemaViolation::MissingAttribute {
                    element_id: el.element_id.to_string(),
                    kind: el.kind,
                    attribute: attr.to_string(),
                });
            }
        }
    }

    for rule in &schema.elements {
        let found = counts.get(&rule.kind).copied().unwrap_or(0);
        if found < rule.min {
            out.push(SchemaViolation::TooFew {
                kind: rule.kind,
                min: rule.min,
                found,
            });
        }
        if let Some(max) = rule.max {
            if found > max {
                out.push(SchemaViolation::TooMany {
                    kind: rule.kind,
                    max,
                    found,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AssetRef;

    fn scene(id: &str) -> Element {
        let mut el = Element::text(id, ElementKind::SceneEntry, "INT. WORKSHOP");
        for attr in SCENE_ATTRIBUTES {
            el.attributes.insert(attr.to_string(), String::new());
        }
        el
    }

    #[test]
    fn scene_list_entries_carry_all_six_attributes() {
        let schema = element_schema(ArtifactKind::SceneList);
        assert_eq!(schema.elements.len(), 1);
        let entry = schema.primary();
        assert_eq!(entry.kind, ElementKind::SceneEntry);
        assert_eq!(
            entry.attributes,
            vec![
                "scene_number",
                "location",
                "time_of_day",
                "characters",
                "description",
                "styleframe_slot"
            ]
        );
    }

    #[test]
    fn three_act_structure_has_exactly_three_sections() {
        let schema = element_schema(ArtifactKind::ThreeActStructure);
        let acts = schema.primary();
        assert_eq!((acts.min, acts.max), (3, Some(3)));
        assert!(acts.attributes.contains(&"turning_point"));
    }

    #[test]
    fn hero_image_is_one_asset_plus_caption() {
        let schema = element_schema(ArtifactKind::HeroImage);
        let kinds: Vec<_> = schema
            .elements
            .iter()
            .map(|r| (r.kind, r.content, r.min, r.max))
            .collect();
        assert_eq!(
            kinds,
            vec![
                (ElementKind::ImageAsset, ContentType::Image, 1, Some(1)),
                (ElementKind::TextField, ContentType::Text, 1, Some(1)),
            ]
        );
    }

    #[test]
    fn schema_is_stable_across_calls() {
        for kind in ArtifactKind::ALL {
            assert_eq!(element_schema(kind), element_schema(kind));
            assert!(!element_schema(kind).elements.is_empty());
        }
    }

    #[test]
    fn empty_valued_attributes_still_count_as_present() {
        assert!(check_elements(ArtifactKind::SceneList, &[scene("e0")]).is_empty());
    }

    #[test]
    fn missing_attribute_is_named() {
        let mut el = scene("e0");
        el.attributes.remove("characters");
        let v = check_elements(ArtifactKind::SceneList, &[scene("e1"), el]);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("`characters`"), "{}", v[0]);
    }

    #[test]
    fn wrong_content_and_counts_are_reported() {
        let els = vec![
            Element::text("e0", ElementKind::ImageAsset, "not an image"),
            Element::image("e1", ElementKind::TextField, AssetRef::new("assets/x.png")),
            Element::text("e2", ElementKind::TextField, "caption"),
        ];
        let v = check_elements(ArtifactKind::HeroImage, &els);
        assert!(v.iter().any(|x| matches!(x, SchemaViolation::WrongContent { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, SchemaViolation::TooMany { kind: ElementKind::TextField, .. })));
    }

    #[test]
    fn duplicate_ids_and_foreign_kinds_rejected() {
        let els = vec![
            Element::text("e0", ElementKind::LoglineOption, "a"),
            Element::text("e0", ElementKind::LoglineOption, "b"),
            Element::text("e1", ElementKind::ShotPanel, "c"),
        ];
        let v = check_elements(ArtifactKind::Logline, &els);
        assert!(v
            .iter()
            .any(|x| matches!(x, SchemaViolation::DuplicateElementId { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, SchemaViolation::UnexpectedElementKind { .. })));
        assert_eq!(
            check_elements(ArtifactKind::Logline, &[]),
            vec![
                SchemaViolation::Empty,
                SchemaViolation::TooFew {
                    kind: ElementKind::LoglineOption,
                    min: 1,
                    found: 0
                }
            ]
        );
    }
}
