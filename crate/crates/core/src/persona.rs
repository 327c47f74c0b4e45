//! Persona parsing and item assignment.
//!
//! The inference capability returns free text that should contain a JSON
//! document with the four appearance dimensions. Parsing normalises the
//! keywords; assignment joins them against the local catalog so only real
//! catalog items reach the compositor.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, Category, ItemSpec};

pub const MAX_KEYWORDS_PER_DIMENSION: usize = 8;
pub const MAX_SUMMARY_CHARS: usize = 500;
pub const FALLBACK_SUMMARY: &str = "unreadable";
pub const FALLBACK_RATIONALE: &str = "fallback";

/// Categories tried, in order, when padding with defaults.
const DEFAULT_CATEGORY_ORDER: [Category; 8] = [
    Category::Other,
    Category::Leisure,
    Category::Food,
    Category::Tech,
    Category::Music,
    Category::Profession,
    Category::Beauty,
    Category::Suspicious,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersonaParseError {
    #[error("inference body is empty")]
    Empty,
    #[error("no JSON object found in inference body")]
    NoDocument,
    #[error("malformed persona document: {0}")]
    Malformed(String),
    #[error("persona document is missing the `{0}` dimension")]
    MissingDimension(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub identity_keywords: Vec<String>,
    pub personality_keywords: Vec<String>,
    pub interest_keywords: Vec<String>,
    pub economic_keywords: Vec<String>,
    pub summary: String,
    /// Backend item suggestions, used only as extra matching tags.
    pub suggested_tags: Vec<String>,
    /// Digest of the normalised document content.
    pub raw_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAssignment {
    pub item_id: String,
    pub rationale: String,
    /// 1 is the most characteristic item.
    pub priority: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentPolicy {
    pub min_items: usize,
    pub max_items: usize,
    pub per_category_cap: usize,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        Self {
            min_items: 3,
            max_items: 6,
            per_category_cap: 2,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PersonaDoc {
    identity: Option<Vec<String>>,
    personality: Option<Vec<String>>,
    interests: Option<Vec<String>>,
    economic: Option<Vec<String>>,
    #[serde(default)]
    summary: String,
    #[serde(default)]
    suggested_items: Vec<String>,
}

#[derive(Serialize)]
struct PersonaDocOut<'a> {
    identity: &'a [String],
    personality: &'a [String],
    interests: &'a [String],
    economic: &'a [String],
    summary: &'a str,
    suggested_items: &'a [String],
}

fn normalize_keywords(raw: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for k in raw {
        let k = k.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if !k.is_empty() && !out.contains(&k) {
            out.push(k);
        }
    }
    out.truncate(MAX_KEYWORDS_PER_DIMENSION);
    out
}

fn extract_document(raw: &str) -> Result<&str, PersonaParseError> {
    let t = raw.trim();
    if t.is_empty() {
        return Err(PersonaParseError::Empty);
    }
    // tolerate prose or code fences around the object
    match (t.find('{'), t.rfind('}')) {
        (Some(a), Some(b)) if a < b => Ok(&t[a..=b]),
        _ => Err(PersonaParseError::NoDocument),
    }
}

impl PersonaProfile {
    fn from_parts(
        identity: Vec<String>,
        personality: Vec<String>,
        interests: Vec<String>,
        economic: Vec<String>,
        summary: &str,
        suggested: Vec<String>,
    ) -> Self {
        let summary: String = summary.trim().chars().take(MAX_SUMMARY_CHARS).collect();
        let mut p = PersonaProfile {
            identity_keywords: normalize_keywords(identity),
            personality_keywords: normalize_keywords(personality),
            interest_keywords: normalize_keywords(interests),
            economic_keywords: normalize_keywords(economic),
            summary: summary.trim_end().to_string(),
            suggested_tags: normalize_keywords(suggested),
            raw_ref: String::new(),
        };
        let mut h = Sha256::new();
        h.update(serialize_persona(&p).as_bytes());
        p.raw_ref = format!("sha256:{}", hex::encode(&h.finalize()[..16]));
        p
    }

    /// The four dimensions, in fixed order.
    pub fn dimensions(&self) -> [(&'static str, &[String]); 4] {
        [
            ("identity", &self.identity_keywords),
            ("personality", &self.personality_keywords),
            ("interests", &self.interest_keywords),
            ("economic", &self.economic_keywords),
        ]
    }

    /// All dimension keywords in dimension order, de-duplicated.
    pub fn keywords(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, list) in self.dimensions() {
            for k in list {
                if !out.contains(&k.as_str()) {
                    out.push(k);
                }
            }
        }
        out
    }

    pub fn keyword_count(&self) -> usize {
        self.dimensions().iter().map(|(_, l)| l.len()).sum()
    }
}

pub fn parse_persona(raw: &str) -> Result<PersonaProfile, PersonaParseError> {
    let doc_text = extract_document(raw)?;
    let doc: PersonaDoc = serde_json::from_str(doc_text).map_err(|e| PersonaParseError::Malformed(e.to_string()))?;
    let identity = doc.identity.ok_or(PersonaParseError::MissingDimension("identity"))?;
    let personality = doc.personality.ok_or(PersonaParseError::MissingDimension("personality"))?;
    let interests = doc.interests.ok_or(PersonaParseError::MissingDimension("interests"))?;
    let economic = doc.economic.ok_or(PersonaParseError::MissingDimension("economic"))?;
    Ok(PersonaProfile::from_parts(
        identity,
        personality,
        interests,
        economic,
        &doc.summary,
        doc.suggested_items,
    ))
}

/// Canonical body for a profile; `parse_persona` inverts it exactly.
pub fn serialize_persona(p: &PersonaProfile) -> String {
    serde_json::to_string(&PersonaDocOut {
        identity: &p.identity_keywords,
        personality: &p.personality_keywords,
        interests: &p.interest_keywords,
        economic: &p.economic_keywords,
        summary: &p.summary,
        suggested_items: &p.suggested_tags,
    })
    .expect("persona serializes")
}

pub fn fallback_persona() -> PersonaProfile {
    PersonaProfile::from_parts(vec![], vec![], vec![], vec![], FALLBACK_SUMMARY, vec![])
}

pub fn is_fallback(p: &PersonaProfile) -> bool {
    *p == fallback_persona()
}

/// Pick catalog items for a persona.
///
/// Matching items come first in tag-overlap order, skipping any whose
/// category already holds `per_category_cap` picks. When fewer than
/// `min(min_items, catalog size)` match, the result is padded with
/// category-diverse defaults whose rationale is `"fallback"`.
pub fn assign_items(profile: &PersonaProfile, catalog: &Catalog, policy: AssignmentPolicy) -> Vec<ItemAssignment> {
    let min_items = policy.min_items.max(1);
    let max_items = policy.max_items.max(min_items);
    let cap = policy.per_category_cap.max(1);

    let mut tags: Vec<&str> = profile.keywords();
    for t in &profile.suggested_tags {
        if !tags.contains(&t.as_str()) {
            tags.push(t);
        }
    }

    let mut picked: Vec<(&ItemSpec, String)> = Vec::new();
    let count_in = |picked: &[(&ItemSpec, String)], c: Category| picked.iter().filter(|(i, _)| i.category == c).count();

    for item in catalog.items_for_tags(&tags, catalog.len()) {
        if picked.len() >= max_items {
            break;
        }
        if count_in(&picked, item.category) >= cap {
            continue;
        }
        let hits: Vec<&str> = item.tags.iter().map(String::as_str).filter(|t| tags.contains(t)).collect();
        picked.push((item, format!("matched: {}", hits.join(", "))));
    }

    let floor = min_items.min(catalog.len());
    if picked.len() < floor {
        pad_with_defaults(&mut picked, catalog, floor, cap);
    }

    picked
        .into_iter()
        .enumerate()
        .map(|(i, (item, rationale))| ItemAssignment {
            item_id: item.id.clone(),
            rationale,
            priority: i as u32 + 1,
        })
        .collect()
}

fn pad_with_defaults<'a>(picked: &mut Vec<(&'a ItemSpec, String)>, catalog: &'a Catalog, floor: usize, cap: usize) {
    let taken = |picked: &[(&ItemSpec, String)], id: &str| picked.iter().any(|(i, _)| i.id == id);
    // round-robin over categories, lowest id first within each
    loop {
        let before = picked.len();
        for cat in DEFAULT_CATEGORY_ORDER {
            if picked.len() >= floor {
                return;
            }
            if picked.iter().filter(|(i, _)| i.category == cat).count() >= cap {
                continue;
            }
            if let Some(item) = catalog.iter().find(|i| i.category == cat && !taken(picked, &i.id)) {
                picked.push((item, FALLBACK_RATIONALE.to_string()));
            }
        }
        if picked.len() == before {
            break;
        }
    }
    // Only reachable when the catalog has too few categories for the cap.
    for item in catalog.iter() {
        if picked.len() >= floor {
            return;
        }
        if !taken(picked, &item.id) {
            picked.push((item, FALLBACK_RATIONALE.to_string()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::tests::item;

    fn doc(extra: &str) -> String {
        format!(
            r#"{{"identity":["Student"],"personality":["calm"],"interests":["Yoga"," yoga ","jazz"],{extra}"summary":"s","suggested_items":["Laptop"]}}"#
        )
    }

    #[test]
    fn dedups_and_normalizes() {
        let p = parse_persona(&doc(r#""economic":["middle   income"],"#)).unwrap();
        assert_eq!(p.interest_keywords, ["yoga", "jazz"]);
        assert_eq!(p.identity_keywords, ["student"]);
        assert_eq!(p.economic_keywords, ["middle income"]);
        assert_eq!(p.suggested_tags, ["laptop"]);
    }

    #[test]
    fn missing_dimension_is_an_error() {
        assert_eq!(
            parse_persona(&doc("")),
            Err(PersonaParseError::MissingDimension("economic"))
        );
        assert_eq!(parse_persona("   "), Err(PersonaParseError::Empty));
        assert_eq!(parse_persona("no json here"), Err(PersonaParseError::NoDocument));
        assert!(matches!(parse_persona("{not json}"), Err(PersonaParseError::Malformed(_))));
    }

    #[test]
    fn tolerates_code_fences() {
        let raw = format!("Here you go:\n```json\n{}\n```", doc(r#""economic":[],"#));
        assert!(parse_persona(&raw).is_ok());
    }

    #[test]
    fn truncates_long_lists_and_summary() {
        let many: Vec<String> = (0..20).map(|i| format!("k{i}")).collect();
        let raw = serde_json::json!({
            "identity": many, "personality": [], "interests": [], "economic": [],
            "summary": "x".repeat(900)
        })
        .to_string();
        let p = parse_persona(&raw).unwrap();
        assert_eq!(p.identity_keywords.len(), MAX_KEYWORDS_PER_DIMENSION);
        assert_eq!(p.summary.chars().count(), MAX_SUMMARY_CHARS);
    }

    #[test]
    fn fallback_has_no_keywords() {
        let f = fallback_persona();
        assert_eq!(f.keyword_count(), 0);
        assert_eq!(f.summary, "unreadable");
        assert!(f.dimensions().iter().all(|(_, l)| l.is_empty()));
    }

    #[test]
    fn two_item_catalog_clamps() {
        let cat = Catalog::from_items(
            "t",
            vec![item("a_item", Category::Other, &["x"]), item("b_item", Category::Food, &["y"])],
        )
        .unwrap();
        let out = assign_items(&fallback_persona(), &cat, AssignmentPolicy::default());
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| a.rationale == FALLBACK_RATIONALE));
    }

    #[test]
    fn single_category_catalog_relaxes_cap_only_when_forced() {
        let cat = Catalog::from_items(
            "t",
            (0..5).map(|i| item(&format!("i{i}"), Category::Beauty, &["x"])).collect(),
        )
        .unwrap();
        let out = assign_items(&fallback_persona(), &cat, AssignmentPolicy::default());
        assert_eq!(out.len(), 3);
    }
}
