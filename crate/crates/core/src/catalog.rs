//! Pre-generated item catalog: a JSON manifest plus sibling PNG assets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbaImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("duplicate item id `{0}`")]
    Duplicate(String),
    #[error("asset for `{id}`: {detail}")]
    Asset { id: String, detail: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Beauty,
    Tech,
    Profession,
    Leisure,
    Food,
    Suspicious,
    Music,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Beauty,
        Category::Tech,
        Category::Profession,
        Category::Leisure,
        Category::Food,
        Category::Suspicious,
        Category::Music,
        Category::Other,
    ];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("enum serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Clone)]
pub struct ItemSpec {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub tags: Vec<String>,
    /// Manifest-relative asset path.
    pub asset_ref: String,
    pub nominal_w_cm: f64,
    pub nominal_h_cm: f64,
    pub asset: Arc<RgbaImage>,
}

impl fmt::Debug for ItemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ItemSpec")
            .field("id", &self.id)
            .field("category", &self.category)
            .field("tags", &self.tags)
            .field("nominal_cm", &(self.nominal_w_cm, self.nominal_h_cm))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub tags: Vec<String>,
    pub asset: String,
    pub nominal_cm: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub items: Vec<ManifestItem>,
}

/// Immutable after load; share behind `Arc` across runs.
#[derive(Debug, Clone)]
pub struct Catalog {
    version: String,
    items: BTreeMap<String, ItemSpec>,
}

fn is_snake_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn check_asset(id: &str, img: &RgbaImage) -> Result<(), CatalogError> {
    let alpha = img.pixels().map(|p| p.0[3]);
    let (mut clear, mut solid) = (false, false);
    for a in alpha {
        clear |= a == 0;
        solid |= a == 255;
        if clear && solid {
            return Ok(());
        }
    }
    Err(CatalogError::Asset {
        id: id.to_string(),
        detail: "needs at least one transparent and one opaque pixel".into(),
    })
}

impl ItemSpec {
    fn validate(&self) -> Result<(), CatalogError> {
        if !is_snake_id(&self.id) {
            return Err(CatalogError::Schema(format!("id `{}` is not lowercase snake case", self.id)));
        }
        if self.name.trim().is_empty() {
            return Err(CatalogError::Schema(format!("`{}` has an empty name", self.id)));
        }
        for (axis, v) in [("width", self.nominal_w_cm), ("height", self.nominal_h_cm)] {
            if !(v > 0.5 && v < 100.0) {
                return Err(CatalogError::Schema(format!(
                    "`{}` nominal {axis} {v} cm outside (0.5, 100)",
                    self.id
                )));
            }
        }
        for t in &self.tags {
            if t.is_empty() || t.trim() != t || t.to_lowercase() != *t {
                return Err(CatalogError::Schema(format!(
                    "`{}` tag {t:?} must be trimmed lowercase",
                    self.id
                )));
            }
        }
        check_asset(&self.id, &self.asset)
    }
}

impl Catalog {
    /// Validate and index already-decoded items.
    pub fn from_items(version: impl Into<String>, items: Vec<ItemSpec>) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::Schema("catalog has no items".into()));
        }
        let mut map = BTreeMap::new();
        for item in items {
            if map.contains_key(&item.id) {
                return Err(CatalogError::Duplicate(item.id));
            }
            item.validate()?;
            map.insert(item.id.clone(), item);
        }
        Ok(Self {
            version: version.into(),
            items: map,
        })
    }

    /// Skip validation; tests use this for degenerate assets.
    #[cfg(test)]
    pub(crate) fn unchecked(items: Vec<ItemSpec>) -> Self {
        Self {
            version: "test".into(),
            items: items.into_iter().map(|i| (i.id.clone(), i)).collect(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ItemSpec> {
        self.items.get(id)
    }

    /// Items in id order.
    pub fn iter(&self) -> impl Iterator<Item = &ItemSpec> {
        self.items.values()
    }

    /// Items sharing at least one tag with `tags`, ranked by overlap size
    /// (descending) then id (ascending), truncated to `limit`.
    pub fn items_for_tags<S: AsRef<str>>(&self, tags: &[S], limit: usize) -> Vec<&ItemSpec> {
        let query: BTreeSet<String> = tags
            .iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        let mut scored: Vec<(usize, &ItemSpec)> = self
            .items
            .values()
            .filter_map(|item| {
                let own: BTreeSet<&str> = item.tags.iter().map(String::as_str).collect();
                let overlap = own.iter().filter(|t| query.contains(**t)).count();
                (overlap > 0).then_some((overlap, item))
            })
            .collect();
        // values() is already id-ascending, so a stable sort on overlap suffices
        scored.sort_by_key(|s| std::cmp::Reverse(s.0));
        scored.into_iter().take(limit).map(|(_, item)| item).collect()
    }
}

/// Load a catalog from a manifest file or a directory containing
/// `manifest.json`. Every asset is decoded and checked.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| CatalogError::Io {
        path: manifest_path.display().to_string(),
        detail: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CatalogError::Schema(e.to_string()))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));

    let mut seen = BTreeSet::new();
    let mut items = Vec::with_capacity(manifest.items.len());
    for m in manifest.items {
        if !seen.insert(m.id.clone()) {
            return Err(CatalogError::Duplicate(m.id));
        }
        let asset_path = root.join(&m.asset);
        let bytes = std::fs::read(&asset_path).map_err(|e| CatalogError::Asset {
            id: m.id.clone(),
            detail: format!("{}: {e}", asset_path.display()),
        })?;
        let img = crate::raster::decode_png(&bytes).map_err(|e| CatalogError::Asset {
            id: m.id.clone(),
            detail: e.to_string(),
        })?;
        items.push(ItemSpec {
            id: m.id,
            name: m.name,
            category: m.category,
            tags: m.tags,
            asset_ref: m.asset,
            nominal_w_cm: m.nominal_cm[0],
            nominal_h_cm: m.nominal_cm[1],
            asset: Arc::new(img),
        });
    }
    Catalog::from_items(manifest.version, items)
}
