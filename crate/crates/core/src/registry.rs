//! Built-in catalog of trainable models and QA datasets.
//!
//! The registry is compiled in and immutable. Models are bucketed by
//! parameter count into the six rows of the minimum-configuration table
//! (see [`crate::memory`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model name `{query}` is ambiguous; candidates: {}", candidates.join(", "))]
    AmbiguousModel { query: String, candidates: Vec<String> },
    #[error("unknown size bucket `{0}`")]
    UnknownBucket(String),
}

/// Whether the upstream license permits commercial use.
///
/// The catalog only knows that some models are restricted, not which ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommercialUse {
    Allowed,
    Restricted,
    Unknown,
}

impl fmt::Display for CommercialUse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Allowed => "allowed",
            Self::Restricted => "restricted",
            Self::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub family: String,
    pub param_count: u64,
    pub default_context: u32,
    pub commercial_ok: CommercialUse,
}

impl ModelSpec {
    pub fn bucket(&self) -> SizeBucket {
        size_bucket(self.param_count)
    }
}

/// Model-size row of the minimum-configuration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeBucket {
    B1,
    B7,
    B13,
    B33,
    B70,
    B130,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 6] = [
        SizeBucket::B1,
        SizeBucket::B7,
        SizeBucket::B13,
        SizeBucket::B33,
        SizeBucket::B70,
        SizeBucket::B130,
    ];

    /// Nominal parameter count of the row.
    pub fn nominal(self) -> f64 {
        match self {
            Self::B1 => 1e9,
            Self::B7 => 7e9,
            Self::B13 => 13e9,
            Self::B33 => 33e9,
            Self::B70 => 70e9,
            Self::B130 => 130e9,
        }
    }

    /// Row label as printed in the table.
    pub fn label(self) -> &'static str {
        match self {
            Self::B1 => "<=1B",
            Self::B7 => "7B",
            Self::B13 => "13B",
            Self::B33 => "33B",
            Self::B70 => "70B",
            Self::B130 => "130B",
        }
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SizeBucket {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_uppercase();
        Ok(match key.as_str() {
            "<=1B" | "B1" | "1B" => Self::B1,
            "7B" | "B7" => Self::B7,
            "13B" | "B13" => Self::B13,
            "33B" | "B33" => Self::B33,
            "70B" | "B70" => Self::B70,
            "130B" | "B130" => Self::B130,
            _ => return Err(RegistryError::UnknownBucket(s.to_string())),
        })
    }
}

/// Maps a parameter count to its table row.
///
/// Boundaries sit at the geometric midpoint of adjacent nominal sizes; a
/// count exactly on a boundary belongs to the smaller bucket. The largest
/// bucket is open-ended.
pub fn size_bucket(param_count: u64) -> SizeBucket {
    let p = param_count as f64;
    for pair in SizeBucket::ALL.windows(2) {
        let upper = (pair[0].nominal() * pair[1].nominal()).sqrt();
        if p <= upper {
            return pair[0];
        }
    }
    SizeBucket::B130
}

/// (name, family, param_count) in table order.
const MODELS: [(&str, &str, u64); 12] = [
    ("GPT-2", "gpt2", 1_500_000_000),
    ("GPT-Neo-1.3B", "gpt-neo", 1_300_000_000),
    ("ChatGLM-6B", "chatglm", 6_000_000_000),
    ("ChatGLM2-6B", "chatglm", 6_000_000_000),
    ("Llama-7B", "llama", 6_700_000_000),
    ("Llama-13B", "llama", 13_000_000_000),
    ("Llama-33B", "llama", 33_000_000_000),
    ("Llama-65B", "llama", 65_000_000_000),
    ("Llama2-7B", "llama2", 7_000_000_000),
    ("Llama2-13B", "llama2", 13_000_000_000),
    ("Llama2-70B", "llama2", 70_000_000_000),
    ("GLM-130B", "glm", 130_000_000_000),
];

pub const DEFAULT_CONTEXT: u32 = 2048;

/// All registry entries in declaration order.
pub fn list_models() -> Vec<ModelSpec> {
    MODELS
        .iter()
        .map(|&(name, family, param_count)| ModelSpec {
            name: name.to_string(),
            family: family.to_string(),
            param_count,
            default_context: DEFAULT_CONTEXT,
            commercial_ok: CommercialUse::Unknown,
        })
        .collect()
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '-' && *c != '_' && !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Looks up a model ignoring case, hyphens and underscores.
///
/// An exact normalized match wins; otherwise a unique prefix match is
/// accepted.
pub fn resolve_model(name: &str) -> Result<ModelSpec, RegistryError> {
    let query = normalize(name);
    if query.is_empty() {
        return Err(RegistryError::UnknownModel(name.to_string()));
    }
    let models = list_models();
    if let Some(m) = models.iter().find(|m| normalize(&m.name) == query) {
        return Ok(m.clone());
    }
    let mut hits: Vec<ModelSpec> = models
        .into_iter()
        .filter(|m| normalize(&m.name).starts_with(&query))
        .collect();
    match hits.len() {
        0 => Err(RegistryError::UnknownModel(name.to_string())),
        1 => Ok(hits.remove(0)),
        _ => Err(RegistryError::AmbiguousModel {
            query: name.to_string(),
            candidates: hits.into_iter().map(|m| m.name).collect(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCatalogEntry {
    pub name: String,
    pub language: String,
    pub domain: String,
    pub sample_count: usize,
    /// Relative to the data directory.
    pub local_path: Option<String>,
}

const DATASETS: [(&str, &str, &str, usize); 3] = [
    ("lima-en", "en", "general", 1030),
    ("lima-zh", "zh", "general", 1090),
    ("cmcqa", "zh", "medical", 60_000),
];

pub fn list_datasets() -> Vec<DatasetCatalogEntry> {
    DATASETS
        .iter()
        .map(|&(name, language, domain, sample_count)| DatasetCatalogEntry {
            name: name.to_string(),
            language: language.to_string(),
            domain: domain.to_string(),
            sample_count,
            local_path: Some(format!("{name}.jsonl")),
        })
        .collect()
}

pub fn find_dataset(name: &str) -> Option<DatasetCatalogEntry> {
    let key = name.trim().to_ascii_lowercase();
    list_datasets().into_iter().find(|d| d.name == key)
}

/// Default built-in dataset for a (domain, language) request.
///
/// Lookup order: exact match, domain match, general-domain dataset in the
/// requested language, then `lima-en`.
pub fn default_dataset(domain: &str, language: &str) -> DatasetCatalogEntry {
    let domain = domain.trim().to_ascii_lowercase();
    let language = language.trim().to_ascii_lowercase();
    let all = list_datasets();
    all.iter()
        .find(|d| d.domain == domain && d.language == language)
        .or_else(|| all.iter().find(|d| d.domain == domain))
        .or_else(|| all.iter().find(|d| d.domain == "general" && d.language == language))
        .or_else(|| all.iter().find(|d| d.name == "lima-en"))
        .cloned()
        .expect("lima-en is always in the catalog")
}

#[derive(Serialize)]
struct CatalogLine<'a> {
    name: &'a str,
    family: &'a str,
    param_count: u64,
    commercial_ok: CommercialUse,
}

/// Machine-readable model catalog: one JSON object per line.
pub fn export_catalog() -> String {
    let mut out = String::new();
    for m in list_models() {
        let line = CatalogLine {
            name: &m.name,
            family: &m.family,
            param_count: m.param_count,
            commercial_ok: m.commercial_ok,
        };
        out.push_str(&serde_json::to_string(&line).expect("catalog line serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows_present() {
        let models = list_models();
        assert_eq!(models.len(), 12);
        assert_eq!(models[0].name, "GPT-2");
        assert_eq!(models[11].name, "GLM-130B");
        let llama = models.iter().find(|m| m.name == "Llama-7B").unwrap();
        assert_eq!(llama.param_count, 6_700_000_000);
        let glm = models.iter().find(|m| m.name == "GLM-130B").unwrap();
        assert_eq!(glm.param_count, 130_000_000_000);
    }

    #[test]
    fn names_are_unique_after_normalization() {
        let models = list_models();
        for (i, a) in models.iter().enumerate() {
            for b in &models[i + 1..] {
                assert_ne!(normalize(&a.name), normalize(&b.name));
            }
        }
    }

    #[test]
    fn resolve_normalizes() {
        assert_eq!(resolve_model("llama2_7b").unwrap().name, "Llama2-7B");
        assert_eq!(resolve_model("GLM-130b").unwrap().name, "GLM-130B");
        assert_eq!(resolve_model("gpt-neo").unwrap().name, "GPT-Neo-1.3B");
    }

    #[test]
    fn resolve_errors() {
        assert_eq!(
            resolve_model("Llama-3B"),
            Err(RegistryError::UnknownModel("Llama-3B".into()))
        );
        match resolve_model("Llama") {
            Err(RegistryError::AmbiguousModel { candidates, .. }) => {
                let expected = list_models()
                    .into_iter()
                    .filter(|m| m.name.to_lowercase().starts_with("llama"))
                    .count();
                assert_eq!(candidates.len(), expected);
                assert_eq!(candidates.len(), 7);
            }
            other => panic!("expected ambiguity, got {other:?}"),
        }
        assert!(resolve_model("").is_err());
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(size_bucket(130_000_000_000), SizeBucket::B130);
        assert_eq!(size_bucket(6_700_000_000), SizeBucket::B7);
        assert_eq!(size_bucket(1_300_000_000), SizeBucket::B1);
        assert_eq!(size_bucket(1), SizeBucket::B1);
        assert_eq!(size_bucket(u64::MAX), SizeBucket::B130);
        // sqrt(1e9 * 7e9) = 2.6458e9
        assert_eq!(size_bucket(2_645_000_000), SizeBucket::B1);
        assert_eq!(size_bucket(2_646_000_000), SizeBucket::B7);
    }

    #[test]
    fn every_bucket_but_33b_is_populated() {
        let models = list_models();
        for b in SizeBucket::ALL {
            if b == SizeBucket::B33 {
                continue;
            }
            assert!(models.iter().any(|m| m.bucket() == b), "{b} has no model");
        }
        assert_eq!(resolve_model("Llama-65B").unwrap().bucket(), SizeBucket::B70);
    }

    #[test]
    fn datasets_catalog() {
        let ds = list_datasets();
        let count = |n: &str| ds.iter().find(|d| d.name == n).unwrap().sample_count;
        assert_eq!(count("lima-en"), 1030);
        assert_eq!(count("lima-zh"), 1090);
        assert_eq!(count("cmcqa"), 60_000);
        assert_eq!(default_dataset("medical", "en").name, "cmcqa");
        assert_eq!(default_dataset("general", "zh").name, "lima-zh");
        assert_eq!(default_dataset("legal", "en").name, "lima-en");
    }

    #[test]
    fn catalog_export_has_one_line_per_model() {
        let text = export_catalog();
        assert_eq!(text.lines().count(), 12);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["name"], "GPT-2");
        assert_eq!(first["commercial_ok"], "unknown");
    }

    #[test]
    fn bucket_parse_round_trip() {
        for b in SizeBucket::ALL {
            assert_eq!(b.label().parse::<SizeBucket>().unwrap(), b);
        }
    }
}
