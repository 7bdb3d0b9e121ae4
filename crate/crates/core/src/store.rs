//! Multimodal package records, JSON-Lines manifests, and the reference index
//! used for top-k evidence retrieval.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{dot, l2_norm};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("reference index is empty")]
    EmptyIndex,
    #[error("k must be between 1 and the reference size {size}, got {k}")]
    InvalidK { k: usize, size: usize },
    #[error("query {0} shares no modality with the reference index")]
    NoSharedModality(String),
    #[error("unknown package {0}")]
    UnknownPackage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Reference,
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Reference => "reference",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Clean,
    Tampered,
}

impl Label {
    pub fn is_tampered(self) -> bool {
        self == Label::Tampered
    }
}

/// One multimedia record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Package {
    pub id: String,
    pub split: Split,
    #[serde(default)]
    pub label: Label,
    #[serde(default)]
    pub entity_id: String,
    pub modalities: BTreeMap<String, Vec<f64>>,
}

impl Package {
    pub fn modality(&self, name: &str) -> Option<&[f64]> {
        self.modalities.get(name).map(Vec::as_slice)
    }
}

/// Modality name → feature dimension, in canonical (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub schema: BTreeMap<String, usize>,
}

impl Schema {
    pub fn new(dims: impl IntoIterator<Item = (String, usize)>) -> Self {
        Self {
            schema: dims.into_iter().collect(),
        }
    }

    pub fn modalities(&self) -> impl Iterator<Item = (&str, usize)> {
        self.schema.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.schema.keys().cloned().collect()
    }

    pub fn dim(&self, modality: &str) -> Option<usize> {
        self.schema.get(modality).copied()
    }

    pub fn len(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schema.is_empty()
    }

    /// Checks a package against the schema: known modalities, declared
    /// dimensions, finite non-zero vectors.
    pub fn validate(&self, package: &Package) -> Result<(), String> {
        for (name, v) in &package.modalities {
            let dim = self
                .dim(name)
                .ok_or_else(|| format!("package {}: modality {name} not declared in schema", package.id))?;
            if v.len() != dim {
                return Err(format!(
                    "package {}: modality {name} has length {}, schema declares {dim}",
                    package.id,
                    v.len()
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("package {}: modality {name} has non-finite values", package.id));
            }
            if l2_norm(v) == 0.0 {
                return Err(format!("package {}: modality {name} is a zero vector", package.id));
            }
        }
        Ok(())
    }
}

/// l2-normalized reference vectors per modality, ordered by package id.
#[derive(Clone, Debug, Default)]
pub struct ReferenceIndex {
    modalities: Vec<String>,
    ids: Vec<String>,
    /// `vectors[m][row]`, `None` when the package lacks modality `m`.
    vectors: Vec<Vec<Option<Vec<f64>>>>,
}

/// One retrieved package.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    pub modality_scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.id.as_str())
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    v.iter().map(|x| x / n).collect()
}

impl ReferenceIndex {
    /// Builds the index from reference packages. Rows are sorted by id so the
    /// index does not depend on ingestion order. Zero vectors are rejected.
    pub fn build<'a>(schema: &Schema, packages: impl IntoIterator<Item = &'a Package>) -> Result<Self, StoreError> {
        let mut refs: Vec<&Package> = packages.into_iter().collect();
        refs.sort_by(|a, b| a.id.cmp(&b.id));
        let modalities = schema.names();
        let mut vectors = vec![Vec::with_capacity(refs.len()); modalities.len()];
        for p in &refs {
            for (m, name) in modalities.iter().enumerate() {
                let row = match p.modality(name) {
                    Some(v) if l2_norm(v) == 0.0 => {
                        return Err(StoreError::Ingest {
                            line: 0,
                            message: format!("reference {} has a zero {name} vector", p.id),
                        })
                    }
                    Some(v) => Some(normalized(v)),
                    None => None,
                };
                vectors[m].push(row);
            }
        }
        Ok(Self {
            modalities,
            ids: refs.iter().map(|p| p.id.clone()).collect(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Top-k reference packages by the sum of per-modality cosine similarities
    /// over modalities present in both query and candidate. Ties are broken by
    /// ascending package id.
    pub fn retrieve(&self, query: &Package, k: usize) -> Result<RetrievalResult, StoreError> {
        if self.is_empty() {
            return Err(StoreError::EmptyIndex);
        }
        if k == 0 || k > self.len() {
            return Err(StoreError::InvalidK { k, size: self.len() });
        }
        let query_vecs: Vec<Option<Vec<f64>>> = self
            .modalities
            .iter()
            .map(|name| query.modality(name).filter(|v| l2_norm(v) > 0.0).map(normalized))
            .collect();
        if query_vecs.iter().all(Option::is_none) {
            return Err(StoreError::NoSharedModality(query.id.clone()));
        }

        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .map(|row| {
                let score = query_vecs
                    .iter()
                    .zip(&self.vectors)
                    .filter_map(|(q, col)| Some(dot(q.as_ref()?, col[row].as_ref()?)))
                    .sum();
                (score, row)
            })
            .collect();
        // Rows are id-sorted, so the row index is the id tie-break.
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);

        let hits = scored
            .into_iter()
            .map(|(score, row)| {
                let modality_scores = self
                    .modalities
                    .iter()
                    .zip(&query_vecs)
                    .zip(&self.vectors)
                    .filter_map(|((name, q), col)| Some((name.clone(), dot(q.as_ref()?, col[row].as_ref()?))))
                    .collect();
                Hit {
                    id: self.ids[row].clone(),
                    score,
                    modality_scores,
                }
            })
            .collect();
        Ok(RetrievalResult {
            query_id: query.id.clone(),
            hits,
        })
    }
}

/// A loaded manifest: schema, packages, and the reference index over the
/// reference split.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub schema: Schema,
    packages: Vec<Package>,
    by_id: HashMap<String, usize>,
    index: ReferenceIndex,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DatasetSummary {
    pub packages: usize,
    pub per_split: BTreeMap<String, usize>,
    pub tampered: usize,
    pub schema: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn from_packages(schema: Schema, packages: Vec<Package>) -> Result<Self, StoreError> {
        let mut by_id = HashMap::with_capacity(packages.len());
        for (i, p) in packages.iter().enumerate() {
            schema
                .validate(p)
                .map_err(|message| StoreError::Ingest { line: i + 2, message })?;
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(StoreError::Ingest {
                    line: i + 2,
                    message: format!("duplicate id {}", p.id),
                });
            }
        }
        let index = ReferenceIndex::build(&schema, packages.iter().filter(|p| p.split == Split::Reference))?;
        Ok(Self {
            schema,
            packages,
            by_id,
            index,
        })
    }

    /// Reads a JSON-Lines manifest. The first non-empty line must be the
    /// schema header; each following line is one package. Errors carry the
    /// 1-based line number.
    pub fn ingest(path: &Path) -> Result<Self, StoreError> {
        let file = fs::File::open(path)?;
        Self::ingest_reader(BufReader::new(file))
    }

    pub fn ingest_reader<R: BufRead>(reader: R) -> Result<Self, StoreError> {
        let mut schema: Option<Schema> = None;
        let mut packages = Vec::new();
        let mut by_id = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| StoreError::Ingest { line: line_no, message };
            let Some(schema) = &schema else {
                schema = Some(serde_json::from_str(&line).map_err(|e| err(format!("bad schema header: {e}")))?);
                continue;
            };
            let package: Package = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            schema.validate(&package).map_err(err)?;
            if by_id.insert(package.id.clone(), packages.len()).is_some() {
                return Err(err(format!("duplicate id {}", package.id)));
            }
            packages.push(package);
        }
        let schema = schema.unwrap_or_default();
        let index = ReferenceIndex::build(&schema, packages.iter().filter(|p| p.split == Split::Reference))?;
        Ok(Self {
            schema,
            packages,
            by_id,
            index,
        })
    }

    pub fn write_manifest<W: Write>(&self, out: &mut W) -> Result<(), StoreError> {
        write_manifest(out, &self.schema, &self.packages)
    }

    pub fn packages(&self) -> &[Package] {
        &self.packages
    }

    pub fn get(&self, id: &str) -> Option<&Package> {
        self.by_id.get(id).map(|&i| &self.packages[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Package> {
        self.packages.iter().filter(move |p| p.split == split)
    }

    pub fn index(&self) -> &ReferenceIndex {
        &self.index
    }

    pub fn retrieve(&self, query: &Package, k: usize) -> Result<RetrievalResult, StoreError> {
        self.index.retrieve(query, k)
    }

    /// Reference packages of the same entity as `query`.
    pub fn relevant_ids(&self, query: &Package) -> BTreeSet<String> {
        self.split(Split::Reference)
            .filter(|p| !query.entity_id.is_empty() && p.entity_id == query.entity_id)
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn resolve(&self, result: &RetrievalResult) -> Result<Vec<&Package>, StoreError> {
        result
            .ids()
            .map(|id| self.get(id).ok_or_else(|| StoreError::UnknownPackage(id.to_string())))
            .collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut per_split = BTreeMap::new();
        for p in &self.packages {
            *per_split.entry(p.split.to_string()).or_insert(0) += 1;
        }
        DatasetSummary {
            packages: self.packages.len(),
            per_split,
            tampered: self
                .packages
                .iter()
                .filter(|p| p.split != Split::Reference && p.label.is_tampered())
                .count(),
            schema: self.schema.schema.clone(),
        }
    }
}

pub fn write_manifest<W: Write>(out: &mut W, schema: &Schema, packages: &[Package]) -> Result<(), StoreError> {
    serde_json::to_writer(&mut *out, schema)?;
    out.write_all(b"\n")?;
    for p in packages {
        serde_json::to_writer(&mut *out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Average precision of one ranked list: mean over relevant hits of the
/// precision at that hit's rank. Zero when no hit is relevant.
pub fn average_precision(result: &RetrievalResult, relevant: &BTreeSet<String>) -> f64 {
    let mut found = 0usize;
    let mut total = 0.0;
    for (rank, id) in result.ids().enumerate() {
        if relevant.contains(id) {
            found += 1;
            total += found as f64 / (rank + 1) as f64;
        }
    }
    if found == 0 {
        0.0
    } else {
        total / found as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapReport {
    pub map: f64,
    pub queries: usize,
    /// Queries with no relevant reference package; excluded from the mean.
    pub excluded: Vec<String>,
}

pub fn mean_average_precision(
    results: &[RetrievalResult],
    relevance: &HashMap<String, BTreeSet<String>>,
) -> MapReport {
    let mut excluded = Vec::new();
    let mut aps = Vec::new();
    for r in results {
        match relevance.get(&r.query_id) {
            Some(rel) if !rel.is_empty() => aps.push(average_precision(r, rel)),
            _ => excluded.push(r.query_id.clone()),
        }
    }
    excluded.sort();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    MapReport {
        map,
        queries: aps.len(),
        excluded,
    }
}

/// Size of `top-k ∩ relevant`.
pub fn count_correct_retrievals(result: &RetrievalResult, relevant: &BTreeSet<String>) -> usize {
    result.ids().filter(|id| relevant.contains(*id)).count()
}
