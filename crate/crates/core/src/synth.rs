//! Seeded generator for multimodal packages with planted manipulations.
//!
//! Every entity owns one unit centroid per modality. Packages of an entity
//! are `normalize(centroid + noise)`, with noise of expected l2 norm
//! `cluster_spread`. Entities are partitioned into train/val/test so query
//! splits never share entities; each entity also contributes clean packages
//! to the reference split. A tampered query package has one modality (or a
//! coherent pair) replaced by a fresh sample around the nearest other
//! entity of the same split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numeric::{dot, l2_norm};
use crate::store::{write_manifest, Label, Package, Schema, Split, StoreError};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("infeasible generation config: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub num_entities: usize,
    pub packages_per_entity: usize,
    pub modality_dims: BTreeMap<String, usize>,
    /// Expected l2 norm of the within-entity noise added to a centroid.
    pub cluster_spread: f64,
    pub manipulation_rate: f64,
    pub seed: u64,
    pub split_fractions: SplitFractions,
    /// Fraction of each entity's packages placed in the reference split.
    pub reference_fraction: f64,
    /// Modalities eligible for manipulation; empty means all.
    pub manipulable: Vec<String>,
    /// When set, both modalities are swapped to the same target entity.
    pub coherent_pair: Option<(String, String)>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            num_entities: 40,
            packages_per_entity: 20,
            modality_dims: BTreeMap::from([
                ("image".to_string(), 64),
                ("location".to_string(), 16),
                ("text".to_string(), 64),
            ]),
            cluster_spread: 0.5,
            manipulation_rate: 0.5,
            seed: 7,
            split_fractions: SplitFractions::default(),
            reference_fraction: 0.25,
            manipulable: Vec::new(),
            coherent_pair: None,
        }
    }
}

impl GenerationConfig {
    fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: String| Err(GenerationError::Infeasible(m));
        if self.num_entities < 2 {
            return bad(format!("need at least 2 entities, got {}", self.num_entities));
        }
        if self.packages_per_entity < 3 {
            return bad(format!(
                "every entity needs at least 3 packages, got {}",
                self.packages_per_entity
            ));
        }
        if self.modality_dims.is_empty() || self.modality_dims.values().any(|&d| d == 0) {
            return bad("modality dimensions must be non-empty and positive".into());
        }
        let f = self.split_fractions;
        if [f.train, f.val, f.test].iter().any(|&x| !(0.0..=1.0).contains(&x))
            || (f.train + f.val + f.test - 1.0).abs() > 1e-9
        {
            return bad(format!("split fractions must be in [0,1] and sum to 1, got {f:?}"));
        }
        if !(0.0..=1.0).contains(&self.manipulation_rate) {
            return bad(format!("manipulation_rate must be in [0,1], got {}", self.manipulation_rate));
        }
        if !(self.reference_fraction > 0.0 && self.reference_fraction < 1.0) {
            return bad(format!("reference_fraction must be in (0,1), got {}", self.reference_fraction));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad("cluster_spread must be a finite non-negative number".into());
        }
        for m in self.manipulable.iter().chain(self.coherent_pair.iter().flat_map(|(a, b)| [a, b])) {
            if !self.modality_dims.contains_key(m) {
                return bad(format!("unknown manipulable modality {m}"));
            }
        }
        if let Some((a, b)) = &self.coherent_pair {
            if a == b {
                return bad("coherent_pair needs two distinct modalities".into());
            }
        }
        Ok(())
    }

    fn split_entity_counts(&self) -> Result<[usize; 3], GenerationError> {
        let n = self.num_entities as f64;
        let f = self.split_fractions;
        let train = (f.train * n).round() as usize;
        let val = ((f.val * n).round() as usize).min(self.num_entities - train);
        let test = self.num_entities - train - val;
        for (count, frac, name) in [(train, f.train, "train"), (val, f.val, "val"), (test, f.test, "test")] {
            if frac > 0.0 && count == 0 {
                return Err(GenerationError::Infeasible(format!(
                    "{name} split gets no entities with {} entities",
                    self.num_entities
                )));
            }
        }
        Ok([train, val, test])
    }

    fn reference_count(&self) -> usize {
        let p = self.packages_per_entity;
        ((self.reference_fraction * p as f64).round() as usize).clamp(1, p - 1)
    }
}

/// Per-modality unit centroids of one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityCluster {
    pub entity_id: String,
    pub centroids: BTreeMap<String, Vec<f64>>,
}

/// Ground truth for one tampered package.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    /// Manipulated modality; a coherent pair is written as `a+b`.
    pub manipulated_modality: String,
    pub source_entity: String,
    pub target_entity: String,
    /// The untampered vectors of the manipulated modalities.
    pub clean_counterfactual: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub schema: Schema,
    pub entities: Vec<EntityCluster>,
    pub packages: Vec<Package>,
    pub audit: Vec<AuditRecord>,
}

impl GeneratedData {
    pub fn manifest_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_manifest(&mut buf, &self.schema, &self.packages).expect("in-memory write");
        buf
    }

    pub fn audit_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for record in &self.audit {
            serde_json::to_writer(&mut buf, record).expect("in-memory write");
            buf.push(b'\n');
        }
        buf
    }

    /// Writes `manifest.jsonl` and `audit.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), GenerationError> {
        fs::create_dir_all(dir)?;
        fs::File::create(dir.join(MANIFEST_FILE))?.write_all(&self.manifest_bytes())?;
        fs::File::create(dir.join(AUDIT_FILE))?.write_all(&self.audit_bytes())?;
        Ok(())
    }

    pub fn entities_in(&self, split: Split) -> BTreeSet<&str> {
        self.packages
            .iter()
            .filter(|p| p.split == split)
            .map(|p| p.entity_id.as_str())
            .collect()
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn sample_around<R: Rng>(rng: &mut R, centroid: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (centroid.len() as f64).sqrt();
    let noise = gaussian(rng, centroid.len());
    let v: Vec<f64> = centroid.iter().zip(noise).map(|(c, n)| c + scale * n).collect();
    if l2_norm(&v) == 0.0 {
        // Astronomically unlikely; fall back to the centroid itself.
        return centroid.to_vec();
    }
    normalize(v)
}

/// Most similar other entity by summed per-modality centroid cosine, ties to
/// the smaller id. `None` with fewer than two entities.
pub fn nearest_entity<'a>(entity_id: &str, entities: &'a [EntityCluster]) -> Option<&'a str> {
    let me = entities.iter().find(|e| e.entity_id == entity_id)?;
    let similarity = |other: &EntityCluster| -> f64 {
        me.centroids
            .iter()
            .filter_map(|(m, c)| Some(dot(c, other.centroids.get(m)?) / (l2_norm(c) * l2_norm(other.centroids.get(m)?))))
            .sum()
    };
    entities
        .iter()
        .filter(|e| e.entity_id != entity_id)
        .map(|e| (similarity(e), e.entity_id.as_str()))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)))
        .map(|(_, id)| id)
}

pub fn generate(config: &GenerationConfig) -> Result<GeneratedData, GenerationError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schema = Schema::new(config.modality_dims.clone());
    let width = (config.num_entities - 1).to_string().len().max(3);

    let entities: Vec<EntityCluster> = (0..config.num_entities)
        .map(|i| EntityCluster {
            entity_id: format!("e{i:0width$}"),
            centroids: config
                .modality_dims
                .iter()
                .map(|(m, &d)| (m.clone(), normalize(gaussian(&mut rng, d))))
                .collect(),
        })
        .collect();

    let [n_train, n_val, _] = config.split_entity_counts()?;
    let mut order: Vec<usize> = (0..entities.len()).collect();
    order.shuffle(&mut rng);
    let mut entity_split = vec![Split::Test; entities.len()];
    for (rank, &e) in order.iter().enumerate() {
        entity_split[e] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let manipulable: Vec<String> = if config.manipulable.is_empty() {
        config.modality_dims.keys().cloned().collect()
    } else {
        config.manipulable.clone()
    };
    // Swap targets come from the entity's own split so no query split ever
    // carries another split's entities; a split with a single entity falls
    // back to the whole pool.
    let nearest: Vec<usize> = entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut pool: Vec<EntityCluster> = entities
                .iter()
                .zip(&entity_split)
                .filter(|(_, s)| **s == entity_split[i])
                .map(|(x, _)| x.clone())
                .collect();
            if pool.len() < 2 {
                pool = entities.clone();
            }
            let id = nearest_entity(&e.entity_id, &pool).expect("at least two entities");
            entities.iter().position(|x| x.entity_id == id).expect("known entity")
        })
        .collect();

    let n_ref = config.reference_count();
    let total = config.num_entities * config.packages_per_entity;
    let id_width = (total.saturating_sub(1)).to_string().len().max(5);
    let mut packages = Vec::with_capacity(total);
    let mut audit = Vec::new();

    for (e, entity) in entities.iter().enumerate() {
        for j in 0..config.packages_per_entity {
            let id = format!("p{:0id_width$}", packages.len());
            let mut modalities: BTreeMap<String, Vec<f64>> = entity
                .centroids
                .iter()
                .map(|(m, c)| (m.clone(), sample_around(&mut rng, c, config.cluster_spread)))
                .collect();
            let split = if j < n_ref { Split::Reference } else { entity_split[e] };
            let mut label = Label::Clean;
            if split != Split::Reference && rng.random::<f64>() < config.manipulation_rate {
                label = Label::Tampered;
                let target = &entities[nearest[e]];
                let swapped: Vec<String> = match &config.coherent_pair {
                    Some((a, b)) => vec![a.clone(), b.clone()],
                    None => vec![manipulable[rng.random_range(0..manipulable.len())].clone()],
                };
                let mut clean_counterfactual = BTreeMap::new();
                for m in &swapped {
                    let fake = sample_around(&mut rng, &target.centroids[m], config.cluster_spread);
                    let original = modalities.insert(m.clone(), fake).expect("modality present");
                    clean_counterfactual.insert(m.clone(), original);
                }
                audit.push(AuditRecord {
                    id: id.clone(),
                    manipulated_modality: swapped.join("+"),
                    source_entity: entity.entity_id.clone(),
                    target_entity: target.entity_id.clone(),
                    clean_counterfactual,
                });
            }
            packages.push(Package {
                id,
                split,
                label,
                entity_id: entity.entity_id.clone(),
                modalities,
            });
        }
    }

    Ok(GeneratedData {
        schema,
        entities,
        packages,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GenerationConfig {
        GenerationConfig {
            num_entities: 10,
            packages_per_entity: 6,
            modality_dims: BTreeMap::from([("image".into(), 8), ("text".into(), 8)]),
            seed,
            reference_fraction: 0.5,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn zero_rate_is_all_clean() {
        let data = generate(&GenerationConfig {
            manipulation_rate: 0.0,
            ..small(1)
        })
        .unwrap();
        assert!(data.packages.iter().all(|p| p.label == Label::Clean));
        assert!(data.audit.is_empty());
    }

    #[test]
    fn two_entities_swap_with_each_other() {
        let cfg = GenerationConfig {
            num_entities: 2,
            manipulation_rate: 1.0,
            split_fractions: SplitFractions {
                train: 0.5,
                val: 0.0,
                test: 0.5,
            },
            ..small(3)
        };
        let data = generate(&cfg).unwrap();
        assert!(!data.audit.is_empty());
        for rec in &data.audit {
            assert_ne!(rec.source_entity, rec.target_entity);
            let pkg = data.packages.iter().find(|p| p.id == rec.id).unwrap();
            let target = data.entities.iter().find(|e| e.entity_id == rec.target_entity).unwrap();
            let source = data.entities.iter().find(|e| e.entity_id == rec.source_entity).unwrap();
            let v = &pkg.modalities[&rec.manipulated_modality];
            let to_target = dot(v, &target.centroids[&rec.manipulated_modality]);
            let to_source = dot(v, &source.centroids[&rec.manipulated_modality]);
            assert!(to_target > to_source, "{to_target} vs {to_source}");
        }
    }

    #[test]
    fn tampered_packages_differ_in_exactly_one_modality() {
        let data = generate(&small(5)).unwrap();
        for rec in &data.audit {
            let pkg = data.packages.iter().find(|p| p.id == rec.id).unwrap();
            assert_eq!(pkg.label, Label::Tampered);
            assert_eq!(rec.clean_counterfactual.len(), 1);
            let (m, clean) = rec.clean_counterfactual.iter().next().unwrap();
            assert_eq!(m, &rec.manipulated_modality);
            assert_ne!(&pkg.modalities[m], clean);
        }
        let tampered = data.packages.iter().filter(|p| p.label == Label::Tampered).count();
        assert_eq!(tampered, data.audit.len());
    }

    #[test]
    fn coherent_pair_swaps_two() {
        let cfg = GenerationConfig {
            coherent_pair: Some(("image".into(), "text".into())),
            ..small(2)
        };
        let data = generate(&cfg).unwrap();
        assert!(data.audit.iter().all(|r| r.clean_counterfactual.len() == 2 && r.manipulated_modality == "image+text"));
    }

    #[test]
    fn orthogonal_ties_break_by_id() {
        let axis = |i: usize| {
            let mut v = vec![0.0; 3];
            v[i] = 1.0;
            v
        };
        let entities: Vec<EntityCluster> = (0..3)
            .map(|i| EntityCluster {
                entity_id: format!("e{i}"),
                centroids: BTreeMap::from([("image".to_string(), axis(i))]),
            })
            .collect();
        assert_eq!(nearest_entity("e0", &entities), Some("e1"));
        assert_eq!(nearest_entity("e1", &entities), Some("e0"));
        assert_eq!(nearest_entity("e2", &entities), Some("e0"));
        assert_eq!(nearest_entity("e0", &entities[..1]), None);
    }

    #[test]
    fn infeasible_configs_rejected() {
        let cases = [
            GenerationConfig {
                num_entities: 1,
                ..small(0)
            },
            GenerationConfig {
                packages_per_entity: 2,
                ..small(0)
            },
            GenerationConfig {
                split_fractions: SplitFractions {
                    train: 0.5,
                    val: 0.5,
                    test: 0.5,
                },
                ..small(0)
            },
        ];
        for cfg in cases {
            assert!(matches!(generate(&cfg), Err(GenerationError::Infeasible(_))));
        }
    }

    #[test]
    fn reference_split_is_clean() {
        let data = generate(&GenerationConfig::default()).unwrap();
        assert!(data
            .packages
            .iter()
            .filter(|p| p.split == Split::Reference)
            .all(|p| p.label == Label::Clean));
        for p in &data.packages {
            for v in p.modalities.values() {
                assert!((l2_norm(v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_targets_stay_in_the_query_split() {
        let data = generate(&GenerationConfig::default()).unwrap();
        let split_of: BTreeMap<&str, Split> = data
            .packages
            .iter()
            .filter(|p| p.split != Split::Reference)
            .map(|p| (p.entity_id.as_str(), p.split))
            .collect();
        assert!(!data.audit.is_empty());
        for a in &data.audit {
            assert_ne!(a.source_entity, a.target_entity);
            assert_eq!(split_of[a.source_entity.as_str()], split_of[a.target_entity.as_str()]);
        }
    }
}
