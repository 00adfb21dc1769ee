//! Knowledge-graph store: dataset loading and construction of the immutable
//! entity/relation graph every other component traverses.
//!
//! Entities are users, items, and shared metadata values (two items with
//! genre "drama" point at one node). Every forward edge is stored together
//! with its inverse so the agent can walk user -> item -> metadata -> item.
//! Ids are assigned in first-seen order, which makes construction
//! deterministic for a given pair of input files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense entity index, stable for the lifetime of a graph.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct EntityId(pub usize);

/// Dense relation-type index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct RelationId(pub usize);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Item,
    /// A shared metadata value node; carries the metadata type name
    /// (e.g. "genre") it belongs to.
    MetadataValue(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub id: RelationId,
    pub name: String,
    pub inverse_of: Option<RelationId>,
}

/// One directed edge. Stored graphs always contain the inverse as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// One row of the interactions file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: u64,
}

/// Raw dataset: interactions plus per-item metadata, prior to any split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    /// Interactions in file order (exact duplicate rows removed).
    pub interactions: Vec<Interaction>,
    /// item label -> metadata type -> value strings, in file order.
    pub item_metadata: IndexMap<String, IndexMap<String, Vec<String>>>,
    /// Declared metadata types, in declaration order.
    pub metadata_types: Vec<String>,
    /// Domain noun used in prompts, e.g. "movie".
    pub domain_name: String,
}

/// Load the tab-separated interactions file and the JSON metadata file.
///
/// Interactions: `user<TAB>item<TAB>unix_timestamp`, one row per
/// interaction, no header. Metadata: JSON map
/// `item -> { metadata_type -> [values] }`. Exact duplicate rows are
/// dropped; order is otherwise preserved.
pub fn load_dataset(
    interactions_path: &Path,
    metadata_path: &Path,
    metadata_types: &[String],
    domain_name: &str,
) -> Result<DatasetBundle> {
    if metadata_types.is_empty() {
        return Err(Error::Config("metadata_types must be non-empty".into()));
    }
    let file_name = interactions_path.display().to_string();
    let reader = BufReader::new(std::fs::File::open(interactions_path)?);
    let mut interactions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::MalformedRow {
                file: file_name.clone(),
                line: lineno,
                message: format!("expected 3 tab-separated columns, got {}", cols.len()),
            });
        }
        let timestamp: u64 = cols[2].trim().parse().map_err(|_| Error::MalformedRow {
            file: file_name.clone(),
            line: lineno,
            message: format!("unparsable timestamp `{}`", cols[2]),
        })?;
        let row = Interaction {
            user: cols[0].to_string(),
            item: cols[1].to_string(),
            timestamp,
        };
        if seen.insert(row.clone()) {
            interactions.push(row);
        }
    }

    let metadata_text = std::fs::read_to_string(metadata_path)?;
    let item_metadata: IndexMap<String, IndexMap<String, Vec<String>>> =
        serde_json::from_str(&metadata_text)?;
    let declared: HashSet<&String> = metadata_types.iter().collect();
    for (item, by_type) in &item_metadata {
        for ty in by_type.keys() {
            if !declared.contains(ty) {
                return Err(Error::UnknownMetadataType {
                    item: item.clone(),
                    found: ty.clone(),
                    declared: metadata_types.to_vec(),
                });
            }
        }
    }

    Ok(DatasetBundle {
        interactions,
        item_metadata,
        metadata_types: metadata_types.to_vec(),
        domain_name: domain_name.to_string(),
    })
}

/// Serializable graph contents; label indexes are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KgParts {
    pub entities: Vec<Entity>,
    pub relations: Vec<RelationType>,
    pub adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    relations: Vec<RelationType>,
    /// Per-entity outgoing edges, sorted by (relation id, neighbor id).
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
    user_index: HashMap<String, EntityId>,
    item_index: HashMap<String, EntityId>,
    /// (metadata type, normalized-as-written value) -> entity.
    metadata_index: HashMap<(String, String), EntityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KgStats {
    pub entities: usize,
    pub entity_kinds: usize,
    /// Directed triples as stored, inverses included.
    pub stored_triples: usize,
    pub relation_types: usize,
    /// stored_triples / entities^2.
    pub sparsity: f64,
}

impl KnowledgeGraph {
    /// Build the graph from a bundle and the training slice of its
    /// interactions. All users, items, and metadata values of the bundle
    /// become entities; only training interactions become edges, one
    /// `interacted` edge per distinct (user, item) pair plus one
    /// `has_<type>` edge per (item, value) pair, with inverses.
    pub fn build(bundle: &DatasetBundle, train: &[Interaction]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingGraph);
        }

        let mut entities = Vec::new();
        let mut user_index = HashMap::new();
        let mut item_index = HashMap::new();
        let mut metadata_index = HashMap::new();

        let intern = |entities: &mut Vec<Entity>,
                          index: &mut HashMap<String, EntityId>,
                          kind: EntityKind,
                          label: &str| {
            if let Some(&id) = index.get(label) {
                return id;
            }
            let id = EntityId(entities.len());
            entities.push(Entity {
                id,
                kind,
                label: label.to_string(),
            });
            index.insert(label.to_string(), id);
            id
        };

        // First-seen order: interactions file first, then the metadata file.
        for row in &bundle.interactions {
            intern(&mut entities, &mut user_index, EntityKind::User, &row.user);
            intern(&mut entities, &mut item_index, EntityKind::Item, &row.item);
        }
        for (item, by_type) in &bundle.item_metadata {
            intern(&mut entities, &mut item_index, EntityKind::Item, item);
            for ty in &bundle.metadata_types {
                let Some(values) = by_type.get(ty) else {
                    continue;
                };
                for value in values {
                    let key = (ty.clone(), value.clone());
                    if !metadata_index.contains_key(&key) {
                        let id = EntityId(entities.len());
                        entities.push(Entity {
                            id,
                            kind: EntityKind::MetadataValue(ty.clone()),
                            label: value.clone(),
                        });
                        metadata_index.insert(key, id);
                    }
                }
            }
        }

        // Relation schema: `interacted` plus one `has_<type>` per declared
        // metadata type, each immediately followed by its inverse.
        let mut relations = Vec::new();
        let push_pair = |relations: &mut Vec<RelationType>, name: &str| -> RelationId {
            let fwd = RelationId(relations.len());
            let inv = RelationId(relations.len() + 1);
            relations.push(RelationType {
                id: fwd,
                name: name.to_string(),
                inverse_of: Some(inv),
            });
            relations.push(RelationType {
                id: inv,
                name: format!("inv_{name}"),
                inverse_of: Some(fwd),
            });
            fwd
        };
        let interacted = push_pair(&mut relations, "interacted");
        let mut has_type = HashMap::new();
        for ty in &bundle.metadata_types {
            has_type.insert(ty.clone(), push_pair(&mut relations, &format!("has_{ty}")));
        }

        let mut edges: HashSet<Triple> = HashSet::new();
        let add = |edges: &mut HashSet<Triple>, h: EntityId, r: RelationId, t: EntityId| {
            edges.insert(Triple {
                head: h,
                relation: r,
                tail: t,
            });
            edges.insert(Triple {
                head: t,
                relation: relations[r.0].inverse_of.expect("paired"),
                tail: h,
            });
        };

        for row in train {
            let u = user_index[&row.user];
            let i = item_index[&row.item];
            add(&mut edges, u, interacted, i);
        }
        for (item, by_type) in &bundle.item_metadata {
            let i = item_index[item];
            for ty in &bundle.metadata_types {
                let Some(values) = by_type.get(ty) else {
                    continue;
                };
                for value in values {
                    let v = metadata_index[&(ty.clone(), value.clone())];
                    add(&mut edges, i, has_type[ty], v);
                }
            }
        }

        let mut adjacency = vec![Vec::new(); entities.len()];
        for t in &edges {
            adjacency[t.head.0].push((t.relation, t.tail));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        Ok(Self {
            entities,
            relations,
            adjacency,
            user_index,
            item_index,
            metadata_index,
        })
    }

    /// Outgoing edges of `e`, sorted ascending by (relation id, neighbor id).
    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.adjacency
            .get(e.0)
            .map(|v| v.as_slice())
            .ok_or(Error::EntityOutOfRange(e.0))
    }

    pub fn stats(&self) -> KgStats {
        let stored: usize = self.adjacency.iter().map(Vec::len).sum();
        let kinds: HashSet<&EntityKind> = self.entities.iter().map(|e| &e.kind).collect();
        let n = self.entities.len();
        KgStats {
            entities: n,
            entity_kinds: kinds.len(),
            stored_triples: stored,
            relation_types: self.relations.len(),
            sparsity: if n == 0 {
                0.0
            } else {
                stored as f64 / (n as f64 * n as f64)
            },
        }
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity> {
        self.entities.get(id.0).ok_or(Error::EntityOutOfRange(id.0))
    }

    pub fn relation(&self, id: RelationId) -> Result<&RelationType> {
        self.relations
            .get(id.0)
            .ok_or(Error::RelationOutOfRange(id.0))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn user_by_label(&self, label: &str) -> Option<EntityId> {
        self.user_index.get(label).copied()
    }

    pub fn item_by_label(&self, label: &str) -> Option<EntityId> {
        self.item_index.get(label).copied()
    }

    pub fn metadata_value(&self, metadata_type: &str, value: &str) -> Option<EntityId> {
        self.metadata_index
            .get(&(metadata_type.to_string(), value.to_string()))
            .copied()
    }

    /// User entity ids in ascending order.
    pub fn users(&self) -> Vec<EntityId> {
        self.ids_of_kind(|k| matches!(k, EntityKind::User))
    }

    /// Item entity ids in ascending order.
    pub fn items(&self) -> Vec<EntityId> {
        self.ids_of_kind(|k| matches!(k, EntityKind::Item))
    }

    /// Metadata-value entity ids of one type, ascending.
    pub fn metadata_values_of_type(&self, metadata_type: &str) -> Vec<EntityId> {
        self.ids_of_kind(|k| matches!(k, EntityKind::MetadataValue(t) if t == metadata_type))
    }

    fn ids_of_kind(&self, pred: impl Fn(&EntityKind) -> bool) -> Vec<EntityId> {
        self.entities
            .iter()
            .filter(|e| pred(&e.kind))
            .map(|e| e.id)
            .collect()
    }

    pub fn is_item(&self, id: EntityId) -> bool {
        matches!(
            self.entities.get(id.0).map(|e| &e.kind),
            Some(EntityKind::Item)
        )
    }

    /// The paired inverse of a relation.
    pub fn inverse(&self, r: RelationId) -> Result<RelationId> {
        self.relation(r)?
            .inverse_of
            .ok_or(Error::RelationOutOfRange(r.0))
    }

    /// Debug export: one `head<TAB>relation<TAB>tail` line per stored triple,
    /// in adjacency order.
    pub fn export_triples(&self, mut w: impl Write) -> Result<()> {
        for (head, edges) in self.adjacency.iter().enumerate() {
            for (r, tail) in edges {
                writeln!(
                    w,
                    "{}\t{}\t{}",
                    self.entities[head].label, self.relations[r.0].name, self.entities[tail.0].label
                )?;
            }
        }
        Ok(())
    }

    pub fn to_parts(&self) -> KgParts {
        KgParts {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            adjacency: self.adjacency.clone(),
        }
    }

    pub fn from_parts(parts: KgParts) -> Result<Self> {
        let mut user_index = HashMap::new();
        let mut item_index = HashMap::new();
        let mut metadata_index = HashMap::new();
        for (i, e) in parts.entities.iter().enumerate() {
            if e.id.0 != i {
                return Err(Error::Format(format!(
                    "entity id {} at position {i}",
                    e.id.0
                )));
            }
            match &e.kind {
                EntityKind::User => {
                    user_index.insert(e.label.clone(), e.id);
                }
                EntityKind::Item => {
                    item_index.insert(e.label.clone(), e.id);
                }
                EntityKind::MetadataValue(ty) => {
                    metadata_index.insert((ty.clone(), e.label.clone()), e.id);
                }
            }
        }
        if parts.adjacency.len() != parts.entities.len() {
            return Err(Error::Format(
                "adjacency length does not match entity count".into(),
            ));
        }
        for edges in &parts.adjacency {
            for (r, t) in edges {
                if r.0 >= parts.relations.len() {
                    return Err(Error::RelationOutOfRange(r.0));
                }
                if t.0 >= parts.entities.len() {
                    return Err(Error::EntityOutOfRange(t.0));
                }
            }
        }
        Ok(Self {
            entities: parts.entities,
            relations: parts.relations,
            adjacency: parts.adjacency,
            user_index,
            item_index,
            metadata_index,
        })
    }
}
