//! Inference: beam search over the policy's action distributions and
//! aggregation of the resulting paths into a Top-N item ranking.
//!
//! Each hop expands every beam entry by its top-z actions by policy
//! probability (no dropout at inference), keeps all generated paths, and
//! scores an item by the best log-probability among the paths that end on
//! it. Items from the user's training history never appear in the ranking.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::mdp::{step, valid_actions, ActionScorer, MdpConfig, State};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamConfig {
    /// Per-hop expansion widths; the length must equal the path horizon.
    pub widths: Vec<usize>,
    pub top_n: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            widths: vec![4, 2, 1],
            top_n: 40,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.widths.len() != horizon {
            return Err(Error::Config(format!(
                "beam widths length {} does not match path horizon {horizon}",
                self.widths.len()
            )));
        }
        if self.widths.iter().any(|&w| w == 0) || self.top_n == 0 {
            return Err(Error::Config("beam widths and top_n must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasoningPath {
    /// e_0 .. e_T, starting at the user.
    pub entities: Vec<EntityId>,
    /// r_1 .. r_T; `None` marks a stay hop.
    pub relations: Vec<Option<RelationId>>,
    /// Sum of the chosen actions' log probabilities; never positive.
    pub log_prob: f64,
}

/// Expand T levels of beam search from the user node and return every
/// generated path. Level t keeps each entry's top `widths[t]` actions by
/// policy probability (ties to the lower target entity id, stay last, then
/// relation id).
pub fn beam_search(
    kg: &KnowledgeGraph,
    scorer: &impl ActionScorer,
    embeddings: &EmbeddingTable,
    user: EntityId,
    mdp_config: &MdpConfig,
    beam_config: &BeamConfig,
) -> Result<Vec<ReasoningPath>> {
    beam_config.validate(mdp_config.max_path_len)?;
    kg.entity(user)?;
    // Evaluation-mode action spaces consume no randomness.
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut beam: Vec<(State, f64)> = vec![(State::initial(user), 0.0)];
    for &width in &beam_config.widths {
        let mut next = Vec::with_capacity(beam.len() * width);
        for (state, log_prob) in &beam {
            let actions = valid_actions(kg, state, mdp_config, embeddings, &mut rng, false)?;
            let probs = scorer.action_probs(state, &actions, embeddings)?;
            let mut ranked: Vec<(usize, f64)> = probs.iter().copied().enumerate().collect();
            ranked.sort_by(|&(i, pa), &(j, pb)| {
                pb.partial_cmp(&pa)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| expansion_key(&actions, state, i).cmp(&expansion_key(&actions, state, j)))
            });
            for &(idx, p) in ranked.iter().take(width) {
                let action = actions.action(idx).expect("ranked index");
                let child = step(kg, state, action, mdp_config)?;
                next.push((child, log_prob + p.ln()));
            }
        }
        beam = next;
    }

    let mut paths: Vec<ReasoningPath> = beam
        .into_iter()
        .map(|(state, log_prob)| ReasoningPath {
            entities: state.entity_sequence(),
            relations: state.history.iter().map(|h| h.relation).collect(),
            log_prob,
        })
        .collect();
    paths.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.entities.cmp(&b.entities))
            .then_with(|| a.relations.cmp(&b.relations))
    });
    Ok(paths)
}

/// (target entity id, stay flag, relation id) — the probability tie-break.
fn expansion_key(
    actions: &crate::mdp::ActionSpace,
    state: &State,
    index: usize,
) -> (EntityId, u8, RelationId) {
    match actions.action(index).expect("index in space") {
        crate::mdp::Action::Stay => (state.current, 1, RelationId(usize::MAX)),
        crate::mdp::Action::Traverse { relation, target } => (target, 0, relation),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreAggregation {
    /// Item score = best supporting path's log probability.
    MaxLogProb,
    /// Item score = log of the summed path probabilities.
    SumProb,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredItem {
    pub item: EntityId,
    pub score: f64,
    pub path: ReasoningPath,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendations {
    pub user: EntityId,
    /// Distinct items, scores non-increasing, never from the training set.
    pub ranked: Vec<ScoredItem>,
}

/// Collapse paths into a Top-N item ranking: keep paths whose terminal is
/// an item outside the user's training history, score each item by the
/// configured aggregation, sort descending (ties to the lower item id).
pub fn rank_items(
    kg: &KnowledgeGraph,
    user: EntityId,
    paths: &[ReasoningPath],
    user_train_items: &HashSet<EntityId>,
    top_n: usize,
    aggregation: ScoreAggregation,
) -> Recommendations {
    let mut by_item: BTreeMap<EntityId, Vec<&ReasoningPath>> = BTreeMap::new();
    for path in paths {
        let terminal = *path.entities.last().expect("non-empty path");
        if !kg.is_item(terminal) || user_train_items.contains(&terminal) {
            continue;
        }
        by_item.entry(terminal).or_default().push(path);
    }

    let mut ranked: Vec<ScoredItem> = by_item
        .into_iter()
        .map(|(item, supporting)| {
            let best = supporting
                .iter()
                .copied()
                .max_by(|a, b| {
                    a.log_prob
                        .partial_cmp(&b.log_prob)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .expect("non-empty group");
            let score = match aggregation {
                ScoreAggregation::MaxLogProb => best.log_prob,
                ScoreAggregation::SumProb => {
                    let max = best.log_prob;
                    let sum: f64 = supporting.iter().map(|p| (p.log_prob - max).exp()).sum();
                    max + sum.ln()
                }
            };
            ScoredItem {
                item,
                score,
                path: best.clone(),
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.item.cmp(&b.item))
    });
    ranked.truncate(top_n);
    Recommendations { user, ranked }
}

/// Beam search plus ranking for many users; read-only and parallel, with
/// output order independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn recommend_for_users(
    kg: &KnowledgeGraph,
    scorer: &(impl ActionScorer + Sync),
    embeddings: &EmbeddingTable,
    users: &[EntityId],
    train_items: &BTreeMap<EntityId, HashSet<EntityId>>,
    mdp_config: &MdpConfig,
    beam_config: &BeamConfig,
    aggregation: ScoreAggregation,
) -> Result<Vec<Recommendations>> {
    users
        .par_iter()
        .map(|&user| {
            let paths = beam_search(kg, scorer, embeddings, user, mdp_config, beam_config)?;
            let empty = HashSet::new();
            let exclude = train_items.get(&user).unwrap_or(&empty);
            Ok(rank_items(
                kg,
                user,
                &paths,
                exclude,
                beam_config.top_n,
                aggregation,
            ))
        })
        .collect()
}

/// JSON-lines export, one record per user with labeled paths.
pub fn export_recommendations(
    kg: &KnowledgeGraph,
    recommendations: &[Recommendations],
    mut w: impl std::io::Write,
) -> Result<()> {
    for rec in recommendations {
        let items: Vec<serde_json::Value> = rec
            .ranked
            .iter()
            .map(|s| {
                let path: Vec<(String, String)> = s
                    .path
                    .relations
                    .iter()
                    .zip(&s.path.entities[1..])
                    .map(|(r, e)| {
                        let rel = match r {
                            Some(r) => kg.relation(*r).map(|x| x.name.clone()),
                            None => Ok("stay".to_string()),
                        }?;
                        Ok((rel, kg.entity(*e)?.label.clone()))
                    })
                    .collect::<Result<_>>()?;
                Ok(serde_json::json!({
                    "item": kg.entity(s.item)?.label,
                    "score": s.score,
                    "path": path,
                }))
            })
            .collect::<Result<_>>()?;
        let record = serde_json::json!({
            "user": kg.entity(rec.user)?.label,
            "items": items,
        });
        writeln!(w, "{record}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DatasetBundle, Interaction};
    use crate::mdp::UniformScorer;
    use indexmap::IndexMap;

    /// 2 users, 4 items, 2 genres; u0 interacted with m0/m1, u1 with m2/m3.
    fn toy() -> (KnowledgeGraph, EmbeddingTable) {
        let interactions: Vec<Interaction> = [
            ("u0", "m0"),
            ("u0", "m1"),
            ("u1", "m2"),
            ("u1", "m3"),
        ]
        .iter()
        .enumerate()
        .map(|(ts, (u, i))| Interaction {
            user: u.to_string(),
            item: i.to_string(),
            timestamp: ts as u64,
        })
        .collect();
        let mut item_metadata = IndexMap::new();
        for (item, genre) in [("m0", "a"), ("m1", "b"), ("m2", "a"), ("m3", "b")] {
            let mut by_type = IndexMap::new();
            by_type.insert("genre".to_string(), vec![genre.to_string()]);
            item_metadata.insert(item.to_string(), by_type);
        }
        let bundle = DatasetBundle {
            interactions,
            item_metadata,
            metadata_types: vec!["genre".into()],
            domain_name: "movie".into(),
        };
        let kg = KnowledgeGraph::build(&bundle, &bundle.interactions).unwrap();
        let emb = crate::embed::train_transe(
            &kg,
            &crate::embed::TransEConfig {
                dim: 6,
                epochs: 20,
                ..Default::default()
            },
        )
        .unwrap()
        .table;
        (kg, emb)
    }

    fn eval_config() -> MdpConfig {
        MdpConfig {
            action_dropout: 0.0,
            ..Default::default()
        }
    }

    /// Exhaustive enumeration of all simple paths up to the horizon,
    /// stay-padded at dead ends, straight off the adjacency lists and
    /// independent of `valid_actions`/`beam_search`.
    fn enumerate_paths(
        kg: &KnowledgeGraph,
        user: EntityId,
        horizon: usize,
    ) -> HashSet<(Vec<EntityId>, Vec<Option<RelationId>>)> {
        fn recurse(
            kg: &KnowledgeGraph,
            entities: &mut Vec<EntityId>,
            relations: &mut Vec<Option<RelationId>>,
            remaining: usize,
            out: &mut HashSet<(Vec<EntityId>, Vec<Option<RelationId>>)>,
        ) {
            if remaining == 0 {
                out.insert((entities.clone(), relations.clone()));
                return;
            }
            let current = *entities.last().unwrap();
            let unvisited: Vec<(RelationId, EntityId)> = kg
                .neighbors(current)
                .unwrap()
                .iter()
                .copied()
                .filter(|(_, t)| !entities.contains(t))
                .collect();
            if unvisited.is_empty() {
                entities.push(current);
                relations.push(None);
                recurse(kg, entities, relations, remaining - 1, out);
                entities.pop();
                relations.pop();
                return;
            }
            for (r, t) in unvisited {
                entities.push(t);
                relations.push(Some(r));
                recurse(kg, entities, relations, remaining - 1, out);
                entities.pop();
                relations.pop();
            }
        }
        let mut out = HashSet::new();
        let mut entities = vec![user];
        let mut relations = Vec::new();
        recurse(kg, &mut entities, &mut relations, horizon, &mut out);
        out
    }

    #[test]
    fn wide_beam_equals_exhaustive_enumeration() {
        let (kg, emb) = toy();
        let config = eval_config();
        let beam_config = BeamConfig {
            widths: vec![32, 32, 32],
            top_n: 40,
        };
        let u0 = kg.user_by_label("u0").unwrap();
        let paths = beam_search(&kg, &UniformScorer, &emb, u0, &config, &beam_config).unwrap();
        let got: HashSet<(Vec<EntityId>, Vec<Option<RelationId>>)> = paths
            .iter()
            .map(|p| (p.entities.clone(), p.relations.clone()))
            .collect();
        assert_eq!(got.len(), paths.len(), "beam produced duplicate paths");
        let expected = enumerate_paths(&kg, u0, 3);
        assert_eq!(got, expected);
    }

    #[test]
    fn narrow_beam_is_a_subset_of_exhaustive() {
        let (kg, emb) = toy();
        let config = eval_config();
        let beam_config = BeamConfig {
            widths: vec![4, 2, 1],
            top_n: 40,
        };
        let u0 = kg.user_by_label("u0").unwrap();
        let paths = beam_search(&kg, &UniformScorer, &emb, u0, &config, &beam_config).unwrap();
        assert!(paths.len() <= 8);
        let expected = enumerate_paths(&kg, u0, 3);
        for p in &paths {
            assert!(expected.contains(&(p.entities.clone(), p.relations.clone())));
            assert!(p.log_prob <= 0.0);
            assert_eq!(p.entities[0], u0);
            assert_eq!(p.entities.len(), 4);
        }
    }

    #[test]
    fn widening_the_beam_never_drops_paths() {
        let (kg, emb) = toy();
        let config = eval_config();
        let u0 = kg.user_by_label("u0").unwrap();
        let narrow = beam_search(
            &kg,
            &UniformScorer,
            &emb,
            u0,
            &config,
            &BeamConfig {
                widths: vec![2, 2, 1],
                top_n: 40,
            },
        )
        .unwrap();
        let wide = beam_search(
            &kg,
            &UniformScorer,
            &emb,
            u0,
            &config,
            &BeamConfig {
                widths: vec![3, 3, 2],
                top_n: 40,
            },
        )
        .unwrap();
        let wide_set: HashSet<_> = wide
            .iter()
            .map(|p| (p.entities.clone(), p.relations.clone()))
            .collect();
        for p in &narrow {
            assert!(wide_set.contains(&(p.entities.clone(), p.relations.clone())));
        }
    }

    #[test]
    fn user_without_edges_gets_a_stay_padded_path() {
        let (kg, _) = toy();
        // A fresh graph whose second user has no training edges.
        let bundle = DatasetBundle {
            interactions: vec![
                Interaction {
                    user: "u0".into(),
                    item: "m0".into(),
                    timestamp: 0,
                },
                Interaction {
                    user: "lonely".into(),
                    item: "m0".into(),
                    timestamp: 1,
                },
            ],
            item_metadata: IndexMap::new(),
            metadata_types: vec!["genre".into()],
            domain_name: "movie".into(),
        };
        let kg2 = KnowledgeGraph::build(&bundle, &bundle.interactions[..1]).unwrap();
        let emb = EmbeddingTable::zeros(4, kg2.num_entities(), kg2.num_relations());
        let lonely = kg2.user_by_label("lonely").unwrap();
        let paths = beam_search(
            &kg2,
            &UniformScorer,
            &emb,
            lonely,
            &eval_config(),
            &BeamConfig::default(),
        )
        .unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].entities, vec![lonely; 4]);
        assert_eq!(paths[0].relations, vec![None, None, None]);
        assert_eq!(paths[0].log_prob, 0.0);
        let _ = kg;
    }

    #[test]
    fn beam_search_is_deterministic() {
        let (kg, emb) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let config = eval_config();
        let beam_config = BeamConfig::default();
        let a = beam_search(&kg, &UniformScorer, &emb, u0, &config, &beam_config).unwrap();
        let b = beam_search(&kg, &UniformScorer, &emb, u0, &config, &beam_config).unwrap();
        assert_eq!(a, b);
    }

    fn path(entities: &[usize], log_prob: f64) -> ReasoningPath {
        ReasoningPath {
            entities: entities.iter().copied().map(EntityId).collect(),
            relations: vec![Some(RelationId(0)); entities.len() - 1],
            log_prob,
        }
    }

    #[test]
    fn ranking_keeps_the_best_path_per_item() {
        let (kg, _) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let m2 = kg.item_by_label("m2").unwrap();
        let paths = vec![
            path(&[u0.0, 0, m2.0], -2.0),
            path(&[u0.0, 1, m2.0], -0.5),
        ];
        let recs = rank_items(
            &kg,
            u0,
            &paths,
            &HashSet::new(),
            10,
            ScoreAggregation::MaxLogProb,
        );
        assert_eq!(recs.ranked.len(), 1);
        assert_eq!(recs.ranked[0].item, m2);
        assert_eq!(recs.ranked[0].score, -0.5);
        assert_eq!(recs.ranked[0].path.log_prob, -0.5);
    }

    #[test]
    fn ranking_excludes_training_items_and_non_items() {
        let (kg, _) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let m0 = kg.item_by_label("m0").unwrap();
        let m2 = kg.item_by_label("m2").unwrap();
        let genre = kg.metadata_value("genre", "a").unwrap();
        let train: HashSet<EntityId> = [m0].into_iter().collect();
        let paths = vec![
            path(&[u0.0, m0.0], -0.1),    // training item
            path(&[u0.0, genre.0], -0.2), // not an item
            path(&[u0.0, m2.0], -0.3),
        ];
        let recs = rank_items(&kg, u0, &paths, &train, 10, ScoreAggregation::MaxLogProb);
        assert_eq!(recs.ranked.len(), 1);
        assert_eq!(recs.ranked[0].item, m2);
    }

    #[test]
    fn ranking_with_no_item_terminals_is_empty() {
        let (kg, _) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let genre = kg.metadata_value("genre", "a").unwrap();
        let paths = vec![path(&[u0.0, genre.0], -0.2)];
        let recs = rank_items(&kg, u0, &paths, &HashSet::new(), 10, ScoreAggregation::MaxLogProb);
        assert!(recs.ranked.is_empty());
    }

    #[test]
    fn scores_are_non_increasing_and_items_distinct() {
        let (kg, emb) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let paths = beam_search(
            &kg,
            &UniformScorer,
            &emb,
            u0,
            &eval_config(),
            &BeamConfig {
                widths: vec![8, 8, 8],
                top_n: 10,
            },
        )
        .unwrap();
        let recs = rank_items(&kg, u0, &paths, &HashSet::new(), 10, ScoreAggregation::MaxLogProb);
        for pair in recs.ranked.windows(2) {
            assert!(pair[0].score >= pair[1].score);
            assert_ne!(pair[0].item, pair[1].item);
        }
    }

    #[test]
    fn sum_aggregation_outscores_max_with_multiple_paths() {
        let (kg, _) = toy();
        let u0 = kg.user_by_label("u0").unwrap();
        let m2 = kg.item_by_label("m2").unwrap();
        let paths = vec![
            path(&[u0.0, 0, m2.0], -1.0),
            path(&[u0.0, 1, m2.0], -1.0),
        ];
        let max = rank_items(&kg, u0, &paths, &HashSet::new(), 10, ScoreAggregation::MaxLogProb);
        let sum = rank_items(&kg, u0, &paths, &HashSet::new(), 10, ScoreAggregation::SumProb);
        assert!(sum.ranked[0].score > max.ranked[0].score);
        let expected = (-1.0_f64).exp() * 2.0;
        assert!((sum.ranked[0].score - expected.ln()).abs() < 1e-12);
    }

    #[test]
    fn export_writes_one_labeled_record_per_user() {
        let (kg, emb) = toy();
        let users = vec![
            kg.user_by_label("u0").unwrap(),
            kg.user_by_label("u1").unwrap(),
        ];
        let recs = recommend_for_users(
            &kg,
            &UniformScorer,
            &emb,
            &users,
            &BTreeMap::new(),
            &eval_config(),
            &BeamConfig::default(),
            ScoreAggregation::MaxLogProb,
        )
        .unwrap();
        let mut out = Vec::new();
        export_recommendations(&kg, &recs, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["user"], "u0");
        assert!(first["items"].is_array());
    }
}
