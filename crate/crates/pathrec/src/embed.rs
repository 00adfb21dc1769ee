//! Translation-based knowledge-graph embeddings.
//!
//! Entities and relation types share one D-dimensional space in which a
//! relation acts as a translation: for a plausible edge (h, r, t) the
//! vectors satisfy e_h + r ≈ e_t, and a triple's score is the negated L2
//! residual. Training minimizes a margin-ranking loss over corrupted
//! negatives with plain SGD; entity vectors are clipped to the unit ball
//! after every epoch. Everything is driven by a single seed so that two
//! runs produce bitwise-identical tables.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

const MAGIC: &[u8; 4] = b"PREM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    n_entities: usize,
    n_relations: usize,
    /// Row-major |V| x D.
    entity: Vec<f64>,
    /// Row-major |R| x D.
    relation: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(dim: usize, n_entities: usize, n_relations: usize) -> Self {
        Self {
            dim,
            n_entities,
            n_relations,
            entity: vec![0.0; n_entities * dim],
            relation: vec![0.0; n_relations * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.n_entities
    }

    pub fn num_relations(&self) -> usize {
        self.n_relations
    }

    pub fn entity_vec(&self, e: EntityId) -> Result<&[f64]> {
        if e.0 >= self.n_entities {
            return Err(Error::EntityOutOfRange(e.0));
        }
        Ok(&self.entity[e.0 * self.dim..(e.0 + 1) * self.dim])
    }

    pub fn relation_vec(&self, r: RelationId) -> Result<&[f64]> {
        if r.0 >= self.n_relations {
            return Err(Error::RelationOutOfRange(r.0));
        }
        Ok(&self.relation[r.0 * self.dim..(r.0 + 1) * self.dim])
    }

    pub fn set_entity_vec(&mut self, e: EntityId, v: &[f64]) -> Result<()> {
        if e.0 >= self.n_entities {
            return Err(Error::EntityOutOfRange(e.0));
        }
        assert_eq!(v.len(), self.dim);
        self.entity[e.0 * self.dim..(e.0 + 1) * self.dim].copy_from_slice(v);
        Ok(())
    }

    pub fn set_relation_vec(&mut self, r: RelationId, v: &[f64]) -> Result<()> {
        if r.0 >= self.n_relations {
            return Err(Error::RelationOutOfRange(r.0));
        }
        assert_eq!(v.len(), self.dim);
        self.relation[r.0 * self.dim..(r.0 + 1) * self.dim].copy_from_slice(v);
        Ok(())
    }

    pub fn max_entity_norm(&self) -> f64 {
        (0..self.n_entities)
            .map(|e| norm(&self.entity[e * self.dim..(e + 1) * self.dim]))
            .fold(0.0, f64::max)
    }

    /// Binary layout: magic, version, dim, |V|, |R| (u32 LE), then entity
    /// rows and relation rows as little-endian f32, row-major.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.n_entities as u32).to_le_bytes())?;
        w.write_all(&(self.n_relations as u32).to_le_bytes())?;
        for x in self.entity.iter().chain(self.relation.iter()) {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad embedding file magic".into()));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let dim = read_u32(&mut r)? as usize;
        let n_entities = read_u32(&mut r)? as usize;
        let n_relations = read_u32(&mut r)? as usize;
        let read_rows = |r: &mut dyn Read, count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count * dim);
            let mut buf = [0u8; 4];
            for _ in 0..count * dim {
                r.read_exact(&mut buf)?;
                out.push(f32::from_le_bytes(buf) as f64);
            }
            Ok(out)
        };
        let entity = read_rows(&mut r, n_entities)?;
        let relation = read_rows(&mut r, n_relations)?;
        Ok(Self {
            dim,
            n_entities,
            n_relations,
            entity,
            relation,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(table: &EmbeddingTable, t: &Triple) -> Result<f64> {
    let h = table.entity_vec(t.head)?;
    let r = table.relation_vec(t.relation)?;
    let tl = table.entity_vec(t.tail)?;
    let mut acc = 0.0;
    for i in 0..table.dim {
        let d = h[i] + r[i] - tl[i];
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Plausibility of (h, r, t): the negated translation residual
/// -||e_h + r - e_t||, at most 0.
pub fn score_triple(table: &EmbeddingTable, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    Ok(-distance(
        table,
        &Triple {
            head: h,
            relation: r,
            tail: t,
        },
    )?)
}

/// <e_a, e_b>.
pub fn inner_product(table: &EmbeddingTable, a: EntityId, b: EntityId) -> Result<f64> {
    let va = table.entity_vec(a)?;
    let vb = table.entity_vec(b)?;
    Ok(va.iter().zip(vb).map(|(x, y)| x * y).sum())
}

/// Hinge term for one (positive, corrupted) pair:
/// max(0, margin + d(pos) - d(neg)). NaN passes through so that divergence
/// stays visible (f64::max would swallow it).
pub fn hinge_loss(table: &EmbeddingTable, pos: &Triple, neg: &Triple, margin: f64) -> Result<f64> {
    let raw = margin + distance(table, pos)? - distance(table, neg)?;
    Ok(if raw.is_nan() { raw } else { raw.max(0.0) })
}

/// Sum of hinge terms over a set of pairs.
pub fn margin_ranking_loss(
    table: &EmbeddingTable,
    pairs: &[(Triple, Triple)],
    margin: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (pos, neg) in pairs {
        total += hinge_loss(table, pos, neg, margin)?;
    }
    Ok(total)
}

/// Add the gradient of one pair's hinge term into dense accumulators and
/// return the pair's loss. At a zero residual the direction is taken as
/// zero (a valid subgradient).
pub fn accumulate_pair_grad(
    table: &EmbeddingTable,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
    entity_grad: &mut [f64],
    relation_grad: &mut [f64],
) -> Result<f64> {
    let d_pos = distance(table, pos)?;
    let d_neg = distance(table, neg)?;
    let raw = margin + d_pos - d_neg;
    if raw.is_nan() {
        return Ok(raw);
    }
    let loss = raw.max(0.0);
    if loss <= 0.0 {
        return Ok(0.0);
    }
    let dim = table.dim;
    let mut apply = |t: &Triple, dist: f64, sign: f64| -> Result<()> {
        if dist < 1e-12 {
            return Ok(());
        }
        let h = table.entity_vec(t.head)?;
        let r = table.relation_vec(t.relation)?;
        let tl = table.entity_vec(t.tail)?;
        for i in 0..dim {
            let g = sign * (h[i] + r[i] - tl[i]) / dist;
            entity_grad[t.head.0 * dim + i] += g;
            relation_grad[t.relation.0 * dim + i] += g;
            entity_grad[t.tail.0 * dim + i] -= g;
        }
        Ok(())
    };
    apply(pos, d_pos, 1.0)?;
    apply(neg, d_neg, -1.0)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            margin: 1.0,
            negatives_per_positive: 1,
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.01,
            seed: 7,
        }
    }
}

impl TransEConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.negatives_per_positive == 0
        {
            return Err(Error::Config("transe sizes must be positive".into()));
        }
        if self.margin <= 0.0 || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "transe margin and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransEOutcome {
    pub table: EmbeddingTable,
    /// Mean hinge loss per positive sample, one entry per epoch.
    pub epoch_mean_loss: Vec<f64>,
}

/// All stored directed triples of the graph, in adjacency order.
pub fn training_triples(kg: &KnowledgeGraph) -> Vec<Triple> {
    let mut out = Vec::new();
    for e in 0..kg.num_entities() {
        for &(r, t) in kg.neighbors(EntityId(e)).expect("in range") {
            out.push(Triple {
                head: EntityId(e),
                relation: r,
                tail: t,
            });
        }
    }
    out
}

/// Train embeddings for every entity and relation type of the graph.
///
/// Per epoch the stored triples are shuffled and walked in minibatches;
/// each positive is paired with corrupted negatives (head or tail replaced
/// by a uniformly drawn entity, resampling on collision with the true one)
/// and the mean batch gradient of the margin-ranking loss is applied.
pub fn train_transe(kg: &KnowledgeGraph, config: &TransEConfig) -> Result<TransEOutcome> {
    config.validate()?;
    let triples = training_triples(kg);
    if triples.is_empty() {
        return Err(Error::EmptyTrainingGraph);
    }
    let n_entities = kg.num_entities();
    let n_relations = kg.num_relations();
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut table = EmbeddingTable::zeros(dim, n_entities, n_relations);
    let bound = 6.0 / (dim as f64).sqrt();
    let mut init = |rows: usize, data: &mut Vec<f64>| {
        for row in 0..rows {
            let v = &mut data[row * dim..(row + 1) * dim];
            for x in v.iter_mut() {
                *x = rng.gen_range(-bound..bound);
            }
            let n = norm(v);
            if n > 0.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
        }
    };
    init(n_entities, &mut table.entity);
    init(n_relations, &mut table.relation);

    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut entity_grad = vec![0.0; n_entities * dim];
    let mut relation_grad = vec![0.0; n_relations * dim];
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut samples = 0usize;
        for batch in order.chunks(config.batch_size) {
            entity_grad.fill(0.0);
            relation_grad.fill(0.0);
            let mut pairs = 0usize;
            for &idx in batch {
                let pos = triples[idx];
                for _ in 0..config.negatives_per_positive {
                    let corrupt_head = rng.gen_bool(0.5);
                    let neg = loop {
                        let candidate = EntityId(rng.gen_range(0..n_entities));
                        let original = if corrupt_head { pos.head } else { pos.tail };
                        if candidate == original {
                            continue;
                        }
                        break if corrupt_head {
                            Triple {
                                head: candidate,
                                ..pos
                            }
                        } else {
                            Triple {
                                tail: candidate,
                                ..pos
                            }
                        };
                    };
                    epoch_loss += accumulate_pair_grad(
                        &table,
                        &pos,
                        &neg,
                        config.margin,
                        &mut entity_grad,
                        &mut relation_grad,
                    )?;
                    pairs += 1;
                }
                samples += 1;
            }
            let step = config.learning_rate / pairs as f64;
            for (x, g) in table.entity.iter_mut().zip(&entity_grad) {
                *x -= step * g;
            }
            for (x, g) in table.relation.iter_mut().zip(&relation_grad) {
                *x -= step * g;
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::DivergedAtEpoch(epoch));
        }
        // Project entities back into the unit ball.
        for e in 0..n_entities {
            let v = &mut table.entity[e * dim..(e + 1) * dim];
            let n = norm(v);
            if n > 1.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
        }
        let mean = epoch_loss / samples.max(1) as f64;
        epoch_mean_loss.push(mean);
        log::debug!("transe epoch {epoch}: mean loss {mean:.6}");
    }

    Ok(TransEOutcome {
        table,
        epoch_mean_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DatasetBundle, Interaction};
    use indexmap::IndexMap;

    fn table_2d() -> EmbeddingTable {
        EmbeddingTable::zeros(2, 3, 1)
    }

    fn small_kg() -> KnowledgeGraph {
        // 3 users x 4 items, 2 genres: enough structure for a smoke run.
        let interactions: Vec<Interaction> = [
            ("u0", "m0"),
            ("u0", "m1"),
            ("u1", "m1"),
            ("u1", "m2"),
            ("u2", "m2"),
            ("u2", "m3"),
            ("u0", "m3"),
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
        for (item, genre) in [("m0", "a"), ("m1", "a"), ("m2", "b"), ("m3", "b")] {
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
        KnowledgeGraph::build(&bundle, &bundle.interactions).unwrap()
    }

    #[test]
    fn exact_translation_scores_zero() {
        let mut t = table_2d();
        t.set_entity_vec(EntityId(0), &[0.25, -0.5]).unwrap();
        t.set_relation_vec(RelationId(0), &[0.5, 0.75]).unwrap();
        t.set_entity_vec(EntityId(1), &[0.75, 0.25]).unwrap();
        let s = score_triple(&t, EntityId(0), RelationId(0), EntityId(1)).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn unit_offset_scores_minus_sqrt_two() {
        let mut t = table_2d();
        t.set_entity_vec(EntityId(0), &[1.0, 0.0]).unwrap();
        t.set_entity_vec(EntityId(1), &[0.0, 1.0]).unwrap();
        let s = score_triple(&t, EntityId(0), RelationId(0), EntityId(1)).unwrap();
        assert!((s - (-1.4142135623730951)).abs() < 1e-15, "{s}");
    }

    #[test]
    fn score_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut t = table_2d();
            let h: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tl: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            t.set_entity_vec(EntityId(0), &h).unwrap();
            t.set_relation_vec(RelationId(0), &r).unwrap();
            t.set_entity_vec(EntityId(1), &tl).unwrap();
            let a = score_triple(&t, EntityId(0), RelationId(0), EntityId(1)).unwrap();
            let shifted_h: Vec<f64> = h.iter().zip(&c).map(|(x, y)| x + y).collect();
            let shifted_t: Vec<f64> = tl.iter().zip(&c).map(|(x, y)| x + y).collect();
            t.set_entity_vec(EntityId(0), &shifted_h).unwrap();
            t.set_entity_vec(EntityId(1), &shifted_t).unwrap();
            let b = score_triple(&t, EntityId(0), RelationId(0), EntityId(1)).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_product_cases() {
        let mut t = table_2d();
        t.set_entity_vec(EntityId(0), &[1.0, 0.0]).unwrap();
        t.set_entity_vec(EntityId(1), &[0.0, 1.0]).unwrap();
        t.set_entity_vec(EntityId(2), &[0.5, 0.5]).unwrap();
        assert_eq!(inner_product(&t, EntityId(0), EntityId(1)).unwrap(), 0.0);
        assert_eq!(inner_product(&t, EntityId(2), EntityId(2)).unwrap(), 0.5);
        assert_eq!(
            inner_product(&t, EntityId(0), EntityId(2)).unwrap(),
            inner_product(&t, EntityId(2), EntityId(0)).unwrap()
        );
        assert!(inner_product(&t, EntityId(0), EntityId(9)).is_err());
    }

    #[test]
    fn zero_init_loss_is_margin_times_samples() {
        let kg = small_kg();
        let table = EmbeddingTable::zeros(4, kg.num_entities(), kg.num_relations());
        let triples = training_triples(&kg);
        // Pair each positive with an arbitrary corrupted negative.
        let pairs: Vec<(Triple, Triple)> = triples
            .iter()
            .map(|pos| {
                let other = EntityId((pos.tail.0 + 1) % kg.num_entities());
                (*pos, Triple { tail: other, ..*pos })
            })
            .collect();
        let margin = 1.5;
        let loss = margin_ranking_loss(&table, &pairs, margin).unwrap();
        assert!((loss - margin * pairs.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let kg = small_kg();
        let config = TransEConfig {
            dim: 8,
            epochs: 5,
            batch_size: 16,
            ..Default::default()
        };
        let a = train_transe(&kg, &config).unwrap();
        let b = train_transe(&kg, &config).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.epoch_mean_loss, b.epoch_mean_loss);
    }

    #[test]
    fn entity_norms_clipped_to_unit_ball() {
        let kg = small_kg();
        let config = TransEConfig {
            dim: 8,
            epochs: 10,
            learning_rate: 0.5,
            ..Default::default()
        };
        let out = train_transe(&kg, &config).unwrap();
        assert!(out.table.max_entity_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let kg = small_kg();
        let config = TransEConfig {
            dim: 4,
            epochs: 3,
            learning_rate: f64::MAX,
            ..Default::default()
        };
        match train_transe(&kg, &config) {
            Err(Error::DivergedAtEpoch(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        // 20 random parameter points; at each, every coordinate of the five
        // involved vectors is perturbed with h = 1e-5. Components where both
        // sides are ~0 are compared absolutely (finite differencing has a
        // ~1e-9 noise floor).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 5;
        let margin = 1.0;
        let h = 1e-5;
        for _ in 0..20 {
            let mut table = EmbeddingTable::zeros(dim, 6, 2);
            for e in 0..6 {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                table.set_entity_vec(EntityId(e), &v).unwrap();
            }
            for r in 0..2 {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                table.set_relation_vec(RelationId(r), &v).unwrap();
            }
            let pos = Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(1),
            };
            let neg = Triple {
                head: EntityId(0),
                relation: RelationId(0),
                tail: EntityId(2),
            };
            let mut eg = vec![0.0; 6 * dim];
            let mut rg = vec![0.0; 2 * dim];
            accumulate_pair_grad(&table, &pos, &neg, margin, &mut eg, &mut rg).unwrap();

            let check = |analytic: f64, perturb: &mut dyn FnMut(&mut EmbeddingTable, f64)| {
                let mut plus = table.clone();
                perturb(&mut plus, h);
                let mut minus = table.clone();
                perturb(&mut minus, -h);
                let fp = hinge_loss(&plus, &pos, &neg, margin).unwrap();
                let fm = hinge_loss(&minus, &pos, &neg, margin).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs());
                let diff = (analytic - fd).abs();
                assert!(
                    diff <= 1e-8 || diff / denom <= 1e-4,
                    "analytic {analytic} vs fd {fd}"
                );
            };

            for e in [0usize, 1, 2] {
                for i in 0..dim {
                    let analytic = eg[e * dim + i];
                    check(analytic, &mut |t: &mut EmbeddingTable, d: f64| {
                        t.entity[e * dim + i] += d;
                    });
                }
            }
            for i in 0..dim {
                let analytic = rg[i];
                check(analytic, &mut |t: &mut EmbeddingTable, d: f64| {
                    t.relation[i] += d;
                });
            }
        }
    }

    #[test]
    fn smoke_training_ranks_true_tails_highly() {
        let kg = small_kg();
        let config = TransEConfig {
            dim: 16,
            epochs: 120,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 7,
            ..Default::default()
        };
        let out = train_transe(&kg, &config).unwrap();
        // Filtered exhaustive-corruption ranking, tails only.
        let triples = training_triples(&kg);
        let true_set: std::collections::HashSet<Triple> = triples.iter().copied().collect();
        let mut hits = 0usize;
        for t in &triples {
            let true_score = score_triple(&out.table, t.head, t.relation, t.tail).unwrap();
            let beaten = (0..kg.num_entities()).any(|cand| {
                let cand = EntityId(cand);
                if cand == t.tail {
                    return false;
                }
                let candidate = Triple { tail: cand, ..*t };
                if true_set.contains(&candidate) {
                    return false;
                }
                score_triple(&out.table, t.head, t.relation, cand).unwrap() >= true_score
            });
            if !beaten {
                hits += 1;
            }
        }
        let hits_at_1 = hits as f64 / triples.len() as f64;
        assert!(hits_at_1 >= 0.6, "hits@1 = {hits_at_1}");
        // Loss should end lower than it starts.
        let losses = &out.epoch_mean_loss;
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }

    #[test]
    fn file_round_trip_preserves_values_to_f32() {
        let kg = small_kg();
        let config = TransEConfig {
            dim: 8,
            epochs: 3,
            ..Default::default()
        };
        let out = train_transe(&kg, &config).unwrap();
        let mut buf = Vec::new();
        out.table.write_to(&mut buf).unwrap();
        let back = EmbeddingTable::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.dim(), 8);
        assert_eq!(back.num_entities(), kg.num_entities());
        for e in 0..kg.num_entities() {
            let orig = out.table.entity_vec(EntityId(e)).unwrap();
            let got = back.entity_vec(EntityId(e)).unwrap();
            for (a, b) in orig.iter().zip(got) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        // Corrupt magic.
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(EmbeddingTable::read_from(bad.as_slice()).is_err());
    }
}
