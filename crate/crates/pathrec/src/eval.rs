//! Evaluation protocol: global time-based splitting, cold-start truncation
//! of training histories, and top-k ranking metrics (recall, nDCG) with
//! macro-averaging over users.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Interaction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
    /// Per-user cap on training interactions; only the most recent survive.
    pub cold_start_cap: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.6,
            valid_ratio: 0.2,
            test_ratio: 0.2,
            cold_start_cap: 10,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_ratio + self.valid_ratio + self.test_ratio;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios sum to {sum}, not 1")));
        }
        if self.cold_start_cap < 1 {
            return Err(Error::Config("cold_start_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Split interactions globally by timestamp (stable on ties): the oldest
/// `train_ratio` fraction becomes training data, the next `valid_ratio`
/// validation, the remainder test. Cut points are floored, so test absorbs
/// the rounding remainder.
pub fn time_split(
    interactions: &[Interaction],
    spec: &SplitSpec,
) -> Result<(Vec<Interaction>, Vec<Interaction>, Vec<Interaction>)> {
    spec.validate()?;
    let n = interactions.len();
    if n < 5 {
        return Err(Error::TooFewInteractions { min: 5, got: n });
    }
    let mut sorted: Vec<Interaction> = interactions.to_vec();
    sorted.sort_by_key(|r| r.timestamp); // stable: ties keep input order
    let n_train = (n as f64 * spec.train_ratio).floor() as usize;
    let n_valid = (n as f64 * spec.valid_ratio).floor() as usize;
    let test = sorted.split_off(n_train + n_valid);
    let valid = sorted.split_off(n_train);
    Ok((sorted, valid, test))
}

/// Keep only the `cap` most recent training interactions of each user,
/// preserving chronological order. Ties on timestamp resolve by position:
/// later rows count as more recent.
pub fn truncate_cold_start(train: &[Interaction], cap: usize) -> Vec<Interaction> {
    let mut per_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in train.iter().enumerate() {
        per_user.entry(&row.user).or_default().push(i);
    }
    let mut keep = vec![false; train.len()];
    for positions in per_user.values() {
        let start = positions.len().saturating_sub(cap);
        for &i in &positions[start..] {
            keep[i] = true;
        }
    }
    train
        .iter()
        .zip(keep)
        .filter_map(|(row, k)| k.then(|| row.clone()))
        .collect()
}

/// recall@k = |top-k hits| / |relevant|. `None` when `relevant` is empty
/// (the user is excluded from averages).
pub fn recall_at_k(
    recommended: &[EntityId],
    relevant: &HashSet<EntityId>,
    k: usize,
) -> Option<f64> {
    assert!(k > 0, "k must be positive");
    if relevant.is_empty() {
        return None;
    }
    let top: HashSet<&EntityId> = recommended.iter().take(k).collect();
    let hits = top.iter().filter(|i| relevant.contains(**i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance nDCG@k: DCG over the top k positions divided by the
/// ideal DCG with min(|relevant|, k) leading hits. `None` when `relevant`
/// is empty.
pub fn ndcg_at_k(
    recommended: &[EntityId],
    relevant: &HashSet<EntityId>,
    k: usize,
) -> Option<f64> {
    assert!(k > 0, "k must be positive");
    if relevant.is_empty() {
        return None;
    }
    // A repeated item earns gain only at its first position.
    let mut seen = HashSet::new();
    let dcg: f64 = recommended
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item) && seen.insert(**item))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal_hits = relevant.len().min(k);
    let idcg: f64 = (0..ideal_hits).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, Serialize)]
pub struct UserMetrics {
    pub user: EntityId,
    /// k -> recall@k
    pub recall: BTreeMap<usize, f64>,
    /// k -> ndcg@k
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub mean_recall: BTreeMap<usize, f64>,
    pub mean_ndcg: BTreeMap<usize, f64>,
    pub per_user: Vec<UserMetrics>,
    pub evaluated_users: usize,
    /// Users skipped because they have no test interactions.
    pub excluded_users: usize,
}

/// Macro-average recall@k and nDCG@k over users. Users whose relevant set
/// is empty are excluded from the averages and counted separately.
pub fn evaluate(
    recommendations: &BTreeMap<EntityId, Vec<EntityId>>,
    relevant: &BTreeMap<EntityId, HashSet<EntityId>>,
    ks: &[usize],
) -> EvalReport {
    let mut per_user = Vec::new();
    let mut excluded = 0usize;
    for (&user, recommended) in recommendations {
        let empty = HashSet::new();
        let rel = relevant.get(&user).unwrap_or(&empty);
        if rel.is_empty() {
            excluded += 1;
            continue;
        }
        let mut recall = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for &k in ks {
            recall.insert(k, recall_at_k(recommended, rel, k).unwrap());
            ndcg.insert(k, ndcg_at_k(recommended, rel, k).unwrap());
        }
        per_user.push(UserMetrics { user, recall, ndcg });
    }
    let n = per_user.len();
    let mut mean_recall = BTreeMap::new();
    let mut mean_ndcg = BTreeMap::new();
    for &k in ks {
        let r: f64 = per_user.iter().map(|m| m.recall[&k]).sum();
        let g: f64 = per_user.iter().map(|m| m.ndcg[&k]).sum();
        mean_recall.insert(k, if n == 0 { 0.0 } else { r / n as f64 });
        mean_ndcg.insert(k, if n == 0 { 0.0 } else { g / n as f64 });
    }
    EvalReport {
        ks: ks.to_vec(),
        mean_recall,
        mean_ndcg,
        per_user,
        evaluated_users: n,
        excluded_users: excluded,
    }
}

impl EvalReport {
    /// CSV rows: metric,k,value,n_users.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,k,value,n_users\n");
        for &k in &self.ks {
            let _ = writeln!(
                out,
                "recall,{k},{:.6},{}",
                self.mean_recall[&k], self.evaluated_users
            );
        }
        for &k in &self.ks {
            let _ = writeln!(
                out,
                "ndcg,{k},{:.6},{}",
                self.mean_ndcg[&k], self.evaluated_users
            );
        }
        out
    }

    /// Markdown summary table, one column pair per k.
    pub fn to_markdown(&self) -> String {
        let mut header = String::from("| users |");
        let mut rule = String::from("|---|");
        let mut row = format!("| {} |", self.evaluated_users);
        for &k in &self.ks {
            let _ = write!(header, " recall@{k} | ndcg@{k} |");
            rule.push_str("---|---|");
            let _ = write!(
                row,
                " {:.4} | {:.4} |",
                self.mean_recall[&k], self.mean_ndcg[&k]
            );
        }
        format!(
            "{header}\n{rule}\n{row}\n\nexcluded users (empty test set): {}\n",
            self.excluded_users
        )
    }
}
