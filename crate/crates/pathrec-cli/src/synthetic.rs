//! Synthetic fixtures: a steering dataset whose held-out test items share a
//! per-user designated genre (with a mock provider that names exactly that
//! genre), and a 20-entity graph for quick embedding checks.
//!
//! The demo data is deterministic: an internal fixed seed drives item
//! selection, so `demo-synthetic` always writes byte-identical files and
//! run seeds only affect training.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pathrec::kg::{DatasetBundle, Interaction, KnowledgeGraph};

pub const DEMO_USERS: usize = 50;
pub const DEMO_ITEMS: usize = 100;
pub const DEMO_GENRES: [&str; 5] = ["action", "comedy", "drama", "horror", "scifi"];
const TRAIN_PER_USER: usize = 6;
const VALID_PER_USER: usize = 2;
const TEST_PER_USER: usize = 2;
const DESIGNATED_TRAIN: usize = 2;
const FIXTURE_SEED: u64 = 42;

fn item_label(i: usize) -> String {
    format!("movie_{i:02}")
}

fn user_label(u: usize) -> String {
    format!("user_{u:02}")
}

fn genre_of(item: usize) -> usize {
    item % DEMO_GENRES.len()
}

pub struct DemoData {
    pub interactions_tsv: String,
    pub metadata_json: String,
    pub mock_responses_json: String,
    pub config_toml: String,
}

/// Build the steering fixture: 50 users x (6 train + 2 valid + 2 test)
/// interactions over 100 items in 5 genres. Each user has a designated
/// genre; both test items carry it, two train items carry it (so paths to
/// the genre node exist), and the mock provider answers `genre: <it>`.
/// Timestamps place every train row before every valid row before every
/// test row, so the global 60/20/20 time split recovers the blocks.
pub fn demo_data() -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(FIXTURE_SEED);
    let n_genres = DEMO_GENRES.len();
    let pools: Vec<Vec<usize>> = (0..n_genres)
        .map(|g| (0..DEMO_ITEMS).filter(|i| genre_of(*i) == g).collect())
        .collect();

    let mut train_rows: Vec<(usize, usize)> = Vec::new(); // (user, item)
    let mut valid_rows: Vec<(usize, usize)> = Vec::new();
    let mut test_rows: Vec<(usize, usize)> = Vec::new();

    for u in 0..DEMO_USERS {
        let designated = u % n_genres;
        let mut pool = pools[designated].clone();
        pool.shuffle(&mut rng);
        let train_designated: Vec<usize> = pool[..DESIGNATED_TRAIN].to_vec();
        let test_items: Vec<usize> = pool[DESIGNATED_TRAIN..DESIGNATED_TRAIN + TEST_PER_USER].to_vec();

        let mut picked: BTreeSet<usize> = train_designated.iter().copied().collect();
        let mut train_items = train_designated;
        let mut g = designated;
        while train_items.len() < TRAIN_PER_USER {
            g = (g + 1) % n_genres;
            if g == designated {
                continue;
            }
            let candidates: Vec<usize> = pools[g]
                .iter()
                .copied()
                .filter(|i| !picked.contains(i))
                .collect();
            let item = *candidates.choose(&mut rng).expect("non-empty pool");
            picked.insert(item);
            train_items.push(item);
        }
        train_items.shuffle(&mut rng);

        let mut valid_items = Vec::new();
        while valid_items.len() < VALID_PER_USER {
            let item = rng.gen_range(0..DEMO_ITEMS);
            if !picked.contains(&item) && !test_items.contains(&item) {
                picked.insert(item);
                valid_items.push(item);
            }
        }

        train_rows.extend(train_items.into_iter().map(|i| (u, i)));
        valid_rows.extend(valid_items.into_iter().map(|i| (u, i)));
        test_rows.extend(test_items.into_iter().map(|i| (u, i)));
    }

    let mut interactions_tsv = String::new();
    let emit = |rows: &[(usize, usize)], base: u64, out: &mut String| {
        for (idx, (u, i)) in rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                user_label(*u),
                item_label(*i),
                base + idx as u64
            );
        }
    };
    emit(&train_rows, 1_000, &mut interactions_tsv);
    emit(&valid_rows, 10_000, &mut interactions_tsv);
    emit(&test_rows, 100_000, &mut interactions_tsv);

    let mut metadata: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for i in 0..DEMO_ITEMS {
        let mut by_type = BTreeMap::new();
        by_type.insert(
            "genre".to_string(),
            vec![DEMO_GENRES[genre_of(i)].to_string()],
        );
        metadata.insert(item_label(i), by_type);
    }
    let metadata_json = serde_json::to_string_pretty(&metadata).expect("serializable") + "\n";

    let mut mock: BTreeMap<String, String> = BTreeMap::new();
    for u in 0..DEMO_USERS {
        mock.insert(
            user_label(u),
            format!("genre: {}", DEMO_GENRES[u % n_genres]),
        );
    }
    let mock_responses_json = serde_json::to_string_pretty(&mock).expect("serializable") + "\n";

    let config_toml = r#"seed = 7
threads = 1

[dataset]
interactions = "interactions.tsv"
metadata = "metadata.json"
metadata_types = ["genre"]
domain = "movie"

[output]
dir = "out"

[transe]
dim = 32
epochs = 150
learning_rate = 0.05
batch_size = 64

[train]
epochs = 600
batch_size = 10
hidden1 = 64
hidden2 = 32
learning_rate = 0.001

[beam]
widths = [8, 4, 10]
top_n = 20

[eval]
ks = [10, 20]

[provider]
kind = "mock"
mock_responses = "mock_responses.json"
"#
    .to_string();

    DemoData {
        interactions_tsv,
        metadata_json,
        mock_responses_json,
        config_toml,
    }
}

/// Write the demo fixture files (and a ready-to-run config) into a
/// directory.
pub fn write_demo(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let data = demo_data();
    std::fs::write(dir.join("interactions.tsv"), data.interactions_tsv)?;
    std::fs::write(dir.join("metadata.json"), data.metadata_json)?;
    std::fs::write(dir.join("mock_responses.json"), data.mock_responses_json)?;
    std::fs::write(dir.join("pathrec.toml"), data.config_toml)?;
    Ok(())
}

/// 20-entity fixture: 6 users, 10 items, 2 genres, 2 studios; 40 distinct
/// interactions + 10 genre + 10 studio edges = 60 forward triples over 3
/// forward relation types.
pub fn tiny_kg() -> KnowledgeGraph {
    use indexmap::IndexMap;
    let per_user = [7, 7, 7, 7, 6, 6];
    let mut interactions = Vec::new();
    let mut ts = 0u64;
    for (u, &count) in per_user.iter().enumerate() {
        for k in 0..count {
            interactions.push(Interaction {
                user: format!("u{u}"),
                item: format!("m{}", (u + k) % 10),
                timestamp: ts,
            });
            ts += 1;
        }
    }
    let mut item_metadata = IndexMap::new();
    for i in 0..10 {
        let mut by_type = IndexMap::new();
        by_type.insert("genre".to_string(), vec![format!("g{}", i % 2)]);
        by_type.insert("studio".to_string(), vec![format!("s{}", (i / 5) % 2)]);
        item_metadata.insert(format!("m{i}"), by_type);
    }
    let bundle = DatasetBundle {
        interactions,
        item_metadata,
        metadata_types: vec!["genre".into(), "studio".into()],
        domain_name: "movie".into(),
    };
    KnowledgeGraph::build(&bundle, &bundle.interactions).expect("valid fixture")
}
