//! Pipeline stages. Each command reads the manifest, verifies the hashes
//! of its upstream artifacts, does its work, writes its own artifacts plus
//! a plain-text log, and re-records the manifest. Reruns with identical
//! inputs and seed produce byte-identical artifacts.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};

use pathrec::embed::{train_transe, EmbeddingTable};
use pathrec::eval::{evaluate, time_split, truncate_cold_start, EvalReport};
use pathrec::intuition::{
    build_prompt, export_intuitions, intuitions_from_export, match_elements, parse_response,
    CompletionProvider, HttpProvider, HttpProviderConfig, IntuitionExportEntry, IntuitionSet,
    LlmClient, MockProvider, PromptContext,
};
use pathrec::kg::{
    load_dataset, DatasetBundle, EntityId, Interaction, KgParts, KnowledgeGraph,
};
use pathrec::policy::{train_agent, PolicyParameters, RewardWeights, TrainOutcome};
use pathrec::reasoner::{export_recommendations, recommend_for_users, Recommendations};

use crate::config::{ProviderKind, RunConfig};
use crate::manifest::Manifest;

pub const KG_FILE: &str = "kg.json";
pub const GRAPH_EXPORT_FILE: &str = "graph.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const VALID_FILE: &str = "valid.tsv";
pub const TEST_FILE: &str = "test.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const EMBEDDINGS_SIDECAR_FILE: &str = "embeddings.sidecar.json";
pub const INTUITIONS_FILE: &str = "intuitions.json";
pub const CACHE_FILE: &str = "llm_cache.jsonl";
pub const POLICY_FILE: &str = "policy.bin";
pub const POLICY_SIDECAR_FILE: &str = "policy.sidecar.json";
pub const RECOMMENDATIONS_FILE: &str = "recommendations.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const SWEEP_FILE: &str = "sweep.csv";

fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}", r.user, r.item, r.timestamp);
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            bail!("{}:{}: expected 3 columns", path.display(), idx + 1);
        }
        rows.push(Interaction {
            user: cols[0].to_string(),
            item: cols[1].to_string(),
            timestamp: cols[2].parse()?,
        });
    }
    Ok(rows)
}

fn load_kg(out_dir: &Path) -> Result<KnowledgeGraph> {
    let text = std::fs::read_to_string(out_dir.join(KG_FILE))?;
    let parts: KgParts = serde_json::from_str(&text)?;
    Ok(KnowledgeGraph::from_parts(parts)?)
}

fn load_embeddings(out_dir: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(out_dir.join(EMBEDDINGS_FILE))?;
    Ok(EmbeddingTable::read_from(std::io::BufReader::new(file))?)
}

fn load_intuitions(
    kg: &KnowledgeGraph,
    out_dir: &Path,
) -> Result<BTreeMap<EntityId, IntuitionSet>> {
    let text = std::fs::read_to_string(out_dir.join(INTUITIONS_FILE))?;
    let export: BTreeMap<String, IntuitionExportEntry> = serde_json::from_str(&text)?;
    Ok(intuitions_from_export(kg, &export)?)
}

fn items_by_user(
    kg: &KnowledgeGraph,
    rows: &[Interaction],
) -> Result<BTreeMap<EntityId, HashSet<EntityId>>> {
    let mut out: BTreeMap<EntityId, HashSet<EntityId>> = BTreeMap::new();
    for r in rows {
        let (Some(u), Some(i)) = (kg.user_by_label(&r.user), kg.item_by_label(&r.item)) else {
            bail!("interaction ({}, {}) references entities missing from the graph", r.user, r.item);
        };
        out.entry(u).or_default().insert(i);
    }
    Ok(out)
}

/// Load the dataset, split it by time, truncate each user's training
/// history, and build the graph. Writes the graph, the split files, a
/// debug triple export, and a fresh manifest.
pub fn cmd_build(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    std::fs::create_dir_all(out_dir)?;

    let bundle = load_dataset(
        &config.dataset.interactions,
        &config.dataset.metadata,
        &config.dataset.metadata_types,
        &config.dataset.domain,
    )?;
    let spec = config.split.to_spec();
    let (train, valid, test) = time_split(&bundle.interactions, &spec)?;
    let train = truncate_cold_start(&train, spec.cold_start_cap);
    let kg = KnowledgeGraph::build(&bundle, &train)?;
    let stats = kg.stats();

    std::fs::write(
        out_dir.join(KG_FILE),
        serde_json::to_string(&kg.to_parts())? + "\n",
    )?;
    let mut graph_tsv = Vec::new();
    kg.export_triples(&mut graph_tsv)?;
    std::fs::write(out_dir.join(GRAPH_EXPORT_FILE), graph_tsv)?;
    write_interactions(&out_dir.join(TRAIN_FILE), &train)?;
    write_interactions(&out_dir.join(VALID_FILE), &valid)?;
    write_interactions(&out_dir.join(TEST_FILE), &test)?;

    let log = format!(
        "entities {}\nentity_kinds {}\nstored_triples {}\nrelation_types {}\nsparsity {:.6}\ntrain {}\nvalid {}\ntest {}\n",
        stats.entities,
        stats.entity_kinds,
        stats.stored_triples,
        stats.relation_types,
        stats.sparsity,
        train.len(),
        valid.len(),
        test.len()
    );
    std::fs::write(out_dir.join("build.log"), &log)?;

    let mut manifest = Manifest::new(config)?;
    manifest.record_stage(
        "build",
        out_dir,
        &[
            ("interactions", &config.dataset.interactions),
            ("metadata", &config.dataset.metadata),
        ],
        &[
            KG_FILE,
            GRAPH_EXPORT_FILE,
            TRAIN_FILE,
            VALID_FILE,
            TEST_FILE,
            "build.log",
        ],
    )?;
    manifest.save(out_dir)?;
    log::info!(
        "built graph: {} entities, {} stored triples, {}/{}/{} split",
        stats.entities,
        stats.stored_triples,
        train.len(),
        valid.len(),
        test.len()
    );
    Ok(())
}

/// Pretrain the translation embeddings over the built graph.
pub fn cmd_embed(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;

    let kg = load_kg(out_dir)?;
    let transe = config.transe.to_config(config.stage_seed("embed"));
    let outcome = train_transe(&kg, &transe)?;

    let file = std::fs::File::create(out_dir.join(EMBEDDINGS_FILE))?;
    outcome.table.write_to(std::io::BufWriter::new(file))?;
    let sidecar = serde_json::json!({
        "dim": outcome.table.dim(),
        "entities": kg.entities(),
        "relations": kg.relations(),
    });
    std::fs::write(
        out_dir.join(EMBEDDINGS_SIDECAR_FILE),
        serde_json::to_string(&sidecar)? + "\n",
    )?;
    let mut log = String::new();
    for (epoch, loss) in outcome.epoch_mean_loss.iter().enumerate() {
        let _ = writeln!(log, "epoch {epoch} mean_loss {loss:.9}");
    }
    std::fs::write(out_dir.join("embed.log"), &log)?;

    manifest.record_stage(
        "embed",
        out_dir,
        &[],
        &[EMBEDDINGS_FILE, EMBEDDINGS_SIDECAR_FILE, "embed.log"],
    )?;
    manifest.save(out_dir)?;
    log::info!(
        "trained embeddings: dim {}, final mean loss {:.6}",
        outcome.table.dim(),
        outcome.epoch_mean_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn make_provider(config: &RunConfig) -> Result<Box<dyn CompletionProvider>> {
    match config.provider.kind {
        ProviderKind::Mock => {
            let Some(path) = &config.provider.mock_responses else {
                bail!("provider.mock_responses is required with the mock provider");
            };
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading mock responses {}", path.display()))?;
            let table: BTreeMap<String, String> = serde_json::from_str(&text)?;
            Ok(Box::new(MockProvider::new(table)))
        }
        ProviderKind::Http => {
            let http = &config.provider.http;
            Ok(Box::new(HttpProvider::new(HttpProviderConfig {
                endpoint: http.endpoint.clone(),
                model: http.model.clone(),
                auth_env: http.auth_env.clone(),
                completion_field_path: http.completion_field_path.clone(),
                timeout_secs: http.timeout_secs,
            })?))
        }
    }
}

/// Query the provider once per user with a prompt built from the truncated
/// training history, parse and match the answers, and export the per-user
/// matched metadata sets.
pub fn cmd_intuit(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;

    let kg = load_kg(out_dir)?;
    let train = read_interactions(&out_dir.join(TRAIN_FILE))?;
    let mut history: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &train {
        history.entry(r.user.clone()).or_default().push(r.item.clone());
    }

    let provider = make_provider(config)?;
    let client = LlmClient::new(
        provider,
        Some(&out_dir.join(CACHE_FILE)),
        config.provider.max_in_flight,
        Duration::from_millis(config.provider.min_request_interval_ms),
    )?;
    let prompt_types = config.prompt_metadata_types();

    let mut sets: BTreeMap<EntityId, IntuitionSet> = BTreeMap::new();
    let mut no_history = 0usize;
    let mut skipped_lines = 0usize;
    for user in kg.users() {
        let label = &kg.entity(user)?.label;
        let Some(items) = history.get(label) else {
            no_history += 1;
            sets.insert(user, IntuitionSet::empty(user));
            continue;
        };
        let prompt = build_prompt(&PromptContext {
            user,
            history: items.clone(),
            metadata_types: prompt_types.clone(),
            domain_name: config.dataset.domain.clone(),
            temporal_aware: config.prompt.temporal_aware,
        })?;
        let response = client.query(label, &prompt)?;
        let parsed = parse_response(&response, &prompt_types);
        skipped_lines += parsed.skipped_lines;
        sets.insert(user, match_elements(user, &parsed.pairs, &kg));
    }

    let export = export_intuitions(&kg, &sets)?;
    std::fs::write(
        out_dir.join(INTUITIONS_FILE),
        serde_json::to_string_pretty(&export)? + "\n",
    )?;
    let matched: usize = sets.values().map(|s| s.matched.len()).sum();
    let unmatched: usize = sets.values().map(|s| s.unmatched.len()).sum();
    let log = format!(
        "users {}\nno_history {}\nmatched_elements {}\nunmatched_elements {}\nskipped_lines {}\n",
        sets.len(),
        no_history,
        matched,
        unmatched,
        skipped_lines
    );
    std::fs::write(out_dir.join("intuit.log"), &log)?;

    let inputs: Vec<(&str, &Path)> = match &config.provider.mock_responses {
        Some(p) if config.provider.kind == ProviderKind::Mock => {
            vec![("mock_responses", p.as_path())]
        }
        _ => vec![],
    };
    manifest.record_stage("intuit", out_dir, &inputs, &[INTUITIONS_FILE, "intuit.log"])?;
    manifest.save(out_dir)?;
    log::info!("matched {matched} elements across {} users ({unmatched} unmatched)", sets.len());
    Ok(())
}

fn run_training(
    config: &RunConfig,
    kg: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    intuitions: &BTreeMap<EntityId, IntuitionSet>,
    weights: &RewardWeights,
) -> Result<TrainOutcome> {
    let train_config = config.train.to_config(config.stage_seed("train"));
    Ok(train_agent(
        kg,
        embeddings,
        intuitions,
        &config.mdp.to_config(),
        weights,
        &train_config,
    )?)
}

/// Train the policy with the configured reward mix.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;
    manifest.verify_stage_outputs("embed", out_dir)?;
    manifest.verify_stage_outputs("intuit", out_dir)?;

    let kg = load_kg(out_dir)?;
    let embeddings = load_embeddings(out_dir)?;
    let intuitions = load_intuitions(&kg, out_dir)?;
    let weights = config.reward.to_weights();
    let outcome = run_training(config, &kg, &embeddings, &intuitions, &weights)?;

    let file = std::fs::File::create(out_dir.join(POLICY_FILE))?;
    outcome.params.write_to(std::io::BufWriter::new(file))?;
    let sidecar = serde_json::json!({
        "dims": outcome.params.dims,
        "train": config.train.to_config(config.stage_seed("train")),
        "reward": weights,
        "mdp": {
            "max_path_len": config.mdp.max_path_len,
            "max_actions": config.mdp.max_actions,
            "action_dropout": config.mdp.action_dropout,
        },
    });
    std::fs::write(
        out_dir.join(POLICY_SIDECAR_FILE),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    let mut log = String::new();
    for (epoch, ret) in outcome.mean_return_per_epoch.iter().enumerate() {
        let _ = writeln!(log, "epoch {epoch} mean_return {ret:.9}");
    }
    std::fs::write(out_dir.join("train.log"), &log)?;

    manifest.record_stage(
        "train",
        out_dir,
        &[],
        &[POLICY_FILE, POLICY_SIDECAR_FILE, "train.log"],
    )?;
    manifest.save(out_dir)?;
    log::info!(
        "trained policy: {} parameters, final mean return {:.4}",
        outcome.params.theta.len(),
        outcome.mean_return_per_epoch.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_recommend(
    config: &RunConfig,
    kg: &KnowledgeGraph,
    embeddings: &EmbeddingTable,
    params: &PolicyParameters,
    train_rows: &[Interaction],
) -> Result<Vec<Recommendations>> {
    let train_items = items_by_user(kg, train_rows)?;
    let users = kg.users();
    Ok(recommend_for_users(
        kg,
        params,
        embeddings,
        &users,
        &train_items,
        &config.mdp.to_config(),
        &config.beam.to_config(),
        config.beam.aggregation,
    )?)
}

/// Beam-search reasoning paths for every user and export the Top-N items.
pub fn cmd_recommend(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;
    manifest.verify_stage_outputs("embed", out_dir)?;
    manifest.verify_stage_outputs("train", out_dir)?;

    let kg = load_kg(out_dir)?;
    let embeddings = load_embeddings(out_dir)?;
    let file = std::fs::File::open(out_dir.join(POLICY_FILE))?;
    let params = PolicyParameters::read_from(std::io::BufReader::new(file))?;
    let train_rows = read_interactions(&out_dir.join(TRAIN_FILE))?;
    let recommendations = run_recommend(config, &kg, &embeddings, &params, &train_rows)?;

    let mut out = Vec::new();
    export_recommendations(&kg, &recommendations, &mut out)?;
    std::fs::write(out_dir.join(RECOMMENDATIONS_FILE), out)?;

    manifest.record_stage("recommend", out_dir, &[], &[RECOMMENDATIONS_FILE])?;
    manifest.save(out_dir)?;
    log::info!("wrote recommendations for {} users", recommendations.len());
    Ok(())
}

fn read_recommendations_file(
    kg: &KnowledgeGraph,
    path: &Path,
) -> Result<BTreeMap<EntityId, Vec<EntityId>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let record: serde_json::Value = serde_json::from_str(line)?;
        let user_label = record["user"].as_str().context("user field")?;
        let user = kg
            .user_by_label(user_label)
            .with_context(|| format!("unknown user `{user_label}`"))?;
        let mut items = Vec::new();
        for entry in record["items"].as_array().context("items array")? {
            let label = entry["item"].as_str().context("item field")?;
            let item = kg
                .item_by_label(label)
                .with_context(|| format!("unknown item `{label}`"))?;
            items.push(item);
        }
        out.insert(user, items);
    }
    Ok(out)
}

fn evaluate_recommendations(
    kg: &KnowledgeGraph,
    recommendations: &BTreeMap<EntityId, Vec<EntityId>>,
    test_rows: &[Interaction],
    ks: &[usize],
) -> Result<EvalReport> {
    let relevant = items_by_user(kg, test_rows)?;
    Ok(evaluate(recommendations, &relevant, ks))
}

/// Score the exported recommendations against the held-out test split.
pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;
    manifest.verify_stage_outputs("recommend", out_dir)?;

    let kg = load_kg(out_dir)?;
    let recommendations = read_recommendations_file(&kg, &out_dir.join(RECOMMENDATIONS_FILE))?;
    let test_rows = read_interactions(&out_dir.join(TEST_FILE))?;
    let report = evaluate_recommendations(&kg, &recommendations, &test_rows, &config.eval.ks)?;

    std::fs::write(out_dir.join(REPORT_CSV_FILE), report.to_csv())?;
    std::fs::write(out_dir.join(REPORT_MD_FILE), report.to_markdown())?;
    manifest.record_stage("eval", out_dir, &[], &[REPORT_CSV_FILE, REPORT_MD_FILE])?;
    manifest.save(out_dir)?;

    println!("{}", report.to_markdown());
    Ok(())
}

/// Retrain and evaluate one agent per mixing weight, reusing the built
/// graph, embeddings, and provider answers.
pub fn cmd_sweep_alpha(config: &RunConfig, grid: &[f64]) -> Result<()> {
    let out_dir = &config.output.dir;
    let mut manifest = Manifest::load(out_dir)?;
    manifest.verify_stage_outputs("build", out_dir)?;
    manifest.verify_stage_outputs("embed", out_dir)?;
    manifest.verify_stage_outputs("intuit", out_dir)?;

    if grid.is_empty() {
        bail!("alpha grid is empty");
    }
    for &alpha in grid {
        if !(0.0..=1.0).contains(&alpha) {
            bail!("alpha {alpha} outside [0, 1]");
        }
    }

    let kg = load_kg(out_dir)?;
    let embeddings = load_embeddings(out_dir)?;
    let intuitions = load_intuitions(&kg, out_dir)?;
    let train_rows = read_interactions(&out_dir.join(TRAIN_FILE))?;
    let test_rows = read_interactions(&out_dir.join(TEST_FILE))?;

    let mut csv = String::from("alpha");
    for k in &config.eval.ks {
        let _ = write!(csv, ",recall@{k},ndcg@{k}");
    }
    csv.push_str(",n_users\n");

    for &alpha in grid {
        let mut weights = config.reward.to_weights();
        weights.alpha = alpha;
        let outcome = run_training(config, &kg, &embeddings, &intuitions, &weights)?;
        let recommendations =
            run_recommend(config, &kg, &embeddings, &outcome.params, &train_rows)?;
        let by_user: BTreeMap<EntityId, Vec<EntityId>> = recommendations
            .iter()
            .map(|r| (r.user, r.ranked.iter().map(|s| s.item).collect()))
            .collect();
        let report = evaluate_recommendations(&kg, &by_user, &test_rows, &config.eval.ks)?;
        let _ = write!(csv, "{alpha}");
        for k in &config.eval.ks {
            let _ = write!(csv, ",{:.6},{:.6}", report.mean_recall[k], report.mean_ndcg[k]);
        }
        let _ = writeln!(csv, ",{}", report.evaluated_users);
        log::info!(
            "alpha {alpha}: recall@{} = {:.4}",
            config.eval.ks[0],
            report.mean_recall[&config.eval.ks[0]]
        );
    }

    std::fs::write(out_dir.join(SWEEP_FILE), &csv)?;
    manifest.record_stage("sweep-alpha", out_dir, &[], &[SWEEP_FILE])?;
    manifest.save(out_dir)?;
    println!("{csv}");
    Ok(())
}

/// In-memory end-to-end run (build through eval) for a prepared dataset
/// bundle; used by the sweep-style experiments and tests that do not need
/// stage artifacts.
pub fn run_pipeline_in_memory(
    config: &RunConfig,
    bundle: &DatasetBundle,
    mock_responses: &BTreeMap<String, String>,
) -> Result<EvalReport> {
    let spec = config.split.to_spec();
    let (train, _valid, test) = time_split(&bundle.interactions, &spec)?;
    let train = truncate_cold_start(&train, spec.cold_start_cap);
    let kg = KnowledgeGraph::build(bundle, &train)?;
    let embeddings = train_transe(&kg, &config.transe.to_config(config.stage_seed("embed")))?.table;

    let client = LlmClient::new(
        Box::new(MockProvider::new(mock_responses.clone())),
        None,
        1,
        Duration::ZERO,
    )?;
    let prompt_types = config.prompt_metadata_types();
    let mut history: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &train {
        history.entry(r.user.clone()).or_default().push(r.item.clone());
    }
    let mut intuitions = BTreeMap::new();
    for user in kg.users() {
        let label = &kg.entity(user)?.label;
        let set = match history.get(label) {
            None => IntuitionSet::empty(user),
            Some(items) => {
                let prompt = build_prompt(&PromptContext {
                    user,
                    history: items.clone(),
                    metadata_types: prompt_types.clone(),
                    domain_name: config.dataset.domain.clone(),
                    temporal_aware: config.prompt.temporal_aware,
                })?;
                let response = client.query(label, &prompt)?;
                let parsed = parse_response(&response, &prompt_types);
                match_elements(user, &parsed.pairs, &kg)
            }
        };
        intuitions.insert(user, set);
    }

    let weights = config.reward.to_weights();
    let outcome = run_training(config, &kg, &embeddings, &intuitions, &weights)?;
    let recommendations = run_recommend(config, &kg, &embeddings, &outcome.params, &train)?;
    let by_user: BTreeMap<EntityId, Vec<EntityId>> = recommendations
        .iter()
        .map(|r| (r.user, r.ranked.iter().map(|s| s.item).collect()))
        .collect();
    evaluate_recommendations(&kg, &by_user, &test, &config.eval.ks)
}
