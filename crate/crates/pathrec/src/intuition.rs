//! Preference-hint extraction: render a (optionally temporally-aware)
//! prompt from a user's interaction history, send it to a pluggable text
//! completion provider, parse the `type: element` lines it returns, and
//! resolve the elements against the graph's metadata-value entities.
//!
//! Responses are cached on disk keyed by (user, prompt hash, provider) so
//! experiments replay without provider access. A refusal parses to an
//! empty element list, which downstream simply treats as a zero hint
//! reward for that user.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub user: EntityId,
    /// Item labels, oldest first.
    pub history: Vec<String>,
    pub metadata_types: Vec<String>,
    /// Domain noun, e.g. "movie".
    pub domain_name: String,
    pub temporal_aware: bool,
}

/// Render the preference-elicitation prompt. With `temporal_aware` the text
/// carries the ordering clause and asks about the *next* item; without it
/// both are omitted. Pure: identical contexts render identical strings.
pub fn build_prompt(ctx: &PromptContext) -> Result<String> {
    if ctx.history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if ctx.metadata_types.is_empty() {
        return Err(Error::Config("metadata_types must be non-empty".into()));
    }
    let d = &ctx.domain_name;
    let items = ctx.history.join(", ");
    let types = ctx.metadata_types.join(", ");
    let (next, order_clause) = if ctx.temporal_aware {
        (
            "next ",
            format!(" in this order, with the more recently watched {d}s appearing at the end"),
        )
    } else {
        ("", String::new())
    };
    Ok(format!(
        "I am thinking of recommending the {next}{d} for a user to watch. \
The user has watched the following {d}s{order_clause}: {items}.\n\
Based on the metadata types such as {types}, please choose the metadata that is \
especially important, and provide the elements that the {next}{d} should have for this user.\n\
Please format the output as follows:\n\
<metadata type>: element"
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntuitionResponse {
    pub raw_text: String,
    pub provider_name: String,
    pub retrieved_at: u64,
}

/// Provider behind the client. `user_label` lets canned providers answer
/// per user; networked providers ignore it.
pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, user_label: &str, prompt: &str) -> Result<String>;
}

/// Canned responses keyed by user label; a queried user without an entry
/// is an error.
pub struct MockProvider {
    table: BTreeMap<String, String>,
}

impl MockProvider {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        Self { table }
    }
}

impl CompletionProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, user_label: &str, _prompt: &str) -> Result<String> {
        self.table
            .get(user_label)
            .cloned()
            .ok_or_else(|| Error::MockResponseMissing(user_label.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    pub auth_env: Option<String>,
    /// Dotted path to the completion text in the response JSON,
    /// e.g. "choices.0.message.content".
    pub completion_field_path: String,
    pub timeout_secs: u64,
}

/// POSTs `{"model": ..., "prompt": ...}` to a configurable endpoint and
/// extracts the completion text by field path.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::Config("http provider needs an endpoint".into()));
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build();
        Ok(Self { config, agent })
    }
}

impl CompletionProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, _user_label: &str, prompt: &str) -> Result<String> {
        let body = serde_json::json!({ "model": self.config.model, "prompt": prompt });
        let mut request = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.auth_env {
            let token = std::env::var(var)
                .map_err(|_| Error::Config(format!("auth env var `{var}` is not set")))?;
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = request
            .send_json(body)
            .map_err(|e| Error::Format(format!("http request failed: {e}")))?;
        let json: serde_json::Value = response
            .into_json()
            .map_err(|e| Error::Format(format!("http response was not json: {e}")))?;
        extract_field_path(&json, &self.config.completion_field_path)
    }
}

/// Walk a dotted path through a JSON value; numeric segments index arrays.
pub fn extract_field_path(value: &serde_json::Value, path: &str) -> Result<String> {
    let mut cur = value;
    for segment in path.split('.') {
        cur = match segment.parse::<usize>() {
            Ok(idx) => cur
                .get(idx)
                .ok_or_else(|| Error::Format(format!("missing index `{segment}` in response")))?,
            Err(_) => cur
                .get(segment)
                .ok_or_else(|| Error::Format(format!("missing field `{segment}` in response")))?,
        };
    }
    cur.as_str()
        .map(|s| s.to_string())
        .ok_or_else(|| Error::Format(format!("field `{path}` is not a string")))
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    user: String,
    prompt_sha256: String,
    provider: String,
    raw_text: String,
    retrieved_at: u64,
}

struct ResponseCache {
    path: PathBuf,
    entries: HashMap<(String, String, String), IntuitionResponse>,
}

impl ResponseCache {
    fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(std::fs::File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)?;
                entries.insert(
                    (rec.user, rec.prompt_sha256, rec.provider.clone()),
                    IntuitionResponse {
                        raw_text: rec.raw_text,
                        provider_name: rec.provider,
                        retrieved_at: rec.retrieved_at,
                    },
                );
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn get(&self, key: &(String, String, String)) -> Option<&IntuitionResponse> {
        self.entries.get(key)
    }

    fn put(&mut self, user: &str, prompt_hash: &str, response: &IntuitionResponse) -> Result<()> {
        let rec = CacheRecord {
            user: user.to_string(),
            prompt_sha256: prompt_hash.to_string(),
            provider: response.provider_name.clone(),
            raw_text: response.raw_text.clone(),
            retrieved_at: response.retrieved_at,
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        writeln!(file, "{}", serde_json::to_string(&rec)?)?;
        self.entries.insert(
            (
                rec.user,
                rec.prompt_sha256,
                response.provider_name.clone(),
            ),
            response.clone(),
        );
        Ok(())
    }
}

struct LimiterState {
    in_flight: usize,
    next_dispatch: Option<Instant>,
}

/// Caps concurrent provider calls and spaces dispatches by a minimum
/// interval.
struct RequestLimiter {
    max_in_flight: usize,
    min_interval: Duration,
    state: Mutex<LimiterState>,
    available: Condvar,
}

impl RequestLimiter {
    fn new(max_in_flight: usize, min_interval: Duration) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            min_interval,
            state: Mutex::new(LimiterState {
                in_flight: 0,
                next_dispatch: None,
            }),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut state = self.state.lock().unwrap();
        while state.in_flight >= self.max_in_flight {
            state = self.available.wait(state).unwrap();
        }
        state.in_flight += 1;
        let now = Instant::now();
        let dispatch_at = match state.next_dispatch {
            Some(next) if next > now => next,
            _ => now,
        };
        state.next_dispatch = Some(dispatch_at + self.min_interval);
        drop(state);
        let now = Instant::now();
        if dispatch_at > now {
            std::thread::sleep(dispatch_at - now);
        }
    }

    fn release(&self) {
        let mut state = self.state.lock().unwrap();
        state.in_flight -= 1;
        drop(state);
        self.available.notify_one();
    }
}

const RETRY_ATTEMPTS: u32 = 3;
const RETRY_BACKOFF: Duration = Duration::from_millis(250);

/// Provider plus response cache. Queries hit the cache first; misses call
/// the provider with retry/backoff and append to the cache.
pub struct LlmClient {
    provider: Box<dyn CompletionProvider>,
    cache: Option<Mutex<ResponseCache>>,
    limiter: RequestLimiter,
}

impl LlmClient {
    pub fn new(
        provider: Box<dyn CompletionProvider>,
        cache_path: Option<&Path>,
        max_in_flight: usize,
        min_request_interval: Duration,
    ) -> Result<Self> {
        let cache = match cache_path {
            Some(p) => Some(Mutex::new(ResponseCache::open(p)?)),
            None => None,
        };
        Ok(Self {
            provider,
            cache,
            limiter: RequestLimiter::new(max_in_flight, min_request_interval),
        })
    }

    pub fn query(&self, user_label: &str, prompt: &str) -> Result<IntuitionResponse> {
        let prompt_hash = hex::encode(Sha256::digest(prompt.as_bytes()));
        let key = (
            user_label.to_string(),
            prompt_hash.clone(),
            self.provider.name().to_string(),
        );
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lock().unwrap().get(&key) {
                return Ok(hit.clone());
            }
        }

        self.limiter.acquire();
        let result = self.complete_with_retry(user_label, prompt);
        self.limiter.release();
        let raw_text = result?;

        let response = IntuitionResponse {
            raw_text,
            provider_name: self.provider.name().to_string(),
            retrieved_at: SystemTime::now()
                .duration_since(SystemTime::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Some(cache) = &self.cache {
            cache
                .lock()
                .unwrap()
                .put(user_label, &prompt_hash, &response)?;
        }
        Ok(response)
    }

    fn complete_with_retry(&self, user_label: &str, prompt: &str) -> Result<String> {
        let mut last_error = String::new();
        for attempt in 0..RETRY_ATTEMPTS {
            match self.provider.complete(user_label, prompt) {
                Ok(text) => return Ok(text),
                // Missing mock coverage is a configuration bug, not a
                // transient failure.
                Err(e @ Error::MockResponseMissing(_)) => return Err(e),
                Err(e) => {
                    last_error = e.to_string();
                    if attempt + 1 < RETRY_ATTEMPTS {
                        std::thread::sleep(RETRY_BACKOFF * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::ProviderFailed {
            provider: self.provider.name().to_string(),
            attempts: RETRY_ATTEMPTS,
            message: last_error,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedElements {
    /// (canonical metadata type, element) pairs in response order.
    pub pairs: Vec<(String, String)>,
    /// Lines that did not conform to `type: element`.
    pub skipped_lines: usize,
}

/// Parse `type: element` lines. Type matching is case-insensitive after
/// stripping list bullets and markdown emphasis; comma-separated elements
/// split into one pair each. Anything else is skipped and counted, so a
/// refusal parses to an empty list.
pub fn parse_response(resp: &IntuitionResponse, metadata_types: &[String]) -> ParsedElements {
    let canonical: HashMap<String, &String> = metadata_types
        .iter()
        .map(|t| (t.to_lowercase(), t))
        .collect();
    let mut out = ParsedElements::default();
    for line in resp.raw_text.lines() {
        let stripped = strip_list_markers(line);
        if stripped.is_empty() {
            continue;
        }
        let Some((ty_part, rest)) = stripped.split_once(':') else {
            out.skipped_lines += 1;
            continue;
        };
        let ty_key = ty_part.trim().trim_matches(['*', '_', '`']).trim().to_lowercase();
        let Some(&ty) = canonical.get(&ty_key) else {
            out.skipped_lines += 1;
            continue;
        };
        let mut any = false;
        for element in rest.split(',') {
            let element = element.trim().trim_matches(['*', '_', '`']).trim();
            if !element.is_empty() {
                out.pairs.push((ty.clone(), element.to_string()));
                any = true;
            }
        }
        if !any {
            out.skipped_lines += 1;
        }
    }
    out
}

fn strip_list_markers(line: &str) -> &str {
    let mut s = line.trim();
    loop {
        let trimmed = s
            .trim_start_matches(['-', '*', '•', '#', '>'])
            .trim_start();
        // Numbered bullets: "1." or "2)".
        let after_number = trimmed
            .find(|c: char| !c.is_ascii_digit())
            .filter(|&i| i > 0 && (trimmed.as_bytes()[i] == b'.' || trimmed.as_bytes()[i] == b')'))
            .map(|i| trimmed[i + 1..].trim_start())
            .unwrap_or(trimmed);
        if after_number == s {
            return s;
        }
        s = after_number;
    }
}

/// The set of graph metadata-value entities a user's predicted next items
/// should exhibit, plus the element strings that failed to resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntuitionSet {
    pub user: EntityId,
    pub matched: BTreeSet<EntityId>,
    pub unmatched: Vec<(String, String)>,
}

impl IntuitionSet {
    pub fn empty(user: EntityId) -> Self {
        Self {
            user,
            matched: BTreeSet::new(),
            unmatched: Vec::new(),
        }
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.matched.contains(&e)
    }
}

/// Lowercase, map punctuation to spaces, collapse whitespace.
pub fn normalize(s: &str) -> String {
    let mapped: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_set(normalized: &str) -> BTreeSet<&str> {
    normalized.split_whitespace().collect()
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

const JACCARD_THRESHOLD: f64 = 0.5;

/// Resolve parsed (type, element) pairs against the graph's metadata-value
/// entities of the same type: normalized exact match first, then best
/// token-set Jaccard at threshold 0.5 (ties to the lowest entity id).
pub fn match_elements(
    user: EntityId,
    pairs: &[(String, String)],
    kg: &KnowledgeGraph,
) -> IntuitionSet {
    // Candidate labels per metadata type, ascending by entity id.
    let mut candidates: HashMap<&str, Vec<(EntityId, String)>> = HashMap::new();
    for e in kg.entities() {
        if let EntityKind::MetadataValue(ty) = &e.kind {
            candidates
                .entry(ty.as_str())
                .or_default()
                .push((e.id, normalize(&e.label)));
        }
    }

    let mut set = IntuitionSet::empty(user);
    for (ty, element) in pairs {
        let norm = normalize(element);
        let Some(cands) = candidates.get(ty.as_str()) else {
            set.unmatched.push((ty.clone(), element.clone()));
            continue;
        };
        if norm.is_empty() {
            set.unmatched.push((ty.clone(), element.clone()));
            continue;
        }
        if let Some((id, _)) = cands.iter().find(|(_, label)| *label == norm) {
            set.matched.insert(*id);
            continue;
        }
        let tokens = token_set(&norm);
        let mut best: Option<(f64, EntityId)> = None;
        for (id, label) in cands {
            let score = jaccard(&tokens, &token_set(label));
            if score >= JACCARD_THRESHOLD && best.map_or(true, |(s, _)| score > s) {
                best = Some((score, *id));
            }
        }
        match best {
            Some((_, id)) => {
                set.matched.insert(id);
            }
            None => set.unmatched.push((ty.clone(), element.clone())),
        }
    }
    set
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IntuitionExportEntry {
    pub matched_labels: Vec<String>,
    /// Entity ids behind `matched_labels`; labels alone can collide across
    /// metadata types.
    pub matched_ids: Vec<EntityId>,
    pub unmatched: Vec<(String, String)>,
}

/// JSON export: user label -> { matched_labels, matched_ids, unmatched }.
pub fn export_intuitions(
    kg: &KnowledgeGraph,
    sets: &BTreeMap<EntityId, IntuitionSet>,
) -> Result<BTreeMap<String, IntuitionExportEntry>> {
    let mut out = BTreeMap::new();
    for (user, set) in sets {
        let user_label = kg.entity(*user)?.label.clone();
        let matched_labels = set
            .matched
            .iter()
            .map(|id| kg.entity(*id).map(|e| e.label.clone()))
            .collect::<Result<Vec<_>>>()?;
        out.insert(
            user_label,
            IntuitionExportEntry {
                matched_labels,
                matched_ids: set.matched.iter().copied().collect(),
                unmatched: set.unmatched.clone(),
            },
        );
    }
    Ok(out)
}

/// Rebuild per-user sets from an export, validating that every id is a
/// metadata-value entity of the graph.
pub fn intuitions_from_export(
    kg: &KnowledgeGraph,
    export: &BTreeMap<String, IntuitionExportEntry>,
) -> Result<BTreeMap<EntityId, IntuitionSet>> {
    let mut out = BTreeMap::new();
    for (user_label, entry) in export {
        let user = kg
            .user_by_label(user_label)
            .ok_or_else(|| Error::Format(format!("unknown user `{user_label}` in export")))?;
        let mut set = IntuitionSet::empty(user);
        for id in &entry.matched_ids {
            match &kg.entity(*id)?.kind {
                EntityKind::MetadataValue(_) => {
                    set.matched.insert(*id);
                }
                other => {
                    return Err(Error::Format(format!(
                        "matched id {id} is a {other:?}, not a metadata value"
                    )))
                }
            }
        }
        set.unmatched = entry.unmatched.clone();
        out.insert(user, set);
    }
    Ok(out)
}
