//! Persistent, versioned store of users, datasets, flows, tasks and runs.
//!
//! All state lives in memory behind a read-write lock and is mirrored by an
//! append-only journal (see [`store`]). Every mutation takes the write lock,
//! appends its journal record and only then applies it, so versions and ids
//! are assigned atomically and a replay rebuilds exactly the same state.

pub mod entities;
pub mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, SubsecRound, Utc};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::arff::{self, AttributeKind, Relation};
use crate::eval::{self, EvaluationResult};
use crate::qualities;
use crate::task::{self, EstimationProcedure, SplitTable, Task, TaskError, TaskTypeId};

pub use entities::*;
use store::{BlobStore, Journal, JournalRecord, Snapshot};

pub const DEFAULT_DATASET_LICENCES: &[&str] = &["CC0", "CC-BY", "CC-BY-SA", "CC-BY-NC", "custom"];
pub const DEFAULT_FLOW_LICENCES: &[&str] =
    &["MIT", "Apache-2.0", "BSD-3-Clause", "GPL-2.0", "GPL-3.0", "LGPL-3.0", "public-domain", "custom"];
pub const REQUIRED_ANNOTATIONS: &[&str] = &["handles_missing", "handles_nominal", "handles_numeric"];
pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const MAX_PAGE_SIZE: usize = 10_000;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("AuthError: missing or unknown API key")]
    Auth,
    #[error("Forbidden: {0}")]
    Forbidden(String),
    #[error("NotFound: {entity} {id}")]
    NotFound { entity: &'static str, id: u64 },
    #[error("ValidationError: {0}")]
    Validation(String),
    #[error("TooFewInstances: {folds} folds requested but only {instances} usable instances")]
    TooFewInstances { folds: usize, instances: usize },
    #[error("DeleteConflict: {0}")]
    DeleteConflict(String),
    #[error("storage error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}

impl From<TaskError> for RegistryError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::TooFewInstances { folds, instances } => RegistryError::TooFewInstances { folds, instances },
            other => RegistryError::Validation(other.to_string()),
        }
    }
}

pub type Result<T, E = RegistryError> = std::result::Result<T, E>;

fn invalid(reason: impl Into<String>) -> RegistryError {
    RegistryError::Validation(reason.into())
}

/// Loads bytes for datasets referenced by URL.
pub trait UrlFetcher: Send + Sync {
    fn fetch(&self, url: &url::Url) -> std::result::Result<Vec<u8>, String>;
}

/// Fetcher for `file://` URLs only.
#[derive(Debug, Default, Clone, Copy)]
pub struct FileFetcher;

impl UrlFetcher for FileFetcher {
    fn fetch(&self, url: &url::Url) -> std::result::Result<Vec<u8>, String> {
        if url.scheme() != "file" {
            return Err(format!("unsupported URL scheme '{}'", url.scheme()));
        }
        let path = url.to_file_path().map_err(|_| format!("bad file URL '{url}'"))?;
        std::fs::read(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))
    }
}

#[derive(Debug, Clone)]
pub struct RegistryConfig {
    pub dataset_licences: Vec<String>,
    pub flow_licences: Vec<String>,
    pub max_dataset_bytes: usize,
    /// fsync journal appends and blobs.
    pub sync: bool,
    /// Journal records per segment before a compacted snapshot is written.
    pub compact_every: usize,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            dataset_licences: DEFAULT_DATASET_LICENCES.iter().map(|s| s.to_string()).collect(),
            flow_licences: DEFAULT_FLOW_LICENCES.iter().map(|s| s.to_string()).collect(),
            max_dataset_bytes: arff::DEFAULT_MAX_BYTES,
            sync: true,
            compact_every: 10_000,
        }
    }
}

/// The complete logical store content. Serialized form is canonical
/// (ordered maps only), which makes [`Registry::digest`] meaningful.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub users: BTreeMap<u64, User>,
    pub datasets: BTreeMap<u64, DatasetVersion>,
    pub flows: BTreeMap<u64, Flow>,
    pub tasks: BTreeMap<u64, Task>,
    pub runs: BTreeMap<u64, Run>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entity {
    User,
    Dataset,
    Flow,
    Task,
    Run,
}

impl Entity {
    fn name(self) -> &'static str {
        match self {
            Entity::User => "user",
            Entity::Dataset => "dataset",
            Entity::Flow => "flow",
            Entity::Task => "task",
            Entity::Run => "run",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Entity::User, Entity::Dataset, Entity::Flow, Entity::Task, Entity::Run].into_iter().find(|e| e.name() == s)
    }
}

fn from_payload<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T> {
    serde_json::from_value(payload.clone()).map_err(|e| RegistryError::Corrupt(e.to_string()))
}

impl State {
    fn apply(&mut self, record: &JournalRecord) -> Result<()> {
        let entity = Entity::parse(&record.entity)
            .ok_or_else(|| RegistryError::Corrupt(format!("unknown entity '{}'", record.entity)))?;
        let id = record.id;
        match entity {
            Entity::User => {
                self.users.insert(id, from_payload(&record.payload)?);
            }
            Entity::Dataset => {
                self.datasets.insert(id, from_payload(&record.payload)?);
            }
            Entity::Flow => {
                self.flows.insert(id, from_payload(&record.payload)?);
            }
            Entity::Task => {
                self.tasks.insert(id, from_payload(&record.payload)?);
            }
            Entity::Run => {
                self.runs.insert(id, from_payload(&record.payload)?);
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        store::sha256_hex(&serde_json::to_vec(self).expect("state serializes"))
    }

    pub fn user_by_key(&self, key: &str) -> Option<&User> {
        let hash = store::sha256_hex(key.as_bytes());
        self.users.values().find(|u| u.api_key_sha256 == hash)
    }

    pub fn dataset(&self, id: u64) -> Result<&DatasetVersion> {
        self.datasets.get(&id).filter(|d| !d.deleted).ok_or(RegistryError::NotFound { entity: "dataset", id })
    }

    pub fn flow(&self, id: u64) -> Result<&Flow> {
        self.flows.get(&id).filter(|f| !f.deleted).ok_or(RegistryError::NotFound { entity: "flow", id })
    }

    pub fn task(&self, id: u64) -> Result<&Task> {
        self.tasks.get(&id).filter(|t| !t.deleted).ok_or(RegistryError::NotFound { entity: "task", id })
    }

    pub fn run(&self, id: u64) -> Result<&Run> {
        self.runs.get(&id).filter(|r| !r.deleted).ok_or(RegistryError::NotFound { entity: "run", id })
    }

    pub fn live_runs(&self) -> impl Iterator<Item = &Run> {
        self.runs.values().filter(|r| !r.deleted)
    }
}

fn next_id<V>(map: &BTreeMap<u64, V>) -> u64 {
    map.keys().next_back().map_or(1, |k| k + 1)
}

/// Timestamps are truncated to microseconds so they survive a JSON round trip unchanged.
fn now() -> DateTime<Utc> {
    Utc::now().trunc_subsecs(6)
}

fn generate_key() -> String {
    let mut bytes = [0u8; 32];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn check_url(field: &str, s: &str) -> Result<url::Url> {
    let url = url::Url::parse(s).map_err(|e| invalid(format!("{field}: invalid URL '{s}': {e}")))?;
    match url.scheme() {
        "http" | "https" | "file" => Ok(url),
        other => Err(invalid(format!("{field}: unsupported URL scheme '{other}'"))),
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(invalid("name is required"));
    }
    if name.len() > 256 || name.chars().any(char::is_control) {
        return Err(invalid("name must be at most 256 printable characters"));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct Page {
    pub offset: usize,
    pub limit: Option<usize>,
}

impl Page {
    fn apply<T>(&self, items: impl Iterator<Item = T>) -> Vec<T> {
        let limit = self.limit.unwrap_or(DEFAULT_PAGE_SIZE).min(MAX_PAGE_SIZE);
        items.skip(self.offset).take(limit).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetFilter {
    pub keyword: Option<String>,
    pub status: Option<DatasetStatus>,
    pub page: Page,
}

#[derive(Debug, Clone, Default)]
pub struct RunFilter {
    pub task_id: Option<u64>,
    pub flow_id: Option<u64>,
    pub uploader: Option<u64>,
    pub page: Page,
}

/// Request to create (or look up) a task. Omitted fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRequest {
    /// Accepts the task type name or its numeric id.
    #[serde(deserialize_with = "task_type_name_or_id")]
    pub task_type: TaskTypeId,
    pub dataset_id: u64,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub estimation_procedure: Option<EstimationProcedure>,
    #[serde(default)]
    pub evaluation_measure: Option<String>,
}

fn task_type_name_or_id<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TaskTypeId, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Id(u32),
        Name(String),
    }
    let parsed = match Raw::deserialize(d)? {
        Raw::Id(id) => TaskTypeId::from_numeric_id(id),
        Raw::Name(name) => TaskTypeId::parse(&name),
    };
    parsed.ok_or_else(|| serde::de::Error::custom("unknown task type"))
}

pub struct Registry {
    root: PathBuf,
    blobs: BlobStore,
    state: RwLock<State>,
    journal: Mutex<Journal>,
    config: RegistryConfig,
    fetcher: Arc<dyn UrlFetcher>,
    relations: Mutex<HashMap<String, Arc<Relation>>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry").field("root", &self.root).finish_non_exhaustive()
    }
}

impl Registry {
    pub fn open(root: impl AsRef<Path>, config: RegistryConfig, fetcher: Arc<dyn UrlFetcher>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let blobs = BlobStore::open(root.join("blobs"), config.sync)?;
        let journal_dir = root.join("journal");
        std::fs::create_dir_all(&journal_dir)?;
        let (mut state, covered) = match store::read_snapshot(&root.join("snapshot.json"))? {
            Some(snap) => (
                serde_json::from_value::<State>(snap.state).map_err(|e| RegistryError::Corrupt(e.to_string()))?,
                snap.segment,
            ),
            None => (State::default(), 0),
        };
        for record in store::read_records(&journal_dir, covered)? {
            state.apply(&record)?;
        }
        let journal = Journal::open(journal_dir, covered + 1, config.sync)?;
        Ok(Registry {
            root,
            blobs,
            state: RwLock::new(state),
            journal: Mutex::new(journal),
            config,
            fetcher,
            relations: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    /// Runs `f` against a consistent view of the state.
    pub fn read<R>(&self, f: impl FnOnce(&State) -> R) -> R {
        f(&self.state.read())
    }

    pub fn digest(&self) -> String {
        self.state.read().digest()
    }

    /// Journals and applies one put record. Caller holds the write lock.
    fn commit(&self, state: &mut State, op: &str, entity: Entity, id: u64, payload: Value, actor: Option<u64>) -> Result<()> {
        let record = JournalRecord { op: op.into(), entity: entity.name().into(), id, payload, actor, ts: now() };
        let mut journal = self.journal.lock();
        journal.append(&record)?;
        state.apply(&record)?;
        if journal.records_in_segment() >= self.config.compact_every {
            let snapshot = Snapshot {
                segment: journal.segment(),
                state: serde_json::to_value(&*state).map_err(|e| RegistryError::Corrupt(e.to_string()))?,
            };
            store::write_snapshot(&self.root.join("snapshot.json"), &snapshot, self.config.sync)?;
            journal.rotate()?;
        }
        Ok(())
    }

    fn put<T: Serialize>(&self, state: &mut State, op: &str, entity: Entity, id: u64, value: &T, actor: Option<u64>) -> Result<()> {
        let payload = serde_json::to_value(value).map_err(|e| RegistryError::Corrupt(e.to_string()))?;
        self.commit(state, op, entity, id, payload, actor)
    }

    /// Writes a compacted snapshot now and starts a new journal segment.
    pub fn compact(&self) -> Result<()> {
        let state = self.state.write();
        let mut journal = self.journal.lock();
        let snapshot = Snapshot {
            segment: journal.segment(),
            state: serde_json::to_value(&*state).map_err(|e| RegistryError::Corrupt(e.to_string()))?,
        };
        store::write_snapshot(&self.root.join("snapshot.json"), &snapshot, self.config.sync)?;
        journal.rotate()?;
        Ok(())
    }

    // ---- users ----

    pub fn authenticate(&self, api_key: &str) -> Result<User> {
        self.state.read().user_by_key(api_key).cloned().ok_or(RegistryError::Auth)
    }

    fn insert_user(&self, state: &mut State, display_name: &str, admin: bool, actor: Option<u64>) -> Result<(User, String)> {
        let key = generate_key();
        let user = User {
            user_id: next_id(&state.users),
            display_name: display_name.to_string(),
            api_key_sha256: store::sha256_hex(key.as_bytes()),
            admin,
            created_at: now(),
        };
        self.put(state, "create", Entity::User, user.user_id, &user, actor)?;
        Ok((user, key))
    }

    /// Creates the admin user when the user table is empty and returns its
    /// API key. Returns `None` once any user exists.
    pub fn bootstrap_admin(&self) -> Result<Option<(User, String)>> {
        let mut state = self.state.write();
        if !state.users.is_empty() {
            return Ok(None);
        }
        self.insert_user(&mut state, "admin", true, None).map(Some)
    }

    pub fn create_user(&self, api_key: &str, display_name: &str) -> Result<(User, String)> {
        let mut state = self.state.write();
        let actor = state.user_by_key(api_key).cloned().ok_or(RegistryError::Auth)?;
        if !actor.admin {
            return Err(RegistryError::Forbidden("only admins can create users".into()));
        }
        check_name(display_name)?;
        self.insert_user(&mut state, display_name, false, Some(actor.user_id))
    }

    pub fn get_user(&self, id: u64) -> Result<User> {
        self.state.read().users.get(&id).cloned().ok_or(RegistryError::NotFound { entity: "user", id })
    }

    // ---- blobs ----

    pub fn blob(&self, sha: &str) -> Result<Vec<u8>> {
        Ok(self.blobs.get(sha)?)
    }

    // ---- datasets ----

    /// Registers a new dataset version in preparation. Exactly one of
    /// `payload` and `meta.url` must be given. Call [`Registry::activate_dataset`] next.
    pub fn upload_dataset(&self, api_key: &str, meta: DatasetMeta, payload: Option<&[u8]>) -> Result<DatasetVersion> {
        let actor = self.authenticate(api_key)?;
        check_name(&meta.name)?;
        if !self.config.dataset_licences.contains(&meta.licence) {
            return Err(invalid(format!(
                "licence '{}' is not one of: {}",
                meta.licence,
                self.config.dataset_licences.join(", ")
            )));
        }
        if let Some(p) = &meta.paper_url {
            check_url("paper_url", p)?;
        }
        let source = match (payload, &meta.url) {
            (Some(_), Some(_)) => return Err(invalid("give either a data file or a url, not both")),
            (None, None) => return Err(invalid("a data file or a url is required")),
            (Some(bytes), None) => {
                if bytes.is_empty() {
                    return Err(invalid("data file is empty"));
                }
                Source::Blob { sha256: self.blobs.put(bytes)? }
            }
            (None, Some(u)) => Source::Url { url: check_url("url", u)?.to_string(), sha256: None, fetched_at: None },
        };

        let mut state = self.state.write();
        let version = 1 + state.datasets.values().filter(|d| d.name == meta.name).map(|d| d.version).max().unwrap_or(0);
        let dataset = DatasetVersion {
            dataset_id: next_id(&state.datasets),
            name: meta.name,
            version,
            version_label: meta.version_label,
            description: meta.description,
            format: "arff".into(),
            source,
            licence: meta.licence,
            citation: meta.citation,
            paper_url: meta.paper_url,
            default_target: meta.default_target,
            row_id_attribute: meta.row_id_attribute,
            uploader: actor.user_id,
            uploaded_at: now(),
            status: DatasetStatus::InPreparation,
            error_reason: None,
            qualities: None,
        deleted: false,
        };
        self.put(&mut state, "create", Entity::Dataset, dataset.dataset_id, &dataset, Some(actor.user_id))?;
        Ok(dataset)
    }

    /// Loads, parses, validates and characterizes a dataset in preparation,
    /// then marks it active or error. Never fails on bad data; the outcome is
    /// encoded in the returned version's status.
    pub fn activate_dataset(&self, id: u64) -> Result<DatasetVersion> {
        let dataset = self.get_dataset(id)?;
        if dataset.status != DatasetStatus::InPreparation {
            return Ok(dataset);
        }
        let mut source = dataset.source.clone();
        let outcome = self.prepare(&mut source, &dataset);

        let mut state = self.state.write();
        let mut current = state.dataset(id)?.clone();
        if current.status != DatasetStatus::InPreparation {
            return Ok(current);
        }
        current.source = source;
        match outcome {
            Ok(q) => {
                current.status = DatasetStatus::Active;
                current.qualities = Some(q);
            }
            Err(reason) => {
                current.status = DatasetStatus::Error;
                current.error_reason = Some(reason);
            }
        }
        self.put(&mut state, "activate", Entity::Dataset, id, &current, None)?;
        Ok(current)
    }

    fn prepare(&self, source: &mut Source, dataset: &DatasetVersion) -> std::result::Result<qualities::QualityVector, String> {
        let bytes = match source {
            Source::Blob { sha256 } => self.blobs.get(sha256).map_err(|e| format!("cannot read data: {e}"))?,
            Source::Url { url, sha256, fetched_at } => {
                let parsed = url::Url::parse(url).map_err(|e| format!("FetchError: {e}"))?;
                let bytes = self.fetcher.fetch(&parsed).map_err(|e| format!("FetchError: {e}"))?;
                if bytes.len() > self.config.max_dataset_bytes {
                    return Err(format!("FetchError: {} bytes exceeds the limit", bytes.len()));
                }
                *sha256 = Some(self.blobs.put(&bytes).map_err(|e| format!("cannot store data: {e}"))?);
                *fetched_at = Some(now());
                bytes
            }
        };
        let relation =
            arff::parse_arff_with_limit(&bytes, self.config.max_dataset_bytes).map_err(|e| e.to_string())?;
        if let Some(target) = &dataset.default_target {
            let Some(attr) = relation.attribute(target) else {
                return Err(format!("default_target '{target}' is not an attribute"));
            };
            let task_type = match attr.kind {
                AttributeKind::Nominal { .. } => TaskTypeId::SupervisedClassification,
                AttributeKind::Numeric => TaskTypeId::SupervisedRegression,
                _ => return Err(format!("default_target '{target}' must be nominal or numeric")),
            };
            let findings = arff::validate_for_task(&relation, target, task_type);
            if !findings.is_empty() {
                return Err(findings.join("; "));
            }
        }
        let mut ignored = Vec::new();
        if let Some(rid) = &dataset.row_id_attribute {
            let idx = relation.attribute_index(rid).ok_or_else(|| format!("row_id_attribute '{rid}' is not an attribute"))?;
            if dataset.default_target.as_deref() == Some(rid.as_str()) {
                return Err("row_id_attribute cannot be the target".into());
            }
            let mut seen = HashSet::new();
            for (i, row) in relation.rows.iter().enumerate() {
                let key = match &row.cells[idx] {
                    arff::Cell::Missing => return Err(format!("row_id_attribute '{rid}' is missing in row {}", i + 1)),
                    arff::Cell::Number(v) => arff::format_number(*v),
                    arff::Cell::Text(t) => t.clone(),
                };
                if !seen.insert(key) {
                    return Err(format!("row_id_attribute '{rid}' is not unique (row {})", i + 1));
                }
            }
            ignored.push(rid.as_str());
        }
        qualities::compute_qualities(&relation, dataset.default_target.as_deref(), &ignored).map_err(|e| e.to_string())
    }

    pub fn get_dataset(&self, id: u64) -> Result<DatasetVersion> {
        self.state.read().dataset(id).cloned()
    }

    /// Summaries matching a case-insensitive keyword on name or description, newest first.
    pub fn list_datasets(&self, filter: &DatasetFilter) -> Vec<DatasetVersion> {
        let keyword = filter.keyword.as_deref().map(str::to_lowercase);
        let state = self.state.read();
        let matching = state.datasets.values().rev().filter(|d| {
            !d.deleted
                && filter.status.is_none_or(|s| d.status == s)
                && keyword.as_deref().is_none_or(|k| {
                    d.name.to_lowercase().contains(k) || d.description.to_lowercase().contains(k)
                })
        });
        filter.page.apply(matching.cloned())
    }

    pub fn dataset_bytes(&self, id: u64) -> Result<Vec<u8>> {
        let dataset = self.get_dataset(id)?;
        let sha = dataset
            .source
            .blob()
            .ok_or_else(|| invalid(format!("dataset {id} has not been fetched yet")))?
            .to_string();
        self.blob(&sha)
    }

    /// The parsed relation of an active dataset (cached by content hash).
    pub fn dataset_relation(&self, id: u64) -> Result<Arc<Relation>> {
        let dataset = self.get_dataset(id)?;
        if dataset.status != DatasetStatus::Active {
            return Err(invalid(format!("dataset {id} is not active (status {})", dataset.status.as_str())));
        }
        let sha = dataset.source.blob().expect("active datasets have a blob").to_string();
        if let Some(rel) = self.relations.lock().get(&sha) {
            return Ok(rel.clone());
        }
        let bytes = self.blob(&sha)?;
        let rel = Arc::new(
            arff::parse_arff_with_limit(&bytes, self.config.max_dataset_bytes)
                .map_err(|e| RegistryError::Corrupt(format!("stored dataset {id}: {e}")))?,
        );
        self.relations.lock().insert(sha, rel.clone());
        Ok(rel)
    }

    // ---- flows ----

    fn validate_parameters(params: &[ParameterSpec]) -> Result<()> {
        let mut names = HashSet::new();
        for p in params {
            check_name(&p.name)?;
            if !names.insert(p.name.as_str()) {
                return Err(invalid(format!("duplicate parameter name '{}'", p.name)));
            }
            if let Some(d) = &p.default {
                let coerced = p.coerce(d).map_err(invalid)?;
                if &coerced != d {
                    return Err(invalid(format!("default of parameter '{}' must be a {:?}", p.name, p.data_type)));
                }
            }
            if let Some(RecommendedRange::Interval([lo, hi])) = &p.recommended_range {
                if !(lo <= hi) {
                    return Err(invalid(format!("recommended_range of '{}' must satisfy low <= high", p.name)));
                }
                if matches!(p.data_type, ParamType::Text | ParamType::Boolean) {
                    return Err(invalid(format!("numeric range given for non-numeric parameter '{}'", p.name)));
                }
            }
        }
        Ok(())
    }

    pub fn upload_flow(&self, api_key: &str, meta: FlowMeta) -> Result<Flow> {
        let actor = self.authenticate(api_key)?;
        check_name(&meta.name)?;
        if !self.config.flow_licences.contains(&meta.licence) {
            return Err(invalid(format!(
                "licence '{}' is not one of: {}",
                meta.licence,
                self.config.flow_licences.join(", ")
            )));
        }
        Self::validate_parameters(&meta.parameters)?;
        for a in REQUIRED_ANNOTATIONS {
            if !meta.annotations.contains_key(*a) {
                return Err(invalid(format!("annotation '{a}' is required")));
            }
        }
        let source = match (&meta.source_code, &meta.source_url) {
            (Some(_), Some(_)) => return Err(invalid("give either source_code or source_url, not both")),
            (None, None) => return Err(invalid("source_code or source_url is required")),
            (Some(code), None) => Source::Blob { sha256: self.blobs.put(code.as_bytes())? },
            (None, Some(u)) => Source::Url { url: check_url("source_url", u)?.to_string(), sha256: None, fetched_at: None },
        };
        let mut state = self.state.write();
        let version = 1 + state.flows.values().filter(|f| f.name == meta.name).map(|f| f.version).max().unwrap_or(0);
        let flow = Flow {
            flow_id: next_id(&state.flows),
            name: meta.name,
            version,
            version_label: meta.version_label,
            source,
            description: meta.description,
            licence: meta.licence,
            uploader: actor.user_id,
            uploaded_at: now(),
            parameters: meta.parameters,
            annotations: meta.annotations,
            deleted: false,
        };
        self.put(&mut state, "create", Entity::Flow, flow.flow_id, &flow, Some(actor.user_id))?;
        Ok(flow)
    }

    pub fn get_flow(&self, id: u64) -> Result<Flow> {
        self.state.read().flow(id).cloned()
    }

    pub fn list_flows(&self, keyword: Option<&str>, page: &Page) -> Vec<Flow> {
        let keyword = keyword.map(str::to_lowercase);
        let state = self.state.read();
        let matching = state.flows.values().rev().filter(|f| {
            !f.deleted
                && keyword.as_deref().is_none_or(|k| {
                    f.name.to_lowercase().contains(k) || f.description.to_lowercase().contains(k)
                })
        });
        page.apply(matching.cloned())
    }

    // ---- tasks ----

    /// Creates a task, or returns the existing identical one. The boolean is
    /// true when a new task was created.
    pub fn create_task(&self, api_key: &str, req: TaskRequest) -> Result<(Task, bool)> {
        let actor = self.authenticate(api_key)?;
        let dataset = self.get_dataset(req.dataset_id)?;
        let relation = self.dataset_relation(req.dataset_id)?;
        let target = req
            .target
            .clone()
            .or(dataset.default_target.clone())
            .ok_or_else(|| invalid("target is required (the dataset has no default target)"))?;
        if dataset.row_id_attribute.as_deref() == Some(target.as_str()) {
            return Err(invalid("the row-id attribute cannot be the target"));
        }
        let findings = arff::validate_for_task(&relation, &target, req.task_type);
        if !findings.is_empty() {
            return Err(invalid(findings.join("; ")));
        }
        let estimation = req.estimation_procedure.clone().unwrap_or_default();
        let measure_name = req.evaluation_measure.clone().unwrap_or_else(|| req.task_type.default_measure().to_string());
        match eval::measure(&measure_name) {
            Some(m) if m.applies_to(req.task_type) => {}
            Some(_) => return Err(invalid(format!("measure '{measure_name}' does not apply to {}", req.task_type.name()))),
            None => return Err(invalid(format!("unknown measure '{measure_name}'"))),
        }
        let same = |t: &Task| {
            !t.deleted
                && t.task_type == req.task_type
                && t.dataset_id == req.dataset_id
                && t.target == target
                && t.estimation.dedup_key() == estimation.dedup_key()
                && t.evaluation_measure == measure_name
        };
        if let Some(existing) = self.state.read().tasks.values().find(|t| same(t)) {
            return Ok((existing.clone(), false));
        }

        let splits = task::generate_splits(&relation, &target, &estimation)?;
        let splits_sha = self.blobs.put(splits.to_arff().as_bytes())?;
        let excluded = task::excluded_rowids(&relation, &target);

        let mut state = self.state.write();
        // a concurrent creator may have won the race
        if let Some(existing) = state.tasks.values().find(|t| same(t)) {
            return Ok((existing.clone(), false));
        }
        state.dataset(req.dataset_id)?;
        let task = Task {
            task_id: next_id(&state.tasks),
            task_type: req.task_type,
            dataset_id: req.dataset_id,
            target,
            estimation,
            evaluation_measure: measure_name,
            splits: splits_sha,
            excluded_rowids: excluded,
            uploader: actor.user_id,
            uploaded_at: now(),
            deleted: false,
        };
        self.put(&mut state, "create", Entity::Task, task.task_id, &task, Some(actor.user_id))?;
        Ok((task, true))
    }

    pub fn get_task(&self, id: u64) -> Result<Task> {
        self.state.read().task(id).cloned()
    }

    pub fn list_tasks(&self, dataset_id: Option<u64>, page: &Page) -> Vec<Task> {
        let state = self.state.read();
        let matching = state.tasks.values().filter(|t| !t.deleted && dataset_id.is_none_or(|d| t.dataset_id == d));
        page.apply(matching.cloned())
    }

    pub fn task_splits_bytes(&self, id: u64) -> Result<Vec<u8>> {
        let task = self.get_task(id)?;
        self.blob(&task.splits)
    }

    pub fn task_splits(&self, id: u64) -> Result<SplitTable> {
        let bytes = self.task_splits_bytes(id)?;
        SplitTable::from_arff(&bytes).map_err(|e| RegistryError::Corrupt(e.to_string()))
    }

    // ---- runs ----

    /// Stores a run with its predictions and no evaluation yet.
    pub fn store_run(&self, api_key: &str, submission: RunSubmission, predictions: &[u8]) -> Result<Run> {
        let actor = self.authenticate(api_key)?;
        let flow = {
            let state = self.state.read();
            state.task(submission.task_id)?;
            state.flow(submission.flow_id)?.clone()
        };
        let mut settings = Vec::with_capacity(submission.parameter_settings.len());
        let mut seen = HashSet::new();
        for s in &submission.parameter_settings {
            let spec = flow
                .parameter(&s.name)
                .ok_or_else(|| invalid(format!("flow {} has no parameter '{}'", flow.flow_id, s.name)))?;
            if !seen.insert(s.name.as_str()) {
                return Err(invalid(format!("parameter '{}' given twice", s.name)));
            }
            settings.push(ParameterSetting { name: s.name.clone(), value: spec.coerce(&s.value).map_err(invalid)? });
        }
        if predictions.is_empty() {
            return Err(invalid("predictions file is empty"));
        }
        let sha = self.blobs.put(predictions)?;
        let mut state = self.state.write();
        state.task(submission.task_id)?;
        state.flow(submission.flow_id)?;
        let run = Run {
            run_id: next_id(&state.runs),
            task_id: submission.task_id,
            flow_id: submission.flow_id,
            uploader: actor.user_id,
            uploaded_at: now(),
            parameter_settings: settings,
            setting_origin: submission.setting_origin,
            predictions: sha,
            user_evaluations: submission.user_evaluations,
            hardware_note: submission.hardware_note,
            status: RunStatus::Pending,
            evaluation: None,
            error_report: None,
            deleted: false,
        };
        self.put(&mut state, "create", Entity::Run, run.run_id, &run, Some(actor.user_id))?;
        Ok(run)
    }

    /// Attaches the server evaluation outcome to a pending run.
    pub fn record_evaluation(&self, run_id: u64, outcome: std::result::Result<EvaluationResult, String>) -> Result<Run> {
        let mut state = self.state.write();
        let mut run = state.run(run_id)?.clone();
        match outcome {
            Ok(result) => {
                run.status = RunStatus::Evaluated;
                run.evaluation = Some(result);
                run.error_report = None;
            }
            Err(report) => {
                run.status = RunStatus::Failed;
                run.evaluation = None;
                run.error_report = Some(report);
            }
        }
        self.put(&mut state, "evaluate", Entity::Run, run_id, &run, None)?;
        Ok(run)
    }

    pub fn get_run(&self, id: u64) -> Result<Run> {
        self.state.read().run(id).cloned()
    }

    pub fn list_runs(&self, filter: &RunFilter) -> Vec<Run> {
        let state = self.state.read();
        let matching = state.live_runs().filter(|r| {
            filter.task_id.is_none_or(|t| r.task_id == t)
                && filter.flow_id.is_none_or(|f| r.flow_id == f)
                && filter.uploader.is_none_or(|u| r.uploader == u)
        });
        filter.page.apply(matching.cloned())
    }

    pub fn run_predictions(&self, id: u64) -> Result<Vec<u8>> {
        let run = self.get_run(id)?;
        self.blob(&run.predictions)
    }

    // ---- deletion ----

    fn check_owner(actor: &User, uploader: u64) -> Result<()> {
        if actor.admin || actor.user_id == uploader {
            Ok(())
        } else {
            Err(RegistryError::Forbidden("only the uploader or an admin may delete this".into()))
        }
    }

    pub fn delete_dataset(&self, api_key: &str, id: u64) -> Result<()> {
        let mut state = self.state.write();
        let actor = state.user_by_key(api_key).cloned().ok_or(RegistryError::Auth)?;
        let mut d = state.dataset(id)?.clone();
        Self::check_owner(&actor, d.uploader)?;
        if let Some(t) = state.tasks.values().find(|t| !t.deleted && t.dataset_id == id) {
            return Err(RegistryError::DeleteConflict(format!("dataset {id} is used by task {}", t.task_id)));
        }
        d.deleted = true;
        self.put(&mut state, "delete", Entity::Dataset, id, &d, Some(actor.user_id))
    }

    pub fn delete_flow(&self, api_key: &str, id: u64) -> Result<()> {
        let mut state = self.state.write();
        let actor = state.user_by_key(api_key).cloned().ok_or(RegistryError::Auth)?;
        let mut f = state.flow(id)?.clone();
        Self::check_owner(&actor, f.uploader)?;
        if let Some(r) = state.live_runs().find(|r| r.flow_id == id) {
            return Err(RegistryError::DeleteConflict(format!("flow {id} is used by run {}", r.run_id)));
        }
        f.deleted = true;
        self.put(&mut state, "delete", Entity::Flow, id, &f, Some(actor.user_id))
    }

    pub fn delete_task(&self, api_key: &str, id: u64) -> Result<()> {
        let mut state = self.state.write();
        let actor = state.user_by_key(api_key).cloned().ok_or(RegistryError::Auth)?;
        let mut t = state.task(id)?.clone();
        Self::check_owner(&actor, t.uploader)?;
        if let Some(r) = state.live_runs().find(|r| r.task_id == id) {
            return Err(RegistryError::DeleteConflict(format!("task {id} is used by run {}", r.run_id)));
        }
        t.deleted = true;
        self.put(&mut state, "delete", Entity::Task, id, &t, Some(actor.user_id))
    }

    pub fn delete_run(&self, api_key: &str, id: u64) -> Result<()> {
        let mut state = self.state.write();
        let actor = state.user_by_key(api_key).cloned().ok_or(RegistryError::Auth)?;
        let mut r = state.run(id)?.clone();
        Self::check_owner(&actor, r.uploader)?;
        r.deleted = true;
        self.put(&mut state, "delete", Entity::Run, id, &r, Some(actor.user_id))
    }
}

#[cfg(test)]
mod tests;
