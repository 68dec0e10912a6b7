//! Operations behind the HTTP API that span several modules: the run
//! submission pipeline, result aggregation and the query endpoint.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, EvaluationResult, Headline};
use crate::query::{self, QueryError, Table};
use crate::registry::{Registry, RegistryError, Run, RunStatus, RunSubmission};

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{error}")]
    Evaluation { run_id: u64, error: EvalError },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{0}")]
    BadRequest(String),
    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    TooLarge { size: usize, limit: usize },
}

impl ApiError {
    /// The HTTP status code this error maps to.
    pub fn status(&self) -> u16 {
        match self {
            ApiError::Registry(e) => match e {
                RegistryError::Auth => 401,
                RegistryError::Forbidden(_) => 403,
                RegistryError::NotFound { .. } => 404,
                RegistryError::Validation(_) | RegistryError::TooFewInstances { .. } => 422,
                RegistryError::DeleteConflict(_) => 409,
                RegistryError::Io(_) | RegistryError::Corrupt(_) => 500,
            },
            ApiError::Evaluation { .. } => 422,
            ApiError::Query(QueryError::Forbidden { .. }) => 403,
            ApiError::Query(_) => 400,
            ApiError::BadRequest(_) => 400,
            ApiError::TooLarge { .. } => 413,
        }
    }

    /// Short machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            ApiError::Registry(e) => match e {
                RegistryError::Auth => "AuthError",
                RegistryError::Forbidden(_) => "Forbidden",
                RegistryError::NotFound { .. } => "NotFound",
                RegistryError::Validation(_) => "ValidationError",
                RegistryError::TooFewInstances { .. } => "TooFewInstances",
                RegistryError::DeleteConflict(_) => "DeleteConflict",
                RegistryError::Io(_) | RegistryError::Corrupt(_) => "InternalError",
            },
            ApiError::Evaluation { error, .. } => match error {
                EvalError::Coverage { .. } => "CoverageError",
                EvalError::Label { .. } => "LabelError",
                EvalError::Consistency { .. } => "ConsistencyError",
                EvalError::Schema { .. } => "PredictionFileError",
                EvalError::Dataset { .. } => "DatasetError",
            },
            ApiError::Query(e) => match e {
                QueryError::Parse { .. } => "ParseError",
                QueryError::UnknownView { .. } => "UnknownView",
                QueryError::UnknownColumn { .. } => "UnknownColumn",
                QueryError::Type { .. } => "TypeError",
                QueryError::Forbidden { .. } => "Forbidden",
            },
            ApiError::BadRequest(_) => "BadRequest",
            ApiError::TooLarge { .. } => "PayloadTooLarge",
        }
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub mean: f64,
    pub std: Option<f64>,
}

/// Response to a successful run upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u64,
    pub uploader: u64,
    pub status: RunStatus,
    pub headline: Option<Headline>,
    pub measures: BTreeMap<String, MeasureSummary>,
}

impl RunSummary {
    pub fn from_run(run: &Run) -> Self {
        let measures = run
            .evaluation
            .iter()
            .flat_map(|e| e.measures.iter())
            .map(|(k, v)| (k.clone(), MeasureSummary { mean: v.mean, std: v.std }))
            .collect();
        RunSummary {
            run_id: run.run_id,
            uploader: run.uploader,
            status: run.status,
            headline: run.evaluation.as_ref().and_then(|e| e.headline.clone()),
            measures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub run_id: u64,
    pub value: f64,
    pub color: Option<serde_json::Value>,
    pub uploader: u64,
    pub uploaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSeries {
    /// "flow" or "task".
    pub group_by: String,
    pub key: u64,
    pub label: String,
    pub measure: String,
    pub best: f64,
    pub points: Vec<Point>,
}

pub struct Service {
    registry: Arc<Registry>,
    claimed: Mutex<HashSet<u64>>,
}

impl Service {
    pub fn new(registry: Arc<Registry>) -> Self {
        Service { registry, claimed: Mutex::new(HashSet::new()) }
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Stores and evaluates a run. Evaluation failures leave the run stored
    /// with an error report and come back as [`ApiError::Evaluation`].
    pub fn submit_run(&self, api_key: &str, submission: RunSubmission, predictions: &[u8]) -> ApiResult<RunSummary> {
        if predictions.len() > eval::predictions::MAX_PREDICTION_BYTES {
            return Err(ApiError::TooLarge { size: predictions.len(), limit: eval::predictions::MAX_PREDICTION_BYTES });
        }
        let run = self.registry.store_run(api_key, submission, predictions)?;
        let (run, error) = self.evaluate_once(run.run_id)?;
        match error {
            Some(error) => Err(ApiError::Evaluation { run_id: run.run_id, error }),
            None => Ok(RunSummary::from_run(&run)),
        }
    }

    /// Recomputes the evaluation of a stored run from its stored inputs.
    pub fn compute_evaluation(&self, run: &Run) -> Result<EvaluationResult, EvalError> {
        let task = self.registry.get_task(run.task_id).map_err(|e| EvalError::Dataset { message: e.to_string() })?;
        let relation = self.registry.dataset_relation(task.dataset_id).map_err(|e| EvalError::Dataset { message: e.to_string() })?;
        let splits = self.registry.task_splits(task.task_id).map_err(|e| EvalError::Dataset { message: e.to_string() })?;
        let bytes = self.registry.run_predictions(run.run_id).map_err(|e| EvalError::Schema { message: e.to_string() })?;
        let labels: Vec<String> =
            relation.attribute(&task.target).and_then(|a| a.labels()).map(<[String]>::to_vec).unwrap_or_default();
        let predictions = eval::parse_predictions(&bytes, task.task_type, &labels)?;
        eval::evaluate_run(&task, &relation, &splits, &predictions)
    }

    /// Evaluates a pending run once. Runs already evaluated, failed, or being
    /// evaluated by another worker are returned as they are.
    pub fn evaluate_stored(&self, run_id: u64) -> ApiResult<Run> {
        Ok(self.evaluate_once(run_id)?.0)
    }

    fn evaluate_once(&self, run_id: u64) -> ApiResult<(Run, Option<EvalError>)> {
        let run = self.registry.get_run(run_id)?;
        if run.status != RunStatus::Pending || !self.claimed.lock().insert(run_id) {
            return Ok((run, None));
        }
        let outcome = self.compute_evaluation(&run);
        let (stored, error) = match outcome {
            Ok(result) => (Ok(result), None),
            Err(e) => (Err(e.to_string()), Some(e)),
        };
        let result = self.registry.record_evaluation(run_id, stored);
        self.claimed.lock().remove(&run_id);
        Ok((result?, error))
    }

    /// Finishes work interrupted by a restart: pending runs and datasets in preparation.
    pub fn recover(&self) -> ApiResult<()> {
        let (pending_runs, pending_datasets): (Vec<u64>, Vec<u64>) = self.registry.read(|s| {
            (
                s.live_runs().filter(|r| r.status == RunStatus::Pending).map(|r| r.run_id).collect(),
                s.datasets
                    .values()
                    .filter(|d| !d.deleted && d.status == crate::registry::DatasetStatus::InPreparation)
                    .map(|d| d.dataset_id)
                    .collect(),
            )
        });
        for id in pending_datasets {
            self.registry.activate_dataset(id)?;
        }
        for id in pending_runs {
            self.evaluate_stored(id)?;
        }
        Ok(())
    }

    fn check_measure(name: &str) -> ApiResult<&'static eval::MeasureSpec> {
        eval::measure(name).ok_or_else(|| ApiError::BadRequest(format!("unknown measure '{name}'")))
    }

    /// One series per flow with runs on the task, in leaderboard order.
    pub fn aggregate_task_results(&self, task_id: u64, measure: Option<&str>) -> ApiResult<Vec<ComparisonSeries>> {
        let task = self.registry.get_task(task_id)?;
        let measure = measure.unwrap_or(&task.evaluation_measure).to_string();
        let spec = Self::check_measure(&measure)?;
        let series = self.registry.read(|state| {
            let mut by_flow: BTreeMap<u64, Vec<Point>> = BTreeMap::new();
            for run in state.live_runs().filter(|r| r.task_id == task_id && r.status == RunStatus::Evaluated) {
                if let Some(v) = run.evaluation.as_ref().and_then(|e| e.measures.get(&measure)) {
                    by_flow.entry(run.flow_id).or_default().push(Point {
                        run_id: run.run_id,
                        value: v.mean,
                        color: None,
                        uploader: run.uploader,
                        uploaded_at: run.uploaded_at,
                    });
                }
            }
            by_flow
                .into_iter()
                .map(|(flow_id, points)| {
                    let label = state.flows.get(&flow_id).map_or_else(String::new, |f| format!("{} v{}", f.name, f.version));
                    series_with_best("flow", flow_id, label, &measure, points, spec.higher_is_better)
                })
                .collect::<Vec<_>>()
        });
        Ok(leaderboard_order(series, spec.higher_is_better))
    }

    /// One series per task the flow has runs on, ordered by task id. Each
    /// point carries the run's value of `color_parameter`, or the flow's
    /// default when the run did not set it.
    pub fn aggregate_flow_results(
        &self,
        flow_id: u64,
        measure: Option<&str>,
        color_parameter: Option<&str>,
    ) -> ApiResult<Vec<ComparisonSeries>> {
        let flow = self.registry.get_flow(flow_id)?;
        if let Some(m) = measure {
            Self::check_measure(m)?;
        }
        let color_spec = match color_parameter {
            Some(p) => Some(
                flow.parameter(p)
                    .ok_or_else(|| ApiError::BadRequest(format!("flow {flow_id} has no parameter '{p}'")))?
                    .clone(),
            ),
            None => None,
        };
        let series = self.registry.read(|state| {
            let mut by_task: BTreeMap<u64, (String, Vec<Point>)> = BTreeMap::new();
            for run in state.live_runs().filter(|r| r.flow_id == flow_id && r.status == RunStatus::Evaluated) {
                let Some(task) = state.tasks.get(&run.task_id) else { continue };
                let m = measure.unwrap_or(&task.evaluation_measure);
                let Some(v) = run.evaluation.as_ref().and_then(|e| e.measures.get(m)) else { continue };
                let color = color_spec
                    .as_ref()
                    .and_then(|spec| run.parameter_value(&spec.name).cloned().or_else(|| spec.default.clone()));
                let entry = by_task.entry(run.task_id).or_insert_with(|| (m.to_string(), Vec::new()));
                entry.1.push(Point { run_id: run.run_id, value: v.mean, color, uploader: run.uploader, uploaded_at: run.uploaded_at });
            }
            by_task
                .into_iter()
                .map(|(task_id, (m, points))| {
                    let higher = eval::measure(&m).is_none_or(|s| s.higher_is_better);
                    series_with_best("task", task_id, format!("task {task_id}"), &m, points, higher)
                })
                .collect::<Vec<_>>()
        });
        Ok(series)
    }

    pub fn execute_query(&self, sql: &str) -> ApiResult<Table> {
        let spec = query::parse(sql)?;
        Ok(self.registry.read(|state| query::execute(&spec, state)))
    }
}

fn better(a: f64, b: f64, higher_is_better: bool) -> bool {
    if higher_is_better {
        a > b
    } else {
        a < b
    }
}

fn series_with_best(group_by: &str, key: u64, label: String, measure: &str, points: Vec<Point>, higher: bool) -> ComparisonSeries {
    let best = points.iter().map(|p| p.value).fold(None, |acc: Option<f64>, v| match acc {
        Some(b) if !better(v, b, higher) => Some(b),
        _ => Some(v),
    });
    ComparisonSeries {
        group_by: group_by.into(),
        key,
        label,
        measure: measure.into(),
        best: best.unwrap_or(f64::NAN),
        points,
    }
}

/// Best value first; ties go to the series whose best run was uploaded
/// earlier, then to the lower run id.
fn leaderboard_order(mut series: Vec<ComparisonSeries>, higher: bool) -> Vec<ComparisonSeries> {
    let best_run = |s: &ComparisonSeries| {
        s.points
            .iter()
            .filter(|p| p.value == s.best)
            .map(|p| (p.uploaded_at, p.run_id))
            .min()
            .expect("series have points")
    };
    series.sort_by(|a, b| {
        let by_value = if higher { b.best.total_cmp(&a.best) } else { a.best.total_cmp(&b.best) };
        by_value.then_with(|| best_run(a).cmp(&best_run(b)))
    });
    series
}
