use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query as AxumQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Deserialize;
use serde_json::{json, Value};

use openml_lite_core::eval::predictions::MAX_PREDICTION_BYTES;
use openml_lite_core::registry::{
    DatasetFilter, DatasetMeta, DatasetStatus, FlowMeta, Page, RegistryError, RunFilter, RunSubmission, TaskRequest,
};
use openml_lite_core::service::ApiError;
use openml_lite_core::task::{render_task_description, task_types, DescriptionFormat};

use crate::{AppState, API_KEY_HEADER, MAX_DATASET_BYTES};

/// Multipart framing overhead allowed on top of the payload caps.
const FORM_OVERHEAD: usize = 1024 * 1024;

#[derive(Debug)]
pub struct HttpError {
    status: StatusCode,
    body: Value,
}

impl HttpError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        HttpError { status, body: json!({ "error": kind, "message": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        HttpError::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn too_large(what: &str, limit: usize) -> Self {
        HttpError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", format!("{what} exceeds {limit} bytes"))
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut body = json!({ "error": e.kind(), "message": e.to_string() });
        match &e {
            ApiError::Evaluation { run_id, error } => {
                body["run_id"] = json!(run_id);
                body["detail"] = serde_json::to_value(error).unwrap_or(Value::Null);
            }
            ApiError::Query(q) => body["detail"] = serde_json::to_value(q).unwrap_or(Value::Null),
            ApiError::Registry(RegistryError::Io(_) | RegistryError::Corrupt(_)) => {
                tracing::error!("{e}");
            }
            _ => {}
        }
        HttpError { status, body }
    }
}

impl From<RegistryError> for HttpError {
    fn from(e: RegistryError) -> Self {
        ApiError::from(e).into()
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body)).into_response()
    }
}

type HttpResult<T> = Result<T, HttpError>;

/// JSON body/response with rejections rendered in the API error shape.
#[derive(Debug, FromRequest)]
#[from_request(via(axum::Json), rejection(HttpError))]
struct Json<T>(T);

impl<T: serde::Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

impl From<JsonRejection> for HttpError {
    fn from(r: JsonRejection) -> Self {
        let status = r.status();
        let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "PayloadTooLarge"
        } else if status == StatusCode::UNPROCESSABLE_ENTITY {
            "ValidationError"
        } else {
            "BadRequest"
        };
        HttpError::new(status, kind, r.body_text())
    }
}

#[derive(Debug, FromRequestParts)]
#[from_request(via(AxumQuery), rejection(HttpError))]
struct Query<T>(T);

impl From<QueryRejection> for HttpError {
    fn from(r: QueryRejection) -> Self {
        HttpError::bad_request(r.body_text())
    }
}

fn api_key(headers: &HeaderMap) -> HttpResult<String> {
    headers
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| HttpError::new(StatusCode::UNAUTHORIZED, "AuthError", "missing X-API-Key header"))
}

/// Runs registry work (file IO, fsync, parsing) off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, HttpError> + Send + 'static) -> HttpResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, "InternalError", e.to_string()))?
}

fn json_value<T: serde::Serialize>(v: &T) -> Json<Value> {
    Json(serde_json::to_value(v).expect("entities serialize"))
}

fn arff_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], bytes).into_response()
}

fn multipart_error(e: MultipartError, what: &str, limit: usize) -> HttpError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        HttpError::too_large(what, limit)
    } else {
        HttpError::bad_request(format!("malformed multipart body: {}", e.body_text()))
    }
}

/// Reads all fields into memory, enforcing a per-field cap.
async fn read_form(mut form: Multipart, what: &str, limit: usize) -> HttpResult<Vec<(String, Bytes)>> {
    let mut fields = Vec::new();
    while let Some(field) = form.next_field().await.map_err(|e| multipart_error(e, what, limit))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| multipart_error(e, what, limit))?;
        if bytes.len() > limit {
            return Err(HttpError::too_large(what, limit));
        }
        fields.push((name, bytes));
    }
    Ok(fields)
}

fn take_field(fields: &mut Vec<(String, Bytes)>, name: &str) -> Option<Bytes> {
    let i = fields.iter().position(|(n, _)| n == name)?;
    Some(fields.remove(i).1)
}

fn parse_description<T: serde::de::DeserializeOwned>(bytes: Option<Bytes>) -> HttpResult<T> {
    let bytes = bytes.ok_or_else(|| HttpError::bad_request("missing 'description' part"))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| HttpError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationError", format!("description: {e}")))
}

#[derive(Debug, Deserialize)]
struct ListParams {
    filter: Option<String>,
    status: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
    task_id: Option<u64>,
    flow_id: Option<u64>,
    dataset_id: Option<u64>,
    uploader: Option<u64>,
}

impl ListParams {
    fn page(&self) -> Page {
        Page { offset: self.offset.unwrap_or(0), limit: self.limit }
    }
}

async fn task_types_handler() -> Json<Value> {
    json_value(&task_types())
}

async fn upload_data(State(state): State<AppState>, headers: HeaderMap, form: Multipart) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let mut fields = read_form(form, "dataset", MAX_DATASET_BYTES).await?;
    let meta: DatasetMeta = parse_description(take_field(&mut fields, "description"))?;
    let file = take_field(&mut fields, "dataset");
    let registry = state.registry().clone();
    let dataset = blocking(move || Ok(registry.upload_dataset(&key, meta, file.as_deref())?)).await?;
    let registry = state.registry().clone();
    let id = dataset.dataset_id;
    tokio::task::spawn_blocking(move || {
        if let Err(e) = registry.activate_dataset(id) {
            tracing::error!("activating dataset {id}: {e}");
        }
    });
    Ok(json_value(&dataset))
}

async fn list_data(State(state): State<AppState>, Query(p): Query<ListParams>) -> HttpResult<Json<Value>> {
    let status = match &p.status {
        Some(s) => Some(DatasetStatus::parse(s).ok_or_else(|| HttpError::bad_request(format!("unknown status '{s}'")))?),
        None => None,
    };
    let filter = DatasetFilter { keyword: p.filter.clone(), status, page: p.page() };
    Ok(json_value(&state.registry().list_datasets(&filter)))
}

async fn get_data(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.registry().get_dataset(id)?))
}

async fn delete_data(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    blocking(move || Ok(registry.delete_dataset(&key, id)?)).await?;
    Ok(Json(json!({ "dataset_id": id, "deleted": true })))
}

async fn get_qualities(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let d = state.registry().get_dataset(id)?;
    match d.qualities {
        Some(q) => Ok(Json(json!({ "dataset_id": id, "qualities": q }))),
        None => Err(HttpError::from(RegistryError::Validation(format!(
            "dataset {id} has no qualities (status {})",
            d.status.as_str()
        )))),
    }
}

async fn get_data_file(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Response> {
    let registry = state.registry().clone();
    Ok(arff_response(blocking(move || Ok(registry.dataset_bytes(id)?)).await?))
}

async fn upload_flow(State(state): State<AppState>, headers: HeaderMap, Json(meta): Json<FlowMeta>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    let flow = blocking(move || Ok(registry.upload_flow(&key, meta)?)).await?;
    Ok(json_value(&flow))
}

async fn list_flows(State(state): State<AppState>, Query(p): Query<ListParams>) -> Json<Value> {
    json_value(&state.registry().list_flows(p.filter.as_deref(), &p.page()))
}

async fn get_flow(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.registry().get_flow(id)?))
}

async fn delete_flow(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    blocking(move || Ok(registry.delete_flow(&key, id)?)).await?;
    Ok(Json(json!({ "flow_id": id, "deleted": true })))
}

async fn create_task(State(state): State<AppState>, headers: HeaderMap, Json(req): Json<TaskRequest>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    let (task, created) = blocking(move || Ok(registry.create_task(&key, req)?)).await?;
    let mut body = serde_json::to_value(&task).expect("task serializes");
    body["created"] = json!(created);
    Ok(Json(body))
}

async fn list_tasks(State(state): State<AppState>, Query(p): Query<ListParams>) -> Json<Value> {
    json_value(&state.registry().list_tasks(p.dataset_id, &p.page()))
}

#[derive(Debug, Deserialize)]
struct FormatParam {
    format: Option<String>,
}

async fn get_task(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Query(q): Query<FormatParam>,
) -> HttpResult<Response> {
    let format = match q.format.as_deref() {
        Some(f) => DescriptionFormat::parse(f).ok_or_else(|| HttpError::bad_request(format!("unknown format '{f}'")))?,
        None => {
            let accept = headers.get(header::ACCEPT).and_then(|v| v.to_str().ok()).unwrap_or("");
            if accept.contains("xml") && !accept.contains("json") {
                DescriptionFormat::Xml
            } else {
                DescriptionFormat::Json
            }
        }
    };
    let task = state.registry().get_task(id)?;
    let content_type = match format {
        DescriptionFormat::Xml => "application/xml",
        DescriptionFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], render_task_description(&task, format)).into_response())
}

async fn get_splits(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Response> {
    let registry = state.registry().clone();
    Ok(arff_response(blocking(move || Ok(registry.task_splits_bytes(id)?)).await?))
}

async fn delete_task(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    blocking(move || Ok(registry.delete_task(&key, id)?)).await?;
    Ok(Json(json!({ "task_id": id, "deleted": true })))
}

async fn submit_run(State(state): State<AppState>, headers: HeaderMap, form: Multipart) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let mut fields = read_form(form, "predictions", MAX_PREDICTION_BYTES).await?;
    let submission: RunSubmission = parse_description(take_field(&mut fields, "description"))?;
    let predictions = take_field(&mut fields, "predictions")
        .ok_or_else(|| HttpError::bad_request("missing 'predictions' part"))?;
    let _permit = state.eval_permits.clone().acquire_owned().await.expect("semaphore is never closed");
    let service = state.service.clone();
    let summary = blocking(move || Ok(service.submit_run(&key, submission, &predictions)?)).await?;
    Ok(json_value(&summary))
}

async fn list_runs(State(state): State<AppState>, Query(p): Query<ListParams>) -> Json<Value> {
    let filter = RunFilter { task_id: p.task_id, flow_id: p.flow_id, uploader: p.uploader, page: p.page() };
    json_value(&state.registry().list_runs(&filter))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.registry().get_run(id)?))
}

async fn get_run_predictions(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Response> {
    let registry = state.registry().clone();
    Ok(arff_response(blocking(move || Ok(registry.run_predictions(id)?)).await?))
}

async fn delete_run(State(state): State<AppState>, headers: HeaderMap, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    blocking(move || Ok(registry.delete_run(&key, id)?)).await?;
    Ok(Json(json!({ "run_id": id, "deleted": true })))
}

#[derive(Debug, Deserialize)]
struct ResultParams {
    measure: Option<String>,
    color_parameter: Option<String>,
}

async fn task_results(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<ResultParams>,
) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.service.aggregate_task_results(id, q.measure.as_deref())?))
}

async fn flow_results(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    Query(q): Query<ResultParams>,
) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.service.aggregate_flow_results(id, q.measure.as_deref(), q.color_parameter.as_deref())?))
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    sql: String,
}

async fn run_query(State(state): State<AppState>, Json(body): Json<QueryBody>) -> HttpResult<Json<Value>> {
    Ok(json_value(&state.service.execute_query(&body.sql)?))
}

#[derive(Debug, Deserialize)]
struct NewUser {
    display_name: String,
}

async fn create_user(State(state): State<AppState>, headers: HeaderMap, Json(body): Json<NewUser>) -> HttpResult<Json<Value>> {
    let key = api_key(&headers)?;
    let registry = state.registry().clone();
    let (user, new_key) = blocking(move || Ok(registry.create_user(&key, &body.display_name)?)).await?;
    Ok(Json(json!({ "user_id": user.user_id, "display_name": user.display_name, "api_key": new_key })))
}

async fn get_user(State(state): State<AppState>, Path(id): Path<u64>) -> HttpResult<Json<Value>> {
    let u = state.registry().get_user(id)?;
    Ok(Json(json!({
        "user_id": u.user_id,
        "display_name": u.display_name,
        "admin": u.admin,
        "created_at": u.created_at,
    })))
}

async fn whoami(State(state): State<AppState>, headers: HeaderMap) -> HttpResult<Json<Value>> {
    let user = state.registry().authenticate(&api_key(&headers)?)?;
    Ok(Json(json!({ "user_id": user.user_id, "display_name": user.display_name, "admin": user.admin })))
}

async fn not_found() -> HttpError {
    HttpError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/tasktypes", get(task_types_handler))
        .route(
            "/data",
            post(upload_data).layer(DefaultBodyLimit::max(MAX_DATASET_BYTES + FORM_OVERHEAD)).get(list_data),
        )
        .route("/data/{id}", get(get_data).delete(delete_data))
        .route("/data/{id}/qualities", get(get_qualities))
        .route("/data/{id}/file", get(get_data_file))
        .route("/flow", post(upload_flow).get(list_flows))
        .route("/flow/{id}", get(get_flow).delete(delete_flow))
        .route("/flow/{id}/results", get(flow_results))
        .route("/task", post(create_task).get(list_tasks))
        .route("/task/{id}", get(get_task).delete(delete_task))
        .route("/task/{id}/splits", get(get_splits))
        .route("/task/{id}/results", get(task_results))
        .route(
            "/run",
            post(submit_run).layer(DefaultBodyLimit::max(MAX_PREDICTION_BYTES + FORM_OVERHEAD)).get(list_runs),
        )
        .route("/run/{id}", get(get_run).delete(delete_run))
        .route("/run/{id}/predictions", get(get_run_predictions))
        .route("/query", post(run_query))
        .route("/user", post(create_user))
        .route("/user/me", get(whoami))
        .route("/user/{id}", get(get_user))
        .fallback(not_found);
    Router::new().nest("/api/v1", api).fallback(not_found).with_state(state)
}
