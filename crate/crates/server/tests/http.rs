use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use openml_lite_core::arff::{parse_arff, write_arff, AttributeSpec, Cell, Relation, Row};
use openml_lite_core::eval;
use openml_lite_core::learners::{predict_splits, LearnerKind, LearningProblem};
use openml_lite_core::registry::RegistryConfig;
use openml_lite_core::task::{SplitTable, TaskTypeId};
use openml_lite_server::{open_store, spawn, ServerConfig};
use reqwest::multipart::{Form, Part};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Server {
    _dir: tempfile::TempDir,
    base: String,
    key: String,
    client: Client,
}

async fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig {
        registry: RegistryConfig { sync: false, ..RegistryConfig::default() },
        eval_workers: 2,
        allow_file_urls: false,
    };
    let path = dir.path().to_path_buf();
    let started = tokio::task::spawn_blocking(move || open_store(&path, config)).await.unwrap().unwrap();
    let addr: SocketAddr = spawn("127.0.0.1:0".parse().unwrap(), started.state).await.unwrap();
    Server {
        _dir: dir,
        base: format!("http://{addr}/api/v1"),
        key: started.bootstrap_key.expect("fresh store has a bootstrap key"),
        client: Client::new(),
    }
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn get_text(&self, path: &str) -> (StatusCode, String) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status(), r.text().await.unwrap())
    }

    async fn post_json(&self, path: &str, body: &Value, key: Option<&str>) -> (StatusCode, Value) {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(k) = key {
            req = req.header("X-API-Key", k);
        }
        let r = req.send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post_form(&self, path: &str, form: Form, key: Option<&str>) -> (StatusCode, Value) {
        let mut req = self.client.post(self.url(path)).multipart(form);
        if let Some(k) = key {
            req = req.header("X-API-Key", k);
        }
        let r = req.send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn upload_dataset(&self, name: &str, arff: String) -> u64 {
        let meta = json!({ "name": name, "licence": "CC0", "default_target": "class" });
        let form = Form::new()
            .text("description", meta.to_string())
            .part("dataset", Part::bytes(arff.into_bytes()).file_name("d.arff"));
        let (status, body) = self.post_form("/data", form, Some(&self.key)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let id = body["dataset_id"].as_u64().unwrap();
        for _ in 0..200 {
            let (_, d) = self.get(&format!("/data/{id}")).await;
            match d["status"].as_str() {
                Some("active") => return id,
                Some("error") => panic!("activation failed: {d}"),
                _ => tokio::time::sleep(Duration::from_millis(20)).await,
            }
        }
        panic!("dataset {id} never activated");
    }

    async fn register_flow(&self, name: &str) -> u64 {
        let meta = json!({
            "name": name,
            "licence": "MIT",
            "source_code": "builtin",
            "parameters": [{ "name": "k", "data_type": "integer", "default": 1 }],
            "annotations": { "handles_missing": true, "handles_nominal": true, "handles_numeric": true },
        });
        let (status, body) = self.post_json("/flow", &meta, Some(&self.key)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["flow_id"].as_u64().unwrap()
    }

    async fn create_task(&self, dataset_id: u64) -> u64 {
        let req = json!({
            "task_type": "supervised_classification",
            "dataset_id": dataset_id,
            "estimation_procedure": { "type": "crossvalidation", "folds": 3, "repeats": 1, "stratified": true, "seed": 7 },
        });
        let (status, body) = self.post_json("/task", &req, Some(&self.key)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body["task_id"].as_u64().unwrap()
    }

    async fn submit(&self, task_id: u64, flow_id: u64, params: Value, predictions: String) -> (StatusCode, Value) {
        let desc = json!({ "task_id": task_id, "flow_id": flow_id, "parameter_settings": params });
        let form = Form::new()
            .text("description", desc.to_string())
            .part("predictions", Part::bytes(predictions.into_bytes()).file_name("p.arff"));
        self.post_form("/run", form, Some(&self.key)).await
    }
}

fn dataset() -> Relation {
    let attributes =
        vec![AttributeSpec::numeric("x"), AttributeSpec::numeric("noise"), AttributeSpec::nominal("class", ["lo", "hi"])];
    let rows = (0..30)
        .map(|i| {
            let hi = i % 3 == 0;
            let x = if hi { 10.0 + i as f64 * 0.1 } else { i as f64 * 0.1 };
            Row::new(vec![
                Cell::Number(x),
                Cell::Number((i as f64 * 2.1).sin()),
                Cell::Text(if hi { "hi" } else { "lo" }.into()),
            ])
        })
        .collect();
    Relation { name: "two_clouds".into(), attributes, rows }
}

/// Builds a predictions file exactly the way a client would: from the
/// downloaded dataset and split files only.
async fn client_predictions(s: &Server, task_id: u64, learner: LearnerKind, k: Option<i64>) -> String {
    let (_, task) = s.get(&format!("/task/{task_id}")).await;
    let (_, data) = s.get_text(task["dataset_url"].as_str().unwrap().trim_start_matches("/api/v1")).await;
    let (_, splits) = s.get_text(&format!("/task/{task_id}/splits")).await;
    let relation = parse_arff(data.as_bytes()).unwrap();
    let splits = SplitTable::from_arff(splits.as_bytes()).unwrap();
    let problem = LearningProblem::new(&relation, task["target_feature"].as_str().unwrap(), &[]).unwrap();
    let params: BTreeMap<String, i64> = k.map(|k| ("k".to_string(), k)).into_iter().collect();
    let records = predict_splits(&problem, &splits, learner.build_with(&params).unwrap().as_ref()).unwrap();
    eval::write_predictions(TaskTypeId::SupervisedClassification, &problem.classes, &records)
}

#[tokio::test(flavor = "multi_thread")]
async fn dataset_lifecycle_and_downloads() {
    let s = start().await;
    let arff = write_arff(&dataset());
    let id = s.upload_dataset("clouds", arff.clone()).await;

    let (status, d) = s.get(&format!("/data/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(d["version"], 1);
    assert_eq!(d["qualities"]["NumberOfInstances"], 30.0);
    let (_, q) = s.get(&format!("/data/{id}/qualities")).await;
    assert_eq!(q["qualities"]["NumberOfClasses"], 2.0);
    let (status, file) = s.get_text(&format!("/data/{id}/file")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(file, arff);

    let id2 = s.upload_dataset("clouds", arff).await;
    let (_, d2) = s.get(&format!("/data/{id2}")).await;
    assert_eq!(d2["version"], 2);
    let (_, list) = s.get("/data?filter=clouds&limit=1").await;
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (status, body) = s.get("/data/999").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NotFound");
}

#[tokio::test(flavor = "multi_thread")]
async fn broken_dataset_ends_in_error_status() {
    let s = start().await;
    let meta = json!({ "name": "bad", "licence": "CC0" });
    let form = Form::new().text("description", meta.to_string()).text("dataset", "@relation r\n@data\n1,2\n");
    let (status, body) = s.post_form("/data", form, Some(&s.key)).await;
    assert_eq!(status, StatusCode::OK);
    let id = body["dataset_id"].as_u64().unwrap();
    let mut last = Value::Null;
    for _ in 0..100 {
        let (_, d) = s.get(&format!("/data/{id}")).await;
        if d["status"] == "error" {
            last = d;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(last["status"], "error");
    assert!(!last["error_reason"].as_str().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn writes_require_a_valid_key() {
    let s = start().await;
    let meta = json!({ "name": "f", "licence": "MIT" });
    let (status, body) = s.post_json("/flow", &meta, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"], "AuthError");
    let (status, _) = s.post_json("/flow", &meta, Some("not-a-key")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let (status, user) = s.post_json("/user", &json!({ "display_name": "ana" }), Some(&s.key)).await;
    assert_eq!(status, StatusCode::OK);
    let ana = user["api_key"].as_str().unwrap().to_string();
    let (status, _) = s.post_json("/user", &json!({ "display_name": "bob" }), Some(&ana)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, me) = s.get("/user/2").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(me["display_name"], "ana");
    assert!(me.get("api_key_sha256").is_none());
}

#[tokio::test(flavor = "multi_thread")]
async fn task_descriptions_and_splits() {
    let s = start().await;
    let d = s.upload_dataset("clouds", write_arff(&dataset())).await;
    let t = s.create_task(d).await;
    let req = json!({ "task_type": 1, "dataset_id": d,
        "estimation_procedure": { "type": "crossvalidation", "folds": 3, "repeats": 1, "stratified": true, "seed": 7 } });
    let (_, again) = s.post_json("/task", &req, Some(&s.key)).await;
    assert_eq!(again["task_id"], t);
    assert_eq!(again["created"], false);

    let (status, xml) = s.get_text(&format!("/task/{t}?format=xml")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(xml.contains("<oml:task"), "{xml}");
    let (_, desc) = s.get(&format!("/task/{t}")).await;
    assert_eq!(desc["target_feature"], "class");
    assert_eq!(desc["evaluation_measure"], "predictive_accuracy");

    let (_, a) = s.get_text(&format!("/task/{t}/splits")).await;
    let (_, b) = s.get_text(&format!("/task/{t}/splits")).await;
    assert_eq!(a, b);
    let table = SplitTable::from_arff(a.as_bytes()).unwrap();
    assert_eq!(table.fold_keys().count(), 3);

    let (status, body) = s.post_json("/task", &json!({ "task_type": "supervised_regression", "dataset_id": d }), Some(&s.key)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (_, types) = s.get("/tasktypes").await;
    assert_eq!(types.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn run_submission_pipeline() {
    let s = start().await;
    let d = s.upload_dataset("clouds", write_arff(&dataset())).await;
    let t = s.create_task(d).await;
    let majority = s.register_flow("ref.majority").await;
    let knn = s.register_flow("ref.1nn").await;

    let text = client_predictions(&s, t, LearnerKind::Majority, None).await;
    let (status, run) = s.submit(t, majority, json!([]), text.clone()).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    let acc = &run["measures"]["predictive_accuracy"];
    assert!((acc["mean"].as_f64().unwrap() - 20.0 / 30.0).abs() < 1e-12, "{run}");
    assert!(acc["std"].is_number());
    let run_id = run["run_id"].as_u64().unwrap();

    let (_, stored) = s.get_text(&format!("/run/{run_id}/predictions")).await;
    assert_eq!(stored, text);
    let (_, full) = s.get(&format!("/run/{run_id}")).await;
    assert_eq!(full["status"], "evaluated");
    assert_eq!(full["evaluation"]["confusion_matrix"], json!([[20, 0], [10, 0]]));

    let text = client_predictions(&s, t, LearnerKind::OneNn, Some(3)).await;
    let (status, run) = s.submit(t, knn, json!([{ "name": "k", "value": 3 }]), text).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    assert_eq!(run["measures"]["predictive_accuracy"]["mean"], 1.0);

    // Dropping the last fold's rows gives a coverage error naming them.
    let full = client_predictions(&s, t, LearnerKind::Majority, None).await;
    let truncated: String = full.lines().filter(|l| !l.starts_with("0,2,")).map(|l| format!("{l}\n")).collect();
    let (status, body) = s.submit(t, majority, json!([]), truncated).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "CoverageError");
    assert_eq!(body["detail"]["error"], "coverage");
    assert_eq!(body["detail"]["missing"][0]["fold"], 2);
    let failed = body["run_id"].as_u64().unwrap();
    let (_, f) = s.get(&format!("/run/{failed}")).await;
    assert_eq!(f["status"], "failed");

    let (status, _) = s.submit(t, 999, json!([]), full.clone()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let desc = json!({ "task_id": t, "flow_id": majority });
    let form = Form::new().text("description", desc.to_string()).text("predictions", full);
    let (status, _) = s.post_form("/run", form, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    // Leaderboard: the kNN flow first; the failed run contributes no point.
    let (status, series) = s.get(&format!("/task/{t}/results")).await;
    assert_eq!(status, StatusCode::OK);
    let series = series.as_array().unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0]["key"], knn);
    assert_eq!(series[1]["points"].as_array().unwrap().len(), 1);
    let (_, again) = s.get(&format!("/task/{t}/results")).await;
    assert_eq!(Value::Array(series.clone()), again);
    let (status, body) = s.get(&format!("/task/{t}/results?measure=nope")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");

    let (_, flow) = s.get(&format!("/flow/{knn}/results?color_parameter=k")).await;
    assert_eq!(flow[0]["points"][0]["color"], 3);
    let (status, _) = s.get(&format!("/flow/{knn}/results?color_parameter=kk")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, runs) = s.get(&format!("/run?task_id={t}&flow_id={majority}")).await;
    assert_eq!(runs.as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn query_endpoint() {
    let s = start().await;
    let d = s.upload_dataset("clouds", write_arff(&dataset())).await;
    let t = s.create_task(d).await;
    let flow = s.register_flow("ref.majority").await;
    let text = client_predictions(&s, t, LearnerKind::Majority, None).await;
    s.submit(t, flow, json!([]), text).await;

    let sql = format!("SELECT run_id, value FROM evaluations_view WHERE measure = 'predictive_accuracy' AND task_id = {t}");
    let (status, table) = s.post_json("/query", &json!({ "sql": sql }), None).await;
    assert_eq!(status, StatusCode::OK, "{table}");
    assert_eq!(table["columns"], json!(["run_id", "value"]));
    assert_eq!(table["rows"].as_array().unwrap().len(), 1);

    let (status, body) = s.post_json("/query", &json!({ "sql": "DROP TABLE runs" }), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "Forbidden");
    let (status, body) = s.post_json("/query", &json!({ "sql": "SELECT x FROM runs_view" }), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "UnknownColumn");
    assert_eq!(body["detail"]["name"], "x");
    let (status, body) = s.post_json("/query", &json!({ "sql": "SELECT FROM" }), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["detail"]["error"], "parse");
    assert!(body["detail"]["expected"].is_array());
}

#[tokio::test(flavor = "multi_thread")]
async fn oversized_predictions_are_rejected() {
    let s = start().await;
    let desc = json!({ "task_id": 1, "flow_id": 1 });
    let big = vec![b'%'; openml_lite_server::MAX_PREDICTION_BYTES + 1];
    let form = Form::new().text("description", desc.to_string()).part("predictions", Part::bytes(big));
    let (status, body) = s.post_form("/run", form, Some(&s.key)).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{body}");
}

#[tokio::test(flavor = "multi_thread")]
async fn deletion_is_blocked_by_dependents() {
    let s = start().await;
    let d = s.upload_dataset("clouds", write_arff(&dataset())).await;
    let t = s.create_task(d).await;
    let client = &s.client;
    let r = client.delete(s.url(&format!("/data/{d}"))).header("X-API-Key", &s.key).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::CONFLICT);
    let r = client.delete(s.url(&format!("/task/{t}"))).header("X-API-Key", &s.key).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let r = client.delete(s.url(&format!("/data/{d}"))).header("X-API-Key", &s.key).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let (status, _) = s.get(&format!("/data/{d}")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
