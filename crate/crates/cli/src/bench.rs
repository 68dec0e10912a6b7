//! Runs a built-in reference learner on a task, the way a toolkit plugin would:
//! download the task bundle, train per (repeat, fold), predict TEST rows.

use std::collections::BTreeMap;

use openml_lite_core::arff::{parse_arff, Relation};
use openml_lite_core::eval::write_predictions;
use openml_lite_core::learners::{predict_splits, LearnerKind, LearningProblem};
use openml_lite_core::registry::REQUIRED_ANNOTATIONS;
use openml_lite_core::task::{SplitTable, TaskDescription, TaskTypeId};
use serde_json::{json, Value};

use crate::client::{CliError, CliResult, Client};

/// Everything needed to run a task offline.
pub struct TaskBundle {
    pub description: TaskDescription,
    pub description_json: String,
    pub dataset: Value,
    pub data_arff: String,
    pub splits_arff: String,
}

impl TaskBundle {
    pub fn fetch(client: &Client, task_id: u64) -> CliResult<Self> {
        let description_json = client.get_text(&format!("/task/{task_id}?format=json"))?;
        let description: TaskDescription = serde_json::from_str(&description_json)
            .map_err(|e| CliError::Validation(format!("unreadable task description: {e}")))?;
        let dataset: Value = client.get(&format!("/data/{}", description.dataset_id))?;
        let data_arff = client.get_text(&format!("/data/{}/file", description.dataset_id))?;
        let splits_arff = client.get_text(&format!("/task/{task_id}/splits"))?;
        Ok(TaskBundle { description, description_json, dataset, data_arff, splits_arff })
    }

    pub fn relation(&self) -> CliResult<Relation> {
        parse_arff(self.data_arff.as_bytes()).map_err(|e| CliError::Validation(format!("dataset file: {e}")))
    }

    pub fn splits(&self) -> CliResult<SplitTable> {
        SplitTable::from_arff(self.splits_arff.as_bytes()).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn task_type(&self) -> CliResult<TaskTypeId> {
        TaskTypeId::parse(&self.description.task_type)
            .ok_or_else(|| CliError::Validation(format!("unknown task type {}", self.description.task_type)))
    }

    /// Attributes that must not be used as features.
    pub fn ignored_attributes(&self) -> Vec<String> {
        self.dataset["row_id_attribute"].as_str().map(|s| vec![s.to_string()]).unwrap_or_default()
    }
}

/// Parses `k=v` pairs into integer learner parameters.
pub fn parse_params(pairs: &[String]) -> CliResult<BTreeMap<String, i64>> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("parameter '{pair}' is not of the form name=value")))?;
        let v: i64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("parameter '{k}' needs an integer value, got '{v}'")))?;
        if out.insert(k.trim().to_string(), v).is_some() {
            return Err(CliError::Validation(format!("parameter '{k}' given twice")));
        }
    }
    Ok(out)
}

/// Produces the predictions file for `learner` on the bundle's task.
pub fn run_task(bundle: &TaskBundle, learner: LearnerKind, params: &BTreeMap<String, i64>) -> CliResult<String> {
    let task_type = bundle.task_type()?;
    if task_type != TaskTypeId::SupervisedClassification {
        return Err(CliError::Validation(format!(
            "reference learners only handle classification, task is {}",
            bundle.description.task_type
        )));
    }
    let relation = bundle.relation()?;
    let splits = bundle.splits()?;
    let ignored = bundle.ignored_attributes();
    let ignored: Vec<&str> = ignored.iter().map(String::as_str).collect();
    let problem = LearningProblem::new(&relation, &bundle.description.target_feature, &ignored)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let model = learner.build_with(params).map_err(|e| CliError::Validation(e.to_string()))?;
    let records = predict_splits(&problem, &splits, model.as_ref()).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(write_predictions(task_type, &problem.classes, &records))
}

pub fn flow_name(learner: LearnerKind) -> String {
    format!("ref.{}", learner.name())
}

/// Finds the reference flow for `learner`, registering it on first use.
pub fn ensure_flow(client: &Client, learner: LearnerKind) -> CliResult<u64> {
    let name = flow_name(learner);
    let flows: Vec<Value> =
        client.get_with_query("/flow", &[("filter", name.clone()), ("limit", "10000".into())])?;
    if let Some(id) = flows.iter().filter(|f| f["name"] == name.as_str()).filter_map(|f| f["flow_id"].as_u64()).min() {
        return Ok(id);
    }
    let parameters: Vec<Value> = learner
        .parameters()
        .iter()
        .map(|&(p, default, lo, hi)| {
            json!({ "name": p, "data_type": "integer", "default": default, "recommended_range": [lo, hi] })
        })
        .collect();
    let annotations: BTreeMap<&str, bool> = REQUIRED_ANNOTATIONS.iter().map(|a| (*a, true)).collect();
    let meta = json!({
        "name": name,
        "description": format!("Built-in {} reference learner", learner.name()),
        "licence": "Apache-2.0",
        "version_label": env!("CARGO_PKG_VERSION"),
        "parameters": parameters,
        "annotations": annotations,
        "source_code": format!("builtin:{}", learner.name()),
    });
    let flow: Value = client.post_json("/flow", &meta)?;
    flow["flow_id"].as_u64().ok_or_else(|| CliError::Validation("server returned a flow without flow_id".into()))
}

pub fn run_description(task_id: u64, flow_id: u64, params: &BTreeMap<String, i64>, hardware: Option<&str>) -> Value {
    let settings: Vec<Value> = params.iter().map(|(k, v)| json!({ "name": k, "value": v })).collect();
    let mut desc = json!({
        "task_id": task_id,
        "flow_id": flow_id,
        "parameter_settings": settings,
        "setting_origin": if params.is_empty() { "default" } else { "sweep" },
    });
    if let Some(h) = hardware {
        desc["hardware_note"] = json!(h);
    }
    desc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_parse_and_reject_garbage() {
        let p = parse_params(&["k=3".into(), " j = 4".into()]).unwrap();
        assert_eq!(p["k"], 3);
        assert_eq!(p["j"], 4);
        assert!(parse_params(&["k".into()]).is_err());
        assert!(parse_params(&["k=x".into()]).is_err());
        assert!(parse_params(&["k=1".into(), "k=2".into()]).is_err());
    }

    #[test]
    fn origin_follows_parameters() {
        let none = BTreeMap::new();
        assert_eq!(run_description(1, 2, &none, None)["setting_origin"], "default");
        let some: BTreeMap<String, i64> = [("k".to_string(), 3)].into();
        let d = run_description(1, 2, &some, Some("laptop"));
        assert_eq!(d["setting_origin"], "sweep");
        assert_eq!(d["parameter_settings"], json!([{ "name": "k", "value": 3 }]));
        assert_eq!(d["hardware_note"], "laptop");
    }
}
