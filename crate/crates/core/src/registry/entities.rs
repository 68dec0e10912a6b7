//! Stored entity types.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eval::EvaluationResult;
use crate::qualities::QualityVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: u64,
    pub display_name: String,
    /// SHA-256 of the API key; the key itself is shown once and never stored.
    pub api_key_sha256: String,
    pub admin: bool,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Blob { sha256: String },
    Url {
        url: String,
        /// Filled in when the URL is snapshotted into the blob store.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sha256: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fetched_at: Option<DateTime<Utc>>,
    },
}

impl Source {
    /// The blob holding the bytes, once known.
    pub fn blob(&self) -> Option<&str> {
        match self {
            Source::Blob { sha256 } => Some(sha256),
            Source::Url { sha256, .. } => sha256.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStatus {
    InPreparation,
    Active,
    Error,
}

impl DatasetStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetStatus::InPreparation => "in_preparation",
            DatasetStatus::Active => "active",
            DatasetStatus::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "in_preparation" => Some(DatasetStatus::InPreparation),
            "active" => Some(DatasetStatus::Active),
            "error" => Some(DatasetStatus::Error),
            _ => None,
        }
    }
}

/// Upload-time dataset metadata as sent by clients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub licence: String,
    #[serde(default)]
    pub version_label: Option<String>,
    #[serde(default)]
    pub citation: Option<String>,
    #[serde(default)]
    pub paper_url: Option<String>,
    #[serde(default)]
    pub default_target: Option<String>,
    #[serde(default)]
    pub row_id_attribute: Option<String>,
    /// Reference the data by URL instead of uploading a file.
    #[serde(default)]
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetVersion {
    pub dataset_id: u64,
    pub name: String,
    pub version: u32,
    pub version_label: Option<String>,
    pub description: String,
    pub format: String,
    pub source: Source,
    pub licence: String,
    pub citation: Option<String>,
    pub paper_url: Option<String>,
    pub default_target: Option<String>,
    pub row_id_attribute: Option<String>,
    pub uploader: u64,
    pub uploaded_at: DateTime<Utc>,
    pub status: DatasetStatus,
    pub error_reason: Option<String>,
    pub qualities: Option<QualityVector>,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    Integer,
    Real,
    Text,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecommendedRange {
    Interval([f64; 2]),
    Labels(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub data_type: ParamType,
    #[serde(default)]
    pub default: Option<Value>,
    #[serde(default)]
    pub recommended_range: Option<RecommendedRange>,
    #[serde(default)]
    pub description: Option<String>,
}

impl ParameterSpec {
    /// Coerces a value to this parameter's type. Strings holding a valid
    /// number or boolean are accepted so command-line values work unchanged.
    pub fn coerce(&self, value: &Value) -> Result<Value, String> {
        let fail = || format!("value {value} is not a valid {:?} for parameter '{}'", self.data_type, self.name);
        match (self.data_type, value) {
            (ParamType::Integer, Value::Number(n)) if n.is_i64() || n.is_u64() => Ok(value.clone()),
            (ParamType::Integer, Value::Number(n)) => match n.as_f64() {
                Some(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(Value::from(f as i64)),
                _ => Err(fail()),
            },
            (ParamType::Integer, Value::String(s)) => s.trim().parse::<i64>().map(Value::from).map_err(|_| fail()),
            (ParamType::Real, Value::Number(_)) => Ok(value.clone()),
            (ParamType::Real, Value::String(s)) => match s.trim().parse::<f64>() {
                Ok(f) if f.is_finite() => Ok(Value::from(f)),
                _ => Err(fail()),
            },
            (ParamType::Boolean, Value::Bool(_)) => Ok(value.clone()),
            (ParamType::Boolean, Value::String(s)) => match s.as_str() {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(fail()),
            },
            (ParamType::Text, Value::String(_)) => Ok(value.clone()),
            _ => Err(fail()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowMeta {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub licence: String,
    #[serde(default)]
    pub version_label: Option<String>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub annotations: BTreeMap<String, bool>,
    /// Either inline source code or a URL referencing it.
    #[serde(default)]
    pub source_code: Option<String>,
    #[serde(default)]
    pub source_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub flow_id: u64,
    pub name: String,
    pub version: u32,
    pub version_label: Option<String>,
    pub source: Source,
    pub description: String,
    pub licence: String,
    pub uploader: u64,
    pub uploaded_at: DateTime<Utc>,
    pub parameters: Vec<ParameterSpec>,
    pub annotations: BTreeMap<String, bool>,
    #[serde(default)]
    pub deleted: bool,
}

impl Flow {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingOrigin {
    Default,
    Sweep,
    InternallyOptimized,
}

impl SettingOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            SettingOrigin::Default => "default",
            SettingOrigin::Sweep => "sweep",
            SettingOrigin::InternallyOptimized => "internally_optimized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSetting {
    pub name: String,
    pub value: Value,
}

/// The run description part of a run upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSubmission {
    pub task_id: u64,
    pub flow_id: u64,
    #[serde(default)]
    pub parameter_settings: Vec<ParameterSetting>,
    #[serde(default = "default_origin")]
    pub setting_origin: SettingOrigin,
    #[serde(default)]
    pub user_evaluations: Option<BTreeMap<String, Value>>,
    #[serde(default)]
    pub hardware_note: Option<String>,
}

fn default_origin() -> SettingOrigin {
    SettingOrigin::Default
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Evaluated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub run_id: u64,
    pub task_id: u64,
    pub flow_id: u64,
    pub uploader: u64,
    pub uploaded_at: DateTime<Utc>,
    pub parameter_settings: Vec<ParameterSetting>,
    pub setting_origin: SettingOrigin,
    /// SHA-256 of the prediction file.
    pub predictions: String,
    pub user_evaluations: Option<BTreeMap<String, Value>>,
    pub hardware_note: Option<String>,
    pub status: RunStatus,
    pub evaluation: Option<EvaluationResult>,
    pub error_report: Option<String>,
    #[serde(default)]
    pub deleted: bool,
}

impl Run {
    pub fn parameter_value(&self, name: &str) -> Option<&Value> {
        self.parameter_settings.iter().find(|p| p.name == name).map(|p| &p.value)
    }
}
