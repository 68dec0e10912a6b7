use super::*;

const IRIS_LIKE: &str = "@relation toy\n@attribute id numeric\n@attribute x numeric\n@attribute class {a,b}\n@data\n\
1,0.1,a\n2,0.2,a\n3,0.3,a\n4,0.4,a\n5,0.5,a\n6,0.6,b\n7,0.7,b\n8,0.8,b\n9,0.9,b\n10,1.0,b\n";

fn open(dir: &Path) -> Registry {
    let config = RegistryConfig { sync: false, ..RegistryConfig::default() };
    Registry::open(dir, config, Arc::new(FileFetcher)).unwrap()
}

fn meta(name: &str) -> DatasetMeta {
    DatasetMeta {
        name: name.into(),
        licence: "CC0".into(),
        default_target: Some("class".into()),
        row_id_attribute: Some("id".into()),
        ..DatasetMeta::default()
    }
}

fn active_dataset(reg: &Registry, key: &str, name: &str) -> DatasetVersion {
    let d = reg.upload_dataset(key, meta(name), Some(IRIS_LIKE.as_bytes())).unwrap();
    let d = reg.activate_dataset(d.dataset_id).unwrap();
    assert_eq!(d.status, DatasetStatus::Active, "{:?}", d.error_reason);
    d
}

fn flow_meta(name: &str) -> FlowMeta {
    FlowMeta {
        name: name.into(),
        licence: "MIT".into(),
        parameters: vec![ParameterSpec {
            name: "trees".into(),
            data_type: ParamType::Integer,
            default: Some(Value::from(100)),
            recommended_range: Some(RecommendedRange::Interval([1.0, 1000.0])),
            description: None,
        }],
        annotations: REQUIRED_ANNOTATIONS.iter().map(|a| (a.to_string(), true)).collect(),
        source_code: Some("print('hi')".into()),
        ..FlowMeta::default()
    }
}

fn admin(reg: &Registry) -> String {
    reg.bootstrap_admin().unwrap().unwrap().1
}

#[test]
fn bootstrap_only_once() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let (user, key) = reg.bootstrap_admin().unwrap().unwrap();
    assert_eq!(key.len(), 64);
    assert!(user.admin);
    assert!(reg.bootstrap_admin().unwrap().is_none());
    assert_eq!(reg.authenticate(&key).unwrap().user_id, user.user_id);
    assert!(matches!(reg.authenticate("nope"), Err(RegistryError::Auth)));
}

#[test]
fn dataset_versions_and_activation() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let d1 = active_dataset(&reg, &key, "anneal");
    let d2 = active_dataset(&reg, &key, "anneal");
    assert_eq!((d1.version, d2.version), (1, 2));
    let q = d1.qualities.unwrap();
    assert_eq!(q.len(), 24);
    assert_eq!(q.get("NumberOfFeatures"), Some(2.0));
    assert_eq!(q.get("ClassEntropy"), Some(1.0));

    assert!(matches!(reg.upload_dataset("bad", meta("x"), Some(b"x")), Err(RegistryError::Auth)));
    let mut m = meta("x");
    m.licence = "WTFPL".into();
    assert!(matches!(reg.upload_dataset(&key, m, Some(b"x")), Err(RegistryError::Validation(_))));

    let listed = reg.list_datasets(&DatasetFilter { keyword: Some("ANN".into()), ..Default::default() });
    assert_eq!(listed.iter().map(|d| d.version).collect::<Vec<_>>(), [2, 1]);
    assert!(reg.list_datasets(&DatasetFilter { keyword: Some("zzz".into()), ..Default::default() }).is_empty());
}

#[test]
fn activation_failures_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let d = reg.upload_dataset(&key, meta("broken"), Some(b"@relation r\n@attribute a numeric\n@data\nfoo\n")).unwrap();
    let d = reg.activate_dataset(d.dataset_id).unwrap();
    assert_eq!(d.status, DatasetStatus::Error);
    assert!(d.error_reason.unwrap().contains("line 4"));

    let mut m = meta("no-target");
    m.default_target = Some("label".into());
    let d = reg.upload_dataset(&key, m, Some(IRIS_LIKE.as_bytes())).unwrap();
    assert_eq!(reg.activate_dataset(d.dataset_id).unwrap().status, DatasetStatus::Error);

    let mut m = meta("dup-ids");
    m.row_id_attribute = Some("class".into());
    m.default_target = None;
    let d = reg.upload_dataset(&key, m, Some(IRIS_LIKE.as_bytes())).unwrap();
    let d = reg.activate_dataset(d.dataset_id).unwrap();
    assert!(d.error_reason.unwrap().contains("not unique"));
}

#[test]
fn url_datasets_are_snapshotted() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(&dir.path().join("store"));
    let key = admin(&reg);
    let file = dir.path().join("remote.arff");
    std::fs::write(&file, IRIS_LIKE).unwrap();
    let mut m = meta("remote");
    m.url = Some(url::Url::from_file_path(&file).unwrap().to_string());
    let d = reg.upload_dataset(&key, m.clone(), None).unwrap();
    let d = reg.activate_dataset(d.dataset_id).unwrap();
    assert_eq!(d.status, DatasetStatus::Active);
    std::fs::remove_file(&file).unwrap();
    assert_eq!(reg.dataset_bytes(d.dataset_id).unwrap(), IRIS_LIKE.as_bytes());
    let d = reg.upload_dataset(&key, m, None).unwrap();
    let d = reg.activate_dataset(d.dataset_id).unwrap();
    assert_eq!(d.status, DatasetStatus::Error);
    assert!(d.error_reason.unwrap().starts_with("FetchError"));
}

#[test]
fn flows_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let f1 = reg.upload_flow(&key, flow_meta("ref.1nn")).unwrap();
    let f2 = reg.upload_flow(&key, flow_meta("ref.1nn")).unwrap();
    assert_eq!((f1.version, f2.version), (1, 2));
    let mut m = flow_meta("bad");
    m.parameters[0].default = Some(Value::from("x"));
    assert!(matches!(reg.upload_flow(&key, m), Err(RegistryError::Validation(_))));
    let mut m = flow_meta("bad");
    m.parameters[0].recommended_range = Some(RecommendedRange::Interval([5.0, 1.0]));
    assert!(reg.upload_flow(&key, m).is_err());
    let mut m = flow_meta("bad");
    m.annotations.remove("handles_missing");
    assert!(reg.upload_flow(&key, m).is_err());
    let mut m = flow_meta("bad");
    m.parameters.push(m.parameters[0].clone());
    assert!(reg.upload_flow(&key, m).is_err());
}

fn classification_task(reg: &Registry, key: &str, dataset_id: u64) -> Task {
    let req = TaskRequest {
        task_type: TaskTypeId::SupervisedClassification,
        dataset_id,
        target: None,
        estimation_procedure: Some(EstimationProcedure::cross_validation(5, true, 0)),
        evaluation_measure: None,
    };
    reg.create_task(key, req).unwrap().0
}

#[test]
fn tasks_deduplicate_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let d = active_dataset(&reg, &key, "toy");
    let t1 = classification_task(&reg, &key, d.dataset_id);
    let t2 = classification_task(&reg, &key, d.dataset_id);
    assert_eq!(t1.task_id, t2.task_id);
    assert_eq!(t1.evaluation_measure, "predictive_accuracy");
    let splits = reg.task_splits(t1.task_id).unwrap();
    assert_eq!(splits.folds, 5);

    let base = TaskRequest {
        task_type: TaskTypeId::SupervisedRegression,
        dataset_id: d.dataset_id,
        target: Some("class".into()),
        estimation_procedure: None,
        evaluation_measure: None,
    };
    assert!(matches!(reg.create_task(&key, base.clone()), Err(RegistryError::Validation(_))));
    let mut req = base.clone();
    req.task_type = TaskTypeId::SupervisedClassification;
    req.estimation_procedure = Some(EstimationProcedure::cross_validation(20, true, 0));
    assert!(matches!(reg.create_task(&key, req), Err(RegistryError::TooFewInstances { folds: 20, instances: 10 })));
    let mut req = base.clone();
    req.task_type = TaskTypeId::SupervisedClassification;
    req.evaluation_measure = Some("root_mean_squared_error".into());
    assert!(matches!(reg.create_task(&key, req), Err(RegistryError::Validation(_))));
    let mut req = base;
    req.dataset_id = 99;
    assert!(matches!(reg.create_task(&key, req), Err(RegistryError::NotFound { .. })));

    // a different seed is a different task
    let req = TaskRequest {
        task_type: TaskTypeId::SupervisedClassification,
        dataset_id: d.dataset_id,
        target: None,
        estimation_procedure: Some(EstimationProcedure::cross_validation(5, true, 1)),
        evaluation_measure: None,
    };
    assert_ne!(reg.create_task(&key, req).unwrap().0.task_id, t1.task_id);
}

#[test]
fn concurrent_duplicate_tasks_yield_one() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Arc::new(open(dir.path()));
    let key = admin(&reg);
    let d = active_dataset(&reg, &key, "toy");
    let ids: Vec<u64> = std::thread::scope(|s| {
        let handles: Vec<_> =
            (0..8).map(|_| s.spawn(|| classification_task(&reg, &key, d.dataset_id).task_id)).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(ids.iter().all(|&i| i == ids[0]));
    assert_eq!(reg.list_tasks(None, &Page::default()).len(), 1);
}

fn submission(task_id: u64, flow_id: u64) -> RunSubmission {
    RunSubmission {
        task_id,
        flow_id,
        parameter_settings: vec![ParameterSetting { name: "trees".into(), value: Value::from("10") }],
        setting_origin: SettingOrigin::Sweep,
        user_evaluations: None,
        hardware_note: Some("laptop".into()),
    }
}

#[test]
fn runs_reference_checks_and_deletion() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let d = active_dataset(&reg, &key, "toy");
    let t = classification_task(&reg, &key, d.dataset_id);
    let f = reg.upload_flow(&key, flow_meta("forest")).unwrap();
    let run = reg.store_run(&key, submission(t.task_id, f.flow_id), b"preds").unwrap();
    assert_eq!(run.status, RunStatus::Pending);
    assert!(run.evaluation.is_none());
    assert_eq!(run.parameter_value("trees"), Some(&Value::from(10)));

    assert!(matches!(reg.store_run(&key, submission(t.task_id, 77), b"p"), Err(RegistryError::NotFound { .. })));
    let mut bad = submission(t.task_id, f.flow_id);
    bad.parameter_settings[0].name = "treez".into();
    assert!(matches!(reg.store_run(&key, bad, b"p"), Err(RegistryError::Validation(_))));
    let mut bad = submission(t.task_id, f.flow_id);
    bad.parameter_settings[0].value = Value::from("many");
    assert!(matches!(reg.store_run(&key, bad, b"p"), Err(RegistryError::Validation(_))));

    assert!(matches!(reg.delete_flow(&key, f.flow_id), Err(RegistryError::DeleteConflict(_))));
    assert!(matches!(reg.delete_task(&key, t.task_id), Err(RegistryError::DeleteConflict(_))));
    assert!(matches!(reg.delete_dataset(&key, d.dataset_id), Err(RegistryError::DeleteConflict(_))));
    reg.delete_run(&key, run.run_id).unwrap();
    reg.delete_task(&key, t.task_id).unwrap();
    reg.delete_dataset(&key, d.dataset_id).unwrap();
    assert!(matches!(reg.get_dataset(d.dataset_id), Err(RegistryError::NotFound { .. })));
    assert!(matches!(reg.get_run(run.run_id), Err(RegistryError::NotFound { .. })));
}

#[test]
fn only_owner_or_admin_deletes() {
    let dir = tempfile::tempdir().unwrap();
    let reg = open(dir.path());
    let key = admin(&reg);
    let (_, alice) = reg.create_user(&key, "alice").unwrap();
    let (_, bob) = reg.create_user(&key, "bob").unwrap();
    assert!(matches!(reg.create_user(&alice, "eve"), Err(RegistryError::Forbidden(_))));
    let f = reg.upload_flow(&alice, flow_meta("mine")).unwrap();
    assert!(matches!(reg.delete_flow(&bob, f.flow_id), Err(RegistryError::Forbidden(_))));
    reg.delete_flow(&key, f.flow_id).unwrap();
}

#[test]
fn replay_reproduces_digest() {
    let dir = tempfile::tempdir().unwrap();
    let digest = {
        let reg = open(dir.path());
        let key = admin(&reg);
        let d = active_dataset(&reg, &key, "toy");
        let t = classification_task(&reg, &key, d.dataset_id);
        let f = reg.upload_flow(&key, flow_meta("forest")).unwrap();
        let run = reg.store_run(&key, submission(t.task_id, f.flow_id), b"preds").unwrap();
        reg.record_evaluation(run.run_id, Err("CoverageError: nope".into())).unwrap();
        reg.digest()
    };
    let reg = open(dir.path());
    assert_eq!(reg.digest(), digest);
    assert_eq!(reg.get_run(1).unwrap().status, RunStatus::Failed);
}

#[test]
fn compaction_preserves_state() {
    let dir = tempfile::tempdir().unwrap();
    let config = RegistryConfig { sync: false, compact_every: 3, ..RegistryConfig::default() };
    let digest = {
        let reg = Registry::open(dir.path(), config.clone(), Arc::new(FileFetcher)).unwrap();
        let key = admin(&reg);
        for i in 0..7 {
            reg.upload_flow(&key, flow_meta(&format!("f{i}"))).unwrap();
        }
        reg.compact().unwrap();
        reg.upload_flow(&key, flow_meta("after")).unwrap();
        reg.digest()
    };
    assert!(dir.path().join("snapshot.json").exists());
    let reg = Registry::open(dir.path(), config, Arc::new(FileFetcher)).unwrap();
    assert_eq!(reg.digest(), digest);
    assert_eq!(reg.list_flows(None, &Page::default()).len(), 8);
}

#[test]
fn concurrent_same_name_versions() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Arc::new(open(dir.path()));
    let key = admin(&reg);
    let mut versions: Vec<u32> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..20)
            .map(|_| s.spawn(|| reg.upload_dataset(&key, meta("same"), Some(IRIS_LIKE.as_bytes())).unwrap().version))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    versions.sort_unstable();
    assert_eq!(versions, (1..=20).collect::<Vec<_>>());
}
