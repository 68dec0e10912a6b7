mod bench;
mod client;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use openml_lite_core::learners::LearnerKind;
use openml_lite_core::task::TaskTypeId;
use serde_json::{json, Value};

use bench::TaskBundle;
use client::{CliError, CliResult, Client};

/// Client and benchmark harness for an openml-lite server.
#[derive(Debug, Parser)]
#[command(name = "openml-lite", version)]
struct Cli {
    /// Server URL, with or without the /api/v1 suffix.
    #[arg(long, env = "OPENML_LITE_URL", default_value = "http://127.0.0.1:8080", global = true)]
    url: String,
    #[arg(long, env = "OPENML_LITE_KEY", hide_env_values = true, global = true)]
    key: Option<String>,
    /// HTTP timeout in seconds.
    #[arg(long, default_value_t = 300, global = true)]
    timeout: u64,
    /// Print raw JSON responses.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Flow(FlowCmd),
    #[command(subcommand)]
    Task(TaskCmd),
    #[command(subcommand)]
    Run(RunCmd),
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Run a read-only SELECT against the query views.
    Query { sql: String },
    #[command(subcommand)]
    User(UserCmd),
}

#[derive(Debug, Args)]
struct PageArgs {
    #[arg(long)]
    offset: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

impl PageArgs {
    fn query(&self) -> Vec<(&'static str, String)> {
        let mut q = Vec::new();
        if let Some(o) = self.offset {
            q.push(("offset", o.to_string()));
        }
        if let Some(l) = self.limit {
            q.push(("limit", l.to_string()));
        }
        q
    }
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Upload an ARFF file (or register a URL) and wait for activation.
    Upload {
        file: Option<PathBuf>,
        /// Reference the data by URL instead of uploading a file.
        #[arg(long, conflicts_with = "file")]
        data_url: Option<String>,
        /// Defaults to the file name without extension.
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "CC0")]
        licence: String,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        row_id_attribute: Option<String>,
        #[arg(long)]
        description: Option<String>,
        #[arg(long)]
        version_label: Option<String>,
        #[arg(long)]
        citation: Option<String>,
        /// Return right after the upload instead of waiting for activation.
        #[arg(long)]
        no_wait: bool,
    },
    List {
        /// Keyword matched against name and description.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        status: Option<String>,
        #[command(flatten)]
        page: PageArgs,
    },
    Show { id: u64 },
}

#[derive(Debug, Subcommand)]
enum FlowCmd {
    /// Register a flow from a JSON description file.
    Register { file: PathBuf },
    List {
        #[arg(long)]
        filter: Option<String>,
        #[command(flatten)]
        page: PageArgs,
    },
}

#[derive(Debug, Subcommand)]
enum TaskCmd {
    Create {
        #[arg(long)]
        dataset: u64,
        #[arg(long = "type", default_value = "supervised_classification")]
        task_type: String,
        /// Defaults to the dataset's default target.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 10)]
        folds: u32,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        /// Use a holdout split with this test fraction instead of cross-validation.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        no_stratify: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        measure: Option<String>,
    },
    Show {
        id: u64,
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Write task.json, splits.arff and data.arff into a directory.
    Download {
        id: u64,
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
    List {
        #[arg(long)]
        dataset: Option<u64>,
        #[command(flatten)]
        page: PageArgs,
    },
}

#[derive(Debug, Subcommand)]
enum RunCmd {
    /// Upload a predictions file for a task and flow.
    Submit {
        #[arg(long)]
        task: u64,
        #[arg(long)]
        flow: u64,
        #[arg(long)]
        predictions: PathBuf,
        /// Parameter setting as name=value (value parsed as JSON when possible).
        #[arg(long = "param")]
        params: Vec<String>,
        /// default, sweep or internally_optimized.
        #[arg(long)]
        origin: Option<String>,
        #[arg(long)]
        hardware: Option<String>,
    },
    Show { id: u64 },
    List {
        #[arg(long)]
        task: Option<u64>,
        #[arg(long)]
        flow: Option<u64>,
        #[command(flatten)]
        page: PageArgs,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Train a reference learner on every fold of a task.
    Run {
        #[arg(long)]
        task: u64,
        /// stump, 1nn, naive_bayes or majority.
        #[arg(long)]
        learner: String,
        /// Learner parameter as name=value.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long)]
        upload: bool,
        /// Also write the predictions here (default without --upload: predictions.arff).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        hardware: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum UserCmd {
    /// Create a user (admin key required) and print its API key.
    Create { display_name: String },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        if let CliError::Server { body, .. } = &e {
            if cli.json {
                eprintln!("{body}");
            }
        }
        std::process::exit(e.exit_code());
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let client = Client::new(&cli.url, cli.key.clone(), Duration::from_secs(cli.timeout))?;
    let out = Output { json: cli.json };
    match &cli.command {
        Command::Dataset(cmd) => dataset(&client, &out, cmd, Duration::from_secs(cli.timeout)),
        Command::Flow(cmd) => flow(&client, &out, cmd),
        Command::Task(cmd) => task(&client, &out, cmd),
        Command::Run(cmd) => run_cmd(&client, &out, cmd),
        Command::Bench(BenchCmd::Run { task, learner, params, upload, output, hardware }) => {
            let learner = LearnerKind::parse(learner).map_err(|e| CliError::Validation(e.to_string()))?;
            let params = bench::parse_params(params)?;
            let bundle = TaskBundle::fetch(&client, *task)?;
            let predictions = bench::run_task(&bundle, learner, &params)?;
            let output = output.clone().or_else(|| (!upload).then(|| PathBuf::from("predictions.arff")));
            if let Some(path) = &output {
                std::fs::write(path, &predictions)?;
                if !out.json {
                    println!("wrote {}", path.display());
                }
            }
            if *upload {
                let flow_id = bench::ensure_flow(&client, learner)?;
                let desc = bench::run_description(*task, flow_id, &params, hardware.as_deref());
                let summary = client.submit_run(&desc, predictions.into_bytes())?;
                out.run_summary(&summary);
            }
            Ok(())
        }
        Command::Query { sql } => {
            let table: Value = client.post_public("/query", &json!({ "sql": sql }))?;
            if out.json {
                out.value(&table);
            } else {
                let cols: Vec<&str> = table["columns"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
                println!("{}", cols.join("\t"));
                for row in table["rows"].as_array().into_iter().flatten() {
                    let cells: Vec<String> = row.as_array().into_iter().flatten().map(plain).collect();
                    println!("{}", cells.join("\t"));
                }
            }
            Ok(())
        }
        Command::User(UserCmd::Create { display_name }) => {
            let user: Value = client.post_json("/user", &json!({ "display_name": display_name }))?;
            if out.json {
                out.value(&user);
            } else {
                println!("user {} created; API key: {}", user["user_id"], plain(&user["api_key"]));
            }
            Ok(())
        }
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn value(&self, v: &Value) {
        println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
    }

    fn run_summary(&self, summary: &Value) {
        if self.json {
            return self.value(summary);
        }
        let id = &summary["run_id"];
        let h = &summary["headline"];
        match h["value"].as_f64() {
            Some(v) => {
                let std = h["std"].as_f64().map(|s| format!(" ± {s:.6}")).unwrap_or_default();
                println!("run {id}: {} = {v:.6}{std}", plain(&h["measure"]));
            }
            None => println!("run {id}: status {}", plain(&summary["status"])),
        }
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn dataset(client: &Client, out: &Output, cmd: &DatasetCmd, wait: Duration) -> CliResult<()> {
    match cmd {
        DatasetCmd::Upload {
            file,
            data_url,
            name,
            licence,
            target,
            row_id_attribute,
            description,
            version_label,
            citation,
            no_wait,
        } => {
            let data = match (file, data_url) {
                (Some(path), _) => Some(std::fs::read(path)?),
                (None, Some(_)) => None,
                (None, None) => return Err(CliError::Validation("give an ARFF file or --data-url".into())),
            };
            let name = match (name, file) {
                (Some(n), _) => n.clone(),
                (None, Some(path)) => stem(path)?,
                (None, None) => return Err(CliError::Validation("--name is required with --data-url".into())),
            };
            let mut meta = json!({ "name": name, "licence": licence });
            for (field, value) in [
                ("default_target", target),
                ("row_id_attribute", row_id_attribute),
                ("description", description),
                ("version_label", version_label),
                ("citation", citation),
                ("url", data_url),
            ] {
                if let Some(v) = value {
                    meta[field] = json!(v);
                }
            }
            let mut d = client.upload_dataset(&meta, data)?;
            let id = d["dataset_id"].as_u64().ok_or_else(|| CliError::Validation("no dataset_id in response".into()))?;
            if !no_wait {
                d = wait_for_activation(client, id, wait)?;
            }
            if out.json {
                out.value(&d);
            } else {
                println!("dataset {id}: {} version {} ({})", plain(&d["name"]), d["version"], plain(&d["status"]));
            }
            match d["status"].as_str() {
                Some("error") => Err(CliError::Validation(format!("dataset {id} failed: {}", plain(&d["error_reason"])))),
                _ => Ok(()),
            }
        }
        DatasetCmd::List { filter, status, page } => {
            let mut q = page.query();
            if let Some(f) = filter {
                q.push(("filter", f.clone()));
            }
            if let Some(s) = status {
                q.push(("status", s.clone()));
            }
            let list: Vec<Value> = client.get_with_query("/data", &q)?;
            if out.json {
                out.value(&Value::Array(list));
            } else {
                for d in &list {
                    println!("{}\t{}\tv{}\t{}", d["dataset_id"], plain(&d["name"]), d["version"], plain(&d["status"]));
                }
            }
            Ok(())
        }
        DatasetCmd::Show { id } => {
            let d: Value = client.get(&format!("/data/{id}"))?;
            out.value(&d);
            Ok(())
        }
    }
}

fn stem(path: &Path) -> CliResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| CliError::Validation(format!("cannot derive a name from {}", path.display())))
}

fn wait_for_activation(client: &Client, id: u64, wait: Duration) -> CliResult<Value> {
    let start = Instant::now();
    let mut delay = Duration::from_millis(20);
    loop {
        let d: Value = client.get(&format!("/data/{id}"))?;
        if d["status"] != "in_preparation" {
            return Ok(d);
        }
        if start.elapsed() > wait {
            return Err(CliError::Network(format!("dataset {id} still in preparation after {}s", wait.as_secs())));
        }
        std::thread::sleep(delay);
        delay = (delay * 2).min(Duration::from_millis(500));
    }
}

fn flow(client: &Client, out: &Output, cmd: &FlowCmd) -> CliResult<()> {
    match cmd {
        FlowCmd::Register { file } => {
            let text = std::fs::read_to_string(file)?;
            let meta: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?;
            let f: Value = client.post_json("/flow", &meta)?;
            if out.json {
                out.value(&f);
            } else {
                println!("flow {}: {} version {}", f["flow_id"], plain(&f["name"]), f["version"]);
            }
            Ok(())
        }
        FlowCmd::List { filter, page } => {
            let mut q = page.query();
            if let Some(f) = filter {
                q.push(("filter", f.clone()));
            }
            let list: Vec<Value> = client.get_with_query("/flow", &q)?;
            if out.json {
                out.value(&Value::Array(list));
            } else {
                for f in &list {
                    println!("{}\t{}\tv{}", f["flow_id"], plain(&f["name"]), f["version"]);
                }
            }
            Ok(())
        }
    }
}

fn task(client: &Client, out: &Output, cmd: &TaskCmd) -> CliResult<()> {
    match cmd {
        TaskCmd::Create { dataset, task_type, target, folds, repeats, holdout, no_stratify, seed, measure } => {
            let kind = TaskTypeId::parse(task_type)
                .ok_or_else(|| CliError::Validation(format!("unknown task type {task_type}")))?;
            let stratified = !no_stratify && kind == TaskTypeId::SupervisedClassification;
            let estimation = match holdout {
                Some(fraction) => json!({
                    "type": "holdout", "repeats": repeats, "holdout_fraction": fraction,
                    "stratified": stratified, "seed": seed,
                }),
                None => json!({
                    "type": "crossvalidation", "repeats": repeats, "folds": folds,
                    "stratified": stratified, "seed": seed,
                }),
            };
            let mut req = json!({ "task_type": kind.name(), "dataset_id": dataset, "estimation_procedure": estimation });
            if let Some(t) = target {
                req["target"] = json!(t);
            }
            if let Some(m) = measure {
                req["evaluation_measure"] = json!(m);
            }
            let t: Value = client.post_json("/task", &req)?;
            if out.json {
                out.value(&t);
            } else {
                let how = if t["created"] == true { "created" } else { "already existed" };
                println!("task {} ({how})", t["task_id"]);
            }
            Ok(())
        }
        TaskCmd::Show { id, format } => {
            let text = client.get_text(&format!("/task/{id}?format={format}"))?;
            println!("{}", text.trim_end());
            Ok(())
        }
        TaskCmd::Download { id, dir } => {
            let bundle = TaskBundle::fetch(client, *id)?;
            std::fs::create_dir_all(dir)?;
            for (name, body) in [
                ("task.json", &bundle.description_json),
                ("splits.arff", &bundle.splits_arff),
                ("data.arff", &bundle.data_arff),
            ] {
                let mut f = std::fs::File::create(dir.join(name))?;
                f.write_all(body.as_bytes())?;
            }
            if !out.json {
                println!("wrote task.json, splits.arff, data.arff to {}", dir.display());
            }
            Ok(())
        }
        TaskCmd::List { dataset, page } => {
            let mut q = page.query();
            if let Some(d) = dataset {
                q.push(("dataset_id", d.to_string()));
            }
            let list: Vec<Value> = client.get_with_query("/task", &q)?;
            if out.json {
                out.value(&Value::Array(list));
            } else {
                for t in &list {
                    println!("{}\tdataset {}\t{}\t{}", t["task_id"], t["dataset_id"], plain(&t["task_type"]), plain(&t["target"]));
                }
            }
            Ok(())
        }
    }
}

fn run_cmd(client: &Client, out: &Output, cmd: &RunCmd) -> CliResult<()> {
    match cmd {
        RunCmd::Submit { task, flow, predictions, params, origin, hardware } => {
            let bytes = std::fs::read(predictions)?;
            let mut settings = Vec::new();
            for pair in params {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::Validation(format!("parameter '{pair}' is not of the form name=value")))?;
                let value = serde_json::from_str::<Value>(v).unwrap_or_else(|_| json!(v));
                settings.push(json!({ "name": k, "value": value }));
            }
            let origin = origin.clone().unwrap_or_else(|| if settings.is_empty() { "default" } else { "sweep" }.into());
            let mut desc = json!({ "task_id": task, "flow_id": flow, "parameter_settings": settings, "setting_origin": origin });
            if let Some(h) = hardware {
                desc["hardware_note"] = json!(h);
            }
            let summary = client.submit_run(&desc, bytes)?;
            out.run_summary(&summary);
            Ok(())
        }
        RunCmd::Show { id } => {
            let r: Value = client.get(&format!("/run/{id}"))?;
            out.value(&r);
            Ok(())
        }
        RunCmd::List { task, flow, page } => {
            let mut q = page.query();
            if let Some(t) = task {
                q.push(("task_id", t.to_string()));
            }
            if let Some(f) = flow {
                q.push(("flow_id", f.to_string()));
            }
            let list: Vec<Value> = client.get_with_query("/run", &q)?;
            if out.json {
                out.value(&Value::Array(list));
            } else {
                for r in &list {
                    println!("{}\ttask {}\tflow {}\t{}", r["run_id"], r["task_id"], r["flow_id"], plain(&r["status"]));
                }
            }
            Ok(())
        }
    }
}
