//! Experiment orchestration behind the command-line driver.
//!
//! One TOML file describes a run. Each command reads its upstream
//! artifacts from the output directory, writes its own, and records a
//! manifest. Every artifact carries the hash of the config sections it
//! depends on (its *stage hash*), so a downstream command refuses inputs
//! produced under different settings while unrelated edits (say, the eval
//! episode count) leave earlier artifacts usable.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::error::{OracleError, PipelineError, PlannerError, RewardError, TrainError, WorldError};
use crate::exec::Execution;
use crate::geometry::Point2;
use crate::io::{read_header, write_json_line, ArtifactHeader, IoError};
use crate::oracle::{check_bound, check_lemma1, BoundReport, BoundSettings, LemmaReport};
use crate::perception::{build_dataset, DemoInput, PipelineParams, SubgoalDataset};
use crate::planner::{
    eval_planner, fit, read_accuracy, write_accuracy, Alignment, PlannerAccuracy, PlannerKind,
    PlannerModel, DEFAULT_MAX_STAGES,
};
use crate::reward::{dense_reward, RewardShapeConfig, ShapeVariant};
use crate::trainer::{evaluate, train, write_metrics_csv, EvalReport, Policy, TrainConfig};
use crate::world::{generate_demo, jitter_task, MarkerFrame, PointWorld};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ANTICIPATE_OUT";
pub const BUILTIN_PREFIX: &str = "builtin:";

pub const DEMOS_FILE: &str = "demos.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const PLANNER_FILE: &str = "planner.json";
pub const ACCURACY_FILE: &str = "planner_accuracy.json";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const ABLATE_REWARD_FILE: &str = "ablate_reward.csv";
pub const REWARD_CURVES_FILE: &str = "reward_curves.csv";
pub const ABLATE_KEYPOINTS_FILE: &str = "ablate_keypoints.csv";
pub const THEORY_FILE: &str = "theory.jsonl";
pub const THEORY_SUMMARY_FILE: &str = "theory_summary.txt";

pub fn policy_file(seed: u64) -> String {
    format!("policy/seed_{seed}.tsv")
}

pub fn metrics_file(seed: u64) -> String {
    format!("policy/metrics_seed_{seed}.csv")
}

pub fn manifest_file(cmd: Command) -> String {
    format!("manifest/{}.json", cmd.name())
}

pub fn demo_id(seed: u64) -> String {
    format!("demo-{seed:04}")
}

fn demo_seed(id: &str) -> Option<u64> {
    id.strip_prefix("demo-")?.parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    GenDemos,
    BuildDataset,
    TrainPlanner,
    EvalPlanner,
    TrainPolicy,
    Evaluate,
    AblateReward,
    AblateKeypoints,
    VerifyTheory,
}

impl Command {
    pub const ALL: [Command; 9] = [
        Command::GenDemos,
        Command::BuildDataset,
        Command::TrainPlanner,
        Command::EvalPlanner,
        Command::TrainPolicy,
        Command::Evaluate,
        Command::AblateReward,
        Command::AblateKeypoints,
        Command::VerifyTheory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenDemos => "gen-demos",
            Command::BuildDataset => "build-dataset",
            Command::TrainPlanner => "train-planner",
            Command::EvalPlanner => "eval-planner",
            Command::TrainPolicy => "train-policy",
            Command::Evaluate => "evaluate",
            Command::AblateReward => "ablate-reward",
            Command::AblateKeypoints => "ablate-keypoints",
            Command::VerifyTheory => "verify-theory",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("missing {}: run `anticipate {command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },
    #[error("{} was produced by a different configuration (hash {found}, expected {expected}); re-run `anticipate {command}`", path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        found: String,
        command: &'static str,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Artifact {
        path: PathBuf,
        #[source]
        source: IoError,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl ExperimentError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config { .. } => "config",
            ExperimentError::MissingArtifact { .. } => "missing-artifact",
            ExperimentError::HashMismatch { .. } => "hash-mismatch",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Artifact { .. } => "artifact",
            ExperimentError::World(_) => "world",
            ExperimentError::Pipeline(_) => "pipeline",
            ExperimentError::Planner(_) => "planner",
            ExperimentError::Reward(_) => "reward",
            ExperimentError::Train(_) => "train",
            ExperimentError::Oracle(_) => "oracle",
        }
    }

    /// Machine-readable error record for stderr.
    pub fn record(&self, command: &str) -> Value {
        let mut rec = json!({
            "status": "error",
            "command": command,
            "kind": self.kind(),
            "message": self.to_string(),
        });
        match self {
            ExperimentError::Config { field, .. } => rec["field"] = json!(field),
            ExperimentError::MissingArtifact { command, .. } => rec["requires"] = json!(command),
            _ => {}
        }
        rec
    }

    fn config(field: &str, message: impl std::fmt::Display) -> Self {
        ExperimentError::Config {
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub count: usize,
    /// Demo `i` uses jitter seed `seed_offset + i`.
    pub seed_offset: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            count: 100,
            seed_offset: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentChoice {
    /// `translate` for single-waypoint tasks, `none` otherwise.
    #[default]
    Auto,
    None,
    Translate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub alignment: AlignmentChoice,
    pub max_stages: usize,
    /// Trailing fraction of the dataset held out for `eval-planner`.
    pub holdout_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            kind: PlannerKind::Retrieval,
            alignment: AlignmentChoice::Auto,
            max_stages: DEFAULT_MAX_STAGES,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Training seed `s` is evaluated with seed `s + seed_offset`.
    pub seed_offset: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 30,
            seed_offset: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Jittered world variants; held-out demo seeds come first.
    pub worlds: usize,
    pub eval_seeds: usize,
    pub lemma_samples: usize,
    pub grid_cell: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            worlds: 20,
            eval_seeds: 5,
            lemma_samples: 50,
            grid_cell: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub variants: Vec<ShapeVariant>,
    pub keypoint_counts: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: ShapeVariant::ALL.to_vec(),
            keypoint_counts: vec![4, 8, 12],
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `builtin:NAME` or a world file path relative to the config file.
    pub world: String,
    /// Training seeds; each replaces `train.seed` in turn.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Fan-out strategy. Results do not depend on it.
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub demos: DemoConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub reward: RewardShapeConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn builtin(name: &str) -> Self {
        ExperimentConfig {
            world: format!("{BUILTIN_PREFIX}{name}"),
            seeds: default_seeds(),
            output: None,
            execution: Execution::default(),
            demos: DemoConfig::default(),
            pipeline: PipelineParams::default(),
            planner: PlannerConfig::default(),
            reward: RewardShapeConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            theory: TheoryConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// `dotted.key=value`; the value is parsed as TOML, else taken as a string.
    pub overrides: Vec<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub execution: Option<Execution>,
}

/// `"0,1,2"`, `"0..5"` or a mix such as `"0..3,10"`.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?);
        }
    }
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(seeds)
}

pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ExperimentError::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ExperimentError::config(key, "empty key segment"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ExperimentError::config(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Demos,
    Dataset,
    Planner,
    Policy,
    Eval,
    Theory,
    AblateReward,
    AblateKeypoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub stage_hash: String,
    pub seeds: Vec<u64>,
    pub wall_time_s: f64,
    pub artifacts: Vec<ArtifactEntry>,
}

/// What a command produced, plus human-readable summary lines.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardAblationRow {
    pub variant: String,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_steps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointAblationRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub success_rate: Option<f64>,
    pub mean_steps: Option<f64>,
    pub error: Option<String>,
}

impl KeypointAblationRow {
    fn failed(k: usize, seed: u64, e: &dyn std::fmt::Display) -> Self {
        KeypointAblationRow {
            k,
            seed,
            success_rate: None,
            mean_steps: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DemosBody {
    task_id: String,
    demos: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    demo_id: String,
    t: usize,
    positions: Vec<Point2>,
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EvalBody {
    episodes: usize,
    horizon: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Serialize, Deserialize)]
struct TheoryBody {
    worlds: Vec<u64>,
    eval_seeds: Vec<u64>,
    grid_cell: f64,
    horizon: usize,
}

/// One line of the theory report.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum TheoryRecord {
    Lemma {
        world_seed: u64,
        #[serde(flatten)]
        report: LemmaReport,
    },
    Bound {
        seed: u64,
        world_seed: u64,
        #[serde(flatten)]
        report: BoundReport,
    },
}

/// A loaded, validated experiment bound to its output directory.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub world: PointWorld,
    pub out: PathBuf,
    pub exec: Execution,
}

impl Experiment {
    pub fn load(path: &Path, opts: &LoadOptions) -> Result<Experiment> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
        Self::from_toml_str(&text, base, stem, opts)
    }

    /// `base_dir` resolves a relative world path; `stem` names the default
    /// output directory under the output root.
    pub fn from_toml_str(text: &str, base_dir: &Path, stem: &str, opts: &LoadOptions) -> Result<Experiment> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ExperimentError::config("<file>", e.to_string().trim_end()))?;
        for o in &opts.overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| ExperimentError::config(&e.path().to_string(), e.inner()))?;
        if let Some(seeds) = &opts.seeds {
            config.seeds = seeds.clone();
        }
        let out = match (&opts.out, &config.output) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => o.clone(),
            (None, None) => std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(stem),
        };
        let mut exp = Self::new(config, base_dir, out)?;
        if let Some(e) = opts.execution {
            exp.exec = e;
        }
        Ok(exp)
    }

    pub fn new(config: ExperimentConfig, base_dir: &Path, out: PathBuf) -> Result<Experiment> {
        let world = match config.world.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => PointWorld::builtin(name)?,
            None => {
                let p = base_dir.join(&config.world);
                if !p.exists() {
                    return Err(ExperimentError::config(
                        "world",
                        format!("world file {} does not exist", p.display()),
                    ));
                }
                PointWorld::load(&p)?
            }
        };
        let exp = Experiment {
            exec: config.execution,
            config,
            world,
            out,
        };
        exp.validate()?;
        Ok(exp)
    }

    fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.seeds.is_empty() {
            return Err(ExperimentError::config("seeds", "must not be empty"));
        }
        if c.demos.count < 2 {
            return Err(ExperimentError::config("demos.count", "need at least 2 demos to hold some out"));
        }
        if !(c.planner.holdout_fraction > 0.0 && c.planner.holdout_fraction < 1.0) {
            return Err(ExperimentError::config("planner.holdout_fraction", "must be in (0, 1)"));
        }
        if c.planner.max_stages < 1 {
            return Err(ExperimentError::config("planner.max_stages", "must be >= 1"));
        }
        if c.eval.episodes < 1 {
            return Err(ExperimentError::config("eval.episodes", "must be >= 1"));
        }
        if c.theory.eval_seeds < 1 {
            return Err(ExperimentError::config("theory.eval_seeds", "must be >= 1"));
        }
        if !(c.theory.grid_cell > 0.0) {
            return Err(ExperimentError::config("theory.grid_cell", "must be > 0"));
        }
        c.pipeline
            .validate()
            .map_err(|e| ExperimentError::config("pipeline", e))?;
        c.reward.validate().map_err(|e| ExperimentError::config("reward", e))?;
        c.train
            .validate(&self.world)
            .map_err(|e| ExperimentError::config("train", e))?;
        Ok(())
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn world_value(&self) -> Value {
        serde_json::to_value(&self.world).expect("world serializes")
    }

    /// Hash of the whole config, world file content substituted for its
    /// path; the output directory and fan-out strategy are left out.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(&self.config).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        obj.remove("output");
        obj.remove("execution");
        obj.insert("world".into(), self.world_value());
        sha256_hex(&serde_json::to_vec(&v).expect("json"))
    }

    pub fn stage_hash(&self, stage: Stage) -> String {
        let c = &self.config;
        let mut parts: BTreeMap<&str, Value> = BTreeMap::new();
        let mut add = |k: &'static str, v: Value| {
            parts.insert(k, v);
        };
        add("world", self.world_value());
        add("demos", val(&c.demos));
        let name = match stage {
            Stage::Demos => "demos",
            Stage::AblateKeypoints => {
                add("pipeline", val(&c.pipeline));
                add("planner", val(&c.planner));
                add("reward", val(&c.reward));
                add("train", val(&c.train));
                add("eval", val(&c.eval));
                add("seeds", val(&c.seeds));
                add("keypoint_counts", val(&c.ablation.keypoint_counts));
                "ablate-keypoints"
            }
            _ => {
                add("pipeline", val(&c.pipeline));
                if stage == Stage::Dataset {
                    "dataset"
                } else {
                    add("planner", val(&c.planner));
                    match stage {
                        Stage::Planner => "planner",
                        Stage::AblateReward => {
                            add("reward", val(&c.reward));
                            add("train", val(&c.train));
                            add("eval", val(&c.eval));
                            add("seeds", val(&c.seeds));
                            add("variants", val(&c.ablation.variants));
                            "ablate-reward"
                        }
                        _ => {
                            add("reward", val(&c.reward));
                            add("train", val(&c.train));
                            match stage {
                                Stage::Eval => {
                                    add("eval", val(&c.eval));
                                    add("seeds", val(&c.seeds));
                                    "eval"
                                }
                                Stage::Theory => {
                                    add("theory", val(&c.theory));
                                    add("seeds", val(&c.seeds));
                                    "theory"
                                }
                                _ => "policy",
                            }
                        }
                    }
                }
            }
        };
        add("stage", json!(name));
        sha256_hex(&serde_json::to_vec(&parts).expect("json"))
    }

    fn alignment(&self) -> Alignment {
        match self.config.planner.alignment {
            AlignmentChoice::Auto if self.world.task.waypoints.len() == 1 => Alignment::Translate,
            AlignmentChoice::Auto | AlignmentChoice::None => Alignment::None,
            AlignmentChoice::Translate => Alignment::Translate,
        }
    }

    fn split(&self, ds: &SubgoalDataset) -> (SubgoalDataset, SubgoalDataset) {
        let n = ds.records.len();
        let train = ((n as f64) * (1.0 - self.config.planner.holdout_fraction))
            .round()
            .clamp(1.0, (n.max(2) - 1) as f64) as usize;
        ds.split_at(train)
    }

    // ---- file plumbing ----

    fn emit(&self, rel: &str, bytes: Vec<u8>, out: &mut Outcome) -> Result<()> {
        let path = self.path(rel);
        let io = |source| ExperimentError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(&path, &bytes).map_err(io)?;
        out.artifacts.push(ArtifactEntry {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    fn open(&self, rel: &str, producer: Command) -> Result<BufReader<std::fs::File>> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(ExperimentError::MissingArtifact {
                path,
                command: producer.name(),
            });
        }
        std::fs::File::open(&path)
            .map(BufReader::new)
            .map_err(|source| ExperimentError::Io { path, source })
    }

    fn expect_hash(&self, rel: &str, found: &str, stage: Stage, producer: Command) -> Result<()> {
        let expected = self.stage_hash(stage);
        if found != expected {
            return Err(ExperimentError::HashMismatch {
                path: self.path(rel),
                expected,
                found: found.to_string(),
                command: producer.name(),
            });
        }
        Ok(())
    }

    fn artifact_err(&self, rel: &str) -> impl Fn(IoError) -> ExperimentError + '_ {
        let path = self.path(rel);
        move |source| ExperimentError::Artifact {
            path: path.clone(),
            source,
        }
    }

    pub fn read_demos(&self) -> Result<Vec<DemoInput>> {
        let err = self.artifact_err(DEMOS_FILE);
        let mut lines = self.open(DEMOS_FILE, Command::GenDemos)?.lines();
        let header: ArtifactHeader<DemosBody> = read_header(&mut lines, "demos").map_err(&err)?;
        self.expect_hash(DEMOS_FILE, &header.config_hash, Stage::Demos, Command::GenDemos)?;
        let mut demos: Vec<DemoInput> = header
            .body
            .demos
            .iter()
            .map(|id| DemoInput {
                demo_id: id.clone(),
                task_id: header.body.task_id.clone(),
                frames: Vec::new(),
            })
            .collect();
        let index: BTreeMap<String, usize> =
            demos.iter().enumerate().map(|(i, d)| (d.demo_id.clone(), i)).collect();
        for line in lines {
            let line = line.map_err(|e| err(IoError::Io(e)))?;
            let f: FrameLine = serde_json::from_str(&line).map_err(|e| err(IoError::Json(e)))?;
            let i = *index
                .get(&f.demo_id)
                .ok_or_else(|| err(IoError::Format(format!("frame for unlisted demo `{}`", f.demo_id))))?;
            if f.t != demos[i].frames.len() {
                return Err(err(IoError::Format(format!("demo `{}` frames out of order", f.demo_id))));
            }
            demos[i].frames.push(MarkerFrame {
                positions: f.positions,
                labels: f.labels,
            });
        }
        Ok(demos)
    }

    pub fn read_dataset(&self) -> Result<SubgoalDataset> {
        let r = self.open(DATASET_FILE, Command::BuildDataset)?;
        let (ds, hash) = SubgoalDataset::read_jsonl(r).map_err(self.artifact_err(DATASET_FILE))?;
        self.expect_hash(DATASET_FILE, &hash, Stage::Dataset, Command::BuildDataset)?;
        Ok(ds)
    }

    pub fn read_planner(&self) -> Result<PlannerModel> {
        let r = self.open(PLANNER_FILE, Command::TrainPlanner)?;
        let (m, hash) = PlannerModel::read_json(r).map_err(self.artifact_err(PLANNER_FILE))?;
        self.expect_hash(PLANNER_FILE, &hash, Stage::Planner, Command::TrainPlanner)?;
        Ok(m)
    }

    pub fn read_accuracy(&self) -> Result<PlannerAccuracy> {
        let r = self.open(ACCURACY_FILE, Command::EvalPlanner)?;
        let (a, hash) = read_accuracy(r).map_err(self.artifact_err(ACCURACY_FILE))?;
        self.expect_hash(ACCURACY_FILE, &hash, Stage::Planner, Command::EvalPlanner)?;
        Ok(a)
    }

    pub fn read_policy(&self, seed: u64) -> Result<Policy> {
        let rel = policy_file(seed);
        let r = self.open(&rel, Command::TrainPolicy)?;
        let (p, hash) = Policy::read_tsv(r).map_err(self.artifact_err(&rel))?;
        self.expect_hash(&rel, &hash, Stage::Policy, Command::TrainPolicy)?;
        Ok(p)
    }

    pub fn read_eval(&self) -> Result<Vec<SeedEval>> {
        let err = self.artifact_err(EVAL_FILE);
        let mut lines = self.open(EVAL_FILE, Command::Evaluate)?.lines();
        let header: ArtifactHeader<EvalBody> = read_header(&mut lines, "eval").map_err(&err)?;
        self.expect_hash(EVAL_FILE, &header.config_hash, Stage::Eval, Command::Evaluate)?;
        lines
            .map(|l| {
                let l = l.map_err(|e| err(IoError::Io(e)))?;
                serde_json::from_str(&l).map_err(|e| err(IoError::Json(e)))
            })
            .collect()
    }

    pub fn read_theory(&self) -> Result<Vec<TheoryRecord>> {
        let err = self.artifact_err(THEORY_FILE);
        let mut lines = self.open(THEORY_FILE, Command::VerifyTheory)?.lines();
        let header: ArtifactHeader<TheoryBody> = read_header(&mut lines, "theory").map_err(&err)?;
        self.expect_hash(THEORY_FILE, &header.config_hash, Stage::Theory, Command::VerifyTheory)?;
        lines
            .map(|l| {
                let l = l.map_err(|e| err(IoError::Io(e)))?;
                serde_json::from_str(&l).map_err(|e| err(IoError::Json(e)))
            })
            .collect()
    }

    // ---- commands ----

    /// Runs one command and writes its manifest.
    pub fn run(&self, cmd: Command) -> Result<Outcome> {
        let t0 = Instant::now();
        let (outcome, stage) = match cmd {
            Command::GenDemos => (self.gen_demos()?, Stage::Demos),
            Command::BuildDataset => (self.build_dataset()?, Stage::Dataset),
            Command::TrainPlanner => (self.train_planner()?, Stage::Planner),
            Command::EvalPlanner => (self.eval_planner()?, Stage::Planner),
            Command::TrainPolicy => (self.train_policy()?, Stage::Policy),
            Command::Evaluate => (self.evaluate()?, Stage::Eval),
            Command::AblateReward => (self.ablate_reward()?, Stage::AblateReward),
            Command::AblateKeypoints => (self.ablate_keypoints()?, Stage::AblateKeypoints),
            Command::VerifyTheory => (self.verify_theory()?, Stage::Theory),
        };
        let manifest = Manifest {
            command: cmd.name().to_string(),
            config_hash: self.config_hash(),
            stage_hash: self.stage_hash(stage),
            seeds: self.config.seeds.clone(),
            wall_time_s: t0.elapsed().as_secs_f64(),
            artifacts: outcome.artifacts.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        let mut sink = Outcome::default();
        self.emit(&manifest_file(cmd), bytes, &mut sink)?;
        Ok(outcome)
    }

    fn gen_demos(&self) -> Result<Outcome> {
        let d = &self.config.demos;
        let seeds: Vec<u64> = (0..d.count as u64).map(|i| d.seed_offset + i).collect();
        let frames = self.exec.map(&seeds, |&s| generate_demo(&self.world, s));
        let header = ArtifactHeader::new(
            "demos",
            &self.stage_hash(Stage::Demos),
            DemosBody {
                task_id: self.world.task.task_id.clone(),
                demos: seeds.iter().map(|&s| demo_id(s)).collect(),
            },
        );
        let mut buf = Vec::new();
        let err = self.artifact_err(DEMOS_FILE);
        write_json_line(&mut buf, &header).map_err(&err)?;
        let mut total = 0;
        for (seed, fr) in seeds.iter().zip(frames) {
            let fr = fr?;
            total += fr.len();
            for (t, f) in fr.into_iter().enumerate() {
                let line = FrameLine {
                    demo_id: demo_id(*seed),
                    t,
                    positions: f.positions,
                    labels: f.labels,
                };
                write_json_line(&mut buf, &line).map_err(&err)?;
            }
        }
        let mut out = Outcome::default();
        self.emit(DEMOS_FILE, buf, &mut out)?;
        out.summary.push(format!("{} demos, {total} frames", seeds.len()));
        Ok(out)
    }

    fn build_dataset(&self) -> Result<Outcome> {
        let demos = self.read_demos()?;
        let ds = build_dataset(&demos, &self.config.pipeline, self.exec)?;
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf, &self.stage_hash(Stage::Dataset))
            .map_err(self.artifact_err(DATASET_FILE))?;
        let mut out = Outcome::default();
        self.emit(DATASET_FILE, buf, &mut out)?;
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &ds.records {
            *hist.entry(r.stages()).or_default() += 1;
        }
        out.summary.push(format!(
            "{} of {} demos kept, K = {}, stage counts {:?}",
            ds.records.len(),
            demos.len(),
            ds.keypoint_count().unwrap_or(0),
            hist
        ));
        Ok(out)
    }

    fn fit_planner(&self, ds: &SubgoalDataset) -> Result<PlannerModel> {
        let (train, _) = self.split(ds);
        Ok(fit(
            &train,
            self.config.planner.kind,
            self.alignment(),
            self.config.planner.max_stages,
        )?)
    }

    fn train_planner(&self) -> Result<Outcome> {
        let ds = self.read_dataset()?;
        let model = self.fit_planner(&ds)?;
        let mut buf = Vec::new();
        model
            .write_json(&mut buf, &self.stage_hash(Stage::Planner))
            .map_err(self.artifact_err(PLANNER_FILE))?;
        let mut out = Outcome::default();
        self.emit(PLANNER_FILE, buf, &mut out)?;
        out.summary.push(format!(
            "{:?} planner, alignment {:?}, {} training demos",
            model.kind,
            model.alignment,
            self.split(&ds).0.records.len()
        ));
        Ok(out)
    }

    fn eval_planner(&self) -> Result<Outcome> {
        let ds = self.read_dataset()?;
        let model = self.read_planner()?;
        let (_, heldout) = self.split(&ds);
        let acc = eval_planner(&model, &heldout)?;
        let mut buf = Vec::new();
        write_accuracy(&mut buf, &acc, &self.stage_hash(Stage::Planner))
            .map_err(self.artifact_err(ACCURACY_FILE))?;
        let mut out = Outcome::default();
        self.emit(ACCURACY_FILE, buf, &mut out)?;
        out.summary.push(format!(
            "epsilon_A = {:.3} px over {} held-out demos",
            acc.epsilon_a, acc.heldout_count
        ));
        Ok(out)
    }

    fn train_seed(
        &self,
        planner: &PlannerModel,
        reward: &RewardShapeConfig,
        seed: u64,
    ) -> std::result::Result<(Policy, Vec<crate::trainer::EpisodeMetrics>), TrainError> {
        let cfg = TrainConfig {
            seed,
            ..self.config.train.clone()
        };
        train(&self.world, planner, reward, &cfg)
    }

    fn eval_seed(&self, policy: &Policy, planner: &PlannerModel, reward: &RewardShapeConfig, seed: u64, exec: Execution) -> std::result::Result<EvalReport, TrainError> {
        evaluate(
            policy,
            &self.world,
            planner,
            reward,
            self.config.eval.episodes,
            self.config.train.horizon,
            seed + self.config.eval.seed_offset,
            exec,
        )
    }

    fn train_policy(&self) -> Result<Outcome> {
        let planner = self.read_planner()?;
        let hash = self.stage_hash(Stage::Policy);
        let seeds = &self.config.seeds;
        let trained = self
            .exec
            .map(seeds, |&s| self.train_seed(&planner, &self.config.reward, s));
        let mut out = Outcome::default();
        for (&seed, res) in seeds.iter().zip(trained) {
            let (policy, metrics) = res?;
            let mut buf = Vec::new();
            policy
                .write_tsv(&mut buf, &hash)
                .map_err(self.artifact_err(&policy_file(seed)))?;
            self.emit(&policy_file(seed), buf, &mut out)?;
            let mut csv = format!("# config_hash={hash}\n").into_bytes();
            write_metrics_csv(&mut csv, &metrics).expect("writing to memory");
            self.emit(&metrics_file(seed), csv, &mut out)?;
            let tail = &metrics[metrics.len().saturating_sub(100)..];
            out.summary.push(format!(
                "seed {seed}: {} episodes, {} Q rows, last-100 training success {:.2}",
                metrics.len(),
                policy.q.len(),
                tail.iter().filter(|m| m.success).count() as f64 / tail.len().max(1) as f64
            ));
        }
        Ok(out)
    }

    fn evaluate(&self) -> Result<Outcome> {
        let planner = self.read_planner()?;
        let mut buf = Vec::new();
        let err = self.artifact_err(EVAL_FILE);
        let header = ArtifactHeader::new(
            "eval",
            &self.stage_hash(Stage::Eval),
            EvalBody {
                episodes: self.config.eval.episodes,
                horizon: self.config.train.horizon,
            },
        );
        write_json_line(&mut buf, &header).map_err(&err)?;
        let mut out = Outcome::default();
        for &seed in &self.config.seeds {
            let policy = self.read_policy(seed)?;
            let report = self.eval_seed(&policy, &planner, &self.config.reward, seed, self.exec)?;
            out.summary.push(format!(
                "seed {seed}: success {:.3} over {} episodes",
                report.success_rate, report.episodes
            ));
            write_json_line(&mut buf, &SeedEval { seed, report }).map_err(&err)?;
        }
        self.emit(EVAL_FILE, buf, &mut out)?;
        Ok(out)
    }

    fn ablate_reward(&self) -> Result<Outcome> {
        let planner = self.read_planner()?;
        let hash = self.stage_hash(Stage::AblateReward);
        let variants = &self.config.ablation.variants;
        let jobs: Vec<(ShapeVariant, u64)> = variants
            .iter()
            .flat_map(|&v| self.config.seeds.iter().map(move |&s| (v, s)))
            .collect();
        let results = self.exec.map(&jobs, |&(v, s)| -> Result<EvalReport> {
            let reward = RewardShapeConfig {
                variant: v,
                ..self.config.reward.clone()
            };
            reward.validate()?;
            let (policy, _) = self.train_seed(&planner, &reward, s)?;
            Ok(self.eval_seed(&policy, &planner, &reward, s, Execution::Sequential)?)
        });
        let mut rows = Vec::with_capacity(jobs.len());
        let mut means: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (&(v, s), r) in jobs.iter().zip(results) {
            let r = r?;
            rows.push(RewardAblationRow {
                variant: v.name().to_string(),
                seed: s,
                success_rate: r.success_rate,
                mean_steps: r.mean_steps_on_success,
            });
            let i = variants.iter().position(|x| *x == v).unwrap_or(0);
            let e = means.entry(i).or_default();
            e.0 += r.success_rate;
            e.1 += 1;
        }
        let mut out = Outcome::default();
        self.emit(ABLATE_REWARD_FILE, csv_bytes(&hash, &rows), &mut out)?;
        self.emit(REWARD_CURVES_FILE, self.reward_curves(&hash)?, &mut out)?;
        for (i, (sum, n)) in means {
            out.summary.push(format!("{}: mean success {:.3}", variants[i].name(), sum / n as f64));
        }
        Ok(out)
    }

    /// `l` against every variant's dense reward, past `range_l_max` to
    /// show the extrapolation.
    fn reward_curves(&self, hash: &str) -> Result<Vec<u8>> {
        let base = &self.config.reward;
        let mut buf = format!("# config_hash={hash}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let mut header = vec!["l"];
            header.extend(ShapeVariant::ALL.iter().map(|v| v.name()));
            w.write_record(&header).expect("in-memory csv");
            let steps = (base.range_l_max * 4.0 / 3.0 / 0.5).ceil() as usize;
            for i in 0..=steps {
                let l = i as f64 * 0.5;
                let mut rec = vec![l.to_string()];
                for v in ShapeVariant::ALL {
                    let cfg = RewardShapeConfig {
                        variant: v,
                        ..base.clone()
                    };
                    rec.push((dense_reward(l, &cfg)? + 0.0).to_string());
                }
                w.write_record(&rec).expect("in-memory csv");
            }
            w.flush().expect("in-memory csv");
        }
        Ok(buf)
    }

    fn ablate_keypoints(&self) -> Result<Outcome> {
        let demos = self.read_demos()?;
        let hash = self.stage_hash(Stage::AblateKeypoints);
        let mut rows = Vec::new();
        let mut out = Outcome::default();
        for &k in &self.config.ablation.keypoint_counts {
            let params = PipelineParams {
                keypoint_count: k,
                ..self.config.pipeline.clone()
            };
            let planner = build_dataset(&demos, &params, self.exec)
                .map_err(ExperimentError::from)
                .and_then(|ds| self.fit_planner(&ds));
            let planner = match planner {
                Ok(p) => p,
                Err(e) => {
                    for &seed in &self.config.seeds {
                        rows.push(KeypointAblationRow::failed(k, seed, &e));
                    }
                    out.summary.push(format!("K = {k}: {e}"));
                    continue;
                }
            };
            let results = self.exec.map(&self.config.seeds, |&s| -> Result<EvalReport> {
                let (policy, _) = self.train_seed(&planner, &self.config.reward, s)?;
                Ok(self.eval_seed(&policy, &planner, &self.config.reward, s, Execution::Sequential)?)
            });
            let mut sum = 0.0;
            for (&s, r) in self.config.seeds.iter().zip(results) {
                match r {
                    Ok(r) => {
                        sum += r.success_rate;
                        rows.push(KeypointAblationRow {
                            k,
                            seed: s,
                            success_rate: Some(r.success_rate),
                            mean_steps: r.mean_steps_on_success,
                            error: None,
                        });
                    }
                    Err(e) => rows.push(KeypointAblationRow::failed(k, s, &e)),
                }
            }
            out.summary.push(format!(
                "K = {k}: mean success {:.3}",
                sum / self.config.seeds.len() as f64
            ));
        }
        self.emit(ABLATE_KEYPOINTS_FILE, csv_bytes(&hash, &rows), &mut out)?;
        Ok(out)
    }

    /// World-variant seeds for the theory checks: held-out demo seeds first,
    /// then fresh seeds past the demo range.
    pub fn theory_world_seeds(&self, ds: &SubgoalDataset) -> Vec<u64> {
        let (_, heldout) = self.split(ds);
        let mut seeds: Vec<u64> = heldout.records.iter().filter_map(|r| demo_seed(&r.demo_id)).collect();
        let mut next = self.config.demos.seed_offset + self.config.demos.count as u64;
        while seeds.len() < self.config.theory.worlds {
            seeds.push(next);
            next += 1;
        }
        seeds.truncate(self.config.theory.worlds);
        seeds
    }

    fn verify_theory(&self) -> Result<Outcome> {
        let ds = self.read_dataset()?;
        let planner = self.read_planner()?;
        let acc = self.read_accuracy()?;
        let th = &self.config.theory;
        let world_seeds = self.theory_world_seeds(&ds);
        let worlds: Vec<PointWorld> = world_seeds
            .iter()
            .map(|&s| jitter_task(&self.world, s))
            .collect::<std::result::Result<_, _>>()?;
        let eval_seeds: Vec<u64> = (0..th.eval_seeds as u64).collect();
        let settings = BoundSettings {
            horizon: self.config.train.horizon,
            grid_cell: th.grid_cell,
        };
        let reward = &self.config.reward;

        let lemma = self.exec.map(&worlds, |w| {
            check_lemma1(w, th.lemma_samples, self.config.train.seed, reward, th.grid_cell)
        });
        let mut policies = Vec::new();
        for &s in &self.config.seeds {
            policies.push((s, self.read_policy(s)?));
        }
        let jobs: Vec<(usize, usize)> = (0..policies.len())
            .flat_map(|p| (0..worlds.len()).map(move |w| (p, w)))
            .collect();
        let bounds = self.exec.map(&jobs, |&(p, w)| {
            check_bound(&worlds[w], &acc, &policies[p].1, &planner, reward, &eval_seeds, settings)
        });

        let err = self.artifact_err(THEORY_FILE);
        let mut buf = Vec::new();
        let header = ArtifactHeader::new(
            "theory",
            &self.stage_hash(Stage::Theory),
            TheoryBody {
                worlds: world_seeds.clone(),
                eval_seeds: eval_seeds.clone(),
                grid_cell: th.grid_cell,
                horizon: settings.horizon,
            },
        );
        write_json_line(&mut buf, &header).map_err(&err)?;
        let (mut lemma_ok, mut lemma_n) = (0, 0);
        for (&ws, reports) in world_seeds.iter().zip(lemma) {
            for report in reports? {
                lemma_n += 1;
                lemma_ok += report.verdict as usize;
                write_json_line(&mut buf, &TheoryRecord::Lemma { world_seed: ws, report }).map_err(&err)?;
            }
        }
        let mut table = String::from(
            "seed  world   k  eps_A    eps_pi   V*       V^pi     gap      bound    verdict\n",
        );
        let mut per_seed: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for (&(p, w), report) in jobs.iter().zip(bounds) {
            let report = report?;
            let seed = policies[p].0;
            let e = per_seed.entry(seed).or_default();
            e.0 += report.verdict as usize;
            e.1 += 1;
            let _ = writeln!(
                table,
                "{seed:<5} {:<7} {:<2} {:<8.3} {:<8.3} {:<8.1} {:<8.1} {:<8.1} {:<8.1} {}{}",
                world_seeds[w],
                report.n_stages,
                report.epsilon_a,
                report.epsilon_pi,
                report.v_star_rt,
                report.v_pi_rt,
                report.gap(),
                report.bound(),
                report.verdict,
                if report.all_failed { " (policy failed every episode)" } else { "" },
            );
            write_json_line(
                &mut buf,
                &TheoryRecord::Bound {
                    seed,
                    world_seed: world_seeds[w],
                    report,
                },
            )
            .map_err(&err)?;
        }
        let mut out = Outcome::default();
        out.summary.push(format!("lemma: {lemma_ok}/{lemma_n} verdicts true"));
        for (seed, (ok, n)) in &per_seed {
            out.summary.push(format!("seed {seed}: {ok}/{n} verdicts true"));
        }
        let _ = writeln!(table, "slack = k steps per world (one per stage for grid rounding)");
        for l in &out.summary {
            let _ = writeln!(table, "{l}");
        }
        self.emit(THEORY_FILE, buf, &mut out)?;
        self.emit(THEORY_SUMMARY_FILE, table.into_bytes(), &mut out)?;
        Ok(out)
    }
}

fn val<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config section serializes")
}

/// A `# config_hash=...` comment line, then a header row and the rows.
fn csv_bytes<T: Serialize>(hash: &str, rows: &[T]) -> Vec<u8> {
    let mut buf = format!("# config_hash={hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).expect("in-memory csv");
        }
        w.flush().expect("in-memory csv");
    }
    buf
}

/// Reads a CSV artifact written by this module, skipping comment lines.
pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let io = |e: csv::Error| ExperimentError::Artifact {
        path: path.to_path_buf(),
        source: IoError::Format(e.to_string()),
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> ExperimentConfig {
        let mut c = ExperimentConfig::builtin(name);
        c.demos.count = 10;
        c.train.episodes = 30;
        c.eval.episodes = 5;
        c.theory.worlds = 2;
        c.theory.eval_seeds = 2;
        c.theory.lemma_samples = 5;
        c
    }

    #[test]
    fn seeds_parse() {
        assert_eq!(parse_seeds("0,1,2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("0..3, 7").unwrap(), vec![0, 1, 2, 7]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = small("button-wall");
        c.seeds = vec![3, 4];
        c.train.max_env_steps = Some(1234);
        let text = c.to_toml_string();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let opts = LoadOptions {
            overrides: vec![
                "train.episodes=7".into(),
                "reward.variant=linear".into(),
                "world=builtin:reach".into(),
            ],
            ..Default::default()
        };
        let exp = Experiment::from_toml_str("world = \"builtin:button-wall\"\n", Path::new("."), "x", &opts).unwrap();
        assert_eq!(exp.config.train.episodes, 7);
        assert_eq!(exp.config.reward.variant, ShapeVariant::Linear);
        assert_eq!(exp.world.task.task_id, "reach");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = Experiment::from_toml_str(
            "world = \"builtin:reach\"\n[train]\nepisodez = 3\n",
            Path::new("."),
            "x",
            &LoadOptions::default(),
        )
        .unwrap_err();
        match err {
            ExperimentError::Config { field, message } => {
                assert_eq!(field, "train.episodez");
                assert!(message.contains("episodez"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = Experiment::new(
            ExperimentConfig {
                seeds: vec![],
                ..small("reach")
            },
            Path::new("."),
            PathBuf::from("x"),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn stage_hashes_ignore_unrelated_sections() {
        let a = Experiment::new(small("reach"), Path::new("."), PathBuf::from("a")).unwrap();
        let mut c = small("reach");
        c.eval.episodes = 99;
        c.output = Some(PathBuf::from("elsewhere"));
        let b = Experiment::new(c, Path::new("."), PathBuf::from("b")).unwrap();
        assert_eq!(a.stage_hash(Stage::Policy), b.stage_hash(Stage::Policy));
        assert_ne!(a.stage_hash(Stage::Eval), b.stage_hash(Stage::Eval));
        assert_ne!(a.stage_hash(Stage::Demos), a.stage_hash(Stage::Dataset));
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn missing_upstream_names_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::new(small("reach"), Path::new("."), dir.path().to_path_buf()).unwrap();
        match exp.run(Command::TrainPlanner).unwrap_err() {
            ExperimentError::MissingArtifact { command, .. } => assert_eq!(command, "build-dataset"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chain_runs_and_refuses_foreign_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::new(small("reach"), Path::new("."), dir.path().to_path_buf()).unwrap();
        for cmd in [
            Command::GenDemos,
            Command::BuildDataset,
            Command::TrainPlanner,
            Command::EvalPlanner,
            Command::TrainPolicy,
            Command::Evaluate,
            Command::VerifyTheory,
        ] {
            exp.run(cmd).unwrap_or_else(|e| panic!("{}: {e}", cmd.name()));
            assert!(exp.path(&manifest_file(cmd)).exists());
        }
        assert_eq!(exp.read_demos().unwrap().len(), 10);
        assert_eq!(exp.read_eval().unwrap().len(), 1);
        let theory = exp.read_theory().unwrap();
        assert!(theory.iter().any(|r| matches!(r, TheoryRecord::Bound { .. })));

        let mut c = small("reach");
        c.pipeline.motion_threshold = 7.0;
        let other = Experiment::new(c, Path::new("."), dir.path().to_path_buf()).unwrap();
        assert!(matches!(
            other.run(Command::TrainPlanner).unwrap_err(),
            ExperimentError::HashMismatch { .. }
        ));
    }
}
