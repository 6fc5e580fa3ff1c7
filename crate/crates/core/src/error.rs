use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("keypoint sets differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("track needs at least 2 frames, got {0}")]
    TrackTooShort(usize),
    #[error("cannot sample {k} of {n} points")]
    SampleCount { k: usize, n: usize },
    #[error("seed index {seed_index} out of range for {n} points")]
    SeedIndex { seed_index: usize, n: usize },
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world: {0}")]
    Invalid(String),
    #[error("waypoint {index} is not linearly reachable from the previous route point")]
    Unreachable { index: usize },
    #[error("demo generation failed after {retries} re-draws: {reason}")]
    DemoGeneration { retries: usize, reason: String },
    #[error("unknown built-in task `{0}`")]
    UnknownTask(String),
    #[error("world file: {0}")]
    Parse(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline parameters: {0}")]
    Params(String),
    #[error("demo `{demo_id}`: only {survivors} tracks pass the motion threshold, {needed} keypoints requested")]
    TooFewSurvivors {
        demo_id: String,
        survivors: usize,
        needed: usize,
    },
    #[error("demo `{demo_id}`: {reason}")]
    Demo { demo_id: String, reason: String },
    #[error("tracks must share one length")]
    RaggedTracks,
    #[error("no demonstrations given")]
    Empty,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("cannot fit a planner on an empty dataset")]
    EmptyDataset,
    #[error("unknown planner kind `{0}`")]
    UnknownKind(String),
    #[error("unknown alignment `{0}`")]
    UnknownAlignment(String),
    #[error("task `{0}` is not known to the planner")]
    UnknownTask(String),
    #[error("plan for task `{0}` has no stages")]
    NoStages(String),
    #[error("records of task `{task_id}` disagree on keypoint labels")]
    LabelMismatch { task_id: String },
    #[error("least-squares fit failed: {0}")]
    Fit(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("reward_step called on a finished stage tracker")]
    TrackerDone,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("planning at episode reset failed: {0}")]
    Plan(#[from] PlannerError),
    #[error("keypoint label `{0}` missing from marker frame")]
    MissingLabel(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cell ({0}, {1}) is not a feasible cell")]
    InfeasibleCell(i32, i32),
    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("theory checks need a single controlled point: {0}")]
    NotSinglePoint(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}
