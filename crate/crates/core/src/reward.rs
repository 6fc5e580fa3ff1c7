//! Stage-wise rewards: dense distance shaping, stage and final bonuses,
//! and the per-stage episode segmentation signal.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::RewardError;
use crate::geometry::{mean_keypoint_distance, KeypointSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeVariant {
    #[default]
    PiecewiseLinear,
    Linear,
    Exponential,
    Logistic,
}

impl ShapeVariant {
    pub const ALL: [ShapeVariant; 4] = [
        ShapeVariant::PiecewiseLinear,
        ShapeVariant::Linear,
        ShapeVariant::Exponential,
        ShapeVariant::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeVariant::PiecewiseLinear => "piecewise_linear",
            ShapeVariant::Linear => "linear",
            ShapeVariant::Exponential => "exponential",
            ShapeVariant::Logistic => "logistic",
        }
    }

    pub fn parse(s: &str) -> Result<Self, RewardError> {
        ShapeVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| RewardError::Config(format!("unknown reward variant `{s}`")))
    }
}

pub fn default_breakpoints() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0], [5.0, -2.0], [15.0, -5.0], [30.0, -9.0]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardShapeConfig {
    pub variant: ShapeVariant,
    /// `(l, b)` pairs for the piecewise-linear curve.
    pub breakpoints: Vec<[f64; 2]>,
    pub range_l_max: f64,
    pub range_r_min: f64,
    /// Curvature of the exponential and logistic curves.
    pub variant_rate: f64,
    pub theta_success: f64,
    /// Per-stage thresholds; stages past the end use `theta_success`.
    pub stage_thresholds: Vec<f64>,
    pub stage_bonus: f64,
    pub final_bonus: f64,
    pub reward_scale: bool,
    /// When false the dense term is zero and only the bonuses remain.
    pub dense_enabled: bool,
}

impl Default for RewardShapeConfig {
    fn default() -> Self {
        RewardShapeConfig {
            variant: ShapeVariant::PiecewiseLinear,
            breakpoints: default_breakpoints(),
            range_l_max: 30.0,
            range_r_min: -9.0,
            variant_rate: 0.15,
            theta_success: 3.0,
            stage_thresholds: Vec::new(),
            stage_bonus: 1.0,
            final_bonus: 10.0,
            reward_scale: false,
            dense_enabled: true,
        }
    }
}

impl RewardShapeConfig {
    pub fn with_variant(variant: ShapeVariant) -> Self {
        RewardShapeConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: String| Err(RewardError::Config(m));
        let bp = &self.breakpoints;
        if bp.len() < 2 {
            return bad("need at least two breakpoints".into());
        }
        if bp[0] != [0.0, 0.0] {
            return bad("first breakpoint must be (0, 0)".into());
        }
        for w in bp.windows(2) {
            if !(w[1][0] > w[0][0]) || !(w[1][1] < w[0][1]) {
                return bad(format!(
                    "breakpoints must increase in l and decrease in b: {:?} then {:?}",
                    w[0], w[1]
                ));
            }
        }
        if !(self.range_l_max > 0.0) || !(self.range_r_min < 0.0) {
            return bad("range_l_max must be > 0 and range_r_min < 0".into());
        }
        let end = piecewise_linear(bp, self.range_l_max);
        if (end - self.range_r_min).abs() > 1e-9 {
            return bad(format!(
                "piecewise table gives {end} at range_l_max, range_r_min is {}",
                self.range_r_min
            ));
        }
        if !(self.variant_rate > 0.0) || !self.variant_rate.is_finite() {
            return bad("variant_rate must be positive".into());
        }
        if !(self.theta_success > 0.0) || self.stage_thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("success thresholds must be positive".into());
        }
        Ok(())
    }

    /// Success threshold for 0-based stage `stage`.
    pub fn theta_for(&self, stage: usize) -> f64 {
        self.stage_thresholds
            .get(stage)
            .copied()
            .unwrap_or(self.theta_success)
    }
}

fn piecewise_linear(bp: &[[f64; 2]], l: f64) -> f64 {
    let seg = bp
        .windows(2)
        .position(|w| l <= w[1][0])
        .unwrap_or(bp.len() - 2);
    let ([l0, b0], [l1, b1]) = (bp[seg], bp[seg + 1]);
    (b1 - b0) / (l1 - l0) * (l - l0) + b0
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dense shaping term for stage distance `l`.
pub fn dense_reward(l: f64, cfg: &RewardShapeConfig) -> Result<f64, RewardError> {
    if !(l >= 0.0) || !l.is_finite() {
        return Err(RewardError::NegativeDistance(l));
    }
    let (big_l, r_min, rate) = (cfg.range_l_max, cfg.range_r_min, cfg.variant_rate);
    Ok(match cfg.variant {
        ShapeVariant::PiecewiseLinear => piecewise_linear(&cfg.breakpoints, l),
        ShapeVariant::Linear => r_min / big_l * l,
        ShapeVariant::Exponential => r_min * (-rate * l).exp_m1() / (-rate * big_l).exp_m1(),
        ShapeVariant::Logistic => {
            let s = |x: f64| logistic(rate * (x - big_l / 2.0));
            r_min * (s(l) - s(0.0)) / (s(big_l) - s(0.0))
        }
    })
}

/// Writes `l,r` rows on `[0, l_max]` with spacing `dl`.
pub fn export_curve_csv<W: Write>(
    mut w: W,
    cfg: &RewardShapeConfig,
    l_max: f64,
    dl: f64,
) -> Result<(), std::io::Error> {
    writeln!(w, "l,r")?;
    let n = (l_max / dl).round() as usize;
    for i in 0..=n {
        let l = i as f64 * dl;
        let r = dense_reward(l, cfg).map_err(std::io::Error::other)?;
        writeln!(w, "{l},{r}")?;
    }
    Ok(())
}

/// Which subgoal an episode is currently chasing.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTracker {
    subgoals: Vec<KeypointSet>,
    /// 0-based index into `subgoals`.
    current_stage: usize,
    done: bool,
}

impl StageTracker {
    pub fn new(subgoals: Vec<KeypointSet>) -> Result<Self, RewardError> {
        if subgoals.is_empty() {
            return Err(RewardError::Config("no subgoals to track".into()));
        }
        Ok(StageTracker {
            subgoals,
            current_stage: 0,
            done: false,
        })
    }

    pub fn current_stage(&self) -> usize {
        self.current_stage
    }

    pub fn stage_count(&self) -> usize {
        self.subgoals.len()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn subgoals(&self) -> &[KeypointSet] {
        &self.subgoals
    }

    pub fn target(&self) -> &KeypointSet {
        &self.subgoals[self.current_stage]
    }

    /// Scores `current` against the active subgoal and advances the stage
    /// when it is within the threshold.
    pub fn step(
        &mut self,
        current: &KeypointSet,
        cfg: &RewardShapeConfig,
    ) -> Result<RewardStepResult, RewardError> {
        if self.done {
            return Err(RewardError::TrackerDone);
        }
        let stage = self.current_stage;
        let l = mean_keypoint_distance(current, &self.subgoals[stage])?;
        let r_dense = if cfg.dense_enabled {
            dense_reward(l, cfg)?
        } else {
            0.0
        };
        let mut out = RewardStepResult {
            r_total: r_dense,
            r_dense,
            distance: l,
            stage,
            stage_event: false,
            episode_terminal: false,
            task_done: false,
        };
        if l <= cfg.theta_for(stage) {
            out.episode_terminal = true;
            if stage + 1 < self.subgoals.len() {
                out.stage_event = true;
                out.r_total += cfg.stage_bonus;
                self.current_stage += 1;
            } else {
                out.task_done = true;
                out.r_total += cfg.stage_bonus + cfg.final_bonus;
                self.done = true;
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardStepResult {
    pub r_total: f64,
    pub r_dense: f64,
    /// Stage distance `l` that was scored.
    pub distance: f64,
    /// Stage that was scored (before any advance).
    pub stage: usize,
    pub stage_event: bool,
    pub episode_terminal: bool,
    pub task_done: bool,
}

/// Functional form of [`StageTracker::step`].
pub fn reward_step(
    tracker: &StageTracker,
    current: &KeypointSet,
    cfg: &RewardShapeConfig,
) -> Result<(RewardStepResult, StageTracker), RewardError> {
    let mut next = tracker.clone();
    let r = next.step(current, cfg)?;
    Ok((r, next))
}

/// Running standard-deviation normalizer for rewards (Welford).
#[derive(Clone, Debug, Default)]
pub struct RewardScaler {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub fn scale(&mut self, r: f64) -> f64 {
        self.count += 1;
        let d = r - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (r - self.mean);
        let sd = self.std();
        if sd > 1e-8 {
            r / sd
        } else {
            r
        }
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}
