//! Brute-force ground truth on a cell grid over the world: shortest step
//! counts, exact undiscounted value iteration under time and distance
//! rewards, the time/distance optimality check, and the sub-optimality
//! bound audit for a trained policy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{OracleError, PlannerError};
use crate::exec::Execution;
use crate::geometry::{euclid, mean_keypoint_distance, KeypointSet, Point2};
use crate::planner::{PlannerAccuracy, PlannerModel};
use crate::reward::{dense_reward, RewardShapeConfig};
use crate::seed::{indexed_rng, stream_rng};
use crate::trainer::{action_set, greedy_rollout, rollout_with, ActorView, Policy, Rollout, N_ACTIONS};
use crate::world::{linearly_reachable, step, PointWorld};

pub type Cell = (i32, i32);

pub const VI_TOLERANCE: f64 = 1e-9;
pub const VI_MAX_SWEEPS: usize = 10_000;

/// Deterministic cell-level MDP. A move is the world step from the cell
/// center with the trainer's action set; the landing point is floored to a
/// cell, and landing in an infeasible cell leaves the agent in place.
#[derive(Clone, Debug)]
pub struct GridMDP {
    pub grid_cell: f64,
    pub nx: i32,
    pub ny: i32,
    feasible: Vec<bool>,
    next: Vec<[u32; N_ACTIONS]>,
}

impl GridMDP {
    pub fn new(world: &PointWorld, grid_cell: f64) -> GridMDP {
        let nx = (world.width / grid_cell).floor().max(1.0) as i32;
        let ny = (world.height / grid_cell).floor().max(1.0) as i32;
        let mut mdp = GridMDP {
            grid_cell,
            nx,
            ny,
            feasible: Vec::with_capacity((nx * ny) as usize),
            next: Vec::with_capacity((nx * ny) as usize),
        };
        for idx in 0..(nx * ny) as usize {
            let c = mdp.center(mdp.cell(idx));
            mdp.feasible.push(world.in_bounds(c) && !world.in_obstacle(c));
        }
        let actions = action_set(world.max_step);
        for idx in 0..(nx * ny) as usize {
            let from = mdp.center(mdp.cell(idx));
            let s = world.state_at(from);
            let mut row = [idx as u32; N_ACTIONS];
            if mdp.feasible[idx] {
                for (a, slot) in row.iter_mut().enumerate() {
                    let to = mdp.index(mdp.cell_of(step(world, &s, actions[a]).gripper));
                    if mdp.feasible[to] {
                        *slot = to as u32;
                    }
                }
            }
            mdp.next.push(row);
        }
        mdp
    }

    pub fn len(&self) -> usize {
        self.feasible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feasible.is_empty()
    }

    pub fn index(&self, c: Cell) -> usize {
        (c.1 * self.nx + c.0) as usize
    }

    pub fn cell(&self, idx: usize) -> Cell {
        (idx as i32 % self.nx, idx as i32 / self.nx)
    }

    pub fn center(&self, c: Cell) -> Point2 {
        Point2::new(
            (c.0 as f64 + 0.5) * self.grid_cell,
            (c.1 as f64 + 0.5) * self.grid_cell,
        )
    }

    pub fn cell_of(&self, p: Point2) -> Cell {
        let f = |v: f64, n: i32| ((v / self.grid_cell).floor() as i32).clamp(0, n - 1);
        (f(p.x, self.nx), f(p.y, self.ny))
    }

    pub fn is_feasible(&self, c: Cell) -> bool {
        c.0 >= 0 && c.1 >= 0 && c.0 < self.nx && c.1 < self.ny && self.feasible[self.index(c)]
    }

    pub fn next(&self, idx: usize, action: usize) -> usize {
        self.next[idx][action] as usize
    }

    fn check(&self, c: Cell) -> Result<usize, OracleError> {
        if self.is_feasible(c) {
            Ok(self.index(c))
        } else {
            Err(OracleError::InfeasibleCell(c.0, c.1))
        }
    }

    /// Steps-to-goal for every cell by BFS over reversed transitions.
    pub fn distances_to(&self, goal: &Goal) -> Vec<Option<u32>> {
        let n = self.len();
        let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
        for s in 0..n {
            if self.feasible[s] {
                for a in 0..N_ACTIONS {
                    let t = self.next(s, a);
                    if t != s {
                        preds[t].push(s as u32);
                    }
                }
            }
        }
        let mut dist = vec![None; n];
        let mut queue = VecDeque::new();
        for s in 0..n {
            if self.feasible[s] && goal.mask[s] {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(t) = queue.pop_front() {
            let d = dist[t].expect("queued cells have a distance");
            for &p in &preds[t] {
                if dist[p as usize].is_none() {
                    dist[p as usize] = Some(d + 1);
                    queue.push_back(p as usize);
                }
            }
        }
        dist
    }
}

/// Goal region on the grid: a stage distance per cell center plus the
/// cells within the success threshold.
#[derive(Clone, Debug)]
pub struct Goal {
    pub distance: Vec<f64>,
    pub mask: Vec<bool>,
}

/// How one keypoint's position follows the controlled point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KeypointAnchor {
    Rigid(Point2),
    Fixed(Point2),
}

impl Goal {
    /// Cells whose center lies within `theta` of `p`.
    pub fn point(mdp: &GridMDP, p: Point2, theta: f64) -> Goal {
        let distance: Vec<f64> = (0..mdp.len()).map(|i| euclid(mdp.center(mdp.cell(i)), p)).collect();
        let mask = distance.iter().map(|d| *d <= theta).collect();
        Goal { distance, mask }
    }

    /// Cells where the keypoints, placed by `anchors` around the center,
    /// are within mean distance `theta` of `target`.
    pub fn keypoints(
        mdp: &GridMDP,
        anchors: &[KeypointAnchor],
        target: &KeypointSet,
        theta: f64,
    ) -> Result<Goal, OracleError> {
        let mut distance = Vec::with_capacity(mdp.len());
        for i in 0..mdp.len() {
            let c = mdp.center(mdp.cell(i));
            let at = keypoints_at(anchors, c);
            distance.push(
                mean_keypoint_distance(&at, target)
                    .map_err(|e| OracleError::Planner(PlannerError::Geometry(e)))?,
            );
        }
        let mask = distance.iter().map(|d| *d <= theta).collect();
        Ok(Goal { distance, mask })
    }
}

pub fn keypoints_at(anchors: &[KeypointAnchor], gripper: Point2) -> KeypointSet {
    KeypointSet::new(
        anchors
            .iter()
            .map(|a| match a {
                KeypointAnchor::Rigid(off) => gripper + *off,
                KeypointAnchor::Fixed(p) => *p,
            })
            .collect(),
    )
}

/// Theory checks model one controlled point: every keypoint must be rigid
/// with the gripper or static.
pub fn anchors_for(world: &PointWorld, labels: &[String]) -> Result<Vec<KeypointAnchor>, OracleError> {
    if world.task.object_marker.is_some() && !world.task.object_held() {
        return Err(OracleError::NotSinglePoint(format!(
            "task `{}` has a free object",
            world.task.task_id
        )));
    }
    labels
        .iter()
        .map(|l| {
            if let Some(off) = world.rigid_offset(l) {
                return Ok(KeypointAnchor::Rigid(off));
            }
            l.strip_prefix("background")
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| world.task.background_markers.get(i))
                .map(|p| KeypointAnchor::Fixed(*p))
                .ok_or_else(|| OracleError::NotSinglePoint(format!("keypoint `{l}` is not rigid")))
        })
        .collect()
}

/// Minimum number of moves from `s` into the goal region, by forward BFS.
/// `None` when the goal cannot be reached.
pub fn shortest_steps(mdp: &GridMDP, s: Cell, goal: &Goal) -> Result<Option<usize>, OracleError> {
    let start = mdp.check(s)?;
    let mut dist = vec![usize::MAX; mdp.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if goal.mask[u] {
            return Ok(Some(dist[u]));
        }
        for a in 0..N_ACTIONS {
            let v = mdp.next(u, a);
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Time,
    Distance,
}

#[derive(Clone, Debug)]
pub struct ValueTable {
    /// `-inf` where the goal is unreachable, 0 on goal cells.
    pub values: Vec<f64>,
    /// Greedy action per cell; `None` on goal and unreachable cells.
    pub policy: Vec<Option<usize>>,
    pub sweeps: usize,
}

/// Undiscounted value iteration. Each move out of a non-goal cell costs
/// `-1` (time) or `f(distance of that cell)` (distance); goal cells are
/// absorbing with value 0.
pub fn value_iteration(
    mdp: &GridMDP,
    goal: &Goal,
    kind: RewardKind,
    reward_cfg: &RewardShapeConfig,
) -> Result<ValueTable, OracleError> {
    let n = mdp.len();
    let reach = mdp.distances_to(goal);
    let mut cost = vec![0.0; n];
    for s in 0..n {
        if reach[s].is_some() && !goal.mask[s] {
            cost[s] = match kind {
                RewardKind::Time => -1.0,
                RewardKind::Distance => dense_reward(goal.distance[s], reward_cfg)?,
            };
        }
    }
    let mut v: Vec<f64> = reach
        .iter()
        .map(|r| if r.is_some() { 0.0 } else { f64::NEG_INFINITY })
        .collect();
    let best_next = |v: &[f64], s: usize| -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..N_ACTIONS {
            let x = v[mdp.next(s, a)];
            if x > best.1 {
                best = (a, x);
            }
        }
        best
    };
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut residual: f64 = 0.0;
        let fresh: Vec<f64> = (0..n)
            .map(|s| {
                if reach[s].is_none() || goal.mask[s] {
                    v[s]
                } else {
                    cost[s] + best_next(&v, s).1
                }
            })
            .collect();
        for s in 0..n {
            if v[s].is_finite() {
                residual = residual.max((fresh[s] - v[s]).abs());
            }
        }
        v = fresh;
        if residual < VI_TOLERANCE {
            break;
        }
        if sweeps >= VI_MAX_SWEEPS {
            return Err(OracleError::NoConvergence { sweeps, residual });
        }
    }
    let policy = (0..n)
        .map(|s| {
            if reach[s].is_none() || goal.mask[s] {
                None
            } else {
                Some(best_next(&v, s).0)
            }
        })
        .collect();
    Ok(ValueTable {
        values: v,
        policy,
        sweeps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub world_id: String,
    pub start: Cell,
    pub goal: Cell,
    pub steps_time_optimal: usize,
    /// `None` if the distance-greedy walk never reaches the goal.
    pub steps_distance_optimal: Option<usize>,
    pub verdict: bool,
}

/// Walks the greedy policy of `table` from `s`; `None` on a cycle.
pub fn greedy_steps(mdp: &GridMDP, table: &ValueTable, goal: &Goal, s: Cell) -> Option<usize> {
    let mut cur = mdp.index(s);
    for steps in 0..=mdp.len() {
        if goal.mask[cur] {
            return Some(steps);
        }
        cur = mdp.next(cur, table.policy[cur]?);
    }
    None
}

fn lemma_setup(
    world: &PointWorld,
    grid_cell: f64,
    goal_cell: Option<Cell>,
    reward_cfg: &RewardShapeConfig,
) -> Result<(GridMDP, Cell, Goal, ValueTable, Vec<Option<u32>>), OracleError> {
    let mdp = GridMDP::new(world, grid_cell);
    let g = goal_cell.unwrap_or_else(|| mdp.cell_of(world.task.final_goal()));
    mdp.check(g)?;
    let goal = Goal::point(&mdp, mdp.center(g), reward_cfg.theta_for(0));
    let table = value_iteration(&mdp, &goal, RewardKind::Distance, reward_cfg)?;
    let bfs = mdp.distances_to(&goal);
    Ok((mdp, g, goal, table, bfs))
}

fn lemma_candidates(world: &PointWorld, mdp: &GridMDP, g: Cell) -> Vec<Cell> {
    let gp = mdp.center(g);
    (0..mdp.len())
        .map(|i| mdp.cell(i))
        .filter(|&c| mdp.is_feasible(c) && linearly_reachable(world, mdp.center(c), gp))
        .collect()
}

fn lemma_report(
    world: &PointWorld,
    mdp: &GridMDP,
    goal: &Goal,
    table: &ValueTable,
    bfs: &[Option<u32>],
    s: Cell,
    g: Cell,
) -> Option<LemmaReport> {
    let t = bfs[mdp.index(s)]? as usize;
    let d = greedy_steps(mdp, table, goal, s);
    Some(LemmaReport {
        world_id: world.task.task_id.clone(),
        start: s,
        goal: g,
        steps_time_optimal: t,
        steps_distance_optimal: d,
        verdict: d == Some(t),
    })
}

/// Samples start cells from which the goal is linearly reachable and
/// compares distance-greedy step counts with BFS.
pub fn check_lemma1(
    world: &PointWorld,
    samples: usize,
    seed: u64,
    reward_cfg: &RewardShapeConfig,
    grid_cell: f64,
) -> Result<Vec<LemmaReport>, OracleError> {
    let (mdp, g, goal, table, bfs) = lemma_setup(world, grid_cell, None, reward_cfg)?;
    let mut starts = lemma_candidates(world, &mdp, g);
    starts.shuffle(&mut stream_rng(seed, "lemma-starts"));
    starts.truncate(samples);
    Ok(starts
        .into_iter()
        .filter_map(|s| lemma_report(world, &mdp, &goal, &table, &bfs, s, g))
        .collect())
}

/// Every feasible start cell that sees `goal_cell` in a straight line.
pub fn check_lemma1_all(
    world: &PointWorld,
    goal_cell: Cell,
    reward_cfg: &RewardShapeConfig,
    grid_cell: f64,
    exec: Execution,
) -> Result<Vec<LemmaReport>, OracleError> {
    let (mdp, g, goal, table, bfs) = lemma_setup(world, grid_cell, Some(goal_cell), reward_cfg)?;
    let starts = lemma_candidates(world, &mdp, g);
    Ok(exec
        .map(&starts, |&s| lemma_report(world, &mdp, &goal, &table, &bfs, s, g))
        .into_iter()
        .flatten()
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub world_id: String,
    pub n_stages: usize,
    pub epsilon_a: f64,
    pub epsilon_pi: f64,
    pub max_step: f64,
    pub v_star_rt: f64,
    pub v_pi_rt: f64,
    pub slack: f64,
    pub verdict: bool,
    /// Mean achieved-minus-oracle steps per stage.
    pub stage_excess: Vec<f64>,
    pub successes: usize,
    pub episodes: usize,
    pub all_failed: bool,
    /// Every leg of the true route is linearly reachable.
    pub lemma_hypothesis: bool,
}

impl BoundReport {
    pub fn gap(&self) -> f64 {
        self.v_star_rt - self.v_pi_rt
    }

    pub fn bound(&self) -> f64 {
        self.n_stages as f64 * (self.epsilon_pi + 2.0 * self.epsilon_a / self.max_step) + self.slack
    }

    pub fn recompute_verdict(&self) -> bool {
        self.gap() <= self.bound()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundSettings {
    pub horizon: usize,
    pub grid_cell: f64,
}

/// Audits one world with the trained greedy policy; each eval seed drives
/// its own tie-breaking stream.
pub fn check_bound(
    world: &PointWorld,
    planner_acc: &PlannerAccuracy,
    policy: &Policy,
    planner: &PlannerModel,
    reward_cfg: &RewardShapeConfig,
    eval_seeds: &[u64],
    settings: BoundSettings,
) -> Result<BoundReport, OracleError> {
    check_bound_with(world, planner_acc, planner, reward_cfg, eval_seeds, settings, |seed, start| {
        let mut rng = indexed_rng(seed, "bound", 0);
        greedy_rollout(policy, world, planner, reward_cfg, start, settings.horizon, &mut rng)
            .map_err(OracleError::from)
    })
}

/// Actor that always moves to the neighbor cell closest (in BFS steps) to
/// the active subgoal region.
pub fn bfs_actor<'a>(
    world: &'a PointWorld,
    planner: &'a PlannerModel,
    reward_cfg: &'a RewardShapeConfig,
    settings: BoundSettings,
) -> impl Fn(u64, Point2) -> Result<Rollout, OracleError> + 'a {
    let mdp = GridMDP::new(world, settings.grid_cell);
    let actions = action_set(world.max_step);
    move |_seed, start| {
        let labels = planner.keypoint_labels(&world.task.task_id)?;
        let anchors = anchors_for(world, labels)?;
        let mut cache: Option<(usize, Vec<Option<u32>>)> = None;
        let mut failure = None;
        let out = rollout_with(world, planner, reward_cfg, start, settings.horizon, |v: &ActorView| {
            if cache.as_ref().map(|c| c.0) != Some(v.stage) {
                match Goal::keypoints(&mdp, &anchors, v.target, reward_cfg.theta_for(v.stage)) {
                    Ok(goal) => cache = Some((v.stage, mdp.distances_to(&goal))),
                    Err(e) => {
                        failure = Some(e);
                        return 0;
                    }
                }
            }
            let dist = &cache.as_ref().expect("filled above").1;
            // score the real continuous successor: off-center the cell
            // model's moves can be blocked
            let score = |a: usize| {
                let to = step(world, v.state, actions[a]).gripper;
                let d = dist[mdp.index(mdp.cell_of(to))].unwrap_or(u32::MAX);
                let l = mean_keypoint_distance(&keypoints_at(&anchors, to), v.target).unwrap_or(f64::INFINITY);
                (d, l)
            };
            (0..N_ACTIONS)
                .map(|a| (a, score(a)))
                .min_by(|x, y| x.1 .0.cmp(&y.1 .0).then(x.1 .1.total_cmp(&y.1 .1)))
                .map(|(a, _)| a)
                .unwrap_or(0)
        })?;
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// Bound audit with an arbitrary actor. `act(seed, start)` returns the
/// rollout for one eval seed.
pub fn check_bound_with(
    world: &PointWorld,
    planner_acc: &PlannerAccuracy,
    planner: &PlannerModel,
    reward_cfg: &RewardShapeConfig,
    eval_seeds: &[u64],
    settings: BoundSettings,
    act: impl Fn(u64, Point2) -> Result<Rollout, OracleError>,
) -> Result<BoundReport, OracleError> {
    if reward_cfg.reward_scale {
        return Err(OracleError::NotSinglePoint(
            "reward scaling must be off for theory checks".into(),
        ));
    }
    let labels = planner.keypoint_labels(&world.task.task_id)?;
    let anchors = anchors_for(world, labels)?;
    let mdp = GridMDP::new(world, settings.grid_cell);

    let route = world.task.route();
    let mut v_star = 0.0;
    let mut lemma_hypothesis = true;
    for (i, leg) in route.windows(2).enumerate() {
        let goal = Goal::point(&mdp, mdp.center(mdp.cell_of(leg[1])), 0.0);
        let steps = shortest_steps(&mdp, mdp.cell_of(leg[0]), &goal)?.ok_or(
            OracleError::NotSinglePoint(format!("route leg {i} is unreachable on the grid")),
        )?;
        v_star -= steps as f64;
        lemma_hypothesis &= linearly_reachable(world, leg[0], leg[1]);
    }

    let start = world.task.gripper_start;
    let mut total_steps = 0.0;
    let mut successes = 0;
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut n_stages = 0;
    for &seed in eval_seeds {
        let ro = act(seed, start)?;
        n_stages = n_stages.max(ro.stage_count);
        if ro.success {
            successes += 1;
            total_steps += ro.steps as f64;
        } else {
            total_steps += settings.horizon as f64;
        }
        let mut began = 0usize;
        for (j, from) in ro.stage_start_grippers.iter().enumerate() {
            let achieved = match ro.stage_end_steps.get(j) {
                Some(&end) => end - began,
                None => settings.horizon - began,
            };
            let goal = Goal::keypoints(&mdp, &anchors, &ro.subgoals[j], reward_cfg.theta_for(j))?;
            let oracle = shortest_steps(&mdp, mdp.cell_of(*from), &goal)?.unwrap_or(settings.horizon);
            if sums.len() <= j {
                sums.push(0.0);
                counts.push(0);
            }
            sums[j] += achieved as f64 - oracle as f64;
            counts[j] += 1;
            began = ro.stage_end_steps.get(j).copied().unwrap_or(settings.horizon);
        }
    }
    let episodes = eval_seeds.len();
    let stage_excess: Vec<f64> = sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect();
    let epsilon_pi = stage_excess.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let mut report = BoundReport {
        world_id: world.task.task_id.clone(),
        n_stages,
        epsilon_a: planner_acc.epsilon_a,
        epsilon_pi,
        max_step: world.max_step,
        v_star_rt: v_star,
        v_pi_rt: -total_steps / episodes.max(1) as f64,
        slack: n_stages as f64,
        verdict: false,
        stage_excess,
        successes,
        episodes,
        all_failed: successes == 0,
        lemma_hypothesis,
    };
    report.verdict = report.recompute_verdict();
    Ok(report)
}
