//! Deterministic bounded 2D point world with rectangular obstacles.
//!
//! The gripper is a single controlled point moved by clamped delta actions.
//! A rigid pattern of markers rides on the gripper; an optional object
//! marker follows it when close enough; background markers never move.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::WorldError;
use crate::geometry::{euclid, Point2};
use crate::seed::stream_rng;

pub const DEFAULT_SIZE: f64 = 256.0;
pub const DEFAULT_MAX_STEP: f64 = 4.0;
pub const DEFAULT_EPS_CLEAR: f64 = 0.5;
pub const DEFAULT_JITTER_PX: f64 = 8.0;
pub const DEFAULT_MAX_RETRIES: usize = 20;
pub const DEFAULT_ATTACH_RADIUS: f64 = 6.0;

/// Axis-aligned rectangle, serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for Rect {
    fn from(v: [f64; 4]) -> Self {
        Rect {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        }
    }
}

impl From<Rect> for [f64; 4] {
    fn from(r: Rect) -> Self {
        [r.x_min, r.y_min, r.x_max, r.y_max]
    }
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Closed containment.
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_strict(&self, p: Point2) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        let dx = (self.x_min - p.x).max(0.0).max(p.x - self.x_max);
        let dy = (self.y_min - p.y).max(0.0).max(p.y - self.y_max);
        dx.hypot(dy)
    }

    /// Whether the closed segment `a -> b` touches the closed rectangle
    /// (Liang-Barsky clipping).
    pub fn intersects_segment(&self, a: Point2, b: Point2) -> bool {
        let d = b - a;
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        let checks = [
            (-d.x, a.x - self.x_min),
            (d.x, self.x_max - a.x),
            (-d.y, a.y - self.y_min),
            (d.y, self.y_max - a.y),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

fn default_attach_radius() -> f64 {
    DEFAULT_ATTACH_RADIUS
}

pub fn default_gripper_offsets() -> Vec<Point2> {
    vec![
        Point2::new(-3.0, -2.0),
        Point2::new(3.0, -2.0),
        Point2::new(0.0, 3.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub gripper_start: Point2,
    /// Scripted-expert route; the last entry is the final goal.
    pub waypoints: Vec<Point2>,
    #[serde(default)]
    pub object_marker: Option<Point2>,
    #[serde(default = "default_attach_radius")]
    pub attach_radius: f64,
    #[serde(default)]
    pub background_markers: Vec<Point2>,
    /// Fixed offsets of the gripper-rigid markers.
    #[serde(default = "default_gripper_offsets")]
    pub gripper_markers: Vec<Point2>,
}

impl TaskSpec {
    /// An object that starts within the attach radius of the gripper is
    /// held: it is carried from the first step on and jitters with the start.
    pub fn object_held(&self) -> bool {
        self.object_marker
            .map(|o| euclid(o, self.gripper_start) <= self.attach_radius)
            .unwrap_or(false)
    }

    pub fn final_goal(&self) -> Point2 {
        *self.waypoints.last().unwrap_or(&self.gripper_start)
    }

    /// `[gripper_start, waypoints...]`.
    pub fn route(&self) -> Vec<Point2> {
        std::iter::once(self.gripper_start)
            .chain(self.waypoints.iter().copied())
            .collect()
    }
}

fn default_size() -> f64 {
    DEFAULT_SIZE
}
fn default_max_step() -> f64 {
    DEFAULT_MAX_STEP
}
fn default_eps_clear() -> f64 {
    DEFAULT_EPS_CLEAR
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER_PX
}
fn default_retries() -> usize {
    DEFAULT_MAX_RETRIES
}

/// Immutable world definition. Construct through [`PointWorld::validated`]
/// (or the loaders), which enforce the geometric invariants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointWorld {
    #[serde(default = "default_size")]
    pub width: f64,
    #[serde(default = "default_size")]
    pub height: f64,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default = "default_eps_clear")]
    pub eps_clear: f64,
    #[serde(default = "default_jitter")]
    pub jitter_px: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    pub task: TaskSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub gripper: Point2,
    pub object: Option<Point2>,
    pub t: u32,
}

/// Marker positions at one timestep; `labels[i]` names `positions[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub positions: Vec<Point2>,
    pub labels: Vec<String>,
}

impl MarkerFrame {
    pub fn position_of(&self, label: &str) -> Option<Point2> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.positions[i])
    }
}

impl PointWorld {
    pub fn validated(self) -> Result<Self, WorldError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invalid(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("non-positive size {}x{}", self.width, self.height));
        }
        if !(self.max_step > 0.0 && self.max_step <= self.width.min(self.height)) {
            return bad(format!("max_step {} outside (0, min(width, height)]", self.max_step));
        }
        if !(self.eps_clear >= 0.0 && self.jitter_px >= 0.0) {
            return bad("eps_clear and jitter_px must be non-negative".into());
        }
        for (i, r) in self.obstacles.iter().enumerate() {
            if !(r.x_min <= r.x_max && r.y_min <= r.y_max) {
                return bad(format!("obstacle {i} has inverted corners"));
            }
            if r.x_min < 0.0 || r.y_min < 0.0 || r.x_max > self.width || r.y_max > self.height {
                return bad(format!("obstacle {i} leaves the world bounds"));
            }
        }
        let task = &self.task;
        if task.waypoints.is_empty() {
            return bad("task needs at least one waypoint".into());
        }
        if !(task.attach_radius >= 0.0) {
            return bad("attach_radius must be non-negative".into());
        }
        self.check_route(&task.route())
    }

    fn check_route(&self, route: &[Point2]) -> Result<(), WorldError> {
        for (i, p) in route.iter().enumerate() {
            if !p.is_finite() || !self.in_bounds(*p) || self.in_obstacle(*p) {
                return Err(WorldError::Invalid(format!(
                    "route point {i} ({}, {}) is out of bounds or inside an obstacle",
                    p.x, p.y
                )));
            }
        }
        for i in 1..route.len() {
            if !linearly_reachable(self, route[i - 1], route[i]) {
                return Err(WorldError::Unreachable { index: i });
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }

    pub fn in_obstacle(&self, p: Point2) -> bool {
        self.obstacles.iter().any(|r| r.contains(p))
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState {
            gripper: self.task.gripper_start,
            object: self.task.object_marker,
            t: 0,
        }
    }

    /// State whose gripper sits at `gripper`, carrying a held object along.
    pub fn state_at(&self, gripper: Point2) -> WorldState {
        let object = self.task.object_marker.map(|o| {
            if self.task.object_held() {
                o + (gripper - self.task.gripper_start)
            } else {
                o
            }
        });
        WorldState {
            gripper,
            object,
            t: 0,
        }
    }

    pub fn markers(&self, s: &WorldState) -> MarkerFrame {
        let task = &self.task;
        let n = task.gripper_markers.len() + 1 + task.background_markers.len();
        let mut positions = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for (i, off) in task.gripper_markers.iter().enumerate() {
            positions.push(s.gripper + *off);
            labels.push(format!("gripper{i}"));
        }
        if let Some(o) = s.object {
            positions.push(o);
            labels.push("object".to_string());
        }
        for (i, b) in task.background_markers.iter().enumerate() {
            positions.push(*b);
            labels.push(format!("background{i}"));
        }
        MarkerFrame { positions, labels }
    }

    /// Offset of each named marker from the gripper, for markers that move
    /// rigidly with it (gripper markers, and the object when held).
    pub fn rigid_offset(&self, label: &str) -> Option<Point2> {
        if let Some(idx) = label.strip_prefix("gripper") {
            let i: usize = idx.parse().ok()?;
            return self.task.gripper_markers.get(i).copied();
        }
        if label == "object" && self.task.object_held() {
            return self.task.object_marker.map(|o| o - self.task.gripper_start);
        }
        None
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Parse(format!("{}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, WorldError> {
        let w: PointWorld = toml::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        w.validated()
    }

    pub fn from_json_str(text: &str) -> Result<Self, WorldError> {
        let w: PointWorld =
            serde_json::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        w.validated()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("world serializes")
    }

    /// The built-in task library: `reach`, `button-wall`, `push-object`.
    pub fn builtin(name: &str) -> Result<Self, WorldError> {
        let background = vec![
            Point2::new(20.0, 20.0),
            Point2::new(236.0, 20.0),
            Point2::new(20.0, 236.0),
            Point2::new(236.0, 236.0),
            Point2::new(128.0, 244.0),
        ];
        let base = |task: TaskSpec, obstacles: Vec<Rect>| PointWorld {
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            obstacles,
            max_step: DEFAULT_MAX_STEP,
            eps_clear: DEFAULT_EPS_CLEAR,
            jitter_px: DEFAULT_JITTER_PX,
            max_retries: DEFAULT_MAX_RETRIES,
            task,
        };
        let world = match name {
            "reach" => {
                let start = Point2::new(72.0, 128.0);
                base(
                    TaskSpec {
                        task_id: "reach".into(),
                        gripper_start: start,
                        waypoints: vec![Point2::new(128.0, 128.0)],
                        object_marker: Some(start),
                        attach_radius: DEFAULT_ATTACH_RADIUS,
                        background_markers: background,
                        gripper_markers: default_gripper_offsets(),
                    },
                    vec![],
                )
            }
            "button-wall" => {
                let start = Point2::new(88.0, 120.0);
                let mut bg = background;
                // the button itself
                bg.push(Point2::new(136.0, 176.0));
                base(
                    TaskSpec {
                        task_id: "button-wall".into(),
                        gripper_start: start,
                        waypoints: vec![Point2::new(88.0, 168.0), Point2::new(136.0, 168.0)],
                        object_marker: Some(start),
                        attach_radius: DEFAULT_ATTACH_RADIUS,
                        background_markers: bg,
                        gripper_markers: default_gripper_offsets(),
                    },
                    vec![Rect::new(104.0, 96.0, 148.0, 150.0)],
                )
            }
            "push-object" => base(
                TaskSpec {
                    task_id: "push-object".into(),
                    gripper_start: Point2::new(56.0, 128.0),
                    waypoints: vec![Point2::new(132.0, 128.0)],
                    object_marker: Some(Point2::new(92.0, 128.0)),
                    attach_radius: DEFAULT_ATTACH_RADIUS,
                    background_markers: background,
                    gripper_markers: default_gripper_offsets(),
                },
                vec![],
            ),
            other => return Err(WorldError::UnknownTask(other.to_string())),
        };
        world.validated()
    }
}

/// One environment transition.
///
/// The requested delta is clamped to `max_step`. A move whose straight
/// segment touches an obstacle or leaves the bounds is a no-op. An object
/// within `attach_radius` of the new gripper position is carried by the
/// applied delta.
pub fn step(world: &PointWorld, s: &WorldState, action: Point2) -> WorldState {
    let mut delta = if action.is_finite() { action } else { Point2::ORIGIN };
    let mag = delta.norm();
    if mag > world.max_step {
        delta = delta.scale(world.max_step / mag);
    }
    let target = s.gripper + delta;
    let blocked = !world.in_bounds(target)
        || world
            .obstacles
            .iter()
            .any(|r| r.intersects_segment(s.gripper, target));
    if blocked {
        return WorldState { t: s.t + 1, ..*s };
    }
    let object = s.object.map(|o| {
        if euclid(o, target) <= world.task.attach_radius {
            o + delta
        } else {
            o
        }
    });
    WorldState {
        gripper: target,
        object,
        t: s.t + 1,
    }
}

/// Linear reachability: the closed segment keeps `eps_clear` clearance
/// from every obstacle. Checked by sampling the segment at spacing
/// `eps_clear / 2`.
pub fn linearly_reachable(world: &PointWorld, s: Point2, g: Point2) -> bool {
    if !world.in_bounds(s) || !world.in_bounds(g) {
        return false;
    }
    if world.obstacles.is_empty() {
        return true;
    }
    let clear = |p: Point2| world.obstacles.iter().all(|r| r.distance_to(p) >= world.eps_clear);
    let len = euclid(s, g);
    let spacing = (world.eps_clear / 2.0).max(1e-3);
    let n = (len / spacing).ceil() as usize;
    if n == 0 {
        return clear(s);
    }
    if world
        .obstacles
        .iter()
        .any(|r| r.intersects_segment(s, g))
    {
        return false;
    }
    (0..=n).all(|i| {
        let t = i as f64 / n as f64;
        clear(s + (g - s).scale(t))
    })
}

fn jitter_point(rng: &mut ChaCha8Rng, j: f64) -> Point2 {
    if j == 0.0 {
        return Point2::ORIGIN;
    }
    Point2::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j))
}

/// A copy of the world whose start and waypoints are perturbed by uniform
/// noise within `±jitter_px`, re-drawn until the route is linearly
/// reachable again.
pub fn jitter_task(world: &PointWorld, seed: u64) -> Result<PointWorld, WorldError> {
    if world.jitter_px == 0.0 {
        return Ok(world.clone());
    }
    let mut rng = stream_rng(seed, "demo-jitter");
    let task = &world.task;
    let held = task.object_held();
    let mut last_reason = String::new();
    for _ in 0..=world.max_retries {
        let d_start = jitter_point(&mut rng, world.jitter_px);
        let deltas: Vec<Point2> = task
            .waypoints
            .iter()
            .map(|_| jitter_point(&mut rng, world.jitter_px))
            .collect();
        let mut w = world.clone();
        w.task.gripper_start = task.gripper_start + d_start;
        for (wp, d) in w.task.waypoints.iter_mut().zip(&deltas) {
            *wp = *wp + *d;
        }
        w.task.object_marker = task.object_marker.map(|o| {
            if held {
                o + d_start
            } else {
                task.waypoints
                    .iter()
                    .zip(&deltas)
                    .find(|(wp, _)| euclid(**wp, o) <= task.attach_radius)
                    .map(|(_, d)| o + *d)
                    .unwrap_or(o)
            }
        });
        match w.check_route(&w.task.route()) {
            Ok(()) => return Ok(w),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(WorldError::DemoGeneration {
        retries: world.max_retries,
        reason: last_reason,
    })
}

/// Drives the gripper along the route with full `max_step` moves and one
/// shorter move into each waypoint. Returns every frame including frame 0.
pub fn scripted_rollout(world: &PointWorld) -> Result<Vec<MarkerFrame>, WorldError> {
    let mut s = world.initial_state();
    let mut frames = vec![world.markers(&s)];
    let budget = 100_000usize;
    for (wi, wp) in world.task.waypoints.iter().enumerate() {
        while euclid(s.gripper, *wp) > 1e-9 {
            let delta = *wp - s.gripper;
            let next = step(world, &s, delta);
            if next.gripper == s.gripper {
                return Err(WorldError::DemoGeneration {
                    retries: 0,
                    reason: format!("scripted move towards waypoint {wi} is blocked"),
                });
            }
            s = next;
            frames.push(world.markers(&s));
            if frames.len() > budget {
                return Err(WorldError::DemoGeneration {
                    retries: 0,
                    reason: "scripted rollout exceeded its step budget".into(),
                });
            }
        }
    }
    Ok(frames)
}

/// An action-free demonstration: the marker movie of the scripted expert on
/// the jittered task drawn from `seed`.
pub fn generate_demo(world: &PointWorld, seed: u64) -> Result<Vec<MarkerFrame>, WorldError> {
    let jittered = jitter_task(world, seed)?;
    scripted_rollout(&jittered)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_world(start: Point2, waypoints: Vec<Point2>) -> PointWorld {
        PointWorld {
            width: 256.0,
            height: 256.0,
            obstacles: vec![],
            max_step: 4.0,
            eps_clear: 0.5,
            jitter_px: 0.0,
            max_retries: 20,
            task: TaskSpec {
                task_id: "t".into(),
                gripper_start: start,
                waypoints,
                object_marker: None,
                attach_radius: 6.0,
                background_markers: vec![Point2::new(5.0, 5.0)],
                gripper_markers: default_gripper_offsets(),
            },
        }
    }

    #[test]
    fn step_moves_and_clamps() {
        let w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(20.0, 10.0)]);
        let s = WorldState {
            gripper: Point2::new(0.0, 0.0),
            object: None,
            t: 0,
        };
        let n = step(&w, &s, Point2::new(3.0, 0.0));
        assert_eq!(n.gripper, Point2::new(3.0, 0.0));
        assert_eq!(n.t, 1);
        let n = step(&w, &s, Point2::new(8.0, 0.0));
        assert_eq!(n.gripper, Point2::new(4.0, 0.0));
    }

    #[test]
    fn step_is_blocked_by_walls_and_bounds() {
        let mut w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(10.0, 20.0)]);
        w.width = 300.0;
        w.height = 300.0;
        w.obstacles = vec![Rect::new(5.0, 0.0, 6.0, 200.0)];
        let s = WorldState {
            gripper: Point2::new(4.0, 100.0),
            object: None,
            t: 3,
        };
        let n = step(&w, &s, Point2::new(4.0, 0.0));
        assert_eq!(n.gripper, s.gripper);
        assert_eq!(n.t, 4);

        let edge = WorldState {
            gripper: Point2::new(1.0, 1.0),
            object: None,
            t: 0,
        };
        assert_eq!(step(&w, &edge, Point2::new(-4.0, 0.0)).gripper, edge.gripper);
    }

    #[test]
    fn object_follows_when_within_radius() {
        let w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(20.0, 10.0)]);
        let s = WorldState {
            gripper: Point2::new(10.0, 10.0),
            object: Some(Point2::new(16.0, 10.0)),
            t: 0,
        };
        let n = step(&w, &s, Point2::new(2.0, 0.0));
        assert_eq!(n.object, Some(Point2::new(18.0, 10.0)));
        let far = WorldState {
            object: Some(Point2::new(30.0, 10.0)),
            ..s
        };
        assert_eq!(step(&w, &far, Point2::new(2.0, 0.0)).object, far.object);
    }

    #[test]
    fn linear_reachability() {
        let mut w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(20.0, 10.0)]);
        let a = Point2::new(50.0, 50.0);
        assert!(linearly_reachable(&w, a, a));
        assert!(linearly_reachable(&w, a, Point2::new(200.0, 3.0)));
        w.obstacles = vec![Rect::new(100.0, 0.0, 101.0, 200.0)];
        assert!(!linearly_reachable(&w, a, Point2::new(150.0, 50.0)));
        // grazing within the clearance counts as blocked
        assert!(!linearly_reachable(
            &w,
            Point2::new(99.7, 10.0),
            Point2::new(99.7, 150.0)
        ));
        assert!(linearly_reachable(
            &w,
            Point2::new(99.0, 10.0),
            Point2::new(99.0, 150.0)
        ));
    }

    #[test]
    fn demo_step_count_is_ceiling_of_distance() {
        let w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(22.0, 10.0)]);
        let demo = generate_demo(&w, 7).unwrap();
        assert_eq!(demo.len(), 4);
        let w = empty_world(Point2::new(10.0, 10.0), vec![Point2::new(23.0, 10.0)]);
        assert_eq!(generate_demo(&w, 7).unwrap().len(), 5);
    }

    #[test]
    fn background_markers_are_static() {
        let w = PointWorld::builtin("button-wall").unwrap();
        let demo = generate_demo(&w, 3).unwrap();
        let bg: Vec<String> = demo[0]
            .labels
            .iter()
            .filter(|l| l.starts_with("background"))
            .cloned()
            .collect();
        assert!(!bg.is_empty());
        for f in &demo {
            for l in &bg {
                assert_eq!(f.position_of(l), demo[0].position_of(l));
            }
        }
    }

    #[test]
    fn l_route_changes_direction_once() {
        let w = empty_world(
            Point2::new(40.0, 40.0),
            vec![Point2::new(80.0, 40.0), Point2::new(80.0, 80.0)],
        );
        let demo = generate_demo(&w, 0).unwrap();
        let xs: Vec<Point2> = demo.iter().map(|f| f.position_of("gripper0").unwrap()).collect();
        let mut changes = vec![];
        for t in 1..xs.len() - 1 {
            let a = xs[t] - xs[t - 1];
            let b = xs[t + 1] - xs[t];
            let cos = a.dot(b) / (a.norm() * b.norm());
            if cos < 1.0 - 1e-9 {
                changes.push(t);
            }
        }
        assert_eq!(changes, vec![10]);
    }

    #[test]
    fn builtins_validate_and_jitter() {
        for name in ["reach", "button-wall", "push-object"] {
            let w = PointWorld::builtin(name).unwrap();
            for seed in 0..50 {
                let j = jitter_task(&w, seed).unwrap();
                assert!(euclid(j.task.gripper_start, w.task.gripper_start) <= 8.0 * 2f64.sqrt());
            }
        }
        assert!(PointWorld::builtin("nope").is_err());
    }

    #[test]
    fn held_object_rides_along() {
        let w = PointWorld::builtin("reach").unwrap();
        assert!(w.task.object_held());
        let demo = generate_demo(&w, 11).unwrap();
        let last = demo.last().unwrap();
        let g = last.position_of("gripper0").unwrap() - w.task.gripper_markers[0];
        assert!(euclid(last.position_of("object").unwrap(), g) < 1e-9);
    }

    #[test]
    fn world_round_trips_through_toml() {
        let w = PointWorld::builtin("button-wall").unwrap();
        let text = w.to_toml_string();
        let back = PointWorld::from_toml_str(&text).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn invalid_worlds_are_rejected() {
        let mut w = PointWorld::builtin("reach").unwrap();
        w.max_step = 0.0;
        assert!(w.validate().is_err());
        let mut w = PointWorld::builtin("reach").unwrap();
        w.obstacles.push(Rect::new(100.0, 0.0, 104.0, 256.0));
        assert!(matches!(w.validate(), Err(WorldError::Unreachable { index: 1 })));
        let mut w = PointWorld::builtin("reach").unwrap();
        w.obstacles.push(Rect::new(250.0, 0.0, 300.0, 10.0));
        assert!(w.validate().is_err());
    }
}
