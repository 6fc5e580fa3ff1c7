//! Planar points, keypoint sets, tracks and farthest point sampling.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Sub};

use crate::error::GeometryError;

/// A point in image (pixel) coordinates. Sub-pixel values are allowed.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    /// Unchecked constructor; use [`Point2::try_new`] at input boundaries.
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn try_new(x: f64, y: f64) -> Result<Self, GeometryError> {
        if x.is_finite() && y.is_finite() {
            Ok(Point2 { x, y })
        } else {
            Err(GeometryError::NonFinite { x, y })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn scale(&self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

/// Euclidean distance.
pub fn euclid(a: Point2, b: Point2) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// An ordered keypoint configuration. Index `k` names the same physical
/// point in every set of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointSet(pub Vec<Point2>);

impl KeypointSet {
    pub fn new(points: Vec<Point2>) -> Self {
        KeypointSet(points)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    pub fn translated(&self, delta: Point2) -> KeypointSet {
        KeypointSet(self.0.iter().map(|p| *p + delta).collect())
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.0.len().max(1) as f64;
        let (sx, sy) = self.0.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    }
}

/// Stage distance `l`: the mean per-keypoint Euclidean distance.
pub fn mean_keypoint_distance(
    current: &KeypointSet,
    target: &KeypointSet,
) -> Result<f64, GeometryError> {
    if current.len() != target.len() || current.is_empty() {
        return Err(GeometryError::LengthMismatch {
            left: current.len(),
            right: target.len(),
        });
    }
    let sum: f64 = current
        .0
        .iter()
        .zip(&target.0)
        .map(|(a, b)| euclid(*a, *b))
        .sum();
    Ok(sum / current.len() as f64)
}

/// Per-frame positions of one tracked point across a demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointTrack {
    pub label: String,
    pub frames: Vec<Point2>,
}

impl KeypointTrack {
    pub fn new(label: impl Into<String>, frames: Vec<Point2>) -> Result<Self, GeometryError> {
        if frames.len() < 2 {
            return Err(GeometryError::TrackTooShort(frames.len()));
        }
        if let Some(p) = frames.iter().find(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite { x: p.x, y: p.y });
        }
        Ok(KeypointTrack {
            label: label.into(),
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Greedy farthest point sampling.
///
/// `result[0] == seed_index`; every later pick maximizes the minimum distance
/// to the points already chosen. Equal candidates resolve to the lower index.
pub fn fps(points: &[Point2], k: usize, seed_index: usize) -> Result<Vec<usize>, GeometryError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(GeometryError::SampleCount { k, n });
    }
    if seed_index >= n {
        return Err(GeometryError::SeedIndex { seed_index, n });
    }

    let mut selected = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let mut min_dist: Vec<f64> = points.iter().map(|p| euclid(*p, points[seed_index])).collect();
    selected.push(seed_index);
    chosen[seed_index] = true;

    while selected.len() < k {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if !chosen[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        selected.push(best);
        chosen[best] = true;
        let p = points[best];
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = euclid(points[i], p);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn euclid_examples() {
        assert_eq!(euclid(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(euclid(p(0.0, 0.0), p(3.0, 4.0)), 5.0);
        assert_eq!(euclid(p(1.0, 2.0), p(4.0, 6.0)), 5.0);
    }

    #[test]
    fn mean_distance_examples() {
        let a = KeypointSet::new(vec![p(1.0, 1.0), p(-2.0, 7.5)]);
        assert_eq!(mean_keypoint_distance(&a, &a).unwrap(), 0.0);

        let one = KeypointSet::new(vec![p(0.0, 0.0)]);
        let other = KeypointSet::new(vec![p(3.0, 4.0)]);
        assert_eq!(mean_keypoint_distance(&one, &other).unwrap(), 5.0);

        let cur = KeypointSet::new(vec![p(0.0, 0.0), p(0.0, 0.0)]);
        let tgt = KeypointSet::new(vec![p(3.0, 4.0), p(6.0, 8.0)]);
        assert_eq!(mean_keypoint_distance(&cur, &tgt).unwrap(), 7.5);
    }

    #[test]
    fn mean_distance_rejects_mismatch() {
        let a = KeypointSet::new(vec![p(0.0, 0.0)]);
        let b = KeypointSet::new(vec![p(0.0, 0.0), p(1.0, 1.0)]);
        assert!(matches!(
            mean_keypoint_distance(&a, &b),
            Err(GeometryError::LengthMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn fps_examples() {
        let pts = vec![p(0.0, 0.0), p(1.0, 0.0), p(10.0, 0.0)];
        assert_eq!(fps(&pts, 2, 0).unwrap(), vec![0, 2]);
        assert_eq!(fps(&pts, 1, 2).unwrap(), vec![2]);
        let all = fps(&pts, 3, 0).unwrap();
        assert_eq!(all, vec![0, 2, 1]);
    }

    #[test]
    fn fps_tie_prefers_lower_index() {
        // (1,0) and (-1,0) are equidistant from the seed.
        let pts = vec![p(0.0, 0.0), p(-1.0, 0.0), p(1.0, 0.0)];
        assert_eq!(fps(&pts, 2, 0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn fps_rejects_bad_arguments() {
        let pts = vec![p(0.0, 0.0), p(1.0, 0.0)];
        assert!(fps(&pts, 0, 0).is_err());
        assert!(fps(&pts, 3, 0).is_err());
        assert!(fps(&pts, 1, 5).is_err());
    }

    #[test]
    fn non_finite_points_are_rejected() {
        assert!(Point2::try_new(f64::NAN, 0.0).is_err());
        assert!(KeypointTrack::new("a", vec![p(0.0, 0.0), p(f64::INFINITY, 0.0)]).is_err());
        assert!(KeypointTrack::new("a", vec![p(0.0, 0.0)]).is_err());
    }
}
