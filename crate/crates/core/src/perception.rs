//! From demonstration marker movies to the keypoint subgoal dataset.
//!
//! Per demo: candidate tracks are assembled from the marker frames, tracks
//! that barely move are dropped, farthest point sampling picks `K`
//! keypoints on frame 0, and keyframes are placed where the keypoints'
//! motion direction turns. The keypoint positions at those keyframes are
//! the demo's subgoals.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::PipelineError;
use crate::exec::Execution;
use crate::geometry::{fps, KeypointSet, KeypointTrack, Point2};
use crate::io::{read_header, write_json_line, ArtifactHeader, IoError};
use crate::world::MarkerFrame;

/// Inside a window cut short by the end of the demo, the arg-min frame is
/// kept only if its cosine sum falls at least this far below the
/// straight-motion value `K`.
/// Keypoint selection works on frame-0 offsets rounded to `1 / FPS_SNAP` px.
pub const FPS_SNAP: f64 = 1e6;

pub const TAIL_TURN_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnDemoError {
    #[default]
    Abort,
    SkipAndLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    /// Minimum squared displacement (px²) a track must span to survive.
    pub motion_threshold: f64,
    pub keypoint_count: usize,
    /// Smallest gap between consecutive keyframes, in frames.
    pub min_step: usize,
    /// Largest gap searched for the next keyframe, in frames.
    pub max_step_window: usize,
    /// Displacements shorter than this (px) count as "no direction".
    pub angle_epsilon: f64,
    pub fps_seed_index: usize,
    pub on_error: OnDemoError,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            motion_threshold: 5.0,
            keypoint_count: 4,
            min_step: 5,
            max_step_window: 20,
            angle_epsilon: 1e-6,
            fps_seed_index: 0,
            on_error: OnDemoError::Abort,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.min_step < 1 || self.min_step >= self.max_step_window {
            return Err(PipelineError::Params(format!(
                "need 1 <= min_step < max_step_window, got {} and {}",
                self.min_step, self.max_step_window
            )));
        }
        if !(self.motion_threshold >= 0.0) {
            return Err(PipelineError::Params("motion_threshold must be >= 0".into()));
        }
        if self.keypoint_count < 1 {
            return Err(PipelineError::Params("keypoint_count must be >= 1".into()));
        }
        if !(self.angle_epsilon >= 0.0) {
            return Err(PipelineError::Params("angle_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalRecord {
    pub demo_id: String,
    pub task_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    /// Marker labels of the chosen keypoints, in keypoint order.
    pub keypoint_labels: Vec<String>,
    pub initial_keypoints: KeypointSet,
    pub keyframe_times: Vec<usize>,
    pub subgoals: Vec<KeypointSet>,
}

impl SubgoalRecord {
    pub fn stages(&self) -> usize {
        self.subgoals.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgoalDataset {
    pub records: Vec<SubgoalRecord>,
    pub params: PipelineParams,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeaderBody {
    params: PipelineParams,
    records: usize,
}

pub const DATASET_KIND: &str = "subgoal-dataset";

impl SubgoalDataset {
    pub fn keypoint_count(&self) -> Option<usize> {
        self.records.first().map(|r| r.k)
    }

    /// Split into the first `train` records and the rest.
    pub fn split_at(&self, train: usize) -> (SubgoalDataset, SubgoalDataset) {
        let train = train.min(self.records.len());
        let (a, b) = self.records.split_at(train);
        (
            SubgoalDataset {
                records: a.to_vec(),
                params: self.params.clone(),
            },
            SubgoalDataset {
                records: b.to_vec(),
                params: self.params.clone(),
            },
        )
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W, config_hash: &str) -> Result<(), IoError> {
        let header = ArtifactHeader::new(
            DATASET_KIND,
            config_hash,
            DatasetHeaderBody {
                params: self.params.clone(),
                records: self.records.len(),
            },
        );
        write_json_line(&mut w, &header)?;
        for r in &self.records {
            write_json_line(&mut w, r)?;
        }
        Ok(())
    }

    /// Returns the dataset and the config hash recorded in its header.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(SubgoalDataset, String), IoError> {
        let mut lines = r.lines();
        let header: ArtifactHeader<DatasetHeaderBody> = read_header(&mut lines, DATASET_KIND)?;
        let mut records = Vec::with_capacity(header.body.records);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        if records.len() != header.body.records {
            return Err(IoError::Format(format!(
                "dataset header announces {} records, found {}",
                header.body.records,
                records.len()
            )));
        }
        Ok((
            SubgoalDataset {
                records,
                params: header.body.params,
            },
            header.config_hash,
        ))
    }
}

fn max_squared_displacement(frames: &[Point2]) -> f64 {
    let mut best = 0.0_f64;
    for (i, a) in frames.iter().enumerate() {
        for b in &frames[i + 1..] {
            let d = *a - *b;
            best = best.max(d.x * d.x + d.y * d.y);
        }
    }
    best
}

fn check_equal_lengths(tracks: &[KeypointTrack]) -> Result<(), PipelineError> {
    match tracks.first() {
        Some(first) if tracks.iter().any(|t| t.len() != first.len()) => {
            Err(PipelineError::RaggedTracks)
        }
        _ => Ok(()),
    }
}

fn surviving_indices(tracks: &[KeypointTrack], theta: f64) -> Vec<usize> {
    tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| max_squared_displacement(&t.frames) >= theta)
        .map(|(i, _)| i)
        .collect()
}

/// Keeps the tracks whose largest squared displacement over any two
/// frames reaches `theta`, in input order.
pub fn motion_filter(
    tracks: &[KeypointTrack],
    theta: f64,
) -> Result<Vec<KeypointTrack>, PipelineError> {
    check_equal_lengths(tracks)?;
    Ok(surviving_indices(tracks, theta)
        .into_iter()
        .map(|i| tracks[i].clone())
        .collect())
}

/// Motion filter followed by farthest point sampling on the survivors'
/// frame-0 positions. The result is in pick order.
pub fn select_keypoints(
    tracks: &[KeypointTrack],
    params: &PipelineParams,
) -> Result<Vec<KeypointTrack>, PipelineError> {
    select_keypoints_for("<unnamed>", tracks, params)
}

fn select_keypoints_for(
    demo_id: &str,
    tracks: &[KeypointTrack],
    params: &PipelineParams,
) -> Result<Vec<KeypointTrack>, PipelineError> {
    if tracks.is_empty() {
        return Err(PipelineError::Demo {
            demo_id: demo_id.to_string(),
            reason: "no candidate tracks".into(),
        });
    }
    check_equal_lengths(tracks)?;
    let survivors = surviving_indices(tracks, params.motion_threshold);
    if survivors.len() < params.keypoint_count {
        return Err(PipelineError::TooFewSurvivors {
            demo_id: demo_id.to_string(),
            survivors: survivors.len(),
            needed: params.keypoint_count,
        });
    }
    let seed = params.fps_seed_index.min(survivors.len() - 1);
    // Relative to the seed point and snapped to a micro-pixel grid, so a
    // translated copy of the same marker layout breaks distance ties the
    // same way.
    let origin = tracks[survivors[seed]].frames[0];
    let snap = |v: f64| (v * FPS_SNAP).round() / FPS_SNAP;
    let starts: Vec<Point2> = survivors
        .iter()
        .map(|&i| {
            let d = tracks[i].frames[0] - origin;
            Point2::new(snap(d.x), snap(d.y))
        })
        .collect();
    let picks = fps(&starts, params.keypoint_count, seed)?;
    Ok(picks.into_iter().map(|p| tracks[survivors[p]].clone()).collect())
}

/// Sum over keypoints of the cosine between the displacement into frame `t`
/// and the displacement out of it. Degenerate displacements count as +1.
pub fn turn_objective(tracks: &[KeypointTrack], t: usize, angle_epsilon: f64) -> f64 {
    tracks
        .iter()
        .map(|tr| {
            let a = tr.frames[t] - tr.frames[t - 1];
            let b = tr.frames[t + 1] - tr.frames[t];
            let (na, nb) = (a.norm(), b.norm());
            if na < angle_epsilon || nb < angle_epsilon || na == 0.0 || nb == 0.0 {
                1.0
            } else {
                a.dot(b) / (na * nb)
            }
        })
        .sum()
}

/// Keyframe times for the chosen keypoint tracks.
///
/// Starting from frame 0, each next keyframe is the frame in
/// `[prev + min_step, min(prev + max_step_window, T - 1)]` with the smallest
/// cosine sum, earliest on ties. When the window is cut short by the end of
/// the demo, a frame is kept only if it is a real turn; otherwise the search
/// stops. The final frame `T` always closes the list.
pub fn select_keyframes(
    tracks: &[KeypointTrack],
    params: &PipelineParams,
) -> Result<Vec<usize>, PipelineError> {
    params.validate()?;
    check_equal_lengths(tracks)?;
    let Some(first) = tracks.first() else {
        return Err(PipelineError::Demo {
            demo_id: "<unnamed>".into(),
            reason: "no keypoint tracks".into(),
        });
    };
    let last = first.len() - 1;
    if last < params.min_step + 1 {
        return Ok(vec![last]);
    }
    let straight = tracks.len() as f64;
    let mut keyframes = Vec::new();
    let mut prev = 0usize;
    loop {
        let lo = prev + params.min_step;
        if lo > last - 1 {
            break;
        }
        let full_hi = prev + params.max_step_window;
        let truncated = full_hi > last - 1;
        let hi = full_hi.min(last - 1);
        let mut best_t = lo;
        let mut best_v = f64::INFINITY;
        for t in lo..=hi {
            let v = turn_objective(tracks, t, params.angle_epsilon);
            if v < best_v {
                best_v = v;
                best_t = t;
            }
        }
        if truncated && best_v >= straight - TAIL_TURN_TOLERANCE {
            break;
        }
        keyframes.push(best_t);
        prev = best_t;
    }
    keyframes.push(last);
    Ok(keyframes)
}

/// A demonstration handed to the pipeline.
#[derive(Clone, Debug)]
pub struct DemoInput {
    pub demo_id: String,
    pub task_id: String,
    pub frames: Vec<MarkerFrame>,
}

pub fn tracks_from_frames(
    demo_id: &str,
    frames: &[MarkerFrame],
) -> Result<Vec<KeypointTrack>, PipelineError> {
    let demo_err = |reason: String| PipelineError::Demo {
        demo_id: demo_id.to_string(),
        reason,
    };
    let first = frames
        .first()
        .ok_or_else(|| demo_err("demo has no frames".into()))?;
    for (t, f) in frames.iter().enumerate() {
        if f.labels != first.labels || f.positions.len() != f.labels.len() {
            return Err(demo_err(format!("marker layout changes at frame {t}")));
        }
    }
    (0..first.labels.len())
        .map(|i| {
            KeypointTrack::new(
                first.labels[i].clone(),
                frames.iter().map(|f| f.positions[i]).collect(),
            )
            .map_err(|e| demo_err(e.to_string()))
        })
        .collect()
}

fn build_record(demo: &DemoInput, params: &PipelineParams) -> Result<SubgoalRecord, PipelineError> {
    let tracks = tracks_from_frames(&demo.demo_id, &demo.frames)?;
    let chosen = select_keypoints_for(&demo.demo_id, &tracks, params)?;
    let keyframe_times = select_keyframes(&chosen, params).map_err(|e| PipelineError::Demo {
        demo_id: demo.demo_id.clone(),
        reason: e.to_string(),
    })?;
    let at = |t: usize| KeypointSet::new(chosen.iter().map(|tr| tr.frames[t]).collect());
    Ok(SubgoalRecord {
        demo_id: demo.demo_id.clone(),
        task_id: demo.task_id.clone(),
        k: chosen.len(),
        keypoint_labels: chosen.iter().map(|t| t.label.clone()).collect(),
        initial_keypoints: at(0),
        subgoals: keyframe_times.iter().map(|&t| at(t)).collect(),
        keyframe_times,
    })
}

/// Runs the pipeline over every demo. Demos are processed independently;
/// records come back in demo order.
pub fn build_dataset(
    demos: &[DemoInput],
    params: &PipelineParams,
    exec: Execution,
) -> Result<SubgoalDataset, PipelineError> {
    params.validate()?;
    if demos.is_empty() {
        return Err(PipelineError::Empty);
    }
    let results = exec.map(demos, |d| build_record(d, params));
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        match (r, params.on_error) {
            (Ok(rec), _) => records.push(rec),
            (Err(e), OnDemoError::Abort) => return Err(e),
            (Err(e), OnDemoError::SkipAndLog) => log::warn!("skipping demo: {e}"),
        }
    }
    if records.is_empty() {
        return Err(PipelineError::Empty);
    }
    Ok(SubgoalDataset {
        records,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(label: &str, pts: &[(f64, f64)]) -> KeypointTrack {
        KeypointTrack::new(label, pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    /// Rigid polyline translation: `dirs[i]` repeated `lens[i]` frames.
    fn polyline(offsets: &[(f64, f64)], segments: &[((f64, f64), usize)]) -> Vec<KeypointTrack> {
        let mut path = vec![Point2::ORIGIN];
        for &((dx, dy), n) in segments {
            for _ in 0..n {
                let p = *path.last().unwrap();
                path.push(p + Point2::new(dx, dy));
            }
        }
        offsets
            .iter()
            .enumerate()
            .map(|(i, &(ox, oy))| {
                KeypointTrack::new(
                    format!("k{i}"),
                    path.iter().map(|p| *p + Point2::new(ox, oy)).collect(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn motion_filter_examples() {
        let stat = track("s", &[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        let mov = track("m", &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let both = vec![stat.clone(), mov.clone()];
        assert_eq!(motion_filter(&[stat.clone()], 1.0).unwrap(), vec![]);
        assert_eq!(motion_filter(&both, 0.0).unwrap(), both);
        assert!(motion_filter(&[mov.clone()], 5.0).unwrap().is_empty());
        assert_eq!(motion_filter(&[mov.clone()], 4.0).unwrap(), vec![mov]);
        assert!(motion_filter(&[], 3.0).unwrap().is_empty());
    }

    #[test]
    fn select_keypoints_needs_enough_survivors() {
        let params = PipelineParams {
            keypoint_count: 2,
            ..Default::default()
        };
        let tracks = vec![
            track("a", &[(0.0, 0.0), (5.0, 0.0)]),
            track("b", &[(9.0, 0.0), (9.0, 0.0)]),
        ];
        assert!(matches!(
            select_keypoints(&tracks, &params),
            Err(PipelineError::TooFewSurvivors {
                survivors: 1,
                needed: 2,
                ..
            })
        ));
        let tracks = vec![
            track("a", &[(0.0, 0.0), (5.0, 0.0)]),
            track("b", &[(9.0, 0.0), (19.0, 0.0)]),
        ];
        let got = select_keypoints(&tracks, &params).unwrap();
        assert_eq!(got, tracks);
    }

    #[test]
    fn straight_motion_places_keyframes_every_min_step() {
        let tracks = polyline(&[(0.0, 0.0), (3.0, 1.0)], &[((2.0, 1.0), 30)]);
        let kf = select_keyframes(&tracks, &PipelineParams::default()).unwrap();
        assert_eq!(kf, vec![5, 10, 30]);
    }

    #[test]
    fn l_shape_corner_is_the_first_keyframe() {
        let tracks = polyline(&[(0.0, 0.0)], &[((1.0, 0.0), 10), ((0.0, 1.0), 15)]);
        let kf = select_keyframes(&tracks, &PipelineParams::default()).unwrap();
        assert_eq!(kf[0], 10);
        assert_eq!(kf, vec![10, 25]);
        assert_eq!(turn_objective(&tracks, 10, 1e-6), 0.0);
        assert_eq!(turn_objective(&tracks, 9, 1e-6), 1.0);
    }

    #[test]
    fn pause_frame_is_neutral() {
        // stationary between frames 6 and 7
        let segs = [((1.0, 0.0), 6), ((0.0, 0.0), 1), ((1.0, 0.0), 20)];
        let tracks = polyline(&[(0.0, 0.0)], &segs);
        assert_eq!(turn_objective(&tracks, 7, 1e-6), 1.0);
        assert_eq!(turn_objective(&tracks, 6, 1e-6), 1.0);
        let kf = select_keyframes(&tracks, &PipelineParams::default()).unwrap();
        assert_eq!(kf[0], 5);
        assert!(!kf.contains(&7));
    }

    #[test]
    fn short_demo_has_only_the_final_frame() {
        let tracks = polyline(&[(0.0, 0.0)], &[((1.0, 0.0), 3)]);
        assert_eq!(select_keyframes(&tracks, &PipelineParams::default()).unwrap(), vec![3]);
    }

    #[test]
    fn two_corners_in_one_window_keep_the_sharper_turn() {
        // corners at 6 (90 degrees) and 12 (reversal); both inside [5, 20]
        let tracks = polyline(
            &[(0.0, 0.0)],
            &[((1.0, 0.0), 6), ((0.0, 1.0), 6), ((0.0, -1.0), 30)],
        );
        let kf = select_keyframes(&tracks, &PipelineParams::default()).unwrap();
        assert_eq!(kf[0], 12);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PipelineParams {
            min_step: 20,
            max_step_window: 20,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = PipelineParams {
            motion_threshold: -1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
