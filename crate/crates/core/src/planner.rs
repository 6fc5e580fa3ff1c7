//! Subgoal anticipation: map an initial keypoint configuration and a task
//! id to the sequence of subgoal configurations.
//!
//! Two realizations share one contract. `retrieval` returns the subgoals
//! of the stored demo whose initial keypoints are nearest, optionally
//! translated per keypoint onto the query. `mean-regressor` fits an affine
//! least-squares map per stage from the flattened initial keypoints.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::PlannerError;
use crate::geometry::{mean_keypoint_distance, KeypointSet, Point2};
use crate::io::{read_header, write_json_line, ArtifactHeader, IoError};
use crate::perception::{SubgoalDataset, SubgoalRecord};

pub const DEFAULT_MAX_STAGES: usize = 8;
pub const MODEL_KIND: &str = "planner-model";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    #[default]
    Retrieval,
    MeanRegressor,
}

impl PlannerKind {
    pub fn parse(s: &str) -> Result<Self, PlannerError> {
        match s {
            "retrieval" => Ok(PlannerKind::Retrieval),
            "mean-regressor" => Ok(PlannerKind::MeanRegressor),
            other => Err(PlannerError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    #[default]
    None,
    Translate,
}

impl Alignment {
    pub fn parse(s: &str) -> Result<Self, PlannerError> {
        match s {
            "none" => Ok(Alignment::None),
            "translate" => Ok(Alignment::Translate),
            other => Err(PlannerError::UnknownAlignment(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanRequest {
    pub task_id: String,
    pub initial_keypoints: KeypointSet,
    pub max_stages: usize,
}

/// One demo's initial configuration and subgoals, labels in task order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPlan {
    pub demo_id: String,
    pub initial: KeypointSet,
    pub subgoals: Vec<KeypointSet>,
}

/// `output = coef * [input; 1]`, coef is `2K x (2K + 1)` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub rows: usize,
    pub cols: usize,
    pub coef: Vec<f64>,
}

impl AffineMap {
    fn apply(&self, input: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.coef[r * self.cols..(r + 1) * self.cols];
                row[..self.cols - 1]
                    .iter()
                    .zip(input)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + row[self.cols - 1]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskModel {
    pub keypoint_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<StoredPlan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_maps: Vec<AffineMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerModel {
    pub kind: PlannerKind,
    pub alignment: Alignment,
    #[serde(rename = "K")]
    pub k: usize,
    pub max_stages: usize,
    pub tasks: BTreeMap<String, TaskModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerAccuracy {
    pub epsilon_a: f64,
    pub per_stage_errors: Vec<f64>,
    pub heldout_count: usize,
}

fn flatten(set: &KeypointSet) -> Vec<f64> {
    set.points().iter().flat_map(|p| [p.x, p.y]).collect()
}

fn unflatten(v: &[f64]) -> KeypointSet {
    KeypointSet::new(v.chunks(2).map(|c| Point2::new(c[0], c[1])).collect())
}

/// Record with its keypoints permuted into `labels` order.
fn reorder(record: &SubgoalRecord, labels: &[String]) -> Result<StoredPlan, PlannerError> {
    let mismatch = || PlannerError::LabelMismatch {
        task_id: record.task_id.clone(),
    };
    if record.keypoint_labels.len() != labels.len() {
        return Err(mismatch());
    }
    let perm: Vec<usize> = labels
        .iter()
        .map(|l| record.keypoint_labels.iter().position(|r| r == l))
        .collect::<Option<_>>()
        .ok_or_else(mismatch)?;
    let pick = |s: &KeypointSet| KeypointSet::new(perm.iter().map(|&i| s.points()[i]).collect());
    Ok(StoredPlan {
        demo_id: record.demo_id.clone(),
        initial: pick(&record.initial_keypoints),
        subgoals: record.subgoals.iter().map(pick).collect(),
    })
}

fn fit_affine(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<AffineMap, PlannerError> {
    let n = xs.len();
    let d_in = xs[0].len();
    let d_out = ys[0].len();
    let x = DMatrix::from_fn(n, d_in + 1, |r, c| if c == d_in { 1.0 } else { xs[r][c] });
    let y = DMatrix::from_fn(n, d_out, |r, c| ys[r][c]);
    let svd = x.svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = (s_max * 1e-10).max(f64::MIN_POSITIVE);
    let pinv = svd.pseudo_inverse(tol).map_err(|e| PlannerError::Fit(e.to_string()))?;
    // (d_in+1) x d_out; stored transposed so a row produces one output
    let w = pinv * y;
    let mut coef = Vec::with_capacity(d_out * (d_in + 1));
    for r in 0..d_out {
        for c in 0..=d_in {
            coef.push(w[(c, r)]);
        }
    }
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(PlannerError::Fit("non-finite coefficients".into()));
    }
    Ok(AffineMap {
        rows: d_out,
        cols: d_in + 1,
        coef,
    })
}

fn modal_stage_count(plans: &[StoredPlan]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in plans {
        *counts.entry(p.subgoals.len()).or_default() += 1;
    }
    // highest count, fewer stages on ties
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

pub fn fit(
    dataset: &SubgoalDataset,
    kind: PlannerKind,
    alignment: Alignment,
    max_stages: usize,
) -> Result<PlannerModel, PlannerError> {
    let first = dataset.records.first().ok_or(PlannerError::EmptyDataset)?;
    let k = first.k;
    let mut grouped: BTreeMap<String, (Vec<String>, Vec<StoredPlan>)> = BTreeMap::new();
    for rec in &dataset.records {
        if rec.k != k
            || rec.initial_keypoints.len() != k
            || rec.subgoals.iter().any(|s| s.len() != k)
        {
            return Err(PlannerError::LabelMismatch {
                task_id: rec.task_id.clone(),
            });
        }
        if rec.subgoals.is_empty() {
            return Err(PlannerError::NoStages(rec.task_id.clone()));
        }
        let entry = grouped
            .entry(rec.task_id.clone())
            .or_insert_with(|| (rec.keypoint_labels.clone(), Vec::new()));
        let plan = reorder(rec, &entry.0)?;
        entry.1.push(plan);
    }

    let mut tasks = BTreeMap::new();
    for (task_id, (labels, plans)) in grouped {
        let model = match kind {
            PlannerKind::Retrieval => TaskModel {
                keypoint_labels: labels,
                records: plans,
                stage_maps: Vec::new(),
            },
            PlannerKind::MeanRegressor => {
                let stages = modal_stage_count(&plans);
                let used: Vec<&StoredPlan> =
                    plans.iter().filter(|p| p.subgoals.len() == stages).collect();
                let xs: Vec<Vec<f64>> = used.iter().map(|p| flatten(&p.initial)).collect();
                let stage_maps = (0..stages)
                    .map(|j| {
                        let ys: Vec<Vec<f64>> =
                            used.iter().map(|p| flatten(&p.subgoals[j])).collect();
                        fit_affine(&xs, &ys)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                TaskModel {
                    keypoint_labels: labels,
                    records: Vec::new(),
                    stage_maps,
                }
            }
        };
        tasks.insert(task_id, model);
    }
    Ok(PlannerModel {
        kind,
        alignment,
        k,
        max_stages: max_stages.max(1),
        tasks,
    })
}

/// Keeps at most `max` stages; the terminal configuration is always kept.
fn truncate_keep_final(mut stages: Vec<KeypointSet>, max: usize) -> Vec<KeypointSet> {
    if stages.len() > max {
        let last = stages.pop().expect("non-empty");
        stages.truncate(max - 1);
        stages.push(last);
    }
    stages
}

impl PlannerModel {
    pub fn task(&self, task_id: &str) -> Result<&TaskModel, PlannerError> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| PlannerError::UnknownTask(task_id.to_string()))
    }

    pub fn keypoint_labels(&self, task_id: &str) -> Result<&[String], PlannerError> {
        Ok(&self.task(task_id)?.keypoint_labels)
    }

    /// Emits subgoals in stage order; stage `j` never depends on later ones.
    pub fn plan(&self, req: &PlanRequest) -> Result<Vec<KeypointSet>, PlannerError> {
        if req.max_stages == 0 {
            return Err(PlannerError::NoStages(req.task_id.clone()));
        }
        let task = self.task(&req.task_id)?;
        if req.initial_keypoints.len() != self.k {
            return Err(PlannerError::Geometry(
                crate::error::GeometryError::LengthMismatch {
                    left: req.initial_keypoints.len(),
                    right: self.k,
                },
            ));
        }
        let stages = match self.kind {
            PlannerKind::Retrieval => {
                let mut best: Option<(&StoredPlan, f64)> = None;
                for rec in &task.records {
                    let d = mean_keypoint_distance(&rec.initial, &req.initial_keypoints)?;
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((rec, d));
                    }
                }
                let (rec, _) = best.ok_or_else(|| PlannerError::NoStages(req.task_id.clone()))?;
                match self.alignment {
                    Alignment::None => rec.subgoals.clone(),
                    Alignment::Translate => {
                        let shift: Vec<Point2> = req
                            .initial_keypoints
                            .points()
                            .iter()
                            .zip(rec.initial.points())
                            .map(|(q, r)| *q - *r)
                            .collect();
                        rec.subgoals
                            .iter()
                            .map(|s| {
                                KeypointSet::new(
                                    s.points().iter().zip(&shift).map(|(p, d)| *p + *d).collect(),
                                )
                            })
                            .collect()
                    }
                }
            }
            PlannerKind::MeanRegressor => {
                let x = flatten(&req.initial_keypoints);
                task.stage_maps.iter().map(|m| unflatten(&m.apply(&x))).collect()
            }
        };
        if stages.is_empty() {
            return Err(PlannerError::NoStages(req.task_id.clone()));
        }
        Ok(truncate_keep_final(stages, req.max_stages))
    }

    pub fn request(&self, task_id: &str, initial: KeypointSet) -> PlanRequest {
        PlanRequest {
            task_id: task_id.to_string(),
            initial_keypoints: initial,
            max_stages: self.max_stages,
        }
    }

    /// Copy with every predicted subgoal shifted by `delta`.
    pub fn perturbed(&self, delta: Point2) -> PlannerModel {
        let mut m = self.clone();
        for task in m.tasks.values_mut() {
            for rec in &mut task.records {
                for s in &mut rec.subgoals {
                    *s = s.translated(delta);
                }
            }
            for map in &mut task.stage_maps {
                for r in 0..map.rows {
                    let d = if r % 2 == 0 { delta.x } else { delta.y };
                    map.coef[r * map.cols + map.cols - 1] += d;
                }
            }
        }
        m
    }

    pub fn write_json<W: Write>(&self, mut w: W, config_hash: &str) -> Result<(), IoError> {
        let header = ArtifactHeader::new(MODEL_KIND, config_hash, ModelBody { model: self.clone() });
        serde_json::to_writer_pretty(&mut w, &header)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<(PlannerModel, String), IoError> {
        let header: ArtifactHeader<ModelBody> = serde_json::from_reader(r)?;
        header.check_kind(MODEL_KIND)?;
        Ok((header.body.model, header.config_hash))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    model: PlannerModel,
}

/// Plans from every held-out record's initial keypoints and compares with
/// its true subgoals stage by stage. Stages the prediction lacks (or has in
/// excess) are charged the final-goal error.
pub fn eval_planner(
    model: &PlannerModel,
    heldout: &SubgoalDataset,
) -> Result<PlannerAccuracy, PlannerError> {
    if heldout.records.is_empty() {
        return Err(PlannerError::EmptyDataset);
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut eps: f64 = 0.0;
    for rec in &heldout.records {
        let labels = model.keypoint_labels(&rec.task_id)?.to_vec();
        let truth = reorder(rec, &labels)?;
        let pred = model.plan(&model.request(&rec.task_id, truth.initial.clone()))?;
        let n = pred.len().max(truth.subgoals.len());
        let shared = pred.len().min(truth.subgoals.len());
        let final_err = mean_keypoint_distance(
            pred.last().expect("plan is non-empty"),
            truth.subgoals.last().expect("record has stages"),
        )?;
        for j in 0..n {
            let err = if j < shared {
                mean_keypoint_distance(&pred[j], &truth.subgoals[j])?
            } else {
                final_err
            };
            if sums.len() <= j {
                sums.push(0.0);
                counts.push(0);
            }
            sums[j] += err;
            counts[j] += 1;
            eps = eps.max(err);
        }
    }
    Ok(PlannerAccuracy {
        epsilon_a: eps,
        per_stage_errors: sums.iter().zip(&counts).map(|(s, c)| s / *c as f64).collect(),
        heldout_count: heldout.records.len(),
    })
}

pub fn write_accuracy<W: Write>(w: &mut W, acc: &PlannerAccuracy, config_hash: &str) -> Result<(), IoError> {
    write_json_line(w, &ArtifactHeader::new("planner-accuracy", config_hash, acc.clone()))
}

pub fn read_accuracy<R: BufRead>(r: R) -> Result<(PlannerAccuracy, String), IoError> {
    let h: ArtifactHeader<PlannerAccuracy> = read_header(&mut r.lines(), "planner-accuracy")?;
    Ok((h.body, h.config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::PipelineParams;

    fn set(pts: &[(f64, f64)]) -> KeypointSet {
        KeypointSet::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    fn record(id: &str, p0: &[(f64, f64)], goals: &[&[(f64, f64)]]) -> SubgoalRecord {
        SubgoalRecord {
            demo_id: id.into(),
            task_id: "t".into(),
            k: p0.len(),
            keypoint_labels: (0..p0.len()).map(|i| format!("k{i}")).collect(),
            initial_keypoints: set(p0),
            keyframe_times: (1..=goals.len()).collect(),
            subgoals: goals.iter().map(|g| set(g)).collect(),
        }
    }

    fn dataset(records: Vec<SubgoalRecord>) -> SubgoalDataset {
        SubgoalDataset {
            records,
            params: PipelineParams::default(),
        }
    }

    #[test]
    fn retrieval_identity_and_nearest() {
        let a = record("a", &[(0.0, 0.0)], &[&[(10.0, 0.0)]]);
        let b = record("b", &[(50.0, 0.0)], &[&[(60.0, 10.0)]]);
        let ds = dataset(vec![a.clone(), b.clone()]);
        let m = fit(&ds, PlannerKind::Retrieval, Alignment::None, 8).unwrap();
        let got = m.plan(&m.request("t", a.initial_keypoints.clone())).unwrap();
        assert_eq!(got, a.subgoals);
        let got = m.plan(&m.request("t", set(&[(40.0, 0.0)]))).unwrap();
        assert_eq!(got, b.subgoals);
        let acc = eval_planner(&m, &ds).unwrap();
        assert_eq!(acc.epsilon_a, 0.0);
        assert_eq!(acc.heldout_count, 2);
    }

    #[test]
    fn translate_alignment_shifts_subgoals() {
        let a = record("a", &[(0.0, 0.0), (1.0, 1.0)], &[&[(10.0, 0.0), (11.0, 1.0)]]);
        let m = fit(&dataset(vec![a]), PlannerKind::Retrieval, Alignment::Translate, 8).unwrap();
        let got = m.plan(&m.request("t", set(&[(2.0, 0.0), (3.0, 1.0)]))).unwrap();
        assert_eq!(got, vec![set(&[(12.0, 0.0), (13.0, 1.0)])]);
    }

    #[test]
    fn unknown_task_kind_and_alignment() {
        let m = fit(
            &dataset(vec![record("a", &[(0.0, 0.0)], &[&[(1.0, 0.0)]])]),
            PlannerKind::Retrieval,
            Alignment::None,
            8,
        )
        .unwrap();
        assert!(matches!(
            m.plan(&m.request("other", set(&[(0.0, 0.0)]))),
            Err(PlannerError::UnknownTask(_))
        ));
        assert!(PlannerKind::parse("transformer").is_err());
        assert!(Alignment::parse("rotate").is_err());
        assert!(fit(&dataset(vec![]), PlannerKind::Retrieval, Alignment::None, 8).is_err());
    }

    #[test]
    fn regressor_reproduces_translations() {
        let recs: Vec<_> = (0..6)
            .map(|i| {
                let (dx, dy) = (i as f64 * 3.0, (i * i) as f64 - 4.0);
                record(
                    &format!("d{i}"),
                    &[(dx, dy), (dx + 4.0, dy + 1.0)],
                    &[
                        &[(dx + 10.0, dy), (dx + 14.0, dy + 1.0)],
                        &[(dx + 10.0, dy + 20.0), (dx + 14.0, dy + 21.0)],
                    ],
                )
            })
            .collect();
        let ds = dataset(recs);
        let m = fit(&ds, PlannerKind::MeanRegressor, Alignment::None, 8).unwrap();
        for rec in &ds.records {
            let got = m.plan(&m.request("t", rec.initial_keypoints.clone())).unwrap();
            for (g, t) in got.iter().zip(&rec.subgoals) {
                assert!(mean_keypoint_distance(g, t).unwrap() < 1e-6);
            }
        }
    }

    #[test]
    fn stage_mismatch_charges_final_error() {
        let train = record("a", &[(0.0, 0.0)], &[&[(10.0, 0.0)]]);
        let held = record("b", &[(0.0, 0.0)], &[&[(10.0, 3.0)], &[(10.0, 4.0)]]);
        let m = fit(&dataset(vec![train]), PlannerKind::Retrieval, Alignment::None, 8).unwrap();
        let acc = eval_planner(&m, &dataset(vec![held])).unwrap();
        assert_eq!(acc.per_stage_errors, vec![3.0, 4.0]);
        assert_eq!(acc.epsilon_a, 4.0);
    }

    #[test]
    fn truncation_keeps_terminal() {
        let goals: Vec<Vec<(f64, f64)>> = (1..=5).map(|i| vec![(i as f64, 0.0)]).collect();
        let refs: Vec<&[(f64, f64)]> = goals.iter().map(|g| g.as_slice()).collect();
        let m = fit(
            &dataset(vec![record("a", &[(0.0, 0.0)], &refs)]),
            PlannerKind::Retrieval,
            Alignment::None,
            3,
        )
        .unwrap();
        let got = m.plan(&m.request("t", set(&[(0.0, 0.0)]))).unwrap();
        assert_eq!(got, vec![set(&[(1.0, 0.0)]), set(&[(2.0, 0.0)]), set(&[(5.0, 0.0)])]);
    }

    #[test]
    fn labels_are_canonicalized() {
        let a = record("a", &[(0.0, 0.0), (5.0, 0.0)], &[&[(1.0, 0.0), (6.0, 0.0)]]);
        let mut b = record("b", &[(5.0, 9.0), (0.0, 9.0)], &[&[(6.0, 9.0), (1.0, 9.0)]]);
        b.keypoint_labels = vec!["k1".into(), "k0".into()];
        let m = fit(&dataset(vec![a, b]), PlannerKind::Retrieval, Alignment::None, 8).unwrap();
        let got = m.plan(&m.request("t", set(&[(0.0, 9.0), (5.0, 9.0)]))).unwrap();
        assert_eq!(got, vec![set(&[(1.0, 9.0), (6.0, 9.0)])]);
        let mut c = record("c", &[(0.0, 0.0), (5.0, 0.0)], &[&[(1.0, 0.0), (6.0, 0.0)]]);
        c.keypoint_labels = vec!["k0".into(), "zz".into()];
        assert!(matches!(
            fit(&dataset(vec![record("a", &[(0.0, 0.0), (5.0, 0.0)], &[&[(1.0, 0.0), (6.0, 0.0)]]), c]),
                PlannerKind::Retrieval, Alignment::None, 8),
            Err(PlannerError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn model_round_trips() {
        let ds = dataset(vec![record("a", &[(0.0, 0.0)], &[&[(1.5, 0.25)]])]);
        for kind in [PlannerKind::Retrieval, PlannerKind::MeanRegressor] {
            let m = fit(&ds, kind, Alignment::Translate, 8).unwrap();
            let mut buf = Vec::new();
            m.write_json(&mut buf, "abc").unwrap();
            let (back, hash) = PlannerModel::read_json(buf.as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(hash, "abc");
        }
    }
}
