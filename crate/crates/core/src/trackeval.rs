//! Reset-based supervised evaluation and the saliency ablations.
//!
//! A frame whose prediction has zero IoU with a visible ground truth is a
//! failure. The tracker is re-initialised from ground truth `skip` frames
//! later; the `burn_in` frames after every (re)initialisation are excluded
//! from accuracy. Robustness is the length-weighted mean failure count
//! `sum(L * F) / sum(L)`, accuracy the mean IoU over scored frames.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{Proposal, SelectConfig, SequenceTracker, SiameseTracker};
use crate::error::{Error, Result};
use crate::geometry::{context_side, crop_and_resize, iou, BBox, CropGeometry, CropSpec};
use crate::image::Image;
use crate::model::Network;
use crate::seeds;
use crate::stats::{mean, standard_error};
use crate::synthdata::{Sequence, Split};

/// Source of the template at every (re)initialisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Cropped around the ground-truth box.
    #[serde(alias = "gt")]
    GroundTruth,
    /// A random patch of the same frame that does not overlap the target.
    RandomPatch,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" | "ground_truth" => Ok(TargetMode::GroundTruth),
            "random_patch" => Ok(TargetMode::RandomPatch),
            other => Err(Error::Config(format!("unknown target mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Frames between a failure and re-initialisation.
    pub skip: usize,
    /// Frames after each (re)initialisation excluded from accuracy.
    pub burn_in: usize,
    pub target_mode: TargetMode,
    /// Seed of the random-patch draws.
    pub patch_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            skip: 5,
            burn_in: 10,
            target_mode: TargetMode::GroundTruth,
            patch_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub id: String,
    pub split: Option<Split>,
    pub length: usize,
    pub failures: usize,
    /// IoU of every scored frame.
    pub ious: Vec<f64>,
    /// Frames at which the tracker was (re)initialised.
    pub inits: Vec<usize>,
    /// Tracker output per frame; `None` on init and skipped frames.
    pub predictions: Vec<Option<Proposal>>,
}

impl SequenceResult {
    pub fn mean_iou(&self) -> Option<f64> {
        mean(&self.ious)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sequences: Vec<SequenceResult>,
    pub robustness: f64,
    /// Zero when no frame was scored.
    pub accuracy: f64,
}

impl EvalResult {
    pub fn from_sequences(sequences: Vec<SequenceResult>) -> Self {
        let total: usize = sequences.iter().map(|s| s.length).sum();
        let weighted: usize = sequences.iter().map(|s| s.length * s.failures).sum();
        let robustness = if total == 0 { 0.0 } else { weighted as f64 / total as f64 };
        let all: Vec<f64> = sequences.iter().flat_map(|s| s.ious.iter().copied()).collect();
        Self {
            accuracy: mean(&all).unwrap_or(0.0),
            robustness,
            sequences,
        }
    }

    /// Sequences without any failure.
    pub fn failure_free(&self) -> usize {
        self.sequences.iter().filter(|s| s.failures == 0).count()
    }

    /// The result restricted to one split.
    pub fn for_split(&self, split: Split) -> Self {
        Self::from_sequences(self.sequences.iter().filter(|s| s.split == Some(split)).cloned().collect())
    }
}

/// A square patch placed in a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPatch {
    pub bbox: BBox,
    pub image: Image,
}

/// Draws `count` patches with the side of the target crop around `gt`,
/// uniformly placed fully inside the frame and disjoint from `gt`.
pub fn random_target_patches<R: Rng + ?Sized>(
    frame: &Image,
    gt: &BBox,
    count: usize,
    geometry: &CropGeometry,
    rng: &mut R,
) -> Result<Vec<TargetPatch>> {
    let side = context_side(gt);
    let (w, h) = (frame.width as f64, frame.height as f64);
    if !(side > 0.0) || side > w || side > h {
        return Err(Error::NoPlacement(format!(
            "patch side {side:.1} does not fit a {}x{} frame",
            frame.width, frame.height
        )));
    }
    let pad = frame.channel_mean();
    let budget = 1000 * count.max(1);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        if tries == budget {
            return Err(Error::NoPlacement(format!("no patch disjoint from {gt:?} after {budget} draws")));
        }
        tries += 1;
        let x0 = rng.random_range(0.0..=w - side);
        let y0 = rng.random_range(0.0..=h - side);
        let bbox = BBox::new(x0, y0, x0 + side, y0 + side);
        if bbox.intersection_area(gt) > 0.0 {
            continue;
        }
        let spec = CropSpec::new(bbox.center(), side, geometry.target_size)?;
        out.push(TargetPatch {
            bbox,
            image: crop_and_resize(frame, &spec, pad),
        });
    }
    Ok(out)
}

/// Runs the reset protocol on one sequence.
pub fn evaluate_sequence<T: SequenceTracker>(
    seq: &Sequence,
    seq_index: usize,
    tracker: &mut T,
    cfg: &EvalConfig,
    geometry: &CropGeometry,
) -> Result<SequenceResult> {
    let usable = |t: usize| seq.annotations.get(t).is_some_and(|a| a.visible && a.bbox.area() > 0.0);
    if seq.annotations.len() != seq.len() || !usable(0) {
        return Err(Error::Invalid(format!("sequence {} has no usable frame-0 annotation", seq.id)));
    }
    let mut patch_rng = seeds::stream(cfg.patch_seed, seq_index as u64);
    let mut predictions = vec![None; seq.len()];
    let mut ious = Vec::new();
    let mut inits = Vec::new();
    let mut failures = 0;
    let mut init = Some(0);
    while let Some(start) = init.take() {
        let gt = seq.annotations[start].bbox;
        let frame = &seq.frames[start];
        let patch = match cfg.target_mode {
            TargetMode::GroundTruth => None,
            TargetMode::RandomPatch => {
                random_target_patches(frame, &gt, 1, geometry, &mut patch_rng)?.pop()
            }
        };
        tracker.init(frame, &gt, patch.as_ref().map(|p| &p.image))?;
        inits.push(start);
        for t in start + 1..seq.len() {
            let p = tracker.track(&seq.frames[t])?;
            predictions[t] = Some(p);
            let a = &seq.annotations[t];
            if !a.visible {
                continue;
            }
            let o = iou(&p.bbox, &a.bbox);
            if o <= 0.0 {
                failures += 1;
                init = (t + cfg.skip.max(1)..seq.len()).find(|&f| usable(f));
                break;
            }
            if t > start + cfg.burn_in {
                ious.push(o);
            }
        }
    }
    Ok(SequenceResult {
        id: seq.id.clone(),
        split: seq.split,
        length: seq.len(),
        failures,
        ious,
        inits,
        predictions,
    })
}

/// Evaluates every sequence with a fresh tracker from `make`.
pub fn supervised_evaluate<T, F>(seqs: &[Sequence], make: F, cfg: &EvalConfig, geometry: &CropGeometry) -> Result<EvalResult>
where
    T: SequenceTracker,
    F: Fn() -> T + Sync,
{
    let results = seqs
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_sequence(s, i, &mut make(), cfg, geometry))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_sequences(results))
}

/// [`supervised_evaluate`] with the Siamese tracker.
pub fn evaluate_network(
    net: &Network<f32>,
    seqs: &[Sequence],
    geometry: &CropGeometry,
    select: &SelectConfig,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    supervised_evaluate(seqs, || SiameseTracker::new(net, *geometry, *select), cfg, geometry)
}

#[derive(Serialize)]
struct SequenceRow<'a> {
    model: &'a str,
    seed: u64,
    split: &'a str,
    sequence: &'a str,
    length: usize,
    failures: usize,
    mean_iou: String,
}

/// One row per sequence: `model, seed, split, sequence, length, failures, mean_iou`.
pub fn write_sequence_csv(path: &Path, model: &str, seed: u64, result: &EvalResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in &result.sequences {
        w.serialize(SequenceRow {
            model,
            seed,
            split: s.split.map_or("", Split::name),
            sequence: &s.id,
            length: s.length,
            failures: s.failures,
            mean_iou: s.mean_iou().map_or(String::new(), |v| v.to_string()),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    model: &'a str,
    seed: u64,
    split: &'a str,
    sequences: usize,
    robustness: f64,
    accuracy: f64,
}

/// Aggregate metrics per split plus an `all` row.
pub fn write_aggregate_csv(path: &Path, model: &str, seed: u64, result: &EvalResult) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut splits: Vec<Split> = result.sequences.iter().filter_map(|s| s.split).collect();
    splits.sort();
    splits.dedup();
    let mut rows: Vec<(&str, EvalResult)> = splits.iter().map(|s| (s.name(), result.for_split(*s))).collect();
    rows.push(("all", result.clone()));
    for (split, r) in rows {
        w.serialize(AggregateRow {
            model,
            seed,
            split,
            sequences: r.sequences.len(),
            robustness: r.robustness,
            accuracy: r.accuracy,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Invalid(format!("{}: {e}", path.display()))
}

/// Robustness and accuracy of one run on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    /// Row label such as `with_detector` or `random_target`.
    pub group: String,
    pub split: String,
    pub seed: u64,
    pub robustness: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub split: String,
    pub n: usize,
    pub robustness_mean: f64,
    pub robustness_se: Option<f64>,
    pub accuracy_mean: f64,
    pub accuracy_se: Option<f64>,
}

/// Mean and standard error per `(group, split)`, in first-appearance order.
/// Standard errors are `None` for single-seed groups.
pub fn summarize_samples(samples: &[MetricSample]) -> Vec<ReportRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for s in samples {
        if !keys.contains(&(s.group.as_str(), s.split.as_str())) {
            keys.push((&s.group, &s.split));
        }
    }
    keys.into_iter()
        .map(|(g, sp)| {
            let rows: Vec<&MetricSample> = samples.iter().filter(|s| s.group == g && s.split == sp).collect();
            let r: Vec<f64> = rows.iter().map(|s| s.robustness).collect();
            let a: Vec<f64> = rows.iter().map(|s| s.accuracy).collect();
            ReportRow {
                group: g.to_string(),
                split: sp.to_string(),
                n: rows.len(),
                robustness_mean: mean(&r).unwrap_or(0.0),
                robustness_se: standard_error(&r),
                accuracy_mean: mean(&a).unwrap_or(0.0),
                accuracy_se: standard_error(&a),
            }
        })
        .collect()
}

/// Summary rows plus, per split, a `compare - baseline` difference row whose
/// standard error combines the two groups' in quadrature.
pub fn ablation_report(samples: &[MetricSample], baseline: &str, compare: &str) -> Result<Vec<ReportRow>> {
    let mut rows = summarize_samples(samples);
    if let Some(r) = rows.iter().find(|r| r.n < 2) {
        return Err(Error::Invalid(format!(
            "group {} on split {} has {} seed(s); a standard error needs at least 2",
            r.group, r.split, r.n
        )));
    }
    let quad = |a: Option<f64>, b: Option<f64>| Some((a? * a? + b? * b?).sqrt());
    let mut diffs = Vec::new();
    for c in rows.iter().filter(|r| r.group == compare) {
        if let Some(b) = rows.iter().find(|r| r.group == baseline && r.split == c.split) {
            diffs.push(ReportRow {
                group: format!("{compare} - {baseline}"),
                split: c.split.clone(),
                n: c.n.min(b.n),
                robustness_mean: c.robustness_mean - b.robustness_mean,
                robustness_se: quad(c.robustness_se, b.robustness_se),
                accuracy_mean: c.accuracy_mean - b.accuracy_mean,
                accuracy_se: quad(c.accuracy_se, b.accuracy_se),
            });
        }
    }
    rows.extend(diffs);
    Ok(rows)
}

#[derive(Serialize)]
struct ReportCsvRow<'a> {
    group: &'a str,
    split: &'a str,
    n: usize,
    robustness_mean: f64,
    robustness_se: String,
    accuracy_mean: f64,
    accuracy_se: String,
}

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.serialize(ReportCsvRow {
            group: &r.group,
            split: &r.split,
            n: r.n,
            robustness_mean: r.robustness_mean,
            robustness_se: opt(r.robustness_se),
            accuracy_mean: r.accuracy_mean,
            accuracy_se: opt(r.accuracy_se),
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
