//! Optimisation loop, learning-rate schedule, checkpoints and multi-seed
//! aggregation.
//!
//! Every random draw of step `s` comes from streams seeded by
//! `(seed, s, example index)`, so a run resumed from a checkpoint replays
//! exactly the batches an uninterrupted run would have seen, and batch
//! contents do not depend on the number of worker threads.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::SelectConfig;
use crate::error::{Error, Result};
use crate::geometry::CropGeometry;
use crate::model::checkpoint::{AdamState, Checkpoint};
use crate::model::{BackboneConfig, LossTerms, LossWeights, Network};
use crate::nn::{AdamConfig, Moments};
use crate::seeds;
use crate::stats::{mean, standard_error};
use crate::synthdata::{sample_training_example, SamplerConfig, Sequence, TrainingExample};
use crate::trackeval::{csv_error, csv_writer, evaluate_network, EvalConfig, TargetMode};

const DATA_STREAM: u64 = 0xda7a;
const PROBE_STREAM: u64 = 0x960be;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WithDetector,
    NoDetector,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::WithDetector => "with_detector",
            Variant::NoDetector => "no_detector",
        }
    }

    pub fn uses_detector(self) -> bool {
        self == Variant::WithDetector
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with_detector" => Ok(Variant::WithDetector),
            "no_detector" => Ok(Variant::NoDetector),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of `steps` after which the learning rate drops.
    pub lr_drop_fraction: f64,
    pub lr_drop_factor: f64,
    /// Evaluation (and checkpoint) cadence in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Examples in the fixed batch whose loss is logged at each evaluation.
    pub probe_examples: usize,
    pub seed: u64,
    pub variant: Variant,
    pub weights: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-4,
            lr_drop_fraction: 0.95,
            lr_drop_factor: 0.1,
            eval_every: 500,
            probe_examples: 16,
            seed: 0,
            variant: Variant::WithDetector,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_fraction) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::Config("invalid learning-rate drop".into()));
        }
        Ok(())
    }

    /// First step trained at the reduced learning rate.
    pub fn drop_step(&self) -> usize {
        (self.lr_drop_fraction * self.steps as f64).round() as usize
    }

    /// Steps at which metrics are recorded.
    pub fn eval_steps(&self) -> Vec<usize> {
        let mut v: Vec<usize> = match self.steps.checked_div(self.eval_every) {
            Some(n) => (1..=n).map(|k| k * self.eval_every).collect(),
            None => Vec::new(),
        };
        if self.steps > 0 && v.last() != Some(&self.steps) {
            v.push(self.steps);
        }
        v
    }
}

/// Piecewise-constant schedule: the base rate, times the drop factor from
/// [`TrainConfig::drop_step`] on.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if step >= cfg.drop_step() {
        cfg.learning_rate * cfg.lr_drop_factor
    } else {
        cfg.learning_rate
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSetup {
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
    pub geometry: CropGeometry,
    pub sampler: SamplerConfig,
    pub select: SelectConfig,
    pub eval: EvalConfig,
}

impl RunSetup {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.backbone.validate()?;
        self.geometry.validate()?;
        self.sampler.validate()?;
        self.select.validate()?;
        self.backbone.output_side(self.geometry.target_size)?;
        self.backbone.output_side(self.geometry.search_size)?;
        Ok(())
    }

    /// The initial network: the run seed is folded into the init seed.
    pub fn initial_network(&self) -> Result<Network<f32>> {
        let mut cfg = self.backbone.clone();
        cfg.init_seed = seeds::mix(self.train.seed, self.backbone.init_seed);
        Network::new(&cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub variant: Variant,
    pub seed: u64,
    pub loss_total: f64,
    pub loss_heat: f64,
    pub loss_offset: f64,
    pub loss_det: f64,
    #[serde(rename = "R")]
    pub robustness: f64,
    #[serde(rename = "A")]
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub network: Network<f32>,
    /// Step reached; below `steps` when stopped early.
    pub step: usize,
}

/// Where and how a run persists its state.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions<'a> {
    /// Run directory for `config.json`, `metrics.csv` and checkpoints.
    pub out_dir: Option<&'a Path>,
    /// Checkpoint to continue from.
    pub resume: Option<&'a Path>,
    /// Stop (after checkpointing) once this step is reached.
    pub stop_after: Option<usize>,
}

/// One example of step `step`, index `b` in the batch.
pub fn draw_example(
    setup: &RunSetup,
    data: &[Sequence],
    stream_seed: u64,
    index: u64,
) -> Result<TrainingExample> {
    let mut rng = seeds::stream(stream_seed, index);
    let seq = &data[rng.random_range(0..data.len())];
    sample_training_example(seq, &setup.sampler, &setup.geometry, setup.train.variant.uses_detector(), &mut rng)
}

fn batch_seed(seed: u64, step: usize) -> u64 {
    seeds::mix(seeds::mix(seed, DATA_STREAM), step as u64)
}

/// Mean loss and gradient of the batch for `step`.
pub fn batch_gradient(
    setup: &RunSetup,
    net: &Network<f32>,
    data: &[Sequence],
    step: usize,
) -> Result<(LossTerms, Network<f32>)> {
    let bs = setup.train.batch_size;
    let scale = 1.0 / bs as f64;
    let stream = batch_seed(setup.train.seed, step);
    let parts = (0..bs)
        .into_par_iter()
        .map(|b| {
            let ex = draw_example(setup, data, stream, b as u64)?;
            let mut g = net.zeros_like();
            let terms = net.loss_and_grad(&ex.inputs(), &ex.targets(), &setup.train.weights, &mut g, scale)?;
            Ok((terms, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = LossTerms::default();
    let mut grads = net.zeros_like();
    for (terms, g) in &parts {
        total.heat += terms.heat * scale;
        total.offset += terms.offset * scale;
        total.detector += terms.detector * scale;
        total.total += terms.total * scale;
        for ((_, dst), (_, _, src)) in grads.named_tensors_mut().into_iter().zip(g.named_tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }
    Ok((total, grads))
}

/// Applies one Adam update. Detector tensors are left untouched unless the
/// variant trains the detector.
pub fn apply_update(
    net: &mut Network<f32>,
    grads: &Network<f32>,
    state: &mut AdamState,
    adam: &AdamConfig,
    lr: f64,
    variant: Variant,
) {
    state.updates += 1;
    let grads = grads.named_tensors();
    let firsts = state.first.named_tensors_mut();
    let seconds = state.second.named_tensors_mut();
    for ((((name, params), (_, _, g)), (_, m1)), (_, m2)) in
        net.named_tensors_mut().into_iter().zip(grads).zip(firsts).zip(seconds)
    {
        if !variant.uses_detector() && Network::<f32>::is_detector_tensor(&name) {
            continue;
        }
        let mut moments = Moments {
            first: std::mem::take(m1),
            second: std::mem::take(m2),
        };
        adam.update(state.updates, lr, params, g, &mut moments);
        *m1 = moments.first;
        *m2 = moments.second;
    }
}

fn gradient_norm(g: &Network<f32>) -> f64 {
    g.named_tensors()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|v| (*v as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Loss on a fixed probe batch, used for the logged loss columns.
fn probe_loss(setup: &RunSetup, net: &Network<f32>, data: &[Sequence]) -> Result<LossTerms> {
    let n = setup.train.probe_examples.max(1);
    let stream = seeds::mix(setup.train.seed, PROBE_STREAM);
    let parts = (0..n)
        .into_par_iter()
        .map(|i| {
            let ex = draw_example(setup, data, stream, i as u64)?;
            net.loss(&ex.inputs(), &ex.targets(), &setup.train.weights)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = n as f64;
    Ok(LossTerms {
        heat: parts.iter().map(|t| t.heat).sum::<f64>() / k,
        offset: parts.iter().map(|t| t.offset).sum::<f64>() / k,
        detector: parts.iter().map(|t| t.detector).sum::<f64>() / k,
        total: parts.iter().map(|t| t.total).sum::<f64>() / k,
    })
}

fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:07}.ckpt"))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Trains one run.
///
/// Metrics rows are produced at [`TrainConfig::eval_steps`]: the probe-batch
/// loss terms plus robustness and accuracy of a supervised evaluation on
/// `eval_data` (ground-truth templates). With `out_dir`, a checkpoint is
/// written at step 0 and at every metrics step.
pub fn train_run(setup: &RunSetup, train_data: &[Sequence], eval_data: &[Sequence], opts: RunOptions<'_>) -> Result<RunRecord> {
    setup.validate()?;
    if train_data.is_empty() {
        return Err(Error::Invalid("training data is empty".into()));
    }
    let cfg = &setup.train;
    let config = serde_json::to_value(setup)?;
    let metadata = serde_json::json!({ "run": config });
    let eval_cfg = EvalConfig {
        target_mode: TargetMode::GroundTruth,
        ..setup.eval
    };
    let eval_set = if eval_data.is_empty() { train_data } else { eval_data };

    let (mut net, mut adam, mut step, mut rows) = match opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let fresh = setup.initial_network()?;
            if ck.network.config != fresh.config || ck.geometry != setup.geometry {
                return Err(Error::Checkpoint(format!(
                    "{} was written for a different backbone or geometry",
                    path.display()
                )));
            }
            let adam = ck.optimizer.unwrap_or_else(|| AdamState::new(&ck.network));
            let rows = match opts.out_dir.map(|d| d.join("metrics.csv")) {
                Some(p) if p.exists() => read_metrics_csv(&p)?,
                _ => Vec::new(),
            };
            let step = ck.step as usize;
            let rows = rows.into_iter().filter(|r| r.step <= step).collect();
            (ck.network, adam, step, rows)
        }
        None => {
            let net = setup.initial_network()?;
            let adam = AdamState::new(&net);
            (net, adam, 0, Vec::new())
        }
    };

    let mut checkpoints = Vec::new();
    let save = |net: &Network<f32>, adam: &AdamState, step: usize, rows: &[MetricsRow]| -> Result<Option<PathBuf>> {
        let Some(dir) = opts.out_dir else { return Ok(None) };
        fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
        let ck = Checkpoint {
            geometry: setup.geometry,
            step: step as u64,
            network: net.clone(),
            optimizer: Some(adam.clone()),
            metadata: metadata.clone(),
        };
        let path = checkpoint_path(dir, step);
        ck.save(&path)?;
        write_metrics_csv(&dir.join("metrics.csv"), rows)?;
        Ok(Some(path))
    };

    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.json");
        let mut text = serde_json::to_string_pretty(&config)?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        if step == 0 {
            checkpoints.extend(save(&net, &adam, 0, &rows)?);
        }
    }

    let eval_steps = cfg.eval_steps();
    while step < cfg.steps {
        if opts.stop_after.is_some_and(|s| step >= s) {
            break;
        }
        let (terms, grads) = batch_gradient(setup, &net, train_data, step)?;
        let gnorm = gradient_norm(&grads);
        if !terms.is_finite() || !gnorm.is_finite() {
            let err = Error::NonFinite {
                step: step as u64,
                detail: format!("{terms:?}, gradient norm {gnorm}"),
            };
            if let Some(dir) = opts.out_dir {
                let snap = Checkpoint {
                    geometry: setup.geometry,
                    step: step as u64,
                    network: net.clone(),
                    optimizer: Some(adam.clone()),
                    metadata: serde_json::json!({ "run": config, "failure": err.to_string() }),
                };
                snap.save(&dir.join("nonfinite.ckpt"))?;
            }
            return Err(err);
        }
        apply_update(&mut net, &grads, &mut adam, &cfg.adam, lr_at(step, cfg), cfg.variant);
        step += 1;
        if eval_steps.contains(&step) {
            let probe = probe_loss(setup, &net, train_data)?;
            let eval = evaluate_network(&net, eval_set, &setup.geometry, &setup.select, &eval_cfg)?;
            let row = MetricsRow {
                step,
                variant: cfg.variant,
                seed: cfg.seed,
                loss_total: probe.total,
                loss_heat: probe.heat,
                loss_offset: probe.offset,
                loss_det: probe.detector,
                robustness: eval.robustness,
                accuracy: eval.accuracy,
            };
            log::info!(
                "{} seed {} step {step}: loss {:.4} R {:.4} A {:.4}",
                cfg.variant.name(),
                cfg.seed,
                row.loss_total,
                row.robustness,
                row.accuracy
            );
            rows.push(row);
            checkpoints.extend(save(&net, &adam, step, &rows)?);
        }
    }
    if let Some(dir) = opts.out_dir {
        if !eval_steps.contains(&step) && step > 0 {
            checkpoints.extend(save(&net, &adam, step, &rows)?);
        }
        write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    }
    Ok(RunRecord {
        rows,
        checkpoints,
        config,
        network: net,
        step,
    })
}

/// Pointwise mean and standard error across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub n: usize,
    pub robustness_mean: f64,
    pub robustness_se: f64,
    pub accuracy_mean: f64,
    pub accuracy_se: f64,
    pub loss_mean: f64,
}

/// Aggregates runs of one variant; every run must report the same steps.
pub fn multi_seed(runs: &[Vec<MetricsRow>]) -> Result<Vec<CurvePoint>> {
    if runs.len() < 2 {
        return Err(Error::Invalid(format!("{} run(s); aggregation needs at least 2 seeds", runs.len())));
    }
    let steps: Vec<usize> = runs[0].iter().map(|r| r.step).collect();
    if runs.iter().any(|r| r.iter().map(|x| x.step).ne(steps.iter().copied())) {
        return Err(Error::Invalid("runs report metrics at different steps".into()));
    }
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let col = |f: fn(&MetricsRow) -> f64| runs.iter().map(|r| f(&r[i])).collect::<Vec<f64>>();
            let r = col(|m| m.robustness);
            let a = col(|m| m.accuracy);
            let l = col(|m| m.loss_total);
            CurvePoint {
                step,
                n: runs.len(),
                robustness_mean: mean(&r).unwrap_or(0.0),
                robustness_se: standard_error(&r).unwrap_or(0.0),
                accuracy_mean: mean(&a).unwrap_or(0.0),
                accuracy_se: standard_error(&a).unwrap_or(0.0),
                loss_mean: mean(&l).unwrap_or(0.0),
            }
        })
        .collect())
}

pub fn write_curve_csv(path: &Path, variant: &str, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "variant",
        "step",
        "n",
        "robustness_mean",
        "robustness_se",
        "accuracy_mean",
        "accuracy_se",
        "loss_mean",
    ])
    .map_err(|e| csv_error(path, e))?;
    for p in points {
        w.write_record([
            variant.to_string(),
            p.step.to_string(),
            p.n.to_string(),
            p.robustness_mean.to_string(),
            p.robustness_se.to_string(),
            p.accuracy_mean.to_string(),
            p.accuracy_se.to_string(),
            p.loss_mean.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
