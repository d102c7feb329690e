use std::fs;
use std::path::Path;

use siamtrack::model::checkpoint::Checkpoint;
use siamtrack::perturb::{self, SweepContext};
use siamtrack::synthdata::{generate_dataset, read_dataset, write_dataset};
use siamtrack::trackeval::{evaluate_network, write_aggregate_csv, write_sequence_csv};
use siamtrack::train::{train_run, RunOptions};
use siamtrack::{Error, ExperimentConfig, Result, RunSetup, Sequence, SweepConfig, TargetMode, Variant};

use crate::{out_path, EvalArgs, GenDataArgs, SweepArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_data(dir: &Path) -> Result<Vec<Sequence>> {
    let seqs = read_dataset(dir)?;
    if seqs.is_empty() {
        return Err(Error::Invalid(format!("{} holds no sequences", dir.display())));
    }
    Ok(seqs)
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let out = out_path(&a.out);
    let seqs = generate_dataset(&cfg.data, a.seed)?;
    write_dataset(&out, &seqs)?;
    write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?;
    log::info!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(v) = a.variant {
        cfg.train.variant = v.into();
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if cfg.train.variant == Variant::NoDetector {
        cfg.train.weights.detector = 0.0;
    }
    cfg.validate()?;
    let data = load_data(&a.data)?;
    let eval = match &a.eval_data {
        Some(d) => load_data(d)?,
        None => Vec::new(),
    };
    let dir = out_path(&a.out).join(cfg.train.seed.to_string());
    create_dir(&dir)?;
    write_text(&dir.join("experiment.toml"), &cfg.to_toml_string()?)?;
    let rec = train_run(
        &cfg.run_setup(),
        &data,
        &eval,
        RunOptions {
            out_dir: Some(&dir),
            resume: a.resume.as_deref(),
            stop_after: a.stop_after,
        },
    )?;
    match rec.rows.last() {
        Some(r) => log::info!("step {}: R {:.4} A {:.4} -> {}", r.step, r.robustness, r.accuracy, dir.display()),
        None => log::info!("step {} -> {}", rec.step, dir.display()),
    }
    Ok(())
}

/// Settings for a checkpoint: `--config` when given, else the run stored in
/// the checkpoint, else defaults around the checkpoint's geometry.
fn resolve(ck: &Checkpoint, config: Option<&Path>) -> Result<(RunSetup, SweepConfig)> {
    let (setup, sweep) = match config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            (cfg.run_setup(), cfg.sweep)
        }
        None => {
            let setup = match ck.metadata.get("run") {
                Some(run) => serde_json::from_value(run.clone())
                    .map_err(|e| Error::Checkpoint(format!("stored run configuration: {e}")))?,
                None => RunSetup {
                    geometry: ck.geometry,
                    ..RunSetup::default()
                },
            };
            (setup, SweepConfig::default())
        }
    };
    if setup.geometry != ck.geometry {
        return Err(Error::Config(format!(
            "configured geometry {:?} differs from the checkpoint's {:?}",
            setup.geometry, ck.geometry
        )));
    }
    Ok((setup, sweep))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (setup, _) = resolve(&ck, a.config.as_deref())?;
    let data = load_data(&a.data)?;
    let mut cfg = setup.eval;
    cfg.target_mode = a.target_mode.into();
    if let Some(s) = a.seed {
        cfg.patch_seed = s;
    }
    let result = evaluate_network(&ck.network, &data, &setup.geometry, &setup.select, &cfg)?;
    let model = a.model.clone().unwrap_or_else(|| match cfg.target_mode {
        TargetMode::GroundTruth => setup.train.variant.name().to_string(),
        TargetMode::RandomPatch => format!("{}_random_target", setup.train.variant.name()),
    });
    let out = out_path(&a.out);
    create_dir(&out)?;
    write_sequence_csv(&out.join("sequences.csv"), &model, setup.train.seed, &result)?;
    write_aggregate_csv(&out.join("summary.csv"), &model, setup.train.seed, &result)?;
    log::info!(
        "{model}: R {:.4} A {:.4}, {}/{} sequences without failure",
        result.robustness,
        result.accuracy,
        result.failure_free(),
        result.sequences.len()
    );
    Ok(())
}

/// Whether a sweep retained any pair; warns when every pair was dropped.
fn nonempty(any: bool, dropped: usize) -> bool {
    if !any {
        log::warn!("all {dropped} pairs had zero IoU without perturbation; the summary is empty");
    }
    any
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (setup, cfg) = resolve(&ck, a.config.as_deref())?;
    let data = load_data(&a.data)?;
    let ctx = SweepContext {
        net: &ck.network,
        geometry: &setup.geometry,
        select: &setup.select,
        cfg: &cfg,
    };
    let out = out_path(&a.out);
    create_dir(&out)?;
    let kind = a.kind.name();
    let summary = match a.kind {
        crate::SweepKind::Search | crate::SweepKind::Target => {
            let grid = match a.kind {
                crate::SweepKind::Search => perturb::search_sweep(&ctx, &data)?,
                _ => perturb::target_sweep(&ctx, &data)?,
            };
            perturb::write_grid_csv(&out.join(format!("{kind}.csv")), &grid)?;
            perturb::save_png(&perturb::render_grid(&grid, 12), &out.join(format!("{kind}.png")))?;
            let s = nonempty(grid.counts.iter().any(|&c| c > 0), grid.dropped)
                .then(|| perturb::summarize_grid(&grid))
                .transpose()?;
            serde_json::json!({
                "kind": kind,
                "center": s.map(|s| s.center),
                "plateau": s.map(|s| s.plateau),
                "dip": s.map(|s| s.dip),
                "dropped": grid.dropped,
            })
        }
        crate::SweepKind::Staleness => {
            let curve = perturb::staleness_sweep(&ctx, &data)?;
            perturb::write_curve_csv(&out.join(format!("{kind}.csv")), &curve)?;
            perturb::save_png(&perturb::render_curve(&curve, 400, 240), &out.join(format!("{kind}.png")))?;
            let asymptote = nonempty(curve.counts.iter().any(|&c| c > 0), curve.dropped)
                .then(|| perturb::asymptote(&curve))
                .transpose()?;
            serde_json::json!({
                "kind": kind,
                "asymptote": asymptote,
                "dropped": curve.dropped,
            })
        }
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_text(&out.join(format!("{kind}_summary.json")), &text)?;
    log::info!("{kind} sweep: {summary}");
    Ok(())
}
