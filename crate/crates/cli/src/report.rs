use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use siamtrack::perturb::{render_lines, save_png};
use siamtrack::trackeval::{ablation_report, summarize_samples, write_report_csv, MetricSample};
use siamtrack::train::{multi_seed, read_metrics_csv, write_curve_csv, CurvePoint, MetricsRow};
use siamtrack::{Error, Result, Variant};

use crate::{out_path, ReportArgs};

/// Seed directories under `p`: `p` itself when it holds `metrics.csv`, else
/// its subdirectories that do, ordered numerically by name.
fn seed_dirs(p: &Path) -> Result<Vec<PathBuf>> {
    if p.join("metrics.csv").is_file() {
        return Ok(vec![p.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(p).map_err(|e| Error::io(p, e))? {
        let path = entry.map_err(|e| Error::io(p, e))?.path();
        if path.join("metrics.csv").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort_by_key(|d| {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        (name.parse::<u64>().unwrap_or(u64::MAX), name)
    });
    if dirs.is_empty() {
        return Err(Error::Invalid(format!("no metrics.csv under {}", p.display())));
    }
    Ok(dirs)
}

#[derive(Deserialize)]
struct SummaryRow {
    model: String,
    seed: u64,
    split: String,
    robustness: f64,
    accuracy: f64,
}

fn read_eval_summary(path: &Path) -> Result<Vec<MetricSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    r.deserialize::<SummaryRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            Ok(MetricSample {
                group: row.model,
                split: row.split,
                seed: row.seed,
                robustness: row.robustness,
                accuracy: row.accuracy,
            })
        })
        .collect()
}

/// Writes `table.csv`, per-variant `curves_<variant>.csv` (two or more
/// seeds), and `crossover.csv` plus `training_curves.png` when both
/// variants have curves over the same steps.
pub fn report(a: &ReportArgs) -> Result<()> {
    let mut runs: Vec<(Variant, Vec<MetricsRow>)> = Vec::new();
    for root in &a.runs {
        for dir in seed_dirs(root)? {
            let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
            match rows.first() {
                Some(r) => runs.push((r.variant, rows)),
                None => log::warn!("{} has no metrics rows yet", dir.display()),
            }
        }
    }
    let out = out_path(&a.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut samples: Vec<MetricSample> = runs
        .iter()
        .filter_map(|(v, rows)| {
            rows.last().map(|r| MetricSample {
                group: v.name().to_string(),
                split: "eval".to_string(),
                seed: r.seed,
                robustness: r.robustness,
                accuracy: r.accuracy,
            })
        })
        .collect();
    for p in &a.evals {
        samples.extend(read_eval_summary(p)?);
    }
    let has = |v: Variant| samples.iter().any(|s| s.group == v.name());
    let single = summarize_samples(&samples).iter().any(|r| r.n < 2);
    let table = if single {
        log::warn!("some groups have a single seed; their standard errors are left empty");
        summarize_samples(&samples)
    } else if has(Variant::WithDetector) && has(Variant::NoDetector) {
        ablation_report(&samples, Variant::NoDetector.name(), Variant::WithDetector.name())?
    } else {
        summarize_samples(&samples)
    };
    write_report_csv(&out.join("table.csv"), &table)?;

    let mut curves: Vec<(Variant, Vec<CurvePoint>)> = Vec::new();
    for v in [Variant::WithDetector, Variant::NoDetector] {
        let group: Vec<Vec<MetricsRow>> = runs.iter().filter(|(rv, _)| *rv == v).map(|(_, r)| r.clone()).collect();
        match group.len() {
            0 => {}
            1 => log::warn!("{}: a single run, no aggregated curve", v.name()),
            _ => {
                let points = multi_seed(&group)?;
                write_curve_csv(&out.join(format!("curves_{}.csv", v.name())), v.name(), &points)?;
                curves.push((v, points));
            }
        }
    }
    if let [(_, with), (_, without)] = &curves[..] {
        if with.iter().map(|p| p.step).eq(without.iter().map(|p| p.step)) {
            write_crossover(&out, with, without)?;
        } else {
            log::warn!("variants were evaluated at different steps; no crossover table");
        }
    }
    log::info!("report written to {}", out.display());
    Ok(())
}

fn write_crossover(out: &Path, with: &[CurvePoint], without: &[CurvePoint]) -> Result<()> {
    let path = out.join("crossover.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(["step", "robustness_with_detector", "robustness_no_detector", "difference"]).map_err(err)?;
    for (a, b) in with.iter().zip(without) {
        w.write_record([
            a.step.to_string(),
            a.robustness_mean.to_string(),
            b.robustness_mean.to_string(),
            (a.robustness_mean - b.robustness_mean).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let early: Vec<usize> = with
        .iter()
        .zip(without)
        .filter(|(a, b)| a.robustness_mean > b.robustness_mean)
        .map(|(a, _)| a.step)
        .collect();
    if !early.is_empty() {
        log::info!("with_detector has more failures than no_detector at steps {early:?}");
    }
    let r_with: Vec<f64> = with.iter().map(|p| p.robustness_mean).collect();
    let r_without: Vec<f64> = without.iter().map(|p| p.robustness_mean).collect();
    let top = r_with.iter().chain(&r_without).copied().fold(0.0, f64::max) * 1.1;
    let img = render_lines(&[(&r_with, [200, 30, 30]), (&r_without, [30, 60, 200])], top, None, 480, 280);
    save_png(&img, &out.join("training_curves.png"))
}
