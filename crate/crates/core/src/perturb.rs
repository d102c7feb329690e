//! Perturbation sweeps: displaced search windows, displaced target crops and
//! stale targets, each reported as IoU normalised by the unperturbed IoU.
//!
//! Displacements are fractions of the box size factor `(w + h) / 2` of the
//! box the crop is built from, applied to the crop centre in frame pixels.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{locate, SelectConfig};
use crate::error::{Error, Result};
use crate::geometry::{crop_and_resize, iou, BBox, CropGeometry, CropSpec};
use crate::model::{Branch, Network};
use crate::synthdata::Sequence;
use crate::trackeval::{csv_error, csv_writer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Largest displacement per axis, in size factors.
    pub extent: f64,
    /// Grid spacing, in size factors.
    pub step: f64,
    /// Largest staleness; the curve covers `1..=dt_max`.
    pub dt_max: usize,
    /// Use every `pair_stride`-th frame pair or anchor.
    pub pair_stride: usize,
    /// Cap on pairs or anchors, spread evenly over the candidates.
    pub max_pairs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            extent: 2.0,
            step: 0.2,
            dt_max: 50,
            pair_stride: 1,
            max_pairs: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.extent >= 0.0 && self.extent.is_finite()) {
            return Err(Error::Config("sweep extent and step must be positive".into()));
        }
        if self.dt_max == 0 || self.pair_stride == 0 || self.max_pairs == Some(0) {
            return Err(Error::Config("dt_max, pair_stride and max_pairs must be at least 1".into()));
        }
        Ok(())
    }

    /// Axis values `k * step` for `k` in `-n..=n`; always contains 0.
    pub fn axis(&self) -> Vec<f64> {
        let n = (self.extent / self.step + 1e-9).floor() as i64;
        (-n..=n).map(|k| k as f64 * self.step).collect()
    }
}

/// Mean normalised IoU over a 2-D displacement grid, row-major with `y`
/// outer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub axis: Vec<f64>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    /// Pairs excluded because their unperturbed IoU was 0.
    pub dropped: usize,
}

impl SweepGrid {
    pub fn side(&self) -> usize {
        self.axis.len()
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.side() + ix]
    }

    pub fn center(&self) -> f64 {
        let c = self.side() / 2;
        self.at(c, c)
    }

    /// Mean of each Chebyshev ring around the centre, innermost first.
    pub fn ring_means(&self) -> Vec<f64> {
        let n = self.side();
        let c = n / 2;
        let mut sums = vec![(0.0, 0usize); c + 1];
        for iy in 0..n {
            for ix in 0..n {
                let i = iy * n + ix;
                if self.counts[i] == 0 {
                    continue;
                }
                let r = ix.abs_diff(c).max(iy.abs_diff(c));
                sums[r].0 += self.values[i];
                sums[r].1 += 1;
            }
        }
        sums.into_iter().map(|(s, k)| if k == 0 { 0.0 } else { s / k as f64 }).collect()
    }
}

/// Mean normalised IoU against staleness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub dt: Vec<usize>,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    pub dropped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub center: f64,
    /// Mean of the outermost ring.
    pub plateau: f64,
    /// Centre minus the lowest ring mean.
    pub dip: f64,
}

pub fn summarize_grid(grid: &SweepGrid) -> Result<GridSummary> {
    if grid.counts.iter().all(|&c| c == 0) {
        return Err(Error::Invalid("empty sweep".into()));
    }
    let rings = grid.ring_means();
    let center = grid.center();
    let lowest = rings.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GridSummary {
        center,
        plateau: *rings.last().unwrap_or(&center),
        dip: center - lowest,
    })
}

/// Mean of the last quarter of the curve (at least one point).
pub fn asymptote(curve: &Curve) -> Result<f64> {
    if curve.counts.iter().all(|&c| c == 0) {
        return Err(Error::Invalid("empty sweep".into()));
    }
    let k = (curve.values.len() / 4).max(1);
    let tail = &curve.values[curve.values.len() - k..];
    Ok(tail.iter().sum::<f64>() / k as f64)
}

/// Everything a sweep needs besides the data.
#[derive(Clone, Copy, Debug)]
pub struct SweepContext<'a> {
    pub net: &'a Network<f32>,
    pub geometry: &'a CropGeometry,
    pub select: &'a SelectConfig,
    pub cfg: &'a SweepConfig,
}

fn spread<T>(mut items: Vec<T>, cfg: &SweepConfig) -> Vec<T> {
    match cfg.max_pairs {
        Some(m) if items.len() > m => {
            let n = items.len();
            let keep: Vec<usize> = (0..m).map(|i| i * n / m).collect();
            let mut k = 0;
            let mut i = 0;
            items.retain(|_| {
                let hit = keep.get(k) == Some(&i);
                k += hit as usize;
                i += 1;
                hit
            });
            items
        }
        _ => items,
    }
}

/// `(sequence, t)` with `t` and `t + 1` both visible.
fn frame_pairs<'s>(seqs: &'s [Sequence], cfg: &SweepConfig) -> Result<Vec<(&'s Sequence, usize)>> {
    let mut pairs = Vec::new();
    for s in seqs {
        for t in (0..s.len().saturating_sub(1)).step_by(cfg.pair_stride) {
            if s.annotations[t].visible && s.annotations[t + 1].visible {
                pairs.push((s, t));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no consecutive visible frame pairs".into()));
    }
    Ok(spread(pairs, cfg))
}

fn shifted(spec: &CropSpec, b: &BBox, (dx, dy): (f64, f64)) -> CropSpec {
    let sf = b.size_factor();
    spec.translated(dx * sf, dy * sf)
}

fn predict_iou(ctx: &SweepContext<'_>, template: &crate::image::Image, frame: &crate::image::Image, spec: &CropSpec, prev: &BBox, gt: &BBox) -> Result<f64> {
    let z_t = ctx.net.encode(template, Branch::Target)?;
    let p = locate(ctx.net, &z_t, frame, spec, prev, ctx.geometry.stride, ctx.select)?;
    Ok(p.map_or(0.0, |p| iou(&p.bbox, gt)))
}

fn reduce_grid(axis: Vec<f64>, per_pair: Vec<Vec<f64>>) -> SweepGrid {
    let cells = axis.len() * axis.len();
    let centre = cells / 2;
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0usize; cells];
    let mut dropped = 0;
    for ious in per_pair {
        let base = ious[centre];
        if base <= 0.0 {
            dropped += 1;
            continue;
        }
        for (i, v) in ious.iter().enumerate() {
            sums[i] += v / base;
            counts[i] += 1;
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (s, &c))| match c {
            0 => 0.0,
            _ if i == centre => 1.0,
            _ => s / c as f64,
        })
        .collect();
    SweepGrid {
        axis,
        values,
        counts,
        dropped,
    }
}

fn displacements(axis: &[f64]) -> Vec<(f64, f64)> {
    axis.iter().flat_map(|&dy| axis.iter().map(move |&dx| (dx, dy))).collect()
}

/// Target from the ground truth at `t`; the search crop on frame `t + 1`,
/// centred on the ground truth at `t`, is displaced; IoU against the ground
/// truth at `t + 1`.
pub fn search_sweep(ctx: &SweepContext<'_>, seqs: &[Sequence]) -> Result<SweepGrid> {
    ctx.cfg.validate()?;
    let axis = ctx.cfg.axis();
    let shifts = displacements(&axis);
    let per_pair = frame_pairs(seqs, ctx.cfg)?
        .par_iter()
        .map(|&(s, t)| {
            let b = s.annotations[t].bbox;
            let gt = s.annotations[t + 1].bbox;
            let frame = &s.frames[t];
            let template = crop_and_resize(frame, &ctx.geometry.target_spec(&b)?, frame.channel_mean());
            let z_t = ctx.net.encode(&template, Branch::Target)?;
            let base = ctx.geometry.search_spec(&b)?;
            shifts
                .iter()
                .map(|&d| {
                    let spec = shifted(&base, &b, d);
                    let p = locate(ctx.net, &z_t, &s.frames[t + 1], &spec, &b, ctx.geometry.stride, ctx.select)?;
                    Ok(p.map_or(0.0, |p| iou(&p.bbox, &gt)))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_grid(axis, per_pair))
}

/// Search crop on frame `t + 1` fixed at the ground truth of `t`; the target
/// crop on frame `t` is displaced.
pub fn target_sweep(ctx: &SweepContext<'_>, seqs: &[Sequence]) -> Result<SweepGrid> {
    ctx.cfg.validate()?;
    let axis = ctx.cfg.axis();
    let shifts = displacements(&axis);
    let per_pair = frame_pairs(seqs, ctx.cfg)?
        .par_iter()
        .map(|&(s, t)| {
            let b = s.annotations[t].bbox;
            let gt = s.annotations[t + 1].bbox;
            let frame = &s.frames[t];
            let search = ctx.geometry.search_spec(&b)?;
            let base = ctx.geometry.target_spec(&b)?;
            shifts
                .iter()
                .map(|&d| {
                    let template = crop_and_resize(frame, &shifted(&base, &b, d), frame.channel_mean());
                    predict_iou(ctx, &template, &s.frames[t + 1], &search, &b, &gt)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_grid(axis, per_pair))
}

/// Search crop on frame `t`, centred on the ground truth at `t - 1`; the
/// target comes from the ground truth at `t - dt`. Anchors need
/// `t >= dt_max`; each is normalised by its `dt = 1` IoU.
pub fn staleness_sweep(ctx: &SweepContext<'_>, seqs: &[Sequence]) -> Result<Curve> {
    ctx.cfg.validate()?;
    let dt_max = ctx.cfg.dt_max;
    let mut anchors = Vec::new();
    for s in seqs {
        for t in (dt_max..s.len()).step_by(ctx.cfg.pair_stride) {
            if s.annotations[t].visible && s.annotations[t - 1].visible {
                anchors.push((s, t));
            }
        }
    }
    let anchors = spread(anchors, ctx.cfg);
    let per_anchor = anchors
        .par_iter()
        .map(|&(s, t)| {
            let prev = s.annotations[t - 1].bbox;
            let gt = s.annotations[t].bbox;
            let search = ctx.geometry.search_spec(&prev)?;
            (1..=dt_max)
                .map(|dt| {
                    let a = &s.annotations[t - dt];
                    if !a.visible {
                        return Ok(None);
                    }
                    let frame = &s.frames[t - dt];
                    let template = crop_and_resize(frame, &ctx.geometry.target_spec(&a.bbox)?, frame.channel_mean());
                    predict_iou(ctx, &template, &s.frames[t], &search, &prev, &gt).map(Some)
                })
                .collect::<Result<Vec<Option<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = vec![0.0; dt_max];
    let mut counts = vec![0usize; dt_max];
    let mut dropped = 0;
    for ious in per_anchor {
        let base = ious[0].unwrap_or(0.0);
        if base <= 0.0 {
            dropped += 1;
            continue;
        }
        for (i, v) in ious.iter().enumerate() {
            if let Some(v) = v {
                sums[i] += v / base;
                counts[i] += 1;
            }
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (s, &c))| match c {
            0 => 0.0,
            _ if i == 0 => 1.0,
            _ => s / c as f64,
        })
        .collect();
    Ok(Curve {
        dt: (1..=dt_max).collect(),
        values,
        counts,
        dropped,
    })
}

#[derive(Serialize, Deserialize)]
struct GridRow {
    axis_x: f64,
    axis_y: f64,
    mean_norm_iou: f64,
    n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    axis_x: usize,
    mean_norm_iou: f64,
    n_samples: usize,
}

pub fn write_grid_csv(path: &Path, grid: &SweepGrid) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = grid.side();
    for iy in 0..n {
        for ix in 0..n {
            let i = iy * n + ix;
            w.serialize(GridRow {
                axis_x: grid.axis[ix],
                axis_y: grid.axis[iy],
                mean_norm_iou: grid.values[i],
                n_samples: grid.counts[i],
            })
            .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve_csv(path: &Path, curve: &Curve) -> Result<()> {
    let mut w = csv_writer(path)?;
    for i in 0..curve.dt.len() {
        w.serialize(CurveRow {
            axis_x: curve.dt[i],
            mean_norm_iou: curve.values[i],
            n_samples: curve.counts[i],
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a grid written by [`write_grid_csv`]. `dropped` is not stored and
/// reads back as 0.
pub fn read_grid_csv(path: &Path) -> Result<SweepGrid> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows: Vec<GridRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n * n != rows.len() || n == 0 {
        return Err(Error::Invalid(format!("{}: {} rows do not form a square grid", path.display(), rows.len())));
    }
    Ok(SweepGrid {
        axis: rows[..n].iter().map(|r| r.axis_x).collect(),
        values: rows.iter().map(|r| r.mean_norm_iou).collect(),
        counts: rows.iter().map(|r| r.n_samples).collect(),
        dropped: 0,
    })
}

pub fn read_curve_csv(path: &Path) -> Result<Curve> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let rows: Vec<CurveRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(Curve {
        dt: rows.iter().map(|r| r.axis_x).collect(),
        values: rows.iter().map(|r| r.mean_norm_iou).collect(),
        counts: rows.iter().map(|r| r.n_samples).collect(),
        dropped: 0,
    })
}

/// Blue (0) through white to red (`hi` and above).
fn colour(v: f64, hi: f64) -> [u8; 3] {
    let t = (v / hi).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64, u: f64| (a + (b - a) * u).round() as u8;
    if t < 0.5 {
        let u = t * 2.0;
        [lerp(40.0, 255.0, u), lerp(60.0, 255.0, u), lerp(160.0, 255.0, u)]
    } else {
        let u = (t - 0.5) * 2.0;
        [lerp(255.0, 180.0, u), lerp(255.0, 30.0, u), lerp(255.0, 30.0, u)]
    }
}

/// Heatmap of the grid, `cell` pixels per entry, `y` growing downwards.
/// Cells without samples are grey.
pub fn render_grid(grid: &SweepGrid, cell: usize) -> image::RgbImage {
    let n = grid.side();
    let mut img = image::RgbImage::new((n * cell) as u32, (n * cell) as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let i = (y as usize / cell) * n + x as usize / cell;
        px.0 = if grid.counts[i] == 0 { [128; 3] } else { colour(grid.values[i], 1.2) };
    }
    img
}

fn draw_line(img: &mut image::RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for k in 0..=steps {
        let x = x0 + (x1 - x0) * k / steps;
        let y = y0 + (y1 - y0) * k / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
}

/// Line plot of the curve on `[0, 1.2]`, with a dashed reference at 1.
pub fn render_curve(curve: &Curve, width: u32, height: u32) -> image::RgbImage {
    render_lines(&[(&curve.values[..], [200, 30, 30])], 1.2, Some(1.0), width, height)
}

/// Line plot of several equally spaced series on `[0, y_max]`, with axes and
/// an optional dashed horizontal reference.
pub fn render_lines(series: &[(&[f64], [u8; 3])], y_max: f64, reference: Option<f64>, width: u32, height: u32) -> image::RgbImage {
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255; 3]));
    let m = 12i64;
    let (w, h) = (width as i64 - 2 * m, height as i64 - 2 * m);
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let to_px = |i: usize, len: usize, v: f64| {
        let n = len.saturating_sub(1).max(1) as f64;
        let x = m + (i as f64 / n * w as f64).round() as i64;
        let y = m + h - ((v / y_max).clamp(0.0, 1.0) * h as f64).round() as i64;
        (x, y)
    };
    draw_line(&mut img, (m, m + h), (m + w, m + h), [0; 3]);
    draw_line(&mut img, (m, m), (m, m + h), [0; 3]);
    if let Some(r) = reference {
        let y = to_px(0, 2, r).1;
        for x in (m..m + w).step_by(8) {
            draw_line(&mut img, (x, y), (x + 3, y), [150; 3]);
        }
    }
    for (values, rgb) in series {
        for i in 1..values.len() {
            draw_line(&mut img, to_px(i - 1, values.len(), values[i - 1]), to_px(i, values.len(), values[i]), *rgb);
        }
    }
    img
}

pub fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
