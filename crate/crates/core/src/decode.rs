//! Turning tracker outputs into boxes: heatmap mode extraction, windowed
//! offset averaging, temporally penalised proposal selection and the
//! recursive tracking loop.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{context_side, crop_and_resize, grid_point_to_frame, BBox, CropGeometry, CropSpec};
use crate::image::Image;
use crate::model::{Branch, FeatureMap, Network, TrackerOutput};
use crate::synthdata::Sequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    /// Proposals per frame.
    pub n: usize,
    /// Edge of the square suppression and averaging window, grid cells.
    pub window: usize,
    /// Shape-change penalty coefficient `k`.
    pub penalty_k: f64,
    /// Weight `lambda` of the cosine window.
    pub window_influence: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            n: 5,
            window: 6,
            penalty_k: 0.05,
            window_influence: 0.42,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.window == 0 {
            return Err(Error::Config("proposal count and window must be at least 1".into()));
        }
        if !(self.penalty_k >= 0.0 && self.penalty_k.is_finite()) || !(0.0..=1.0).contains(&self.window_influence) {
            return Err(Error::Config(format!(
                "penalty_k must be >= 0 and window_influence in [0, 1]: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    /// Positive-class probability at the mode.
    pub score: f64,
    /// Mode cell `(row, col)`.
    pub cell: (usize, usize),
}

/// Inclusive index range of a `window`-wide span around `c`, clipped to
/// `[0, len)`. Even windows reach one cell further back: `[c - 3, c + 2]`
/// for a window of 6.
pub fn window_span(c: usize, window: usize, len: usize) -> (usize, usize) {
    let back = window / 2;
    let fwd = window - 1 - back;
    (c.saturating_sub(back), (c + fwd).min(len - 1))
}

#[cfg(test)]
fn in_window(mode: (usize, usize), cell: (usize, usize), window: usize) -> bool {
    let back = (window / 2) as isize;
    let fwd = (window - 1) as isize - back;
    let dr = cell.0 as isize - mode.0 as isize;
    let dc = cell.1 as isize - mode.1 as isize;
    (-back..=fwd).contains(&dr) && (-back..=fwd).contains(&dc)
}

/// Greedy non-maximum suppression on a `grid x grid` map.
///
/// Repeatedly takes the largest positive unsuppressed value (ties go to the
/// lexicographically smallest `(row, col)`) and suppresses its window, until
/// `n` modes are found or nothing positive remains.
pub fn top_modes(values: &[f32], grid: usize, n: usize, window: usize) -> Vec<(usize, usize)> {
    assert_eq!(values.len(), grid * grid, "value grid has the wrong size");
    let mut suppressed = vec![false; values.len()];
    let mut modes = Vec::with_capacity(n);
    while modes.len() < n {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if suppressed[i] || !(v > 0.0) {
                continue;
            }
            if best.is_none_or(|b| v > values[b]) {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        let mode = (i / grid, i % grid);
        let (r0, r1) = window_span(mode.0, window, grid);
        let (c0, c1) = window_span(mode.1, window, grid);
        for r in r0..=r1 {
            suppressed[r * grid + c0..=r * grid + c1].fill(true);
        }
        modes.push(mode);
    }
    modes
}

/// One proposal per heatmap mode. Corners are the mean of the per-cell
/// corner votes (cell position plus offset) over the mode's window.
pub fn proposals_from_output(out: &TrackerOutput, spec: &CropSpec, stride: usize, cfg: &SelectConfig) -> Vec<Proposal> {
    let g = out.grid();
    let n = g * g;
    let probs = out.positive_probability();
    let off = &out.offsets.data;
    top_modes(&probs, g, cfg.n, cfg.window)
        .into_iter()
        .map(|(row, col)| {
            let (r0, r1) = window_span(row, cfg.window, g);
            let (c0, c1) = window_span(col, cfg.window, g);
            let mut acc = [0f64; 4];
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let i = r * g + c;
                    acc[0] += c as f64 + off[i] as f64;
                    acc[1] += r as f64 + off[n + i] as f64;
                    acc[2] += c as f64 + off[2 * n + i] as f64;
                    acc[3] += r as f64 + off[3 * n + i] as f64;
                }
            }
            let k = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            let (x0, y0) = grid_point_to_frame((acc[0] / k, acc[1] / k), spec, stride);
            let (x1, y1) = grid_point_to_frame((acc[2] / k, acc[3] / k), spec, stride);
            let bbox = BBox::new(x0, y0, x1.max(x0), y1.max(y0)).clip_to(&spec.region());
            Proposal {
                bbox,
                score: probs[row * g + col] as f64,
                cell: (row, col),
            }
        })
        .collect()
}

/// Separable Hann window over the search crop, 1 at its centre and 0 at
/// (and beyond) its edges.
pub fn cosine_window(point: (f64, f64), spec: &CropSpec) -> f64 {
    let half = spec.side / 2.0;
    let axis = |d: f64| {
        if d.abs() >= half {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * d / half).cos())
        }
    };
    axis(point.0 - spec.center.0) * axis(point.1 - spec.center.1)
}

fn shape_change(b: &BBox, prev: &BBox) -> f64 {
    let ratio = |b: &BBox| b.width().max(1e-9) / b.height().max(1e-9);
    let scale = |b: &BBox| context_side(b).max(1e-9);
    let (r, rp) = (ratio(b), ratio(prev));
    let (s, sp) = (scale(b), scale(prev));
    (r / rp).max(rp / r) * (s / sp).max(sp / s)
}

/// Score after the shape-change penalty and cosine window.
pub fn penalized_score(p: &Proposal, prev: &BBox, spec: &CropSpec, cfg: &SelectConfig) -> f64 {
    let penalty = (-cfg.penalty_k * (shape_change(&p.bbox, prev) - 1.0)).exp();
    let lambda = cfg.window_influence;
    p.score * penalty * ((1.0 - lambda) + lambda * cosine_window(p.bbox.center(), spec))
}

/// Index of the proposal with the highest penalised score. Ties go to the
/// higher raw score, then to the smaller `(y, x)` centre.
pub fn select_proposal(proposals: &[Proposal], prev: &BBox, spec: &CropSpec, cfg: &SelectConfig) -> Result<usize> {
    if proposals.is_empty() {
        return Err(Error::Invalid("no proposals to select from".into()));
    }
    let key = |p: &Proposal| {
        let (x, y) = p.bbox.center();
        (penalized_score(p, prev, spec, cfg), p.score, -y, -x)
    };
    let mut best = 0;
    let mut best_key = key(&proposals[0]);
    for (i, p) in proposals.iter().enumerate().skip(1) {
        let k = key(p);
        if k.partial_cmp(&best_key) == Some(std::cmp::Ordering::Greater) {
            best = i;
            best_key = k;
        }
    }
    Ok(best)
}

/// Crops `spec` from `frame`, runs the tracker branch against `z_t` and
/// returns the selected proposal, if the heatmap has any mode.
pub fn locate(
    net: &Network<f32>,
    z_t: &FeatureMap<f32>,
    frame: &Image,
    spec: &CropSpec,
    prev: &BBox,
    stride: usize,
    select: &SelectConfig,
) -> Result<Option<Proposal>> {
    let search = crop_and_resize(frame, spec, frame.channel_mean());
    let out = net.track(z_t, &search)?;
    let proposals = proposals_from_output(&out, spec, stride, select);
    if proposals.is_empty() {
        return Ok(None);
    }
    Ok(Some(proposals[select_proposal(&proposals, prev, spec, select)?]))
}

/// A single-object tracker driven frame by frame.
pub trait SequenceTracker {
    /// (Re)initialises on `frame` at `bbox`. `template` replaces the target
    /// crop normally cut around `bbox`.
    fn init(&mut self, frame: &Image, bbox: &BBox, template: Option<&Image>) -> Result<()>;
    fn track(&mut self, frame: &Image) -> Result<Proposal>;
}

/// The Siamese tracker: fixed template, search crop centred on the last
/// output.
pub struct SiameseTracker<'a> {
    net: &'a Network<f32>,
    geometry: CropGeometry,
    select: SelectConfig,
    template: Option<FeatureMap<f32>>,
    state: Option<BBox>,
}

impl<'a> SiameseTracker<'a> {
    pub fn new(net: &'a Network<f32>, geometry: CropGeometry, select: SelectConfig) -> Self {
        Self {
            net,
            geometry,
            select,
            template: None,
            state: None,
        }
    }

    pub fn state(&self) -> Option<BBox> {
        self.state
    }
}

impl SequenceTracker for SiameseTracker<'_> {
    fn init(&mut self, frame: &Image, bbox: &BBox, template: Option<&Image>) -> Result<()> {
        let crop = match template {
            Some(t) => {
                if t.width != self.geometry.target_size || t.height != self.geometry.target_size {
                    return Err(Error::Shape(format!(
                        "template is {}x{}, expected {}",
                        t.width, t.height, self.geometry.target_size
                    )));
                }
                t.clone()
            }
            None => crop_and_resize(frame, &self.geometry.target_spec(bbox)?, frame.channel_mean()),
        };
        self.template = Some(self.net.encode(&crop, Branch::Target)?);
        self.state = Some(*bbox);
        Ok(())
    }

    fn track(&mut self, frame: &Image) -> Result<Proposal> {
        let (Some(z_t), Some(prev)) = (&self.template, self.state) else {
            return Err(Error::Invalid("tracker used before init".into()));
        };
        let spec = self.geometry.search_spec(&prev)?;
        let chosen = locate(self.net, z_t, frame, &spec, &prev, self.geometry.stride, &self.select)?.unwrap_or(
            // an all-zero heatmap: hold position
            Proposal {
                bbox: prev,
                score: 0.0,
                cell: (self.geometry.grid() / 2, self.geometry.grid() / 2),
            },
        );
        // keep a usable state when the decoded box collapses
        let b = chosen.bbox;
        let next = if b.width() >= 1.0 && b.height() >= 1.0 {
            b
        } else {
            let (cx, cy) = b.center();
            BBox::from_center_size(cx, cy, prev.width(), prev.height())
        };
        self.state = Some(next);
        Ok(chosen)
    }
}

/// Tracks every frame of `seq` after initialising on frame 0 at `init`.
pub fn track_sequence<T: SequenceTracker>(
    seq: &Sequence,
    init: &BBox,
    tracker: &mut T,
    template: Option<&Image>,
) -> Result<Vec<Proposal>> {
    let Some(first) = seq.frames.first() else {
        return Ok(Vec::new());
    };
    tracker.init(first, init, template)?;
    seq.frames.iter().map(|f| tracker.track(f)).collect()
}

#[derive(Serialize)]
struct ResultRecord<'a> {
    sequence_id: &'a str,
    frame: usize,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: f64,
}

/// Appends one JSON line per frame to `out`.
pub fn write_track_results<W: Write>(out: &mut W, sequence_id: &str, proposals: &[Proposal]) -> Result<()> {
    for (frame, p) in proposals.iter().enumerate() {
        let r = ResultRecord {
            sequence_id,
            frame,
            x_min: p.bbox.x_min,
            y_min: p.bbox.y_min,
            x_max: p.bbox.x_max,
            y_max: p.bbox.y_max,
            score: p.score,
        };
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<results>", e))?;
    }
    Ok(())
}

pub fn save_track_results(path: &Path, results: &[(String, Vec<Proposal>)]) -> Result<()> {
    let mut buf = Vec::new();
    for (id, props) in results {
        write_track_results(&mut buf, id, props)?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
