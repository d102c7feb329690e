//! Causal training-pair sampling, augmentation and supervision targets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_and_resize, frame_to_grid, BBox, CropGeometry, CropSpec};
use crate::image::Image;
use crate::model::loss::Targets;
use crate::model::targets::{encode_offsets, heatmap_disc};
use crate::model::{image_tensor, NetworkInputs};
use crate::nn::Scalar;

use super::{hue_rotate, Sequence};

/// How the target (template) frame is chosen relative to the sub-sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    FirstFrame,
    /// Uniform over `[0, t - 1]` for sub-sequence start `t`.
    RandomCausal,
}

/// Ranges of the random augmentations. Zero disables a term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Augmentation {
    /// Maximum target displacement inside the search crop, as a fraction of
    /// the crop edge, per axis.
    pub translation: f64,
    /// Maximum absolute log change of the search field of view.
    pub scale: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
    /// Maximum hue rotation, radians.
    pub hue: f64,
    /// Maximum relative saturation change.
    pub saturation: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            translation: 0.05,
            scale: 0.15,
            contrast: 0.2,
            hue: 0.1,
            saturation: 0.2,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self {
            translation: 0.0,
            scale: 0.0,
            contrast: 0.0,
            hue: 0.0,
            saturation: 0.0,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, search_size: usize, rng: &mut R) -> AugDraw {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let max_shift = self.translation * search_size as f64;
        let shift = (sym(rng, max_shift), sym(rng, max_shift));
        let log_scale = sym(rng, self.scale);
        let photo = |rng: &mut R| Photometric {
            contrast: 1.0 + sym(rng, self.contrast) as f32,
            saturation: 1.0 + sym(rng, self.saturation) as f32,
            hue: sym(rng, self.hue),
        };
        AugDraw {
            shift,
            log_scale,
            target: photo(rng),
            search: photo(rng),
            detector: photo(rng),
        }
    }
}

/// Photometric perturbation of one crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Photometric {
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f64,
}

impl Photometric {
    pub const IDENTITY: Photometric = Photometric {
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    fn apply(&self, img: &mut Image) {
        if *self == Self::IDENTITY {
            return;
        }
        let lum = |p: &[f32]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        let n = (img.width * img.height).max(1) as f32;
        let mean = img.data.chunks_exact(3).map(lum).sum::<f32>() / n;
        for px in img.data.chunks_exact_mut(3) {
            let mut rgb = [px[0], px[1], px[2]];
            if self.hue != 0.0 {
                rgb = hue_rotate(rgb, self.hue);
            }
            let g = lum(&rgb);
            for (o, v) in px.iter_mut().zip(rgb) {
                let v = g + (v - g) * self.saturation;
                *o = ((v - mean) * self.contrast + mean).clamp(0.0, 1.0);
            }
        }
    }
}

/// One draw of every augmentation applied to an example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct AugDraw {
    /// Displacement of the target inside the search crop, search pixels.
    pub shift: (f64, f64),
    pub log_scale: f64,
    pub target: Photometric,
    pub search: Photometric,
    pub detector: Photometric,
}

#[cfg(test)]
impl AugDraw {
    pub const NONE: AugDraw = AugDraw {
        shift: (0.0, 0.0),
        log_scale: 0.0,
        target: Photometric::IDENTITY,
        search: Photometric::IDENTITY,
        detector: Photometric::IDENTITY,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Sub-sequence length: the search frame is drawn from `[t, t + tau)`.
    pub tau: usize,
    pub target_rule: TargetRule,
    pub augmentation: Augmentation,
    /// Radius of the positive heatmap disc, search-crop pixels.
    pub disc_radius: f64,
    /// Draws allowed when the target is invisible before giving up.
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            tau: 2,
            target_rule: TargetRule::RandomCausal,
            augmentation: Augmentation::default(),
            disc_radius: 6.0,
            max_retries: 64,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Config("sub-sequence length tau must be at least 1".into()));
        }
        if !(self.disc_radius > 0.0 && self.disc_radius.is_finite()) {
            return Err(Error::Config("disc radius must be positive".into()));
        }
        let a = &self.augmentation;
        if [a.translation, a.scale, a.contrast, a.hue, a.saturation]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
            || a.contrast >= 1.0
            || a.saturation >= 1.0
        {
            return Err(Error::Config(format!("invalid augmentation ranges {a:?}")));
        }
        Ok(())
    }
}

/// Target frame index for a sub-sequence starting at `t >= 1`.
pub fn sample_target_index<R: Rng + ?Sized>(t: usize, rule: TargetRule, rng: &mut R) -> usize {
    match rule {
        TargetRule::FirstFrame => 0,
        TargetRule::RandomCausal => rng.random_range(0..t),
    }
}

/// Draws `(target index, search index)` from a sequence of `len` frames.
///
/// The sub-sequence start `t` is uniform over `[1, len - tau]` and the search
/// index uniform over `[t, t + tau)`, so the target always precedes it.
pub fn sample_pair<R: Rng + ?Sized>(len: usize, cfg: &SamplerConfig, rng: &mut R) -> Result<(usize, usize)> {
    if cfg.tau == 0 || len < cfg.tau + 1 {
        return Err(Error::ShortSequence(format!(
            "{len} frames cannot hold a target frame and a sub-sequence of {}",
            cfg.tau
        )));
    }
    let t = rng.random_range(1..=len - cfg.tau);
    let search = t + rng.random_range(0..cfg.tau);
    Ok((sample_target_index(t, cfg.target_rule, rng), search))
}

/// Supervision for one optimizer example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub target_index: usize,
    pub search_index: usize,
    pub target: Image,
    pub search: Image,
    /// The whole search frame resized to the search size.
    pub detector: Option<Image>,
    /// `g x g` binary disc.
    pub heat: Vec<f32>,
    /// `4 x g x g` corner offsets, grid units.
    pub offsets: Vec<f32>,
    pub mask: Vec<bool>,
    pub detector_heat: Option<Vec<f32>>,
    pub search_spec: CropSpec,
    pub detector_spec: Option<CropSpec>,
    /// Ground truth in the search frame.
    pub search_box: BBox,
}

impl TrainingExample {
    pub fn targets(&self) -> Targets<'_> {
        Targets {
            heat: &self.heat,
            offsets: &self.offsets,
            mask: &self.mask,
            detector_heat: self.detector_heat.as_deref(),
        }
    }

    pub fn inputs<T: Scalar>(&self) -> NetworkInputs<T> {
        NetworkInputs {
            target: image_tensor(&self.target),
            search: image_tensor(&self.search),
            detector: self.detector.as_ref().map(image_tensor),
        }
    }
}

/// Square crop holding the whole frame, used for detector inputs.
pub fn full_frame_spec(width: usize, height: usize, out_size: usize) -> Result<CropSpec> {
    CropSpec::new(
        (width as f64 / 2.0, height as f64 / 2.0),
        width.max(height) as f64,
        out_size,
    )
}

/// Builds the crops and targets for `(target index, search index)`.
///
/// The search crop is centred on the previous frame's box and then
/// randomly translated and rescaled; targets are computed through the
/// augmented crop so they stay consistent with the pixels.
pub fn build_training_example<R: Rng + ?Sized>(
    seq: &Sequence,
    indices: (usize, usize),
    cfg: &SamplerConfig,
    geometry: &CropGeometry,
    with_detector: bool,
    rng: &mut R,
) -> Result<TrainingExample> {
    let draw = cfg.augmentation.draw(geometry.search_size, rng);
    build_with(seq, indices, cfg, geometry, with_detector, &draw)
}

pub(crate) fn build_with(
    seq: &Sequence,
    (ti, si): (usize, usize),
    cfg: &SamplerConfig,
    geometry: &CropGeometry,
    with_detector: bool,
    draw: &AugDraw,
) -> Result<TrainingExample> {
    if ti >= si || si >= seq.len() || seq.annotations.len() != seq.len() {
        return Err(Error::Invalid(format!(
            "invalid pair ({ti}, {si}) for sequence {} of {} frames",
            seq.id,
            seq.len()
        )));
    }
    let (ta, sa) = (&seq.annotations[ti], &seq.annotations[si]);
    if !ta.visible || !sa.visible {
        return Err(Error::Invalid(format!("target invisible in pair ({ti}, {si}) of {}", seq.id)));
    }
    let stride = geometry.stride;
    let grid = geometry.grid();
    let radius = cfg.disc_radius / stride as f64;

    let target_frame = &seq.frames[ti];
    let mut target = crop_and_resize(
        target_frame,
        &geometry.target_spec(&ta.bbox)?,
        target_frame.channel_mean(),
    );
    draw.target.apply(&mut target);

    let prev = &seq.annotations[si - 1].bbox;
    let anchor = if prev.area() > 0.0 { prev } else { &sa.bbox };
    let base = geometry.search_spec(anchor)?;
    let scaled = base.with_side(base.side * draw.log_scale.exp());
    let s = scaled.scale();
    let search_spec = scaled.translated(-draw.shift.0 / s, -draw.shift.1 / s);
    let search_frame = &seq.frames[si];
    let pad = search_frame.channel_mean();
    let mut search = crop_and_resize(search_frame, &search_spec, pad);
    draw.search.apply(&mut search);
    let enc = encode_offsets(&sa.bbox, &search_spec, stride, grid, radius);
    let heat = enc.heat();

    let (detector, detector_heat, detector_spec) = if with_detector {
        let spec = full_frame_spec(search_frame.width, search_frame.height, geometry.search_size)?;
        let mut img = crop_and_resize(search_frame, &spec, pad);
        draw.detector.apply(&mut img);
        let disc = heatmap_disc(frame_to_grid(sa.bbox.center(), &spec, stride), radius, grid);
        let h = disc.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
        (Some(img), Some(h), Some(spec))
    } else {
        (None, None, None)
    };

    Ok(TrainingExample {
        target_index: ti,
        search_index: si,
        target,
        search,
        detector,
        heat,
        offsets: enc.offsets,
        mask: enc.mask,
        detector_heat,
        search_spec,
        detector_spec,
        search_box: sa.bbox,
    })
}

/// Draws a pair from `seq` and builds its example, redrawing while the
/// target is invisible in either frame.
pub fn sample_training_example<R: Rng + ?Sized>(
    seq: &Sequence,
    cfg: &SamplerConfig,
    geometry: &CropGeometry,
    with_detector: bool,
    rng: &mut R,
) -> Result<TrainingExample> {
    for _ in 0..cfg.max_retries.max(1) {
        let (ti, si) = sample_pair(seq.len(), cfg, rng)?;
        if seq.annotations[ti].visible && seq.annotations[si].visible {
            return build_training_example(seq, (ti, si), cfg, geometry, with_detector, rng);
        }
    }
    Err(Error::Invalid(format!(
        "no pair with a visible target in {} after {} draws",
        seq.id, cfg.max_retries
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{grid_point_to_frame, iou};
    use crate::model::targets::decode_offsets;
    use crate::synthdata::{generate_dataset, DatasetConfig, SceneConfig, Split, SplitCount};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn dataset(split: Split, n: usize) -> Vec<Sequence> {
        let cfg = DatasetConfig {
            scene: SceneConfig {
                num_frames: 12,
                ..SceneConfig::default()
            },
            splits: vec![SplitCount { split, count: n }],
        };
        generate_dataset(&cfg, 21).unwrap()
    }

    fn chi_square_p(counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        let e = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn first_frame_rule_always_picks_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SamplerConfig {
            target_rule: TargetRule::FirstFrame,
            ..Default::default()
        };
        for _ in 0..1000 {
            assert_eq!(sample_pair(30, &cfg, &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn start_of_one_forces_target_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_target_index(1, TargetRule::RandomCausal, &mut rng), 0);
        }
    }

    #[test]
    fn causal_target_index_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0u64; 5];
        for _ in 0..100_000 {
            counts[sample_target_index(5, TargetRule::RandomCausal, &mut rng)] += 1;
        }
        let p = chi_square_p(&counts);
        assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
    }

    #[test]
    fn target_always_precedes_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (len, tau) in [(2, 1), (3, 2), (10, 2), (40, 5), (7, 6)] {
            let cfg = SamplerConfig {
                tau,
                ..Default::default()
            };
            for _ in 0..200_000 {
                let (t, s) = sample_pair(len, &cfg, &mut rng).unwrap();
                assert!(t < s && s < len);
            }
        }
    }

    #[test]
    fn short_sequences_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SamplerConfig::default();
        assert!(sample_pair(2, &cfg, &mut rng).is_err());
        assert!(sample_pair(3, &cfg, &mut rng).is_ok());
    }

    #[test]
    fn unaugmented_disc_is_centred_on_the_grid() {
        let seqs = dataset(Split::Static, 1);
        let geo = CropGeometry::compact();
        let cfg = SamplerConfig {
            disc_radius: 6.0,
            ..Default::default()
        };
        let ex = build_with(&seqs[0], (0, 1), &cfg, &geo, true, &AugDraw::NONE).unwrap();
        let g = geo.grid();
        let on: Vec<(usize, usize)> = (0..g * g).filter(|i| ex.mask[*i]).map(|i| (i / g, i % g)).collect();
        let mid = (g / 2 - 1, g / 2);
        assert_eq!(on, vec![(mid.0, mid.0), (mid.0, mid.1), (mid.1, mid.0), (mid.1, mid.1)]);
        assert_eq!(ex.heat.iter().sum::<f32>(), 4.0);
        assert_eq!(ex.target.width, 32);
        assert_eq!(ex.search.width, 64);
        assert_eq!(ex.detector.as_ref().unwrap().width, 64);
        assert!(ex.detector_heat.as_ref().unwrap().iter().any(|v| *v > 0.0));
    }

    #[test]
    fn translation_of_eight_pixels_moves_disc_two_cells() {
        let seqs = dataset(Split::Static, 1);
        let geo = CropGeometry::compact();
        let cfg = SamplerConfig::default();
        let centroid = |ex: &TrainingExample| {
            let g = geo.grid();
            let cells: Vec<usize> = (0..g * g).filter(|i| ex.mask[*i]).collect();
            let n = cells.len() as f64;
            (
                cells.iter().map(|i| (i % g) as f64).sum::<f64>() / n,
                cells.iter().map(|i| (i / g) as f64).sum::<f64>() / n,
            )
        };
        let base = build_with(&seqs[0], (0, 1), &cfg, &geo, false, &AugDraw::NONE).unwrap();
        let moved = build_with(
            &seqs[0],
            (0, 1),
            &cfg,
            &geo,
            false,
            &AugDraw {
                shift: (8.0, 0.0),
                ..AugDraw::NONE
            },
        )
        .unwrap();
        let (a, b) = (centroid(&base), centroid(&moved));
        assert!((b.0 - a.0 - 2.0).abs() < 1e-9 && (b.1 - a.1).abs() < 1e-9, "{a:?} -> {b:?}");
    }

    #[test]
    fn ten_pixel_disc_at_stride_four_has_21_cells() {
        let seqs = dataset(Split::Static, 1);
        let geo = CropGeometry::desk();
        let cfg = SamplerConfig {
            disc_radius: 10.0,
            ..Default::default()
        };
        // a 2 px shift puts the box centre on a lattice point of the grid
        let draw = AugDraw {
            shift: (2.0, 2.0),
            ..AugDraw::NONE
        };
        let ex = build_with(&seqs[0], (0, 1), &cfg, &geo, false, &draw).unwrap();
        let (gx, gy) = frame_to_grid(ex.search_box.center(), &ex.search_spec, 4);
        assert!((gx - 16.0).abs() < 1e-9 && (gy - 16.0).abs() < 1e-9, "{gx} {gy}");
        assert_eq!(ex.mask.iter().filter(|m| **m).count(), 21);
    }

    #[test]
    fn augmented_targets_stay_consistent() {
        let seqs = dataset(Split::Easy, 4);
        let geo = CropGeometry::compact();
        let cfg = SamplerConfig {
            augmentation: Augmentation {
                translation: 0.3,
                scale: 0.3,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = geo.grid();
        let mut checked = 0;
        for k in 0..400 {
            let seq = &seqs[k % seqs.len()];
            let ex = sample_training_example(seq, &cfg, &geo, false, &mut rng).unwrap();
            let cells: Vec<usize> = (0..g * g).filter(|i| ex.mask[*i]).collect();
            if cells.is_empty() {
                continue;
            }
            // the disc centroid maps back onto the box centre
            let n = cells.len() as f64;
            let cg = (
                cells.iter().map(|i| (i % g) as f64).sum::<f64>() / n,
                cells.iter().map(|i| (i / g) as f64).sum::<f64>() / n,
            );
            let (fx, fy) = grid_point_to_frame(cg, &ex.search_spec, 4);
            let (bx, by) = ex.search_box.center();
            let unit = 4.0 / ex.search_spec.scale();
            assert!(((fx - bx).powi(2) + (fy - by).powi(2)).sqrt() < unit);
            // every valid cell decodes to the true corners
            let s = ex.search_spec.scale() / 4.0;
            for &i in &cells {
                let o = [0, 1, 2, 3].map(|c| ex.offsets[c * g * g + i] as f64);
                let b = decode_offsets((i / g, i % g), o, &ex.search_spec, 4);
                for (a, e) in [
                    (b.x_min, ex.search_box.x_min),
                    (b.y_min, ex.search_box.y_min),
                    (b.x_max, ex.search_box.x_max),
                    (b.y_max, ex.search_box.y_max),
                ] {
                    assert!((a - e).abs() * s < 1e-4);
                }
                assert!(iou(&b, &ex.search_box) > 0.999);
            }
            checked += 1;
        }
        assert!(checked > 300);
    }

    #[test]
    fn photometric_identity_leaves_pixels_untouched() {
        let seqs = dataset(Split::Easy, 1);
        let mut img = seqs[0].frames[0].clone();
        let orig = img.clone();
        Photometric::IDENTITY.apply(&mut img);
        assert_eq!(img, orig);
        Photometric {
            contrast: 1.2,
            saturation: 0.8,
            hue: 0.1,
        }
        .apply(&mut img);
        assert_ne!(img, orig);
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn invisible_target_exhausts_retries() {
        let mut seqs = dataset(Split::Easy, 1);
        for a in seqs[0].annotations.iter_mut() {
            a.visible = false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = sample_training_example(&seqs[0], &SamplerConfig::default(), &CropGeometry::compact(), false, &mut rng);
        assert!(r.is_err());
    }
}
