//! Seeded synthetic video sequences with a single annotated target.
//!
//! Scenes are scripted: every object follows a closed-form trajectory
//! (linear motion reflected at the frame borders, multiplicative scale drift,
//! optional per-frame jitter and random-walk colour drift), so rendering is a
//! pure function of the script. Frames are quantised to 8 bits on creation,
//! which makes the PNG dataset format lossless.

mod io;
mod sampler;

pub use io::{read_annotations, read_dataset, write_dataset, Manifest, ManifestEntry};
pub use sampler::{
    build_training_example, full_frame_spec, sample_pair, sample_target_index, sample_training_example,
    Augmentation, SamplerConfig, TargetRule, TrainingExample,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;
use crate::seeds;

/// Fraction of its area a target must show to count as visible.
pub const MIN_VISIBLE_FRACTION: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Triangle,
}

impl ShapeKind {
    const ALL: [ShapeKind; 3] = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle];

    /// Whether normalised coordinates in `[-1, 1]^2` fall inside the shape.
    fn contains(self, nx: f64, ny: f64) -> bool {
        match self {
            ShapeKind::Ellipse => nx * nx + ny * ny <= 1.0,
            ShapeKind::Rectangle => nx.abs() <= 1.0 && ny.abs() <= 1.0,
            ShapeKind::Triangle => (-1.0..=1.0).contains(&ny) && nx.abs() <= (ny + 1.0) / 2.0,
        }
    }

    /// Area relative to the bounding box.
    fn fill(self) -> f64 {
        match self {
            ShapeKind::Ellipse => std::f64::consts::FRAC_PI_4,
            ShapeKind::Rectangle => 1.0,
            ShapeKind::Triangle => 0.5,
        }
    }
}

/// Base colour overlaid with sinusoidal stripes in object coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f32; 3],
    pub stripe: [f32; 3],
    /// Stripe cycles across the object.
    pub stripe_frequency: f64,
    pub stripe_phase: f64,
    pub stripe_angle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: ShapeKind,
    pub texture: Texture,
    /// Centre at frame 0, before reflection at the borders.
    pub center: (f64, f64),
    /// Width and height at frame 0.
    pub size: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Per-frame multiplicative size change.
    pub scale_drift: f64,
    /// Standard deviation of per-frame centre jitter, pixels.
    pub jitter_std: f64,
    /// Per-frame standard deviation of a random walk in hue and stripe
    /// phase, radians.
    pub appearance_drift: f64,
    /// Objects sharing the target's shape class but not its texture count as
    /// hard distractors.
    pub similarity_class: u32,
    pub is_target: bool,
    /// Reflect at the frame borders; otherwise objects may leave the frame.
    pub bounce: bool,
}

impl ObjectSpec {
    fn state(&self, t: usize, w: f64, h: f64) -> (f64, f64, f64, f64) {
        let s = self.scale_drift.powi(t as i32);
        let (ow, oh) = (self.size.0 * s, self.size.1 * s);
        let x = self.center.0 + self.velocity.0 * t as f64;
        let y = self.center.1 + self.velocity.1 * t as f64;
        if self.bounce {
            (reflect(x, ow / 2.0, w - ow / 2.0), reflect(y, oh / 2.0, h - oh / 2.0), ow, oh)
        } else {
            (x, y, ow, oh)
        }
    }
}

/// Triangle-wave reflection of `x` into `[lo, hi]`.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return (lo + hi) / 2.0;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m <= span { m } else { 2.0 * span - m }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f32; 3],
    /// Amplitude of the low-frequency sinusoidal pattern.
    pub amplitude: f32,
    pub frequency: (f64, f64),
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub seed: u64,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectSpec>,
    /// Rendered above all objects.
    pub occluders: Vec<ObjectSpec>,
    pub background: Background,
}

impl SceneScript {
    fn target(&self) -> Result<&ObjectSpec> {
        let mut it = self.objects.iter().filter(|o| o.is_target);
        match (it.next(), it.next()) {
            (Some(t), None) => Ok(t),
            _ => Err(Error::Config("scene must contain exactly one target object".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: usize,
    pub bbox: BBox,
    pub visible: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// One salient target, smooth motion.
    Easy,
    /// Same-shape distractors crossing the target path plus occluders.
    Hard,
    /// Slow motion with random-walk colour drift.
    Drift,
    /// No motion and constant appearance.
    Static,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Easy => "easy",
            Split::Hard => "hard",
            Split::Drift => "drift",
            Split::Static => "static",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Split::Easy),
            "hard" => Ok(Split::Hard),
            "drift" => Ok(Split::Drift),
            "static" => Ok(Split::Static),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub split: Option<Split>,
    pub frames: Vec<Image>,
    pub annotations: Vec<Annotation>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| (f.width, f.height))
    }
}

/// Rotation of RGB about the grey axis by `angle` radians.
pub(crate) fn hue_rotate(rgb: [f32; 3], angle: f64) -> [f32; 3] {
    let (s, c) = angle.sin_cos();
    let k = (1.0 - c) / 3.0;
    let q = (1.0f64 / 3.0).sqrt() * s;
    let m = [
        [c + k, k - q, k + q],
        [k + q, c + k, k - q],
        [k - q, k + q, c + k],
    ];
    let v = rgb.map(f64::from);
    let mut out = [0f32; 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]).clamp(0.0, 1.0) as f32;
    }
    out
}

struct Placed<'a> {
    spec: &'a ObjectSpec,
    cx: f64,
    cy: f64,
    hw: f64,
    hh: f64,
    drift: f64,
}

impl Placed<'_> {
    fn color(&self, nx: f64, ny: f64) -> [f32; 3] {
        let tex = &self.spec.texture;
        let drift = self.drift;
        let (sa, ca) = tex.stripe_angle.sin_cos();
        let u = nx * ca + ny * sa;
        let a = 0.5 + 0.5 * (std::f64::consts::PI * tex.stripe_frequency * u + tex.stripe_phase + drift).sin();
        let a = a as f32;
        let mut rgb = [0f32; 3];
        for c in 0..3 {
            rgb[c] = tex.base[c] * (1.0 - a) + tex.stripe[c] * a;
        }
        if drift != 0.0 {
            hue_rotate(rgb, drift)
        } else {
            rgb
        }
    }

    fn bbox(&self) -> BBox {
        BBox::new(self.cx - self.hw, self.cy - self.hh, self.cx + self.hw, self.cy + self.hh)
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        self.spec.shape.contains((x - self.cx) / self.hw, (y - self.cy) / self.hh)
    }

    /// Pixel index range touched by the object, clipped to the frame.
    fn pixel_range(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let b = self.bbox();
        let clampi = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
        (
            clampi(b.x_min.floor(), w),
            clampi(b.x_max.ceil(), w),
            clampi(b.y_min.floor(), h),
            clampi(b.y_max.ceil(), h),
        )
    }

    /// Composites the object with 2x2 supersampled coverage.
    fn draw(&self, img: &mut Image) {
        let (x0, x1, y0, y1) = self.pixel_range(img.width, img.height);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut acc = [0f32; 3];
                let mut hits = 0;
                for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    let (x, y) = (px as f64 + sx, py as f64 + sy);
                    if self.covers(x, y) {
                        let c = self.color((x - self.cx) / self.hw, (y - self.cy) / self.hh);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                        hits += 1;
                    }
                }
                if hits > 0 {
                    let cov = hits as f32 / 4.0;
                    let old = img.pixel(px, py);
                    let mut new = [0f32; 3];
                    for k in 0..3 {
                        new[k] = old[k] * (1.0 - cov) + acc[k] / 4.0;
                    }
                    img.set_pixel(px, py, new);
                }
            }
        }
    }
}

fn render_background(bg: &Background, w: usize, h: usize) -> Image {
    let mut img = Image::new(w, h);
    let tau = std::f64::consts::TAU;
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let p = (tau * (bg.frequency.0 * u + bg.phase)).sin() * (tau * bg.frequency.1 * v).cos();
            let g = 0.5 * (u + v) - 0.5;
            let d = bg.amplitude * p as f32 + 0.05 * g as f32;
            img.set_pixel(x, y, bg.base.map(|b| (b + d).clamp(0.0, 1.0)));
        }
    }
    img
}

/// Renders every frame of `script` and annotates the target.
pub fn render_sequence(script: &SceneScript) -> Result<Sequence> {
    let target = script.target()?;
    let (w, h) = (script.width as f64, script.height as f64);
    if script.width == 0 || script.height == 0 {
        return Err(Error::Config("frame size must be positive".into()));
    }
    let frame_box = BBox::new(0.0, 0.0, w, h);
    {
        let (cx, cy, ow, oh) = target.state(0, w, h);
        if BBox::from_center_size(cx, cy, ow, oh).intersection_area(&frame_box) <= 0.0 {
            return Err(Error::Config("target starts fully outside the frame".into()));
        }
    }
    let background = render_background(&script.background, script.width, script.height);
    let mut jitter_rng = seeds::stream(script.seed, 0x717e);
    let mut drift_rng = seeds::stream(script.seed, 0xd21f);
    let all: Vec<&ObjectSpec> = script
        .objects
        .iter()
        .filter(|o| !o.is_target)
        .chain(std::iter::once(target))
        .chain(script.occluders.iter())
        .collect();
    let n_objects = all.len();
    let mut drift = vec![0.0f64; n_objects];
    let mut frames = Vec::with_capacity(script.num_frames);
    let mut annotations = Vec::with_capacity(script.num_frames);
    for t in 0..script.num_frames {
        let mut img = background.clone();
        let mut placed = Vec::with_capacity(n_objects);
        for (i, spec) in all.iter().enumerate() {
            if t > 0 && spec.appearance_drift > 0.0 {
                let n = Normal::new(0.0, spec.appearance_drift).expect("positive std");
                drift[i] += n.sample(&mut drift_rng);
            }
            let (mut cx, mut cy, ow, oh) = spec.state(t, w, h);
            if spec.jitter_std > 0.0 {
                let n = Normal::new(0.0, spec.jitter_std).expect("positive std");
                cx += n.sample(&mut jitter_rng);
                cy += n.sample(&mut jitter_rng);
            }
            placed.push(Placed {
                spec,
                cx,
                cy,
                hw: ow / 2.0,
                hh: oh / 2.0,
                drift: drift[i],
            });
        }
        for p in &placed {
            p.draw(&mut img);
        }
        img.quantize();
        let target_idx = n_objects - 1 - script.occluders.len();
        let tp = &placed[target_idx];
        let occ = &placed[target_idx + 1..];
        let visible_fraction = visible_fraction(tp, occ, script.width, script.height);
        let bbox = tp.bbox().clip_to(&frame_box);
        annotations.push(Annotation {
            frame: t,
            bbox,
            visible: visible_fraction >= MIN_VISIBLE_FRACTION && bbox.area() > 0.0,
        });
        frames.push(img);
    }
    Ok(Sequence {
        id: format!("scene-{:016x}", script.seed),
        split: None,
        frames,
        annotations,
    })
}

fn visible_fraction(target: &Placed<'_>, occluders: &[Placed<'_>], w: usize, h: usize) -> f64 {
    let area = target.bbox().area() * target.spec.shape.fill();
    if area <= 0.0 {
        return 0.0;
    }
    let (x0, x1, y0, y1) = target.pixel_range(w, h);
    let mut seen = 0usize;
    for py in y0..y1 {
        for px in x0..x1 {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            if target.covers(x, y) && !occluders.iter().any(|o| o.covers(x, y)) {
                seen += 1;
            }
        }
    }
    seen as f64 / area
}

/// Size and motion ranges for generated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub num_frames: usize,
    /// Range of target width/height at frame 0, pixels.
    pub size_range: (f64, f64),
    /// Maximum speed, pixels per frame.
    pub max_speed: f64,
    pub jitter_std: f64,
    /// Maximum absolute per-frame log scale drift.
    pub max_scale_drift: f64,
    /// Per-frame random-walk step of hue and stripe phase in the drift
    /// split, radians.
    pub drift_rate: f64,
    /// Hard distractors per scene in the hard split.
    pub distractors: usize,
    /// Occluder passes per scene in the hard split.
    pub occluders: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            num_frames: 40,
            size_range: (18.0, 28.0),
            max_speed: 2.0,
            jitter_std: 0.3,
            max_scale_drift: 0.004,
            drift_rate: 0.5,
            distractors: 2,
            occluders: 1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        if self.width < 16 || self.height < 16 || self.num_frames == 0 {
            return Err(Error::Config("scene frames must be at least 16x16 and sequences nonempty".into()));
        }
        if !(lo > 0.0 && hi >= lo && hi < self.width.min(self.height) as f64 / 2.0) {
            return Err(Error::Config(format!("object size range {lo}..{hi} does not fit the frame")));
        }
        if self.max_speed < 0.0 || self.jitter_std < 0.0 || self.max_scale_drift < 0.0 {
            return Err(Error::Config("motion parameters must be non-negative".into()));
        }
        if !(self.drift_rate >= 0.0) {
            return Err(Error::Config("drift rate must be non-negative".into()));
        }
        Ok(())
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    let hue = rng.random_range(0.0..std::f64::consts::TAU);
    hue_rotate([0.85, 0.2, 0.15], hue).map(|v| (v * rng.random_range(0.8..1.1)).clamp(0.05, 0.95))
}

fn random_texture(rng: &mut ChaCha8Rng) -> Texture {
    let base = random_color(rng);
    let stripe = if rng.random_bool(0.5) {
        base.map(|v| (v * 0.45).clamp(0.0, 1.0))
    } else {
        random_color(rng)
    };
    Texture {
        base,
        stripe,
        stripe_frequency: rng.random_range(1.0..3.0),
        stripe_phase: rng.random_range(0.0..std::f64::consts::TAU),
        stripe_angle: rng.random_range(0.0..std::f64::consts::PI),
    }
}

fn random_velocity(rng: &mut ChaCha8Rng, max_speed: f64) -> (f64, f64) {
    let speed = rng.random_range(0.3 * max_speed..=max_speed.max(1e-9));
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    (speed * a.cos(), speed * a.sin())
}

/// Draws a scene script for `split`.
pub fn scene_script(split: Split, cfg: &SceneConfig, seed: u64) -> Result<SceneScript> {
    cfg.validate()?;
    let mut rng = seeds::stream(seed, 0x5ce0e);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let side = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
    let aspect = rng.random_range(0.75..1.33f64);
    let size = (side * aspect.sqrt(), side / aspect.sqrt());
    let shape = ShapeKind::ALL[rng.random_range(0..3)];
    let center = (
        rng.random_range(size.0..w - size.0),
        rng.random_range(size.1..h - size.1),
    );
    let max_speed = match split {
        Split::Static => 0.0,
        Split::Drift => cfg.max_speed * 0.5,
        _ => cfg.max_speed,
    };
    let mut target = ObjectSpec {
        shape,
        texture: random_texture(&mut rng),
        center,
        size,
        velocity: if max_speed > 0.0 {
            random_velocity(&mut rng, max_speed)
        } else {
            (0.0, 0.0)
        },
        scale_drift: 1.0,
        jitter_std: 0.0,
        appearance_drift: 0.0,
        similarity_class: 0,
        is_target: true,
        bounce: true,
    };
    if matches!(split, Split::Easy | Split::Hard | Split::Drift) {
        target.scale_drift = rng.random_range(-cfg.max_scale_drift..=cfg.max_scale_drift).exp();
        target.jitter_std = cfg.jitter_std;
    }
    if split == Split::Drift {
        target.appearance_drift = cfg.drift_rate;
    }
    let background = Background {
        base: [
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
        ],
        amplitude: rng.random_range(0.02..0.08),
        frequency: (rng.random_range(0.5..2.5), rng.random_range(0.5..2.5)),
        phase: rng.random_range(0.0..1.0),
    };
    let mut objects = Vec::new();
    let mut occluders = Vec::new();
    if split == Split::Hard {
        let n = cfg.num_frames as f64;
        for _ in 0..cfg.distractors {
            // cross the target's path at a scripted frame
            let tc = rng.random_range(0.2 * n..0.8 * n).floor() as usize;
            let (tx, ty, _, _) = target.state(tc, w, h);
            let v = random_velocity(&mut rng, cfg.max_speed.max(0.5));
            let mut tex = random_texture(&mut rng);
            while color_distance(tex.base, target.texture.base) < 0.35 {
                tex = random_texture(&mut rng);
            }
            objects.push(ObjectSpec {
                shape,
                texture: tex,
                center: (tx - v.0 * tc as f64, ty - v.1 * tc as f64),
                size,
                velocity: v,
                scale_drift: 1.0,
                jitter_std: 0.0,
                appearance_drift: 0.0,
                similarity_class: 0,
                is_target: false,
                bounce: true,
            });
        }
        for _ in 0..cfg.occluders {
            let tc = rng.random_range(0.3 * n..0.9 * n).floor() as usize;
            let (tx, ty, _, _) = target.state(tc, w, h);
            let speed = rng.random_range(3.0..5.0);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let v = (speed * a.cos(), speed * a.sin());
            let grey = rng.random_range(0.2..0.8) as f32;
            occluders.push(ObjectSpec {
                shape: ShapeKind::Rectangle,
                texture: Texture {
                    base: [grey; 3],
                    stripe: [grey; 3],
                    stripe_frequency: 0.0,
                    stripe_phase: 0.0,
                    stripe_angle: 0.0,
                },
                center: (tx - v.0 * tc as f64, ty - v.1 * tc as f64),
                size: (side * 0.6, side * 1.6),
                velocity: v,
                scale_drift: 1.0,
                jitter_std: 0.0,
                appearance_drift: 0.0,
                similarity_class: 1,
                is_target: false,
                bounce: false,
            });
        }
    }
    objects.push(target);
    Ok(SceneScript {
        seed,
        num_frames: cfg.num_frames,
        width: cfg.width,
        height: cfg.height,
        objects,
        occluders,
        background,
    })
}

fn color_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f32>().sqrt()
}

/// Number of sequences to draw per split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCount {
    pub split: Split,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    pub splits: Vec<SplitCount>,
}

/// Generates every sequence of `cfg`; sequence `i` of a split uses seed
/// `mix(mix(seed, split), i)`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Vec<Sequence>> {
    use rayon::prelude::*;
    cfg.scene.validate()?;
    let jobs: Vec<(Split, usize)> = cfg
        .splits
        .iter()
        .flat_map(|s| (0..s.count).map(move |i| (s.split, i)))
        .collect();
    jobs.par_iter()
        .map(|&(split, i)| {
            let seq_seed = seeds::mix(seeds::mix(seed, split as u64 + 1), i as u64);
            let mut seq = render_sequence(&scene_script(split, &cfg.scene, seq_seed)?)?;
            seq.id = format!("{}-{i:04}", split.name());
            seq.split = Some(split);
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_object(velocity: (f64, f64)) -> SceneScript {
        let cfg = SceneConfig::default();
        let mut s = scene_script(Split::Static, &cfg, 3).unwrap();
        s.num_frames = 10;
        s.objects[0].velocity = velocity;
        s.objects[0].center = (60.0, 80.0);
        s
    }

    #[test]
    fn static_object_has_constant_annotation() {
        let seq = render_sequence(&single_object((0.0, 0.0))).unwrap();
        assert!(seq.annotations.iter().all(|a| a.bbox == seq.annotations[0].bbox && a.visible));
        assert!(seq.frames.windows(2).all(|f| f[0] == f[1]));
    }

    #[test]
    fn drift_changes_colour_but_not_geometry() {
        let still = render_sequence(&single_object((0.0, 0.0))).unwrap();
        let mut s = single_object((0.0, 0.0));
        s.objects[0].appearance_drift = 0.3;
        let seq = render_sequence(&s).unwrap();
        assert_eq!(seq.frames[0], still.frames[0]);
        assert_eq!(seq.annotations, still.annotations);
        assert!(seq.frames.windows(2).all(|f| f[0] != f[1]));
    }

    #[test]
    fn kinematics_advance_two_pixels_per_frame() {
        let seq = render_sequence(&single_object((2.0, 0.0))).unwrap();
        for (t, a) in seq.annotations.iter().enumerate() {
            let (cx, cy) = a.bbox.center();
            assert!((cx - (60.0 + 2.0 * t as f64)).abs() < 1e-9);
            assert!((cy - 80.0).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_gives_identical_frames() {
        for split in [Split::Easy, Split::Hard, Split::Drift] {
            let s = scene_script(split, &SceneConfig::default(), 11).unwrap();
            let a = render_sequence(&s).unwrap();
            let b = render_sequence(&scene_script(split, &SceneConfig::default(), 11).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn target_off_frame_at_start_is_rejected() {
        let mut s = single_object((0.0, 0.0));
        s.objects[0].bounce = false;
        s.objects[0].center = (-100.0, 50.0);
        assert!(render_sequence(&s).is_err());
    }

    #[test]
    fn exactly_one_target_required() {
        let mut s = single_object((0.0, 0.0));
        s.objects.push(s.objects[0].clone());
        assert!(render_sequence(&s).is_err());
    }

    #[test]
    fn reflection_stays_in_range() {
        for i in -500..500 {
            let v = reflect(i as f64 * 0.37, 10.0, 30.0);
            assert!((10.0..=30.0).contains(&v));
        }
        assert_eq!(reflect(32.0, 10.0, 30.0), 28.0);
        assert_eq!(reflect(8.0, 10.0, 30.0), 12.0);
    }

    #[test]
    fn hard_scenes_have_same_shape_distractors() {
        let s = scene_script(Split::Hard, &SceneConfig::default(), 5).unwrap();
        let target = s.target().unwrap();
        let distractors: Vec<_> = s.objects.iter().filter(|o| !o.is_target).collect();
        assert_eq!(distractors.len(), 2);
        for d in distractors {
            assert_eq!(d.shape, target.shape);
            assert_eq!(d.size, target.size);
            assert_ne!(d.texture, target.texture);
        }
        assert_eq!(s.occluders.len(), 1);
    }

    #[test]
    fn generated_targets_are_mostly_visible() {
        let cfg = DatasetConfig {
            scene: SceneConfig::default(),
            splits: vec![
                SplitCount { split: Split::Easy, count: 6 },
                SplitCount { split: Split::Hard, count: 6 },
            ],
        };
        for seq in generate_dataset(&cfg, 1).unwrap() {
            let (w, h) = seq.frame_size();
            let visible = seq.annotations.iter().filter(|a| a.visible).count();
            assert!(visible as f64 >= 0.9 * seq.len() as f64 * if seq.split == Some(Split::Hard) { 0.8 } else { 1.0 });
            for a in seq.annotations.iter().filter(|a| a.visible) {
                assert!(a.bbox.x_min >= 0.0 && a.bbox.y_min >= 0.0);
                assert!(a.bbox.x_max <= w as f64 && a.bbox.y_max <= h as f64);
            }
        }
    }

    #[test]
    fn hue_rotation_by_full_turn_is_identity() {
        let c = [0.2f32, 0.5, 0.7];
        let r = hue_rotate(c, std::f64::consts::TAU);
        for k in 0..3 {
            assert!((r[k] - c[k]).abs() < 1e-6);
        }
        let g = hue_rotate([0.4; 3], 1.0);
        assert!(g.iter().all(|v| (v - 0.4).abs() < 1e-6));
    }
}
