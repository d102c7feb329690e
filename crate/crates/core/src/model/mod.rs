//! The Siamese tracker/detector network.
//!
//! A shared convolutional backbone (total stride 4) followed by a linear 1x1
//! projection encodes the target crop, the search crop and, for the
//! auxiliary task, the resized full frame. Target features act as depthwise
//! kernels on the search (or detector) features; a single 1x1 convolution
//! then maps the joined map to the outputs. There is no way to
//! insert further trainable layers between the join and the heads.

pub mod checkpoint;
pub mod loss;
pub mod targets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{self, relu_backward_inplace, relu_inplace, Conv2d, ConvCache, Scalar, Tensor};

pub use loss::{joint_loss, tracker_loss, LossTerms, LossWeights};
pub use targets::{decode_offsets, encode_offsets, heatmap_disc, OffsetTarget};

/// Stride of every backbone stage; the product is the network's total stride.
pub const STAGE_STRIDES: [usize; 5] = [2, 2, 1, 1, 1];
/// Total stride between input pixels and output cells.
pub const TOTAL_STRIDE: usize = 4;
/// Channels of the tracker output: positive logit, negative logit and the
/// four corner offsets `(tl_dx, tl_dy, br_dx, br_dy)`.
pub const TRACKER_CHANNELS: usize = 6;
/// Channels of the detector output (heatmap only).
pub const DETECTOR_CHANNELS: usize = 2;

/// Backbone layout and initialisation seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    /// Output channels of the first four 3x3 stages.
    pub stage_widths: [usize; 4],
    /// Output channels of the fifth stage.
    pub feature_channels: usize,
    /// Channels after the trainable 1x1 projection.
    pub projection_channels: usize,
    pub init_seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_widths: [8, 16, 32, 32],
            feature_channels: 32,
            projection_channels: 32,
            init_seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) || self.feature_channels == 0 || self.projection_channels == 0 {
            return Err(Error::Config("backbone channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Spatial side of the feature map for an input of side `input`.
    pub fn output_side(&self, input: usize) -> Result<usize> {
        if input == 0 || !(input.is_multiple_of(TOTAL_STRIDE) || input == 127 || input == 255) {
            return Err(Error::Shape(format!(
                "input side {input} must be a multiple of {TOTAL_STRIDE} (or 127/255)"
            )));
        }
        Ok(input.div_ceil(TOTAL_STRIDE))
    }
}

/// Which branch produced a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Target,
    Search,
    Detector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub tensor: Tensor<T>,
    pub branch: Branch,
}

/// Raw tracker output over the `g x g` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerOutput {
    /// Channel 0 is the positive (object centre) logit, channel 1 the negative.
    pub heat_logits: Tensor<f32>,
    /// Corner offsets in grid units, channels `(tl_dx, tl_dy, br_dx, br_dy)`.
    pub offsets: Tensor<f32>,
}

impl TrackerOutput {
    pub fn grid(&self) -> usize {
        self.heat_logits.height
    }

    /// Two-class softmax probability of the positive channel per cell.
    pub fn positive_probability(&self) -> Vec<f32> {
        positive_probability(&self.heat_logits)
    }

    pub fn from_raw<T: Scalar>(raw: &Tensor<T>) -> Self {
        let n = raw.plane_len();
        let raw = raw.cast::<f32>();
        Self {
            heat_logits: Tensor::from_vec(2, raw.height, raw.width, raw.data[..2 * n].to_vec()),
            offsets: Tensor::from_vec(4, raw.height, raw.width, raw.data[2 * n..6 * n].to_vec()),
        }
    }
}

pub fn positive_probability(logits: &Tensor<f32>) -> Vec<f32> {
    let (pos, neg) = (logits.plane(0), logits.plane(1));
    pos.iter()
        .zip(neg)
        .map(|(a, b)| 1.0 / (1.0 + (b - a).exp()))
        .collect()
}

/// Network parameters. Gradients and optimiser moments reuse this type.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    pub config: BackboneConfig,
    pub backbone: Vec<Conv2d<T>>,
    pub projection: Conv2d<T>,
    pub tracker_head: Conv2d<T>,
    pub detector_head: Conv2d<T>,
}

/// Per-layer activations kept for backpropagation through the encoder.
pub struct EncodeCache<T> {
    stages: Vec<(ConvCache<T>, Tensor<T>)>,
    projection: ConvCache<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let widths = stage_widths(config);
        let mut backbone = Vec::with_capacity(widths.len());
        let mut cin = 3;
        for (w, s) in widths.iter().zip(STAGE_STRIDES) {
            backbone.push(Conv2d::init(cin, *w, 3, s, 1.0, &mut rng));
            cin = *w;
        }
        let projection = Conv2d::init(cin, config.projection_channels, 1, 1, 0.5, &mut rng);
        let mut tracker_head = Conv2d::init(config.projection_channels, TRACKER_CHANNELS, 1, 1, 0.01, &mut rng);
        // the detector head draws from its own stream so that tracker
        // parameters do not depend on whether the detector exists
        let mut det_rng = ChaCha8Rng::seed_from_u64(config.init_seed ^ 0x5eed_de7e_c70e_0001);
        let mut detector_head =
            Conv2d::init(config.projection_channels, DETECTOR_CHANNELS, 1, 1, 0.01, &mut det_rng);
        // start the centre class near its base rate
        tracker_head.bias[0] = T::lit(-2.0);
        detector_head.bias[0] = T::lit(-2.0);
        Ok(Self {
            config: config.clone(),
            backbone,
            projection,
            tracker_head,
            detector_head,
        })
    }

    /// All-zero parameters with this network's shapes.
    pub fn zeros_like(&self) -> Self {
        let z = |c: &Conv2d<T>| Conv2d::zeros(c.in_channels, c.out_channels, c.kernel, c.stride);
        Self {
            config: self.config.clone(),
            backbone: self.backbone.iter().map(z).collect(),
            projection: z(&self.projection),
            tracker_head: z(&self.tracker_head),
            detector_head: z(&self.detector_head),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let c = |conv: &Conv2d<T>| Conv2d {
            in_channels: conv.in_channels,
            out_channels: conv.out_channels,
            kernel: conv.kernel,
            stride: conv.stride,
            weight: conv.weight.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
            bias: conv.bias.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        };
        Network {
            config: self.config.clone(),
            backbone: self.backbone.iter().map(c).collect(),
            projection: c(&self.projection),
            tracker_head: c(&self.tracker_head),
            detector_head: c(&self.detector_head),
        }
    }

    fn convs(&self) -> Vec<(String, &Conv2d<T>)> {
        let mut out: Vec<(String, &Conv2d<T>)> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("backbone.{i}"), c))
            .collect();
        out.push(("projection".into(), &self.projection));
        out.push(("tracker_head".into(), &self.tracker_head));
        out.push(("detector_head".into(), &self.detector_head));
        out
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut Conv2d<T>)> {
        let mut out: Vec<(String, &mut Conv2d<T>)> = self
            .backbone
            .iter_mut()
            .enumerate()
            .map(|(i, c)| (format!("backbone.{i}"), c))
            .collect();
        out.push(("projection".into(), &mut self.projection));
        out.push(("tracker_head".into(), &mut self.tracker_head));
        out.push(("detector_head".into(), &mut self.detector_head));
        out
    }

    /// Parameter tensors under their canonical names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for (name, c) in self.convs() {
            out.push((
                format!("{name}.weight"),
                vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                c.weight.as_slice(),
            ));
            out.push((format!("{name}.bias"), vec![c.out_channels], c.bias.as_slice()));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (name, c) in self.convs_mut() {
            out.push((format!("{name}.weight"), &mut c.weight));
            out.push((format!("{name}.bias"), &mut c.bias));
        }
        out
    }

    /// Whether a canonical tensor name belongs to the detector branch.
    pub fn is_detector_tensor(name: &str) -> bool {
        name.starts_with("detector_head.")
    }

    /// Coarse parameter group of a canonical tensor name.
    pub fn group_of(name: &str) -> &'static str {
        if name.starts_with("backbone.") {
            "backbone"
        } else if name.starts_with("projection.") {
            "projection"
        } else if name.starts_with("tracker_head.") {
            "tracker_head"
        } else {
            "detector_head"
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn encode_tensor(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode_with_cache(input)?.0)
    }

    /// Encodes an image through the shared backbone and projection.
    pub fn encode(&self, image: &Image, branch: Branch) -> Result<FeatureMap<T>> {
        let t = image_tensor::<T>(image);
        Ok(FeatureMap {
            tensor: self.encode_tensor(&t)?,
            branch,
        })
    }

    pub fn encode_with_cache(&self, input: &Tensor<T>) -> Result<(Tensor<T>, EncodeCache<T>)> {
        if input.channels != 3 {
            return Err(Error::Shape(format!("expected 3 input channels, got {}", input.channels)));
        }
        if input.height != input.width {
            return Err(Error::Shape(format!(
                "expected a square input, got {}x{}",
                input.width, input.height
            )));
        }
        self.config.output_side(input.height)?;
        let mut stages = Vec::with_capacity(self.backbone.len());
        let mut h = input.clone();
        for conv in &self.backbone {
            let (mut y, cache) = conv.forward(&h);
            relu_inplace(&mut y);
            stages.push((cache, y.clone()));
            h = y;
        }
        let (z, projection) = self.projection.forward(&h);
        Ok((z, EncodeCache { stages, projection }))
    }

    /// Backpropagates `grad_z` through projection and backbone.
    pub fn encode_backward(&self, cache: &EncodeCache<T>, grad_z: &Tensor<T>, grads: &mut Network<T>) {
        let mut g = self
            .projection
            .backward(&cache.projection, grad_z, &mut grads.projection, true)
            .expect("input gradient requested");
        for (i, conv) in self.backbone.iter().enumerate().rev() {
            let (cc, activated) = &cache.stages[i];
            relu_backward_inplace(activated, &mut g);
            match conv.backward(cc, &g, &mut grads.backbone[i], i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
    }

    /// Single 1x1 convolution from the joined map to six output channels.
    pub fn tracker_head(&self, joined: &FeatureMap<T>) -> TrackerOutput {
        TrackerOutput::from_raw(&self.tracker_head.forward(&joined.tensor).0)
    }

    /// Joins target and full-frame features and projects to heatmap logits.
    pub fn detector_head(&self, z_t: &FeatureMap<T>, z_d: &FeatureMap<T>) -> Result<Tensor<T>> {
        let joined = cross_convolve(z_t, z_d)?;
        Ok(self.detector_head.forward(&joined.tensor).0)
    }

    /// Runs the tracker on a search crop given precomputed target features.
    pub fn track(&self, z_t: &FeatureMap<T>, search: &Image) -> Result<TrackerOutput> {
        let z_s = self.encode(search, Branch::Search)?;
        Ok(self.tracker_head(&cross_convolve(z_t, &z_s)?))
    }

    /// Forward and backward pass for one training example.
    ///
    /// Gradients of the weighted joint loss are accumulated into `grads`,
    /// scaled by `grad_scale`. The detector branch is only evaluated when
    /// `inputs.detector` and `targets.detector_heat` are both present.
    pub fn loss_and_grad(
        &self,
        inputs: &NetworkInputs<T>,
        targets: &loss::Targets<'_>,
        weights: &LossWeights,
        grads: &mut Network<T>,
        grad_scale: f64,
    ) -> Result<LossTerms> {
        let (z_t, cache_t) = self.encode_with_cache(&inputs.target)?;
        let (z_s, cache_s) = self.encode_with_cache(&inputs.search)?;
        check_join(&z_t, &z_s)?;
        let joined = nn::xcorr_forward(&z_t, &z_s);
        let (raw, head_cache) = self.tracker_head.forward(&joined);
        let scale = T::lit(grad_scale);
        let mut g_raw = Tensor::zeros(raw.channels, raw.height, raw.width);
        let mut terms = loss::tracker_loss_raw(&raw, targets, weights, Some((&mut g_raw, scale)))?;
        let g_joined = self
            .tracker_head
            .backward(&head_cache, &g_raw, &mut grads.tracker_head, true)
            .expect("input gradient requested");
        let (mut g_zt, g_zs) = nn::xcorr_backward(&z_t, &z_s, &g_joined);
        self.encode_backward(&cache_s, &g_zs, grads);

        if let (Some(det), Some(det_heat)) = (&inputs.detector, targets.detector_heat) {
            let (z_d, cache_d) = self.encode_with_cache(det)?;
            check_join(&z_t, &z_d)?;
            let joined_d = nn::xcorr_forward(&z_t, &z_d);
            let (raw_d, det_cache) = self.detector_head.forward(&joined_d);
            let mut g_d = Tensor::zeros(raw_d.channels, raw_d.height, raw_d.width);
            let w = T::lit(weights.detector) * scale;
            let det_loss = loss::heatmap_cross_entropy(&raw_d, det_heat, Some((&mut g_d, w)))?;
            terms = joint_loss(&terms, det_loss.to_f64().unwrap(), weights);
            let g_jd = self
                .detector_head
                .backward(&det_cache, &g_d, &mut grads.detector_head, true)
                .expect("input gradient requested");
            let (g_zt_d, g_zd) = nn::xcorr_backward(&z_t, &z_d, &g_jd);
            for (a, b) in g_zt.data.iter_mut().zip(&g_zt_d.data) {
                *a += *b;
            }
            self.encode_backward(&cache_d, &g_zd, grads);
        }
        self.encode_backward(&cache_t, &g_zt, grads);
        Ok(terms)
    }

    /// Loss only, with the same branch selection rules as [`Self::loss_and_grad`].
    pub fn loss(&self, inputs: &NetworkInputs<T>, targets: &loss::Targets<'_>, weights: &LossWeights) -> Result<LossTerms> {
        let z_t = self.encode_tensor(&inputs.target)?;
        let z_s = self.encode_tensor(&inputs.search)?;
        check_join(&z_t, &z_s)?;
        let raw = self.tracker_head.forward(&nn::xcorr_forward(&z_t, &z_s)).0;
        let mut terms = loss::tracker_loss_raw(&raw, targets, weights, None)?;
        if let (Some(det), Some(det_heat)) = (&inputs.detector, targets.detector_heat) {
            let z_d = self.encode_tensor(det)?;
            check_join(&z_t, &z_d)?;
            let raw_d = self.detector_head.forward(&nn::xcorr_forward(&z_t, &z_d)).0;
            let det_loss = loss::heatmap_cross_entropy(&raw_d, det_heat, None)?;
            terms = joint_loss(&terms, det_loss.to_f64().unwrap(), weights);
        }
        Ok(terms)
    }
}

/// Network input tensors for one example.
#[derive(Clone, Debug)]
pub struct NetworkInputs<T> {
    pub target: Tensor<T>,
    pub search: Tensor<T>,
    pub detector: Option<Tensor<T>>,
}

fn stage_widths(config: &BackboneConfig) -> [usize; 5] {
    let w = config.stage_widths;
    [w[0], w[1], w[2], w[3], config.feature_channels]
}

pub fn image_tensor<T: Scalar>(image: &Image) -> Tensor<T> {
    let planar = image.to_planar();
    Tensor::from_vec(
        3,
        image.height,
        image.width,
        planar.into_iter().map(|v| T::from_f32(v).unwrap()).collect(),
    )
}

fn check_join<T: Scalar>(z_t: &Tensor<T>, z_s: &Tensor<T>) -> Result<()> {
    if z_t.channels != z_s.channels {
        return Err(Error::Shape(format!(
            "cross-convolution channel mismatch: {} vs {}",
            z_t.channels, z_s.channels
        )));
    }
    if z_t.height > z_s.height || z_t.width > z_s.width {
        return Err(Error::Shape(format!(
            "target map {}x{} larger than search map {}x{}",
            z_t.height, z_t.width, z_s.height, z_s.width
        )));
    }
    Ok(())
}

/// Per-channel "same"-padded correlation of `z_s` with `z_t` as kernels.
pub fn cross_convolve<T: Scalar>(z_t: &FeatureMap<T>, z_s: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    check_join(&z_t.tensor, &z_s.tensor)?;
    Ok(FeatureMap {
        tensor: nn::xcorr_forward(&z_t.tensor, &z_s.tensor),
        branch: z_s.branch,
    })
}
