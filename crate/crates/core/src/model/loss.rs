//! Heatmap cross-entropy, masked L1 offset regression and their weighted sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

use super::TrackerOutput;

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub heatmap: f64,
    pub offset: f64,
    pub detector: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            offset: 0.3,
            detector: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.heatmap, self.offset, self.detector]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Unweighted loss terms plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub heat: f64,
    pub offset: f64,
    pub detector: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.heat.is_finite() && self.offset.is_finite() && self.detector.is_finite() && self.total.is_finite()
    }
}

/// Supervision for one example, all grids `g x g` row-major.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub heat: &'a [f32],
    /// Four planes `(tl_dx, tl_dy, br_dx, br_dy)`, grid units.
    pub offsets: &'a [f32],
    pub mask: &'a [bool],
    pub detector_heat: Option<&'a [f32]>,
}

/// Mean two-class cross-entropy of channels 0 (positive) and 1 (negative)
/// against a binary target. When `grad` is given, `scale * dL/dlogits` is
/// added to its first two channels.
pub fn heatmap_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: &[f32],
    grad: Option<(&mut Tensor<T>, T)>,
) -> Result<T> {
    let n = logits.plane_len();
    if logits.channels < 2 || target.len() != n {
        return Err(Error::Shape(format!(
            "heatmap target has {} cells, logits {}x{}x{}",
            target.len(),
            logits.channels,
            logits.height,
            logits.width
        )));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let (pos, neg) = (logits.plane(0), logits.plane(1));
    let mut total = T::zero();
    let mut grad = grad;
    for i in 0..n {
        let (a, b) = (pos[i], neg[i]);
        let y = T::from_f32(target[i]).unwrap();
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        total += lse - (y * a + (T::one() - y) * b);
        if let Some((g, s)) = grad.as_mut() {
            let p_pos = (a - lse).exp();
            let p_neg = (b - lse).exp();
            g.data[i] += *s * (p_pos - y) * inv_n;
            g.data[n + i] += *s * (p_neg - (T::one() - y)) * inv_n;
        }
    }
    Ok(total * inv_n)
}

/// Mean absolute error over the masked cells of the four offset channels
/// stored at channels `2..6` of `raw`. An empty mask contributes zero.
pub fn offset_l1<T: Scalar>(
    raw: &Tensor<T>,
    target: &[f32],
    mask: &[bool],
    grad: Option<(&mut Tensor<T>, T)>,
) -> Result<T> {
    let n = raw.plane_len();
    if raw.channels < 6 || target.len() != 4 * n || mask.len() != n {
        return Err(Error::Shape("offset target/mask do not match the output grid".into()));
    }
    let valid = mask.iter().filter(|m| **m).count() * 4;
    if valid == 0 {
        return Ok(T::zero());
    }
    let inv = T::one() / T::from_usize(valid).unwrap();
    let mut total = T::zero();
    let mut grad = grad;
    for ch in 0..4 {
        let pred = raw.plane(2 + ch);
        for i in (0..n).filter(|i| mask[*i]) {
            let d = pred[i] - T::from_f32(target[ch * n + i]).unwrap();
            total += d.abs();
            if let Some((g, s)) = grad.as_mut() {
                let sign = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                g.data[(2 + ch) * n + i] += *s * sign * inv;
            }
        }
    }
    Ok(total * inv)
}

/// Tracker loss on the raw six-channel head output.
pub(crate) fn tracker_loss_raw<T: Scalar>(
    raw: &Tensor<T>,
    targets: &Targets<'_>,
    weights: &LossWeights,
    grad: Option<(&mut Tensor<T>, T)>,
) -> Result<LossTerms> {
    let (heat, offset) = match grad {
        Some((g, s)) => {
            let h = heatmap_cross_entropy(raw, targets.heat, Some((&mut *g, s * T::lit(weights.heatmap))))?;
            let o = offset_l1(raw, targets.offsets, targets.mask, Some((g, s * T::lit(weights.offset))))?;
            (h, o)
        }
        None => (
            heatmap_cross_entropy(raw, targets.heat, None)?,
            offset_l1(raw, targets.offsets, targets.mask, None)?,
        ),
    };
    let (heat, offset) = (heat.to_f64().unwrap(), offset.to_f64().unwrap());
    Ok(LossTerms {
        heat,
        offset,
        detector: 0.0,
        total: weights.heatmap * heat + weights.offset * offset,
    })
}

/// `w_heatmap * heat + w_offset * offset` for a decoded tracker output.
pub fn tracker_loss(
    out: &TrackerOutput,
    heat_target: &[f32],
    offset_target: &[f32],
    mask: &[bool],
    weights: &LossWeights,
) -> Result<LossTerms> {
    let g = out.grid();
    let mut raw = Tensor::<f32>::zeros(6, g, out.heat_logits.width);
    let n = raw.plane_len();
    raw.data[..2 * n].copy_from_slice(&out.heat_logits.data);
    raw.data[2 * n..].copy_from_slice(&out.offsets.data);
    let targets = Targets {
        heat: heat_target,
        offsets: offset_target,
        mask,
        detector_heat: None,
    };
    tracker_loss_raw(&raw, &targets, weights, None)
}

/// Adds the weighted detector cross-entropy to the tracker terms.
pub fn joint_loss(tracker: &LossTerms, detector_heat: f64, weights: &LossWeights) -> LossTerms {
    LossTerms {
        detector: detector_heat,
        total: tracker.total + weights.detector * detector_heat,
        ..*tracker
    }
}
