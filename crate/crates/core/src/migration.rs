//! Virtual radial point migration: TP/FP/FN partition under a proposal and
//! the coarse, misclassification-correction, sector-cohesion,
//! classification and confidence losses, each with its analytic gradient.
//!
//! Radii and sectors come from a [`CenteredFrame`] built around the
//! proposal center. The frame and the proposal rays are constants inside
//! the fine losses: gradients flow only into the per-point deltas.

use serde::{Deserialize, Serialize};

use crate::assembly::{mask_iou, BinaryMask};
use crate::error::{Error, Result};
use crate::geometry::CenteredFrame;
use crate::radial::RadialPolygon;

/// A scalar loss and its gradient. The gradient layout is documented on
/// each function returning one.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValue {
    pub fn zero(params: usize) -> Self {
        Self { value: 0.0, grad: vec![0.0; params] }
    }
}

/// Per-point radial offsets for one proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MigrationField(Vec<f64>);

impl MigrationField {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("migration deltas must be finite"));
        }
        Ok(Self(deltas))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Label sign used by the misclassification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginSign {
    /// `+1` for false negatives, `-1` for false positives: descent pulls
    /// false negatives inside the ray and pushes false positives out.
    #[default]
    Corrective,
    /// `+1` for false positives, `-1` for false negatives.
    Printed,
}

impl MarginSign {
    fn label(self, false_negative: bool) -> f64 {
        match (self, false_negative) {
            (MarginSign::Corrective, true) | (MarginSign::Printed, false) => 1.0,
            _ => -1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPartition {
    pub tp_indices: Vec<usize>,
    pub fp_indices: Vec<usize>,
    pub fn_indices: Vec<usize>,
    pub tn_indices: Vec<usize>,
}

/// Splits points by ground-truth membership and by whether the migrated
/// radius `r + delta` lies within (`<=`) the ray of the point's sector.
pub fn classify_points(
    frame: &CenteredFrame,
    deltas: &[f64],
    rays: &[f64],
    foreground: &[bool],
) -> Result<PointPartition> {
    let n = frame.len();
    Error::check_len("deltas", n, deltas.len())?;
    Error::check_len("foreground flags", n, foreground.len())?;
    if let Some(&k) = frame.sectors.iter().find(|&&k| k >= rays.len()) {
        return Err(Error::invalid(format!("sector {k} outside {} rays", rays.len())));
    }
    let mut part = PointPartition::default();
    for i in 0..n {
        let inside = frame.radii[i] + deltas[i] <= rays[frame.sectors[i]];
        match (foreground[i], inside) {
            (true, true) => part.tp_indices.push(i),
            (true, false) => part.fn_indices.push(i),
            (false, true) => part.fp_indices.push(i),
            (false, false) => part.tn_indices.push(i),
        }
    }
    Ok(part)
}

/// L1 ray loss (mean over sectors) plus L1 center loss.
///
/// Gradient layout: one entry per ray of `pred`, then the x, y, z entries
/// of its center. The subgradient at a zero difference is 0.
pub fn coarse_loss(pred: &RadialPolygon, target: &RadialPolygon) -> Result<LossValue> {
    if pred.grid != target.grid {
        return Err(Error::GridMismatch { left: pred.grid.to_string(), right: target.grid.to_string() });
    }
    Error::check_len("predicted rays", pred.grid.sector_count(), pred.rays.len())?;
    Error::check_len("target rays", target.grid.sector_count(), target.rays.len())?;
    let s = pred.rays.len() as f64;
    let mut grad = Vec::with_capacity(pred.rays.len() + 3);
    let mut ray_loss = 0.0;
    for (p, t) in pred.rays.iter().zip(&target.rays) {
        let d = p - t;
        ray_loss += d.abs();
        grad.push(l1_sign(d) / s);
    }
    ray_loss /= s;
    let mut center_loss = 0.0;
    for (p, t) in pred.center.to_array().iter().zip(target.center.to_array()) {
        let d = p - t;
        center_loss += d.abs();
        grad.push(l1_sign(d));
    }
    Ok(LossValue { value: ray_loss + center_loss, grad })
}

fn l1_sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `softplus(y * tanh(u))` and its derivative with respect to `u`.
fn soft_margin(y: f64, u: f64) -> (f64, f64) {
    let t = u.tanh();
    (softplus(y * t), sigmoid(y * t) * y * (1.0 - t * t))
}

/// Mean over false positives and false negatives of
/// `log(1 + exp(y * tanh(r + delta - ray)))`.
///
/// Gradient layout: one entry per point (w.r.t. its delta); zero outside
/// the misclassified set. Returns 0 when nothing is misclassified.
pub fn misclassification_loss(
    partition: &PointPartition,
    frame: &CenteredFrame,
    deltas: &[f64],
    rays: &[f64],
    sign: MarginSign,
) -> Result<LossValue> {
    Error::check_len("deltas", frame.len(), deltas.len())?;
    let mut out = LossValue::zero(deltas.len());
    let miss = partition.fn_indices.len() + partition.fp_indices.len();
    if miss == 0 {
        return Ok(out);
    }
    let inv = 1.0 / miss as f64;
    let groups = [(&partition.fn_indices, true), (&partition.fp_indices, false)];
    for (indices, is_fn) in groups {
        let y = sign.label(is_fn);
        for &i in indices {
            let ray = *rays
                .get(frame.sectors[i])
                .ok_or_else(|| Error::invalid("sector index outside rays"))?;
            let (v, dv) = soft_margin(y, frame.radii[i] + deltas[i] - ray);
            out.value += v * inv;
            out.grad[i] += dv * inv;
        }
    }
    Ok(out)
}

/// Mean over true positives of `log(1 + exp(tanh(delta + r)))`, which pulls
/// true positives towards the center. Gradient layout as for
/// [`misclassification_loss`].
pub fn sector_cohesion_loss(
    partition: &PointPartition,
    frame: &CenteredFrame,
    deltas: &[f64],
) -> Result<LossValue> {
    Error::check_len("deltas", frame.len(), deltas.len())?;
    let mut out = LossValue::zero(deltas.len());
    if partition.tp_indices.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / partition.tp_indices.len() as f64;
    for &i in &partition.tp_indices {
        let (v, dv) = soft_margin(1.0, deltas[i] + frame.radii[i]);
        out.value += v * inv;
        out.grad[i] += dv * inv;
    }
    Ok(out)
}

/// Which fine-loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTerms {
    pub misclassification: bool,
    pub cohesion: bool,
}

impl Default for FineTerms {
    fn default() -> Self {
        Self { misclassification: true, cohesion: true }
    }
}

/// Sum of the misclassification and cohesion losses (those enabled in `terms`).
pub fn fine_loss(
    partition: &PointPartition,
    frame: &CenteredFrame,
    deltas: &[f64],
    rays: &[f64],
    sign: MarginSign,
    terms: FineTerms,
) -> Result<LossValue> {
    let mut out = LossValue::zero(deltas.len());
    if terms.misclassification {
        let mc = misclassification_loss(partition, frame, deltas, rays, sign)?;
        out.value += mc.value;
        out.grad.iter_mut().zip(&mc.grad).for_each(|(g, d)| *g += d);
    }
    if terms.cohesion {
        let sc = sector_cohesion_loss(partition, frame, deltas)?;
        out.value += sc.value;
        out.grad.iter_mut().zip(&sc.grad).for_each(|(g, d)| *g += d);
    }
    Ok(out)
}

/// Softmax cross-entropy. Gradient layout: one entry per logit.
pub fn cls_loss(logits: &[f64], target_class: usize) -> Result<LossValue> {
    if target_class >= logits.len() {
        return Err(Error::invalid(format!(
            "target class {target_class} outside {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let value = sum.ln() + max - logits[target_class];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[target_class] -= 1.0;
    Ok(LossValue { value: value.max(0.0), grad })
}

/// Squared error between a predicted confidence and an IoU target.
/// Gradient layout: a single entry, w.r.t. the confidence.
pub fn conf_loss_to_target(predicted_conf: f64, target_iou: f64) -> LossValue {
    let d = predicted_conf - target_iou;
    LossValue { value: d * d, grad: vec![2.0 * d] }
}

/// Squared error between `predicted_conf` and the IoU of the proposal
/// mask with its ground-truth mask.
pub fn conf_loss(predicted_conf: f64, proposal_mask: &BinaryMask, gt_mask: &BinaryMask) -> Result<LossValue> {
    Error::check_len("mask", proposal_mask.len(), gt_mask.len())?;
    if !predicted_conf.is_finite() {
        return Err(Error::invalid("non-finite confidence"));
    }
    Ok(conf_loss_to_target(predicted_conf, mask_iou(proposal_mask, gt_mask)))
}
