//! Mask assembly from migrated radii, mask IoU and greedy mask NMS.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::CenteredFrame;
use crate::migration::MigrationField;
use crate::radial::RadialPolygon;

/// Per-point membership flags over a scene.
///
/// Serialized as a run-length encoding `{"len": n, "counts": [...]}` whose
/// runs alternate between unset and set, starting with unset (a leading
/// run may be 0).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleMask", into = "RleMask")]
pub struct BinaryMask {
    bits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub len: usize,
    pub counts: Vec<usize>,
}

impl BinaryMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0usize;
        for &b in &self.bits {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        if run > 0 {
            counts.push(run);
        }
        RleMask { len: self.bits.len(), counts }
    }

    pub fn from_rle(rle: &RleMask) -> Result<Self> {
        let total: usize = rle.counts.iter().sum();
        if total != rle.len {
            return Err(Error::invalid(format!(
                "run lengths sum to {total} but mask length is {}",
                rle.len
            )));
        }
        let mut bits = Vec::with_capacity(rle.len);
        for (k, &run) in rle.counts.iter().enumerate() {
            bits.extend(std::iter::repeat(k % 2 == 1).take(run));
        }
        Ok(Self { bits })
    }
}

impl From<BinaryMask> for RleMask {
    fn from(m: BinaryMask) -> Self {
        m.to_rle()
    }
}

impl TryFrom<RleMask> for BinaryMask {
    type Error = Error;
    fn try_from(r: RleMask) -> Result<Self> {
        BinaryMask::from_rle(&r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub polygon: RadialPolygon,
    pub deltas: MigrationField,
    pub class_id: i32,
    pub confidence: f64,
}

impl Proposal {
    pub fn validate(&self) -> Result<()> {
        self.polygon.validate()?;
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(Error::invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

/// A mask with the class and confidence attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMask {
    pub class_id: i32,
    pub confidence: f64,
    pub mask: BinaryMask,
}

/// Bit `i` is set iff `r_i + delta_i <= ray(sector_i)` in the frame
/// centred on the proposal.
pub fn assemble_mask(proposal: &Proposal, cloud: &PointCloud) -> Result<BinaryMask> {
    proposal.validate()?;
    Error::check_len("deltas", cloud.len(), proposal.deltas.len())?;
    let frame = CenteredFrame::new(&cloud.points, proposal.polygon.center, &proposal.polygon.grid)?;
    assemble_in_frame(&frame, proposal.deltas.as_slice(), &proposal.polygon.rays)
}

/// Mask assembly on a precomputed frame.
pub fn assemble_in_frame(frame: &CenteredFrame, deltas: &[f64], rays: &[f64]) -> Result<BinaryMask> {
    Error::check_len("deltas", frame.len(), deltas.len())?;
    let bits = frame
        .radii
        .iter()
        .zip(&frame.sectors)
        .zip(deltas)
        .map(|((r, &k), d)| r + d <= rays[k])
        .collect();
    Ok(BinaryMask { bits })
}

/// Intersection over union; 0 when both masks are empty.
///
/// Panics if the masks have different lengths.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    assert_eq!(a.len(), b.len(), "mask_iou on masks of different length");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub class_aware: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self { conf_threshold: 0.2, iou_threshold: 0.5, class_aware: false }
    }
}

/// Greedy mask NMS. Returns indices of kept candidates in descending
/// confidence order (ties: lower index first).
pub fn nms(candidates: &[ScoredMask], cfg: &NmsConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].confidence >= cfg.conf_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .confidence
            .total_cmp(&candidates[a].confidence)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            (!cfg.class_aware || candidates[k].class_id == candidates[i].class_id)
                && mask_iou(&candidates[k].mask, &candidates[i].mask) >= cfg.iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}
