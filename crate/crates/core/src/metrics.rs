//! Instance-mask average precision.
//!
//! For each class and IoU threshold, predictions are visited in descending
//! confidence (ties: lower index first). Each takes the unmatched
//! ground-truth instance of its class with the highest IoU (ties: lower
//! index) if that IoU reaches the threshold, and is a false positive
//! otherwise. AP integrates the precision envelope over every recall step.
//! Classes without ground truth are left out of all means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{mask_iou, BinaryMask, ScoredMask};
use crate::cloud::GroundTruthInstance;
use crate::error::{Error, Result};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn ap_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: i32,
    pub gt_count: usize,
    pub pred_count: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap25: Option<f64>,
    pub prec50: Option<f64>,
    pub rec50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub mprec50: f64,
    pub mrec50: f64,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalResult {
    /// One header row and one row per class, then a mean row. Missing
    /// values (classes without ground truth) are left blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,ap,ap50,ap25,prec50,rec50\n");
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.class_id,
                cell(c.ap),
                cell(c.ap50),
                cell(c.ap25),
                cell(c.prec50),
                cell(c.rec50)
            ));
        }
        out.push_str(&format!(
            "mean,{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            self.ap, self.ap50, self.ap25, self.mprec50, self.mrec50
        ));
        out
    }
}

pub fn evaluate(
    predictions: &[ScoredMask],
    gts: &[GroundTruthInstance],
    point_count: usize,
    classes: &[i32],
) -> Result<EvalResult> {
    for p in predictions {
        Error::check_len("prediction mask", point_count, p.mask.len())?;
        if !classes.contains(&p.class_id) {
            return Err(Error::UnknownClass(p.class_id));
        }
        if !p.confidence.is_finite() {
            return Err(Error::invalid("non-finite prediction confidence"));
        }
    }
    for g in gts {
        g.validate(point_count)?;
        if !classes.contains(&g.class_id) {
            return Err(Error::UnknownClass(g.class_id));
        }
    }
    let gt_masks: Vec<BinaryMask> = gts
        .iter()
        .map(|g| BinaryMask::from_bits(g.membership(point_count)))
        .collect();

    let per_class: Vec<ClassMetrics> = classes
        .par_iter()
        .map(|&class_id| {
            let mut preds: Vec<usize> = (0..predictions.len())
                .filter(|&i| predictions[i].class_id == class_id && predictions[i].mask.count() > 0)
                .collect();
            preds.sort_by(|&a, &b| {
                predictions[b]
                    .confidence
                    .total_cmp(&predictions[a].confidence)
                    .then(a.cmp(&b))
            });
            let gt_idx: Vec<usize> = (0..gts.len()).filter(|&g| gts[g].class_id == class_id).collect();
            let ious: Vec<Vec<f64>> = preds
                .iter()
                .map(|&p| gt_idx.iter().map(|&g| mask_iou(&predictions[p].mask, &gt_masks[g])).collect())
                .collect();
            class_metrics(class_id, &ious, gt_idx.len())
        })
        .collect();

    let scored: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.gt_count > 0).collect();
    let mean = |f: fn(&ClassMetrics) -> Option<f64>| -> f64 {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|c| f(c).unwrap_or(0.0)).sum::<f64>() / scored.len() as f64
        }
    };
    Ok(EvalResult {
        ap: mean(|c| c.ap),
        ap50: mean(|c| c.ap50),
        ap25: mean(|c| c.ap25),
        mprec50: mean(|c| c.prec50),
        mrec50: mean(|c| c.rec50),
        per_class,
    })
}

/// `ious[p][g]` is laid out with predictions already in ranking order.
fn class_metrics(class_id: i32, ious: &[Vec<f64>], gt_count: usize) -> ClassMetrics {
    let pred_count = ious.len();
    if gt_count == 0 {
        return ClassMetrics { class_id, gt_count, pred_count, ap: None, ap50: None, ap25: None, prec50: None, rec50: None };
    }
    let swept: f64 = ap_thresholds()
        .iter()
        .map(|&t| average_precision(&match_greedy(ious, gt_count, t), gt_count))
        .sum::<f64>()
        / 10.0;
    let hits50 = match_greedy(ious, gt_count, 0.5);
    let tp50 = hits50.iter().filter(|&&h| h).count();
    ClassMetrics {
        class_id,
        gt_count,
        pred_count,
        ap: Some(swept),
        ap50: Some(average_precision(&hits50, gt_count)),
        ap25: Some(average_precision(&match_greedy(ious, gt_count, 0.25), gt_count)),
        prec50: Some(if pred_count == 0 { 0.0 } else { tp50 as f64 / pred_count as f64 }),
        rec50: Some(tp50 as f64 / gt_count as f64),
    }
}

fn match_greedy(ious: &[Vec<f64>], gt_count: usize, threshold: f64) -> Vec<bool> {
    let mut taken = vec![false; gt_count];
    ious.iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (g, &iou) in row.iter().enumerate() {
                if !taken[g] && iou >= threshold && best.map_or(true, |(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
                true
            } else {
                false
            }
        })
        .collect()
}

/// All-point interpolated AP of a ranked hit list.
fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(&h, _)| h)
        .map(|(_, &p)| p / gt_count as f64)
        .sum()
}
