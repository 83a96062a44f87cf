//! Component and grid ablations over sets of synthetic scenes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::BinaryMask;
use crate::cloud::{GroundTruthInstance, PointCloud};
use crate::error::Result;
use crate::fitter::{fit_scene, FitConfig, FitOutcome};
use crate::geometry::SectorGrid;
use crate::migration::FineTerms;
use crate::radial::exact_target;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub gts: Vec<GroundTruthInstance>,
    pub classes: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub fine_terms: FineTerms,
    pub freeze_deltas: bool,
}

impl Variant {
    pub fn apply(&self, base: &FitConfig) -> FitConfig {
        FitConfig { fine_terms: self.fine_terms, freeze_deltas: self.freeze_deltas, ..base.clone() }
    }
}

/// Coarse detection only, each fine term alone, and both.
pub fn component_variants() -> Vec<Variant> {
    let v = |name: &str, mc: bool, sc: bool, freeze: bool| Variant {
        name: name.to_string(),
        fine_terms: FineTerms { misclassification: mc, cohesion: sc },
        freeze_deltas: freeze,
    };
    vec![
        v("rid_only", false, false, true),
        v("mc_only", true, false, false),
        v("sc_only", false, true, false),
        v("full", true, true, false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub grid: SectorGrid,
    pub mean_iou: f64,
    pub mean_ap: f64,
    pub mean_ap50: f64,
    pub scene_iou: Vec<f64>,
}

/// Fits every scene under every variant (and every grid in `grids`, or the
/// base grid when empty).
pub fn ablation_run(scenes: &[Scene], base: &FitConfig, variants: &[Variant], grids: &[SectorGrid]) -> Result<Vec<AblationRow>> {
    let grids = if grids.is_empty() { vec![base.grid] } else { grids.to_vec() };
    let mut rows = Vec::new();
    for grid in &grids {
        for variant in variants {
            let cfg = FitConfig { grid: *grid, ..variant.apply(base) };
            let outcomes: Vec<FitOutcome> = scenes
                .par_iter()
                .map(|s| fit_scene(&s.cloud, &s.gts, &s.classes, &cfg))
                .collect::<Result<_>>()?;
            let n = outcomes.len().max(1) as f64;
            rows.push(AblationRow {
                variant: variant.name.clone(),
                grid: *grid,
                mean_iou: outcomes.iter().map(|o| o.mean_iou).sum::<f64>() / n,
                mean_ap: outcomes.iter().map(|o| o.eval.ap).sum::<f64>() / n,
                mean_ap50: outcomes.iter().map(|o| o.eval.ap50).sum::<f64>() / n,
                scene_iou: outcomes.iter().map(|o| o.mean_iou).collect(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub grid: SectorGrid,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub instances: usize,
}

/// Precision and recall of exact-target polygons with zero deltas, averaged
/// over every instance of every scene.
pub fn grid_precision_sweep(scenes: &[Scene], grids: &[SectorGrid]) -> Result<Vec<GridRow>> {
    grids
        .iter()
        .map(|&grid| {
            let per: Vec<(f64, f64)> = scenes
                .par_iter()
                .map(|s| {
                    s.gts
                        .iter()
                        .map(|gt| {
                            let poly = exact_target(&s.cloud, gt, grid)?;
                            let gt_mask = BinaryMask::from_bits(gt.membership(s.cloud.len()));
                            let (mut hit, mut enclosed) = (0usize, 0usize);
                            for (i, p) in s.cloud.points.iter().enumerate() {
                                if poly.contains(*p) {
                                    enclosed += 1;
                                    hit += usize::from(gt_mask.get(i));
                                }
                            }
                            Ok((hit as f64 / enclosed as f64, hit as f64 / gt.point_indices.len() as f64))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let n = per.len().max(1) as f64;
            Ok(GridRow {
                grid,
                mean_precision: per.iter().map(|p| p.0).sum::<f64>() / n,
                mean_recall: per.iter().map(|p| p.1).sum::<f64>() / n,
                instances: per.len(),
            })
        })
        .collect()
}
