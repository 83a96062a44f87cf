//! Gradient-descent fitting of free proposal parameters against the full
//! training loss.
//!
//! Every proposal owns a center, one log-ray per sector, one delta per
//! scene point, class logits and a confidence logit. Proposals are matched
//! to ground-truth instances (each repeated `duplication` times) by the
//! Hungarian algorithm every `rematch_interval` iterations. The loss is
//!
//! ```text
//! sum over matched (k, i):  l1 * CE(logits_k, class_i)
//!                         + l2 * (sigmoid(q_k) - IoU(mask_k, gt_i))^2
//!                         + l3 * (mean |rays_k - g_ray_i| + |center_k - g_center_i|_1)
//!                         + l4 * (L_mc + L_sc)
//! sum over unmatched k:     l2 * sigmoid(q_k)^2
//! ```
//!
//! Radii, sectors, the reference rays inside the fine losses, and the IoU
//! target are detached: they are evaluated at the current parameters but
//! carry no gradient.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_in_frame, mask_iou, nms, BinaryMask, NmsConfig, Proposal, ScoredMask};
use crate::cloud::{GroundTruthInstance, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{CenteredFrame, Point3, SectorGrid};
use crate::matching::{build_cost_matrix, hungarian_solve, Hypothesis, InstanceTarget, MatchOptions};
use crate::metrics::{evaluate, EvalResult};
use crate::migration::{
    classify_points, cls_loss, coarse_loss, conf_loss_to_target, fine_loss, FineTerms, LossValue, MarginSign,
    MigrationField,
};
use crate::radial::{RadialPolygon, MIN_RAY};

/// Weights of the classification, confidence, coarse and fine terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub cls: f64,
    pub conf: f64,
    pub coarse: f64,
    pub fine: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self { cls: 0.5, conf: 0.5, coarse: 1.0, fine: 1.0 }
    }
}

impl Lambdas {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self { cls: a[0], conf: a[1], coarse: a[2], fine: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cls, self.conf, self.coarse, self.fine]
    }
}

/// Per-group multipliers on the base learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepScales {
    pub center: f64,
    pub rays: f64,
    pub deltas: f64,
    pub class_logits: f64,
    pub confidence: f64,
}

impl Default for StepScales {
    fn default() -> Self {
        Self { center: 1.0, rays: 10.0, deltas: 20.0, class_logits: 20.0, confidence: 50.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub proposal_count: usize,
    pub grid: SectorGrid,
    pub lambdas: Lambdas,
    pub learning_rate: f64,
    pub step_scales: StepScales,
    pub iterations: usize,
    pub rematch_interval: usize,
    /// Cosine-anneal the learning rate to zero over `iterations`.
    pub cosine_decay: bool,
    pub duplication: usize,
    pub seed: u64,
    pub margin_sign: MarginSign,
    pub fine_terms: FineTerms,
    /// Keep every delta at zero (coarse detection only).
    pub freeze_deltas: bool,
    pub nms: NmsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            proposal_count: 4,
            grid: SectorGrid::default(),
            lambdas: Lambdas::default(),
            learning_rate: 0.05,
            step_scales: StepScales::default(),
            iterations: 500,
            rematch_interval: 25,
            cosine_decay: false,
            duplication: crate::matching::DEFAULT_DUPLICATION,
            seed: 0,
            margin_sign: MarginSign::Corrective,
            fine_terms: FineTerms::default(),
            freeze_deltas: false,
            nms: NmsConfig::default(),
        }
    }
}

impl FitConfig {
    /// Collects every offending field instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.proposal_count == 0 {
            bad.push("proposal_count must be >= 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bad.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.rematch_interval == 0 {
            bad.push("rematch_interval must be >= 1".to_string());
        }
        if self.duplication == 0 {
            bad.push("duplication must be >= 1".to_string());
        }
        for (name, v) in ["cls", "conf", "coarse", "fine"].iter().zip(self.lambdas.to_array()) {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("lambdas.{name} must be >= 0, got {v}"));
            }
        }
        let s = self.step_scales;
        for (name, v) in [
            ("center", s.center),
            ("rays", s.rays),
            ("deltas", s.deltas),
            ("class_logits", s.class_logits),
            ("confidence", s.confidence),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                bad.push(format!("step_scales.{name} must be >= 0, got {v}"));
            }
        }
        let n = self.nms;
        if !(0.0..=1.0).contains(&n.conf_threshold) {
            bad.push(format!("nms.conf_threshold must be in [0, 1], got {}", n.conf_threshold));
        }
        if !(0.0..=1.0).contains(&n.iou_threshold) {
            bad.push(format!("nms.iou_threshold must be in [0, 1], got {}", n.iou_threshold));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn match_options(&self) -> MatchOptions {
        MatchOptions { sign: self.margin_sign, terms: self.fine_terms }
    }

    fn lr_at(&self, iteration: usize) -> f64 {
        if self.cosine_decay && self.iterations > 0 {
            self.learning_rate * 0.5 * (1.0 + (PI * iteration as f64 / self.iterations as f64).cos())
        } else {
            self.learning_rate
        }
    }
}

/// Free parameters of one proposal. Also used as its gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub center: [f64; 3],
    /// Rays are `exp(ray_logits)`.
    pub ray_logits: Vec<f64>,
    pub deltas: Vec<f64>,
    pub class_logits: Vec<f64>,
    /// Confidence is `sigmoid(conf_logit)`.
    pub conf_logit: f64,
}

impl ProposalParams {
    pub fn zeros_like(other: &ProposalParams) -> Self {
        Self {
            center: [0.0; 3],
            ray_logits: vec![0.0; other.ray_logits.len()],
            deltas: vec![0.0; other.deltas.len()],
            class_logits: vec![0.0; other.class_logits.len()],
            conf_logit: 0.0,
        }
    }

    pub fn rays(&self) -> Vec<f64> {
        self.ray_logits.iter().map(|a| a.exp().max(MIN_RAY)).collect()
    }

    pub fn confidence(&self) -> f64 {
        sigmoid(self.conf_logit)
    }

    pub fn center_point(&self) -> Point3 {
        Point3::from_array(self.center)
    }

    pub fn polygon(&self, grid: SectorGrid) -> RadialPolygon {
        RadialPolygon { center: self.center_point(), rays: self.rays(), grid }
    }

    pub fn param_count(&self) -> usize {
        3 + self.ray_logits.len() + self.deltas.len() + self.class_logits.len() + 1
    }

    /// Layout: center, ray logits, deltas, class logits, confidence logit.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.center);
        out.extend_from_slice(&self.ray_logits);
        out.extend_from_slice(&self.deltas);
        out.extend_from_slice(&self.class_logits);
        out.push(self.conf_logit);
    }

    /// Inverse of [`flatten_into`](Self::flatten_into); returns the number of values read.
    pub fn load_from(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&src[at..at + dst.len()]);
            at += dst.len();
        };
        take(&mut self.center);
        take(&mut self.ray_logits);
        take(&mut self.deltas);
        take(&mut self.class_logits);
        let mut conf = [0.0];
        take(&mut conf);
        self.conf_logit = conf[0];
        at
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub proposals: Vec<ProposalParams>,
    /// Target index per proposal, `None` for unmatched proposals.
    pub assignment: Vec<Option<usize>>,
    pub history: Vec<f64>,
}

impl FitState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.proposals {
            p.flatten_into(&mut out);
        }
        out
    }

    pub fn load_flat(&mut self, src: &[f64]) {
        let mut at = 0;
        for p in &mut self.proposals {
            at += p.load_from(&src[at..]);
        }
    }
}

/// Quantities evaluated at the current parameters that carry no gradient.
#[derive(Debug, Clone)]
pub struct Detached {
    pub frame: CenteredFrame,
    pub rays: Vec<f64>,
    pub mask: BinaryMask,
}

pub fn detach(state: &FitState, cloud: &PointCloud, grid: SectorGrid) -> Result<Vec<Detached>> {
    state
        .proposals
        .par_iter()
        .map(|p| {
            let frame = CenteredFrame::new(&cloud.points, p.center_point(), &grid)?;
            let rays = p.rays();
            let mask = assemble_in_frame(&frame, &p.deltas, &rays)?;
            Ok(Detached { frame, rays, mask })
        })
        .collect()
}

/// Loss value with its gradient laid out per proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub grads: Vec<ProposalParams>,
    /// Unweighted sums of the four terms over matched pairs (the
    /// confidence sum includes unmatched proposals).
    pub terms: [f64; 4],
}

impl TotalLoss {
    pub fn into_loss_value(self) -> LossValue {
        let mut grad = Vec::new();
        for g in &self.grads {
            g.flatten_into(&mut grad);
        }
        LossValue { value: self.value, grad }
    }
}

/// The full loss, with detached quantities recomputed from `state`.
pub fn total_loss(state: &FitState, cloud: &PointCloud, targets: &[InstanceTarget], cfg: &FitConfig) -> Result<TotalLoss> {
    let detached = detach(state, cloud, cfg.grid)?;
    total_loss_detached(state, &detached, targets, cfg)
}

/// The full loss with externally supplied detached quantities.
pub fn total_loss_detached(
    state: &FitState,
    detached: &[Detached],
    targets: &[InstanceTarget],
    cfg: &FitConfig,
) -> Result<TotalLoss> {
    Error::check_len("detached proposals", state.proposals.len(), detached.len())?;
    Error::check_len("assignment", state.proposals.len(), state.assignment.len())?;
    let lam = cfg.lambdas;
    let per: Vec<(f64, ProposalParams, [f64; 4])> = state
        .proposals
        .par_iter()
        .zip(detached.par_iter())
        .zip(state.assignment.par_iter())
        .map(|((p, d), assigned)| {
            let mut g = ProposalParams::zeros_like(p);
            let conf = p.confidence();
            let dconf = conf * (1.0 - conf);
            let Some(t) = *assigned else {
                let c = conf_loss_to_target(conf, 0.0);
                g.conf_logit = lam.conf * c.grad[0] * dconf;
                return Ok((lam.conf * c.value, g, [0.0, c.value, 0.0, 0.0]));
            };
            let target = targets
                .get(t)
                .ok_or_else(|| Error::invalid(format!("assignment refers to missing target {t}")))?;

            let cls = cls_loss(&p.class_logits, target.class_index)?;
            g.class_logits = cls.grad.iter().map(|v| lam.cls * v).collect();

            let conf_term = conf_loss_to_target(conf, mask_iou(&d.mask, &target.mask));
            g.conf_logit = lam.conf * conf_term.grad[0] * dconf;

            let poly = p.polygon(target.polygon.grid);
            let coarse = coarse_loss(&poly, &target.polygon)?;
            let s = poly.rays.len();
            for k in 0..s {
                g.ray_logits[k] = lam.coarse * coarse.grad[k] * poly.rays[k];
            }
            for a in 0..3 {
                g.center[a] = lam.coarse * coarse.grad[s + a];
            }

            let part = classify_points(&d.frame, &p.deltas, &d.rays, target.mask.bits())?;
            let fine = fine_loss(&part, &d.frame, &p.deltas, &d.rays, cfg.margin_sign, cfg.fine_terms)?;
            g.deltas = fine.grad.iter().map(|v| lam.fine * v).collect();

            let value = lam.cls * cls.value + lam.conf * conf_term.value + lam.coarse * coarse.value + lam.fine * fine.value;
            Ok((value, g, [cls.value, conf_term.value, coarse.value, fine.value]))
        })
        .collect::<Result<_>>()?;

    let mut value = 0.0;
    let mut terms = [0.0; 4];
    let mut grads = Vec::with_capacity(per.len());
    for (v, g, t) in per {
        value += v;
        for k in 0..4 {
            terms[k] += t[k];
        }
        grads.push(g);
    }
    Ok(TotalLoss { value, grads, terms })
}

/// Farthest-point-sampled centers, rays at the median distance from each
/// point to its nearest center, zero deltas and logits, confidence 0.5.
pub fn initialize(cloud: &PointCloud, class_count: usize, cfg: &FitConfig) -> Result<FitState> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot fit an empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cloud.len();
    let mut centers = vec![cloud.points[rng.gen_range(0..n)]];
    let mut nearest: Vec<f64> = cloud.points.iter().map(|p| p.distance(&centers[0])).collect();
    while centers.len() < cfg.proposal_count {
        let (far, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let c = cloud.points[far];
        centers.push(c);
        for (d, p) in nearest.iter_mut().zip(&cloud.points) {
            *d = d.min(p.distance(&c));
        }
    }
    let mut sorted = nearest.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2].max(10.0 * MIN_RAY);
    let sectors = cfg.grid.sector_count();
    let proposals = centers
        .into_iter()
        .map(|c| ProposalParams {
            center: c.to_array(),
            ray_logits: vec![median.ln(); sectors],
            deltas: vec![0.0; n],
            class_logits: vec![0.0; class_count],
            conf_logit: 0.0,
        })
        .collect::<Vec<_>>();
    Ok(FitState { assignment: vec![None; proposals.len()], proposals, history: Vec::new() })
}

fn hypotheses(state: &FitState, grid: SectorGrid) -> Result<Vec<Hypothesis>> {
    state
        .proposals
        .iter()
        .map(|p| {
            Ok(Hypothesis {
                polygon: p.polygon(grid),
                deltas: MigrationField::new(p.deltas.clone())?,
                class_logits: p.class_logits.clone(),
            })
        })
        .collect()
}

/// Recomputes the Hungarian assignment of proposals to (duplicated) targets.
pub fn rematch(state: &mut FitState, cloud: &PointCloud, targets: &[InstanceTarget], cfg: &FitConfig) -> Result<()> {
    let hyps = hypotheses(state, cfg.grid)?;
    let (cost, columns) = build_cost_matrix(&hyps, targets, cloud, cfg.duplication, &cfg.match_options())?;
    let assignment = hungarian_solve(&cost);
    state.assignment = vec![None; state.proposals.len()];
    for (row, col) in assignment.pairs {
        state.assignment[row] = Some(columns[col]);
    }
    Ok(())
}

fn apply_step(state: &mut FitState, grads: &[ProposalParams], lr: f64, cfg: &FitConfig) {
    let s = cfg.step_scales;
    for (p, g) in state.proposals.iter_mut().zip(grads) {
        for a in 0..3 {
            p.center[a] -= lr * s.center * g.center[a];
        }
        for (v, d) in p.ray_logits.iter_mut().zip(&g.ray_logits) {
            *v -= lr * s.rays * d;
        }
        if !cfg.freeze_deltas {
            for (v, d) in p.deltas.iter_mut().zip(&g.deltas) {
                *v -= lr * s.deltas * d;
            }
        }
        for (v, d) in p.class_logits.iter_mut().zip(&g.class_logits) {
            *v -= lr * s.class_logits * d;
        }
        p.conf_logit -= lr * s.confidence * g.conf_logit;
    }
}

/// Runs `cfg.iterations` gradient steps from `state`, appending to its loss history.
pub fn optimize(state: &mut FitState, cloud: &PointCloud, targets: &[InstanceTarget], cfg: &FitConfig) -> Result<()> {
    for it in 0..cfg.iterations {
        if it % cfg.rematch_interval == 0 {
            rematch(state, cloud, targets, cfg)?;
        }
        let loss = total_loss(state, cloud, targets, cfg)?;
        if !loss.value.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        state.history.push(loss.value);
        apply_step(state, &loss.grads, cfg.lr_at(it), cfg);
        let finite = state.proposals.iter().all(|p| {
            p.center.iter().chain(&p.ray_logits).chain(&p.deltas).chain(&p.class_logits).all(|v| v.is_finite())
                && p.conf_logit.is_finite()
        });
        if !finite {
            return Err(Error::Divergence { iteration: it });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    /// NMS survivors, descending confidence.
    pub proposals: Vec<Proposal>,
    pub masks: Vec<ScoredMask>,
    pub history: Vec<f64>,
    pub eval: EvalResult,
    /// Best IoU of any kept mask with each ground-truth instance.
    pub instance_iou: Vec<f64>,
    pub mean_iou: f64,
}

pub fn finalize(state: &FitState, cloud: &PointCloud, gts: &[GroundTruthInstance], classes: &[i32], cfg: &FitConfig) -> Result<FitOutcome> {
    let detached = detach(state, cloud, cfg.grid)?;
    let all: Vec<(Proposal, ScoredMask)> = state
        .proposals
        .iter()
        .zip(detached)
        .map(|(p, d)| {
            let class_id = argmax(&p.class_logits).map_or(classes.first().copied().unwrap_or(0), |k| classes[k]);
            let confidence = p.confidence();
            let proposal = Proposal {
                polygon: p.polygon(cfg.grid),
                deltas: MigrationField::new(p.deltas.clone())?,
                class_id,
                confidence,
            };
            Ok((proposal, ScoredMask { class_id, confidence, mask: d.mask }))
        })
        .collect::<Result<_>>()?;
    let scored: Vec<ScoredMask> = all.iter().map(|(_, m)| m.clone()).collect();
    let kept = nms(&scored, &cfg.nms);
    let proposals: Vec<Proposal> = kept.iter().map(|&i| all[i].0.clone()).collect();
    let masks: Vec<ScoredMask> = kept.iter().map(|&i| scored[i].clone()).collect();
    let eval = evaluate(&masks, gts, cloud.len(), classes)?;
    let instance_iou: Vec<f64> = gts
        .iter()
        .map(|g| {
            let gm = BinaryMask::from_bits(g.membership(cloud.len()));
            masks.iter().map(|m| mask_iou(&m.mask, &gm)).fold(0.0, f64::max)
        })
        .collect();
    let mean_iou = if instance_iou.is_empty() { 0.0 } else { instance_iou.iter().sum::<f64>() / instance_iou.len() as f64 };
    Ok(FitOutcome { proposals, masks, history: state.history.clone(), eval, instance_iou, mean_iou })
}

fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

/// Initializes, optimizes and evaluates proposals for one scene.
pub fn fit_scene(cloud: &PointCloud, gts: &[GroundTruthInstance], classes: &[i32], cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    cloud.validate()?;
    if classes.is_empty() {
        return Err(Error::invalid("class list is empty"));
    }
    let targets = InstanceTarget::all(cloud, gts, cfg.grid, classes)?;
    let mut state = initialize(cloud, classes.len(), cfg)?;
    optimize(&mut state, cloud, &targets, cfg)?;
    finalize(&state, cloud, gts, classes, cfg)
}
