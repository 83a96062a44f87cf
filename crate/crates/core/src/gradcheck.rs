//! Central finite-difference checks of every analytic gradient, over
//! random configurations kept away from non-differentiable points.
//!
//! Each configuration keeps every migrated radius at least [`KINK_MARGIN`]
//! from its ray and every L1 difference at least that far from zero, so
//! that neither the TP/FP/FN partition nor an L1 sign changes within the
//! finite-difference step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::fitter::{detach, initialize, rematch, total_loss_detached, FitConfig, FitState};
use crate::geometry::{CenteredFrame, Point3, SectorGrid};
use crate::matching::InstanceTarget;
use crate::migration::{
    classify_points, cls_loss, coarse_loss, conf_loss_to_target, misclassification_loss, sector_cohesion_loss,
    MarginSign, PointPartition,
};
use crate::radial::RadialPolygon;
use crate::synth::{generate_scene, SceneSpec, ShapeFamily};

pub const FD_STEP: f64 = 1e-6;
pub const KINK_MARGIN: f64 = 1e-3;
pub const LOSS_TOLERANCE: f64 = 1e-5;
pub const TOTAL_LOSS_TOLERANCE: f64 = 1e-4;
/// Gradient magnitudes below this are compared on an absolute scale:
/// the error is divided by `max(|analytic|, |numeric|, SCALE_FLOOR)`.
pub const SCALE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn central_difference(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn max_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub loss: String,
    pub trials: usize,
    pub entries_checked: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub entries: Vec<GradcheckEntry>,
    pub pass: bool,
}

struct Tally {
    loss: &'static str,
    tolerance: f64,
    trials: usize,
    entries: usize,
    worst: f64,
}

impl Tally {
    fn new(loss: &'static str, tolerance: f64) -> Self {
        Self { loss, tolerance, trials: 0, entries: 0, worst: 0.0 }
    }

    fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.trials += 1;
        self.entries += analytic.len();
        self.worst = self.worst.max(max_error(analytic, numeric));
    }

    fn finish(self) -> GradcheckEntry {
        GradcheckEntry {
            loss: self.loss.to_string(),
            trials: self.trials,
            entries_checked: self.entries,
            max_relative_error: self.worst,
            tolerance: self.tolerance,
            pass: self.trials > 0 && self.worst <= self.tolerance,
        }
    }
}

/// Random radii, sectors, rays, deltas and labels with every migrated
/// radius at least `KINK_MARGIN` away from its ray.
struct PointConfig {
    frame: CenteredFrame,
    rays: Vec<f64>,
    deltas: Vec<f64>,
    foreground: Vec<bool>,
}

fn point_config(rng: &mut ChaCha8Rng) -> PointConfig {
    let grid = SectorGrid::new(rng.gen_range(1..=4), rng.gen_range(1..=4)).unwrap();
    let sectors_n = grid.sector_count();
    let rays: Vec<f64> = (0..sectors_n).map(|_| rng.gen_range(0.3..2.5)).collect();
    let n = rng.gen_range(4..=40);
    let mut frame = CenteredFrame { radii: Vec::with_capacity(n), sectors: Vec::with_capacity(n) };
    let mut deltas = Vec::with_capacity(n);
    let mut foreground = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(0..sectors_n);
        let r = rng.gen_range(0.0..3.0);
        let d = loop {
            let d: f64 = rng.gen_range(-1.5..1.5);
            if (r + d - rays[k]).abs() > KINK_MARGIN {
                break d;
            }
        };
        frame.radii.push(r);
        frame.sectors.push(k);
        deltas.push(d);
        foreground.push(rng.gen_bool(0.5));
    }
    PointConfig { frame, rays, deltas, foreground }
}

fn check_mc(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let c = point_config(rng);
    let sign = if rng.gen_bool(0.5) { MarginSign::Corrective } else { MarginSign::Printed };
    let eval = |d: &[f64]| -> Result<f64> {
        let part = classify_points(&c.frame, d, &c.rays, &c.foreground)?;
        Ok(misclassification_loss(&part, &c.frame, d, &c.rays, sign)?.value)
    };
    let part = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground)?;
    let analytic = misclassification_loss(&part, &c.frame, &c.deltas, &c.rays, sign)?.grad;
    let numeric = central_difference(&c.deltas, FD_STEP, |d| eval(d).expect("consistent lengths"));
    tally.record(&analytic, &numeric);
    Ok(())
}

fn check_sc(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let c = point_config(rng);
    let eval = |d: &[f64]| -> Result<f64> {
        let part = classify_points(&c.frame, d, &c.rays, &c.foreground)?;
        Ok(sector_cohesion_loss(&part, &c.frame, d)?.value)
    };
    let part = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground)?;
    let analytic = sector_cohesion_loss(&part, &c.frame, &c.deltas)?.grad;
    let numeric = central_difference(&c.deltas, FD_STEP, |d| eval(d).expect("consistent lengths"));
    tally.record(&analytic, &numeric);
    Ok(())
}

fn away_from(rng: &mut ChaCha8Rng, base: f64, spread: f64) -> f64 {
    loop {
        let v = base + rng.gen_range(-spread..spread);
        if (v - base).abs() > KINK_MARGIN {
            return v;
        }
    }
}

fn polygon_pair(rng: &mut ChaCha8Rng) -> (RadialPolygon, RadialPolygon) {
    let grid = SectorGrid::new(rng.gen_range(1..=6), rng.gen_range(1..=6)).unwrap();
    let target_rays: Vec<f64> = (0..grid.sector_count()).map(|_| rng.gen_range(0.5..3.0)).collect();
    let pred_rays = target_rays.iter().map(|&t| away_from(rng, t, 0.4)).collect();
    let tc: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
    let pc: [f64; 3] = std::array::from_fn(|a| away_from(rng, tc[a], 1.0));
    let target = RadialPolygon::new(Point3::from_array(tc), target_rays, grid).unwrap();
    let pred = RadialPolygon::new(Point3::from_array(pc), pred_rays, grid).unwrap();
    (pred, target)
}

fn check_ray(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (pred, target) = polygon_pair(rng);
    let s = pred.rays.len();
    let analytic = coarse_loss(&pred, &target)?.grad[..s].to_vec();
    let numeric = central_difference(&pred.rays, FD_STEP, |r| {
        let p = RadialPolygon { rays: r.to_vec(), ..pred.clone() };
        coarse_loss(&p, &target).expect("matching grids").value
    });
    tally.record(&analytic, &numeric);
    Ok(())
}

fn check_center(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (pred, target) = polygon_pair(rng);
    let s = pred.rays.len();
    let analytic = coarse_loss(&pred, &target)?.grad[s..].to_vec();
    let numeric = central_difference(&pred.center.to_array(), FD_STEP, |c| {
        let p = RadialPolygon { center: Point3::new(c[0], c[1], c[2]), ..pred.clone() };
        coarse_loss(&p, &target).expect("matching grids").value
    });
    tally.record(&analytic, &numeric);
    Ok(())
}

fn check_conf(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let conf: f64 = rng.gen_range(0.0..1.0);
    let iou: f64 = rng.gen_range(0.0..1.0);
    let analytic = conf_loss_to_target(conf, iou).grad;
    let numeric = central_difference(&[conf], FD_STEP, |c| conf_loss_to_target(c[0], iou).value);
    tally.record(&analytic, &numeric);
    Ok(())
}

fn check_cls(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let n = rng.gen_range(2..=8);
    let logits: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    let target = rng.gen_range(0..n);
    let analytic = cls_loss(&logits, target)?.grad;
    let numeric = central_difference(&logits, FD_STEP, |z| cls_loss(z, target).expect("valid target").value);
    tally.record(&analytic, &numeric);
    Ok(())
}

/// A small fitted-from-scratch state with perturbed parameters and a
/// partition that is stable within the finite-difference step.
fn total_loss_case(rng: &mut ChaCha8Rng) -> Result<(PointCloud, Vec<InstanceTarget>, FitConfig, FitState)> {
    let spec = SceneSpec {
        seed: rng.gen(),
        instance_count: rng.gen_range(1..=2),
        points_per_instance: 12,
        background_points: 12,
        extent: 5.0,
        shapes: vec![ShapeFamily::StarConvex, ShapeFamily::LShape],
        class_count: 3,
        ..Default::default()
    };
    let (cloud, gts) = generate_scene(&spec)?;
    let cfg = FitConfig {
        proposal_count: rng.gen_range(1..=4),
        grid: SectorGrid::new(rng.gen_range(1..=4), rng.gen_range(1..=4))?,
        seed: rng.gen(),
        duplication: rng.gen_range(1..=2),
        margin_sign: if rng.gen_bool(0.5) { MarginSign::Corrective } else { MarginSign::Printed },
        ..Default::default()
    };
    let targets = InstanceTarget::all(&cloud, &gts, cfg.grid, &spec.classes())?;
    let mut state = initialize(&cloud, spec.class_count, &cfg)?;
    for p in &mut state.proposals {
        for c in &mut p.center {
            *c += rng.gen_range(-0.5..0.5);
        }
        for a in &mut p.ray_logits {
            *a += rng.gen_range(-0.7..0.3);
        }
        for z in &mut p.class_logits {
            *z = rng.gen_range(-2.0..2.0);
        }
        p.conf_logit = rng.gen_range(-2.0..2.0);
    }
    rematch(&mut state, &cloud, &targets, &cfg)?;

    // keep L1 terms off their kinks and migrated radii off the rays
    let detached = detach(&state, &cloud, cfg.grid)?;
    for ((p, d), assigned) in state.proposals.iter_mut().zip(&detached).zip(&state.assignment) {
        if let Some(t) = assigned {
            let tp = &targets[*t].polygon;
            let tc = tp.center.to_array();
            for a in 0..3 {
                if (p.center[a] - tc[a]).abs() <= KINK_MARGIN {
                    p.center[a] = tc[a] + 10.0 * KINK_MARGIN;
                }
            }
            for (a, g) in p.ray_logits.iter_mut().zip(&tp.rays) {
                if (a.exp() - g).abs() <= KINK_MARGIN * g.max(1.0) {
                    *a = (g + 10.0 * KINK_MARGIN * g.max(1.0)).ln();
                }
            }
        }
        for (i, delta) in p.deltas.iter_mut().enumerate() {
            let ray = d.rays[d.frame.sectors[i]];
            *delta = loop {
                let v: f64 = rng.gen_range(-1.0..1.0);
                if (d.frame.radii[i] + v - ray).abs() > KINK_MARGIN {
                    break v;
                }
            };
        }
    }
    Ok((cloud, targets, cfg, state))
}

fn check_total(rng: &mut ChaCha8Rng, tally: &mut Tally) -> Result<()> {
    let (cloud, targets, cfg, state) = total_loss_case(rng)?;
    let detached = detach(&state, &cloud, cfg.grid)?;
    let analytic = total_loss_detached(&state, &detached, &targets, &cfg)?.into_loss_value().grad;
    let x = state.flatten();
    let mut probe = state.clone();
    let numeric = central_difference(&x, FD_STEP, |v| {
        probe.load_flat(v);
        total_loss_detached(&probe, &detached, &targets, &cfg)
            .expect("consistent state")
            .value
    });
    tally.record(&analytic, &numeric);
    Ok(())
}

type Check = fn(&mut ChaCha8Rng, &mut Tally) -> Result<()>;

/// Runs `trials` random configurations per loss. Each loss draws from its
/// own stream derived from `seed`, so adding a loss does not perturb the others.
pub fn run_suite(seed: u64, trials: usize) -> Result<GradcheckReport> {
    let checks: [(&'static str, f64, Check); 7] = [
        ("misclassification", LOSS_TOLERANCE, check_mc),
        ("sector_cohesion", LOSS_TOLERANCE, check_sc),
        ("ray", LOSS_TOLERANCE, check_ray),
        ("center", LOSS_TOLERANCE, check_center),
        ("confidence", LOSS_TOLERANCE, check_conf),
        ("classification", LOSS_TOLERANCE, check_cls),
        ("total", TOTAL_LOSS_TOLERANCE, check_total),
    ];
    let entries = checks
        .iter()
        .enumerate()
        .map(|(k, &(name, tol, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut tally = Tally::new(name, tol);
            for _ in 0..trials {
                check(&mut rng, &mut tally)?;
            }
            Ok(tally.finish())
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = entries.iter().all(|e| e.pass);
    Ok(GradcheckReport { seed, trials, step: FD_STEP, entries, pass })
}

/// Partition used by a point configuration, exposed for property tests.
pub fn random_partition_case(seed: u64) -> (CenteredFrame, Vec<f64>, Vec<f64>, Vec<bool>, PointPartition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = point_config(&mut rng);
    let part = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).expect("consistent lengths");
    (c.frame, c.rays, c.deltas, c.foreground, part)
}
