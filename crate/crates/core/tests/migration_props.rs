use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphmask::geometry::CenteredFrame;
use sphmask::gradcheck::{central_difference, relative_error, FD_STEP};
use sphmask::migration::{
    classify_points, coarse_loss, cls_loss, conf_loss, conf_loss_to_target, fine_loss, misclassification_loss,
    sector_cohesion_loss, FineTerms, MarginSign, PointPartition,
};
use sphmask::{BinaryMask, Point3, RadialPolygon, SectorGrid};

const LN2: f64 = std::f64::consts::LN_2;

fn ln1p_e() -> f64 {
    std::f64::consts::E.ln_1p()
}

struct Case {
    frame: CenteredFrame,
    rays: Vec<f64>,
    deltas: Vec<f64>,
    foreground: Vec<bool>,
}

fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sectors_n = rng.gen_range(1..=9);
    let n = rng.gen_range(1..30);
    let rays: Vec<f64> = (0..sectors_n).map(|_| rng.gen_range(0.2..2.0)).collect();
    let sectors: Vec<usize> = (0..n).map(|_| rng.gen_range(0..sectors_n)).collect();
    let radii = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
    let deltas = (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let foreground = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    Case { frame: CenteredFrame { radii, sectors }, rays, deltas, foreground }
}

fn frame1(r: f64) -> CenteredFrame {
    CenteredFrame { radii: vec![r], sectors: vec![0] }
}

fn single(fn_: bool) -> PointPartition {
    PointPartition {
        tp_indices: vec![],
        fp_indices: if fn_ { vec![] } else { vec![0] },
        fn_indices: if fn_ { vec![0] } else { vec![] },
        tn_indices: vec![],
    }
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

#[test]
fn partition_examples() {
    let p = classify_points(&frame1(1.5), &[0.0], &[1.0], &[true]).unwrap();
    assert_eq!(p.fn_indices, vec![0]);
    let p = classify_points(&frame1(0.5), &[0.0], &[1.0], &[false]).unwrap();
    assert_eq!(p.fp_indices, vec![0]);
}

#[test]
fn margin_loss_examples() {
    let v = misclassification_loss(&single(true), &frame1(1.0), &[0.0], &[1.0], MarginSign::Corrective).unwrap();
    assert!((v.value - LN2).abs() < 1e-15);
    let v = misclassification_loss(&single(true), &frame1(1e3), &[0.0], &[1.0], MarginSign::Corrective).unwrap();
    assert!((v.value - ln1p_e()).abs() < 1e-12);

    let tp = PointPartition { tp_indices: vec![0], fp_indices: vec![], fn_indices: vec![], tn_indices: vec![] };
    let v = sector_cohesion_loss(&tp, &frame1(0.0), &[0.0]).unwrap();
    assert!((v.value - LN2).abs() < 1e-15);
    let v = sector_cohesion_loss(&tp, &frame1(50.0), &[0.0]).unwrap();
    assert!((v.value - ln1p_e()).abs() < 1e-12);

    let empty = PointPartition { tp_indices: vec![], fp_indices: vec![], fn_indices: vec![], tn_indices: vec![0] };
    let v = fine_loss(&empty, &frame1(0.1), &[0.0], &[1.0], MarginSign::Corrective, FineTerms::default()).unwrap();
    assert_eq!(v.value, 0.0);

    let only_fn = fine_loss(&single(true), &frame1(1.4), &[0.0], &[1.0], MarginSign::Corrective, FineTerms::default()).unwrap();
    let mc = misclassification_loss(&single(true), &frame1(1.4), &[0.0], &[1.0], MarginSign::Corrective).unwrap();
    assert_eq!(only_fn, mc);
}

#[test]
fn coarse_examples() {
    let g = SectorGrid::new(2, 3).unwrap();
    let a = RadialPolygon::new(Point3::new(1.0, 2.0, 3.0), vec![1.0, 2.0, 3.0, 1.5, 0.5, 0.7], g).unwrap();
    assert_eq!(coarse_loss(&a, &a).unwrap().value, 0.0);
    let b = RadialPolygon { rays: a.rays.iter().map(|r| r + 0.5).collect(), ..a.clone() };
    assert!((coarse_loss(&b, &a).unwrap().value - 0.5).abs() < 1e-15);
}

#[test]
fn classification_and_confidence_examples() {
    assert!(cls_loss(&[60.0, -60.0, -60.0], 0).unwrap().value < 1e-25);
    let m = BinaryMask::from_bits(vec![true, true, false]);
    let g = BinaryMask::from_bits(vec![true, false, false]);
    assert_eq!(conf_loss(0.5, &m, &g).unwrap().value, 0.0);
    assert_eq!(conf_loss_to_target(0.0, 1.0).value, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn partition_matches_per_point_oracle(seed in any::<u64>()) {
        let c = case(seed);
        let p = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).unwrap();
        let (mut tp, mut fp, mut fn_, mut tn) = (vec![], vec![], vec![], vec![]);
        for i in 0..c.deltas.len() {
            let inside = c.frame.radii[i] + c.deltas[i] <= c.rays[c.frame.sectors[i]];
            match (c.foreground[i], inside) {
                (true, true) => tp.push(i),
                (false, true) => fp.push(i),
                (true, false) => fn_.push(i),
                (false, false) => tn.push(i),
            }
        }
        prop_assert_eq!(p, PointPartition { tp_indices: tp, fp_indices: fp, fn_indices: fn_, tn_indices: tn });
    }

    #[test]
    fn margin_loss_matches_scalar_formula_and_differences(seed in any::<u64>()) {
        let c = case(seed);
        let p = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).unwrap();
        let v = misclassification_loss(&p, &c.frame, &c.deltas, &c.rays, MarginSign::Corrective).unwrap();
        let miss: Vec<(usize, f64)> = p.fn_indices.iter().map(|&i| (i, 1.0)).chain(p.fp_indices.iter().map(|&i| (i, -1.0))).collect();
        let formula = |d: &[f64]| -> f64 {
            if miss.is_empty() {
                return 0.0;
            }
            miss.iter()
                .map(|&(i, y)| softplus(y * (c.frame.radii[i] + d[i] - c.rays[c.frame.sectors[i]]).tanh()))
                .sum::<f64>()
                / miss.len() as f64
        };
        prop_assert!((v.value - formula(&c.deltas)).abs() < 1e-12);
        let numeric = central_difference(&c.deltas, FD_STEP, formula);
        for (a, n) in v.grad.iter().zip(&numeric) {
            prop_assert!(relative_error(*a, *n) < 1e-5, "{a} vs {n}");
        }
        for &i in &p.fn_indices {
            prop_assert!(v.grad[i] > 0.0);
        }
        for &i in &p.fp_indices {
            prop_assert!(v.grad[i] < 0.0);
        }
        for &i in p.tp_indices.iter().chain(&p.tn_indices) {
            prop_assert_eq!(v.grad[i], 0.0);
        }
    }

    #[test]
    fn printed_sign_reverses_the_pull(seed in any::<u64>()) {
        let c = case(seed);
        let p = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).unwrap();
        let a = misclassification_loss(&p, &c.frame, &c.deltas, &c.rays, MarginSign::Corrective).unwrap();
        let b = misclassification_loss(&p, &c.frame, &c.deltas, &c.rays, MarginSign::Printed).unwrap();
        for i in p.fn_indices.iter().chain(&p.fp_indices) {
            prop_assert!(a.grad[*i] * b.grad[*i] < 0.0);
        }
    }

    #[test]
    fn cohesion_matches_differences(seed in any::<u64>()) {
        let c = case(seed);
        let p = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).unwrap();
        let v = sector_cohesion_loss(&p, &c.frame, &c.deltas).unwrap();
        let f = |d: &[f64]| -> f64 {
            if p.tp_indices.is_empty() {
                return 0.0;
            }
            p.tp_indices.iter().map(|&i| softplus((d[i] + c.frame.radii[i]).tanh())).sum::<f64>() / p.tp_indices.len() as f64
        };
        prop_assert!((v.value - f(&c.deltas)).abs() < 1e-12);
        for (a, n) in v.grad.iter().zip(central_difference(&c.deltas, FD_STEP, f)) {
            prop_assert!(relative_error(*a, n) < 1e-5);
        }
        for &i in &p.tp_indices {
            prop_assert!(v.grad[i] > 0.0);
        }
    }

    #[test]
    fn per_point_terms_are_bounded(u in -40.0..40.0f64, fn_ in any::<bool>()) {
        let lo = (-1f64).exp().ln_1p();
        let v = misclassification_loss(&single(fn_), &frame1(1.0 + u), &[0.0], &[1.0], MarginSign::Corrective).unwrap();
        prop_assert!(v.value >= lo && v.value <= ln1p_e() + 1e-15);
        let tp = PointPartition { tp_indices: vec![0], fp_indices: vec![], fn_indices: vec![], tn_indices: vec![] };
        let s = sector_cohesion_loss(&tp, &frame1(u.abs()), &[0.0]).unwrap();
        prop_assert!(s.value >= lo && s.value <= ln1p_e() + 1e-15);
    }

    #[test]
    fn cohesion_increases_with_radius(a in -3.0..3.0f64, b in -3.0..3.0f64) {
        prop_assume!((a - b).abs() > 1e-6);
        let tp = PointPartition { tp_indices: vec![0], fp_indices: vec![], fn_indices: vec![], tn_indices: vec![] };
        let va = sector_cohesion_loss(&tp, &frame1(0.0), &[a]).unwrap().value;
        let vb = sector_cohesion_loss(&tp, &frame1(0.0), &[b]).unwrap().value;
        prop_assert_eq!(a < b, va < vb);
    }

    #[test]
    fn fine_loss_is_the_componentwise_sum(seed in any::<u64>(), mc in any::<bool>(), sc in any::<bool>()) {
        let c = case(seed);
        let p = classify_points(&c.frame, &c.deltas, &c.rays, &c.foreground).unwrap();
        let terms = FineTerms { misclassification: mc, cohesion: sc };
        let v = fine_loss(&p, &c.frame, &c.deltas, &c.rays, MarginSign::Corrective, terms).unwrap();
        let m = misclassification_loss(&p, &c.frame, &c.deltas, &c.rays, MarginSign::Corrective).unwrap();
        let s = sector_cohesion_loss(&p, &c.frame, &c.deltas).unwrap();
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        prop_assert!((v.value - (on(mc) * m.value + on(sc) * s.value)).abs() < 1e-12);
        for i in 0..c.deltas.len() {
            prop_assert!((v.grad[i] - (on(mc) * m.grad[i] + on(sc) * s.grad[i])).abs() < 1e-15);
        }
        prop_assert!(v.value >= 0.0);
    }

    #[test]
    fn coarse_matches_elementwise_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = SectorGrid::new(rng.gen_range(1..5), rng.gen_range(1..5)).unwrap();
        let poly = |rng: &mut ChaCha8Rng| RadialPolygon::new(
            Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            (0..g.sector_count()).map(|_| rng.gen_range(0.1..3.0)).collect(),
            g,
        ).unwrap();
        let (a, b) = (poly(&mut rng), poly(&mut rng));
        let rays: f64 = a.rays.iter().zip(&b.rays).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.rays.len() as f64;
        let center = (a.center.x - b.center.x).abs() + (a.center.y - b.center.y).abs() + (a.center.z - b.center.z).abs();
        prop_assert!((coarse_loss(&a, &b).unwrap().value - (rays + center)).abs() < 1e-12);
    }

    #[test]
    fn cls_loss_matches_log_softmax(logits in prop::collection::vec(-10.0..10.0f64, 1..6), pick in any::<prop::sample::Index>()) {
        let k = pick.index(logits.len());
        let v = cls_loss(&logits, k).unwrap();
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        prop_assert!((v.value - (z.ln() - logits[k])).abs() < 1e-10);
        let numeric = central_difference(&logits, FD_STEP, |l| cls_loss(l, k).unwrap().value);
        for (a, n) in v.grad.iter().zip(numeric) {
            prop_assert!(relative_error(*a, n) < 1e-5);
        }
    }
}
