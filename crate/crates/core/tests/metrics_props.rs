use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sphmask::{evaluate, BinaryMask, GroundTruthInstance, ScoredMask};

const N: usize = 16;
const CLASSES: [i32; 2] = [0, 1];

fn gt(id: i32, class: i32, idx: &[usize]) -> GroundTruthInstance {
    GroundTruthInstance { instance_id: id, class_id: class, point_indices: idx.to_vec() }
}

fn pred(class: i32, conf: f64, idx: &[usize], n: usize) -> ScoredMask {
    ScoredMask { class_id: class, confidence: conf, mask: BinaryMask::from_bits((0..n).map(|i| idx.contains(&i)).collect()) }
}

/// Random disjoint instances and noisy copies of them as predictions.
fn scene(seed: u64, distinct_conf: bool) -> (Vec<GroundTruthInstance>, Vec<ScoredMask>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt_count = rng.gen_range(1..=4);
    let owner: Vec<usize> = (0..N).map(|_| rng.gen_range(0..=gt_count)).collect();
    let gts: Vec<GroundTruthInstance> = (0..gt_count)
        .map(|g| gt(g as i32, CLASSES[rng.gen_range(0..2)], &(0..N).filter(|&i| owner[i] == g).collect::<Vec<_>>()))
        .filter(|g| !g.point_indices.is_empty())
        .collect();
    let count = rng.gen_range(0..=8);
    let preds = (0..count)
        .map(|k| {
            let bits: Vec<bool> = match gts.get(rng.gen_range(0..gts.len() + 1)) {
                Some(g) => (0..N).map(|i| g.point_indices.contains(&i) != rng.gen_bool(0.2)).collect(),
                None => (0..N).map(|_| rng.gen_bool(0.3)).collect(),
            };
            let confidence = if distinct_conf { (k as f64 + rng.gen_range(0.0..0.9)) / 10.0 } else { rng.gen_range(0..4) as f64 / 4.0 };
            ScoredMask { class_id: CLASSES[rng.gen_range(0..2)], confidence, mask: BinaryMask::from_bits(bits) }
        })
        .collect();
    (gts, preds)
}

#[test]
fn perfect_single_prediction() {
    let r = evaluate(&[pred(1, 1.0, &[0, 1, 2], 5)], &[gt(0, 1, &[0, 1, 2])], 5, &[1]).unwrap();
    assert_eq!((r.ap, r.ap50, r.ap25), (1.0, 1.0, 1.0));
}

#[test]
fn five_predictions_three_instances() {
    // Instance points: A = 0..4, B = 4..8, C = 8..12; points 12..16 background.
    let n = 16;
    let gts = vec![gt(0, 0, &[0, 1, 2, 3]), gt(1, 0, &[4, 5, 6, 7]), gt(2, 0, &[8, 9, 10, 11])];
    let preds = vec![
        pred(0, 0.9, &[0, 1, 2, 3], n),        // A, IoU 1
        pred(0, 0.8, &[4, 5, 6, 12, 13], n),   // B, IoU 3/6 = 0.5
        pred(0, 0.7, &[0, 1, 2], n),           // A again, IoU 0.75: duplicate
        pred(0, 0.6, &[8, 9, 10, 11, 14], n),  // C, IoU 0.8
        pred(0, 0.5, &[12, 13, 14, 15], n),    // background
    ];
    let r = evaluate(&preds, &gts, n, &[0]).unwrap();
    // IoU >= 0.5: hits T T F T F -> precision envelope 1, 1, 3/4 at the hits.
    assert_eq!(r.ap50, (1.0 + 1.0 + 0.75) / 3.0);
    // IoU >= 0.25: same hits.
    assert_eq!(r.ap25, r.ap50);
    // 0.55..0.80 drop B: hits T F F T F -> 1 and 2/4.
    // 0.85..0.95 keep only A: hits T F F F F -> 1.
    let high = (1.0 + 0.5) / 3.0;
    let top = 1.0 / 3.0;
    let expected = (r.ap50 + 6.0 * high + 3.0 * top) / 10.0;
    assert!((r.ap - expected).abs() < 1e-15, "{} vs {expected}", r.ap);
    assert_eq!(r.mprec50, 3.0 / 5.0);
    assert_eq!(r.mrec50, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn ap_is_ordered_by_threshold(seed in any::<u64>()) {
        let (gts, preds) = scene(seed, false);
        let r = evaluate(&preds, &gts, N, &CLASSES).unwrap();
        prop_assert!(r.ap <= r.ap50 + 1e-12 && r.ap50 <= r.ap25 + 1e-12, "{} {} {}", r.ap, r.ap50, r.ap25);
        for v in [r.ap, r.ap50, r.ap25, r.mprec50, r.mrec50] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn prediction_order_is_irrelevant(seed in any::<u64>(), shuffle in any::<u64>()) {
        let (gts, preds) = scene(seed, true);
        let mut shuffled = preds.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(evaluate(&preds, &gts, N, &CLASSES).unwrap(), evaluate(&shuffled, &gts, N, &CLASSES).unwrap());
    }

    #[test]
    fn duplicating_a_correct_prediction_never_helps(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (gts, mut preds) = scene(seed, false);
        let g = &gts[pick.index(gts.len())];
        preds.push(pred(g.class_id, 0.6, &g.point_indices, N));
        let before = evaluate(&preds, &gts, N, &CLASSES).unwrap();
        preds.push(preds.last().unwrap().clone());
        let after = evaluate(&preds, &gts, N, &CLASSES).unwrap();
        prop_assert!(after.ap <= before.ap && after.ap50 <= before.ap50 && after.ap25 <= before.ap25);
    }
}
