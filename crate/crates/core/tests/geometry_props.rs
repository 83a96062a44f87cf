use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use sphmask::{find_sector, from_spherical, to_spherical, Point3, SectorGrid, SphericalCoord};

fn point() -> impl Strategy<Value = Point3> {
    (-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn grid() -> impl Strategy<Value = SectorGrid> {
    (1usize..=8, 1usize..=8).prop_map(|(t, p)| SectorGrid::new(t, p).unwrap())
}

/// Linear scan over explicit `[edge_k, edge_k+1)` pairs; the last bin is closed.
fn scan(value: f64, lo: f64, hi: f64, n: usize) -> usize {
    let edges: Vec<f64> = (0..=n).map(|k| if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 }).collect();
    (0..n)
        .find(|&k| edges[k] <= value && (value < edges[k + 1] || (k + 1 == n && value == hi)))
        .expect("value within range")
}

fn scan_sector(s: &SphericalCoord, g: &SectorGrid) -> usize {
    scan(s.theta, -PI, PI, g.n_theta()) * g.n_phi() + scan(s.phi, -FRAC_PI_2, FRAC_PI_2, g.n_phi())
}

#[test]
fn transform_examples() {
    let s = to_spherical(Point3::new(0.0, 0.0, 1.0), Point3::ORIGIN).unwrap();
    assert_eq!((s.r, s.theta, s.phi), (1.0, 0.0, FRAC_PI_2));
    let s = to_spherical(Point3::new(1.0, 0.0, 0.0), Point3::ORIGIN).unwrap();
    assert_eq!((s.r, s.theta, s.phi), (1.0, 0.0, 0.0));
    let s = to_spherical(Point3::ORIGIN, Point3::ORIGIN).unwrap();
    assert_eq!((s.r, s.theta, s.phi), (0.0, 0.0, 0.0));

    let p = from_spherical(SphericalCoord::new(1.0, 0.0, FRAC_PI_2).unwrap(), Point3::ORIGIN).unwrap();
    assert!(p.distance(&Point3::new(0.0, 0.0, 1.0)) < 1e-15);
    let c = Point3::new(1.0, 2.0, 3.0);
    assert_eq!(from_spherical(SphericalCoord::new(0.0, 0.0, 0.0).unwrap(), c).unwrap(), c);
}

#[test]
fn sector_examples() {
    let g22 = SectorGrid::new(2, 2).unwrap();
    assert_eq!(find_sector(&SphericalCoord::new(1.0, 0.0, 0.0).unwrap(), &g22), 3);
    let g55 = SectorGrid::new(5, 5).unwrap();
    let low = SphericalCoord::new(1.0, -PI + 1e-9, -FRAC_PI_2).unwrap();
    assert_eq!(find_sector(&low, &g55), 0);
    let top = SphericalCoord::new(1.0, PI, FRAC_PI_2).unwrap();
    assert_eq!(find_sector(&top, &g55), 24);
}

#[test]
fn exact_edges_follow_half_open_bins() {
    for n in 1..=8 {
        let g = SectorGrid::new(n, n).unwrap();
        for k in 0..n {
            let theta = g.theta_edge(k);
            let phi = g.phi_edge(k);
            if theta > -PI {
                let s = SphericalCoord::new(1.0, theta, phi).unwrap();
                assert_eq!(find_sector(&s, &g), scan_sector(&s, &g), "grid {g}, edge {k}");
            }
        }
    }
}

#[test]
fn theta_bins_fill_uniformly() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let g = SectorGrid::new(6, 3).unwrap();
    let n = 60_000;
    let mut counts = vec![0usize; 6];
    for _ in 0..n {
        let s = SphericalCoord::new(1.0, rng.gen_range(-PI..=PI), rng.gen_range(-FRAC_PI_2..=FRAC_PI_2)).unwrap();
        counts[find_sector(&s, &g) / g.n_phi()] += 1;
    }
    let expected = n as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 5 degrees of freedom; 20.5 is the 0.999 quantile.
    assert!(chi2 < 20.5, "chi2 {chi2} counts {counts:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(p in point(), c in point()) {
        prop_assume!(p.distance(&c) > 1e-6);
        let back = from_spherical(to_spherical(p, c).unwrap(), c).unwrap();
        let scale = (p - c).norm().max(c.norm()).max(1.0);
        prop_assert!(back.distance(&p) <= 1e-9 * scale, "{p:?} -> {back:?}");
    }

    #[test]
    fn output_is_a_valid_coordinate(p in point(), c in point()) {
        prop_assert!(to_spherical(p, c).unwrap().is_valid());
    }

    #[test]
    fn binning_is_scale_invariant(p in point(), g in grid(), e in -20i32..20) {
        prop_assume!(p.norm() > 1e-9);
        // Power-of-two scales keep the direction bit-identical.
        let s = 2f64.powi(e);
        let a = find_sector(&to_spherical(p, Point3::ORIGIN).unwrap(), &g);
        let b = find_sector(&to_spherical(p * s, Point3::ORIGIN).unwrap(), &g);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sector_matches_edge_scan(p in point(), c in point(), g in grid()) {
        let s = to_spherical(p, c).unwrap();
        let k = find_sector(&s, &g);
        prop_assert!(k < g.sector_count());
        prop_assert_eq!(k, scan_sector(&s, &g));
    }
}
