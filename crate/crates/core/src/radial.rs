//! Radial polygons: a center plus one ray length per angular sector.
//!
//! A point is inside a polygon when its distance to the center is at most
//! the ray of the sector it falls in. Ground-truth targets close every
//! sector at its farthest instance point, so an instance is always fully
//! contained by its own exact-target polygon.

use serde::{Deserialize, Serialize};

use crate::cloud::{GroundTruthInstance, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{find_sector, to_spherical, to_spherical_unchecked, Point3, SectorGrid};

/// Ray length given to sectors without any instance point.
pub const MIN_RAY: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialPolygon {
    pub center: Point3,
    pub rays: Vec<f64>,
    pub grid: SectorGrid,
}

impl RadialPolygon {
    pub fn new(center: Point3, rays: Vec<f64>, grid: SectorGrid) -> Result<Self> {
        let poly = Self { center, rays, grid };
        poly.validate()?;
        Ok(poly)
    }

    pub fn validate(&self) -> Result<()> {
        Error::check_len("rays", self.grid.sector_count(), self.rays.len())?;
        if !self.center.is_finite() {
            return Err(Error::invalid("polygon center is not finite"));
        }
        if let Some(r) = self.rays.iter().find(|r| !(r.is_finite() && **r >= MIN_RAY)) {
            return Err(Error::invalid(format!("ray {r} below the {MIN_RAY} floor")));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point3) -> bool {
        let s = to_spherical_unchecked(p, self.center);
        s.r <= self.rays[find_sector(&s, &self.grid)]
    }
}

pub fn compute_center_target(cloud: &PointCloud, gt: &GroundTruthInstance) -> Result<Point3> {
    gt.validate(cloud.len())?;
    let n = gt.point_indices.len() as f64;
    let mut sum = [0.0f64; 3];
    for &i in &gt.point_indices {
        let p = cloud.points[i];
        sum[0] += p.x;
        sum[1] += p.y;
        sum[2] += p.z;
    }
    Ok(Point3::new(sum[0] / n, sum[1] / n, sum[2] / n))
}

pub fn compute_ray_targets(
    cloud: &PointCloud,
    gt: &GroundTruthInstance,
    center: Point3,
    grid: SectorGrid,
) -> Result<RadialPolygon> {
    gt.validate(cloud.len())?;
    let mut rays = vec![MIN_RAY; grid.sector_count()];
    for &i in &gt.point_indices {
        let s = to_spherical(cloud.points[i], center)?;
        let k = find_sector(&s, &grid);
        if s.r > rays[k] {
            rays[k] = s.r;
        }
    }
    RadialPolygon::new(center, rays, grid)
}

/// Center and ray targets of one ground-truth instance.
pub fn exact_target(
    cloud: &PointCloud,
    gt: &GroundTruthInstance,
    grid: SectorGrid,
) -> Result<RadialPolygon> {
    let center = compute_center_target(cloud, gt)?;
    compute_ray_targets(cloud, gt, center, grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn contains(&self, p: Point3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x * d.y * d.z
    }
}

pub fn aabb_of(cloud: &PointCloud, gt: &GroundTruthInstance) -> Result<Aabb> {
    gt.validate(cloud.len())?;
    let first = cloud.points[gt.point_indices[0]];
    let (mut min, mut max) = (first, first);
    for &i in &gt.point_indices[1..] {
        let p = cloud.points[i];
        min = Point3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
        max = Point3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
    }
    Ok(Aabb { min, max })
}

pub fn aabb_contains(b: &Aabb, p: Point3) -> bool {
    b.contains(p)
}

/// How many points outside an instance each representation encloses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRecord {
    pub instance_id: i32,
    pub class_id: i32,
    pub instance_points: usize,
    pub radial_enclosed_background: usize,
    pub aabb_enclosed_background: usize,
    pub radial_recall: f64,
    pub aabb_recall: f64,
}

pub fn tightness_report(
    cloud: &PointCloud,
    gts: &[GroundTruthInstance],
    grid: SectorGrid,
) -> Result<Vec<TightnessRecord>> {
    gts.iter()
        .map(|gt| {
            let poly = exact_target(cloud, gt, grid)?;
            let aabb = aabb_of(cloud, gt)?;
            let member = gt.membership(cloud.len());
            let (mut radial_bg, mut aabb_bg, mut radial_hit, mut aabb_hit) = (0, 0, 0, 0);
            for (p, &m) in cloud.points.iter().zip(&member) {
                let in_poly = poly.contains(*p);
                let in_box = aabb.contains(*p);
                if m {
                    radial_hit += usize::from(in_poly);
                    aabb_hit += usize::from(in_box);
                } else {
                    radial_bg += usize::from(in_poly);
                    aabb_bg += usize::from(in_box);
                }
            }
            let n = gt.point_indices.len();
            Ok(TightnessRecord {
                instance_id: gt.instance_id,
                class_id: gt.class_id,
                instance_points: n,
                radial_enclosed_background: radial_bg,
                aabb_enclosed_background: aabb_bg,
                radial_recall: radial_hit as f64 / n as f64,
                aabb_recall: aabb_hit as f64 / n as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::BACKGROUND;
    use crate::geometry::from_spherical;
    use crate::geometry::SphericalCoord;

    fn instance_cloud(points: Vec<Point3>) -> (PointCloud, GroundTruthInstance) {
        let n = points.len();
        let mut cloud = PointCloud::unlabeled(points);
        cloud.instance_ids = vec![0; n];
        cloud.semantic_ids = vec![1; n];
        let gt = GroundTruthInstance { instance_id: 0, class_id: 1, point_indices: (0..n).collect() };
        (cloud, gt)
    }

    #[test]
    fn center_examples() {
        let (c, gt) = instance_cloud(vec![Point3::ORIGIN, Point3::new(2.0, 0.0, 0.0)]);
        assert_eq!(compute_center_target(&c, &gt).unwrap(), Point3::new(1.0, 0.0, 0.0));
        let (c, gt) = instance_cloud(vec![Point3::new(3.0, 4.0, 5.0)]);
        assert_eq!(compute_center_target(&c, &gt).unwrap(), Point3::new(3.0, 4.0, 5.0));
        let empty = GroundTruthInstance { instance_id: 0, class_id: 1, point_indices: vec![] };
        assert!(compute_center_target(&c, &empty).is_err());
        assert!(aabb_of(&c, &empty).is_err());
    }

    #[test]
    fn single_point_ray_target() {
        let grid = SectorGrid::new(2, 2).unwrap();
        let p = from_spherical(SphericalCoord::new(2.0, 0.3, 0.4).unwrap(), Point3::ORIGIN).unwrap();
        let (c, gt) = instance_cloud(vec![p]);
        let poly = compute_ray_targets(&c, &gt, Point3::ORIGIN, grid).unwrap();
        let k = find_sector(&to_spherical(p, Point3::ORIGIN).unwrap(), &grid);
        for (i, r) in poly.rays.iter().enumerate() {
            if i == k {
                assert!((r - 2.0).abs() < 1e-12);
            } else {
                assert_eq!(*r, MIN_RAY);
            }
        }
    }

    #[test]
    fn same_sector_keeps_max() {
        let grid = SectorGrid::new(2, 2).unwrap();
        let a = from_spherical(SphericalCoord::new(1.0, 0.3, 0.4).unwrap(), Point3::ORIGIN).unwrap();
        let b = from_spherical(SphericalCoord::new(2.0, 0.3, 0.4).unwrap(), Point3::ORIGIN).unwrap();
        let (c, gt) = instance_cloud(vec![a, b]);
        let poly = compute_ray_targets(&c, &gt, Point3::ORIGIN, grid).unwrap();
        assert_eq!(poly.rays.iter().cloned().fold(0.0, f64::max), b.norm());
    }

    #[test]
    fn containment_examples() {
        let grid = SectorGrid::new(3, 3).unwrap();
        let pts = vec![
            Point3::new(1.0, 0.2, 0.1),
            Point3::new(-0.5, 0.7, 0.3),
            Point3::new(0.1, -0.9, -0.6),
        ];
        let (c, gt) = instance_cloud(pts.clone());
        let poly = exact_target(&c, &gt, grid).unwrap();
        assert!(poly.contains(poly.center));
        for p in &pts {
            assert!(poly.contains(*p));
        }
        // just beyond the farthest point of its sector
        let s = to_spherical(pts[0], poly.center).unwrap();
        let beyond = from_spherical(SphericalCoord { r: s.r + 0.1, ..s }, poly.center).unwrap();
        assert!(!poly.contains(beyond));
    }

    #[test]
    fn aabb_examples() {
        let (c, gt) = instance_cloud(vec![Point3::ORIGIN, Point3::new(1.0, 2.0, 3.0)]);
        let b = aabb_of(&c, &gt).unwrap();
        assert_eq!(b.min, Point3::ORIGIN);
        assert_eq!(b.max, Point3::new(1.0, 2.0, 3.0));
        assert!(aabb_contains(&b, Point3::new(1.0, 2.0, 3.0)));
        assert!(!aabb_contains(&b, Point3::new(1.0, 2.0, 3.0001)));
    }

    #[test]
    fn tightness_without_background() {
        let pts = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.5), Point3::new(-1.0, -1.0, 0.0)];
        let (c, gt) = instance_cloud(pts);
        let rep = tightness_report(&c, &[gt], SectorGrid::default()).unwrap();
        assert_eq!(rep[0].radial_enclosed_background, 0);
        assert_eq!(rep[0].aabb_enclosed_background, 0);
        assert_eq!(rep[0].radial_recall, 1.0);
        assert_eq!(rep[0].aabb_recall, 1.0);
    }

    #[test]
    fn single_sector_is_enclosing_ball() {
        let pts = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0), Point3::new(0.0, 0.5, 0.0)];
        let (mut c, gt) = instance_cloud(pts);
        let grid = SectorGrid::new(1, 1).unwrap();
        let poly = exact_target(&c, &gt, grid).unwrap();
        let radius = gt.point_indices.iter().map(|&i| c.points[i].distance(&poly.center)).fold(0.0, f64::max);
        assert_eq!(poly.rays, vec![radius]);
        c.points.push(poly.center + Point3::new(0.0, 0.0, radius * 0.99));
        c.instance_ids.push(BACKGROUND);
        c.semantic_ids.push(BACKGROUND);
        assert!(poly.contains(c.points[3]));
        assert!(!poly.contains(poly.center + Point3::new(0.0, 0.0, radius * 1.01)));
    }

    #[test]
    fn rejects_bad_polygons() {
        let g = SectorGrid::new(2, 1).unwrap();
        assert!(RadialPolygon::new(Point3::ORIGIN, vec![1.0], g).is_err());
        assert!(RadialPolygon::new(Point3::ORIGIN, vec![1.0, 0.0], g).is_err());
        assert!(RadialPolygon::new(Point3::ORIGIN, vec![1.0, 1.0], g).is_ok());
    }
}
