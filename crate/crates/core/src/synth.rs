//! Seeded synthetic scenes: surface-sampled instances of a few shape
//! families inside a cube, plus uniform background clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cloud::{GroundTruthInstance, PointCloud, BACKGROUND};
use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Surface of a randomly rotated ellipsoid.
    Ellipsoid,
    /// Surface of a random star-shaped body: a smooth positive radial
    /// function of direction.
    StarConvex,
    /// Surface of an extruded L, which no single center sees whole.
    LShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub instance_count: usize,
    pub points_per_instance: usize,
    pub background_points: usize,
    /// Shape of instance `i` is `shapes[i % shapes.len()]`.
    pub shapes: Vec<ShapeFamily>,
    /// Side of the scene cube `[0, extent]^3`, meters.
    pub extent: f64,
    /// Gaussian jitter added to instance points, meters.
    pub noise_sigma: f64,
    /// Instance sizes are drawn from `[min_radius, max_radius]`, meters.
    pub min_radius: f64,
    pub max_radius: f64,
    pub class_count: usize,
    pub colors: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            instance_count: 3,
            points_per_instance: 400,
            background_points: 1500,
            shapes: vec![ShapeFamily::StarConvex],
            extent: 6.0,
            noise_sigma: 0.0,
            min_radius: 0.6,
            max_radius: 1.0,
            class_count: 3,
            colors: false,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.extent.is_finite() && self.extent > 0.0) {
            problems.push(format!("extent must be positive, got {}", self.extent));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            problems.push(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius && self.max_radius.is_finite()) {
            problems.push(format!(
                "radius range [{}, {}] is not a positive interval",
                self.min_radius, self.max_radius
            ));
        }
        if self.instance_count > 0 {
            if self.points_per_instance == 0 {
                problems.push("points_per_instance must be >= 1 when instances are requested".into());
            }
            if self.shapes.is_empty() {
                problems.push("shapes must not be empty when instances are requested".into());
            }
            if self.class_count == 0 {
                problems.push("class_count must be >= 1".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Class ids that can appear in generated scenes.
    pub fn classes(&self) -> Vec<i32> {
        (0..self.class_count.max(1) as i32).collect()
    }
}

type Rotation = [[f64; 3]; 3];

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(m: &Rotation, p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

fn unit(rng: &mut ChaCha8Rng) -> Point3 {
    Point3::from_array(UnitSphere.sample(rng))
}

/// Points on the surface of one shape of size ~`radius`, centred near the
/// origin. Every point lies within `radius` of the origin.
fn sample_shape(shape: ShapeFamily, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let rot = random_rotation(rng);
    match shape {
        ShapeFamily::Ellipsoid => {
            let axes: [f64; 3] = std::array::from_fn(|_| radius * rng.gen_range(0.5..=1.0));
            (0..count)
                .map(|_| {
                    let u = unit(rng);
                    rotate(&rot, Point3::new(axes[0] * u.x, axes[1] * u.y, axes[2] * u.z))
                })
                .collect()
        }
        ShapeFamily::StarConvex => {
            // r(u) = 1 + sum_k a_k sin(f_k <d_k, u> + psi_k), floored and rescaled
            let terms: Vec<(f64, f64, Point3, f64)> = (1..=3)
                .map(|k| {
                    (
                        rng.gen_range(-0.2..=0.2),
                        1.5 * k as f64,
                        unit(rng),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let radial = |u: Point3| -> f64 {
                let s: f64 = terms
                    .iter()
                    .map(|(a, f, d, psi)| a * (f * (d.x * u.x + d.y * u.y + d.z * u.z) + psi).sin())
                    .sum();
                (1.0 + s).max(0.35)
            };
            // 1 + sum |a_k| <= 1.6 bounds the radial function
            let scale = radius / 1.6;
            (0..count)
                .map(|_| {
                    let u = unit(rng);
                    u * (scale * radial(u))
                })
                .collect()
        }
        ShapeFamily::LShape => {
            // two boxes [0,len]x[0,w]x[0,h] and [0,w]x[0,len]x[0,h], surfaces
            // only, recentred so the bounding box is symmetric about the origin
            let len = 2.0 * radius * 0.62;
            let w = len * rng.gen_range(0.3..=0.4);
            let h = len * rng.gen_range(0.35..=0.5);
            let boxes = [[len, w, h], [w, len, h]];
            let areas: Vec<f64> = boxes
                .iter()
                .map(|b| 2.0 * (b[0] * b[1] + b[1] * b[2] + b[0] * b[2]))
                .collect();
            let offset = Point3::new(len / 2.0, len / 2.0, h / 2.0);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let which = usize::from(rng.gen_range(0.0..areas[0] + areas[1]) >= areas[0]);
                let p = sample_box_surface(boxes[which], rng);
                // drop faces buried inside the other box
                let other = boxes[1 - which];
                let buried = p.x < other[0] && p.y < other[1] && p.z > 0.0 && p.z < other[2]
                    && p.x > 0.0 && p.y > 0.0;
                if !buried {
                    out.push(rotate(&rot, p - offset));
                }
            }
            out
        }
    }
}

fn sample_box_surface(b: [f64; 3], rng: &mut ChaCha8Rng) -> Point3 {
    let faces = [b[1] * b[2], b[0] * b[2], b[0] * b[1]];
    let total = 2.0 * faces.iter().sum::<f64>();
    let mut pick = rng.gen_range(0.0..total);
    let mut axis = 0;
    while axis < 2 && pick >= 2.0 * faces[axis] {
        pick -= 2.0 * faces[axis];
        axis += 1;
    }
    let mut c: [f64; 3] = std::array::from_fn(|k| rng.gen_range(0.0..=b[k]));
    c[axis] = if rng.gen_bool(0.5) { 0.0 } else { b[axis] };
    Point3::from_array(c)
}

/// Generates a labelled scene. Instances are placed so their bounding
/// spheres (radius plus a noise allowance) do not overlap.
pub fn generate_scene(spec: &SceneSpec) -> Result<(PointCloud, Vec<GroundTruthInstance>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let pad = 3.0 * spec.noise_sigma;

    let mut placed: Vec<(Point3, f64)> = Vec::new();
    for _ in 0..spec.instance_count {
        let radius = rng.gen_range(spec.min_radius..=spec.max_radius);
        let reach = radius + pad;
        if 2.0 * reach >= spec.extent {
            return Err(Error::invalid(format!(
                "instance of radius {radius} does not fit in a scene of extent {}",
                spec.extent
            )));
        }
        let mut found = None;
        for _ in 0..1000 {
            let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(reach..=spec.extent - reach));
            let c = Point3::from_array(c);
            if placed.iter().all(|(q, rq)| q.distance(&c) > reach + rq) {
                found = Some(c);
                break;
            }
        }
        let c = found.ok_or_else(|| {
            Error::invalid(format!(
                "cannot place {} non-overlapping instances in a scene of extent {}",
                spec.instance_count, spec.extent
            ))
        })?;
        placed.push((c, reach));
    }

    let mut cloud = PointCloud::default();
    let mut colors = Vec::new();
    let mut gts = Vec::with_capacity(spec.instance_count);
    for (i, (center, reach)) in placed.iter().enumerate() {
        let shape = spec.shapes[i % spec.shapes.len()];
        let class_id = rng.gen_range(0..spec.class_count) as i32;
        let color: [u8; 3] = rng.gen();
        let radius = reach - pad;
        let start = cloud.points.len();
        for p in sample_shape(shape, radius, spec.points_per_instance, &mut rng) {
            let jitter = if spec.noise_sigma > 0.0 {
                Point3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Point3::ORIGIN
            };
            cloud.points.push(*center + p + jitter);
            cloud.instance_ids.push(i as i32);
            cloud.semantic_ids.push(class_id);
            colors.push(color);
        }
        gts.push(GroundTruthInstance {
            instance_id: i as i32,
            class_id,
            point_indices: (start..cloud.points.len()).collect(),
        });
    }
    for _ in 0..spec.background_points {
        let p: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..=spec.extent));
        cloud.points.push(Point3::from_array(p));
        cloud.instance_ids.push(BACKGROUND);
        cloud.semantic_ids.push(BACKGROUND);
        colors.push([128, 128, 128]);
    }
    if spec.colors {
        cloud.colors = Some(colors);
    }
    Ok((cloud, gts))
}
