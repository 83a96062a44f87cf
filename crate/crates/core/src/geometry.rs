//! Spherical coordinates around an arbitrary origin and uniform angular
//! sector binning.
//!
//! Azimuth `theta` is the full-quadrant angle of the xy-projection, in
//! `(-pi, pi]`, measured from +x towards +y. Elevation `phi` is
//! `asin(dz / r)`, in `[-pi/2, pi/2]`. A point coinciding with the origin
//! has `r = 0` and both angles `0`.
//!
//! Sectors are laid out as `i_theta * n_phi + i_phi`. Bins are half-open
//! `[lo, hi)` except the last one of each axis, which also takes the upper
//! boundary (`theta = pi`, `phi = pi/2`).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalCoord {
    /// Checks the range invariants; errors on anything outside them.
    pub fn new(r: f64, theta: f64, phi: f64) -> Result<Self> {
        let s = Self { r, theta, phi };
        if !s.is_valid() {
            return Err(Error::invalid(format!(
                "spherical coordinate out of range: r={r}, theta={theta}, phi={phi}"
            )));
        }
        Ok(s)
    }

    pub fn is_valid(&self) -> bool {
        self.r.is_finite()
            && self.r >= 0.0
            && self.theta > -PI
            && self.theta <= PI
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.phi)
    }
}

/// Uniform `(n_theta, n_phi)` partition of the sphere of directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid")]
pub struct SectorGrid {
    n_theta: usize,
    n_phi: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_theta: usize,
    n_phi: usize,
}

impl TryFrom<RawGrid> for SectorGrid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        SectorGrid::new(raw.n_theta, raw.n_phi)
    }
}

impl SectorGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::invalid(format!(
                "sector grid needs at least one bin per axis, got {n_theta}x{n_phi}"
            )));
        }
        Ok(Self { n_theta, n_phi })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn sector_count(&self) -> usize {
        self.n_theta * self.n_phi
    }

    /// Lower edge of azimuth bin `k`; `k == n_theta` gives `pi`.
    pub fn theta_edge(&self, k: usize) -> f64 {
        axis_edge(-PI, PI, self.n_theta, k)
    }

    /// Lower edge of elevation bin `k`; `k == n_phi` gives `pi/2`.
    pub fn phi_edge(&self, k: usize) -> f64 {
        axis_edge(-FRAC_PI_2, FRAC_PI_2, self.n_phi, k)
    }
}

impl Default for SectorGrid {
    fn default() -> Self {
        Self { n_theta: 5, n_phi: 5 }
    }
}

impl fmt::Display for SectorGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.n_theta, self.n_phi)
    }
}

fn axis_edge(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if k >= n {
        hi
    } else {
        lo + (hi - lo) * (k as f64) / (n as f64)
    }
}

/// Bin index of `v` on a uniform axis, exact with respect to `axis_edge`.
fn axis_bin(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let guess = ((v - lo) / (hi - lo) * n as f64).floor();
    let mut k = if guess.is_nan() || guess < 0.0 {
        0
    } else {
        (guess as usize).min(n - 1)
    };
    // the division above can land one bin off near an edge
    while k > 0 && v < axis_edge(lo, hi, n, k) {
        k -= 1;
    }
    while k + 1 < n && v >= axis_edge(lo, hi, n, k + 1) {
        k += 1;
    }
    k
}

pub fn to_spherical(p: Point3, center: Point3) -> Result<SphericalCoord> {
    if !p.is_finite() || !center.is_finite() {
        return Err(Error::invalid("non-finite point or center"));
    }
    Ok(to_spherical_unchecked(p, center))
}

pub(crate) fn to_spherical_unchecked(p: Point3, center: Point3) -> SphericalCoord {
    let d = p - center;
    let r = d.norm();
    if r == 0.0 {
        return SphericalCoord { r: 0.0, theta: 0.0, phi: 0.0 };
    }
    let mut theta = d.y.atan2(d.x);
    if theta <= -PI {
        theta = PI;
    }
    let phi = (d.z / r).clamp(-1.0, 1.0).asin();
    SphericalCoord { r, theta, phi }
}

pub fn from_spherical(s: SphericalCoord, center: Point3) -> Result<Point3> {
    if !s.is_valid() || !center.is_finite() {
        return Err(Error::invalid("spherical coordinate out of range or non-finite center"));
    }
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Ok(Point3::new(
        center.x + s.r * cp * ct,
        center.y + s.r * cp * st,
        center.z + s.r * sp,
    ))
}

pub fn find_sector(s: &SphericalCoord, grid: &SectorGrid) -> usize {
    let it = axis_bin(s.theta, -PI, PI, grid.n_theta);
    let ip = axis_bin(s.phi, -FRAC_PI_2, FRAC_PI_2, grid.n_phi);
    it * grid.n_phi + ip
}

/// Radius and sector of every point in the frame centred at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteredFrame {
    pub radii: Vec<f64>,
    pub sectors: Vec<usize>,
}

impl CenteredFrame {
    pub fn new(points: &[Point3], center: Point3, grid: &SectorGrid) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::invalid("non-finite center"));
        }
        let mut radii = Vec::with_capacity(points.len());
        let mut sectors = Vec::with_capacity(points.len());
        for p in points {
            let s = to_spherical(*p, center)?;
            radii.push(s.r);
            sectors.push(find_sector(&s, grid));
        }
        Ok(Self { radii, sectors })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}
