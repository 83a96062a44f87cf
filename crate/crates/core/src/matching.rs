//! Proposal-to-ground-truth cost matrices and the least-cost injective
//! assignment between them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::BinaryMask;
use crate::cloud::{GroundTruthInstance, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{CenteredFrame, SectorGrid};
use crate::migration::{classify_points, cls_loss, coarse_loss, fine_loss, FineTerms, MarginSign, MigrationField};
use crate::radial::{exact_target, RadialPolygon};

/// How many times every ground-truth instance is repeated as a matching column.
pub const DEFAULT_DUPLICATION: usize = 4;

/// Row-major `rows x cols` matrix of finite, non-negative costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Error::check_len("cost entries", rows * cols, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite cost {v}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the assigned entries, accumulated in row order.
    pub total_cost: f64,
}

/// Minimum-cost assignment of `min(rows, cols)` pairs with no row or
/// column used twice (shortest augmenting paths with dual potentials).
///
/// A rectangular problem is solved directly on its short side rather than
/// padded; constant padding rows would not change the optimum.
pub fn hungarian_solve(c: &CostMatrix) -> Assignment {
    if c.rows == 0 || c.cols == 0 {
        return Assignment { pairs: Vec::new(), total_cost: 0.0 };
    }
    let mut pairs = if c.rows <= c.cols {
        solve_wide(c)
    } else {
        solve_wide(&c.transpose()).into_iter().map(|(a, b)| (b, a)).collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, col)| c.get(r, col)).sum();
    Assignment { pairs, total_cost }
}

/// Requires `rows <= cols`. Indices below are 1-based with 0 as the
/// virtual source column.
fn solve_wide(c: &CostMatrix) -> Vec<(usize, usize)> {
    let (n, m) = (c.rows, c.cols);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

/// Column-to-original mapping when every instance is repeated `factor`
/// times: column `c` refers to instance `c / factor`.
pub fn duplicate_gt(gt_count: usize, factor: usize) -> Vec<usize> {
    (0..gt_count).flat_map(|i| std::iter::repeat(i).take(factor)).collect()
}

/// Everything a proposal is compared against for one ground-truth instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTarget {
    pub instance_id: i32,
    pub class_id: i32,
    /// Position of `class_id` in the class list the logits are laid out by.
    pub class_index: usize,
    pub polygon: RadialPolygon,
    pub mask: BinaryMask,
}

impl InstanceTarget {
    pub fn new(cloud: &PointCloud, gt: &GroundTruthInstance, grid: SectorGrid, classes: &[i32]) -> Result<Self> {
        let class_index = classes
            .iter()
            .position(|&c| c == gt.class_id)
            .ok_or(Error::UnknownClass(gt.class_id))?;
        Ok(Self {
            instance_id: gt.instance_id,
            class_id: gt.class_id,
            class_index,
            polygon: exact_target(cloud, gt, grid)?,
            mask: BinaryMask::from_bits(gt.membership(cloud.len())),
        })
    }

    pub fn all(cloud: &PointCloud, gts: &[GroundTruthInstance], grid: SectorGrid, classes: &[i32]) -> Result<Vec<Self>> {
        gts.iter().map(|gt| Self::new(cloud, gt, grid, classes)).collect()
    }
}

/// A proposal as seen by the matcher: its polygon, per-point deltas and
/// class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub polygon: RadialPolygon,
    pub deltas: MigrationField,
    pub class_logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchOptions {
    pub sign: MarginSign,
    pub terms: FineTerms,
}

/// Coarse + fine + classification loss of one proposal against one target,
/// with the proposal's frame precomputed.
pub fn pair_cost(
    hyp: &Hypothesis,
    frame: &CenteredFrame,
    target: &InstanceTarget,
    opts: &MatchOptions,
) -> Result<f64> {
    let coarse = coarse_loss(&hyp.polygon, &target.polygon)?;
    let deltas = hyp.deltas.as_slice();
    let part = classify_points(frame, deltas, &hyp.polygon.rays, target.mask.bits())?;
    let fine = fine_loss(&part, frame, deltas, &hyp.polygon.rays, opts.sign, opts.terms)?;
    let cls = cls_loss(&hyp.class_logits, target.class_index)?;
    Ok(coarse.value + fine.value + cls.value)
}

/// Cost matrix with one row per hypothesis and `factor` columns per target;
/// also returns the column-to-target map.
pub fn build_cost_matrix(
    hyps: &[Hypothesis],
    targets: &[InstanceTarget],
    cloud: &PointCloud,
    factor: usize,
    opts: &MatchOptions,
) -> Result<(CostMatrix, Vec<usize>)> {
    let base: Vec<Vec<f64>> = hyps
        .par_iter()
        .map(|h| {
            Error::check_len("deltas", cloud.len(), h.deltas.len())?;
            let frame = CenteredFrame::new(&cloud.points, h.polygon.center, &h.polygon.grid)?;
            targets.iter().map(|t| pair_cost(h, &frame, t, opts)).collect()
        })
        .collect::<Result<_>>()?;
    let columns = duplicate_gt(targets.len(), factor);
    let mut data = Vec::with_capacity(hyps.len() * columns.len());
    for row in &base {
        data.extend(columns.iter().map(|&t| row[t]));
    }
    Ok((CostMatrix::new(hyps.len(), columns.len(), data)?, columns))
}
