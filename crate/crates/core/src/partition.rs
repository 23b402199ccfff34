//! Hyperrectangular domain partitioning.
//!
//! Starting from the whole normalized domain, the cell with the worst
//! residual above σ is split by an axis-orthogonal hyperplane through the
//! centroid of its data, moved to the middle of the surrounding data gap.
//! Every axis is tried and the split with the largest residual gain is kept,
//! subject to the minimum edge length ν and minimum cardinality κ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, MonotoneSubmodel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fit_region, FitContext, FitReport};

/// Slack on the ν edge-length rule.
pub const EDGE_TOL: f64 = 1e-12;

/// Axis-aligned box in the normalized regressor space.
///
/// Membership is half-open, `lo ≤ z < hi` on each axis, except that the
/// upper face is closed where it lies on the domain boundary 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrectangle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Hyperrectangle {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Hyperrectangle { lo, hi }
    }

    pub fn unit(n_z: usize) -> Self {
        Hyperrectangle {
            lo: vec![0.0; n_z],
            hi: vec![1.0; n_z],
        }
    }

    pub fn n_z(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(z).all(|((&lo, &hi), &v)| {
            lo <= v && (v < hi || (hi >= 1.0 && v <= hi))
        })
    }

    pub fn edge(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn min_edge(&self) -> f64 {
        (0..self.n_z()).map(|a| self.edge(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        (0..self.n_z()).map(|a| self.edge(a)).product()
    }

    pub fn is_valid(&self) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .all(|(&lo, &hi)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi)
    }

    /// ∞-distance from `z` to the nearest facet not on the domain boundary.
    pub fn interior_facet_distance(&self, z: &[f64]) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..self.n_z() {
            if self.lo[a] > 0.0 {
                d = d.min((z[a] - self.lo[a]).abs());
            }
            if self.hi[a] < 1.0 {
                d = d.min((self.hi[a] - z[a]).abs());
            }
        }
        d
    }

    /// Whether the open interiors intersect.
    pub fn interiors_overlap(&self, other: &Hyperrectangle) -> bool {
        (0..self.n_z()).all(|a| self.lo[a].max(other.lo[a]) < self.hi[a].min(other.hi[a]))
    }

    /// Splits at `threshold` on `axis` into `(lower, upper)`.
    pub fn split(&self, axis: usize, threshold: f64) -> (Hyperrectangle, Hyperrectangle) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[axis] = threshold;
        right.lo[axis] = threshold;
        (left, right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub rect: Hyperrectangle,
    pub sample_idx: Vec<usize>,
    pub submodel_id: usize,
    pub report: FitReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Residual tolerance σ (relative to the output span).
    pub sigma: f64,
    /// Minimum edge length ν along the split axis.
    pub nu: f64,
    /// Minimum cell cardinality κ; floored at `n_b + n_z`.
    pub kappa: usize,
    pub max_regions: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            sigma: 0.03,
            nu: 0.05,
            kappa: 50,
            max_regions: 256,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        if self.kappa == 0 || self.max_regions == 0 {
            return Err(Error::Config("kappa and max_regions must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_kappa(&self, cfg: &BasisConfig, n_z: usize) -> usize {
        self.kappa.max(cfg.n_b() + n_z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRejected {
    MinSize,
    MinCardinality,
    SideEmpty,
}

#[derive(Debug, Clone)]
pub struct SplitCandidate {
    pub axis: usize,
    pub threshold: f64,
    pub left: (Cell, MonotoneSubmodel),
    pub right: (Cell, MonotoneSubmodel),
    pub gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStatus {
    /// Every cell meets σ.
    Converged,
    /// Some cell above σ admits no split.
    Frozen,
    MaxRegions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub cell: usize,
    pub axis: usize,
    pub threshold: f64,
    pub parent_gamma: f64,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub cells: Vec<Cell>,
    /// `submodels[i]` belongs to `cells[i]`.
    pub submodels: Vec<MonotoneSubmodel>,
    pub status: PartitionStatus,
    pub history: Vec<SplitRecord>,
}

impl Partition {
    pub fn max_gamma(&self) -> f64 {
        self.cells.iter().map(|c| c.report.gamma).fold(0.0, f64::max)
    }

    pub fn rects(&self) -> Vec<Hyperrectangle> {
        self.cells.iter().map(|c| c.rect.clone()).collect()
    }
}

/// Componentwise mean of the normalized regressors of `idx`.
pub fn centroid(ds: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    if idx.is_empty() {
        return Err(Error::EmptyData("centroid of an empty cell"));
    }
    let mut c = vec![0.0; ds.n_z()];
    for &k in idx {
        for (acc, v) in c.iter_mut().zip(ds.z(k)) {
            *acc += v;
        }
    }
    let n = idx.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    Ok(c)
}

/// Moves `t0` to the middle of the empty gap between the largest coordinate
/// below it and the smallest coordinate at or above it, which keeps the
/// induced left/right assignment unchanged.
pub fn max_margin_threshold(
    ds: &Dataset,
    idx: &[usize],
    axis: usize,
    t0: f64,
) -> std::result::Result<f64, SplitRejected> {
    let mut below = f64::NEG_INFINITY;
    let mut above = f64::INFINITY;
    for &k in idx {
        let v = ds.z(k)[axis];
        if v < t0 {
            below = below.max(v);
        } else {
            above = above.min(v);
        }
    }
    if below == f64::NEG_INFINITY || above == f64::INFINITY {
        return Err(SplitRejected::SideEmpty);
    }
    let mid = 0.5 * (below + above);
    // `mid` can round onto `below` when the gap is a few ulps wide.
    Ok(if mid > below { mid } else { above })
}

fn make_cell(
    ds: &Dataset,
    rect: Hyperrectangle,
    idx: Vec<usize>,
    ctx: FitContext<'_>,
) -> Result<(Cell, MonotoneSubmodel)> {
    let (sub, report) = fit_region(ds, &idx, ctx.weights, ctx.cfg)?;
    Ok((
        Cell {
            rect,
            sample_idx: idx,
            submodel_id: 0,
            report,
        },
        sub,
    ))
}

/// Splits `cell` along `axis` at the max-margin threshold around the data
/// centroid, fitting both children. Rejections come back as `Ok(Err(_))`.
pub fn try_split(
    ds: &Dataset,
    cell: &Cell,
    axis: usize,
    cfg: &PartitionConfig,
    ctx: FitContext<'_>,
) -> Result<std::result::Result<SplitCandidate, SplitRejected>> {
    let c = centroid(ds, &cell.sample_idx)?;
    let threshold = match max_margin_threshold(ds, &cell.sample_idx, axis, c[axis]) {
        Ok(t) => t,
        Err(r) => return Ok(Err(r)),
    };
    let (lrect, rrect) = cell.rect.split(axis, threshold);
    if lrect.edge(axis) < cfg.nu - EDGE_TOL || rrect.edge(axis) < cfg.nu - EDGE_TOL {
        return Ok(Err(SplitRejected::MinSize));
    }
    let (lidx, ridx): (Vec<usize>, Vec<usize>) =
        cell.sample_idx.iter().partition(|&&k| ds.z(k)[axis] < threshold);
    let kappa = cfg.effective_kappa(ctx.cfg, ds.n_z());
    if lidx.len() < kappa || ridx.len() < kappa {
        return Ok(Err(SplitRejected::MinCardinality));
    }
    let (left, right) = rayon::join(
        || make_cell(ds, lrect, lidx, ctx),
        || make_cell(ds, rrect, ridx, ctx),
    );
    let (left, right) = (left?, right?);
    let gain = cell.report.gamma - left.0.report.gamma.max(right.0.report.gamma);
    Ok(Ok(SplitCandidate {
        axis,
        threshold,
        left,
        right,
        gain,
    }))
}

/// Fits one submodel per given rectangle on the samples it contains.
/// The rectangles must tile the unit cube.
pub fn partition_from_rects(
    ds: &Dataset,
    rects: Vec<Hyperrectangle>,
    ctx: FitContext<'_>,
) -> Result<Partition> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); rects.len()];
    for k in 0..ds.len() {
        if let Some(i) = rects.iter().position(|r| r.contains(ds.z(k))) {
            members[i].push(k);
        }
    }
    if members.iter().any(|m| m.is_empty()) {
        return Err(Error::EmptyData("a cell holds no samples"));
    }
    let fitted: Vec<Result<(Cell, MonotoneSubmodel)>> = rects
        .into_par_iter()
        .zip(members)
        .map(|(r, idx)| make_cell(ds, r, idx, ctx))
        .collect();
    let mut cells = Vec::new();
    let mut submodels = Vec::new();
    for (i, f) in fitted.into_iter().enumerate() {
        let (mut cell, sub) = f?;
        cell.submodel_id = i;
        cells.push(cell);
        submodels.push(sub);
    }
    Ok(Partition {
        cells,
        submodels,
        status: PartitionStatus::Converged,
        history: Vec::new(),
    })
}

/// Worst-first iterative splitting until every cell meets σ, no admissible
/// split remains for a cell above σ, or `max_regions` is reached.
pub fn partition(ds: &Dataset, cfg: &PartitionConfig, ctx: FitContext<'_>) -> Result<Partition> {
    cfg.validate()?;
    let kappa = cfg.effective_kappa(ctx.cfg, ds.n_z());
    if ds.len() < kappa {
        return Err(Error::Config(format!(
            "dataset has {} samples, fewer than kappa = {kappa}",
            ds.len()
        )));
    }
    let (root, sub) = make_cell(ds, Hyperrectangle::unit(ds.n_z()), ds.all_indices(), ctx)?;
    let mut cells = vec![root];
    let mut submodels = vec![sub];
    let mut frozen = vec![false];
    let mut history = Vec::new();

    let status = loop {
        let worst = cells
            .iter()
            .enumerate()
            .filter(|(i, c)| !frozen[*i] && c.report.gamma > cfg.sigma)
            .fold(None::<(usize, f64)>, |best, (i, c)| match best {
                Some((_, g)) if g >= c.report.gamma => best,
                _ => Some((i, c.report.gamma)),
            });
        let Some((i, parent_gamma)) = worst else {
            break if cells.iter().any(|c| c.report.gamma > cfg.sigma) {
                PartitionStatus::Frozen
            } else {
                PartitionStatus::Converged
            };
        };
        if cells.len() >= cfg.max_regions {
            break PartitionStatus::MaxRegions;
        }
        let candidates: Vec<Result<std::result::Result<SplitCandidate, SplitRejected>>> = (0..ds.n_z())
            .into_par_iter()
            .map(|axis| try_split(ds, &cells[i], axis, cfg, ctx))
            .collect();
        let mut best: Option<SplitCandidate> = None;
        for cand in candidates {
            if let Ok(c) = cand? {
                // Strict comparison keeps the smallest axis on ties.
                if best.as_ref().map_or(true, |b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        let Some(best) = best else {
            log::debug!("cell {i} (gamma {parent_gamma:.4}) admits no split; frozen");
            frozen[i] = true;
            continue;
        };
        log::debug!(
            "split cell {i} on axis {} at {:.4}: gamma {parent_gamma:.4} -> {:.4}/{:.4}",
            best.axis,
            best.threshold,
            best.left.0.report.gamma,
            best.right.0.report.gamma
        );
        history.push(SplitRecord {
            cell: i,
            axis: best.axis,
            threshold: best.threshold,
            parent_gamma,
            gain: best.gain,
        });
        let (lcell, lsub) = best.left;
        let (rcell, rsub) = best.right;
        cells[i] = lcell;
        submodels[i] = lsub;
        cells.push(rcell);
        submodels.push(rsub);
        frozen.push(false);
    };
    for (i, c) in cells.iter_mut().enumerate() {
        c.submodel_id = i;
    }
    Ok(Partition {
        cells,
        submodels,
        status,
        history,
    })
}
