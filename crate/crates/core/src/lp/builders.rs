use super::{LinearProgram, RowLabel, SparseRow};
use crate::basis::{BasisConfig, MonotoneSubmodel, LP_GRID};
use crate::data::{Dataset, WeightIndicator};
use crate::error::{Error, Result};

/// Points of the uniform η grid the coordinate map is orthonormal on.
const COORD_GRID: usize = 257;

/// Relative residual below which a basis function counts as a combination
/// of the ones already kept.
pub const COORD_TOL: f64 = 1e-5;

/// Relative residual norm below which a regressor column counts as a linear
/// combination of the constant and the columns already kept.
pub const RANK_TOL: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Coordinates `μ = Tν` in which the basis functions are orthonormal over a
/// fine η grid. The fixed basis is close to collinear, so the LPs are posed
/// in `ν`; functions the grid cannot tell apart from the kept ones at
/// relative level [`COORD_TOL`] get no coordinate.
#[derive(Debug, Clone)]
pub struct BasisCoords {
    n_b: usize,
    /// Columns of `T`, each of length `n_b`.
    cols: Vec<Vec<f64>>,
}

impl BasisCoords {
    pub fn new(cfg: &BasisConfig) -> Self {
        let n_b = cfg.n_b();
        let scale = 1.0 / (COORD_GRID as f64).sqrt();
        let rows: Vec<Vec<f64>> = (0..COORD_GRID)
            .map(|g| {
                let mut b = vec![0.0; n_b];
                cfg.eval_into(g as f64 / (COORD_GRID - 1) as f64, &mut b);
                b.iter_mut().for_each(|v| *v *= scale);
                b
            })
            .collect();
        let apply = |c: &[f64]| -> Vec<f64> { rows.iter().map(|r| dot(r, c)).collect() };
        let unit = |j: usize| {
            let mut e = vec![0.0; n_b];
            e[j] = 1.0;
            e
        };
        let norms: Vec<f64> = (0..n_b).map(|j| norm(&apply(&unit(j)))).collect();
        let mut coef: Vec<Vec<f64>> = (0..n_b).map(unit).collect();
        let mut resid: Vec<Vec<f64>> = (0..n_b).map(|j| apply(&coef[j])).collect();
        let mut used = vec![false; n_b];
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        loop {
            let pick = (0..n_b)
                .filter(|&j| !used[j] && norms[j] > 0.0)
                .map(|j| (j, norm(&resid[j]) / norms[j]))
                .filter(|&(_, r)| r > COORD_TOL)
                .fold(None, |best: Option<(usize, f64)>, (j, r)| match best {
                    Some((_, b)) if b >= r => best,
                    _ => Some((j, r)),
                });
            let Some((j, _)) = pick else { break };
            used[j] = true;
            let mut c = std::mem::take(&mut coef[j]);
            let mut v = apply(&c);
            for _ in 0..2 {
                for (qk, ck) in q.iter().zip(&cols) {
                    let d = dot(qk, &v);
                    v.iter_mut().zip(qk).for_each(|(a, b)| *a -= d * b);
                    c.iter_mut().zip(ck).for_each(|(a, b)| *a -= d * b);
                }
            }
            let nv = norm(&v);
            if nv <= COORD_TOL * norms[j] {
                continue;
            }
            c.iter_mut().for_each(|a| *a /= nv);
            let qn = apply(&c);
            for i in (0..n_b).filter(|&i| !used[i]) {
                let d = dot(&qn, &resid[i]);
                resid[i].iter_mut().zip(&qn).for_each(|(a, b)| *a -= d * b);
                coef[i].iter_mut().zip(&c).for_each(|(a, b)| *a -= d * b);
            }
            q.push(qn);
            cols.push(c);
        }
        BasisCoords { n_b, cols }
    }

    /// Number of `ν` coordinates.
    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn to_mu(&self, nu: &[f64]) -> Vec<f64> {
        let mut mu = vec![0.0; self.n_b];
        for (c, &v) in self.cols.iter().zip(nu) {
            mu.iter_mut().zip(c).for_each(|(m, t)| *m += v * t);
        }
        mu
    }

    /// `out_k = b · T_k` for a row `b` over the original basis.
    fn project(&self, b: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.cols) {
            *o = dot(b, c);
        }
    }
}

/// Variable layout `[ν, L (n_z), t]` of the single-region fit LP.
#[derive(Debug, Clone)]
pub struct FitLayout {
    pub coords: BasisCoords,
    pub n_z: usize,
}

impl FitLayout {
    pub fn n_nu(&self) -> usize {
        self.coords.dim()
    }

    pub fn n_vars(&self) -> usize {
        self.n_nu() + self.n_z + 1
    }

    pub fn t(&self) -> usize {
        self.n_nu() + self.n_z
    }

    /// Submodel in the original basis from an LP solution, lifted until it
    /// is increasing on the check grid.
    pub fn submodel(&self, x: &[f64], cfg: &BasisConfig) -> MonotoneSubmodel {
        let n = self.n_nu();
        let mut sub = MonotoneSubmodel::new(self.coords.to_mu(&x[..n]), x[n..n + self.n_z].to_vec());
        sub.enforce_monotone(cfg);
        sub
    }
}

/// Data of one region in the joint LP.
#[derive(Debug, Clone)]
pub struct RegionView {
    pub id: usize,
    pub idx: Vec<usize>,
}

/// Variable layout of the joint LP: one `[ν, L, t]` block per region in view
/// order, followed by the shared `[ν̃, L̃]`.
#[derive(Debug, Clone)]
pub struct JointLayout {
    pub coords: BasisCoords,
    pub n_z: usize,
    pub n_regions: usize,
}

impl JointLayout {
    pub fn n_nu(&self) -> usize {
        self.coords.dim()
    }

    fn block(&self) -> usize {
        self.n_nu() + self.n_z + 1
    }

    pub fn n_vars(&self) -> usize {
        self.n_regions * self.block() + self.n_nu() + self.n_z
    }

    pub fn region_offset(&self, p: usize) -> usize {
        p * self.block()
    }

    pub fn t(&self, p: usize) -> usize {
        self.region_offset(p) + self.n_nu() + self.n_z
    }

    pub fn shared_offset(&self) -> usize {
        self.n_regions * self.block()
    }

    fn submodel_at(&self, x: &[f64], o: usize, cfg: &BasisConfig) -> MonotoneSubmodel {
        let n = self.n_nu();
        let mut sub = MonotoneSubmodel::new(
            self.coords.to_mu(&x[o..o + n]),
            x[o + n..o + n + self.n_z].to_vec(),
        );
        sub.enforce_monotone(cfg);
        sub
    }

    pub fn region_submodel(&self, x: &[f64], p: usize, cfg: &BasisConfig) -> MonotoneSubmodel {
        self.submodel_at(x, self.region_offset(p), cfg)
    }

    pub fn shared_submodel(&self, x: &[f64], cfg: &BasisConfig) -> MonotoneSubmodel {
        self.submodel_at(x, self.shared_offset(), cfg)
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub lp: LinearProgram,
    pub layout: FitLayout,
}

#[derive(Debug, Clone)]
pub struct JointProblem {
    pub lp: LinearProgram,
    pub layout: JointLayout,
}

/// Greedy pivoted Gram-Schmidt over the regressor columns restricted to
/// `idx`, seeded with the constant column. Components flagged false are
/// dependent on the kept ones; the LP builders pin their `L` entries to
/// zero, which leaves the achievable fit on these samples unchanged.
pub fn independent_regressors(ds: &Dataset, idx: &[usize]) -> Vec<bool> {
    let n_z = ds.n_z();
    let n = idx.len();
    let mut keep = vec![false; n_z];
    if n == 0 {
        return keep;
    }
    let mut cols: Vec<Vec<f64>> = (0..n_z)
        .map(|j| idx.iter().map(|&k| ds.z(k)[j]).collect())
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let q0 = vec![1.0 / (n as f64).sqrt(); n];
    let project_out = |c: &mut [f64], q: &[f64]| {
        let d = dot(c, q);
        c.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
    };
    for c in cols.iter_mut() {
        project_out(c, &q0);
    }
    let mut basis = vec![q0];
    loop {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n_z).filter(|&j| !keep[j] && norms[j] > 0.0) {
            let ratio = norm(&cols[j]) / norms[j];
            if ratio > RANK_TOL && best.map_or(true, |(_, b)| ratio > b) {
                best = Some((j, ratio));
            }
        }
        let Some((j, _)) = best else { break };
        let mut q = std::mem::take(&mut cols[j]);
        for b in &basis {
            project_out(&mut q, b);
        }
        let nq = norm(&q);
        if nq <= RANK_TOL * norms[j] {
            break;
        }
        q.iter_mut().for_each(|v| *v /= nq);
        keep[j] = true;
        for (i, c) in cols.iter_mut().enumerate() {
            if !keep[i] {
                project_out(c, &q);
            }
        }
        basis.push(q);
    }
    keep
}

/// Shared pieces of one LP build: the coordinate map and its grid rows.
struct Rows<'a> {
    ds: &'a Dataset,
    w: &'a WeightIndicator,
    cfg: &'a BasisConfig,
    coords: &'a BasisCoords,
    grid: Vec<Vec<f64>>,
}

impl<'a> Rows<'a> {
    fn new(
        ds: &'a Dataset,
        w: &'a WeightIndicator,
        cfg: &'a BasisConfig,
        coords: &'a BasisCoords,
    ) -> Self {
        let mut d = vec![0.0; cfg.n_b()];
        let grid = cfg
            .monotone_grid(LP_GRID.0, LP_GRID.1)
            .iter()
            .map(|&eta| {
                cfg.deriv_into(eta, &mut d);
                let mut out = vec![0.0; coords.dim()];
                coords.project(&d, &mut out);
                out
            })
            .collect();
        Rows {
            ds,
            w,
            cfg,
            coords,
            grid,
        }
    }

    /// Appends the epigraph residual rows of `idx`, the grid monotonicity
    /// rows and the pins of inactive regressors for the block at `offset`.
    fn push_region(
        &self,
        lp: &mut LinearProgram,
        idx: &[usize],
        offset: usize,
        t: usize,
        region: usize,
        active: &[bool],
    ) {
        let n_nu = self.coords.dim();
        let range = self.ds.range();
        let mut basis = vec![0.0; self.cfg.n_b()];
        let mut nu = vec![0.0; n_nu];
        for &k in idx {
            let omega = self.w.weight(self.ds.tags(k));
            let xi = range.xi(self.ds.q(k)).clamp(0.0, 1.0);
            self.cfg.eval_into(xi, &mut basis);
            self.coords.project(&basis, &mut nu);
            let z = self.ds.z(k);
            for (upper, sign) in [(true, 1.0), (false, -1.0)] {
                let mut row = SparseRow::default();
                for (j, &b) in nu.iter().enumerate() {
                    if b != 0.0 {
                        row.idx.push(offset + j);
                        row.val.push(sign * omega * b);
                    }
                }
                for (j, &zj) in z.iter().enumerate() {
                    if zj != 0.0 && active[j] {
                        row.idx.push(offset + n_nu + j);
                        row.val.push(-sign * omega * zj);
                    }
                }
                row.idx.push(t);
                row.val.push(-1.0);
                lp.add_ub(row, 0.0, RowLabel::Residual { region, sample: k, upper });
            }
        }
        pin_inactive(lp, offset + n_nu, active);
        for (g, d) in self.grid.iter().enumerate() {
            let row: SparseRow = d.iter().enumerate().map(|(j, &v)| (offset + j, -v)).collect();
            lp.add_ub(row, -self.cfg.epsilon(), RowLabel::Monotone { region, grid: g });
        }
    }
}

fn pin_inactive(lp: &mut LinearProgram, l_offset: usize, active: &[bool]) {
    for (j, _) in active.iter().enumerate().filter(|(_, a)| !**a) {
        let var = l_offset + j;
        let row = SparseRow {
            idx: vec![var],
            val: vec![1.0],
        };
        lp.add_eq(row, 0.0, RowLabel::Pinned { var });
    }
}

/// Epigraph form of the weighted minimax fit:
///
/// ```text
/// min t  s.t.  ±ω(q,Z)·(B(ξ(q))Tν − ZᵀL) ≤ t  for every sample,
///              [dB/dη(η)]·Tν ≥ ε  on the graded grid LP_GRID
/// ```
///
/// plus `L_j = 0` for the components [`independent_regressors`] drops.
/// Variables follow [`FitLayout`].
pub fn build_fit_lp(
    ds: &Dataset,
    idx: &[usize],
    w: &WeightIndicator,
    cfg: &BasisConfig,
) -> Result<FitProblem> {
    if idx.is_empty() {
        return Err(Error::EmptyData("fit LP needs at least one sample"));
    }
    let layout = FitLayout {
        coords: BasisCoords::new(cfg),
        n_z: ds.n_z(),
    };
    let mut c = vec![0.0; layout.n_vars()];
    c[layout.t()] = 1.0;
    let mut lp = LinearProgram::new(c);
    let rows = Rows::new(ds, w, cfg, &layout.coords);
    let active = independent_regressors(ds, idx);
    rows.push_region(&mut lp, idx, 0, layout.t(), 0, &active);
    Ok(FitProblem { lp, layout })
}

/// Joint LP over the regions in `views`: each gets its own `(ν, L, t)` with
/// epigraph residual rows and grid monotonicity rows, the cost is `Σ t`, and
/// each region whose id is in `constrained` has its parameters tied to the
/// shared `(ν̃, L̃)` by equality rows labelled with that id. Regressor
/// components dependent over the union of the constrained regions are pinned
/// to zero in the shared block and in every constrained block and get no
/// compatibility row; unconstrained regions use their own dependence test.
pub fn build_joint_lp(
    ds: &Dataset,
    views: &[RegionView],
    constrained: &[usize],
    w: &WeightIndicator,
    cfg: &BasisConfig,
) -> Result<JointProblem> {
    if views.is_empty() {
        return Err(Error::EmptyData("joint LP needs at least one region"));
    }
    if views.iter().any(|v| v.idx.is_empty()) {
        return Err(Error::EmptyData("joint LP region without samples"));
    }
    if let Some(bad) = constrained.iter().find(|id| !views.iter().any(|v| v.id == **id)) {
        return Err(Error::Config(format!("constrained region {bad} is not in the candidate set")));
    }
    let layout = JointLayout {
        coords: BasisCoords::new(cfg),
        n_z: ds.n_z(),
        n_regions: views.len(),
    };
    let n_nu = layout.n_nu();
    let mut c = vec![0.0; layout.n_vars()];
    for p in 0..views.len() {
        c[layout.t(p)] = 1.0;
    }
    let mut lp = LinearProgram::new(c);
    let rows = Rows::new(ds, w, cfg, &layout.coords);
    let union: Vec<usize> = views
        .iter()
        .filter(|v| constrained.contains(&v.id))
        .flat_map(|v| v.idx.iter().copied())
        .collect();
    let shared_active = if union.is_empty() {
        vec![true; layout.n_z]
    } else {
        independent_regressors(ds, &union)
    };
    for (p, v) in views.iter().enumerate() {
        let own;
        let active = if constrained.contains(&v.id) {
            &shared_active
        } else {
            own = independent_regressors(ds, &v.idx);
            &own
        };
        rows.push_region(&mut lp, &v.idx, layout.region_offset(p), layout.t(p), v.id, active);
    }
    let shared = layout.shared_offset();
    pin_inactive(&mut lp, shared + n_nu, &shared_active);
    for (p, v) in views.iter().enumerate() {
        if !constrained.contains(&v.id) {
            continue;
        }
        let o = layout.region_offset(p);
        for comp in 0..n_nu + layout.n_z {
            if comp >= n_nu && !shared_active[comp - n_nu] {
                continue;
            }
            let row = SparseRow {
                idx: vec![o + comp, shared + comp],
                val: vec![1.0, -1.0],
            };
            lp.add_eq(row, 0.0, RowLabel::Compat { region: v.id, component: comp });
        }
    }
    Ok(JointProblem { lp, layout })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coords_are_orthonormal_on_the_grid() {
        let cfg = BasisConfig::default();
        let coords = BasisCoords::new(&cfg);
        assert!(coords.dim() >= 2 && coords.dim() <= cfg.n_b());
        let n = COORD_GRID;
        let vals: Vec<Vec<f64>> = (0..n)
            .map(|g| {
                let b = cfg.eval(g as f64 / (n - 1) as f64).unwrap();
                let mut out = vec![0.0; coords.dim()];
                coords.project(&b, &mut out);
                out
            })
            .collect();
        for a in 0..coords.dim() {
            for b in 0..coords.dim() {
                let g: f64 = vals.iter().map(|v| v[a] * v[b]).sum::<f64>() / n as f64;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-6, "gram[{a}][{b}] = {g}");
            }
        }
    }

    #[test]
    fn coords_round_trip_through_mu() {
        let cfg = BasisConfig::default();
        let coords = BasisCoords::new(&cfg);
        let nu: Vec<f64> = (0..coords.dim()).map(|k| (k as f64 * 0.7).sin()).collect();
        let mu = coords.to_mu(&nu);
        for eta in [0.0, 0.3, 0.77, 1.0] {
            let b = cfg.eval(eta).unwrap();
            let mut p = vec![0.0; coords.dim()];
            coords.project(&b, &mut p);
            let direct: f64 = b.iter().zip(&mu).map(|(x, y)| x * y).sum();
            assert!((dot(&p, &nu) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn single_basis_function_keeps_one_coordinate() {
        let cfg = BasisConfig::uniform(1, 0.5, 1.0, 5).unwrap();
        let coords = BasisCoords::new(&cfg);
        assert_eq!(coords.dim(), cfg.n_b());
    }
}
