//! Complexity reduction by forcing neighbouring regions onto one submodel.
//!
//! A region is the union of the cells sharing a submodel. Each iteration
//! picks a candidate set of regions, solves the joint LP with compatibility
//! equalities, and drops the region with the largest equality multiplier
//! until the shared parameters meet σ on every remaining region.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::basis::MonotoneSubmodel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{residual, FitContext};
use crate::lp::{build_joint_lp, solve_lp, LpStatus, RegionView, RowLabel};
use crate::partition::{Cell, Hyperrectangle};

/// Largest number of distinct regions in one candidate set.
pub const DEFAULT_MAX_CANDIDATES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStrategy {
    /// The worst untried region plus its adjacent regions.
    NeighborsOfWorst,
    /// One adjacent pair of regions at a time.
    AllPairsAdjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeConfig {
    /// Iteration cap; `None` means twice the initial region count.
    #[serde(default)]
    pub n_iter_max: Option<usize>,
    pub candidate_strategy: CandidateStrategy,
    pub sigma: f64,
    pub max_candidates: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            n_iter_max: None,
            candidate_strategy: CandidateStrategy::NeighborsOfWorst,
            sigma: 0.03,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter_max == Some(0) {
            return Err(Error::Config("n_iter_max must be at least 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.max_candidates < 2 {
            return Err(Error::Config("max_candidates must be at least 2".into()));
        }
        Ok(())
    }
}

/// Whether two boxes share a full facet: touching on one axis and
/// overlapping with positive length on every other axis.
pub fn rects_adjacent(a: &Hyperrectangle, b: &Hyperrectangle) -> bool {
    let n = a.n_z();
    let mut touching = None;
    for k in 0..n {
        if a.hi[k] == b.lo[k] || b.hi[k] == a.lo[k] {
            if touching.is_some() {
                return false;
            }
            touching = Some(k);
        }
    }
    let Some(axis) = touching else {
        return false;
    };
    (0..n)
        .filter(|&k| k != axis)
        .all(|k| a.lo[k].max(b.lo[k]) < a.hi[k].min(b.hi[k]))
}

pub fn adjacent(cells: &[Cell], i: usize, j: usize) -> bool {
    i != j && rects_adjacent(&cells[i].rect, &cells[j].rect)
}

/// Result of the compatible-subset search over a candidate set.
#[derive(Debug, Clone)]
pub struct CompatibleSubset {
    /// Region ids in the accepted subset `I`, ascending. Empty when no
    /// candidate meets σ even on its own.
    pub members: Vec<usize>,
    /// Joint-LP parameters of every candidate region at the final round.
    pub params: Vec<(usize, MonotoneSubmodel)>,
    pub shared: Option<MonotoneSubmodel>,
    /// `λ` per region of `I` at the final round.
    pub lambdas: Vec<(usize, f64)>,
    /// `max_{i ∈ I} γ_(i)` of the shared parameters.
    pub gamma: f64,
    pub objective: f64,
    pub rounds: usize,
}

impl CompatibleSubset {
    pub fn no_merge(&self) -> bool {
        self.members.is_empty()
    }
}

fn lambdas(
    sol: &crate::lp::LpSolution,
    labels: &[RowLabel],
    members: &[usize],
) -> Vec<(usize, f64)> {
    members
        .iter()
        .map(|&id| {
            let l = labels
                .iter()
                .zip(&sol.duals_eq)
                .filter(|(lab, _)| matches!(lab, RowLabel::Compat { region, .. } if *region == id))
                .map(|(_, d)| d.abs())
                .fold(0.0, f64::max);
            (id, l)
        })
        .collect()
}

/// Starting from `I = 𝓛`, solves the joint LP and removes the region with
/// the largest `λ` (∞-norm of its equality duals, smallest id on ties)
/// until the shared parameters meet σ on every region of `I`.
pub fn find_compatible_subset(
    ds: &Dataset,
    views: &[RegionView],
    sigma: f64,
    ctx: FitContext<'_>,
) -> Result<CompatibleSubset> {
    if views.is_empty() {
        return Err(Error::EmptyData("candidate set is empty"));
    }
    let mut members: Vec<usize> = views.iter().map(|v| v.id).collect();
    members.sort_unstable();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let prob = build_joint_lp(ds, views, &members, ctx.weights, ctx.cfg)?;
        let (lp, layout) = (&prob.lp, &prob.layout);
        let sol = solve_lp(lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::Lp(sol.status));
        }
        let shared = layout.shared_submodel(&sol.x, ctx.cfg);
        let gamma = views
            .iter()
            .filter(|v| members.contains(&v.id))
            .map(|v| residual(&shared, ds, &v.idx, ctx.cfg))
            .fold(0.0, f64::max);
        let params = views
            .iter()
            .enumerate()
            .map(|(p, v)| (v.id, layout.region_submodel(&sol.x, p, ctx.cfg)))
            .collect();
        let lam = lambdas(&sol, &lp.eq_labels, &members);
        log::trace!("compatible search round {rounds}: I = {members:?}, gamma {gamma:.4}");
        if gamma <= sigma {
            return Ok(CompatibleSubset {
                members,
                params,
                shared: Some(shared),
                lambdas: lam,
                gamma,
                objective: sol.objective,
                rounds,
            });
        }
        if members.len() == 1 {
            return Ok(CompatibleSubset {
                members: Vec::new(),
                params,
                shared: None,
                lambdas: lam,
                gamma,
                objective: sol.objective,
                rounds,
            });
        }
        let (drop, _) = lam
            .iter()
            .fold(None::<(usize, f64)>, |best, &(id, l)| match best {
                Some((_, bl)) if bl >= l => best,
                _ => Some((id, l)),
            })
            .expect("members is nonempty");
        members.retain(|&id| id != drop);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeRecord {
    /// Candidate set `𝓛` as region ids before the iteration.
    pub candidates: Vec<usize>,
    /// Accepted subset `I`.
    pub accepted: Vec<usize>,
    pub objective: f64,
    pub gamma: f64,
    pub merged: bool,
    /// Complexity after the iteration.
    pub s: usize,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    /// Submodel id of every input cell, ids compacted to `0..s`.
    pub assignment: Vec<usize>,
    pub submodels: Vec<MonotoneSubmodel>,
    pub r: usize,
    pub s: usize,
    pub history: Vec<MergeRecord>,
    /// Recertified `γ` of every cell under its final submodel.
    pub cell_gammas: Vec<f64>,
}

impl MergeOutcome {
    pub fn max_gamma(&self) -> f64 {
        self.cell_gammas.iter().copied().fold(0.0, f64::max)
    }

    pub fn merges(&self) -> usize {
        self.history.iter().filter(|h| h.merged).count()
    }
}

/// `γ` of every cell under its assigned submodel.
pub fn recertify(
    ds: &Dataset,
    cells: &[Cell],
    assignment: &[usize],
    submodels: &[MonotoneSubmodel],
    ctx: FitContext<'_>,
) -> Vec<f64> {
    cells
        .iter()
        .zip(assignment)
        .map(|(c, &id)| residual(&submodels[id], ds, &c.sample_idx, ctx.cfg))
        .collect()
}

struct Regions {
    /// Cell → region slot.
    assignment: Vec<usize>,
    /// Region slot → parameters, `None` once merged away.
    params: Vec<Option<MonotoneSubmodel>>,
    gamma: Vec<f64>,
    /// Cell adjacency, computed once.
    cell_adj: Vec<Vec<usize>>,
}

impl Regions {
    fn live(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.params.len()).filter(|&i| self.params[i].is_some())
    }

    fn count(&self) -> usize {
        self.live().count()
    }

    fn cells_of(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.assignment.len()).filter(move |&c| self.assignment[c] == id)
    }

    fn neighbors(&self, id: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for c in self.cells_of(id) {
            for &d in &self.cell_adj[c] {
                let other = self.assignment[d];
                if other != id {
                    out.insert(other);
                }
            }
        }
        out
    }

    fn view(&self, id: usize, cells: &[Cell]) -> RegionView {
        let mut idx: Vec<usize> = self
            .cells_of(id)
            .flat_map(|c| cells[c].sample_idx.iter().copied())
            .collect();
        idx.sort_unstable();
        RegionView { id, idx }
    }
}

/// Iteratively merges σ-feasible regions. Regions with `γ > σ` on input are
/// left untouched. Regions in the candidate set but outside the accepted
/// subset keep their previous parameters.
pub fn reduce(
    cells: &[Cell],
    submodels: &[MonotoneSubmodel],
    ds: &Dataset,
    cfg: &MergeConfig,
    ctx: FitContext<'_>,
) -> Result<MergeOutcome> {
    cfg.validate()?;
    if cells.is_empty() {
        return Err(Error::EmptyData("no cells to reduce"));
    }
    if let Some(c) = cells.iter().find(|c| c.submodel_id >= submodels.len()) {
        return Err(Error::Config(format!("cell references missing submodel {}", c.submodel_id)));
    }
    let cell_adj = (0..cells.len())
        .map(|i| (0..cells.len()).filter(|&j| adjacent(cells, i, j)).collect())
        .collect();
    let mut regions = Regions {
        assignment: cells.iter().map(|c| c.submodel_id).collect(),
        params: submodels.iter().cloned().map(Some).collect(),
        gamma: vec![0.0; submodels.len()],
        cell_adj,
    };
    let referenced: BTreeSet<usize> = regions.assignment.iter().copied().collect();
    for id in 0..submodels.len() {
        if !referenced.contains(&id) {
            regions.params[id] = None;
        }
    }
    let initial = recertify(ds, cells, &regions.assignment, submodels, ctx);
    for (c, g) in initial.iter().enumerate() {
        let id = regions.assignment[c];
        regions.gamma[id] = regions.gamma[id].max(*g);
    }
    let r = regions.count();
    let eligible = |regions: &Regions, id: usize| regions.gamma[id] <= cfg.sigma;
    let n_iter = cfg.n_iter_max.unwrap_or(2 * r).max(1);
    let mut history = Vec::new();
    let mut tried: BTreeSet<Vec<usize>> = BTreeSet::new();

    for _ in 0..n_iter {
        let Some(candidates) = next_candidates(&regions, cfg, &tried, &eligible) else {
            break;
        };
        tried.insert(candidate_key(&candidates, cfg));
        let views: Vec<RegionView> = candidates.iter().map(|&id| regions.view(id, cells)).collect();
        let found = find_compatible_subset(ds, &views, cfg.sigma, ctx)?;
        let merged = found.members.len() >= 2;
        if merged {
            let shared = found.shared.clone().expect("accepted subset carries parameters");
            // Recertify the merged region on each of its cells.
            let keep = found.members[0];
            let mut gamma = 0.0_f64;
            for &id in &found.members {
                for c in regions.cells_of(id).collect::<Vec<_>>() {
                    gamma = gamma.max(residual(&shared, ds, &cells[c].sample_idx, ctx.cfg));
                    regions.assignment[c] = keep;
                }
                if id != keep {
                    regions.params[id] = None;
                }
            }
            if gamma > cfg.sigma {
                return Err(Error::Config(format!(
                    "merged region failed recertification: gamma {gamma} > sigma {}",
                    cfg.sigma
                )));
            }
            regions.params[keep] = Some(shared);
            regions.gamma[keep] = gamma;
            tried.clear();
            log::debug!("merged regions {:?}; s = {}", found.members, regions.count());
        }
        history.push(MergeRecord {
            candidates,
            accepted: found.members,
            objective: found.objective,
            gamma: found.gamma,
            merged,
            s: regions.count(),
        });
    }

    // Compact slots to 0..s in order of first use by a cell.
    let mut remap: Vec<Option<usize>> = vec![None; regions.params.len()];
    let mut out_subs = Vec::new();
    let assignment: Vec<usize> = regions
        .assignment
        .iter()
        .map(|&slot| {
            *remap[slot].get_or_insert_with(|| {
                out_subs.push(regions.params[slot].clone().expect("live region"));
                out_subs.len() - 1
            })
        })
        .collect();
    let cell_gammas = recertify(ds, cells, &assignment, &out_subs, ctx);
    Ok(MergeOutcome {
        s: out_subs.len(),
        assignment,
        submodels: out_subs,
        r,
        history,
        cell_gammas,
    })
}

fn candidate_key(candidates: &[usize], cfg: &MergeConfig) -> Vec<usize> {
    match cfg.candidate_strategy {
        // Seed only: the rest of the set is a function of the seed.
        CandidateStrategy::NeighborsOfWorst => vec![candidates[0]],
        CandidateStrategy::AllPairsAdjacent => candidates.to_vec(),
    }
}

/// Picks the next untried candidate set, seeded by the worst eligible region.
/// The seed comes first; the rest follows in ascending id order.
fn next_candidates(
    regions: &Regions,
    cfg: &MergeConfig,
    tried: &BTreeSet<Vec<usize>>,
    eligible: &dyn Fn(&Regions, usize) -> bool,
) -> Option<Vec<usize>> {
    let mut seeds: Vec<usize> = regions.live().filter(|&id| eligible(regions, id)).collect();
    // Worst first; ties by id.
    seeds.sort_by(|&a, &b| regions.gamma[b].total_cmp(&regions.gamma[a]).then(a.cmp(&b)));
    for seed in seeds {
        let neighbors: Vec<usize> = regions
            .neighbors(seed)
            .into_iter()
            .filter(|&n| eligible(regions, n))
            .collect();
        if neighbors.is_empty() {
            continue;
        }
        match cfg.candidate_strategy {
            CandidateStrategy::NeighborsOfWorst => {
                if tried.contains(&vec![seed]) {
                    continue;
                }
                let mut set = vec![seed];
                set.extend(neighbors.into_iter().take(cfg.max_candidates - 1));
                return Some(set);
            }
            CandidateStrategy::AllPairsAdjacent => {
                for n in neighbors {
                    let pair = vec![seed.min(n), seed.max(n)];
                    if !tried.contains(&pair) {
                        return Some(pair);
                    }
                }
            }
        }
    }
    None
}
