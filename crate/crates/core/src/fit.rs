//! Single-region identification and its residual certificate.

use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, MonotoneSubmodel};
use crate::data::{Dataset, WeightIndicator};
use crate::error::{Error, Result};
use crate::lp::{build_fit_lp, solve_lp, LpStatus};

/// Slack on the residual bound `|q − F(Z)|/(q̄ − q̲) ≤ J/(ε·ω)`.
pub const BOUND_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Optimal weighted minimax cost.
    pub j: f64,
    /// Worst relative residual `max |q − F(Z)| / (q̄ − q̲)`.
    pub gamma: f64,
    pub n_samples: usize,
    /// Whether every sample meets `|q − F(Z)|/(q̄ − q̲) ≤ J/(ε·ω) + 1e-8`.
    pub bound_ok: bool,
}

/// Bundles the identification parameters shared by every fit.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub cfg: &'a BasisConfig,
    pub weights: &'a WeightIndicator,
}

impl<'a> FitContext<'a> {
    pub fn new(cfg: &'a BasisConfig, weights: &'a WeightIndicator) -> Self {
        FitContext { cfg, weights }
    }
}

/// Fits `(μ, L)` on the samples `idx` by the weighted minimax LP.
pub fn fit_region(
    ds: &Dataset,
    idx: &[usize],
    w: &WeightIndicator,
    cfg: &BasisConfig,
) -> Result<(MonotoneSubmodel, FitReport)> {
    let prob = build_fit_lp(ds, idx, w, cfg)?;
    let sol = solve_lp(&prob.lp)?;
    if sol.status != LpStatus::Optimal {
        log::error!("fit LP on {} samples ended with {:?}", idx.len(), sol.status);
        return Err(Error::Lp(sol.status));
    }
    let sub = prob.layout.submodel(&sol.x, cfg);
    let mut report = certify(&sub, ds, idx, w, cfg);
    // The monotone lift can only raise the cost above the LP optimum.
    report.j = report.j.max(sol.objective).max(0.0);
    Ok((sub, report))
}

/// `J = max ω(q,Z)·|B(ξ(q))μ − ZᵀL|` over `idx`.
pub fn weighted_cost(
    sub: &MonotoneSubmodel,
    ds: &Dataset,
    idx: &[usize],
    w: &WeightIndicator,
    cfg: &BasisConfig,
) -> f64 {
    let range = ds.range();
    idx.iter()
        .map(|&k| {
            let xi = range.xi(ds.q(k)).clamp(0.0, 1.0);
            let r = cfg.dot(xi, &sub.mu) - sub.linear_response(ds.z(k));
            w.weight(ds.tags(k)) * r.abs()
        })
        .fold(0.0, f64::max)
}

fn relative_error(sub: &MonotoneSubmodel, ds: &Dataset, k: usize, cfg: &BasisConfig) -> f64 {
    match sub.predict(cfg, ds.z(k), ds.range()) {
        Ok(f) => (ds.q(k) - f).abs() / ds.range().span(),
        Err(_) => f64::INFINITY,
    }
}

/// `γ = max |q − F(Z)| / (q̄ − q̲)` over `idx`, with `F` evaluated through the
/// actual inverse. Zero for an empty view.
pub fn residual(sub: &MonotoneSubmodel, ds: &Dataset, idx: &[usize], cfg: &BasisConfig) -> f64 {
    idx.iter()
        .map(|&k| relative_error(sub, ds, k, cfg))
        .fold(0.0, f64::max)
}

/// Recomputes `J`, `γ` and the residual-bound check for given parameters.
pub fn certify(
    sub: &MonotoneSubmodel,
    ds: &Dataset,
    idx: &[usize],
    w: &WeightIndicator,
    cfg: &BasisConfig,
) -> FitReport {
    let j = weighted_cost(sub, ds, idx, w, cfg);
    let mut gamma = 0.0_f64;
    let mut bound_ok = true;
    for &k in idx {
        let e = relative_error(sub, ds, k, cfg);
        gamma = gamma.max(e);
        let bound = j / (cfg.epsilon() * w.weight(ds.tags(k)));
        if e > bound + BOUND_TOL {
            bound_ok = false;
        }
    }
    FitReport {
        j,
        gamma,
        n_samples: idx.len(),
        bound_ok,
    }
}
