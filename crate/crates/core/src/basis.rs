//! Monotone function basis and the Wiener submodel `F(Z) = Γ⁻¹(LᵀZ)`.
//!
//! `Γ` is parametrized on the normalized output `η = ξ(q) ∈ [0, 1]` as a
//! linear combination of `n_b = 2·n_m` fixed rational functions:
//!
//! ```text
//! [1, B₁⁽²⁾ … B₁⁽ⁿᵐ⁾, B₂⁽¹⁾ … B₂⁽ⁿᵐ⁾]
//! B₁⁽ⁱ⁾(η) = (1 + αᵢ) η / (1 + αᵢ η)
//! B₂⁽ⁱ⁾(η) = η / (1 + αᵢ (1 − η))
//! αᵢ = exp(β (1 − i)) − 1
//! ```
//!
//! Strict monotonicity of `Γ` is imposed only at the points of `eta_grid`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack accepted on the `[0, 1]` domain checks.
pub const DOMAIN_TOL: f64 = 1e-12;

const MAX_BISECTION_STEPS: usize = 60;

/// Grid carrying the monotonicity rows of the fit LPs, as arguments of
/// [`BasisConfig::monotone_grid`]. The rational terms with `αᵢ` near −1 vary
/// on a scale of `1 + αᵢ` near the ends, finer than the default grid spacing.
pub const LP_GRID: (usize, f64) = (32, 0.02);

/// Grid used when checking and repairing a fitted submodel.
pub const CHECK_GRID: (usize, f64) = (128, 0.005);

/// `αᵢ = exp(β (1 − i)) − 1`, always in `(−1, 0]` for `i ≥ 1`.
pub fn alpha(i: usize, beta: f64) -> f64 {
    debug_assert!(i >= 1);
    (beta * (1.0 - i as f64)).exp() - 1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisConfigRepr {
    n_m: usize,
    beta: f64,
    epsilon: f64,
    eta_grid: Vec<f64>,
}

/// Identification parameters `(n_m, β, ε, η-grid)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisConfigRepr", into = "BasisConfigRepr")]
pub struct BasisConfig {
    n_m: usize,
    beta: f64,
    epsilon: f64,
    eta_grid: Vec<f64>,
    alphas: Vec<f64>,
}

impl TryFrom<BasisConfigRepr> for BasisConfig {
    type Error = Error;

    fn try_from(r: BasisConfigRepr) -> Result<Self> {
        BasisConfig::new(r.n_m, r.beta, r.epsilon, r.eta_grid)
    }
}

impl From<BasisConfig> for BasisConfigRepr {
    fn from(c: BasisConfig) -> Self {
        BasisConfigRepr {
            n_m: c.n_m,
            beta: c.beta,
            epsilon: c.epsilon,
            eta_grid: c.eta_grid,
        }
    }
}

impl Default for BasisConfig {
    /// `n_m = 10`, `β = 0.5`, `ε = 1`, uniform 50-point grid.
    fn default() -> Self {
        BasisConfig::uniform(10, 0.5, 1.0, 50).expect("default basis is valid")
    }
}

impl BasisConfig {
    pub fn new(n_m: usize, beta: f64, epsilon: f64, eta_grid: Vec<f64>) -> Result<Self> {
        if n_m == 0 {
            return Err(Error::Config("n_m must be at least 1".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if eta_grid.len() < 2 {
            return Err(Error::Config("eta grid needs at least 2 points".into()));
        }
        if eta_grid[0] != 0.0 || *eta_grid.last().unwrap() != 1.0 {
            return Err(Error::Config("eta grid must start at 0 and end at 1".into()));
        }
        if eta_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("eta grid must be strictly increasing".into()));
        }
        let alphas = (1..=n_m).map(|i| alpha(i, beta)).collect();
        Ok(BasisConfig {
            n_m,
            beta,
            epsilon,
            eta_grid,
            alphas,
        })
    }

    pub fn uniform(n_m: usize, beta: f64, epsilon: f64, n_grid: usize) -> Result<Self> {
        if n_grid < 2 {
            return Err(Error::Config("eta grid needs at least 2 points".into()));
        }
        let last = (n_grid - 1) as f64;
        let mut grid: Vec<f64> = (0..n_grid).map(|j| j as f64 / last).collect();
        grid[n_grid - 1] = 1.0;
        BasisConfig::new(n_m, beta, epsilon, grid)
    }

    pub fn n_m(&self) -> usize {
        self.n_m
    }

    /// Number of basis functions, `2·n_m`.
    pub fn n_b(&self) -> usize {
        2 * self.n_m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eta_grid(&self) -> &[f64] {
        &self.eta_grid
    }

    fn check_eta(eta: f64) -> Result<f64> {
        if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&eta) {
            return Err(Error::Domain {
                value: eta,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(eta.clamp(0.0, 1.0))
    }

    /// Basis row `B(η)` of length `n_b`.
    pub fn eval(&self, eta: f64) -> Result<Vec<f64>> {
        let eta = Self::check_eta(eta)?;
        let mut out = vec![0.0; self.n_b()];
        self.eval_into(eta, &mut out);
        Ok(out)
    }

    /// Analytic derivative `dB/dη` of length `n_b`.
    pub fn deriv(&self, eta: f64) -> Result<Vec<f64>> {
        let eta = Self::check_eta(eta)?;
        let mut out = vec![0.0; self.n_b()];
        self.deriv_into(eta, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_into(&self, eta: f64, out: &mut [f64]) {
        let n_m = self.n_m;
        out[0] = 1.0;
        for i in 2..=n_m {
            let a = self.alphas[i - 1];
            out[i - 1] = (1.0 + a) * eta / (1.0 + a * eta);
        }
        for i in 1..=n_m {
            let a = self.alphas[i - 1];
            out[n_m + i - 1] = eta / (1.0 + a * (1.0 - eta));
        }
    }

    pub(crate) fn deriv_into(&self, eta: f64, out: &mut [f64]) {
        let n_m = self.n_m;
        out[0] = 0.0;
        for i in 2..=n_m {
            let a = self.alphas[i - 1];
            let d = 1.0 + a * eta;
            out[i - 1] = (1.0 + a) / (d * d);
        }
        for i in 1..=n_m {
            let a = self.alphas[i - 1];
            let d = 1.0 + a * (1.0 - eta);
            out[n_m + i - 1] = (1.0 + a) / (d * d);
        }
    }

    /// `B(η)·μ` without allocating.
    pub(crate) fn dot(&self, eta: f64, mu: &[f64]) -> f64 {
        let n_m = self.n_m;
        let mut acc = mu[0];
        for i in 2..=n_m {
            let a = self.alphas[i - 1];
            acc += mu[i - 1] * (1.0 + a) * eta / (1.0 + a * eta);
        }
        for i in 1..=n_m {
            let a = self.alphas[i - 1];
            acc += mu[n_m + i - 1] * eta / (1.0 + a * (1.0 - eta));
        }
        acc
    }

    /// `[dB/dη](η)·μ` without allocating.
    pub(crate) fn deriv_dot(&self, eta: f64, mu: &[f64]) -> f64 {
        let n_m = self.n_m;
        let mut acc = 0.0;
        for i in 2..=n_m {
            let a = self.alphas[i - 1];
            let d = 1.0 + a * eta;
            acc += mu[i - 1] * (1.0 + a) / (d * d);
        }
        for i in 1..=n_m {
            let a = self.alphas[i - 1];
            let d = 1.0 + a * (1.0 - eta);
            acc += mu[n_m + i - 1] * (1.0 + a) / (d * d);
        }
        acc
    }

    /// The η grid with every interval split into `refine` equal parts, plus
    /// points graded towards both ends with spacing `step · (d + distance to
    /// the end)`, where `d = 1 + α_{n_m}` is the distance of the nearest pole
    /// of the rational terms. Sorted, no duplicates.
    pub fn monotone_grid(&self, refine: usize, step: f64) -> Vec<f64> {
        let refine = refine.max(1);
        let mut out = Vec::new();
        for w in self.eta_grid.windows(2) {
            for s in 0..refine {
                out.push(w[0] + (w[1] - w[0]) * s as f64 / refine as f64);
            }
        }
        out.push(1.0);
        let d = 1.0 + self.alphas[self.n_m - 1];
        let mut x = d * step;
        while x < 0.5 {
            out.push(x);
            out.push(1.0 - x);
            x = (x + d) * (1.0 + step) - d;
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        out
    }

    /// The `n_grid × n_b` matrix `[dB/dη(η-grid)]`.
    pub fn grid_derivatives(&self) -> Vec<Vec<f64>> {
        self.eta_grid
            .iter()
            .map(|&eta| {
                let mut row = vec![0.0; self.n_b()];
                self.deriv_into(eta, &mut row);
                row
            })
            .collect()
    }
}

/// Output interval `[q_lo, q_hi]` with the normalization `ξ(q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRange {
    pub q_lo: f64,
    pub q_hi: f64,
}

impl OutputRange {
    pub fn new(q_lo: f64, q_hi: f64) -> Result<Self> {
        if !(q_lo.is_finite() && q_hi.is_finite() && q_hi > q_lo) {
            return Err(Error::Config(format!(
                "output range needs q_hi > q_lo, got [{q_lo}, {q_hi}]"
            )));
        }
        Ok(OutputRange { q_lo, q_hi })
    }

    pub fn span(&self) -> f64 {
        self.q_hi - self.q_lo
    }

    pub fn xi(&self, q: f64) -> f64 {
        (q - self.q_lo) / self.span()
    }

    pub fn from_xi(&self, xi: f64) -> f64 {
        self.q_lo + xi * self.span()
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.q_lo, self.q_hi)
    }
}

/// Parameters `(μ, L)` of one Wiener submodel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneSubmodel {
    pub mu: Vec<f64>,
    #[serde(rename = "L")]
    pub linear_weights: Vec<f64>,
}

/// Outcome of checking `dΓ/dη` on a grid finer than the constraint grid.
#[derive(Debug, Clone)]
pub struct MonotonicityCheck {
    pub min_derivative: f64,
    /// `(η, dΓ/dη)` at every fine-grid point where the derivative is below ε.
    pub dips: Vec<(f64, f64)>,
}

impl MonotoneSubmodel {
    pub fn new(mu: Vec<f64>, linear_weights: Vec<f64>) -> Self {
        MonotoneSubmodel { mu, linear_weights }
    }

    pub fn n_z(&self) -> usize {
        self.linear_weights.len()
    }

    /// `LᵀZ` for a normalized regressor.
    pub fn linear_response(&self, z: &[f64]) -> f64 {
        self.linear_weights.iter().zip(z).map(|(l, z)| l * z).sum()
    }

    /// `Γ(q) = B(ξ(q))·μ`.
    pub fn gamma_eval(&self, cfg: &BasisConfig, q: f64, range: &OutputRange) -> Result<f64> {
        let xi = range.xi(q);
        if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&xi) {
            return Err(Error::Domain {
                value: q,
                lo: range.q_lo,
                hi: range.q_hi,
            });
        }
        Ok(cfg.dot(xi.clamp(0.0, 1.0), &self.mu))
    }

    /// Γ at the range endpoints: `(B(0)·μ, B(1)·μ) = (μ₁, Σμ)`.
    pub fn gamma_bounds(&self) -> (f64, f64) {
        (self.mu[0], self.mu.iter().sum())
    }

    /// Solves `Γ(q) = v` by bisection on `ξ ∈ [0, 1]`, saturating to the
    /// range endpoints when `v` falls outside `[Γ(q_lo), Γ(q_hi)]`.
    pub fn gamma_inverse(&self, cfg: &BasisConfig, v: f64, range: &OutputRange) -> Result<f64> {
        let (g_lo, g_hi) = self.gamma_bounds();
        if !(g_hi > g_lo) {
            return Err(Error::NotIncreasing { g_lo, g_hi });
        }
        Ok(self.invert_unchecked(cfg, v, range))
    }

    pub(crate) fn invert_unchecked(&self, cfg: &BasisConfig, v: f64, range: &OutputRange) -> f64 {
        let (g_lo, g_hi) = self.gamma_bounds();
        if v <= g_lo {
            return range.q_lo;
        }
        if v >= g_hi {
            return range.q_hi;
        }
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..MAX_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if cfg.dot(mid, &self.mu) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        range.from_xi(0.5 * (lo + hi))
    }

    /// `F(Z) = Γ⁻¹(LᵀZ)` for a normalized regressor.
    pub fn predict(&self, cfg: &BasisConfig, z: &[f64], range: &OutputRange) -> Result<f64> {
        self.gamma_inverse(cfg, self.linear_response(z), range)
    }

    pub(crate) fn predict_unchecked(&self, cfg: &BasisConfig, z: &[f64], range: &OutputRange) -> f64 {
        self.invert_unchecked(cfg, self.linear_response(z), range)
    }

    /// Smallest `[dB/dη(ηⱼ)]·μ − ε` over the constraint grid.
    pub fn grid_slack(&self, cfg: &BasisConfig) -> f64 {
        cfg.eta_grid()
            .iter()
            .map(|&eta| cfg.deriv_dot(eta, &self.mu) - cfg.epsilon())
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest `dΓ/dη − ε` over `cfg.monotone_grid(grid.0, grid.1)`.
    pub fn refined_slack(&self, cfg: &BasisConfig, grid: (usize, f64)) -> f64 {
        cfg.monotone_grid(grid.0, grid.1)
            .iter()
            .map(|&eta| cfg.deriv_dot(eta, &self.mu) - cfg.epsilon())
            .fold(f64::INFINITY, f64::min)
    }

    /// Lifts `dΓ/dη` uniformly through the `B₂⁽¹⁾(η) = η` term until it is at
    /// least ε on [`CHECK_GRID`]. Fitted submodels
    /// miss it by the LP tolerance or by small dips between LP rows.
    /// Returns the shift.
    pub fn enforce_monotone(&mut self, cfg: &BasisConfig) -> f64 {
        let grid = cfg.monotone_grid(CHECK_GRID.0, CHECK_GRID.1);
        let slack = |mu: &[f64]| {
            grid.iter()
                .map(|&eta| cfg.deriv_dot(eta, mu) - cfg.epsilon())
                .fold(f64::INFINITY, f64::min)
        };
        let mut total = 0.0;
        // Rounding in the derivative sums can leave a tiny deficit after
        // one lift when μ is large, hence the loop with a growing margin.
        for round in 0..8 {
            let s = slack(&self.mu);
            if s >= 0.0 {
                break;
            }
            let margin = f64::EPSILON * cfg.epsilon() * 16f64.powi(round);
            let shift = -s * (1.0 + 1e-9) + margin;
            self.mu[cfg.n_m()] += shift;
            total += shift;
        }
        total
    }

    pub fn satisfies_grid(&self, cfg: &BasisConfig, tol: f64) -> bool {
        self.grid_slack(cfg) >= -tol
    }

    /// Evaluates `dΓ/dη` with every grid interval subdivided `refine` times and
    /// reports the points where it falls below ε. Informational only.
    pub fn verify_fine_grid(&self, cfg: &BasisConfig, refine: usize) -> MonotonicityCheck {
        let refine = refine.max(1);
        let grid = cfg.eta_grid();
        let mut min_derivative = f64::INFINITY;
        let mut dips = Vec::new();
        let mut check = |eta: f64| {
            let d = cfg.deriv_dot(eta, &self.mu);
            min_derivative = min_derivative.min(d);
            if d < cfg.epsilon() {
                dips.push((eta, d));
            }
        };
        for w in grid.windows(2) {
            for s in 0..refine {
                check(w[0] + (w[1] - w[0]) * s as f64 / refine as f64);
            }
        }
        check(1.0);
        MonotonicityCheck {
            min_derivative,
            dips,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(n_m: usize) -> BasisConfig {
        BasisConfig::uniform(n_m, 0.5, 1.0, 50).unwrap()
    }

    /// Positive non-constant coefficients scaled so the grid constraint holds.
    fn increasing_submodel(cfg: &BasisConfig, rng: &mut ChaCha8Rng, n_z: usize) -> MonotoneSubmodel {
        let mut mu: Vec<f64> = (0..cfg.n_b()).map(|_| rng.gen_range(0.1..2.0)).collect();
        mu[0] = rng.gen_range(-1.0..1.0);
        let sub = MonotoneSubmodel::new(mu.clone(), vec![0.0; n_z]);
        let min_d = sub.grid_slack(cfg) + cfg.epsilon();
        let scale = 1.5 * cfg.epsilon() / min_d;
        for m in mu.iter_mut().skip(1) {
            *m *= scale.max(1.0);
        }
        MonotoneSubmodel::new(mu, vec![1.0; n_z])
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha(1, 0.5), 0.0);
        assert!((alpha(2, 0.5) - (-0.3934693402873666)).abs() < 1e-12);
        assert!((alpha(3, 0.5) - (-0.6321205588285577)).abs() < 1e-12);
        for i in 1..60 {
            let a = alpha(i, 0.5);
            assert!(a > -1.0 && a <= 0.0);
        }
    }

    #[test]
    fn basis_endpoints() {
        let c = cfg(4);
        let b0 = c.eval(0.0).unwrap();
        assert_eq!(b0[0], 1.0);
        assert!(b0[1..].iter().all(|&v| v == 0.0));
        let b1 = c.eval(1.0).unwrap();
        assert!(b1.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(b1.len(), 8);
    }

    #[test]
    fn basis_hand_values() {
        let c = cfg(2);
        let b = c.eval(0.5).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b[0], 1.0);
        assert!((b[1] - 0.37754066879814546).abs() < 1e-14);
        assert!((b[2] - 0.5).abs() < 1e-15);
        assert!((b[3] - 0.6224593312018546).abs() < 1e-14);
    }

    #[test]
    fn eval_rejects_out_of_domain() {
        let c = cfg(3);
        assert!(matches!(c.eval(1.0 + 1e-9), Err(Error::Domain { .. })));
        assert!(matches!(c.deriv(-1e-9), Err(Error::Domain { .. })));
        assert!(c.eval(1.0 + 1e-13).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(BasisConfig::new(0, 0.5, 1.0, vec![0.0, 1.0]).is_err());
        assert!(BasisConfig::new(2, 0.0, 1.0, vec![0.0, 1.0]).is_err());
        assert!(BasisConfig::new(2, 0.5, -1.0, vec![0.0, 1.0]).is_err());
        assert!(BasisConfig::new(2, 0.5, 1.0, vec![0.0]).is_err());
        assert!(BasisConfig::new(2, 0.5, 1.0, vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(BasisConfig::new(2, 0.5, 1.0, vec![0.1, 1.0]).is_err());
        let d = BasisConfig::default();
        assert_eq!((d.n_m(), d.n_b(), d.eta_grid().len()), (10, 20, 50));
    }

    #[test]
    fn derivative_closed_forms() {
        let c = cfg(5);
        let d0 = c.deriv(0.0).unwrap();
        assert_eq!(d0[0], 0.0);
        for i in 2..=5 {
            assert!((d0[i - 1] - (1.0 + alpha(i, 0.5))).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let c = cfg(6);
        let h = 1e-6;
        for k in 1..100 {
            let eta = k as f64 / 100.0;
            let d = c.deriv(eta).unwrap();
            let plus = c.eval(eta + h).unwrap();
            let minus = c.eval(eta - h).unwrap();
            for j in 0..c.n_b() {
                let fd = (plus[j] - minus[j]) / (2.0 * h);
                assert!((fd - d[j]).abs() < 1e-6, "component {j} at {eta}: {fd} vs {}", d[j]);
            }
        }
    }

    #[test]
    fn components_nondecreasing() {
        let c = cfg(10);
        let mut prev = c.eval(0.0).unwrap();
        for k in 1..=2000 {
            let cur = c.eval(k as f64 / 2000.0).unwrap();
            for (p, q) in prev.iter().zip(&cur) {
                assert!(q >= p);
            }
            prev = cur;
        }
    }

    #[test]
    fn gamma_constant_and_endpoint() {
        let c = cfg(3);
        let range = OutputRange::new(-2.0, 3.0).unwrap();
        let mut mu = vec![0.0; 6];
        mu[0] = 4.25;
        let sub = MonotoneSubmodel::new(mu, vec![]);
        for q in [-2.0, 0.0, 1.7, 3.0] {
            assert_eq!(sub.gamma_eval(&c, q, &range).unwrap(), 4.25);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sub = increasing_submodel(&c, &mut rng, 1);
        assert_eq!(sub.gamma_eval(&c, -2.0, &range).unwrap(), sub.mu[0]);
        assert!(sub.gamma_eval(&c, 3.1, &range).is_err());
    }

    #[test]
    fn gamma_increasing_on_random_pairs() {
        let c = cfg(10);
        let range = OutputRange::new(0.35, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sub = increasing_submodel(&c, &mut rng, 2);
        assert!(sub.satisfies_grid(&c, 0.0));
        for _ in 0..1000 {
            let a = rng.gen_range(range.q_lo..range.q_hi);
            let b = rng.gen_range(range.q_lo..range.q_hi);
            if a == b {
                continue;
            }
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            assert!(sub.gamma_eval(&c, lo, &range).unwrap() < sub.gamma_eval(&c, hi, &range).unwrap());
        }
    }

    #[test]
    fn inverse_endpoints_and_saturation() {
        let c = cfg(4);
        let range = OutputRange::new(1.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub = increasing_submodel(&c, &mut rng, 1);
        let (g_lo, g_hi) = sub.gamma_bounds();
        assert_eq!(sub.gamma_inverse(&c, g_hi, &range).unwrap(), 5.0);
        assert_eq!(sub.gamma_inverse(&c, g_hi + 1.0, &range).unwrap(), 5.0);
        assert_eq!(sub.gamma_inverse(&c, g_lo, &range).unwrap(), 1.0);
        assert_eq!(sub.gamma_inverse(&c, g_lo - 1.0, &range).unwrap(), 1.0);

        let v = 0.5 * (g_lo + g_hi);
        let q = sub.gamma_inverse(&c, v, &range).unwrap();
        let g = sub.gamma_eval(&c, q, &range).unwrap();
        assert!((g - v).abs() <= 1e-10 * (g_hi - g_lo));
    }

    #[test]
    fn inverse_rejects_non_increasing() {
        let c = cfg(2);
        let range = OutputRange::new(0.0, 1.0).unwrap();
        let sub = MonotoneSubmodel::new(vec![1.0, -1.0, 0.0, 0.0], vec![]);
        assert!(matches!(
            sub.gamma_inverse(&c, 0.5, &range),
            Err(Error::NotIncreasing { .. })
        ));
    }

    #[test]
    fn fine_grid_verification_reports_dips() {
        let c = BasisConfig::uniform(3, 0.5, 1.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let good = increasing_submodel(&c, &mut rng, 1);
        let chk = good.verify_fine_grid(&c, 10);
        assert!(chk.min_derivative.is_finite());
        // A coefficient pattern that is steep at the ends and negative in between.
        let bad = MonotoneSubmodel::new(vec![0.0, 50.0, 50.0, 0.0, 0.0, -60.0], vec![]);
        let chk = bad.verify_fine_grid(&c, 10);
        assert_eq!(chk.dips.is_empty(), chk.min_derivative >= 1.0);
    }

    proptest! {
        #[test]
        fn inverse_round_trip(seed in 0u64..1000, t in 0.0f64..=1.0) {
            let c = cfg(10);
            let range = OutputRange::new(0.35, 0.7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sub = increasing_submodel(&c, &mut rng, 1);
            let q = range.from_xi(t);
            let v = sub.gamma_eval(&c, q, &range).unwrap();
            let back = sub.gamma_inverse(&c, v, &range).unwrap();
            prop_assert!((back - q).abs() <= 1e-8 * range.span());
        }
    }
}
