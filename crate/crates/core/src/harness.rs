//! Stirling-engine power plant, a sampled-search NMPC, closed-loop
//! simulation and learning-data extraction.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::{MimoModel, PwnlModel};

pub type State = [f64; 4];

/// Regressor length: state, reference state, reference input, error.
pub const N_REGRESSOR: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StirlingParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a6: f64,
    pub a7: f64,
    pub a8: f64,
    pub a9: f64,
    pub k: f64,
    pub x5_st: f64,
}

impl Default for StirlingParams {
    fn default() -> Self {
        StirlingParams {
            a1: 0.183,
            a2: 558.11,
            a3: 118.4453,
            a4: 9615.4,
            a6: 5101.1,
            a7: 641.02,
            a8: 425.53,
            a9: 6666.7,
            k: 0.5,
            x5_st: 50.0,
        }
    }
}

pub fn stirling_deriv(x: &State, u: f64, p: &StirlingParams) -> State {
    [
        -p.a1 * x[0] - p.a3 * x[1] + p.a2,
        -p.a4 * x[1] + p.a6 * x[0] - p.a7 * x[2],
        p.a8 * (x[1] - p.k * x[3] * u),
        p.a9 * (-p.x5_st + p.k * x[2] * u),
    ]
}

/// Classical RK4 step with `u` held constant over `dt`.
pub fn rk4_step<const N: usize>(
    f: impl Fn(&[f64; N], f64) -> [f64; N],
    x: &[f64; N],
    u: f64,
    dt: f64,
) -> [f64; N] {
    let shift = |a: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        std::array::from_fn(|i| a[i] + h * k[i])
    };
    let k1 = f(x, u);
    let k2 = f(&shift(x, &k1, 0.5 * dt), u);
    let k3 = f(&shift(x, &k2, 0.5 * dt), u);
    let k4 = f(&shift(x, &k3, dt), u);
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Steady state of the plant with `x₄` pinned to a reference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x: State,
    pub u: f64,
}

/// Solves `ẋ = 0` with `x₄ = x4r`. The first two equations give `x₂` and
/// `x₃` affine in `x₁`; `ẋ₃ = ẋ₄ = 0` then reduce to `x₂x₃ = x₄·x₅ˢᵗ`,
/// a quadratic in `x₁` whose smaller root with `x₃ > 0` is taken.
pub fn equilibrium(x4r: f64, p: &StirlingParams) -> Result<Equilibrium> {
    if !(x4r > 0.0) {
        return Err(Error::Config(format!("reference current must be positive, got {x4r}")));
    }
    let (c0, c1) = (p.a2 / p.a3, -p.a1 / p.a3);
    let (d0, d1) = (-p.a4 * c0 / p.a7, (p.a6 - p.a4 * c1) / p.a7);
    let target = x4r * p.x5_st;
    let qa = c1 * d1;
    let qb = c0 * d1 + c1 * d0;
    let qc = c0 * d0 - target;
    let x3_of = |x1: f64| d0 + d1 * x1;
    let x2_of = |x1: f64| c0 + c1 * x1;
    let roots: Vec<f64> = if qa.abs() < 1e-300 {
        vec![-qc / qb]
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Err(Error::Config(format!("no equilibrium with x4 = {x4r}")));
        }
        let s = disc.sqrt();
        let mut r = vec![(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)];
        r.sort_by(f64::total_cmp);
        r
    };
    let x1 = roots
        .into_iter()
        .find(|&x1| x3_of(x1) > 0.0 && x2_of(x1) > 0.0)
        .ok_or_else(|| Error::Config(format!("no positive equilibrium with x4 = {x4r}")))?;
    let x = [x1, x2_of(x1), x3_of(x1), x4r];
    let u = p.x5_st / (p.k * x[2]);
    Ok(Equilibrium { x, u })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcProblem {
    pub n_p: usize,
    pub q_diag: [f64; 4],
    pub r: f64,
    pub rho: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub soft_lo: [f64; 4],
    pub soft_hi: [f64; 4],
    /// Slack coefficient per state row.
    pub soft_coef: [f64; 4],
    pub t_s: f64,
    pub tau_u: f64,
    /// RK4 steps per prediction period; `round(tau_u / t_s)` integrates the
    /// prediction at the plant step.
    pub prediction_substeps: usize,
}

impl Default for MpcProblem {
    fn default() -> Self {
        MpcProblem {
            n_p: 3,
            q_diag: [1.0; 4],
            r: 1.0,
            rho: 1e4,
            u_lo: 0.0,
            u_hi: 1.0,
            soft_lo: [0.0, 4.5, 55.0, 1.0],
            soft_hi: [40.0, 5.5, 200.0, 25.0],
            soft_coef: [1.0, 0.1, 1.0, 1.0],
            t_s: 1e-4,
            tau_u: 1e-3,
            prediction_substeps: 10,
        }
    }
}

impl MpcProblem {
    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.prediction_substeps == 0 {
            return Err(Error::Config("n_p and prediction_substeps must be positive".into()));
        }
        if !(self.rho > 0.0 && self.t_s > 0.0 && self.tau_u > 0.0) {
            return Err(Error::Config("rho, t_s and tau_u must be positive".into()));
        }
        let ratio = self.tau_u / self.t_s;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::Config("tau_u must be an integer multiple of t_s".into()));
        }
        if self.soft_coef.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::Config("soft constraint coefficients must be positive".into()));
        }
        if !(self.u_lo < self.u_hi) {
            return Err(Error::Config("u_lo must be below u_hi".into()));
        }
        Ok(())
    }

    /// Smallest `δ ≥ 0` putting `x` inside the relaxed bounds.
    pub fn required_slack(&self, x: &State) -> f64 {
        (0..4)
            .map(|j| {
                let below = (self.soft_lo[j] - x[j]) / self.soft_coef[j];
                let above = (x[j] - self.soft_hi[j]) / self.soft_coef[j];
                below.max(above)
            })
            .fold(0.0, f64::max)
    }

    pub fn violates_soft(&self, x: &State) -> bool {
        self.required_slack(x) > 0.0
    }
}

/// Integrates the prediction model over one period `tau_u`.
pub fn predict_step(x: &State, u: f64, prob: &MpcProblem, p: &StirlingParams) -> State {
    let dt = prob.tau_u / prob.prediction_substeps as f64;
    let f = |x: &State, u: f64| stirling_deriv(x, u, p);
    let mut x = *x;
    for _ in 0..prob.prediction_substeps {
        x = rk4_step(f, &x, u, dt);
    }
    x
}

/// Horizon cost with the shared scalar slack: returns `(cost, δ)`.
pub fn soft_cost(
    u_seq: &[f64],
    x0: &State,
    reference: &Equilibrium,
    prob: &MpcProblem,
    p: &StirlingParams,
) -> Result<(f64, f64)> {
    if u_seq.len() != prob.n_p {
        return Err(Error::Dimension {
            expected: prob.n_p,
            got: u_seq.len(),
        });
    }
    if let Some(&u) = u_seq.iter().find(|&&u| !(prob.u_lo..=prob.u_hi).contains(&u)) {
        return Err(Error::Domain {
            value: u,
            lo: prob.u_lo,
            hi: prob.u_hi,
        });
    }
    Ok(soft_cost_unchecked(u_seq, x0, reference, prob, p))
}

fn soft_cost_unchecked(
    u_seq: &[f64],
    x0: &State,
    reference: &Equilibrium,
    prob: &MpcProblem,
    p: &StirlingParams,
) -> (f64, f64) {
    let mut x = *x0;
    let mut cost = 0.0;
    let mut delta = 0.0_f64;
    for &u in u_seq {
        x = predict_step(&x, u, prob, p);
        for j in 0..4 {
            let e = x[j] - reference.x[j];
            cost += prob.q_diag[j] * e * e;
        }
        let du = u - reference.u;
        cost += prob.r * du * du;
        delta = delta.max(prob.required_slack(&x));
    }
    if !cost.is_finite() {
        return (f64::INFINITY, delta);
    }
    (cost + prob.rho * delta * delta, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    pub grid_pts: usize,
    pub refine_rounds: usize,
    pub shrink: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            grid_pts: 7,
            refine_rounds: 3,
            shrink: 0.3,
        }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        if self.grid_pts < 2 {
            return Err(Error::Config("grid_pts must be at least 2".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Outcome of the coarse-to-fine search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub u_seq: Vec<f64>,
    pub cost: f64,
    /// Incumbent cost after round 0 and after every refinement.
    pub round_costs: Vec<f64>,
}

fn grid_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Coarse-to-fine grid search of `cost` over the box `[lo, hi]^dim`.
/// `inject` joins the round-0 candidates. The first minimum in enumeration
/// order wins, so the result is deterministic.
pub fn sampled_search(
    cost: impl Fn(&[f64]) -> f64 + Sync,
    dim: usize,
    lo: f64,
    hi: f64,
    inject: Option<&[f64]>,
    search: &SearchParams,
) -> SearchResult {
    let n = search.grid_pts;
    let total = n.pow(dim as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut round_costs = Vec::with_capacity(search.refine_rounds + 1);
    let mut width = hi - lo;
    for round in 0..=search.refine_rounds {
        let axes: Vec<Vec<f64>> = match &best {
            None => vec![grid_points(lo, hi, n); dim],
            Some((center, _)) => {
                width *= search.shrink;
                center
                    .iter()
                    .map(|&c| {
                        let a = (c - 0.5 * width).max(lo);
                        let b = (c + 0.5 * width).min(hi);
                        grid_points(a, b, n)
                    })
                    .collect()
            }
        };
        let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(total + 1);
        if round == 0 {
            if let Some(u) = inject {
                candidates.push(u.to_vec());
            }
        }
        for flat in 0..total {
            let mut rest = flat;
            let c: Vec<f64> = (0..dim)
                .map(|d| {
                    let v = axes[d][rest % n];
                    rest /= n;
                    v
                })
                .collect();
            candidates.push(c);
        }
        let costs: Vec<f64> = candidates.par_iter().map(|c| cost(c)).collect();
        for (c, v) in candidates.into_iter().zip(costs) {
            if best.as_ref().map_or(true, |(_, b)| v < *b) {
                best = Some((c, v));
            }
        }
        round_costs.push(best.as_ref().map_or(f64::INFINITY, |b| b.1));
    }
    let (u_seq, cost) = best.expect("at least one candidate");
    SearchResult {
        u_seq,
        cost,
        round_costs,
    }
}

/// Full search result for the horizon problem at `x0`.
pub fn nmpc_search(
    x0: &State,
    reference: &Equilibrium,
    prob: &MpcProblem,
    p: &StirlingParams,
    search: &SearchParams,
) -> SearchResult {
    let u_ref = reference.u.clamp(prob.u_lo, prob.u_hi);
    let inject = vec![u_ref; prob.n_p];
    sampled_search(
        |u| soft_cost_unchecked(u, x0, reference, prob, p).0,
        prob.n_p,
        prob.u_lo,
        prob.u_hi,
        Some(&inject),
        search,
    )
}

/// Receding-horizon input: the first element of the best sequence.
pub fn nmpc_oracle(
    x0: &State,
    reference: &Equilibrium,
    prob: &MpcProblem,
    p: &StirlingParams,
    search: &SearchParams,
) -> f64 {
    nmpc_search(x0, reference, prob, p, search).u_seq[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefStep {
    pub t: f64,
    pub x4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration: f64,
    /// Initial state; the equilibrium of the first reference when absent.
    #[serde(default)]
    pub x0: Option<State>,
    /// Piecewise-constant `x₄ʳ`; empty means `random_steps` random levels.
    #[serde(default)]
    pub reference: Vec<RefStep>,
    pub random_steps: usize,
    pub ref_range: [f64; 2],
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            duration: 0.5,
            x0: None,
            reference: vec![
                RefStep { t: 0.0, x4: 11.5 },
                RefStep { t: 0.5 / 3.0, x4: 12.5 },
                RefStep { t: 1.0 / 3.0, x4: 10.5 },
            ],
            random_steps: 3,
            ref_range: [10.0, 13.0],
            seed: 7,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0) {
            return Err(Error::Config("duration must be nonnegative".into()));
        }
        if !(self.ref_range[0] > 0.0 && self.ref_range[0] <= self.ref_range[1]) {
            return Err(Error::Config("ref_range must be positive and ordered".into()));
        }
        if self.reference.is_empty() && self.random_steps == 0 {
            return Err(Error::Config("scenario needs a reference".into()));
        }
        if self.reference.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(Error::Config("reference times must increase".into()));
        }
        if self.reference.first().is_some_and(|s| s.t > 0.0) {
            return Err(Error::Config("reference must start at t = 0".into()));
        }
        Ok(())
    }

    /// The reference steps, drawing random levels from the seed if none are
    /// listed.
    pub fn steps(&self) -> Vec<RefStep> {
        if !self.reference.is_empty() {
            return self.reference.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.random_steps;
        (0..n)
            .map(|i| RefStep {
                t: self.duration * i as f64 / n as f64,
                x4: rng.gen_range(self.ref_range[0]..=self.ref_range[1]),
            })
            .collect()
    }

    pub fn n_steps(&self, t_s: f64) -> usize {
        (self.duration / t_s).round() as usize
    }
}

/// Produces the plant input from the measured state and the reference.
pub trait Controller {
    fn control(&mut self, x: &State, reference: &Equilibrium) -> Result<f64>;
}

pub struct OracleController {
    pub prob: MpcProblem,
    pub params: StirlingParams,
    pub search: SearchParams,
}

impl Controller for OracleController {
    fn control(&mut self, x: &State, reference: &Equilibrium) -> Result<f64> {
        Ok(nmpc_oracle(x, reference, &self.prob, &self.params, &self.search))
    }
}

/// `Z = [x, xʳ, uʳ, x − xʳ]`.
pub fn regressor(x: &State, reference: &Equilibrium) -> [f64; N_REGRESSOR] {
    let mut z = [0.0; N_REGRESSOR];
    z[..4].copy_from_slice(x);
    z[4..8].copy_from_slice(&reference.x);
    z[8] = reference.u;
    for j in 0..4 {
        z[9 + j] = x[j] - reference.x[j];
    }
    z
}

/// Explicit controller evaluating a scalar model on the regressor.
pub struct ModelController<'a> {
    pub model: &'a PwnlModel,
    /// Wall time of every evaluation, in seconds.
    pub eval_times: Vec<f64>,
}

impl<'a> ModelController<'a> {
    pub fn new(model: &'a PwnlModel) -> Result<Self> {
        if model.n_z() != N_REGRESSOR {
            return Err(Error::Dimension {
                expected: N_REGRESSOR,
                got: model.n_z(),
            });
        }
        Ok(ModelController {
            model,
            eval_times: Vec::new(),
        })
    }
}

impl Controller for ModelController<'_> {
    fn control(&mut self, x: &State, reference: &Equilibrium) -> Result<f64> {
        let z = regressor(x, reference);
        let t0 = Instant::now();
        let u = self.model.eval(&z);
        self.eval_times.push(t0.elapsed().as_secs_f64());
        if !u.is_finite() {
            return Err(Error::Domain {
                value: u,
                lo: self.model.range().q_lo,
                hi: self.model.range().q_hi,
            });
        }
        Ok(u)
    }
}

/// First output of a multi-output model.
pub struct MimoController<'a> {
    pub model: &'a MimoModel,
}

impl Controller for MimoController<'_> {
    fn control(&mut self, x: &State, reference: &Equilibrium) -> Result<f64> {
        Ok(self.model.eval_mimo(&regressor(x, reference))[0].1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryDetector {
    /// Relative ∞-norm step-change threshold.
    pub tol: f64,
    pub run_len: usize,
}

impl Default for StationaryDetector {
    fn default() -> Self {
        StationaryDetector {
            tol: 1e-6,
            run_len: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub t: f64,
    pub x: State,
    pub u: f64,
    pub xr: State,
    pub ur: f64,
    pub stationary: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimLog {
    pub records: Vec<SimRecord>,
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn stationary_count(&self) -> usize {
        self.records.iter().filter(|r| r.stationary).count()
    }

    /// CSV `t,x1..x4,u,x4r,ur,stationary`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,x1,x2,x3,x4,u,x4r,ur,stationary")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.t,
                r.x[0],
                r.x[1],
                r.x[2],
                r.x[3],
                r.u,
                r.xr[3],
                r.ur,
                u8::from(r.stationary)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Steps the plant with RK4 at `t_s`, holding the controller output over
/// each step.
pub fn simulate_closed_loop(
    controller: &mut dyn Controller,
    scenario: &Scenario,
    prob: &MpcProblem,
    p: &StirlingParams,
    detector: &StationaryDetector,
) -> Result<SimLog> {
    scenario.validate()?;
    prob.validate()?;
    let n = scenario.n_steps(prob.t_s);
    if n == 0 {
        return Err(Error::EmptyData("scenario has zero duration"));
    }
    let steps = scenario.steps();
    let refs = steps
        .iter()
        .map(|s| equilibrium(s.x4, p))
        .collect::<Result<Vec<_>>>()?;
    let mut x = scenario.x0.unwrap_or(refs[0].x);
    let f = |x: &State, u: f64| stirling_deriv(x, u, p);
    let mut records = Vec::with_capacity(n);
    let mut run = 0usize;
    let mut seg = 0usize;
    for step in 0..n {
        let t = step as f64 * prob.t_s;
        while seg + 1 < steps.len() && t >= steps[seg + 1].t - 1e-12 {
            seg += 1;
            run = 0;
        }
        let reference = refs[seg];
        let u = controller.control(&x, &reference).map_err(|e| Error::Controller {
            step,
            source: Box::new(e),
        })?;
        let next = rk4_step(f, &x, u, prob.t_s);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Controller {
                step,
                source: Box::new(Error::Config("plant state diverged".into())),
            });
        }
        let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let change = (0..4).map(|j| (next[j] - x[j]).abs()).fold(0.0, f64::max);
        run = if change <= detector.tol * scale { run + 1 } else { 0 };
        records.push(SimRecord {
            t,
            x,
            u,
            xr: reference.x,
            ur: reference.u,
            stationary: run >= detector.run_len,
        });
        x = next;
    }
    Ok(SimLog { records })
}

/// One sample per log step: `Z = [x, xʳ, uʳ, x − xʳ]`, `q = u`.
pub fn build_learning_data(log: &SimLog) -> Result<Dataset> {
    if log.is_empty() {
        return Err(Error::EmptyData("simulation log is empty"));
    }
    let samples = log
        .records
        .iter()
        .map(|r| {
            let reference = Equilibrium { x: r.xr, u: r.ur };
            let mut s = Sample::new(regressor(&r.x, &reference).to_vec(), r.u);
            s.tags.stationary = r.stationary;
            s
        })
        .collect();
    Dataset::new(samples, N_REGRESSOR, None, None)
}

/// Closed-loop quality figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    /// Largest `|x₄ − x₄ʳ|` over the last 20% of every reference segment.
    pub steady_error: f64,
    pub input_violations: usize,
    pub soft_violations: usize,
    pub median_eval_seconds: Option<f64>,
}

pub fn summarize(log: &SimLog, prob: &MpcProblem, eval_times: Option<&[f64]>) -> SimSummary {
    let mut steady_error = 0.0_f64;
    let mut start = 0;
    while start < log.len() {
        let x4r = log.records[start].xr[3];
        let mut end = start;
        while end < log.len() && log.records[end].xr[3] == x4r {
            end += 1;
        }
        let tail = start + ((end - start) as f64 * 0.8).floor() as usize;
        for r in &log.records[tail..end] {
            steady_error = steady_error.max((r.x[3] - r.xr[3]).abs());
        }
        start = end;
    }
    let input_violations = log
        .records
        .iter()
        .filter(|r| !(prob.u_lo..=prob.u_hi).contains(&r.u))
        .count();
    let soft_violations = log.records.iter().filter(|r| prob.violates_soft(&r.x)).count();
    let median_eval_seconds = eval_times.filter(|t| !t.is_empty()).map(|t| {
        let mut v = t.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    });
    SimSummary {
        steady_error,
        input_violations,
        soft_violations,
        median_eval_seconds,
    }
}
