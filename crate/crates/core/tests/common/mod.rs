#![allow(dead_code)]

use pwnl_core::basis::{BasisConfig, MonotoneSubmodel, OutputRange, CHECK_GRID};
use pwnl_core::data::{Dataset, Sample, Scaler};
use pwnl_core::lp::{LinearProgram, RowLabel, SparseRow};
use pwnl_core::model::{ModelCell, ModelMeta, PwnlModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn basis(n_m: usize) -> BasisConfig {
    BasisConfig::uniform(n_m, 0.5, 1.0, 50).unwrap()
}

/// Random positive coefficients scaled until `dΓ/dη ≥ 1.2 ε` on the check
/// grid, with `Γ(0) = g0`.
pub fn increasing_mu(cfg: &BasisConfig, rng: &mut ChaCha8Rng, g0: f64) -> Vec<f64> {
    let mut mu: Vec<f64> = (0..cfg.n_b()).map(|_| rng.gen_range(0.2..1.0)).collect();
    mu[0] = g0;
    let probe = MonotoneSubmodel::new(mu.clone(), vec![]);
    let min_d = probe.refined_slack(cfg, CHECK_GRID) + cfg.epsilon();
    let scale = (1.2 * cfg.epsilon() / min_d).max(1.0);
    mu.iter_mut().skip(1).for_each(|m| *m *= scale);
    mu
}

/// `L` with positive entries whose response over the unit cube stays inside
/// `Γ`'s range, so no sample saturates.
pub fn inside_weights(mu: &[f64], n_z: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let span: f64 = mu[1..].iter().sum();
    let raw: Vec<f64> = (0..n_z).map(|_| rng.gen_range(0.3..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total * 0.8 * span).collect()
}

pub fn unit_range() -> OutputRange {
    OutputRange::new(0.0, 1.0).unwrap()
}

/// One monotone Wiener model on `[0,1]^n_z` with `q ∈ [0,1]`.
pub fn wiener_truth(n_m: usize, n_z: usize, seed: u64) -> PwnlModel {
    let cfg = basis(n_m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = increasing_mu(&cfg, &mut rng, -0.05);
    let l = inside_weights(&mu, n_z, &mut rng);
    PwnlModel::single(cfg, unit_range(), Scaler::identity(n_z), MonotoneSubmodel::new(mu, l)).unwrap()
}

/// Two cells split at `z₁ = 0.5`. With `identical` both carry the same
/// parameters; otherwise the right piece has a different Γ and the weights
/// reversed.
pub fn two_piece_truth(n_m: usize, identical: bool, seed: u64) -> PwnlModel {
    let cfg = basis(n_m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu_a = increasing_mu(&cfg, &mut rng, -0.05);
    let l_a = inside_weights(&mu_a, 2, &mut rng);
    let right = if identical {
        MonotoneSubmodel::new(mu_a.clone(), l_a.clone())
    } else {
        let mut mu_b = increasing_mu(&cfg, &mut rng, -0.05);
        mu_b.iter_mut().skip(1).for_each(|m| *m *= 2.0);
        let span: f64 = mu_b[1..].iter().sum();
        MonotoneSubmodel::new(mu_b, vec![0.2 * span, 0.7 * span])
    };
    let cells = vec![
        ModelCell {
            lo: vec![0.0, 0.0],
            hi: vec![0.5, 1.0],
            submodel: 0,
        },
        ModelCell {
            lo: vec![0.5, 0.0],
            hi: vec![1.0, 1.0],
            submodel: 1,
        },
    ];
    PwnlModel::new(
        cfg,
        unit_range(),
        Scaler::identity(2),
        cells,
        vec![MonotoneSubmodel::new(mu_a, l_a), right],
        ModelMeta::default(),
    )
    .unwrap()
}

/// Smooth nonlinear target plus uniform noise, with about 5% stationary
/// samples. Raw regressors in `[-1, 1]`, ranges taken from the data.
pub fn random_dataset(n: usize, n_z: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..n_z).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = z.iter().enumerate().map(|(j, v)| (v * (1.0 + j as f64 * 0.3)).sin()).sum::<f64>()
                + rng.gen_range(-0.2..0.2);
            let s = Sample::new(z, q);
            if rng.gen_bool(0.05) {
                s.stationary()
            } else {
                s
            }
        })
        .collect();
    Dataset::new(samples, n_z, None, None).unwrap()
}

/// Degenerate cases: constant output, duplicated and collinear regressor
/// columns, a single repeated point.
pub fn degenerate_dataset(kind: usize, n: usize, n_z: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let base: f64 = rng.gen_range(-1.0..1.0);
            let (z, q) = match kind % 4 {
                0 => ((0..n_z).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.4),
                1 => ((0..n_z).map(|j| base * (j as f64 + 1.0)).collect(), base.powi(3)),
                2 => (
                    (0..n_z).map(|j| if j % 2 == 0 { base } else { 2.0 - base }).collect(),
                    rng.gen_range(0.0..1.0),
                ),
                _ => (vec![0.25; n_z], if i % 2 == 0 { 0.1 } else { 0.9 }),
            };
            Sample::new(z, q)
        })
        .collect();
    Dataset::new(samples, n_z, None, None).unwrap()
}

/// Noise-free samples of `truth` with `z₁` uniform on `[0,1]` minus the band
/// `(0.5 − gap, 0.5 + gap)`, other components uniform.
pub fn banded_samples(truth: &PwnlModel, n: usize, gap: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_z = truth.n_z();
    let samples = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0 - 2.0 * gap);
            let mut z = vec![if u < 0.5 - gap { u } else { u + 2.0 * gap }];
            z.extend((1..n_z).map(|_| rng.gen::<f64>()));
            let q = truth.eval(&z);
            Sample::new(z, q)
        })
        .collect();
    Dataset::new(samples, n_z, Some(*truth.range()), Some(truth.scaler().clone())).unwrap()
}

/// Random bounded LP: box `|xᵢ| ≤ 10`, random rows keeping a random point
/// strictly feasible, `m_eq` equality rows through it.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m_ub: usize, m_eq: usize) -> LinearProgram {
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for j in 0..n {
        for s in [1.0, -1.0] {
            lp.add_ub(SparseRow::from_iter([(j, s)]), 10.0, RowLabel::Other);
        }
    }
    let dot = |a: &[f64]| a.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>();
    for _ in 0..m_ub {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = dot(&a) + rng.gen_range(0.1..2.0);
        lp.add_ub(SparseRow::from_dense(&a), b, RowLabel::Other);
    }
    for _ in 0..m_eq {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = dot(&a);
        lp.add_eq(SparseRow::from_dense(&a), b, RowLabel::Other);
    }
    lp
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(p, c);
        b.swap(p, c);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Minimum over all vertices: every equality row plus `n − m_eq`
/// inequality rows taken active. Bounded problems only.
pub fn vertex_min(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n_vars();
    let m_eq = lp.a_eq.len();
    let need = n.checked_sub(m_eq)?;
    let m = lp.a_ub.len();
    if need > m {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..need).collect();
    loop {
        {
            let mut a: Vec<Vec<f64>> = lp.a_eq.iter().map(|r| r.to_dense(n)).collect();
            let mut b = lp.b_eq.clone();
            for &i in &pick {
                a.push(lp.a_ub[i].to_dense(n));
                b.push(lp.b_ub[i]);
            }
            if let Some(x) = solve_dense(a, b) {
                if lp.max_violation(&x) < 1e-9 {
                    let v: f64 = lp.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                    best = Some(best.map_or(v, |b| b.min(v)));
                }
            }
        }
        // Next combination in lexicographic order.
        let mut i = need;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - need + i {
                pick[i] += 1;
                for k in i + 1..need {
                    pick[k] = pick[k - 1] + 1;
                }
                break;
            }
        }
    }
}
