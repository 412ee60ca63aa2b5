//! Acceptance gate: one test per quantitative target and property suite, each
//! emitting a single pass/fail line. The Monte Carlo targets pin the
//! simulation-table magnitudes at n = 5000, R = 200 (R = 100 for the
//! bootstrap study); the fast suites check the numerical identities the
//! estimators rely on.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use selsieve::basis::{bspline_row, place_knots, TensorSpec};
use selsieve::decompose::{decompose, CategoryStats, GroupStats};
use selsieve::firststage::{
    elementary_symmetric, fit_mnl, norm_ppf, truncated_correction, LogisticObjective,
    MnlObjective, OrderedObjective,
};
use selsieve::montecarlo::{
    run_bootstrap_study, run_study, DgpTag, Estimator, SimConfig,
};
use selsieve::optim::Objective;
use selsieve::secondstage::{
    expand_controls, fit_partially_linear, ControlSpec, ControlVariant,
};
use std::time::Instant;

fn cfg(dgp: DgpTag, r: usize, estimators: Vec<Estimator>, delta: f64) -> SimConfig {
    SimConfig { dgp, n: 5000, replications: r, seed: 7, estimators, delta, bootstrap: None }
}

fn check(name: &str, ok: bool, detail: &str) {
    println!("{name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name} failed: {detail}");
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

#[test]
fn criterion_01_ordered_dgp1_table() {
    let start = Instant::now();
    let t = run_study(&cfg(
        DgpTag::Ordered(1),
        200,
        vec![Estimator::Ols, Estimator::Linear, Estimator::Oracle, Estimator::Sieve],
        1.0,
    ))
    .unwrap();
    let (_, ols_bias, _) = t.avg_by_category("OLS", 1).unwrap();
    let (sieve_rmse, _, _) = t.avg_by_category("Sieve", 1).unwrap();
    let (_, _, oracle_cov) = t.avg_by_category("Oracle", 1).unwrap();
    let (linear_rmse, _, _) = t.avg_by_category("Linear", 1).unwrap();
    let mins = start.elapsed().as_secs_f64() / 60.0;
    check(
        "criterion 1 (ordered DGP1)",
        within(ols_bias, 0.65, 0.75)
            && within(sieve_rmse, 0.06, 0.13)
            && within(oracle_cov, 0.85, 0.96)
            && linear_rmse > 1.0
            && mins <= 30.0,
        &format!(
            "OLS bias {ols_bias:.4}, Sieve RMSE {sieve_rmse:.4}, Oracle cov {oracle_cov:.3}, \
             Linear RMSE {linear_rmse:.2}, {mins:.1} min"
        ),
    );
}

#[test]
fn criterion_02_ordered_dgp2_table() {
    let t = run_study(&cfg(
        DgpTag::Ordered(2),
        200,
        vec![Estimator::Ols, Estimator::Sieve],
        1.0,
    ))
    .unwrap();
    let (_, ols_bias, _) = t.avg_by_category("OLS", 1).unwrap();
    let (sieve_rmse, _, _) = t.avg_by_category("Sieve", 1).unwrap();
    let (_, _, sieve_cov2) = t.avg_by_category("Sieve", 2).unwrap();
    check(
        "criterion 2 (ordered DGP2)",
        within(ols_bias, 0.14, 0.21)
            && within(sieve_rmse, 0.03, 0.10)
            && within(sieve_cov2, 0.88, 0.98),
        &format!("OLS bias {ols_bias:.4}, Sieve RMSE {sieve_rmse:.4}, Sieve cov2 {sieve_cov2:.3}"),
    );
}

#[test]
fn criterion_03_ordered_dgp3_delta_grid() {
    let ests = vec![Estimator::Linear, Estimator::Oracle, Estimator::Sieve];
    let t1 = run_study(&cfg(DgpTag::Ordered(3), 200, ests.clone(), 1.0)).unwrap();
    let t0 = run_study(&cfg(DgpTag::Ordered(3), 200, ests, 0.1)).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for occ in 1..=3usize {
        let (s_rmse, s_bias, _) = t1.avg_by_category("Sieve", occ).unwrap();
        let (o_rmse, _, _) = t1.avg_by_category("Oracle", occ).unwrap();
        ok &= s_rmse <= 2.0 * o_rmse && s_bias < 0.02;
        detail.push_str(&format!("occ{occ} d1 rmse {s_rmse:.3}/{o_rmse:.3} bias {s_bias:.4}; "));
        let (_, s_bias0, _) = t0.avg_by_category("Sieve", occ).unwrap();
        let (_, o_bias0, _) = t0.avg_by_category("Oracle", occ).unwrap();
        ok &= s_bias0 > 0.05 && o_bias0 < 0.03;
        detail.push_str(&format!("d0.1 bias {s_bias0:.3} vs {o_bias0:.3}; "));
    }
    // interior occupations (two-sided truncation) under the linear index
    for occ in 1..=2usize {
        let (l_rmse, _, _) = t1.avg_by_category("Linear", occ).unwrap();
        let (s_rmse, _, _) = t1.avg_by_category("Sieve", occ).unwrap();
        ok &= l_rmse > 10.0 * s_rmse;
        detail.push_str(&format!("occ{occ} linear {l_rmse:.2} vs sieve {s_rmse:.3}; "));
    }
    check("criterion 3 (ordered DGP3 delta grid)", ok, &detail);
}

#[test]
fn criterion_04_multinomial_tables() {
    let mut ok = true;
    let mut detail = String::new();
    for dgp in 1..=4u8 {
        let t = run_study(&cfg(
            DgpTag::Multinomial(dgp),
            200,
            vec![
                Estimator::Ols,
                Estimator::Mlogit,
                Estimator::Oracle,
                Estimator::Sieve,
                Estimator::Exch,
            ],
            1.0,
        ))
        .unwrap();
        let (_, ols, _) = t.avg_overall("OLS").unwrap();
        ok &= ols >= 0.10;
        detail.push_str(&format!("dgp{dgp} OLS {ols:.3}"));
        for est in ["MLogit", "Oracle", "Sieve", "Exch-L2"] {
            let (_, bias, cov) = t.avg_overall(est).unwrap();
            ok &= ols >= 3.0 * bias;
            if est != "Oracle" {
                ok &= within(cov, 0.85, 0.97);
            }
            detail.push_str(&format!(" {est} {bias:.3}/{cov:.3}"));
        }
        if dgp == 3 {
            let (_, exch, _) = t.avg_overall("Exch-L2").unwrap();
            let (_, mlogit, _) = t.avg_overall("MLogit").unwrap();
            ok &= exch <= mlogit + 0.01;
        }
        detail.push_str("; ");
    }
    check("criterion 4 (multinomial DGPs 1-4)", ok, &detail);
}

#[test]
fn criterion_05_bootstrap_validation() {
    let start = Instant::now();
    let mut c = cfg(DgpTag::Multinomial(1), 100, vec![Estimator::Mlogit], 1.0);
    c.bootstrap = Some(100);
    let study = run_bootstrap_study(&c).unwrap();
    let mut ok = true;
    let mut detail = String::new();
    for row in &study.rows {
        ok &= within(row.ratio, 0.80, 1.05);
        ok &= (row.mean_boot_se / row.mc_sd - 1.0).abs() <= 0.15;
        detail.push_str(&format!(
            "({},{}) ratio {:.3} boot/mc {:.3}; ",
            row.category,
            row.coefficient,
            row.ratio,
            row.mean_boot_se / row.mc_sd
        ));
    }
    let mins = start.elapsed().as_secs_f64() / 60.0;
    ok &= mins <= 60.0;
    detail.push_str(&format!("{mins:.1} min"));
    check("criterion 5 (bootstrap validation)", ok, &detail);
}

fn oracle_b(t: &[f64], i: usize, r: usize, s: f64, hi: f64) -> f64 {
    if r == 1 {
        let in_span = t[i] <= s && (s < t[i + 1] || (s == hi && t[i + 1] == hi && t[i] < hi));
        return if in_span { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + r - 1] - t[i];
    if d1 > 0.0 {
        v += (s - t[i]) / d1 * oracle_b(t, i, r - 1, s, hi);
    }
    let d2 = t[i + r] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + r] - s) / d2 * oracle_b(t, i + 1, r - 1, s, hi);
    }
    v
}

#[test]
fn criterion_06_spline_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut ok = true;
    for order in 1..=4usize {
        for j in 0..=4usize {
            let kv = place_knots(&samples, j, order).unwrap();
            assert_eq!(kv.dim(), j + order); // tensor dimension formula per margin
            let full = kv.full();
            for _ in 0..40 {
                let s = kv.lo + rng.random::<f64>() * (kv.hi - kv.lo);
                let (row, _) = bspline_row(&kv, s);
                let sum: f64 = row.iter().sum();
                ok &= (sum - 1.0).abs() < 1e-12;
                for (i, v) in row.iter().enumerate() {
                    ok &= (v - oracle_b(&full, i, order, s, kv.hi)).abs() < 1e-12;
                }
            }
        }
    }
    let kva = place_knots(&samples, 2, 4).unwrap();
    let kvb = place_knots(&samples, 3, 3).unwrap();
    let dims = kva.dim() * kvb.dim();
    let spec = TensorSpec::new(vec![kva, kvb]).unwrap();
    ok &= spec.dim() == dims;
    check("criterion 6 (spline identities)", ok, "partition of unity, Cox-de Boor, tensor dims");
}

fn fd_objective(
    obj: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
    theta: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(theta.len(), |j, _| {
        let h = 1e-6 * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        (obj(&tp).0 - obj(&tm).0) / (2.0 * h)
    })
}

#[test]
fn criterion_07_analytic_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400;
    let q = DMatrix::from_fn(n, 4, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    let d: Vec<usize> = (0..n).map(|_| rng.random_range(0..3usize)).collect();
    let y: Vec<f64> = d.iter().map(|&di| if di > 0 { 1.0 } else { 0.0 }).collect();
    let mut worst = 0.0f64;
    let probe = |obj: &dyn Fn(&DVector<f64>) -> (f64, DVector<f64>),
                     dim: usize,
                     rng: &mut ChaCha8Rng,
                     worst: &mut f64| {
        let th = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.5);
        let fd = fd_objective(obj, &th);
        let (_, g) = obj(&th);
        let rel = (&g - fd).norm() / g.norm().max(1.0);
        *worst = worst.max(rel);
    };
    for _ in 0..5 {
        let ord = OrderedObjective::new(&d, &q, 2);
        let log = LogisticObjective::new(&y, &q);
        let mnl = MnlObjective::new(&d, &q, 2);
        probe(&|t| ord.value_grad(t), ord.dim(), &mut rng, &mut worst);
        probe(&|t| log.value_grad(t), log.dim(), &mut rng, &mut worst);
        probe(&|t| mnl.value_grad(t), mnl.dim(), &mut rng, &mut worst);
    }
    check(
        "criterion 7 (analytic gradients)",
        worst < 1e-6,
        &format!("worst relative error {worst:.2e}"),
    );
}

#[test]
fn criterion_08_probability_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_nu = 0.0f64;
    let mut worst_simplex = 0.0f64;
    let mut signs_ok = true;
    for fit_i in 0..50 {
        let n = 300;
        let q = DMatrix::from_fn(n, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        });
        let d: Vec<usize> = (0..n)
            .map(|i| {
                let s = q[(i, 1)] - 0.4 * q[(i, 2)] + rng.sample::<f64, _>(StandardNormal);
                if s > 0.5 {
                    2
                } else if s > -0.5 {
                    1
                } else {
                    0
                }
            })
            .collect();
        let fit = match fit_mnl(&d, &q, 2) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let row: Vec<f64> = (0..3).map(|j| q[(fit_i % n, j)]).collect();
        let p = fit.category_probs(&row);
        worst_simplex = worst_simplex.max((p.iter().sum::<f64>() - 1.0).abs());
        for k in 1..=2usize {
            worst_nu = worst_nu.max((fit.inclusive_value(&row, k) + p[k].ln()).abs());
        }
        // finite-difference Jacobian of softmax probabilities in utilities
        let u0 = fit.utilities(&row);
        let h = 1e-6;
        let probs_at = |u: &[f64]| {
            let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect::<Vec<f64>>()
        };
        for b in 0..u0.len() {
            let mut up = u0.clone();
            let mut um = u0.clone();
            up[b] += h;
            um[b] -= h;
            let (pp, pm) = (probs_at(&up), probs_at(&um));
            for k in 0..u0.len() {
                let der = (pp[k] - pm[k]) / (2.0 * h);
                signs_ok &= if k == b { der > 0.0 } else { der < 0.0 };
            }
        }
    }
    check(
        "criterion 8 (probability identities)",
        worst_nu < 1e-12 && worst_simplex < 1e-12 && signs_ok,
        &format!("worst nu+ln p {worst_nu:.2e}, worst simplex {worst_simplex:.2e}, M-matrix {signs_ok}"),
    );
}

#[test]
fn criterion_09_esp_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut e1_exact = true;
    for _ in 0..40 {
        let kp1 = rng.random_range(3..=7usize);
        let raw: Vec<f64> = (0..kp1).map(|_| rng.random::<f64>() + 0.05).collect();
        let z: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / z).collect();
        let k = rng.random_range(1..kp1);
        let l = kp1 - 1;
        let e = elementary_symmetric(&p, k, l).unwrap();
        e1_exact &= e[0] == 1.0 - p[k];
        let others: Vec<f64> = (0..kp1).filter(|&j| j != k).map(|j| p[j]).collect();
        for order in 1..=l {
            let mut sum = 0.0;
            for mask in 0u32..(1 << others.len()) {
                if mask.count_ones() as usize != order {
                    continue;
                }
                let mut prod = 1.0;
                for (j, pj) in others.iter().enumerate() {
                    if mask >> j & 1 == 1 {
                        prod *= pj;
                    }
                }
                sum += prod;
            }
            worst = worst.max((e[order - 1] - sum).abs());
        }
    }
    check(
        "criterion 9 (ESP enumeration)",
        worst < 1e-14 && e1_exact,
        &format!("worst enumeration gap {worst:.2e}, e1 exact {e1_exact}"),
    );
}

#[test]
fn criterion_10_truncated_correction_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let m = 10_000_000usize;
    let draws: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut ok = true;
    let mut worst_z = 0.0f64;
    for _ in 0..50 {
        let index: f64 = rng.sample::<f64, _>(StandardNormal);
        let a: f64 = norm_ppf(rng.random::<f64>() * 0.8 + 0.05);
        let b = a + rng.random::<f64>() * 2.0 + 0.3;
        let analytic = truncated_correction(index, index + a, index + b).unwrap();
        let (mut sum, mut sq, mut cnt) = (0.0, 0.0, 0usize);
        for &z in &draws {
            if z > a && z < b {
                sum += z;
                sq += z * z;
                cnt += 1;
            }
        }
        let mean = sum / cnt as f64;
        let var = sq / cnt as f64 - mean * mean;
        let se = (var / cnt as f64).sqrt();
        let zscore = (analytic - mean).abs() / se;
        worst_z = worst_z.max(zscore);
        ok &= zscore < 3.0;
    }
    check(
        "criterion 10 (truncated correction vs MC oracle)",
        ok,
        &format!("worst z-score {worst_z:.2} over 50 cells"),
    );
}

#[test]
fn criterion_11_regression_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 300;
    let x = DMatrix::from_fn(n, 2, |_, j| {
        if j == 0 {
            1.0
        } else {
            rng.sample::<f64, _>(StandardNormal)
        }
    });
    let ctrl = DMatrix::from_fn(n, 1, |i, _| (x[(i, 1)] * 0.7).sin());
    let y = DVector::from_fn(n, |i, _| {
        1.0 + 2.0 * x[(i, 1)] + 0.5 * ctrl[(i, 0)] + rng.sample::<f64, _>(StandardNormal)
    });
    // FWL: joint fit vs residualized fit
    let spec = ControlSpec::new(ControlVariant::ParametricOrdered);
    let (bas, cl) = expand_controls(&spec, &ctrl).unwrap();
    let joint = fit_partially_linear(&y, &x, &bas, cl).unwrap();
    let ones = DVector::from_element(n, 1.0);
    let proj = |v: &DVector<f64>| -> DVector<f64> {
        // residualize on (1, ctrl)
        let mut z = DMatrix::zeros(n, 2);
        z.set_column(0, &ones);
        z.set_column(1, &ctrl.column(0).into_owned());
        let zt = z.transpose();
        let g = (&zt * &z).try_inverse().unwrap();
        v - &z * (g * (&zt * v))
    };
    let xr1 = proj(&x.column(1).into_owned());
    let yr = proj(&y);
    let beta_fwl = (xr1.dot(&yr)) / xr1.dot(&xr1);
    let fwl_gap = (joint.beta[1] - beta_fwl).abs();
    // empty basis equals textbook HC0
    let spec0 = ControlSpec::new(ControlVariant::None);
    let (bas0, cl0) = expand_controls(&spec0, &DMatrix::zeros(n, 0)).unwrap();
    let f0 = fit_partially_linear(&y, &x, &bas0, cl0).unwrap();
    let xt = x.transpose();
    let bread = (&xt * &x).try_inverse().unwrap();
    let resid = &y - &x * DVector::from_column_slice(f0.beta.as_slice());
    let mut meat = DMatrix::zeros(2, 2);
    for i in 0..n {
        let xi = x.row(i).transpose();
        meat += &xi * xi.transpose() * resid[i] * resid[i];
    }
    let hc0 = &bread * meat * &bread;
    let mut hc0_gap = 0.0f64;
    for a in 0..2 {
        for b in 0..2 {
            hc0_gap = hc0_gap.max((f0.vcov_robust[(a, b)] - hc0[(a, b)]).abs());
        }
    }
    // decomposition additivity on random stats
    let mut add_gap = 0.0f64;
    for _ in 0..20 {
        let kk = rng.random_range(2..=5usize);
        let raw_a: Vec<f64> = (0..kk).map(|_| rng.random::<f64>() + 0.1).collect();
        let raw_b: Vec<f64> = (0..kk).map(|_| rng.random::<f64>() + 0.1).collect();
        let (za, zb): (f64, f64) = (raw_a.iter().sum(), raw_b.iter().sum());
        let gs = GroupStats {
            categories: (0..kk)
                .map(|k| CategoryStats {
                    mean_a: rng.sample::<f64, _>(StandardNormal),
                    mean_b: rng.sample::<f64, _>(StandardNormal),
                    share_a: raw_a[k] / za,
                    share_b: raw_b[k] / zb,
                    beta: rng.sample::<f64, _>(StandardNormal) * 0.2,
                })
                .collect(),
        };
        let d = decompose(&gs).unwrap();
        add_gap = add_gap.max(
            (d.structural_within + d.covariate_composition + d.between_sorting - d.raw).abs(),
        );
    }
    check(
        "criterion 11 (regression identities)",
        fwl_gap < 1e-10 && hc0_gap < 1e-10 && add_gap < 1e-12,
        &format!("FWL {fwl_gap:.2e}, HC0 {hc0_gap:.2e}, additivity {add_gap:.2e}"),
    );
}

#[test]
fn criterion_12_full_determinism() {
    let c = SimConfig {
        dgp: DgpTag::Ordered(1),
        n: 800,
        replications: 4,
        seed: 19,
        estimators: vec![Estimator::Ols, Estimator::Sieve],
        delta: 1.0,
        bootstrap: None,
    };
    let a = run_study(&c).unwrap();
    let b = run_study(&c).unwrap();
    let bits_equal = a == b
        && a.cells.iter().zip(&b.cells).all(|(x, y)| {
            x.rmse.to_bits() == y.rmse.to_bits() && x.mean_bias.to_bits() == y.mean_bias.to_bits()
        });
    check("criterion 12 (full determinism)", bits_equal, "two runs bitwise identical");
}
